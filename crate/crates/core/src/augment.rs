//! Spatial mixup and flip augmentation.
//!
//! Mixup here is a hard column (or row) partition of two same-class images:
//! one half of the output is copied bit-exactly from each input, with no
//! blending. The fine-tuning variant always draws the second image from the
//! source-domain pool of the sample's class.

use rand::Rng;

use crate::encoder::Batch;
use crate::error::{Error, Result};

/// An H x W x 3 image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Wrap row-major `[y][x][channel]` pixel data.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image dims {height}x{width} must be nonzero")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width} image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Shape(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }
}

/// Which way the image is halved when mixing.
///
/// `LeftRight` splits at the vertical center line (a vertical seam through the
/// face); `TopBottom` is available for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixAxis {
    #[default]
    LeftRight,
    TopBottom,
}

/// Mix two same-class images: columns `[0, W/2)` come from `a`, columns
/// `[W/2, W)` from `b`. The caller guarantees the two images carry the same
/// label.
pub fn spatial_mixup(a: &Image, b: &Image) -> Result<Image> {
    spatial_mixup_along(a, b, MixAxis::LeftRight)
}

/// [`spatial_mixup`] with a configurable split axis.
pub fn spatial_mixup_along(a: &Image, b: &Image, axis: MixAxis) -> Result<Image> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Shape(format!(
            "cannot mix {}x{} with {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut out = a.clone();
    match axis {
        MixAxis::LeftRight => {
            if a.width % 2 != 0 {
                return Err(Error::Config(format!("mixup needs even width, got {}", a.width)));
            }
            let half = a.width / 2;
            for y in 0..a.height {
                let row = (y * a.width + half) * 3;
                let len = half * 3;
                out.data[row..row + len].copy_from_slice(&b.data[row..row + len]);
            }
        }
        MixAxis::TopBottom => {
            if a.height % 2 != 0 {
                return Err(Error::Config(format!("mixup needs even height, got {}", a.height)));
            }
            let start = (a.height / 2) * a.width * 3;
            out.data[start..].copy_from_slice(&b.data[start..]);
        }
    }
    Ok(out)
}

/// Horizontal flip: column `j` maps to column `W - 1 - j`.
pub fn hflip(a: &Image) -> Image {
    let mut out = a.clone();
    for y in 0..a.height {
        for x in 0..a.width {
            for c in 0..3 {
                out.set(y, x, c, a.get(y, a.width - 1 - x, c));
            }
        }
    }
    out
}

/// Per-class image pools used as mixup partners.
#[derive(Debug, Clone)]
pub struct ClassPools {
    pools: Vec<Vec<Image>>,
}

impl ClassPools {
    pub fn new(classes: usize) -> Self {
        Self { pools: vec![Vec::new(); classes] }
    }

    pub fn push(&mut self, class: usize, image: Image) {
        self.pools[class].push(image);
    }

    pub fn class(&self, class: usize) -> &[Image] {
        &self.pools[class]
    }

    pub fn classes(&self) -> usize {
        self.pools.len()
    }
}

/// Pre-training augmentation: each sample is independently mixed with a
/// uniformly drawn same-class pool image (probability `p_mix`) and then
/// horizontally flipped (probability `p_flip`). Labels are unchanged.
pub fn augment_pretrain<R: Rng>(
    batch: &Batch,
    pools: &ClassPools,
    rng: &mut R,
    p_mix: f64,
    p_flip: f64,
    axis: MixAxis,
) -> Result<Batch> {
    if p_mix > 0.0 {
        for &label in &batch.labels {
            if pools.class(label).is_empty() {
                return Err(Error::Config(format!("empty mixup pool for class {label}")));
            }
        }
    }
    let mut images = Vec::with_capacity(batch.images.len());
    for (image, &label) in batch.images.iter().zip(&batch.labels) {
        let mut out = if rng.gen::<f64>() < p_mix {
            let pool = pools.class(label);
            let partner = &pool[rng.gen_range(0..pool.len())];
            spatial_mixup_along(image, partner, axis)?
        } else {
            image.clone()
        };
        if rng.gen::<f64>() < p_flip {
            out = hflip(&out);
        }
        images.push(out);
    }
    Ok(Batch { images, labels: batch.labels.clone() })
}

/// Fine-tuning augmentation: mix the target sample with a freshly drawn
/// same-class image from the source domain.
pub fn augment_finetune<R: Rng>(
    target: &Image,
    source_pool_same_class: &[Image],
    rng: &mut R,
    axis: MixAxis,
) -> Result<Image> {
    if source_pool_same_class.is_empty() {
        return Err(Error::Config("empty source pool for fine-tuning mixup".into()));
    }
    let partner = &source_pool_same_class[rng.gen_range(0..source_pool_same_class.len())];
    spatial_mixup_along(target, partner, axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.gen::<f64>()).collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn self_mix_is_identity() {
        let a = image(4, 4, 1);
        assert_eq!(spatial_mixup(&a, &a).unwrap(), a);
    }

    #[test]
    fn two_by_two_mix() {
        let a = Image::new(2, 2, vec![0.1; 12]).unwrap();
        let b = Image::new(2, 2, vec![0.9; 12]).unwrap();
        let m = spatial_mixup(&a, &b).unwrap();
        for y in 0..2 {
            for c in 0..3 {
                assert_eq!(m.get(y, 0, c), 0.1);
                assert_eq!(m.get(y, 1, c), 0.9);
            }
        }
    }

    #[test]
    fn halves_copied_bit_exactly() {
        let a = image(32, 32, 2);
        let b = image(32, 32, 3);
        let m = spatial_mixup(&a, &b).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    let src = if x < 16 { &a } else { &b };
                    assert_eq!(m.get(y, x, c), src.get(y, x, c));
                }
            }
        }
    }

    #[test]
    fn mix_shape_errors() {
        let a = image(4, 4, 1);
        let b = image(4, 6, 1);
        assert!(matches!(spatial_mixup(&a, &b), Err(Error::Shape(_))));
        let odd = image(4, 5, 1);
        assert!(matches!(spatial_mixup(&odd, &odd), Err(Error::Config(_))));
    }

    #[test]
    fn top_bottom_axis() {
        let a = Image::new(2, 2, vec![0.1; 12]).unwrap();
        let b = Image::new(2, 2, vec![0.9; 12]).unwrap();
        let m = spatial_mixup_along(&a, &b, MixAxis::TopBottom).unwrap();
        for x in 0..2 {
            for c in 0..3 {
                assert_eq!(m.get(0, x, c), 0.1);
                assert_eq!(m.get(1, x, c), 0.9);
            }
        }
    }

    #[test]
    fn flip_examples() {
        let a = Image::new(1, 2, vec![0.2, 0.2, 0.2, 0.8, 0.8, 0.8]).unwrap();
        let f = hflip(&a);
        assert_eq!(f.data(), &[0.8, 0.8, 0.8, 0.2, 0.2, 0.2]);

        let sym = Image::new(2, 2, vec![0.5; 12]).unwrap();
        assert_eq!(hflip(&sym), sym);
    }

    proptest! {
        #[test]
        fn flip_is_involution(h in 1usize..6, w in 1usize..6, seed in 0u64..1000) {
            let a = image(h, w, seed);
            prop_assert_eq!(hflip(&hflip(&a)), a);
        }

        #[test]
        fn mix_partitions_columns(seed_a in 0u64..500, seed_b in 500u64..1000) {
            let a = image(6, 8, seed_a);
            let b = image(6, 8, seed_b);
            let m = spatial_mixup(&a, &b).unwrap();
            for y in 0..6 {
                for x in 0..8 {
                    for c in 0..3 {
                        let expect = if x < 4 { a.get(y, x, c) } else { b.get(y, x, c) };
                        prop_assert_eq!(m.get(y, x, c), expect);
                    }
                }
            }
        }
    }

    fn tiny_batch() -> (Batch, ClassPools) {
        let batch = Batch {
            images: vec![image(4, 4, 10), image(4, 4, 11)],
            labels: vec![0, 1],
        };
        let mut pools = ClassPools::new(2);
        pools.push(0, image(4, 4, 20));
        pools.push(1, image(4, 4, 21));
        (batch, pools)
    }

    #[test]
    fn no_op_probabilities_leave_batch_unchanged() {
        let (batch, pools) = tiny_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out =
            augment_pretrain(&batch, &pools, &mut rng, 0.0, 0.0, MixAxis::LeftRight).unwrap();
        assert_eq!(out.images, batch.images);
        assert_eq!(out.labels, batch.labels);
    }

    #[test]
    fn forced_mix_with_singleton_pool() {
        let (batch, pools) = tiny_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out =
            augment_pretrain(&batch, &pools, &mut rng, 1.0, 0.0, MixAxis::LeftRight).unwrap();
        for (i, &label) in batch.labels.iter().enumerate() {
            let partner = &pools.class(label)[0];
            for y in 0..4 {
                for x in 2..4 {
                    for c in 0..3 {
                        assert_eq!(out.images[i].get(y, x, c), partner.get(y, x, c));
                    }
                }
            }
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let (batch, pools) = tiny_batch();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            augment_pretrain(&batch, &pools, &mut rng, 0.5, 0.5, MixAxis::LeftRight).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn empty_pool_rejected_when_mixing() {
        let (batch, _) = tiny_batch();
        let pools = ClassPools::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = augment_pretrain(&batch, &pools, &mut rng, 0.5, 0.0, MixAxis::LeftRight);
        assert!(matches!(r, Err(Error::Config(_))));
        // With mixing disabled the empty pool is fine.
        let r = augment_pretrain(&batch, &pools, &mut rng, 0.0, 0.5, MixAxis::LeftRight);
        assert!(r.is_ok());
    }

    #[test]
    fn finetune_mix_draws_fresh_partners() {
        let target = image(4, 4, 30);
        let pool = vec![image(4, 4, 31), image(4, 4, 32), image(4, 4, 33)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let outs: Vec<Image> = (0..8)
            .map(|_| augment_finetune(&target, &pool, &mut rng, MixAxis::LeftRight).unwrap())
            .collect();
        // Left halves always come from the target.
        for out in &outs {
            for y in 0..4 {
                for x in 0..2 {
                    assert_eq!(out.get(y, x, 0), target.get(y, x, 0));
                }
            }
        }
        // With three partners and eight draws, at least two distinct outputs.
        assert!(outs.iter().any(|o| o != &outs[0]));

        let singleton = vec![image(4, 4, 40)];
        let a = augment_finetune(&target, &singleton, &mut rng, MixAxis::LeftRight).unwrap();
        let b = augment_finetune(&target, &singleton, &mut rng, MixAxis::LeftRight).unwrap();
        assert_eq!(a, b);

        let r = augment_finetune(&target, &[], &mut rng, MixAxis::LeftRight);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
