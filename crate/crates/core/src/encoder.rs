//! Convolutional encoder with hand-written reverse-mode gradients.
//!
//! The network is a stack of stride-2 convolutions with ReLU, a flatten, and
//! a single dense layer producing either a Gaussian head (`2K` outputs: `K`
//! raw means and `K` raw variances pushed through softplus) or a logit head
//! (`C` outputs) for the cross-entropy baseline. Convolutions are evaluated
//! as a matrix product against an im2col patch matrix. Everything runs in
//! f64 so analytic gradients can be held to tight finite-difference
//! tolerances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::gaussian::{w2_diag_identity, w2_grad, GaussianEmbedding};
use crate::prototype::PrototypeDistribution;

/// Floor added to the softplus output so predicted variances stay strictly
/// positive.
pub const VARIANCE_EPS: f64 = 1e-6;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A labelled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One convolution layer: `out_ch` filters of size `kernel` x `kernel`
/// applied at the given stride with `kernel / 2` zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }
}

/// Network shape, round-trippable through a canonical text form such as
/// `input 32x32x3; conv 3:16 k3 s2; conv 16:32 k3 s2; conv 32:64 k3 s2;
/// dense 1024:64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    input_h: usize,
    input_w: usize,
    input_c: usize,
    convs: Vec<ConvSpec>,
    dense_in: usize,
    dense_out: usize,
}

impl Arch {
    /// Validate a layer chain. The dense input width is derived from the
    /// convolution stack, so it cannot be inconsistent here.
    pub fn new(
        input_h: usize,
        input_w: usize,
        input_c: usize,
        convs: Vec<ConvSpec>,
        dense_out: usize,
    ) -> Result<Self> {
        if input_h == 0 || input_w == 0 || input_c == 0 {
            return Err(Error::Config(format!(
                "input dims {input_h}x{input_w}x{input_c} must be nonzero"
            )));
        }
        if dense_out == 0 {
            return Err(Error::Config("dense layer needs at least one output".into()));
        }
        let (mut c, mut h, mut w) = (input_c, input_h, input_w);
        for (i, conv) in convs.iter().enumerate() {
            if conv.kernel == 0 || conv.stride == 0 || conv.out_ch == 0 {
                return Err(Error::Config(format!(
                    "conv layer {i} has zero kernel, stride, or channel count"
                )));
            }
            if conv.in_ch != c {
                return Err(Error::Config(format!(
                    "conv layer {i} expects {} input channels but receives {c}",
                    conv.in_ch
                )));
            }
            let (oh, ow) = conv.out_hw(h, w);
            c = conv.out_ch;
            h = oh;
            w = ow;
        }
        let dense_in = c * h * w;
        Ok(Self { input_h, input_w, input_c, convs, dense_in, dense_out })
    }

    /// The stack used throughout this crate: three stride-2 3x3 convolutions
    /// over a 32x32x3 image (16, 32, then 64 channels) and a dense layer
    /// from the 1024 flattened activations to `output_dim`.
    pub fn standard(output_dim: usize) -> Result<Self> {
        Self::new(
            32,
            32,
            3,
            vec![
                ConvSpec { in_ch: 3, out_ch: 16, kernel: 3, stride: 2 },
                ConvSpec { in_ch: 16, out_ch: 32, kernel: 3, stride: 2 },
                ConvSpec { in_ch: 32, out_ch: 64, kernel: 3, stride: 2 },
            ],
            output_dim,
        )
    }

    /// Parse the canonical text form. The stated dense input width must
    /// match what the convolution stack actually produces.
    pub fn parse(text: &str) -> Result<Self> {
        fn num(tok: &str, what: &str) -> Result<usize> {
            tok.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} '{tok}' in architecture text")))
        }
        fn pair(tok: &str, what: &str) -> Result<(usize, usize)> {
            let (a, b) = tok
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected IN:OUT for {what}, got '{tok}'")))?;
            Ok((num(a, what)?, num(b, what)?))
        }

        let segs: Vec<&str> = text.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
        if segs.is_empty() {
            return Err(Error::Config("empty architecture text".into()));
        }
        let input = segs[0].strip_prefix("input").map(str::trim).ok_or_else(|| {
            Error::Config(format!("architecture must start with 'input HxWxC', got '{}'", segs[0]))
        })?;
        let dims: Vec<&str> = input.split('x').collect();
        if dims.len() != 3 {
            return Err(Error::Config(format!("expected HxWxC input dims, got '{input}'")));
        }
        let input_h = num(dims[0], "input height")?;
        let input_w = num(dims[1], "input width")?;
        let input_c = num(dims[2], "input channels")?;

        let mut convs = Vec::new();
        let mut dense = None;
        for seg in &segs[1..] {
            if dense.is_some() {
                return Err(Error::Config(format!(
                    "segment '{seg}' appears after the dense layer"
                )));
            }
            let toks: Vec<&str> = seg.split_whitespace().collect();
            match toks.first() {
                Some(&"conv") if toks.len() == 4 => {
                    let (in_ch, out_ch) = pair(toks[1], "conv channels")?;
                    let kernel = toks[2]
                        .strip_prefix('k')
                        .ok_or_else(|| Error::Config(format!("expected kN, got '{}'", toks[2])))
                        .and_then(|t| num(t, "kernel size"))?;
                    let stride = toks[3]
                        .strip_prefix('s')
                        .ok_or_else(|| Error::Config(format!("expected sN, got '{}'", toks[3])))
                        .and_then(|t| num(t, "stride"))?;
                    convs.push(ConvSpec { in_ch, out_ch, kernel, stride });
                }
                Some(&"dense") if toks.len() == 2 => {
                    dense = Some(pair(toks[1], "dense shape")?);
                }
                _ => return Err(Error::Config(format!("unrecognized segment '{seg}'"))),
            }
        }
        let (stated_in, dense_out) =
            dense.ok_or_else(|| Error::Config("architecture must end with a dense layer".into()))?;
        let arch = Self::new(input_h, input_w, input_c, convs, dense_out)?;
        if arch.dense_in != stated_in {
            return Err(Error::Config(format!(
                "dense layer claims {stated_in} inputs but the convolution stack produces {}",
                arch.dense_in
            )));
        }
        Ok(arch)
    }

    pub fn canonical_text(&self) -> String {
        let mut parts = vec![format!("input {}x{}x{}", self.input_h, self.input_w, self.input_c)];
        for c in &self.convs {
            parts.push(format!("conv {}:{} k{} s{}", c.in_ch, c.out_ch, c.kernel, c.stride));
        }
        parts.push(format!("dense {}:{}", self.dense_in, self.dense_out));
        parts.join("; ")
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.input_h, self.input_w, self.input_c)
    }

    pub fn convs(&self) -> &[ConvSpec] {
        &self.convs
    }

    pub fn dense_in(&self) -> usize {
        self.dense_in
    }

    pub fn dense_out(&self) -> usize {
        self.dense_out
    }

    /// Latent dimension of a Gaussian head, `None` when the output width is
    /// odd (a logit head).
    pub fn latent_dim(&self) -> Option<usize> {
        (self.dense_out % 2 == 0).then_some(self.dense_out / 2)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Activation shape (channels, height, width) entering each conv layer,
    /// plus the shape after the last one.
    fn activation_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![(self.input_c, self.input_h, self.input_w)];
        for conv in &self.convs {
            let (_, h, w) = *shapes.last().unwrap();
            let (oh, ow) = conv.out_hw(h, w);
            shapes.push((conv.out_ch, oh, ow));
        }
        shapes
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut conv_w = Vec::with_capacity(self.convs.len());
        let mut conv_b = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let wlen = conv.out_ch * conv.in_ch * conv.kernel * conv.kernel;
            conv_w.push((off, wlen));
            off += wlen;
            conv_b.push((off, conv.out_ch));
            off += conv.out_ch;
        }
        let dense_w = (off, self.dense_out * self.dense_in);
        off += dense_w.1;
        let dense_b = (off, self.dense_out);
        off += self.dense_out;
        Layout { conv_w, conv_b, dense_w, dense_b, total: off }
    }
}

/// Offsets of each layer's weights and biases in the flat parameter vector.
/// Order is conv weights then biases per layer, then dense weights and bias.
struct Layout {
    conv_w: Vec<(usize, usize)>,
    conv_b: Vec<(usize, usize)>,
    dense_w: (usize, usize),
    dense_b: (usize, usize),
    total: usize,
}

/// All trainable parameters as one flat vector in the order given by the
/// architecture layout. `theta.len()` always equals `arch.param_count()`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

/// Initialize weights uniformly on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and
/// biases at zero, drawing layer by layer from a seeded generator.
pub fn init_encoder(arch: &Arch, seed: u64) -> EncoderParams {
    let layout = arch.layout();
    let mut theta = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (conv, &(off, len)) in arch.convs.iter().zip(&layout.conv_w) {
        let bound = 1.0 / ((conv.in_ch * conv.kernel * conv.kernel) as f64).sqrt();
        for w in &mut theta[off..off + len] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    let bound = 1.0 / (arch.dense_in as f64).sqrt();
    let (off, len) = layout.dense_w;
    for w in &mut theta[off..off + len] {
        *w = rng.gen_range(-bound..bound);
    }
    EncoderParams { arch: arch.clone(), theta }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out += a * b with a: m x k, b: k x n, out: m x n, all row-major.
fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out += a * b^T with a: m x n, b: k x n, out: m x k.
fn matmul_abt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for q in 0..k {
            let brow = &b[q * n..(q + 1) * n];
            out[i * k + q] += arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<f64>();
        }
    }
}

/// out += a^T * b with a: m x k, b: m x n, out: k x n.
fn matmul_atb_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for q in 0..k {
            let av = a[i * k + q];
            let orow = &mut out[q * n..(q + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Gather conv patches: `cols` is (c * k * k) x (out_h * out_w), where row
/// `(ch * k + ky) * k + kx` holds the input value each output pixel sees at
/// that kernel tap, with zeros where the tap falls outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    let npix = out_h * out_w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * npix;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = row + oy * out_w;
                    if iy < 0 || iy >= h as isize {
                        cols[dst..dst + out_w].fill(0.0);
                        continue;
                    }
                    let src = (ch * h + iy as usize) * w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        cols[dst + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            input[src + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    dinput: &mut [f64],
) {
    let npix = out_h * out_w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * npix;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (ch * h + iy as usize) * w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dinput[dst + ix as usize] += cols[row + oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvCache {
    cols: Vec<f64>,
    pre: Vec<f64>,
    out_h: usize,
    out_w: usize,
}

struct ForwardCache {
    convs: Vec<ConvCache>,
    flat: Vec<f64>,
    raw: Vec<f64>,
}

fn image_to_chw(image: &Image) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = image.get(y, x, c);
            }
        }
    }
    out
}

fn forward(params: &EncoderParams, image: &Image) -> Result<ForwardCache> {
    let arch = &params.arch;
    if image.height() != arch.input_h || image.width() != arch.input_w || arch.input_c != 3 {
        return Err(Error::Shape(format!(
            "architecture takes {}x{}x{} input but image is {}x{}x3",
            arch.input_h,
            arch.input_w,
            arch.input_c,
            image.height(),
            image.width()
        )));
    }
    let layout = arch.layout();
    let mut cur = image_to_chw(image);
    let (mut c, mut h, mut w) = (arch.input_c, arch.input_h, arch.input_w);
    let mut convs = Vec::with_capacity(arch.convs.len());
    for (li, conv) in arch.convs.iter().enumerate() {
        let (out_h, out_w) = conv.out_hw(h, w);
        let npix = out_h * out_w;
        let krows = conv.in_ch * conv.kernel * conv.kernel;
        let mut cols = vec![0.0; krows * npix];
        im2col(&cur, c, h, w, conv.kernel, conv.stride, conv.pad(), out_h, out_w, &mut cols);
        let (w_off, w_len) = layout.conv_w[li];
        let (b_off, _) = layout.conv_b[li];
        let mut pre = vec![0.0; conv.out_ch * npix];
        matmul_acc(&params.theta[w_off..w_off + w_len], &cols, conv.out_ch, krows, npix, &mut pre);
        for o in 0..conv.out_ch {
            let bias = params.theta[b_off + o];
            for v in &mut pre[o * npix..(o + 1) * npix] {
                *v += bias;
            }
        }
        cur = pre.iter().map(|&v| v.max(0.0)).collect();
        convs.push(ConvCache { cols, pre, out_h, out_w });
        c = conv.out_ch;
        h = out_h;
        w = out_w;
    }
    let flat = cur;
    let (dw_off, _) = layout.dense_w;
    let (db_off, _) = layout.dense_b;
    let raw = (0..arch.dense_out)
        .map(|i| {
            let row = &params.theta[dw_off + i * arch.dense_in..dw_off + (i + 1) * arch.dense_in];
            row.iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>() + params.theta[db_off + i]
        })
        .collect();
    Ok(ForwardCache { convs, flat, raw })
}

/// Accumulate parameter gradients given the gradient at the raw output.
fn backward_into(params: &EncoderParams, cache: &ForwardCache, d_raw: &[f64], grad: &mut [f64]) {
    let arch = &params.arch;
    let layout = arch.layout();
    let (dw_off, dw_len) = layout.dense_w;
    let (db_off, _) = layout.dense_b;
    for (i, &g) in d_raw.iter().enumerate() {
        grad[db_off + i] += g;
        let row = &mut grad[dw_off + i * arch.dense_in..dw_off + (i + 1) * arch.dense_in];
        for (r, &f) in row.iter_mut().zip(&cache.flat) {
            *r += g * f;
        }
    }
    let dense_w = &params.theta[dw_off..dw_off + dw_len];
    let mut dcur = vec![0.0; arch.dense_in];
    for (i, &g) in d_raw.iter().enumerate() {
        let row = &dense_w[i * arch.dense_in..(i + 1) * arch.dense_in];
        for (d, &wv) in dcur.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
    let shapes = arch.activation_shapes();
    for li in (0..arch.convs.len()).rev() {
        let conv = &arch.convs[li];
        let cc = &cache.convs[li];
        let npix = cc.out_h * cc.out_w;
        let krows = conv.in_ch * conv.kernel * conv.kernel;
        let mut dpre = dcur;
        for (d, &p) in dpre.iter_mut().zip(&cc.pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        let (b_off, _) = layout.conv_b[li];
        for o in 0..conv.out_ch {
            grad[b_off + o] += dpre[o * npix..(o + 1) * npix].iter().sum::<f64>();
        }
        let (w_off, w_len) = layout.conv_w[li];
        matmul_abt_acc(&dpre, &cc.cols, conv.out_ch, npix, krows, &mut grad[w_off..w_off + w_len]);
        let mut dcols = vec![0.0; krows * npix];
        matmul_atb_acc(
            &params.theta[w_off..w_off + w_len],
            &dpre,
            conv.out_ch,
            krows,
            npix,
            &mut dcols,
        );
        let (pc, ph, pw) = shapes[li];
        let mut dinput = vec![0.0; pc * ph * pw];
        col2im(&dcols, pc, ph, pw, conv.kernel, conv.stride, conv.pad(), cc.out_h, cc.out_w, &mut dinput);
        dcur = dinput;
    }
}

/// Raw network output (the dense layer's activations, no nonlinearity).
pub fn forward_raw(params: &EncoderParams, image: &Image) -> Result<Vec<f64>> {
    Ok(forward(params, image)?.raw)
}

/// Map an image to a diagonal Gaussian: the first half of the raw output is
/// the mean, the second half passes through softplus plus [`VARIANCE_EPS`]
/// to give strictly positive variances.
pub fn encode(params: &EncoderParams, image: &Image) -> Result<GaussianEmbedding> {
    let k = params.arch.latent_dim().ok_or_else(|| {
        Error::Config(format!(
            "Gaussian head needs an even output width, got {}",
            params.arch.dense_out
        ))
    })?;
    let raw = forward_raw(params, image)?;
    let mu = raw[..k].to_vec();
    let s = raw[k..].iter().map(|&x| softplus(x) + VARIANCE_EPS).collect();
    GaussianEmbedding::new(mu, s)
}

/// Loss (and optionally its gradient with respect to the raw head output)
/// for one sample, given the raw head output and the class prototype mean.
fn ddt_raw_grad(
    raw: &[f64],
    k: usize,
    m: &[f64],
    w_floor: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mu = raw[..k].to_vec();
    let s: Vec<f64> = raw[k..].iter().map(|&x| softplus(x) + VARIANCE_EPS).collect();
    let emb = GaussianEmbedding::new(mu, s)?;
    let loss = w2_diag_identity(&emb, m)?;
    if !want_grad {
        return Ok((loss, None));
    }
    let (gmu, gs) = w2_grad(&emb, m, w_floor)?;
    let mut d_raw = vec![0.0; 2 * k];
    d_raw[..k].copy_from_slice(&gmu);
    for i in 0..k {
        d_raw[k + i] = gs[i] * sigmoid(raw[k + i]);
    }
    Ok((loss, Some(d_raw)))
}

fn ddt_eval(
    params: &EncoderParams,
    batch: &Batch,
    proto: &PrototypeDistribution,
    w_floor: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot evaluate a loss on an empty batch".into()));
    }
    let k = proto.dim();
    if params.arch.dense_out != 2 * k {
        return Err(Error::Dimension(format!(
            "prototype dimension {k} needs {} outputs but the head has {}",
            2 * k,
            params.arch.dense_out
        )));
    }
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; params.theta.len()]);
    for (image, &label) in batch.images.iter().zip(&batch.labels) {
        let cache = forward(params, image)?;
        let m = proto.class_mean(label)?;
        let (l, d_raw) = ddt_raw_grad(&cache.raw, k, m, w_floor, want_grad)?;
        loss += l;
        if let (Some(g), Some(d)) = (grad.as_mut(), d_raw) {
            backward_into(params, &cache, &d, g);
        }
    }
    let n = batch.len() as f64;
    loss /= n;
    if let Some(g) = grad.as_mut() {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss, grad))
}

/// Mean 2-Wasserstein distance from each sample's embedding to its class
/// prototype component. The distance in the gradient denominator is clamped
/// at `w_floor` to keep the gradient bounded near the minimum.
pub fn ddt_loss_and_grad(
    params: &EncoderParams,
    batch: &Batch,
    proto: &PrototypeDistribution,
    w_floor: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = ddt_eval(params, batch, proto, w_floor, true)?;
    Ok((loss, grad.expect("gradient was requested")))
}

/// Loss value only, for callers that do not need the gradient.
pub fn ddt_loss(
    params: &EncoderParams,
    batch: &Batch,
    proto: &PrototypeDistribution,
) -> Result<f64> {
    Ok(ddt_eval(params, batch, proto, 1.0, false)?.0)
}

/// Softmax cross-entropy (and optionally its gradient with respect to the
/// logits) for one sample.
fn ce_raw_grad(
    raw: &[f64],
    label: usize,
    classes: usize,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if label >= classes {
        return Err(Error::Index(format!("label {label} out of range for {classes} classes")));
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + raw.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - raw[label];
    if !want_grad {
        return Ok((loss, None));
    }
    let d_raw = raw
        .iter()
        .enumerate()
        .map(|(i, &l)| (l - lse).exp() - if i == label { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, Some(d_raw)))
}

fn ce_eval(
    params: &EncoderParams,
    batch: &Batch,
    classes: usize,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot evaluate a loss on an empty batch".into()));
    }
    if params.arch.dense_out != classes {
        return Err(Error::Dimension(format!(
            "{classes}-way softmax needs {classes} logits but the head has {}",
            params.arch.dense_out
        )));
    }
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; params.theta.len()]);
    for (image, &label) in batch.images.iter().zip(&batch.labels) {
        let cache = forward(params, image)?;
        let (l, d_raw) = ce_raw_grad(&cache.raw, label, classes, want_grad)?;
        loss += l;
        if let (Some(g), Some(d)) = (grad.as_mut(), d_raw) {
            backward_into(params, &cache, &d, g);
        }
    }
    let n = batch.len() as f64;
    loss /= n;
    if let Some(g) = grad.as_mut() {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss, grad))
}

/// Mean softmax cross-entropy for the baseline classifier head.
pub fn ce_loss_and_grad(
    params: &EncoderParams,
    batch: &Batch,
    classes: usize,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = ce_eval(params, batch, classes, true)?;
    Ok((loss, grad.expect("gradient was requested")))
}

pub fn ce_loss(params: &EncoderParams, batch: &Batch, classes: usize) -> Result<f64> {
    Ok(ce_eval(params, batch, classes, false)?.0)
}

/// First and second moment estimates for Adam, updated functionally.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self { m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }
}

/// One bias-corrected Adam update. Returns new parameters and state without
/// touching the inputs, so callers can keep or discard steps freely.
pub fn adam_step(
    params: &EncoderParams,
    grad: &[f64],
    state: &AdamState,
    lr: f64,
) -> Result<(EncoderParams, AdamState)> {
    let n = params.theta.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "parameters ({n}), gradient ({}), and state ({}, {}) disagree",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    let step = state.step + 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let mut out = params.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for i in 0..n {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        out.theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok((out, AdamState { m, v, step }))
}

/// Which loss a finite-difference sweep evaluates.
enum LossKind<'a> {
    Embedding { proto: &'a PrototypeDistribution },
    Softmax { classes: usize },
}

/// Batch loss together with the bit-packed signs of every conv
/// pre-activation, in forward order over the whole batch.
fn loss_and_pattern(
    params: &EncoderParams,
    batch: &Batch,
    kind: &LossKind<'_>,
) -> Result<(f64, Vec<u64>)> {
    let mut loss = 0.0;
    let mut words: Vec<u64> = Vec::new();
    let mut used = 64u32;
    for (image, &label) in batch.images.iter().zip(&batch.labels) {
        let cache = forward(params, image)?;
        for cc in &cache.convs {
            for &p in &cc.pre {
                if used == 64 {
                    words.push(0);
                    used = 0;
                }
                if p > 0.0 {
                    *words.last_mut().expect("word was just pushed") |= 1u64 << used;
                }
                used += 1;
            }
        }
        loss += match *kind {
            LossKind::Embedding { proto } => {
                ddt_raw_grad(&cache.raw, proto.dim(), proto.class_mean(label)?, 1.0, false)?.0
            }
            LossKind::Softmax { classes } => ce_raw_grad(&cache.raw, label, classes, false)?.0,
        };
    }
    Ok((loss / batch.len() as f64, words))
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative disagreement over all checked parameters, with the
    /// denominator floored at 0.01 so near-zero entries do not blow up.
    pub max_rel: f64,
    pub worst_index: usize,
    /// Parameters whose central difference was actually compared.
    pub checked: usize,
    /// Parameters excluded because an offset probe flipped the sign of some
    /// ReLU pre-activation. A central difference straddling such a flip
    /// samples two different linear pieces of the network and says nothing
    /// about the gradient at the centre point, so comparing it would reject
    /// correct gradients. The exclusion test compares exact activation sign
    /// patterns, which keeps the pass/fail verdict independent of how the
    /// network and batch were seeded.
    pub skipped: usize,
}

/// Sweep every parameter, comparing the analytic gradient entry against a
/// central difference with step `h`, skipping entries whose probes cross a
/// ReLU kink. With `corrupt_worst` the largest analytic entry of the dense
/// head is doubled first; the report must then flag it, which shows the
/// comparison actually has teeth. The corruption targets the dense head
/// because perturbing a dense parameter never changes the conv activation
/// pattern, so the corrupted entry is always among the checked ones.
fn fd_sweep(
    params: &EncoderParams,
    batch: &Batch,
    kind: &LossKind<'_>,
    h: f64,
    mut analytic: Vec<f64>,
    corrupt_worst: bool,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    if corrupt_worst {
        let (dense_start, _) = params.arch.layout().dense_w;
        let (j, _) = analytic[dense_start..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("dense head is nonempty");
        analytic[dense_start + j] *= 2.0;
    }
    let (_, base) = loss_and_pattern(params, batch, kind)?;
    let mut probe = params.clone();
    let mut max_rel = 0.0;
    let mut worst_index = 0;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..probe.theta.len() {
        let orig = probe.theta[i];
        probe.theta[i] = orig + h;
        let (up, pat_up) = loss_and_pattern(&probe, batch, kind)?;
        probe.theta[i] = orig - h;
        let (down, pat_down) = loss_and_pattern(&probe, batch, kind)?;
        probe.theta[i] = orig;
        if pat_up != base || pat_down != base {
            skipped += 1;
            continue;
        }
        checked += 1;
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-2);
        if rel > max_rel {
            max_rel = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport { max_rel, worst_index, checked, skipped })
}

/// Gradient check for the embedding loss. See [`GradCheckReport`] for how
/// ReLU kinks and the `corrupt_worst` mutation fixture are handled.
pub fn finite_diff_check(
    params: &EncoderParams,
    batch: &Batch,
    proto: &PrototypeDistribution,
    w_floor: f64,
    h: f64,
    corrupt_worst: bool,
) -> Result<GradCheckReport> {
    let (_, analytic) = ddt_loss_and_grad(params, batch, proto, w_floor)?;
    fd_sweep(params, batch, &LossKind::Embedding { proto }, h, analytic, corrupt_worst)
}

/// Gradient check for the softmax cross-entropy loss, with the same kink
/// handling and mutation fixture as [`finite_diff_check`].
pub fn finite_diff_check_ce(
    params: &EncoderParams,
    batch: &Batch,
    classes: usize,
    h: f64,
    corrupt_worst: bool,
) -> Result<GradCheckReport> {
    let (_, analytic) = ce_loss_and_grad(params, batch, classes)?;
    fd_sweep(params, batch, &LossKind::Softmax { classes }, h, analytic, corrupt_worst)
}
