//! Binary checkpoint files for trained encoders.
//!
//! A checkpoint stores everything needed to resume or evaluate a run: the
//! architecture (as its canonical text), the prototype shape `(classes, k)`
//! the encoder was trained against, the training mode, the flat parameter
//! vector, and the Adam state. All integers are little-endian and all floats
//! are IEEE-754 doubles, so saving and reloading is byte-exact.

use std::fs;
use std::path::Path;

use crate::encoder::{AdamState, Arch, EncoderParams};
use crate::error::{Error, Result};

/// First four bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DDT1";

/// Bumped whenever the byte layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which loss the encoder was trained with. The distribution-matching mode
/// classifies by nearest prototype component; the cross-entropy baseline
/// classifies by largest logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Ddt,
    CeBaseline,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Ddt => "ddt",
            TrainMode::CeBaseline => "ce-baseline",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "ddt" => Ok(TrainMode::Ddt),
            "ce" | "ce-baseline" => Ok(TrainMode::CeBaseline),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected \"ddt\" or \"ce\""
            ))),
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            TrainMode::Ddt => 0,
            TrainMode::CeBaseline => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(TrainMode::Ddt),
            1 => Some(TrainMode::CeBaseline),
            _ => None,
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained (or freshly initialized) encoder with its optimizer state and
/// the prototype shape it is tied to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub opt: AdamState,
    pub mode: TrainMode,
    /// Number of prototype classes the head was trained against.
    pub classes: usize,
    /// Prototype dimension. Kept even in cross-entropy mode so both methods
    /// of a study record the same geometry.
    pub k: usize,
}

impl Checkpoint {
    /// Internal consistency between the architecture, the head width, the
    /// mode, and the optimizer buffers. Run before writing and after
    /// reading so a malformed file can never round-trip silently.
    fn consistency_error(&self) -> Option<String> {
        let n = self.params.arch.param_count();
        if self.params.theta.len() != n {
            return Some(format!(
                "architecture has {n} parameters but {} were given",
                self.params.theta.len()
            ));
        }
        if self.opt.m.len() != n || self.opt.v.len() != n {
            return Some(format!(
                "optimizer buffers ({}, {}) do not match the {n} parameters",
                self.opt.m.len(),
                self.opt.v.len()
            ));
        }
        if self.classes == 0 || self.k == 0 {
            return Some(format!(
                "prototype shape ({}, {}) must be positive",
                self.classes, self.k
            ));
        }
        let head = self.params.arch.dense_out();
        let want = match self.mode {
            TrainMode::Ddt => 2 * self.k,
            TrainMode::CeBaseline => self.classes,
        };
        if head != want {
            return Some(format!(
                "{} head needs {want} outputs for ({}, {}) but the architecture has {head}",
                self.mode, self.classes, self.k
            ));
        }
        None
    }

    /// Serialize to the documented byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(msg) = self.consistency_error() {
            return Err(Error::Config(msg));
        }
        let text = self.params.arch.canonical_text();
        let n = self.params.theta.len();
        let mut out = Vec::with_capacity(32 + text.len() + 8 * (3 * n + 2));
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.push(1); // a dense head follows the conv stack
        out.push(self.mode.to_byte());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for &x in &self.params.theta {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &x in &self.opt.m {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &x in &self.opt.v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.opt.step.to_le_bytes());
        Ok(out)
    }

    /// Parse the documented byte layout, rejecting anything inconsistent.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|e| Error::Format(format!("architecture text is not UTF-8: {e}")))?;
        let arch = Arch::parse(text)?;
        let classes = r.u32()? as usize;
        let k = r.u32()? as usize;
        let head = r.u8()?;
        if head != 1 {
            return Err(Error::Format(format!("unsupported head flag {head}, expected 1")));
        }
        let mode_byte = r.u8()?;
        let mode = TrainMode::from_byte(mode_byte)
            .ok_or_else(|| Error::Format(format!("unknown mode byte {mode_byte}")))?;
        let n = r.u64()? as usize;
        if n != arch.param_count() {
            return Err(Error::Format(format!(
                "file claims {n} parameters but the architecture has {}",
                arch.param_count()
            )));
        }
        let theta = r.f64_vec(n)?;
        let m = r.f64_vec(n)?;
        let v = r.f64_vec(n)?;
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the optimizer state",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Checkpoint {
            params: EncoderParams { arch, theta },
            opt: AdamState { m, v, step },
            mode,
            classes,
            k,
        };
        if let Some(msg) = ckpt.consistency_error() {
            return Err(Error::Format(msg));
        }
        Ok(ckpt)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "file truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("exact length")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("exact length")))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("exact length"))).collect())
    }
}

/// Write a checkpoint to `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

/// Read a checkpoint from `path`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
