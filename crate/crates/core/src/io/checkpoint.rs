//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "ARCSEPCK" | u16 major | u16 minor | u8 dtype | u64 payload length
//! payload:
//!   str  run configuration (key=value text)
//!   u64  seed | u64 step | f64 best validation loss
//!   u32  model count, then per model:
//!        str role ("separator", "enhancer.<s>")
//!        u32 parameter count; per parameter: str name, u8 group, u32 rank, u64 dims.., values
//!        u32 batch-norm count; per layer: str name, u64 batches, u64 channels, means, variances
//!        u8  has optimizer state; if 1: u64 step, f64 beta1 beta2 eps lr_conv lr_gru,
//!            u8 has clip, f64 clip, u32 moment count; per moment: u64 len, first, second
//! u64 FNV-1a hash of every preceding byte
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8. Readers accept any
//! minor version of their major version and ignore payload bytes they do
//! not understand.

use std::path::Path;

use crate::io::{IoError, RunConfig};
use crate::models::{EnhancerSet, ModelConfig, Separator};
use crate::nn::{AdamConfig, AdamState, ParamGroup, RunningStats};
use crate::scalar::{DType, Scalar};
use crate::training::TrainMode;

pub const MAGIC: &[u8; 8] = b"ARCSEPCK";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

const HEADER_LEN: usize = 8 + 2 + 2 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainMeta {
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub best_validation: f64,
}

/// A trained separator, optionally with its enhancers, plus everything
/// needed to resume training.
#[derive(Debug)]
pub struct Checkpoint<T: Scalar> {
    pub config: RunConfig,
    pub separator: Separator<T>,
    pub separator_adam: Option<AdamState<T>>,
    pub enhancers: Option<EnhancerSet<T>>,
    /// One optimizer state per enhancer, or empty.
    pub enhancer_adam: Vec<AdamState<T>>,
    pub meta: TrainMeta,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: RunConfig, separator: Separator<T>) -> Self {
        Self {
            config,
            separator,
            separator_adam: None,
            enhancers: None,
            enhancer_adam: Vec::new(),
            meta: TrainMeta::default(),
        }
    }

    /// Checks that the checkpoint can serve a run in `mode`: residual
    /// networks and plain networks are not interchangeable, and enhancer
    /// runs need enhancers.
    pub fn require_mode(&self, mode: TrainMode) -> Result<(), IoError> {
        let residual = self.config.model.residual.is_some();
        match mode {
            TrainMode::Residual if !residual => Err(IoError::ConfigMismatch(
                "a residual run needs a residual checkpoint; this one holds a plain separator".into(),
            )),
            TrainMode::Separator if residual => Err(IoError::ConfigMismatch(
                "a plain separator run cannot use a residual checkpoint".into(),
            )),
            TrainMode::Enhancer if self.enhancers.is_none() => {
                Err(IoError::ConfigMismatch("checkpoint holds no enhancers".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fails with the differing `model.*` keys when the stored network
    /// does not match `expected`.
    pub fn require_model(&self, expected: &ModelConfig) -> Result<(), IoError> {
        let have = self.config.model.entries();
        let diffs: Vec<String> = have
            .iter()
            .zip(expected.entries())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("model.{} is {} in the checkpoint, {} requested", a.0, a.1, b.1))
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(IoError::ConfigMismatch(diffs.join("; ")))
        }
    }

    /// Canonical byte encoding; equal checkpoints give equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        put_str(&mut p, &self.config.to_text());
        p.extend_from_slice(&self.meta.seed.to_le_bytes());
        p.extend_from_slice(&self.meta.step.to_le_bytes());
        p.extend_from_slice(&self.meta.best_validation.to_bits().to_le_bytes());
        let enhancers = self.enhancers.as_ref().map_or(&[][..], |e| e.models());
        p.extend_from_slice(&(1 + enhancers.len() as u32).to_le_bytes());
        put_model(&mut p, "separator", &self.separator, self.separator_adam.as_ref());
        for (s, m) in enhancers.iter().enumerate() {
            put_model(&mut p, &format!("enhancer.{s}"), m, self.enhancer_adam.get(s));
        }

        let mut out = Vec::with_capacity(HEADER_LEN + p.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
        out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(&p);
        let hash = fnv1a(&out);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(r.corrupt_at(0, "not a checkpoint (bad magic)"));
        }
        let major = r.u16("major version")?;
        let _minor = r.u16("minor version")?;
        if major > FORMAT_MAJOR {
            return Err(IoError::UnsupportedVersion {
                found: major,
                supported: FORMAT_MAJOR,
            });
        }
        let tag_at = r.pos;
        let tag = r.u8("dtype")?;
        let dtype = DType::from_tag(tag).ok_or_else(|| r.corrupt_at(tag_at, format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(IoError::ConfigMismatch(format!(
                "checkpoint stores {dtype:?} parameters, {:?} requested",
                T::DTYPE
            )));
        }
        let len = r.u64("payload length")? as usize;
        let payload_end = HEADER_LEN
            .checked_add(len)
            .filter(|&e| e.checked_add(8).is_some_and(|t| t <= bytes.len()))
            .ok_or_else(|| r.corrupt_at(HEADER_LEN as u64 - 8, "payload length exceeds file size"))?;
        let stored = u64::from_le_bytes(bytes[payload_end..payload_end + 8].try_into().expect("8 bytes"));
        if fnv1a(&bytes[..payload_end]) != stored {
            return Err(r.corrupt_at(payload_end as u64, "hash does not match contents"));
        }
        if payload_end + 8 != bytes.len() {
            return Err(r.corrupt_at(payload_end as u64 + 8, "trailing bytes after hash"));
        }
        r.bytes = &bytes[..payload_end];

        let cfg_at = r.pos;
        let text = r.string("configuration")?;
        let config = RunConfig::parse(&text).map_err(|e| r.corrupt_at(cfg_at, format!("configuration: {e}")))?;
        let meta = TrainMeta {
            seed: r.u64("seed")?,
            step: r.u64("step")?,
            best_validation: f64::from_bits(r.u64("best validation loss")?),
        };
        let count_at = r.pos;
        let count = r.u32("model count")? as usize;
        if count == 0 {
            return Err(r.corrupt_at(count_at, "no separator stored"));
        }
        let (separator, separator_adam) = get_model::<T>(&mut r, "separator", config.model.clone())?;
        let mut enhancers = Vec::new();
        let mut enhancer_adam = Vec::new();
        for s in 0..count - 1 {
            let (m, a) = get_model::<T>(&mut r, &format!("enhancer.{s}"), config.model.enhancer())?;
            enhancers.push(m);
            enhancer_adam.extend(a);
        }
        if !enhancer_adam.is_empty() && enhancer_adam.len() != enhancers.len() {
            return Err(r.corrupt("optimizer state stored for only some enhancers"));
        }
        let enhancers = if enhancers.is_empty() {
            None
        } else {
            if enhancers.len() != config.model.sources {
                return Err(r.corrupt_at(
                    count_at,
                    format!("{} enhancers for {} sources", enhancers.len(), config.model.sources),
                ));
            }
            Some(EnhancerSet::from_models(enhancers)?)
        };
        Ok(Self {
            config,
            separator,
            separator_adam,
            enhancers,
            enhancer_adam,
            meta,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| IoError::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, IoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        v.write_le(out);
    }
}

fn put_model<T: Scalar>(out: &mut Vec<u8>, role: &str, model: &Separator<T>, adam: Option<&AdamState<T>>) {
    put_str(out, role);
    let store = model.store();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        put_str(out, &p.name);
        out.push(match p.group {
            ParamGroup::Conv => 0,
            ParamGroup::Gru => 1,
        });
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_values(out, p.tensor.data());
    }
    let norms = model.batch_norms();
    out.extend_from_slice(&(norms.len() as u32).to_le_bytes());
    for (name, bn) in norms {
        let stats = bn.running();
        put_str(out, &name);
        out.extend_from_slice(&stats.batches.to_le_bytes());
        out.extend_from_slice(&(stats.mean.len() as u64).to_le_bytes());
        put_values(out, &stats.mean);
        put_values(out, &stats.var);
    }
    match adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&a.step.to_le_bytes());
            let c = &a.config;
            for v in [c.beta1, c.beta2, c.eps, c.lr_conv, c.lr_gru] {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            out.push(c.clip_gru.is_some() as u8);
            out.extend_from_slice(&c.clip_gru.unwrap_or(0.0).to_bits().to_le_bytes());
            out.extend_from_slice(&(a.moments.len() as u32).to_le_bytes());
            for (m, v) in &a.moments {
                out.extend_from_slice(&(m.len() as u64).to_le_bytes());
                put_values(out, m);
                put_values(out, v);
            }
        }
    }
}

fn get_model<T: Scalar>(
    r: &mut Reader<'_>,
    role: &str,
    config: ModelConfig,
) -> Result<(Separator<T>, Option<AdamState<T>>), IoError> {
    let at = r.pos;
    let found = r.string("model role")?;
    if found != role {
        return Err(r.corrupt_at(at, format!("expected model `{role}`, found `{found}`")));
    }
    let mut model = Separator::<T>::new(config, 0)?;
    let at = r.pos;
    let count = r.u32("parameter count")? as usize;
    if count != model.store().len() {
        return Err(r.corrupt_at(
            at,
            format!("{role} has {count} parameters, configuration implies {}", model.store().len()),
        ));
    }
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        let at = r.pos;
        let name = r.string("parameter name")?;
        let group = match r.u8("parameter group")? {
            0 => ParamGroup::Conv,
            1 => ParamGroup::Gru,
            g => return Err(r.corrupt_at(at, format!("unknown parameter group {g}"))),
        };
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u64("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let p = model.store().get(id);
        if p.name != name || p.group != group || p.tensor.shape() != shape {
            return Err(r.corrupt_at(
                at,
                format!(
                    "parameter `{name}` {shape:?} does not match expected `{}` {:?}",
                    p.name,
                    p.tensor.shape()
                ),
            ));
        }
        let n = p.tensor.len();
        let values = r.values::<T>(n, &name)?;
        model.store_mut().tensor_mut(id).data_mut().copy_from_slice(&values);
    }
    let at = r.pos;
    let count = r.u32("batch-norm count")? as usize;
    let norms = model.batch_norms();
    if count != norms.len() {
        return Err(r.corrupt_at(at, format!("{count} batch-norm layers, expected {}", norms.len())));
    }
    for (expected, bn) in &norms {
        let at = r.pos;
        let name = r.string("batch-norm name")?;
        let batches = r.u64("batch count")?;
        let channels = r.u64("channel count")? as usize;
        if &name != expected || channels != bn.channels {
            return Err(r.corrupt_at(at, format!("batch-norm `{name}` does not match expected `{expected}`")));
        }
        let mean = r.values::<T>(channels, "running mean")?;
        let var = r.values::<T>(channels, "running variance")?;
        bn.set_running(RunningStats { mean, var, batches });
    }
    drop(norms);
    let adam = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let mut f = [0.0; 5];
            for v in &mut f {
                *v = f64::from_bits(r.u64("optimizer setting")?);
            }
            let has_clip = r.u8("clip flag")? != 0;
            let clip = f64::from_bits(r.u64("clip")?);
            let config = AdamConfig {
                beta1: f[0],
                beta2: f[1],
                eps: f[2],
                lr_conv: f[3],
                lr_gru: f[4],
                clip_gru: has_clip.then_some(clip),
            };
            let at = r.pos;
            let count = r.u32("moment count")? as usize;
            if count != model.store().len() {
                return Err(r.corrupt_at(at, format!("{count} optimizer moments for {} parameters", model.store().len())));
            }
            let mut moments = Vec::with_capacity(count);
            for p in model.store().iter() {
                let at = r.pos;
                let len = r.u64("moment length")? as usize;
                if len != p.tensor.len() {
                    return Err(r.corrupt_at(at, format!("moment of `{}` has length {len}", p.name)));
                }
                moments.push((r.values::<T>(len, "first moment")?, r.values::<T>(len, "second moment")?));
            }
            Some(AdamState { config, step, moments })
        }
        v => return Err(r.corrupt(format!("invalid optimizer flag {v}"))),
    };
    Ok((model, adam))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: impl TryInto<u64>, reason: impl Into<String>) -> IoError {
        IoError::Corrupt {
            offset: offset.try_into().unwrap_or(u64::MAX),
            reason: reason.into(),
        }
    }

    fn corrupt(&self, reason: impl Into<String>) -> IoError {
        self.corrupt_at(self.pos, reason)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.corrupt(format!("unexpected end of data reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8, IoError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, IoError> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt_at(at, format!("{what} is not UTF-8")))
    }

    fn values<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>, IoError> {
        let size = T::DTYPE.size();
        let raw = self.take(n.saturating_mul(size), what)?;
        Ok(raw.chunks_exact(size).map(T::read_le).collect())
    }
}
