//! Versioned little-endian binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "IERDCKPT" | u32 version
//! u32 modules | u32 layers | u32 channels | u32 image_channels | u32 dilation × layers
//! u64 step
//! u32 layer count, then per layer:
//!     u16 id length | id (utf-8, e.g. "m0.l3") | u32 × 4 weight shape | f32 weights
//!     u32 bias length | f32 biases
//! u8 optimizer flag; when 1:
//!     f64 beta1, beta2, eps, base_lr, weight_decay | u64 halving_period | u64 t
//!     first moments for every layer (weights then biases), then second moments
//! ```

use std::io::Write;
use std::path::Path;

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::network::{LayerId, NetworkConfig, ParamStore};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"IERDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
    /// Completed training steps.
    pub step: u64,
}

impl Checkpoint {
    pub fn new(store: ParamStore<f32>, optimizer: Option<AdamState<f32>>, step: u64) -> Self {
        Checkpoint { store, optimizer, step }
    }

    pub fn config(&self) -> &NetworkConfig {
        self.store.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let cfg = self.store.config();
        for v in [cfg.modules, cfg.layers, cfg.channels, cfg.image_channels] {
            put_u32(&mut out, v as u32);
        }
        for &d in &cfg.dilations {
            put_u32(&mut out, d as u32);
        }
        put_u64(&mut out, self.step);
        put_u32(&mut out, self.store.len() as u32);
        for (id, p) in self.store.ids().iter().zip(self.store.params()) {
            let name = id.to_string();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let s = p.weight.shape();
            for d in [s.n, s.c, s.h, s.w] {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, p.weight.data());
            put_u32(&mut out, p.bias.len() as u32);
            put_f32s(&mut out, &p.bias);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                let c = state.config;
                for v in [c.beta1, c.beta2, c.eps, c.base_lr, c.weight_decay] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_u64(&mut out, c.halving_period);
                put_u64(&mut out, state.t);
                for moment in state.m.iter().chain(&state.v) {
                    put_f32s(&mut out, moment.weight.data());
                    put_f32s(&mut out, &moment.bias);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.error("not an IERD checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error(&format!("unsupported format version {version}")));
        }
        let modules = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let image_channels = r.u32()? as usize;
        if layers > 4096 {
            return Err(r.error(&format!("implausible layer count {layers}")));
        }
        let dilations = (0..layers).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let config = NetworkConfig { modules, layers, channels, image_channels, dilations };
        config.validate().map_err(|e| r.error(&e.to_string()))?;
        let step = r.u64()?;

        let expected = config.layer_specs();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(r.error(&format!("expected {} layers, found {count}", expected.len())));
        }
        let mut params = Vec::with_capacity(count);
        for (want_id, spec) in &expected {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| r.error("layer id is not utf-8"))?;
            let id: LayerId = name.parse().map_err(|e: Error| r.error(&e.to_string()))?;
            if id != *want_id {
                return Err(r.error(&format!("expected layer {want_id}, found {id}")));
            }
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            if shape != spec.weight_shape() {
                return Err(r.error(&format!("layer {id}: weight shape {shape}, expected {}", spec.weight_shape())));
            }
            let weight = Tensor::from_vec(shape, r.f32s(shape.len())?)?;
            let bias_len = r.u32()? as usize;
            if bias_len != spec.out_channels {
                return Err(r.error(&format!("layer {id}: {bias_len} biases, expected {}", spec.out_channels)));
            }
            params.push(ConvParams { weight, bias: r.f32s(bias_len)? });
        }
        let store = ParamStore::from_params(&config, params)?;

        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let f = |r: &mut Reader| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
                let (beta1, beta2, eps, base_lr, weight_decay) = (f(&mut r)?, f(&mut r)?, f(&mut r)?, f(&mut r)?, f(&mut r)?);
                let halving_period = r.u64()?;
                let adam = AdamConfig { beta1, beta2, eps, base_lr, halving_period, weight_decay };
                let mut state = AdamState::new(adam, &store).map_err(|e| r.error(&e.to_string()))?;
                state.t = r.u64()?;
                for moment in state.m.iter_mut().chain(state.v.iter_mut()) {
                    let w = r.f32s(moment.weight.len())?;
                    moment.weight.data_mut().copy_from_slice(&w);
                    let b = r.f32s(moment.bias.len())?;
                    moment.bias.copy_from_slice(&b);
                }
                Some(state)
            }
            flag => return Err(r.error(&format!("bad optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.error(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { store, optimizer, step })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted save never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: format!("{reason} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
}
