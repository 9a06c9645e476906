//! Checkpoint container: `LGCKPT\0\0`, a little-endian `u32` version, a `u64` manifest
//! length, the JSON manifest, then raw little-endian `f64` tensor data.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Adam, AdamConfig, ParamStore};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Offset in `f64` elements from the start of the data section.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint("corrupt rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub param_seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
    /// Model architecture and training configuration.
    pub config: serde_json::Value,
    /// Anything else the model needs at sampling time.
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub params: ParamStore,
    pub adam: Option<Adam>,
    pub rng: Option<RngState>,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut add = |name: String, a: &Array2<f64>| {
            tensors.push(TensorEntry {
                name,
                shape: [a.nrows(), a.ncols()],
                dtype: "f64".into(),
                offset: data.len(),
                len: a.len(),
            });
            data.extend(a.iter());
        };
        for id in self.params.ids() {
            add(self.params.name(id).to_string(), self.params.value(id));
        }
        if let Some(adam) = &self.adam {
            for id in self.params.ids() {
                add(format!("adam.m.{}", self.params.name(id)), &adam.m[id.0]);
            }
            for id in self.params.ids() {
                add(format!("adam.v.{}", self.params.name(id)), &adam.v[id.0]);
            }
        }
        let manifest = Manifest {
            version: VERSION,
            kind: self.kind.clone(),
            param_seed: self.params.seed,
            tensors,
            adam: self.adam.as_ref().map(|a| AdamState {
                cfg: a.cfg.clone(),
                t: a.t,
            }),
            rng: self.rng.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let data = &bytes[20 + mlen..];
        let read = |e: &TensorEntry| -> Result<Array2<f64>> {
            if e.dtype != "f64" || e.shape[0] * e.shape[1] != e.len {
                return Err(Error::Checkpoint(format!("bad tensor entry {}", e.name)));
            }
            let raw = data
                .get(8 * e.offset..8 * (e.offset + e.len))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} out of bounds", e.name)))?;
            let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(Array2::from_shape_vec((e.shape[0], e.shape[1]), v).expect("shape checked"))
        };
        let mut params = ParamStore::new(manifest.param_seed);
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in &manifest.tensors {
            let a = read(e)?;
            if e.name.starts_with("adam.m.") {
                m.push(a);
            } else if e.name.starts_with("adam.v.") {
                v.push(a);
            } else {
                params.insert(&e.name, a)?;
            }
        }
        params.check_finite()?;
        let adam = match manifest.adam {
            Some(state) => {
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(bad("optimizer state does not match parameters"));
                }
                Some(Adam {
                    cfg: state.cfg,
                    t: state.t,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Self {
            kind: manifest.kind,
            params,
            adam,
            rng: manifest.rng,
            config: manifest.config,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Checks that `got` holds exactly the tensors of `expected`, in order and with the same
/// shapes.
pub fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} tensors, checkpoint has {}",
            expected.len(),
            got.len()
        )));
    }
    for (a, b) in expected.ids().zip(got.ids()) {
        if expected.name(a) != got.name(b) || expected.value(a).dim() != got.value(b).dim() {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: model {} {:?}, checkpoint {} {:?}",
                expected.name(a),
                expected.value(a).dim(),
                got.name(b),
                got.value(b).dim()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn round_trip_with_optimizer_and_rng() {
        let mut params = ParamStore::new(42);
        params.insert("a", array![[1.5, -2.0], [0.25, 8.0]]).unwrap();
        params.insert("b", array![[3.0]]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.t = 7;
        adam.m[0][[1, 1]] = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u64();
        let ck = Checkpoint {
            kind: "test".into(),
            params,
            adam: Some(adam),
            rng: Some(RngState::capture(&rng)),
            config: serde_json::json!({"hidden": 4}),
            meta: serde_json::json!({"fov_m": 120.0}),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut restored = back.rng.unwrap().restore().unwrap();
        assert_eq!(restored.next_u64(), rng.next_u64());
    }

    #[test]
    fn garbage_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    }
}
