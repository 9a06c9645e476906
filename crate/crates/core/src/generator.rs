//! Uniform access to every trained generator through its checkpoint.

use std::path::Path;

use crate::baselines::{plaingen, seqgen, plaingen::PlainGen, seqgen::SeqGen};
use crate::hdmapgen::{self, HdMapGen};
use crate::map::io::MapDoc;
use crate::nn::{Checkpoint, ParamStore};
use crate::{Error, Result};

pub const KINDS: [&str; 3] = [hdmapgen::CHECKPOINT_KIND, plaingen::CHECKPOINT_KIND, seqgen::CHECKPOINT_KIND];

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    HdMapGen(HdMapGen),
    PlainGen(PlainGen),
    SeqGen(SeqGen),
}

/// One generated map in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub map: MapDoc,
    /// No lanes were produced, or generation hit its length cap.
    pub degenerate: bool,
}

pub struct Generator {
    pub model: Model,
    pub store: ParamStore,
}

impl Generator {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = match ck.kind.as_str() {
            hdmapgen::CHECKPOINT_KIND => Model::HdMapGen(HdMapGen::from_checkpoint(&ck)?),
            plaingen::CHECKPOINT_KIND => Model::PlainGen(PlainGen::from_checkpoint(&ck)?),
            seqgen::CHECKPOINT_KIND => Model::SeqGen(SeqGen::from_checkpoint(&ck)?),
            other => return Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
        };
        Ok(Self { model, store: ck.params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            Model::HdMapGen(_) => hdmapgen::CHECKPOINT_KIND,
            Model::PlainGen(_) => plaingen::CHECKPOINT_KIND,
            Model::SeqGen(_) => seqgen::CHECKPOINT_KIND,
        }
    }

    /// The `i`-th map of the stream for `seed`; independent of which other indices are drawn.
    pub fn sample(&self, tau: f64, seed: u64, i: usize) -> Result<Generated> {
        let s = &self.store;
        Ok(match &self.model {
            Model::HdMapGen(m) => {
                let out = m.sample_indexed(s, tau, seed, i)?;
                Generated {
                    map: MapDoc::Hier(out.graph),
                    degenerate: out.degenerate,
                }
            }
            Model::PlainGen(m) => {
                let out = m.sample_indexed(s, tau, seed, i)?;
                Generated {
                    map: MapDoc::Plain(out.graph),
                    degenerate: out.degenerate,
                }
            }
            Model::SeqGen(m) => {
                let out = m.sample_indexed(s, tau, seed, i)?;
                Generated {
                    degenerate: out.empty || out.truncated,
                    map: MapDoc::Plain(out.graph),
                }
            }
        })
    }
}
