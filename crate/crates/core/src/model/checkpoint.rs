//! JSON checkpoints. Reals are written in shortest round-trip form and parsed
//! with correct rounding, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderOptim, HeadOptim, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "decomp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub head_optim: Option<HeadOptim>,
    pub encoder_optim: Option<EncoderOptim>,
}

impl Checkpoint {
    pub fn new(model: Model, head_optim: Option<HeadOptim>, encoder_optim: Option<EncoderOptim>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            head_optim,
            encoder_optim,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Parses and validates a checkpoint; every structural invariant of the
    /// model is rechecked.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.model;
        m.encoder.validate()?;
        m.head.validate()?;
        if m.encoder.repr_dim() != m.head.repr_dim() {
            return Err(Error::Checkpoint(format!(
                "encoder output {} does not match classifier rows {}",
                m.encoder.repr_dim(),
                m.head.repr_dim()
            )));
        }
        if let Some(opt) = &self.head_optim {
            let d = m.head.repr_dim();
            let b = m.head.boundary();
            let expected = [(d, b), (d, m.head.num_columns() - b)];
            for (state, exp) in [&opt.prev, &opt.cur].into_iter().zip(expected) {
                if state.m.shape() != exp || state.v.shape() != exp {
                    return Err(Error::Checkpoint("head optimizer state shape mismatch".into()));
                }
            }
        }
        if let Some(opt) = &self.encoder_optim {
            let e = &m.encoder;
            let expected = [
                e.w1.shape(),
                (1, e.b1.dim()),
                e.w2.shape(),
                (1, e.b2.dim()),
            ];
            for (state, exp) in [&opt.w1, &opt.b1, &opt.w2, &opt.b2].into_iter().zip(expected) {
                if state.m.shape() != exp || state.v.shape() != exp {
                    return Err(Error::Checkpoint("encoder optimizer state shape mismatch".into()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
