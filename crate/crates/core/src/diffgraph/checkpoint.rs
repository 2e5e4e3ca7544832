//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format": 1,
//!   "flow": { "n": 10, "n_layers": 8, "masking": "coupling", ... },
//!   "params": {
//!     "layout": { "segments": [ { "name": "layer0.step0.dense0.weight", "offset": 0, "shape": [5, 64] }, ... ] },
//!     "values": [ ... ]
//!   },
//!   "step": 10000,
//!   "rng": { "seed": 1, "stream": 10000, "word_pos": 0 },
//!   "operator": "A1"
//! }
//! ```
//!
//! `values` is the flat parameter vector; segment `i` occupies
//! `values[offset .. offset + prod(shape)]`, row-major. Dense weights have
//! shape `[fan_in, fan_out]`. Training draws iteration `t` from a ChaCha8
//! stream `t` under `seed`, so `rng.stream` is the next iteration to run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::flows::{FlowSpec, SphericalFlow};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub flow: FlowSpec,
    pub params: ParamStore,
    pub step: usize,
    pub rng: RngState,
    /// Fixture name or operator file the flow was trained against.
    #[serde(default)]
    pub operator: Option<String>,
}

impl Checkpoint {
    pub fn new(flow: &SphericalFlow, step: usize, rng: RngState, operator: Option<String>) -> Self {
        Self { format: CHECKPOINT_FORMAT, flow: flow.spec().clone(), params: flow.params().clone(), step, rng, operator }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unsupported checkpoint format {}", ck.format)));
        }
        ck.params.layout().validate()?;
        Ok(ck)
    }

    /// Rebuilds the flow, checking the stored layout against the spec.
    pub fn flow(&self) -> Result<SphericalFlow> {
        SphericalFlow::with_params(&self.flow, self.params.clone())
    }
}
