//! Versioned training checkpoints.
//!
//! Every random stream of meta-training is derived from the training seed
//! and the epoch counter, so the pair is the full RNG state and a resumed
//! run continues exactly where the saved one stopped.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::griddata::Normalizer;
use crate::metatrain::{EpochLog, MetaConfig, MetaState, Models};
use crate::nets::NetConfig;

pub const FORMAT: &str = "stormgan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub with_graph: bool,
    /// Network shapes after the node width was taken from the graph.
    pub net: NetConfig,
    pub meta: MetaConfig,
    pub normalizer: Normalizer,
    pub state: MetaState,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(seed: u64, models: &Models, meta: &MetaConfig, normalizer: &Normalizer, state: &MetaState, history: &[EpochLog]) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            with_graph: models.uses_graph(),
            net: models.net().clone(),
            meta: meta.clone(),
            normalizer: normalizer.clone(),
            state: state.clone(),
            history: history.to_vec(),
        }
    }

    pub fn models(&self) -> Models {
        Models::new(&self.net, self.with_graph)
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, self)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Archive { path: path.to_path_buf(), reason };
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", ck.format)));
        }
        if ck.version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {} (expected {VERSION})", ck.version)));
        }
        let m = ck.models();
        let (g, d) = (m.gen.num_params(), m.disc.num_params());
        if ck.state.theta_g.len() != g || ck.state.theta_d.len() != d {
            return Err(bad(format!(
                "parameter counts {}/{} do not match the network ({g}/{d})",
                ck.state.theta_g.len(),
                ck.state.theta_d.len()
            )));
        }
        Ok(ck)
    }
}
