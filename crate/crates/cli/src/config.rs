//! Loading the experiment config, applying command-line overrides, and
//! stamping artifact directories with what produced them.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use stormgan::protocol::{ExperimentConfig, GraphChoice};

/// Reads a TOML config; absent keys take their defaults and unknown keys
/// are rejected with the list of valid ones.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    Ok(toml::from_str(text)?)
}

pub fn render(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scenario: Option<GraphChoice>,
    pub test_city: Option<String>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.scenario {
            cfg.graph.scenario = s;
        }
        if let Some(c) = &self.test_city {
            cfg.protocol.test_city = c.clone();
        }
        if let Some(e) = self.epochs {
            cfg.meta.epochs = e;
        }
    }
}

/// Creates `dir` and records the resolved config and seed in it.
pub fn stamp(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), render(cfg)?)?;
    fs::write(dir.join("seed.txt"), format!("{seed}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(parse(&render(&cfg).unwrap()).unwrap(), cfg);
        assert_eq!(parse("").unwrap(), cfg);
    }

    #[test]
    fn shipped_default_config_matches_the_defaults() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
        assert_eq!(load(Some(Path::new(path))).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        let err = format!("{:#}", parse("[meta]\nalpah = 0.1\n").unwrap_err());
        assert!(err.contains("alpah"), "{err}");
        assert!(err.contains("alpha") && err.contains("inner_d_steps"), "{err}");
        let err = format!("{:#}", parse("[metta]\n").unwrap_err());
        assert!(err.contains("protocol"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::default();
        Overrides { seed: Some(5), scenario: Some(GraphChoice::None), test_city: Some("x".into()), epochs: Some(0) }
            .apply(&mut cfg);
        assert_eq!((cfg.seed, cfg.graph.scenario, cfg.protocol.test_city.as_str(), cfg.meta.epochs), (5, GraphChoice::None, "x", 0));
    }
}
