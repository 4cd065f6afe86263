//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pco_core::augment::AugmentSpec;
use pco_core::groundtruth::KMeansParams;
use pco_core::synth::DatasetSynthSpec;
use pco_unet::{TrainConfig, UNetConfig};
use serde::{Deserialize, Serialize};

/// Which ground truth a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtSource {
    Gt1,
    Gt2,
}

impl GtSource {
    pub fn dir_name(self) -> &'static str {
        match self {
            GtSource::Gt1 => "gt1",
            GtSource::Gt2 => "gt2",
        }
    }

    pub fn model(self) -> pco_core::classify::ModelSource {
        match self {
            GtSource::Gt1 => pco_core::classify::ModelSource::Model1,
            GtSource::Gt2 => pco_core::classify::ModelSource::Model2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(GtSource::Gt1),
            2 => Ok(GtSource::Gt2),
            _ => bail!("ground truth must be 1 or 2, got {n}"),
        }
    }
}

impl std::fmt::Display for GtSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Where the images come from. Exactly one of the two must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Existing manifest (JSON), relative to the config file or absolute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Synthetic dataset written to `<out>/dataset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<DatasetSynthSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Weight of recall in the reported F-beta score.
    pub beta: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { beta: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; dataset, folds, GT2 and training seeds derive from it.
    pub seed: u64,
    pub out: PathBuf,
    pub gt_sources: Vec<GtSource>,
    pub dataset: DatasetConfig,
    pub folds: FoldConfig,
    pub augment: AugmentSpec,
    pub kmeans: KMeansParams,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub classify: ClassifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            gt_sources: vec![GtSource::Gt1, GtSource::Gt2],
            dataset: DatasetConfig {
                manifest: None,
                synth: Some(DatasetSynthSpec::default()),
            },
            folds: FoldConfig::default(),
            augment: AugmentSpec::default(),
            kmeans: KMeansParams::default(),
            unet: UNetConfig::desk(),
            train: TrainConfig::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML file; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = cfg.dataset.manifest.as_mut() {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.manifest, &self.dataset.synth) {
            (Some(_), Some(_)) => bail!("dataset: set either `manifest` or `synth`, not both"),
            (None, None) => bail!("dataset: one of `manifest` or `synth` is required"),
            (Some(m), None) if !m.exists() => {
                bail!("dataset manifest {} does not exist", m.display())
            }
            _ => {}
        }
        if self.gt_sources.is_empty() {
            bail!("gt_sources is empty");
        }
        let mut g = self.gt_sources.clone();
        g.sort();
        g.dedup();
        if g.len() != self.gt_sources.len() {
            bail!("gt_sources lists a source twice");
        }
        if self.folds.k < 2 {
            bail!("folds.k must be at least 2");
        }
        if !(self.classify.beta > 0.0) {
            bail!("classify.beta must be positive");
        }
        self.augment.validate()?;
        self.unet.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Seed for one purpose, derived from the master seed.
    pub fn derived_seed(&self, purpose: &str, index: u64) -> u64 {
        let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        for b in purpose.bytes().chain(index.to_le_bytes()) {
            h = splitmix(h ^ b as u64);
        }
        h
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            toml::from_str("seed = 7\n[unet]\ndepth = 2\n[dataset.synth]\ncount = 20\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.unet.depth, 2);
        assert_eq!(cfg.unet.base_channels, UNetConfig::default().base_channels);
        assert_eq!(cfg.dataset.synth.unwrap().count, 20);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn seeds_differ_by_purpose_and_index() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.derived_seed("train", 0), cfg.derived_seed("train", 1));
        assert_ne!(cfg.derived_seed("train", 0), cfg.derived_seed("folds", 0));
        assert_eq!(cfg.derived_seed("train", 3), cfg.derived_seed("train", 3));
    }
}
