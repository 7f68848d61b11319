//! Run configuration: one TOML file with a section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numcore::RngState;
use crate::sampler::SamplerConfig;
use crate::sequence::{make_gaussian_mixture_dataset, make_pattern_image_dataset, CategoryDataset};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    GaussianMixture,
    PatternImages,
}

/// Synthetic dataset recipe. Class count and latent shape come from the
/// model section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DataKind,
    pub items_per_class: usize,
    /// Items per class in the held-out reference file.
    pub heldout_per_class: usize,
    /// Per-item standard deviation around the class mean.
    pub spread: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            kind: DataKind::GaussianMixture,
            items_per_class: 64,
            heldout_per_class: 64,
            spread: 0.5,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.items_per_class == 0 || self.heldout_per_class == 0 {
            return Err(Error::Config("dataset item counts must be positive".into()));
        }
        if !(self.spread >= 0.0) {
            return Err(Error::Config(format!("spread {} must be non-negative", self.spread)));
        }
        Ok(())
    }

    /// Training and held-out sets. Both share the class means of `seed` and
    /// draw their jitter from separate streams.
    pub fn generate(&self, model: &ModelConfig, seed: u64) -> Result<(CategoryDataset, CategoryDataset)> {
        self.validate()?;
        let base = RngState::new(seed);
        let make = |items: usize, stream: u64| {
            let mut rng = base.split(stream);
            match self.kind {
                DataKind::GaussianMixture => {
                    make_gaussian_mixture_dataset(model.num_classes, items, model.latent_shape, self.spread, &mut rng)
                }
                DataKind::PatternImages => {
                    make_pattern_image_dataset(model.num_classes, items, model.latent_shape, self.spread, &mut rng)
                }
            }
        };
        Ok((make(self.items_per_class, DATA_STREAM)?, make(self.heldout_per_class, HELDOUT_STREAM)?))
    }
}

pub const DATA_STREAM: u64 = 10;
pub const HELDOUT_STREAM: u64 = 11;
pub const SAMPLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, initialisation, training and sampling.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Steps between checkpoint writes during training.
    pub checkpoint_every: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub data: DataSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 100,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            data: DataSpec::default(),
        }
    }
}

/// Values from global command-line flags; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), applies overrides and validates.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(d) = &ov.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(t) = ov.threads {
            self.train.threads = t;
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(as_config)?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.data.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Maps a validation failure of a config section to a config error.
pub(crate) fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn sections_merge_over_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 4\n[model]\nhidden_size = 32\n[train]\nbatch_size = 2\n[sampler]\nsteps = 3\ncfg_scale = 2.0\n[data]\nkind = \"pattern_images\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.hidden_size, 32);
        assert_eq!(cfg.model.depth, ModelConfig::default().depth);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.sampler.steps, 3);
        assert_eq!(cfg.data.kind, DataKind::PatternImages);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["colour = 1", "[model]\nwidth = 3", "[train]\nlr = 0.1", "[sampler]\nfoo = 1", "[extra]\n"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::from_toml("seed = 1\nout_dir = \"a\"\n[train]\nthreads = 2\nseed = 9").unwrap();
        cfg.apply(&Overrides {
            seed: Some(5),
            out_dir: Some("b".into()),
            threads: Some(3),
        });
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.threads), (5, 5, 3));
        assert_eq!(cfg.out_dir, PathBuf::from("b"));
        let mut keep = RunConfig::from_toml("seed = 1").unwrap();
        keep.apply(&Overrides::default());
        assert_eq!(keep.train.seed, 1);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        cfg.model.hidden_size = 30;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.sampler.steps = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn generated_sets_are_reproducible_and_distinct() {
        let mut cfg = RunConfig::default();
        cfg.model.latent_shape = crate::sequence::LatentShape::new(1, 4, 4);
        cfg.data.items_per_class = 3;
        cfg.data.heldout_per_class = 2;
        let (a, h) = cfg.data.generate(&cfg.model, 3).unwrap();
        let (b, _) = cfg.data.generate(&cfg.model, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_classes(), cfg.model.num_classes);
        assert_eq!(h.class_items(0).len(), 2);
        assert_ne!(a.class_items(0)[0], h.class_items(0)[0]);
    }
}
