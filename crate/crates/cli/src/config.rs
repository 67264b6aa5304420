use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use icl_gr::scorer::MockModelConfig;
use serde::{Deserialize, Serialize};

pub const WORKDIR_ENV: &str = "ICICLE_WORKDIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativesConfig {
    pub k: usize,
}

impl Default for NegativesConfig {
    fn default() -> Self {
        NegativesConfig { k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstancesConfig {
    pub n_shots: usize,
    pub seed: u64,
}

impl Default for InstancesConfig {
    fn default() -> Self {
        InstancesConfig {
            n_shots: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_width: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Candidate-set size for `evaluate`.
    #[serde(rename = "N")]
    pub n: usize,
    pub shots: Vec<usize>,
    pub ece_bins: usize,
    pub seed: u64,
    pub dataset: String,
    pub csv: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 100,
            shots: vec![3, 10, 20, 50, 100],
            ece_bins: 10,
            seed: 0,
            dataset: "dataset".into(),
            csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub negatives: NegativesConfig,
    pub instances: InstancesConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub mock: MockModelConfig,
    pub dpo: DpoConfig,
}

impl RunConfig {
    /// Parses TOML (or JSON, by extension); relative paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.corpus,
            &mut cfg.paths.queries,
            &mut cfg.paths.workdir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            bail!("split.ratio must lie in (0, 1), got {}", self.split.ratio);
        }
        for (name, v) in [
            ("negatives.k", self.negatives.k),
            ("instances.n_shots", self.instances.n_shots),
            ("decode.beam_width", self.decode.beam_width),
            ("eval.N", self.eval.n),
            ("eval.ece_bins", self.eval.ece_bins),
        ] {
            if v == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if self.eval.shots.is_empty() || self.eval.shots.contains(&0) {
            bail!("eval.shots must be a non-empty list of positive counts");
        }
        if self.eval.shots.windows(2).any(|w| w[0] >= w[1]) {
            bail!("eval.shots must be strictly ascending");
        }
        if !(self.dpo.beta.is_finite() && self.dpo.beta >= 0.0) {
            bail!("dpo.beta must be finite and non-negative");
        }
        self.mock.validate()?;
        Ok(())
    }

    /// `--workdir`, then the config file, then the environment, then `./work`.
    pub fn resolve_workdir(&mut self, flag: Option<PathBuf>) {
        let env = std::env::var_os(WORKDIR_ENV).map(PathBuf::from);
        self.paths.workdir = Some(
            flag.or(self.paths.workdir.take())
                .or(env)
                .unwrap_or_else(|| PathBuf::from("work")),
        );
    }

    pub fn workdir(&self) -> &Path {
        self.paths.workdir.as_deref().unwrap_or(Path::new("work"))
    }
}
