//! Run and experiment configuration files.
//!
//! One TOML document with optional sections `[phantom]`, `[data]`,
//! `[generator]`, `[discriminator]`, `[train]` (with `[train.adam]` and
//! `[train.weights]`), `[experiment]` and `[output]`. Missing keys take
//! their defaults; unknown keys are errors. Command-line flags are applied on
//! top of the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ivus_core::nets::{DiscriminatorConfig, GeneratorConfig, GeneratorVariant};
use ivus_core::phantom::PhantomSpec;
use ivus_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Environment variable naming the directory relative output paths are
/// resolved against.
pub const OUT_ROOT_ENV: &str = "IVUS_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Load a dataset written by `gen-data` instead of generating one.
    pub dir: Option<PathBuf>,
    /// Random rotations added per training sample.
    pub rotations: usize,
    /// One scaled copy per factor for each training sample.
    pub scales: Vec<f64>,
    pub augment_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 32,
            val: 8,
            test: 8,
            dir: None,
            rotations: 0,
            scales: Vec::new(),
            augment_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LossAblation,
    BetaSweepL1,
    BetaSweepL2,
    GeneratorComparison,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::LossAblation,
        ExperimentKind::BetaSweepL1,
        ExperimentKind::BetaSweepL2,
        ExperimentKind::GeneratorComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LossAblation => "loss_ablation",
            ExperimentKind::BetaSweepL1 => "beta_sweep_l1",
            ExperimentKind::BetaSweepL2 => "beta_sweep_l2",
            ExperimentKind::GeneratorComparison => "generator_comparison",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    /// Training seeds; every configuration is trained once per seed.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

/// Command-line values that replace configuration keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<GeneratorVariant>,
    pub kind: Option<ExperimentKind>,
    pub seeds: Option<Vec<u64>>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.to_path_buf(),
            detail: e.to_string().trim_end().to_string(),
        })
    }

    /// Configuration from `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                Self::parse(&text, p)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
        if let Some(v) = &o.data_dir {
            self.data.dir = Some(v.clone());
        }
        if let Some(v) = o.train {
            self.data.train = v;
        }
        if let Some(v) = o.val {
            self.data.val = v;
        }
        if let Some(v) = o.test {
            self.data.test = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.variant {
            self.generator.variant = v;
        }
        if let Some(v) = o.kind {
            self.experiment.kind = Some(v);
        }
        if let Some(v) = &o.seeds {
            self.experiment.seeds = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(HarnessError::Config {
                path: PathBuf::from("<resolved config>"),
                detail,
            })
        };
        self.phantom.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.train.validate()?;
        let size = self.phantom.image_size;
        if self.generator.image_size != size || self.discriminator.image_size != size {
            return bad(format!(
                "generator.image_size ({}) and discriminator.image_size ({}) must equal phantom.image_size ({size})",
                self.generator.image_size, self.discriminator.image_size
            ));
        }
        if self.data.train == 0 && self.data.dir.is_none() {
            return bad("data.train must be >= 1".into());
        }
        if self.experiment.seeds.is_empty() {
            return bad("experiment.seeds must list at least one seed".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration types serialize to TOML")
    }

    /// SHA-256 of the canonical TOML rendering, in hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The output directory, resolved against `out_root` when relative.
    pub fn output_dir(&self, out_root: Option<&Path>) -> PathBuf {
        resolve_output(&self.output.dir, out_root)
    }
}

pub fn resolve_output(dir: &Path, out_root: Option<&Path>) -> PathBuf {
    match out_root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[train]\nepochs = 3\n[train.weights]\nb = 8.0\nrec_mode = \"l2\"\n[generator]\nvariant = \"hourglass_reinject\"\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.weights.b, 8.0);
        assert_eq!(cfg.generator.variant, GeneratorVariant::HourglassReinject);
        assert_eq!(cfg.data, DataConfig::default());
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = RunConfig::parse("[train]\nepochs = 3\nbatch_size = \"x\"\n", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line 3"), "{msg}");
        let err = RunConfig::parse("[train]\nepoch = 3\n", Path::new("bad.toml")).unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            epochs: Some(2),
            seeds: Some(vec![7]),
            ..Default::default()
        });
        assert_eq!((cfg.train.epochs, cfg.experiment.seeds.clone()), (2, vec![7]));
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn mismatched_image_sizes_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.phantom.image_size = 128;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_outputs_follow_the_root() {
        let root = Path::new("/tmp/root");
        assert_eq!(resolve_output(Path::new("a"), Some(root)), root.join("a"));
        assert_eq!(resolve_output(Path::new("/abs"), Some(root)), PathBuf::from("/abs"));
        assert_eq!(resolve_output(Path::new("a"), None), PathBuf::from("a"));
    }
}
