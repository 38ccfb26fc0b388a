//! Layering of built-in defaults, an optional JSON config file and flags.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use dp_relu::datagen::{Design, GroundTruth};
use dp_relu::experiments::{DeltaRule, ExperimentConfig, Source};
use dp_relu::trainers::{Algorithm, TrainerConfig};

/// Flags shared by the commands that train models.
#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// JSON experiment config; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Algorithm names, comma separated (glmtron, dp_glmtron, dp_mbglmtron, dp_sgd).
    #[arg(long, value_delimiter = ',')]
    pub algorithm: Vec<Algorithm>,
    /// Privacy budgets, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    /// Fixed delta.
    #[arg(long, conflicts_with = "delta_power")]
    pub delta: Option<f64>,
    /// delta = N^-p.
    #[arg(long, value_name = "P")]
    pub delta_power: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub estimating: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// A single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seeds as a count (`5` means 0..5), a range (`3..8`) or a list (`1,4,9`).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Numeric CSV input; needs --target.
    #[arg(long, value_name = "FILE", requires = "target", conflicts_with = "synthetic")]
    pub csv: Option<PathBuf>,
    /// Target column, by name or zero-based index.
    #[arg(long)]
    pub target: Option<String>,
    /// Columns to drop from a CSV, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Synthetic source, e.g. `d=8 n=20000 sigma=0.5 design=gaussian`.
    /// Optional keys: `norm` (of w*, default 1) and `truth_seed` (default 0).
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub synthetic: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Concurrent grid cells (defaults to the available cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Parsed `--synthetic` description.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub design: Design,
    pub norm: f64,
    pub truth_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d: 10,
            n: 10_000,
            sigma: 0.1,
            design: Design::Gaussian,
            norm: 1.0,
            truth_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn parse(parts: &[String]) -> Result<Self> {
        let mut spec = Self::default();
        let joined = parts.join(" ");
        for pair in joined.split(|c: char| c.is_whitespace() || c == ',').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .with_context(|| format!("expected KEY=VALUE in --synthetic, got {pair:?}"))?;
            let bad = || format!("bad value {value:?} for {key}");
            match key {
                "d" => spec.d = value.parse().with_context(bad)?,
                "n" => spec.n = value.parse().with_context(bad)?,
                "sigma" => spec.sigma = value.parse().with_context(bad)?,
                "norm" => spec.norm = value.parse().with_context(bad)?,
                "truth_seed" => spec.truth_seed = value.parse().with_context(bad)?,
                "design" => {
                    spec.design = serde_json::from_value(serde_json::Value::String(value.to_owned()))
                        .with_context(|| format!("unknown design {value:?} (gaussian, rademacher, uniform_cube)"))?
                }
                _ => bail!("unknown --synthetic key {key:?}"),
            }
        }
        Ok(spec)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth::isotropic(self.d, self.norm, self.sigma, self.design, self.truth_seed)?)
    }
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi): (u64, u64) = (lo.trim().parse()?, hi.trim().parse()?);
        (lo..hi).collect()
    } else if text.contains(',') {
        text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?
    } else {
        (0..text.parse::<u64>()?).collect()
    };
    if seeds.is_empty() {
        bail!("--seeds {text:?} selects no seeds");
    }
    Ok(seeds)
}

fn apply_trainer_flags(t: &mut TrainerConfig, args: &GridArgs) {
    if let Some(v) = args.eta {
        t.eta = v;
    }
    if let Some(v) = args.batch {
        t.batch = v;
    }
    if let Some(v) = args.estimating {
        t.estimating = v;
    } else if args.batch.is_some() {
        t.estimating = TrainerConfig::default_estimating(t.batch);
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
}

/// Defaults, then the config file, then flags.
pub fn build_config(args: &GridArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::synthetic(SyntheticSpec::default().ground_truth()?, SyntheticSpec::default().n),
    };
    if !args.synthetic.is_empty() {
        let spec = SyntheticSpec::parse(&args.synthetic)?;
        cfg.source = Source::Synthetic {
            ground_truth: spec.ground_truth()?,
            n: spec.n,
        };
    }
    if let Some(path) = &args.csv {
        cfg.source = Source::Csv {
            path: path.clone(),
            target: args.target.clone().unwrap_or_default(),
            exclude: args.exclude.clone(),
        };
    } else if args.target.is_some() || !args.exclude.is_empty() {
        match &mut cfg.source {
            Source::Csv { target, exclude, .. } => {
                if let Some(t) = &args.target {
                    *target = t.clone();
                }
                if !args.exclude.is_empty() {
                    *exclude = args.exclude.clone();
                }
            }
            Source::Synthetic { .. } => bail!("--target and --exclude apply to CSV sources only"),
        }
    }
    if !args.algorithm.is_empty() {
        cfg.algorithms = args.algorithm.clone();
    }
    if !args.epsilon.is_empty() {
        cfg.epsilons = args.epsilon.clone();
    }
    if let Some(delta) = args.delta {
        cfg.delta_rule = DeltaRule::Fixed { delta };
    }
    if let Some(power) = args.delta_power {
        cfg.delta_rule = DeltaRule::NPower { power };
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(text) = &args.seeds {
        cfg.seeds = parse_seeds(text)?;
    }
    apply_trainer_flags(&mut cfg.trainer, args);
    for t in cfg.trainer_overrides.values_mut() {
        apply_trainer_flags(t, args);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec_forms() {
        let one = SyntheticSpec::parse(&["d=8 n=200 sigma=0.5 design=rademacher".to_owned()]).unwrap();
        let many = SyntheticSpec::parse(&["d=8".into(), "n=200".into(), "sigma=0.5".into(), "design=rademacher".into()])
            .unwrap();
        assert_eq!(one, many);
        assert_eq!((one.d, one.n, one.sigma, one.design), (8, 200, 0.5, Design::Rademacher));
        assert!(SyntheticSpec::parse(&["q=1".into()]).is_err());
        assert!(SyntheticSpec::parse(&["design=hex".into()]).is_err());
    }

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 1").unwrap(), vec![7, 1]);
        assert!(parse_seeds("0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut file_cfg = ExperimentConfig::synthetic(SyntheticSpec::default().ground_truth().unwrap(), 500);
        file_cfg.trainer.eta = 0.2;
        file_cfg.trainer.epochs = 4;
        file_cfg.epsilons = vec![1.0];
        std::fs::write(&path, serde_json::to_string(&file_cfg).unwrap()).unwrap();

        let args = GridArgs {
            config: Some(path),
            eta: Some(0.01),
            seeds: Some("2".into()),
            ..GridArgs::default()
        };
        let cfg = build_config(&args).unwrap();
        assert_eq!(cfg.trainer.eta, 0.01);
        assert_eq!(cfg.trainer.epochs, 4);
        assert_eq!(cfg.epsilons, vec![1.0]);
        assert_eq!(cfg.seeds, vec![0, 1]);
    }

    #[test]
    fn target_needs_csv_source() {
        let args = GridArgs {
            target: Some("y".into()),
            ..GridArgs::default()
        };
        assert!(build_config(&args).is_err());
    }
}
