//! Run configuration: one human-editable TOML file per run, with one table
//! per subcommand. Unknown keys are rejected so a typo cannot silently fall
//! back to a default. Command-line flags override file values; the merged
//! result is written next to each run's outputs as `effective-config.toml`
//! and re-runs to identical outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use arteria::MMHG;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every stream of randomness derives from it.
    pub seed: u64,
    /// Worker-thread cap for per-twin parallel work; 0 uses the default.
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hemo: Option<HemoConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing effective config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Donor twin files; a directory is expanded to its `*.json` files in
    /// sorted order.
    pub donors: Vec<PathBuf>,
    pub count: usize,
    pub out_dir: PathBuf,
    pub target_n: usize,
    pub target_k: usize,
    pub bend_amplitude: (f64, f64),
    pub bend_frequency: (f64, f64),
    pub smoothing_sigma: (f64, f64),
    pub radius_noise_sigma: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            donors: Vec::new(),
            count: 0,
            out_dir: PathBuf::from("twins"),
            target_n: 500,
            target_k: 64,
            bend_amplitude: (0.0, 0.05),
            bend_frequency: (0.5, 2.0),
            smoothing_sigma: (0.0, 3.0),
            radius_noise_sigma: (0.0, 0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub twins: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            twins: Vec::new(),
            out_dir: PathBuf::from("graphs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HemoConfig {
    pub twins: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Fixed flow (cm³/s); absent draws per twin from `flow_range`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<f64>,
    pub flow_range: (f64, f64),
    pub inlet_pressure_mmhg: f64,
    pub rho: f64,
    pub mu: f64,
    pub zeta: f64,
    pub kt: f64,
}

impl Default for HemoConfig {
    fn default() -> Self {
        let c = arteria::hemo::HemoConstants::default();
        Self {
            twins: Vec::new(),
            out_dir: PathBuf::from("hemo"),
            flow: None,
            flow_range: (0.5, 3.0),
            inlet_pressure_mmhg: 100.0,
            rho: c.rho,
            mu: c.mu,
            zeta: c.zeta,
            kt: c.kt,
        }
    }
}

impl HemoConfig {
    pub fn constants(&self) -> arteria::hemo::HemoConstants {
        arteria::hemo::HemoConstants {
            rho: self.rho,
            mu: self.mu,
            zeta: self.zeta,
            kt: self.kt,
        }
    }

    pub fn inlet_pressure(&self) -> f64 {
        self.inlet_pressure_mmhg * MMHG
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub twin_dir: PathBuf,
    pub out_dir: PathBuf,
    pub d: usize,
    pub k_ca: usize,
    pub n_centerline: usize,
    pub pressure_scale_mmhg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub epsilon: f64,
    pub k_end: usize,
    pub window: usize,
    pub stride: usize,
    pub weights: (f64, f64, f64),
    pub flow_floor: f64,
    pub rho: f64,
    pub mu: f64,
    pub zeta: f64,
    pub kt: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let c = arteria::hemo::HemoConstants::default();
        let l = arteria::loss::LossConfig::default();
        Self {
            twin_dir: PathBuf::from("twins"),
            out_dir: PathBuf::from("pretrain"),
            d: 64,
            k_ca: 8,
            n_centerline: 500,
            pressure_scale_mmhg: 100.0,
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            grad_clip: 1.0,
            epsilon: l.epsilon,
            k_end: l.k_end,
            window: l.window,
            stride: l.stride,
            weights: (1e-8, 1.0, 1.0),
            flow_floor: 1e-3,
            rho: c.rho,
            mu: c.mu,
            zeta: c.zeta,
            kt: c.kt,
        }
    }
}

impl PretrainConfig {
    pub fn encoder_config(&self, seed: u64) -> arteria::nn::EncoderConfig {
        arteria::nn::EncoderConfig {
            d: self.d,
            k_ca: self.k_ca,
            n_centerline: self.n_centerline,
            pressure_scale: self.pressure_scale_mmhg * MMHG,
            seed,
            ..Default::default()
        }
    }

    pub fn loss_config(&self) -> arteria::loss::LossConfig {
        arteria::loss::LossConfig {
            epsilon: self.epsilon,
            k_end: self.k_end,
            window: self.window,
            stride: self.stride,
            weights: self.weights,
            flow_floor: self.flow_floor,
            ..Default::default()
        }
    }

    pub fn constants(&self) -> arteria::hemo::HemoConstants {
        arteria::hemo::HemoConstants {
            rho: self.rho,
            mu: self.mu,
            zeta: self.zeta,
            kt: self.kt,
        }
    }

    pub fn optim(&self, seed: u64) -> arteria::nn::OptimConfig {
        arteria::nn::OptimConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            grad_clip: self.grad_clip,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub checkpoint: PathBuf,
    /// CSV with header `path,label`; label is 0 or 1.
    pub labels: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("pretrain/checkpoint.json"),
            labels: PathBuf::from("labels.csv"),
            out_dir: PathBuf::from("finetune"),
            epochs: 2000,
            learning_rate: 0.3,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// CSV with header `path,probability,label`.
    pub predictions: PathBuf,
    pub out_dir: PathBuf,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            predictions: PathBuf::from("finetune/predictions.csv"),
            out_dir: PathBuf::from("eval"),
            threshold: 0.5,
        }
    }
}

/// Expands twin path entries: directories become their sorted `*.json`
/// contents.
pub fn expand_twin_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no twin files found");
    }
    Ok(out)
}
