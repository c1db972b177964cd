//! Experiment configuration: a TOML file with one table per concern.
//! Unknown keys are rejected, and validation errors carry the offending
//! field. The grammar is documented in the repository README.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelPruneConfig, DistFlavor};
use crate::datasets::{builtin, DatasetKind, DatasetSpec};
use crate::models::{Activation, DiscConfig, GenConfig};
use crate::tensor::AdamHyper;
use crate::tickets::{GanLoss, LrDecay, TicketMode, TrainConfig, TransferRegime};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {detail}")]
    Field { field: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn field_err(field: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// A ticket mode label, `channel`, or `transfer`.
    pub mode: String,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tol")]
    pub tol_factor: f64,
}

fn default_rounds() -> u32 {
    3
}

fn default_tol() -> f64 {
    1.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub dataset: String,
    pub rewind_step: u64,
    /// Alternative to `rewind_step`: fraction of the step budget.
    pub rewind_fraction: Option<f64>,
    pub loss: String,
    pub kd_weight: f64,
    pub eval_samples: usize,
    pub eval_every: u64,
    pub pooled_ranking: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr_decay: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let optim = AdamHyper::default();
        TrainSection {
            steps: 20_000,
            batch_size: 64,
            dataset: "ring8".into(),
            rewind_step: 0,
            rewind_fraction: None,
            loss: "hinge".into(),
            kd_weight: 1.0,
            eval_samples: 10_000,
            eval_every: 0,
            pooled_ranking: false,
            lr: optim.lr,
            beta1: optim.beta1,
            beta2: optim.beta2,
            lr_decay: "linear".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub activation: String,
    pub gen_norm: bool,
    /// Defaults on for channel mode, off otherwise.
    pub disc_norm: Option<bool>,
    pub spectral_norm: bool,
    pub power_iters: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 8,
            gen_hidden: vec![64, 64, 64],
            disc_hidden: vec![64, 64, 64],
            activation: "relu".into(),
            gen_norm: true,
            disc_norm: None,
            spectral_norm: true,
            power_iters: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDef {
    pub kind: String,
    pub radius: f64,
    pub components: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub rho_sweep: Vec<f64>,
    pub eta: f64,
    pub l1_weight: f64,
    pub dist_weight: f64,
    pub search_steps: u64,
    pub dist: String,
    pub mask_during_search: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let cp = ChannelPruneConfig::default();
        ChannelSection {
            rho_sweep: vec![0.01, 0.05, 0.1, 0.2],
            eta: cp.eta,
            l1_weight: cp.l1_weight,
            dist_weight: cp.dist_weight,
            search_steps: cp.search_steps,
            dist: "mse".into(),
            mask_during_search: cp.mask_during_search,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    /// Name of a completed run under the same archive root.
    pub source_run: String,
    /// `theta_0`, `theta_r` or `theta_best`.
    pub regime: String,
    /// Source rounds to transfer; all of them when absent.
    #[serde(default)]
    pub rounds: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetDef>,
    #[serde(default)]
    pub channel: Option<ChannelSection>,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    Ticket(TicketMode),
    Channel,
    Transfer,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_mode(&self) -> Result<RunMode> {
        match self.experiment.mode.as_str() {
            "channel" => Ok(RunMode::Channel),
            "transfer" => Ok(RunMode::Transfer),
            label => TicketMode::from_label(label).map(RunMode::Ticket).ok_or_else(|| {
                field_err(
                    "experiment.mode",
                    format!(
                        "unknown mode `{label}` (ticket modes, `channel`, or `transfer`)"
                    ),
                )
            }),
        }
    }

    pub fn dataset_spec(&self, id: &str) -> Result<DatasetSpec> {
        if let Some(def) = self.datasets.get(id) {
            let kind: DatasetKind = def
                .kind
                .parse()
                .map_err(|e: crate::datasets::DatasetError| {
                    field_err("datasets.kind", e.to_string())
                })?;
            let spec = DatasetSpec {
                id: id.to_string(),
                kind,
                radius: def.radius,
                components: def.components,
                noise: def.noise,
                seed: def.seed,
            };
            spec.validate()
                .map_err(|e| field_err("datasets", e.to_string()))?;
            return Ok(spec);
        }
        builtin(id).ok_or_else(|| {
            field_err(
                "train.dataset",
                format!("unknown dataset id `{id}` (not built in, not defined in [datasets])"),
            )
        })
    }

    fn activation(&self) -> Result<Activation> {
        match self.model.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(field_err(
                "model.activation",
                format!("unknown activation `{other}` (relu | tanh)"),
            )),
        }
    }

    fn lr_decay(&self) -> Result<LrDecay> {
        match self.train.lr_decay.as_str() {
            "none" => Ok(LrDecay::None),
            "linear" => Ok(LrDecay::Linear),
            other => Err(field_err(
                "train.lr_decay",
                format!("unknown decay `{other}` (none | linear)"),
            )),
        }
    }

    fn loss(&self) -> Result<GanLoss> {
        match self.train.loss.as_str() {
            "hinge" => Ok(GanLoss::Hinge),
            "non_saturating" => Ok(GanLoss::NonSaturating),
            other => Err(field_err(
                "train.loss",
                format!("unknown loss `{other}` (hinge | non_saturating)"),
            )),
        }
    }

    pub fn rewind_step(&self) -> u64 {
        match self.train.rewind_fraction {
            Some(f) => (f * self.train.steps as f64).round() as u64,
            None => self.train.rewind_step,
        }
    }

    /// Fully resolved per-seed training configuration.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let dataset = self.dataset_spec(&self.train.dataset)?;
        let activation = self.activation()?;
        let disc_norm = self
            .model
            .disc_norm
            .unwrap_or(matches!(self.run_mode()?, RunMode::Channel));
        let cfg = TrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            dataset,
            seed,
            rewind_step: self.rewind_step(),
            loss: self.loss()?,
            kd_weight: self.train.kd_weight,
            eval_samples: self.train.eval_samples,
            eval_every: self.train.eval_every,
            optim: AdamHyper {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                ..AdamHyper::default()
            },
            lr_decay: self.lr_decay()?,
            pooled_ranking: self.train.pooled_ranking,
            gen: GenConfig {
                latent_dim: self.model.latent_dim,
                hidden: self.model.gen_hidden.clone(),
                out_dim: 2,
                activation,
                norm: self.model.gen_norm,
            },
            disc: DiscConfig {
                in_dim: 2,
                hidden: self.model.disc_hidden.clone(),
                activation,
                spectral_norm: self.model.spectral_norm,
                norm: disc_norm,
                power_iters: self.model.power_iters,
            },
        };
        cfg.validate()
            .map_err(|e| field_err("train", e.to_string()))?;
        Ok(cfg)
    }

    pub fn channel_section(&self) -> ChannelSection {
        self.channel.clone().unwrap_or_default()
    }

    pub fn channel_config(&self, rho: f64) -> Result<ChannelPruneConfig> {
        let c = self.channel_section();
        let dist = match c.dist.as_str() {
            "mse" => DistFlavor::Mse,
            "mae" => DistFlavor::Mae,
            other => {
                return Err(field_err(
                    "channel.dist",
                    format!("unknown distance `{other}` (mse | mae)"),
                ))
            }
        };
        Ok(ChannelPruneConfig {
            rho,
            eta: c.eta,
            l1_weight: c.l1_weight,
            dist_weight: c.dist_weight,
            search_steps: c.search_steps,
            dist,
            mask_during_search: c.mask_during_search,
        })
    }

    pub fn transfer_regime(&self) -> Result<TransferRegime> {
        let t = self
            .transfer
            .as_ref()
            .ok_or_else(|| field_err("transfer", "transfer mode needs a [transfer] table"))?;
        TransferRegime::from_label(&t.regime).ok_or_else(|| {
            field_err(
                "transfer.regime",
                format!(
                    "unknown regime `{}` (theta_0 | theta_r | theta_best)",
                    t.regime
                ),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.name.is_empty()
            || self
                .experiment
                .name
                .contains(|c: char| c == '/' || c == '\\' || c.is_whitespace())
        {
            return Err(field_err(
                "experiment.name",
                "must be a non-empty path-safe token",
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(field_err("experiment.seeds", "seed list must be non-empty"));
        }
        if self.experiment.tol_factor < 1.0 {
            return Err(field_err(
                "experiment.tol_factor",
                "tolerance factor below 1 rejects the full model itself",
            ));
        }
        let mode = self.run_mode()?;
        if let Some(f) = self.train.rewind_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(field_err("train.rewind_fraction", "must lie in [0, 1)"));
            }
        }
        if self.rewind_step() >= self.train.steps {
            return Err(field_err(
                "train.rewind_step",
                format!(
                    "rewind step {} must be below steps {}",
                    self.rewind_step(),
                    self.train.steps
                ),
            ));
        }
        // Resolves dataset, activation, loss; surfaces their errors.
        self.train_config(self.experiment.seeds[0])?;
        match mode {
            RunMode::Channel => {
                let c = self.channel_section();
                if c.rho_sweep.is_empty() {
                    return Err(field_err("channel.rho_sweep", "needs at least one rho"));
                }
                self.channel_config(c.rho_sweep[0])?;
            }
            RunMode::Transfer => {
                self.transfer_regime()?;
            }
            RunMode::Ticket(_) => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
name = "impg"
mode = "imp_g"
seeds = [1, 2]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.rounds, 3);
        assert_eq!(cfg.train.steps, 20_000);
        let tc = cfg.train_config(1).unwrap();
        assert_eq!(tc.gen.hidden, vec![64, 64, 64]);
        assert_eq!(tc.dataset.id, "ring8");
        assert!(matches!(cfg.run_mode().unwrap(), RunMode::Ticket(TicketMode::ImpG)));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = format!("{MINIMAL}\n[train]\nbogus_field = 3\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn unknown_mode_names_the_field() {
        let text = MINIMAL.replace("imp_g", "imp_x");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("experiment.mode"), "{err}");
    }

    #[test]
    fn empty_seeds_rejected() {
        let text = MINIMAL.replace("[1, 2]", "[]");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("experiment.seeds"));
    }

    #[test]
    fn custom_dataset_resolves() {
        let text = format!(
            "{MINIMAL}\n[datasets.myring]\nkind = \"ring\"\nradius = 2.0\ncomponents = 4\nnoise = 0.1\nseed = 5\n\n[train]\ndataset = \"myring\"\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let spec = cfg.dataset_spec("myring").unwrap();
        assert_eq!(spec.components, 4);
        assert_eq!(cfg.train_config(1).unwrap().dataset.id, "myring");
    }

    #[test]
    fn rewind_fraction_resolves_to_steps() {
        let text = format!("{MINIMAL}\n[train]\nsteps = 1000\nrewind_fraction = 0.05\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.rewind_step(), 50);
    }

    #[test]
    fn channel_mode_defaults_disc_norm_on() {
        let text = MINIMAL.replace("imp_g", "channel");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(cfg.train_config(1).unwrap().disc.norm);
        let ticket = ExperimentConfig::parse(MINIMAL).unwrap();
        assert!(!ticket.train_config(1).unwrap().disc.norm);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
