//! Ticket pipelines: the GAN training loop, iterative magnitude pruning
//! in its discriminator treatments, one-shot and standard pruning,
//! random baselines, rewinding, and cross-dataset transfer.

mod imp;
pub(crate) mod losses;
mod train;

pub use imp::{
    run_imp, run_one_shot, run_one_shot_sweep, run_standard_pruning, run_transfer, ImpRunner,
    OneShotRunner, RoundData, TransferRegime, TransferSource,
};
pub use losses::kd_loss;
pub use train::{evaluate_generator, train_gan, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::DatasetSpec;
use crate::models::{
    init_discriminator, init_generator, DiscConfig, GenConfig, ParamSet,
};
use crate::pruning::{Mask, PruneError};
use crate::rng::{mix, RngState};
use crate::tensor::{AdamHyper, TensorError};

pub const STREAM_TRAIN: u64 = 0x545249;
pub const STREAM_EVAL: u64 = 0x4556;
pub const STREAM_THETA_PRIME: u64 = 0x5450;
pub const STREAM_RANDOM_PRUNE: u64 = 0x5250;
pub const STREAM_TRANSFER_FRESH: u64 = 0x5446;
/// Stream tag for the record retraining of a random ticket, distinct
/// from the mask-finding chain it shadows.
pub const STREAM_RT_RECORD: u64 = 0x5254;

#[derive(Debug, Error)]
pub enum TicketError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },
    #[error("no snapshot recorded at step {step}")]
    MissingSnapshot { step: u64 },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TicketError>;

/// Which pruning pipeline produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketMode {
    /// Iteratively prune and reset the generator.
    ImpG,
    /// Iteratively prune and reset generator and discriminator.
    ImpGd,
    /// Prune and reset the generator, prune nothing and keep (fine-tune)
    /// the discriminator.
    ImpGF,
    /// As ImpGd, with the dense trained discriminator as a KD teacher.
    ImpGdKd,
    OmpG,
    OmpGd,
    /// Iteratively random-prune the generator, reset to the same init.
    RandomPrune,
    /// IMP generator masks retrained from a fresh initialization.
    RandomTicket,
    /// Iterative prune-and-continue without any reset.
    Standard,
}

impl TicketMode {
    pub fn label(&self) -> &'static str {
        match self {
            TicketMode::ImpG => "imp_g",
            TicketMode::ImpGd => "imp_gd",
            TicketMode::ImpGF => "imp_g_f",
            TicketMode::ImpGdKd => "imp_gd_kd",
            TicketMode::OmpG => "omp_g",
            TicketMode::OmpGd => "omp_gd",
            TicketMode::RandomPrune => "random_prune",
            TicketMode::RandomTicket => "random_ticket",
            TicketMode::Standard => "standard",
        }
    }

    pub fn from_label(s: &str) -> Option<TicketMode> {
        Some(match s {
            "imp_g" => TicketMode::ImpG,
            "imp_gd" => TicketMode::ImpGd,
            "imp_g_f" => TicketMode::ImpGF,
            "imp_gd_kd" => TicketMode::ImpGdKd,
            "omp_g" => TicketMode::OmpG,
            "omp_gd" => TicketMode::OmpGd,
            "random_prune" => TicketMode::RandomPrune,
            "random_ticket" => TicketMode::RandomTicket,
            "standard" => TicketMode::Standard,
            _ => return None,
        })
    }

    pub fn prunes_disc(&self) -> bool {
        matches!(
            self,
            TicketMode::ImpGd | TicketMode::ImpGdKd | TicketMode::OmpGd
        )
    }

    pub fn one_shot(&self) -> bool {
        matches!(self, TicketMode::OmpG | TicketMode::OmpGd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    Hinge,
    NonSaturating,
}

/// Learning-rate schedule over the step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    None,
    /// Linear decay to zero across the budget, the SNGAN convention.
    /// Settles the adversarial oscillation so final scores are stable.
    Linear,
}

impl LrDecay {
    pub fn lr_at(&self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            LrDecay::None => base,
            LrDecay::Linear => base * (1.0 - step as f64 / total as f64),
        }
    }
}

/// One training run's knobs; the step budget is shared by the full model
/// and every retrained subnetwork.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub dataset: DatasetSpec,
    pub seed: u64,
    /// Snapshot step the ticket is rewound to; 0 gives winning tickets.
    pub rewind_step: u64,
    pub loss: GanLoss,
    pub kd_weight: f64,
    pub eval_samples: usize,
    /// Score every this many steps (0 = final evaluation only).
    pub eval_every: u64,
    pub optim: AdamHyper,
    pub lr_decay: LrDecay,
    /// Rank generator and discriminator weights in one shared pool when
    /// pruning both; off ranks each network separately.
    pub pooled_ranking: bool,
    pub gen: GenConfig,
    pub disc: DiscConfig,
}

impl TrainConfig {
    pub fn desk_scale(dataset: DatasetSpec, seed: u64) -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 64,
            dataset,
            seed,
            rewind_step: 0,
            loss: GanLoss::Hinge,
            kd_weight: 1.0,
            eval_samples: 10_000,
            eval_every: 0,
            optim: AdamHyper::default(),
            lr_decay: LrDecay::Linear,
            pooled_ranking: false,
            gen: GenConfig::desk_scale(),
            disc: DiscConfig::desk_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(TicketError::Contract("steps must be positive".into()));
        }
        if self.rewind_step >= self.steps {
            return Err(TicketError::Contract(format!(
                "rewind_step {} must be below steps {}",
                self.rewind_step, self.steps
            )));
        }
        if self.batch_size < 2 {
            return Err(TicketError::Contract("batch_size must be at least 2".into()));
        }
        self.dataset
            .validate()
            .map_err(|e| TicketError::Contract(e.to_string()))?;
        Ok(())
    }

    /// Snapshot steps: 0, 5%, 10%, 20% and 100% of the budget, plus the
    /// configured rewind step.
    pub fn snapshot_steps(&self) -> Vec<u64> {
        let n = self.steps;
        let mut steps = vec![0, n / 20, n / 10, n / 5, n, self.rewind_step];
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub gen: ParamSet,
    pub disc: ParamSet,
}

impl GanPair {
    /// Deterministic initialization of both networks from one seed.
    pub fn init(gen: &GenConfig, disc: &DiscConfig, seed: u64) -> GanPair {
        GanPair {
            gen: init_generator(gen, seed),
            disc: init_discriminator(disc, seed),
        }
    }

    pub fn bits_eq(&self, other: &GanPair) -> bool {
        self.gen.bits_eq(&other.gen) && self.disc.bits_eq(&other.disc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub gen: Mask,
    pub disc: Mask,
}

impl MaskPair {
    pub fn all_ones(pair: &GanPair) -> MaskPair {
        MaskPair {
            gen: Mask::all_ones(&pair.gen),
            disc: Mask::all_ones(&pair.disc),
        }
    }
}

/// Deep copy of both networks at a training step, with the training
/// stream's RNG state.
#[derive(Debug, Clone)]
pub struct SnapshotPair {
    pub step: u64,
    pub gen: ParamSet,
    pub disc: ParamSet,
    pub rng: RngState,
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotStore {
    pub snaps: Vec<SnapshotPair>,
}

impl SnapshotStore {
    pub fn at(&self, step: u64) -> Option<&SnapshotPair> {
        self.snaps.iter().find(|s| s.step == step)
    }

    pub fn steps(&self) -> Vec<u64> {
        self.snaps.iter().map(|s| s.step).collect()
    }
}

/// `mask ⊙ θ_i`: the snapshot at `step`, masked. Surviving positions are
/// bit-identical to the snapshot.
pub fn rewind(store: &SnapshotStore, step: u64, masks: &MaskPair) -> Result<GanPair> {
    let snap = store
        .at(step)
        .ok_or(TicketError::MissingSnapshot { step })?;
    Ok(GanPair {
        gen: crate::pruning::apply_mask(&snap.gen, &masks.gen)?,
        disc: crate::pruning::apply_mask(&snap.disc, &masks.disc)?,
    })
}

/// Where the weights entering a retraining run came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InitRegime {
    /// The original initialization.
    #[serde(rename = "theta_0")]
    Theta0,
    /// A fresh initialization (random tickets, transfer theta_r).
    #[serde(rename = "theta_0_prime")]
    ThetaPrime,
    /// Weights after `step` steps of the dense training run.
    #[serde(rename = "theta_i")]
    ThetaI { step: u64 },
    /// Final trained weights (standard pruning, transfer theta_best).
    #[serde(rename = "theta_best")]
    ThetaBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub score: f64,
}

/// One point on a score-vs-sparsity curve: mask sparsity, init regime,
/// retrained score, and (once the run is finalized) a matching verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketRecord {
    pub mode: String,
    pub round: u32,
    pub dataset: String,
    pub seed: u64,
    pub gen_sparsity: f64,
    pub disc_sparsity: f64,
    pub init_regime: InitRegime,
    /// Final score; absent when the round diverged.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
    /// MAC ratio of the structurally pruned generator (channel tickets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_ratio: Option<f64>,
    pub matching: Option<bool>,
}

impl TicketRecord {
    /// Sparsity coordinate on a curve: mask sparsity for unstructured
    /// records, `1 - FLOPs ratio` for structured ones.
    pub fn sparsity_coordinate(&self) -> f64 {
        match self.flops_ratio {
            Some(r) => 1.0 - r,
            None => self.gen_sparsity,
        }
    }

    pub fn failed(&self) -> bool {
        self.score.is_none()
    }
}

/// Seed for the fresh initialization used by random tickets.
pub fn theta_prime_seed(seed: u64) -> u64 {
    mix(&[seed, STREAM_THETA_PRIME])
}
