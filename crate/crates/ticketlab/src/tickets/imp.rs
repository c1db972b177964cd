//! Round-by-round orchestration of the pruning pipelines.
//!
//! `ImpRunner` is a resumable stepper: `train_round` trains the current
//! round from the runner's state and `advance` folds the result back in
//! (building the next masks and the next starting weights). Restoring a
//! partially completed run replays `advance` over the persisted rounds;
//! no training is repeated.

use crate::pruning::{
    global_magnitude_mask, global_magnitude_mask_pooled, random_mask, schedule_sparsity,
};
use crate::rng::mix;

use super::train::{train_gan, TrainOutcome};
use super::{
    theta_prime_seed, GanPair, InitRegime, MaskPair, Result, SnapshotStore, TicketError,
    TicketMode, TicketRecord, TrainConfig, STREAM_RANDOM_PRUNE, STREAM_RT_RECORD,
};

/// Everything one round produces: the record, the masks it used, the
/// trained weights, and the training snapshots.
#[derive(Debug, Clone)]
pub struct RoundData {
    pub round: u32,
    pub masks: MaskPair,
    pub record: TicketRecord,
    /// Trained weights of the record training; absent when it diverged.
    pub final_params: Option<GanPair>,
    /// Trained weights of the mask-finding chain when it is a separate
    /// run (random tickets); `None` means identical to `final_params`.
    pub chain_params: Option<GanPair>,
    pub snapshots: SnapshotStore,
}

impl RoundData {
    /// Weights the next round's masks are derived from.
    pub fn chain_result(&self) -> Option<&GanPair> {
        self.chain_params.as_ref().or(self.final_params.as_ref())
    }
}

pub struct ImpRunner {
    mode: TicketMode,
    cfg: TrainConfig,
    round: u32,
    masks: MaskPair,
    next_start: GanPair,
    chain_next_start: GanPair,
    theta_prime: Option<GanPair>,
    rewind_params: Option<GanPair>,
    kd_teacher: Option<crate::models::ParamSet>,
    failed: bool,
}

impl ImpRunner {
    pub fn new(mode: TicketMode, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if mode.one_shot() {
            return Err(TicketError::Contract(
                "one-shot modes run through run_one_shot".into(),
            ));
        }
        let theta0 = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);
        let masks = MaskPair::all_ones(&theta0);
        let theta_prime = if mode == TicketMode::RandomTicket {
            Some(GanPair::init(&cfg.gen, &cfg.disc, theta_prime_seed(cfg.seed)))
        } else {
            None
        };
        Ok(ImpRunner {
            mode,
            cfg,
            round: 0,
            next_start: theta0.clone(),
            chain_next_start: theta0,
            masks,
            theta_prime,
            rewind_params: None,
            kd_teacher: None,
            failed: false,
        })
    }

    pub fn round_index(&self) -> u32 {
        self.round
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn mode(&self) -> TicketMode {
        self.mode
    }

    fn regime(&self, round: u32) -> InitRegime {
        if round == 0 {
            return InitRegime::Theta0;
        }
        match self.mode {
            TicketMode::RandomTicket => InitRegime::ThetaPrime,
            TicketMode::Standard => InitRegime::ThetaBest,
            _ => {
                if self.cfg.rewind_step == 0 {
                    InitRegime::Theta0
                } else {
                    InitRegime::ThetaI {
                        step: self.cfg.rewind_step,
                    }
                }
            }
        }
    }

    fn make_record(&self, round: u32, outcome: Option<&TrainOutcome>) -> TicketRecord {
        TicketRecord {
            mode: self.mode.label().to_string(),
            round,
            dataset: self.cfg.dataset.id.clone(),
            seed: self.cfg.seed,
            gen_sparsity: self.masks.gen.sparsity(),
            disc_sparsity: self.masks.disc.sparsity(),
            init_regime: self.regime(round),
            score: outcome.map(|o| o.score),
            trace: outcome.map(|o| o.trace.clone()).unwrap_or_default(),
            flops_ratio: None,
            matching: None,
        }
    }

    /// Trains the current round. Divergence is not an error: it yields a
    /// failed record with no trained weights.
    pub fn train_round(&self) -> Result<RoundData> {
        if self.failed {
            return Err(TicketError::Contract(
                "run already failed; no further rounds".into(),
            ));
        }
        let round = self.round;
        let kd = if self.mode == TicketMode::ImpGdKd && round > 0 {
            self.kd_teacher.as_ref()
        } else {
            None
        };

        if self.mode == TicketMode::RandomTicket && round > 0 {
            // Mask-finding chain retrains from the original init; the
            // record pairs the same mask with the fresh init.
            let chain = run_tolerating_divergence(
                &self.chain_next_start,
                &self.masks,
                &self.cfg,
                round as u64,
                None,
            )?;
            let record_out = match &chain {
                Some(_) => run_tolerating_divergence(
                    &self.next_start,
                    &self.masks,
                    &self.cfg,
                    mix(&[round as u64, STREAM_RT_RECORD]),
                    None,
                )?,
                None => None,
            };
            let failed = chain.is_none() || record_out.is_none();
            let record = self.make_record(round, record_out.as_ref().filter(|_| !failed));
            Ok(RoundData {
                round,
                masks: self.masks.clone(),
                record,
                final_params: record_out.as_ref().map(|o| o.params.clone()),
                chain_params: chain.map(|o| o.params),
                snapshots: record_out.map(|o| o.snapshots).unwrap_or_default(),
            })
        } else {
            let out = run_tolerating_divergence(
                &self.next_start,
                &self.masks,
                &self.cfg,
                round as u64,
                kd,
            )?;
            let record = self.make_record(round, out.as_ref());
            Ok(RoundData {
                round,
                masks: self.masks.clone(),
                record,
                final_params: out.as_ref().map(|o| o.params.clone()),
                chain_params: None,
                snapshots: out.map(|o| o.snapshots).unwrap_or_default(),
            })
        }
    }

    /// Folds a completed round into the runner state: records the rewind
    /// source and KD teacher after the dense round, then derives the
    /// next masks and starting weights.
    pub fn advance(&mut self, data: &RoundData) -> Result<()> {
        if data.round != self.round {
            return Err(TicketError::Contract(format!(
                "advance out of order: got round {}, expected {}",
                data.round, self.round
            )));
        }
        if data.record.failed() {
            self.failed = true;
            return Ok(());
        }
        let trained = data
            .chain_result()
            .ok_or_else(|| TicketError::Contract("round has no trained weights".into()))?;

        if self.round == 0 {
            let snap = data
                .snapshots
                .at(self.cfg.rewind_step)
                .ok_or(TicketError::MissingSnapshot {
                    step: self.cfg.rewind_step,
                })?;
            self.rewind_params = Some(GanPair {
                gen: snap.gen.clone(),
                disc: snap.disc.clone(),
            });
            if self.mode == TicketMode::ImpGdKd {
                let dense = data
                    .final_params
                    .as_ref()
                    .ok_or_else(|| TicketError::Contract("dense round has no final weights".into()))?;
                self.kd_teacher = Some(dense.disc.clone());
            }
        }

        let target = schedule_sparsity(self.round + 1);
        match self.mode {
            TicketMode::ImpG | TicketMode::ImpGF | TicketMode::RandomTicket | TicketMode::Standard => {
                self.masks.gen = global_magnitude_mask(&trained.gen, &self.masks.gen, target)?;
            }
            TicketMode::ImpGd | TicketMode::ImpGdKd => {
                if self.cfg.pooled_ranking {
                    let pooled = global_magnitude_mask_pooled(
                        &[(&trained.gen, &self.masks.gen), (&trained.disc, &self.masks.disc)],
                        target,
                    )?;
                    let mut it = pooled.into_iter();
                    self.masks.gen = it.next().expect("two masks");
                    self.masks.disc = it.next().expect("two masks");
                } else {
                    self.masks.gen = global_magnitude_mask(&trained.gen, &self.masks.gen, target)?;
                    self.masks.disc =
                        global_magnitude_mask(&trained.disc, &self.masks.disc, target)?;
                }
            }
            TicketMode::RandomPrune => {
                let seed = mix(&[self.cfg.seed, STREAM_RANDOM_PRUNE, (self.round + 1) as u64]);
                self.masks.gen = random_mask(&trained.gen, Some(&self.masks.gen), target, seed)?;
            }
            TicketMode::OmpG | TicketMode::OmpGd => unreachable!("one-shot handled elsewhere"),
        }

        let rewind = self
            .rewind_params
            .clone()
            .expect("rewind source set after round 0");
        match self.mode {
            TicketMode::ImpG
            | TicketMode::ImpGd
            | TicketMode::ImpGdKd
            | TicketMode::RandomPrune => {
                self.next_start = rewind.clone();
                self.chain_next_start = rewind;
            }
            TicketMode::ImpGF => {
                let start = GanPair {
                    gen: rewind.gen,
                    disc: trained.disc.clone(),
                };
                self.next_start = start.clone();
                self.chain_next_start = start;
            }
            TicketMode::RandomTicket => {
                self.chain_next_start = rewind;
                self.next_start = self.theta_prime.clone().expect("random-ticket init");
            }
            TicketMode::Standard => {
                self.next_start = trained.clone();
                self.chain_next_start = trained.clone();
            }
            TicketMode::OmpG | TicketMode::OmpGd => unreachable!(),
        }
        self.round += 1;
        Ok(())
    }
}

fn run_tolerating_divergence(
    start: &GanPair,
    masks: &MaskPair,
    cfg: &TrainConfig,
    stream_tag: u64,
    kd: Option<&crate::models::ParamSet>,
) -> Result<Option<TrainOutcome>> {
    match train_gan(start, masks, cfg, stream_tag, kd) {
        Ok(out) => Ok(Some(out)),
        Err(TicketError::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs `rounds` pruning rounds after the dense round 0; stops early on
/// a diverged round, which is recorded as failed.
pub fn run_imp(mode: TicketMode, cfg: &TrainConfig, rounds: u32) -> Result<Vec<RoundData>> {
    let mut runner = ImpRunner::new(mode, cfg.clone())?;
    let mut out = Vec::with_capacity(rounds as usize + 1);
    for _ in 0..=rounds {
        let data = runner.train_round()?;
        runner.advance(&data)?;
        let failed = data.record.failed();
        out.push(data);
        if failed {
            break;
        }
    }
    Ok(out)
}

/// Standard pruning: iterative magnitude pruning with continued training
/// and no weight reset.
pub fn run_standard_pruning(cfg: &TrainConfig, rounds: u32) -> Result<Vec<RoundData>> {
    run_imp(TicketMode::Standard, cfg, rounds)
}

/// One-shot pruning: one dense run, then direct pruning to each target
/// sparsity with reset (or rewind) and retraining. Every ticket round
/// depends only on the dense round, so completed rounds restore cheaply.
pub struct OneShotRunner {
    mode: TicketMode,
    cfg: TrainConfig,
    dense_trained: Option<GanPair>,
    start: Option<GanPair>,
}

impl OneShotRunner {
    pub fn new(mode: TicketMode, cfg: TrainConfig) -> Result<Self> {
        if !mode.one_shot() {
            return Err(TicketError::Contract(format!(
                "mode {} is not one-shot",
                mode.label()
            )));
        }
        cfg.validate()?;
        Ok(OneShotRunner {
            mode,
            cfg,
            dense_trained: None,
            start: None,
        })
    }

    pub fn dense_round(&self) -> Result<RoundData> {
        let theta0 = GanPair::init(&self.cfg.gen, &self.cfg.disc, self.cfg.seed);
        let ones = MaskPair::all_ones(&theta0);
        let dense = run_tolerating_divergence(&theta0, &ones, &self.cfg, 0, None)?;
        let record = TicketRecord {
            mode: self.mode.label().to_string(),
            round: 0,
            dataset: self.cfg.dataset.id.clone(),
            seed: self.cfg.seed,
            gen_sparsity: 0.0,
            disc_sparsity: 0.0,
            init_regime: InitRegime::Theta0,
            score: dense.as_ref().map(|o| o.score),
            trace: dense.as_ref().map(|o| o.trace.clone()).unwrap_or_default(),
            flops_ratio: None,
            matching: None,
        };
        Ok(RoundData {
            round: 0,
            masks: ones,
            record,
            final_params: dense.as_ref().map(|o| o.params.clone()),
            chain_params: None,
            snapshots: dense.map(|o| o.snapshots).unwrap_or_default(),
        })
    }

    /// Folds a dense round (fresh or restored) into the runner.
    pub fn absorb_dense(&mut self, data: &RoundData) -> Result<()> {
        if data.record.failed() {
            return Ok(());
        }
        let trained = data
            .final_params
            .as_ref()
            .ok_or_else(|| TicketError::Contract("dense round has no weights".into()))?;
        let snap = data
            .snapshots
            .at(self.cfg.rewind_step)
            .ok_or(TicketError::MissingSnapshot {
                step: self.cfg.rewind_step,
            })?;
        self.dense_trained = Some(trained.clone());
        self.start = Some(GanPair {
            gen: snap.gen.clone(),
            disc: snap.disc.clone(),
        });
        Ok(())
    }

    pub fn dense_absorbed(&self) -> bool {
        self.dense_trained.is_some()
    }

    pub fn ticket_round(&self, round: u32, target: f64) -> Result<RoundData> {
        let dense = self
            .dense_trained
            .as_ref()
            .ok_or_else(|| TicketError::Contract("dense round not absorbed yet".into()))?;
        let start = self.start.as_ref().expect("set with dense_trained");
        let ones = MaskPair::all_ones(dense);
        let mut masks = ones.clone();
        masks.gen = global_magnitude_mask(&dense.gen, &ones.gen, target)?;
        if self.mode.prunes_disc() {
            if self.cfg.pooled_ranking {
                let pooled = global_magnitude_mask_pooled(
                    &[(&dense.gen, &ones.gen), (&dense.disc, &ones.disc)],
                    target,
                )?;
                let mut it = pooled.into_iter();
                masks.gen = it.next().expect("two masks");
                masks.disc = it.next().expect("two masks");
            } else {
                masks.disc = global_magnitude_mask(&dense.disc, &ones.disc, target)?;
            }
        }
        let outcome =
            run_tolerating_divergence(start, &masks, &self.cfg, round as u64, None)?;
        let regime = if self.cfg.rewind_step == 0 {
            InitRegime::Theta0
        } else {
            InitRegime::ThetaI {
                step: self.cfg.rewind_step,
            }
        };
        let record = TicketRecord {
            mode: self.mode.label().to_string(),
            round,
            dataset: self.cfg.dataset.id.clone(),
            seed: self.cfg.seed,
            gen_sparsity: masks.gen.sparsity(),
            disc_sparsity: masks.disc.sparsity(),
            init_regime: regime,
            score: outcome.as_ref().map(|o| o.score),
            trace: outcome.as_ref().map(|o| o.trace.clone()).unwrap_or_default(),
            flops_ratio: None,
            matching: None,
        };
        Ok(RoundData {
            round,
            masks,
            record,
            final_params: outcome.as_ref().map(|o| o.params.clone()),
            chain_params: None,
            snapshots: outcome.map(|o| o.snapshots).unwrap_or_default(),
        })
    }
}

/// One dense run, then direct pruning to each target sparsity with reset
/// (or rewind) and retraining. Round 0 is the dense baseline.
pub fn run_one_shot_sweep(
    mode: TicketMode,
    cfg: &TrainConfig,
    targets: &[f64],
) -> Result<Vec<RoundData>> {
    let mut runner = OneShotRunner::new(mode, cfg.clone())?;
    let mut out = Vec::with_capacity(targets.len() + 1);
    let dense = runner.dense_round()?;
    runner.absorb_dense(&dense)?;
    let dense_failed = dense.record.failed();
    out.push(dense);
    if dense_failed {
        return Ok(out);
    }
    for (i, &target) in targets.iter().enumerate() {
        let data = runner.ticket_round((i + 1) as u32, target)?;
        let failed = data.record.failed();
        out.push(data);
        if failed {
            break;
        }
    }
    Ok(out)
}

/// Single one-shot ticket at one target sparsity.
pub fn run_one_shot(mode: TicketMode, cfg: &TrainConfig, target: f64) -> Result<Vec<RoundData>> {
    run_one_shot_sweep(mode, cfg, &[target])
}

/// Weight-loading regime for a transfer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferRegime {
    /// Source initialization.
    Theta0,
    /// Fresh initialization.
    ThetaR,
    /// Trained source weights.
    ThetaBest,
}

impl TransferRegime {
    pub fn label(&self) -> &'static str {
        match self {
            TransferRegime::Theta0 => "theta_0",
            TransferRegime::ThetaR => "theta_r",
            TransferRegime::ThetaBest => "theta_best",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "theta_0" => TransferRegime::Theta0,
            "theta_r" => TransferRegime::ThetaR,
            "theta_best" => TransferRegime::ThetaBest,
            _ => return None,
        })
    }
}

/// One source round a transfer run retrains on the target dataset.
#[derive(Debug, Clone)]
pub struct TransferSource {
    pub source_mode: String,
    pub round: u32,
    pub masks: MaskPair,
    pub trained: GanPair,
}

/// Retrains source masks on the target dataset under one loading regime.
/// `cfg` must carry the target dataset, the source run's seed, and the
/// source run's hyperparameters. Round 0 is the target-dataset dense
/// baseline; round `k` transfers `sources[k-1]`.
pub fn run_transfer(
    sources: &[TransferSource],
    cfg: &TrainConfig,
    regime: TransferRegime,
) -> Result<Vec<RoundData>> {
    cfg.validate()?;
    let theta0 = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);
    let ones = MaskPair::all_ones(&theta0);
    let label = |src: &str| format!("transfer({src},{})", regime.label());
    let mut out = Vec::with_capacity(sources.len() + 1);

    let dense = run_tolerating_divergence(&theta0, &ones, cfg, 0, None)?;
    let mode_label = label(
        sources
            .first()
            .map(|s| s.source_mode.as_str())
            .unwrap_or("none"),
    );
    out.push(RoundData {
        round: 0,
        masks: ones.clone(),
        record: TicketRecord {
            mode: mode_label.clone(),
            round: 0,
            dataset: cfg.dataset.id.clone(),
            seed: cfg.seed,
            gen_sparsity: 0.0,
            disc_sparsity: 0.0,
            init_regime: InitRegime::Theta0,
            score: dense.as_ref().map(|o| o.score),
            trace: dense.as_ref().map(|o| o.trace.clone()).unwrap_or_default(),
            flops_ratio: None,
            matching: None,
        },
        final_params: dense.as_ref().map(|o| o.params.clone()),
        chain_params: None,
        snapshots: dense.map(|o| o.snapshots).unwrap_or_default(),
    });
    if out[0].record.failed() {
        return Ok(out);
    }

    for (i, src) in sources.iter().enumerate() {
        let round = (i + 1) as u32;
        let start = match regime {
            TransferRegime::Theta0 => theta0.clone(),
            TransferRegime::ThetaR => GanPair::init(
                &cfg.gen,
                &cfg.disc,
                mix(&[cfg.seed, super::STREAM_TRANSFER_FRESH]),
            ),
            TransferRegime::ThetaBest => src.trained.clone(),
        };
        let outcome =
            run_tolerating_divergence(&start, &src.masks, cfg, round as u64, None)?;
        let init_regime = match regime {
            TransferRegime::Theta0 => InitRegime::Theta0,
            TransferRegime::ThetaR => InitRegime::ThetaPrime,
            TransferRegime::ThetaBest => InitRegime::ThetaBest,
        };
        let record = TicketRecord {
            mode: label(&src.source_mode),
            round,
            dataset: cfg.dataset.id.clone(),
            seed: cfg.seed,
            gen_sparsity: src.masks.gen.sparsity(),
            disc_sparsity: src.masks.disc.sparsity(),
            init_regime,
            score: outcome.as_ref().map(|o| o.score),
            trace: outcome.as_ref().map(|o| o.trace.clone()).unwrap_or_default(),
            flops_ratio: None,
            matching: None,
        };
        let failed = record.failed();
        out.push(RoundData {
            round,
            masks: src.masks.clone(),
            record,
            final_params: outcome.as_ref().map(|o| o.params.clone()),
            chain_params: None,
            snapshots: outcome.map(|o| o.snapshots).unwrap_or_default(),
        });
        if failed {
            break;
        }
    }
    Ok(out)
}
