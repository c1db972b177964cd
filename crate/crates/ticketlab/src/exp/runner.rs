//! Archive layout and the resumable experiment runner.
//!
//! One run lives under `<root>/<name>/`:
//!
//! ```text
//! <root>/<name>/
//!   config.toml                 normalized config copy
//!   seed_<s>/round_<k>/
//!     mask_gen.tlm mask_disc.tlm
//!     final.tlc                 trained weights (absent for failed rounds)
//!     chain.tlc                 mask-finding weights when distinct
//!     snapshots/step_<i>.tls    round 0 only
//!     record.json               written last; marks the round complete
//!   summary.json                written by finalize
//!   DONE
//! ```
//!
//! A round is complete iff its `record.json` exists. Resume replays
//! completed rounds through the steppers without retraining, then
//! continues. Seeds run independently on a bounded worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::channel::run_channel_ticket;
use crate::metrics::is_matching;
use crate::tickets::{
    GanPair, ImpRunner, MaskPair, OneShotRunner, RoundData, SnapshotPair, SnapshotStore,
    TicketRecord, TransferSource,
};

use super::config::{ExperimentConfig, RunMode};
use super::persist;
use super::{ExpError, Result};

pub struct RunPaths {
    pub run_dir: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path, name: &str) -> Self {
        RunPaths {
            run_dir: root.join(name),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.run_dir.join("config.toml")
    }

    pub fn done_marker(&self) -> PathBuf {
        self.run_dir.join("DONE")
    }

    pub fn summary(&self) -> PathBuf {
        self.run_dir.join("summary.json")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir.join(format!("seed_{seed}"))
    }

    /// Marker written once a seed has produced all of its rounds.
    pub fn seed_done(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("SEED_DONE")
    }

    pub fn round_dir(&self, seed: u64, round: u32) -> PathBuf {
        self.seed_dir(seed).join(format!("round_{round}"))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(ExpError::io(tmp.display().to_string()))?;
    fs::rename(&tmp, path).map_err(ExpError::io(path.display().to_string()))?;
    Ok(())
}

fn record_json(record: &TicketRecord) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(record).expect("record serializes");
    v.push(b'\n');
    v
}

fn persist_round(paths: &RunPaths, seed: u64, data: &RoundData) -> Result<()> {
    let dir = paths.round_dir(seed, data.round);
    fs::create_dir_all(&dir).map_err(ExpError::io(dir.display().to_string()))?;
    persist::save_mask(&dir.join("mask_gen.tlm"), &data.masks.gen)?;
    persist::save_mask(&dir.join("mask_disc.tlm"), &data.masks.disc)?;
    if let Some(p) = &data.final_params {
        persist::save_gan(&dir.join("final.tlc"), p)?;
    }
    if let Some(p) = &data.chain_params {
        persist::save_gan(&dir.join("chain.tlc"), p)?;
    }
    if data.round == 0 {
        let snap_dir = dir.join("snapshots");
        fs::create_dir_all(&snap_dir).map_err(ExpError::io(snap_dir.display().to_string()))?;
        for snap in &data.snapshots.snaps {
            persist::save_snapshot(&snap_dir.join(format!("step_{}.tls", snap.step)), snap)?;
        }
    }
    // The record is the completion marker; it lands last.
    write_atomic(&dir.join("record.json"), &record_json(&data.record))?;
    Ok(())
}

pub fn load_record(dir: &Path) -> Result<TicketRecord> {
    let path = dir.join("record.json");
    let bytes = fs::read(&path).map_err(ExpError::io(path.display().to_string()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ExpError::Archive(format!("{}: {e}", path.display())))
}

fn load_round(paths: &RunPaths, seed: u64, round: u32) -> Result<Option<RoundData>> {
    let dir = paths.round_dir(seed, round);
    if !dir.join("record.json").exists() {
        return Ok(None);
    }
    let record = load_record(&dir)?;
    let masks = MaskPair {
        gen: persist::load_mask(&dir.join("mask_gen.tlm"))?,
        disc: persist::load_mask(&dir.join("mask_disc.tlm"))?,
    };
    let final_params = if dir.join("final.tlc").exists() {
        Some(persist::load_gan(&dir.join("final.tlc"))?)
    } else {
        None
    };
    let chain_params = if dir.join("chain.tlc").exists() {
        Some(persist::load_gan(&dir.join("chain.tlc"))?)
    } else {
        None
    };
    let mut snapshots = SnapshotStore::default();
    let snap_dir = dir.join("snapshots");
    if snap_dir.is_dir() {
        let mut snaps: Vec<SnapshotPair> = Vec::new();
        for entry in fs::read_dir(&snap_dir).map_err(ExpError::io(snap_dir.display().to_string()))? {
            let entry = entry.map_err(ExpError::io(snap_dir.display().to_string()))?;
            if entry.path().extension().is_some_and(|e| e == "tls") {
                snaps.push(persist::load_snapshot(&entry.path())?);
            }
        }
        snaps.sort_by_key(|s| s.step);
        snapshots.snaps = snaps;
    }
    Ok(Some(RoundData {
        round,
        masks,
        record,
        final_params,
        chain_params,
        snapshots,
    }))
}

/// Runs one seed of a ticket-mode experiment, resuming from the last
/// completed round.
fn run_seed_ticket(
    cfg: &ExperimentConfig,
    mode: crate::tickets::TicketMode,
    seed: u64,
    paths: &RunPaths,
) -> Result<()> {
    let train_cfg = cfg.train_config(seed)?;
    let rounds = cfg.experiment.rounds;
    if mode.one_shot() {
        let mut runner = OneShotRunner::new(mode, train_cfg)?;
        let dense = match load_round(paths, seed, 0)? {
            Some(data) => data,
            None => {
                let data = runner.dense_round()?;
                persist_round(paths, seed, &data)?;
                data
            }
        };
        if dense.record.failed() {
            return Ok(());
        }
        runner.absorb_dense(&dense)?;
        for i in 0..rounds {
            let round = i + 1;
            let target = crate::pruning::schedule_sparsity(round);
            let existing = load_round(paths, seed, round)?;
            let data = match existing {
                Some(data) => data,
                None => {
                    let data = runner.ticket_round(round, target)?;
                    persist_round(paths, seed, &data)?;
                    data
                }
            };
            if data.record.failed() {
                break;
            }
        }
        return Ok(());
    }

    let mut runner = ImpRunner::new(mode, train_cfg)?;
    for round in 0..=rounds {
        let data = match load_round(paths, seed, round)? {
            Some(data) => data,
            None => {
                let data = runner.train_round()?;
                persist_round(paths, seed, &data)?;
                data
            }
        };
        runner.advance(&data)?;
        if data.record.failed() {
            break;
        }
    }
    Ok(())
}

fn run_seed_channel(cfg: &ExperimentConfig, seed: u64, paths: &RunPaths) -> Result<()> {
    let train_cfg = cfg.train_config(seed)?;
    let section = cfg.channel_section();

    // Round 0: the dense baseline at the same architecture and budget.
    if load_round(paths, seed, 0)?.is_none() {
        let theta0 = GanPair::init(&train_cfg.gen, &train_cfg.disc, seed);
        let ones = MaskPair::all_ones(&theta0);
        let data = match crate::tickets::train_gan(&theta0, &ones, &train_cfg, 0, None) {
            Ok(out) => RoundData {
                round: 0,
                masks: ones,
                record: TicketRecord {
                    mode: "channel".into(),
                    round: 0,
                    dataset: train_cfg.dataset.id.clone(),
                    seed,
                    gen_sparsity: 0.0,
                    disc_sparsity: 0.0,
                    init_regime: crate::tickets::InitRegime::Theta0,
                    score: Some(out.score),
                    trace: out.trace.clone(),
                    flops_ratio: Some(1.0),
                    matching: None,
                },
                final_params: Some(out.params),
                chain_params: None,
                snapshots: out.snapshots,
            },
            Err(crate::tickets::TicketError::Diverged { .. }) => RoundData {
                round: 0,
                masks: ones,
                record: TicketRecord {
                    mode: "channel".into(),
                    round: 0,
                    dataset: train_cfg.dataset.id.clone(),
                    seed,
                    gen_sparsity: 0.0,
                    disc_sparsity: 0.0,
                    init_regime: crate::tickets::InitRegime::Theta0,
                    score: None,
                    trace: vec![],
                    flops_ratio: Some(1.0),
                    matching: None,
                },
                final_params: None,
                chain_params: None,
                snapshots: SnapshotStore::default(),
            },
            Err(e) => return Err(e.into()),
        };
        persist_round(paths, seed, &data)?;
        if data.record.failed() {
            return Ok(());
        }
    }

    for (i, &rho) in section.rho_sweep.iter().enumerate() {
        let round = (i + 1) as u32;
        if load_round(paths, seed, round)?.is_some() {
            continue;
        }
        let cp = cfg.channel_config(rho)?;
        let outcome = run_channel_ticket(&train_cfg, &cp, round)?;
        for w in &outcome.warnings {
            eprintln!("[{} seed {seed} round {round}] {w}", cfg.experiment.name);
        }
        // Channel masks ride in the mask format, one entry per norm layer.
        let to_mask = |m: &crate::channel::ChannelMasks| crate::pruning::Mask {
            entries: m
                .layers
                .iter()
                .map(|l| crate::pruning::MaskEntry {
                    name: l.gamma_name.clone(),
                    shape: vec![l.bits.len()],
                    bits: l.bits.clone(),
                })
                .collect(),
        };
        let data = RoundData {
            round,
            masks: MaskPair {
                gen: to_mask(&outcome.gen_masks),
                disc: to_mask(&outcome.disc_masks),
            },
            record: outcome.record,
            final_params: outcome.final_params,
            chain_params: None,
            snapshots: outcome.snapshots,
        };
        persist_round(paths, seed, &data)?;
    }
    Ok(())
}

fn run_seed_transfer(
    cfg: &ExperimentConfig,
    seed: u64,
    paths: &RunPaths,
    out_root: &Path,
) -> Result<()> {
    let section = cfg
        .transfer
        .as_ref()
        .expect("validated transfer section");
    let regime = cfg.transfer_regime()?;
    let train_cfg = cfg.train_config(seed)?;

    let source_paths = RunPaths::new(out_root, &section.source_run);
    if !source_paths.done_marker().exists() {
        return Err(ExpError::Archive(format!(
            "transfer source run `{}` is not complete under {}",
            section.source_run,
            out_root.display()
        )));
    }
    let mut sources = Vec::new();
    let rounds: Vec<u32> = match &section.rounds {
        Some(r) => r.clone(),
        None => {
            let mut r = Vec::new();
            let mut k = 1;
            while source_paths.round_dir(seed, k).join("record.json").exists() {
                r.push(k);
                k += 1;
            }
            r
        }
    };
    for &round in &rounds {
        let data = load_round(&source_paths, seed, round)?.ok_or_else(|| {
            ExpError::Archive(format!(
                "source run `{}` seed {seed} is missing round {round}",
                section.source_run
            ))
        })?;
        let trained = data.final_params.ok_or_else(|| {
            ExpError::Archive(format!(
                "source round {round} (seed {seed}) has no trained weights"
            ))
        })?;
        sources.push(TransferSource {
            source_mode: data.record.mode.clone(),
            round,
            masks: data.masks,
            trained,
        });
    }

    // Resume: transfer rounds are independent given the sources.
    let missing: Vec<u32> = (0..=sources.len() as u32)
        .filter(|&r| !paths.round_dir(seed, r).join("record.json").exists())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let results = crate::tickets::run_transfer(&sources, &train_cfg, regime)?;
    for data in &results {
        if missing.contains(&data.round) {
            persist_round(paths, seed, data)?;
        }
    }
    Ok(())
}

fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    paths: &RunPaths,
    out_root: &Path,
) -> Result<()> {
    if paths.seed_done(seed).exists() {
        return Ok(());
    }
    let dir = paths.seed_dir(seed);
    fs::create_dir_all(&dir).map_err(ExpError::io(dir.display().to_string()))?;
    match cfg.run_mode()? {
        RunMode::Ticket(mode) => run_seed_ticket(cfg, mode, seed, paths),
        RunMode::Channel => run_seed_channel(cfg, seed, paths),
        RunMode::Transfer => run_seed_transfer(cfg, seed, paths, out_root),
    }?;
    write_atomic(&paths.seed_done(seed), b"")
}

/// Per-seed verdict summary written at finalize.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub tol_factor: f64,
    /// Seed-averaged full-model score (round 0).
    pub fid_full: Option<f64>,
    /// One entry per record: verdict against the averaged full score.
    pub records: Vec<TicketRecord>,
}

fn finalize(cfg: &ExperimentConfig, paths: &RunPaths, seeds: &[u64]) -> Result<()> {
    let mut records: Vec<TicketRecord> = Vec::new();
    for &seed in seeds {
        let mut round = 0u32;
        loop {
            let dir = paths.round_dir(seed, round);
            if !dir.join("record.json").exists() {
                break;
            }
            records.push(load_record(&dir)?);
            round += 1;
        }
    }
    let full_scores: Vec<f64> = records
        .iter()
        .filter(|r| r.round == 0)
        .filter_map(|r| r.score)
        .collect();
    let fid_full = if full_scores.is_empty() {
        None
    } else {
        Some(full_scores.iter().sum::<f64>() / full_scores.len() as f64)
    };
    if let Some(full) = fid_full {
        for r in &mut records {
            r.matching = r
                .score
                .map(|s| is_matching(s, full, cfg.experiment.tol_factor));
        }
    }
    let summary = RunSummary {
        name: cfg.experiment.name.clone(),
        mode: cfg.experiment.mode.clone(),
        dataset: cfg.train.dataset.clone(),
        seeds: seeds.to_vec(),
        tol_factor: cfg.experiment.tol_factor,
        fid_full,
        records,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    write_atomic(&paths.summary(), &bytes)?;
    write_atomic(&paths.done_marker(), b"")?;
    Ok(())
}

/// Executes an experiment across its seeds. Idempotent: a completed
/// archive returns immediately, a partial one resumes from the last
/// completed round of each seed.
pub fn cli_run(
    cfg: &ExperimentConfig,
    out_root: &Path,
    seeds_override: Option<Vec<u64>>,
    workers: usize,
) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = seeds_override {
        if seeds.is_empty() {
            return Err(super::config::ConfigError::Field {
                field: "experiment.seeds",
                detail: "seed override must be non-empty".into(),
            }
            .into());
        }
        cfg.experiment.seeds = seeds;
    }
    cfg.validate()?;
    let paths = RunPaths::new(out_root, &cfg.experiment.name);

    fs::create_dir_all(&paths.run_dir)
        .map_err(ExpError::io(paths.run_dir.display().to_string()))?;
    let config_text = cfg.to_toml();
    if paths.config().exists() {
        let existing = fs::read_to_string(paths.config())
            .map_err(ExpError::io(paths.config().display().to_string()))?;
        if existing != config_text {
            return Err(super::config::ConfigError::Field {
                field: "experiment",
                detail: format!(
                    "archive {} was produced by a different config; refusing to mix",
                    paths.run_dir.display()
                ),
            }
            .into());
        }
    } else {
        write_atomic(&paths.config(), config_text.as_bytes())?;
    }

    if paths.done_marker().exists() {
        return Ok(paths.run_dir);
    }

    let seeds = cfg.experiment.seeds.clone();
    let workers = workers.max(1).min(seeds.len());
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<ExpError>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                if let Err(e) = run_seed(&cfg, seeds[i], &paths, out_root) {
                    failures.lock().expect("worker mutex").push(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = failures.into_inner().expect("worker mutex").into_iter().next() {
        return Err(e);
    }

    finalize(&cfg, &paths, &seeds)?;
    Ok(paths.run_dir)
}
