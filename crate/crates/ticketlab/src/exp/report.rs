//! Result tables (best/extreme per mode), curve files with confidence
//! intervals, and archive verification.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::metrics::{best_and_extreme, Curve, CurvePoint};
use crate::pruning::Mask;
use crate::tickets::TicketRecord;

use super::config::{ExperimentConfig, RunMode};
use super::persist;
use super::runner::{load_record, RunPaths};
use super::{ExpError, Result};

/// All records of one completed (or failed-terminated) run.
pub struct RunRecords {
    pub config: ExperimentConfig,
    pub run_dir: PathBuf,
    /// Records per seed, rounds in order.
    pub by_seed: Vec<(u64, Vec<TicketRecord>)>,
}

/// Loads a run archive, checking completeness: every seed must carry
/// its completion marker and a contiguous round sequence.
pub fn load_run(run_dir: &Path) -> Result<RunRecords> {
    let config_path = run_dir.join("config.toml");
    let config = ExperimentConfig::load(&config_path)?;
    let paths = RunPaths {
        run_dir: run_dir.to_path_buf(),
    };
    let mut by_seed = Vec::new();
    let mut missing = Vec::new();
    for &seed in &config.experiment.seeds {
        let mut records: Vec<TicketRecord> = Vec::new();
        let mut round = 0u32;
        loop {
            let dir = paths.round_dir(seed, round);
            if !dir.join("record.json").exists() {
                break;
            }
            records.push(load_record(&dir)?);
            round += 1;
        }
        if !paths.seed_done(seed).exists() {
            missing.push(format!("seed {seed} incomplete after {round} rounds"));
        }
        by_seed.push((seed, records));
    }
    if !missing.is_empty() {
        return Err(ExpError::Incomplete(missing));
    }
    Ok(RunRecords {
        config,
        run_dir: run_dir.to_path_buf(),
        by_seed,
    })
}

/// Seed-averaged points per round: (sparsity coordinate, mean score,
/// per-seed scores).
fn round_points(records: &RunRecords) -> Vec<(u32, f64, f64, Vec<f64>)> {
    let planned = records
        .by_seed
        .iter()
        .flat_map(|(_, recs)| recs.iter().map(|r| r.round))
        .max()
        .unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..=planned {
        let mut scores = Vec::new();
        let mut coords = Vec::new();
        for (_, recs) in &records.by_seed {
            if let Some(r) = recs.iter().find(|r| r.round == round) {
                if let Some(s) = r.score {
                    scores.push(s);
                    coords.push(r.sparsity_coordinate());
                }
            }
        }
        if scores.is_empty() {
            continue;
        }
        let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
        let mean_coord = coords.iter().sum::<f64>() / coords.len() as f64;
        out.push((round, mean_coord, mean_score, scores));
    }
    out
}

/// Merges equal sparsities (averaging their scores) and builds a Curve.
fn build_curve(mut points: Vec<(f64, f64)>) -> Curve {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for (sp, sc) in points {
        match merged.last_mut() {
            Some((s, acc, n)) if *s == sp => {
                *acc += sc;
                *n += 1;
            }
            _ => merged.push((sp, sc, 1)),
        }
    }
    Curve::new(
        merged
            .into_iter()
            .map(|(sparsity, acc, n)| CurvePoint {
                sparsity,
                score: acc / n as f64,
            })
            .collect(),
    )
    .expect("sorted deduplicated points")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    pub dataset: String,
    pub n_seeds: usize,
    pub fid_full: Option<f64>,
    pub fid_best: Option<f64>,
    pub sparsity_best: Option<f64>,
    pub fid_extreme: Option<f64>,
    pub sparsity_extreme: Option<f64>,
    pub best_label: String,
    pub extreme_label: String,
}

fn label(score: Option<f64>, sparsity: Option<f64>) -> String {
    match (score, sparsity) {
        (Some(sc), Some(sp)) => format!("{:.2} ({:.1}%)", sc, sp * 100.0),
        _ => "-".to_string(),
    }
}

/// One row per mode of one run: full score, best subnetwork, and the
/// extreme (sparsest still-matching) subnetwork.
pub fn report_run(records: &RunRecords) -> Vec<ReportRow> {
    let rounds = round_points(records);
    let full = rounds
        .iter()
        .find(|(round, ..)| *round == 0)
        .map(|(_, _, score, _)| *score);
    let mut modes: Vec<String> = Vec::new();
    for (_, recs) in &records.by_seed {
        for r in recs {
            if !modes.contains(&r.mode) {
                modes.push(r.mode.clone());
            }
        }
    }
    // One run normally carries one mode label; keep the general shape.
    modes
        .into_iter()
        .map(|mode| {
            let points: Vec<(f64, f64)> = rounds
                .iter()
                .filter(|(round, ..)| {
                    records
                        .by_seed
                        .iter()
                        .flat_map(|(_, recs)| recs.iter())
                        .any(|r| r.round == *round && r.mode == mode)
                })
                .map(|(_, coord, score, _)| (*coord, *score))
                .collect();
            let curve = build_curve(points);
            let (best, extreme) = match full {
                Some(f) => best_and_extreme(&curve, f, records.config.experiment.tol_factor),
                None => (None, None),
            };
            ReportRow {
                run: records.config.experiment.name.clone(),
                mode,
                dataset: records.config.train.dataset.clone(),
                n_seeds: records.by_seed.len(),
                fid_full: full,
                fid_best: best.map(|p| p.score),
                sparsity_best: best.map(|p| p.sparsity),
                fid_extreme: extreme.map(|p| p.score),
                sparsity_extreme: extreme.map(|p| p.sparsity),
                best_label: label(best.map(|p| p.score), best.map(|p| p.sparsity)),
                extreme_label: label(extreme.map(|p| p.score), extreme.map(|p| p.sparsity)),
            }
        })
        .collect()
}

/// Accepts a single run directory or an archive root of run directories.
pub fn report_rows(archive: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for dir in run_dirs(archive)? {
        let records = load_run(&dir)?;
        rows.extend(report_run(&records));
    }
    Ok(rows)
}

pub fn run_dirs(archive: &Path) -> Result<Vec<PathBuf>> {
    if archive.join("config.toml").exists() {
        return Ok(vec![archive.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    let iter = fs::read_dir(archive).map_err(ExpError::io(archive.display().to_string()))?;
    for entry in iter {
        let entry = entry.map_err(ExpError::io(archive.display().to_string()))?;
        if entry.path().join("config.toml").exists() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(ExpError::Archive(format!(
            "{} holds no run archives",
            archive.display()
        )));
    }
    Ok(dirs)
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv is utf-8")
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: ReportRow = rec.map_err(|e| ExpError::Archive(format!("csv parse: {e}")))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub sparsity: f64,
    pub mean: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub run: String,
    pub mode: String,
    pub dataset: String,
    pub fid_full: Option<f64>,
    pub rows: Vec<CurveRow>,
    pub single_seed: bool,
}

/// 97.5% quantile of Student's t with `df` degrees of freedom.
fn t_critical(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("valid dof")
        .inverse_cdf(0.975)
}

/// Per-sparsity mean and 95% t-interval over seeds.
pub fn curve_table(run_dir: &Path) -> Result<CurveTable> {
    let records = load_run(run_dir)?;
    let rounds = round_points(&records);
    let full = rounds
        .iter()
        .find(|(round, ..)| *round == 0)
        .map(|(_, _, score, _)| *score);
    let mut single_seed = false;
    let rows = rounds
        .iter()
        .map(|(_, coord, mean, scores)| {
            let n = scores.len();
            let (ci_lo, ci_hi) = if n >= 2 {
                let var =
                    scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
                let half = t_critical(n - 1) * (var / n as f64).sqrt();
                (Some(mean - half), Some(mean + half))
            } else {
                single_seed = true;
                (None, None)
            };
            CurveRow {
                sparsity: *coord,
                mean: *mean,
                ci_lo,
                ci_hi,
                n_seeds: n,
            }
        })
        .collect();
    Ok(CurveTable {
        run: records.config.experiment.name.clone(),
        mode: records.config.experiment.mode.clone(),
        dataset: records.config.train.dataset.clone(),
        fid_full: full,
        rows,
        single_seed,
    })
}

/// Plain tabular emission: comment header with the full-model value,
/// then one tab-separated row per sparsity.
pub fn curve_to_tsv(table: &CurveTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# run {} mode {} dataset {}\n",
        table.run, table.mode, table.dataset
    ));
    match table.fid_full {
        Some(f) => out.push_str(&format!("# full_model {f:.6}\n")),
        None => out.push_str("# full_model -\n"),
    }
    out.push_str("sparsity\tmean\tci_lo\tci_hi\tn_seeds\n");
    for r in &table.rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{:.6}\t{:.6}\t{}\t{}\t{}\n",
            r.sparsity,
            r.mean,
            fmt(r.ci_lo),
            fmt(r.ci_hi),
            r.n_seeds
        ));
    }
    out
}

#[derive(Debug, Default)]
pub struct VerifyReport {
    pub seeds: usize,
    pub rounds: usize,
    pub files: usize,
    pub problems: Vec<String>,
}

/// Re-checks archive checksums and invariants: every checkpoint loads
/// and verifies, mask sparsities match their records, iterative masks
/// are monotone, and pruned weights are zero in the stored finals.
pub fn verify(run_dir: &Path) -> Result<VerifyReport> {
    let records = load_run(run_dir)?;
    let paths = RunPaths {
        run_dir: run_dir.to_path_buf(),
    };
    let mut report = VerifyReport {
        seeds: records.by_seed.len(),
        ..VerifyReport::default()
    };
    let unstructured = !matches!(records.config.run_mode()?, RunMode::Channel);
    for (seed, recs) in &records.by_seed {
        let mut prev_gen: Option<Mask> = None;
        for rec in recs {
            let dir = paths.round_dir(*seed, rec.round);
            report.rounds += 1;
            let gen_mask = persist::load_mask(&dir.join("mask_gen.tlm"))?;
            let disc_mask = persist::load_mask(&dir.join("mask_disc.tlm"))?;
            report.files += 2;
            if (gen_mask.sparsity() - rec.gen_sparsity).abs() > 1e-12 {
                report.problems.push(format!(
                    "seed {seed} round {}: generator mask sparsity {} != record {}",
                    rec.round,
                    gen_mask.sparsity(),
                    rec.gen_sparsity
                ));
            }
            if unstructured {
                if let Some(prev) = &prev_gen {
                    if !prev.covers(&gen_mask) {
                        report.problems.push(format!(
                            "seed {seed} round {}: generator mask is not monotone",
                            rec.round
                        ));
                    }
                }
                prev_gen = Some(gen_mask.clone());
            }
            let final_path = dir.join("final.tlc");
            if final_path.exists() {
                let gan = persist::load_gan(&final_path)?;
                report.files += 1;
                if unstructured {
                    for (ps, mask) in [(&gan.gen, &gen_mask), (&gan.disc, &disc_mask)] {
                        for e in &ps.entries {
                            if let Some(bits) = mask.bits(&e.name) {
                                let drift = e
                                    .tensor
                                    .data()
                                    .iter()
                                    .zip(bits)
                                    .any(|(v, &b)| b == 0 && *v != 0.0);
                                if drift {
                                    report.problems.push(format!(
                                        "seed {seed} round {}: pruned weights of `{}` are non-zero",
                                        rec.round, e.name
                                    ));
                                }
                            }
                        }
                    }
                }
            } else if !rec.failed() {
                report.problems.push(format!(
                    "seed {seed} round {}: record has a score but no final.tlc",
                    rec.round
                ));
            }
            if rec.round == 0 {
                let snap_dir = dir.join("snapshots");
                if snap_dir.is_dir() {
                    let iter = fs::read_dir(&snap_dir)
                        .map_err(ExpError::io(snap_dir.display().to_string()))?;
                    for entry in iter {
                        let entry =
                            entry.map_err(ExpError::io(snap_dir.display().to_string()))?;
                        if entry.path().extension().is_some_and(|e| e == "tls") {
                            persist::load_snapshot(&entry.path())?;
                            report.files += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}
