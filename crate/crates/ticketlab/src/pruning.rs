//! Mask construction and algebra: global magnitude selection, random
//! masks, the iterative sparsity schedule, and sparsity accounting.
//!
//! Masks cover weight matrices only; biases, normalization scales and
//! shifts, and power-iteration buffers are never unstructured-pruned.

use rand::Rng;
use thiserror::Error;

use crate::models::{ParamKind, ParamSet};
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("target sparsity {target} is below current mask sparsity {current}")]
    TargetBelowCurrent { target: f64, current: f64 },
    #[error("target sparsity {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("mask incongruent with parameters: {0}")]
    Incongruent(String),
}

pub type Result<T> = std::result::Result<T, PruneError>;

/// Fraction of prunable weights removed after `round` rounds of pruning
/// 20% of the survivors: `1 - 0.8^round`.
pub fn schedule_sparsity(round: u32) -> f64 {
    1.0 - 0.8f64.powi(round as i32)
}

/// The iterative schedule with a configurable per-round fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySchedule {
    pub per_round: f64,
}

impl Default for SparsitySchedule {
    fn default() -> Self {
        SparsitySchedule { per_round: 0.2 }
    }
}

impl SparsitySchedule {
    pub fn sparsity_at(&self, round: u32) -> f64 {
        1.0 - (1.0 - self.per_round).powi(round as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub bits: Vec<u8>,
}

/// Binary vectors congruent to a `ParamSet`'s weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub entries: Vec<MaskEntry>,
}

impl Mask {
    /// Identity mask over every weight entry of `params`.
    pub fn all_ones(params: &ParamSet) -> Mask {
        let entries = params
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| MaskEntry {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                bits: vec![1; e.tensor.numel()],
            })
            .collect();
        Mask { entries }
    }

    pub fn get(&self, name: &str) -> Option<&MaskEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn bits(&self, name: &str) -> Option<&[u8]> {
        self.get(name).map(|e| e.bits.as_slice())
    }

    pub fn prunable_count(&self) -> usize {
        self.entries.iter().map(|e| e.bits.len()).sum()
    }

    pub fn zero_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.bits.iter().filter(|&&b| b == 0).count())
            .sum()
    }

    /// Fraction of prunable weights removed.
    pub fn sparsity(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.zero_count() as f64 / self.prunable_count() as f64
    }

    pub fn is_all_ones(&self) -> bool {
        self.entries.iter().all(|e| e.bits.iter().all(|&b| b == 1))
    }

    /// Zero out one whole tensor's mask (used in tests and diagnostics).
    pub fn zero_tensor(&mut self, name: &str) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.name == name) {
            e.bits.iter_mut().for_each(|b| *b = 0);
        }
    }

    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        let weights: Vec<_> = params
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .collect();
        if weights.len() != self.entries.len() {
            return Err(PruneError::Incongruent(format!(
                "{} weight tensors vs {} mask entries",
                weights.len(),
                self.entries.len()
            )));
        }
        for w in weights {
            match self.get(&w.name) {
                Some(m) if m.shape == w.tensor.shape() => {}
                Some(m) => {
                    return Err(PruneError::Incongruent(format!(
                        "`{}`: shape {:?} vs mask {:?}",
                        w.name,
                        w.tensor.shape(),
                        m.shape
                    )))
                }
                None => {
                    return Err(PruneError::Incongruent(format!(
                        "mask missing entry for `{}`",
                        w.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Pointwise `self >= other`: everything pruned here is pruned there.
    pub fn covers(&self, next: &Mask) -> bool {
        self.entries.len() == next.entries.len()
            && self.entries.iter().zip(&next.entries).all(|(a, b)| {
                a.name == b.name
                    && a.bits
                        .iter()
                        .zip(&b.bits)
                        .all(|(&old, &new)| !(old == 0 && new == 1))
            })
    }
}

/// Number of zeros a mask must carry at `target` sparsity: round-half-up
/// on the global count.
fn target_zero_count(prunable: usize, target: f64) -> usize {
    (target * prunable as f64).round() as usize
}

/// Prunes the smallest-magnitude surviving weights globally (one pool
/// per network) until total zeros reach `round(target * prunable)`.
/// Previously pruned positions stay pruned.
pub fn global_magnitude_mask(params: &ParamSet, current: &Mask, target: f64) -> Result<Mask> {
    current.check_congruent(params)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(PruneError::TargetOutOfRange(target));
    }
    let current_sparsity = current.sparsity();
    if target < current_sparsity - 1e-12 {
        return Err(PruneError::TargetBelowCurrent {
            target,
            current: current_sparsity,
        });
    }

    let mut next = current.clone();
    next.entries.sort_by(|a, b| a.name.cmp(&b.name));

    let prunable = next.prunable_count();
    let want_zeros = target_zero_count(prunable, target);
    let have_zeros = next.zero_count();
    if want_zeros <= have_zeros {
        return Ok(next);
    }

    // Survivors ranked by |w|, ties broken by (tensor name, flat index).
    let mut survivors: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, entry) in next.entries.iter().enumerate() {
        let w = params
            .get(&entry.name)
            .expect("congruence checked above");
        for (fi, (&bit, &val)) in entry.bits.iter().zip(w.data()).enumerate() {
            if bit == 1 {
                survivors.push((val.abs(), ti, fi));
            }
        }
    }
    survivors.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    for &(_, ti, fi) in survivors.iter().take(want_zeros - have_zeros) {
        next.entries[ti].bits[fi] = 0;
    }
    Ok(next)
}

/// Magnitude pruning over the union of several networks' weights
/// (one shared pool), preserving each network's existing zeros.
pub fn global_magnitude_mask_pooled(
    nets: &[(&ParamSet, &Mask)],
    target: f64,
) -> Result<Vec<Mask>> {
    if !(0.0..=1.0).contains(&target) {
        return Err(PruneError::TargetOutOfRange(target));
    }
    let mut masks: Vec<Mask> = Vec::with_capacity(nets.len());
    for (params, mask) in nets {
        mask.check_congruent(params)?;
        let mut m = (*mask).clone();
        m.entries.sort_by(|a, b| a.name.cmp(&b.name));
        masks.push(m);
    }
    let prunable: usize = masks.iter().map(|m| m.prunable_count()).sum();
    let have_zeros: usize = masks.iter().map(|m| m.zero_count()).sum();
    let want_zeros = target_zero_count(prunable, target);
    if want_zeros <= have_zeros {
        return Ok(masks);
    }
    let mut survivors: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (ni, mask) in masks.iter().enumerate() {
        for (ti, entry) in mask.entries.iter().enumerate() {
            let w = nets[ni].0.get(&entry.name).expect("congruent");
            for (fi, (&bit, &val)) in entry.bits.iter().zip(w.data()).enumerate() {
                if bit == 1 {
                    survivors.push((val.abs(), ni, ti, fi));
                }
            }
        }
    }
    survivors.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    for &(_, ni, ti, fi) in survivors.iter().take(want_zeros - have_zeros) {
        masks[ni].entries[ti].bits[fi] = 0;
    }
    Ok(masks)
}

/// Uniformly random mask at `target` sparsity, deterministic in `seed`.
/// With `current` given, its zeros are kept and only survivors are drawn
/// from, so iterated random pruning stays monotone.
pub fn random_mask(
    params: &ParamSet,
    current: Option<&Mask>,
    target: f64,
    seed: u64,
) -> Result<Mask> {
    if !(0.0..=1.0).contains(&target) {
        return Err(PruneError::TargetOutOfRange(target));
    }
    let mut next = match current {
        Some(m) => {
            m.check_congruent(params)?;
            let mut next = m.clone();
            next.entries.sort_by(|a, b| a.name.cmp(&b.name));
            next
        }
        None => {
            let mut next = Mask::all_ones(params);
            next.entries.sort_by(|a, b| a.name.cmp(&b.name));
            next
        }
    };
    let prunable = next.prunable_count();
    let want_zeros = target_zero_count(prunable, target);
    let have_zeros = next.zero_count();
    if want_zeros <= have_zeros {
        if let Some(m) = current {
            if want_zeros < have_zeros {
                return Err(PruneError::TargetBelowCurrent {
                    target,
                    current: m.sparsity(),
                });
            }
        }
        return Ok(next);
    }

    let mut survivors: Vec<(usize, usize)> = Vec::new();
    for (ti, entry) in next.entries.iter().enumerate() {
        for (fi, &bit) in entry.bits.iter().enumerate() {
            if bit == 1 {
                survivors.push((ti, fi));
            }
        }
    }
    // Partial Fisher-Yates: the first k slots end up a uniform sample.
    let mut rng = rng_from(seed);
    let k = want_zeros - have_zeros;
    for i in 0..k {
        let j = rng.gen_range(i..survivors.len());
        survivors.swap(i, j);
    }
    for &(ti, fi) in survivors.iter().take(k) {
        next.entries[ti].bits[fi] = 0;
    }
    Ok(next)
}

/// Sparsity of a mask (free-function spelling of `Mask::sparsity`).
pub fn mask_sparsity(mask: &Mask) -> f64 {
    mask.sparsity()
}

/// Returns `params` with pruned weight entries zeroed. Idempotent.
pub fn apply_mask(params: &ParamSet, mask: &Mask) -> Result<ParamSet> {
    mask.check_congruent(params)?;
    let mut out = params.clone();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(params: &mut ParamSet, mask: &Mask) -> Result<()> {
    mask.check_congruent(params)?;
    for e in &mut params.entries {
        if e.kind != ParamKind::Weight {
            continue;
        }
        let bits = mask.bits(&e.name).expect("congruence checked");
        for (v, &b) in e.tensor.data_mut().iter_mut().zip(bits) {
            if b == 0 {
                *v = 0.0;
            }
        }
    }
    Ok(())
}
