//! Structured pruning through normalization scales: proximal-L1
//! sparsification of the per-channel scales during GAN training with a
//! distillation term, channel-mask extraction at a threshold, MAC-ratio
//! accounting, and the reset-and-retrain ticket pipeline.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::{
    bind_params, discriminator_forward, generator_forward, DiscConfig, ForwardMode, GenConfig,
    ParamEntry, ParamKind, ParamSet,
};
use crate::rng::{mix, rng_from};
use crate::tensor::{Adam, Tape, Tensor};
use crate::tickets::losses::{disc_loss, gen_loss, mae, mse};
use crate::tickets::{
    train_gan, GanPair, InitRegime, MaskPair, Result, TicketError, TicketRecord, TrainConfig,
    TrainOutcome, STREAM_TRAIN,
};

pub const STREAM_CP_SEARCH: u64 = 0x4350;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistFlavor {
    Mse,
    Mae,
}

/// Knobs of the sparsification search phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPruneConfig {
    /// Importance threshold: prox shrinkage is `rho * eta` and a channel
    /// survives extraction iff `|gamma| > rho`.
    pub rho: f64,
    /// Proximal step size.
    pub eta: f64,
    /// Coefficient on the L1 objective's gradient step.
    pub l1_weight: f64,
    /// Coefficient on the distillation loss.
    pub dist_weight: f64,
    /// Search steps before extraction.
    pub search_steps: u64,
    pub dist: DistFlavor,
    /// Apply the current channel masks in the forward pass while
    /// searching (the masks are always applied at extraction).
    pub mask_during_search: bool,
}

impl ChannelPruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 {
            return Err(TicketError::Contract("rho must be non-negative".into()));
        }
        if self.eta <= 0.0 {
            return Err(TicketError::Contract("eta must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ChannelPruneConfig {
    fn default() -> Self {
        ChannelPruneConfig {
            rho: 0.05,
            eta: 0.01,
            l1_weight: 1.0,
            dist_weight: 1.0,
            search_steps: 4000,
            dist: DistFlavor::Mse,
            mask_during_search: true,
        }
    }
}

/// `sgn(x) * max(|x| - lambda, 0)`.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// One proximal-L1 update on every normalization scale of `params`:
/// a gradient step on `l1_weight * ||gamma||_1` followed by shrinkage.
pub fn prox_step_gammas(params: &mut ParamSet, eta: f64, l1_weight: f64, lambda: f64) {
    for e in &mut params.entries {
        if e.kind != ParamKind::Gamma {
            continue;
        }
        for g in e.tensor.data_mut() {
            let sub = if *g > 0.0 {
                1.0
            } else if *g < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g = soft_threshold(*g - eta * l1_weight * sub, lambda);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMaskEntry {
    pub gamma_name: String,
    pub bits: Vec<u8>,
}

/// Per-normalization-layer channel keep bits, plus the layers that hit
/// the all-channels-below-threshold floor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelMasks {
    pub layers: Vec<ChannelMaskEntry>,
    pub degenerate: Vec<String>,
}

impl ChannelMasks {
    pub fn kept(&self, gamma_name: &str) -> Option<usize> {
        self.layers
            .iter()
            .find(|l| l.gamma_name == gamma_name)
            .map(|l| l.bits.iter().filter(|&&b| b == 1).count())
    }

    pub fn is_full(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.bits.iter().all(|&b| b == 1))
    }

    /// Fraction of channels removed across all norm layers.
    pub fn channel_sparsity(&self) -> f64 {
        let total: usize = self.layers.iter().map(|l| l.bits.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let removed: usize = self
            .layers
            .iter()
            .map(|l| l.bits.iter().filter(|&&b| b == 0).count())
            .sum();
        removed as f64 / total as f64
    }
}

/// Keeps channel `c` iff `|gamma_c| > rho`. A layer whose channels all
/// fall below the threshold keeps its single largest-magnitude channel
/// and is reported as degenerate.
pub fn extract_channel_masks(params: &ParamSet, rho: f64) -> ChannelMasks {
    let mut masks = ChannelMasks::default();
    for e in &params.entries {
        if e.kind != ParamKind::Gamma {
            continue;
        }
        let mut bits: Vec<u8> = e
            .tensor
            .data()
            .iter()
            .map(|g| if g.abs() > rho { 1 } else { 0 })
            .collect();
        if bits.iter().all(|&b| b == 0) {
            let best = e
                .tensor
                .data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            bits[best] = 1;
            masks.degenerate.push(e.name.clone());
        }
        masks.layers.push(ChannelMaskEntry {
            gamma_name: e.name.clone(),
            bits,
        });
    }
    masks
}

/// Multiply-accumulate count of the channel-reduced MLP divided by the
/// dense count. `dims` are the full layer widths including input and
/// output; `masks.layers` line up with the hidden layers in order.
pub fn flops_ratio(masks: &ChannelMasks, dims: &[usize]) -> f64 {
    flops_ratio_checked(masks, dims).expect("masks consistent with dims")
}

fn flops_ratio_checked(masks: &ChannelMasks, dims: &[usize]) -> Option<f64> {
    let hidden = dims.len().checked_sub(2)?;
    if masks.layers.len() != hidden {
        return None;
    }
    let mut kept = Vec::with_capacity(dims.len());
    kept.push(dims[0]);
    for (l, entry) in masks.layers.iter().enumerate() {
        if entry.bits.len() != dims[l + 1] {
            return None;
        }
        kept.push(entry.bits.iter().filter(|&&b| b == 1).count());
    }
    kept.push(dims[dims.len() - 1]);
    let dense: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
    let sparse: usize = kept.windows(2).map(|w| w[0] * w[1]).sum();
    Some(sparse as f64 / dense as f64)
}

fn gate_map(params: &ParamSet, rho: f64) -> HashMap<String, Vec<f64>> {
    extract_channel_masks(params, rho)
        .layers
        .into_iter()
        .map(|l| {
            (
                l.gamma_name,
                l.bits.iter().map(|&b| b as f64).collect::<Vec<f64>>(),
            )
        })
        .collect()
}

/// The sparsification search loop: plain GAN steps with the current
/// channel masks applied in the forward pass, a distillation pull toward
/// the unmasked generator, and a proximal-L1 update on the scales after
/// each step.
pub struct CpTrainer {
    pub cfg: TrainConfig,
    pub cp: ChannelPruneConfig,
    pub gan: GanPair,
    theta0: GanPair,
    adam_g: Adam,
    adam_d: Adam,
    rng: rand_chacha::ChaCha8Rng,
    step: u64,
}

impl CpTrainer {
    pub fn new(cfg: TrainConfig, cp: ChannelPruneConfig) -> Result<Self> {
        cfg.validate()?;
        cp.validate()?;
        let theta0 = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);
        let rng = rng_from(mix(&[cfg.seed, STREAM_TRAIN, STREAM_CP_SEARCH]));
        Ok(CpTrainer {
            adam_g: Adam::new(cfg.optim),
            adam_d: Adam::new(cfg.optim),
            gan: theta0.clone(),
            theta0,
            cfg,
            cp,
            rng,
            step: 0,
        })
    }

    pub fn theta0(&self) -> &GanPair {
        &self.theta0
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One search iteration: masks from the scales, a discriminator and
    /// a generator update under those masks, then the proximal update.
    pub fn step(&mut self) -> Result<()> {
        let lr = self
            .cfg
            .lr_decay
            .lr_at(self.cfg.optim.lr, self.step, self.cp.search_steps.max(1));
        self.adam_d.hyper.lr = lr;
        self.adam_g.hyper.lr = lr;
        let gates_g;
        let gates_d;
        if self.cp.mask_during_search {
            gates_g = gate_map(&self.gan.gen, self.cp.rho);
            gates_d = gate_map(&self.gan.disc, self.cp.rho);
        } else {
            gates_g = HashMap::new();
            gates_d = HashMap::new();
        }
        let gate_g = |name: &str| gates_g.get(name).cloned();
        let gate_d = |name: &str| gates_d.get(name).cloned();

        let real = crate::datasets::sample(&self.cfg.dataset, self.cfg.batch_size, self.rng.gen());
        let z_d = self.normal(self.cfg.batch_size, self.cfg.gen.latent_dim);
        self.disc_update(&real, &z_d, &gate_g, &gate_d)?;

        let z_g = self.normal(self.cfg.batch_size, self.cfg.gen.latent_dim);
        self.gen_update(&z_g, &gate_g, &gate_d)?;

        let lambda = self.cp.rho * self.cp.eta;
        prox_step_gammas(&mut self.gan.gen, self.cp.eta, self.cp.l1_weight, lambda);
        prox_step_gammas(&mut self.gan.disc, self.cp.eta, self.cp.l1_weight, lambda);
        self.step += 1;
        Ok(())
    }

    fn normal(&mut self, rows: usize, cols: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::from_vec(vec![rows, cols], data).expect("matrix layout")
    }

    fn disc_update(
        &mut self,
        real: &Tensor,
        z: &Tensor,
        gate_g: &dyn Fn(&str) -> Option<Vec<f64>>,
        gate_d: &dyn Fn(&str) -> Option<Vec<f64>>,
    ) -> Result<()> {
        let GanPair { gen, disc } = &mut self.gan;
        let mut tape = Tape::new();
        let gen_binding = bind_params(&mut tape, gen, None, false)?;
        let disc_binding = bind_params(&mut tape, disc, None, true)?;
        let x_real = tape.constant(real);
        let zv = tape.constant(z);
        let fake = generator_forward(
            &mut tape,
            &self.cfg.gen,
            gen,
            &gen_binding,
            zv,
            ForwardMode::Train,
            Some(gate_g),
        )?;
        let d_real = discriminator_forward(
            &mut tape,
            &self.cfg.disc,
            disc,
            &disc_binding,
            x_real,
            ForwardMode::Train,
            Some(gate_d),
        )?;
        let d_fake = discriminator_forward(
            &mut tape,
            &self.cfg.disc,
            disc,
            &disc_binding,
            fake,
            ForwardMode::TrainFrozen,
            Some(gate_d),
        )?;
        let loss = disc_loss(&mut tape, self.cfg.loss, d_real, d_fake)?;
        if !tape.value(loss)[0].is_finite() {
            return Err(TicketError::Diverged { step: self.step });
        }
        tape.backward(loss)?;
        self.adam_d.begin_step();
        for (i, e) in disc.entries.iter_mut().enumerate() {
            if let Some(grad) = tape.grad_tensor(disc_binding.leaves[i]) {
                self.adam_d.update(&e.name, &mut e.tensor, &grad, None)?;
            }
        }
        Ok(())
    }

    fn gen_update(
        &mut self,
        z: &Tensor,
        gate_g: &dyn Fn(&str) -> Option<Vec<f64>>,
        gate_d: &dyn Fn(&str) -> Option<Vec<f64>>,
    ) -> Result<()> {
        let GanPair { gen, disc } = &mut self.gan;
        let mut tape = Tape::new();
        let gen_binding = bind_params(&mut tape, gen, None, true)?;
        let disc_binding = bind_params(&mut tape, disc, None, false)?;
        let zv = tape.constant(z);
        let student = generator_forward(
            &mut tape,
            &self.cfg.gen,
            gen,
            &gen_binding,
            zv,
            ForwardMode::Train,
            Some(gate_g),
        )?;
        let d_fake = discriminator_forward(
            &mut tape,
            &self.cfg.disc,
            disc,
            &disc_binding,
            student,
            ForwardMode::TrainFrozen,
            Some(gate_d),
        )?;
        let mut loss = gen_loss(&mut tape, self.cfg.loss, d_fake)?;

        if self.cp.dist_weight != 0.0 {
            // Teacher branch: the same weights without masks, bound as
            // constants so the pull is one-directional.
            let mut teacher_scratch = gen.clone();
            let teacher_binding = bind_params(&mut tape, &teacher_scratch, None, false)?;
            let teacher = generator_forward(
                &mut tape,
                &self.cfg.gen,
                &mut teacher_scratch,
                &teacher_binding,
                zv,
                ForwardMode::TrainFrozen,
                None,
            )?;
            let dist = match self.cp.dist {
                DistFlavor::Mse => mse(&mut tape, student, teacher)?,
                DistFlavor::Mae => mae(&mut tape, student, teacher)?,
            };
            let weighted = tape.scale(dist, self.cp.dist_weight);
            loss = tape.add(loss, weighted)?;
        }

        if !tape.value(loss)[0].is_finite() {
            return Err(TicketError::Diverged { step: self.step });
        }
        tape.backward(loss)?;
        self.adam_g.begin_step();
        for (i, e) in gen.entries.iter_mut().enumerate() {
            if let Some(grad) = tape.grad_tensor(gen_binding.leaves[i]) {
                self.adam_g.update(&e.name, &mut e.tensor, &grad, None)?;
            }
        }
        Ok(())
    }
}

fn keep_indices(bits: &[u8]) -> Vec<usize> {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(i, _)| i)
        .collect()
}

fn filter_vec(t: &Tensor, keep: &[usize]) -> Tensor {
    Tensor::vector(keep.iter().map(|&i| t.data()[i]).collect())
}

fn filter_matrix(t: &Tensor, keep_rows: &[usize], keep_cols: &[usize]) -> Tensor {
    let cols = t.cols();
    let mut data = Vec::with_capacity(keep_rows.len() * keep_cols.len());
    for &r in keep_rows {
        for &c in keep_cols {
            data.push(t.data()[r * cols + c]);
        }
    }
    Tensor::matrix(keep_rows.len(), keep_cols.len(), data).expect("filtered layout")
}

fn renorm(mut t: Tensor) -> Tensor {
    let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        let first = &mut t.data_mut()[0];
        *first = 1.0;
    } else {
        for v in t.data_mut() {
            *v /= norm;
        }
    }
    t
}

fn shrink_net(
    prefix: &str,
    dims: &[usize],
    params: &ParamSet,
    masks: &ChannelMasks,
) -> (Vec<usize>, ParamSet) {
    let hidden = dims.len() - 2;
    let mut keeps: Vec<Vec<usize>> = Vec::with_capacity(dims.len());
    keeps.push((0..dims[0]).collect());
    for l in 0..hidden {
        let entry = masks
            .layers
            .iter()
            .find(|m| m.gamma_name == format!("{prefix}.l{l}.gamma"));
        match entry {
            Some(e) => keeps.push(keep_indices(&e.bits)),
            None => keeps.push((0..dims[l + 1]).collect()),
        }
    }
    keeps.push((0..dims[dims.len() - 1]).collect());

    let mut out = ParamSet::default();
    for l in 0..dims.len() - 1 {
        let keep_in = &keeps[l];
        let keep_out = &keeps[l + 1];
        for e in &params.entries {
            if !e.name.starts_with(&format!("{prefix}.l{l}.")) {
                continue;
            }
            let tensor = match e.kind {
                ParamKind::Weight => filter_matrix(&e.tensor, keep_in, keep_out),
                ParamKind::Bias | ParamKind::Gamma | ParamKind::Beta => {
                    filter_vec(&e.tensor, keep_out)
                }
            };
            out.entries.push(ParamEntry {
                name: e.name.clone(),
                kind: e.kind,
                tensor,
            });
        }
        for (name, buf) in &params.buffers {
            if !name.starts_with(&format!("{prefix}.l{l}.")) {
                continue;
            }
            let tensor = if name.ends_with(".u") {
                renorm(filter_vec(buf, keep_in))
            } else if name.ends_with(".v") {
                renorm(filter_vec(buf, keep_out))
            } else {
                // Normalization statistics follow the layer's outputs.
                filter_vec(buf, keep_out)
            };
            out.buffers.push((name.clone(), tensor));
        }
    }
    (keeps.iter().map(|k| k.len()).collect(), out)
}

/// Physically removes masked channels from a generator: weight matrices
/// shrink, and the surviving values are the original ones bit-for-bit.
pub fn shrink_generator(
    cfg: &GenConfig,
    params: &ParamSet,
    masks: &ChannelMasks,
) -> (GenConfig, ParamSet) {
    let dims = cfg.layer_dims();
    let (kept, out) = shrink_net("g", &dims, params, masks);
    let mut cfg2 = cfg.clone();
    cfg2.hidden = kept[1..kept.len() - 1].to_vec();
    (cfg2, out)
}

pub fn shrink_discriminator(
    cfg: &DiscConfig,
    params: &ParamSet,
    masks: &ChannelMasks,
) -> (DiscConfig, ParamSet) {
    let dims = cfg.layer_dims();
    let (kept, out) = shrink_net("d", &dims, params, masks);
    let mut cfg2 = cfg.clone();
    cfg2.hidden = kept[1..kept.len() - 1].to_vec();
    (cfg2, out)
}

/// Everything one channel-ticket run produces.
#[derive(Debug, Clone)]
pub struct ChannelTicketOutcome {
    pub record: TicketRecord,
    pub gen_masks: ChannelMasks,
    pub disc_masks: ChannelMasks,
    pub flops: f64,
    pub retrain_gen_cfg: GenConfig,
    pub retrain_disc_cfg: DiscConfig,
    pub final_params: Option<GanPair>,
    pub snapshots: crate::tickets::SnapshotStore,
    pub warnings: Vec<String>,
}

/// The full pipeline: sparsification search, mask extraction, structural
/// shrinking, reset of the surviving weights to their initialization,
/// and retraining for the full step budget.
pub fn run_channel_ticket(
    cfg: &TrainConfig,
    cp: &ChannelPruneConfig,
    round: u32,
) -> Result<ChannelTicketOutcome> {
    let mut trainer = CpTrainer::new(cfg.clone(), cp.clone())?;
    let mut diverged = false;
    for _ in 0..cp.search_steps {
        match trainer.step() {
            Ok(()) => {}
            Err(TicketError::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let gen_masks = extract_channel_masks(&trainer.gan.gen, cp.rho);
    let disc_masks = extract_channel_masks(&trainer.gan.disc, cp.rho);
    let flops = flops_ratio_checked(&gen_masks, &cfg.gen.layer_dims())
        .ok_or_else(|| TicketError::Contract("channel masks inconsistent with generator".into()))?;
    let mut warnings: Vec<String> = gen_masks
        .degenerate
        .iter()
        .chain(disc_masks.degenerate.iter())
        .map(|l| format!("layer `{l}`: all channels below threshold, kept the largest"))
        .collect();

    let (gen_cfg, gen0) = shrink_generator(&cfg.gen, &trainer.theta0().gen, &gen_masks);
    let (disc_cfg, disc0) =
        shrink_discriminator(&cfg.disc, &trainer.theta0().disc, &disc_masks);

    let retrain_cfg = TrainConfig {
        gen: gen_cfg.clone(),
        disc: disc_cfg.clone(),
        ..cfg.clone()
    };
    let start = GanPair {
        gen: gen0,
        disc: disc0,
    };
    let masks = MaskPair::all_ones(&start);

    let outcome: Option<TrainOutcome> = if diverged {
        warnings.push("search phase diverged; ticket recorded as failed".into());
        None
    } else {
        match train_gan(&start, &masks, &retrain_cfg, 0, None) {
            Ok(o) => Some(o),
            Err(TicketError::Diverged { .. }) => None,
            Err(e) => return Err(e),
        }
    };

    let record = TicketRecord {
        mode: "channel".into(),
        round,
        dataset: cfg.dataset.id.clone(),
        seed: cfg.seed,
        gen_sparsity: gen_masks.channel_sparsity(),
        disc_sparsity: disc_masks.channel_sparsity(),
        init_regime: InitRegime::Theta0,
        score: outcome.as_ref().map(|o| o.score),
        trace: outcome.as_ref().map(|o| o.trace.clone()).unwrap_or_default(),
        flops_ratio: Some(flops),
        matching: None,
    };

    Ok(ChannelTicketOutcome {
        record,
        gen_masks,
        disc_masks,
        flops,
        retrain_gen_cfg: gen_cfg,
        retrain_disc_cfg: disc_cfg,
        final_params: outcome.as_ref().map(|o| o.params.clone()),
        snapshots: outcome.map(|o| o.snapshots).unwrap_or_default(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_generator, Activation};
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn soft_threshold_hand_values() {
        assert_eq!(soft_threshold(0.5, 0.2), 0.3);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        assert_eq!(soft_threshold(-0.5, 0.2), -0.3);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
    }

    #[test]
    fn soft_threshold_is_the_prox_of_l1() {
        // argmin_y 0.5 (y - x)^2 + lambda |y| by coarse-then-fine grid.
        let mut rng = rng_from(42);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let lambda: f64 = rng.gen_range(0.0..1.5);
            let obj = |y: f64| 0.5 * (y - x) * (y - x) + lambda * y.abs();
            let mut best = 0.0f64;
            let mut lo = -4.0;
            let mut hi = 4.0;
            for _ in 0..3 {
                let mut best_v = f64::INFINITY;
                let n = 2000;
                for i in 0..=n {
                    let y = lo + (hi - lo) * i as f64 / n as f64;
                    let v = obj(y);
                    if v < best_v {
                        best_v = v;
                        best = y;
                    }
                }
                let span = (hi - lo) / n as f64;
                lo = best - 2.0 * span;
                hi = best + 2.0 * span;
            }
            let got = soft_threshold(x, lambda);
            assert!((got - best).abs() < 1e-6, "x={x} lambda={lambda}: {got} vs {best}");
        }
    }

    #[test]
    fn prox_shrinkage_kills_small_scales_and_matches_scalar_sim() {
        // Isolated scale dynamics, no GAN term: gamma = 1, eta = 0.1,
        // rho = 0.5. Reference scalar simulation of the same recurrence.
        let (eta, rho) = (0.1, 0.5);
        let lambda = rho * eta;
        let mut reference = 1.0f64;
        let mut ref_steps = 0;
        while reference != 0.0 {
            let sub = if reference > 0.0 { 1.0 } else { -1.0 };
            reference = {
                let x: f64 = reference - eta * sub;
                x.signum() * (x.abs() - lambda).max(0.0)
            };
            ref_steps += 1;
            assert!(ref_steps < 100, "reference sim must terminate");
        }

        let mut ps = ParamSet::default();
        ps.entries.push(ParamEntry {
            name: "g.l0.gamma".into(),
            kind: ParamKind::Gamma,
            tensor: Tensor::vector(vec![1.0]),
        });
        let mut steps = 0;
        while ps.entries[0].tensor.data()[0] != 0.0 {
            prox_step_gammas(&mut ps, eta, 1.0, lambda);
            steps += 1;
            assert!(steps < 100);
        }
        assert_eq!(steps, ref_steps);
        // Once zero, stays zero.
        prox_step_gammas(&mut ps, eta, 1.0, lambda);
        assert_eq!(ps.entries[0].tensor.data()[0], 0.0);
    }

    #[test]
    fn extraction_hand_cases() {
        let mut ps = ParamSet::default();
        ps.entries.push(ParamEntry {
            name: "g.l0.gamma".into(),
            kind: ParamKind::Gamma,
            tensor: Tensor::vector(vec![0.9, 0.0, 0.4]),
        });
        let m = extract_channel_masks(&ps, 0.3);
        assert_eq!(m.layers[0].bits, vec![1, 0, 1]);
        assert!(m.degenerate.is_empty());

        let m0 = extract_channel_masks(&ps, 0.0);
        assert_eq!(m0.layers[0].bits, vec![1, 0, 1]); // gamma != 0 kept

        let deg = extract_channel_masks(&ps, 5.0);
        assert_eq!(deg.layers[0].bits, vec![1, 0, 0]); // largest survives
        assert_eq!(deg.degenerate, vec!["g.l0.gamma".to_string()]);
    }

    #[test]
    fn extraction_matches_filter_oracle() {
        let mut rng = rng_from(9);
        let gammas: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ps = ParamSet::default();
        ps.entries.push(ParamEntry {
            name: "g.l0.gamma".into(),
            kind: ParamKind::Gamma,
            tensor: Tensor::vector(gammas.clone()),
        });
        let rho = 0.35;
        let m = extract_channel_masks(&ps, rho);
        let oracle: Vec<u8> = gammas
            .iter()
            .map(|g| if g.abs() > rho { 1 } else { 0 })
            .collect();
        assert_eq!(m.layers[0].bits, oracle);
    }

    #[test]
    fn flops_ratio_closed_form() {
        // Uniform MLP, half the channels kept in every hidden layer:
        // interior costs x0.25, boundary costs x0.5.
        let dims = vec![8, 8, 8, 8];
        let full = ChannelMasks {
            layers: vec![
                ChannelMaskEntry { gamma_name: "g.l0.gamma".into(), bits: vec![1; 8] },
                ChannelMaskEntry { gamma_name: "g.l1.gamma".into(), bits: vec![1; 8] },
            ],
            degenerate: vec![],
        };
        assert_eq!(flops_ratio(&full, &dims), 1.0);

        let half_bits = vec![1, 0, 1, 0, 1, 0, 1, 0];
        let half = ChannelMasks {
            layers: vec![
                ChannelMaskEntry { gamma_name: "g.l0.gamma".into(), bits: half_bits.clone() },
                ChannelMaskEntry { gamma_name: "g.l1.gamma".into(), bits: half_bits },
            ],
            degenerate: vec![],
        };
        let expect = (8.0 * 4.0 + 4.0 * 4.0 + 4.0 * 8.0) / (64.0 * 3.0);
        assert!((flops_ratio(&half, &dims) - expect).abs() < 1e-15);
    }

    #[test]
    fn flops_ratio_matches_mac_counting_oracle() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 3);
        let mut scales = params.clone();
        let mut rng = rng_from(4);
        for e in &mut scales.entries {
            if e.kind == ParamKind::Gamma {
                for v in e.tensor.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let masks = extract_channel_masks(&scales, 0.4);
        let ratio = flops_ratio(&masks, &cfg.layer_dims());

        // Oracle: count multiplies through the actually shrunk matrices.
        let (_, shrunk) = shrink_generator(&cfg, &scales, &masks);
        let count = |ps: &ParamSet| -> usize {
            ps.entries
                .iter()
                .filter(|e| e.kind == ParamKind::Weight)
                .map(|e| e.tensor.rows() * e.tensor.cols())
                .sum()
        };
        let oracle = count(&shrunk) as f64 / count(&params) as f64;
        assert!((ratio - oracle).abs() < 1e-15, "{ratio} vs {oracle}");
    }

    #[test]
    fn gated_forward_equals_shrunk_forward() {
        let cfg = GenConfig {
            latent_dim: 4,
            hidden: vec![10, 10],
            out_dim: 2,
            activation: Activation::Relu,
            norm: true,
        };
        let mut params = init_generator(&cfg, 11);
        let mut rng = rng_from(5);
        for e in &mut params.entries {
            if e.kind == ParamKind::Gamma {
                for v in e.tensor.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let masks = extract_channel_masks(&params, 0.35);
        assert!(!masks.is_full(), "test needs some dead channels");
        let gates: HashMap<String, Vec<f64>> = masks
            .layers
            .iter()
            .map(|l| (l.gamma_name.clone(), l.bits.iter().map(|&b| b as f64).collect()))
            .collect();
        let gate = |name: &str| gates.get(name).cloned();

        let z = {
            let mut zr = rng_from(6);
            Tensor::matrix(
                7,
                4,
                (0..28).map(|_| zr.sample::<f64, _>(rand_distr::StandardNormal)).collect(),
            )
            .unwrap()
        };

        let full_out = {
            let mut scratch = params.clone();
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &scratch, None, false).unwrap();
            let zv = tape.constant(&z);
            let y = generator_forward(
                &mut tape,
                &cfg,
                &mut scratch,
                &binding,
                zv,
                ForwardMode::Train,
                Some(&gate),
            )
            .unwrap();
            tape.value(y).to_vec()
        };

        let (cfg2, shrunk) = shrink_generator(&cfg, &params, &masks);
        let shrunk_out = {
            let mut scratch = shrunk.clone();
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &scratch, None, false).unwrap();
            let zv = tape.constant(&z);
            let y = generator_forward(
                &mut tape,
                &cfg2,
                &mut scratch,
                &binding,
                zv,
                ForwardMode::Train,
                None,
            )
            .unwrap();
            tape.value(y).to_vec()
        };
        assert_eq!(full_out.len(), shrunk_out.len());
        for (a, b) in full_out.iter().zip(&shrunk_out) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shrunk_weights_are_bit_identical_to_survivors() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 17);
        let mut scales = params.clone();
        let mut rng = rng_from(8);
        for e in &mut scales.entries {
            if e.kind == ParamKind::Gamma {
                for v in e.tensor.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let masks = extract_channel_masks(&scales, 0.5);
        let (_, shrunk) = shrink_generator(&cfg, &params, &masks);
        // First layer: rows all kept (latent), cols filtered by layer-0 mask.
        let keep: Vec<usize> = masks.layers[0]
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect();
        let orig = params.get("g.l0.w").unwrap();
        let small = shrunk.get("g.l0.w").unwrap();
        assert_eq!(small.cols(), keep.len());
        for r in 0..orig.rows() {
            for (sc, &oc) in keep.iter().enumerate() {
                let a = orig.data()[r * orig.cols() + oc];
                let b = small.data()[r * small.cols() + sc];
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn zero_dist_weight_matches_identical_teacher_run() {
        // With no channels below threshold the student equals the
        // teacher, so the distillation term contributes exactly nothing.
        let cfg = TrainConfig {
            steps: 10,
            batch_size: 8,
            ..TrainConfig::desk_scale(crate::datasets::ring8(), 3)
        };
        let mut a = CpTrainer::new(
            cfg.clone(),
            ChannelPruneConfig {
                rho: 0.0,
                dist_weight: 0.0,
                ..ChannelPruneConfig::default()
            },
        )
        .unwrap();
        let mut b = CpTrainer::new(
            cfg,
            ChannelPruneConfig {
                rho: 0.0,
                dist_weight: 7.5,
                ..ChannelPruneConfig::default()
            },
        )
        .unwrap();
        for _ in 0..5 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert!(a.gan.bits_eq(&b.gan));
    }
}
