//! Generator and discriminator definitions: MLPs with scaled
//! normalization layers (housing the per-channel scales) and spectral
//! normalization on discriminator weights.
//!
//! Parameters live in a `ParamSet` of named tensors; forward passes bind
//! them onto a tape (optionally through a pruning mask, which also masks
//! the gradients) and return the output node.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pruning::Mask;
use crate::rng::{mix, rng_from, RngState};
use crate::tensor::{Result, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub activation: Activation,
    pub norm: bool,
}

impl GenConfig {
    /// z in R^8 -> 3 hidden layers (width 64, ReLU, scaled norm) -> R^2.
    pub fn desk_scale() -> Self {
        GenConfig {
            latent_dim: 8,
            hidden: vec![64, 64, 64],
            out_dim: 2,
            activation: Activation::Relu,
            norm: true,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(&self.hidden);
        dims.push(self.out_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub spectral_norm: bool,
    /// Scaled normalization layers in the discriminator (off by default;
    /// channel pruning turns them on to give the discriminator scales).
    pub norm: bool,
    /// Power iterations per training forward.
    pub power_iters: usize,
}

impl DiscConfig {
    /// R^2 -> 3 hidden layers (width 64, spectral normed) -> scalar logit.
    pub fn desk_scale() -> Self {
        DiscConfig {
            in_dim: 2,
            hidden: vec![64, 64, 64],
            activation: Activation::Relu,
            spectral_norm: true,
            norm: false,
            power_iters: 1,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered named tensors for one network, plus non-trainable buffers
/// (power-iteration vectors, last-batch normalization statistics).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
    pub buffers: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }

    /// Flat copy of all trainable values, in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Writes a flat vector (as produced by `flatten`) back into entries.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.tensor.numel();
            e.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat vector congruent to ParamSet");
    }

    pub fn bits_eq(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.bits_eq(&b.tensor))
    }
}

/// Immutable capture of a ParamSet at a training step.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub params: ParamSet,
    pub rng: RngState,
}

fn he_matrix(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let sd = (2.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * sd)
        .collect();
    Tensor::from_vec(vec![fan_in, fan_out], data).expect("matrix layout")
}

fn unit_vector(rng: &mut impl Rng, n: usize) -> Tensor {
    let mut data: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut data {
        *v /= norm;
    }
    Tensor::vector(data)
}

/// He-style initialization, a deterministic function of (config, seed).
/// Scales start at one, shifts and biases at zero.
pub fn init_generator(cfg: &GenConfig, seed: u64) -> ParamSet {
    let mut rng = rng_from(mix(&[seed, 0x47454e]));
    let dims = cfg.layer_dims();
    let mut ps = ParamSet::default();
    for l in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        ps.entries.push(ParamEntry {
            name: format!("g.l{l}.w"),
            kind: ParamKind::Weight,
            tensor: he_matrix(&mut rng, fan_in, fan_out),
        });
        ps.entries.push(ParamEntry {
            name: format!("g.l{l}.b"),
            kind: ParamKind::Bias,
            tensor: Tensor::zeros(vec![fan_out]),
        });
        let is_hidden = l < dims.len() - 2;
        if is_hidden && cfg.norm {
            ps.entries.push(ParamEntry {
                name: format!("g.l{l}.gamma"),
                kind: ParamKind::Gamma,
                tensor: Tensor::full(vec![fan_out], 1.0),
            });
            ps.entries.push(ParamEntry {
                name: format!("g.l{l}.beta"),
                kind: ParamKind::Beta,
                tensor: Tensor::zeros(vec![fan_out]),
            });
            ps.buffers.push((format!("g.l{l}.norm_mean"), Tensor::zeros(vec![fan_out])));
            ps.buffers.push((format!("g.l{l}.norm_var"), Tensor::full(vec![fan_out], 1.0)));
        }
    }
    ps
}

pub fn init_discriminator(cfg: &DiscConfig, seed: u64) -> ParamSet {
    let mut rng = rng_from(mix(&[seed, 0x44495343]));
    let dims = cfg.layer_dims();
    let mut ps = ParamSet::default();
    for l in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        ps.entries.push(ParamEntry {
            name: format!("d.l{l}.w"),
            kind: ParamKind::Weight,
            tensor: he_matrix(&mut rng, fan_in, fan_out),
        });
        ps.entries.push(ParamEntry {
            name: format!("d.l{l}.b"),
            kind: ParamKind::Bias,
            tensor: Tensor::zeros(vec![fan_out]),
        });
        if cfg.spectral_norm {
            ps.buffers.push((format!("d.l{l}.u"), unit_vector(&mut rng, fan_in)));
            ps.buffers.push((format!("d.l{l}.v"), unit_vector(&mut rng, fan_out)));
        }
        let is_hidden = l < dims.len() - 2;
        if is_hidden && cfg.norm {
            ps.entries.push(ParamEntry {
                name: format!("d.l{l}.gamma"),
                kind: ParamKind::Gamma,
                tensor: Tensor::full(vec![fan_out], 1.0),
            });
            ps.entries.push(ParamEntry {
                name: format!("d.l{l}.beta"),
                kind: ParamKind::Beta,
                tensor: Tensor::zeros(vec![fan_out]),
            });
            ps.buffers.push((format!("d.l{l}.norm_mean"), Tensor::zeros(vec![fan_out])));
            ps.buffers.push((format!("d.l{l}.norm_var"), Tensor::full(vec![fan_out], 1.0)));
        }
    }
    ps
}

/// One-sided power iteration updates followed by `sigma = u^T W v`;
/// returns `W / sigma` and leaves `u`, `v` renormalized in place.
pub fn spectral_normalize(w: &Tensor, u: &mut Tensor, v: &mut Tensor, iters: usize) -> Tensor {
    let (m, n) = (w.rows(), w.cols());
    power_iterate(w.data(), m, n, u.data_mut(), v.data_mut(), iters);
    let sigma = sigma_of(w.data(), m, n, u.data(), v.data());
    let sigma = if sigma.abs() < 1e-12 { 1e-12 } else { sigma };
    let data = w.data().iter().map(|x| x / sigma).collect();
    Tensor::from_vec(vec![m, n], data).expect("same layout")
}

fn power_iterate(w: &[f64], m: usize, n: usize, u: &mut [f64], v: &mut [f64], iters: usize) {
    for _ in 0..iters {
        // v <- normalize(W^T u)
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..m {
                s += w[i * n + j] * u[i];
            }
            v[j] = s;
        }
        normalize(v);
        // u <- normalize(W v)
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                s += w[i * n + j] * v[j];
            }
            u[i] = s;
        }
        normalize(u);
    }
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Degenerate direction; keep a deterministic unit vector.
        for v in x.iter_mut() {
            *v = 0.0;
        }
        x[0] = 1.0;
    } else {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

fn sigma_of(w: &[f64], m: usize, n: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut sigma = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..n {
            row += w[i * n + j] * v[j];
        }
        sigma += u[i] * row;
    }
    sigma
}

/// Per-feature batch standardization, then `gamma * xhat + beta`.
pub fn scaled_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(gamma);
    let b = tape.constant(beta);
    let y = tape.batch_norm(xv, g, b, NORM_EPS)?;
    Ok(tape.to_tensor(y))
}

/// How a forward pass treats normalization statistics and power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics; updates norm-stat buffers and runs power iteration.
    Train,
    /// Batch statistics, but leaves every buffer untouched (teacher passes).
    TrainFrozen,
    /// Last-batch statistics, no buffer updates.
    Eval,
}

/// Parameter leaves bound onto a tape, parallel to `ParamSet::entries`.
/// Weight entries are multiplied by their mask, so the forward pass sees
/// `m ⊙ θ` and gradients read at the leaves vanish at pruned positions.
pub struct Binding {
    /// Raw parameter leaves; gradients are read here.
    pub leaves: Vec<Var>,
    /// Masked values; forward passes use these.
    pub bound: Vec<Var>,
}

pub fn bind_params(
    tape: &mut Tape,
    params: &ParamSet,
    mask: Option<&Mask>,
    trainable: bool,
) -> Result<Binding> {
    let mut leaves = Vec::with_capacity(params.entries.len());
    let mut bound_vars = Vec::with_capacity(params.entries.len());
    for e in &params.entries {
        let leaf = if trainable {
            tape.param(&e.tensor)
        } else {
            tape.constant(&e.tensor)
        };
        let bound = match (e.kind, mask.and_then(|m| m.bits(&e.name))) {
            (ParamKind::Weight, Some(bits)) => {
                let m = Tensor::from_vec(
                    e.tensor.shape().to_vec(),
                    bits.iter().map(|&b| b as f64).collect(),
                )
                .expect("mask congruent");
                let mv = tape.constant(&m);
                tape.mul(leaf, mv)?
            }
            _ => leaf,
        };
        leaves.push(leaf);
        bound_vars.push(bound);
    }
    Ok(Binding {
        leaves,
        bound: bound_vars,
    })
}

/// Optional per-layer channel gates derived from normalization scales;
/// index by gamma entry name.
pub type ChannelGates<'a> = &'a dyn Fn(&str) -> Option<Vec<f64>>;

struct LayerRefs {
    w: usize,
    b: usize,
    gamma: Option<usize>,
    beta: Option<usize>,
}

fn layer_refs(params: &ParamSet, prefix: &str, layers: usize) -> Vec<LayerRefs> {
    let idx = |name: &str| params.entries.iter().position(|e| e.name == name);
    (0..layers)
        .map(|l| LayerRefs {
            w: idx(&format!("{prefix}.l{l}.w")).expect("weight entry"),
            b: idx(&format!("{prefix}.l{l}.b")).expect("bias entry"),
            gamma: idx(&format!("{prefix}.l{l}.gamma")),
            beta: idx(&format!("{prefix}.l{l}.beta")),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn norm_layer(
    tape: &mut Tape,
    params: &mut ParamSet,
    binding: &Binding,
    refs: &LayerRefs,
    buf_prefix: &str,
    x: Var,
    mode: ForwardMode,
    gates: Option<ChannelGates>,
) -> Result<Var> {
    let gamma_idx = refs.gamma.expect("norm layer has gamma");
    let beta_idx = refs.beta.expect("norm layer has beta");
    let gamma_name = params.entries[gamma_idx].name.clone();
    let gamma_var = binding.bound[gamma_idx];
    let beta_var = binding.bound[beta_idx];
    let y = match mode {
        ForwardMode::Train | ForwardMode::TrainFrozen => {
            let y = tape.batch_norm(x, gamma_var, beta_var, NORM_EPS)?;
            if mode == ForwardMode::Train {
                let (mean, var) = tape.batch_stats(x);
                let f = mean.len();
                *params
                    .buffer_mut(&format!("{buf_prefix}.norm_mean"))
                    .expect("norm mean buffer") = Tensor::from_vec(vec![f], mean)?;
                *params
                    .buffer_mut(&format!("{buf_prefix}.norm_var"))
                    .expect("norm var buffer") = Tensor::from_vec(vec![f], var)?;
            }
            y
        }
        ForwardMode::Eval => {
            let mean = params
                .buffer(&format!("{buf_prefix}.norm_mean"))
                .expect("norm mean buffer")
                .clone();
            let var = params
                .buffer(&format!("{buf_prefix}.norm_var"))
                .expect("norm var buffer")
                .clone();
            let neg_mean = Tensor::vector(mean.data().iter().map(|m| -m).collect());
            let inv_std =
                Tensor::vector(var.data().iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect());
            let nm = tape.constant(&neg_mean);
            let is = tape.constant(&inv_std);
            let centered = tape.add_row(x, nm)?;
            let xhat = tape.mul_row(centered, is)?;
            let scaled = tape.mul_row(xhat, gamma_var)?;
            tape.add_row(scaled, beta_var)?
        }
    };
    // Channel gates silence the whole channel (scale and shift), so a
    // gated channel contributes nothing downstream and structural
    // removal preserves the output.
    if let Some(g) = gates {
        if let Some(gate) = g(&gamma_name) {
            let gate_t = Tensor::vector(gate);
            let gv = tape.constant(&gate_t);
            return tape.mul_row(y, gv);
        }
    }
    Ok(y)
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Forward pass of the generator; `z` must already be bound on the tape.
#[allow(clippy::too_many_arguments)]
pub fn generator_forward(
    tape: &mut Tape,
    cfg: &GenConfig,
    params: &mut ParamSet,
    binding: &Binding,
    z: Var,
    mode: ForwardMode,
    gates: Option<ChannelGates>,
) -> Result<Var> {
    let layers = cfg.layer_dims().len() - 1;
    let refs = layer_refs(params, "g", layers);
    let mut x = z;
    for (l, r) in refs.iter().enumerate() {
        let lin = tape.matmul(x, binding.bound[r.w])?;
        x = tape.add_row(lin, binding.bound[r.b])?;
        let is_hidden = l < layers - 1;
        if is_hidden {
            if r.gamma.is_some() {
                x = norm_layer(tape, params, binding, r, &format!("g.l{l}"), x, mode, gates)?;
            }
            x = activate(tape, x, cfg.activation);
        }
    }
    Ok(x)
}

/// Forward pass of the discriminator, returning per-sample logits `[n, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_forward(
    tape: &mut Tape,
    cfg: &DiscConfig,
    params: &mut ParamSet,
    binding: &Binding,
    x_in: Var,
    mode: ForwardMode,
    gates: Option<ChannelGates>,
) -> Result<Var> {
    let layers = cfg.layer_dims().len() - 1;
    let refs = layer_refs(params, "d", layers);
    let mut x = x_in;
    for (l, r) in refs.iter().enumerate() {
        let mut w_var = binding.bound[r.w];
        if cfg.spectral_norm {
            let w_val = Tensor::from_vec(tape.shape(w_var).to_vec(), tape.value(w_var).to_vec())?;
            let (u_name, v_name) = (format!("d.l{l}.u"), format!("d.l{l}.v"));
            if mode == ForwardMode::Train {
                let mut u = params.buffer(&u_name).expect("u buffer").clone();
                let mut v = params.buffer(&v_name).expect("v buffer").clone();
                power_iterate(
                    w_val.data(),
                    w_val.rows(),
                    w_val.cols(),
                    u.data_mut(),
                    v.data_mut(),
                    cfg.power_iters,
                );
                *params.buffer_mut(&u_name).expect("u buffer") = u;
                *params.buffer_mut(&v_name).expect("v buffer") = v;
            }
            let u = params.buffer(&u_name).expect("u buffer");
            let v = params.buffer(&v_name).expect("v buffer");
            w_var = tape.spectral_scale(w_var, u.data(), v.data())?;
        }
        let lin = tape.matmul(x, w_var)?;
        x = tape.add_row(lin, binding.bound[r.b])?;
        let is_hidden = l < layers - 1;
        if is_hidden {
            if r.gamma.is_some() {
                x = norm_layer(tape, params, binding, r, &format!("d.l{l}"), x, mode, gates)?;
            }
            x = activate(tape, x, cfg.activation);
        }
    }
    Ok(x)
}

/// Convenience sampler: runs the generator in eval mode on `n` latent
/// draws and returns the `[n, out_dim]` samples.
pub fn generate_samples(
    cfg: &GenConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(n * cfg.out_dim);
    let mut scratch = params.clone();
    let batch = 512;
    let mut done = 0;
    while done < n {
        let b = batch.min(n - done);
        let z_data: Vec<f64> = (0..b * cfg.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = Tensor::from_vec(vec![b, cfg.latent_dim], z_data)?;
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, &scratch, mask, false)?;
        let zv = tape.constant(&z);
        let y = generator_forward(&mut tape, cfg, &mut scratch, &binding, zv, ForwardMode::Eval, None)?;
        out.extend_from_slice(tape.value(y));
        done += b;
    }
    Tensor::from_vec(vec![n, cfg.out_dim], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning;

    #[test]
    fn init_is_deterministic_in_config_and_seed() {
        let cfg = GenConfig::desk_scale();
        let a = init_generator(&cfg, 3);
        let b = init_generator(&cfg, 3);
        assert!(a.bits_eq(&b));
        let c = init_generator(&cfg, 4);
        assert!(!c.bits_eq(&a));
    }

    #[test]
    fn gamma_initialized_to_ones() {
        let ps = init_generator(&GenConfig::desk_scale(), 1);
        let gamma = ps.get("g.l0.gamma").unwrap();
        assert_eq!(gamma.shape(), &[64]);
        assert!(gamma.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn spectral_normalize_diagonal() {
        let w = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let mut u = Tensor::vector(vec![0.8, 0.6]);
        let mut v = Tensor::vector(vec![0.6, 0.8]);
        let out = spectral_normalize(&w, &mut u, &mut v, 200);
        assert!((out.data()[0] - 1.0).abs() < 1e-9);
        assert!((out.data()[3] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn spectral_normalize_identity() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut u = Tensor::vector(vec![1.0, 0.0]);
        let mut v = Tensor::vector(vec![1.0, 0.0]);
        let out = spectral_normalize(&w, &mut u, &mut v, 50);
        for (i, &x) in out.data().iter().enumerate() {
            let expect = if i % 3 == 0 { 1.0 } else { 0.0 };
            assert!((x - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn spectral_normalize_zero_matrix_is_safe() {
        let w = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let mut u = Tensor::vector(vec![1.0, 0.0]);
        let mut v = Tensor::vector(vec![1.0, 0.0]);
        let out = spectral_normalize(&w, &mut u, &mut v, 3);
        assert!(out.data().iter().all(|v| v.is_finite() && *v == 0.0));
    }

    #[test]
    fn spectral_sigma_matches_svd_oracle() {
        use nalgebra::DMatrix;
        let mut rng = rng_from(17);
        for _ in 0..10 {
            let data: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let w = Tensor::matrix(8, 8, data.clone()).unwrap();
            let mut u = unit_vector(&mut rng, 8);
            let mut v = unit_vector(&mut rng, 8);
            power_iterate(w.data(), 8, 8, u.data_mut(), v.data_mut(), 50);
            let sigma = sigma_of(w.data(), 8, 8, u.data(), v.data());
            let svd = DMatrix::from_row_slice(8, 8, &data).svd(false, false);
            let top = svd.singular_values.max();
            assert!((sigma - top).abs() < 1e-6, "{sigma} vs {top}");
        }
    }

    #[test]
    fn scaled_norm_zero_gamma_zeroes_output() {
        let x = Tensor::matrix(4, 2, vec![1.0, -5.0, 2.0, 3.0, 0.5, 7.0, -2.0, 0.0]).unwrap();
        let gamma = Tensor::zeros(vec![2]);
        let beta = Tensor::zeros(vec![2]);
        let y = scaled_norm(&x, &gamma, &beta).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_norm_identity_on_standardized_input() {
        // Mean 0, biased variance 1 per feature, large enough magnitude
        // that the variance floor is negligible.
        let x = Tensor::matrix(4, 1, vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let gamma = Tensor::full(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let y = scaled_norm(&x, &gamma, &beta).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn scaled_norm_moments_match_gamma_beta() {
        let mut rng = rng_from(5);
        let n = 256;
        let data: Vec<f64> = (0..n * 3)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 10.0)
            .collect();
        let x = Tensor::matrix(n, 3, data).unwrap();
        let gamma = Tensor::vector(vec![1.0, 0.5, 2.0]);
        let beta = Tensor::vector(vec![0.0, -1.0, 3.0]);
        let y = scaled_norm(&x, &gamma, &beta).unwrap();
        for f in 0..3 {
            let col: Vec<f64> = (0..n).map(|i| y.data()[i * 3 + f]).collect();
            let mean: f64 = col.iter().sum::<f64>() / n as f64;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!((mean - beta.data()[f]).abs() < 1e-6, "mean f{f}");
            let gg = gamma.data()[f] * gamma.data()[f];
            assert!((var - gg).abs() < 1e-6, "var f{f}: {var} vs {gg}");
        }
    }

    #[test]
    fn mask_commutes_with_pre_zeroing() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 21);
        let mask = pruning::random_mask(&params, None, 0.5, 9).unwrap();
        let z = Tensor::matrix(6, cfg.latent_dim, {
            let mut rng = rng_from(2);
            (0..6 * cfg.latent_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .unwrap();

        let run = |ps: &ParamSet, mask: Option<&Mask>| {
            let mut scratch = ps.clone();
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &scratch, mask, false).unwrap();
            let zv = tape.constant(&z);
            let y = generator_forward(
                &mut tape,
                &cfg,
                &mut scratch,
                &binding,
                zv,
                ForwardMode::Train,
                None,
            )
            .unwrap();
            tape.value(y).to_vec()
        };

        let masked = run(&params, Some(&mask));
        let zeroed = pruning::apply_mask(&params, &mask).unwrap();
        let pre_zeroed = run(&zeroed, None);
        assert_eq!(masked, pre_zeroed);
    }

    #[test]
    fn all_ones_mask_matches_unmasked_forward() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 8);
        let ones = pruning::Mask::all_ones(&params);
        let z = Tensor::matrix(3, cfg.latent_dim, vec![0.3; 3 * cfg.latent_dim]).unwrap();
        let run = |mask: Option<&Mask>| {
            let mut scratch = params.clone();
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &scratch, mask, false).unwrap();
            let zv = tape.constant(&z);
            let y = generator_forward(
                &mut tape,
                &cfg,
                &mut scratch,
                &binding,
                zv,
                ForwardMode::Train,
                None,
            )
            .unwrap();
            tape.value(y).to_vec()
        };
        assert_eq!(run(Some(&ones)), run(None));
    }

    #[test]
    fn all_zero_final_layer_outputs_bias() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 8);
        let mut mask = pruning::Mask::all_ones(&params);
        mask.zero_tensor("g.l3.w");
        let mut scratch = params.clone();
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, &scratch, Some(&mask), false).unwrap();
        let z = Tensor::matrix(4, cfg.latent_dim, vec![0.7; 4 * cfg.latent_dim]).unwrap();
        let zv = tape.constant(&z);
        let y = generator_forward(
            &mut tape,
            &cfg,
            &mut scratch,
            &binding,
            zv,
            ForwardMode::Train,
            None,
        )
        .unwrap();
        let bias = params.get("g.l3.b").unwrap();
        for row in tape.value(y).chunks(cfg.out_dim) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn discriminator_spectral_bound_after_convergence() {
        use nalgebra::DMatrix;
        let cfg = DiscConfig {
            power_iters: 50,
            ..DiscConfig::desk_scale()
        };
        let mut params = init_discriminator(&cfg, 33);
        // Scale weights up so normalization has something to do.
        for e in &mut params.entries {
            if e.kind == ParamKind::Weight {
                for v in e.tensor.data_mut() {
                    *v *= 3.0;
                }
            }
        }
        let x = Tensor::matrix(8, 2, {
            let mut rng = rng_from(1);
            (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .unwrap();
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, &params, None, false).unwrap();
        let xv = tape.constant(&x);
        let mut scratch = params.clone();
        discriminator_forward(
            &mut tape,
            &cfg,
            &mut scratch,
            &binding,
            xv,
            ForwardMode::Train,
            None,
        )
        .unwrap();
        // Re-run the normalization against the converged buffers and check
        // the top singular value of each normalized matrix.
        for l in 0..4 {
            let w = scratch.get(&format!("d.l{l}.w")).unwrap().clone();
            let mut u = scratch.buffer(&format!("d.l{l}.u")).unwrap().clone();
            let mut v = scratch.buffer(&format!("d.l{l}.v")).unwrap().clone();
            let wn = spectral_normalize(&w, &mut u, &mut v, 50);
            let svd = DMatrix::from_row_slice(w.rows(), w.cols(), wn.data()).svd(false, false);
            let top = svd.singular_values.max();
            assert!((top - 1.0).abs() < 1e-3, "layer {l}: {top}");
        }
    }

    #[test]
    fn gamma_gating_makes_channel_weights_inert() {
        let cfg = GenConfig::desk_scale();
        let params = init_generator(&cfg, 77);
        let z = Tensor::matrix(5, cfg.latent_dim, {
            let mut rng = rng_from(3);
            (0..5 * cfg.latent_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .unwrap();
        let channel = 13;

        let run = |ps: &ParamSet| {
            let mut scratch = ps.clone();
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
                None,
            )
            .unwrap();
            tape.value(y).to_vec()
        };

        let mut gated = params.clone();
        gated.get_mut("g.l1.gamma").unwrap().data_mut()[channel] = 0.0;
        let base = run(&gated);

        // Perturb every weight feeding the gated channel; output must not move.
        let mut perturbed = gated.clone();
        {
            let w = perturbed.get_mut("g.l1.w").unwrap();
            let cols = w.cols();
            let rows = w.rows();
            for r in 0..rows {
                w.data_mut()[r * cols + channel] += 5.0;
            }
        }
        perturbed.get_mut("g.l1.b").unwrap().data_mut()[channel] += 3.0;
        let moved = run(&perturbed);
        assert_eq!(base, moved);
    }
}
