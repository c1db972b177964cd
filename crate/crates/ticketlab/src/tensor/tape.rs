//! Wengert tape for reverse-mode differentiation.
//!
//! Ops append nodes in construction order, which is a topological order,
//! so one reverse sweep visits every node exactly once. A fresh tape is
//! built per training step; parameters live outside the tape and are
//! re-inserted as leaves each step.

use super::{Result, Tensor, TensorError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[n, f] + [f]`, the bias broadcast.
    AddRow(Var, Var),
    /// `[n, f] * [f]` elementwise per row.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    L1Norm(Var),
    /// Batch standardization with trainable scale/shift; saves what the
    /// backward pass needs.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// `W / sigma` with `sigma = u^T W v`; `u`, `v` are power-iteration
    /// buffers treated as constants.
    SpectralScale {
        w: Var,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
    },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes and gradients; handles from before are invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a leaf, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("node value congruent to its shape")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- primitives ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul", a)?;
        let (k2, n) = self.mat_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            matmul_into(av, bv, &mut out, m, k, n);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_check("add", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Add(a, b), shape, out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_check("sub", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Sub(a, b), shape, out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_check("mul", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Mul(a, b), shape, out, rg))
    }

    fn row_op_check(&self, op: &'static str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (n, f) = self.mat_dims(op, x)?;
        let rs = &self.nodes[r.0].shape;
        if rs.len() != 1 || rs[0] != f {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.nodes[x.0].shape.clone(),
                rhs: rs.clone(),
            });
        }
        Ok((n, f))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, f) = self.row_op_check("add_row", x, b)?;
        let mut out = vec![0.0; n * f];
        {
            let xv = &self.nodes[x.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..n {
                for j in 0..f {
                    out[i * f + j] = xv[i * f + j] + bv[j];
                }
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddRow(x, b), vec![n, f], out, rg))
    }

    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, f) = self.row_op_check("mul_row", x, s)?;
        let mut out = vec![0.0; n * f];
        {
            let xv = &self.nodes[x.0].value;
            let sv = &self.nodes[s.0].value;
            for i in 0..n {
                for j in 0..f {
                    out[i * f + j] = xv[i * f + j] * sv[j];
                }
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Op::MulRow(x, s), vec![n, f], out, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Scale(x, c), shape, out, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::AddScalar(x), shape, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Relu(x), shape, out, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Tanh(x), shape, out, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Sigmoid(x), shape, out, rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        // ln(1 + e^x), computed stably for large |x|.
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > 30.0 { v } else { (1.0 + v.exp()).ln() })
            .collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Softplus(x), shape, out, rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Ln(x), shape, out, rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.clamp(lo, hi)).collect();
        let rg = self.rg(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Clamp(x, lo, hi), shape, out, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), vec![], vec![s], rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let s: f64 = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Mean(x), vec![], vec![s / n], rg)
    }

    pub fn l1_norm(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.iter().map(|v| v.abs()).sum();
        let rg = self.rg(x);
        self.push(Op::L1Norm(x), vec![], vec![s], rg)
    }

    /// Per-feature standardization over the batch dimension, then
    /// `gamma * xhat + beta`. Uses biased batch variance with floor `eps`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, f) = self.row_op_check("batch_norm", x, gamma)?;
        self.row_op_check("batch_norm", x, beta)?;
        let xv = &self.nodes[x.0].value;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                mean[j] += xv[i * f + j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for i in 0..n {
            for j in 0..f {
                let d = xv[i * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                xhat[i * f + j] = (xv[i * f + j] - mean[j]) * inv_std[j];
            }
        }
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                out[i * f + j] = gv[j] * xhat[i * f + j] + bv[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            vec![n, f],
            out,
            rg,
        ))
    }

    /// Batch statistics of a matrix node: per-feature mean and biased variance.
    pub fn batch_stats(&self, x: Var) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes[x.0].shape[0];
        let f = self.nodes[x.0].shape[1];
        let xv = &self.nodes[x.0].value;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                mean[j] += xv[i * f + j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for i in 0..n {
            for j in 0..f {
                let d = xv[i * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        (mean, var)
    }

    /// `W / sigma` with `sigma = u^T W v` clamped away from zero. `u` and
    /// `v` are treated as constants; the caller owns the power iteration.
    pub fn spectral_scale(&mut self, w: Var, u: &[f64], v: &[f64]) -> Result<Var> {
        let (m, n) = self.mat_dims("spectral_scale", w)?;
        if u.len() != m || v.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "spectral_scale",
                lhs: vec![m, n],
                rhs: vec![u.len(), v.len()],
            });
        }
        let wv = &self.nodes[w.0].value;
        let mut sigma = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..n {
                row += wv[i * n + j] * v[j];
            }
            sigma += u[i] * row;
        }
        let sigma = if sigma.abs() < 1e-12 { 1e-12 } else { sigma };
        let out: Vec<f64> = wv.iter().map(|x| x / sigma).collect();
        let rg = self.rg(w);
        Ok(self.push(
            Op::SpectralScale {
                w,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
            },
            vec![m, n],
            out,
            rg,
        ))
    }

    // ---- backward ----

    /// Accumulates `d loss / d leaf` for every recorded node that
    /// requires a gradient. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v).map(|g| {
            Tensor::from_vec(self.nodes[v.0].shape.clone(), g.to_vec())
                .expect("gradient congruent to node shape")
        })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        for (dst, c) in slot.iter_mut().zip(contrib) {
            *dst += c;
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.rg(*a) {
                    // dA = G * B^T
                    let bv = &self.nodes[b.0].value;
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for c in 0..n {
                            let gv = g[r * n + c];
                            if gv != 0.0 {
                                for j in 0..k {
                                    da[r * k + j] += gv * bv[j * n + c];
                                }
                            }
                        }
                    }
                    self.accum(grads, *a, da.into_iter());
                }
                if self.rg(*b) {
                    // dB = A^T * G
                    let av = &self.nodes[a.0].value;
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        for j in 0..k {
                            let avj = av[r * k + j];
                            if avj != 0.0 {
                                for c in 0..n {
                                    db[j * n + c] += avj * g[r * n + c];
                                }
                            }
                        }
                    }
                    self.accum(grads, *b, db.into_iter());
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.iter().copied());
                self.accum(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.iter().copied());
                self.accum(grads, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                self.accum(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b));
                self.accum(grads, *b, g.iter().zip(av).map(|(g, a)| g * a));
            }
            Op::AddRow(x, b) => {
                let f = self.nodes[b.0].value.len();
                self.accum(grads, *x, g.iter().copied());
                if self.rg(*b) {
                    let n = self.nodes[x.0].shape[0];
                    let mut db = vec![0.0; f];
                    for i in 0..n {
                        for j in 0..f {
                            db[j] += g[i * f + j];
                        }
                    }
                    self.accum(grads, *b, db.into_iter());
                }
            }
            Op::MulRow(x, s) => {
                let f = self.nodes[s.0].value.len();
                let n = self.nodes[x.0].shape[0];
                if self.rg(*x) {
                    let sv = &self.nodes[s.0].value;
                    let contrib = (0..n * f).map(|idx| g[idx] * sv[idx % f]);
                    self.accum(grads, *x, contrib);
                }
                if self.rg(*s) {
                    let xv = &self.nodes[x.0].value;
                    let mut ds = vec![0.0; f];
                    for i in 0..n {
                        for j in 0..f {
                            ds[j] += g[i * f + j] * xv[i * f + j];
                        }
                    }
                    self.accum(grads, *s, ds.into_iter());
                }
            }
            Op::Scale(x, c) => {
                self.accum(grads, *x, g.iter().map(|v| v * c));
            }
            Op::AddScalar(x) => {
                self.accum(grads, *x, g.iter().copied());
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                self.accum(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Tanh(x) => {
                let yv = &self.nodes[i].value;
                self.accum(grads, *x, g.iter().zip(yv).map(|(g, y)| g * (1.0 - y * y)));
            }
            Op::Sigmoid(x) => {
                let yv = &self.nodes[i].value;
                self.accum(grads, *x, g.iter().zip(yv).map(|(g, y)| g * y * (1.0 - y)));
            }
            Op::Softplus(x) => {
                let xv = &self.nodes[x.0].value;
                self.accum(grads, *x, g.iter().zip(xv).map(|(g, x)| g * sigmoid(*x)));
            }
            Op::Ln(x) => {
                let xv = &self.nodes[x.0].value;
                self.accum(grads, *x, g.iter().zip(xv).map(|(g, x)| g / x));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &self.nodes[x.0].value;
                self.accum(
                    grads,
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 }),
                );
            }
            Op::Sum(x) => {
                let gv = g[0];
                let len = self.nodes[x.0].value.len();
                self.accum(grads, *x, std::iter::repeat(gv).take(len));
            }
            Op::Mean(x) => {
                let len = self.nodes[x.0].value.len();
                let gv = g[0] / len as f64;
                self.accum(grads, *x, std::iter::repeat(gv).take(len));
            }
            Op::L1Norm(x) => {
                let gv = g[0];
                let xv = &self.nodes[x.0].value;
                self.accum(grads, *x, xv.iter().map(|x| gv * sgn(*x)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.nodes[x.0].shape[0];
                let f = self.nodes[x.0].shape[1];
                if self.rg(*beta) {
                    let mut db = vec![0.0; f];
                    for i in 0..n {
                        for j in 0..f {
                            db[j] += g[i * f + j];
                        }
                    }
                    self.accum(grads, *beta, db.into_iter());
                }
                if self.rg(*gamma) {
                    let mut dg = vec![0.0; f];
                    for i in 0..n {
                        for j in 0..f {
                            dg[j] += g[i * f + j] * xhat[i * f + j];
                        }
                    }
                    self.accum(grads, *gamma, dg.into_iter());
                }
                if self.rg(*x) {
                    let gv = &self.nodes[gamma.0].value;
                    // dxhat = g * gamma; dx via the standard batch-norm backward.
                    let mut sum_dxhat = vec![0.0; f];
                    let mut sum_dxhat_xhat = vec![0.0; f];
                    for i in 0..n {
                        for j in 0..f {
                            let d = g[i * f + j] * gv[j];
                            sum_dxhat[j] += d;
                            sum_dxhat_xhat[j] += d * xhat[i * f + j];
                        }
                    }
                    let nn = n as f64;
                    let mut dx = vec![0.0; n * f];
                    for i in 0..n {
                        for j in 0..f {
                            let dxhat = g[i * f + j] * gv[j];
                            dx[i * f + j] = inv_std[j] / nn
                                * (nn * dxhat
                                    - sum_dxhat[j]
                                    - xhat[i * f + j] * sum_dxhat_xhat[j]);
                        }
                    }
                    self.accum(grads, *x, dx.into_iter());
                }
            }
            Op::SpectralScale { w, u, v, sigma } => {
                if self.rg(*w) {
                    let wv = &self.nodes[w.0].value;
                    let m = u.len();
                    let n = v.len();
                    // d/dW (W/sigma) = G/sigma - (sum G .* W)/sigma^2 * u v^T
                    let gw: f64 = g.iter().zip(wv).map(|(g, w)| g * w).sum();
                    let coef = gw / (sigma * sigma);
                    let mut dw = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            dw[r * n + c] = g[r * n + c] / sigma - coef * u[r] * v[c];
                        }
                    }
                    self.accum(grads, *w, dw.into_iter());
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `C = A * B` for row-major matrices; `out` must be zeroed.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * n..(r + 1) * n];
        for (j, &aj) in arow.iter().enumerate() {
            if aj != 0.0 {
                let brow = &b[j * n..(j + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aj * bv;
                }
            }
        }
    }
}
