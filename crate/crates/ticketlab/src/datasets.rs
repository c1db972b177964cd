//! Deterministic synthetic 2-D data generators.
//!
//! Three families: a mode ring (Gaussian bumps on a circle, jittered in
//! polar coordinates), a square grid mixture, and two moons. Sample `i`
//! of a stream is a pure function of `(spec, stream seed, i)`, so any
//! batch can be regenerated without replaying the stream.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix, rng_from};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),
    #[error("dataset `{id}`: {detail}")]
    BadSpec { id: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Ring,
    GridMixture,
    TwoMoons,
}

impl std::str::FromStr for DatasetKind {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s {
            "ring" => Ok(DatasetKind::Ring),
            "grid-mixture" => Ok(DatasetKind::GridMixture),
            "two-moons" => Ok(DatasetKind::TwoMoons),
            other => Err(DatasetError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub kind: DatasetKind,
    /// Ring radius, grid half-extent, or moon radius.
    pub radius: f64,
    /// Mode count: ring modes, grid cells (perfect square), ignored for moons.
    pub components: usize,
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |detail: &str| DatasetError::BadSpec {
            id: self.id.clone(),
            detail: detail.to_string(),
        };
        if self.radius <= 0.0 {
            return Err(bad("radius must be positive"));
        }
        if self.noise < 0.0 {
            return Err(bad("noise must be non-negative"));
        }
        if self.components == 0 {
            return Err(bad("components must be positive"));
        }
        if self.kind == DatasetKind::GridMixture {
            let side = (self.components as f64).sqrt().round() as usize;
            if side * side != self.components {
                return Err(bad("grid-mixture components must be a perfect square"));
            }
        }
        Ok(())
    }
}

/// 8 Gaussian modes on the unit circle; the canonical source task.
pub fn ring8() -> DatasetSpec {
    DatasetSpec {
        id: "ring8".into(),
        kind: DatasetKind::Ring,
        radius: 1.0,
        components: 8,
        noise: 0.05,
        seed: 7,
    }
}

/// 5x5 grid mixture; the canonical transfer target.
pub fn grid25() -> DatasetSpec {
    DatasetSpec {
        id: "grid25".into(),
        kind: DatasetKind::GridMixture,
        radius: 2.0,
        components: 25,
        noise: 0.05,
        seed: 11,
    }
}

pub fn moons() -> DatasetSpec {
    DatasetSpec {
        id: "moons".into(),
        kind: DatasetKind::TwoMoons,
        radius: 1.0,
        components: 2,
        noise: 0.05,
        seed: 13,
    }
}

pub fn builtin(id: &str) -> Option<DatasetSpec> {
    match id {
        "ring8" => Some(ring8()),
        "grid25" => Some(grid25()),
        "moons" => Some(moons()),
        _ => None,
    }
}

/// One sample as a pure function of `(spec, stream, index)`.
fn sample_at(spec: &DatasetSpec, stream: u64, index: u64) -> [f64; 2] {
    let mut rng = rng_from(mix(&[spec.seed, stream, index]));
    match spec.kind {
        DatasetKind::Ring => {
            let mode = rng.gen_range(0..spec.components) as f64;
            let d_theta: f64 = rng.sample(StandardNormal);
            let d_r: f64 = rng.sample(StandardNormal);
            // Polar jitter: radial sd = noise exactly, arc-length sd = noise.
            let theta = std::f64::consts::TAU * mode / spec.components as f64
                + d_theta * spec.noise / spec.radius;
            let r = spec.radius + d_r * spec.noise;
            [r * theta.cos(), r * theta.sin()]
        }
        DatasetKind::GridMixture => {
            let side = (spec.components as f64).sqrt().round() as usize;
            let cell = rng.gen_range(0..spec.components);
            let (row, col) = (cell / side, cell % side);
            let center = |k: usize| {
                if side == 1 {
                    0.0
                } else {
                    -spec.radius + 2.0 * spec.radius * k as f64 / (side - 1) as f64
                }
            };
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            [
                center(col) + dx * spec.noise,
                center(row) + dy * spec.noise,
            ]
        }
        DatasetKind::TwoMoons => {
            let upper = rng.gen_range(0..2u8) == 0;
            let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let r = spec.radius;
            let (cx, cy) = if upper {
                (r * t.cos(), r * t.sin())
            } else {
                (r - r * t.cos(), r * 0.5 - r * t.sin())
            };
            [cx + dx * spec.noise, cy + dy * spec.noise]
        }
    }
}

/// Draws `n` i.i.d. samples as an `[n, 2]` tensor, deterministic in `seed`.
pub fn sample(spec: &DatasetSpec, n: usize, seed: u64) -> Tensor {
    let mut data = Vec::with_capacity(n * 2);
    for i in 0..n {
        let p = sample_at(spec, seed, i as u64);
        data.push(p[0]);
        data.push(p[1]);
    }
    Tensor::from_vec(vec![n, 2], data).expect("n x 2 layout")
}

/// Stream tag for held-out evaluation data; fixed per dataset so every
/// run on a dataset is scored against the same reference sample.
pub const HELD_OUT_STREAM: u64 = 0x48454c44; // "HELD"

pub fn held_out(spec: &DatasetSpec, n: usize) -> Tensor {
    sample(spec, n, mix(&[HELD_OUT_STREAM]))
}
