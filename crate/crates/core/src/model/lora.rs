//! Low-rank adapters over frozen linear maps.
//!
//! An adapted projection computes `h = W₀x + s·B(A·drop(x))` where `W₀` is
//! `d×k` and frozen, `A` is `r×k`, `B` is `d×r` and `s = alpha / r`. `B`
//! starts at zero so the adapted map is exactly `W₀` until training moves it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LoraConfig, ModelError};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Standard deviation of the Gaussian initialisation of `A`.
pub const LORA_A_INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    base: Tensor,
    a: Tensor,
    b: Tensor,
    scaling: f32,
    dropout: f32,
}

impl LoraAdapter {
    /// Wraps `base` (`d×k`) with `A ~ N(0, 0.02²)` and `B = 0`.
    pub fn new(base: Tensor, config: &LoraConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        if base.ndim() != 2 {
            return Err(NumericsError::RankMismatch { op: "lora", expected: 2, dims: base.dims().to_vec() }.into());
        }
        let (d, k) = (base.dims()[0], base.dims()[1]);
        if config.rank == 0 || config.rank > d.min(k) {
            return Err(ModelError::Config(format!("LoRA rank {} must lie in 1..={}", config.rank, d.min(k))));
        }
        let a = gaussian(&[config.rank, k], LORA_A_INIT_STD, rng);
        let b = Tensor::zeros(&[d, config.rank]);
        Self::from_parts(base, a, b, config.scaling(), config.dropout)
    }

    pub fn from_parts(base: Tensor, a: Tensor, b: Tensor, scaling: f32, dropout: f32) -> Result<Self, ModelError> {
        let shape_err = || NumericsError::ShapeMismatch { op: "lora", lhs: a.dims().to_vec(), rhs: b.dims().to_vec() };
        if base.ndim() != 2 || a.ndim() != 2 || b.ndim() != 2 {
            return Err(shape_err().into());
        }
        let (d, k) = (base.dims()[0], base.dims()[1]);
        let r = a.dims()[0];
        if a.dims()[1] != k || b.dims() != [d, r] {
            return Err(shape_err().into());
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(ModelError::Config("LoRA dropout must lie in [0, 1)".into()));
        }
        Ok(Self { base, a, b, scaling, dropout })
    }

    pub fn base(&self) -> &Tensor {
        &self.base
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn scaling(&self) -> f32 {
        self.scaling
    }

    pub fn rank(&self) -> usize {
        self.a.dims()[0]
    }

    /// `W₀ + s·B·A`. The adapter itself is untouched.
    pub fn merge(&self) -> Tensor {
        let delta = self.b.matmul(&self.a).expect("factor shapes checked at construction");
        self.base.add(&delta.scale(self.scaling)).expect("delta has the base shape")
    }

    /// Applies the adapted map to each row of `x` (`n×k` → `n×d`).
    ///
    /// Dropout on the adapter input is only drawn when `training` is set.
    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant_ref(x);
        let base = g.constant_ref(&self.base);
        let a = g.constant_ref(&self.a);
        let b = g.constant_ref(&self.b);
        let dropout = (training && self.dropout > 0.0).then_some((self.dropout, rng));
        let out = lora_linear(&mut g, xv, base, Some((a, b)), self.scaling, dropout)?;
        Ok(g.value(out).clone())
    }
}

pub(crate) fn gaussian(dims: &[usize], std: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0f32, std).expect("finite std");
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("dims match element count")
}

/// Records `x·W₀ᵀ + s·(drop(x)·Aᵀ)·Bᵀ` on the tape.
pub(crate) fn lora_linear<'a>(
    g: &mut Graph<'a, f32>,
    x: Var,
    base: Var,
    factors: Option<(Var, Var)>,
    scaling: f32,
    dropout: Option<(f32, &mut ChaCha8Rng)>,
) -> Result<Var, NumericsError> {
    let frozen = g.matmul_t(x, base)?;
    let Some((a, b)) = factors else {
        return Ok(frozen);
    };
    let adapter_in = match dropout {
        Some((p, rng)) => {
            let keep = 1.0 - p;
            let dims = g.value(x).dims().to_vec();
            let n = g.value(x).numel();
            let mask = (0..n).map(|_| if rng.random_bool(f64::from(keep)) { 1.0 / keep } else { 0.0 }).collect();
            let mask = g.constant(Tensor::new(dims, mask)?);
            g.mul(x, mask)?
        }
        None => x,
    };
    let down = g.matmul_t(adapter_in, a)?;
    let up = g.matmul_t(down, b)?;
    let delta = g.scale(up, scaling);
    g.add(frozen, delta)
}
