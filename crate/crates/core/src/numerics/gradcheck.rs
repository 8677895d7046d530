//! Central finite-difference checks of the tape's backward rules, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{Graph, NumericsError, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { tolerance: 1e-3, step: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Worst relative error per differentiated input.
    pub per_input_errors: Vec<f64>,
    pub passed: bool,
}

type BuildFn = for<'g> fn(&mut Graph<'g, f64>, &[Var], &mut ChaCha8Rng) -> Result<Var, NumericsError>;

struct RegisteredOp {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: BuildFn,
}

const REGISTRY: &[RegisteredOp] = &[
    RegisteredOp { name: "matmul", shapes: &[&[4, 5], &[5, 3]], build: |g, v, _| g.matmul(v[0], v[1]) },
    RegisteredOp { name: "matmul_t", shapes: &[&[4, 5], &[3, 5]], build: |g, v, _| g.matmul_t(v[0], v[1]) },
    RegisteredOp { name: "add", shapes: &[&[3, 4], &[3, 4]], build: |g, v, _| g.add(v[0], v[1]) },
    RegisteredOp { name: "add_bias", shapes: &[&[3, 4], &[4]], build: |g, v, _| g.add_bias(v[0], v[1]) },
    RegisteredOp { name: "mul", shapes: &[&[3, 4], &[3, 4]], build: |g, v, _| g.mul(v[0], v[1]) },
    RegisteredOp {
        name: "scale",
        shapes: &[&[3, 4]],
        build: |g, v, rng| Ok(g.scale(v[0], rng.sample(StandardNormal))),
    },
    RegisteredOp { name: "sum", shapes: &[&[3, 4]], build: |g, v, _| Ok(g.sum(v[0])) },
    RegisteredOp { name: "silu", shapes: &[&[3, 4]], build: |g, v, _| Ok(g.silu(v[0])) },
    RegisteredOp { name: "sigmoid", shapes: &[&[3, 4]], build: |g, v, _| Ok(g.sigmoid(v[0])) },
    RegisteredOp {
        name: "softmax",
        shapes: &[&[8]],
        build: |g, v, _| {
            let axis = g.value(v[0]).ndim() - 1;
            g.softmax(v[0], axis)
        },
    },
    RegisteredOp { name: "softmax_axis0", shapes: &[&[5, 3]], build: |g, v, _| g.softmax(v[0], 0) },
    RegisteredOp { name: "causal_softmax", shapes: &[&[5, 5]], build: |g, v, _| g.causal_softmax(v[0]) },
    RegisteredOp { name: "rms_norm", shapes: &[&[3, 6], &[6]], build: |g, v, _| g.rms_norm(v[0], v[1], 1e-5) },
    RegisteredOp { name: "slice_cols", shapes: &[&[3, 6]], build: |g, v, _| g.slice_cols(v[0], 1, 3) },
    RegisteredOp { name: "concat_cols", shapes: &[&[3, 2], &[3, 4]], build: |g, v, _| g.concat_cols(v) },
    RegisteredOp { name: "select_row", shapes: &[&[4, 5]], build: |g, v, _| g.select_row(v[0], 2) },
    RegisteredOp {
        name: "cross_entropy",
        shapes: &[&[49]],
        build: |g, v, rng| {
            let c = g.value(v[0]).numel();
            g.cross_entropy(v[0], rng.random_range(0..c))
        },
    },
    RegisteredOp {
        name: "bce_with_logits",
        shapes: &[&[49]],
        build: |g, v, rng| {
            let c = g.value(v[0]).numel();
            let targets: Vec<f64> = (0..c).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
            g.bce_with_logits(v[0], &targets)
        },
    },
];

/// Names accepted by [`grad_check`].
pub fn registered_ops() -> Vec<&'static str> {
    REGISTRY.iter().map(|op| op.name).collect()
}

/// Checks a registered op. Empty `input_shapes` selects the op's default shapes.
pub fn grad_check(op_id: &str, input_shapes: &[Vec<usize>], seed: u64) -> Result<GradCheckReport, NumericsError> {
    let op = REGISTRY.iter().find(|op| op.name == op_id).ok_or_else(|| NumericsError::UnknownOp(op_id.to_string()))?;
    let shapes: Vec<Vec<usize>> =
        if input_shapes.is_empty() { op.shapes.iter().map(|s| s.to_vec()).collect() } else { input_shapes.to_vec() };
    grad_check_with(op.name, &shapes, seed, GradCheckConfig::default(), op.build)
}

/// Checks an arbitrary graph-building closure.
///
/// The scalar objective is `Σ w ⊙ out` with a fixed random `w`, so every
/// output element contributes. Relative error per element uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check_with<F>(
    name: &str,
    shapes: &[Vec<usize>],
    seed: u64,
    config: GradCheckConfig,
    build: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var], &mut ChaCha8Rng) -> Result<Var, NumericsError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|dims| {
            let n = dims.iter().product();
            Tensor::new(dims.clone(), (0..n).map(|_| rng.sample(StandardNormal)).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aux_seed: u64 = rng.random();

    let objective = |g: &mut Graph<'_, f64>, vars: &[Var]| -> Result<Var, NumericsError> {
        let mut aux = ChaCha8Rng::seed_from_u64(aux_seed);
        let out = build(g, vars, &mut aux)?;
        let dims = g.value(out).dims().to_vec();
        let n = g.value(out).numel();
        let weights = Tensor::new(dims, (0..n).map(|_| aux.sample(StandardNormal)).collect())?;
        let w = g.constant(weights);
        let weighted = g.mul(out, w)?;
        Ok(g.sum(weighted))
    };

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = objective(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> =
        vars.iter().zip(&inputs).map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims()))).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, NumericsError> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = objective(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut per_input_errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.clone();
    for (idx, input) in inputs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            work[idx].data_mut()[j] = x0 + config.step;
            let plus = eval(&work)?;
            work[idx].data_mut()[j] = x0 - config.step;
            let minus = eval(&work)?;
            work[idx].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic[idx].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_input_errors.push(worst);
    }
    let max_rel_error = per_input_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        op_name: name.to_string(),
        max_rel_error,
        per_input_errors,
        passed: max_rel_error <= config.tolerance,
    })
}
