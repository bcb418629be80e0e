//! Central finite-difference gradient verification.
//!
//! Every differentiable op and every composite loss in this crate is checked
//! against central finite differences: the analytic gradient from one
//! backward pass is compared elementwise with `(f(x+ε) − f(x−ε)) / 2ε`.
//! The FD side only ever calls the forward path, so it stays independent of
//! the backward code it is checking.
//!
//! Checks are registered in [`registered_checks`] so the `grad-check` CLI
//! command and the acceptance suite run the exact same list and can assert
//! its size.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Tape, Var};
use crate::rng;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;
/// Relative-error threshold every registered check must meet.
pub const GRAD_TOL: f64 = 1e-5;
/// Seeds per check (each seed draws fresh random inputs).
pub const CHECK_SEEDS: u64 = 20;

/// Relative error with an absolute floor of 1 so near-zero gradients compare
/// absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Maximum relative error between the analytic gradient of the scalar
/// `f(inputs)` and central finite differences, over every element of every
/// input.
pub fn max_grad_error(inputs: &[Tensor], f: &dyn Fn(&Tape, &[Var]) -> Var) -> f64 {
    // analytic pass
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&tape, &vars);
    let grads = tape.backward(root);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&tape, &vars);
        tape.value(root).scalar_value()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_EPSILON;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - FD_EPSILON;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..numel).map(|_| rng::normal(rng)).collect())
}

fn rand_positive(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..numel).map(|_| 0.25 + rng.gen_range(0.0..2.0)).collect(),
    )
}

/// Scalarize a non-scalar op output with fixed random weights so the full
/// Jacobian action is exercised.
fn weighted(tape: &Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.leaf(weights.clone());
    tape.sum_all(tape.mul(out, w))
}

/// Which part of the stack a check belongs to; `grad-check` filters on this.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Losses,
    Model,
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Losses => "losses",
            Scope::Model => "model",
        }
    }
}

/// One named gradient check; `run(seed)` returns the max relative error for
/// fresh random inputs drawn from that seed.
pub struct Check {
    pub name: &'static str,
    pub scope: Scope,
    pub run: fn(u64) -> f64,
}

/// Result of running one check over several seeds.
pub struct CheckOutcome {
    pub name: &'static str,
    pub scope: Scope,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Run every registered check matching `scope` (`None` = all) over
/// `CHECK_SEEDS` seeds.
pub fn run_checks(scope: Option<Scope>, extra: &[Check]) -> Vec<CheckOutcome> {
    registered_checks()
        .iter()
        .chain(extra.iter())
        .filter(|c| scope.map_or(true, |s| c.scope == s))
        .map(|c| {
            let mut worst = 0.0f64;
            for seed in 0..CHECK_SEEDS {
                worst = worst.max((c.run)(seed));
            }
            CheckOutcome {
                name: c.name,
                scope: c.scope,
                max_rel_err: worst,
                pass: worst < GRAD_TOL,
            }
        })
        .collect()
}

macro_rules! op_check {
    ($name:ident, $shapes:expr, $builder:expr) => {
        fn $name(seed: u64) -> f64 {
            let mut r = rng::stream(seed, stringify!($name));
            let shapes: &[&[usize]] = $shapes;
            let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut r, s)).collect();
            let weights = rand_tensor(&mut r, shapes[0]);
            let build: fn(&Tape, &[Var], &Tensor) -> Var = $builder;
            max_grad_error(&inputs, &|tape, vars| build(tape, vars, &weights))
        }
    };
}

fn check_matmul(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_matmul");
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[4, 2]);
    let w = rand_tensor(&mut r, &[3, 2]);
    max_grad_error(&[a, b], &|tape, v| {
        weighted(tape, tape.matmul(v[0], v[1]), &w)
    })
}

fn check_softmax_rows(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_softmax_rows");
    let a = rand_tensor(&mut r, &[2, 3]);
    let w = rand_tensor(&mut r, &[2, 3]);
    max_grad_error(&[a], &|tape, v| weighted(tape, tape.softmax_rows(v[0]), &w))
}

fn check_log_softmax_rows(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_log_softmax_rows");
    let a = rand_tensor(&mut r, &[3, 4]);
    let w = rand_tensor(&mut r, &[3, 4]);
    max_grad_error(&[a], &|tape, v| {
        weighted(tape, tape.log_softmax_rows(v[0]), &w)
    })
}

fn check_layer_norm(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_layer_norm");
    let a = rand_tensor(&mut r, &[4, 8]);
    let gain = rand_tensor(&mut r, &[8]);
    let bias = rand_tensor(&mut r, &[8]);
    let w = rand_tensor(&mut r, &[4, 8]);
    max_grad_error(&[a, gain, bias], &|tape, v| {
        weighted(tape, tape.layer_norm(v[0], v[1], v[2], 1e-8), &w)
    })
}

fn check_log(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_log");
    let a = rand_positive(&mut r, &[2, 3]);
    let w = rand_tensor(&mut r, &[2, 3]);
    max_grad_error(&[a], &|tape, v| weighted(tape, tape.log(v[0]), &w))
}

fn check_slice(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_slice");
    let a = rand_tensor(&mut r, &[4, 5]);
    let w = rand_tensor(&mut r, &[2, 3]);
    max_grad_error(&[a], &|tape, v| {
        weighted(tape, tape.slice(v[0], 1, 3, 1, 4), &w)
    })
}

fn check_concat_cols(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_concat_cols");
    let a = rand_tensor(&mut r, &[3, 2]);
    let b = rand_tensor(&mut r, &[3, 4]);
    let w = rand_tensor(&mut r, &[3, 6]);
    max_grad_error(&[a, b], &|tape, v| {
        weighted(tape, tape.concat_cols(&[v[0], v[1]]), &w)
    })
}

fn check_add_rowvec(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_add_rowvec");
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[4]);
    let w = rand_tensor(&mut r, &[3, 4]);
    max_grad_error(&[a, b], &|tape, v| {
        weighted(tape, tape.add_rowvec(v[0], v[1]), &w)
    })
}

fn check_reshape_transpose(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_reshape_transpose");
    let a = rand_tensor(&mut r, &[3, 4]);
    let w = rand_tensor(&mut r, &[2, 6]);
    max_grad_error(&[a], &|tape, v| {
        weighted(tape, tape.reshape(tape.transpose(v[0]), vec![2, 6]), &w)
    })
}

op_check!(check_add, &[&[2, 3], &[2, 3]], |t, v, w| weighted(
    t,
    t.add(v[0], v[1]),
    w
));
op_check!(check_sub, &[&[2, 3], &[2, 3]], |t, v, w| weighted(
    t,
    t.sub(v[0], v[1]),
    w
));
op_check!(check_mul, &[&[2, 3], &[2, 3]], |t, v, w| weighted(
    t,
    t.mul(v[0], v[1]),
    w
));
op_check!(check_mul_scalar, &[&[2, 3]], |t, v, w| weighted(
    t,
    t.mul_scalar(v[0], -1.7),
    w
));
op_check!(check_relu, &[&[3, 3]], |t, v, w| weighted(t, t.relu(v[0]), w));
op_check!(check_sigmoid, &[&[2, 4]], |t, v, w| weighted(
    t,
    t.sigmoid(v[0]),
    w
));
op_check!(check_tanh, &[&[2, 4]], |t, v, w| weighted(t, t.tanh(v[0]), w));
op_check!(check_exp, &[&[2, 3]], |t, v, w| weighted(t, t.exp(v[0]), w));
op_check!(check_log_sum_exp, &[&[3, 4]], |t, v, _w| t.log_sum_exp(v[0]));
op_check!(check_sum_all, &[&[3, 4]], |t, v, _w| t.sum_all(v[0]));

/// The complete check list. Order is stable; tests assert the count so a new
/// differentiable op cannot land without registering here.
pub fn registered_checks() -> Vec<Check> {
    let mut checks = vec![
        Check { name: "matmul", scope: Scope::Ops, run: check_matmul },
        Check { name: "add", scope: Scope::Ops, run: check_add },
        Check { name: "sub", scope: Scope::Ops, run: check_sub },
        Check { name: "mul", scope: Scope::Ops, run: check_mul },
        Check { name: "mul_scalar", scope: Scope::Ops, run: check_mul_scalar },
        Check { name: "relu", scope: Scope::Ops, run: check_relu },
        Check { name: "sigmoid", scope: Scope::Ops, run: check_sigmoid },
        Check { name: "tanh", scope: Scope::Ops, run: check_tanh },
        Check { name: "log", scope: Scope::Ops, run: check_log },
        Check { name: "exp", scope: Scope::Ops, run: check_exp },
        Check { name: "reshape_transpose", scope: Scope::Ops, run: check_reshape_transpose },
        Check { name: "slice", scope: Scope::Ops, run: check_slice },
        Check { name: "concat_cols", scope: Scope::Ops, run: check_concat_cols },
        Check { name: "add_rowvec", scope: Scope::Ops, run: check_add_rowvec },
        Check { name: "sum_all", scope: Scope::Ops, run: check_sum_all },
        Check { name: "log_sum_exp", scope: Scope::Ops, run: check_log_sum_exp },
        Check { name: "softmax_rows", scope: Scope::Ops, run: check_softmax_rows },
        Check { name: "log_softmax_rows", scope: Scope::Ops, run: check_log_softmax_rows },
        Check { name: "layer_norm", scope: Scope::Ops, run: check_layer_norm },
    ];
    checks.extend(crate::losses::gradient_checks());
    checks.extend(crate::model::gradient_checks());
    checks
}

/// A check whose backward is deliberately wrong (reports 3x² for x² forward).
/// Exists so the checker itself can be shown to fail: wired to the hidden
/// `--inject-fault` flag of `grad-check`.
pub fn sabotaged_check() -> Check {
    fn run(seed: u64) -> f64 {
        let mut r = rng::stream(seed, "sabotaged");
        let a = rand_tensor(&mut r, &[2, 2]);
        max_grad_error(&[a], &|tape, v| {
            let av = tape.value(v[0]);
            let squared = Tensor::new(
                av.shape().to_vec(),
                av.data().iter().map(|x| x * x).collect(),
            );
            let ac = av.clone();
            let bad = tape.push_custom(
                "sabotaged_square",
                squared,
                &[v[0]],
                Box::new(move |g, needs| {
                    vec![needs[0].then(|| {
                        let data = g
                            .data()
                            .iter()
                            .zip(ac.data())
                            .map(|(&gv, &x)| gv * 3.0 * x * x) // wrong on purpose
                            .collect();
                        Tensor::new(g.shape().to_vec(), data)
                    })]
                }),
            );
            tape.sum_all(bad)
        })
    }
    Check { name: "injected_fault", scope: Scope::Ops, run }
}
