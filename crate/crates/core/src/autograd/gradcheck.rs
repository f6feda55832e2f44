//! Central finite-difference verification of analytic gradients.
//!
//! All checks run at 64-bit precision. The randomized suite draws small
//! random shapes per op and scalarizes non-scalar ops through the mean
//! squared error against a fixed random target, so every op's backward is
//! exercised with non-uniform upstream gradients.

use super::{
    add, batchnorm3d, conv3d, global_max_pool, linear, maxpool3d, mse_loss, relu, scale,
    smooth_l1_loss, BatchNormState, Tensor,
};
use crate::error::{Error, Result};
use crate::rngs::derive_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step size for central differences at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Runs `f` once for the analytic gradients, then perturbs every element of
/// every input by ±h and returns the worst relative error
/// |analytic − numeric| / max(1, |analytic|, |numeric|). `f` must return a
/// single-element tensor and must be a pure function of the input data.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for t in inputs {
        t.zero_grad();
    }
    let loss = f()?;
    if loss.len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "gradient check needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst = 0.0_f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            t.data_mut()[j] = orig + h;
            let fp = f()?.item();
            t.data_mut()[j] = orig - h;
            let fm = f()?.item();
            t.data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Worst relative error observed for one op across all random cases.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

const GRADCHECK_DOMAIN: u64 = 0x6772_6164;

fn rng(master_seed: u64, op_idx: u64, case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, GRADCHECK_DOMAIN ^ op_idx, case))
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// All-distinct values with pairwise gaps well above the FD step, so argmax
/// selections cannot flip under perturbation.
fn distinct_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut grid: Vec<f64> = (0..len).map(|i| -1.0 + 0.01 * i as f64).collect();
    grid.shuffle(r);
    Tensor::from_vec(shape, grid).unwrap()
}

/// Runs the full randomized gradient suite: every op, `cases_per_op` random
/// shape/seed draws each, all at 64-bit with step [`DEFAULT_STEP`].
pub fn run_suite(cases_per_op: usize, master_seed: u64) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    let mut push = |op: &'static str, errs: Vec<f64>| {
        reports.push(OpReport {
            op,
            cases: errs.len(),
            max_rel_err: errs.into_iter().fold(0.0, f64::max),
        });
    };

    // conv3d: gradients for input, kernel, and bias.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 0, case as u64);
        let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let k = *[1usize, 3].choose(&mut r).unwrap();
        let (d, h, w) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
        let x = rand_tensor(&mut r, vec![n, cin, d, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut r, vec![cout, cin, k, k, k], -0.5, 0.5);
        let b = rand_tensor(&mut r, vec![cout], -0.5, 0.5);
        let target = rand_tensor(&mut r, vec![n, cout, d, h, w], -1.0, 1.0);
        let inputs = [x.clone(), wt.clone(), b.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&conv3d(&x, &wt, &b)?, &target)
        })?);
    }
    push("conv3d", errs);

    // linear: input, weight, bias.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 1, case as u64);
        let (n, feat) = (r.gen_range(1..=4), r.gen_range(1..=6));
        let x = rand_tensor(&mut r, vec![n, feat], -1.0, 1.0);
        let wt = rand_tensor(&mut r, vec![1, feat], -1.0, 1.0);
        let b = rand_tensor(&mut r, vec![1], -1.0, 1.0);
        let target = rand_tensor(&mut r, vec![n, 1], -2.0, 2.0);
        let inputs = [x.clone(), wt.clone(), b.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&linear(&x, &wt, &b)?, &target)
        })?);
    }
    push("linear", errs);

    // Batch norm in training mode: input, gamma, beta. Fresh statistics
    // state inside the closure keeps repeated evaluations pure.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 2, case as u64);
        let (n, c) = (r.gen_range(2..=3), r.gen_range(1..=3));
        let (d, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let x = rand_tensor(&mut r, vec![n, c, d, h, w], -2.0, 2.0);
        let gamma = rand_tensor(&mut r, vec![c], 0.5, 1.5);
        let beta = rand_tensor(&mut r, vec![c], -0.5, 0.5);
        let target = rand_tensor(&mut r, vec![n, c, d, h, w], -1.0, 1.0);
        let inputs = [x.clone(), gamma.clone(), beta.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            let mut state = BatchNormState::new(c);
            mse_loss(&batchnorm3d(&x, &gamma, &beta, &mut state, true)?, &target)
        })?);
    }
    push("batchnorm3d (train)", errs);

    // Batch norm in eval mode with random running statistics.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 3, case as u64);
        let (n, c) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let (d, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let x = rand_tensor(&mut r, vec![n, c, d, h, w], -2.0, 2.0);
        let gamma = rand_tensor(&mut r, vec![c], 0.5, 1.5);
        let beta = rand_tensor(&mut r, vec![c], -0.5, 0.5);
        let target = rand_tensor(&mut r, vec![n, c, d, h, w], -1.0, 1.0);
        let mut template = BatchNormState::new(c);
        for ch in 0..c {
            template.running_mean[ch] = r.gen_range(-0.5..0.5);
            template.running_var[ch] = r.gen_range(0.5..1.5);
        }
        let inputs = [x.clone(), gamma.clone(), beta.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            let mut state = template.clone();
            mse_loss(&batchnorm3d(&x, &gamma, &beta, &mut state, false)?, &target)
        })?);
    }
    push("batchnorm3d (eval)", errs);

    // Max pool: distinct values keep the argmax stable under perturbation.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 4, case as u64);
        let (n, c) = (r.gen_range(1..=2), r.gen_range(1..=2));
        let (d, h, w) = (r.gen_range(1..=4), r.gen_range(1..=5), r.gen_range(1..=5));
        let x = distinct_tensor(&mut r, vec![n, c, d, h, w]);
        let out_shape = maxpool3d(&x)?.shape().to_vec();
        let target = rand_tensor(&mut r, out_shape, -1.0, 1.0);
        let inputs = [x.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&maxpool3d(&x)?, &target)
        })?);
    }
    push("maxpool3d", errs);

    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 5, case as u64);
        let (n, c) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let (d, h, w) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
        let x = distinct_tensor(&mut r, vec![n, c, d, h, w]);
        let target = rand_tensor(&mut r, vec![n, c], -1.0, 1.0);
        let inputs = [x.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&global_max_pool(&x)?, &target)
        })?);
    }
    push("global_max_pool", errs);

    // ReLU: magnitudes bounded away from the kink at zero.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 6, case as u64);
        let shape = vec![r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4)];
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len)
            .map(|_| r.gen_range(0.1..1.5) * if r.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let x = Tensor::from_vec(shape.clone(), data).unwrap();
        let target = rand_tensor(&mut r, shape, -1.0, 1.0);
        let inputs = [x.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&relu(&x), &target)
        })?);
    }
    push("relu", errs);

    // add and scale.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 7, case as u64);
        let shape = vec![r.gen_range(1..=4), r.gen_range(1..=4)];
        let a = rand_tensor(&mut r, shape.clone(), -1.0, 1.0);
        let b = rand_tensor(&mut r, shape.clone(), -1.0, 1.0);
        let target = rand_tensor(&mut r, shape, -1.0, 1.0);
        let inputs = [a.clone(), b.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&add(&a, &b)?, &target)
        })?);
    }
    push("add", errs);

    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 8, case as u64);
        let shape = vec![r.gen_range(1..=4), r.gen_range(1..=4)];
        let x = rand_tensor(&mut r, shape.clone(), -1.0, 1.0);
        let c = r.gen_range(-2.0..2.0);
        let target = rand_tensor(&mut r, shape, -1.0, 1.0);
        let inputs = [x.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&scale(&x, c), &target)
        })?);
    }
    push("scale", errs);

    // The losses themselves, checked directly as the scalar output.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 9, case as u64);
        let shape = vec![r.gen_range(1..=4), r.gen_range(1..=4)];
        let pred = rand_tensor(&mut r, shape.clone(), -2.0, 2.0);
        let target = rand_tensor(&mut r, shape, -2.0, 2.0);
        let inputs = [pred.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            mse_loss(&pred, &target)
        })?);
    }
    push("mse_loss", errs);

    // Smooth L1: residuals bounded away from |d| = 1 where the second
    // derivative jumps.
    let mut errs = Vec::new();
    for case in 0..cases_per_op {
        let mut r = rng(master_seed, 10, case as u64);
        let shape = vec![r.gen_range(1..=4), r.gen_range(1..=4)];
        let pred = rand_tensor(&mut r, shape.clone(), -1.0, 1.0);
        let len: usize = shape.iter().product();
        let tdata: Vec<f64> = {
            let pd = pred.data();
            (0..len)
                .map(|j| {
                    let d = loop {
                        let d: f64 = r.gen_range(-2.0..2.0);
                        if (d.abs() - 1.0).abs() > 0.05 {
                            break d;
                        }
                    };
                    pd[j] - d
                })
                .collect()
        };
        let target = Tensor::from_vec(shape, tdata).unwrap();
        let inputs = [pred.clone()];
        errs.push(max_relative_error(&inputs, DEFAULT_STEP, || {
            smooth_l1_loss(&pred, &target)
        })?);
    }
    push("smooth_l1_loss", errs);

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_suite_stays_under_tolerance() {
        let reports = run_suite(3, 20_260_617).unwrap();
        assert_eq!(reports.len(), 11);
        for r in &reports {
            assert_eq!(r.cases, 3);
            assert!(r.max_rel_err < 1e-5, "{}: {}", r.op, r.max_rel_err);
        }
    }

    #[test]
    fn required_scalar_loss_is_enforced() {
        let x = Tensor::from_vec(vec![2], vec![1.0_f64, 2.0]).unwrap();
        let err = max_relative_error(&[x.clone()], DEFAULT_STEP, || Ok(relu(&x)));
        assert!(err.is_err());
    }

    #[test]
    fn detects_a_kink_inside_the_step_window() {
        // x sits closer to the ReLU kink than the FD step, so the one-sided
        // numeric slope disagrees with the analytic gradient.
        let x = Tensor::from_vec(vec![1], vec![5e-6_f64]).unwrap();
        let t = Tensor::from_vec(vec![1], vec![-3.0_f64]).unwrap();
        let err = max_relative_error(&[x.clone()], DEFAULT_STEP, || {
            mse_loss(&relu(&x), &t)
        })
        .unwrap();
        assert!(err > 0.1, "expected a large error, got {err}");
    }
}
