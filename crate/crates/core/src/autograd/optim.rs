//! Adam with bias correction and a reduce-on-plateau learning-rate schedule.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam state for a fixed parameter list. Moment buffers are indexed by the
/// position of the parameter in the list passed to [`AdamState::new`]; `step`
/// must receive the same list in the same order every time.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
        }
    }

    /// One update over all parameters. Parameters with an empty gradient
    /// slot are skipped. A step with all-zero gradients on fresh state
    /// leaves every parameter and moment unchanged.
    pub fn step(&mut self, params: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} parameters vs state for {}",
                params.len(),
                self.m.len()
            )));
        }
        self.step_count += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let eps = S::from_f64(self.eps);
        let lr = S::from_f64(self.lr);
        let bc1 = S::from_f64(1.0 - self.beta1.powi(self.step_count as i32));
        let bc2 = S::from_f64(1.0 - self.beta2.powi(self.step_count as i32));
        for (i, p) in params.iter().enumerate() {
            if self.m[i].len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "adam: parameter {i} has {} elements, state expects {}",
                    p.len(),
                    self.m[i].len()
                )));
            }
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            let mut data = p.data_mut();
            for (j, g) in grad.iter().enumerate() {
                let m = b1 * self.m[i][j] + (S::one() - b1) * *g;
                let v = b2 * self.v[i][j] + (S::one() - b2) * *g * *g;
                self.m[i][j] = m;
                self.v[i][j] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                data[j] = data[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without strict improvement of the monitored metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: u32,
    pub best: f64,
    pub stale_epochs: u32,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler {
            factor: 0.3,
            patience: 5,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: u32) -> Self {
        PlateauScheduler {
            factor,
            patience,
            ..Default::default()
        }
    }

    /// Feed one epoch's metric; returns true when the rate was reduced.
    pub fn step(&mut self, metric: f64, lr: &mut f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            *lr *= self.factor;
            self.stale_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With constant gradient g, bias correction makes the first update
        // exactly -lr * g / (|g| + eps) ~= -lr * sign(g).
        let p = Tensor::from_vec(vec![3], vec![1.0_f64, -2.0, 0.5]).unwrap();
        p.accumulate_grad(&[4.0, -0.25, 0.0]);
        let mut adam = AdamState::new(std::slice::from_ref(&p), 0.01);
        adam.step(std::slice::from_ref(&p)).unwrap();
        let d = p.data();
        assert!((d[0] - (1.0 - 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-12);
        assert!((d[1] - (-2.0 + 0.01 * 0.25 / (0.25 + 1e-8))).abs() < 1e-12);
        assert!((d[2] - 0.5).abs() < 1e-15, "zero gradient must not move");
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = Tensor::from_vec(vec![2], vec![1.5_f64, -0.5]).unwrap();
        let mut adam = AdamState::new(std::slice::from_ref(&p), 0.01);
        for _ in 0..5 {
            p.zero_grad();
            p.accumulate_grad(&[0.0, 0.0]);
            adam.step(std::slice::from_ref(&p)).unwrap();
        }
        assert_eq!(&*p.data(), &[1.5, -0.5]);
        assert!(adam.m[0].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn plateau_reduces_after_six_equal_epochs() {
        let mut lr = 0.01_f64;
        let mut sched = PlateauScheduler::default();
        let mut reduced_at = None;
        for epoch in 0..6 {
            if sched.step(1.0, &mut lr) {
                reduced_at = Some(epoch);
            }
        }
        assert_eq!(reduced_at, Some(5));
        assert!((lr - 0.003).abs() < 1e-15, "lr {lr}");
    }

    #[test]
    fn strict_improvement_resets_patience() {
        let mut lr = 0.01_f64;
        let mut sched = PlateauScheduler::default();
        for m in [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.85] {
            sched.step(m, &mut lr);
        }
        // 5 stale epochs then an improvement: no reduction yet.
        assert!((lr - 0.01).abs() < 1e-15);
        assert_eq!(sched.stale_epochs, 0);
    }

    #[test]
    fn matching_gradients_follow_descent() {
        // Minimize (p - 3)^2 by hand-fed gradients; Adam should converge.
        let p = Tensor::from_vec(vec![1], vec![0.0_f64]).unwrap();
        let mut adam = AdamState::new(std::slice::from_ref(&p), 0.1);
        for _ in 0..500 {
            let g = 2.0 * (p.data()[0] - 3.0);
            p.zero_grad();
            p.accumulate_grad(&[g]);
            adam.step(std::slice::from_ref(&p)).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "got {}", p.data()[0]);
    }
}
