//! Batch normalization over the channel axis of [N,C,D,H,W] tensors.
//!
//! Training mode normalizes with biased batch variance and updates the
//! running statistics with momentum 0.1 (running variance uses the
//! unbiased estimate when more than one value per channel exists). Eval
//! mode applies the running statistics as a fixed affine map — still
//! differentiable, which attention maps rely on.

use super::{Backward, Node, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S: Scalar> {
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

struct TrainBackward<S: Scalar> {
    x: Tensor<S>,
    gamma: Tensor<S>,
    beta: Tensor<S>,
    xhat: Vec<S>,
    invstd: Vec<S>,
    c: usize,
    per_channel: usize,
    n: usize,
    spatial: usize,
}

impl<S: Scalar> Backward<S> for TrainBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let m = S::from_f64(self.per_channel as f64);
        let gamma = self.gamma.data();
        let mut dgamma = vec![S::zero(); self.c];
        let mut dbeta = vec![S::zero(); self.c];
        let mut dx = vec![S::zero(); grad_out.len()];

        // Channel sums in fixed scan order.
        for c in 0..self.c {
            let mut sum_dy = S::zero();
            let mut sum_dy_xhat = S::zero();
            self.for_channel(c, |idx| {
                sum_dy = sum_dy + grad_out[idx];
                sum_dy_xhat = sum_dy_xhat + grad_out[idx] * self.xhat[idx];
            });
            dbeta[c] = sum_dy;
            dgamma[c] = sum_dy_xhat;
            // dx = gamma * invstd / m * (m dy - sum(dy) - xhat * sum(dy xhat))
            let k = gamma[c] * self.invstd[c] / m;
            self.for_channel(c, |idx| {
                dx[idx] =
                    k * (m * grad_out[idx] - sum_dy - self.xhat[idx] * sum_dy_xhat);
            });
        }
        drop(gamma);
        self.x.accumulate_grad(&dx);
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
    }
}

impl<S: Scalar> TrainBackward<S> {
    fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for n in 0..self.n {
            let base = (n * self.c + c) * self.spatial;
            for s in 0..self.spatial {
                f(base + s);
            }
        }
    }
}

struct EvalBackward<S: Scalar> {
    x: Tensor<S>,
    gamma: Tensor<S>,
    beta: Tensor<S>,
    xhat: Vec<S>,
    invstd: Vec<S>,
    c: usize,
    n: usize,
    spatial: usize,
}

impl<S: Scalar> Backward<S> for EvalBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let gamma = self.gamma.data();
        let mut dgamma = vec![S::zero(); self.c];
        let mut dbeta = vec![S::zero(); self.c];
        let mut dx = vec![S::zero(); grad_out.len()];
        for c in 0..self.c {
            let g = gamma[c] * self.invstd[c];
            for n in 0..self.n {
                let base = (n * self.c + c) * self.spatial;
                for s in 0..self.spatial {
                    let idx = base + s;
                    dx[idx] = grad_out[idx] * g;
                    dgamma[c] = dgamma[c] + grad_out[idx] * self.xhat[idx];
                    dbeta[c] = dbeta[c] + grad_out[idx];
                }
            }
        }
        drop(gamma);
        self.x.accumulate_grad(&dx);
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
    }
}

/// Batch norm over [N,C,D,H,W]. Training mode uses batch statistics and
/// updates `state`; eval mode applies the running statistics.
pub fn batchnorm3d<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    state: &mut BatchNormState<S>,
    training: bool,
) -> Result<Tensor<S>> {
    let xs = x.shape();
    if xs.len() != 5 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm3d expects [N,C,D,H,W], got {xs:?}"
        )));
    }
    let (n, c) = (xs[0], xs[1]);
    let spatial = xs[2] * xs[3] * xs[4];
    if gamma.shape() != [c] || beta.shape() != [c] || state.running_mean.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm3d: {c} channels vs gamma {:?}, beta {:?}, state {}",
            gamma.shape(),
            beta.shape(),
            state.running_mean.len()
        )));
    }
    let per_channel = n * spatial;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![S::zero(); xd.len()];
    let mut xhat = vec![S::zero(); xd.len()];
    let mut invstd = vec![S::zero(); c];

    for ch in 0..c {
        let (mean, var) = if training {
            let mut sum = S::zero();
            for nn in 0..n {
                let base = (nn * c + ch) * spatial;
                for s in 0..spatial {
                    sum = sum + xd[base + s];
                }
            }
            let mean = sum / S::from_f64(per_channel as f64);
            let mut var = S::zero();
            for nn in 0..n {
                let base = (nn * c + ch) * spatial;
                for s in 0..spatial {
                    let d = xd[base + s] - mean;
                    var = var + d * d;
                }
            }
            var = var / S::from_f64(per_channel as f64);
            // Running stats: unbiased variance when defined.
            let mom = S::from_f64(state.momentum);
            let unbiased = if per_channel > 1 {
                var * S::from_f64(per_channel as f64 / (per_channel as f64 - 1.0))
            } else {
                var
            };
            state.running_mean[ch] = (S::one() - mom) * state.running_mean[ch] + mom * mean;
            state.running_var[ch] = (S::one() - mom) * state.running_var[ch] + mom * unbiased;
            (mean, var)
        } else {
            (state.running_mean[ch], state.running_var[ch])
        };
        let istd = S::one() / (var + S::from_f64(state.eps)).sqrt();
        invstd[ch] = istd;
        for nn in 0..n {
            let base = (nn * c + ch) * spatial;
            for s in 0..spatial {
                let h = (xd[base + s] - mean) * istd;
                xhat[base + s] = h;
                out[base + s] = gd[ch] * h + bd[ch];
            }
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);

    let op: Box<dyn Backward<S>> = if training {
        Box::new(TrainBackward {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            invstd,
            c,
            per_channel,
            n,
            spatial,
        })
    } else {
        Box::new(EvalBackward {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            invstd,
            c,
            n,
            spatial,
        })
    };
    Ok(Tensor::raw(
        xs.to_vec(),
        out,
        Some(Node {
            parents: vec![x.clone(), gamma.clone(), beta.clone()],
            op,
        }),
    ))
}
