//! Max pooling over the spatial axes of [N,C,D,H,W] tensors.
//!
//! The window is (2,2,2) with stride equal to the window, except that any
//! spatial axis of size 1 keeps a window of 1 so shallow volumes survive
//! repeated pooling. Output sizes use floor division; trailing elements
//! that do not fill a window are dropped. Ties pick the first occurrence
//! in scan order, which keeps backward deterministic.

use super::{Backward, Node, Scalar, Tensor};
use crate::error::{Error, Result};

struct PoolBackward<S: Scalar> {
    x: Tensor<S>,
    argmax: Vec<usize>,
}

impl<S: Scalar> Backward<S> for PoolBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let mut dx = vec![S::zero(); self.x.len()];
        for (o, &src) in self.argmax.iter().enumerate() {
            dx[src] = dx[src] + grad_out[o];
        }
        self.x.accumulate_grad(&dx);
    }
}

fn check_5d(shape: &[usize], what: &str) -> Result<()> {
    if shape.len() != 5 {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects [N,C,D,H,W], got {shape:?}"
        )));
    }
    Ok(())
}

/// Max pool with per-axis window 2 (or 1 where the axis has size 1).
pub fn maxpool3d<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    check_5d(xs, "maxpool3d")?;
    let (n, c, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let win = [
        if d == 1 { 1 } else { 2 },
        if h == 1 { 1 } else { 2 },
        if w == 1 { 1 } else { 2 },
    ];
    let (od, oh, ow) = (d / win[0], h / win[1], w / win[2]);
    if od == 0 || oh == 0 || ow == 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool3d: input {xs:?} smaller than window {win:?}"
        )));
    }
    let xd = x.data();
    let mut out = vec![S::zero(); n * c * od * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    let mut o = 0usize;
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * d * h * w;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = S::neg_infinity();
                        let mut best_idx = 0usize;
                        for dz in 0..win[0] {
                            for dy in 0..win[1] {
                                for dx in 0..win[2] {
                                    let idx = base
                                        + ((oz * win[0] + dz) * h + oy * win[1] + dy) * w
                                        + ox * win[2]
                                        + dx;
                                    if xd[idx] > best {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
    }
    drop(xd);
    Ok(Tensor::raw(
        vec![n, c, od, oh, ow],
        out,
        Some(Node {
            parents: vec![x.clone()],
            op: Box::new(PoolBackward {
                x: x.clone(),
                argmax,
            }),
        }),
    ))
}

/// Max over all spatial positions: [N,C,D,H,W] -> [N,C].
pub fn global_max_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    check_5d(xs, "global_max_pool")?;
    let (n, c) = (xs[0], xs[1]);
    let spatial = xs[2] * xs[3] * xs[4];
    let xd = x.data();
    let mut out = vec![S::zero(); n * c];
    let mut argmax = vec![0usize; n * c];
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * spatial;
            let mut best = S::neg_infinity();
            let mut best_idx = base;
            for s in 0..spatial {
                if xd[base + s] > best {
                    best = xd[base + s];
                    best_idx = base + s;
                }
            }
            out[nn * c + cc] = best;
            argmax[nn * c + cc] = best_idx;
        }
    }
    drop(xd);
    Ok(Tensor::raw(
        vec![n, c],
        out,
        Some(Node {
            parents: vec![x.clone()],
            op: Box::new(PoolBackward {
                x: x.clone(),
                argmax,
            }),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_even_axes_and_keeps_unit_axes() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 4, 6, 1]);
        let y = maxpool3d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3, 1]);
        // Odd axis drops the trailing element.
        let x = Tensor::<f64>::zeros(vec![2, 3, 5, 3, 2]);
        let y = maxpool3d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 1, 1]);
    }

    #[test]
    fn picks_window_maxima() {
        // One channel, 2x2x2 window over a 2x2x4 grid -> two outputs.
        let x = Tensor::from_vec(
            vec![1, 1, 2, 2, 4],
            vec![
                0.0_f64, 1.0, 2.0, 3.0, //
                4.0, 5.0, 6.0, 7.0, //
                8.0, 9.0, 10.0, 11.0, //
                12.0, 13.0, 15.0, 14.0,
            ],
        )
        .unwrap();
        let y = maxpool3d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 2]);
        assert_eq!(&*y.data(), &[13.0, 15.0]);
    }

    #[test]
    fn ties_route_gradient_to_first_occurrence() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1, 4], vec![2.0_f64, 2.0, 1.0, 2.0]).unwrap();
        let y = maxpool3d(&x).unwrap();
        let loss = super::super::mse_loss(&y, &Tensor::zeros(vec![1, 1, 1, 1, 2])).unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        // First window max at index 0 (tie with 1), second at index 3.
        assert!(g[0] != 0.0 && g[1] == 0.0 && g[2] == 0.0 && g[3] != 0.0);
    }

    #[test]
    fn global_pool_reduces_to_one_value_per_channel() {
        let x = Tensor::from_vec(
            vec![1, 2, 1, 2, 2],
            vec![1.0_f64, 7.0, 3.0, 5.0, -1.0, -9.0, -2.0, -3.0],
        )
        .unwrap();
        let y = global_max_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(&*y.data(), &[7.0, -1.0]);
        let loss = super::super::mse_loss(&y, &Tensor::zeros(vec![1, 2])).unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        assert!(g[1] != 0.0 && g[4] != 0.0);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 2);
    }
}
