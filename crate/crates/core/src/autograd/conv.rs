//! 3D cross-correlation via im2col and GEMM. Stride 1, zero padding
//! k/2, so spatial shape is preserved for odd kernels. The per-item
//! column buffers are kept alive for the backward pass: dW is one GEMM
//! against them, dX is a col2im scatter of W^T · dY.

use super::{Backward, Node, Scalar, Tensor};
use crate::error::{Error, Result};

struct Dims {
    n: usize,
    cin: usize,
    cout: usize,
    k: usize,
    d: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }
    fn cols_rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
}

/// Gathers the padded k^3 neighborhood of every output voxel:
/// cols[(c,kz,ky,kx), (z,y,x)] = x[c, z+kz-p, y+ky-p, x+kx-p] or 0.
fn im2col<S: Scalar>(x: &[S], dm: &Dims, out: &mut [S]) {
    let (d, h, w, k) = (dm.d, dm.h, dm.w, dm.k);
    let p = k / 2;
    let spatial = dm.spatial();
    let mut row = 0;
    for c in 0..dm.cin {
        let xc = &x[c * spatial..(c + 1) * spatial];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut out[row * spatial..(row + 1) * spatial];
                    row += 1;
                    for z in 0..d {
                        let sz = z as isize + kz as isize - p as isize;
                        if sz < 0 || sz >= d as isize {
                            for v in &mut dst[z * h * w..(z + 1) * h * w] {
                                *v = S::zero();
                            }
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - p as isize;
                            let base = (z * h + y) * w;
                            if sy < 0 || sy >= h as isize {
                                for v in &mut dst[base..base + w] {
                                    *v = S::zero();
                                }
                                continue;
                            }
                            let src_base = (sz as usize * h + sy as usize) * w;
                            let shift = kx as isize - p as isize;
                            for xo in 0..w {
                                let sx = xo as isize + shift;
                                dst[base + xo] = if sx < 0 || sx >= w as isize {
                                    S::zero()
                                } else {
                                    xc[src_base + sx as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of im2col: scatter-adds column gradients back to voxels.
fn col2im<S: Scalar>(cols: &[S], dm: &Dims, out: &mut [S]) {
    let (d, h, w, k) = (dm.d, dm.h, dm.w, dm.k);
    let p = k / 2;
    let spatial = dm.spatial();
    let mut row = 0;
    for c in 0..dm.cin {
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * spatial..(row + 1) * spatial];
                    row += 1;
                    for z in 0..d {
                        let sz = z as isize + kz as isize - p as isize;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - p as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let base = (z * h + y) * w;
                            let dst_base = c * spatial + (sz as usize * h + sy as usize) * w;
                            let shift = kx as isize - p as isize;
                            for xo in 0..w {
                                let sx = xo as isize + shift;
                                if sx >= 0 && sx < w as isize {
                                    let di = dst_base + sx as usize;
                                    out[di] = out[di] + src[base + xo];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv3dBackward<S: Scalar> {
    x: Tensor<S>,
    weight: Tensor<S>,
    bias: Tensor<S>,
    cols: Vec<Vec<S>>,
    dm: Dims,
}

impl<S: Scalar> Backward<S> for Conv3dBackward<S> {
    fn backward(&self, grad_out: &[S]) {
        let dm = &self.dm;
        let spatial = dm.spatial();
        let rows = dm.cols_rows();
        let per_item = dm.cout * spatial;

        // dB: sum of dY over batch and space.
        let mut db = vec![S::zero(); dm.cout];
        for n in 0..dm.n {
            let dy = &grad_out[n * per_item..(n + 1) * per_item];
            for c in 0..dm.cout {
                let mut s = S::zero();
                for &v in &dy[c * spatial..(c + 1) * spatial] {
                    s = s + v;
                }
                db[c] = db[c] + s;
            }
        }
        self.bias.accumulate_grad(&db);

        // dW accumulates over batch items in index order (determinism).
        let mut dw = vec![S::zero(); dm.cout * rows];
        let mut dx = vec![S::zero(); dm.n * dm.cin * spatial];
        let mut dcols = vec![S::zero(); rows * spatial];
        let weight = self.weight.data();
        for n in 0..dm.n {
            let dy = &grad_out[n * per_item..(n + 1) * per_item];
            // dW[cout, rows] += dY[cout, spatial] · cols^T[spatial, rows]
            let mut colst = vec![S::zero(); spatial * rows];
            let cols = &self.cols[n];
            for r in 0..rows {
                for s in 0..spatial {
                    colst[s * rows + r] = cols[r * spatial + s];
                }
            }
            S::gemm(dm.cout, spatial, rows, 1.0, dy, &colst, 1.0, &mut dw);
            // dCols[rows, spatial] = W^T[rows, cout] · dY[cout, spatial]
            let mut wt = vec![S::zero(); rows * dm.cout];
            for r in 0..dm.cout {
                for c in 0..rows {
                    wt[c * dm.cout + r] = weight[r * rows + c];
                }
            }
            S::gemm(rows, dm.cout, spatial, 1.0, &wt, dy, 0.0, &mut dcols);
            col2im(
                &dcols,
                dm,
                &mut dx[n * dm.cin * spatial..(n + 1) * dm.cin * spatial],
            );
        }
        drop(weight);
        self.weight.accumulate_grad(&dw);
        self.x.accumulate_grad(&dx);
    }
}

/// 3D convolution (cross-correlation): x[N,Cin,D,H,W] with
/// weight[Cout,Cin,k,k,k] (odd k) and bias[Cout] -> [N,Cout,D,H,W].
pub fn conv3d<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 5 || ws.len() != 5 {
        return Err(Error::ShapeMismatch(format!(
            "conv3d: input {xs:?}, weight {ws:?}"
        )));
    }
    if ws[2] != ws[3] || ws[2] != ws[4] || ws[2] % 2 == 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv3d: kernel must be cubic with odd size, got {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d: {} input channels vs weight expecting {}",
            xs[1], ws[1]
        )));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d: bias {:?} vs {} output channels",
            bias.shape(),
            ws[0]
        )));
    }
    let dm = Dims {
        n: xs[0],
        cin: xs[1],
        cout: ws[0],
        k: ws[2],
        d: xs[2],
        h: xs[3],
        w: xs[4],
    };
    let spatial = dm.spatial();
    let rows = dm.cols_rows();

    let xdata = x.data();
    let wdata = weight.data();
    let bdata = bias.data();
    let mut out = vec![S::zero(); dm.n * dm.cout * spatial];
    let mut cols_cache = Vec::with_capacity(dm.n);
    for n in 0..dm.n {
        let mut cols = vec![S::zero(); rows * spatial];
        im2col(
            &xdata[n * dm.cin * spatial..(n + 1) * dm.cin * spatial],
            &dm,
            &mut cols,
        );
        let y = &mut out[n * dm.cout * spatial..(n + 1) * dm.cout * spatial];
        S::gemm(dm.cout, rows, spatial, 1.0, &wdata, &cols, 0.0, y);
        for c in 0..dm.cout {
            let b = bdata[c];
            for v in &mut y[c * spatial..(c + 1) * spatial] {
                *v = *v + b;
            }
        }
        cols_cache.push(cols);
    }
    drop(xdata);
    drop(wdata);
    drop(bdata);

    let shape = vec![dm.n, dm.cout, dm.d, dm.h, dm.w];
    Ok(Tensor::raw(
        shape,
        out,
        Some(Node {
            parents: vec![x.clone(), weight.clone(), bias.clone()],
            op: Box::new(Conv3dBackward {
                x: x.clone(),
                weight: weight.clone(),
                bias: bias.clone(),
                cols: cols_cache,
                dm,
            }),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_plus_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(vec![1, 1, 3, 4, 5], &mut rng);
        let mut w = vec![0.0; 27];
        w[13] = 1.0; // centre of the 3x3x3 kernel
        let weight = Tensor::from_vec(vec![1, 1, 3, 3, 3], w).unwrap();
        let bias = Tensor::from_vec(vec![1], vec![0.25]).unwrap();
        let y = conv3d(&x, &weight, &bias).unwrap();
        for (yo, xi) in y.data().iter().zip(x.data().iter()) {
            assert!((yo - (xi + 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_kernel_counts_neighbourhood() {
        // Constant-1 input: interior voxels see the full 27-neighbourhood.
        let x = Tensor::full(vec![1, 1, 3, 3, 3], 1.0_f64);
        let weight = Tensor::full(vec![1, 1, 3, 3, 3], 1.0);
        let bias = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        let y = conv3d(&x, &weight, &bias).unwrap();
        // Centre voxel of the 3x3x3 grid is the only interior one.
        let centre = y.data()[13];
        assert!((centre - 27.5).abs() < 1e-12);
        // A corner sees a 2x2x2 slab.
        assert!((y.data()[0] - 8.5).abs() < 1e-12);
    }

    #[test]
    fn preserves_spatial_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &k in &[1usize, 3] {
            let x = randn(vec![2, 3, 4, 5, 2], &mut rng);
            let w = randn(vec![4, 3, k, k, k], &mut rng);
            let b = randn(vec![4], &mut rng);
            let y = conv3d(&x, &w, &b).unwrap();
            assert_eq!(y.shape(), &[2, 4, 4, 5, 2]);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 3, 3, 3]);
        let w = Tensor::zeros(vec![4, 3, 3, 3, 3]);
        let b = Tensor::zeros(vec![4]);
        assert!(conv3d(&x, &w, &b).is_err());
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, cin, cout, d, h, w) = (2usize, 2usize, 3usize, 3usize, 4usize, 3usize);
        let x = randn(vec![n, cin, d, h, w], &mut rng);
        let wt = randn(vec![cout, cin, 3, 3, 3], &mut rng);
        let b = randn(vec![cout], &mut rng);
        let y = conv3d(&x, &wt, &b).unwrap();

        let xd = x.data();
        let wd = wt.data();
        let bd = b.data();
        let at = |n_, c, z, y_, x_| xd[(((n_ * cin + c) * d + z) * h + y_) * w + x_];
        for ni in 0..n {
            for co in 0..cout {
                for z in 0..d {
                    for yy in 0..h {
                        for xx in 0..w {
                            let mut acc = bd[co];
                            for ci in 0..cin {
                                for kz in 0..3usize {
                                    for ky in 0..3usize {
                                        for kx in 0..3usize {
                                            let sz = z as isize + kz as isize - 1;
                                            let sy = yy as isize + ky as isize - 1;
                                            let sx = xx as isize + kx as isize - 1;
                                            if sz < 0 || sy < 0 || sx < 0 {
                                                continue;
                                            }
                                            let (sz, sy, sx) =
                                                (sz as usize, sy as usize, sx as usize);
                                            if sz >= d || sy >= h || sx >= w {
                                                continue;
                                            }
                                            acc += at(ni, ci, sz, sy, sx)
                                                * wd[(((co * cin + ci) * 3 + kz) * 3 + ky) * 3
                                                    + kx];
                                        }
                                    }
                                }
                            }
                            let got =
                                y.data()[(((ni * cout + co) * d + z) * h + yy) * w + xx];
                            assert!(
                                (got - acc).abs() < 1e-10,
                                "voxel ({ni},{co},{z},{yy},{xx}): {got} vs {acc}"
                            );
                        }
                    }
                }
            }
        }
    }
}
