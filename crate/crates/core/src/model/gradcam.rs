//! Gradient-weighted attention maps for single subjects.
//!
//! The map lives on the block-5 post-ReLU activation grid: channel weights
//! are the spatial means of the prediction's gradient, the weighted channel
//! sum is rectified and min-max normalized, the mid-depth slice is
//! bilinearly upsampled to the input height and width, and a log contrast
//! curve g(x) = max(ln(288 x), 1) is applied before a final [0,1]
//! normalization.

use super::SpineAgeNet;
use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Contrast curve scale: values below e/288 flatten to the floor.
const LOG_CONTRAST_SCALE: f64 = 288.0;

#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    /// Row-major [height x width], in [0,1].
    pub values: Vec<f64>,
    pub prediction: f64,
    /// True when block-5 produced no activation anywhere; the map is all
    /// zeros in that case.
    pub all_zero: bool,
}

fn bilinear_upsample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    for i in 0..dh {
        // Pixel-center alignment, clamped at the borders.
        let sy = ((i as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).max(0.0);
        let y0 = (sy.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let fy = (sy - y0 as f64).clamp(0.0, 1.0);
        for j in 0..dw {
            let sx = ((j as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).max(0.0);
            let x0 = (sx.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let fx = (sx - x0 as f64).clamp(0.0, 1.0);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[i * dw + j] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn min_max_normalize(values: &mut [f64]) -> bool {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    values.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
    true
}

/// Attention map for one subject volume, evaluated in eval mode.
pub fn attention_map<S: Scalar>(
    net: &mut SpineAgeNet<S>,
    input: &[S],
    shape: [usize; 3],
) -> Result<AttentionMap> {
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if input.len() != d * h * w {
        return Err(Error::ShapeMismatch(format!(
            "input has {} voxels, shape {shape:?} needs {}",
            input.len(),
            d * h * w
        )));
    }
    net.eval_mode();
    net.zero_grad();
    let x = Tensor::raw(vec![1, 1, d, h, w], input.to_vec(), None);
    let (pred, act) = net.forward_full(&x)?;
    let prediction = pred.data()[0].as_f64();
    pred.backward()?;

    let ash = act.shape().to_vec(); // [1, C, d5, h5, w5]
    let (c, d5, h5, w5) = (ash[1], ash[2], ash[3], ash[4]);
    let spatial = d5 * h5 * w5;
    let act_data = act.data();
    if act_data.iter().all(|v| *v == S::zero()) {
        log::warn!("attention map: block-5 activations are all zero; emitting a zero map");
        return Ok(AttentionMap {
            height: h,
            width: w,
            values: vec![0.0; h * w],
            prediction,
            all_zero: true,
        });
    }
    let grad = act.grad().ok_or_else(|| {
        Error::InvalidArgument("block-5 activation received no gradient".into())
    })?;

    // Channel weights: spatial mean of the gradient.
    let mut cam = vec![0.0_f64; spatial];
    for ch in 0..c {
        let base = ch * spatial;
        let weight: f64 = grad[base..base + spatial]
            .iter()
            .map(|g| g.as_f64())
            .sum::<f64>()
            / spatial as f64;
        for s in 0..spatial {
            cam[s] += weight * act_data[base + s].as_f64();
        }
    }
    drop(act_data);
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    if !min_max_normalize(&mut cam) {
        log::warn!("attention map: rectified map is flat; emitting a zero map");
        return Ok(AttentionMap {
            height: h,
            width: w,
            values: vec![0.0; h * w],
            prediction,
            all_zero: true,
        });
    }

    // Mid-depth slice, upsampled to the input plane.
    let mid = d5 / 2;
    let slice: Vec<f64> = cam[mid * h5 * w5..(mid + 1) * h5 * w5].to_vec();
    let mut plane = bilinear_upsample(&slice, h5, w5, h, w);
    plane
        .iter_mut()
        .for_each(|v| *v = (LOG_CONTRAST_SCALE * *v).ln().max(1.0));
    min_max_normalize(&mut plane);
    Ok(AttentionMap {
        height: h,
        width: w,
        values: plane,
        prediction,
        all_zero: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = crate::rngs::rng_for(seed, crate::rngs::domain::BLOB_TEST, 2);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn map_covers_the_input_plane_in_unit_range() {
        // Height 32 survives four pools, so block 5 sees two spatial cells
        // and the map has an actual gradient across the plane. An untrained
        // net with a negative prediction rectifies to a flat map, so the
        // seed is chosen to predict positive.
        let mut net = SpineAgeNet::<f32>::new(0);
        let shape = [2usize, 32, 8];
        let input = random_input(512, 0);
        let map = attention_map(&mut net, &input, shape).unwrap();
        assert_eq!(map.values.len(), 256);
        assert_eq!((map.height, map.width), (32, 8));
        assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(!map.all_zero);
        assert!(map.prediction.is_finite());
        let max = map.values.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-12, "normalized max is 1");
    }

    #[test]
    fn identical_inputs_give_identical_maps() {
        let shape = [2usize, 8, 4];
        let input = random_input(64, 2);
        let mut net = SpineAgeNet::<f32>::new(5);
        let a = attention_map(&mut net, &input, shape).unwrap();
        let b = attention_map(&mut net, &input, shape).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.prediction, b.prediction);
    }

    #[test]
    fn dead_block_five_yields_a_flagged_zero_map() {
        let mut net = SpineAgeNet::<f32>::new(17);
        // Zero scale and shift on block 5's norm silence its ReLU.
        net.blocks[4].gamma.data_mut().iter_mut().for_each(|v| *v = 0.0);
        net.blocks[4].beta.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let shape = [2usize, 4, 2];
        let input = random_input(16, 3);
        let map = attention_map(&mut net, &input, shape).unwrap();
        assert!(map.all_zero);
        assert!(map.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_voxel_count_is_rejected() {
        let mut net = SpineAgeNet::<f32>::new(1);
        let err = attention_map(&mut net, &[0.0_f32; 10], [2, 4, 2]).unwrap_err();
        assert!(err.to_string().contains("voxels"), "{err}");
    }

    #[test]
    fn bilinear_matches_hand_interpolation() {
        // 2x2 -> 4x4 with pixel-center alignment.
        let src = [0.0, 1.0, 2.0, 3.0];
        let out = bilinear_upsample(&src, 2, 2, 4, 4);
        // Corners clamp to the nearest source pixel.
        assert!((out[0] - 0.0).abs() < 1e-12);
        assert!((out[3] - 1.0).abs() < 1e-12);
        assert!((out[12] - 2.0).abs() < 1e-12);
        assert!((out[15] - 3.0).abs() < 1e-12);
        // An interior pixel mixes all four sources: position (1,1) maps to
        // source coords (0.25, 0.25).
        let expect = 0.75 * (0.75 * 0.0 + 0.25 * 1.0) + 0.25 * (0.75 * 2.0 + 0.25 * 3.0);
        assert!((out[5] - expect).abs() < 1e-12, "{} vs {expect}", out[5]);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let src = [0.7; 6];
        let out = bilinear_upsample(&src, 2, 3, 8, 12);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
