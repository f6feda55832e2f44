//! 3D convolutional regression network that maps a spine volume to an age
//! estimate.
//!
//! Five conv blocks (conv 3x3x3 -> batch norm -> ReLU -> max pool) walk the
//! channel ladder 1 -> 32 -> 64 -> 128 -> 256 -> 256, a 1x1x1 projection
//! block reduces to 64 channels before a global max pool, and a linear head
//! emits one value per subject. All spatial ops preserve shape except the
//! pools, so the parameter count is independent of the input size.

pub mod checkpoint;
pub mod gradcam;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcam::{attention_map, AttentionMap};
pub use train::{train, LossKind, TrainConfig, TrainReport, TrainSample};

use crate::autograd::{
    batchnorm3d, conv3d, global_max_pool, linear, maxpool3d, relu, BatchNormState, Scalar, Tensor,
};
use crate::error::{Error, Result};
use crate::rngs::{domain, rng_for};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Channel ladder; entry i is the input channel count of conv block i+1.
pub const CHANNELS: [usize; 6] = [1, 32, 64, 128, 256, 256];
/// Output channels of the 1x1x1 projection block.
pub const TOP_CHANNELS: usize = 64;

/// One conv + batch-norm unit. ReLU and pooling carry no parameters and
/// live in the forward pass.
pub struct ConvBlock<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub bn: BatchNormState<S>,
}

impl<S: Scalar> ConvBlock<S> {
    fn init(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        // He initialization for ReLU fan-in.
        let std = (2.0 / (cin * k * k * k) as f64).sqrt();
        let dist = Normal::<f64>::new(0.0, std).unwrap();
        let w: Vec<S> = (0..cout * cin * k * k * k)
            .map(|_| S::from_f64(dist.sample(rng)))
            .collect();
        ConvBlock {
            weight: Tensor::raw(vec![cout, cin, k, k, k], w, None),
            bias: Tensor::zeros(vec![cout]),
            gamma: Tensor::full(vec![cout], S::one()),
            beta: Tensor::zeros(vec![cout]),
            bn: BatchNormState::new(cout),
        }
    }
}

pub struct SpineAgeNet<S: Scalar> {
    pub blocks: Vec<ConvBlock<S>>,
    pub top: ConvBlock<S>,
    pub lin_weight: Tensor<S>,
    pub lin_bias: Tensor<S>,
    pub training: bool,
}

impl<S: Scalar> SpineAgeNet<S> {
    /// Fresh network with seeded initialization; weights depend only on the
    /// seed, never on input size.
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, domain::NET_INIT, 0);
        let blocks: Vec<ConvBlock<S>> = (0..5)
            .map(|i| ConvBlock::init(CHANNELS[i], CHANNELS[i + 1], 3, &mut rng))
            .collect();
        let top = ConvBlock::init(CHANNELS[5], TOP_CHANNELS, 1, &mut rng);
        let std = (2.0 / TOP_CHANNELS as f64).sqrt();
        let dist = Normal::<f64>::new(0.0, std).unwrap();
        let lw: Vec<S> = (0..TOP_CHANNELS)
            .map(|_| S::from_f64(dist.sample(&mut rng)))
            .collect();
        SpineAgeNet {
            blocks,
            top,
            lin_weight: Tensor::raw(vec![1, TOP_CHANNELS], lw, None),
            lin_bias: Tensor::zeros(vec![1]),
            training: true,
        }
    }

    pub fn train_mode(&mut self) {
        self.training = true;
    }

    pub fn eval_mode(&mut self) {
        self.training = false;
    }

    /// Forward pass returning the prediction and the block-5 post-ReLU
    /// activation (the attention-map target).
    pub fn forward_full(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        if x.shape().len() != 5 || x.shape()[1] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network expects [N,1,D,H,W], got {:?}",
                x.shape()
            )));
        }
        let training = self.training;
        let mut h = x.clone();
        let mut block5_act = None;
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let c = conv3d(&h, &b.weight, &b.bias)?;
            let n = batchnorm3d(&c, &b.gamma, &b.beta, &mut b.bn, training)?;
            let a = relu(&n);
            if i == 4 {
                block5_act = Some(a.clone());
            }
            h = maxpool3d(&a)?;
        }
        let t = self.top_forward(&h, training)?;
        let pooled = global_max_pool(&t)?;
        let out = linear(&pooled, &self.lin_weight, &self.lin_bias)?;
        Ok((out, block5_act.expect("five blocks always run")))
    }

    fn top_forward(&mut self, h: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        let c = conv3d(h, &self.top.weight, &self.top.bias)?;
        let n = batchnorm3d(&c, &self.top.gamma, &self.top.beta, &mut self.top.bn, training)?;
        Ok(relu(&n))
    }

    /// Prediction only: [N,1,D,H,W] -> [N,1].
    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_full(x)?.0)
    }

    /// Trainable tensors in a fixed order shared by the optimizer and the
    /// checkpoint format.
    pub fn parameters(&self) -> Vec<Tensor<S>> {
        self.named_parameters()
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = i + 1;
            out.push((format!("block{n}.conv.weight"), b.weight.clone()));
            out.push((format!("block{n}.conv.bias"), b.bias.clone()));
            out.push((format!("block{n}.bn.gamma"), b.gamma.clone()));
            out.push((format!("block{n}.bn.beta"), b.beta.clone()));
        }
        out.push(("top.conv.weight".into(), self.top.weight.clone()));
        out.push(("top.conv.bias".into(), self.top.bias.clone()));
        out.push(("top.bn.gamma".into(), self.top.gamma.clone()));
        out.push(("top.bn.beta".into(), self.top.beta.clone()));
        out.push(("head.weight".into(), self.lin_weight.clone()));
        out.push(("head.bias".into(), self.lin_bias.clone()));
        out
    }

    /// Batch-norm states in checkpoint order: blocks 1-5, then top.
    pub fn bn_states(&mut self) -> Vec<(String, &mut BatchNormState<S>)> {
        let mut out: Vec<(String, &mut BatchNormState<S>)> = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{}.bn", i + 1), &mut b.bn));
        }
        out.push(("top.bn".into(), &mut self.top.bn));
        out
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }
}

/// One census row: a named layer and its trainable parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusRow {
    pub layer: String,
    pub parameters: usize,
}

/// Per-layer parameter counts and the total. Derived from the architecture
/// constants alone: no tensors are built, so this is immediate and cannot
/// depend on input size.
pub fn parameter_census() -> (Vec<CensusRow>, usize) {
    let mut rows = Vec::new();
    for i in 0..5 {
        let (cin, cout) = (CHANNELS[i], CHANNELS[i + 1]);
        rows.push(CensusRow {
            layer: format!("block{}.conv", i + 1),
            parameters: cout * cin * 27 + cout,
        });
        rows.push(CensusRow {
            layer: format!("block{}.bn", i + 1),
            parameters: 2 * cout,
        });
    }
    rows.push(CensusRow {
        layer: "top.conv".into(),
        parameters: TOP_CHANNELS * CHANNELS[5] + TOP_CHANNELS,
    });
    rows.push(CensusRow {
        layer: "top.bn".into(),
        parameters: 2 * TOP_CHANNELS,
    });
    rows.push(CensusRow {
        layer: "head.linear".into(),
        parameters: TOP_CHANNELS + 1,
    });
    let total = rows.iter().map(|r| r.parameters).sum();
    (rows, total)
}

/// Flattens a volume into network input order. The network takes
/// [D,H,W] = (z, y, x): depth is the slice axis, height the longitudinal
/// axis, width the left-right axis. Returns the data and its [D,H,W] shape.
pub fn volume_to_input(vol: &crate::volume::Volume) -> (Vec<f32>, [usize; 3]) {
    let [nx, ny, nz] = vol.dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(vol.intensities[vol.index(x, y, z)]);
            }
        }
    }
    (out, [nz, ny, nx])
}

/// Batched eval-mode predictions for a flat sample list; reshapes each
/// sample to [1,D,H,W] and concatenates along N.
pub fn predict<S: Scalar>(
    net: &mut SpineAgeNet<S>,
    inputs: &[Vec<S>],
    shape: [usize; 3],
    batch: usize,
) -> Result<Vec<f64>> {
    let vol = shape[0] * shape[1] * shape[2];
    let mut preds = Vec::with_capacity(inputs.len());
    net.eval_mode();
    for chunk in inputs.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * vol);
        for s in chunk {
            if s.len() != vol {
                return Err(Error::ShapeMismatch(format!(
                    "sample has {} voxels, expected {vol}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        let x = Tensor::raw(
            vec![chunk.len(), 1, shape[0], shape[1], shape[2]],
            data,
            None,
        );
        let y = net.forward(&x)?;
        preds.extend(y.data().iter().map(|v| v.as_f64()));
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::time::Instant;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn census_matches_hand_counts() {
        let (rows, total) = parameter_census();
        let counts: Vec<usize> = rows.iter().map(|r| r.parameters).collect();
        assert_eq!(
            counts,
            vec![896, 64, 55360, 128, 221312, 256, 884992, 512, 1769728, 512, 16448, 128, 65]
        );
        assert_eq!(total, 2_950_401);
        assert_eq!(rows.len(), 13);
    }

    #[test]
    fn census_agrees_with_instantiated_tensors() {
        let started = Instant::now();
        let net = SpineAgeNet::<f32>::new(11);
        let by_tensor: usize = net.parameters().iter().map(|p| p.len()).sum();
        let (_, total) = parameter_census();
        assert_eq!(by_tensor, total);
        assert!(started.elapsed().as_secs() < 1, "construction must be fast");
    }

    #[test]
    fn forward_shape_and_determinism() {
        let mut net = SpineAgeNet::<f32>::new(3);
        net.eval_mode();
        let x = Tensor::full(vec![2, 1, 4, 8, 2], 0.25_f32);
        let y1 = net.forward(&x).unwrap();
        assert_eq!(y1.shape(), &[2, 1]);
        let y2 = net.forward(&x).unwrap();
        assert_eq!(*y1.data(), *y2.data());

        let mut net_b = SpineAgeNet::<f32>::new(3);
        net_b.eval_mode();
        let y3 = net_b.forward(&x).unwrap();
        assert_eq!(*y1.data(), *y3.data(), "same seed, same weights");

        let mut net_c = SpineAgeNet::<f32>::new(4);
        net_c.eval_mode();
        let y4 = net_c.forward(&x).unwrap();
        assert_ne!(*y1.data(), *y4.data(), "different seed, different weights");
    }

    #[test]
    fn eval_forward_is_batch_size_invariant() {
        let mut net = SpineAgeNet::<f64>::new(9);
        net.eval_mode();
        let mut rng = rng_for(77, domain::BLOB_TEST, 0);
        let shape = [4usize, 8, 2];
        let vol = 64;
        let samples: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..vol).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let together = predict(&mut net, &samples, shape, 6).unwrap();
        let singly = predict(&mut net, &samples, shape, 1).unwrap();
        let pairs = predict(&mut net, &samples, shape, 2).unwrap();
        assert!(max_abs_diff(&together, &singly) < 1e-5);
        assert!(max_abs_diff(&together, &pairs) < 1e-5);
    }

    #[test]
    fn training_mode_updates_running_stats_eval_does_not() {
        let mut net = SpineAgeNet::<f32>::new(5);
        let x = Tensor::full(vec![2, 1, 2, 4, 2], 0.5_f32);
        let before = net.blocks[0].bn.running_mean.clone();
        net.train_mode();
        net.forward(&x).unwrap();
        let after_train = net.blocks[0].bn.running_mean.clone();
        assert_ne!(before, after_train);
        net.eval_mode();
        net.forward(&x).unwrap();
        assert_eq!(after_train, net.blocks[0].bn.running_mean);
    }

    #[test]
    fn rejects_multichannel_input() {
        let mut net = SpineAgeNet::<f32>::new(5);
        let x = Tensor::full(vec![1, 2, 2, 2, 2], 0.0_f32);
        assert!(net.forward(&x).is_err());
    }
}
