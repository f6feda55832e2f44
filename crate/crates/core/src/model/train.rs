//! Mini-batch training driver: Adam at lr 0.01, reduce-on-plateau on the
//! validation loss, seeded shuffles, and a best-validation checkpoint.
//!
//! Every source of randomness is derived from (seed, epoch), so a run can
//! stop after any epoch, resume from the checkpoint, and produce the same
//! remaining epochs as an uninterrupted run.

use super::checkpoint::{save_checkpoint, snapshot};
use super::SpineAgeNet;
use crate::autograd::{mse_loss, smooth_l1_loss, AdamState, PlateauScheduler, Tensor};
use crate::error::{Error, Result};
use crate::rngs::{domain, rng_for};
use rand::seq::SliceRandom;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    SmoothL1,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mse => write!(f, "mse"),
            LossKind::SmoothL1 => write!(f, "smooth_l1"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "smooth_l1" => Ok(LossKind::SmoothL1),
            other => Err(Error::Parse(format!(
                "unknown loss '{other}', expected mse or smooth_l1"
            ))),
        }
    }
}

/// One training example: a flattened [D,H,W] volume and its target age.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Vec<f32>,
    pub target: f32,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub start_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub input_shape: [usize; 3],
    pub config_hash: u64,
    /// Where the best-validation checkpoint goes; skipped when None.
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(input_shape: [usize; 3], seed: u64) -> Self {
        TrainConfig {
            epochs: 25,
            start_epoch: 0,
            batch_size: 2,
            lr: 0.01,
            seed,
            loss: LossKind::Mse,
            input_shape,
            config_hash: 0,
            checkpoint_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub steps: usize,
}

fn batch_tensor(samples: &[TrainSample], idx: &[usize], shape: [usize; 3]) -> Tensor<f32> {
    let vol = shape[0] * shape[1] * shape[2];
    let mut data = Vec::with_capacity(idx.len() * vol);
    for &i in idx {
        data.extend_from_slice(&samples[i].input);
    }
    Tensor::raw(
        vec![idx.len(), 1, shape[0], shape[1], shape[2]],
        data,
        None,
    )
}

fn target_tensor(samples: &[TrainSample], idx: &[usize]) -> Tensor<f32> {
    Tensor::raw(
        vec![idx.len(), 1],
        idx.iter().map(|&i| samples[i].target).collect(),
        None,
    )
}

fn loss_value(kind: LossKind, pred: f64, target: f64) -> f64 {
    let d = pred - target;
    match kind {
        LossKind::Mse => d * d,
        LossKind::SmoothL1 => {
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        }
    }
}

fn check_samples(samples: &[TrainSample], vol: usize, split: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{split} split is empty")));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.input.len() != vol {
            return Err(Error::ShapeMismatch(format!(
                "{split} sample {i} has {} voxels, expected {vol}",
                s.input.len()
            )));
        }
    }
    Ok(())
}

/// Validation loss in eval mode. Per-sample forwards are independent, so
/// batching only bounds memory and cannot change the result.
fn validation_loss(
    net: &mut SpineAgeNet<f32>,
    cfg: &TrainConfig,
    val: &[TrainSample],
) -> Result<f64> {
    net.eval_mode();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let x = batch_tensor(val, chunk, cfg.input_shape);
        let y = net.forward(&x)?;
        let yd = y.data();
        for (row, &i) in chunk.iter().enumerate() {
            total += loss_value(cfg.loss, yd[row] as f64, val[i].target as f64);
        }
    }
    Ok(total / val.len() as f64)
}

/// Runs epochs `start_epoch..epochs` with the given optimizer and scheduler
/// state. Use [`train`] for a fresh run; pass restored state to resume.
pub fn train_with_state(
    net: &mut SpineAgeNet<f32>,
    adam: &mut AdamState<f32>,
    sched: &mut PlateauScheduler,
    cfg: &TrainConfig,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    mut best: (usize, f64),
) -> Result<TrainReport> {
    let vol = cfg.input_shape.iter().product();
    check_samples(train_set, vol, "training")?;
    check_samples(val_set, vol, "validation")?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }

    let mut rows = Vec::new();
    let mut steps = 0usize;
    for epoch in cfg.start_epoch..cfg.epochs {
        let lr_used = adam.lr;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, domain::EPOCH_SHUFFLE, epoch as u64));

        net.train_mode();
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch_tensor(train_set, chunk, cfg.input_shape);
            let t = target_tensor(train_set, chunk);
            net.zero_grad();
            let y = net.forward(&x)?;
            let loss = match cfg.loss {
                LossKind::Mse => mse_loss(&y, &t)?,
                LossKind::SmoothL1 => smooth_l1_loss(&y, &t)?,
            };
            loss.backward()?;
            adam.step(&net.parameters())?;
            steps += 1;
            train_loss += loss.item() as f64 * chunk.len() as f64;
        }
        train_loss /= train_set.len() as f64;

        let val_loss = validation_loss(net, cfg, val_set)?;
        rows.push(EpochRow {
            epoch,
            lr: lr_used,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss);
            if let Some(path) = &cfg.checkpoint_path {
                let ck = snapshot(
                    net,
                    adam,
                    sched,
                    cfg.seed,
                    cfg.config_hash,
                    epoch as u32 + 1,
                    epoch as u32,
                    val_loss,
                );
                save_checkpoint(path, &ck)?;
            }
        }
        sched.step(val_loss, &mut adam.lr);
        log::info!(
            "epoch {epoch}: lr {lr_used:.6} train {train_loss:.4} val {val_loss:.4}"
        );
    }
    Ok(TrainReport {
        rows,
        best_epoch: best.0,
        best_val: best.1,
        steps,
    })
}

/// Fresh training run: new Adam and plateau state at `cfg.lr`.
pub fn train(
    net: &mut SpineAgeNet<f32>,
    cfg: &TrainConfig,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
) -> Result<TrainReport> {
    let mut adam = AdamState::new(&net.parameters(), cfg.lr);
    let mut sched = PlateauScheduler::default();
    train_with_state(
        net,
        &mut adam,
        &mut sched,
        cfg,
        train_set,
        val_set,
        (0, f64::INFINITY),
    )
}

/// Writes the per-epoch log as CSV with stable formatting.
pub fn write_train_log(path: &std::path::Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.10}", r.lr),
            format!("{:.10}", r.train_loss),
            format!("{:.10}", r.val_loss),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::checkpoint::{load_checkpoint, restore};
    use super::*;
    use rand::Rng;

    const SHAPE: [usize; 3] = [2, 4, 2];

    fn toy_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = rng_for(seed, domain::BLOB_TEST, 1);
        (0..n)
            .map(|_| {
                let level: f32 = rng.gen_range(0.0..1.0);
                let input = (0..16)
                    .map(|_| level + rng.gen_range(-0.05..0.05))
                    .collect();
                TrainSample {
                    input,
                    target: 30.0 + 50.0 * level,
                }
            })
            .collect()
    }

    #[test]
    fn four_samples_batch_two_is_two_steps_per_epoch() {
        let train_set = toy_samples(4, 1);
        let val_set = toy_samples(2, 2);
        let mut net = SpineAgeNet::<f32>::new(7);
        let mut cfg = TrainConfig::new(SHAPE, 7);
        cfg.epochs = 1;
        let report = train(&mut net, &cfg, &train_set, &val_set).unwrap();
        assert_eq!(report.steps, 2);
        assert_eq!(report.rows.len(), 1);
    }

    #[test]
    fn fixed_seed_reproduces_the_log_exactly() {
        let train_set = toy_samples(6, 3);
        let val_set = toy_samples(3, 4);
        let mut cfg = TrainConfig::new(SHAPE, 11);
        cfg.epochs = 3;
        let mut net_a = SpineAgeNet::<f32>::new(11);
        let a = train(&mut net_a, &cfg, &train_set, &val_set).unwrap();
        let mut net_b = SpineAgeNet::<f32>::new(11);
        let b = train(&mut net_b, &cfg, &train_set, &val_set).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn empty_splits_are_rejected_by_name() {
        let samples = toy_samples(2, 5);
        let mut net = SpineAgeNet::<f32>::new(1);
        let cfg = TrainConfig::new(SHAPE, 1);
        let err = train(&mut net, &cfg, &[], &samples).unwrap_err();
        assert!(err.to_string().contains("training"), "{err}");
        let err = train(&mut net, &cfg, &samples, &[]).unwrap_err();
        assert!(err.to_string().contains("validation"), "{err}");
    }

    #[test]
    fn resume_from_checkpoint_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let train_set = toy_samples(8, 6);
        let val_set = toy_samples(4, 7);

        // Uninterrupted: 4 epochs.
        let mut cfg = TrainConfig::new(SHAPE, 5);
        cfg.epochs = 4;
        let mut net_a = SpineAgeNet::<f32>::new(5);
        let full = train(&mut net_a, &cfg, &train_set, &val_set).unwrap();

        // Stop after 2, snapshot everything, resume into a fresh network.
        let mut cfg_head = cfg.clone();
        cfg_head.epochs = 2;
        let mut net_b = SpineAgeNet::<f32>::new(5);
        let mut adam = AdamState::new(&net_b.parameters(), cfg.lr);
        let mut sched = PlateauScheduler::default();
        let head = train_with_state(
            &mut net_b,
            &mut adam,
            &mut sched,
            &cfg_head,
            &train_set,
            &val_set,
            (0, f64::INFINITY),
        )
        .unwrap();
        let path = dir.path().join("mid.ckpt");
        let ck = snapshot(
            &mut net_b,
            &adam,
            &sched,
            5,
            0,
            2,
            head.best_epoch as u32,
            head.best_val,
        );
        save_checkpoint(&path, &ck).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        let mut net_c = SpineAgeNet::<f32>::new(404);
        let (mut adam_c, mut sched_c) = restore(&mut net_c, &loaded).unwrap();
        let mut cfg_tail = cfg.clone();
        cfg_tail.start_epoch = loaded.next_epoch as usize;
        let tail = train_with_state(
            &mut net_c,
            &mut adam_c,
            &mut sched_c,
            &cfg_tail,
            &train_set,
            &val_set,
            (loaded.best_epoch as usize, loaded.best_val),
        )
        .unwrap();

        let stitched: Vec<EpochRow> =
            head.rows.iter().chain(tail.rows.iter()).cloned().collect();
        assert_eq!(full.rows, stitched, "resumed run must match");
        assert_eq!(full.best_epoch, tail.best_epoch);
    }

    #[test]
    fn loss_kind_parses_and_prints() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert_eq!(
            "smooth_l1".parse::<LossKind>().unwrap(),
            LossKind::SmoothL1
        );
        assert!("huber".parse::<LossKind>().is_err());
        assert_eq!(LossKind::SmoothL1.to_string(), "smooth_l1");
    }

    #[test]
    fn training_reduces_loss_on_a_learnable_toy() {
        let train_set = toy_samples(24, 8);
        let val_set = toy_samples(8, 9);
        let mut net = SpineAgeNet::<f32>::new(2);
        let mut cfg = TrainConfig::new(SHAPE, 2);
        cfg.epochs = 12;
        let report = train(&mut net, &cfg, &train_set, &val_set).unwrap();
        let first = report.rows.first().unwrap().val_loss;
        let best = report.best_val;
        assert!(
            best < first * 0.5,
            "val loss should at least halve: first {first}, best {best}"
        );
    }

    #[test]
    fn log_csv_has_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![EpochRow {
            epoch: 0,
            lr: 0.01,
            train_loss: 1.25,
            val_loss: 2.5,
        }];
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_train_log(&p1, &rows).unwrap();
        write_train_log(&p2, &rows).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_loss\n"));
    }
}
