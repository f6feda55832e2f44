//! Versioned binary checkpoints for the network, optimizer, scheduler,
//! and training progress.
//!
//! Layout (all little-endian): magic, version, config hash, master seed,
//! progress counters, then named parameter blocks, named batch-norm
//! statistics, Adam moments, and the plateau scheduler. Values are stored
//! as f64, which widens f32 exactly, so save -> load -> forward is
//! bit-identical. Writes go to a temp file in the same directory followed
//! by an atomic rename.

use super::SpineAgeNet;
use crate::autograd::{AdamState, PlateauScheduler, Scalar};
use crate::error::{Error, Result};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SPAGECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSnapshot {
    pub lr: f64,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedSnapshot {
    pub factor: f64,
    pub patience: u32,
    pub best: f64,
    pub stale_epochs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub seed: u64,
    pub next_epoch: u32,
    pub best_epoch: u32,
    pub best_val: f64,
    pub params: Vec<(String, Vec<f64>)>,
    pub bn: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub adam: AdamSnapshot,
    pub sched: SchedSnapshot,
}

/// Captures everything needed to resume training exactly where it stopped.
pub fn snapshot<S: Scalar>(
    net: &mut SpineAgeNet<S>,
    adam: &AdamState<S>,
    sched: &PlateauScheduler,
    seed: u64,
    config_hash: u64,
    next_epoch: u32,
    best_epoch: u32,
    best_val: f64,
) -> Checkpoint {
    let params = net
        .named_parameters()
        .into_iter()
        .map(|(name, t)| (name, t.data().iter().map(|v| v.as_f64()).collect()))
        .collect();
    let bn = net
        .bn_states()
        .into_iter()
        .map(|(name, st)| {
            (
                name,
                st.running_mean.iter().map(|v| v.as_f64()).collect(),
                st.running_var.iter().map(|v| v.as_f64()).collect(),
            )
        })
        .collect();
    Checkpoint {
        config_hash,
        seed,
        next_epoch,
        best_epoch,
        best_val,
        params,
        bn,
        adam: AdamSnapshot {
            lr: adam.lr,
            step_count: adam.step_count,
            m: adam
                .m
                .iter()
                .map(|b| b.iter().map(|v| v.as_f64()).collect())
                .collect(),
            v: adam
                .v
                .iter()
                .map(|b| b.iter().map(|v| v.as_f64()).collect())
                .collect(),
        },
        sched: SchedSnapshot {
            factor: sched.factor,
            patience: sched.patience,
            best: sched.best,
            stale_epochs: sched.stale_epochs,
        },
    }
}

/// Loads checkpoint contents into the network and rebuilds the optimizer
/// and scheduler. Parameter names and lengths must match the architecture.
pub fn restore<S: Scalar>(
    net: &mut SpineAgeNet<S>,
    ck: &Checkpoint,
) -> Result<(AdamState<S>, PlateauScheduler)> {
    let named = net.named_parameters();
    if named.len() != ck.params.len() {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint has {} parameter blocks, network has {}",
            ck.params.len(),
            named.len()
        )));
    }
    for ((name, tensor), (ck_name, values)) in named.iter().zip(&ck.params) {
        if name != ck_name || tensor.len() != values.len() {
            return Err(Error::CheckpointFormat(format!(
                "parameter block mismatch: network {name}[{}] vs checkpoint {ck_name}[{}]",
                tensor.len(),
                values.len()
            )));
        }
        let mut d = tensor.data_mut();
        for (slot, v) in d.iter_mut().zip(values) {
            *slot = S::from_f64(*v);
        }
    }
    for ((name, st), (ck_name, mean, var)) in net.bn_states().into_iter().zip(&ck.bn) {
        if &name != ck_name || st.running_mean.len() != mean.len() {
            return Err(Error::CheckpointFormat(format!(
                "batch-norm block mismatch: network {name} vs checkpoint {ck_name}"
            )));
        }
        st.running_mean = mean.iter().map(|v| S::from_f64(*v)).collect();
        st.running_var = var.iter().map(|v| S::from_f64(*v)).collect();
    }
    let mut adam = AdamState::new(&net.parameters(), ck.adam.lr);
    if adam.m.len() != ck.adam.m.len() {
        return Err(Error::CheckpointFormat(
            "optimizer moment count does not match the parameter list".into(),
        ));
    }
    adam.step_count = ck.adam.step_count;
    adam.m = ck
        .adam
        .m
        .iter()
        .map(|b| b.iter().map(|v| S::from_f64(*v)).collect())
        .collect();
    adam.v = ck
        .adam
        .v
        .iter()
        .map(|b| b.iter().map(|v| S::from_f64(*v)).collect())
        .collect();
    let sched = PlateauScheduler {
        factor: ck.sched.factor,
        patience: ck.sched.patience,
        best: ck.sched.best,
        stale_epochs: ck.sched.stale_epochs,
    };
    Ok((adam, sched))
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn name(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.0.write_all(s.as_bytes())
    }
    fn slice(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.u64(v.len() as u64)?;
        for x in v {
            self.f64(*x)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::CheckpointFormat(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(Error::CheckpointFormat(format!(
                "implausible name length {len}"
            )));
        }
        let mut b = vec![0u8; len];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::CheckpointFormat(format!("truncated checkpoint: {e}")))?;
        String::from_utf8(b).map_err(|e| Error::CheckpointFormat(format!("bad name: {e}")))
    }
    fn slice(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = Writer(BufWriter::new(file));
        (|| -> std::io::Result<()> {
            w.0.write_all(MAGIC)?;
            w.u32(VERSION)?;
            w.u64(ck.config_hash)?;
            w.u64(ck.seed)?;
            w.u32(ck.next_epoch)?;
            w.u32(ck.best_epoch)?;
            w.f64(ck.best_val)?;
            w.u32(ck.params.len() as u32)?;
            for (name, data) in &ck.params {
                w.name(name)?;
                w.slice(data)?;
            }
            w.u32(ck.bn.len() as u32)?;
            for (name, mean, var) in &ck.bn {
                w.name(name)?;
                w.slice(mean)?;
                w.slice(var)?;
            }
            w.f64(ck.adam.lr)?;
            w.u64(ck.adam.step_count)?;
            w.u32(ck.adam.m.len() as u32)?;
            for (m, v) in ck.adam.m.iter().zip(&ck.adam.v) {
                w.slice(m)?;
                w.slice(v)?;
            }
            w.f64(ck.sched.factor)?;
            w.u32(ck.sched.patience)?;
            w.f64(ck.sched.best)?;
            w.u32(ck.sched.stale_epochs)?;
            w.0.flush()
        })()
        .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader(BufReader::new(file));
    let magic: [u8; 8] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {magic:02x?}; not a checkpoint file"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let config_hash = r.u64()?;
    let seed = r.u64()?;
    let next_epoch = r.u32()?;
    let best_epoch = r.u32()?;
    let best_val = r.f64()?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.name()?;
        let data = r.slice()?;
        params.push((name, data));
    }
    let n_bn = r.u32()? as usize;
    let mut bn = Vec::with_capacity(n_bn);
    for _ in 0..n_bn {
        let name = r.name()?;
        let mean = r.slice()?;
        let var = r.slice()?;
        bn.push((name, mean, var));
    }
    let lr = r.f64()?;
    let step_count = r.u64()?;
    let n_moments = r.u32()? as usize;
    let mut m = Vec::with_capacity(n_moments);
    let mut v = Vec::with_capacity(n_moments);
    for _ in 0..n_moments {
        m.push(r.slice()?);
        v.push(r.slice()?);
    }
    let sched = SchedSnapshot {
        factor: r.f64()?,
        patience: r.u32()?,
        best: r.f64()?,
        stale_epochs: r.u32()?,
    };
    Ok(Checkpoint {
        config_hash,
        seed,
        next_epoch,
        best_epoch,
        best_val,
        params,
        bn,
        adam: AdamSnapshot {
            lr,
            step_count,
            m,
            v,
        },
        sched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn tiny_checkpoint() -> Checkpoint {
        let mut net = SpineAgeNet::<f32>::new(21);
        let adam = AdamState::new(&net.parameters(), 0.01);
        let sched = PlateauScheduler::default();
        snapshot(&mut net, &adam, &sched, 21, 0xfeed, 3, 1, 4.5)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ck = tiny_checkpoint();
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
        assert!(!path.with_extension("ckpt.tmp").exists(), "temp file removed");
    }

    #[test]
    fn restored_network_forward_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = SpineAgeNet::<f32>::new(8);
        // Drift the running stats so restore has something non-default.
        net.train_mode();
        let x = Tensor::full(vec![2, 1, 2, 4, 2], 0.7_f32);
        net.forward(&x).unwrap();
        let adam = AdamState::new(&net.parameters(), 0.01);
        let sched = PlateauScheduler::default();
        let ck = snapshot(&mut net, &adam, &sched, 8, 1, 1, 0, f64::INFINITY);
        save_checkpoint(&path, &ck).unwrap();

        net.eval_mode();
        let want = net.forward(&x).unwrap();

        let mut other = SpineAgeNet::<f32>::new(999);
        let loaded = load_checkpoint(&path).unwrap();
        restore(&mut other, &loaded).unwrap();
        other.eval_mode();
        let got = other.forward(&x).unwrap();
        assert_eq!(*want.data(), *got.data());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &tiny_checkpoint()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &tiny_checkpoint()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &tiny_checkpoint()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99;
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
