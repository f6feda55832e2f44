//! Scan-rescan reliability: one-way random-effects ICC(1,1) for paired
//! measurements, with a percentile-bootstrap confidence interval.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rngs::{domain, rng_for};

/// Bootstrap replicate count used by the pipeline.
pub const ICC_BOOTSTRAP_REPS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct IccResult {
    pub icc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Bootstrap replicates that produced a finite ICC.
    pub replicates: usize,
}

/// ICC(1,1) for two measurements per subject:
/// (MSB - MSW) / (MSB + MSW), from the one-way ANOVA decomposition.
pub fn icc_1_1(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "ICC needs at least 3 subjects, got {n}"
        )));
    }
    let nf = n as f64;
    let means: Vec<f64> = pairs.iter().map(|&(a, b)| 0.5 * (a + b)).collect();
    let grand = means.iter().sum::<f64>() / nf;
    // k = 2 measurements; within df = n * (k - 1) = n, between df = n - 1.
    let msb = 2.0 * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (nf - 1.0);
    let msw = pairs
        .iter()
        .zip(&means)
        .map(|(&(a, b), &m)| (a - m) * (a - m) + (b - m) * (b - m))
        .sum::<f64>()
        / nf;
    let denom = msb + msw;
    if denom == 0.0 {
        return Err(Error::DegenerateFit(
            "all measurements are identical; ICC is undefined".into(),
        ));
    }
    Ok((msb - msw) / denom)
}

/// Linear-interpolation quantile of a sorted slice (R type 7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= m {
        sorted[m - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// ICC with a 95% percentile-bootstrap CI. Replicate `i` draws its RNG from
/// the bootstrap seed domain at index `i`, so results are reproducible for
/// a fixed master seed regardless of replicate order.
pub fn icc_with_bootstrap(pairs: &[(f64, f64)], master_seed: u64, reps: usize) -> Result<IccResult> {
    let icc = icc_1_1(pairs)?;
    if reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 2 replicates, got {reps}"
        )));
    }
    let n = pairs.len();
    let mut samples = Vec::with_capacity(reps);
    let mut resample = vec![(0.0, 0.0); n];
    for i in 0..reps {
        let mut rng = rng_for(master_seed, domain::BOOTSTRAP, i as u64);
        for slot in resample.iter_mut() {
            *slot = pairs[rng.gen_range(0..n)];
        }
        // A degenerate resample (every draw identical) carries no signal.
        if let Ok(v) = icc_1_1(&resample) {
            samples.push(v);
        }
    }
    if samples.len() < 2 {
        return Err(Error::DegenerateFit(
            "bootstrap produced fewer than 2 usable replicates".into(),
        ));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(IccResult {
        icc,
        ci_low: quantile_sorted(&samples, 0.025),
        ci_high: quantile_sorted(&samples, 0.975),
        n,
        replicates: samples.len(),
    })
}
