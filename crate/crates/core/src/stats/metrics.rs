//! Regression accuracy metrics: MAE, bracket-weighted MAE, and R².

use crate::error::{Error, Result};

fn check_paired(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument(
            "metrics need at least one sample".into(),
        ));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_paired(preds, targets)?;
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / preds.len() as f64)
}

/// Bracket-weighted MAE: the unweighted mean of per-bracket MAEs, so every
/// age bracket counts equally regardless of how many subjects it holds.
/// Every bracket in `required` must appear in `brackets`.
pub fn wmae(preds: &[f64], targets: &[f64], brackets: &[u32], required: &[u32]) -> Result<f64> {
    check_paired(preds, targets)?;
    if brackets.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bracket labels vs {} samples",
            brackets.len(),
            preds.len()
        )));
    }
    if required.is_empty() {
        return Err(Error::InvalidArgument(
            "weighted MAE needs at least one required bracket".into(),
        ));
    }
    for &b in brackets {
        if !required.contains(&b) {
            return Err(Error::InvalidArgument(format!(
                "sample carries bracket {b}, which is not in the required set"
            )));
        }
    }
    let mut acc = 0.0;
    for &b in required {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..preds.len() {
            if brackets[i] == b {
                total += (preds[i] - targets[i]).abs();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyBracket(b));
        }
        acc += total / count as f64;
    }
    Ok(acc / required.len() as f64)
}

/// Coefficient of determination. Errors when the targets have no variance.
pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_paired(preds, targets)?;
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateFit(
            "R^2 is undefined when the targets have zero variance".into(),
        ));
    }
    let ss_res: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
