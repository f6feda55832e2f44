//! Age-dependent prediction bias correction.
//!
//! Regression-to-the-mean makes age models over-predict young subjects and
//! under-predict old ones. The fix regresses raw predictions on true age
//! (pred = alpha * age + beta), then inverts that line on new predictions.
//! The line must be fit on a held-out validation split, never on the data
//! being corrected for evaluation.

use crate::error::{Error, Result};

/// A fitted prediction-on-age line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasFit {
    pub alpha: f64,
    pub beta: f64,
}

impl BiasFit {
    /// Corrects one raw prediction: (pred - beta) / alpha.
    pub fn apply(&self, pred: f64) -> f64 {
        (pred - self.beta) / self.alpha
    }

    pub fn apply_all(&self, preds: &[f64]) -> Vec<f64> {
        preds.iter().map(|&p| self.apply(p)).collect()
    }
}

/// Least-squares fit of predictions on chronological ages.
pub fn fit_bias(ages: &[f64], preds: &[f64]) -> Result<BiasFit> {
    if ages.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ages vs {} predictions",
            ages.len(),
            preds.len()
        )));
    }
    if ages.len() < 2 {
        return Err(Error::InvalidArgument(
            "bias fit needs at least two subjects".into(),
        ));
    }
    let n = ages.len() as f64;
    let age_mean = ages.iter().sum::<f64>() / n;
    let pred_mean = preds.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&a, &p) in ages.iter().zip(preds) {
        sxx += (a - age_mean) * (a - age_mean);
        sxy += (a - age_mean) * (p - pred_mean);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "chronological ages have zero variance; the bias line is undefined".into(),
        ));
    }
    let alpha = sxy / sxx;
    if alpha.abs() < 1e-6 {
        return Err(Error::DegenerateFit(format!(
            "fitted slope {alpha:.3e} is too close to zero to invert"
        )));
    }
    Ok(BiasFit {
        alpha,
        beta: pred_mean - alpha * age_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unbiased_predictions_fit_the_identity_line() {
        let ages = vec![25.0, 38.0, 51.0, 64.0, 77.0];
        let fit = fit_bias(&ages, &ages).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        assert!(fit.beta.abs() < 1e-9);
        assert!((fit.apply(50.0) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn worked_example_alpha_two_beta_minus_thirty() {
        // pred = 2 * age - 30, so a raw prediction of 70 corrects to 50.
        let ages = vec![30.0, 40.0, 50.0, 60.0];
        let preds: Vec<f64> = ages.iter().map(|a| 2.0 * a - 30.0).collect();
        let fit = fit_bias(&ages, &preds).unwrap();
        assert!((fit.alpha - 2.0).abs() < 1e-12);
        assert!((fit.beta + 30.0).abs() < 1e-9);
        assert!((fit.apply(70.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn refitting_after_correction_is_the_identity() {
        // Noisy but age-correlated predictions: correcting them and fitting
        // again must land on alpha = 1, beta = 0 to within 1e-9.
        let ages: Vec<f64> = (0..40).map(|i| 22.0 + 1.45 * i as f64).collect();
        let preds: Vec<f64> = ages
            .iter()
            .enumerate()
            .map(|(i, &a)| 0.7 * a + 19.0 + ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let fit = fit_bias(&ages, &preds).unwrap();
        let corrected = fit.apply_all(&preds);
        let refit = fit_bias(&ages, &corrected).unwrap();
        assert!((refit.alpha - 1.0).abs() < 1e-9, "alpha = {}", refit.alpha);
        assert!(refit.beta.abs() < 1e-9, "beta = {}", refit.beta);
    }

    #[test]
    fn zero_age_variance_is_rejected() {
        let ages = vec![40.0; 5];
        let preds = vec![35.0, 38.0, 41.0, 44.0, 47.0];
        assert!(matches!(
            fit_bias(&ages, &preds),
            Err(crate::error::Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn near_zero_slope_is_rejected() {
        let ages = vec![20.0, 40.0, 60.0, 80.0];
        let preds = vec![50.0; 4];
        assert!(matches!(
            fit_bias(&ages, &preds),
            Err(crate::error::Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn mismatched_and_tiny_inputs_are_rejected() {
        assert!(fit_bias(&[1.0, 2.0], &[1.0]).is_err());
        assert!(fit_bias(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn exact_linear_bias_is_recovered_and_corrected(
            alpha in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
            beta in -40.0f64..40.0,
            mut ages in proptest::collection::vec(20.0f64..80.0, 4..30),
        ) {
            // Ensure genuine age spread so the fit is well-posed.
            ages[0] = 20.0;
            ages[1] = 80.0;
            let preds: Vec<f64> = ages.iter().map(|a| alpha * a + beta).collect();
            let fit = fit_bias(&ages, &preds).unwrap();
            prop_assert!((fit.alpha - alpha).abs() < 1e-6 * alpha.abs().max(1.0));
            prop_assert!((fit.beta - beta).abs() < 1e-5);
            let corrected = fit.apply_all(&preds);
            let refit = fit_bias(&ages, &corrected).unwrap();
            prop_assert!((refit.alpha - 1.0).abs() < 1e-9);
            prop_assert!(refit.beta.abs() < 1e-9);
        }
    }
}
