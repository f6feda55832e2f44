//! Evaluation statistics: accuracy metrics, bias correction, SAG
//! association models, odds ratios, and scan-rescan reliability.

pub mod bias;
pub mod design;
pub mod icc;
pub mod metrics;
pub mod odds;
pub mod ols;
pub mod tdist;

pub use bias::{fit_bias, BiasFit};
pub use design::{
    design_matrix, fit_sag_ols, CovariateGroup, DesignMatrix, RegressionSubject, SagFit, SagRow,
};
pub use icc::{icc_1_1, icc_with_bootstrap, IccResult, ICC_BOOTSTRAP_REPS};
pub use metrics::{mae, r2, wmae};
pub use odds::{odds_ratio, odds_ratio_from_counts, OddsResult, SAG_HIGH_CUT, SAG_LOW_CUT};
pub use ols::{ols, OlsColumn, OlsFit};
pub use tdist::{t_cdf, t_quantile};

use crate::error::{Error, Result};

/// Descriptive table of mean SAG per age bracket: (bracket, n, mean).
/// Purely descriptive; no inferential test is attached.
pub fn mean_sag_by_bracket(brackets: &[u32], sags: &[f64]) -> Result<Vec<(u32, usize, f64)>> {
    if brackets.len() != sags.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bracket labels vs {} SAG values",
            brackets.len(),
            sags.len()
        )));
    }
    if brackets.is_empty() {
        return Err(Error::InvalidArgument(
            "SAG summary needs at least one subject".into(),
        ));
    }
    let mut codes: Vec<u32> = brackets.to_vec();
    codes.sort_unstable();
    codes.dedup();
    Ok(codes
        .into_iter()
        .map(|code| {
            let mut total = 0.0;
            let mut count = 0usize;
            for (&b, &s) in brackets.iter().zip(sags) {
                if b == code {
                    total += s;
                    count += 1;
                }
            }
            (code, count, total / count as f64)
        })
        .collect())
}
