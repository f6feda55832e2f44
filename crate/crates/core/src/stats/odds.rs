//! Condition odds ratios between high- and low-SAG subjects.
//!
//! Subjects are split on their spine age gap: the high group has SAG above
//! the upper cut, the low group below the lower cut, and everyone in the
//! middle band is excluded. For a binary condition the 2x2 table is
//!   a = high & condition,    b = high & clear,
//!   c = low  & condition,    d = low  & clear,
//! giving OR = (a/b) / (c/d) with a Wald CI on the log scale.

use crate::error::{Error, Result};

/// Default SAG cuts in years: high > 5, low < -5, middle excluded.
pub const SAG_HIGH_CUT: f64 = 5.0;
pub const SAG_LOW_CUT: f64 = -5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OddsResult {
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// 2x2 table counts before any continuity correction.
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    /// True when a zero cell forced the Haldane-Anscombe 0.5 correction.
    pub continuity_corrected: bool,
}

/// Odds ratio from raw 2x2 counts. When any cell is zero, 0.5 is added to
/// all four cells (Haldane-Anscombe) and the result is flagged.
pub fn odds_ratio_from_counts(a: u64, b: u64, c: u64, d: u64) -> Result<OddsResult> {
    if a + b == 0 {
        return Err(Error::InvalidArgument(
            "high-SAG group is empty; odds ratio is undefined".into(),
        ));
    }
    if c + d == 0 {
        return Err(Error::InvalidArgument(
            "low-SAG group is empty; odds ratio is undefined".into(),
        ));
    }
    let corrected = a == 0 || b == 0 || c == 0 || d == 0;
    let shift = if corrected { 0.5 } else { 0.0 };
    let (fa, fb, fc, fd) = (
        a as f64 + shift,
        b as f64 + shift,
        c as f64 + shift,
        d as f64 + shift,
    );
    let or = (fa / fb) / (fc / fd);
    let se = (1.0 / fa + 1.0 / fb + 1.0 / fc + 1.0 / fd).sqrt();
    Ok(OddsResult {
        odds_ratio: or,
        ci_low: (or.ln() - 1.96 * se).exp(),
        ci_high: (or.ln() + 1.96 * se).exp(),
        a,
        b,
        c,
        d,
        continuity_corrected: corrected,
    })
}

/// Builds the 2x2 table from per-subject SAGs and condition flags, then
/// computes the odds ratio. `high_cut` / `low_cut` bound the excluded
/// middle band: membership requires sag > high_cut or sag < low_cut.
pub fn odds_ratio(
    sags: &[f64],
    condition: &[bool],
    high_cut: f64,
    low_cut: f64,
) -> Result<OddsResult> {
    if sags.len() != condition.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} SAG values vs {} condition flags",
            sags.len(),
            condition.len()
        )));
    }
    if low_cut > high_cut {
        return Err(Error::InvalidArgument(format!(
            "low cut {low_cut} exceeds high cut {high_cut}"
        )));
    }
    let mut table = [0u64; 4];
    for (&sag, &has) in sags.iter().zip(condition) {
        if sag > high_cut {
            table[if has { 0 } else { 1 }] += 1;
        } else if sag < low_cut {
            table[if has { 2 } else { 3 }] += 1;
        }
    }
    odds_ratio_from_counts(table[0], table[1], table[2], table[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_matches_the_hand_computation() {
        // (20/80) / (5/95) = 0.25 / 0.052631... = 4.75 exactly.
        let r = odds_ratio_from_counts(20, 80, 5, 95).unwrap();
        assert_eq!(r.odds_ratio, 4.75);
        assert!(!r.continuity_corrected);
        assert!((r.ci_low - 1.7057535593382327).abs() < 1e-9);
        assert!((r.ci_high - 13.227291759985183).abs() < 1e-9);
    }

    #[test]
    fn identical_prevalence_gives_an_odds_ratio_of_one() {
        let r = odds_ratio_from_counts(10, 90, 10, 90).unwrap();
        assert_eq!(r.odds_ratio, 1.0);
        assert!(r.ci_low < 1.0 && r.ci_high > 1.0);
    }

    #[test]
    fn swapping_both_rows_and_columns_preserves_the_ratio() {
        let base = odds_ratio_from_counts(17, 43, 9, 81).unwrap();
        let flipped = odds_ratio_from_counts(81, 9, 43, 17).unwrap();
        assert!((base.odds_ratio - flipped.odds_ratio).abs() < 1e-12);
    }

    #[test]
    fn zero_cells_get_the_continuity_correction() {
        let r = odds_ratio_from_counts(0, 50, 10, 40).unwrap();
        assert!(r.continuity_corrected);
        assert!(r.odds_ratio.is_finite() && r.odds_ratio > 0.0);
        assert!(r.ci_low.is_finite() && r.ci_high.is_finite());
        // (0.5/50.5) / (10.5/40.5)
        let expected = (0.5 / 50.5) / (10.5 / 40.5);
        assert!((r.odds_ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_groups_are_rejected() {
        assert!(odds_ratio_from_counts(0, 0, 5, 5).is_err());
        assert!(odds_ratio_from_counts(5, 5, 0, 0).is_err());
    }

    #[test]
    fn the_middle_band_is_excluded_with_strict_cuts() {
        // SAG exactly at a cut falls in the excluded middle.
        let sags = vec![6.0, 5.0, 0.0, -5.0, -6.0, 7.0, -8.0];
        let cond = vec![true, true, true, true, false, false, true];
        let r = odds_ratio(&sags, &cond, SAG_HIGH_CUT, SAG_LOW_CUT).unwrap();
        assert_eq!((r.a, r.b, r.c, r.d), (1, 1, 1, 1));
    }

    #[test]
    fn mismatched_lengths_and_inverted_cuts_are_rejected() {
        assert!(odds_ratio(&[1.0], &[true, false], 5.0, -5.0).is_err());
        assert!(odds_ratio(&[1.0, 2.0], &[true, false], -5.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn flipping_the_condition_inverts_the_ratio(
            a in 1u64..60, b in 1u64..60, c in 1u64..60, d in 1u64..60,
        ) {
            let fwd = odds_ratio_from_counts(a, b, c, d).unwrap();
            let flip = odds_ratio_from_counts(b, a, d, c).unwrap();
            let product = fwd.odds_ratio * flip.odds_ratio;
            prop_assert!((product - 1.0).abs() < 1e-12);
        }

        #[test]
        fn the_point_estimate_always_sits_inside_the_interval(
            a in 0u64..40, b in 0u64..40, c in 0u64..40, d in 0u64..40,
        ) {
            prop_assume!(a + b > 0 && c + d > 0);
            let r = odds_ratio_from_counts(a, b, c, d).unwrap();
            prop_assert!(r.ci_low <= r.odds_ratio);
            prop_assert!(r.odds_ratio <= r.ci_high);
        }
    }
}
