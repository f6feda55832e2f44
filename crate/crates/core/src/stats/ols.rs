//! Ordinary least squares via the normal equations.
//!
//! Solves X'X b = X'y with Gaussian elimination under partial pivoting.
//! Before solving, a rank-revealing elimination pass collects every column
//! whose pivot collapses, so a rank-deficient design fails loudly with the
//! full list of collinear columns instead of producing garbage estimates.

use crate::error::{Error, Result};
use crate::stats::tdist::t_quantile;

/// One fitted coefficient with its inference summary.
#[derive(Debug, Clone)]
pub struct OlsColumn {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the 95% CI excludes zero.
    pub significant: bool,
    /// Number of subjects with a nonzero entry in this column.
    pub n_nonzero: usize,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub columns: Vec<OlsColumn>,
    pub n: usize,
    pub df: usize,
    pub s2: f64,
    pub residuals: Vec<f64>,
}

/// Relative pivot floor: pivots below `tol * max_diag(X'X)` count as zero.
const PIVOT_REL_TOL: f64 = 1e-9;

fn build_normal_equations(rows: &[Vec<f64>], y: &[f64], p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in rows.iter().zip(y) {
        for j in 0..p {
            xty[j] += row[j] * yi;
            for k in j..p {
                xtx[j][k] += row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            xtx[j][k] = xtx[k][j];
        }
    }
    (xtx, xty)
}

/// Forward elimination with partial pivoting, collecting the names of all
/// columns that never find a usable pivot.
fn collinear_columns(xtx: &[Vec<f64>], names: &[String]) -> Vec<String> {
    let p = names.len();
    let max_diag = (0..p).fold(0.0f64, |m, j| m.max(xtx[j][j].abs())).max(1.0);
    let tol = PIVOT_REL_TOL * max_diag;
    let mut a: Vec<Vec<f64>> = xtx.to_vec();
    let mut used = vec![false; p];
    let mut dependent = Vec::new();
    for col in 0..p {
        let pivot_row = (0..p)
            .filter(|&r| !used[r])
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap());
        let pivot_row = match pivot_row {
            Some(r) if a[r][col].abs() >= tol => r,
            _ => {
                dependent.push(names[col].clone());
                continue;
            }
        };
        used[pivot_row] = true;
        let prow = a[pivot_row].clone();
        for r in 0..p {
            if r == pivot_row || used[r] {
                continue;
            }
            let factor = a[r][col] / prow[col];
            for k in col..p {
                a[r][k] -= factor * prow[k];
            }
        }
    }
    dependent
}

/// Gauss-Jordan on [A | I | rhs]: returns (A^-1, solution). The caller
/// guarantees A is nonsingular (the rank pass ran first).
fn invert_and_solve(a: &[Vec<f64>], rhs: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = rhs.len();
    // Augmented width: p (matrix) + p (identity) + 1 (rhs).
    let mut m: Vec<Vec<f64>> = (0..p)
        .map(|r| {
            let mut row = vec![0.0; 2 * p + 1];
            row[..p].copy_from_slice(&a[r]);
            row[p + r] = 1.0;
            row[2 * p] = rhs[r];
            row
        })
        .collect();
    for col in 0..p {
        let pivot_row = (col..p)
            .max_by(|&r, &s| m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot_row);
        let pivot = m[col][col];
        for k in col..2 * p + 1 {
            m[col][k] /= pivot;
        }
        let prow = m[col].clone();
        for r in 0..p {
            if r == col {
                continue;
            }
            let factor = m[r][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..2 * p + 1 {
                m[r][k] -= factor * prow[k];
            }
        }
    }
    let inv: Vec<Vec<f64>> = (0..p).map(|r| m[r][p..2 * p].to_vec()).collect();
    let sol: Vec<f64> = (0..p).map(|r| m[r][2 * p]).collect();
    (inv, sol)
}

/// Fits y on the named design columns and reports 95% confidence intervals.
pub fn ols(names: &[String], rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let p = names.len();
    let n = rows.len();
    if p == 0 {
        return Err(Error::InvalidArgument("design matrix has no columns".into()));
    }
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} design rows vs {} responses",
            y.len()
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::ShapeMismatch(format!(
            "design row has {} entries, expected {p}",
            bad.len()
        )));
    }
    if n < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} subjects to fit {p} covariates with an error estimate, got {n}",
            p + 1
        )));
    }

    let (xtx, xty) = build_normal_equations(rows, y, p);
    let dependent = collinear_columns(&xtx, names);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let (inv, b) = invert_and_solve(&xtx, &xty);

    let residuals: Vec<f64> = rows
        .iter()
        .zip(y)
        .map(|(row, &yi)| yi - row.iter().zip(&b).map(|(x, c)| x * c).sum::<f64>())
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = n - p;
    let s2 = rss / df as f64;
    let tq = t_quantile(0.975, df as f64)?;

    let columns = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = (s2 * inv[j][j].max(0.0)).sqrt();
            let ci_low = b[j] - tq * se;
            let ci_high = b[j] + tq * se;
            OlsColumn {
                name: name.clone(),
                estimate: b[j],
                se,
                ci_low,
                ci_high,
                significant: ci_low > 0.0 || ci_high < 0.0,
                n_nonzero: rows.iter().filter(|r| r[j] != 0.0).count(),
            }
        })
        .collect();

    Ok(OlsFit {
        columns,
        n,
        df,
        s2,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_point_line_matches_the_closed_form() {
        // x = [0, 1, 2], y = [1, 3, 4]. By hand: slope 3/2, intercept 7/6,
        // RSS 1/6, df 1, se(slope) = sqrt(1/12), se(intercept) = sqrt(5/36).
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let y = vec![1.0, 3.0, 4.0];
        let fit = ols(&names(&["intercept", "x"]), &rows, &y).unwrap();
        assert_eq!(fit.df, 1);
        assert!((fit.s2 - 1.0 / 6.0).abs() < 1e-12);

        let intercept = &fit.columns[0];
        let slope = &fit.columns[1];
        assert!((intercept.estimate - 7.0 / 6.0).abs() < 1e-12);
        assert!((slope.estimate - 1.5).abs() < 1e-12);
        assert!((intercept.se - 0.37267799624996495).abs() < 1e-12);
        assert!((slope.se - 0.28867513459481287).abs() < 1e-12);

        // t(0.975, 1) = tan(0.475 pi) = 12.706204736174696.
        assert!((slope.ci_low - (-2.167965362404479)).abs() < 1e-8);
        assert!((slope.ci_high - 5.167965362404479).abs() < 1e-8);
        assert!(!slope.significant);
        assert!(!intercept.significant);

        assert_eq!(intercept.n_nonzero, 3);
        assert_eq!(slope.n_nonzero, 2);
    }

    #[test]
    fn planted_coefficients_are_recovered_exactly() {
        // Noiseless response: estimates must match the planted vector to 1e-8
        // and every nonzero coefficient must come out significant.
        let truth = [2.0, -1.5, 0.75, 3.25, -0.5];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..60 {
            let mut row = vec![1.0];
            for _ in 1..truth.len() {
                row.push(next());
            }
            y.push(row.iter().zip(&truth).map(|(x, b)| x * b).sum::<f64>());
            rows.push(row);
        }
        let cols = names(&["intercept", "c1", "c2", "c3", "c4"]);
        let fit = ols(&cols, &rows, &y).unwrap();
        for (col, &b) in fit.columns.iter().zip(&truth) {
            assert!(
                (col.estimate - b).abs() < 1e-8,
                "{}: {} vs {b}",
                col.name,
                col.estimate
            );
            assert!(col.significant, "{} should be significant", col.name);
        }
        for e in &fit.residuals {
            assert!(e.abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_columns_are_reported_as_collinear() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let a = i as f64;
                vec![1.0, a, a]
            })
            .collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 2.0 + 1.0).collect();
        match ols(&names(&["intercept", "left", "right"]), &rows, &y) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["right"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn a_summed_column_is_reported_as_collinear() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.71).cos();
                vec![1.0, a, b, a + b]
            })
            .collect();
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        match ols(&names(&["intercept", "a", "b", "sum"]), &rows, &y) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["sum"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn zero_variance_columns_are_reported_as_collinear() {
        // An all-zero column has a zero pivot; a constant column duplicates
        // the intercept. Both must be named.
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![1.0, i as f64, 0.0, 2.5])
            .collect();
        let y: Vec<f64> = (0..8).map(|i| 3.0 * i as f64).collect();
        match ols(&names(&["intercept", "x", "dead", "constant"]), &rows, &y) {
            Err(Error::RankDeficient { columns }) => {
                assert!(columns.contains(&"dead".to_string()));
                assert!(columns.contains(&"constant".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn too_few_subjects_is_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 3.0]];
        let y = vec![1.0, 2.0];
        assert!(ols(&names(&["intercept", "x"]), &rows, &y).is_err());
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal_to_every_design_column(
            xs in proptest::collection::vec(-5.0f64..5.0, 20..40),
            ys in proptest::collection::vec(-50.0f64..50.0, 20..40),
        ) {
            let n = xs.len().min(ys.len());
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![1.0, xs[i], xs[i] * xs[i]])
                .collect();
            let y = &ys[..n];
            if let Ok(fit) = ols(&names(&["intercept", "x", "x2"]), &rows, y) {
                for j in 0..3 {
                    let dot: f64 = fit
                        .residuals
                        .iter()
                        .zip(&rows)
                        .map(|(e, r)| e * r[j])
                        .sum();
                    let scale: f64 = rows.iter().map(|r| r[j].abs()).sum::<f64>() * 50.0;
                    prop_assert!(dot.abs() <= 1e-7 * (1.0 + scale), "col {j}: {dot}");
                }
            }
        }
    }
}
