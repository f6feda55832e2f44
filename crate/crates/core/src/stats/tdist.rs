//! Student-t quantiles, computed from first principles.
//!
//! The CDF goes through the regularized incomplete beta function
//! (continued-fraction evaluation); quantiles invert it by bisection.
//! No quantile tables are shipped.

use crate::error::{Error, Result};

/// Lanczos g=7, n=9 coefficients.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments.
fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection keeps the Lanczos series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (Lentz's method).
/// Converges quickly when x < (a+1)/(a+b+2); the caller guarantees that.
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t, inverted from the CDF by bisection.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "t quantile needs 0 < p < 1, got {p}"
        )));
    }
    if !(df > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t quantile needs df > 0, got {df}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-t_quantile(1.0 - p, df)?);
    }
    // Bracket the root above zero, then bisect.
    let mut hi = 1.0;
    let mut grow = 0;
    while t_cdf(hi, df) < p {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::DegenerateFit(format!(
                "t quantile failed to bracket p = {p} at df = {df}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn df1_matches_the_cauchy_closed_form() {
        // At one degree of freedom the t distribution is Cauchy, whose
        // quantile is tan(pi * (p - 1/2)).
        let q = t_quantile(0.975, 1.0).unwrap();
        let analytic = (0.475 * std::f64::consts::PI).tan();
        assert!((q - analytic).abs() < 1e-9, "q = {q}, analytic = {analytic}");
        assert!((q - 12.706204736174696).abs() < 1e-9);
    }

    #[test]
    fn df2_matches_the_algebraic_closed_form() {
        // At two degrees of freedom: q = u * sqrt(2 / (1 - u^2)), u = 2p - 1.
        let q = t_quantile(0.975, 2.0).unwrap();
        assert!((q - 4.302652729749463).abs() < 1e-9, "q = {q}");
    }

    #[test]
    fn matches_reference_library_across_a_grid() {
        for &df in &[1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 10.0, 20.0, 30.0, 60.0, 120.0] {
            let reference = StudentsT::new(0.0, 1.0, df).unwrap();
            for &p in &[0.9, 0.95, 0.975, 0.99, 0.995] {
                let ours = t_quantile(p, df).unwrap();
                let theirs = reference.inverse_cdf(p);
                let rel = (ours - theirs).abs() / theirs.abs().max(1.0);
                assert!(rel < 1e-8, "df = {df}, p = {p}: {ours} vs {theirs}");
            }
        }
    }

    #[test]
    fn quantiles_are_antisymmetric_and_round_trip() {
        for &df in &[1.0, 3.0, 7.0, 25.0] {
            for &p in &[0.6, 0.8, 0.975] {
                let hi = t_quantile(p, df).unwrap();
                let lo = t_quantile(1.0 - p, df).unwrap();
                assert!((hi + lo).abs() < 1e-10);
                assert!((t_cdf(hi, df) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn out_of_range_arguments_are_rejected() {
        assert!(t_quantile(0.0, 5.0).is_err());
        assert!(t_quantile(1.0, 5.0).is_err());
        assert!(t_quantile(0.975, 0.0).is_err());
        assert!(t_quantile(0.975, -2.0).is_err());
    }
}
