//! Student-t distribution and the paired t-test.
//!
//! The t CDF goes through the regularized incomplete beta function,
//! `P(|T| > t) = I_{ν/(ν+t²)}(ν/2, 1/2)`, evaluated with the continued
//! fraction in modified Lentz form. `ln Γ` uses the Lanczos approximation
//! (g = 7, 9 terms).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = LANCZOS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
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

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| ≥ |t|)` for Student t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// `P(T ≤ t)`.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, dof);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// `mean(d)/(sd(d)/√n)` for `d = b − a`; 0 when degenerate with zero
    /// mean, ±∞ when degenerate otherwise.
    pub t: f64,
    /// Two-sided p value with `n − 1` degrees of freedom; `None` when
    /// degenerate.
    pub p: Option<f64>,
    /// The differences have zero variance.
    pub degenerate: bool,
}

impl TTestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p.is_some_and(|p| p < alpha)
    }
}

/// Paired t-test on `d = b − a`. Samples must be aligned (same seed at the
/// same index).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        let t = if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        return Ok(TTestResult {
            n,
            mean_diff: mean,
            sd_diff: sd,
            t,
            p: None,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
        p: Some(student_t_two_sided(t, (n - 1) as f64)),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(0.1), statrs::function::gamma::ln_gamma(0.1), epsilon = 1e-12);
    }

    #[test]
    fn inc_beta_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a, I_x(1, b) = 1 − (1 − x)^b
        for x in [0.1, 0.37, 0.5, 0.9] {
            assert_relative_eq!(inc_beta(1.0, 1.0, x), x, epsilon = 1e-13);
            assert_relative_eq!(inc_beta(3.0, 1.0, x), x.powi(3), epsilon = 1e-13);
            assert_relative_eq!(inc_beta(1.0, 2.5, x), 1.0 - (1.0 - x).powf(2.5), epsilon = 1e-13);
        }
        assert_eq!(inc_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(inc_beta(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn cauchy_special_case() {
        // dof 1 is Cauchy: F(t) = 1/2 + atan(t)/π
        for t in [-3.0, -0.5, 0.0, 1.0, 7.0] {
            let want = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert_relative_eq!(student_t_cdf(t, 1.0), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn textbook_fixture() {
        let a = [0.0; 5];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_ttest(&a, &b).unwrap();
        assert!((r.t - 4.2426).abs() < 1e-4, "t = {}", r.t);
        assert!((r.p.unwrap() - 0.0132).abs() < 1e-4, "p = {:?}", r.p);
        let oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(r.t));
        assert!((r.p.unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn degenerate_and_symmetry() {
        let a = [74.0, 75.0, 76.0];
        let r = paired_ttest(&a, &a).unwrap();
        assert!(r.degenerate && r.t == 0.0 && r.p.is_none());
        let shifted: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        let r = paired_ttest(&a, &shifted).unwrap();
        assert!(r.degenerate && r.t == f64::INFINITY);

        let b = [75.5, 75.0, 78.0];
        let fwd = paired_ttest(&a, &b).unwrap();
        let rev = paired_ttest(&b, &a).unwrap();
        assert_eq!(fwd.t, -rev.t);
        assert_eq!(fwd.p, rev.p);
    }

    #[test]
    fn input_errors() {
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn tails_against_oracle() {
        for dof in [1.0, 2.0, 4.0, 9.0, 29.0, 200.0] {
            let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
            for t in [-8.0, -2.5, -0.3, 0.0, 0.7, 1.96, 4.0, 12.0] {
                assert!((student_t_cdf(t, dof) - dist.cdf(t)).abs() < 1e-10, "dof {dof} t {t}");
            }
        }
    }
}
