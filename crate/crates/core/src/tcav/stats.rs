//! Summary statistics and t-tests over per-run TCAV scores.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; exactly 0 when all values are equal.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
fn two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

fn need_two(what: &str, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientData {
            what: format!("{what} samples for a t-test"),
            requested: 2,
            available: n,
        });
    }
    Ok(())
}

fn degenerate(diff: f64) -> TTest {
    if diff == 0.0 {
        TTest {
            t: 0.0,
            df: f64::NAN,
            p_value: 1.0,
        }
    } else {
        TTest {
            t: diff.signum() * f64::INFINITY,
            df: f64::NAN,
            p_value: 0.0,
        }
    }
}

/// Welch's unequal-variance two-sided test.
///
/// With zero variance on both sides: `p = 1` for equal means, `p = 0`
/// otherwise.
pub fn two_sided_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    need_two("first", a.len())?;
    need_two("second", b.len())?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(degenerate(diff));
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p_value: two_sided_p(t, df),
    })
}

/// One-sample two-sided test of `mean(a) = mu`.
pub fn one_sample_t_test(a: &[f64], mu: f64) -> Result<TTest> {
    need_two("", a.len())?;
    let n = a.len() as f64;
    let v = sample_variance(a) / n;
    let diff = mean(a) - mu;
    if v == 0.0 {
        return Ok(degenerate(diff));
    }
    let t = diff / v.sqrt();
    let df = n - 1.0;
    Ok(TTest {
        t,
        df,
        p_value: two_sided_p(t, df),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Significance {
    pub p_value: f64,
    pub significant: bool,
}

/// Welch test of concept scores against random-vs-random scores.
pub fn significance_vs_random(concept: &[f64], random: &[f64], alpha: f64) -> Result<Significance> {
    let p_value = two_sided_t_test(concept, random)?.p_value;
    Ok(Significance {
        p_value,
        significant: p_value <= alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [0.2, 0.4, 0.9];
        let r = two_sided_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_conventions() {
        assert_eq!(two_sided_t_test(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap().p_value, 1.0);
        assert_eq!(two_sided_t_test(&[1.0, 1.0], &[0.0, 0.0]).unwrap().p_value, 0.0);
        assert_eq!(one_sample_t_test(&[0.5; 4], 0.5).unwrap().p_value, 1.0);
        assert_eq!(one_sample_t_test(&[1.0; 4], 0.5).unwrap().p_value, 0.0);
    }

    #[test]
    fn well_separated_small_samples() {
        let a = [0.1, 0.2, 0.15, 0.12];
        let b = [0.9, 0.95, 0.88, 0.92];
        assert!(two_sided_t_test(&a, &b).unwrap().p_value < 1e-3);
    }

    #[test]
    fn welch_reference_example() {
        // scipy.stats.ttest_ind(a1, a2, equal_var=False)
        let a1 = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4,
        ];
        let a2 = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4,
        ];
        let r = two_sided_t_test(&a1, &a2).unwrap();
        assert!((r.t - -2.455356).abs() < 1e-6, "t = {}", r.t);
        assert!((r.df - 24.988529).abs() < 1e-6, "df = {}", r.df);
        assert!((r.p_value - 0.021378).abs() < 1e-3, "p = {}", r.p_value);
    }

    #[test]
    fn one_sample_reference() {
        // scipy.stats.ttest_1samp([0.45, 0.55, 0.65, 0.75], 0.5)
        let r = one_sample_t_test(&[0.45, 0.55, 0.65, 0.75], 0.5).unwrap();
        assert!((r.t - 1.549193).abs() < 1e-6, "t = {}", r.t);
        assert_eq!(r.df, 3.0);
        assert!((r.p_value - 0.219102).abs() < 1e-6, "p = {}", r.p_value);
    }

    #[test]
    fn needs_two_samples() {
        assert!(two_sided_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(one_sample_t_test(&[1.0], 0.5).is_err());
    }

    #[test]
    fn std_is_exactly_zero_for_constant() {
        assert_eq!(std_dev(&[0.1; 30]), 0.0);
        assert!(std_dev(&[0.0, 1.0]) > 0.0);
    }

    #[test]
    fn significance_flags() {
        let random = [0.4, 0.5, 0.6, 0.5, 0.45, 0.55];
        assert!(significance_vs_random(&[1.0; 6], &random, 0.05).unwrap().significant);
        let s = significance_vs_random(&random, &random, 0.05).unwrap();
        assert!(!s.significant && (s.p_value - 1.0).abs() < 1e-12);
    }
}
