use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

use crate::error::{Error, Result};

/// Sample mean with a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Interval {
    pub const Z95: f64 = 1.959_963_984_540_054;

    pub fn from_samples(xs: &[f64]) -> Interval {
        let n = xs.len();
        if n == 0 {
            return Interval { mean: f64::NAN, half_width: f64::NAN, n };
        }
        let mean = xs.mean();
        let half_width = if n > 1 { Self::Z95 * xs.std_dev() / (n as f64).sqrt() } else { 0.0 };
        Interval { mean, half_width, n }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub mean_difference: f64,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Domain(format!("paired t-test needs two equal samples of at least 2, got {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = (&d).mean();
    let sd = (&d).std_dev();
    let df = n - 1.0;
    if sd == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTest { t: if mean == 0.0 { 0.0 } else { f64::INFINITY.copysign(mean) }, df, p, mean_difference: mean });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, df, p, mean_difference: mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_of_known_sample() {
        let i = Interval::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(i.mean, 2.5);
        // sample sd = sqrt(5/3)
        assert!((i.half_width - Interval::Z95 * (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn t_test_against_table() {
        // differences 1, 2, 3, 4, 5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5) / sqrt(5)) = 4.2426
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 18f64.sqrt()).abs() < 1e-12);
        // two-sided critical value of t(4) at 0.05 is 2.776, at 0.01 is 4.604
        assert!(r.p < 0.05 && r.p > 0.01, "p = {}", r.p);
        assert_eq!(paired_t_test(&a, &a).unwrap().p, 1.0);
    }
}
