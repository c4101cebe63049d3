//! Compensated sums, sample moments and ordinary least squares.

use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean, variance and their standard errors of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std_error: f64,
    /// `sqrt((m4 - s^4) / count)`, the large-sample SE of the variance.
    pub variance_std_error: f64,
}

impl SampleMoments {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                variance: f64::NAN,
                std_error: f64::NAN,
                variance_std_error: f64::NAN,
            };
        }
        let mut s = KahanSum::default();
        xs.iter().for_each(|&x| s.add(x));
        let mean = s.value() / count as f64;
        let mut s2 = KahanSum::default();
        let mut s4 = KahanSum::default();
        for &x in xs {
            let d = x - mean;
            s2.add(d * d);
            s4.add(d * d * d * d);
        }
        let (variance, std_error, variance_std_error) = if count > 1 {
            let v = s2.value() / (count - 1) as f64;
            let m2 = s2.value() / count as f64;
            let m4 = s4.value() / count as f64;
            (v, (v / count as f64).sqrt(), ((m4 - m2 * m2).max(0.0) / count as f64).sqrt())
        } else {
            (0.0, 0.0, 0.0)
        };
        Self {
            count,
            mean,
            variance,
            std_error,
            variance_std_error,
        }
    }
}

/// Fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// `d slope / d y_i`, for propagating per-point uncertainties.
    pub slope_weights: Vec<f64>,
    pub intercept_weights: Vec<f64>,
}

pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_weights: Vec<f64> = x.iter().map(|v| (v - mx) / sxx).collect();
    let intercept_weights = slope_weights.iter().map(|w| 1.0 / k - mx * w).collect();
    LinearFit {
        intercept,
        slope,
        r_squared,
        slope_weights,
        intercept_weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = KahanSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn moments_of_small_sample() {
        let m = SampleMoments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((m.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 0.25, 0.0625, 1.0 / 64.0];
        let y: Vec<f64> = x.iter().map(|v| 0.4 + 0.1 * v).collect();
        let f = ols(&x, &y);
        assert!((f.slope - 0.1).abs() < 1e-12);
        assert!((f.intercept - 0.4).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let s: f64 = f.slope_weights.iter().zip(&y).map(|(w, v)| w * v).sum();
        assert!((s - f.slope).abs() < 1e-12);
    }
}
