//! Summary statistics across trials.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean and the half-width of the two-sided Student t interval at
/// `level`. The half-width is NaN for fewer than two values.
pub fn t_interval(values: &[f64], level: f64) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    (mean, t * (var / n as f64).sqrt())
}

/// 95% interval, the default reported in result files.
pub fn ci95(values: &[f64]) -> (f64, f64) {
    t_interval(values, 0.95)
}
