//! Small statistics helpers.

pub fn mean(xs: &[f64]) -> f64 { xs.iter().sum::<f64>() / xs.len() as f64 }

/// Unbiased sample standard deviation.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (mean(xs), sample_std(xs) / (xs.len() as f64).sqrt())
}

/// Weighted least-squares straight line `y = intercept + slope x`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard errors from the weighted normal equations.
    pub slope_err: f64,
    pub intercept_err: f64,
    pub chi2: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 { self.intercept + self.slope * x }
}

/// Fits `y = intercept + slope x` with weights `1/sigma^2`. Needs at least
/// two distinct `x` values.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n || sigma.len() != n {
        return None;
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let w = 1.0 / (sigma[k] * sigma[k]);
        if !w.is_finite() {
            return None;
        }
        s += w;
        sx += w * x[k];
        sy += w * y[k];
    }
    // centered sums for conditioning
    let (xm, ym) = (sx / s, sy / s);
    for k in 0..n {
        let w = 1.0 / (sigma[k] * sigma[k]);
        sxx += w * (x[k] - xm).powi(2);
        sxy += w * (x[k] - xm) * (y[k] - ym);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2 = (0..n).map(|k| ((y[k] - intercept - slope * x[k]) / sigma[k]).powi(2)).sum();
    Some(LinearFit {
        slope,
        intercept,
        slope_err: (1.0 / sxx).sqrt(),
        intercept_err: (1.0 / s + xm * xm / sxx).sqrt(),
        chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.3 - 1.7 * v).collect();
        let f = weighted_linear_fit(&x, &y, &[0.1, 0.2, 0.1, 0.3]).unwrap();
        assert!((f.slope + 1.7).abs() < 1e-12);
        assert!((f.intercept - 0.3).abs() < 1e-12);
        assert!(f.chi2 < 1e-20);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(weighted_linear_fit(&[1.0], &[1.0], &[1.0]).is_none());
        assert!(weighted_linear_fit(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]).is_none());
        assert!(weighted_linear_fit(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_standard_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
