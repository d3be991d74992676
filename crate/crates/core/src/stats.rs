//! Small regression helpers for exponent fits.

use serde::Serialize;

use crate::error::{Error, Result};

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for two points or an exact fit.
    pub stderr: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateFit(format!("{} abscissae vs {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit { slope, intercept, stderr })
}

/// Fit of `log₂ v` against `log₂ u`; every value must be positive.
pub fn loglog_fit(us: &[f64], vs: &[f64]) -> Result<LinearFit> {
    if us.iter().chain(vs).any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateFit("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = us.iter().map(|u| u.log2()).collect();
    let ly: Vec<f64> = vs.iter().map(|v| v.log2()).collect();
    linear_fit(&lx, &ly)
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let ns = [1e3, 1e4, 1e5, 1e6];
        let mse: Vec<f64> = ns.iter().map(|n| 3.0 / n).collect();
        let fit = loglog_fit(&ns, &mse).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10);
        assert!(fit.stderr < 1e-10);
    }

    #[test]
    fn constant_has_zero_slope() {
        let fit = linear_fit(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.intercept, 5.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(linear_fit(&[1.0], &[1.0]), Err(Error::DegenerateFit(_))));
        assert!(matches!(linear_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateFit(_))));
        assert!(matches!(loglog_fit(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn noisy_stderr_positive() {
        let fit = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.1, 1.9, 3.0]).unwrap();
        assert!(fit.stderr > 0.0 && (fit.slope - 1.0).abs() < 0.1);
    }

    #[test]
    fn mean_var_basic() {
        assert_eq!(mean_var(&[1.0, 3.0]), (2.0, 2.0));
        assert_eq!(mean_var(&[4.0]), (4.0, 0.0));
    }
}
