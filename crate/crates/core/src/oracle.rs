//! Known priors and the exact Bayes rule, used as simulation ground truth.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaLaw};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::families::{FamilyKind, FamilyModel};
use crate::quad::{self, QuadOptions};

/// Tail mass discarded when truncating an unbounded prior.
const TAIL: f64 = 1e-12;
/// `Φ^{-1}(1 − 1e−12)`.
const NORMAL_TAIL_Z: f64 = 7.034_483_825_376_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorModel {
    Normal { mu0: f64, sigma0: f64 },
    /// Shape `a`, rate `rate`.
    Gamma { a: f64, rate: f64 },
    PointMass { theta0: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// JSON form, e.g. `{"prior": "normal", "mu0": 0, "sigma0": 1}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub prior: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

fn required(name: &str, v: Option<f64>) -> Result<f64> {
    match v {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("prior parameter '{name}' missing or not finite"))),
    }
}

impl PriorModel {
    pub fn from_config(cfg: &PriorConfig) -> Result<Self> {
        let prior = match cfg.prior.trim().to_ascii_lowercase().as_str() {
            "normal" => PriorModel::Normal {
                mu0: cfg.mu0.unwrap_or(0.0),
                sigma0: required("sigma0", cfg.sigma0.or(Some(1.0)))?,
            },
            "gamma" => PriorModel::Gamma {
                a: required("a", cfg.a)?,
                rate: required("rate", cfg.rate)?,
            },
            "point_mass" | "point" => PriorModel::PointMass {
                theta0: required("theta0", cfg.theta0)?,
            },
            "uniform" => PriorModel::Uniform {
                lo: required("lo", cfg.lo)?,
                hi: required("hi", cfg.hi)?,
            },
            other => return Err(Error::Config(format!("unknown prior '{other}'"))),
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn to_config(&self) -> PriorConfig {
        match *self {
            PriorModel::Normal { mu0, sigma0 } => PriorConfig {
                prior: "normal".into(),
                mu0: Some(mu0),
                sigma0: Some(sigma0),
                ..Default::default()
            },
            PriorModel::Gamma { a, rate } => PriorConfig {
                prior: "gamma".into(),
                a: Some(a),
                rate: Some(rate),
                ..Default::default()
            },
            PriorModel::PointMass { theta0 } => PriorConfig {
                prior: "point_mass".into(),
                theta0: Some(theta0),
                ..Default::default()
            },
            PriorModel::Uniform { lo, hi } => PriorConfig {
                prior: "uniform".into(),
                lo: Some(lo),
                hi: Some(hi),
                ..Default::default()
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorModel::Normal { sigma0, .. } => sigma0 > 0.0,
            PriorModel::Gamma { a, rate } => a > 0.0 && rate > 0.0,
            PriorModel::PointMass { .. } => true,
            PriorModel::Uniform { lo, hi } => lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior parameters {self:?}")))
        }
    }

    /// `g(θ)`; zero for the point mass (it has no density).
    pub fn density(&self, theta: f64) -> f64 {
        match *self {
            PriorModel::Normal { mu0, sigma0 } => {
                let z = (theta - mu0) / sigma0;
                (-0.5 * z * z).exp() / (sigma0 * (2.0 * std::f64::consts::PI).sqrt())
            }
            PriorModel::Gamma { a, rate } => {
                if theta <= 0.0 {
                    0.0
                } else {
                    (a * rate.ln() + (a - 1.0) * theta.ln() - rate * theta - ln_gamma(a)).exp()
                }
            }
            PriorModel::PointMass { .. } => 0.0,
            PriorModel::Uniform { lo, hi } => {
                if theta >= lo && theta <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorModel::Normal { mu0, sigma0 } => {
                let z: f64 = rng.sample(StandardNormal);
                mu0 + sigma0 * z
            }
            PriorModel::Gamma { a, rate } => GammaDist::new(a, 1.0 / rate).expect("validated").sample(rng),
            PriorModel::PointMass { theta0 } => theta0,
            PriorModel::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    pub fn moments(&self) -> (f64, f64) {
        match *self {
            PriorModel::Normal { mu0, sigma0 } => (mu0, sigma0 * sigma0),
            PriorModel::Gamma { a, rate } => (a / rate, a / (rate * rate)),
            PriorModel::PointMass { theta0 } => (theta0, 0.0),
            PriorModel::Uniform { lo, hi } => (0.5 * (lo + hi), (hi - lo).powi(2) / 12.0),
        }
    }

    /// Interval outside which the prior has mass below `1e−12`.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            PriorModel::Normal { mu0, sigma0 } => (mu0 - NORMAL_TAIL_Z * sigma0, mu0 + NORMAL_TAIL_Z * sigma0),
            PriorModel::Gamma { a, rate } => {
                // The lower end stays at 0: for a < 1 the density is singular there.
                let law = GammaLaw::new(a, rate).expect("validated");
                (0.0, law.inverse_cdf(1.0 - TAIL))
            }
            PriorModel::PointMass { theta0 } => (theta0, theta0),
            PriorModel::Uniform { lo, hi } => (lo, hi),
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A family paired with a prior: the full Bayesian model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSpec {
    pub family: FamilyModel,
    pub prior: PriorModel,
}

impl PosteriorSpec {
    pub fn new(family: FamilyModel, prior: PriorModel) -> Result<Self> {
        let (lo, hi) = prior.support();
        let (dlo, dhi) = family.theta_domain();
        let inside = |t: f64| (t > dlo || dlo == f64::NEG_INFINITY) && t < dhi;
        let exact_lo = match prior {
            PriorModel::Uniform { lo, .. } => lo,
            PriorModel::Gamma { .. } => f64::MIN_POSITIVE,
            _ => lo,
        };
        if !inside(exact_lo) || !inside(hi) {
            return Err(Error::Config(format!(
                "prior support [{lo}, {hi}] not inside the {} parameter space",
                family.name()
            )));
        }
        Ok(PosteriorSpec { family, prior })
    }

    /// Breakpoints for θ-quadrature at `x`: the prior window plus the
    /// points where `q(x|·)` is not smooth.
    fn theta_breaks(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.prior.support();
        let mut breaks = quad::uniform_breaks(lo, hi, (hi - lo) / 32.0);
        if let PriorModel::Gamma { .. } = self.prior {
            let first = breaks[1];
            let near_zero: Vec<f64> = (1..48).map(|j| first * 0.5f64.powi(j)).collect();
            breaks = quad::merge_breaks(breaks, &near_zero);
        }
        let kink = match self.family.kind {
            FamilyKind::DoubleExponential { .. } | FamilyKind::UniformScale => Some(x),
            _ => None,
        };
        if let Some(k) = kink {
            if k > lo && k < hi {
                breaks = quad::merge_breaks(breaks, &[k]);
            }
        }
        breaks
    }

    fn theta_integral(&self, x: f64, weight: impl Fn(f64) -> f64) -> Result<f64> {
        if let PriorModel::PointMass { theta0 } = self.prior {
            return Ok(weight(theta0) * self.family.density(x, theta0));
        }
        let breaks = self.theta_breaks(x);
        let f = |t: f64| weight(t) * self.family.density(x, t) * self.prior.density(t);
        Ok(quad::integrate_with_breaks(f, &breaks, QuadOptions::with_tol(1e-15, 1e-13))?.value)
    }

    /// `p(x) = ∫ q(x|θ) g(θ) dθ` by adaptive quadrature.
    pub fn marginal_p(&self, x: f64) -> Result<f64> {
        self.theta_integral(x, |_| 1.0)
    }

    /// `Ψ(x) = ∫ θ q(x|θ) g(θ) dθ` by adaptive quadrature.
    pub fn psi_numerator(&self, x: f64) -> Result<f64> {
        self.theta_integral(x, |t| t)
    }

    /// Closed-form `(p, Ψ)` for the conjugate and degenerate pairs.
    pub fn closed_form(&self, x: f64) -> Option<(f64, f64)> {
        match (self.family.kind, self.prior) {
            (_, PriorModel::PointMass { theta0 }) => {
                let q = self.family.density(x, theta0);
                Some((q, theta0 * q))
            }
            (FamilyKind::Normal { sigma }, PriorModel::Normal { mu0, sigma0 }) => {
                let v = sigma * sigma + sigma0 * sigma0;
                let p = (-(x - mu0).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                let t = (sigma0 * sigma0 * x + sigma * sigma * mu0) / v;
                Some((p, p * t))
            }
            (FamilyKind::Normal { sigma }, PriorModel::Uniform { lo, hi }) => {
                let (za, zb) = ((lo - x) / sigma, (hi - x) / sigma);
                let mass = std_normal_cdf(zb) - std_normal_cdf(za);
                let p = mass / (hi - lo);
                let psi = (x * mass + sigma * (std_normal_pdf(za) - std_normal_pdf(zb))) / (hi - lo);
                Some((p, psi))
            }
            (FamilyKind::Weibull { b }, PriorModel::Gamma { a, rate }) => {
                if x <= 0.0 {
                    return Some((0.0, 0.0));
                }
                let s = rate + x.powf(b);
                let p = (a.ln() + b.ln() + (b - 1.0) * x.ln() + a * rate.ln() - (a + 1.0) * s.ln()).exp();
                Some((p, p * (a + 1.0) / s))
            }
            (FamilyKind::Gamma { beta }, PriorModel::Gamma { a, rate }) => {
                if x <= 0.0 {
                    return Some((0.0, 0.0));
                }
                let s = rate + x;
                let lp = (beta - 1.0) * x.ln() + a * rate.ln() + ln_gamma(a + beta)
                    - ln_gamma(a)
                    - ln_gamma(beta)
                    - (a + beta) * s.ln();
                let p = lp.exp();
                Some((p, p * (a + beta) / s))
            }
            _ => None,
        }
    }

    /// `(p(x), Ψ(x))`, closed form when available, quadrature otherwise.
    pub fn p_psi(&self, x: f64) -> Result<(f64, f64)> {
        match self.closed_form(x) {
            Some(v) => Ok(v),
            None => Ok((self.marginal_p(x)?, self.psi_numerator(x)?)),
        }
    }

    /// Closed-form posterior mean when available.
    pub fn closed_form_t(&self, y: f64) -> Option<f64> {
        match (self.family.kind, self.prior) {
            (_, PriorModel::PointMass { theta0 }) => Some(theta0),
            (FamilyKind::Normal { sigma }, PriorModel::Normal { mu0, sigma0 }) => {
                Some((sigma0 * sigma0 * y + sigma * sigma * mu0) / (sigma0 * sigma0 + sigma * sigma))
            }
            (FamilyKind::Weibull { b }, PriorModel::Gamma { a, rate }) => Some((a + 1.0) / (rate + y.powf(b))),
            (FamilyKind::Gamma { beta }, PriorModel::Gamma { a, rate }) => Some((a + beta) / (rate + y)),
            _ => None,
        }
    }

    /// `t(y) = Ψ(y)/p(y)` from quadrature, checked against the closed form
    /// when one exists.
    pub fn bayes_t(&self, y: f64) -> Result<f64> {
        let p = self.marginal_p(y)?;
        if !(p > 1e-12) {
            return Err(Error::VanishingMarginal(y));
        }
        let t = self.psi_numerator(y)? / p;
        if let Some(exact) = self.closed_form_t(y) {
            let err = (t - exact).abs();
            if err > 1e-8 * exact.abs().max(1.0) {
                return Err(Error::QuadratureFailure { lo: y, hi: y, err });
            }
        }
        Ok(t)
    }

    /// `t(y)`, closed form when available.
    pub fn bayes_t_fast(&self, y: f64) -> Result<f64> {
        match self.closed_form_t(y) {
            Some(t) => Ok(t),
            None => self.bayes_t(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_normal() -> PosteriorSpec {
        PosteriorSpec::new(FamilyModel::normal(1.0), PriorModel::Normal { mu0: 0.0, sigma0: 1.0 }).unwrap()
    }

    #[test]
    fn prior_densities_integrate_to_one() {
        for prior in [
            PriorModel::Normal { mu0: 0.3, sigma0: 1.7 },
            PriorModel::Gamma { a: 2.5, rate: 1.5 },
            PriorModel::Gamma { a: 0.8, rate: 3.0 },
            PriorModel::Uniform { lo: 1.0, hi: 4.0 },
        ] {
            let (lo, hi) = prior.support();
            let mut breaks = quad::uniform_breaks(lo, hi, (hi - lo) / 64.0);
            let near_zero: Vec<f64> = (1..48).map(|j| breaks[1] * 0.5f64.powi(j)).collect();
            if lo == 0.0 {
                breaks = quad::merge_breaks(breaks, &near_zero);
            }
            let q = quad::integrate_with_breaks(|t| prior.density(t), &breaks, QuadOptions::with_tol(1e-14, 1e-12)).unwrap();
            assert!((q.value - 1.0).abs() < 1e-8, "{prior:?}: {}", q.value);
        }
    }

    #[test]
    fn prior_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for prior in [
            PriorModel::Normal { mu0: 0.3, sigma0: 1.7 },
            PriorModel::Gamma { a: 2.5, rate: 1.5 },
            PriorModel::Uniform { lo: 1.0, hi: 4.0 },
        ] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| prior.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let (m, v) = prior.moments();
            assert!((mean - m).abs() < 4.0 * (v / n as f64).sqrt(), "{prior:?}");
        }
    }

    #[test]
    fn point_mass_is_exact() {
        let spec = PosteriorSpec::new(FamilyModel::normal(1.0), PriorModel::PointMass { theta0: 1.5 }).unwrap();
        let q = FamilyModel::normal(1.0).density(0.7, 1.5);
        assert_eq!(spec.marginal_p(0.7).unwrap(), q);
        assert_eq!(spec.psi_numerator(0.7).unwrap(), 1.5 * q);
        assert_eq!(spec.bayes_t(0.7).unwrap(), 1.5);
    }

    #[test]
    fn normal_normal_against_convolution() {
        let spec = PosteriorSpec::new(FamilyModel::normal(0.8), PriorModel::Normal { mu0: 0.4, sigma0: 1.3 }).unwrap();
        for i in 0..11 {
            let x = -3.0 + 0.6 * i as f64;
            let (p, psi) = spec.closed_form(x).unwrap();
            assert!((spec.marginal_p(x).unwrap() - p).abs() < 1e-8);
            assert!((spec.psi_numerator(x).unwrap() - psi).abs() < 1e-8);
        }
        assert!((normal_normal().bayes_t(2.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normal_uniform_closed_form() {
        let spec = PosteriorSpec::new(FamilyModel::normal(0.7), PriorModel::Uniform { lo: -1.0, hi: 2.5 }).unwrap();
        for i in 0..11 {
            let x = -3.0 + 0.7 * i as f64;
            let (p, psi) = spec.closed_form(x).unwrap();
            assert!((spec.marginal_p(x).unwrap() - p).abs() < 1e-10);
            assert!((spec.psi_numerator(x).unwrap() - psi).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_prior_gives_zero_numerator() {
        let spec = PosteriorSpec::new(
            FamilyModel::double_exponential(1.0),
            PriorModel::Uniform { lo: -2.0, hi: 2.0 },
        )
        .unwrap();
        assert!(spec.psi_numerator(0.0).unwrap().abs() < 1e-8);
        assert!(normal_normal().psi_numerator(0.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn marginal_integrates_to_one() {
        let spec = PosteriorSpec::new(FamilyModel::weibull(2.0), PriorModel::Gamma { a: 3.0, rate: 2.0 }).unwrap();
        let breaks = quad::uniform_breaks(0.0, 60.0, 0.25);
        let q = quad::integrate_with_breaks(|x| spec.marginal_p(x).unwrap(), &breaks, QuadOptions::with_tol(1e-10, 1e-9)).unwrap();
        assert!((q.value - 1.0).abs() < 1e-6, "{}", q.value);
    }

    #[test]
    fn conjugate_pairs_on_grid() {
        let ww = PosteriorSpec::new(FamilyModel::weibull(1.7), PriorModel::Gamma { a: 2.0, rate: 1.5 }).unwrap();
        let gg = PosteriorSpec::new(FamilyModel::gamma(2.5), PriorModel::Gamma { a: 3.0, rate: 2.0 }).unwrap();
        for i in 0..20 {
            let y = 0.1 + 0.2 * i as f64;
            let t = ww.bayes_t(y).unwrap();
            assert!((t - 3.0 / (1.5 + y.powf(1.7))).abs() < 1e-8);
            let t = gg.bayes_t(y).unwrap();
            assert!((t - 5.5 / (2.0 + y)).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_mean_in_prior_hull() {
        let spec = PosteriorSpec::new(FamilyModel::uniform_scale(10.0), PriorModel::Uniform { lo: 2.0, hi: 6.0 }).unwrap();
        for i in 0..20 {
            let y = 0.2 + 0.28 * i as f64;
            let t = spec.bayes_t(y).unwrap();
            assert!((2.0..=6.0).contains(&t), "y={y} t={t}");
        }
    }

    #[test]
    fn vanishing_marginal() {
        let spec = PosteriorSpec::new(FamilyModel::uniform_scale(10.0), PriorModel::Uniform { lo: 2.0, hi: 6.0 }).unwrap();
        assert_eq!(spec.bayes_t(7.0), Err(Error::VanishingMarginal(7.0)));
    }

    #[test]
    fn prior_outside_parameter_space() {
        assert!(PosteriorSpec::new(FamilyModel::weibull(2.0), PriorModel::Normal { mu0: 0.0, sigma0: 1.0 }).is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg: PriorConfig = serde_json::from_str(r#"{"prior":"normal","mu0":0,"sigma0":1}"#).unwrap();
        assert_eq!(PriorModel::from_config(&cfg).unwrap(), PriorModel::Normal { mu0: 0.0, sigma0: 1.0 });
        let cfg: PriorConfig = serde_json::from_str(r#"{"prior":"gamma","a":2}"#).unwrap();
        assert!(PriorModel::from_config(&cfg).is_err());
    }
}
