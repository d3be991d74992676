//! Conditional-density families `q(x|θ)` and their `u` functions.
//!
//! For each family, `u_{m,k}` is chosen so that `∫ q(x|θ) u_{m,k}(x) dx`
//! equals `∫ τ(x, θ) q(x|θ) φ_{m,k}(x) dx`, with target `τ = θ` for the
//! scale and exponential families and `τ = θ − x` for the two location
//! families. In the location case the local system therefore represents
//! `t(x) − x`, and the estimator adds `y` back (see [`FamilyModel::is_location`]).

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::basis::{IndexSet, ScalingBasis};
use crate::error::{Error, Result};
use crate::quad::{self, gl3_nodes, CompensatedSum, QuadOptions};

/// Family identity and its fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// `N(θ, σ²)`.
    Normal { sigma: f64 },
    /// Laplace with location θ and scale σ.
    DoubleExponential { sigma: f64 },
    /// `b θ x^{b−1} exp(−θ x^b)`, `x > 0`.
    Weibull { b: f64 },
    /// Shape β, rate θ.
    Gamma { beta: f64 },
    /// Uniform on `(0, θ)`.
    UniformScale,
}

/// A family together with the declared θ range and, for the half-line
/// families, the admissible interval `[c₁, c₂]` for `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyModel {
    pub kind: FamilyKind,
    pub theta_lo: Option<f64>,
    pub theta_hi: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

/// JSON form: `{"family": "normal", "sigma": 1.0}` and so on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

fn positive(name: &str, v: Option<f64>, default: f64) -> Result<f64> {
    let v = v.unwrap_or(default);
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl FamilyModel {
    pub fn new(kind: FamilyKind) -> Self {
        FamilyModel {
            kind,
            theta_lo: None,
            theta_hi: None,
            c1: None,
            c2: None,
        }
    }

    pub fn normal(sigma: f64) -> Self {
        Self::new(FamilyKind::Normal { sigma })
    }

    pub fn double_exponential(sigma: f64) -> Self {
        Self::new(FamilyKind::DoubleExponential { sigma })
    }

    pub fn weibull(b: f64) -> Self {
        Self::new(FamilyKind::Weibull { b })
    }

    pub fn gamma(beta: f64) -> Self {
        Self::new(FamilyKind::Gamma { beta })
    }

    pub fn uniform_scale(theta_hi: f64) -> Self {
        FamilyModel {
            theta_hi: Some(theta_hi),
            ..Self::new(FamilyKind::UniformScale)
        }
    }

    pub fn from_config(cfg: &FamilyConfig) -> Result<Self> {
        let kind = match cfg.family.trim().to_ascii_lowercase().as_str() {
            "normal" => FamilyKind::Normal { sigma: positive("sigma", cfg.sigma, 1.0)? },
            "double_exponential" | "double-exponential" | "laplace" => {
                FamilyKind::DoubleExponential { sigma: positive("sigma", cfg.sigma, 1.0)? }
            }
            "weibull" => {
                let b = positive("b", cfg.b, 1.0)?;
                if b < 1.0 {
                    return Err(Error::Config(format!("weibull requires b >= 1, got {b}")));
                }
                FamilyKind::Weibull { b }
            }
            "gamma" => FamilyKind::Gamma { beta: positive("beta", cfg.beta, 1.0)? },
            "uniform" | "uniform_scale" => FamilyKind::UniformScale,
            other => return Err(Error::Config(format!("unknown family '{other}'"))),
        };
        let model = FamilyModel {
            kind,
            theta_lo: cfg.theta_lo,
            theta_hi: cfg.theta_hi,
            c1: cfg.c1,
            c2: cfg.c2,
        };
        if let (Some(lo), Some(hi)) = (model.theta_lo, model.theta_hi) {
            if lo >= hi {
                return Err(Error::Config("theta_lo must be below theta_hi".into()));
            }
        }
        if let (Some(c1), Some(c2)) = (model.c1, model.c2) {
            if !(c1 > 0.0 && c1 < c2) {
                return Err(Error::Config("need 0 < c1 < c2".into()));
            }
        }
        Ok(model)
    }

    pub fn to_config(&self) -> FamilyConfig {
        let mut cfg = FamilyConfig {
            family: self.name().to_string(),
            theta_lo: self.theta_lo,
            theta_hi: self.theta_hi,
            c1: self.c1,
            c2: self.c2,
            ..Default::default()
        };
        match self.kind {
            FamilyKind::Normal { sigma } | FamilyKind::DoubleExponential { sigma } => cfg.sigma = Some(sigma),
            FamilyKind::Weibull { b } => cfg.b = Some(b),
            FamilyKind::Gamma { beta } => cfg.beta = Some(beta),
            FamilyKind::UniformScale => {}
        }
        cfg
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Normal { .. } => "normal",
            FamilyKind::DoubleExponential { .. } => "double_exponential",
            FamilyKind::Weibull { .. } => "weibull",
            FamilyKind::Gamma { .. } => "gamma",
            FamilyKind::UniformScale => "uniform",
        }
    }

    /// Growth exponent α of `γ_m² ≍ 2^{αm}`.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            FamilyKind::Normal { .. } | FamilyKind::Weibull { .. } | FamilyKind::Gamma { .. } => 2.0,
            FamilyKind::DoubleExponential { .. } | FamilyKind::UniformScale => 0.0,
        }
    }

    /// Whether `q(x|θ) = f(x − θ)`.
    pub fn is_location(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Normal { .. } | FamilyKind::DoubleExponential { .. }
        )
    }

    /// Support of `X`: `(lo, hi)`, possibly infinite.
    pub fn x_domain(&self) -> (f64, f64) {
        match self.kind {
            FamilyKind::Normal { .. } | FamilyKind::DoubleExponential { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            FamilyKind::Weibull { .. } | FamilyKind::Gamma { .. } => (0.0, f64::INFINITY),
            FamilyKind::UniformScale => (0.0, self.theta_hi.unwrap_or(f64::INFINITY)),
        }
    }

    /// Parameter space of θ.
    pub fn theta_domain(&self) -> (f64, f64) {
        if self.is_location() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (0.0, f64::INFINITY)
        }
    }

    pub fn check_theta(&self, theta: f64) -> Result<()> {
        let (lo, hi) = self.theta_domain();
        if theta.is_finite() && (theta > lo || lo == f64::NEG_INFINITY) && theta < hi {
            Ok(())
        } else {
            Err(Error::DomainViolation { family: self.name(), x: theta })
        }
    }

    /// Enforces `c₁ ≤ y ≤ c₂` when the interval is declared.
    pub fn check_y(&self, y: f64) -> Result<()> {
        let (lo, hi) = self.x_domain();
        let outside_declared = self.c1.is_some_and(|c| y < c) || self.c2.is_some_and(|c| y > c);
        if !y.is_finite() || y < lo || y > hi || outside_declared {
            return Err(Error::DomainViolation { family: self.name(), x: y });
        }
        Ok(())
    }

    /// `q(x|θ)`.
    pub fn density(&self, x: f64, theta: f64) -> f64 {
        match self.kind {
            FamilyKind::Normal { sigma } => {
                let z = (x - theta) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            FamilyKind::DoubleExponential { sigma } => (-(x - theta).abs() / sigma).exp() / (2.0 * sigma),
            FamilyKind::Weibull { b } => {
                if x < 0.0 {
                    0.0
                } else if x == 0.0 {
                    if b == 1.0 { theta } else { 0.0 }
                } else {
                    b * theta * x.powf(b - 1.0) * (-theta * x.powf(b)).exp()
                }
            }
            FamilyKind::Gamma { beta } => {
                if x <= 0.0 {
                    0.0
                } else {
                    ((beta * theta.ln() + (beta - 1.0) * x.ln() - theta * x) - ln_gamma(beta)).exp()
                }
            }
            FamilyKind::UniformScale => {
                if x > 0.0 && x < theta {
                    1.0 / theta
                } else {
                    0.0
                }
            }
        }
    }

    /// Draws `X ~ q(·|θ)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        match self.kind {
            FamilyKind::Normal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                theta + sigma * z
            }
            FamilyKind::DoubleExponential { sigma } => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    theta + sigma * e
                } else {
                    theta - sigma * e
                }
            }
            FamilyKind::Weibull { b } => {
                let e: f64 = rng.sample(Exp1);
                (e / theta).powf(1.0 / b)
            }
            FamilyKind::Gamma { beta } => GammaDist::new(beta, 1.0 / theta)
                .expect("validated parameters")
                .sample(rng),
            FamilyKind::UniformScale => theta * rng.random::<f64>(),
        }
    }

    /// Mean and variance of `X` given θ.
    pub fn moments(&self, theta: f64) -> (f64, f64) {
        match self.kind {
            FamilyKind::Normal { sigma } => (theta, sigma * sigma),
            FamilyKind::DoubleExponential { sigma } => (theta, 2.0 * sigma * sigma),
            FamilyKind::Weibull { b } => {
                let s = theta.powf(-1.0 / b);
                let g1 = gamma_fn(1.0 + 1.0 / b);
                let g2 = gamma_fn(1.0 + 2.0 / b);
                (s * g1, s * s * (g2 - g1 * g1))
            }
            FamilyKind::Gamma { beta } => (beta / theta, beta / (theta * theta)),
            FamilyKind::UniformScale => (theta / 2.0, theta * theta / 12.0),
        }
    }

    /// Interval carrying all but a negligible part of `q(·|θ)`, used to
    /// bound quadrature.
    pub fn x_window(&self, theta: f64) -> (f64, f64) {
        match self.kind {
            FamilyKind::Normal { sigma } => (theta - 40.0 * sigma, theta + 40.0 * sigma),
            FamilyKind::DoubleExponential { sigma } => (theta - 60.0 * sigma, theta + 60.0 * sigma),
            FamilyKind::Weibull { b } => (0.0, (60.0 / theta).powf(1.0 / b)),
            FamilyKind::Gamma { beta } => (0.0, (beta + 60.0 + 12.0 * beta.sqrt()) / theta),
            FamilyKind::UniformScale => (0.0, theta),
        }
    }

    /// `K_{m,y}` restricted so that every `φ_{m,k}` is supported inside the
    /// x-domain (only binding for the half-line families).
    pub fn effective_index_set(&self, basis: &ScalingBasis, m: i32, y: f64) -> IndexSet {
        let k = basis.index_set(m, y);
        if self.is_location() {
            k
        } else {
            k.clip_to_domain(basis, 0.0, f64::INFINITY)
        }
    }

    /// Prepares `u_{m,·}` evaluation at level `m`.
    pub fn u_bank<'a>(&'a self, basis: &'a ScalingBasis, m: i32) -> UBank<'a> {
        let laplace = match self.kind {
            FamilyKind::DoubleExponential { sigma } => Some(LaplaceTables::new(basis, 2f64.powi(-m) / sigma)),
            _ => None,
        };
        UBank {
            family: self,
            basis,
            m,
            scale: 2f64.powi(m),
            laplace,
        }
    }

    /// `u_{m,k}(x)`. The double-exponential integral is evaluated by
    /// adaptive quadrature over `supp φ_{m,k}` split at `t = x`.
    pub fn u_func(&self, basis: &ScalingBasis, m: i32, k: i64, x: f64) -> Result<f64> {
        match self.kind {
            FamilyKind::DoubleExponential { sigma } => {
                self.check_x(x)?;
                let mut breaks = basis.cell_breaks(m, k, None);
                if x > breaks[0] && x < breaks[breaks.len() - 1] {
                    breaks = quad::merge_breaks(breaks, &[x]);
                }
                let f = |t: f64| {
                    let d = x - t;
                    basis.phi_mk(m, k, t, 0) * d.signum() * (-d.abs() / sigma).exp()
                };
                Ok(quad::integrate_with_breaks(f, &breaks, QuadOptions::with_tol(1e-13, 1e-11))?.value)
            }
            _ => self.u_bank(basis, m).eval(k, x),
        }
    }

    fn check_x(&self, x: f64) -> Result<()> {
        let bad = match self.kind {
            FamilyKind::Normal { .. } | FamilyKind::DoubleExponential { .. } => !x.is_finite(),
            FamilyKind::Weibull { b } => !(x > 0.0 || (x == 0.0 && b == 1.0)) || !x.is_finite(),
            FamilyKind::Gamma { beta } => !(x > 0.0 || (x == 0.0 && beta == 1.0)) || !x.is_finite(),
            FamilyKind::UniformScale => !(x >= 0.0) || !x.is_finite(),
        };
        if bad {
            Err(Error::DomainViolation { family: self.name(), x })
        } else {
            Ok(())
        }
    }

    /// Maximum over `thetas` of `|∫q u_{m,k} − ∫τ q φ_{m,k}|`, both sides by
    /// adaptive quadrature.
    pub fn verify_u_equation(&self, basis: &ScalingBasis, m: i32, k: i64, thetas: &[f64]) -> Result<f64> {
        let bank = self.u_bank(basis, m);
        let opts = QuadOptions::with_tol(1e-13, 1e-10);
        let mut worst = 0.0f64;
        for &theta in thetas {
            self.check_theta(theta)?;
            let (wlo, whi) = self.x_window(theta);
            let support = basis.cell_breaks(m, k, Some((wlo.max(self.x_domain().0), whi)));
            let rhs = if support.len() < 2 {
                0.0
            } else {
                let f = |x: f64| {
                    let tau = if self.is_location() { theta - x } else { theta };
                    tau * self.density(x, theta) * basis.phi_mk(m, k, x, 0)
                };
                quad::integrate_with_breaks(f, &support, opts)?.value
            };
            let lhs_breaks = match self.kind {
                FamilyKind::DoubleExponential { .. } => {
                    let mut b = quad::merge_breaks(support.clone(), &[wlo, theta, whi]);
                    b.retain(|&x| x >= wlo && x <= whi);
                    b
                }
                FamilyKind::UniformScale => {
                    let mut b = quad::merge_breaks(
                        basis.cell_breaks(m, k, Some((0.0, theta))),
                        &[0.0, theta],
                    );
                    b.retain(|&x| (0.0..=theta).contains(&x));
                    b
                }
                _ => support.clone(),
            };
            let lhs = if lhs_breaks.len() < 2 {
                0.0
            } else {
                let f = |x: f64| self.density(x, theta) * bank.eval_unchecked(k, x);
                quad::integrate_with_breaks(f, &lhs_breaks, opts)?.value
            };
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }

    /// `γ_k^{(ρ)}(m) = [∫ u_{m,k}^{2ρ}]^{1/2}` for `k` in the effective index
    /// set at `y`.
    pub fn gamma_vector(&self, basis: &ScalingBasis, m: i32, y: f64, rho: u32) -> Result<GammaVector> {
        if !(1..=4).contains(&rho) {
            return Err(Error::Config(format!("moment order {rho} outside 1..=4")));
        }
        let set = self.effective_index_set(basis, m, y);
        let bank = self.u_bank(basis, m);
        let entries = if self.is_location() {
            // u_{m,k}(x) = u_{m,0}(x − 2^{−m}k), so every entry is the same.
            let v = bank.power_integral(0, 2 * rho)?.sqrt();
            vec![v; set.len()]
        } else {
            set.iter()
                .map(|k| bank.power_integral(k, 2 * rho).map(f64::sqrt))
                .collect::<Result<Vec<_>>>()?
        };
        let norm = entries.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(GammaVector { m, rho, k_lo: set.lo, entries, norm })
    }

    /// `γ_m²` at `y`.
    pub fn gamma_sq(&self, basis: &ScalingBasis, m: i32, y: f64) -> Result<f64> {
        let g = self.gamma_vector(basis, m, y, 1)?;
        Ok(g.norm * g.norm)
    }

    /// `‖u_{m,k}‖_∞ / (2^{m/2} γ_m)`, with the sup taken on a dense grid and
    /// `γ_m` computed at the centre of `supp φ_{m,k}`.
    pub fn sup_norm_check(&self, basis: &ScalingBasis, m: i32, k: i64) -> Result<f64> {
        let bank = self.u_bank(basis, m);
        let scale = 2f64.powi(-m);
        let lo = (basis.support_lo() as f64 + k as f64) * scale;
        let hi = (basis.support_hi() as f64 + k as f64) * scale;
        let points = 1usize << 14;
        let mut sup = 0.0f64;
        for i in 0..=points {
            let x = lo + (hi - lo) * i as f64 / points as f64;
            if self.check_x(x).is_ok() {
                sup = sup.max(bank.eval_unchecked(k, x).abs());
            }
        }
        let y = 0.5 * (lo + hi);
        let gamma = self.gamma_sq(basis, m, y)?.sqrt();
        Ok(sup / (2f64.powf(m as f64 / 2.0) * gamma))
    }
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Per-level evaluator for `u_{m,k}`.
pub struct UBank<'a> {
    family: &'a FamilyModel,
    basis: &'a ScalingBasis,
    m: i32,
    scale: f64,
    laplace: Option<LaplaceTables>,
}

impl<'a> UBank<'a> {
    pub fn level(&self) -> i32 {
        self.m
    }

    /// Whether `u_{m,k}` vanishes outside `supp φ_{m,k}`.
    pub fn compact(&self) -> bool {
        !matches!(
            self.family.kind,
            FamilyKind::DoubleExponential { .. } | FamilyKind::UniformScale
        )
    }

    pub fn eval(&self, k: i64, x: f64) -> Result<f64> {
        self.family.check_x(x)?;
        Ok(self.eval_unchecked(k, x))
    }

    /// `u_{m,k}(x)` without the domain check.
    pub fn eval_unchecked(&self, k: i64, x: f64) -> f64 {
        let b = self.basis;
        let z = self.scale * x - k as f64;
        let root = self.scale.sqrt();
        match self.family.kind {
            FamilyKind::Normal { sigma } => -root * self.scale * sigma * sigma * b.eval(z, 1),
            FamilyKind::DoubleExponential { .. } => {
                self.laplace.as_ref().expect("tables built for this family").v(b, z) / root
            }
            FamilyKind::Weibull { b: shape } => {
                let d = b.eval(z, 1);
                if d == 0.0 {
                    0.0
                } else {
                    root * self.scale * d / (shape * x.powf(shape - 1.0))
                }
            }
            FamilyKind::Gamma { beta } => {
                let (v, d) = (b.eval(z, 0), b.eval(z, 1));
                if v == 0.0 && d == 0.0 {
                    0.0
                } else {
                    (beta - 1.0) / x * root * v + root * self.scale * d
                }
            }
            FamilyKind::UniformScale => b.antiderivative(z) / root + x * root * b.eval(z, 0),
        }
    }

    /// `∫ u_{m,k}^{p}` over its effective support.
    pub fn power_integral(&self, k: i64, p: u32) -> Result<f64> {
        let b = self.basis;
        let h = b.step();
        let inv = 1.0 / self.scale;
        // Integrate over supp φ in z-coordinates; dx = 2^{-m} dz.
        let mut acc = CompensatedSum::default();
        let table_len = b.table(0).len();
        for j in 0..table_len - 1 {
            let (z0, z1) = (b.node(j), b.node(j) + h);
            for (z, w) in gl3_nodes(z0, z1) {
                let x = (z + k as f64) * inv;
                let u = self.eval_unchecked(k, x);
                let term = u.powi(p as i32) * w * inv;
                if !term.is_finite() {
                    return Err(Error::DivergentIntegral(format!(
                        "u_{{{},{k}}}^{p} not integrable near x = {x}",
                        self.m
                    )));
                }
                acc.add(term);
            }
        }
        match self.family.kind {
            FamilyKind::DoubleExponential { .. } => {
                let t = self.laplace.as_ref().expect("tables built for this family");
                let lam = t.lambda;
                let root = self.scale.sqrt();
                let pf = p as f64;
                // Right tail: V = e^{−λz}L, left tail: V = −e^{λz}R.
                let right = (t.l_total / root).powi(p as i32)
                    * (-pf * lam * b.support_hi() as f64).exp()
                    / (pf * lam);
                let left = (-t.r_total / root).powi(p as i32)
                    * (pf * lam * b.support_lo() as f64).exp()
                    / (pf * lam);
                acc.add((right + left) * inv);
            }
            FamilyKind::UniformScale => {
                let x_end = (b.support_hi() as f64 + k as f64) * inv;
                let tail = match self.family.theta_hi {
                    Some(upper) => (upper - x_end).max(0.0),
                    None => {
                        return Err(Error::DivergentIntegral(
                            "uniform u has a constant right tail; declare theta_hi".into(),
                        ))
                    }
                };
                let level = b.total_integral() / self.scale.sqrt();
                acc.add(level.powi(p as i32) * tail);
            }
            _ => {}
        }
        Ok(acc.value())
    }
}

/// Cumulative tables for the Laplace `u`:
/// `V(z) = e^{−λz} ∫_{t<z} φ(t) e^{λt} dt − e^{λz} ∫_{t>z} φ(t) e^{−λt} dt`.
struct LaplaceTables {
    lambda: f64,
    left: Vec<f64>,
    right: Vec<f64>,
    l_total: f64,
    r_total: f64,
}

impl LaplaceTables {
    fn new(basis: &ScalingBasis, lambda: f64) -> Self {
        let n = basis.table(0).len();
        let h = basis.step();
        let mut left = Vec::with_capacity(n);
        let mut acc = CompensatedSum::default();
        left.push(0.0);
        for j in 0..n - 1 {
            let z0 = basis.node(j);
            let cell: f64 = gl3_nodes(z0, z0 + h)
                .iter()
                .map(|&(z, w)| w * basis.eval(z, 0) * (lambda * z).exp())
                .sum();
            acc.add(cell);
            left.push(acc.value());
        }
        let mut right = vec![0.0; n];
        let mut acc = CompensatedSum::default();
        for j in (0..n - 1).rev() {
            let z0 = basis.node(j);
            let cell: f64 = gl3_nodes(z0, z0 + h)
                .iter()
                .map(|&(z, w)| w * basis.eval(z, 0) * (-lambda * z).exp())
                .sum();
            acc.add(cell);
            right[j] = acc.value();
        }
        let l_total = left[n - 1];
        let r_total = right[0];
        LaplaceTables { lambda, left, right, l_total, r_total }
    }

    fn v(&self, basis: &ScalingBasis, z: f64) -> f64 {
        let lam = self.lambda;
        let (lo, hi) = (basis.support_lo() as f64, basis.support_hi() as f64);
        if z >= hi {
            return (-lam * z).exp() * self.l_total;
        }
        if z <= lo {
            return -(lam * z).exp() * self.r_total;
        }
        let h = basis.step();
        let j = (((z - lo) / h).floor() as usize).min(self.left.len() - 2);
        let z0 = basis.node(j);
        let (mut l_part, mut r_part) = (0.0, 0.0);
        if z > z0 {
            for (t, w) in gl3_nodes(z0, z) {
                l_part += w * basis.eval(t, 0) * (lam * t).exp();
            }
        }
        let z1 = z0 + h;
        if z1 > z {
            for (t, w) in gl3_nodes(z, z1) {
                r_part += w * basis.eval(t, 0) * (-lam * t).exp();
            }
        }
        let l = self.left[j] + l_part;
        let r = self.right[j + 1] + r_part;
        (-lam * z).exp() * l - (lam * z).exp() * r
    }
}

/// Entries `γ_k^{(ρ)}(m)` over the effective index set and their norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector {
    pub m: i32,
    pub rho: u32,
    pub k_lo: i64,
    pub entries: Vec<f64>,
    pub norm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn db8() -> &'static ScalingBasis {
        static B: OnceLock<ScalingBasis> = OnceLock::new();
        B.get_or_init(ScalingBasis::default_basis)
    }

    fn all_families() -> Vec<(FamilyModel, Vec<f64>)> {
        vec![
            (FamilyModel::normal(1.0), vec![-1.0, 0.0, 0.5, 2.0, 3.0]),
            (FamilyModel::double_exponential(0.7), vec![-1.0, 0.0, 0.5, 2.0, 3.0]),
            (FamilyModel::weibull(2.0), vec![0.5, 1.0, 1.5, 2.0, 3.0]),
            (FamilyModel::gamma(2.5), vec![0.5, 1.0, 1.5, 2.0, 3.0]),
            (FamilyModel::uniform_scale(8.0), vec![1.0, 2.0, 3.0, 5.0, 7.5]),
        ]
    }

    #[test]
    fn densities_integrate_to_one() {
        for (fam, thetas) in all_families() {
            for &theta in &thetas {
                let (lo, hi) = fam.x_window(theta);
                let mut breaks = quad::uniform_breaks(lo, hi, (hi - lo) / 64.0);
                if fam.is_location() {
                    breaks = quad::merge_breaks(breaks, &[theta]);
                }
                let q = quad::integrate_with_breaks(|x| fam.density(x, theta), &breaks, QuadOptions::with_tol(1e-13, 1e-12))
                    .unwrap();
                assert!((q.value - 1.0).abs() < 1e-8, "{} θ={theta}: {}", fam.name(), q.value);
            }
        }
    }

    #[test]
    fn sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (fam, thetas) in all_families() {
            let theta = thetas[2];
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| fam.sample(theta, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (m, v) = fam.moments(theta);
            assert!((mean - m).abs() < 4.0 * (v / n as f64).sqrt(), "{} mean {mean} vs {m}", fam.name());
            let m4: f64 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
            let se_var = ((m4 - var * var) / n as f64).sqrt();
            assert!((var - v).abs() < 4.0 * se_var, "{} var {var} vs {v}", fam.name());
        }
    }

    #[test]
    fn alpha_table() {
        let alphas: Vec<f64> = all_families().iter().map(|(f, _)| f.alpha()).collect();
        assert_eq!(alphas, vec![2.0, 0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn normal_u_is_scaled_derivative() {
        let b = db8();
        let fam = FamilyModel::normal(1.0);
        for i in 0..20 {
            let x = -0.5 + 0.8 * i as f64;
            let u = fam.u_func(b, 0, 0, x).unwrap();
            assert_eq!(u, -b.eval(x, 1));
        }
    }

    #[test]
    fn simple_reductions() {
        let b = db8();
        let exp = FamilyModel::weibull(1.0);
        let gam1 = FamilyModel::gamma(1.0);
        for i in 0..20 {
            let x = 0.05 + 0.37 * i as f64;
            let (m, k) = (2, 3);
            let want = 2f64.powf(3.0) * b.eval(4.0 * x - 3.0, 1);
            assert!((exp.u_func(b, m, k, x).unwrap() - want).abs() < 1e-12);
            assert!((gam1.u_func(b, m, k, x).unwrap() - want).abs() < 1e-12);
        }
        let uni = FamilyModel::uniform_scale(100.0);
        assert_eq!(uni.u_func(b, 3, 8, 0.5).unwrap(), 0.0);
        let right = uni.u_func(b, 3, 8, 40.0).unwrap();
        assert!((right - 2f64.powf(-1.5)).abs() < 1e-6);
    }

    #[test]
    fn domain_violations() {
        let b = db8();
        assert!(matches!(
            FamilyModel::weibull(2.0).u_func(b, 2, 3, -1.0),
            Err(Error::DomainViolation { .. })
        ));
        assert!(matches!(
            FamilyModel::gamma(2.0).u_func(b, 2, 3, 0.0),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn laplace_tables_match_quadrature() {
        let b = db8();
        let fam = FamilyModel::double_exponential(0.7);
        for m in [0, 2, 5] {
            let bank = fam.u_bank(b, m);
            for &x in &[-3.0, 0.1, 0.77, 2.5, 6.0] {
                let k = 1;
                let fast = bank.eval(k, x).unwrap();
                let slow = fam.u_func(b, m, k, x).unwrap();
                assert!((fast - slow).abs() < 1e-9, "m={m} x={x}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn u_equation_examples() {
        let b = db8();
        let r = FamilyModel::normal(1.0).verify_u_equation(b, 2, 3, &[-1.0, 0.0, 2.0]).unwrap();
        assert!(r <= 1e-6, "normal {r}");
        let r = FamilyModel::uniform_scale(10.0).verify_u_equation(b, 3, 8, &[1.0, 2.0, 5.0]).unwrap();
        assert!(r <= 1e-6, "uniform {r}");
        let r = FamilyModel::weibull(2.0).verify_u_equation(b, 2, 5, &[0.5, 1.0, 3.0]).unwrap();
        assert!(r <= 1e-6, "weibull {r}");
        let r = FamilyModel::gamma(2.5).verify_u_equation(b, 2, 5, &[0.5, 1.0, 3.0]).unwrap();
        assert!(r <= 1e-6, "gamma {r}");
        let r = FamilyModel::double_exponential(1.0).verify_u_equation(b, 2, 3, &[-1.0, 0.0, 2.0]).unwrap();
        assert!(r <= 1e-5, "laplace {r}");
    }

    #[test]
    fn normal_gamma_entries_are_constant() {
        let b = db8();
        let sigma: f64 = 1.3;
        let fam = FamilyModel::normal(sigma);
        let d2 = b.l2_norm_sq(1);
        for m in [1, 3] {
            let g = fam.gamma_vector(b, m, 0.4, 1).unwrap();
            let want = (2f64.powi(2 * m) * sigma.powi(4) * d2).sqrt();
            for e in &g.entries {
                assert!((e - want).abs() < 1e-8 * want, "{e} vs {want}");
            }
            let sum_sq: f64 = g.entries.iter().map(|e| e * e).sum();
            assert!((g.norm * g.norm - sum_sq).abs() < 1e-9 * sum_sq);
        }
    }

    #[test]
    fn location_power_integrals_are_shift_invariant() {
        let b = db8();
        for fam in [FamilyModel::normal(0.7), FamilyModel::double_exponential(1.2)] {
            let bank = fam.u_bank(b, 4);
            let base = bank.power_integral(0, 2).unwrap();
            for k in [-37, -1, 5, 120] {
                let v = bank.power_integral(k, 2).unwrap();
                assert!((v - base).abs() <= 1e-9 * base, "{} k={k}: {v} vs {base}", fam.name());
            }
        }
    }

    #[test]
    fn gamma_ratios() {
        let b = db8();
        let normal = FamilyModel::normal(1.0);
        let r = normal.gamma_sq(b, 6, 0.5).unwrap() / normal.gamma_sq(b, 5, 0.5).unwrap();
        assert!((r.sqrt() - 2.0).abs() < 1e-6);
        let uni = FamilyModel::uniform_scale(60.0);
        let r = uni.gamma_sq(b, 8, 30.0).unwrap() / uni.gamma_sq(b, 7, 30.0).unwrap();
        assert!((r.sqrt() - 1.0).abs() < 0.02, "{r}");
    }

    #[test]
    fn uniform_without_upper_bound_diverges() {
        let b = db8();
        let fam = FamilyModel::new(FamilyKind::UniformScale);
        assert!(matches!(fam.gamma_vector(b, 3, 5.0, 1), Err(Error::DivergentIntegral(_))));
    }

    #[test]
    fn config_round_trip() {
        let cfg: FamilyConfig = serde_json::from_str(r#"{"family":"weibull","b":2.0,"c1":0.5,"c2":3.0}"#).unwrap();
        let fam = FamilyModel::from_config(&cfg).unwrap();
        assert_eq!(fam.kind, FamilyKind::Weibull { b: 2.0 });
        assert_eq!(FamilyModel::from_config(&fam.to_config()).unwrap(), fam);
        assert!(fam.check_y(4.0).is_err());
        assert!(fam.check_y(1.0).is_ok());
        let bad: FamilyConfig = serde_json::from_str(r#"{"family":"cauchy"}"#).unwrap();
        assert!(matches!(FamilyModel::from_config(&bad), Err(Error::Config(_))));
    }
}
