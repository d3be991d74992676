//! Property-suite driver. Each suite runs the invariants of one module with
//! fixed tolerances and reports one line per check.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::basis::ScalingBasis;
use crate::bounds::{self, BumpKernel, KernelShape, PerturbationPair};
use crate::error::{Error, Result};
use crate::estimator::{self, LocalSystem};
use crate::families::{FamilyKind, FamilyModel};
use crate::harness::{draw_sample, reference_spec, REFERENCE_Y};
use crate::lepski::{self, LambdaChoice, LevelGrid};
use crate::oracle::{PosteriorSpec, PriorModel};
use crate::stats;

/// Outcome of a single property check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const SUITES: [&str; 6] = ["basis", "families", "estimator", "lepski", "oracle", "bounds"];

/// Runs the named suite.
pub fn verify_suite(name: &str, basis: &ScalingBasis) -> Result<SuiteReport> {
    let checks = match name {
        "basis" => basis_checks(basis),
        "families" => {
            let mut v = u_equation_checks(basis);
            v.extend(gamma_exponent_checks(basis));
            v
        }
        "estimator" => estimator_checks(basis),
        "lepski" => lepski_checks(basis),
        "oracle" => oracle_agreement_checks(),
        "bounds" => {
            let mut v = kernel_checks();
            v.extend(rate_checks());
            v
        }
        other => return Err(Error::Config(format!("unknown suite `{other}`; expected one of {SUITES:?}"))),
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        checks,
    })
}

fn fmt_max(v: f64, tol: f64) -> String {
    format!("max {v:.3e} (tol {tol:.0e})")
}

/// Support, mass, refinement, partition of unity and moment reproduction.
pub fn basis_checks(basis: &ScalingBasis) -> Vec<Check> {
    let (lo, hi) = (basis.support_lo() as f64, basis.support_hi() as f64);
    let outside = [lo - 1.0, lo - 1e-9, hi + 1e-9, hi + 2.5]
        .iter()
        .map(|&x| basis.eval(x, 0).abs())
        .fold(0.0, f64::max);
    let table = basis.table(0);
    let ends = table[0].abs().max(table[table.len() - 1].abs());
    let mass = (basis.total_integral() - 1.0).abs();
    let refine = basis.refinement_residual(0);
    let mut pou = 0.0f64;
    for i in 0..1000 {
        let z = i as f64 / 1000.0;
        let (a, b) = basis.active_shifts(0, z);
        let s: f64 = (a..=b).map(|k| basis.eval(z - k as f64, 0)).sum();
        pou = pou.max((s - 1.0).abs());
    }
    let s = basis.vanishing_moments();
    let z_grid: Vec<f64> = (0..7).map(|i| -1.5 + 0.5 * i as f64).collect();
    let moments = basis.check_vanishing_moments(s - 1, &z_grid).max_residual;
    vec![
        Check::new(
            "compact support",
            outside == 0.0 && ends < 1e-12,
            format!("|φ| outside {outside:.1e}, table ends {ends:.1e}"),
        ),
        Check::new("unit integral", mass <= 1e-6, format!("|∫φ − 1| = {mass:.3e}")),
        Check::new("refinement equation", refine <= 1e-6, fmt_max(refine, 1e-6)),
        Check::new("partition of unity", pou <= 1e-6, fmt_max(pou, 1e-6)),
        Check::new(
            format!("moment reproduction ℵ ≤ {}", s - 1),
            moments <= 1e-5,
            fmt_max(moments, 1e-5),
        ),
    ]
}

/// The five families with the parameters used by the family checks.
pub fn family_cases() -> Vec<(FamilyModel, f64, [f64; 5])> {
    vec![
        (FamilyModel::normal(1.0), 0.5, [-1.0, -0.3, 0.0, 0.5, 1.2]),
        (FamilyModel::double_exponential(1.0), 0.5, [-1.0, -0.3, 0.0, 0.5, 1.2]),
        (FamilyModel::weibull(2.0), 1.0, [0.5, 1.0, 1.5, 2.0, 3.0]),
        (FamilyModel::gamma(3.0), 1.0, [0.5, 1.0, 1.5, 2.0, 3.0]),
        (FamilyModel::uniform_scale(60.0), 1.0, [1.5, 2.0, 3.0, 5.0, 8.0]),
    ]
}

/// `∫ q(x|θ) u_{m,k}(x) dx = ∫ (θ − x_loc) q(x|θ) φ_{m,k}(x) dx` over
/// `m ∈ {2, 4, 6}`, three shifts and five θ values per family.
pub fn u_equation_checks(basis: &ScalingBasis) -> Vec<Check> {
    family_cases()
        .into_iter()
        .map(|(family, y, thetas)| {
            let tol = if matches!(family.kind, FamilyKind::DoubleExponential { .. }) { 1e-5 } else { 1e-6 };
            let name = format!("u-equation {}", family.name());
            Check::from_result(
                &name,
                (|| {
                    let mut worst = 0.0f64;
                    for m in [2, 4, 6] {
                        let set = family.effective_index_set(basis, m, y);
                        if set.is_empty() {
                            return Err(Error::Config(format!("empty index set at m = {m}")));
                        }
                        for k in [set.lo, (set.lo + set.hi) / 2, set.hi] {
                            worst = worst.max(family.verify_u_equation(basis, m, k, &thetas)?);
                        }
                    }
                    Ok(Check::new(&name, worst <= tol, fmt_max(worst, tol)))
                })(),
            )
        })
        .collect()
}

/// Families, evaluation points and the stated exponent α for the
/// γ-growth check.
pub fn gamma_exponent_cases() -> Vec<(FamilyModel, f64, f64)> {
    vec![
        (FamilyModel::normal(1.0), 0.5, 2.0),
        (FamilyModel::double_exponential(1.0), 0.5, 0.0),
        (FamilyModel::weibull(2.0), 50.0, 2.0),
        (FamilyModel::gamma(3.0), 20.0, 2.0),
        (FamilyModel::uniform_scale(100.0), 50.0, 0.0),
    ]
}

/// Slope of `log₂ γ_m` against `m ∈ 3..=8` within `α/2 ± 0.15`.
pub fn gamma_exponent_checks(basis: &ScalingBasis) -> Vec<Check> {
    gamma_exponent_cases()
        .into_iter()
        .map(|(family, y, alpha)| {
            let name = format!("γ exponent {} (y = {y})", family.name());
            Check::from_result(
                &name,
                (|| {
                    let ms: Vec<f64> = (3..=8).map(f64::from).collect();
                    let logs = (3..=8)
                        .map(|m| family.gamma_sq(basis, m, y).map(|g| 0.5 * g.log2()))
                        .collect::<Result<Vec<_>>>()?;
                    let fit = stats::linear_fit(&ms, &logs)?;
                    let pass = (fit.slope - alpha / 2.0).abs() <= 0.15;
                    Ok(Check::new(
                        &name,
                        pass,
                        format!("slope {:.3} (target {:.2} ± 0.15)", fit.slope, alpha / 2.0),
                    ))
                })(),
            )
        })
        .collect()
}

/// Prior, noise and point for the expansion diagnostic.
pub fn expansion_case() -> (PosteriorSpec, f64) {
    let spec = PosteriorSpec::new(FamilyModel::normal(1.0), PriorModel::Normal { mu0: 0.0, sigma0: 30.0 })
        .expect("valid expansion model");
    (spec, 901f64.sqrt())
}

/// Slope of `log₂ ‖B_m − p(y) I‖` (spectral) against `m ∈ 3..=8`.
pub fn expansion_check(basis: &ScalingBasis) -> Check {
    let name = "expansion ‖B − p(y)I‖";
    Check::from_result(
        name,
        (|| {
            let (spec, y) = expansion_case();
            let p = spec.marginal_p(y)?;
            let mut logs = Vec::new();
            for m in 3..=8 {
                let set = spec.family.effective_index_set(basis, m, y);
                let (b, _) = estimator::true_system(&spec, basis, m, &set)?;
                let d = &b - DMatrix::identity(set.len(), set.len()) * p;
                let norm = d.symmetric_eigenvalues().iter().fold(0.0f64, |a, e| a.max(e.abs()));
                logs.push(norm.log2());
            }
            let ms: Vec<f64> = (3..=8).map(f64::from).collect();
            let fit = stats::linear_fit(&ms, &logs)?;
            Ok(Check::new(
                name,
                (fit.slope + 1.0).abs() <= 0.2,
                format!("slope {:.3} (target −1 ± 0.2)", fit.slope),
            ))
        })(),
    )
}

/// Quadrature posterior means against conjugate closed forms at 20 points.
pub fn oracle_agreement_checks() -> Vec<Check> {
    let cases = [
        (
            "Normal–Normal",
            PosteriorSpec::new(FamilyModel::normal(1.0), PriorModel::Normal { mu0: 0.3, sigma0: 1.5 }),
            (-4.0, 4.0),
        ),
        (
            "Weibull–Gamma",
            PosteriorSpec::new(FamilyModel::weibull(2.0), PriorModel::Gamma { a: 3.0, rate: 2.0 }),
            (0.1, 3.0),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, spec, (lo, hi))| {
            let name = format!("closed form {name}");
            Check::from_result(
                &name,
                (|| {
                    let spec = spec?;
                    let mut worst = 0.0f64;
                    for i in 0..20 {
                        let y = lo + (hi - lo) * i as f64 / 19.0;
                        let quad = spec.psi_numerator(y)? / spec.marginal_p(y)?;
                        let exact = spec
                            .closed_form_t(y)
                            .ok_or_else(|| Error::Config("no closed form".into()))?;
                        worst = worst.max((quad - exact).abs());
                    }
                    Ok(Check::new(&name, worst <= 1e-8, fmt_max(worst, 1e-8)))
                })(),
            )
        })
        .collect()
}

/// Ridge floor and symmetry of the empirical system on a reference sample.
pub fn estimator_checks(basis: &ScalingBasis) -> Vec<Check> {
    let spec = reference_spec();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let data = draw_sample(&spec.family, &spec.prior, 4096, &mut rng);
    let mut checks = Vec::new();
    for m in [1, 3, 5] {
        let name = format!("ridge floor m = {m}");
        checks.push(Check::from_result(
            &name,
            (|| {
                let delta = estimator::DeltaPolicy::default().delta(m, data.len());
                let sys = LocalSystem::assemble(&spec.family, basis, &data, REFERENCE_Y, m, delta)?;
                let (lmin, _) = sys.eigen_range();
                let asym = (&sys.b_hat - sys.b_hat.transpose()).abs().max();
                let res = sys.residual();
                Ok(Check::new(
                    &name,
                    1.0 / lmin <= 1.0 / delta * (1.0 + 1e-12) && asym == 0.0 && res < 1e-8,
                    format!("‖B̂_δ⁻¹‖ = {:.3e} ≤ 1/δ = {:.3e}, residual {res:.1e}", 1.0 / lmin, 1.0 / delta),
                ))
            })(),
        ));
    }
    checks
}

/// Definition consistency of the Lepski rule on a reference sample, plus
/// the closed-form examples for ρ and λ.
pub fn lepski_checks(basis: &ScalingBasis) -> Vec<Check> {
    let mut checks = vec![
        Check::new(
            "ρ² example",
            (lepski::rho_sq(4, 3.0, 1000.0) - 0.44210).abs() < 1e-5,
            format!("{:.6}", lepski::rho_sq(4, 3.0, 1000.0)),
        ),
        Check::from_result(
            "λ example",
            lepski::compute_lambda(1.0, 1.0, 1.0, 2.0, 1, 0.0, 0.0)
                .map(|l| Check::new("λ example", (l - 577.0).abs() < 1e-9, format!("{l}"))),
        ),
    ];
    let zero: std::collections::BTreeMap<i32, f64> = (1..=14).map(|m| (m, 0.0)).collect();
    checks.push(Check::from_result(
        "oracle level example",
        lepski::oracle_level(&zero, 1 << 15, 1.0).map(|m| Check::new("oracle level example", m == 5, format!("m₀ = {m}"))),
    ));
    let name = "selection consistency";
    checks.push(Check::from_result(
        name,
        (|| {
            let spec = reference_spec();
            let n = 1 << 12;
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            let data = draw_sample(&spec.family, &spec.prior, n, &mut rng);
            let grid = LevelGrid::desk(n)?;
            let gamma = lepski::gamma_table(&spec.family, basis, REFERENCE_Y, &grid.levels)?;
            let mut ok = true;
            for mult in [1e-3, 1.0, 1e3] {
                let trace =
                    lepski::select_level(&spec.family, basis, &data, REFERENCE_Y, &grid, LambdaChoice::calibrated(mult), &gamma)?;
                let m_hat = trace.m_hat;
                ok &= trace.tests.iter().filter(|t| t.m == m_hat).all(|t| t.pass);
                if m_hat > grid.m1 {
                    ok &= trace.tests.iter().any(|t| t.m == m_hat - 1 && !t.pass);
                }
                ok &= trace.levels.iter().all(|l| l.norm_inv <= (1.0 + 1e-12) / l.delta);
            }
            Ok(Check::new(name, ok, "m̂ admissible, m̂ − 1 rejected, ridge floor holds"))
        })(),
    ));
    checks
}

/// Kernel, perturbation and KL invariants.
pub fn kernel_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    for shape in [KernelShape::Odd, KernelShape::Mixed] {
        let k = BumpKernel::for_smoothness(shape, 1);
        let grid = crate::quad::uniform_breaks(-1.0, 1.0, 1.0 / 256.0);
        let integral = crate::quad::gauss_legendre_panels(|z| k.eval(z), &grid);
        let sup = (0..=100_000).map(|i| k.eval(-1.0 + i as f64 * 2e-5).abs()).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("{shape:?} kernel"),
            integral.abs() < 1e-12 && (sup - 1.0).abs() < 1e-9 && k.antiderivative(1.0) == 0.0,
            format!("∫k = {integral:.1e}, ‖k‖∞ = {sup:.12}"),
        ));
    }
    let name = "perturbation and KL";
    checks.push(Check::from_result(
        name,
        (|| {
            let spec = reference_spec();
            let pair = PerturbationPair::new(spec, BumpKernel::mixed(2), 0.3, 0.1, 0.05)?;
            let kl = pair.kl(1e4)?;
            let mass = pair.mass_defect();
            Ok(Check::new(
                name,
                kl.exact <= kl.bound && kl.exact.is_finite() && mass.abs() < 1e-10,
                format!("KL {:.4e} ≤ bound {:.4e}, mass defect {mass:.1e}", kl.exact, kl.bound),
            ))
        })(),
    ));
    checks
}

/// Models for the lower-bound exponent checks: (label, spec, y, target).
pub fn rate_cases() -> Vec<(&'static str, PosteriorSpec, f64, f64)> {
    vec![
        ("Normal", reference_spec(), 0.5, -0.4),
        (
            "UniformScale",
            PosteriorSpec::new(FamilyModel::uniform_scale(100.0), PriorModel::Gamma { a: 3.0, rate: 1.0 })
                .expect("valid uniform model"),
            1.0,
            -2.0 / 3.0,
        ),
    ]
}

/// Gap² exponent within ±0.05 of the target, exact KL below the bound,
/// bound band ≤ 3, over `n ∈ {10³, …, 10⁶}` with `r = 1`.
pub fn rate_checks() -> Vec<Check> {
    let ns = [1e3, 1e4, 1e5, 1e6];
    rate_cases()
        .into_iter()
        .map(|(label, spec, y, target)| {
            let name = format!("lower-bound exponent {label}");
            Check::from_result(
                &name,
                bounds::rate_trace(&spec, &BumpKernel::for_smoothness(KernelShape::Mixed, 1), 1.0, y, &ns).map(|t| {
                    let pass = (t.fit.slope - target).abs() <= 0.05 && t.kl_exact_le_bound && t.kl_bound_ratio <= 3.0;
                    Check::new(
                        &name,
                        pass,
                        format!(
                            "slope {:.4} (target {target:.4} ± 0.05), KL ≤ bound: {}, bound ratio {:.3}",
                            t.fit.slope, t.kl_exact_le_bound, t.kl_bound_ratio
                        ),
                    )
                }),
            )
        })
        .collect()
}
