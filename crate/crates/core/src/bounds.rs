//! Two-hypothesis lower-bound construction: bump kernels, perturbed
//! marginals, Kullback–Leibler control and the two-point gap.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::FamilyKind;
use crate::oracle::PosteriorSpec;
use crate::quad::{gauss_legendre_panels, integrate_with_breaks, uniform_breaks, QuadOptions};
use crate::stats::{self, LinearFit};

/// Shape of the polynomial bump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    /// `z(1 − z²)^q`: odd, so `k(0) = 0`.
    Odd,
    /// `(1 + z − (2q+3)z²)(1 − z²)^q`: zero mean with every derivative
    /// nonzero at the origin.
    Mixed,
}

/// `k(z) = c·P(z)(1 − z²)^q` on `(−1, 1)`, normalised to `‖k‖_∞ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpKernel {
    pub shape: KernelShape,
    pub q: u32,
    pub c: f64,
}

impl BumpKernel {
    pub fn odd(q: u32) -> Self {
        assert!(q >= 1, "kernel smoothness must be at least 1");
        let qf = q as f64;
        let z = 1.0 / (1.0 + 2.0 * qf).sqrt();
        let peak = z * (2.0 * qf / (1.0 + 2.0 * qf)).powf(qf);
        BumpKernel {
            shape: KernelShape::Odd,
            q,
            c: 1.0 / peak,
        }
    }

    pub fn mixed(q: u32) -> Self {
        assert!(q >= 1, "kernel smoothness must be at least 1");
        let raw = BumpKernel {
            shape: KernelShape::Mixed,
            q,
            c: 1.0,
        };
        let f = |z: f64| raw.eval(z).abs();
        // Coarse scan, then golden-section refinement around the best node.
        let steps = 20_000;
        let (mut best, mut zb) = (0.0, 0.0);
        for i in 0..=steps {
            let z = -1.0 + 2.0 * i as f64 / steps as f64;
            if f(z) > best {
                best = f(z);
                zb = z;
            }
        }
        let (mut a, mut b) = (zb - 2.0 / steps as f64, zb + 2.0 / steps as f64);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if f(x1) > f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let peak = f(0.5 * (a + b)).max(best);
        BumpKernel { c: 1.0 / peak, ..raw }
    }

    /// The kernel for smoothness `r`: `q = r + 1`.
    pub fn for_smoothness(shape: KernelShape, r: u32) -> Self {
        match shape {
            KernelShape::Odd => Self::odd(r + 1),
            KernelShape::Mixed => Self::mixed(r + 1),
        }
    }

    fn a(&self) -> f64 {
        2.0 * self.q as f64 + 3.0
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z <= -1.0 || z >= 1.0 {
            return 0.0;
        }
        let base = (1.0 - z * z).powi(self.q as i32);
        let p = match self.shape {
            KernelShape::Odd => z,
            KernelShape::Mixed => 1.0 + z - self.a() * z * z,
        };
        self.c * p * base
    }

    /// `k′(z)`.
    pub fn deriv(&self, z: f64) -> f64 {
        if z <= -1.0 || z >= 1.0 {
            return 0.0;
        }
        let q = self.q as i32;
        let s = 1.0 - z * z;
        let (p, dp) = match self.shape {
            KernelShape::Odd => (z, 1.0),
            KernelShape::Mixed => (1.0 + z - self.a() * z * z, 1.0 - 2.0 * self.a() * z),
        };
        self.c * (dp * s.powi(q) - 2.0 * q as f64 * z * p * s.powi(q - 1))
    }

    /// `K(z) = ∫_{−1}^z k`, which also vanishes at `z ≥ 1`.
    pub fn antiderivative(&self, z: f64) -> f64 {
        if z <= -1.0 || z >= 1.0 {
            return 0.0;
        }
        let q1 = self.q as f64 + 1.0;
        let s = (1.0 - z * z).powi(self.q as i32 + 1);
        match self.shape {
            KernelShape::Odd => -self.c * s / (2.0 * q1),
            KernelShape::Mixed => self.c * s * (z - 1.0 / (2.0 * q1)),
        }
    }

    /// `‖k‖_∞`, which is 1 by construction.
    pub fn sup_norm(&self) -> f64 {
        1.0
    }

    /// `∫ k²`.
    pub fn l2_norm_sq(&self) -> f64 {
        gauss_legendre_panels(|z| self.eval(z).powi(2), &uniform_breaks(-1.0, 1.0, 1.0 / 64.0))
    }
}

/// Stated `(r₁, r₂)` orders of `ρ_r(h)` and `|w_{h,y}(y)|` for each family.
pub fn stated_orders(kind: &FamilyKind, r: f64) -> (f64, f64) {
    match kind {
        FamilyKind::Normal { .. } | FamilyKind::Weibull { .. } | FamilyKind::Gamma { .. } => (r + 1.0, 1.0),
        FamilyKind::DoubleExponential { .. } | FamilyKind::UniformScale => (r, 0.0),
    }
}

/// `w_{h,y}(x) = ∫ θ q(x|θ) ψ_{h,y}(θ) dθ`, the Ψ-side image of the bump
/// `k((x − y)/h)`:
///
/// * normal: `x k(z) + σ² h⁻¹ k′(z)`
/// * double exponential: `x k(z) − h ∫ k(s) sign(x − y − hs) e^{−|x−y−hs|/σ} ds`
/// * Weibull / Gamma: `f′/(b x^{b−1} f) k(z) − k′(z)/(b h x^{b−1})`
/// * uniform scale: `x k(z) − h K(z)`
pub fn w_perturbation(kind: &FamilyKind, kernel: &BumpKernel, h: f64, y: f64, x: f64) -> Result<f64> {
    let z = (x - y) / h;
    match *kind {
        FamilyKind::Normal { sigma } => Ok(x * kernel.eval(z) + sigma * sigma * kernel.deriv(z) / h),
        FamilyKind::DoubleExponential { sigma } => {
            let f = |s: f64| {
                let d = x - y - h * s;
                kernel.eval(s) * d.signum() * (-d.abs() / sigma).exp()
            };
            let mut breaks = vec![-1.0, 1.0];
            if z > -1.0 && z < 1.0 {
                breaks.insert(1, z);
            }
            let conv = integrate_with_breaks(f, &breaks, QuadOptions::with_tol(1e-15, 1e-13))?.value;
            Ok(x * kernel.eval(z) - h * conv)
        }
        FamilyKind::Weibull { b } => exp_family_w(kernel, h, z, x, b, b - 1.0),
        FamilyKind::Gamma { beta } => exp_family_w(kernel, h, z, x, 1.0, beta - 1.0),
        FamilyKind::UniformScale => Ok(x * kernel.eval(z) - h * kernel.antiderivative(z)),
    }
}

/// Exponential family `q = h(θ) f(x) e^{−θ x^b}` with `f(x) = x^e`, so
/// `f′/f = e/x`.
fn exp_family_w(kernel: &BumpKernel, h: f64, z: f64, x: f64, b: f64, e: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::DomainViolation { family: "exponential", x });
    }
    let xb1 = x.powf(b - 1.0);
    Ok(e / (b * x * xb1) * kernel.eval(z) - kernel.deriv(z) / (b * h * xb1))
}

/// `ρ_r(h) = [max_{1≤j≤r} |w^{(j)}(y)|]⁻¹` with central differences of
/// step `10⁻³ h`.
pub fn rho_r(kind: &FamilyKind, kernel: &BumpKernel, h: f64, y: f64, r: u32) -> Result<f64> {
    if r == 0 {
        return Err(Error::Config("ρ_r needs r ≥ 1".into()));
    }
    let step = 1e-3 * h;
    let mut max = 0.0f64;
    for j in 1..=r {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for i in 0..=j {
            let x = y + (j as f64 / 2.0 - i as f64) * step;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * w_perturbation(kind, kernel, h, y, x)?;
            binom = binom * (j - i) as f64 / (i + 1) as f64;
        }
        max = max.max((acc / step.powi(j as i32)).abs());
    }
    Ok(1.0 / max)
}

/// The pair `(p₀, Ψ₀)` and its perturbation
/// `p₁ = p₀ + ζ k((x−y)/h)`, `Ψ₁ = Ψ₀ + ζ w_{h,y}`.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub spec: PosteriorSpec,
    pub kernel: BumpKernel,
    pub y: f64,
    pub h: f64,
    pub zeta: f64,
}

/// Points per unit `h` of the dense nonnegativity grid.
const A3_GRID: usize = 400;

impl PerturbationPair {
    /// Builds the pair and checks `p₁ ≥ 0` on a dense grid over `(y − h, y + h)`.
    pub fn new(spec: PosteriorSpec, kernel: BumpKernel, y: f64, h: f64, zeta: f64) -> Result<Self> {
        if !(h > 0.0) || !zeta.is_finite() {
            return Err(Error::Config(format!("bandwidth must be positive (h = {h}, ζ = {zeta})")));
        }
        let (lo, hi) = spec.family.x_domain();
        if y - h < lo || y + h > hi {
            return Err(Error::Config(format!(
                "window ({}, {}) leaves the sample space",
                y - h,
                y + h
            )));
        }
        let pair = PerturbationPair { spec, kernel, y, h, zeta };
        pair.check_a3()?;
        Ok(pair)
    }

    fn check_a3(&self) -> Result<()> {
        for i in 0..=2 * A3_GRID {
            let x = self.y - self.h + self.h * i as f64 / A3_GRID as f64;
            let v = self.p1(x)?;
            if v < 0.0 {
                return Err(Error::NegativeDensity { x, value: v });
            }
        }
        Ok(())
    }

    fn z(&self, x: f64) -> f64 {
        (x - self.y) / self.h
    }

    pub fn p0(&self, x: f64) -> Result<f64> {
        Ok(self.spec.p_psi(x)?.0)
    }

    pub fn p1(&self, x: f64) -> Result<f64> {
        Ok(self.p0(x)? + self.zeta * self.kernel.eval(self.z(x)))
    }

    pub fn psi0(&self, x: f64) -> Result<f64> {
        Ok(self.spec.p_psi(x)?.1)
    }

    pub fn psi1(&self, x: f64) -> Result<f64> {
        Ok(self.psi0(x)? + self.zeta * w_perturbation(&self.spec.family.kind, &self.kernel, self.h, self.y, x)?)
    }

    fn window_breaks(&self) -> Vec<f64> {
        uniform_breaks(self.y - self.h, self.y + self.h, self.h / 64.0)
    }

    /// `∫ (p₁ − p₀)`, zero up to quadrature error.
    pub fn mass_defect(&self) -> f64 {
        self.zeta * self.h * gauss_legendre_panels(|z| self.kernel.eval(z), &uniform_breaks(-1.0, 1.0, 1.0 / 64.0))
    }

    /// Exact `KL(p₁ⁿ ‖ p₀ⁿ)` and the bound `n ζ² ∫ k²((x−y)/h) / p₀`.
    pub fn kl(&self, n: f64) -> Result<KlValues> {
        let mut nodes = Vec::new();
        for w in self.window_breaks().windows(2) {
            nodes.extend(crate::quad::gl3_nodes(w[0], w[1]));
        }
        let mut exact = 0.0;
        let mut bound = 0.0;
        for (x, wt) in nodes {
            let p0 = self.p0(x)?;
            if !(p0 > 0.0) {
                return Err(Error::VanishingMarginal(x));
            }
            let dk = self.zeta * self.kernel.eval(self.z(x));
            let ratio = dk / p0;
            if 1.0 + ratio < 0.0 {
                return Err(Error::NegativeDensity { x, value: p0 + dk });
            }
            // p₁ ln(p₁/p₀) − (p₁ − p₀): same integral, nonnegative integrand.
            let term = if ratio <= -1.0 {
                p0
            } else {
                p0 * ((1.0 + ratio) * ratio.ln_1p() - ratio)
            };
            exact += wt * term;
            bound += wt * dk * dk / p0;
        }
        Ok(KlValues {
            exact: n * exact,
            bound: n * bound,
        })
    }

    /// `|t₁(y) − t₀(y)|` with `t_i = Ψ_i / p_i`.
    pub fn gap(&self) -> Result<f64> {
        let (p0, psi0) = self.spec.p_psi(self.y)?;
        let p1 = self.p1(self.y)?;
        if !(p0 > 0.0) || !(p1 > 0.0) {
            return Err(Error::VanishingMarginal(self.y));
        }
        Ok((self.psi1(self.y)? / p1 - psi0 / p0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlValues {
    pub exact: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub n: f64,
    pub h: f64,
    pub zeta: f64,
    pub kl_exact: f64,
    pub kl_bound: f64,
    pub gap: f64,
    pub gap_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTrace {
    pub rows: Vec<RateRow>,
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    pub zeta0: f64,
    /// Fit of `log gap²` against `log n`.
    pub fit: LinearFit,
    /// `−(2 max(r, r₁) − 2r₂)/(2 max(r, r₁) + 1)`.
    pub expected_exponent: f64,
    /// `max/min` of the KL bound over the grid.
    pub kl_bound_ratio: f64,
    pub kl_exact_le_bound: bool,
}

impl RateTrace {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the pair at `h(n) = n^{−1/(2r′+1)}`, `ζ(n) = ζ₀ h^{r′}` with
/// `r′ = max(r, r₁)` for every `n` and fits the gap exponent.
///
/// `ζ₀` is the largest value not above
/// `C_p = min_{|x−y|<h} p₀(x) / (2‖k‖_∞)` (taken at the coarsest `h`) for
/// which every pair passes the nonnegativity check.
pub fn rate_trace(spec: &PosteriorSpec, kernel: &BumpKernel, r: f64, y: f64, n_grid: &[f64]) -> Result<RateTrace> {
    if n_grid.is_empty() {
        return Err(Error::Config("empty n grid".into()));
    }
    let (r1, r2) = stated_orders(&spec.family.kind, r);
    let rp = r.max(r1);
    let h_of = |n: f64| n.powf(-1.0 / (2.0 * rp + 1.0));
    let h_max = n_grid.iter().map(|&n| h_of(n)).fold(0.0, f64::max);
    let probe = PerturbationPair {
        spec: spec.clone(),
        kernel: *kernel,
        y,
        h: h_max,
        zeta: 0.0,
    };
    let mut c_p = f64::INFINITY;
    for i in 0..=2 * A3_GRID {
        let x = y - h_max + h_max * i as f64 / A3_GRID as f64;
        c_p = c_p.min(probe.p0(x)? / (2.0 * kernel.sup_norm()));
    }
    if !(c_p > 0.0) {
        return Err(Error::VanishingMarginal(y));
    }

    let mut zeta0 = c_p;
    let pairs = loop {
        let built: Result<Vec<PerturbationPair>> = n_grid
            .iter()
            .map(|&n| {
                let h = h_of(n);
                PerturbationPair::new(spec.clone(), *kernel, y, h, zeta0 * h.powf(rp))
            })
            .collect();
        match built {
            Ok(p) => break p,
            Err(Error::NegativeDensity { .. }) if zeta0 > 1e-12 * c_p => zeta0 *= 0.5,
            Err(e) => return Err(e),
        }
    };

    let mut rows = Vec::with_capacity(pairs.len());
    for (pair, &n) in pairs.iter().zip(n_grid) {
        let kl = pair.kl(n)?;
        let gap = pair.gap()?;
        rows.push(RateRow {
            n,
            h: pair.h,
            zeta: pair.zeta,
            kl_exact: kl.exact,
            kl_bound: kl.bound,
            gap,
            gap_sq: gap * gap,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n).collect();
    let g2: Vec<f64> = rows.iter().map(|r| r.gap_sq).collect();
    let fit = stats::loglog_fit(&ns, &g2)?;
    let bounds = rows.iter().map(|r| r.kl_bound);
    let kl_max = bounds.clone().fold(f64::NEG_INFINITY, f64::max);
    let kl_min = bounds.fold(f64::INFINITY, f64::min);
    Ok(RateTrace {
        kl_exact_le_bound: rows.iter().all(|r| r.kl_exact <= r.kl_bound),
        rows,
        r,
        r1,
        r2,
        zeta0,
        fit,
        expected_exponent: -(2.0 * rp - 2.0 * r2) / (2.0 * rp + 1.0),
        kl_bound_ratio: kl_max / kl_min,
    })
}
