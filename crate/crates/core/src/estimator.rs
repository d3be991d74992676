//! The local linear system `(B̂ + δI) â = ĉ` and the estimate
//! `t̂_m(y) = Σ_k â_k φ_{m,k}(y)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{IndexSet, ScalingBasis};
use crate::error::{Error, Result};
use crate::families::FamilyModel;
use crate::oracle::PosteriorSpec;
use crate::quad::{gl3_nodes, CompensatedSum};

/// Samples per accumulation chunk; partial sums are merged in chunk order
/// so results do not depend on the thread count.
const CHUNK: usize = 8192;
/// Fewer samples than this inside `2^{-m}(K + supp φ)` flags low density.
pub const LOW_DENSITY_COUNT: usize = 10;

/// How the ridge parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeltaPolicy {
    /// `δ = mult · √(2^m / n)`.
    Scaled(f64),
    /// A fixed δ.
    Fixed(f64),
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Scaled(1.0)
    }
}

impl DeltaPolicy {
    pub fn delta(&self, m: i32, n: usize) -> f64 {
        match *self {
            DeltaPolicy::Scaled(mult) => mult * (2f64.powi(m) / n as f64).sqrt(),
            DeltaPolicy::Fixed(d) => d,
        }
    }
}

/// `B̂_{jk} = n⁻¹ Σ_l φ_{m,k}(X_l) φ_{m,j}(X_l)` over `K`, touching only the
/// shifts active at each sample.
pub fn build_b_hat(basis: &ScalingBasis, m: i32, set: &IndexSet, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let size = set.len();
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; size * size];
            let mut vals = Vec::with_capacity(basis.support_width() as usize + 2);
            for &x in chunk {
                let (lo, hi) = basis.active_shifts(m, x);
                let (lo, hi) = (lo.max(set.lo), hi.min(set.hi));
                if lo > hi {
                    continue;
                }
                vals.clear();
                vals.extend((lo..=hi).map(|k| basis.phi_mk(m, k, x, 0)));
                let base = set.position(lo);
                for (a, &va) in vals.iter().enumerate() {
                    let row = (base + a) * size;
                    for (b, &vb) in vals.iter().enumerate().skip(a) {
                        acc[row + base + b] += va * vb;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; size * size];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = data.len() as f64;
    Ok(DMatrix::from_fn(size, size, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        total[a * size + b] / n
    }))
}

/// `ĉ_j = n⁻¹ Σ_l u_{m,j}(X_l)`.
pub fn build_c_hat(
    family: &FamilyModel,
    basis: &ScalingBasis,
    m: i32,
    set: &IndexSet,
    data: &[f64],
) -> Result<DVector<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let bank = family.u_bank(basis, m);
    let size = set.len();
    let compact = bank.compact();
    let partials: Vec<Result<Vec<f64>>> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; size];
            for &x in chunk {
                bank.eval(set.lo, x)?;
                let (lo, hi) = if compact {
                    let (lo, hi) = basis.active_shifts(m, x);
                    (lo.max(set.lo), hi.min(set.hi))
                } else {
                    (set.lo, set.hi)
                };
                for k in lo..=hi {
                    acc[set.position(k)] += bank.eval_unchecked(k, x);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; size];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let n = data.len() as f64;
    Ok(DVector::from_iterator(size, total.into_iter().map(|v| v / n)))
}

/// Solves `(B̂ + δI) a = ĉ` by Cholesky factorisation.
pub fn regularized_solve(b_hat: &DMatrix<f64>, c_hat: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("ridge parameter must be nonnegative, got {delta}")));
    }
    let size = b_hat.nrows();
    let mut a = b_hat.clone();
    for i in 0..size {
        a[(i, i)] += delta;
    }
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let x = chol.solve(c_hat);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

/// `Σ_k a_k φ_{m,k}(y)` over `K`.
pub fn eval_estimate(basis: &ScalingBasis, m: i32, set: &IndexSet, a_hat: &DVector<f64>, y: f64) -> f64 {
    let (lo, hi) = basis.active_shifts(m, y);
    (lo.max(set.lo)..=hi.min(set.hi))
        .map(|k| a_hat[set.position(k)] * basis.phi_mk(m, k, y, 0))
        .sum()
}

/// Eigenvalues of `B̂ + δI`. Rows of `B̂` with no data decouple and
/// contribute the eigenvalue δ exactly, so only the occupied block is
/// decomposed.
pub fn ridge_eigenvalues(b_hat: &DMatrix<f64>, delta: f64) -> (f64, f64) {
    let occupied: Vec<usize> = (0..b_hat.nrows()).filter(|&i| b_hat[(i, i)] > 0.0).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    if occupied.len() < b_hat.nrows() {
        lo = delta;
        hi = delta;
    }
    if !occupied.is_empty() {
        let block = DMatrix::from_fn(occupied.len(), occupied.len(), |i, j| b_hat[(occupied[i], occupied[j])]);
        for ev in block.symmetric_eigenvalues().iter() {
            lo = lo.min(ev + delta);
            hi = hi.max(ev + delta);
        }
    }
    (lo, hi)
}

/// An assembled (and solved) local system.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub m: i32,
    pub y: f64,
    pub set: IndexSet,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DVector<f64>,
    pub delta: f64,
    pub a_hat: DVector<f64>,
    /// Samples inside `2^{-m}(K + supp φ)`.
    pub samples_near: usize,
    pub n: usize,
}

impl LocalSystem {
    /// Builds `B̂`, `ĉ` and solves at level `m` with the given δ.
    pub fn assemble(
        family: &FamilyModel,
        basis: &ScalingBasis,
        data: &[f64],
        y: f64,
        m: i32,
        delta: f64,
    ) -> Result<LocalSystem> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        family.check_y(y)?;
        let set = family.effective_index_set(basis, m, y);
        if set.is_empty() {
            return Err(Error::Config(format!("empty index set at m = {m}, y = {y}")));
        }
        let b_hat = build_b_hat(basis, m, &set, data)?;
        let c_hat = build_c_hat(family, basis, m, &set, data)?;
        let scale = 2f64.powi(-m);
        let lo = (set.lo as f64 + basis.support_lo() as f64) * scale;
        let hi = (set.hi as f64 + basis.support_hi() as f64) * scale;
        let samples_near = data.iter().filter(|&&x| x > lo && x < hi).count();
        if b_hat.trace() == 0.0 {
            return Err(Error::LowDensity { y, m });
        }
        let a_hat = regularized_solve(&b_hat, &c_hat, delta)?;
        Ok(LocalSystem {
            m,
            y,
            set,
            b_hat,
            c_hat,
            delta,
            a_hat,
            samples_near,
            n: data.len(),
        })
    }

    /// `Σ a_k φ_{m,k}(y)`, without the location offset.
    pub fn raw_estimate(&self, basis: &ScalingBasis) -> f64 {
        eval_estimate(basis, self.m, &self.set, &self.a_hat, self.y)
    }

    /// `(λ_min, λ_max)` of `B̂ + δI`.
    pub fn eigen_range(&self) -> (f64, f64) {
        ridge_eigenvalues(&self.b_hat, self.delta)
    }

    /// Residual `‖(B̂ + δI) â − ĉ‖`.
    pub fn residual(&self) -> f64 {
        let mut r = &self.b_hat * &self.a_hat - &self.c_hat;
        r.axpy(self.delta, &self.a_hat, 1.0);
        r.norm()
    }
}

/// Result of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub t_hat: f64,
    pub m: i32,
    pub y: f64,
    pub n: usize,
    /// `|K|`.
    pub size: usize,
    pub delta: f64,
    pub min_eigenvalue: f64,
    /// Spectral norm of `(B̂ + δI)⁻¹`.
    pub norm_inv: f64,
    pub samples_near: usize,
    pub low_density: bool,
    /// Radius `2^{-m} s (M₂ − M₁)` of the neighbourhood used by the system.
    pub radius: f64,
}

/// Full pipeline at level `m`.
pub fn estimate(
    family: &FamilyModel,
    basis: &ScalingBasis,
    data: &[f64],
    y: f64,
    m: i32,
    policy: DeltaPolicy,
) -> Result<Estimate> {
    let n = data.len();
    if n < 2 {
        return Err(Error::EmptyData);
    }
    if 2f64.powi(m) >= n as f64 {
        return Err(Error::Config(format!("level {m} too fine for n = {n} (need 2^m < n)")));
    }
    let delta = policy.delta(m, n);
    let sys = LocalSystem::assemble(family, basis, data, y, m, delta)?;
    Ok(summarize(family, basis, &sys))
}

pub(crate) fn summarize(family: &FamilyModel, basis: &ScalingBasis, sys: &LocalSystem) -> Estimate {
    let offset = if family.is_location() { sys.y } else { 0.0 };
    let (min_eig, _) = sys.eigen_range();
    Estimate {
        t_hat: offset + sys.raw_estimate(basis),
        m: sys.m,
        y: sys.y,
        n: sys.n,
        size: sys.set.len(),
        delta: sys.delta,
        min_eigenvalue: min_eig,
        norm_inv: 1.0 / min_eig,
        samples_near: sys.samples_near,
        low_density: sys.samples_near < LOW_DENSITY_COUNT,
        radius: 2f64.powi(-sys.m) * (basis.vanishing_moments() as f64) * basis.support_width() as f64,
    }
}

/// Population versions `B_{jk} = ∫ φ_{m,k} φ_{m,j} p` and
/// `c_j = ∫ φ_{m,j} τ` with `τ = Ψ − x p` (location families) or `τ = Ψ`.
pub fn true_system(
    spec: &PosteriorSpec,
    basis: &ScalingBasis,
    m: i32,
    set: &IndexSet,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let size = set.len();
    let per_unit = 1i64 << basis.depth();
    let h = basis.step();
    let scale = 2f64.powi(-m);
    let root = 2f64.powf(m as f64 / 2.0);
    let (dom_lo, dom_hi) = spec.family.x_domain();
    // Cells of the common grid in u = 2^m x, from lo + M₁ to hi + M₂.
    let u_start = (set.lo + basis.support_lo() as i64) * per_unit;
    let u_end = (set.hi + basis.support_hi() as i64) * per_unit;
    let location = spec.family.is_location();
    let cells: Vec<i64> = (u_start..u_end).collect();
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = cells
        .par_chunks(4096)
        .map(|chunk| {
            let mut b = vec![0.0; size * size];
            let mut c = vec![0.0; size];
            let mut vals = Vec::with_capacity(basis.support_width() as usize + 2);
            for &cell in chunk {
                let u0 = cell as f64 * h;
                for (u, w) in gl3_nodes(u0, u0 + h) {
                    let x = u * scale;
                    if x <= dom_lo || x >= dom_hi {
                        continue;
                    }
                    let (p, psi) = spec.p_psi(x)?;
                    let tau = if location { psi - x * p } else { psi };
                    let (lo, hi) = basis.active_shifts(m, x);
                    let (lo, hi) = (lo.max(set.lo), hi.min(set.hi));
                    if lo > hi {
                        continue;
                    }
                    vals.clear();
                    vals.extend((lo..=hi).map(|k| root * basis.eval(u - k as f64, 0)));
                    let base = set.position(lo);
                    // dx = 2^{-m} du.
                    let wx = w * scale;
                    for (a, &va) in vals.iter().enumerate() {
                        c[base + a] += wx * va * tau;
                        for (bb, &vb) in vals.iter().enumerate().skip(a) {
                            b[(base + a) * size + base + bb] += wx * va * vb * p;
                        }
                    }
                }
            }
            Ok((b, c))
        })
        .collect();
    let mut b_tot = vec![CompensatedSum::default(); size * size];
    let mut c_tot = vec![CompensatedSum::default(); size];
    for part in partials {
        let (b, c) = part?;
        for (t, v) in b_tot.iter_mut().zip(b) {
            t.add(v);
        }
        for (t, v) in c_tot.iter_mut().zip(c) {
            t.add(v);
        }
    }
    let b = DMatrix::from_fn(size, size, |i, j| {
        let (a, bb) = if i <= j { (i, j) } else { (j, i) };
        b_tot[a * size + bb].value()
    });
    let c = DVector::from_iterator(size, c_tot.iter().map(|s| s.value()));
    Ok((b, c))
}

/// Projection `t_m(y)` built from the true system `a = B⁻¹ c` (plus the
/// location offset).
pub fn projected_t(spec: &PosteriorSpec, basis: &ScalingBasis, m: i32, y: f64) -> Result<f64> {
    let set = spec.family.effective_index_set(basis, m, y);
    let (b, c) = true_system(spec, basis, m, &set)?;
    let a = regularized_solve(&b, &c, 0.0)?;
    let offset = if spec.family.is_location() { y } else { 0.0 };
    Ok(offset + eval_estimate(basis, m, &set, &a, y))
}

/// `U_h` and `D_h` for `h = 0..=h_max`.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    pub u: Vec<DMatrix<f64>>,
    pub d: Vec<DVector<f64>>,
}

/// `(U_h)_{k,l} = ∫ z^h φ(z + 2^m y − k) φ(z + 2^m y − l) dz`,
/// `(D_h)_k = ∫ z^h φ(z + 2^m y − k) dz`.
pub fn moment_matrices(basis: &ScalingBasis, m: i32, y: f64, set: &IndexSet, h_max: usize) -> Result<MomentMatrices> {
    if h_max >= basis.vanishing_moments() {
        return Err(Error::Config(format!(
            "moment order {h_max} must be below the number of vanishing moments"
        )));
    }
    let size = set.len();
    let shift = 2f64.powi(m) * y;
    let width = basis.support_width() as i64;
    let table = basis.table(0).len();
    let h = basis.step();
    let mut u: Vec<DMatrix<f64>> = (0..=h_max).map(|_| DMatrix::zeros(size, size)).collect();
    let mut d: Vec<DVector<f64>> = (0..=h_max).map(|_| DVector::zeros(size)).collect();
    for (i, k) in set.iter().enumerate() {
        // Substitute w = z + shift − k, so z = w − shift + k and w runs over supp φ.
        let off = k as f64 - shift;
        for (j, l) in set.iter().enumerate().skip(i) {
            if l - k >= width {
                break;
            }
            let mut acc = vec![CompensatedSum::default(); h_max + 1];
            // φ(w + k − l) vanishes for w < l − k.
            let first = ((l - k) as usize) << basis.depth();
            for cell in first..table - 1 {
                let w0 = basis.node(cell);
                for (w, wt) in gl3_nodes(w0, w0 + h) {
                    let prod = basis.eval(w, 0) * basis.eval(w + (k - l) as f64, 0) * wt;
                    if prod == 0.0 {
                        continue;
                    }
                    let z = w + off;
                    let mut zp = 1.0;
                    for a in acc.iter_mut() {
                        a.add(zp * prod);
                        zp *= z;
                    }
                }
            }
            for (hh, a) in acc.iter().enumerate() {
                u[hh][(i, j)] = a.value();
                u[hh][(j, i)] = a.value();
            }
        }
        let mut acc = vec![CompensatedSum::default(); h_max + 1];
        for cell in 0..table - 1 {
            let w0 = basis.node(cell);
            for (w, wt) in gl3_nodes(w0, w0 + h) {
                let v = basis.eval(w, 0) * wt;
                let z = w + off;
                let mut zp = 1.0;
                for a in acc.iter_mut() {
                    a.add(zp * v);
                    zp *= z;
                }
            }
        }
        for (hh, a) in acc.iter().enumerate() {
            d[hh][i] = a.value();
        }
    }
    Ok(MomentMatrices { u, d })
}
