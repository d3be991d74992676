//! Compactly supported scaling functions and the index geometry of the
//! local system.
//!
//! A [`ScalingBasis`] holds φ, φ′ and φ″ on the dyadic grid
//! `M₁ + j·2^{-J}`. Values at the integers are eigenvectors of the
//! refinement transition matrix (eigenvalues 1, 1/2 and 1/4 for the three
//! orders); the refinement equation then fills one dyadic level at a time.
//! Between grid nodes the functions are linearly interpolated, and the
//! antiderivative of φ is the exact integral of that interpolant.

mod filters;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quad::{self, CompensatedSum};

/// Default filter: Daubechies with eight vanishing moments (φ ∈ C²).
pub const DEFAULT_WAVELET: &str = "db8";
/// Default tabulation depth.
pub const DEFAULT_DEPTH: u32 = 12;

const CACHE_MAGIC: &[u8; 8] = b"EBWBASIS";
const CACHE_VERSION: u32 = 1;

/// A tabulated scaling function with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingBasis {
    name: String,
    filter: Vec<f64>,
    support_lo: i32,
    support_hi: i32,
    vanishing_moments: usize,
    depth: u32,
    tables: [Vec<f64>; 3],
    antiderivative: Vec<f64>,
}

impl ScalingBasis {
    /// Builds the named basis at tabulation depth `depth` (8..=16).
    pub fn build(name: &str, depth: u32) -> Result<Self> {
        let spec = filters::lookup(name).ok_or_else(|| Error::UnknownWavelet(name.to_string()))?;
        if !(8..=16).contains(&depth) {
            return Err(Error::Config(format!("tabulation depth {depth} outside [8, 16]")));
        }
        if spec.continuous_derivatives < 2 {
            return Err(Error::InsufficientRegularity {
                name: spec.name.to_string(),
                order: 2,
                available: spec.continuous_derivatives,
            });
        }
        let filter = spec.coeffs.to_vec();
        let support_hi = (filter.len() - 1) as i32;
        let mut tables: [Vec<f64>; 3] = Default::default();
        for (order, table) in tables.iter_mut().enumerate() {
            let at_integers = integer_values(&filter, order)?;
            *table = cascade(&filter, &at_integers, order, depth);
        }
        let antiderivative = cumulative_trapezoid(&tables[0], 0.5f64.powi(depth as i32));
        Ok(ScalingBasis {
            name: spec.name.to_string(),
            filter,
            support_lo: 0,
            support_hi,
            vanishing_moments: spec.vanishing_moments,
            depth,
            tables,
            antiderivative,
        })
    }

    /// The default basis (`db8`, depth 12).
    pub fn default_basis() -> Self {
        Self::build(DEFAULT_WAVELET, DEFAULT_DEPTH).expect("default basis is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    /// `M₁`.
    pub fn support_lo(&self) -> i32 {
        self.support_lo
    }

    /// `M₂`.
    pub fn support_hi(&self) -> i32 {
        self.support_hi
    }

    /// `M₂ − M₁`.
    pub fn support_width(&self) -> i32 {
        self.support_hi - self.support_lo
    }

    pub fn vanishing_moments(&self) -> usize {
        self.vanishing_moments
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Grid spacing `2^{-J}`.
    pub fn step(&self) -> f64 {
        0.5f64.powi(self.depth as i32)
    }

    /// Raw table for derivative `order` (0, 1 or 2).
    pub fn table(&self, order: usize) -> &[f64] {
        &self.tables[order]
    }

    /// Abscissa of grid node `j`.
    pub fn node(&self, j: usize) -> f64 {
        self.support_lo as f64 + j as f64 * self.step()
    }

    /// Evaluates φ^(order) at `x` by linear interpolation; exactly zero
    /// outside `[M₁, M₂]`.
    pub fn eval(&self, x: f64, order: usize) -> f64 {
        let table = &self.tables[order];
        let t = (x - self.support_lo as f64) * (1u64 << self.depth) as f64;
        let last = table.len() - 1;
        if !(t >= 0.0 && t <= last as f64) {
            return 0.0;
        }
        let i = t.floor() as usize;
        if i >= last {
            return table[last];
        }
        let frac = t - i as f64;
        table[i] + frac * (table[i + 1] - table[i])
    }

    /// `∫_{M₁}^{x} φ(z) dz` for the interpolated φ.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let t = (x - self.support_lo as f64) * (1u64 << self.depth) as f64;
        let last = self.antiderivative.len() - 1;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= last as f64 {
            return self.antiderivative[last];
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        let (a, b) = (self.tables[0][i], self.tables[0][i + 1]);
        self.antiderivative[i] + self.step() * (frac * a + 0.5 * frac * frac * (b - a))
    }

    /// `∫φ` over the full support.
    pub fn total_integral(&self) -> f64 {
        self.antiderivative[self.antiderivative.len() - 1]
    }

    /// `φ_{m,k}^{(order)}(x) = 2^{m/2}·2^{m·order}·φ^{(order)}(2^m x − k)`.
    pub fn phi_mk(&self, m: i32, k: i64, x: f64, order: usize) -> f64 {
        let scale = 2f64.powi(m);
        scale.sqrt() * scale.powi(order as i32) * self.eval(scale * x - k as f64, order)
    }

    /// The index set `K_{m,y}`.
    pub fn index_set(&self, m: i32, y: f64) -> IndexSet {
        IndexSet::from_geometry(m, y, self.support_lo, self.support_hi, self.vanishing_moments)
    }

    /// Range of shifts `k` with `φ(2^m x − k) ≠ 0` possible, i.e.
    /// `M₁ < 2^m x − k < M₂`.
    pub fn active_shifts(&self, m: i32, x: f64) -> (i64, i64) {
        let z = 2f64.powi(m) * x;
        let lo = (z - self.support_hi as f64).floor() as i64 + 1;
        let hi = (z - self.support_lo as f64).ceil() as i64 - 1;
        (lo, hi)
    }

    /// Moments `∫ x^p φ(x) dx`, `p = 0..=max_order`, by the grid Riemann
    /// sum. The sum is exact (up to rounding) for `p < s`.
    pub fn moments(&self, max_order: usize) -> Vec<f64> {
        let h = self.step();
        (0..=max_order)
            .map(|p| {
                let s: CompensatedSum = self.tables[0]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| self.node(j).powi(p as i32) * v * h)
                    .collect();
                s.value()
            })
            .collect()
    }

    /// Checks the moment-reproduction identity
    /// `∫ x^ℵ Σ_k φ(x−k) φ(z−k) dx = z^ℵ` for `ℵ = 0..=max_order`.
    pub fn check_vanishing_moments(&self, max_order: usize, z_grid: &[f64]) -> MomentReport {
        let mu = self.moments(max_order);
        let mut residuals = Vec::new();
        for order in 0..=max_order {
            for &z in z_grid {
                let (k_lo, k_hi) = self.active_shifts(0, z);
                let lhs: CompensatedSum = (k_lo..=k_hi)
                    .map(|k| {
                        let kf = k as f64;
                        let shifted: f64 = (0..=order)
                            .map(|i| binomial(order, i) * kf.powi((order - i) as i32) * mu[i])
                            .sum();
                        self.eval(z - kf, 0) * shifted
                    })
                    .collect();
                residuals.push(MomentResidual {
                    order,
                    z,
                    residual: (lhs.value() - z.powi(order as i32)).abs(),
                });
            }
        }
        let max_residual = residuals.iter().map(|r| r.residual).fold(0.0, f64::max);
        MomentReport {
            residuals,
            max_residual,
        }
    }

    /// Maximum over the grid of the refinement-equation residual for
    /// derivative `order`, using depth-`J−1` values on the right-hand side.
    pub fn refinement_residual(&self, order: usize) -> f64 {
        let table = &self.tables[order];
        let per_unit = 1usize << self.depth;
        let factor = 2f64.sqrt() * 2f64.powi(order as i32);
        let mut worst = 0.0f64;
        for idx in 0..table.len() {
            let mut acc = 0.0;
            for (k, &hk) in self.filter.iter().enumerate() {
                let j = 2 * idx as i64 - (k * per_unit) as i64;
                if j >= 0 && (j as usize) < table.len() {
                    acc += hk * table[j as usize];
                }
            }
            worst = worst.max((table[idx] - factor * acc).abs());
        }
        worst
    }

    /// `sup_x |φ^{(order)}(x)|` over the grid.
    pub fn sup_norm(&self, order: usize) -> f64 {
        self.tables[order].iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    /// `∫ (φ^{(order)})²` for the interpolated function.
    pub fn l2_norm_sq(&self, order: usize) -> f64 {
        let t = &self.tables[order];
        let h = self.step();
        let s: CompensatedSum = t
            .windows(2)
            .map(|w| h * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
            .collect();
        s.value()
    }

    /// `C_φ = sup_z Σ_k |φ(z − k)|`, sampled on the grid.
    pub fn shift_sum_sup(&self) -> f64 {
        let per_unit = 1usize << self.depth;
        let t = &self.tables[0];
        (0..per_unit)
            .map(|r| t.iter().skip(r).step_by(per_unit).map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Breakpoints of the interpolant of `φ(2^m x − k)` in `x`, restricted
    /// to `[lo, hi]` (the full support when `None`).
    pub fn cell_breaks(&self, m: i32, k: i64, clip: Option<(f64, f64)>) -> Vec<f64> {
        let scale = 2f64.powi(-m);
        let n = self.tables[0].len();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let x = (self.node(j) + k as f64) * scale;
            match clip {
                Some((lo, hi)) if x < lo || x > hi => {}
                _ => out.push(x),
            }
        }
        if let Some((lo, hi)) = clip {
            let (a, b) = (
                (self.support_lo as f64 + k as f64) * scale,
                (self.support_hi as f64 + k as f64) * scale,
            );
            if lo > a && lo < b {
                out.insert(0, lo);
            }
            if hi > a && hi < b {
                out.push(hi);
            }
        }
        out
    }

    /// Writes the tabulation cache file.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 * self.tables[0].len() + 64);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        let id = self.name.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&self.support_lo.to_le_bytes());
        buf.extend_from_slice(&self.support_hi.to_le_bytes());
        buf.extend_from_slice(&(self.vanishing_moments as u32).to_le_bytes());
        buf.extend_from_slice(&self.depth.to_le_bytes());
        for table in &self.tables {
            for v in table {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reads a cache file written by [`ScalingBasis::write_cache`]. The
    /// filter is recovered from the wavelet id.
    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::Io("not a basis cache file".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Io(format!("unsupported cache version {version}")));
        }
        let id_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|e| Error::Io(e.to_string()))?;
        let support_lo = r.i32()?;
        let support_hi = r.i32()?;
        let vanishing_moments = r.u32()? as usize;
        let depth = r.u32()?;
        let spec = filters::lookup(&name).ok_or_else(|| Error::UnknownWavelet(name.clone()))?;
        if !(1..=20).contains(&depth) || support_hi <= support_lo {
            return Err(Error::Io("corrupt cache header".into()));
        }
        let len = (support_hi - support_lo) as usize * (1usize << depth) + 1;
        let mut tables: [Vec<f64>; 3] = Default::default();
        for table in tables.iter_mut() {
            *table = (0..len).map(|_| r.f64()).collect::<Result<_>>()?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Io("trailing bytes in cache file".into()));
        }
        let antiderivative = cumulative_trapezoid(&tables[0], 0.5f64.powi(depth as i32));
        Ok(ScalingBasis {
            name,
            filter: spec.coeffs.to_vec(),
            support_lo,
            support_hi,
            vanishing_moments,
            depth,
            tables,
            antiderivative,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Io("truncated cache file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// One entry of a moment-reproduction check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentResidual {
    pub order: usize,
    pub z: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub residuals: Vec<MomentResidual>,
    pub max_residual: f64,
}

/// The contiguous index range `K_{m,y} = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSet {
    pub m: i32,
    pub y: f64,
    pub lo: i64,
    pub hi: i64,
}

impl IndexSet {
    /// `[⌈2^m y − M₂ − s(M₂−M₁)⌉, ⌊2^m y − M₁ + s(M₂−M₁)⌋]` for support
    /// `[M₁, M₂]` and `s` vanishing moments.
    pub fn from_geometry(m: i32, y: f64, m1: i32, m2: i32, s: usize) -> IndexSet {
        let spread = (s as i64 * (m2 - m1) as i64) as f64;
        let center = 2f64.powi(m) * y;
        let lo = (center - m2 as f64 - spread).ceil() as i64;
        let hi = (center - m1 as f64 + spread).floor() as i64;
        IndexSet { m, y, lo, hi }
    }

    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, k: i64) -> bool {
        k >= self.lo && k <= self.hi
    }

    /// Position of `k` inside the set.
    pub fn position(&self, k: i64) -> usize {
        (k - self.lo) as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }

    /// Restricts the set to shifts whose support `2^{-m}[k+M₁, k+M₂]` lies
    /// inside `[x_lo, x_hi]`.
    pub fn clip_to_domain(&self, basis: &ScalingBasis, x_lo: f64, x_hi: f64) -> IndexSet {
        let scale = 2f64.powi(self.m);
        let mut out = *self;
        if x_lo.is_finite() {
            out.lo = out.lo.max((scale * x_lo - basis.support_lo() as f64).ceil() as i64);
        }
        if x_hi.is_finite() {
            out.hi = out.hi.min((scale * x_hi - basis.support_hi() as f64).floor() as i64);
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Values of φ^(order) at the integers `0..=L`, as the eigenvector of the
/// refinement transition matrix for eigenvalue `2^{-order}`, normalised by
/// `Σ_j j^p φ^(p)(j) = (−1)^p p!`.
fn integer_values(filter: &[f64], order: usize) -> Result<Vec<f64>> {
    let n = filter.len();
    let sqrt2 = 2f64.sqrt();
    let lambda = 0.5f64.powi(order as i32);
    let a = DMatrix::from_fn(n, n, |i, j| {
        let idx = 2 * i as i64 - j as i64;
        let h = if idx >= 0 && (idx as usize) < n { filter[idx as usize] } else { 0.0 };
        sqrt2 * h - if i == j { lambda } else { 0.0 }
    });
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonConvergentCascade("SVD failed".into()))?;
    let mut order_idx: Vec<usize> = (0..n).collect();
    order_idx.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (
        svd.singular_values[order_idx[0]],
        svd.singular_values[order_idx[1]],
    );
    if smallest > 1e-9 {
        return Err(Error::NonConvergentCascade(format!(
            "no eigenvalue {lambda} (smallest singular value {smallest:.3e})"
        )));
    }
    if second < 1e-6 {
        return Err(Error::NonConvergentCascade(format!(
            "eigenspace for eigenvalue {lambda} is not one-dimensional"
        )));
    }
    let mut v: Vec<f64> = v_t.row(order_idx[0]).iter().copied().collect();
    let norm: f64 = v
        .iter()
        .enumerate()
        .map(|(j, x)| (j as f64).powi(order as i32) * x)
        .sum();
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    let target = sign * factorial(order);
    if norm.abs() < 1e-12 {
        return Err(Error::NonConvergentCascade("eigenvector cannot be normalised".into()));
    }
    for x in v.iter_mut() {
        *x *= target / norm;
    }
    Ok(v)
}

/// Fills the dyadic grid from integer values with the refinement equation
/// `φ^(p)(x) = 2^p √2 Σ_k h_k φ^(p)(2x − k)`.
fn cascade(filter: &[f64], at_integers: &[f64], order: usize, depth: u32) -> Vec<f64> {
    let per_unit = 1usize << depth;
    let support = filter.len() - 1;
    let len = support * per_unit + 1;
    let mut table = vec![0.0; len];
    for (j, &v) in at_integers.iter().enumerate() {
        table[j * per_unit] = v;
    }
    let factor = 2f64.sqrt() * 2f64.powi(order as i32);
    for level in 1..=depth {
        let step = 1usize << (depth - level);
        let mut idx = step;
        while idx < len {
            let mut acc = 0.0;
            for (k, &hk) in filter.iter().enumerate() {
                let j = 2 * idx as i64 - (k * per_unit) as i64;
                if j >= 0 && (j as usize) < len {
                    acc += hk * table[j as usize];
                }
            }
            table[idx] = factor * acc;
            idx += 2 * step;
        }
    }
    table
}

fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = CompensatedSum::default();
    out.push(0.0);
    for w in values.windows(2) {
        acc.add(0.5 * h * (w[0] + w[1]));
        out.push(acc.value());
    }
    out
}

/// Integrates `f(x)·φ(2^m x − k)`-type integrands over the support of
/// `φ_{m,k}` (optionally clipped) with composite Gauss–Legendre on the
/// interpolation cells.
pub fn integrate_on_support<F: Fn(f64) -> f64>(
    basis: &ScalingBasis,
    m: i32,
    k: i64,
    clip: Option<(f64, f64)>,
    f: F,
) -> f64 {
    let breaks = basis.cell_breaks(m, k, clip);
    if breaks.len() < 2 {
        return 0.0;
    }
    quad::gauss_legendre_panels(f, &breaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_set_geometry_example() {
        let set = IndexSet::from_geometry(4, 0.5, -2, 2, 2);
        assert_eq!((set.lo, set.hi), (-2, 18));
        assert_eq!(set.len(), 21);
    }
    use std::sync::OnceLock;

    fn db8() -> &'static ScalingBasis {
        static B: OnceLock<ScalingBasis> = OnceLock::new();
        B.get_or_init(ScalingBasis::default_basis)
    }

    #[test]
    fn db8_geometry() {
        let b = db8();
        assert_eq!(b.support_width(), 15);
        assert_eq!(b.vanishing_moments(), 8);
        assert_eq!(b.table(0).len(), 15 * 4096 + 1);
    }

    #[test]
    fn unknown_and_rough_filters_are_rejected() {
        assert_eq!(
            ScalingBasis::build("haar", 10),
            Err(Error::UnknownWavelet("haar".into()))
        );
        assert!(matches!(
            ScalingBasis::build("db4", 10),
            Err(Error::InsufficientRegularity { order: 2, available: 1, .. })
        ));
        assert!(matches!(ScalingBasis::build("db8", 4), Err(Error::Config(_))));
    }

    #[test]
    fn table_endpoints_vanish_and_integral_is_one() {
        let b = db8();
        for order in 0..3 {
            let t = b.table(order);
            assert!(t[0].abs() < 1e-8 && t[t.len() - 1].abs() < 1e-8, "order {order}");
        }
        let riemann: f64 = b.table(0).iter().sum::<f64>() * b.step();
        assert!((riemann - 1.0).abs() < 1e-6);
        assert!((b.total_integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn refinement_residual_is_small() {
        let b = db8();
        for order in 0..3 {
            let r = b.refinement_residual(order);
            assert!(r < 1e-6, "order {order}: {r}");
        }
    }

    #[test]
    fn eval_is_zero_outside_and_exact_on_grid() {
        let b = db8();
        assert_eq!(b.eval(-5.0, 0), 0.0);
        assert_eq!(b.eval(15.5, 1), 0.0);
        assert!(b.eval(15.0, 1).abs() < 1e-6);
        let j = 12345;
        assert_eq!(b.eval(b.node(j), 0), b.table(0)[j]);
        assert_eq!(b.eval(b.node(j), 2), b.table(2)[j]);
    }

    #[test]
    fn partition_of_unity() {
        let b = db8();
        for i in 0..100 {
            let x = -3.0 + 0.0713 * i as f64;
            let (lo, hi) = b.active_shifts(0, x);
            let s: f64 = (lo..=hi).map(|k| b.eval(x - k as f64, 0)).sum();
            assert!((s - 1.0).abs() < 1e-6, "x = {x}: {s}");
        }
        let (lo, hi) = b.active_shifts(0, 0.37);
        let s: f64 = (lo..=hi).map(|k| b.eval(0.37 - k as f64, 0)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn derivative_normalisation() {
        let b = db8();
        let per_unit = 1 << b.depth();
        for order in 1..3usize {
            let s: f64 = (0..=15)
                .map(|j| (j as f64).powi(order as i32) * b.table(order)[j * per_unit])
                .sum();
            let want = if order == 1 { -1.0 } else { 2.0 };
            assert!((s - want).abs() < 1e-9, "order {order}: {s}");
        }
    }

    #[test]
    fn derivative_tables_match_finite_differences() {
        let b = db8();
        let h = b.step();
        let t0 = b.table(0);
        let t1 = b.table(1);
        let t2 = b.table(2);
        let mut worst1 = 0.0f64;
        let mut worst2 = 0.0f64;
        for j in (1..t0.len() - 1).step_by(97) {
            let d1 = (t0[j + 1] - t0[j - 1]) / (2.0 * h);
            let d2 = (t1[j + 1] - t1[j - 1]) / (2.0 * h);
            worst1 = worst1.max((d1 - t1[j]).abs());
            worst2 = worst2.max((d2 - t2[j]).abs());
        }
        assert!(worst1 < 1e-5, "{worst1}");
        assert!(worst2 < 1e-2, "{worst2}");
    }

    #[test]
    fn phi_mk_scaling() {
        let b = db8();
        for i in 0..20 {
            let x = -1.0 + 0.83 * i as f64;
            assert_eq!(b.phi_mk(0, 0, x, 0), b.eval(x, 0));
            let want = 2f64.powf(1.5) * b.eval(8.0 * x - 5.0, 0);
            assert!((b.phi_mk(3, 5, x, 0) - want).abs() < 1e-14);
        }
        let want1 = 2f64.powf(1.5) * 8.0 * b.eval(8.0 * 0.9 - 5.0, 1);
        assert!((b.phi_mk(3, 5, 0.9, 1) - want1).abs() < 1e-12);
        let (m, y) = (4, 0.3);
        let (lo, hi) = b.active_shifts(m, y);
        let s: f64 = (lo..=hi).map(|k| 2f64.powf(-m as f64 / 2.0) * b.phi_mk(m, k, y, 0)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn index_set_formula() {
        let b = db8();
        let k = b.index_set(3, 1.0);
        assert_eq!((k.lo, k.hi), (8 - 15 - 120, 8 + 120));
        assert_eq!(k.len(), 256);
        for m in 0..10 {
            for &y in &[0.0, 0.3, 1.7, -2.25] {
                let len = b.index_set(m, y).len() as i64;
                assert!((len - 256).abs() <= 1, "m={m} y={y}: {len}");
            }
        }
    }

    #[test]
    fn moment_reproduction() {
        let b = db8();
        let z: Vec<f64> = (0..10).map(|i| -0.45 + 0.1 * i as f64).collect();
        let report = b.check_vanishing_moments(7, &z);
        assert!(report.max_residual < 1e-5, "{}", report.max_residual);
        let zeroth = b.check_vanishing_moments(0, &[0.1, 0.77]);
        assert!(zeroth.max_residual < 1e-6);
    }

    #[test]
    fn moment_reproduction_fails_past_s() {
        let b = db8();
        let r = b.check_vanishing_moments(8, &[0.3]);
        let last = r.residuals.iter().find(|r| r.order == 8).unwrap();
        assert!(last.residual > 1e-3, "{}", last.residual);
    }

    #[test]
    fn third_moment_against_tabulated_product() {
        // Direct Riemann sum of x^3 Σ_k φ(x−k)φ(z−k) on the shifted grids.
        let b = db8();
        let z: f64 = 0.5;
        let h = b.step();
        let (lo, hi) = b.active_shifts(0, z);
        let mut acc = CompensatedSum::default();
        for k in lo..=hi {
            let w = b.eval(z - k as f64, 0);
            for (j, &v) in b.table(0).iter().enumerate() {
                let x = b.node(j) + k as f64;
                acc.add(x.powi(3) * v * w * h);
            }
        }
        assert!((acc.value() - z.powi(3)).abs() < 1e-5);
    }

    #[test]
    fn antiderivative_matches_quadrature() {
        let b = db8();
        for &x in &[0.0f64, 1.234, 5.5, 9.87654, 15.0, 20.0] {
            let q = quad::gauss_legendre_panels(
                |t| b.eval(t, 0),
                &quad::uniform_breaks(0.0, x.min(15.0), b.step()),
            );
            assert!((b.antiderivative(x) - q).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn cache_round_trip() {
        let b = ScalingBasis::build("db6", 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db6.bin");
        b.write_cache(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CACHE_MAGIC);
        let back = ScalingBasis::read_cache(&path).unwrap();
        assert_eq!(back, b);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(ScalingBasis::read_cache(&path).is_err());
    }
}
