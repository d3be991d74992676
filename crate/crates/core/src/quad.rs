//! One-dimensional numerical integration.
//!
//! Adaptive 7/15-point Gauss–Kronrod with global bisection (QUADPACK `qagp`
//! style: the caller may seed the panel list with known kinks), plus a fixed
//! composite Gauss–Legendre rule for integrands that are polynomial between
//! tabulation nodes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisections beyond the initial panels.
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 100_000,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOptions {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Panel {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Panel {
        lo,
        hi,
        value,
        error,
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
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

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Integrates `f` over `[lo, hi]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, opts: QuadOptions) -> Result<Quadrature> {
    integrate_with_breaks(f, &[lo, hi], opts)
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the panels
/// delimited by `breaks` (which must be nondecreasing). Empty panels are
/// skipped, so duplicated breakpoints are harmless.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<Quadrature> {
    if breaks.len() < 2 {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::with_capacity(breaks.len());
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15(&f, w[0], w[1]));
            evaluations += 15;
        }
    }
    let totals = |heap: &BinaryHeap<Panel>| {
        let v: CompensatedSum = heap.iter().map(|p| p.value).collect();
        let e: CompensatedSum = heap.iter().map(|p| p.error).collect();
        (v.value(), e.value())
    };
    let (mut value, mut error) = totals(&heap);
    let mut splits = 0;
    while error > opts.abs_tol.max(opts.rel_tol * value.abs()) {
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = 0.5 * (worst.lo + worst.hi);
        if splits >= opts.max_subdivisions || mid <= worst.lo || mid >= worst.hi {
            return Err(Error::QuadratureFailure {
                lo: breaks[0],
                hi: breaks[breaks.len() - 1],
                err: error,
            });
        }
        let left = gk15(&f, worst.lo, mid);
        let right = gk15(&f, mid, worst.hi);
        evaluations += 30;
        splits += 1;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Re-sum periodically so running updates do not drift.
        if splits % 256 == 0 {
            let (v, e) = totals(&heap);
            value = v;
            error = e;
        }
    }
    let (value, error) = totals(&heap);
    Ok(Quadrature {
        value,
        error,
        evaluations,
    })
}

/// Integrates over `[a, +inf)` (or `(-inf, a]` when `upward` is false)
/// through the substitution `x = a ± t/(1-t)`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    upward: bool,
    opts: QuadOptions,
) -> Result<Quadrature> {
    let sign = if upward { 1.0 } else { -1.0 };
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let x = a + sign * t / s;
        let v = f(x) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, opts)
}

const GL3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Composite three-point Gauss–Legendre over the panels delimited by
/// `breaks`. Exact for piecewise quintics.
pub fn gauss_legendre_panels<F: Fn(f64) -> f64>(f: F, breaks: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for w in breaks.windows(2) {
        let c = 0.5 * (w[0] + w[1]);
        let h = 0.5 * (w[1] - w[0]);
        if h <= 0.0 {
            continue;
        }
        let mut s = 0.0;
        for i in 0..3 {
            s += GL3_W[i] * f(c + h * GL3_X[i]);
        }
        acc.add(s * h);
    }
    acc.value()
}

/// Three-point Gauss–Legendre nodes and weights mapped onto `[lo, hi]`.
pub fn gl3_nodes(lo: f64, hi: f64) -> [(f64, f64); 3] {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    [
        (c + h * GL3_X[0], h * GL3_W[0]),
        (c + h * GL3_X[1], h * GL3_W[1]),
        (c + h * GL3_X[2], h * GL3_W[2]),
    ]
}

/// Uniform breakpoints `lo, lo + step, ..., hi` (the last panel may be short).
pub fn uniform_breaks(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo, lo];
    }
    let n = ((hi - lo) / step).ceil() as usize;
    let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    v.push(hi);
    v
}

/// Sorted union of `breaks` and `extra`.
pub fn merge_breaks(mut breaks: Vec<f64>, extra: &[f64]) -> Vec<f64> {
    breaks.extend_from_slice(extra);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| 3.0 * x * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((q.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn kinked_integrand_with_breaks() {
        let f = |x: f64| (x - 0.3).abs();
        let q = integrate_with_breaks(f, &[0.0, 0.3, 1.0], QuadOptions::default()).unwrap();
        assert!((q.value - (0.045 + 0.245)).abs() < 1e-14);
        let q = integrate(f, 0.0, 1.0, QuadOptions::with_tol(1e-12, 1e-12)).unwrap();
        assert!((q.value - 0.29).abs() < 1e-11);
    }

    #[test]
    fn gaussian_tails() {
        let f = |x: f64| (-0.5 * x * x).exp();
        let right = integrate_semi_infinite(f, 0.0, true, QuadOptions::default()).unwrap();
        let left = integrate_semi_infinite(f, 0.0, false, QuadOptions::default()).unwrap();
        let total = right.value + left.value;
        assert!((total - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn oscillatory_needs_subdivision() {
        let q = integrate(|x| (50.0 * x).sin(), 0.0, 1.0, QuadOptions::with_tol(1e-12, 1e-12)).unwrap();
        let exact = (1.0 - 50f64.cos()) / 50.0;
        assert!((q.value - exact).abs() < 1e-11);
    }

    #[test]
    fn fails_when_subdivision_budget_exhausted() {
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_subdivisions: 3,
        };
        let r = integrate(|x: f64| (1.0 / x.max(1e-300)).sqrt(), 0.0, 1.0, opts);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }

    #[test]
    fn composite_gauss_legendre_exact_for_quintics() {
        let breaks = uniform_breaks(-1.0, 2.0, 0.7);
        let v = gauss_legendre_panels(|x| x.powi(5) - x, &breaks);
        let exact = (64.0 - 1.0) / 6.0 - (4.0 - 1.0) / 2.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
