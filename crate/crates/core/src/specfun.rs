//! Special functions and quadrature primitives.
//!
//! Real J₀, J₁ and erf come from `libm` (a port of the FreeBSD/musl math
//! library). The exponentially scaled I₁ and the complex-argument Bessel
//! functions are evaluated here by power series and Hankel asymptotic
//! expansions, switching at a radius where both are accurate to ~10⁻¹².

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bessel function of the first kind, order 0.
#[inline]
pub fn bessel_j0(x: f64) -> f64 {
    libm::j0(x)
}

/// Bessel function of the first kind, order 1.
#[inline]
pub fn bessel_j1(x: f64) -> f64 {
    libm::j1(x)
}

/// Error function.
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const SERIES_SWITCH_I1: f64 = 25.0;

/// `I₁(x)·e^{-x}` for `x ≥ 0`.
pub fn bessel_i1_scaled(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("bessel_i1_scaled needs x >= 0, got {x}")));
    }
    Ok(i1e(x))
}

/// Unchecked `I₁(x)·e^{-x}` for hot loops; `x` must be non-negative.
#[inline]
pub fn i1e(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x <= SERIES_SWITCH_I1 {
        let q = 0.25 * x * x;
        let mut term = 0.5 * x;
        let mut sum = term;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + 1.0));
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            let odd = 2.0 * k - 1.0;
            let next = -term * (4.0 - odd * odd) / (8.0 * k * x);
            if next.abs() >= term.abs() || next.abs() < 1e-17 {
                sum += next;
                break;
            }
            term = next;
            sum += term;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// `I₁(w)·e^{-w}` for complex `w` with `Re w ≥ 0`.
///
/// The asymptotic branch drops the exponentially subdominant contribution, so
/// for `|w| > 25` the argument should stay well inside the right half-plane.
pub fn i1e_complex(w: Complex64) -> Complex64 {
    if w.norm() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if w.norm() <= SERIES_SWITCH_I1 {
        let q = 0.25 * w * w;
        let mut term = 0.5 * w;
        let mut sum = term;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + 1.0));
            sum += term;
            if term.norm() < 1e-17 * sum.norm() {
                break;
            }
        }
        sum * (-w).exp()
    } else {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        let mut k = 0.0;
        loop {
            k += 1.0;
            let odd = 2.0 * k - 1.0;
            let next = -term * (4.0 - odd * odd) / (8.0 * k * w);
            if next.norm() >= term.norm() || next.norm() < 1e-17 {
                sum += next;
                break;
            }
            term = next;
            sum += term;
        }
        sum / (2.0 * PI * w).sqrt()
    }
}

/// Largest |z| accepted by [`bessel_j1_complex`].
pub const J1_COMPLEX_MAX_ABS: f64 = 30.0;
const J1_SERIES_RADIUS: f64 = 14.0;

/// J₁ of a complex argument, restricted to `|z| ≤ 30`.
///
/// Power series inside |z| ≤ 14, Hankel's asymptotic expansion outside. The
/// plain series loses about log10(e^|z|) digits to cancellation near the real
/// axis, which is why it is not used all the way out.
pub fn bessel_j1_complex(z: Complex64) -> Result<Complex64> {
    let r = z.norm();
    if !r.is_finite() || r > J1_COMPLEX_MAX_ABS {
        return Err(Error::Domain(format!(
            "bessel_j1_complex: |z| = {r:.3} exceeds {J1_COMPLEX_MAX_ABS}; use the masked Hankel path"
        )));
    }
    if r == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(if r <= J1_SERIES_RADIUS { j1_series(z) } else { j1_hankel(z) })
}

fn j1_series(z: Complex64) -> Complex64 {
    let q = -0.25 * z * z;
    let mut term = 0.5 * z;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term.norm() < 1e-17 * sum.norm().max(1e-300) || k > 200.0 {
            break;
        }
    }
    sum
}

fn j1_hankel(z: Complex64) -> Complex64 {
    // J1 is odd; fold into the right half-plane where Hankel's form holds.
    let (zz, sign) = if z.re < 0.0 { (-z, -1.0) } else { (z, 1.0) };
    let mu = 4.0;
    let mut t = Complex64::new(1.0, 0.0);
    let mut p = t;
    let mut q = Complex64::new(0.0, 0.0);
    let mut k = 0usize;
    loop {
        k += 1;
        let odd = (2 * k - 1) as f64;
        let next = t * (mu - odd * odd) / (k as f64 * 8.0 * zz);
        if next.norm() >= t.norm() || next.norm() < 1e-17 {
            break;
        }
        t = next;
        // a_k/z^k contributes to P for even k, Q for odd k, alternating signs.
        match k % 4 {
            0 => p += t,
            1 => q += t,
            2 => p -= t,
            _ => q -= t,
        }
    }
    let chi = zz - 0.75 * PI;
    let pref = (2.0 / (PI * zz)).sqrt();
    sign * pref * (p * chi.cos() - q * chi.sin())
}

/// Tolerances for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-30, max_subdivisions: 200 }
    }
}

impl QuadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) || self.max_subdivisions < 1 {
            return Err(Error::Domain("QuadSpec needs rel_tol > 0, abs_tol >= 0, max_subdivisions >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    /// False when the subdivision budget ran out before the tolerance was met.
    pub converged: bool,
    pub evaluations: usize,
}

/// Values that adaptive quadrature can accumulate.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk = rk + s * WGK[j];
        if j % 2 == 1 {
            rg = rg + s * WG[j / 2];
        }
    }
    let rk = rk * h;
    let rg = rg * h;
    (rk, (rk - rg).magnitude())
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol·|I|)` or the subdivision budget
/// is exhausted, in which case `converged` is false and the best estimate is
/// still returned.
pub fn integrate_1d<T, F>(mut f: F, a: f64, b: f64, spec: &QuadSpec) -> QuadResult<T>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    if !(b > a) {
        return QuadResult { value: T::zero(), error: 0.0, converged: a == b, evaluations: 0 };
    }
    let mut parts: Vec<(f64, f64, T, f64)> = Vec::with_capacity(spec.max_subdivisions + 1);
    let (v, e) = gk15(&mut f, a, b);
    parts.push((a, b, v, e));
    let mut evals = 15;
    loop {
        let mut total = T::zero();
        let mut err = 0.0;
        let mut worst = 0;
        for (i, p) in parts.iter().enumerate() {
            total = total + p.2;
            err += p.3;
            if p.3 > parts[worst].3 {
                worst = i;
            }
        }
        let tol = spec.abs_tol.max(spec.rel_tol * total.magnitude());
        if err <= tol {
            return QuadResult { value: total, error: err, converged: true, evaluations: evals };
        }
        if parts.len() >= spec.max_subdivisions {
            return QuadResult { value: total, error: err, converged: false, evaluations: evals };
        }
        let (pa, pb, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        if !(mid > pa && mid < pb) {
            return QuadResult { value: total, error: err, converged: false, evaluations: evals };
        }
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        evals += 30;
        parts.push((pa, mid, v1, e1));
        parts.push((mid, pb, v2, e2));
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// A fixed composite Gauss–Legendre rule: `∫f ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    /// Applies an `order`-point rule on each panel between consecutive breakpoints.
    pub fn from_breakpoints(breaks: &[f64], order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(order * breaks.len().saturating_sub(1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let h = 0.5 * (b - a);
            let c = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(c + h * x);
                weights.push(h * w);
            }
        }
        Self { nodes, weights }
    }

    /// Uniform panels over `[a, b]`.
    pub fn uniform(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let breaks: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
        Self::from_breakpoints(&breaks, order)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<T: QuadValue>(&self, mut f: impl FnMut(f64) -> T) -> T {
        let mut acc = T::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + f(*x) * *w;
        }
        acc
    }
}

/// Cubic Lagrange interpolation on a uniform table starting at 0.
///
/// Used for smooth radial caches. Values beyond the table end are clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformTable<T> {
    pub step: f64,
    pub values: Vec<T>,
}

impl<T: QuadValue> UniformTable<T> {
    pub fn new(step: f64, values: Vec<T>) -> Self {
        assert!(step > 0.0 && values.len() >= 4, "table needs positive step and 4+ samples");
        Self { step, values }
    }

    /// Four-point Lagrange cubic interpolation.
    pub fn eval(&self, x: f64) -> T {
        let n = self.values.len();
        let s = (x / self.step).max(0.0);
        let i = (s.floor() as usize).min(n - 2);
        let i0 = i.saturating_sub(1).min(n - 4);
        let t = s - i0 as f64;
        // nodes at i0, i0+1, i0+2, i0+3 -> local coordinates 0,1,2,3
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        let v = &self.values;
        v[i0] * l0 + v[i0 + 1] * l1 + v[i0 + 2] * l2 + v[i0 + 3] * l3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j1_series_oracle(x: f64) -> f64 {
        // independent series summed in reverse to limit rounding
        let terms: Vec<f64> = (0..40)
            .map(|k| {
                let mut t = (x / 2.0).powi(2 * k + 1);
                for j in 1..=k {
                    t /= j as f64;
                }
                for j in 1..=(k + 1) {
                    t /= j as f64;
                }
                if k % 2 == 1 {
                    -t
                } else {
                    t
                }
            })
            .collect();
        terms.iter().rev().sum()
    }

    fn i1_integral_oracle(x: f64) -> f64 {
        // I1(x) e^{-x} = (1/π) ∫_0^π e^{x(cos t - 1)} cos t dt, trapezoid (spectrally accurate)
        let n = 20000;
        let h = PI / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * (x * (t.cos() - 1.0)).exp() * t.cos();
        }
        s * h / PI
    }

    #[test]
    fn real_bessel_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert_eq!(bessel_j1(0.0), 0.0);
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j1(1.0) - j1_series_oracle(1.0)).abs() < 1e-14);
        assert!((bessel_j1(-2.5) + bessel_j1(2.5)).abs() < 1e-16);
    }

    #[test]
    fn i1_scaled_values() {
        assert_eq!(bessel_i1_scaled(0.0).unwrap(), 0.0);
        assert!(bessel_i1_scaled(-1.0).is_err());
        let i1_1 = bessel_i1_scaled(1.0).unwrap() * 1f64.exp();
        assert!((i1_1 - 0.565_159_103_992_485).abs() < 1e-12);
        let x = 1e4;
        let asym = bessel_i1_scaled(x).unwrap() * (2.0 * PI * x).sqrt();
        assert!((asym - 1.0).abs() < 1e-3);
        assert!(bessel_i1_scaled(1e300).unwrap().is_finite());
    }

    #[test]
    fn i1_scaled_matches_integral_oracle_across_switch() {
        for &x in &[1e-3, 0.3, 2.0, 7.5, 20.0, 24.9, 25.1, 40.0, 120.0, 900.0] {
            let got = i1e(x);
            let want = i1_integral_oracle(x);
            assert!((got / want - 1.0).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn i1_complex_agrees_on_real_axis() {
        for &x in &[0.5, 10.0, 24.0, 26.0, 300.0] {
            let c = i1e_complex(Complex64::new(x, 0.0));
            assert!((c.re / i1e(x) - 1.0).abs() < 1e-12);
            assert!(c.im.abs() < 1e-14);
        }
    }

    #[test]
    fn j1_complex_matches_real() {
        for &x in &[0.0, 0.3, 1.0, 5.0, 13.9, 14.1, 20.0, 29.9, -17.0] {
            let c = bessel_j1_complex(Complex64::new(x, 0.0)).unwrap();
            assert!((c.re - bessel_j1(x)).abs() < 1e-10, "x={x}");
            assert!(c.im.abs() < 1e-12);
        }
        assert!(bessel_j1_complex(Complex64::new(31.0, 0.0)).is_err());
    }

    #[test]
    fn j1_complex_conjugation_and_imaginary_axis() {
        let z = Complex64::new(2.0, 3.0);
        let a = bessel_j1_complex(z).unwrap();
        let b = bessel_j1_complex(z.conj()).unwrap();
        assert!((a - b.conj()).norm() < 1e-14);
        // J1(iy) = i I1(y)
        for &y in &[0.7, 12.0, 20.0] {
            let j = bessel_j1_complex(Complex64::new(0.0, y)).unwrap();
            let want = i1e(y) * y.exp();
            assert!((j.im / want - 1.0).abs() < 1e-10, "y={y}");
            assert!(j.re.abs() < 1e-10 * want);
        }
    }

    #[test]
    fn j1_complex_branches_meet() {
        // series and asymptotic branches agree on the switch circle
        for &arg in &[0.0, 0.2, 0.9, 1.4, 2.5, -1.0] {
            let z = Complex64::from_polar(J1_SERIES_RADIUS, arg);
            let a = j1_series(z);
            let b = j1_hankel(z);
            assert!((a - b).norm() < 1e-10 * a.norm().max(1.0), "arg={arg}: {a} vs {b}");
        }
    }

    #[test]
    fn adaptive_quadrature_basics() {
        let spec = QuadSpec::default();
        let r = integrate_1d(|x: f64| x.sin(), 0.0, PI, &spec);
        assert!(r.converged && (r.value - 2.0).abs() < 1e-12);
        let g = integrate_1d(|x: f64| (-x * x).exp(), 0.0, 10.0, &spec);
        assert!((g.value - 0.886_226_925_452_758).abs() < 1e-9);
    }

    #[test]
    fn adaptive_quadrature_oscillatory_vs_trapezoid() {
        let spec = QuadSpec::default();
        let f = |x: f64| x * bessel_j1(50.0 * x);
        let r = integrate_1d(f, 0.0, 1.0, &spec);
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let mut t = 0.5 * (f(0.0) + f(1.0));
        for i in 1..n {
            t += f(i as f64 * h);
        }
        t *= h;
        assert!((r.value - t).abs() < 1e-8 * t.abs().max(1e-3), "{} vs {}", r.value, t);
    }

    #[test]
    fn adaptive_quadrature_flags_budget_exhaustion() {
        let spec = QuadSpec { rel_tol: 1e-15, abs_tol: 0.0, max_subdivisions: 2 };
        let r = integrate_1d(|x: f64| (1.0 / (x + 1e-6)).sin(), 0.0, 1.0, &spec);
        assert!(!r.converged);
        assert!(r.value.is_finite());
    }

    #[test]
    fn complex_quadrature() {
        let spec = QuadSpec::default();
        let r = integrate_1d(|x: f64| Complex64::new(0.0, x).exp(), 0.0, PI, &spec);
        assert!((r.value - Complex64::new(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((m - exact).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn composite_rule_integrates_polynomials() {
        let r = CompositeRule::uniform(0.0, 3.0, 7, 8);
        let v = r.integrate(|x| x * x * x);
        assert!((v - 81.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_table_reproduces_cubics() {
        let step = 0.1;
        let vals: Vec<f64> = (0..50).map(|i| (i as f64 * step).powi(3) - 2.0 * i as f64 * step).collect();
        let t = UniformTable::new(step, vals);
        for &x in &[0.0, 0.05, 0.17, 2.33, 4.85, 4.9] {
            assert!((t.eval(x) - (x.powi(3) - 2.0 * x)).abs() < 1e-12, "x={x}");
        }
    }
}
