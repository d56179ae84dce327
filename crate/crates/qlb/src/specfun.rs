//! Spherical Bessel functions, Legendre polynomials and Gaussian quadrature rules.
//!
//! Everything here is pure double precision and allocation-light. Real-argument
//! spherical Bessel functions use Miller's downward recurrence for `j_ℓ` and the
//! upward recurrence for `y_ℓ`; complex arguments are supported through the
//! logarithmic derivative `j_ℓ'(z)/j_ℓ(z)`, which is all the permeable-sphere
//! matching condition needs.

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Errors raised by the special-function routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecfunError {
    /// The argument κ must be strictly positive.
    #[error("spherical Bessel argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    /// `y_ℓ` exceeded the overflow cap; orders above `largest_valid` are unavailable.
    #[error("y_l overflows beyond l = {largest_valid} at kappa = {kappa}")]
    YOverflow { kappa: f64, largest_valid: usize },
    /// Legendre abscissa outside [-1, 1].
    #[error("Legendre abscissa {0} outside [-1, 1]")]
    AbscissaOutOfRange(f64),
    /// Quadrature rules need at least one node.
    #[error("quadrature order must be at least 1")]
    EmptyRule,
}

/// Cap on |y_ℓ| before the upward ladder is stopped.
pub const Y_OVERFLOW_CAP: f64 = 1e280;

/// Spherical Bessel functions `j_ℓ(κ)`, `y_ℓ(κ)` for `ℓ = 0..=ℓ_max`.
#[derive(Debug, Clone)]
pub struct BesselSequence {
    pub kappa: f64,
    pub j: Vec<f64>,
    pub y: Vec<f64>,
    pub l_max: usize,
}

impl BesselSequence {
    /// Derivatives `(j_ℓ', y_ℓ')` from the ladder relation `g_ℓ' = g_{ℓ-1} − (ℓ+1)g_ℓ/κ`.
    pub fn derivatives(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.kappa;
        let n = self.l_max + 1;
        let mut jp = vec![0.0; n];
        let mut yp = vec![0.0; n];
        for l in 0..n {
            if l == 0 {
                // j_0' = −j_1, y_0' = −y_1; j_1, y_1 from the closed forms.
                let (s, c) = k.sin_cos();
                let j1 = s / (k * k) - c / k;
                let y1 = -c / (k * k) - s / k;
                jp[0] = -j1;
                yp[0] = -y1;
            } else {
                let lf = l as f64;
                jp[l] = self.j[l - 1] - (lf + 1.0) * self.j[l] / k;
                yp[l] = self.y[l - 1] - (lf + 1.0) * self.y[l] / k;
            }
        }
        (jp, yp)
    }

    /// `κ²(j_ℓ y_ℓ' − j_ℓ' y_ℓ)` for every ℓ; identically one in exact arithmetic.
    pub fn wronskian(&self) -> Vec<f64> {
        let (jp, yp) = self.derivatives();
        let k2 = self.kappa * self.kappa;
        (0..=self.l_max)
            .map(|l| k2 * (self.j[l] * yp[l] - jp[l] * self.y[l]))
            .collect()
    }

    /// Modulus `m_ℓ = (j_ℓ² + y_ℓ²)^{1/2}`.
    pub fn modulus(&self, l: usize) -> f64 {
        self.j[l].hypot(self.y[l])
    }
}

/// Starting order of the downward recurrence for `j_ℓ` up to `l_max` at argument κ.
pub fn miller_start(l_max: usize, kappa: f64) -> usize {
    let base = (l_max as f64).max(kappa.ceil());
    (base + (10.0 + 2.0 * base.sqrt()).ceil() + 10.0) as usize
}

/// Regular spherical Bessel functions `j_0..=j_{l_max}` by Miller's algorithm.
pub fn spherical_j(l_max: usize, kappa: f64) -> Result<Vec<f64>, SpecfunError> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(SpecfunError::NonPositiveArgument(kappa));
    }
    let start = miller_start(l_max, kappa);
    let mut out = vec![0.0; l_max + 1];
    let mut upper = 0.0_f64;
    let mut cur = 1e-300_f64;
    for l in (0..=start).rev() {
        if l <= l_max {
            out[l] = cur;
        }
        if l == 0 {
            break;
        }
        let lower = (2.0 * l as f64 + 1.0) / kappa * cur - upper;
        upper = cur;
        cur = lower;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            upper *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    // `upper` now holds the unnormalized j_1 and out[0] the unnormalized j_0.
    let (s, c) = kappa.sin_cos();
    let j0 = s / kappa;
    let j1 = s / (kappa * kappa) - c / kappa;
    let scale = if j0.abs() >= j1.abs() { j0 / out[0] } else { j1 / upper };
    for v in out.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// Irregular spherical Bessel functions `y_0..=y_{l_max}` by upward recurrence.
///
/// Returns the largest valid order in the error when `|y_ℓ|` exceeds [`Y_OVERFLOW_CAP`].
pub fn spherical_y(l_max: usize, kappa: f64) -> Result<Vec<f64>, SpecfunError> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(SpecfunError::NonPositiveArgument(kappa));
    }
    let (s, c) = kappa.sin_cos();
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(-c / kappa);
    if l_max >= 1 {
        out.push(-c / (kappa * kappa) - s / kappa);
    }
    for l in 2..=l_max {
        let next = (2.0 * l as f64 - 1.0) / kappa * out[l - 1] - out[l - 2];
        if !(next.abs() <= Y_OVERFLOW_CAP) {
            return Err(SpecfunError::YOverflow {
                kappa,
                largest_valid: l - 1,
            });
        }
        out.push(next);
    }
    if out.iter().any(|v| !(v.abs() <= Y_OVERFLOW_CAP)) {
        return Err(SpecfunError::YOverflow {
            kappa,
            largest_valid: 0,
        });
    }
    Ok(out)
}

/// Both spherical Bessel sequences at κ.
pub fn spherical_bessels(l_max: usize, kappa: f64) -> Result<BesselSequence, SpecfunError> {
    let j = spherical_j(l_max, kappa)?;
    let y = spherical_y(l_max, kappa)?;
    Ok(BesselSequence {
        kappa,
        j,
        y,
        l_max,
    })
}

/// Largest order whose `y_ℓ(κ)` stays below the overflow cap (searched up to `l_cap`).
pub fn largest_finite_y_order(kappa: f64, l_cap: usize) -> usize {
    match spherical_y(l_cap, kappa) {
        Ok(_) => l_cap,
        Err(SpecfunError::YOverflow { largest_valid, .. }) => largest_valid,
        Err(_) => 0,
    }
}

/// Logarithmic derivatives `z j_ℓ'(z)/j_ℓ(z)` for complex z, `ℓ = 0..=l_max`.
///
/// Uses the downward recurrence of the ratio `R_ℓ = j_ℓ/j_{ℓ−1} = z/(2ℓ+1 − z R_{ℓ+1})`,
/// which never forms the (possibly huge) functions themselves.
pub fn spherical_j_log_derivative(l_max: usize, z: Complex64) -> Vec<Complex64> {
    let start = miller_start(l_max, z.norm());
    let mut ratio = Complex64::new(0.0, 0.0);
    let mut ratios = vec![Complex64::new(0.0, 0.0); l_max + 2];
    for l in (1..=start + 1).rev() {
        ratio = z / (Complex64::new(2.0 * l as f64 + 1.0, 0.0) - z * ratio);
        if l <= l_max + 1 {
            ratios[l] = ratio;
        }
    }
    // z j_ℓ'/j_ℓ = ℓ − z j_{ℓ+1}/j_ℓ.
    (0..=l_max)
        .map(|l| Complex64::new(l as f64, 0.0) - z * ratios[l + 1])
        .collect()
}

/// Legendre values at one abscissa.
#[derive(Debug, Clone)]
pub struct LegendreSequence {
    pub x: f64,
    /// `P_0..=P_{ℓ_max}`.
    pub p: Vec<f64>,
    /// Associated functions `P_ℓ¹ = (1−x²)^{1/2} P_ℓ'`, entry 0 is zero.
    pub p1: Vec<f64>,
}

/// Legendre polynomials and first associated functions by the Bonnet recurrence.
pub fn legendre_all(l_max: usize, x: f64) -> Result<LegendreSequence, SpecfunError> {
    if !(x.abs() <= 1.0) {
        return Err(SpecfunError::AbscissaOutOfRange(x));
    }
    let mut p = vec![0.0; l_max + 1];
    let mut p1 = vec![0.0; l_max + 1];
    p[0] = 1.0;
    if l_max >= 1 {
        p[1] = x;
        p1[1] = (1.0 - x * x).max(0.0).sqrt();
    }
    for l in 2..=l_max {
        let lf = l as f64;
        p[l] = ((2.0 * lf - 1.0) * x * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
        p1[l] = ((2.0 * lf - 1.0) * x * p1[l - 1] - lf * p1[l - 2]) / (lf - 1.0);
    }
    Ok(LegendreSequence { x, p, p1 })
}

/// `P_ℓ`, `P_ℓ'` and `P_ℓ''` at x, written into the three slices (length ℓ_max + 1).
///
/// Uses `P_{ℓ+1}' = P_{ℓ−1}' + (2ℓ+1)P_ℓ` and its derivative, regular at x = ±1.
pub fn legendre_with_derivatives(x: f64, p: &mut [f64], dp: &mut [f64], d2p: &mut [f64]) {
    let n = p.len();
    if n == 0 {
        return;
    }
    p[0] = 1.0;
    dp[0] = 0.0;
    d2p[0] = 0.0;
    if n == 1 {
        return;
    }
    p[1] = x;
    dp[1] = 1.0;
    d2p[1] = 0.0;
    for l in 1..n - 1 {
        let lf = l as f64;
        p[l + 1] = ((2.0 * lf + 1.0) * x * p[l] - lf * p[l - 1]) / (lf + 1.0);
        dp[l + 1] = dp[l - 1] + (2.0 * lf + 1.0) * p[l];
        d2p[l + 1] = d2p[l - 1] + (2.0 * lf + 1.0) * dp[l];
    }
}

/// Which weight function a [`QuadratureRule`] integrates against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    /// Gauss–Legendre on [−1, 1].
    Legendre,
    /// Weight `e^{−x²} x^power` on [0, ∞), from Gauss–Legendre panels on [0, cutoff].
    HalfGaussian { power: u32, panels: usize, cutoff: f64 },
}

/// Nodes and positive weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
}

impl QuadratureRule {
    /// `Σ w_i f(x_i)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True for a rule without nodes.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre nodes (ascending) and weights on [−1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for l in 2..=n {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * x * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Builds a rule with `n` nodes (per panel for the half-Gaussian kind).
pub fn gauss_rule(n: usize, kind: RuleKind) -> Result<QuadratureRule, SpecfunError> {
    if n < 1 {
        return Err(SpecfunError::EmptyRule);
    }
    match kind {
        RuleKind::Legendre => {
            let (nodes, weights) = gauss_legendre(n);
            Ok(QuadratureRule {
                nodes,
                weights,
                kind,
            })
        }
        RuleKind::HalfGaussian {
            power,
            panels,
            cutoff,
        } => {
            let base = panel_rule(0.0, cutoff, n, panels.max(1));
            let weights = base
                .nodes
                .iter()
                .zip(&base.weights)
                .map(|(&x, &w)| w * (-x * x).exp() * x.powi(power as i32))
                .collect();
            Ok(QuadratureRule {
                nodes: base.nodes,
                weights,
                kind,
            })
        }
    }
}

/// Composite Gauss–Legendre rule with `panels` equal panels of `n` nodes on [a, b].
pub fn panel_rule(a: f64, b: f64, n: usize, panels: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre(n);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(n * panels);
    let mut weights = Vec::with_capacity(n * panels);
    for k in 0..panels {
        let lo = a + h * k as f64;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * h * (xi + 1.0));
            weights.push(0.5 * h * wi);
        }
    }
    QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::Legendre,
    }
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_on(a: f64, b: f64, n: usize) -> QuadratureRule {
    panel_rule(a, b, n, 1)
}

/// Cylindrical Bessel function `J_1(x)` from its periodic integral representation.
///
/// `J_1(x) = (1/2π)∫₀^{2π} cos(τ − x sin τ) dτ`; the trapezoid rule converges
/// geometrically once the node count exceeds |x|.
pub fn bessel_j1(x: f64) -> f64 {
    let n = (x.abs().ceil() as usize + 40) * 2;
    let h = 2.0 * PI / n as f64;
    let s: f64 = (0..n)
        .map(|i| {
            let t = h * i as f64;
            (t - x * t.sin()).cos()
        })
        .sum();
    s / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(l: usize) -> f64 {
        (0..=l).map(|i| (2 * i + 1) as f64).product()
    }

    #[test]
    fn j0_y0_closed_forms_at_pi() {
        let b = spherical_bessels(0, PI).unwrap();
        assert!(b.j[0].abs() < 1e-14);
        assert!((b.y[0] - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn wronskian_at_kappa_5() {
        let b = spherical_bessels(8, 5.0).unwrap();
        for w in b.wronskian() {
            assert!((w - 1.0).abs() < 1e-10, "{w}");
        }
    }

    #[test]
    fn wronskian_grid_and_modulus_bound() {
        for &k in &[0.1, 1.0, 5.0, 20.0, 100.0] {
            let l_max = (k + 40.0) as usize;
            let l_ok = largest_finite_y_order(k, l_max);
            let b = spherical_bessels(l_ok, k).unwrap();
            for (l, w) in b.wronskian().iter().enumerate() {
                assert!((w - 1.0).abs() < 1e-10, "kappa {k} l {l}: {w}");
                assert!(b.modulus(l) >= 1.0 / k * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn small_argument_series() {
        let k: f64 = 0.1;
        let j = spherical_j(10, k).unwrap();
        for (l, &jl) in j.iter().enumerate() {
            // κ^ℓ/(2ℓ+1)!! Σ_n (−κ²/2)^n / (n! (2ℓ+3)(2ℓ+5)…(2ℓ+2n+1))
            let mut term = 1.0;
            let mut sum = 1.0;
            for n in 1..10 {
                term *= -k * k / 2.0 / (n as f64 * (2 * l + 2 * n + 1) as f64);
                sum += term;
            }
            let series = k.powi(l as i32) / double_factorial_odd(l) * sum;
            assert!(((jl - series) / series).abs() < 1e-12, "l {l}");
        }
    }

    #[test]
    fn j_large_argument_matches_closed_form() {
        let k = 250.0_f64;
        let j = spherical_j(2, k).unwrap();
        let (s, c) = k.sin_cos();
        let j2 = (3.0 / (k * k) - 1.0) * s / k - 3.0 * c / (k * k);
        assert!((j[2] - j2).abs() < 1e-13);
    }

    #[test]
    fn y_overflow_reports_largest_order() {
        match spherical_y(400, 0.01) {
            Err(SpecfunError::YOverflow { largest_valid, .. }) => {
                assert!(largest_valid > 50 && largest_valid < 400)
            }
            other => panic!("expected overflow, got {other:?}"),
        }
        assert!(spherical_j(3, 0.0).is_err());
    }

    #[test]
    fn large_order_proxy_is_monotone() {
        let k = 20.0;
        let l_ok = largest_finite_y_order(k, 200);
        let b = spherical_bessels(l_ok, k).unwrap();
        let proxy: Vec<f64> = (41..=l_ok)
            .map(|l| 2.0 * b.j[l].abs() / b.modulus(l))
            .take_while(|&v| v > 1e-290)
            .collect();
        assert!(proxy.len() > 100);
        for w in proxy.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn complex_log_derivative_matches_real_case() {
        let k = 3.7;
        let b = spherical_bessels(12, k).unwrap();
        let (jp, _) = b.derivatives();
        let ld = spherical_j_log_derivative(12, Complex64::new(k, 0.0));
        for l in 0..=12 {
            let expect = k * jp[l] / b.j[l];
            assert!((ld[l].re - expect).abs() < 1e-9 * (1.0 + expect.abs()), "l {l}");
            assert!(ld[l].im.abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_values() {
        let s = legendre_all(6, 1.0).unwrap();
        assert!(s.p.iter().all(|&v| v == 1.0));
        assert!(s.p1.iter().all(|&v| v == 0.0));
        let s = legendre_all(2, 0.5).unwrap();
        assert!((s.p[2] + 0.125).abs() < 1e-15);
        assert!(legendre_all(2, 1.5).is_err());
    }

    #[test]
    fn legendre_orthogonality_and_associated_norm() {
        let rule = gauss_rule(20, RuleKind::Legendre).unwrap();
        let orth = rule.integrate(|x| {
            let s = legendre_all(6, x).unwrap();
            s.p[3] * s.p[5]
        });
        assert!(orth.abs() < 1e-12);
        for l in 1..=6usize {
            let norm = rule.integrate(|x| legendre_all(6, x).unwrap().p1[l].powi(2));
            let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
            let expect = 2.0 * fact(l + 1) / ((2 * l + 1) as f64 * fact(l - 1));
            assert!((norm - expect).abs() < 1e-11 * expect, "l {l}");
        }
    }

    #[test]
    fn legendre_derivative_recurrences() {
        let n = 9;
        let (mut p, mut dp, mut d2p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let x = 0.37;
        legendre_with_derivatives(x, &mut p, &mut dp, &mut d2p);
        let h = 1e-5;
        let (mut pa, mut pb) = (vec![0.0; n], vec![0.0; n]);
        let (mut da, mut db) = (vec![0.0; n], vec![0.0; n]);
        let (mut sa, mut sb) = (vec![0.0; n], vec![0.0; n]);
        legendre_with_derivatives(x + h, &mut pa, &mut da, &mut sa);
        legendre_with_derivatives(x - h, &mut pb, &mut db, &mut sb);
        for l in 0..n {
            assert!(((pa[l] - pb[l]) / (2.0 * h) - dp[l]).abs() < 1e-7);
            assert!(((da[l] - db[l]) / (2.0 * h) - d2p[l]).abs() < 1e-6);
        }
        let s = legendre_all(n - 1, x).unwrap();
        for l in 0..n {
            assert!((s.p[l] - p[l]).abs() < 1e-15);
            assert!((s.p1[l] - (1.0 - x * x).sqrt() * dp[l]).abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_small_rules() {
        let r1 = gauss_rule(1, RuleKind::Legendre).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - 2.0).abs() < 1e-15);
        let r2 = gauss_rule(2, RuleKind::Legendre).unwrap();
        assert!((r2.nodes[1] - 3f64.sqrt().recip()).abs() < 1e-15);
        assert!((r2.nodes[0] + 3f64.sqrt().recip()).abs() < 1e-15);
        assert!(r2.weights.iter().all(|w| (w - 1.0).abs() < 1e-15));
        let r3 = gauss_rule(3, RuleKind::Legendre).unwrap();
        assert!((r3.integrate(|x| x.powi(4)) - 0.4).abs() < 1e-14);
        assert!(gauss_rule(0, RuleKind::Legendre).is_err());
    }

    #[test]
    fn gauss_exactness_degree() {
        for n in [4usize, 9, 16, 33, 64] {
            let r = gauss_rule(n, RuleKind::Legendre).unwrap();
            for d in 0..2 * n {
                let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
                assert!((r.integrate(|x| x.powi(d as i32)) - exact).abs() < 1e-12, "n {n} d {d}");
            }
        }
    }

    #[test]
    fn half_gaussian_moments() {
        // ∫₀^∞ e^{−x²} x^k dx = Γ((k+1)/2)/2.
        let expect = [PI.sqrt() / 2.0, 0.5, PI.sqrt() / 4.0, 0.5, 3.0 * PI.sqrt() / 8.0, 1.0];
        for (k, e) in expect.iter().enumerate() {
            let kind = RuleKind::HalfGaussian {
                power: k as u32,
                panels: 6,
                cutoff: 9.0,
            };
            let r = gauss_rule(16, kind).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - e).abs() < 1e-12, "k {k}");
        }
    }

    #[test]
    fn j1_values() {
        // J_1(1) and J_1(10) reference values from the ascending series.
        let series = |x: f64| {
            let mut term = x / 2.0;
            let mut sum = term;
            for m in 1..80 {
                term *= -(x * x / 4.0) / (m as f64 * (m + 1) as f64);
                sum += term;
            }
            sum
        };
        for x in [0.3, 1.0, 4.0, 10.0] {
            assert!((bessel_j1(x) - series(x)).abs() < 1e-12, "x {x}");
        }
        assert!(bessel_j1(0.0).abs() < 1e-15);
    }
}
