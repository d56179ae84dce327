//! Hard-sphere partial-wave scattering in reduced units (ħ = a = 1).
//!
//! The amplitude is `f(κ, θ) = Σ_ℓ c_ℓ(κ) P_ℓ(cos θ)` with
//! `c_ℓ = (2ℓ+1)(S_ℓ − 1)/(2iκ)`. Restoring units: a physical amplitude at
//! relative momentum p is `a · f(a p/ħ, θ)` and cross sections scale with `a²`.
//!
//! Derivatives use the coordinates `z = κ cos(θ/2)`, `y = κ sin(θ/2)`; the mixed
//! derivative `∂_z` is taken at fixed y, which equals
//! `cos(θ/2)∂_κ − 2κ⁻¹ sin(θ/2)∂_θ`.

use crate::specfun::{
    gauss_legendre, legendre_with_derivatives, spherical_bessels, spherical_j_log_derivative,
    SpecfunError,
};
use num_complex::Complex64;
use rand::{Rng, RngExt};
use std::f64::consts::{E, PI};
use thiserror::Error;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Errors from the scattering layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatteringError {
    #[error("scattering momentum must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("interior Bessel evaluation overflowed for refractive argument {0}")]
    InteriorOverflow(f64),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

/// Scattering potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    /// Impenetrable sphere of unit radius.
    HardSphere,
    /// Square barrier of height `vbar` inside the unit sphere, for relative motion with `reduced_mass`.
    Permeable { vbar: f64, reduced_mass: f64 },
}

/// Default tail tolerance for the partial-wave sum.
pub const DEFAULT_TAIL_TOL: f64 = 1e-13;

/// Summed tail bound `(1/2κ)Σ_{ℓ>ℓ_max}(2ℓ+1)·2(eκ/(2ℓ+1))^{2ℓ+1}` of the amplitude series.
pub fn tail_bound(kappa: f64, l_max: usize) -> f64 {
    let mut sum = 0.0;
    let mut l = l_max + 1;
    loop {
        let n = (2 * l + 1) as f64;
        let r = E * kappa / n;
        if r >= 1.0 {
            return f64::INFINITY;
        }
        let term = n * 2.0 * (n * r.ln()).exp();
        sum += term;
        if term < 1e-30 * sum.max(1e-300) || l > l_max + 10_000 {
            break;
        }
        l += 1;
    }
    sum / (2.0 * kappa)
}

/// Smallest `ℓ_max ≥ ⌈2κ⌉` whose amplitude tail bound is below `tol`.
pub fn truncation_order(kappa: f64, tol: f64) -> usize {
    let floor = (2.0 * kappa).ceil().max(1.0) as usize;
    if tol.is_infinite() {
        return floor;
    }
    let mut l = floor;
    while tail_bound(kappa, l) >= tol {
        l += 1;
    }
    l
}

/// `S_ℓ(κ)` for the chosen potential.
pub fn s_matrix(l: usize, kappa: f64, potential: Potential) -> Result<Complex64, ScatteringError> {
    if !(kappa > 0.0) {
        return Err(ScatteringError::NonPositiveKappa(kappa));
    }
    match potential {
        Potential::HardSphere => {
            let b = spherical_bessels(l, kappa)?;
            Ok((b.y[l] + I * b.j[l]) / (b.y[l] - I * b.j[l]))
        }
        Potential::Permeable { vbar, reduced_mass } => {
            let b = spherical_bessels(l + 1, kappa)?;
            let (jp, yp) = b.derivatives();
            let n2 = Complex64::new(1.0 - 2.0 * reduced_mass * vbar / (kappa * kappa), 0.0);
            let z = n2.sqrt() * kappa;
            let beta = spherical_j_log_derivative(l, z)[l];
            if !beta.is_finite() {
                return Err(ScatteringError::InteriorOverflow(z.norm()));
            }
            let h1 = Complex64::new(b.j[l], b.y[l]);
            let h2 = Complex64::new(b.j[l], -b.y[l]);
            let h1p = Complex64::new(jp[l], yp[l]);
            let h2p = Complex64::new(jp[l], -yp[l]);
            Ok(-(kappa * h2p - beta * h2) / (kappa * h1p - beta * h1))
        }
    }
}

/// S-matrix elements and amplitude coefficients at one κ.
#[derive(Debug, Clone)]
pub struct PartialWaveTable {
    pub kappa: f64,
    /// `S_0..=S_{ℓ_max}`.
    pub s: Vec<Complex64>,
    pub l_max: usize,
    /// Guaranteed bound on the neglected part of the amplitude series.
    pub tail_bound: f64,
    /// `c_ℓ = (2ℓ+1)(S_ℓ−1)/(2iκ)` and its first two κ-derivatives.
    c: Vec<Complex64>,
    dc: Vec<Complex64>,
    d2c: Vec<Complex64>,
}

/// Amplitude and mixed derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeValue {
    pub f: Complex64,
    pub dz: Complex64,
}

/// Amplitude with first and second mixed derivatives at fixed y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeDerivs {
    pub f: Complex64,
    pub dz: Complex64,
    pub dzz: Complex64,
}

/// `(g, g', g'')` for `g_0 = (e^{−2iκ} − 1)/κ`, stable as κ → 0.
fn g0_with_derivs(kappa: f64) -> (Complex64, Complex64, Complex64) {
    if kappa < 0.5 {
        let mut a = Complex64::new(1.0, 0.0);
        let (mut g, mut g1, mut g2) = (Complex64::default(), Complex64::default(), Complex64::default());
        for n in 1..=40 {
            a *= -2.0 * I / n as f64;
            let nf = n as f64;
            g += a * kappa.powi(n - 1);
            if n >= 2 {
                g1 += a * (nf - 1.0) * kappa.powi(n - 2);
            }
            if n >= 3 {
                g2 += a * (nf - 1.0) * (nf - 2.0) * kappa.powi(n - 3);
            }
        }
        (g, g1, g2)
    } else {
        let e = (-2.0 * I * kappa).exp();
        let k = kappa;
        let g = (e - 1.0) / k;
        let g1 = -2.0 * I * e / k - (e - 1.0) / (k * k);
        let g2 = -4.0 * e / k + 4.0 * I * e / (k * k) + 2.0 * (e - 1.0) / (k * k * k);
        (g, g1, g2)
    }
}

impl PartialWaveTable {
    /// Hard-sphere table with the default tail tolerance.
    pub fn hard_sphere(kappa: f64) -> Result<Self, ScatteringError> {
        Self::new(kappa, DEFAULT_TAIL_TOL)
    }

    /// Hard-sphere table truncated so that the tail bound is below `tol`.
    ///
    /// Orders whose `y_ℓ` would overflow carry `S_ℓ = 1` (no scattering).
    pub fn new(kappa: f64, tol: f64) -> Result<Self, ScatteringError> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(ScatteringError::NonPositiveKappa(kappa));
        }
        let l_max = truncation_order(kappa, tol);
        let l_ok = crate::specfun::largest_finite_y_order(kappa, l_max);
        let b = spherical_bessels(l_ok, kappa)?;
        let (jp, yp) = b.derivatives();
        let k = kappa;
        let mut s = vec![Complex64::new(1.0, 0.0); l_max + 1];
        let mut c = vec![Complex64::default(); l_max + 1];
        let mut dc = vec![Complex64::default(); l_max + 1];
        let mut d2c = vec![Complex64::default(); l_max + 1];
        for l in 0..=l_ok {
            let pref = (2 * l + 1) as f64 / (2.0 * I);
            let (g, g1, g2) = if l == 0 {
                g0_with_derivs(k)
            } else {
                let h = Complex64::new(b.j[l], b.y[l]);
                let hp = Complex64::new(jp[l], yp[l]);
                let j = b.j[l];
                let g = -2.0 * j / (k * h);
                let g1 = 2.0 * I / (k * k * k * h * h) + 2.0 * j / (k * k * h);
                let g2 = -6.0 * I / (k.powi(4) * h * h) - 4.0 * I * hp / (k.powi(3) * h * h * h)
                    + 2.0 * jp[l] / (k * k * h)
                    - 4.0 * j / (k.powi(3) * h)
                    - 2.0 * j * hp / (k * k * h * h);
                (g, g1, g2)
            };
            s[l] = 1.0 + k * g;
            c[l] = pref * g;
            dc[l] = pref * g1;
            d2c[l] = pref * g2;
        }
        Ok(Self {
            kappa,
            s,
            l_max,
            tail_bound: tail_bound(kappa, l_max),
            c,
            dc,
            d2c,
        })
    }

    /// Amplitude coefficients `c_ℓ`.
    pub fn coefficients(&self) -> &[Complex64] {
        &self.c
    }

    /// `f(κ, θ)`.
    pub fn f(&self, theta: f64) -> Complex64 {
        let x = theta.cos();
        let (mut p0, mut p1) = (1.0, x);
        let mut sum = self.c[0];
        if self.l_max >= 1 {
            sum += self.c[1] * x;
        }
        for l in 1..self.l_max {
            let lf = l as f64;
            let p2 = ((2.0 * lf + 1.0) * x * p1 - lf * p0) / (lf + 1.0);
            sum += self.c[l + 1] * p2;
            p0 = p1;
            p1 = p2;
        }
        sum
    }

    /// `f` and `∂_z f` at θ.
    pub fn amplitude(&self, theta: f64) -> AmplitudeValue {
        let d = self.derivs(theta);
        AmplitudeValue { f: d.f, dz: d.dz }
    }

    /// `f`, `∂_z f`, `∂_z² f` at θ.
    pub fn derivs(&self, theta: f64) -> AmplitudeDerivs {
        let n = self.l_max + 1;
        let mut buf = vec![0.0; 3 * n];
        let (p, rest) = buf.split_at_mut(n);
        let (dp, d2p) = rest.split_at_mut(n);
        self.derivs_with(theta, p, dp, d2p)
    }

    /// As [`Self::derivs`] with caller-provided Legendre scratch of length ≥ ℓ_max + 1.
    pub fn derivs_with(&self, theta: f64, p: &mut [f64], dp: &mut [f64], d2p: &mut [f64]) -> AmplitudeDerivs {
        let n = self.l_max + 1;
        let (p, dp, d2p) = (&mut p[..n], &mut dp[..n], &mut d2p[..n]);
        let x = theta.cos();
        legendre_with_derivatives(x, p, dp, d2p);
        let (sh, ch) = (0.5 * theta).sin_cos();
        let k = self.kappa;
        let s2 = sh * sh;
        let c2 = ch * ch;
        let xz = 4.0 * ch * s2 / k;
        let xzz = 4.0 * s2 / (k * k) * (1.0 - 4.0 * c2);
        let kz = ch;
        let kzz = s2 / k;
        let mut f = Complex64::default();
        let mut fz = Complex64::default();
        let mut fzz = Complex64::default();
        for l in 0..n {
            let (c, c1, c2l) = (self.c[l], self.dc[l], self.d2c[l]);
            f += c * p[l];
            fz += c1 * (kz * p[l]) + c * (dp[l] * xz);
            fzz += c2l * (kz * kz * p[l])
                + c1 * (kzz * p[l] + 2.0 * kz * xz * dp[l])
                + c * (d2p[l] * xz * xz + dp[l] * xzz);
        }
        AmplitudeDerivs { f, dz: fz, dzz: fzz }
    }

    /// `σ_tot = (π/κ²)Σ(2ℓ+1)|S_ℓ − 1|²`.
    pub fn sigma_tot(&self) -> f64 {
        let k = self.kappa;
        PI / (k * k)
            * self
                .s
                .iter()
                .enumerate()
                .map(|(l, s)| (2 * l + 1) as f64 * (s - 1.0).norm_sqr())
                .sum::<f64>()
    }
}

/// `f` and `∂_z f` at (κ, θ) by direct evaluation.
pub fn amplitude(kappa: f64, theta: f64) -> Result<AmplitudeValue, ScatteringError> {
    Ok(PartialWaveTable::hard_sphere(kappa)?.amplitude(theta))
}

/// Total, mixed-derivative and momentum-transfer cross sections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSections {
    pub sigma_tot: f64,
    pub sigma_z: f64,
    pub sigma_0: f64,
}

/// Cross sections at κ; σ_z and σ_0 by Gauss–Legendre in cos θ with `2ℓ_max + 16` nodes.
pub fn cross_sections(kappa: f64) -> Result<CrossSections, ScatteringError> {
    let t = PartialWaveTable::hard_sphere(kappa)?;
    let (x, w) = gauss_legendre(2 * t.l_max + 16);
    let n = t.l_max + 1;
    let (mut p, mut dp, mut d2p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut sz = 0.0;
    let mut s0 = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let d = t.derivs_with(xi.acos(), &mut p, &mut dp, &mut d2p);
        sz += wi * d.dz.norm_sqr();
        s0 += wi * (1.0 - xi) * d.f.norm_sqr();
    }
    Ok(CrossSections {
        sigma_tot: t.sigma_tot(),
        sigma_z: 2.0 * PI * sz,
        sigma_0: 2.0 * PI * s0,
    })
}

/// Exact sampler of the scattering angle from `dσ/dΩ`, valid for all κ in a band.
///
/// Cells uniform in θ carry a piecewise-constant envelope of `|f|²`; a cell is
/// picked from the envelope masses, cos θ is drawn uniformly inside it and the
/// proposal is accepted with probability `|f(κ,θ)|²/envelope`.
#[derive(Debug, Clone)]
pub struct AngularSampler {
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    /// Cell edges in θ (ascending, from 0 to π).
    edges: Vec<f64>,
    /// Envelope value per cell.
    envelope: Vec<f64>,
    /// Normalized cumulative envelope mass at each edge, mapping u ∈ [0,1] to a cell.
    cdf: Vec<f64>,
}

/// Raised when a proposal exceeds the fitted envelope.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("angular envelope violated at kappa {kappa}, theta {theta}: |f|^2 = {value} > {bound}")]
pub struct EnvelopeViolation {
    pub kappa: f64,
    pub theta: f64,
    pub value: f64,
    pub bound: f64,
}

impl AngularSampler {
    /// Sampler for a single κ with `n_grid ≥ 64` cells (refined for large κ).
    pub fn new(kappa: f64, n_grid: usize) -> Result<Self, ScatteringError> {
        Self::for_band(kappa, kappa, n_grid)
    }

    /// Sampler whose envelope dominates `|f|²` for every κ in `[kappa_lo, kappa_hi]`.
    pub fn for_band(kappa_lo: f64, kappa_hi: f64, n_grid: usize) -> Result<Self, ScatteringError> {
        let cells = n_grid.max(64).max((16.0 * kappa_hi).ceil() as usize);
        let edges: Vec<f64> = (0..=cells).map(|i| PI * i as f64 / cells as f64).collect();
        let probes: Vec<f64> = if kappa_hi > kappa_lo {
            (0..5).map(|i| kappa_lo + (kappa_hi - kappa_lo) * i as f64 / 4.0).collect()
        } else {
            vec![kappa_lo]
        };
        let tables = probes
            .iter()
            .map(|&k| PartialWaveTable::hard_sphere(k))
            .collect::<Result<Vec<_>, _>>()?;
        let sub = 6;
        let mut envelope = vec![0.0; cells];
        for (c, env) in envelope.iter_mut().enumerate() {
            let mut m: f64 = 0.0;
            for t in &tables {
                for s in 0..=sub {
                    let th = edges[c] + (edges[c + 1] - edges[c]) * s as f64 / sub as f64;
                    m = m.max(t.f(th).norm_sqr());
                }
            }
            *env = 1.25 * m + 1e-300;
        }
        let mut cdf = vec![0.0; cells + 1];
        for c in 0..cells {
            let mass = envelope[c] * (edges[c].cos() - edges[c + 1].cos());
            cdf[c + 1] = cdf[c] + mass;
        }
        let total = cdf[cells];
        for v in cdf.iter_mut() {
            *v /= total;
        }
        cdf[cells] = 1.0;
        Ok(Self {
            kappa_lo,
            kappa_hi,
            edges,
            envelope,
            cdf,
        })
    }

    /// Envelope CDF value at cos θ (piecewise linear in cos θ inside each cell).
    pub fn envelope_cdf(&self, cos_theta: f64) -> f64 {
        let th = cos_theta.clamp(-1.0, 1.0).acos();
        let cells = self.envelope.len();
        let c = ((th / PI * cells as f64) as usize).min(cells - 1);
        let frac = (self.edges[c].cos() - cos_theta) / (self.edges[c].cos() - self.edges[c + 1].cos());
        1.0 - (self.cdf[c] + frac * (self.cdf[c + 1] - self.cdf[c]))
    }

    /// Draws cos θ for scattering at `table.kappa`, which must lie in the band.
    pub fn sample<R: Rng + ?Sized>(&self, table: &PartialWaveTable, rng: &mut R) -> Result<f64, EnvelopeViolation> {
        loop {
            let u: f64 = rng.random();
            let c = self.cdf.partition_point(|&v| v <= u).clamp(1, self.envelope.len()) - 1;
            let (a, b) = (self.edges[c].cos(), self.edges[c + 1].cos());
            let v: f64 = rng.random();
            let x = b + (a - b) * v;
            let th = x.clamp(-1.0, 1.0).acos();
            let val = table.f(th).norm_sqr();
            let bound = self.envelope[c];
            if val > bound {
                return Err(EnvelopeViolation {
                    kappa: table.kappa,
                    theta: th,
                    value: val,
                    bound,
                });
            }
            let w: f64 = rng.random();
            if w * bound < val {
                return Ok(x);
            }
        }
    }
}

/// Normalized CDF of `dσ/dΩ` in cos θ at the given abscissas, by Gauss–Legendre quadrature.
pub fn angular_cdf(kappa: f64, cos_points: &[f64]) -> Result<Vec<f64>, ScatteringError> {
    let t = PartialWaveTable::hard_sphere(kappa)?;
    let total = 2.0 * PI * {
        let (x, w) = gauss_legendre(2 * t.l_max + 16);
        x.iter().zip(&w).map(|(xi, wi)| wi * t.f(xi.acos()).norm_sqr()).sum::<f64>()
    };
    let n = 2 * t.l_max + 16;
    let (gx, gw) = gauss_legendre(n);
    Ok(cos_points
        .iter()
        .map(|&c| {
            let c = c.clamp(-1.0, 1.0);
            let h = 0.5 * (c + 1.0);
            let part: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(xi, wi)| {
                    let x = -1.0 + h * (xi + 1.0);
                    h * wi * t.f(x.clamp(-1.0, 1.0).acos()).norm_sqr()
                })
                .sum();
            2.0 * PI * part / total
        })
        .collect())
}

/// The rough high-energy amplitude `−½(e^{−2iκ sin(θ/2)} + i·(1+cos θ)/sin θ · J_1(κ sin θ))`.
pub fn high_energy_amplitude(kappa: f64, theta: f64) -> Complex64 {
    let geo = (-2.0 * I * kappa * (0.5 * theta).sin()).exp();
    let diff = I * (1.0 + theta.cos()) / theta.sin() * crate::specfun::bessel_j1(kappa * theta.sin());
    -0.5 * (geo + diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn s0_closed_form() {
        let s = s_matrix(0, 2.0, Potential::HardSphere).unwrap();
        assert!((s - (-4.0 * I).exp()).norm() < 1e-13);
        assert!(s_matrix(0, 0.0, Potential::HardSphere).is_err());
    }

    #[test]
    fn unitarity() {
        for &k in &[1e-3, 0.3, 3.0, 17.0, 120.0] {
            let t = PartialWaveTable::hard_sphere(k).unwrap();
            for s in &t.s {
                assert!((s.norm() - 1.0).abs() < 1e-10);
            }
        }
        assert!((s_matrix(5, 3.0, Potential::HardSphere).unwrap().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn table_matches_s_matrix() {
        let t = PartialWaveTable::hard_sphere(4.2).unwrap();
        for l in 0..=t.l_max.min(12) {
            let s = s_matrix(l, 4.2, Potential::HardSphere).unwrap();
            assert!((s - t.s[l]).norm() < 1e-12);
        }
    }

    #[test]
    fn permeable_barrier_approaches_hard_sphere() {
        let k = 4.0;
        let mstar = 1.0 / 1.1;
        let dev = |vbar: f64| {
            (0..=10)
                .map(|l| {
                    let p = s_matrix(l, k, Potential::Permeable { vbar, reduced_mass: mstar }).unwrap();
                    let h = s_matrix(l, k, Potential::HardSphere).unwrap();
                    (p - h).norm()
                })
                .fold(0.0, f64::max)
        };
        let (d4, d6) = (dev(1e4), dev(1e6));
        // Penetration depth ∝ v̄^{−1/2}: a factor 100 in v̄ shrinks the deviation tenfold.
        assert!(d6 < 0.15 * d4 && d6 > 0.05 * d4, "{d4} {d6}");
        assert!(d4 < 1e-3, "deviation at vbar = 1e4 is {d4}");
    }

    #[test]
    fn permeable_weak_barrier_is_unitary() {
        for l in 0..6 {
            let s = s_matrix(l, 2.5, Potential::Permeable { vbar: 1.0, reduced_mass: 0.5 }).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn low_energy_limits() {
        let a = amplitude(1e-3, 1.0).unwrap();
        assert!((a.f.re + 1.0).abs() < 1e-2);
        assert!(a.f.im.abs() < 1e-2);
        let cs = cross_sections(1e-3).unwrap();
        assert!((cs.sigma_tot / (4.0 * PI) - 1.0).abs() < 1e-2);
        assert!((cs.sigma_0 / cs.sigma_tot - 1.0).abs() < 1e-2);
    }

    #[test]
    fn extinction_paradox() {
        let cs = cross_sections(100.0).unwrap();
        assert!((cs.sigma_tot / (2.0 * PI) - 1.0).abs() < 0.05);
    }

    fn worst_classical_deviation(kappa: f64) -> f64 {
        let t = PartialWaveTable::hard_sphere(kappa).unwrap();
        (0..=1000)
            .map(|i| 0.3 + (PI - 0.6) * i as f64 / 1000.0)
            .map(|th| (t.f(th).norm_sqr() / 0.25 - 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn nussenzveig_uniformity() {
        let worst = worst_classical_deviation(200.0);
        assert!(worst <= 0.1, "{worst}");
    }

    #[test]
    fn nussenzveig_deviation_decays() {
        // The diffraction side lobes near θ = 0.3 decay like 1/κ.
        let (a, b) = (worst_classical_deviation(200.0), worst_classical_deviation(400.0));
        assert!(b < 0.6 * a, "{a} {b}");
        let t = PartialWaveTable::hard_sphere(200.0).unwrap();
        assert!((t.f(1.2).norm_sqr() / 0.25 - 1.0).abs() < 0.1);
    }

    #[test]
    fn high_energy_rough_formula() {
        let f = amplitude(50.0, 0.8).unwrap().f.norm();
        let g = high_energy_amplitude(50.0, 0.8).norm();
        assert!((f / g - 1.0).abs() < 0.15, "{f} {g}");
    }

    #[test]
    fn optical_theorem() {
        for &k in &[0.01, 1.0, 10.0, 100.0] {
            let t = PartialWaveTable::hard_sphere(k).unwrap();
            let st = t.sigma_tot();
            let opt = 4.0 * PI / k * t.f(0.0).im;
            assert!(((st - opt) / st).abs() < 1e-8, "kappa {k}");
        }
    }

    #[test]
    fn forward_dz_is_kappa_derivative() {
        let k = 5.0;
        let h = 1e-5;
        let t = PartialWaveTable::hard_sphere(k).unwrap();
        let d = t.amplitude(0.0).dz;
        let fd = (amplitude(k + h, 0.0).unwrap().f - amplitude(k - h, 0.0).unwrap().f) / (2.0 * h);
        assert!((d - fd).norm() < 1e-7 * fd.norm().max(1.0));
    }

    fn f_zy(z: f64, y: f64) -> Complex64 {
        let k = z.hypot(y);
        PartialWaveTable::hard_sphere(k).unwrap().f(2.0 * y.atan2(z))
    }

    #[test]
    fn dz_matches_finite_difference_at_fixed_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k: f64 = 0.2 + 8.0 * rng.random::<f64>();
            let th: f64 = 0.2 + (PI - 0.4) * rng.random::<f64>();
            let (z, y) = (k * (0.5 * th).cos(), k * (0.5 * th).sin());
            let h = 1e-4;
            let d = PartialWaveTable::hard_sphere(k).unwrap().derivs(th);
            let fp = f_zy(z + h, y);
            let fm = f_zy(z - h, y);
            let f0 = f_zy(z, y);
            let fd = (fp - fm) / (2.0 * h);
            let fdd = (fp - 2.0 * f0 + fm) / (h * h);
            assert!((d.dz - fd).norm() <= 1e-4 * d.dz.norm().max(1e-3), "k {k} th {th}");
            assert!((d.dzz - fdd).norm() <= 1e-3 * d.dzz.norm().max(1e-2), "k {k} th {th}");
        }
    }

    #[test]
    fn small_kappa_derivatives_are_finite() {
        for &k in &[1e-6, 1e-4, 1e-2] {
            let d = PartialWaveTable::hard_sphere(k).unwrap().derivs(1.3);
            assert!(d.f.is_finite() && d.dz.is_finite() && d.dzz.is_finite());
            // f = −1 + iκ + O(κ²) in the s-wave limit, so ∂_z f → i cos(θ/2).
            assert!((d.dz - I * 0.65f64.cos()).norm() < 1e-2);
        }
    }

    #[test]
    fn forward_amplitude_linear_growth() {
        let ks: Vec<f64> = (0..40).map(|i| 1e-3 * (3e5f64).powf(i as f64 / 39.0)).collect();
        let c = ks
            .iter()
            .map(|&k| amplitude(k, 0.0).unwrap().f.norm() / (1.0 + k))
            .fold(0.0, f64::max);
        assert!(c < 1.0);
    }

    #[test]
    fn sigma_z_bounded_at_low_energy() {
        for &k in &[1e-3, 0.01, 0.1, 0.5, 1.0, 10.0, 300.0] {
            let cs = cross_sections(k).unwrap();
            assert!(cs.sigma_z.is_finite() && cs.sigma_0.is_finite());
            if k <= 1.0 {
                assert!(cs.sigma_z * k * k < 100.0);
            }
        }
    }

    #[test]
    fn truncation_orders() {
        assert!(truncation_order(1.0, 1e-10) <= 25);
        let l = truncation_order(100.0, 1e-8);
        assert!((200..=260).contains(&l), "{l}");
        assert_eq!(truncation_order(3.3, f64::INFINITY), 7);
    }

    #[test]
    fn sampler_low_energy_is_isotropic() {
        let s = AngularSampler::new(1e-3, 64).unwrap();
        let xs: Vec<f64> = (0..=100).map(|i| -1.0 + 0.02 * i as f64).collect();
        let cdf = angular_cdf(1e-3, &xs).unwrap();
        for (x, c) in xs.iter().zip(&cdf) {
            assert!((c - 0.5 * (x + 1.0)).abs() < 1e-2);
        }
        assert_eq!(s.envelope_cdf(-1.0), 0.0);
        assert_eq!(s.envelope_cdf(1.0), 1.0);
    }

    #[test]
    fn sampler_chi_square_at_kappa_30() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let k = 30.0;
        let t = PartialWaveTable::hard_sphere(k).unwrap();
        let s = AngularSampler::new(k, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Bins equally spaced in θ so the forward peak is resolved.
        let nb = 60;
        let edges: Vec<f64> = (0..=nb).map(|i| (PI * i as f64 / nb as f64).cos()).rev().collect();
        let cdf = angular_cdf(k, &edges).unwrap();
        let n = 1_000_000;
        let mut counts = vec![0usize; nb];
        for _ in 0..n {
            let x = s.sample(&t, &mut rng).unwrap();
            let b = edges.partition_point(|&e| e <= x).clamp(1, nb) - 1;
            counts[b] += 1;
        }
        let mut chi2 = 0.0;
        for b in 0..nb {
            let e = n as f64 * (cdf[b + 1] - cdf[b]);
            chi2 += (counts[b] as f64 - e).powi(2) / e;
        }
        let crit = ChiSquared::new((nb - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} crit {crit}");
    }
}
