//! Momentum-space kernels of the model.
//!
//! Reduced units ħ = a = m = 1, so `M = 1/λ`, `m* = 1/(1+λ)`. The gas density
//! is `r(k) = (β/2π)^{3/2} e^{−βk²/2}`.
//!
//! Two parametrizations of a collision from momentum `p` are used:
//! - planar: transfer `q` and `v ∈ q⊥`, with `w = m* v − (m*/M) p_⊥q`, incoming
//!   relative momentum `w + q/2`, outgoing `w − q/2`;
//! - relative: `s = b − λp` for a gas momentum `b`, `p_rel = m* s`, outgoing
//!   direction `θ̂`, transfer `q = p_rel − |p_rel| θ̂`.
//!
//! They are related by `∫dq |q|⁻¹∫_{q⊥}dv = m*⁻⁴ ∫dp_rel |p_rel| ∫_Ω`, so that
//! `∫dq J(p+q, p) G = η ∫ds r(s+λp) |s| ∫_Ω |f(m*|s|, θ)|² G`.

use crate::scattering::{PartialWaveTable, ScatteringError};
use crate::specfun::{gauss_legendre, gauss_rule, panel_rule, RuleKind};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use thiserror::Error;

/// Errors from kernel evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("momentum transfer |q| = {0} is below 1e-9; use the relative-momentum parametrization")]
    SmallTransfer(f64),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
}

/// Physical parameters in reduced units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Params {
    /// Mass ratio `λ = m/M`.
    pub lambda: f64,
    /// Inverse temperature.
    pub beta: f64,
    /// Gas number density in units of `a⁻³`.
    pub eta: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta: 1.0,
            eta: 0.01,
        }
    }
}

impl Params {
    /// Validated parameters.
    pub fn new(lambda: f64, beta: f64, eta: f64) -> Result<Self, KernelError> {
        for (name, value) in [("lambda", lambda), ("beta", beta), ("eta", eta)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(KernelError::InvalidParam { name, value });
            }
        }
        Ok(Self { lambda, beta, eta })
    }

    /// Test-particle mass `M = 1/λ`.
    pub fn mass(&self) -> f64 {
        1.0 / self.lambda
    }

    /// Reduced mass `m* = 1/(1+λ)`.
    pub fn reduced_mass(&self) -> f64 {
        1.0 / (1.0 + self.lambda)
    }

    /// Per-component standard deviation `√(M/β)` of the stationary momentum law.
    pub fn thermal_momentum(&self) -> f64 {
        (self.mass() / self.beta).sqrt()
    }

    /// Per-component standard deviation `β^{-1/2}` of the gas momentum law.
    pub fn gas_width(&self) -> f64 {
        self.beta.powf(-0.5)
    }

    /// Thermal speed `(Mβ)^{-1/2}` of the test particle.
    pub fn thermal_speed(&self) -> f64 {
        (self.mass() * self.beta).powf(-0.5)
    }

    /// Gas momentum density `r(k)`.
    pub fn gas_density(&self, k: MomentumVector) -> f64 {
        (self.beta / (2.0 * PI)).powf(1.5) * (-0.5 * self.beta * k.norm_sqr()).exp()
    }

    /// Normalized stationary density `ν_∞(p) = (2πM/β)^{−3/2} e^{−βp²/2M}`.
    pub fn stationary_density(&self, p: MomentumVector) -> f64 {
        self.stationary_radial(p.norm())
    }

    /// `ν_∞` as a function of `|p|`.
    pub fn stationary_radial(&self, r: f64) -> f64 {
        let m = self.mass();
        (2.0 * PI * m / self.beta).powf(-1.5) * (-0.5 * self.beta * r * r / m).exp()
    }

    /// Mean gas speed `E|b| = 2(2/πβ)^{1/2}`.
    pub fn mean_gas_speed(&self) -> f64 {
        2.0 * (2.0 / (PI * self.beta)).sqrt()
    }
}

/// Three-component momentum (or wavevector) in reduced units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentumVector(pub [f64; 3]);

impl MomentumVector {
    pub const ZERO: Self = Self([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        let (a, b) = (self.0, o.0);
        Self([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn unit(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| *self * (1.0 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// Two unit vectors completing `self` (assumed unit) to a right-handed frame.
    pub fn orthonormal_pair(&self) -> (Self, Self) {
        let a = if self.0[0].abs() < 0.6 {
            Self::new(1.0, 0.0, 0.0)
        } else {
            Self::new(0.0, 1.0, 0.0)
        };
        let e1 = (a - *self * a.dot(self)).unit().unwrap_or(Self::new(0.0, 0.0, 1.0));
        let e2 = self.cross(&e1);
        (e1, e2)
    }

    /// Applies a row-major 3×3 matrix.
    pub fn rotate(&self, r: &[[f64; 3]; 3]) -> Self {
        let v = self.0;
        Self(std::array::from_fn(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]))
    }
}

impl Add for MomentumVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl AddAssign for MomentumVector {
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl Sub for MomentumVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Neg for MomentumVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self(self.0.map(|c| -c))
    }
}

impl Mul<f64> for MomentumVector {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self(self.0.map(|c| c * s))
    }
}

/// Quadrature orders for the kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelQuadrature {
    /// Radial Gauss nodes for `|s|` integrals (four equal panels).
    pub radial: usize,
    /// Gauss nodes per panel in `|w|` for the planar rule (polar about `w = 0`).
    pub planar_radial: usize,
    /// Panels of the planar radial rule.
    pub planar_panels: usize,
    /// Trapezoid nodes in the planar azimuth.
    pub planar_angular: usize,
    /// Half-Gaussian radial nodes for gas momenta `b`.
    pub gas_radial: usize,
    /// Gauss–Legendre nodes for the polar angle of `b`.
    pub gas_angular: usize,
    /// Trapezoid nodes for the azimuth of the outgoing direction.
    pub phi: usize,
    /// Extra Gauss nodes in cos θ beyond `2ℓ_max`.
    pub theta_extra: usize,
    /// Radial Gauss nodes for row integrals over `|q|` (eight panels).
    pub transfer_radial: usize,
    /// Gauss–Legendre nodes for the polar angle of `q` in row integrals.
    pub transfer_angular: usize,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self {
            radial: 48,
            planar_radial: 8,
            planar_panels: 3,
            planar_angular: 24,
            gas_radial: 16,
            gas_angular: 16,
            phi: 16,
            theta_extra: 16,
            transfer_radial: 96,
            transfer_angular: 24,
        }
    }
}

/// Escape-rate bound constants `Ě, Ê, F̌, F̂` for the kernel's normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeBounds {
    pub e_lower: f64,
    pub e_upper: f64,
    pub f_lower: f64,
    pub f_upper: f64,
    pub sigma_inf: f64,
    pub sigma_sup: f64,
}

impl EscapeBounds {
    /// `Ě ∨ F̌|p|`.
    pub fn lower(&self, r: f64) -> f64 {
        self.e_lower.max(self.f_lower * r)
    }

    /// `Ê + F̂|p|`.
    pub fn upper(&self, r: f64) -> f64 {
        self.e_upper + self.f_upper * r
    }
}

/// The values entering the fiber generator at one `(k, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberParts {
    /// `h_k(p) = H(p − k/2) − H(p + k/2)`.
    pub h_k: f64,
    /// `E_k(p) = (E(p − k/2) + E(p + k/2))/2`.
    pub e_k: f64,
    /// `J_k(p + q, p)`.
    pub j_k: Complex64,
}

/// Hard-sphere table at κ, with κ bounded away from zero.
pub(crate) fn table(kappa: f64) -> PartialWaveTable {
    PartialWaveTable::hard_sphere(kappa.max(1e-12)).expect("positive scattering momentum")
}

/// Cos θ Gauss rule sized for the partial-wave order of `t`.
fn theta_rule(t: &PartialWaveTable, extra: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_legendre(2 * t.l_max + extra)
}

/// `∫_Ω` of several amplitude functionals at one κ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularMoments {
    pub kappa: f64,
    /// `σ_tot`.
    pub sigma_tot: f64,
    /// `Re f(κ, 0)`.
    pub forward_re: f64,
    /// `2π ∫ sin θ cos(θ/2) Im(∂_z f · f̄) dθ`.
    pub gamma: f64,
    /// `σ_z = ∫_Ω |∂_z f|²`.
    pub sigma_z: f64,
    /// `σ_0 = ∫_Ω (1 − cos θ)|f|²`.
    pub sigma_0: f64,
    /// `∫_Ω tr` of the second `k`-derivative of the amplitude product, per unit `α²`.
    pub trace_second: f64,
}

/// Angular moments of the amplitude at κ by Gauss–Legendre quadrature in cos θ.
pub fn angular_moments(kappa: f64, extra: usize) -> AngularMoments {
    let t = table(kappa);
    let (x, w) = theta_rule(&t, extra);
    let n = t.l_max + 1;
    let (mut p, mut dp, mut d2p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut gamma, mut sz, mut s0, mut tr) = (0.0, 0.0, 0.0, 0.0);
    for (&xi, &wi) in x.iter().zip(&w) {
        let th = xi.clamp(-1.0, 1.0).acos();
        let d = t.derivs_with(th, &mut p, &mut dp, &mut d2p);
        let z = kappa * (0.5 * th).cos();
        let fzf = d.dz * d.f.conj();
        gamma += wi * (0.5 * th).cos() * fzf.im;
        sz += wi * d.dz.norm_sqr();
        s0 += wi * (1.0 - xi) * d.f.norm_sqr();
        let mut term = 2.0 * (d.dzz * d.f.conj()).re - 2.0 * d.dz.norm_sqr();
        if z > 1e-12 {
            term += 2.0 * fzf.re / z;
        }
        tr += wi * term;
    }
    let f0 = t.f(0.0);
    AngularMoments {
        kappa,
        sigma_tot: t.sigma_tot(),
        forward_re: f0.re,
        gamma: 2.0 * PI * gamma,
        sigma_z: 2.0 * PI * sz,
        sigma_0: 2.0 * PI * s0,
        trace_second: 2.0 * PI * tr,
    }
}

/// `∫_{−1}^{1} e^{−a c}{1, c} dc` times `e^{−β(ρ²+P²)/2}`, with `a = βρP`, evaluated stably.
fn angular_gaussian(rho: f64, pp: f64, beta: f64) -> (f64, f64) {
    let a = beta * rho * pp;
    if a < 0.1 {
        let base = (-0.5 * beta * (rho * rho + pp * pp)).exp();
        let a2 = a * a;
        let k0 = 2.0 * (1.0 + a2 / 6.0 + a2 * a2 / 120.0 + a2 * a2 * a2 / 5040.0);
        let k1 = -a * (2.0 / 3.0 + a2 / 15.0 + a2 * a2 / 420.0 + a2 * a2 * a2 / 22680.0);
        (k0 * base, k1 * base)
    } else {
        let gm = (-0.5 * beta * (rho - pp).powi(2)).exp();
        let gp = (-0.5 * beta * (rho + pp).powi(2)).exp();
        ((gm - gp) / a, (gm - gp) / (a * a) - (gm + gp) / a)
    }
}

/// Kernel evaluator bundling parameters and quadrature rules.
#[derive(Debug, Clone)]
pub struct CollisionKernel {
    pub params: Params,
    pub quad: KernelQuadrature,
    planar_x: Vec<f64>,
    planar_w: Vec<f64>,
    planar_phi: Vec<(f64, f64)>,
}

impl CollisionKernel {
    pub fn new(params: Params, quad: KernelQuadrature) -> Self {
        let (planar_x, planar_w) = gauss_legendre(quad.planar_radial.max(1));
        let nphi = quad.planar_angular.max(1);
        let planar_phi = (0..nphi)
            .map(|j| {
                let t = 2.0 * PI * (j as f64 + 0.5) / nphi as f64;
                (t.cos(), t.sin())
            })
            .collect();
        Self {
            params,
            quad,
            planar_x,
            planar_w,
            planar_phi,
        }
    }

    /// Kernel with default quadrature orders.
    pub fn with_params(params: Params) -> Self {
        Self::new(params, KernelQuadrature::default())
    }

    /// Gauss nodes for `|s|` around `P = λ|p|`, covering eight gas widths.
    fn s_rule(&self, r: f64) -> (Vec<f64>, Vec<f64>) {
        let pp = self.params.lambda * r;
        let wdt = 8.0 * self.params.gas_width();
        let n = (self.quad.radial / 4).max(1);
        let rule = panel_rule((pp - wdt).max(0.0), pp + wdt, n, 4);
        (rule.nodes, rule.weights)
    }

    /// `∫ds r(s+λp) G(|s|)·{1, ŝ·p̂}` for a radial profile `G`.
    fn s_integral<F: FnMut(f64) -> (f64, f64)>(&self, r: f64, mut g: F) -> (f64, f64) {
        let beta = self.params.beta;
        let pp = self.params.lambda * r;
        let norm = 2.0 * PI * (beta / (2.0 * PI)).powf(1.5);
        let (nodes, weights) = self.s_rule(r);
        let (mut a0, mut a1) = (0.0, 0.0);
        for (&rho, &w) in nodes.iter().zip(&weights) {
            let (k0, k1) = angular_gaussian(rho, pp, beta);
            let (g0, g1) = g(rho);
            a0 += w * rho * rho * g0 * k0;
            a1 += w * rho * rho * g1 * k1;
        }
        (norm * a0, norm * a1)
    }

    /// Escape rate `E(p) = η∫ds r(s+λp)|s| σ_tot(m*|s|)`.
    pub fn escape_rate(&self, p: MomentumVector) -> f64 {
        self.escape_radial(p.norm())
    }

    /// Escape rate as a function of `|p|`.
    pub fn escape_radial(&self, r: f64) -> f64 {
        self.escape_radial_with(r, &|k| table(k).sigma_tot())
    }

    /// Escape rate with `σ_tot` replaced by `sigma(κ)`.
    pub fn escape_radial_with(&self, r: f64, sigma: &dyn Fn(f64) -> f64) -> f64 {
        let ms = self.params.reduced_mass();
        let (e, _) = self.s_integral(r, |rho| (rho * sigma(ms * rho), 0.0));
        self.params.eta * e
    }

    /// Energy shift `H_f(p) = −(2πη/m*)∫ds r(s+λp) Re f(m*|s|, 0)`.
    pub fn h_forward(&self, p: MomentumVector) -> f64 {
        self.h_forward_radial(p.norm()).0
    }

    /// `(H_f, ∂H_f/∂|p|)` as functions of `|p|`.
    pub fn h_forward_radial(&self, r: f64) -> (f64, f64) {
        let pr = self.params;
        let ms = pr.reduced_mass();
        let pp = pr.lambda * r;
        let pref = 2.0 * PI * pr.eta / ms;
        let beta = pr.beta;
        let norm = 2.0 * PI * (beta / (2.0 * PI)).powf(1.5);
        let (nodes, weights) = self.s_rule(r);
        let (mut h, mut dh) = (0.0, 0.0);
        for (&rho, &w) in nodes.iter().zip(&weights) {
            let (k0, k1) = angular_gaussian(rho, pp, beta);
            let g = table(ms * rho).f(0.0).re;
            h += w * rho * rho * g * k0;
            dh += w * rho * rho * g * (rho * k1 + pp * k0);
        }
        (-pref * norm * h, pref * beta * pr.lambda * norm * dh)
    }

    /// `∇H_f(p)` from the differentiated Gaussian weight.
    pub fn h_forward_gradient(&self, p: MomentumVector) -> MomentumVector {
        match p.unit() {
            Some(u) => u * self.h_forward_radial(p.norm()).1,
            None => MomentumVector::ZERO,
        }
    }

    /// `H(p) = p²/2M + H_f(p)`.
    pub fn hamiltonian(&self, p: MomentumVector) -> f64 {
        0.5 * p.norm_sqr() / self.params.mass() + self.h_forward(p)
    }

    /// Radial component of `u(p) = (ηm*/M)∫ds r(s+λp)|s| ŝ Γ(m*|s|)`.
    pub fn u_radial(&self, r: f64) -> f64 {
        let pr = self.params;
        let ms = pr.reduced_mass();
        let extra = self.quad.theta_extra;
        let (_, u) = self.s_integral(r, |rho| (0.0, rho * angular_moments(ms * rho, extra).gamma));
        pr.eta * ms / pr.mass() * u
    }

    /// `u(p)`, which is parallel to `p` by rotation covariance.
    pub fn velocity_u(&self, p: MomentumVector) -> MomentumVector {
        match p.unit() {
            Some(u) => u * self.u_radial(p.norm()),
            None => MomentumVector::ZERO,
        }
    }

    /// `u(p)` by the full vector quadrature over lab-frame relative momenta and outgoing directions.
    pub fn velocity_u_direct(&self, p: MomentumVector) -> MomentumVector {
        let pr = self.params;
        let ms = pr.reduced_mass();
        let mut acc = MomentumVector::ZERO;
        self.visit_collisions(p, CollisionRule::RelativeLab, &mut |c| {
            let val = ms / pr.mass() * (c.amp.dz * c.amp.f.conj()).im;
            acc += c.w_hat * (c.weight * val);
        });
        acc
    }

    /// Effective velocity `v(p) = p/M + ∇H_f(p) + u(p)`.
    pub fn velocity(&self, p: MomentumVector) -> MomentumVector {
        p * (1.0 / self.params.mass()) + self.h_forward_gradient(p) + self.velocity_u(p)
    }

    /// Radial profile `φ(|p|)` of `v(p) = φ(|p|) p̂`.
    pub fn velocity_radial(&self, r: f64) -> f64 {
        r / self.params.mass() + self.h_forward_radial(r).1 + self.u_radial(r)
    }

    /// Jump rate density `J(p+q, p)` by the planar integral over `v ∈ q⊥`.
    pub fn jump_rate(&self, p: MomentumVector, q: MomentumVector) -> Result<f64, KernelError> {
        self.jump_rate_with(p, q, &|kappa, theta| table(kappa).f(theta).norm_sqr())
    }

    /// `J(p+q, p)` with `dσ/dΩ` replaced by `dsigma(κ, θ)`.
    pub fn jump_rate_with(
        &self,
        p: MomentumVector,
        q: MomentumVector,
        dsigma: &dyn Fn(f64, f64) -> f64,
    ) -> Result<f64, KernelError> {
        let v = self.planar(p, q, MomentumVector::ZERO, |wm, _, qh| {
            let (kappa, theta) = relative_angles(wm, qh);
            Complex64::new(dsigma(kappa, theta), 0.0)
        })?;
        Ok(v.re)
    }

    /// Pseudo jump kernel `J_k(p+q, p)`.
    pub fn fiber_jump(&self, k: MomentumVector, p: MomentumVector, q: MomentumVector) -> Result<Complex64, KernelError> {
        self.planar(p, q, k, |wm, wp, qh| {
            let (k1, t1) = relative_angles(wm, qh);
            let fm = table(k1).f(t1);
            if wm == wp {
                return Complex64::new(fm.norm_sqr(), 0.0);
            }
            let (k2, t2) = relative_angles(wp, qh);
            fm * table(k2).f(t2).conj()
        })
    }

    /// `Im ∇_k J_k(p+q, p)` at `k = 0` (the gradient is purely imaginary).
    pub fn jump_rate_gradient(&self, p: MomentumVector, q: MomentumVector) -> Result<MomentumVector, KernelError> {
        let alpha = 0.5 * self.params.reduced_mass() * self.params.lambda;
        let mut out = MomentumVector::ZERO;
        for c in 0..3 {
            let e = MomentumVector(std::array::from_fn(|i| if i == c { 1.0 } else { 0.0 }));
            let val = self.planar(p, q, MomentumVector::ZERO, |wm, _, qh| {
                let z = wm.norm();
                let (kappa, theta) = relative_angles(wm, qh);
                if z < 1e-14 {
                    return Complex64::default();
                }
                let d = table(kappa).amplitude(theta);
                let what = wm * (1.0 / z);
                Complex64::new(2.0 * alpha * what.dot(&e) * (d.dz * d.f.conj()).im, 0.0)
            })?;
            out.0[c] = val.re;
        }
        Ok(out)
    }

    /// Jump-position Laplacian `(Δ̃T_q)(p, p) = ∫dv Σ_j|∂_j L_{q,v}(p)|²`:
    /// `η/(m*²|q|)∫dv r(X)((β²/4M²)X_∥²|f|² + (m*²/M²)|∂_z f|²)` with `X = v + q/2m* + λp_∥`.
    ///
    /// Only the component `X_∥` along `q` enters, since `r(X)` depends on `p` through `p_∥` alone.
    pub fn transfer_laplacian(&self, p: MomentumVector, q: MomentumVector) -> Result<f64, KernelError> {
        self.transfer_laplacian_with(p, q, false)
    }

    /// The same integrand with `X_∥²` replaced by the full `|X|²`, the form whose
    /// centre-of-mass reduction gives the closed-form jump diffusion constant.
    pub fn transfer_laplacian_full(&self, p: MomentumVector, q: MomentumVector) -> Result<f64, KernelError> {
        self.transfer_laplacian_with(p, q, true)
    }

    fn transfer_laplacian_with(&self, p: MomentumVector, q: MomentumVector, full: bool) -> Result<f64, KernelError> {
        let pr = self.params;
        let ms = pr.reduced_mass();
        let m_big = pr.mass();
        let qn = q.norm();
        let qh = if qn > 0.0 { q * (1.0 / qn) } else { q };
        let p_par = p.dot(&qh);
        let shift = (p - qh * p_par) * (ms * pr.lambda);
        let x_par = qn / (2.0 * ms) + pr.lambda * p_par;
        let c1 = pr.beta * pr.beta / (4.0 * m_big * m_big);
        let c2 = ms * ms / (m_big * m_big);
        let v = self.planar(p, q, MomentumVector::ZERO, |wm, _, half| {
            let (kappa, theta) = relative_angles(wm, half);
            let d = table(kappa).amplitude(theta);
            let mut x2 = x_par * x_par;
            if full {
                x2 += ((wm + shift) * (1.0 / ms)).norm_sqr();
            }
            Complex64::new(c1 * x2 * d.f.norm_sqr() + c2 * d.dz.norm_sqr(), 0.0)
        })?;
        Ok(v.re)
    }

    /// Shared planar integral `η/(m*²|q|) e^{−β(λk_∥)²/8} ∫dv r(·) g(w₋, w₊, |q|/2)`.
    fn planar<G: FnMut(MomentumVector, MomentumVector, f64) -> Complex64>(
        &self,
        p: MomentumVector,
        q: MomentumVector,
        k: MomentumVector,
        mut g: G,
    ) -> Result<Complex64, KernelError> {
        let qn = q.norm();
        if !(qn >= 1e-9) {
            return Err(KernelError::SmallTransfer(qn));
        }
        let pr = self.params;
        let ms = pr.reduced_mass();
        let lam = pr.lambda;
        let beta = pr.beta;
        let qh = q * (1.0 / qn);
        let (e1, e2) = qh.orthonormal_pair();
        let p_par = p.dot(&qh);
        let p_perp = p - qh * p_par;
        let k_par = k.dot(&qh);
        let k_perp = k - qh * k_par;
        let alpha = 0.5 * ms * lam;
        let x_par = qn / (2.0 * ms) + lam * p_par;
        let r_par = (beta / (2.0 * PI)).sqrt() * (-0.5 * beta * x_par * x_par).exp();
        let gauss_k = (-beta * (lam * k_par).powi(2) / 8.0).exp();
        // Polar coordinates about w = 0, where ŵ is singular.
        let shift = p_perp * (ms * lam);
        let sw = shift.norm();
        let width = 8.0 * ms / beta.sqrt();
        let (lo, hi) = ((sw - width).max(0.0), sw + width);
        let panels = self.quad.planar_panels.max(1);
        let h = (hi - lo) / panels as f64;
        let gauss_perp = beta / (2.0 * PI * ms * ms);
        let dk = k_perp * alpha;
        let dphi = 2.0 * PI / self.planar_phi.len() as f64;
        let mut sum = Complex64::default();
        for panel in 0..panels {
            let a = lo + h * panel as f64;
            for (&x, &wx) in self.planar_x.iter().zip(&self.planar_w) {
                let rho = a + 0.5 * h * (x + 1.0);
                let wr = 0.5 * h * wx * rho * dphi * gauss_perp;
                for &(c, s) in &self.planar_phi {
                    let w = e1 * (rho * c) + e2 * (rho * s);
                    let v = (w + shift) * (1.0 / ms);
                    let gw = wr * (-0.5 * beta * v.norm_sqr()).exp();
                    let (wm, wp) = if k == MomentumVector::ZERO { (w, w) } else { (w + dk, w - dk) };
                    sum += g(wm, wp, 0.5 * qn) * gw;
                }
            }
        }
        Ok(sum * (pr.eta / (ms * ms * qn) * r_par * gauss_k))
    }

    /// `h_k`, `E_k` and `J_k` at one `(k, p, q)`.
    pub fn fiber_parts(&self, k: MomentumVector, p: MomentumVector, q: MomentumVector) -> Result<FiberParts, KernelError> {
        let half = k * 0.5;
        Ok(FiberParts {
            h_k: self.hamiltonian(p - half) - self.hamiltonian(p + half),
            e_k: 0.5 * (self.escape_rate(p - half) + self.escape_rate(p + half)),
            j_k: self.fiber_jump(k, p, q)?,
        })
    }

    /// Walks the relative-momentum quadrature of `∫dq J(p+q, p)·(…)`.
    pub fn visit_collisions<F: FnMut(&CollisionNode)>(&self, p: MomentumVector, rule: CollisionRule, visit: &mut F) {
        let pr = self.params;
        let (cx, cw) = gauss_legendre(self.quad.gas_angular);
        match rule {
            CollisionRule::GasAxial => {
                let scale = (2.0 / pr.beta).sqrt();
                let brule = gauss_rule(
                    self.quad.gas_radial,
                    RuleKind::HalfGaussian {
                        power: 2,
                        panels: 2,
                        cutoff: 6.5,
                    },
                )
                .expect("nonempty rule");
                let ez = p.unit().unwrap_or(MomentumVector::new(0.0, 0.0, 1.0));
                let (ex, _) = ez.orthonormal_pair();
                // r(b)d³b = π^{-3/2} x² e^{-x²} dx dΩ with b = √(2/β) x.
                let bnorm = 2.0 * PI * PI.powf(-1.5);
                for (&x, &wx) in brule.nodes.iter().zip(&brule.weights) {
                    for (&c, &wc) in cx.iter().zip(&cw) {
                        let sn = (1.0 - c * c).max(0.0).sqrt();
                        let b = (ez * c + ex * sn) * (scale * x);
                        let s = b - p * pr.lambda;
                        self.visit_outgoing(s, pr.eta * bnorm * wx * wc, visit);
                    }
                }
            }
            CollisionRule::RelativeLab => {
                let (nodes, weights) = self.s_rule(p.norm());
                let naz = self.quad.gas_angular.max(2);
                let az_w = 2.0 * PI / naz as f64;
                for (&rho, &wr) in nodes.iter().zip(&weights) {
                    for (&c, &wc) in cx.iter().zip(&cw) {
                        let sn = (1.0 - c * c).max(0.0).sqrt();
                        for ia in 0..naz {
                            let az = az_w * (ia as f64 + 0.5);
                            let s = MomentumVector::new(sn * az.cos(), sn * az.sin(), c) * rho;
                            let g = pr.gas_density(s + p * pr.lambda);
                            self.visit_outgoing(s, pr.eta * g * rho * rho * wr * wc * az_w, visit);
                        }
                    }
                }
            }
        }
    }

    /// Outgoing directions about `ŝ` for one relative momentum, with weight `base·|s|`.
    fn visit_outgoing<F: FnMut(&CollisionNode)>(&self, s: MomentumVector, base: f64, visit: &mut F) {
        let ms = self.params.reduced_mass();
        let sn = s.norm();
        if sn < 1e-14 {
            return;
        }
        let shat = s * (1.0 / sn);
        let kappa = ms * sn;
        let t = table(kappa);
        let (tx, tw) = theta_rule(&t, self.quad.theta_extra);
        let (f1, f2) = shat.orthonormal_pair();
        let nl = t.l_max + 1;
        let (mut lp, mut ldp, mut ld2p) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; nl]);
        let nphi = self.quad.phi.max(1);
        let wphi = 2.0 * PI / nphi as f64;
        let prel = shat * kappa;
        for (&xt, &wt) in tx.iter().zip(&tw) {
            let th = xt.clamp(-1.0, 1.0).acos();
            let amp = t.derivs_with(th, &mut lp, &mut ldp, &mut ld2p);
            let st = (1.0 - xt * xt).max(0.0).sqrt();
            for j in 0..nphi {
                let ph = wphi * (j as f64 + 0.5);
                let that = shat * xt + f1 * (st * ph.cos()) + f2 * (st * ph.sin());
                let q = prel - that * kappa;
                let w = (prel + that * kappa) * 0.5;
                let wn = w.norm();
                let w_hat = if wn > 1e-300 { w * (1.0 / wn) } else { MomentumVector::ZERO };
                visit(&CollisionNode {
                    weight: base * sn * wt * wphi,
                    s,
                    kappa,
                    theta: th,
                    q,
                    w_hat,
                    z: wn,
                    amp,
                });
            }
        }
    }

    /// Lyapunov drift `(L₀* w)(p)` for `w(p) = 2 − 1/(|p|+1)`.
    pub fn lyapunov_drift(&self, p: MomentumVector) -> f64 {
        let weight = |x: MomentumVector| 2.0 - 1.0 / (x.norm() + 1.0);
        let w0 = weight(p);
        let mut acc = 0.0;
        self.visit_collisions(p, CollisionRule::GasAxial, &mut |c| {
            acc += c.weight * c.amp.f.norm_sqr() * (weight(p + c.q) - w0);
        });
        acc
    }

    /// Asymptotic drift `−(η/M)·π(m∧M)/(m∨M)` as `|p| → ∞` in the kernel's normalization.
    pub fn drift_plateau(&self) -> f64 {
        let m_big = self.params.mass();
        -self.params.eta / m_big * PI * m_big.min(1.0) / m_big.max(1.0)
    }

    /// Smallest radius beyond which the drift is negative, by bisection on `[lo, hi]`.
    pub fn drift_radius(&self, lo: f64, hi: f64) -> Option<f64> {
        let f = |r: f64| self.lyapunov_drift(MomentumVector::new(0.0, 0.0, r));
        let (mut a, mut b) = (lo, hi);
        if f(a) < 0.0 || f(b) >= 0.0 {
            return None;
        }
        for _ in 0..40 {
            let m = 0.5 * (a + b);
            if f(m) < 0.0 {
                b = m;
            } else {
                a = m;
            }
            if b - a < 1e-3 * b {
                break;
            }
        }
        Some(b)
    }

    /// Infimum and supremum of `σ_tot` over κ > 0 (analytic limits 2π and 4π included).
    pub fn sigma_range() -> (f64, f64) {
        let (mut lo, mut hi) = (2.0 * PI, 4.0 * PI);
        for i in 0..=400 {
            let kappa = 10f64.powf(-3.0 + 5.7 * i as f64 / 400.0);
            let s = table(kappa).sigma_tot();
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// Escape-rate bound constants: `Ě = η inf σ E|b|`, `F̌ = η inf σ λ`, likewise with `sup σ`.
    pub fn escape_bounds(&self) -> EscapeBounds {
        let (lo, hi) = Self::sigma_range();
        let pr = self.params;
        EscapeBounds {
            e_lower: lo * pr.eta * pr.mean_gas_speed(),
            e_upper: hi * pr.eta * pr.mean_gas_speed(),
            f_lower: lo * pr.eta * pr.lambda,
            f_upper: hi * pr.eta * pr.lambda,
            sigma_inf: lo,
            sigma_sup: hi,
        }
    }

    /// Linear bound `(c₁, c₂)` with `|H_f(p)| ≤ c₁ + c₂|p|`, from `|f(κ,0)| ≤ c(1+κ)`.
    pub fn h_forward_bound(&self) -> (f64, f64) {
        let c = forward_growth_constant();
        let pr = self.params;
        let ms = pr.reduced_mass();
        let pref = 2.0 * PI * c * pr.eta / ms;
        (pref * (1.0 + ms * pr.mean_gas_speed()), pref * ms * pr.lambda)
    }

    /// Radial and polar nodes for row integrals over `q` about `p`.
    fn transfer_rule(&self, r: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let pr = self.params;
        let wdt = 8.0 * pr.gas_width();
        let c1 = 0.5 * (1.0 - pr.lambda);
        let mut qmax = r + 8.0 * pr.thermal_momentum();
        if c1 > 0.0 {
            qmax = qmax.min((wdt + pr.lambda * r) / c1);
        }
        let n = (self.quad.transfer_radial / 8).max(1);
        let rq = panel_rule(0.0, qmax, n, 8);
        let (cx, cw) = gauss_legendre(self.quad.transfer_angular);
        (rq.nodes, rq.weights, cx, cw)
    }

    /// Row integral `∫dq g(q)` over transfers `q` with `p` on the polar axis, for
    /// integrands invariant under rotations about `p`.
    pub(crate) fn row_integral<G: FnMut(MomentumVector) -> Result<f64, KernelError>>(&self, r: f64, mut g: G) -> Result<f64, KernelError> {
        let (qn, qw, cx, cw) = self.transfer_rule(r);
        let mut sum = 0.0;
        for (&qm, &wq) in qn.iter().zip(&qw) {
            for (&c, &wc) in cx.iter().zip(&cw) {
                let sn = (1.0 - c * c).max(0.0).sqrt();
                let q = MomentumVector::new(qm * sn, 0.0, qm * c);
                sum += wq * wc * 2.0 * PI * qm * qm * g(q)?;
            }
        }
        Ok(sum)
    }

    /// `(gain, loss)` of `L₀ν_∞` at `p = |p| ẑ`: `∫dq J(p, p−q)ν_∞(p−q)` and `E(p)ν_∞(p)`.
    pub fn stationarity_terms(&self, r: f64) -> Result<(f64, f64), KernelError> {
        let p = MomentumVector::new(0.0, 0.0, r);
        let pr = self.params;
        let gain = self.row_integral(r, |q| {
            let p0 = p - q;
            Ok(self.jump_rate(p0, q)? * pr.stationary_density(p0))
        })?;
        Ok((gain, self.escape_radial(r) * pr.stationary_radial(r)))
    }

    /// `(row, column)` sides of the detailed-balance identity for the first `k`-derivative:
    /// `p̂·∫dq Im ∇_kJ_k(p, p−q)ν_∞(p−q)` and `ν_∞(p) u(p)·p̂`.
    pub fn w_identity_terms(&self, r: f64) -> Result<(f64, f64), KernelError> {
        let p = MomentumVector::new(0.0, 0.0, r);
        let pr = self.params;
        let row = self.row_integral(r, |q| {
            let p0 = p - q;
            Ok(self.jump_rate_gradient(p0, q)?.z() * pr.stationary_density(p0))
        })?;
        Ok((row, pr.stationary_radial(r) * self.u_radial(r)))
    }

    /// Detailed-balance kernel `A(p₁, p₂) = J(p₂, p₁) e^{β(p₂² − p₁²)/4M}`.
    pub fn detailed_balance_kernel(&self, p1: MomentumVector, p2: MomentumVector) -> Result<f64, KernelError> {
        let j = self.jump_rate(p1, p2 - p1)?;
        Ok(j * (self.params.beta * (p2.norm_sqr() - p1.norm_sqr()) / (4.0 * self.params.mass())).exp())
    }
}

/// Quadrature used by [`CollisionKernel::visit_collisions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionRule {
    /// Gaussian rule in the gas momentum `b` with its azimuth about `p` fixed
    /// (weighted by 2π); valid for integrands invariant under rotations about `p`.
    GasAxial,
    /// Spherical rule in `s` about the lab z axis with full azimuth.
    RelativeLab,
}

/// One node of the relative-momentum collision quadrature.
#[derive(Debug, Clone, Copy)]
pub struct CollisionNode {
    /// Quadrature weight including `η r(b)|s|`, excluding the cross section.
    pub weight: f64,
    pub s: MomentumVector,
    pub kappa: f64,
    pub theta: f64,
    /// Momentum transfer `q = p_rel − |p_rel| θ̂`.
    pub q: MomentumVector,
    /// Direction of `w = p_rel − q/2`.
    pub w_hat: MomentumVector,
    /// `|w| = κ cos(θ/2)`.
    pub z: f64,
    pub amp: crate::scattering::AmplitudeDerivs,
}

/// `(κ, θ)` of the collision with `w` and half-transfer `qh`.
fn relative_angles(w: MomentumVector, qh: f64) -> (f64, f64) {
    let z = w.norm();
    (z.hypot(qh), 2.0 * qh.atan2(z))
}

/// Fitted `c` with `|f(κ, 0)| ≤ c(1 + κ)` over κ ∈ [10⁻³, 300].
pub fn forward_growth_constant() -> f64 {
    (0..=300)
        .map(|i| {
            let kappa = 10f64.powf(-3.0 + 5.477 * i as f64 / 300.0);
            table(kappa).f(0.0).norm() / (1.0 + kappa)
        })
        .fold(0.0, f64::max)
}

/// Natural cubic spline with linear extrapolation outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// Spline through `(x_i, y_i)` with strictly increasing `x`.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "spline needs at least two matching knots");
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let rhs = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (rhs - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Self { x, y, m }
    }

    /// Knot abscissas.
    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    /// Knot values.
    pub fn values(&self) -> &[f64] {
        &self.y
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1
    }

    /// Value at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t < self.x[0] {
            return self.y[0] + self.derivative(self.x[0]) * (t - self.x[0]);
        }
        if t > self.x[n - 1] {
            return self.y[n - 1] + self.derivative(self.x[n - 1]) * (t - self.x[n - 1]);
        }
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative at `t` (clamped to the knot range).
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h / 6.0 * self.m[i] + (3.0 * b * b - 1.0) * h / 6.0 * self.m[i + 1]
    }

    /// Second derivative at `t` (clamped to the knot range).
    pub fn second_derivative(&self, t: f64) -> f64 {
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        a * self.m[i] + (1.0 - a) * self.m[i + 1]
    }
}

/// Radial tables of `E`, `H_f`, `∂H_f` and `u·p̂` with cubic interpolation.
#[derive(Debug, Clone)]
pub struct RadialTables {
    pub params: Params,
    pub extent: f64,
    pub escape: CubicSpline,
    pub h_f: CubicSpline,
    pub dh_f: CubicSpline,
    pub u: CubicSpline,
}

impl RadialTables {
    /// Tables on `n` uniform points of `[0, widths·√(M/β)]`.
    pub fn build(kernel: &CollisionKernel, n: usize, widths: f64) -> Self {
        use rayon::prelude::*;
        let extent = widths * kernel.params.thermal_momentum();
        let grid: Vec<f64> = (0..n).map(|i| extent * i as f64 / (n - 1) as f64).collect();
        let rows: Vec<(f64, f64, f64, f64)> = grid
            .par_iter()
            .map(|&r| {
                let (h, dh) = kernel.h_forward_radial(r);
                (kernel.escape_radial(r), h, dh, kernel.u_radial(r))
            })
            .collect();
        let col = |f: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        Self {
            params: kernel.params,
            extent,
            escape: CubicSpline::new(grid.clone(), col(|r| r.0)),
            h_f: CubicSpline::new(grid.clone(), col(|r| r.1)),
            dh_f: CubicSpline::new(grid.clone(), col(|r| r.2)),
            u: CubicSpline::new(grid, col(|r| r.3)),
        }
    }

    /// Tables with the default 200 points over 10 thermal widths.
    pub fn default_for(kernel: &CollisionKernel) -> Self {
        Self::build(kernel, 200, 10.0)
    }

    /// `φ(|p|)` with `v(p) = φ(|p|) p̂`.
    pub fn velocity_radial(&self, r: f64) -> f64 {
        r / self.params.mass() + self.dh_f.eval(r) + self.u.eval(r)
    }

    /// `∂_{|p|}H(p) = |p|/M + ∂H_f`.
    pub fn hamiltonian_slope(&self, r: f64) -> f64 {
        r / self.params.mass() + self.dh_f.eval(r)
    }

    /// `v(p)`.
    pub fn velocity(&self, p: MomentumVector) -> MomentumVector {
        match p.unit() {
            Some(u) => u * self.velocity_radial(p.norm()),
            None => MomentumVector::ZERO,
        }
    }

    /// `∇H(p)`.
    pub fn hamiltonian_gradient(&self, p: MomentumVector) -> MomentumVector {
        match p.unit() {
            Some(u) => u * self.hamiltonian_slope(p.norm()),
            None => MomentumVector::ZERO,
        }
    }

    /// `E(|p|)` by interpolation.
    pub fn escape_rate(&self, r: f64) -> f64 {
        self.escape.eval(r)
    }

    /// `H(|p|) = |p|²/2M + H_f`.
    pub fn hamiltonian(&self, r: f64) -> f64 {
        0.5 * r * r / self.params.mass() + self.h_f.eval(r)
    }
}
