//! Diffusion constant `D = D_kin + D_jps` and the comparison constants.
//!
//! `D_kin = ⅓∫₀^∞ E_ν[v(p_t)·v(p₀)] dt` is computed by Green–Kubo Monte Carlo
//! and by a radial resolvent solve in the vector (`ℓ = 1`) sector of the
//! momentum generator. `D_jps` comes from a one-dimensional cross-section
//! integral, checked against the nested jump-position integral.

use crate::collision_kernel::{angular_moments, CollisionKernel, CollisionRule, MomentumVector, Params, RadialTables};
use crate::markov_sim::{gap_from_vacf, vacf, JumpSampler};
use crate::scattering::cross_sections;
use crate::specfun::{gauss_rule, RuleKind};
use faer::prelude::*;
use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Errors from the diffusion computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("radial operator is singular or ill-conditioned (residual {0}); refine the grid")]
    SingularRadial(f64),
    #[error("eigenvalue computation failed")]
    Eigen,
    #[error("velocity autocorrelation has not decayed at the cutoff: C(T_c)/C(0) = {0}")]
    NonDecaying(f64),
    #[error("could not fit a decay rate to the velocity autocorrelation")]
    NoGap,
    #[error(transparent)]
    Simulation(#[from] crate::markov_sim::SimError),
    #[error(transparent)]
    Kernel(#[from] crate::collision_kernel::KernelError),
}

/// Half-Gaussian rule for `∫q^power e^{−q²} g(q) dq`.
fn gaussian_moment_rule(power: u32, n: usize) -> (Vec<f64>, Vec<f64>) {
    let r = gauss_rule(n, RuleKind::HalfGaussian { power, panels: 4, cutoff: 7.0 }).expect("nonempty rule");
    (r.nodes, r.weights)
}

/// `∫dp ν_∞(p) g(|p|)` with 48 half-Gaussian nodes.
fn stationary_average(params: &Params, g: impl Fn(f64) -> f64 + Sync) -> f64 {
    let (x, w) = gaussian_moment_rule(2, 12);
    let scale = (2.0 * params.mass() / params.beta).sqrt();
    let vals: Vec<f64> = x.par_iter().map(|&xi| g(scale * xi)).collect();
    4.0 / PI.sqrt() * vals.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>()
}

/// Closed-form jump diffusion constant
/// `D_jps = (4ηm*/3M²)(2m*/πβ)^{1/2}∫q³e^{−q²}[(β/4m*)(2q²+3λ)σ_tot(κ) + σ_z(κ)]dq`,
/// `κ = (2m*/β)^{1/2} q`.
pub fn d_jps(params: &Params) -> f64 {
    let ms = params.reduced_mass();
    let m_big = params.mass();
    let beta = params.beta;
    let scale = (2.0 * ms / beta).sqrt();
    let (x, w) = gaussian_moment_rule(3, 16);
    let sum: f64 = x
        .par_iter()
        .zip(&w)
        .map(|(&q, &wq)| {
            let cs = cross_sections(scale * q).expect("positive momentum");
            wq * (beta / (4.0 * ms) * (2.0 * q * q + 3.0 * params.lambda) * cs.sigma_tot + cs.sigma_z)
        })
        .sum();
    4.0 * params.eta * ms / (3.0 * m_big * m_big) * (2.0 * ms / (PI * beta)).sqrt() * sum
}

/// Large-mass form `λ²(4η/3)(2/πβ)^{1/2}∫q³e^{−q²}[(β/2)q²σ_tot(κ₀) + σ_z(κ₀)]dq`, `κ₀ = (2/β)^{1/2}q`.
pub fn d_jps_large_mass(params: &Params) -> f64 {
    let beta = params.beta;
    let scale = (2.0 / beta).sqrt();
    let (x, w) = gaussian_moment_rule(3, 16);
    let sum: f64 = x
        .iter()
        .zip(&w)
        .map(|(&q, &wq)| {
            let cs = cross_sections(scale * q).expect("positive momentum");
            wq * (0.5 * beta * q * q * cs.sigma_tot + cs.sigma_z)
        })
        .sum();
    params.lambda.powi(2) * 4.0 * params.eta / 3.0 * (2.0 / (PI * beta)).sqrt() * sum
}

/// `⅓∫dp ν_∞(p)∫dq (Δ̃T_q)(p, p)` by nested quadrature of the planar integrand; `full`
/// selects [`CollisionKernel::transfer_laplacian_full`], the integrand behind [`d_jps`].
pub fn d_jps_brute_force(kernel: &CollisionKernel, full: bool) -> Result<f64, DiffusionError> {
    let pr = kernel.params;
    let (x, w) = gaussian_moment_rule(2, 12);
    let scale = (2.0 * pr.mass() / pr.beta).sqrt();
    let vals = x
        .par_iter()
        .map(|&xi| {
            let r = scale * xi;
            let p = MomentumVector::new(0.0, 0.0, r);
            kernel.row_integral(r, |q| {
                if full {
                    kernel.transfer_laplacian_full(p, q)
                } else {
                    kernel.transfer_laplacian(p, q)
                }
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let avg = 4.0 / PI.sqrt() * vals.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>();
    Ok(avg / 3.0)
}

/// `−⅓Σ_j⟨1|G²_{jj}ν_∞⟩` for the second `k`-derivative `G²` of the fiber generator:
/// `−⅓[∫ν η∫ds r(s+λp)|s|(α²T₂ − (β/4M²)σ_tot) − ¼∫E Δν]`, with `T₂` the angular
/// trace of the second derivative of the amplitude product.
pub fn d_jps_operator(kernel: &CollisionKernel) -> f64 {
    let pr = kernel.params;
    let ms = pr.reduced_mass();
    let m_big = pr.mass();
    let alpha = 0.5 * ms * pr.lambda;
    let extra = kernel.quad.theta_extra;
    let c = pr.beta / (4.0 * m_big * m_big);
    let gain = stationary_average(&pr, |r| {
        kernel.escape_radial_with(r, &|k| {
            let am = angular_moments(k, extra);
            alpha * alpha * am.trace_second - c * am.sigma_tot
        })
    });
    let beta = pr.beta;
    let loss = stationary_average(&pr, |r| {
        kernel.escape_radial(r) * (beta * beta * r * r / (m_big * m_big) - 3.0 * beta / m_big)
    });
    -(gain - 0.25 * loss) / 3.0
}

/// Quantum diffusion coefficient `D_qdc = λ²(ηβ/6)(2/πβ)^{1/2}∫q⁵e^{−q²}σ₀((2/β)^{1/2}q)dq`.
pub fn d_qdc(params: &Params) -> f64 {
    let beta = params.beta;
    let scale = (2.0 / beta).sqrt();
    let (x, w) = gaussian_moment_rule(5, 16);
    let sum: f64 = x
        .iter()
        .zip(&w)
        .map(|(&q, &wq)| wq * cross_sections(scale * q).expect("positive momentum").sigma_0)
        .sum();
    params.lambda.powi(2) * params.eta * beta / 6.0 * (2.0 / (PI * beta)).sqrt() * sum
}

/// Radial grid for the vector-sector resolvent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialGridConfig {
    /// Grid points including `|p| = 0`.
    pub points: usize,
    /// Extent in thermal widths `√(M/β)`.
    pub widths: f64,
}

impl Default for RadialGridConfig {
    fn default() -> Self {
        Self { points: 200, widths: 8.0 }
    }
}

/// Backward momentum generator restricted to fields `χ(|p|) p̂`, as the matrix
/// of `χ ↦ E χ − ∫dq J(p+q, p) χ(|p+q|) p̂·(p+q)^` on grid nodes `r₁, …, r_{n−1}`
/// (`χ(0) = 0`).
#[derive(Debug, Clone)]
pub struct RadialOperator {
    pub r: Vec<f64>,
    /// Quadrature escape rate at each node.
    pub escape: Vec<f64>,
    matrix: Mat<f64>,
}

/// Cubic Lagrange weights at `x` on the uniform grid `i·h`, odd-extended through 0.
fn odd_stencil(x: f64, h: f64, n: usize) -> [(usize, f64); 4] {
    let t = x / h;
    let mut k = t.floor() as i64 - 1;
    k = k.min(n as i64 - 4);
    let mut out = [(0usize, 0.0); 4];
    for (a, slot) in out.iter_mut().enumerate() {
        let ia = k + a as i64;
        let mut w = 1.0;
        for b in 0..4 {
            if b != a {
                let ib = k + b as i64;
                w *= (t - ib as f64) / (ia - ib) as f64;
            }
        }
        // χ(−r) = −χ(r).
        *slot = if ia < 0 { ((-ia) as usize, -w) } else { (ia as usize, w) };
    }
    out
}

impl RadialOperator {
    pub fn build(kernel: &CollisionKernel, cfg: RadialGridConfig) -> Self {
        let n = cfg.points;
        let extent = cfg.widths * kernel.params.thermal_momentum();
        let h = extent / (n - 1) as f64;
        let r: Vec<f64> = (0..n).map(|i| h * i as f64).collect();
        let rows: Vec<(f64, Vec<f64>)> = (1..n)
            .into_par_iter()
            .map(|i| {
                let p = MomentumVector::new(0.0, 0.0, r[i]);
                let mut row = vec![0.0; n];
                let mut e = 0.0;
                kernel.visit_collisions(p, CollisionRule::GasAxial, &mut |c| {
                    let wgt = c.weight * c.amp.f.norm_sqr();
                    e += wgt;
                    let pn = p + c.q;
                    let rn = pn.norm();
                    if rn == 0.0 {
                        return;
                    }
                    let cosang = pn.z() / rn;
                    for (j, lw) in odd_stencil(rn, h, n) {
                        row[j] += wgt * cosang * lw;
                    }
                });
                (e, row)
            })
            .collect();
        let m = n - 1;
        let matrix = Mat::<f64>::from_fn(m, m, |a, b| {
            let (e, row) = &rows[a];
            (if a == b { *e } else { 0.0 }) - row[b + 1]
        });
        Self {
            escape: std::iter::once(kernel.escape_radial(0.0)).chain(rows.iter().map(|x| x.0)).collect(),
            r,
            matrix,
        }
    }

    /// Grid spacing.
    pub fn spacing(&self) -> f64 {
        self.r[1] - self.r[0]
    }

    /// Solves `(−L₀*)χ = φ` for `χ(|p|)p̂`; returns `χ` on all nodes (`χ(0) = 0`).
    pub fn solve(&self, phi: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        let m = self.matrix.nrows();
        let rhs = Mat::<f64>::from_fn(m, 1, |i, _| phi[i + 1]);
        let x = self.matrix.partial_piv_lu().solve(&rhs);
        let resid = &self.matrix * &x - &rhs;
        let rn = (0..m).map(|i| resid[(i, 0)].abs()).fold(0.0, f64::max);
        let scale = (0..m).map(|i| rhs[(i, 0)].abs()).fold(0.0, f64::max);
        if !(rn <= 1e-8 * scale.max(1e-300)) {
            return Err(DiffusionError::SingularRadial(rn / scale));
        }
        Ok(std::iter::once(0.0).chain((0..m).map(|i| x[(i, 0)])).collect())
    }

    /// Smallest relaxation rate of the vector sector.
    pub fn gap(&self) -> Result<f64, DiffusionError> {
        let ev = self.matrix.eigenvalues().map_err(|_| DiffusionError::Eigen)?;
        ev.iter().map(|z| z.re).min_by(f64::total_cmp).ok_or(DiffusionError::Eigen)
    }

    /// `(4π/3)∫r²ν_∞(r) a(r) b(r) dr` by the trapezoid rule on the grid.
    pub fn pairing(&self, params: &Params, a: &[f64], b: &[f64]) -> f64 {
        let h = self.spacing();
        let n = self.r.len();
        let s: f64 = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * self.r[i].powi(2) * params.stationary_radial(self.r[i]) * a[i] * b[i]
            })
            .sum();
        4.0 * PI / 3.0 * h * s
    }
}

/// Green–Kubo integral `⅓⟨φp̂, (−L₀*)⁻¹φp̂⟩_ν` for a radial profile `φ`.
pub fn green_kubo_grid(op: &RadialOperator, params: &Params, phi: impl Fn(f64) -> f64) -> Result<f64, DiffusionError> {
    let f: Vec<f64> = op.r.iter().map(|&r| phi(r)).collect();
    let chi = op.solve(&f)?;
    Ok(op.pairing(params, &f, &chi))
}

/// `D_kin` by the radial resolvent solve.
pub fn d_kin_grid(kernel: &CollisionKernel, tables: &RadialTables, cfg: RadialGridConfig) -> Result<f64, DiffusionError> {
    let op = RadialOperator::build(kernel, cfg);
    green_kubo_grid(&op, &kernel.params, |r| tables.velocity_radial(r))
}

/// Monte Carlo settings for the Green–Kubo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub seed: u64,
    pub n_traj: usize,
    /// Length of each trajectory.
    pub t_total: f64,
    /// Lag spacing of the autocorrelation grid.
    pub dt: f64,
    /// Event cap per trajectory.
    pub max_events: usize,
    /// Longest lag of the autocorrelation grid (it must exceed the cutoff `10/ĝ`).
    pub max_lag: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_traj: 64,
            t_total: 2.0e4,
            dt: 2.0,
            max_events: 10_000_000,
            max_lag: 3000.0,
        }
    }
}

/// Green–Kubo Monte Carlo result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KineticEstimate {
    pub value: f64,
    /// Statistical error with the truncated tail folded in.
    pub stderr: f64,
    /// Decay rate fitted to `C(t)`.
    pub gap: f64,
    /// Integration cutoff `10/ĝ`.
    pub cutoff: f64,
    /// Tail bound `|C(T_c)|/(3ĝ)`.
    pub tail: f64,
    pub collisions: usize,
}

/// `D_kin` from stationary trajectories: `⅓∫₀^{T_c} C(t)dt` with `T_c = 10/ĝ`.
pub fn d_kin_mc(sampler: &JumpSampler, cfg: McConfig) -> Result<KineticEstimate, DiffusionError> {
    let trs = sampler.run_stationary(cfg.seed, cfg.n_traj, cfg.t_total, cfg.max_events)?;
    let n_lags = ((0.5 * cfg.t_total).min(cfg.max_lag) / cfg.dt) as usize + 1;
    let est = vacf(sampler, &trs, cfg.dt, n_lags);
    let gap = gap_from_vacf(&est).ok_or(DiffusionError::NoGap)?;
    let cutoff = 10.0 / gap;
    let j = (cutoff / cfg.dt).round() as usize;
    if j >= n_lags {
        return Err(DiffusionError::NonDecaying(est.c[n_lags - 1] / est.c[0]));
    }
    let cj = est.c[j];
    if cj.abs() > 0.05 * est.c[0] + 3.0 * est.stderr[j] {
        return Err(DiffusionError::NonDecaying(cj / est.c[0]));
    }
    let (integral, se) = est.integral(cutoff);
    let tail = cj.abs() / gap / 3.0;
    Ok(KineticEstimate {
        value: integral / 3.0,
        stderr: (se / 3.0).hypot(tail),
        gap,
        cutoff,
        tail,
        collisions: trs.iter().map(|t| t.events()).sum(),
    })
}

/// All diffusion constants for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionReport {
    pub params: Params,
    /// Radial-resolvent `D_kin`.
    pub d_kin_grid: f64,
    /// Monte Carlo `D_kin`, when requested.
    pub d_kin_mc: Option<KineticEstimate>,
    pub d_jps: f64,
    /// `D_jps` from the second fiber derivative of the jump kernel.
    pub d_jps_operator: f64,
    pub d_qdc: f64,
    /// `d_kin_grid + d_jps`.
    pub d_total: f64,
    /// Green–Kubo constant with `v` replaced by `∇H`.
    pub d_classical: f64,
    /// Vector-sector relaxation rate on the radial grid.
    pub gap: f64,
    pub grid: RadialGridConfig,
    pub mc: Option<McConfig>,
}

/// Assembles the diffusion constants; the Monte Carlo estimate is included when `mc` is set.
pub fn report(kernel: &CollisionKernel, grid: RadialGridConfig, mc: Option<McConfig>) -> Result<DiffusionReport, DiffusionError> {
    let pr = kernel.params;
    let tables = RadialTables::default_for(kernel);
    let op = RadialOperator::build(kernel, grid);
    let d_kin_grid = green_kubo_grid(&op, &pr, |r| tables.velocity_radial(r))?;
    let d_classical = green_kubo_grid(&op, &pr, |r| tables.hamiltonian_slope(r))?;
    let gap = op.gap()?;
    let d_kin_mc = match mc {
        Some(cfg) => Some(d_kin_mc(&JumpSampler::new(kernel, tables.clone()), cfg)?),
        None => None,
    };
    let dj = d_jps(&pr);
    Ok(DiffusionReport {
        params: pr,
        d_kin_grid,
        d_kin_mc,
        d_jps: dj,
        d_jps_operator: d_jps_operator(kernel),
        d_qdc: d_qdc(&pr),
        d_total: d_kin_grid + dj,
        d_classical,
        gap,
        grid,
        mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, eta: f64) -> Params {
        Params::new(lambda, 1.0, eta).unwrap()
    }

    #[test]
    fn jump_constants_are_linear_in_density() {
        let (a, b) = (params(0.1, 0.01), params(0.1, 0.02));
        assert!((d_jps(&b) / d_jps(&a) - 2.0).abs() < 1e-12);
        assert!((d_qdc(&b) / d_qdc(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qdc_scales_with_mass_ratio_squared() {
        let (a, b) = (params(0.05, 0.01), params(0.1, 0.01));
        assert!((d_qdc(&b) / d_qdc(&a) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn large_mass_form_of_jump_constant() {
        let p = params(0.01, 0.01);
        let (full, lead) = (d_jps(&p), d_jps_large_mass(&p));
        assert!(((full - lead) / lead).abs() < 0.05, "{full} vs {lead}");
    }

    #[test]
    fn qdc_differs_from_leading_jump_constant() {
        let p = params(0.01, 0.01);
        let (q, lead) = (d_qdc(&p), d_jps_large_mass(&p));
        assert!(((q - lead) / lead).abs() > 0.1, "{q} vs {lead}");
    }

    #[test]
    fn constants_positive_by_default() {
        let p = Params::default();
        assert!(d_jps(&p) > 0.0);
        assert!(d_qdc(&p) > 0.0);
    }

    #[test]
    fn odd_stencil_reproduces_cubics() {
        let h = 0.3;
        let n = 12;
        let f = |x: f64| x * (1.0 + 0.5 * x * x);
        let vals: Vec<f64> = (0..n).map(|i| f(h * i as f64)).collect();
        for &x in &[0.05, 0.4, 1.23, 2.9, 3.25, 3.4] {
            let s: f64 = odd_stencil(x, h, n).iter().map(|&(j, w)| w * vals[j]).sum();
            assert!((s - f(x)).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn radial_solution_has_zero_mean() {
        let kernel = CollisionKernel::with_params(Params::default());
        let tables = RadialTables::default_for(&kernel);
        let op = RadialOperator::build(&kernel, RadialGridConfig { points: 80, widths: 8.0 });
        let phi: Vec<f64> = op.r.iter().map(|&r| tables.velocity_radial(r)).collect();
        let chi = op.solve(&phi).unwrap();
        // ∫dp ν χ(|p|) p̂ vanishes componentwise: the polar average of cos θ is zero.
        let (x, w) = crate::specfun::gauss_legendre(8);
        let mean: f64 = x.iter().zip(&w).map(|(c, wc)| c * wc).sum::<f64>() * op.pairing(&kernel.params, &chi, &vec![1.0; chi.len()]);
        assert!(mean.abs() < 1e-8);
        assert!(op.pairing(&kernel.params, &phi, &chi) > 0.0);
    }

    fn kinetic(lambda: f64, eta: f64, points: usize) -> f64 {
        let kernel = CollisionKernel::with_params(params(lambda, eta));
        let tables = RadialTables::default_for(&kernel);
        d_kin_grid(&kernel, &tables, RadialGridConfig { points, widths: 8.0 }).unwrap()
    }

    #[test]
    fn kinetic_constant_is_grid_converged() {
        let (a, b) = (kinetic(0.1, 0.01, 200), kinetic(0.1, 0.01, 400));
        assert!(((a - b) / b).abs() < 0.01, "{a} vs {b}");
        assert!((b - 9.628178).abs() < 0.05, "{b}");
    }

    #[test]
    fn kinetic_constant_is_inverse_in_density() {
        // The energy-shift part of the velocity is itself linear in η.
        let (a, b) = (kinetic(0.1, 0.01, 120), kinetic(0.1, 0.02, 120));
        assert!((a / b - 2.0).abs() < 0.01, "{a} vs {b}");
    }

    #[test]
    fn kinetic_constant_is_order_one_in_mass_ratio() {
        let ratio = kinetic(0.02, 0.01, 120) / kinetic(0.01, 0.01, 120);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn jump_share_shrinks_with_mass_ratio() {
        let share = |l: f64| d_jps(&params(l, 0.01)) / kinetic(l, 0.01, 120);
        let (small, large) = (share(0.01), share(0.05));
        assert!(small < large, "{small} vs {large}");
        assert!(large < 1e-3);
    }

    #[test]
    fn closed_form_matches_brute_force() {
        let kernel = CollisionKernel::with_params(Params::default());
        let brute = d_jps_brute_force(&kernel, true).unwrap();
        let closed = d_jps(&kernel.params);
        assert!(((brute - closed) / closed).abs() < 0.01, "{brute} vs {closed}");
        let op = d_jps_operator(&kernel);
        let parallel = d_jps_brute_force(&kernel, false).unwrap();
        assert!(((parallel - op) / op).abs() < 0.01, "{parallel} vs {op}");
    }
}
