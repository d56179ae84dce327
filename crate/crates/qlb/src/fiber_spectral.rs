//! Discretized fiber generator on an axisymmetric momentum grid.
//!
//! For `k ∥ e_z` the fiber generator commutes with rotations about `e_z`. States are
//! stored as ring masses on a cell-centred `(p_z, p_⊥)` grid. The azimuthal sector
//! `m = 0` carries the fiber state itself; the sector `m = 1` (functions `g(p_z, p_⊥) cos φ`)
//! carries the transverse first derivatives needed for the `xx` second moment.
//!
//! Collision destinations are deposited on the grid with tent weights, which conserves
//! mass exactly. The generator is assembled to second order in `k`,
//! `G(k) = G₀ + i k A_z + ½k² G²_zz`, from the explicit first and second derivative
//! operators of `h_k`, `E_k` and `J_k` at `k = 0`.

use crate::collision_kernel::{CollisionKernel, CollisionRule, MomentumVector, Params, RadialTables};
use faer::linalg::solvers::{PartialPivLu, SolveCore};
use faer::{c64, Conj, Mat, MatRef};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf;
use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

/// Errors from the fiber computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("grid too coarse: conservation residual {0:e} at k = 0 exceeds 1e-4")]
    Coarse(f64),
    #[error("inverse iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("time stepping needs {0} steps, above the cap")]
    StepCap(usize),
    #[error("wavevector {k} is outside the perturbative ball |k| <= {limit}")]
    OutsideBall { k: f64, limit: f64 },
    #[error("invalid time list: times must be positive and increasing")]
    InvalidTimes,
}

/// Grid shape: `nz` cells in `p_z ∈ [−R, R]`, `nr` cells in `p_⊥ ∈ [0, R]`, `R = widths·√(M/β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberGridConfig {
    pub nz: usize,
    pub nr: usize,
    pub widths: f64,
}

impl Default for FiberGridConfig {
    fn default() -> Self {
        Self { nz: 96, nr: 48, widths: 6.0 }
    }
}

/// Cell-centred cylindrical grid in momentum space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberGrid {
    pub params: Params,
    pub nz: usize,
    pub nr: usize,
    /// Cell side.
    pub h: f64,
    /// Truncation radius `R`.
    pub extent: f64,
}

/// Standard normal distribution function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

impl FiberGrid {
    pub fn new(params: Params, cfg: FiberGridConfig) -> Self {
        let extent = cfg.widths * params.thermal_momentum();
        Self {
            params,
            nz: cfg.nz,
            nr: cfg.nr,
            h: extent / cfg.nr as f64,
            extent,
        }
        .checked(cfg)
    }

    fn checked(self, cfg: FiberGridConfig) -> Self {
        assert!(cfg.nz == 2 * cfg.nr, "the grid needs nz = 2 nr for square cells");
        self
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.nz * self.nr
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of cell `(iz, ir)`.
    pub fn index(&self, iz: usize, ir: usize) -> usize {
        ir * self.nz + iz
    }

    /// `(p_z, p_⊥)` at the centre of cell `a`.
    pub fn center(&self, a: usize) -> (f64, f64) {
        let (iz, ir) = (a % self.nz, a / self.nz);
        (-self.extent + self.h * (iz as f64 + 0.5), self.h * (ir as f64 + 0.5))
    }

    /// Volume of the ring swept by cell `a` about the `p_z` axis.
    pub fn volume(&self, a: usize) -> f64 {
        let ir = (a / self.nz) as f64;
        PI * self.h.powi(3) * ((ir + 1.0).powi(2) - ir * ir)
    }

    /// Volume of the truncation cylinder `2R·πR²`.
    pub fn cylinder_volume(&self) -> f64 {
        2.0 * PI * self.extent.powi(3)
    }

    fn tent(&self, u: f64, n: usize) -> [(usize, f64); 2] {
        let t = u - 0.5;
        if t <= 0.0 {
            return [(0, 1.0), (0, 0.0)];
        }
        let i = t.floor() as usize;
        if i + 1 >= n {
            return [(n - 1, 1.0), (n - 1, 0.0)];
        }
        let f = t - i as f64;
        [(i, 1.0 - f), (i + 1, f)]
    }

    /// Tent weights of the point `(p_z, p_⊥)` on the four nearest cells, clamped at the boundary.
    pub fn deposit(&self, pz: f64, pp: f64) -> [(usize, f64); 4] {
        let tz = self.tent((pz + self.extent) / self.h, self.nz);
        let tr = self.tent(pp / self.h, self.nr);
        let mut out = [(0, 0.0); 4];
        for (i, &(iz, wz)) in tz.iter().enumerate() {
            for (j, &(ir, wr)) in tr.iter().enumerate() {
                out[2 * i + j] = (self.index(iz, ir), wz * wr);
            }
        }
        out
    }

    /// Cell masses of the isotropic Gaussian with per-component variance `var`, normalized on the grid.
    pub fn gaussian_masses(&self, var: f64) -> Vec<f64> {
        let s = var.sqrt();
        let mut m: Vec<f64> = (0..self.len())
            .map(|a| {
                let (z, r) = self.center(a);
                let (zl, zh) = (z - 0.5 * self.h, z + 0.5 * self.h);
                let (rl, rh) = (r - 0.5 * self.h, r + 0.5 * self.h);
                let fz = normal_cdf(zh / s) - normal_cdf(zl / s);
                let fr = (-0.5 * rl * rl / var).exp() - (-0.5 * rh * rh / var).exp();
                fz * fr
            })
            .collect();
        let total: f64 = m.iter().sum();
        m.iter_mut().for_each(|x| *x /= total);
        m
    }

    /// `ν_∞` as cell masses.
    pub fn stationary_masses(&self) -> Vec<f64> {
        self.gaussian_masses(self.params.mass() / self.params.beta)
    }

    /// `[ρ]₀` for a Gaussian wavepacket of position width `sigma_x` (momentum variance `1/4σ_x²`).
    pub fn wavepacket_masses(&self, sigma_x: f64) -> Vec<f64> {
        self.gaussian_masses(0.25 / (sigma_x * sigma_x))
    }
}

/// Collision nodes of one source aggregated by `(q_∥, |q_⊥|)` relative to `p`.
#[derive(Debug, Clone, Copy, Default)]
struct TransferBin {
    w: f64,
    wq_par: f64,
    wq_perp: f64,
    v_par: f64,
    v_perp: f64,
    t_pp: f64,
    t_qq: f64,
    t_nn: f64,
    t_pq: f64,
}

/// Column `b` of the seven operator blocks.
struct Columns<'a> {
    g0: &'a mut [f64],
    g1: &'a mut [f64],
    az: &'a mut [f64],
    ax01: &'a mut [f64],
    ax10: &'a mut [f64],
    g2zz: &'a mut [f64],
    g2xx: &'a mut [f64],
}

/// Azimuth nodes used to spread each transfer bin about `p`.
const N_PSI: usize = 16;

/// Discretized fiber generator and its derivative blocks at `k = 0`.
///
/// All blocks act on cell masses. `m0` maps the axisymmetric sector to itself,
/// `m1` the `cos φ` sector to itself; `x01` maps `m = 0 → 1` and `x10` maps `m = 1 → 0`.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub grid: FiberGrid,
    /// `G₀` on `m = 0`.
    pub g0: Mat<f64>,
    /// `G₀` on `m = 1`.
    pub g0_m1: Mat<f64>,
    /// `A_z = −i∂_{k_z}G` on `m = 0`.
    pub a_z: Mat<f64>,
    /// `A_x` from `m = 0` to `m = 1`.
    pub a_x01: Mat<f64>,
    /// `A_x` from `m = 1` to `m = 0`.
    pub a_x10: Mat<f64>,
    /// `∂²_{k_z}G` on `m = 0`.
    pub g2_zz: Mat<f64>,
    /// `m = 0` part of `∂²_{k_x}G` on `m = 0`.
    pub g2_xx: Mat<f64>,
    /// Quadrature escape rate of each cell centre.
    pub escape: Vec<f64>,
    /// `max_b |Σ_a G₀[a,b]| / E_b`.
    pub residual: f64,
}

/// One leading-eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenEstimate {
    pub k: f64,
    pub re: f64,
    pub im: f64,
    pub iterations: usize,
}

/// `t⁻¹M₂` at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSample {
    pub t: f64,
    /// `M₂,zz / t`.
    pub zz: f64,
    /// `M₂,xx / t`.
    pub xx: f64,
    /// Off-diagonal entry in the frame rotated by 45° about `e_y`, `(M₂,zz − M₂,xx)/2t`.
    pub off_diagonal: f64,
    /// `⟨1|y_t⟩`.
    pub trace: f64,
    /// Smallest cell mass of `y_t`.
    pub min_mass: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let r = m * MatRef::from_column_major_slice(x, x.len(), 1);
    r.col_as_slice(0).to_vec()
}

fn cmatvec(m: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    let r = m * MatRef::from_column_major_slice(x, x.len(), 1);
    r.col_as_slice(0).to_vec()
}

fn lu_solve<T: faer::traits::ComplexField>(lu: &PartialPivLu<T>, rhs: &mut [T]) {
    let n = rhs.len();
    lu.solve_in_place_with_conj(Conj::No, faer::MatMut::from_column_major_slice_mut(rhs, n, 1));
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Second-order L-stable SDIRK coefficient `γ = 1 − 1/√2`.
const SDIRK_GAMMA: f64 = 1.0 - FRAC_1_SQRT_2;

/// Splits `[0, t_max]` into segments ending at each requested time, with steps at most `dt`.
fn segments(times: &[f64], dt: f64) -> Result<Vec<(usize, f64)>, FiberError> {
    if !(dt > 0.0) || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FiberError::InvalidTimes);
    }
    let mut prev = 0.0;
    let mut out = Vec::new();
    let mut total = 0;
    for &t in times {
        let n = ((t - prev) / dt - 1e-9).ceil().max(1.0) as usize;
        total += n;
        out.push((n, (t - prev) / n as f64));
        prev = t;
    }
    if total > 1_000_000 {
        return Err(FiberError::StepCap(total));
    }
    Ok(out)
}

impl FiberOperator {
    /// Builds all blocks. Errors when the conservation residual exceeds `1e−4`.
    pub fn build(kernel: &CollisionKernel, tables: &RadialTables, grid: FiberGrid) -> Result<Self, FiberError> {
        let n = grid.len();
        let mut bufs: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n * n]).collect();
        let escape: Vec<f64> = {
            let [b0, b1, b2, b3, b4, b5, b6] = &mut bufs[..] else { unreachable!() };
            (
                b0.par_chunks_mut(n),
                b1.par_chunks_mut(n),
                b2.par_chunks_mut(n),
                b3.par_chunks_mut(n),
                b4.par_chunks_mut(n),
                b5.par_chunks_mut(n),
                b6.par_chunks_mut(n),
            )
                .into_par_iter()
                .enumerate()
                .map(|(b, (g0, g1, az, ax01, ax10, g2zz, g2xx))| {
                    let mut cols = Columns { g0, g1, az, ax01, ax10, g2zz, g2xx };
                    Self::fill_column(kernel, tables, &grid, b, &mut cols)
                })
                .collect()
        };
        let mut it = bufs.into_iter().map(|v| Mat::<f64>::from_fn(n, n, |i, j| v[j * n + i]));
        let mut next = || it.next().expect("seven blocks");
        let (g0, g0_m1, a_z, a_x01, a_x10, g2_zz, g2_xx) = (next(), next(), next(), next(), next(), next(), next());
        let residual = (0..n)
            .map(|b| (0..n).map(|a| g0[(a, b)]).sum::<f64>().abs() / escape[b])
            .fold(0.0, f64::max);
        if !(residual <= 1e-4) {
            return Err(FiberError::Coarse(residual));
        }
        Ok(Self { grid, g0, g0_m1, a_z, a_x01, a_x10, g2_zz, g2_xx, escape, residual })
    }

    /// Fills column `b` of every block and returns the quadrature escape rate at its centre.
    fn fill_column(kernel: &CollisionKernel, tables: &RadialTables, grid: &FiberGrid, b: usize, cols: &mut Columns) -> f64 {
        let pr = kernel.params;
        let alpha = 0.5 * pr.reduced_mass() * pr.lambda;
        let gauss2 = pr.beta / (4.0 * pr.mass() * pr.mass());
        let (zb, rhob) = grid.center(b);
        let rb = zb.hypot(rhob);
        let bw = grid.h / 8.0;
        let mut bins: HashMap<(i64, i64), TransferBin> = HashMap::new();
        let mut escape = 0.0;
        // Source along e_z; the bins are invariant under rotations about it.
        kernel.visit_collisions(MomentumVector::new(0.0, 0.0, rb), CollisionRule::GasAxial, &mut |c| {
            let f = c.amp.f;
            let w = c.weight * f.norm_sqr();
            escape += w;
            let q = c.q;
            let qp = q.x().hypot(q.y());
            let (ex, ey) = if qp > 1e-12 { (q.x() / qp, q.y() / qp) } else { (1.0, 0.0) };
            let e_p = MomentumVector::new(0.0, 0.0, 1.0);
            let e_q = MomentumVector::new(ex, ey, 0.0);
            let e_n = MomentumVector::new(-ey, ex, 0.0);
            let qn = q.norm();
            let qhat = if qn > 0.0 { q * (1.0 / qn) } else { e_p };
            let wh = c.w_hat;
            let (amp_a, amp_b) = if c.z > 1e-12 {
                (
                    c.weight * alpha * alpha * (2.0 * (c.amp.dzz * f.conj()).re - 2.0 * c.amp.dz.norm_sqr()),
                    c.weight * alpha * alpha * 2.0 * (c.amp.dz * f.conj()).re / c.z,
                )
            } else {
                (0.0, 0.0)
            };
            let tensor = |a: &MomentumVector, bb: &MomentumVector| {
                let (wa, wb) = (wh.dot(a), wh.dot(bb));
                let (qa, qb) = (qhat.dot(a), qhat.dot(bb));
                amp_a * wa * wb + amp_b * (a.dot(bb) - qa * qb - wa * wb) - w * gauss2 * qa * qb
            };
            let vmag = c.weight * 2.0 * alpha * (c.amp.dz * f.conj()).im;
            let key = ((q.z() / bw).floor() as i64, (qp / bw).floor() as i64);
            let bin = bins.entry(key).or_default();
            bin.w += w;
            bin.wq_par += w * q.z();
            bin.wq_perp += w * qp;
            bin.v_par += vmag * wh.dot(&e_p);
            bin.v_perp += vmag * wh.dot(&e_q);
            bin.t_pp += tensor(&e_p, &e_p);
            bin.t_qq += tensor(&e_q, &e_q);
            bin.t_nn += tensor(&e_n, &e_n);
            bin.t_pq += tensor(&e_p, &e_q);
        });
        let (st, ct) = (rhob / rb, zb / rb);
        let scale = 1.0 / N_PSI as f64;
        let trig: Vec<(f64, f64)> = (0..N_PSI)
            .map(|j| {
                let psi = 2.0 * PI * (j as f64 + 0.5) / N_PSI as f64;
                (psi.cos(), psi.sin())
            })
            .collect();
        for (&(iz, ip), bin) in &bins {
            let (qz, qp) = if bin.w > 0.0 {
                (bin.wq_par / bin.w, bin.wq_perp / bin.w)
            } else {
                ((iz as f64 + 0.5) * bw, (ip as f64 + 0.5) * bw)
            };
            for &(cp, sp) in &trig {
                let e_p = [st, 0.0, ct];
                let e_q = [ct * cp, sp, -st * cp];
                let e_n = [-ct * sp, cp, st * sp];
                let d = [rhob + qz * e_p[0] + qp * e_q[0], qp * e_q[1], zb + qz * e_p[2] + qp * e_q[2]];
                let rho_d = d[0].hypot(d[1]);
                let (cd, sd) = if rho_d > 0.0 { (d[0] / rho_d, d[1] / rho_d) } else { (1.0, 0.0) };
                let v: [f64; 3] = std::array::from_fn(|i| bin.v_par * e_p[i] + bin.v_perp * e_q[i]);
                let t = |i: usize| {
                    bin.t_pp * e_p[i] * e_p[i]
                        + bin.t_qq * e_q[i] * e_q[i]
                        + bin.t_nn * e_n[i] * e_n[i]
                        + 2.0 * bin.t_pq * e_p[i] * e_q[i]
                };
                let vals = [
                    bin.w,
                    bin.w * cd,
                    v[2],
                    v[0] * cd + v[1] * sd,
                    0.5 * v[0],
                    t(2),
                    0.5 * (t(0) + t(1)),
                ];
                for (a, tw) in grid.deposit(d[2], rho_d) {
                    if tw == 0.0 {
                        continue;
                    }
                    let s = scale * tw;
                    cols.g0[a] += s * vals[0];
                    cols.g1[a] += s * vals[1];
                    cols.az[a] += s * vals[2];
                    cols.ax01[a] += s * vals[3];
                    cols.ax10[a] += s * vals[4];
                    cols.g2zz[a] += s * vals[5];
                    cols.g2xx[a] += s * vals[6];
                }
            }
        }
        // Multiplication parts: −E, ∇H and −¼∇²E.
        let slope = tables.hamiltonian_slope(rb);
        let (e1, e2) = (tables.escape.derivative(rb), tables.escape.second_derivative(rb));
        let (cz, cr) = (zb / rb, rhob / rb);
        cols.g0[b] -= escape;
        cols.g1[b] -= escape;
        cols.az[b] += slope * cz;
        cols.ax01[b] += slope * cr;
        cols.ax10[b] += 0.5 * slope * cr;
        cols.g2zz[b] -= 0.25 * (e2 * cz * cz + e1 * (1.0 - cz * cz) / rb);
        cols.g2xx[b] -= 0.25 * (0.5 * e2 * cr * cr + e1 * (1.0 - 0.5 * cr * cr) / rb);
        escape
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `G(k) = G₀ + i k A_z + ½k² G²_zz` for `k ∥ e_z`.
    pub fn generator(&self, k: f64) -> Mat<c64> {
        Mat::from_fn(self.len(), self.len(), |i, j| {
            c64::new(self.g0[(i, j)] + 0.5 * k * k * self.g2_zz[(i, j)], k * self.a_z[(i, j)])
        })
    }

    /// Positive shift keeping `G₀ − σ` regular, small against every relaxation rate.
    fn shift(&self) -> f64 {
        1e-4 * self.escape.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Null vector of `G₀` normalized to unit mass, by inverse iteration from `ν_∞`.
    pub fn stationary_vector(&self) -> Result<Vec<f64>, FiberError> {
        let n = self.len();
        let sigma = self.shift();
        let lu = Mat::<f64>::from_fn(n, n, |i, j| self.g0[(i, j)] - if i == j { sigma } else { 0.0 }).partial_piv_lu();
        let mut x = self.grid.stationary_masses();
        for it in 0..50 {
            lu_solve(&lu, &mut x);
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            let r = matvec(&self.g0, &x);
            let rn = r.iter().map(|v| v.abs()).sum::<f64>();
            if rn <= 1e-12 * self.escape.iter().cloned().fold(0.0, f64::max) {
                return Ok(x);
            }
            if it == 49 {
                break;
            }
        }
        Err(FiberError::NoConvergence(50))
    }

    /// Slowest nonzero relaxation rate of `G₀` on `m = 0` (positive), by inverse
    /// iteration on the complement of the stationary mode.
    pub fn spectral_gap(&self) -> Result<f64, FiberError> {
        let n = self.len();
        let nu = self.stationary_vector()?;
        let sigma = self.shift();
        let lu = Mat::<f64>::from_fn(n, n, |i, j| self.g0[(i, j)] - if i == j { sigma } else { 0.0 }).partial_piv_lu();
        let project = |x: &mut Vec<f64>| {
            let s: f64 = x.iter().sum();
            axpy(-s, &nu, x);
        };
        // Odd in p_z, so the start overlaps the slow vector mode.
        let mut x: Vec<f64> = (0..n).map(|a| self.grid.center(a).0 * nu[a]).collect();
        project(&mut x);
        let mut prev = f64::NAN;
        for _ in 0..500 {
            let norm = dot(&x, &x).sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            let mut y = x.clone();
            lu_solve(&lu, &mut y);
            project(&mut y);
            let mu = dot(&x, &y);
            let lam = sigma + 1.0 / mu;
            x = y;
            if (lam - prev).abs() <= 1e-10 * lam.abs() {
                return Ok(-lam);
            }
            prev = lam;
        }
        Err(FiberError::NoConvergence(500))
    }

    /// Leading eigenvalue `ε(k)` by shifted inverse iteration about `+shift`.
    pub fn leading_eigenvalue(&self, k: f64) -> Result<EigenEstimate, FiberError> {
        let n = self.len();
        let sigma = self.shift();
        let mut m = self.generator(k);
        for i in 0..n {
            m[(i, i)] -= c64::new(sigma, 0.0);
        }
        let lu = m.partial_piv_lu();
        drop(m);
        let mut x: Vec<c64> = self.grid.stationary_masses().into_iter().map(|v| c64::new(v, 0.0)).collect();
        let mut prev = c64::new(f64::NAN, 0.0);
        for it in 1..=200 {
            let s: c64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            let mut y = x.clone();
            lu_solve(&lu, &mut y);
            let mu: c64 = y.iter().sum();
            let lam = c64::new(sigma, 0.0) + mu.inv();
            x = y;
            if (lam - prev).norm() <= 1e-12 * self.shift().max(lam.norm()) {
                return Ok(EigenEstimate { k, re: lam.re, im: lam.im, iterations: it });
            }
            prev = lam;
        }
        Err(FiberError::NoConvergence(200))
    }

    /// `ε(k)` for each `k`.
    pub fn eigen_scan(&self, ks: &[f64]) -> Result<Vec<EigenEstimate>, FiberError> {
        ks.iter().map(|&k| self.leading_eigenvalue(k)).collect()
    }

    /// `⟨1|A_z ν⟩`, the first-order coefficient along `e_z` (the transverse ones vanish by symmetry).
    pub fn first_order_coefficient(&self, nu: &[f64]) -> f64 {
        matvec(&self.a_z, nu).iter().sum()
    }

    /// `−⅓Σ_j⟨1|G²_jj ν⟩`.
    pub fn second_order_contraction(&self, nu: &[f64]) -> f64 {
        let zz: f64 = matvec(&self.g2_zz, nu).iter().sum();
        let xx: f64 = matvec(&self.g2_xx, nu).iter().sum();
        -(zz + 2.0 * xx) / 3.0
    }

    /// `φ_t(s) = ⟨1|e^{tG(k)}[ρ]_k⟩` with `k = |s|/√t` along `e_z`, for each `t`.
    ///
    /// `limit` bounds `|k|`; `dt` is the SDIRK step.
    pub fn char_function(&self, s: f64, times: &[f64], sigma_x: f64, dt: f64, limit: f64) -> Result<Vec<c64>, FiberError> {
        segments(times, dt)?;
        let base = self.grid.wavepacket_masses(sigma_x);
        times
            .iter()
            .map(|&t| {
                let k = s / t.sqrt();
                if k.abs() > limit {
                    return Err(FiberError::OutsideBall { k, limit });
                }
                let seg = segments(&[t], dt)?;
                let (steps, h) = seg[0];
                let g = self.generator(k);
                let n = self.len();
                let lu = Mat::<c64>::from_fn(n, n, |i, j| {
                    (if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) }) - g[(i, j)] * (SDIRK_GAMMA * h)
                })
                .partial_piv_lu();
                let damp = (-0.5 * k * k * sigma_x * sigma_x).exp();
                let mut y: Vec<c64> = base.iter().map(|&v| c64::new(v * damp, 0.0)).collect();
                for _ in 0..steps {
                    let mut k1 = cmatvec(&g, &y);
                    lu_solve(&lu, &mut k1);
                    let v: Vec<c64> = y.iter().zip(&k1).map(|(a, b)| a + b * ((1.0 - SDIRK_GAMMA) * h)).collect();
                    let mut k2 = cmatvec(&g, &v);
                    lu_solve(&lu, &mut k2);
                    for i in 0..n {
                        y[i] += (k1[i] * (1.0 - SDIRK_GAMMA) + k2[i] * SDIRK_GAMMA) * h;
                    }
                }
                Ok(y.iter().sum())
            })
            .collect()
    }

    /// `t⁻¹M₂(t)` from the second-order sensitivity system at `k = 0`, for a Gaussian
    /// wavepacket of width `sigma_x` (so `M₂(0) = σ_x²`).
    pub fn second_moments(&self, times: &[f64], sigma_x: f64, dt: f64) -> Result<Vec<MomentSample>, FiberError> {
        let segs = segments(times, dt)?;
        let n = self.len();
        let mut y = self.grid.wavepacket_masses(sigma_x);
        let mut zz_z = vec![0.0; n];
        let mut zx = vec![0.0; n];
        let mut wzz: Vec<f64> = y.iter().map(|v| -sigma_x * sigma_x * v).collect();
        let mut wxx = wzz.clone();
        let mut lus: HashMap<u64, (PartialPivLu<f64>, PartialPivLu<f64>)> = HashMap::new();
        let mut out = Vec::new();
        let mut t = 0.0;
        for (&target, &(steps, h)) in times.iter().zip(&segs) {
            let key = (h * 1e9).round() as u64;
            let (l0, l1) = lus.entry(key).or_insert_with(|| {
                let f = |g: &Mat<f64>| {
                    Mat::<f64>::from_fn(n, n, |i, j| (if i == j { 1.0 } else { 0.0 }) - SDIRK_GAMMA * h * g[(i, j)]).partial_piv_lu()
                };
                (f(&self.g0), f(&self.g0_m1))
            });
            for _ in 0..steps {
                let gh = SDIRK_GAMMA * h;
                // Stage solve of (I − γh𝔾)κ = 𝔾v, block by block.
                let stage = |v: [&[f64]; 5]| -> [Vec<f64>; 5] {
                    let mut ky = matvec(&self.g0, v[0]);
                    lu_solve(l0, &mut ky);
                    let mut kz = matvec(&self.g0, v[1]);
                    let az_vy: Vec<f64> = matvec(&self.a_z, v[0]);
                    let az_ky = matvec(&self.a_z, &ky);
                    axpy(1.0, &az_vy, &mut kz);
                    axpy(gh, &az_ky, &mut kz);
                    lu_solve(l0, &mut kz);
                    let mut kx = matvec(&self.g0_m1, v[2]);
                    axpy(1.0, &matvec(&self.a_x01, v[0]), &mut kx);
                    axpy(gh, &matvec(&self.a_x01, &ky), &mut kx);
                    lu_solve(l1, &mut kx);
                    let mut kwz = matvec(&self.g0, v[3]);
                    axpy(-2.0, &matvec(&self.a_z, v[1]), &mut kwz);
                    axpy(1.0, &matvec(&self.g2_zz, v[0]), &mut kwz);
                    axpy(-2.0 * gh, &matvec(&self.a_z, &kz), &mut kwz);
                    axpy(gh, &matvec(&self.g2_zz, &ky), &mut kwz);
                    lu_solve(l0, &mut kwz);
                    let mut kwx = matvec(&self.g0, v[4]);
                    axpy(-2.0, &matvec(&self.a_x10, v[2]), &mut kwx);
                    axpy(1.0, &matvec(&self.g2_xx, v[0]), &mut kwx);
                    axpy(-2.0 * gh, &matvec(&self.a_x10, &kx), &mut kwx);
                    axpy(gh, &matvec(&self.g2_xx, &ky), &mut kwx);
                    lu_solve(l0, &mut kwx);
                    [ky, kz, kx, kwz, kwx]
                };
                let s = [&y[..], &zz_z[..], &zx[..], &wzz[..], &wxx[..]];
                let k1 = stage(s);
                let c = (1.0 - SDIRK_GAMMA) * h;
                let v: Vec<Vec<f64>> = (0..5)
                    .map(|i| {
                        let mut v = s[i].to_vec();
                        axpy(c, &k1[i], &mut v);
                        v
                    })
                    .collect();
                let k2 = stage([&v[0], &v[1], &v[2], &v[3], &v[4]]);
                for (i, st) in [&mut y, &mut zz_z, &mut zx, &mut wzz, &mut wxx].into_iter().enumerate() {
                    axpy(c, &k1[i], st);
                    axpy(gh, &k2[i], st);
                }
            }
            t = target.max(t);
            let mzz = -wzz.iter().sum::<f64>();
            let mxx = -wxx.iter().sum::<f64>();
            out.push(MomentSample {
                t,
                zz: mzz / t,
                xx: mxx / t,
                off_diagonal: 0.5 * (mzz - mxx) / t,
                trace: y.iter().sum(),
                min_mass: y.iter().cloned().fold(f64::INFINITY, f64::min),
            });
        }
        Ok(out)
    }
}

/// `D` from `−2ε(k)/k²` by a least-squares fit `a + c k²`, returning `a`.
pub fn extrapolate_diffusion(estimates: &[EigenEstimate]) -> f64 {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.k != 0.0)
        .map(|e| (e.k * e.k, -2.0 * e.re / (e.k * e.k)))
        .collect();
    let m = pts.len() as f64;
    if pts.len() == 1 {
        return pts[0].1;
    }
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let c = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    (sy - c * sx) / m
}

/// Thermal wavevector unit `ĝ·√(Mβ)`: the inverse distance covered at thermal speed in one relaxation time.
pub fn thermal_wavevector(params: &Params, gap: f64) -> f64 {
    gap * (params.mass() * params.beta).sqrt()
}
