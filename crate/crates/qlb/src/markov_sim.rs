//! Exact-event Monte Carlo of the momentum jump process.
//!
//! Waiting times and post-jump momenta are drawn by thinning: gas momenta `b`
//! are proposed from `r(b)(|b| + λ|p|)` at the constant rate
//! `η σ_env (E|b| + λ|p|)` and accepted with probability
//! `|s| σ_tot(m*|s|) / (σ_env (|b| + λ|p|))`, `s = b − λp`. The outgoing
//! direction is drawn about `ŝ` from `|f(m*|s|, θ)|²` by [`AngularSampler`].

use crate::collision_kernel::{CollisionKernel, CubicSpline, MomentumVector, Params, RadialTables};
use crate::scattering::{AngularSampler, EnvelopeViolation, PartialWaveTable, ScatteringError};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, UnitSphere};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::OnceLock;
use thiserror::Error;

/// Errors raised while sampling events.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Envelope(#[from] EnvelopeViolation),
    #[error("thinning weight {ratio} exceeds 1 at kappa {kappa}; the cross-section envelope is stale")]
    ProposalEnvelope { kappa: f64, ratio: f64 },
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error("simulation length must be positive and finite, got {0}")]
    InvalidDuration(f64),
}

/// One sampled collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    /// Waiting time before the collision.
    pub wait: f64,
    /// Momentum after the collision.
    pub momentum: MomentumVector,
    /// Incoming relative momentum `m* s`.
    pub p_rel_in: MomentumVector,
    /// Outgoing relative momentum `|p_rel| θ̂`.
    pub p_rel_out: MomentumVector,
    /// Number of thinning proposals used.
    pub proposals: u32,
}

/// Event record of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Event times, starting with `t₀ = 0`.
    pub times: Vec<f64>,
    /// Momentum after each event (`momenta[0]` is the initial momentum).
    pub momenta: Vec<MomentumVector>,
    pub seed: u64,
    pub stream: u64,
    pub params: Params,
    /// Requested duration.
    pub t_total: f64,
    /// Set when the event cap stopped the run before `t_total`.
    pub truncated: bool,
}

impl Trajectory {
    /// Number of collisions.
    pub fn events(&self) -> usize {
        self.times.len() - 1
    }

    /// End of the simulated interval.
    pub fn end_time(&self) -> f64 {
        if self.truncated {
            *self.times.last().expect("nonempty")
        } else {
            self.t_total
        }
    }

    /// Momentum at time `t` (right-continuous).
    pub fn momentum_at(&self, t: f64) -> MomentumVector {
        let i = self.times.partition_point(|&x| x <= t);
        self.momenta[i.max(1) - 1]
    }

    /// Trajectory with every momentum rotated by `r`.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Self {
        Self {
            momenta: self.momenta.iter().map(|p| p.rotate(r)).collect(),
            ..self.clone()
        }
    }

    /// Writes the raw event log.
    ///
    /// Layout, all little-endian: magic `b"QLBEVT01"`; `λ, β, η, t_total` as f64;
    /// `seed, stream, event count + 1` as u64; a 32-byte table checksum; then one
    /// record `(t, p_x, p_y, p_z)` of four f64 per entry, the first being `t = 0`.
    pub fn write_log<W: Write>(&self, mut w: W, checksum: &[u8; 32]) -> io::Result<()> {
        w.write_all(b"QLBEVT01")?;
        for x in [self.params.lambda, self.params.beta, self.params.eta, self.t_total] {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in [self.seed, self.stream, self.times.len() as u64] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(checksum)?;
        for (t, p) in self.times.iter().zip(&self.momenta) {
            for x in [*t, p.0[0], p.0[1], p.0[2]] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// RNG for trajectory `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Event sampler for one parameter set.
#[derive(Debug)]
pub struct JumpSampler {
    pub params: Params,
    pub tables: RadialTables,
    sigma: CubicSpline,
    kappa_max: f64,
    sigma_env: f64,
    bin_width: f64,
    bins: Vec<OnceLock<AngularSampler>>,
}

impl JumpSampler {
    /// Angular band width in κ.
    const BIN: f64 = 0.05;
    /// Upper end of the tabulated κ range.
    const KAPPA_MAX: f64 = 40.0;

    /// Sampler for `kernel.params`, using `tables` for the velocity field.
    pub fn new(kernel: &CollisionKernel, tables: RadialTables) -> Self {
        let n = (Self::KAPPA_MAX / 0.01).round() as usize;
        let kappa: Vec<f64> = (0..=n).map(|i| Self::KAPPA_MAX * i as f64 / n as f64).collect();
        let sig: Vec<f64> = kappa
            .par_iter()
            .map(|&k| if k == 0.0 { 4.0 * PI } else { crate::collision_kernel::table(k).sigma_tot() })
            .collect();
        let sigma_env = 1.2 * sig.iter().cloned().fold(0.0, f64::max);
        let nbins = (Self::KAPPA_MAX / Self::BIN).ceil() as usize;
        Self {
            params: kernel.params,
            tables,
            sigma: CubicSpline::new(kappa, sig),
            kappa_max: Self::KAPPA_MAX,
            sigma_env,
            bin_width: Self::BIN,
            bins: (0..nbins).map(|_| OnceLock::new()).collect(),
        }
    }

    /// Sampler with default kernel quadrature and radial tables.
    pub fn for_params(params: Params) -> Self {
        let kernel = CollisionKernel::with_params(params);
        let tables = RadialTables::default_for(&kernel);
        Self::new(&kernel, tables)
    }

    /// Cross-section envelope `σ_env`.
    pub fn sigma_envelope(&self) -> f64 {
        self.sigma_env
    }

    /// `σ_tot(κ)`, interpolated below the table limit.
    pub fn sigma_tot(&self, kappa: f64) -> f64 {
        if kappa <= self.kappa_max {
            self.sigma.eval(kappa)
        } else {
            crate::collision_kernel::table(kappa).sigma_tot()
        }
    }

    /// Effective velocity `v(p)` from the radial tables.
    pub fn velocity(&self, p: MomentumVector) -> MomentumVector {
        self.tables.velocity(p)
    }

    /// Draw from `ν_∞`: independent Gaussian components of variance `M/β`.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> MomentumVector {
        let sd = self.params.thermal_momentum();
        MomentumVector(std::array::from_fn(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng)))
    }

    /// Waiting time and post-collision momentum from `p`.
    pub fn sample_jump<R: Rng + ?Sized>(&self, p: MomentumVector, rng: &mut R) -> Result<Jump, SimError> {
        let pr = self.params;
        let ms = pr.reduced_mass();
        let pl = pr.lambda * p.norm();
        let eb = pr.mean_gas_speed();
        let rate = pr.eta * self.sigma_env * (eb + pl);
        let gas_sd = pr.gas_width();
        let mut wait = 0.0;
        let mut proposals = 0u32;
        let s = loop {
            let e: f64 = Exp1.sample(rng);
            wait += e / rate;
            proposals += 1;
            let b = if rng.random::<f64>() * (eb + pl) < eb {
                // |b| with density ∝ ρ³e^{−βρ²/2}: βρ²/2 ~ Gamma(2, 1).
                let g = Distribution::<f64>::sample(&Exp1, rng) + Distribution::<f64>::sample(&Exp1, rng);
                let dir: [f64; 3] = UnitSphere.sample(rng);
                MomentumVector(dir) * (2.0 * g).sqrt() * gas_sd
            } else {
                MomentumVector(std::array::from_fn(|_| gas_sd * Distribution::<f64>::sample(&StandardNormal, rng)))
            };
            let s = b - p * pr.lambda;
            let sn = s.norm();
            let ratio = sn * self.sigma_tot(ms * sn) / (self.sigma_env * (b.norm() + pl));
            if ratio > 1.0 {
                return Err(SimError::ProposalEnvelope { kappa: ms * sn, ratio });
            }
            if rng.random::<f64>() < ratio {
                break s;
            }
        };
        let sn = s.norm();
        let kappa = (ms * sn).max(1e-12);
        let shat = s.unit().unwrap_or(MomentumVector::new(0.0, 0.0, 1.0));
        let cos_t = self.sample_cos_theta(kappa, rng)?;
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = 2.0 * PI * rng.random::<f64>();
        let (f1, f2) = shat.orthonormal_pair();
        let that = shat * cos_t + f1 * (sin_t * phi.cos()) + f2 * (sin_t * phi.sin());
        let p_rel_in = s * ms;
        let p_rel_out = that * (ms * sn);
        Ok(Jump {
            wait,
            momentum: p + p_rel_in - p_rel_out,
            p_rel_in,
            p_rel_out,
            proposals,
        })
    }

    fn sample_cos_theta<R: Rng + ?Sized>(&self, kappa: f64, rng: &mut R) -> Result<f64, SimError> {
        let table = PartialWaveTable::hard_sphere(kappa)?;
        let i = (kappa / self.bin_width) as usize;
        if let Some(slot) = self.bins.get(i) {
            let band = slot.get_or_init(|| {
                let lo = i as f64 * self.bin_width;
                AngularSampler::for_band(lo.max(1e-12), lo + self.bin_width, 64).expect("valid band")
            });
            if let Ok(c) = band.sample(&table, rng) {
                return Ok(c);
            }
        }
        Ok(AngularSampler::new(kappa, 64)?.sample(&table, rng)?)
    }

    /// Event-driven run from `p0` over `[0, t_total]`, stopping early after `max_events`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        p0: MomentumVector,
        t_total: f64,
        max_events: usize,
        rng: &mut R,
    ) -> Result<Trajectory, SimError> {
        if !(t_total > 0.0 && t_total.is_finite()) {
            return Err(SimError::InvalidDuration(t_total));
        }
        let mut times = vec![0.0];
        let mut momenta = vec![p0];
        let (mut t, mut p) = (0.0, p0);
        let mut truncated = false;
        loop {
            if times.len() > max_events {
                truncated = true;
                break;
            }
            let j = self.sample_jump(p, rng)?;
            t += j.wait;
            if t > t_total {
                break;
            }
            p = j.momentum;
            times.push(t);
            momenta.push(p);
        }
        Ok(Trajectory {
            times,
            momenta,
            seed: 0,
            stream: 0,
            params: self.params,
            t_total,
            truncated,
        })
    }

    /// `n_traj` independent stationary-start trajectories; trajectory `i` uses stream `i`.
    pub fn run_stationary(&self, seed: u64, n_traj: usize, t_total: f64, max_events: usize) -> Result<Vec<Trajectory>, SimError> {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i);
                let p0 = self.sample_stationary(&mut rng);
                let mut tr = self.simulate(p0, t_total, max_events, &mut rng)?;
                tr.seed = seed;
                tr.stream = i;
                Ok(tr)
            })
            .collect()
    }
}

/// Velocity autocorrelation estimate on a uniform lag grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VacfEstimate {
    pub lags: Vec<f64>,
    /// Ensemble mean of the per-trajectory time averages.
    pub c: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Number of trajectories.
    pub samples: usize,
    /// Per-trajectory time-averaged curves.
    pub curves: Vec<Vec<f64>>,
}

impl VacfEstimate {
    /// `∫₀^{t_cut} C(t) dt` by the trapezoid rule, with its standard error across trajectories.
    pub fn integral(&self, t_cut: f64) -> (f64, f64) {
        let dt = self.lags[1] - self.lags[0];
        let n = ((t_cut / dt).floor() as usize + 1).min(self.lags.len());
        let vals: Vec<f64> = self
            .curves
            .iter()
            .map(|c| dt * (c[..n].iter().sum::<f64>() - 0.5 * (c[0] + c[n - 1])))
            .collect();
        mean_stderr(&vals)
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Velocities `v(p(i·dt))` for `i = 0, 1, …` up to the trajectory end.
fn velocity_samples(sampler: &JumpSampler, tr: &Trajectory, dt: f64) -> Vec<MomentumVector> {
    let n = (tr.end_time() / dt).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut e = 0;
    for i in 0..n {
        let t = i as f64 * dt;
        while e + 1 < tr.times.len() && tr.times[e + 1] <= t {
            e += 1;
        }
        out.push(sampler.velocity(tr.momenta[e]));
    }
    out
}

/// Time- and ensemble-averaged `C(j·dt) = E[v(p_t)·v(p_{t+j·dt})]` for `j < n_lags`.
pub fn vacf(sampler: &JumpSampler, trajectories: &[Trajectory], dt: f64, n_lags: usize) -> VacfEstimate {
    let curves: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|tr| {
            let v = velocity_samples(sampler, tr, dt);
            (0..n_lags)
                .map(|j| {
                    if j >= v.len() {
                        return 0.0;
                    }
                    let m = v.len() - j;
                    v[..m].iter().zip(&v[j..]).map(|(a, b)| a.dot(b)).sum::<f64>() / m as f64
                })
                .collect()
        })
        .collect();
    let mut c = vec![0.0; n_lags];
    let mut stderr = vec![0.0; n_lags];
    for j in 0..n_lags {
        let col: Vec<f64> = curves.iter().map(|cv| cv[j]).collect();
        (c[j], stderr[j]) = mean_stderr(&col);
    }
    VacfEstimate {
        lags: (0..n_lags).map(|j| j as f64 * dt).collect(),
        c,
        stderr,
        samples: trajectories.len(),
        curves,
    }
}

/// Decay rate of `C(t)` from a weighted log-linear fit over `0.5 ≥ C/C(0) ≥ 0.05`.
pub fn gap_from_vacf(est: &VacfEstimate) -> Option<f64> {
    let c0 = est.c[0];
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&t, &c), &e) in est.lags.iter().zip(&est.c).zip(&est.stderr) {
        if c > 0.5 * c0 {
            continue;
        }
        if c < 0.05 * c0 || c < 3.0 * e {
            break;
        }
        // Var(ln C) ≈ (e/C)².
        let w = if e > 0.0 { (c / e).powi(2) } else { 1.0 };
        let y = c.ln();
        sw += w;
        sx += w * t;
        sy += w * y;
        sxx += w * t * t;
        sxy += w * t * y;
    }
    let det = sw * sxx - sx * sx;
    if sw == 0.0 || det <= 0.0 {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    (slope < 0.0).then_some(-slope)
}

/// Empirical transition counts between radial shells with edges `edges` (ascending,
/// last shell unbounded), over all events of `trajectories`.
pub fn shell_fluxes(trajectories: &[Trajectory], edges: &[f64]) -> Vec<Vec<u64>> {
    let n = edges.len() + 1;
    let shell = |p: &MomentumVector| edges.partition_point(|&e| e <= p.norm());
    let mut counts = vec![vec![0u64; n]; n];
    for tr in trajectories {
        for w in tr.momenta.windows(2) {
            counts[shell(&w[0])][shell(&w[1])] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
    use std::sync::LazyLock;

    static SAMPLER: LazyLock<JumpSampler> = LazyLock::new(|| JumpSampler::for_params(Params::default()));

    #[test]
    fn stationary_moments_and_ks() {
        let s = &*SAMPLER;
        let mut rng = stream_rng(7, 0);
        let n = 100_000;
        let draws: Vec<MomentumVector> = (0..n).map(|_| s.sample_stationary(&mut rng)).collect();
        let var_true = s.params.mass() / s.params.beta;
        for c in 0..3 {
            let x: Vec<f64> = draws.iter().map(|p| p.0[c]).collect();
            let (m, se) = mean_stderr(&x);
            assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
            let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
            let (v, sev) = mean_stderr(&sq);
            assert!((v - var_true).abs() < 3.0 * sev, "var {v} vs {var_true}");
        }
        let mut x: Vec<f64> = draws.iter().map(|p| p.0[0]).collect();
        x.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, var_true.sqrt()).unwrap();
        let d = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal.cdf(v);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic 99% critical value of the one-sample KS statistic.
        assert!(d < 1.628 / (n as f64).sqrt(), "KS D = {d}");
    }

    #[test]
    fn collisions_conserve_relative_momentum() {
        let s = &*SAMPLER;
        let mut rng = stream_rng(3, 1);
        let mut p = MomentumVector::new(1.0, -2.0, 0.5);
        for _ in 0..2000 {
            let j = s.sample_jump(p, &mut rng).unwrap();
            assert!(j.wait > 0.0);
            let (a, b) = (j.p_rel_in.norm(), j.p_rel_out.norm());
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            p = j.momentum;
        }
    }

    #[test]
    fn waiting_times_match_escape_rate() {
        let s = &*SAMPLER;
        let kernel = CollisionKernel::with_params(s.params);
        for (k, r) in [0.0, 3.0].into_iter().enumerate() {
            let p = MomentumVector::new(0.0, r, 0.0);
            let mut rng = stream_rng(11, k as u64);
            let waits: Vec<f64> = (0..100_000).map(|_| s.sample_jump(p, &mut rng).unwrap().wait).collect();
            let (m, se) = mean_stderr(&waits);
            let e = kernel.escape_rate(p);
            assert!((m - 1.0 / e).abs() < 3.0 * se, "|p|={r}: mean wait {m} ± {se}, 1/E = {}", 1.0 / e);
        }
    }

    #[test]
    fn thinning_envelope_dominates_cross_section() {
        let s = &*SAMPLER;
        let (_, hi) = CollisionKernel::sigma_range();
        assert!(s.sigma_envelope() >= hi);
        for i in 0..200 {
            let k = 0.2 * i as f64;
            let exact = crate::collision_kernel::table(k.max(1e-12)).sigma_tot();
            assert!((s.sigma_tot(k) - exact).abs() < 1e-6 * exact, "kappa {k}");
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let s = &*SAMPLER;
        let a = s.run_stationary(5, 2, 200.0, 10_000).unwrap();
        let b = s.run_stationary(5, 2, 200.0, 10_000).unwrap();
        assert_eq!(a, b);
        let c = s.run_stationary(6, 2, 200.0, 10_000).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|t| t.times.windows(2).all(|w| w[1] > w[0])));
    }

    #[test]
    fn event_cap_flags_partial_trajectory() {
        let s = &*SAMPLER;
        let mut rng = stream_rng(1, 0);
        let tr = s.simulate(MomentumVector::ZERO, 1e9, 50, &mut rng).unwrap();
        assert!(tr.truncated);
        assert_eq!(tr.events(), 50);
        assert!(matches!(s.simulate(MomentumVector::ZERO, -1.0, 5, &mut rng), Err(SimError::InvalidDuration(_))));
    }

    #[test]
    fn energy_relaxes_from_far_tail() {
        let s = &*SAMPLER;
        let width = s.params.thermal_momentum();
        for run in 0..8 {
            let mut rng = stream_rng(21, run);
            let mut p = MomentumVector::new(0.0, 0.0, 20.0 * width);
            let mut reached = false;
            for _ in 0..200_000 {
                p = s.sample_jump(p, &mut rng).unwrap().momentum;
                if p.norm() < 2.0 * width {
                    reached = true;
                    break;
                }
            }
            assert!(reached, "run {run} stuck at |p| = {}", p.norm());
        }
    }

    #[test]
    fn occupation_matches_stationary_law() {
        let s = &*SAMPLER;
        let width = s.params.thermal_momentum();
        // Spaced samples at interval 40/E(0), several velocity relaxation times apart.
        let spacing = 40.0 / CollisionKernel::with_params(s.params).escape_radial(0.0);
        let trs = s.run_stationary(17, 8, 250.0 * spacing, 1_000_000).unwrap();
        let mut samples = Vec::new();
        for tr in &trs {
            let mut t = 0.0;
            while t < tr.end_time() {
                samples.push(tr.momentum_at(t).norm() / width);
                t += spacing;
            }
        }
        // |p|/width is chi-distributed with 3 degrees of freedom.
        let chi2 = ChiSquared::new(3.0).unwrap();
        let edges = [0.0, 0.8, 1.1, 1.35, 1.6, 1.85, 2.15, 2.6, f64::INFINITY];
        let n = samples.len() as f64;
        let mut stat = 0.0;
        for w in edges.windows(2) {
            let obs = samples.iter().filter(|&&x| x >= w[0] && x < w[1]).count() as f64;
            let exp = n * (chi2.cdf(w[1] * w[1]) - chi2.cdf(w[0] * w[0]));
            stat += (obs - exp).powi(2) / exp;
        }
        let crit = ChiSquared::new((edges.len() - 2) as f64).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi2 {stat} >= {crit} with {n} samples");
    }

    #[test]
    fn shell_fluxes_are_balanced() {
        let s = &*SAMPLER;
        let width = s.params.thermal_momentum();
        let trs = s.run_stationary(29, 4, 2.0e5, 2_000_000).unwrap();
        let edges = [1.0 * width, 1.5 * width, 2.0 * width];
        let f = shell_fluxes(&trs, &edges);
        for (i, row) in f.iter().enumerate() {
            for (j, col) in f.iter().enumerate().skip(i + 1) {
                let (a, b) = (row[j] as f64, col[i] as f64);
                assert!((a - b).abs() <= 3.0 * (a + b).sqrt().max(1.0), "{i}->{j}: {a} vs {j}->{i}: {b}");
            }
        }
    }

    #[test]
    fn rotated_trajectories_give_identical_vacf() {
        let s = &*SAMPLER;
        let trs = s.run_stationary(2, 3, 500.0, 100_000).unwrap();
        let (c, sn) = (0.6f64, 0.8f64);
        let r = [[c, -sn, 0.0], [sn * 0.6, c * 0.6, -0.8], [sn * 0.8, c * 0.8, 0.6]];
        let rot: Vec<Trajectory> = trs.iter().map(|t| t.rotated(&r)).collect();
        let a = vacf(s, &trs, 5.0, 40);
        let b = vacf(s, &rot, 5.0, 40);
        for (x, y) in a.c.iter().zip(&b.c) {
            assert!((x - y).abs() <= 1e-12 * a.c[0]);
        }
    }

    #[test]
    fn event_log_layout() {
        let s = &*SAMPLER;
        let tr = &s.run_stationary(4, 1, 50.0, 1000).unwrap()[0];
        let mut buf = Vec::new();
        tr.write_log(&mut buf, &[7u8; 32]).unwrap();
        assert_eq!(&buf[..8], b"QLBEVT01");
        assert_eq!(buf.len(), 8 + 32 + 24 + 32 + 32 * tr.times.len());
        let n = u64::from_le_bytes(buf[56..64].try_into().unwrap());
        assert_eq!(n as usize, tr.times.len());
    }

    #[test]
    fn gap_fit_recovers_exponential() {
        let lags: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let c: Vec<f64> = lags.iter().map(|t| 2.0 * (-0.03 * t).exp()).collect();
        let est = VacfEstimate {
            lags,
            stderr: vec![1e-6; 200],
            c,
            samples: 1,
            curves: vec![],
        };
        assert!((gap_from_vacf(&est).unwrap() - 0.03).abs() < 1e-9);
    }
}
