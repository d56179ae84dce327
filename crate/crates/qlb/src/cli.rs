//! Configuration, subcommands and run manifests.
//!
//! A run reads an optional TOML file, applies command-line overrides, validates the
//! result and writes CSV or JSON outputs plus `manifest.json` into the output
//! directory. Every output carries the manifest checksum, a SHA-256 digest of the
//! configuration echo and the code version.

use crate::collision_kernel::{CollisionKernel, KernelQuadrature, MomentumVector, Params, RadialTables};
use crate::diffusion::{self, McConfig, RadialGridConfig, RadialOperator};
use crate::fiber_spectral::{self, FiberGrid, FiberGridConfig, FiberOperator};
use crate::markov_sim::{gap_from_vacf, vacf, JumpSampler};
use crate::scattering::{cross_sections, s_matrix, PartialWaveTable, Potential};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Code version string recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "QLB_THREADS";

/// Errors of a CLI run, mapped to exit codes 1 (user error) and 2 (numerical failure).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
        }
    }

    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({ "status": "error", "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() })
            .to_string()
    }
}

fn numerical<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Numerical(format!("{context}: {e}"))
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Physical parameters section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub lambda: f64,
    pub beta: f64,
    pub eta: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = Params::default();
        Self { lambda: p.lambda, beta: p.beta, eta: p.eta }
    }
}

/// `scattering` subcommand options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringConfig {
    pub kappas: Vec<f64>,
    /// Polar angles per κ in the amplitude table.
    pub n_theta: usize,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        Self { kappas: vec![1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0], n_theta: 181 }
    }
}

/// `kernels` subcommand options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsConfig {
    /// Number of `|p|` rows.
    pub points: usize,
    /// Row extent in thermal widths.
    pub widths: f64,
}

impl Default for KernelsConfig {
    fn default() -> Self {
        Self { points: 61, widths: 6.0 }
    }
}

/// `simulate` subcommand options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_traj: usize,
    pub t_total: f64,
    pub max_events: usize,
    /// Lag spacing of the autocorrelation output.
    pub dt: f64,
    pub n_lags: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n_traj: 8, t_total: 2000.0, max_events: 1_000_000, dt: 2.0, n_lags: 400 }
    }
}

/// `fiber` subcommand options. Wavevectors are in units of `ĝ√(Mβ)`, times in units of `1/ĝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberConfig {
    pub grid: FiberGridConfig,
    pub sigma_x: f64,
    pub k_list: Vec<f64>,
    /// `|s|` of the characteristic function.
    pub s: f64,
    pub times: Vec<f64>,
    pub moment_times: Vec<f64>,
    /// Time step.
    pub step: f64,
    /// Radius of the perturbative ball.
    pub ball: f64,
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self {
            grid: FiberGridConfig::default(),
            sigma_x: 1.0,
            k_list: vec![0.02, 0.04, 0.08],
            s: 1.0,
            times: vec![50.0, 100.0, 200.0],
            moment_times: vec![25.0, 50.0, 100.0],
            step: 0.2,
            ball: 0.5,
        }
    }
}

/// `scan` subcommand options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub lambdas: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { lambdas: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5] }
    }
}

/// Output location and number formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Significant digits in CSV output.
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("qlb-out"), precision: 17 }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub quadrature: KernelQuadrature,
    pub radial: RadialGridConfig,
    pub mc: McConfig,
    pub scattering: ScatteringConfig,
    pub kernels: KernelsConfig,
    pub simulate: SimulateConfig,
    pub fiber: FiberConfig,
    pub scan: ScanConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML text; unknown keys and type errors name the offending line.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    /// Validated physical parameters.
    pub fn params(&self) -> Result<Params, CliError> {
        let p = self.params;
        Params::new(p.lambda, p.beta, p.eta).map_err(|e| match e {
            crate::collision_kernel::KernelError::InvalidParam { name, value } => {
                CliError::Config(format!("params.{name} must be positive and finite, got {value}"))
            }
            other => CliError::Config(other.to_string()),
        })
    }

    /// Checks every physical and numerical field.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let nonzero = |name: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be at least 1")))
            }
        };
        let q = &self.quadrature;
        for (name, v) in [
            ("quadrature.radial", q.radial),
            ("quadrature.planar_radial", q.planar_radial),
            ("quadrature.planar_panels", q.planar_panels),
            ("quadrature.planar_angular", q.planar_angular),
            ("quadrature.gas_radial", q.gas_radial),
            ("quadrature.gas_angular", q.gas_angular),
            ("quadrature.phi", q.phi),
            ("quadrature.transfer_radial", q.transfer_radial),
            ("quadrature.transfer_angular", q.transfer_angular),
            ("mc.n_traj", self.mc.n_traj),
            ("mc.max_events", self.mc.max_events),
            ("simulate.n_traj", self.simulate.n_traj),
            ("simulate.max_events", self.simulate.max_events),
            ("simulate.n_lags", self.simulate.n_lags),
            ("scattering.n_theta", self.scattering.n_theta),
            ("kernels.points", self.kernels.points),
            ("output.precision", self.output.precision),
        ] {
            nonzero(name, v)?;
        }
        if self.radial.points < 8 {
            return Err(CliError::Config("radial.points must be at least 8".into()));
        }
        if self.fiber.grid.nr < 2 || self.fiber.grid.nz != 2 * self.fiber.grid.nr {
            return Err(CliError::Config("fiber.grid needs nr >= 2 and nz = 2 nr".into()));
        }
        for (name, v) in [
            ("radial.widths", self.radial.widths),
            ("mc.t_total", self.mc.t_total),
            ("mc.dt", self.mc.dt),
            ("mc.max_lag", self.mc.max_lag),
            ("simulate.t_total", self.simulate.t_total),
            ("simulate.dt", self.simulate.dt),
            ("kernels.widths", self.kernels.widths),
            ("fiber.grid.widths", self.fiber.grid.widths),
            ("fiber.sigma_x", self.fiber.sigma_x),
            ("fiber.step", self.fiber.step),
            ("fiber.ball", self.fiber.ball),
        ] {
            positive(name, v)?;
        }
        for (name, list) in [
            ("scattering.kappas", &self.scattering.kappas),
            ("fiber.k_list", &self.fiber.k_list),
            ("fiber.times", &self.fiber.times),
            ("fiber.moment_times", &self.fiber.moment_times),
            ("scan.lambdas", &self.scan.lambdas),
        ] {
            for (i, &v) in list.iter().enumerate() {
                positive(&format!("{name}[{i}]"), v)?;
            }
        }
        for (name, list) in [("fiber.times", &self.fiber.times), ("fiber.moment_times", &self.fiber.moment_times)] {
            if list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::Config(format!("{name} must be increasing")));
            }
        }
        Ok(())
    }

    /// Manifest checksum: SHA-256 of the configuration echo and the code version.
    /// The output directory is not part of the run and is left out.
    pub fn checksum(&self) -> String {
        let mut run = self.clone();
        run.output.dir = PathBuf::new();
        let echo = serde_json::to_string(&run).expect("config serializes");
        hex(&Sha256::digest(format!("qlb {VERSION}\n{echo}").as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "qlb", version, about = "Quantum linear Boltzmann model: scattering, kernels, jump process, diffusion and fiber spectra")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mass ratio λ = m/M.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Inverse temperature β.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Gas density η.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Significant digits in CSV output.
    #[arg(long, global = true)]
    pub precision: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Cross sections, S-matrix unitarity and amplitude tables.
    Scattering,
    /// Escape rate, energy shift, velocity, bounds and Lyapunov drift versus |p|.
    Kernels {
        /// Also evaluate the stationarity and w-identity residuals (minutes).
        #[arg(long)]
        identities: bool,
    },
    /// Stationary trajectories and their velocity autocorrelation.
    Simulate {
        /// Write one binary event log per trajectory.
        #[arg(long)]
        logs: bool,
    },
    /// Diffusion constants as a JSON report.
    Diffusion {
        /// Include the Monte Carlo Green–Kubo estimate.
        #[arg(long)]
        mc: bool,
        /// Mass-ratio scan instead of a single report, e.g. `lambda=0.01,0.05,0.1`.
        #[arg(long)]
        scan: Option<String>,
    },
    /// Fiber-generator eigenvalues, characteristic function and second moments.
    Fiber,
    /// Diffusion constants over the configured λ list.
    Scan,
}

/// Reproducibility record written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub checksum: String,
    pub config: RunConfig,
    /// SHA-256 of the radial kernel tables, when built.
    pub tables_checksum: Option<String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

/// Resolves the configuration: defaults, then the file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = cli.lambda {
        cfg.params.lambda = v;
    }
    if let Some(v) = cli.beta {
        cfg.params.beta = v;
    }
    if let Some(v) = cli.eta {
        cfg.params.eta = v;
    }
    if let Some(v) = cli.seed {
        cfg.mc.seed = v;
    }
    if let Some(v) = &cli.out {
        cfg.output.dir = v.clone();
    }
    if let Some(v) = cli.precision {
        cfg.output.precision = v;
    }
    if let Command::Diffusion { scan: Some(spec), .. } = &cli.command {
        cfg.scan.lambdas = parse_scan(spec)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `lambda=a,b,c`.
pub fn parse_scan(spec: &str) -> Result<Vec<f64>, CliError> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--scan expects lambda=v1,v2,..., got `{spec}`")))?;
    if key.trim() != "lambda" {
        return Err(CliError::Config(format!("--scan supports only `lambda`, got `{key}`")));
    }
    list.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--scan value `{s}` is not a number"))))
        .collect()
}

/// Writer of checksummed output files.
pub struct Output {
    dir: PathBuf,
    checksum: String,
    precision: usize,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path, checksum: String, precision: usize) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), checksum, precision, files: Vec::new() })
    }

    fn number(&self, x: f64) -> String {
        format!("{:.*e}", self.precision.saturating_sub(1), x)
    }

    /// CSV with `#` header lines carrying the checksum and `meta`.
    fn csv(&mut self, name: &str, meta: &[String], columns: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let ctx = format!("writing {}", path.display());
        let file = fs::File::create(&path).map_err(io_err(ctx.clone()))?;
        let mut w = BufWriter::new(file);
        let mut text = format!("# qlb {VERSION}\n# manifest-sha256: {}\n", self.checksum);
        for m in meta {
            let _ = writeln!(text, "# {m}");
        }
        let _ = writeln!(text, "{}", columns.join(","));
        for row in rows {
            let line: Vec<String> = row.iter().map(|&x| self.number(x)).collect();
            let _ = writeln!(text, "{}", line.join(","));
        }
        w.write_all(text.as_bytes()).map_err(io_err(ctx.clone()))?;
        w.flush().map_err(io_err(ctx))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// JSON record with the checksum as its `manifest_sha256` field.
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Numerical(format!("serializing {name}: {e}")))?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("manifest_sha256".into(), serde_json::Value::String(self.checksum.clone()));
        }
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&v).expect("value serializes");
        fs::write(&path, text + "\n").map_err(io_err(format!("writing {}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn binary(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(format!("writing {}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn tables_digest(t: &RadialTables) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in [&t.escape, &t.h_f, &t.dh_f, &t.u] {
        for v in s.knots().iter().chain(s.values()) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Scattering => "scattering",
        Command::Kernels { .. } => "kernels",
        Command::Simulate { .. } => "simulate",
        Command::Diffusion { .. } => "diffusion",
        Command::Fiber => "fiber",
        Command::Scan => "scan",
    }
}

/// Applies the thread count from [`THREADS_ENV`] to the global pool, once.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // A pool already built (e.g. by an earlier run in the same process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one subcommand and writes its outputs and manifest.
pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    configure_threads()?;
    let start = Instant::now();
    let cfg = resolve_config(cli)?;
    let checksum = cfg.checksum();
    let mut out = Output::new(&cfg.output.dir, checksum.clone(), cfg.output.precision)?;
    let params = cfg.params()?;
    let kernel = CollisionKernel::new(params, cfg.quadrature);
    let mut tables_checksum = None;
    match &cli.command {
        Command::Scattering => run_scattering(&cfg, &mut out)?,
        Command::Kernels { identities } => {
            let tables = RadialTables::default_for(&kernel);
            tables_checksum = Some(hex(&tables_digest(&tables)));
            run_kernels(&cfg, &kernel, &tables, *identities, &mut out)?;
        }
        Command::Simulate { logs } => {
            let tables = RadialTables::default_for(&kernel);
            let digest = tables_digest(&tables);
            tables_checksum = Some(hex(&digest));
            run_simulate(&cfg, &kernel, tables, digest, *logs, &mut out)?;
        }
        Command::Diffusion { mc, scan } => {
            if scan.is_some() {
                run_scan(&cfg, &mut out)?;
            } else {
                let report = diffusion::report(&kernel, cfg.radial, mc.then_some(cfg.mc)).map_err(numerical("diffusion"))?;
                out.json("diffusion.json", &report)?;
            }
        }
        Command::Fiber => {
            let tables = RadialTables::default_for(&kernel);
            tables_checksum = Some(hex(&tables_digest(&tables)));
            run_fiber(&cfg, &kernel, &tables, &mut out)?;
        }
        Command::Scan => run_scan(&cfg, &mut out)?,
    }
    let manifest = RunManifest {
        version: VERSION.to_string(),
        command: command_name(&cli.command).to_string(),
        checksum,
        config: cfg.clone(),
        tables_checksum,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: out.files.clone(),
    };
    let path = cfg.output.dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(format!("writing {}", path.display())))?;
    Ok(manifest)
}

fn run_scattering(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut amp = Vec::new();
    let nt = cfg.scattering.n_theta;
    for &kappa in &cfg.scattering.kappas {
        let cs = cross_sections(kappa).map_err(numerical("cross sections"))?;
        let table = PartialWaveTable::hard_sphere(kappa).map_err(numerical("partial waves"))?;
        let mut defect: f64 = 0.0;
        for l in 0..=table.l_max {
            let s = s_matrix(l, kappa, Potential::HardSphere).map_err(numerical("S-matrix"))?;
            defect = defect.max((s.norm() - 1.0).abs());
        }
        rows.push(vec![kappa, cs.sigma_tot, cs.sigma_z, cs.sigma_0, table.l_max as f64, defect]);
        for i in 0..nt {
            let theta = std::f64::consts::PI * i as f64 / (nt - 1).max(1) as f64;
            let f = table.f(theta);
            amp.push(vec![kappa, theta, f.re, f.im, f.norm_sqr()]);
        }
    }
    out.csv(
        "cross_sections.csv",
        &[],
        &["kappa", "sigma_tot", "sigma_z", "sigma_0", "l_max", "max_unitarity_defect"],
        &rows,
    )?;
    out.csv("amplitude.csv", &[], &["kappa", "theta", "re_f", "im_f", "dsigma_domega"], &amp)
}

fn run_kernels(cfg: &RunConfig, kernel: &CollisionKernel, tables: &RadialTables, identities: bool, out: &mut Output) -> Result<(), CliError> {
    let c = kernel.escape_bounds();
    let extent = cfg.kernels.widths * kernel.params.thermal_momentum();
    let n = cfg.kernels.points;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = extent * i as f64 / (n - 1).max(1) as f64;
            let (h, dh) = kernel.h_forward_radial(r);
            vec![
                r,
                kernel.escape_radial(r),
                c.lower(r),
                c.upper(r),
                h,
                dh,
                kernel.u_radial(r),
                tables.velocity_radial(r),
                kernel.lyapunov_drift(MomentumVector::new(0.0, 0.0, r)),
            ]
        })
        .collect();
    out.csv(
        "kernels.csv",
        &[],
        &["p", "escape_rate", "escape_lower", "escape_upper", "h_f", "dh_f", "u", "velocity", "lyapunov_drift"],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Identity {
        p: f64,
        stationarity_residual: f64,
        w_identity_residual: f64,
    }
    let mut ids = Vec::new();
    if identities {
        for r in [1.0, 3.0] {
            let (g, l) = kernel.stationarity_terms(r).map_err(numerical("stationarity"))?;
            let (a, b) = kernel.w_identity_terms(r).map_err(numerical("w-identity"))?;
            ids.push(Identity { p: r, stationarity_residual: (g - l) / l, w_identity_residual: (a - b) / b.abs() });
        }
    }
    let summary = serde_json::json!({
        "params": kernel.params,
        "e_lower": c.e_lower,
        "e_upper": c.e_upper,
        "f_lower": c.f_lower,
        "f_upper": c.f_upper,
        "sigma_inf": c.sigma_inf,
        "sigma_sup": c.sigma_sup,
        "drift_plateau": kernel.drift_plateau(),
        "drift_radius": kernel.drift_radius(0.5, 100.0),
        "identities": ids,
    });
    out.json("kernels.json", &summary)
}

fn run_simulate(cfg: &RunConfig, kernel: &CollisionKernel, tables: RadialTables, digest: [u8; 32], logs: bool, out: &mut Output) -> Result<(), CliError> {
    let sim = cfg.simulate;
    let sampler = JumpSampler::new(kernel, tables);
    let trs = sampler
        .run_stationary(cfg.mc.seed, sim.n_traj, sim.t_total, sim.max_events)
        .map_err(numerical("simulation"))?;
    let n_lags = sim.n_lags.min((sim.t_total / sim.dt) as usize).max(1);
    let est = vacf(&sampler, &trs, sim.dt, n_lags);
    let rows: Vec<Vec<f64>> = (0..est.lags.len()).map(|i| vec![est.lags[i], est.c[i], est.stderr[i]]).collect();
    out.csv("vacf.csv", &[format!("seed: {}", cfg.mc.seed)], &["t", "c", "stderr"], &rows)?;
    let traj_rows: Vec<Vec<f64>> = trs
        .iter()
        .map(|t| {
            let p = t.momentum_at(t.end_time());
            vec![t.stream as f64, t.events() as f64, t.end_time(), if t.truncated { 1.0 } else { 0.0 }, p.x(), p.y(), p.z()]
        })
        .collect();
    out.csv(
        "trajectories.csv",
        &[format!("seed: {}", cfg.mc.seed)],
        &["stream", "events", "end_time", "truncated", "px", "py", "pz"],
        &traj_rows,
    )?;
    if logs {
        for t in &trs {
            let mut bytes = Vec::new();
            t.write_log(&mut bytes, &digest).map_err(io_err("encoding event log"))?;
            out.binary(&format!("events_{:04}.bin", t.stream), &bytes)?;
        }
    }
    out.json(
        "simulate.json",
        &serde_json::json!({
            "params": kernel.params,
            "seed": cfg.mc.seed,
            "trajectories": trs.len(),
            "events": trs.iter().map(|t| t.events()).sum::<usize>(),
            "truncated": trs.iter().filter(|t| t.truncated).count(),
            "vacf_gap": gap_from_vacf(&est),
        }),
    )
}

fn run_scan(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &lambda in &cfg.scan.lambdas {
        let p = Params::new(lambda, cfg.params.beta, cfg.params.eta).map_err(|e| CliError::Config(format!("scan: {e}")))?;
        let kernel = CollisionKernel::new(p, cfg.quadrature);
        let tables = RadialTables::default_for(&kernel);
        let op = RadialOperator::build(&kernel, cfg.radial);
        let d_kin = diffusion::green_kubo_grid(&op, &p, |r| tables.velocity_radial(r)).map_err(numerical("scan"))?;
        let d_jps = diffusion::d_jps(&p);
        rows.push(vec![lambda, d_kin, d_jps, diffusion::d_qdc(&p), d_kin + d_jps]);
    }
    out.csv("scan.csv", &[], &["lambda", "d_kin", "d_jps", "d_qdc", "d"], &rows)
}

fn run_fiber(cfg: &RunConfig, kernel: &CollisionKernel, tables: &RadialTables, out: &mut Output) -> Result<(), CliError> {
    let fc = &cfg.fiber;
    let grid = FiberGrid::new(kernel.params, fc.grid);
    let op = FiberOperator::build(kernel, tables, grid).map_err(numerical("fiber generator"))?;
    let gap = op.spectral_gap().map_err(numerical("fiber gap"))?;
    let kth = fiber_spectral::thermal_wavevector(&kernel.params, gap);
    let ks: Vec<f64> = fc.k_list.iter().map(|k| k * kth).collect();
    let est = op.eigen_scan(&ks).map_err(numerical("leading eigenvalue"))?;
    out.csv(
        "eigenvalues.csv",
        &[format!("gap: {gap:e}"), format!("k_unit: {kth:e}")],
        &["k", "re_eps", "im_eps"],
        &est.iter().map(|e| vec![e.k, e.re, e.im]).collect::<Vec<_>>(),
    )?;
    let times: Vec<f64> = fc.times.iter().map(|t| t / gap).collect();
    let phi = op
        .char_function(fc.s, &times, fc.sigma_x, fc.step / gap, fc.ball * kth)
        .map_err(numerical("characteristic function"))?;
    out.csv(
        "char_function.csv",
        &[format!("sigma_x: {}", fc.sigma_x)],
        &["t", "s", "re_phi", "im_phi"],
        &times.iter().zip(&phi).map(|(t, p)| vec![*t, fc.s, p.re, p.im]).collect::<Vec<_>>(),
    )?;
    let mt: Vec<f64> = fc.moment_times.iter().map(|t| t / gap).collect();
    let moments = op.second_moments(&mt, fc.sigma_x, fc.step / gap).map_err(numerical("second moments"))?;
    out.csv(
        "moments.csv",
        &[format!("sigma_x: {}", fc.sigma_x)],
        &["t", "m2_zz_over_t", "m2_xx_over_t", "m2_offdiag_over_t"],
        &moments.iter().map(|m| vec![m.t, m.zz, m.xx, m.off_diagonal]).collect::<Vec<_>>(),
    )?;
    let nu = op.stationary_vector().map_err(numerical("stationary vector"))?;
    out.json(
        "fiber.json",
        &serde_json::json!({
            "params": kernel.params,
            "grid": fc.grid,
            "gap": gap,
            "conservation_residual": op.residual,
            "diffusion_from_eigenvalues": fiber_spectral::extrapolate_diffusion(&est),
            "first_order_coefficient": op.first_order_coefficient(&nu),
            "second_order_contraction": op.second_order_contraction(&nu),
        }),
    )
}
