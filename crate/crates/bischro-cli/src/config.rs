//! Flag and file configuration: parsing, merging, strict validation.
//!
//! Precedence is flags over file over scenario defaults. Validation happens
//! before any output directory is touched, so a rejected configuration
//! never leaves files behind.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use bischro::flow::{EnergyParams, FlowParams, SolverConfig};
use bischro::geometry::{Backend, GrassmannProjector, SphereS2};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    BlowUp(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "bischro",
    version,
    about = "Numerical laboratory for fourth-order curve flows into embedded symmetric targets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub scenario: Scenario,
}

#[derive(Debug, Subcommand)]
pub enum Scenario {
    /// Run the operator identity suite on one backend and report every row.
    Verify(CommonArgs),
    /// Integrate one curve and record snapshots and energy series.
    Simulate(CommonArgs),
    /// Integrate a traveling-wave solution and compare the measured phase
    /// speed against the closed-form dispersion relation.
    Dispersion(CommonArgs),
    /// Co-evolve a perturbed curve pair per mode and fit the growth of the
    /// classical and gauge-modified difference energies.
    Uniqueness(CommonArgs),
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Verify(_) => "verify",
            Scenario::Simulate(_) => "simulate",
            Scenario::Dispersion(_) => "dispersion",
            Scenario::Uniqueness(_) => "uniqueness",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Scenario::Verify(a)
            | Scenario::Simulate(a)
            | Scenario::Dispersion(a)
            | Scenario::Uniqueness(a) => a,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Target manifold: "sphere" or "grassmann".
    #[arg(long)]
    pub backend: Option<String>,

    /// Ambient dimension of the projector manifold (grassmann only).
    #[arg(long)]
    pub n: Option<usize>,

    /// Subspace dimension of the projector manifold (grassmann only).
    #[arg(long)]
    pub k: Option<usize>,

    /// Number of grid nodes on the periodic domain.
    #[arg(long)]
    pub grid: Option<usize>,

    /// Time step.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Integration horizon.
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,

    /// Record every this many steps.
    #[arg(long)]
    pub stride: Option<usize>,

    /// Flow coefficients as "a,lambda,b,c".
    #[arg(long, allow_hyphen_values = true)]
    pub params: Option<String>,

    /// Energy weights as "alpha,beta,gamma"; mapped to flow coefficients.
    #[arg(long = "energy-params", allow_hyphen_values = true)]
    pub energy_params: Option<String>,

    /// Seed for every random choice in the run.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory; artifacts plus a content-hash manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Admit a vanishing fourth-order coefficient (second-order validation
    /// runs only).
    #[arg(long = "allow-a-zero", default_value_t = false)]
    pub allow_a_zero: bool,

    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Random samples for the identity suite.
    #[arg(long)]
    pub samples: Option<usize>,

    /// Winding number of the traveling-wave initial curve.
    #[arg(long = "helix-mode")]
    pub helix_mode: Option<i32>,

    /// Polar angle of the traveling-wave initial curve.
    #[arg(long)]
    pub theta0: Option<f64>,

    /// Perturbation modes as "m1,m2,...".
    #[arg(long)]
    pub modes: Option<String>,

    /// Perturbation amplitude.
    #[arg(long)]
    pub eps: Option<f64>,
}

/// File counterpart of the flags; every key optional, unknown keys fatal.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub backend: Option<String>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub grid: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub stride: Option<usize>,
    pub params: Option<[f64; 4]>,
    pub energy_params: Option<[f64; 3]>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub allow_a_zero: Option<bool>,
    pub samples: Option<usize>,
    pub helix_mode: Option<i32>,
    pub theta0: Option<f64>,
    pub modes: Option<Vec<u32>>,
    pub eps: Option<f64>,
}

/// Fully-validated run description; nothing here can fail downstream for
/// configuration reasons.
pub struct RunConfig {
    pub scenario: &'static str,
    pub backend: Arc<dyn Backend>,
    pub params: FlowParams,
    pub solver: SolverConfig,
    pub out: Option<PathBuf>,
    pub samples: usize,
    pub helix_mode: i32,
    pub theta0: f64,
    pub modes: Vec<u32>,
    pub eps: f64,
}

impl std::fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunConfig")
            .field("scenario", &self.scenario)
            .field("backend", &self.backend.name())
            .field("params", &self.params)
            .field("solver", &self.solver)
            .field("out", &self.out)
            .finish_non_exhaustive()
    }
}

fn parse_list<const N: usize>(raw: &str, what: &str) -> Result<[f64; N], CliError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(config_err(format!(
            "{what} needs {N} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|_| config_err(format!("{what}: cannot parse `{part}` as a number")))?;
    }
    Ok(out)
}

fn parse_modes(raw: &str) -> Result<Vec<u32>, CliError> {
    raw.split(',')
        .map(str::trim)
        .map(|p| {
            p.parse::<u32>()
                .map_err(|_| config_err(format!("modes: cannot parse `{p}` as a mode index")))
        })
        .collect()
}

struct Defaults {
    grid: usize,
    dt: f64,
    t_end: f64,
    stride: usize,
    params: [f64; 4],
}

fn scenario_defaults(scenario: &str) -> Defaults {
    match scenario {
        // Hamiltonian quartet so the recorded combined energy is conserved.
        "simulate" => Defaults {
            grid: 64,
            dt: 1e-6,
            t_end: 5e-3,
            stride: 500,
            params: [1.0, 0.0, 1.0, 0.0],
        },
        "dispersion" => Defaults {
            grid: 64,
            dt: 1e-6,
            t_end: 5e-2,
            stride: 5000,
            params: [1.0, 0.0, 0.0, 0.0],
        },
        "uniqueness" => Defaults {
            grid: 32,
            dt: 2e-5,
            t_end: 2e-3,
            stride: 10,
            params: [1.0, 0.0, 0.0, 0.0],
        },
        // verify: solver settings are irrelevant but kept valid.
        _ => Defaults {
            grid: 32,
            dt: 1e-5,
            t_end: 0.0,
            stride: 1,
            params: [1.0, 0.0, 0.0, 0.0],
        },
    }
}

const QUARTET_MATCH_TOL: f64 = 1e-12;

/// Merges flags over the optional file and validates everything.
pub fn resolve(scenario_name: &'static str, args: &CommonArgs) -> Result<RunConfig, CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                config_err(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| config_err(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let defaults = scenario_defaults(scenario_name);

    let backend_kind = args
        .backend
        .clone()
        .or(file.backend)
        .unwrap_or_else(|| "sphere".to_string());
    let backend: Arc<dyn Backend> = match backend_kind.as_str() {
        "sphere" => Arc::new(SphereS2),
        "grassmann" => {
            let n = args.n.or(file.n).unwrap_or(3);
            let k = args.k.or(file.k).unwrap_or(1);
            Arc::new(
                GrassmannProjector::new(n, k)
                    .map_err(|e| config_err(format!("grassmann backend: {e}")))?,
            )
        }
        other => {
            return Err(config_err(format!(
                "unknown backend `{other}` (expected sphere or grassmann)"
            )))
        }
    };
    if (args.n.is_some() || args.k.is_some() || file.n.is_some() || file.k.is_some())
        && backend_kind == "sphere"
    {
        return Err(config_err(
            "--n/--k only apply to the grassmann backend".to_string(),
        ));
    }

    let allow_a_zero = args.allow_a_zero || file.allow_a_zero.unwrap_or(false);
    let quartet = match &args.params {
        Some(raw) => Some(parse_list::<4>(raw, "params")?),
        None => file.params,
    };
    let triple = match &args.energy_params {
        Some(raw) => Some(parse_list::<3>(raw, "energy-params")?),
        None => file.energy_params,
    };
    let params = resolve_params(scenario_name, quartet, triple, allow_a_zero, &defaults)?;

    let solver = SolverConfig {
        n: args.grid.or(file.grid).unwrap_or(defaults.grid),
        dt: args.dt.or(file.dt).unwrap_or(defaults.dt),
        t_end: args.t_end.or(file.t_end).unwrap_or(defaults.t_end),
        stride: args.stride.or(file.stride).unwrap_or(defaults.stride),
        seed: args.seed.or(file.seed).unwrap_or(42),
    };
    if scenario_name != "verify" {
        solver
            .validate(&params)
            .map_err(|e| config_err(format!("solver settings rejected: {e}")))?;
    }

    let modes = match &args.modes {
        Some(raw) => parse_modes(raw)?,
        None => file.modes.unwrap_or_else(|| vec![2, 4]),
    };
    let eps = args.eps.or(file.eps).unwrap_or(1e-5);
    if scenario_name == "uniqueness" {
        if params.a == 0.0 {
            return Err(config_err(
                "uniqueness requires a nonzero fourth-order coefficient (the gauge is undefined at a = 0)",
            ));
        }
        if modes.is_empty() {
            return Err(config_err("uniqueness needs at least one perturbation mode"));
        }
        let limit = (solver.n / 4) as u32;
        for &m in &modes {
            if m == 0 || m >= limit {
                return Err(config_err(format!(
                    "perturbation mode {m} outside the resolvable range 1..{limit}"
                )));
            }
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(config_err("eps must be positive and finite"));
        }
    }
    if scenario_name == "dispersion" && backend.name() != "sphere-s2" {
        return Err(config_err(
            "dispersion runs on the sphere backend (the traveling-wave family lives there)",
        ));
    }

    let helix_mode = args.helix_mode.or(file.helix_mode).unwrap_or(1);
    if helix_mode == 0 {
        return Err(config_err("helix-mode must be a nonzero winding number"));
    }
    let theta0 = args.theta0.or(file.theta0).unwrap_or(PI / 4.0);
    if !(theta0.is_finite() && theta0 > 0.0 && theta0 < PI) {
        return Err(config_err("theta0 must lie strictly between 0 and pi"));
    }
    let samples = args.samples.or(file.samples).unwrap_or(1000);
    if samples == 0 {
        return Err(config_err("samples must be positive"));
    }

    let out = args.out.clone().or(file.out);
    if out.is_none() && scenario_name != "verify" {
        return Err(config_err(format!(
            "{scenario_name} writes artifacts; --out is required"
        )));
    }
    // Refuse to mix runs: stale files would survive alongside a fresh
    // manifest that does not list them.
    if let Some(dir) = &out {
        match std::fs::read_dir(dir) {
            Ok(mut entries) => {
                if entries.next().is_some() {
                    return Err(config_err(format!(
                        "output directory {} already contains files; pick a fresh one",
                        dir.display()
                    )));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(config_err(format!(
                    "cannot inspect output directory {}: {e}",
                    dir.display()
                )))
            }
        }
    }

    Ok(RunConfig {
        scenario: scenario_name,
        backend,
        params,
        solver,
        out,
        samples,
        helix_mode,
        theta0,
        modes,
        eps,
    })
}

fn resolve_params(
    scenario: &str,
    quartet: Option<[f64; 4]>,
    triple: Option<[f64; 3]>,
    allow_a_zero: bool,
    defaults: &Defaults,
) -> Result<FlowParams, CliError> {
    let from_triple = |t: [f64; 3]| -> Result<FlowParams, CliError> {
        FlowParams::from_energy(
            EnergyParams {
                alpha: t[0],
                beta: t[1],
                gamma: t[2],
            },
            allow_a_zero,
        )
        .map_err(|e| config_err(format!("energy-params rejected: {e}")))
    };
    let from_quartet = |q: [f64; 4]| -> Result<FlowParams, CliError> {
        if q[0] == 0.0 {
            if !allow_a_zero {
                return Err(config_err(
                    "a = 0 needs --allow-a-zero (second-order validation runs only)",
                ));
            }
            if !q.iter().all(|v| v.is_finite()) {
                return Err(config_err("params must be finite"));
            }
            return Ok(FlowParams::zero_dispersion_unchecked(q[1], q[2], q[3]));
        }
        FlowParams::new(q[0], q[1], q[2], q[3])
            .map_err(|e| config_err(format!("params rejected: {e}")))
    };

    match (quartet, triple) {
        (Some(q), Some(t)) => {
            let fe = from_triple(t)?;
            let scale: f64 = 1.0 + q.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let mapped = [fe.a, fe.lambda, fe.b, fe.c];
            if q.iter()
                .zip(&mapped)
                .any(|(x, y)| (x - y).abs() > QUARTET_MATCH_TOL * scale)
            {
                return Err(config_err(format!(
                    "params ({},{},{},{}) contradict energy-params (mapped to {},{},{},{})",
                    q[0], q[1], q[2], q[3], mapped[0], mapped[1], mapped[2], mapped[3]
                )));
            }
            Ok(fe)
        }
        (Some(q), None) => from_quartet(q),
        (None, Some(t)) => from_triple(t),
        (None, None) => {
            let q = defaults.params;
            if scenario == "simulate" {
                // The default simulate quartet comes from the bending
                // energy, so record that provenance for the monitor.
                return from_triple([0.0, 1.0, 0.0]);
            }
            from_quartet(q)
        }
    }
}

/// Worker cap for independent jobs: `BISCHRO_THREADS` when set, otherwise
/// the machine's available parallelism.
pub fn worker_cap() -> Result<usize, CliError> {
    match std::env::var("BISCHRO_THREADS") {
        Ok(raw) => {
            let n: usize = raw
                .parse()
                .map_err(|_| config_err(format!("BISCHRO_THREADS: invalid value `{raw}`")))?;
            if n == 0 {
                return Err(config_err("BISCHRO_THREADS must be at least 1"));
            }
            Ok(n)
        }
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
        Err(e) => Err(config_err(format!("BISCHRO_THREADS: {e}"))),
    }
}
