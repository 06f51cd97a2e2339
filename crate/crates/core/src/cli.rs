//! The `qpdl` front end: run configuration, subcommands and artifact output.
//!
//! A config file is a list of `key = value` lines grouped under `[section]`
//! headers; key `k` under `[s]` is addressed as `s.k`. `#` starts a comment.
//! Command-line flags override config keys and `--set s.k=v` overrides
//! anything. Each subcommand computes everything before writing, so a failed
//! validation leaves no artifacts behind. Every CSV starts with a `#` line
//! naming its columns.
//!
//! | section      | keys                                                                 |
//! |--------------|----------------------------------------------------------------------|
//! | `frequency`  | `omega` (`golden` or comma list), `gamma`, `tau`                     |
//! | `potential`  | `kind` (`cosine`, `zero`, `random`), `eps`, `radius`, `kmax`         |
//! | `operator`   | `theta` (comma list), `N`                                            |
//! | `schedule`   | `eps0`, `J`, `nmin`                                                  |
//! | `grid`       | `emin`, `emax`, `points`, `nmax`, `theta_samples`                    |
//! | `tolerances` | `unitarity`, `residual`                                              |
//! | `output`     | `dir`, `seed`                                                        |
//! | `run`        | subcommand parameters (`E`, `t`, `t_list`, `M_list`, `datum`, ...)   |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{lyapunov_exponent, rotation_number};
use crate::error::{Error, Result};
use crate::kam::{partition_spectrum, reduce, schedule, KamSchedule, Xi};
use crate::lattice_operator::{ids_grid, LatticeState};
use crate::nls::{bootstrap_experiment, BootstrapSetup};
use crate::oscillatory::{spectral_osc_integral, BoundContext, DEFAULT_SAMPLES};
use crate::propagator::{decay_profile, log_times, Propagator};
use crate::spectral_transform::{frame_bounds, inverse_transform, SpectralGrid, SpectralTable};
use crate::{FourierSeries, Frequency};

const SECTIONS: &[(&str, &[&str])] = &[
    ("frequency", &["omega", "gamma", "tau"]),
    ("potential", &["kind", "eps", "radius", "kmax"]),
    ("operator", &["theta", "N"]),
    ("schedule", &["eps0", "J", "nmin"]),
    ("grid", &["emin", "emax", "points", "nmax", "theta_samples"]),
    ("tolerances", &["unitarity", "residual"]),
    ("output", &["dir", "seed"]),
    (
        "run",
        &[
            "E", "t", "t_list", "M_list", "datum", "tmax", "theta_sweep", "p", "zeta", "delta0", "dt", "sign",
            "fraction", "samples", "support",
        ],
    ),
];

fn known_key(key: &str) -> bool {
    key.split_once('.')
        .is_some_and(|(s, k)| SECTIONS.iter().any(|(sec, keys)| *sec == s && keys.contains(&k)))
}

/// Parses config text into `section.key → value`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value", no + 1)))?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{}.{}", section, k.trim()) };
        if !known_key(&key) {
            return Err(Error::Invalid(format!("config line {}: unknown key '{key}'", no + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialKind {
    /// `2ε cos θ₁`.
    Cosine,
    Zero,
    /// [`FourierSeries::random_analytic`] seeded from the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub eps: f64,
    pub radius: f64,
    pub kmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub emin: Option<f64>,
    pub emax: Option<f64>,
    pub points: Option<usize>,
    pub n_max: Option<usize>,
    pub theta_samples: usize,
}

/// Validated run configuration. Subcommand parameters stay as text in
/// `params` and are parsed when the subcommand runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// `None` selects the golden frequency.
    pub omega: Option<Vec<f64>>,
    pub gamma: f64,
    pub tau: f64,
    pub potential: PotentialSpec,
    pub theta: Option<Vec<f64>>,
    pub window: Option<usize>,
    /// Defaults to the potential size when that lies in `(0, 1)`.
    pub eps0: f64,
    pub j: usize,
    pub n_min: usize,
    pub grid: GridSpec,
    pub unitarity_tol: f64,
    pub residual_tol: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Invalid(format!("{key}: cannot parse '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Invalid(format!("{key} must be positive, got {x}")))
    }
}

impl RunConfig {
    /// Builds and validates a configuration; later entries win.
    pub fn from_entries<I: IntoIterator<Item = (String, String)>>(entries: I) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (k, v) in entries {
            if !known_key(&k) {
                return Err(Error::Invalid(format!("unknown key '{k}'")));
            }
            m.insert(k, v);
        }
        let get = |k: &str| m.get(k).map(String::as_str);
        let omega = match get("frequency.omega") {
            None | Some("golden") => None,
            Some(v) => Some(parse_list("frequency.omega", v)?),
        };
        let dim = omega.as_ref().map_or(1, Vec::len);
        let gamma = get("frequency.gamma").map_or(Ok(1e-2), |v| parse("frequency.gamma", v))?;
        let tau = get("frequency.tau").map_or(Ok(dim as f64), |v| parse("frequency.tau", v))?;
        let kind = match get("potential.kind").unwrap_or("cosine") {
            "cosine" => PotentialKind::Cosine,
            "zero" => PotentialKind::Zero,
            "random" => PotentialKind::Random,
            other => return Err(Error::Invalid(format!("potential.kind: unknown family '{other}'"))),
        };
        let eps: f64 = get("potential.eps").map_or(Ok(0.01), |v| parse("potential.eps", v))?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Invalid(format!("potential.eps must be non-negative, got {eps}")));
        }
        let potential = PotentialSpec {
            kind,
            eps,
            radius: positive("potential.radius", get("potential.radius").map_or(Ok(0.5), |v| parse("potential.radius", v))?)?,
            kmax: get("potential.kmax").map_or(Ok(4), |v| parse("potential.kmax", v))?,
        };
        let theta = get("operator.theta").map(|v| parse_list("operator.theta", v)).transpose()?;
        if let Some(th) = &theta {
            if th.len() != dim {
                return Err(Error::Invalid(format!("operator.theta needs {dim} components")));
            }
        }
        let window: Option<usize> = get("operator.N").map(|v| parse("operator.N", v)).transpose()?;
        if window.is_some_and(|n| n < 2) {
            return Err(Error::Invalid("operator.N must be at least 2".into()));
        }
        let eps0_default = if eps > 0.0 && eps < 1.0 && kind != PotentialKind::Zero { eps } else { 1e-3 };
        let eps0: f64 = get("schedule.eps0").map_or(Ok(eps0_default), |v| parse("schedule.eps0", v))?;
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::Invalid(format!("schedule.eps0 must lie in (0, 1), got {eps0}")));
        }
        let grid = GridSpec {
            emin: get("grid.emin").map(|v| parse("grid.emin", v)).transpose()?,
            emax: get("grid.emax").map(|v| parse("grid.emax", v)).transpose()?,
            points: get("grid.points").map(|v| parse("grid.points", v)).transpose()?,
            n_max: get("grid.nmax").map(|v| parse("grid.nmax", v)).transpose()?,
            theta_samples: get("grid.theta_samples").map_or(Ok(16), |v| parse("grid.theta_samples", v))?,
        };
        if grid.points.is_some_and(|p| p < 2) {
            return Err(Error::Invalid("grid.points must be at least 2".into()));
        }
        if let (Some(a), Some(b)) = (grid.emin, grid.emax) {
            if !(a < b) {
                return Err(Error::Invalid(format!("grid.emin = {a} must be below grid.emax = {b}")));
            }
        }
        if grid.theta_samples == 0 {
            return Err(Error::Invalid("grid.theta_samples must be positive".into()));
        }
        let unitarity_tol = get("tolerances.unitarity").map_or(Ok(1e-10), |v| parse("tolerances.unitarity", v))?;
        let residual_tol = get("tolerances.residual").map_or(Ok(1e-8), |v| parse("tolerances.residual", v))?;
        let cfg = RunConfig {
            omega,
            gamma: positive("frequency.gamma", gamma)?,
            tau,
            potential,
            theta,
            window,
            eps0,
            j: get("schedule.J").map_or(Ok(2), |v| parse("schedule.J", v))?,
            n_min: get("schedule.nmin").map_or(Ok(20), |v| parse("schedule.nmin", v))?,
            grid,
            unitarity_tol: positive("tolerances.unitarity", unitarity_tol)?,
            residual_tol: positive("tolerances.residual", residual_tol)?,
            out: PathBuf::from(get("output.dir").unwrap_or("qpdl-out")),
            seed: get("output.seed").map_or(Ok(0), |v| parse("output.seed", v))?,
            params: m.into_iter().filter(|(k, _)| k.starts_with("run.")).collect(),
        };
        Ok(cfg)
    }

    pub fn frequency(&self) -> Result<Frequency> {
        match &self.omega {
            None => Ok(Frequency::golden()),
            Some(w) => Frequency::new(w.clone(), self.gamma, self.tau),
        }
    }

    pub fn potential(&self, dim: usize) -> FourierSeries {
        let p = &self.potential;
        match p.kind {
            PotentialKind::Zero => FourierSeries::zero(dim),
            _ if p.eps == 0.0 => FourierSeries::zero(dim),
            PotentialKind::Cosine => FourierSeries::cosine(dim, p.eps),
            PotentialKind::Random => FourierSeries::random_analytic(dim, p.eps, p.radius, p.kmax, self.seed),
        }
    }

    pub fn schedule(&self) -> Result<KamSchedule> {
        schedule(self.eps0, self.j, self.n_min)
    }

    pub fn theta(&self, dim: usize) -> Vec<f64> {
        self.theta.clone().unwrap_or_else(|| vec![0.0; dim])
    }

    fn param(&self, key: &str) -> Option<&str> {
        self.params.get(&format!("run.{key}")).map(String::as_str)
    }

    fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.param(key).map_or(Ok(default), |v| parse(key, v))
    }

    fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.param(key).map_or(Ok(default), |v| parse(key, v))
    }

    fn param_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        self.param(key).map_or(Ok(default.to_vec()), |v| parse_list(key, v))
    }

    /// Configured energy grid, defaulting to the spectral enclosure plus `0.1`.
    fn energies(&self, v: &FourierSeries, default_points: usize) -> Result<Vec<f64>> {
        let b = 2.0 + v.sup_bound() + 0.1;
        let lo = self.grid.emin.unwrap_or(-b);
        let hi = self.grid.emax.unwrap_or(b);
        if !(lo < hi) {
            return Err(Error::Invalid(format!("empty energy range [{lo}, {hi}]")));
        }
        let n = self.grid.points.unwrap_or(default_points);
        Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }

    /// Configured window, or the smallest one that keeps evolution up to
    /// `t` off the boundary.
    fn window_for(&self, v: &FourierSeries, t: f64) -> usize {
        self.window.unwrap_or_else(|| (2.0 * (2.0 + v.sup_bound()) * t.abs()).ceil() as usize + 64)
    }
}

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// What a subcommand produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub artifacts: Vec<Artifact>,
    /// Human-readable summary for stdout.
    pub summary: String,
    /// Numerical-contract failure found after the artifacts were computed.
    pub violation: Option<Error>,
}

fn num(x: f64) -> String {
    if x != 0.0 && x.is_finite() && (x.abs() < 1e-4 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn csv(name: &str, columns: &[&str], rows: &[Vec<String>]) -> Artifact {
    let mut s = format!("# {}\n", columns.join(","));
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    Artifact { name: name.to_string(), contents: s }
}

fn json<T: Serialize>(name: &str, value: &T) -> Result<Artifact> {
    let mut contents = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    contents.push('\n');
    Ok(Artifact { name: name.to_string(), contents })
}

fn k_label(k: &[i64]) -> String {
    k.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

fn xi_parts(xi: &Xi) -> (f64, f64) {
    match *xi {
        Xi::Real(x) => (x, 0.0),
        Xi::Imaginary { re, im } => (re, im),
    }
}

#[derive(Debug, Parser)]
#[command(name = "qpdl", version, about = "Quasi-periodic lattice operators: spectra, reducibility and dispersive decay")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file of `key = value` lines under `[section]` headers.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `golden` or comma-separated frequency components.
    #[arg(long, global = true)]
    pub omega: Option<String>,
    /// Potential family: cosine, zero or random.
    #[arg(long, global = true)]
    pub potential: Option<String>,
    /// Phase, comma-separated.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// Override a config key, `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rotation number, its oscillation and the Lyapunov exponent on an energy grid.
    Rotno(RotnoArgs),
    /// Integrated density of states on an energy grid.
    Ids(IdsArgs),
    /// Step table of a KAM reduction at one energy.
    KamReduce(KamReduceArgs),
    /// Layer labels of the reduction over an energy grid.
    KamPartition(KamPartitionArgs),
    /// Frame bounds and round-trip error of the spectral transform.
    SpectralRoundtrip(RoundtripArgs),
    /// Direct spectral oscillatory integrals against their certified bounds.
    OscCheck(OscArgs),
    /// Linear evolution of one datum.
    Evolve(EvolveArgs),
    /// Sup-norm decay profile with power-law fit, optionally over a phase sweep.
    DecayFit(DecayArgs),
    /// Small-data NLS bootstrap experiment.
    Nls(NlsArgs),
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(String, String)> {
    v.as_ref().map(|x| (key.to_string(), x.to_string()))
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RotnoArgs {
    #[arg(long)]
    pub emin: Option<f64>,
    #[arg(long)]
    pub emax: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub nmax: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct IdsArgs {
    #[arg(long)]
    pub emin: Option<f64>,
    #[arg(long)]
    pub emax: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Window half-width.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "theta-samples")]
    pub theta_samples: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct KamReduceArgs {
    #[arg(long = "E")]
    pub e: Option<f64>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub nmin: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct KamPartitionArgs {
    #[arg(long)]
    pub emin: Option<f64>,
    #[arg(long)]
    pub emax: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    #[arg(long)]
    pub eps0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    /// Potential size.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    #[arg(long = "grid-points")]
    pub grid_points: Option<usize>,
    /// Half-width of the tabulated eigenfunctions.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct OscArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Comma-separated times.
    #[arg(long = "t-list", allow_hyphen_values = true)]
    pub t_list: Option<String>,
    /// Comma-separated shifts `M`.
    #[arg(long = "M-list", allow_hyphen_values = true)]
    pub m_list: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct EvolveArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    /// `delta` or `gaussian(w)`.
    #[arg(long)]
    pub datum: Option<String>,
    #[arg(long = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Number of log-spaced sample times in `[1, tmax]`.
    #[arg(long)]
    pub points: Option<usize>,
    /// Number of equally spaced phases `θ₁ = 2πi/n`.
    #[arg(long = "theta-sweep")]
    pub theta_sweep: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NlsArgs {
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// `‖φ‖₁`; defaults to a tenth of the measured `δ*`.
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rotno(_) => "rotno",
            Command::Ids(_) => "ids",
            Command::KamReduce(_) => "kam-reduce",
            Command::KamPartition(_) => "kam-partition",
            Command::SpectralRoundtrip(_) => "spectral-roundtrip",
            Command::OscCheck(_) => "osc-check",
            Command::Evolve(_) => "evolve",
            Command::DecayFit(_) => "decay-fit",
            Command::Nls(_) => "nls",
        }
    }

    /// Config keys set by the subcommand's flags.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let v = match self {
            Command::Rotno(a) => vec![
                opt("grid.emin", &a.emin),
                opt("grid.emax", &a.emax),
                opt("grid.points", &a.points),
                opt("grid.nmax", &a.nmax),
            ],
            Command::Ids(a) => vec![
                opt("grid.emin", &a.emin),
                opt("grid.emax", &a.emax),
                opt("grid.points", &a.points),
                opt("operator.N", &a.n),
                opt("grid.theta_samples", &a.theta_samples),
            ],
            Command::KamReduce(a) => vec![
                opt("run.E", &a.e),
                opt("schedule.J", &a.j),
                opt("schedule.eps0", &a.eps0),
                opt("schedule.nmin", &a.nmin),
            ],
            Command::KamPartition(a) => vec![
                opt("grid.emin", &a.emin),
                opt("grid.emax", &a.emax),
                opt("grid.points", &a.points),
                opt("schedule.J", &a.j),
                opt("schedule.eps0", &a.eps0),
            ],
            Command::SpectralRoundtrip(a) => vec![
                opt("potential.eps", &a.eps),
                opt("schedule.J", &a.j),
                opt("grid.points", &a.grid_points),
                opt("operator.N", &a.window),
            ],
            Command::OscCheck(a) => vec![
                opt("potential.eps", &a.eps),
                opt("schedule.J", &a.j),
                opt("run.t_list", &a.t_list),
                opt("run.M_list", &a.m_list),
            ],
            Command::Evolve(a) => vec![
                opt("potential.eps", &a.eps),
                opt("run.t", &a.t),
                opt("run.datum", &a.datum),
                opt("operator.N", &a.n),
            ],
            Command::DecayFit(a) => vec![
                opt("potential.eps", &a.eps),
                opt("run.tmax", &a.tmax),
                opt("grid.points", &a.points),
                opt("run.theta_sweep", &a.theta_sweep),
            ],
            Command::Nls(a) => vec![
                opt("run.p", &a.p),
                opt("run.zeta", &a.zeta),
                opt("run.delta0", &a.delta0),
                opt("run.tmax", &a.tmax),
                opt("run.dt", &a.dt),
                opt("potential.eps", &a.eps),
            ],
        };
        v.into_iter().flatten().collect()
    }
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut v: Vec<(String, String)> = [
            opt("output.dir", &self.out.as_ref().map(|p| p.display().to_string())),
            opt("output.seed", &self.seed),
            opt("frequency.omega", &self.omega),
            opt("potential.kind", &self.potential),
            opt("operator.theta", &self.theta),
        ]
        .into_iter()
        .flatten()
        .collect();
        for s in &self.set {
            let (k, val) =
                s.split_once('=').ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got '{s}'")))?;
            v.push((k.trim().to_string(), val.trim().to_string()));
        }
        Ok(v)
    }
}

/// Runs `command` under `cfg` without touching the filesystem.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<Report> {
    match command {
        Command::Rotno(_) => run_rotno(cfg),
        Command::Ids(_) => run_ids(cfg),
        Command::KamReduce(_) => run_kam_reduce(cfg),
        Command::KamPartition(_) => run_kam_partition(cfg),
        Command::SpectralRoundtrip(_) => run_roundtrip(cfg),
        Command::OscCheck(_) => run_osc_check(cfg),
        Command::Evolve(_) => run_evolve(cfg),
        Command::DecayFit(_) => run_decay_fit(cfg),
        Command::Nls(_) => run_nls(cfg),
    }
}

fn run_rotno(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let th = cfg.theta(f.dim());
    let es = cfg.energies(&v, 101)?;
    let n_max = cfg.grid.n_max.unwrap_or(100_000);
    let rows: Vec<[f64; 4]> = es
        .par_iter()
        .map(|&e| {
            let r = rotation_number(e, &v, &th, &f, n_max);
            [e, r.value, r.oscillation, lyapunov_exponent(e, &v, &th, &f, n_max)]
        })
        .collect();
    let worst = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|x| num(*x)).collect()).collect();
    Ok(Report {
        artifacts: vec![csv("rotno.csv", &["E", "rho", "oscillation", "lyapunov"], &text)],
        summary: format!("rotno: {} energies, n_max = {n_max}, largest oscillation {}", rows.len(), num(worst)),
        violation: None,
    })
}

fn run_ids(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let es = cfg.energies(&v, 101)?;
    let n = cfg.window.unwrap_or(500);
    let k = ids_grid(&es, &v, &f, n, cfg.grid.theta_samples)?;
    let text: Vec<Vec<String>> =
        es.iter().zip(&k).map(|(e, k)| vec![num(*e), num(*k), num(std::f64::consts::PI * k)]).collect();
    Ok(Report {
        artifacts: vec![csv("ids.csv", &["E", "ids", "pi_ids"], &text)],
        summary: format!("ids: {} energies, N = {n}, {} phases", es.len(), cfg.grid.theta_samples),
        violation: None,
    })
}

fn run_kam_reduce(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let s = cfg.schedule()?;
    let e = cfg.param_f64("E", 0.0)?;
    let mut rows = Vec::new();
    let mut table = format!(
        "{:>3} {:>12} {:>10} {:>14} {:>12} {:>14} {:>11}\n",
        "j", "norm_F", "resonance", "xi", "xi_imag", "rho", "residual"
    );
    let mut last = None;
    for j in 0..=cfg.j {
        let st = reduce(e, &v, &f, &s, j)?;
        let res = if j == 0 { "-".to_string() } else { k_label(&st.history[j - 1]) };
        let (xr, xim) = xi_parts(&st.xi);
        table.push_str(&format!(
            "{j:>3} {:>12.4e} {res:>10} {xr:>14.10} {xim:>12.4e} {:>14.10} {:>11.3e}\n",
            st.f_norm, st.rho, st.residual_norm
        ));
        rows.push(vec![
            j.to_string(),
            num(st.f_norm),
            res,
            num(xr),
            num(xim),
            num(st.rho),
            num(st.residual_norm),
        ]);
        last = Some(st);
    }
    let last = last.expect("at least one row");
    let violation = (last.residual_norm > cfg.residual_tol).then(|| {
        Error::Contract(format!(
            "conjugacy residual {} exceeds tolerance {}",
            num(last.residual_norm),
            num(cfg.residual_tol)
        ))
    });
    Ok(Report {
        artifacts: vec![csv(
            "kam_reduce.csv",
            &["j", "norm_F", "resonance", "xi", "xi_imag", "rho", "residual"],
            &rows,
        )],
        summary: format!("kam-reduce at E = {e}, eps0 = {}, J = {}\n{table}", cfg.eps0, cfg.j),
        violation,
    })
}

#[derive(Serialize)]
struct IntervalOut {
    lo: f64,
    hi: f64,
    /// `-1` where the reduction aborted.
    layer: i64,
    xi_monotone: bool,
}

#[derive(Serialize)]
struct PartitionOut {
    component_count: usize,
    component_bound: f64,
    aborted: usize,
    intervals: Vec<IntervalOut>,
}

fn layer_code(l: Option<usize>) -> i64 {
    l.map_or(-1, |x| x as i64)
}

fn run_kam_partition(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let s = cfg.schedule()?;
    let es = cfg.energies(&v, 201)?;
    let p = partition_spectrum(&v, &f, &s, cfg.j, &es)?;
    let rows: Vec<Vec<String>> = p
        .cells
        .iter()
        .map(|c| {
            let (xr, imag) = c.xi.map_or((f64::NAN, false), |x| (xi_parts(&x).0, x.is_imaginary()));
            vec![
                num(c.energy),
                layer_code(c.layer).to_string(),
                num(xr),
                num(c.rho.unwrap_or(f64::NAN)),
                u8::from(imag).to_string(),
            ]
        })
        .collect();
    let aborted = p.cells.iter().filter(|c| c.layer.is_none()).count();
    let out = PartitionOut {
        component_count: p.component_count,
        component_bound: p.component_bound,
        aborted,
        intervals: p
            .intervals
            .iter()
            .map(|i| IntervalOut { lo: i.lo, hi: i.hi, layer: layer_code(i.layer), xi_monotone: i.xi_monotone })
            .collect(),
    };
    Ok(Report {
        artifacts: vec![
            csv("kam_partition.csv", &["E", "layer", "xi", "rho_J", "alpha_imag_flag"], &rows),
            json("kam_partition.json", &out)?,
        ],
        summary: format!(
            "kam-partition: {} energies, {} intervals, {aborted} aborted reductions",
            es.len(),
            p.component_count
        ),
        violation: None,
    })
}

#[derive(Serialize)]
struct RoundtripOut {
    grid_points: usize,
    window: usize,
    frame_lower: f64,
    frame_upper: f64,
    /// `max ‖inverse(S q) − q‖∞ / ‖q‖∞` over the random data.
    roundtrip_error: f64,
    /// Largest fine-versus-coarse grid discrepancy of the inverse.
    quadrature_estimate: f64,
    missing: usize,
    missing_weight: f64,
}

fn run_roundtrip(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let s = cfg.schedule()?;
    let th = cfg.theta(f.dim());
    let points = cfg.grid.points.unwrap_or(2000);
    let n = cfg.window.unwrap_or(40);
    let count = cfg.param_usize("samples", 10)?;
    let support = cfg.param_usize("support", 10)?;
    if count == 0 {
        return Err(Error::Invalid("run.samples must be positive".into()));
    }
    let grid = SpectralGrid::build(&v, &f, SpectralGrid::uniform_energies(&v, points, 0.01), cfg.grid.n_max.unwrap_or(100_000))?;
    let table = SpectralTable::build(&v, &f, &th, &s, cfg.j, grid, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<LatticeState> = (0..count).map(|_| LatticeState::random(n, support, &mut rng)).collect();
    let (lo, hi) = frame_bounds(&data, &table)?;
    let mut err: f64 = 0.0;
    let mut est: f64 = 0.0;
    for q in &data {
        let g = table.transform(q);
        let (back, e) = inverse_transform(&g, &table, n)?;
        err = err.max(back.max_abs_diff(q) / q.linf_norm());
        est = est.max(e);
    }
    let g = table.transform(&data[0]);
    let grid = table.grid();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            vec![
                num(grid.energies()[i]),
                num(grid.rho[i]),
                num(grid.rho_prime[i]),
                num(g.g1[i].re),
                num(g.g1[i].im),
                num(g.g2[i].re),
                num(g.g2[i].im),
            ]
        })
        .collect();
    let out = RoundtripOut {
        grid_points: points,
        window: n,
        frame_lower: lo,
        frame_upper: hi,
        roundtrip_error: err,
        quadrature_estimate: est,
        missing: table.missing.len(),
        missing_weight: table.missing_weight,
    };
    Ok(Report {
        artifacts: vec![
            csv("spectral_roundtrip.csv", &["E", "rho", "rho_prime", "g1_re", "g1_im", "g2_re", "g2_im"], &rows),
            json("spectral_roundtrip.json", &out)?,
        ],
        summary: format!(
            "spectral-roundtrip: frame bounds [{}, {}], round-trip error {} over {count} data",
            num(lo),
            num(hi),
            num(err)
        ),
        violation: None,
    })
}

fn run_osc_check(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let s = cfg.schedule()?;
    let ts = cfg.param_list("t_list", &[0.0, 1.0, 10.0, 100.0])?;
    let ms = cfg.param_list("M_list", &[0.0, 2.0])?;
    let es = SpectralGrid::uniform_energies(&v, cfg.grid.points.unwrap_or(2000), 0.01);
    let grid = SpectralGrid::build(&v, &f, es.clone(), cfg.grid.n_max.unwrap_or(20_000))?;
    let partition = partition_spectrum(&v, &f, &s, cfg.j, &es)?;
    let ctx = BoundContext { partition: &partition, schedule: &s, j: cfg.j, samples: DEFAULT_SAMPLES };
    let h = vec![1.0; grid.len()];
    let mut rows = Vec::new();
    let mut violation = None;
    for &t in &ts {
        for &m in &ms {
            let r = spectral_osc_integral(&h, m, t, &grid, Some(ctx))?;
            let b = r.bound.expect("bound requested");
            let bad = r.direct.norm() > b.total;
            if bad && violation.is_none() {
                violation = Some(Error::Contract(format!(
                    "certified bound: |I_M(t)| = {} > {} at t = {t}, M = {m}",
                    num(r.direct.norm()),
                    num(b.total)
                )));
            }
            rows.push(vec![num(t), num(m), num(r.direct.re), num(r.direct.im), num(b.total), u8::from(bad).to_string()]);
        }
    }
    Ok(Report {
        artifacts: vec![csv("osc_check.csv", &["t", "M", "direct_re", "direct_im", "bound", "violated_flag"], &rows)],
        summary: format!("osc-check: {} (t, M) pairs on {} energies, amplitude h = 1", rows.len(), grid.len()),
        violation,
    })
}

fn parse_datum(spec: &str, n: usize) -> Result<LatticeState> {
    let s = spec.trim();
    if s == "delta" {
        return Ok(LatticeState::delta(n));
    }
    if let Some(w) = s.strip_prefix("gaussian(").and_then(|r| r.strip_suffix(')')) {
        let w: f64 = parse("run.datum", w)?;
        return Ok(LatticeState::gaussian(n, positive("gaussian width", w)?));
    }
    Err(Error::Invalid(format!("run.datum: expected delta or gaussian(w), got '{spec}'")))
}

#[derive(Serialize)]
struct EvolveOut {
    t: f64,
    half_width: usize,
    sup_norm: f64,
    l2_norm: f64,
    /// `|‖q(t)‖₂ − ‖φ‖₂| / ‖φ‖₂`.
    l2_drift: f64,
    initial_l1: f64,
}

fn run_evolve(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let th = cfg.theta(f.dim());
    let t = cfg.param_f64("t", 100.0)?;
    let n = cfg.window_for(&v, t);
    let phi = parse_datum(cfg.param("datum").unwrap_or("delta"), n)?;
    let q = Propagator::new(&v, &th, &f, n).evolve(&phi, t)?;
    let drift = (q.l2_norm() - phi.l2_norm()).abs() / phi.l2_norm();
    let rows: Vec<Vec<String>> = q
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| vec![(i as i64 - n as i64).to_string(), num(z.re), num(z.im), num(z.norm())])
        .collect();
    let out = EvolveOut { t, half_width: n, sup_norm: q.linf_norm(), l2_norm: q.l2_norm(), l2_drift: drift, initial_l1: phi.l1_norm() };
    let violation = (drift > cfg.unitarity_tol).then(|| {
        Error::Contract(format!("unitarity: relative l2 drift {} exceeds {}", num(drift), num(cfg.unitarity_tol)))
    });
    Ok(Report {
        artifacts: vec![csv("evolve.csv", &["n", "re", "im", "abs"], &rows), json("evolve.json", &out)?],
        summary: format!("evolve: t = {t}, N = {n}, sup {}, l2 drift {}", num(out.sup_norm), num(drift)),
        violation,
    })
}

#[derive(Serialize)]
struct PhaseFit {
    theta: f64,
    slope: f64,
    slope_band: f64,
    boundary_reach: bool,
}

#[derive(Serialize)]
struct DecayOut {
    /// Mean of the per-phase slopes.
    slope: f64,
    slope_min: f64,
    slope_max: f64,
    half_width: usize,
    fits: Vec<PhaseFit>,
}

fn run_decay_fit(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let tmax = cfg.param_f64("tmax", 1000.0)?;
    if !(tmax > 10.0) {
        return Err(Error::Invalid("run.tmax must exceed 10 (the fit uses t >= 10)".into()));
    }
    let points = cfg.grid.points.unwrap_or(24);
    let sweep = cfg.param_usize("theta_sweep", 1)?;
    if sweep == 0 {
        return Err(Error::Invalid("run.theta_sweep must be positive".into()));
    }
    let n = cfg.window_for(&v, tmax);
    let times = log_times(1.0, tmax, points);
    let base = cfg.theta(f.dim());
    let phases: Vec<Vec<f64>> = (0..sweep)
        .map(|i| {
            let mut th = base.clone();
            if sweep > 1 {
                th[0] = std::f64::consts::TAU * i as f64 / sweep as f64;
            }
            th
        })
        .collect();
    let phi = LatticeState::delta(n);
    let profiles: Vec<_> = phases
        .par_iter()
        .map(|th| decay_profile(&phi, &times, &v, th, &f))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (th, p) in phases.iter().zip(&profiles) {
        for i in 0..p.times.len() {
            rows.push(vec![num(th[0]), num(p.times[i]), num(p.sup_norms[i]), num(p.l2_norms[i])]);
        }
        fits.push(PhaseFit { theta: th[0], slope: p.slope, slope_band: p.slope_band, boundary_reach: p.boundary_reach });
    }
    let slopes: Vec<f64> = fits.iter().map(|x| x.slope).collect();
    let out = DecayOut {
        slope: slopes.iter().sum::<f64>() / slopes.len() as f64,
        slope_min: slopes.iter().copied().fold(f64::INFINITY, f64::min),
        slope_max: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        half_width: n,
        fits,
    };
    Ok(Report {
        artifacts: vec![csv("decay_fit.csv", &["theta", "t", "sup_norm", "l2_norm"], &rows), json("decay_fit.json", &out)?],
        summary: format!(
            "decay-fit: {sweep} phase(s), slope {} (range [{}, {}])",
            num(out.slope),
            num(out.slope_min),
            num(out.slope_max)
        ),
        violation: None,
    })
}

#[derive(Serialize)]
struct NlsOut {
    p: f64,
    zeta: f64,
    mu: f64,
    k1: f64,
    c1: f64,
    delta_star: f64,
    delta0: f64,
    passes: bool,
    /// `sup ⟨t⟩^ζ‖q(t)‖∞ / (4K₁δ₀)`.
    margin: f64,
    l2_drift: f64,
    chain_ok: bool,
    boundary_reach: bool,
    half_width: usize,
}

fn run_nls(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.frequency()?;
    let v = cfg.potential(f.dim());
    let th = cfg.theta(f.dim());
    let d = BootstrapSetup::default();
    let delta0 = cfg.param("delta0").map(|x| parse::<f64>("run.delta0", x)).transpose()?;
    let setup = BootstrapSetup {
        p: cfg.param_f64("p", d.p)?,
        sign: cfg.param_f64("sign", d.sign)?,
        zeta: cfg.param_f64("zeta", d.zeta)?,
        t_max: positive("run.tmax", cfg.param_f64("tmax", d.t_max)?)?,
        dt: positive("run.dt", cfg.param_f64("dt", d.dt)?)?,
        fraction: positive("run.fraction", cfg.param_f64("fraction", d.fraction)?)?,
        delta0: delta0.map(|x| positive("run.delta0", x)).transpose()?,
        k1_spacing: d.k1_spacing,
    };
    let n = cfg.window_for(&v, setup.t_max);
    let rep = bootstrap_experiment(&LatticeState::delta(n), &setup, &v, &th, &f)?;
    let tr = &rep.run.trajectory;
    let weighted = rep.run.weighted_sup();
    let rows: Vec<Vec<String>> = (0..tr.times.len())
        .map(|i| vec![num(tr.times[i]), num(tr.sup_norms[i]), num(tr.l2_norms[i]), num(weighted[i])])
        .collect();
    let out = NlsOut {
        p: rep.p,
        zeta: rep.zeta,
        mu: rep.mu,
        k1: rep.k1,
        c1: rep.c1,
        delta_star: rep.delta_star,
        delta0: rep.delta0,
        passes: rep.passes,
        margin: rep.margin,
        l2_drift: rep.l2_drift,
        chain_ok: rep.chain_ok,
        boundary_reach: rep.boundary_reach,
        half_width: n,
    };
    let violation = (!rep.passes).then(|| {
        Error::Contract(format!("bootstrap: sup <t>^zeta |q|_inf reaches {} x 4 K1 delta0", num(rep.margin)))
    });
    Ok(Report {
        artifacts: vec![csv("nls.csv", &["t", "sup_norm", "l2_norm", "weighted_sup"], &rows), json("nls.json", &out)?],
        summary: format!(
            "nls: K1 = {}, C1 = {}, delta* = {}, delta0 = {}, margin {}, {}",
            num(rep.k1),
            num(rep.c1),
            num(rep.delta_star),
            num(rep.delta0),
            num(rep.margin),
            if rep.passes { "bootstrap holds" } else { "bootstrap FAILS" }
        ),
        violation,
    })
}

/// Writes the artifacts into `dir`, creating it if needed.
pub fn write_artifacts(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in &report.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("QPDL_THREADS") else {
        return Ok(());
    };
    let n: usize = parse("QPDL_THREADS", &v)?;
    if n == 0 {
        return Err(Error::Invalid("QPDL_THREADS must be positive".into()));
    }
    // a pool built earlier in the same process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut entries: Vec<(String, String)> = match &cli.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
            parse_config(&text)?.into_iter().collect()
        }
        None => Vec::new(),
    };
    entries.extend(cli.command.overrides());
    entries.extend(cli.common.overrides()?);
    RunConfig::from_entries(entries)
}

/// Full front end: parses `args`, runs, writes artifacts and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| load(&cli)).and_then(|cfg| {
        let report = run(&cli.command, &cfg)?;
        write_artifacts(&report, &cfg.out)?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            let _ = writeln!(std::io::stdout(), "{}", report.summary);
            match report.violation {
                Some(e) => {
                    eprintln!("qpdl {}: {e}", cli.command.name());
                    3
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("qpdl {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_and_comments() {
        let m = parse_config("# run\n[schedule]\neps0 = 1e-3 # small\nJ=2\n\n[output]\nseed = 7\n").unwrap();
        assert_eq!(m["schedule.eps0"], "1e-3");
        assert_eq!(m["schedule.J"], "2");
        let cfg = RunConfig::from_entries(m).unwrap();
        assert_eq!((cfg.eps0, cfg.j, cfg.seed), (1e-3, 2, 7));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(parse_config("[schedule]\nfoo = 1\n").is_err());
        assert!(parse_config("no equals sign\n").is_err());
        let bad = |k: &str, v: &str| RunConfig::from_entries([(k.to_string(), v.to_string())]).is_err();
        assert!(bad("operator.N", "-5"));
        assert!(bad("schedule.eps0", "2"));
        assert!(bad("tolerances.unitarity", "0"));
        assert!(bad("potential.kind", "square"));
        assert!(bad("operator.theta", "0.1,0.2"));
    }

    #[test]
    fn later_entries_override_earlier_ones() {
        let cfg = RunConfig::from_entries([
            ("potential.eps".to_string(), "0.05".to_string()),
            ("potential.eps".to_string(), "0.001".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.potential.eps, 1e-3);
        assert_eq!(cfg.eps0, 1e-3);
    }

    #[test]
    fn datum_parsing() {
        assert_eq!(parse_datum("delta", 5).unwrap(), LatticeState::delta(5));
        assert!((parse_datum("gaussian(2.5)", 20).unwrap().l2_norm() - 1.0).abs() < 1e-14);
        assert!(parse_datum("gaussian(-1)", 20).is_err());
        assert!(parse_datum("box", 20).is_err());
    }

    #[test]
    fn number_format_is_round_trip() {
        for x in [0.0, 1.5, -2.25e-7, 3.0e20, 0.1 + 0.2] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
