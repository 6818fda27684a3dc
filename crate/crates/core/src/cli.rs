//! Command-line front end: presets, subcommands, CSV/JSON output and run
//! manifests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::{continue_branches, ContinuationOptions, CouplingSchedule, HappFamily, SampledFamily};
use crate::error::Error;
use crate::integrate::{burst_metrics, find_limit_cycle, speed_sweep, CycleOptions, BURST_GAP_MS, SPIKE_THRESHOLD};
use crate::network::{
    build_network, classify_gait, phase_offsets, simulate_gait, CouplingStrengths, GaitRunOptions, BACKWARD_RUN_VOLTAGES,
    DEFAULT_GAIT_TOL, DELTA_RUN_VOLTAGES, FITTED_RUN_VOLTAGES, IEXT_RUN_VOLTAGES, LEG_NAMES, MIN_CYCLES, N_CELLS,
};
use crate::neuron::{NeuronParams, NeuronState, ParamPreset, SpeedParam};
use crate::phase::{phase_model, solve_eta, Coupling, CouplingFunction, Fourier2, FourierCoefficients, HAPP_DOMAIN};
use crate::torus::{find_fixed_points, flow_trajectory, index_sum, nullclines, ClassCounts, TorusSystem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Every default the front end uses. Each one has a flag that overrides it.
pub mod defaults {
    pub const OUT_DIR: &str = "out";
    /// Integration step (ms), `--dt`.
    pub const DT: f64 = crate::integrate::DEFAULT_DT;
    /// Sweep points, `sweep --n`.
    pub const SWEEP_N: usize = 20;
    /// Speed values for `eta --n`.
    pub const ETA_N: usize = 12;
    /// Network run length (ms), `--span`.
    pub const SPAN_MS: f64 = 5000.0;
    /// Fraction of the run discarded before gait analysis, `--window-start`.
    pub const WINDOW_START_FRAC: f64 = 0.75;
    /// Seed grid per torus axis, `--grid`.
    pub const TORUS_GRID: usize = crate::torus::DEFAULT_SEED_GRID;
    /// Marching-squares resolution, `--nullcline-res`.
    pub const NULLCLINE_RES: usize = 256;
    /// Torus flow length and step, `--traj-span`, `--traj-dt`.
    pub const TRAJ_SPAN: f64 = 200.0;
    pub const TRAJ_DT: f64 = 0.01;
    /// Continuation steps, `--steps`.
    pub const STEPS: usize = crate::continuation::DEFAULT_STEPS;
    /// Sampled coupling functions along a continuation, `--nodes`.
    pub const BN_NODES: usize = 9;
    pub const NEURON_PRESET: &str = "delta-control";
    pub const NETWORK_COUPLINGS: &str = "fig5";
    pub const TORUS_COUPLINGS: &str = "sec34";
}

/// Named coupling strengths with their frequencies and speed settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingPreset {
    pub name: &'static str,
    pub c: [f64; 7],
    /// Coupled frequency reported with the fit (Hz).
    pub omega_hat: Option<f64>,
    /// Neuron preset and speed value the strengths were paired with.
    pub neuron: Option<(&'static str, f64)>,
    pub source: &'static str,
}

pub const COUPLING_PRESETS: [CouplingPreset; 7] = [
    CouplingPreset { name: "fig5", c: [1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 2.0], omega_hat: None, neuron: None, source: "balanced demonstration couplings for the gait-transition runs" },
    CouplingPreset { name: "sec34", c: [1.0, 2.5, 1.5, 5.0, 7.5, 7.0, 1.0], omega_hat: None, neuron: None, source: "balanced torus example with two stable tetrapods" },
    CouplingPreset {
        name: "table2-slow",
        c: [0.3614, 0.1478, 0.1780, 0.1837, 0.2509, 0.3409, 0.1495],
        omega_hat: Some(9.92),
        neuron: Some(("iext-control", 35.95)),
        source: "maximum-likelihood fit to tethered-fly touchdowns, slow",
    },
    CouplingPreset {
        name: "table2-medium",
        c: [0.2225, 0.6255, 0.4715, 0.1436, 0.3895, 0.7921, 0.2964],
        omega_hat: Some(12.48),
        neuron: Some(("iext-control", 36.85)),
        source: "maximum-likelihood fit to tethered-fly touchdowns, medium",
    },
    CouplingPreset {
        name: "table2-fast",
        c: [0.0580, 0.8608, 0.6726, 0.0470, 0.4294, 1.1498, 0.8500],
        omega_hat: Some(15.52),
        neuron: Some(("iext-control", 37.65)),
        source: "maximum-likelihood fit to tethered-fly touchdowns, fast",
    },
    CouplingPreset {
        name: "table3-medium",
        c: [0.2635, 1.2860, 2.9480, 1.3185, 1.3885, 2.5025, 1.2265],
        omega_hat: Some(12.23),
        neuron: Some(("delta-control", 0.014)),
        source: "Kalman-filter fit to free-walking fly touchdowns, medium",
    },
    CouplingPreset {
        name: "table3-fast",
        c: [2.9145, 2.5610, 2.6160, 2.9135, 5.1800, 5.4770, 2.6165],
        omega_hat: Some(15.65),
        neuron: Some(("delta-control", 0.03)),
        source: "Kalman-filter fit to free-walking fly touchdowns, fast",
    },
];

pub fn coupling_preset(name: &str) -> Option<&'static CouplingPreset> {
    COUPLING_PRESETS.iter().find(|p| p.name == name)
}

/// Parse `key = value` lines where every key must appear exactly once.
fn parse_keyed(text: &str, keys: &[&str]) -> Result<Vec<f64>, Error> {
    let mut vals = vec![None; keys.len()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
        let k = k.trim();
        let slot = keys.iter().position(|x| *x == k).ok_or_else(|| Error::Parse { line: i + 1, msg: format!("unknown key '{k}'") })?;
        let x: f64 = v.trim().parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number for {k}: '{}'", v.trim()) })?;
        if vals[slot].replace(x).is_some() {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate key '{k}'") });
        }
    }
    vals.iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| Error::Parse { line: text.lines().count(), msg: format!("missing key '{k}'") }))
        .collect()
}

/// Coupling preset name, or a file with `c1 = ...` through `c7 = ...`.
pub fn load_couplings(spec: &str) -> Result<CouplingStrengths, Error> {
    if let Some(p) = coupling_preset(spec) {
        return CouplingStrengths::new(p.c);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::UnknownPreset(spec.to_string()));
    }
    let v = parse_keyed(&fs::read_to_string(path)?, &["c1", "c2", "c3", "c4", "c5", "c6", "c7"])?;
    CouplingStrengths::new([v[0], v[1], v[2], v[3], v[4], v[5], v[6]])
}

/// Neuron preset name, or a parameter file. A file takes its speed parameter
/// from `speed` and the matching built-in sweep range.
pub fn load_neuron_preset(spec: &str, speed: SpeedParam) -> Result<ParamPreset, Error> {
    if let Some(p) = ParamPreset::builtin().into_iter().find(|p| p.name == spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::UnknownPreset(spec.to_string()));
    }
    let params = NeuronParams::parse_config(&fs::read_to_string(path)?)?;
    let range = match speed {
        SpeedParam::Delta => ParamPreset::delta_control().sweep_range,
        SpeedParam::IExt => ParamPreset::iext_control().sweep_range,
    };
    Ok(ParamPreset { name: spec.to_string(), params, sweep_param: speed, sweep_range: range })
}

/// Initial voltages by name (`iext`, `delta`, `backward`, `fitted`) or a
/// file with `v1 = ...` through `v6 = ...`.
pub fn load_ics(spec: &str) -> Result<[f64; N_CELLS], Error> {
    match spec {
        "iext" => Ok(IEXT_RUN_VOLTAGES),
        "delta" => Ok(DELTA_RUN_VOLTAGES),
        "backward" => Ok(BACKWARD_RUN_VOLTAGES),
        "fitted" => Ok(FITTED_RUN_VOLTAGES),
        _ => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(Error::UnknownPreset(spec.to_string()));
            }
            let v = parse_keyed(&fs::read_to_string(path)?, &["v1", "v2", "v3", "v4", "v5", "v6"])?;
            Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Speed {
    Delta,
    Iext,
}

impl From<Speed> for SpeedParam {
    fn from(s: Speed) -> Self {
        match s {
            Speed::Delta => SpeedParam::Delta,
            Speed::Iext => SpeedParam::IExt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum HSource {
    /// Computed from the bursting cell.
    Bn,
    /// Published order-two surrogate (delta only).
    App,
    /// Samples read from `--h-file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CellArgs {
    /// Built-in preset (delta-control, iext-control) or parameter file.
    #[arg(long, default_value = defaults::NEURON_PRESET)]
    pub preset: String,
    /// Speed parameter of a parameter file.
    #[arg(long, value_enum, default_value = "delta")]
    pub speed: Speed,
    #[arg(long, default_value_t = defaults::DT)]
    pub dt: f64,
}

impl CellArgs {
    fn preset(&self) -> Result<ParamPreset, Error> {
        load_neuron_preset(&self.preset, self.speed.into())
    }

    fn cycle_options(&self) -> Result<CycleOptions, Error> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("--dt must be positive, got {}", self.dt)));
        }
        Ok(CycleOptions::default().with_dt(self.dt))
    }
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Limit cycle and burst metrics of one cell.
    SingleCell {
        #[command(flatten)]
        cell: CellArgs,
        /// Speed value; the preset's own value if omitted.
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Frequency, duty cycle and swing across the speed range.
    Sweep {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, default_value_t = defaults::SWEEP_N)]
        n: usize,
    },
    /// Six coupled cells: swing raster and gait label.
    Network {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        xi: f64,
        #[arg(long, default_value = defaults::NETWORK_COUPLINGS)]
        couplings: String,
        /// iext, delta, backward, fitted, or a file of v1..v6; follows the
        /// speed parameter if omitted.
        #[arg(long)]
        ics: Option<String>,
        #[arg(long, default_value_t = defaults::SPAN_MS)]
        span: f64,
        /// Start of the analysis window (ms); the last quarter if omitted.
        #[arg(long)]
        window_start: Option<f64>,
    },
    /// Infinitesimal phase response curve.
    Iprc {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        xi: f64,
    },
    /// Averaged coupling function.
    Hfun {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        xi: f64,
    },
    /// Transition shift across the speed range.
    Eta {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value = "bn")]
        hsource: HSource,
        #[arg(long, default_value_t = defaults::ETA_N)]
        n: usize,
    },
    /// Order-two Fourier coefficients of the coupling function.
    Fourier {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        xi: f64,
        #[arg(long, value_enum, default_value = "bn")]
        hsource: HSource,
    },
    /// Fixed points, nullclines and optional flow on the torus.
    Torus {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value = "app")]
        hsource: HSource,
        /// Samples `theta_frac,H` for `--hsource file`.
        #[arg(long)]
        h_file: Option<PathBuf>,
        #[arg(long)]
        xi: Option<f64>,
        /// Reduced system with this alpha instead of `--couplings`.
        #[arg(long, conflicts_with = "couplings")]
        alpha: Option<f64>,
        #[arg(long)]
        couplings: Option<String>,
        #[arg(long, default_value_t = defaults::TORUS_GRID)]
        grid: usize,
        #[arg(long, default_value_t = defaults::NULLCLINE_RES)]
        nullcline_res: usize,
        /// Start `theta1,theta2` of a flow trajectory.
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long, default_value_t = defaults::TRAJ_SPAN)]
        traj_span: f64,
        #[arg(long, default_value_t = defaults::TRAJ_DT)]
        traj_dt: f64,
    },
    /// Fixed-point branches and bifurcation events along the speed range.
    Bifurcate {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value = "app")]
        hsource: HSource,
        #[arg(long, conflicts_with = "couplings")]
        alpha: Option<f64>,
        #[arg(long)]
        couplings: Option<String>,
        /// `lo:hi`.
        #[arg(long, value_parser = parse_range)]
        xi_range: (f64, f64),
        #[arg(long, default_value_t = defaults::STEPS)]
        steps: usize,
        /// Cell reductions sampled across the range for `--hsource bn`.
        #[arg(long, default_value_t = defaults::BN_NODES)]
        nodes: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SingleCell { .. } => "single-cell",
            Command::Sweep { .. } => "sweep",
            Command::Network { .. } => "network",
            Command::Iprc { .. } => "iprc",
            Command::Hfun { .. } => "hfun",
            Command::Eta { .. } => "eta",
            Command::Fourier { .. } => "fourier",
            Command::Torus { .. } => "torus",
            Command::Bifurcate { .. } => "bifurcate",
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(hi > lo) {
        return Err(format!("range {s} is empty"));
    }
    Ok((lo, hi))
}

fn parse_pair(s: &str) -> Result<[f64; 2], Error> {
    let bad = || Error::InvalidParameter(format!("expected theta1,theta2, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "hexapod-cpg", version, about = "Bursting-neuron CPG model of insect gaits and its phase reduction")]
pub struct Cli {
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all cores if omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Re-run the command recorded in a manifest.
    #[arg(long, global = true)]
    pub from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub command: Command,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    /// The pipeline is deterministic; kept for format stability.
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Either a bad invocation or a failed computation.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownPreset(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            e => Failure::Numeric(e),
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Outputs { dir, files: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Error> {
        write_atomic(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv<I: IntoIterator<Item = String>>(header: &str, rows: I) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Coupling function from either source, behind one type.
#[derive(Debug, Clone)]
pub enum AnyH {
    App(Fourier2),
    Sampled(CouplingFunction),
}

impl Coupling for AnyH {
    fn h(&self, theta: f64) -> f64 {
        match self {
            AnyH::App(f) => f.h(theta),
            AnyH::Sampled(f) => f.h(theta),
        }
    }
    fn dh(&self, theta: f64) -> f64 {
        match self {
            AnyH::App(f) => f.dh(theta),
            AnyH::Sampled(f) => f.dh(theta),
        }
    }
}

fn read_h_file(path: &Path) -> Result<CouplingFunction, Error> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E')) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let h = cols.last().and_then(|c| c.trim().parse::<f64>().ok()).ok_or_else(|| Error::Parse { line: i + 1, msg: format!("bad row '{line}'") })?;
        values.push(h);
    }
    CouplingFunction::from_samples(values, 1.0, None)
}

fn need_xi(xi: Option<f64>, what: &str) -> Result<f64, Failure> {
    xi.ok_or_else(|| Failure::Usage(format!("--xi is required for {what}")))
}

fn coupling_at(cell: &CellArgs, hsource: HSource, h_file: Option<&Path>, xi: Option<f64>) -> Result<AnyH, Failure> {
    Ok(match hsource {
        HSource::App => AnyH::App(FourierCoefficients::PUBLISHED.at(need_xi(xi, "--hsource app")?)),
        HSource::File => {
            let path = h_file.ok_or_else(|| Failure::Usage("--h-file is required for --hsource file".into()))?;
            AnyH::Sampled(read_h_file(path)?)
        }
        HSource::Bn => {
            let xi = need_xi(xi, "--hsource bn")?;
            let preset = cell.preset()?;
            AnyH::Sampled(phase_model(&preset.at(xi), Some(xi), &cell.cycle_options()?)?.h)
        }
    })
}

fn schedule(alpha: Option<f64>, couplings: Option<&str>) -> Result<CouplingSchedule, Failure> {
    match alpha {
        Some(a) if !(a > 0.0 && a < 1.0) => Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {a}"))),
        Some(a) => Ok(CouplingSchedule::Alpha(a)),
        None => Ok(CouplingSchedule::Fixed(load_couplings(couplings.unwrap_or(defaults::TORUS_COUPLINGS))?)),
    }
}

fn run_command(cmd: &Command, out: &mut Outputs) -> Result<(), Failure> {
    match cmd {
        Command::SingleCell { cell, xi } => {
            let preset = cell.preset()?;
            let xi = xi.unwrap_or_else(|| preset.sweep_param.get(&preset.params));
            let lc = find_limit_cycle(&preset.at(xi), NeuronState::canonical_initial(), &cell.cycle_options()?)?;
            let m = burst_metrics(&lc, SPIKE_THRESHOLD, BURST_GAP_MS)?;
            out.write(
                "single_cell.csv",
                &csv(SWEEP_HEADER, [format!("{xi},{},{},{},{},{}", m.frequency_hz, m.duty_cycle, m.swing, m.stance, lc.period)]),
            )?;
            let dt = lc.grid_dt();
            let rows = lc.samples.iter().enumerate().map(|(k, x)| format!("{},{},{},{},{}", k as f64 * dt, x[0], x[1], x[2], x[3]));
            out.write("orbit.csv", &csv("t,v,m,w,s", rows))?;
        }
        Command::Sweep { cell, n } => {
            if *n == 0 {
                return Err(Failure::Usage("--n must be positive".into()));
            }
            let rows = speed_sweep(&cell.preset()?, *n, &cell.cycle_options()?)?;
            let lines = rows.iter().map(|r| format!("{},{},{},{},{},{}", r.xi, r.freq_hz, r.duty, r.swing_ms, r.stance_ms, r.period_ms));
            out.write("sweep.csv", &csv(SWEEP_HEADER, lines))?;
        }
        Command::Network { cell, xi, couplings, ics, span, window_start } => {
            let preset = cell.preset()?;
            let c = load_couplings(couplings)?;
            let ics_name = ics.clone().unwrap_or_else(|| match preset.sweep_param {
                SpeedParam::Delta => "delta".into(),
                SpeedParam::IExt => "iext".into(),
            });
            let v0 = load_ics(&ics_name)?;
            let net = build_network(&preset.at(*xi), &c)?;
            let mut opts = GaitRunOptions::new(*span).with_dt(cell.dt);
            if let Some(t) = window_start {
                opts = opts.with_window_start(*t);
            } else {
                opts = opts.with_window_start(defaults::WINDOW_START_FRAC * span);
            }
            let raster = simulate_gait(&net, &net.initial_state(&v0), &opts)?;
            let rows = raster.legs.iter().enumerate().flat_map(|(leg, l)| l.iter().map(move |(a, b)| format!("{},{a},{b}", LEG_NAMES[leg])));
            out.write("raster.csv", &csv("leg,t_on,t_off", rows))?;
            let label = classify_gait(&raster, DEFAULT_GAIT_TOL);
            let offsets = phase_offsets(&raster, MIN_CYCLES);
            out.json(
                "gait.json",
                &serde_json::json!({
                    "label": label.name(),
                    "eta_frac": label.eta_frac(),
                    "offsets": offsets.map(|o| o.0),
                    "period_ms": offsets.map(|o| o.1),
                    "window": raster.window,
                }),
            )?;
        }
        Command::Iprc { cell, xi } => {
            let m = phase_model(&cell.preset()?.at(*xi), Some(*xi), &cell.cycle_options()?)?;
            let dt = m.prc.grid_dt();
            let rows = m.prc.samples.iter().enumerate().map(|(k, z)| format!("{},{},{},{},{}", k as f64 * dt, z[0], z[1], z[2], z[3]));
            out.write("iprc.csv", &csv("t,Z_v,Z_m,Z_w,Z_s", rows))?;
        }
        Command::Hfun { cell, xi } => {
            let m = phase_model(&cell.preset()?.at(*xi), Some(*xi), &cell.cycle_options()?)?;
            let rows = m.h.theta_grid().into_iter().zip(m.h.values()).map(|(t, v)| format!("{t},{v}")).collect::<Vec<_>>();
            out.write("hfun.csv", &csv("theta_frac,H", rows))?;
        }
        Command::Eta { cell, hsource, n } => {
            if *n < 2 {
                return Err(Failure::Usage("--n must be at least 2".into()));
            }
            let rows: Vec<(f64, f64)> = match hsource {
                HSource::App => {
                    let (lo, hi) = HAPP_DOMAIN;
                    (0..*n)
                        .map(|k| {
                            let xi = lo + (hi - lo) * k as f64 / (*n - 1) as f64;
                            Ok((xi, solve_eta(&FourierCoefficients::PUBLISHED.at(xi))?))
                        })
                        .collect::<Result<_, Error>>()?
                }
                HSource::Bn => {
                    let preset = cell.preset()?;
                    let opts = cell.cycle_options()?;
                    preset
                        .sweep_values(*n)
                        .par_iter()
                        .map(|&xi| Ok((xi, solve_eta(&phase_model(&preset.at(xi), Some(xi), &opts)?.h)?)))
                        .collect::<Result<_, Error>>()?
                }
                HSource::File => return Err(Failure::Usage("eta takes --hsource bn or app".into())),
            };
            out.write("eta.csv", &csv("xi,eta_frac", rows.iter().map(|(x, e)| format!("{x},{e}"))))?;
        }
        Command::Fourier { cell, xi, hsource } => {
            let (f, residual) = match hsource {
                HSource::App => (FourierCoefficients::PUBLISHED.at(*xi), 0.0),
                HSource::Bn => {
                    let m = phase_model(&cell.preset()?.at(*xi), Some(*xi), &cell.cycle_options()?)?;
                    (m.h.fourier.expect("phase_model attaches the projection"), m.h.fit_residual.unwrap_or(f64::NAN))
                }
                HSource::File => return Err(Failure::Usage("fourier takes --hsource bn or app".into())),
            };
            out.json("fourier.json", &serde_json::json!({ "xi": xi, "a0": f.a0, "a1": f.a1, "b1": f.b1, "a2": f.a2, "b2": f.b2, "residual": residual }))?;
        }
        Command::Torus { cell, hsource, h_file, xi, alpha, couplings, grid, nullcline_res, trajectory, traj_span, traj_dt } => {
            let h = coupling_at(cell, *hsource, h_file.as_deref(), *xi)?;
            let c = schedule(*alpha, couplings.as_deref())?.couplings();
            let sys = TorusSystem::new(h, c, *xi)?;
            let fps = find_fixed_points(&sys, *grid, crate::torus::DEFAULT_NEWTON_TOL)?;
            let rows = fps.iter().map(|f| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    f.theta[0], f.theta[1], f.eigenvalues[0].0, f.eigenvalues[0].1, f.eigenvalues[1].0, f.eigenvalues[1].1,
                    f.class.name(), f.index, f.gait.name()
                )
            });
            out.write("fixed_points.csv", &csv(FIXED_POINT_HEADER, rows))?;
            let nc = nullclines(&sys, *nullcline_res)?;
            let seg = |name: &'static str, s: &[[[f64; 2]; 2]]| -> Vec<String> {
                s.iter().map(|[a, b]| format!("{name},{},{},{},{}", a[0], a[1], b[0], b[1])).collect()
            };
            let mut lines = seg("theta1", &nc.theta1);
            lines.extend(seg("theta2", &nc.theta2));
            out.write("nullclines.csv", &csv("curve,x0,y0,x1,y1", lines))?;
            if let Some(start) = trajectory {
                let path = flow_trajectory(&sys, parse_pair(start)?, *traj_span, *traj_dt, 10)?;
                let rows = path.times.iter().zip(&path.points).map(|(t, p)| format!("{t},{},{}", p[0], p[1]));
                out.write("trajectory.csv", &csv("t,theta1,theta2", rows))?;
            }
            let counts = ClassCounts::of(&fps);
            log::info!(
                "eta = {:.6}, {} fixed points ({} sinks, {} sources, {} saddles), index sum {}",
                sys.eta, counts.total(), counts.sinks, counts.sources, counts.saddles, index_sum(&fps)
            );
        }
        Command::Bifurcate { cell, hsource, alpha, couplings, xi_range, steps, nodes } => {
            let sched = schedule(*alpha, couplings.as_deref())?;
            let opts = ContinuationOptions { steps: *steps, ..Default::default() };
            let res = match hsource {
                HSource::App => {
                    if xi_range.0 < HAPP_DOMAIN.0 || xi_range.1 > HAPP_DOMAIN.1 {
                        log::warn!("xi range {xi_range:?} leaves the fitted surrogate's domain {HAPP_DOMAIN:?}");
                    }
                    continue_branches(&HappFamily, sched, *xi_range, &opts)?
                }
                HSource::Bn => {
                    if *nodes < 2 {
                        return Err(Failure::Usage("--nodes must be at least 2".into()));
                    }
                    let preset = cell.preset()?;
                    let copts = cell.cycle_options()?;
                    let (lo, hi) = *xi_range;
                    let samples = (0..*nodes)
                        .into_par_iter()
                        .map(|k| {
                            let xi = lo + (hi - lo) * k as f64 / (*nodes - 1) as f64;
                            Ok((xi, phase_model(&preset.at(xi), Some(xi), &copts)?.h))
                        })
                        .collect::<Result<Vec<_>, Error>>()?;
                    continue_branches(&SampledFamily::new(samples)?, sched, *xi_range, &opts)?
                }
                HSource::File => return Err(Failure::Usage("bifurcate takes --hsource bn or app".into())),
            };
            let rows = res
                .branches
                .iter()
                .flat_map(|b| b.points.iter().map(move |p| format!("{},{},{},{},{}", b.id, p.xi, p.theta[0], p.theta[1], p.class.name())));
            out.write("branches.csv", &csv("branch_id,xi,theta1,theta2,class", rows))?;
            let rows = res.events.iter().map(|e| {
                let ids: Vec<String> = e.branch_ids.iter().map(|i| i.to_string()).collect();
                format!("{},{},{}", e.xi_critical, e.kind.name(), ids.join(";"))
            });
            out.write("events.csv", &csv("xi,kind,branch_ids", rows))?;
        }
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "xi,freq_hz,duty,swing_ms,stance_ms,period_ms";
pub const FIXED_POINT_HEADER: &str = "theta1,theta2,re_l1,im_l1,re_l2,im_l2,class,index,gait";

/// Run a parsed invocation and return its manifest.
pub fn run(cli: Cli) -> Result<RunManifest, Failure> {
    let (command, out_dir, threads) = match (&cli.from_manifest, cli.command) {
        (Some(_), Some(_)) => return Err(Failure::Usage("--from-manifest replaces the subcommand; give one or the other".into())),
        (None, None) => return Err(Failure::Usage("a subcommand is required".into())),
        (None, Some(cmd)) => (cmd, cli.out_dir.unwrap_or_else(|| PathBuf::from(defaults::OUT_DIR)), cli.threads),
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("--from-manifest {}: {e}", path.display())))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--from-manifest {}: {e}", path.display())))?;
            (m.command, cli.out_dir.unwrap_or(m.out_dir), cli.threads.or(m.threads))
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Numeric(Error::InvalidParameter(e.to_string())))?;
    let started = Instant::now();
    let mut out = Outputs::new(out_dir.clone());
    pool.install(|| run_command(&command, &mut out))?;
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        command,
        out_dir,
        threads,
        seeds: Vec::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: out.files.clone(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Numeric(Error::Io(e.to_string())))?;
    write_atomic(&out.dir.join(MANIFEST_NAME), &(text + "\n"))?;
    Ok(manifest)
}

/// Parse `argv`, run, and map the outcome to an exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(m) => {
            let mut s = String::new();
            for f in &m.outputs {
                let _ = writeln!(s, "{}", m.out_dir.join(f).display());
            }
            print!("{s}");
            EXIT_OK
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("error: {e}");
            EXIT_NUMERIC
        }
    }
}
