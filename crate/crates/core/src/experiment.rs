//! Experiment plumbing: typed configuration files, figure presets, and the
//! network / PDE / ODE / cross-model pipelines that write CSV series and a
//! JSON summary.
//!
//! A configuration file is TOML. It may name a `preset`; the preset expands
//! into one or more fully specified runs and every other key in the file
//! overrides the corresponding field of each run. Without a preset the keys
//! override [`default_table`]. Unknown keys are rejected.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bifurcation::{classify, detect_limit_cycle, BifurcationReport, CycleOptions, LimitCycle};
use crate::diagnostics::{
    compare_record, compare_samples, regression_slope, viscosity_residual, ProfileComparison,
    ResidualStats, SampleSnapshot, MIN_PROFILE_SAMPLES,
};
use crate::error::{invalid, Error, Result};
use crate::fokker_planck::{
    hopf_cole, solve, write_snapshot, CurrentSource, DensityField, Grid, PdeRun, SolveOptions,
};
use crate::limit_ode::{equilibria, interpolate, rk4_integrate, LimitState};
use crate::model::{InitCondition, ModelParams};
use crate::output::{
    write_compare_csv, write_limit_csv, write_pde_csv, write_profiles_csv, write_record_csv,
    CompareRow, Provenance,
};
use crate::particle::{simulate, simulate_observed, SimConfig, TrajectoryRecord};
use crate::VERSION;

/// Below this `epsilon` the explicit PDE step becomes expensive.
pub const PDE_EPSILON_WARNING: f64 = 0.02;
/// Allowed upward trend of a fourth moment over the late window, relative to
/// its largest value there.
pub const MOMENT_TREND_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Network,
    Pde,
    Ode,
    Compare,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Network => "network",
            ModelKind::Pde => "pde",
            ModelKind::Ode => "ode",
            ModelKind::Compare => "compare",
        };
        f.write_str(s)
    }
}

/// Scenario presets reproducing the published figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Fig1, Preset::Fig2, Preset::Fig3, Preset::Fig4, Preset::Fig5];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected fig1..fig5)")))
    }
}

/// Fokker-Planck solver settings. Bounds default to `[-3λ, 3λ]` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSettings {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub nv: usize,
    pub nx: usize,
    /// Fixed step; absent means the adaptive stability limit.
    pub dt: Option<f64>,
    pub record_stride: usize,
    /// CSV of `(t, J)` pairs replacing the self-consistent mean voltage.
    pub current_file: Option<PathBuf>,
    /// Write the final density as a binary snapshot.
    pub write_snapshot: bool,
}

impl PdeSettings {
    pub fn grid(&self, p: &ModelParams) -> Result<Grid> {
        let w = 3.0 * p.lambda.abs().max(1.0);
        Grid::new(
            self.v_min.unwrap_or(-w),
            self.v_max.unwrap_or(w),
            self.x_min.unwrap_or(-w),
            self.x_max.unwrap_or(w),
            self.nv,
            self.nx,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSettings {
    pub dt: f64,
    pub detect_cycle: bool,
    pub cycle: CycleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSettings {
    /// Independent network realizations averaged on the particle side.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSettings {
    /// Time between log-density profile snapshots; absent disables profiles.
    pub every: Option<f64>,
    pub bins: usize,
    /// Fraction of the horizon treated as "late" for averaged diagnostics.
    pub late_fraction: f64,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub label: String,
    pub params: ModelParams,
    pub init: InitCondition,
    pub sim: SimConfig,
    pub pde: PdeSettings,
    pub ode: OdeSettings,
    pub compare: CompareSettings,
    pub profiles: ProfileSettings,
}

/// Runs produced from one configuration file or preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub preset: Option<Preset>,
    /// Documented choices and substitutions, echoed into the summary.
    pub notes: Vec<String>,
    pub runs: Vec<ExperimentConfig>,
}

const DEFAULT_CONFIG: &str = r#"
model = "network"
label = "run"

[params]
lambda = 4.0
a = 0.3
b = 0.1
i_ext = 0.0
sigma = 1.0
epsilon = 0.04
adaptation_noise = true

[init]
kind = "gaussian-hypothesis-h"
mean_v = 0.8
mean_x = 0.0
concentration = 0.3

[sim]
n = 1000
t_end = 20.0
seed = 0
quantiles = [0.1, 0.25, 0.75, 0.9]

[pde]
v_min = -2.5
v_max = 5.0
x_min = -3.0
x_max = 3.0
nv = 150
nx = 60
record_stride = 10
write_snapshot = true

[ode]
dt = 0.001
detect_cycle = false

[ode.cycle]
dt = 0.01
transient = 200.0
max_time = 5000.0
min_returns = 5
max_relative_spread = 0.01
fixed_point_tol = 1e-8

[compare]
seeds = 1

[profiles]
bins = 64
late_fraction = 0.25
"#;

/// Baseline every configuration is layered on.
pub fn default_table() -> toml::Table {
    DEFAULT_CONFIG.parse().expect("built-in default configuration parses")
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
pub fn merge_tables(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Sets a dotted key such as `params.epsilon`, creating tables as needed.
pub fn set_key(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{dotted}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{dotted}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value` where the value is read as a TOML literal, falling
/// back to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn config_from_table(table: toml::Table) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate(&self.params)?;
        self.init.validate(self.params.epsilon)?;
        if !(self.ode.dt > 0.0) {
            return Err(invalid("ode.dt must be > 0"));
        }
        if self.compare.seeds == 0 {
            return Err(invalid("compare.seeds must be >= 1"));
        }
        if let Some(e) = self.profiles.every {
            if !(e > 0.0) {
                return Err(invalid("profiles.every must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.profiles.late_fraction) {
            return Err(invalid("profiles.late_fraction must lie in [0, 1]"));
        }
        if self.pde.record_stride == 0 {
            return Err(invalid("pde.record_stride must be >= 1"));
        }
        Ok(())
    }

    /// Returns the default configuration with `overrides` layered on top.
    pub fn from_overrides(overrides: &toml::Table) -> Result<Self> {
        let mut t = default_table();
        merge_tables(&mut t, overrides);
        config_from_table(t)
    }
}

/// Resolves configuration text (plus command-line overrides applied last)
/// into a plan.
pub fn resolve(text: &str, cli_overrides: &toml::Table) -> Result<Plan> {
    let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let preset = match user.remove("preset") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
        Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
    };
    merge_tables(&mut user, cli_overrides);
    resolve_tables(preset, &user)
}

/// Expands a preset (or the default) and overlays `overrides` on every run.
pub fn resolve_tables(preset: Option<Preset>, overrides: &toml::Table) -> Result<Plan> {
    let (notes, bases) = match preset {
        Some(p) => preset_tables(p)?,
        None => (Vec::new(), vec![default_table()]),
    };
    let runs = bases
        .into_iter()
        .map(|mut t| {
            merge_tables(&mut t, overrides);
            config_from_table(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan { preset, notes, runs })
}

pub fn preset_plan(preset: Preset) -> Result<Plan> {
    resolve_tables(Some(preset), &toml::Table::new())
}

fn f(v: f64) -> toml::Value {
    toml::Value::Float(v)
}

fn run_table(label: &str, sets: &[(&str, toml::Value)]) -> Result<toml::Table> {
    let mut t = default_table();
    set_key(&mut t, "label", toml::Value::String(label.into()))?;
    for (k, v) in sets {
        set_key(&mut t, k, v.clone())?;
    }
    Ok(t)
}

fn equilibrium_init(p: &ModelParams) -> Result<(f64, f64)> {
    let eqs = equilibria(p)?;
    let e = eqs
        .first()
        .ok_or_else(|| invalid("preset parameters have no equilibrium"))?;
    Ok((e.v, e.x))
}

fn preset_tables(preset: Preset) -> Result<(Vec<String>, Vec<toml::Table>)> {
    let mut notes = vec![
        "time step dt = epsilon/10 (the figures do not state one)".to_string(),
    ];
    let mut runs = Vec::new();
    match preset {
        Preset::Fig1 => {
            notes.push(
                "horizon t_end = 20; initial Gaussian (A = 0.3) centered at (v, x) = (0.8, 0), which relaxes to the rest state".into(),
            );
            for inv in [25.0, 100.0, 225.0] {
                let eps = 1.0 / inv;
                runs.push(run_table(
                    &format!("fig1_inv_eps{inv}"),
                    &[
                        ("params.epsilon", f(eps)),
                        ("sim.n", toml::Value::Integer(5000)),
                        ("sim.dt", f(eps / 10.0)),
                        ("profiles.every", f(0.5)),
                    ],
                )?);
            }
        }
        Preset::Fig2 => {
            notes.push(
                "lambda, b and I_ext are not given for this figure; lambda = 4, a = 0.3, b = 0.1, I_ext = 0 are used (certified bistable by the discriminant)".into(),
            );
            notes.push("horizon t_end = 40 (the adaptation variable settles on the upper branch only after t = 20); clusters centered at x = 1 with v = 1.2 and v = 1.35".into());
            for inv in [10.0, 50.0, 100.0] {
                for v0 in [1.2, 1.35] {
                    let eps = 1.0 / inv;
                    runs.push(run_table(
                        &format!("fig2_inv_eps{inv}_v{v0}"),
                        &[
                            ("params.epsilon", f(eps)),
                            ("sim.n", toml::Value::Integer(500)),
                            ("sim.t_end", f(40.0)),
                            ("sim.dt", f(eps / 10.0)),
                            ("init.mean_v", f(v0)),
                            ("init.mean_x", f(1.0)),
                        ],
                    )?);
                }
            }
        }
        Preset::Fig3 => {
            notes.push(
                "parameters of fig2 with a = 0.03 and I_ext = 4; with these values the limit equation has a single stable node at (v, x) = (3, 10), reached after a slow transient; horizon t_end = 200; clusters as in fig2".into(),
            );
            for inv in [10.0, 50.0, 100.0] {
                for v0 in [1.2, 1.35] {
                    let eps = 1.0 / inv;
                    runs.push(run_table(
                        &format!("fig3_inv_eps{inv}_v{v0}"),
                        &[
                            ("params.epsilon", f(eps)),
                            ("params.a", f(0.03)),
                            ("params.i_ext", f(4.0)),
                            ("sim.n", toml::Value::Integer(500)),
                            ("sim.t_end", f(200.0)),
                            ("sim.dt", f(eps / 10.0)),
                            ("init.mean_v", f(v0)),
                            ("init.mean_x", f(1.0)),
                        ],
                    )?);
                }
            }
        }
        Preset::Fig4 => {
            notes.push(
                "horizon t_end = 300; initial Gaussian (A = 0.3) centered at the equilibrium of the limit equation".into(),
            );
            for i0 in [5.0, 5.4, 5.7] {
                let p = ModelParams::new(4.0, 0.01, 0.1, i0, 0.01);
                let (v, x) = equilibrium_init(&p)?;
                runs.push(run_table(
                    &format!("fig4_i{i0}"),
                    &[
                        ("params.epsilon", f(0.01)),
                        ("params.a", f(0.01)),
                        ("params.b", f(0.1)),
                        ("params.i_ext", f(i0)),
                        ("sim.n", toml::Value::Integer(500)),
                        ("sim.t_end", f(300.0)),
                        ("sim.dt", f(0.001)),
                        ("init.mean_v", f(v)),
                        ("init.mean_x", f(x)),
                    ],
                )?);
            }
        }
        Preset::Fig5 => {
            notes.push(
                "one realization per input current (instead of three); horizon t_end = 300, long enough for the adaptation spread to relax on its slow time scale 1/(2a) = 100; initial Gaussian (A = 0.3) centered at the equilibrium of the limit equation".into(),
            );
            for i0 in [5.534, 5.5349] {
                let eps = 1.0 / 220.0;
                let p = ModelParams::new(4.0, 0.005, 0.05, i0, eps);
                let (v, x) = equilibrium_init(&p)?;
                runs.push(run_table(
                    &format!("fig5_i{i0}"),
                    &[
                        ("params.epsilon", f(eps)),
                        ("params.sigma", f(0.5)),
                        ("params.a", f(0.005)),
                        ("params.b", f(0.05)),
                        ("params.i_ext", f(i0)),
                        ("sim.n", toml::Value::Integer(5000)),
                        ("sim.t_end", f(300.0)),
                        ("sim.dt", f(eps / 10.0)),
                        ("init.mean_v", f(v)),
                        ("init.mean_x", f(x)),
                    ],
                )?);
            }
        }
    }
    Ok((notes, runs))
}

/// Growth check of the fourth moments over the late part of a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub max_m4_v: f64,
    pub max_m4_x: f64,
    /// Least-squares slopes over the late window.
    pub slope_v: f64,
    pub slope_x: f64,
    /// Standard errors of the slopes from regressing block means.
    pub slope_se_v: f64,
    pub slope_se_x: f64,
    /// `slope * window / max` over the late window.
    pub relative_trend_v: f64,
    pub relative_trend_x: f64,
    pub bounded: bool,
}

/// Number of blocks the late window is cut into for the slope standard error.
pub const MOMENT_BLOCKS: usize = 10;

/// Slope and its standard error from the means of consecutive blocks, which
/// are close to independent when blocks outlast the correlation time.
fn block_slope(ts: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let len = ts.len() / MOMENT_BLOCKS;
    if len == 0 {
        return None;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let bt: Vec<f64> = ts.chunks_exact(len).take(MOMENT_BLOCKS).map(mean).collect();
    let by: Vec<f64> = ys.chunks_exact(len).take(MOMENT_BLOCKS).map(mean).collect();
    let slope = regression_slope(&bt, &by)?;
    let (mt, my) = (mean(&bt), mean(&by));
    let sxx: f64 = bt.iter().map(|t| (t - mt) * (t - mt)).sum();
    let rss: f64 = bt.iter().zip(&by).map(|(t, y)| (y - my - slope * (t - mt)).powi(2)).sum();
    let se = (rss / (bt.len() - 2) as f64 / sxx).sqrt();
    Some((slope, se))
}

/// Checks `m4_v`, `m4_x` over the records past `transient_fraction` of the
/// horizon. They fail only on a growth trend that is both statistically
/// significant (slope above twice its block standard error) and material
/// (rise across the window above [`MOMENT_TREND_TOL`] of the largest value),
/// or when they stop being finite.
pub fn moment_check(record: &TrajectoryRecord, transient_fraction: f64) -> Option<MomentCheck> {
    let t0 = record.rows.first()?.t;
    let t1 = record.rows.last()?.t;
    let start = t0 + transient_fraction * (t1 - t0);
    let late: Vec<_> = record.rows.iter().filter(|r| r.t >= start).collect();
    let ts: Vec<f64> = late.iter().map(|r| r.t).collect();
    let mv: Vec<f64> = late.iter().map(|r| r.moments.m4_v).collect();
    let mx: Vec<f64> = late.iter().map(|r| r.moments.m4_x).collect();
    let slope_v = regression_slope(&ts, &mv)?;
    let slope_x = regression_slope(&ts, &mx)?;
    let (_, slope_se_v) = block_slope(&ts, &mv)?;
    let (_, slope_se_x) = block_slope(&ts, &mx)?;
    let all_max = |xs: &[f64]| xs.iter().copied().fold(0.0, f64::max);
    let max_m4_v = all_max(&record.rows.iter().map(|r| r.moments.m4_v).collect::<Vec<_>>());
    let max_m4_x = all_max(&record.rows.iter().map(|r| r.moments.m4_x).collect::<Vec<_>>());
    let window = ts.last()? - ts.first()?;
    let rel = |slope: f64, xs: &[f64]| {
        let m = all_max(xs);
        if m > 0.0 {
            slope * window / m
        } else {
            0.0
        }
    };
    let relative_trend_v = rel(slope_v, &mv);
    let relative_trend_x = rel(slope_x, &mx);
    let grows = |slope: f64, se: f64, trend: f64| slope > 2.0 * se && trend > MOMENT_TREND_TOL;
    let bounded = max_m4_v.is_finite()
        && max_m4_x.is_finite()
        && !grows(slope_v, slope_se_v, relative_trend_v)
        && !grows(slope_x, slope_se_x, relative_trend_x);
    Some(MomentCheck {
        max_m4_v,
        max_m4_x,
        slope_v,
        slope_x,
        slope_se_v,
        slope_se_x,
        relative_trend_v,
        relative_trend_x,
        bounded,
    })
}

/// Headline numbers of a network run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkErrors {
    /// `sup_t |(mean_v, mean_x) - (α, β)|`.
    pub sup_mean_error: f64,
    pub final_mean_error: f64,
    pub final_mean_v: f64,
    pub final_alpha: f64,
    /// Averages over the late window.
    pub late_var_ratio_v: f64,
    pub late_var_ratio_x: f64,
    pub late_sup_error_v: Option<f64>,
    pub late_sup_error_x: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdeErrors {
    pub mass_drift: f64,
    pub min_density: f64,
    pub final_current: f64,
    /// `sup_t |J(t) - α(t)|` over recorded times.
    pub sup_current_vs_limit: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompareErrors {
    pub sup_pde_vs_particle: f64,
    pub sup_particle_vs_ode: f64,
    pub sup_pde_vs_ode: f64,
}

/// JSON summary entry for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub model: ModelKind,
    pub version: String,
    pub seed: u64,
    pub dt: Option<f64>,
    pub horizon: f64,
    pub runtime_seconds: f64,
    pub classification: BifurcationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<LimitCycle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkErrors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeErrors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareErrors>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub version: String,
    pub preset: Option<Preset>,
    pub notes: Vec<String>,
    pub runs: Vec<RunSummary>,
}

/// In-memory results of a network run, for callers that need more than the
/// summary.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub record: TrajectoryRecord,
    pub limit: Vec<LimitState>,
    pub profiles: Vec<ProfileComparison>,
    pub moments: Vec<ProfileComparison>,
    pub errors: NetworkErrors,
    pub dt: f64,
}

fn late_mean(values: impl Iterator<Item = (f64, f64)>, start: f64) -> Option<f64> {
    let v: Vec<f64> = values.filter(|(t, _)| *t >= start - 1e-12).map(|(_, v)| v).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn limit_trajectory(cfg: &ExperimentConfig, t_end: f64) -> Result<Vec<LimitState>> {
    rk4_integrate(
        LimitState::new(0.0, cfg.init.mean_v, cfg.init.mean_x),
        &cfg.params,
        cfg.ode.dt,
        t_end,
    )
}

/// Network simulation, profile and moment comparisons against the limit.
pub fn run_network(cfg: &ExperimentConfig) -> Result<NetworkRun> {
    cfg.validate()?;
    let p = &cfg.params;
    let limit = limit_trajectory(cfg, cfg.sim.t_end)?;
    let capture = cfg.profiles.every.filter(|_| cfg.sim.n >= MIN_PROFILE_SAMPLES);
    let mut snaps = Vec::new();
    let mut next = 0.0;
    let out = simulate_observed(&cfg.sim, p, &cfg.init, |s| {
        if let Some(every) = capture {
            if s.t >= next - 1e-9 {
                snaps.push(SampleSnapshot {
                    t: s.t,
                    v: s.v.clone(),
                    x: s.x.clone(),
                });
                while next <= s.t + 1e-9 {
                    next += every;
                }
            }
        }
    })?;
    let tol = cfg.ode.dt.max(out.dt);
    let profiles = compare_samples(&snaps, &limit, p, cfg.profiles.bins, tol)?;
    let moments = compare_record(&out.record, &limit, p, tol)?;
    let start = cfg.sim.t_end * (1.0 - cfg.profiles.late_fraction);
    let last = moments.last().copied();
    let final_row = out.record.rows.last();
    let errors = NetworkErrors {
        sup_mean_error: moments.iter().map(|c| c.mean_error).fold(0.0, f64::max),
        final_mean_error: last.map(|c| c.mean_error).unwrap_or(0.0),
        final_mean_v: final_row.map(|r| r.moments.mean_v).unwrap_or(f64::NAN),
        final_alpha: limit.last().map(|s| s.alpha).unwrap_or(f64::NAN),
        late_var_ratio_v: late_mean(moments.iter().map(|c| (c.t, c.var_ratio_v)), start).unwrap_or(f64::NAN),
        late_var_ratio_x: late_mean(moments.iter().map(|c| (c.t, c.var_ratio_x)), start).unwrap_or(f64::NAN),
        late_sup_error_v: late_mean(profiles.iter().filter_map(|c| c.sup_error_v.map(|e| (c.t, e))), start),
        late_sup_error_x: late_mean(profiles.iter().filter_map(|c| c.sup_error_x.map(|e| (c.t, e))), start),
    };
    Ok(NetworkRun {
        record: out.record,
        limit,
        profiles,
        moments,
        errors,
        dt: out.dt,
    })
}

/// Fokker-Planck run on the configured grid.
pub fn run_pde(cfg: &ExperimentConfig) -> Result<PdeRun> {
    cfg.validate()?;
    let grid = cfg.pde.grid(&cfg.params)?;
    let f0 = DensityField::from_init(grid, &cfg.init, cfg.params.epsilon)?;
    let current = match &cfg.pde.current_file {
        Some(path) => CurrentSource::from_csv(File::open(path)?)?,
        None => CurrentSource::SelfConsistent,
    };
    let opts = SolveOptions {
        t_end: cfg.sim.t_end,
        record_stride: cfg.pde.record_stride,
        snapshot_stride: None,
        dt: cfg.pde.dt,
        current,
    };
    solve(f0, &cfg.params, &opts)
}

/// Results of [`run_compare`].
#[derive(Debug, Clone)]
pub struct CompareRun {
    pub rows: Vec<CompareRow>,
    pub errors: CompareErrors,
    pub pde: PdeRun,
}

/// Particle, PDE and ODE on shared parameters, aligned on the particle record times.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareRun> {
    cfg.validate()?;
    let mut mean: Option<(Vec<f64>, Vec<f64>)> = None;
    for k in 0..cfg.compare.seeds {
        let mut sim = cfg.sim.clone();
        sim.seed = cfg.sim.seed.wrapping_add(k as u64);
        let rec = simulate(&sim, &cfg.params, &cfg.init)?.record;
        match &mut mean {
            None => mean = Some((rec.times(), rec.mean_v())),
            Some((_, acc)) => acc.iter_mut().zip(rec.mean_v()).for_each(|(a, v)| *a += v),
        }
    }
    let (times, sums) = mean.expect("at least one seed");
    let pde = run_pde(cfg)?;
    let limit = limit_trajectory(cfg, cfg.sim.t_end)?;
    let rows: Vec<CompareRow> = times
        .iter()
        .zip(&sums)
        .map(|(&t, &s)| CompareRow {
            t,
            mean_v_particle: s / cfg.compare.seeds as f64,
            current_pde: pde.current_at(t),
            alpha_ode: interpolate(&limit, t).map(|s| s.alpha).unwrap_or(f64::NAN),
        })
        .collect();
    let sup = |g: fn(&CompareRow) -> f64| rows.iter().map(g).fold(0.0, f64::max);
    let errors = CompareErrors {
        sup_pde_vs_particle: sup(|r| (r.current_pde - r.mean_v_particle).abs()),
        sup_particle_vs_ode: sup(|r| (r.mean_v_particle - r.alpha_ode).abs()),
        sup_pde_vs_ode: sup(|r| (r.current_pde - r.alpha_ode).abs()),
    };
    Ok(CompareRun { rows, errors, pde })
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>> {
    files.push(name.to_string());
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Executes one run, writing its CSV files into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let prov = Provenance::new(&cfg.label, cfg)?;
    let classification = classify(&cfg.params)?;
    let label = &cfg.label;
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut summary = RunSummary {
        label: label.clone(),
        model: cfg.model,
        version: VERSION.to_string(),
        seed: cfg.sim.seed,
        dt: None,
        horizon: cfg.sim.t_end,
        runtime_seconds: 0.0,
        classification,
        cycle: None,
        network: None,
        moments: None,
        pde: None,
        residual: None,
        compare: None,
        warnings: Vec::new(),
        files: Vec::new(),
        config: cfg.clone(),
    };
    match cfg.model {
        ModelKind::Network => {
            let net = run_network(cfg)?;
            write_record_csv(create(out_dir, &format!("{label}_stats.csv"), &mut files)?, &net.record, &prov)?;
            write_limit_csv(create(out_dir, &format!("{label}_limit.csv"), &mut files)?, &net.limit, &prov)?;
            if !net.profiles.is_empty() {
                write_profiles_csv(create(out_dir, &format!("{label}_profiles.csv"), &mut files)?, &net.profiles, &prov)?;
            } else if cfg.profiles.every.is_some() {
                warnings.push(format!("profiles need n >= {MIN_PROFILE_SAMPLES}; skipped"));
            }
            summary.moments = moment_check(&net.record, 0.5);
            if let Some(m) = summary.moments.filter(|m| !m.bounded) {
                warnings.push(format!(
                    "fourth moments trend upward over the late window (relative trend v {:.3}, x {:.3})",
                    m.relative_trend_v, m.relative_trend_x
                ));
            }
            summary.network = Some(net.errors);
            summary.dt = Some(net.dt);
        }
        ModelKind::Pde => {
            let pde = run_pde(cfg)?;
            let limit = limit_trajectory(cfg, cfg.sim.t_end)?;
            write_pde_csv(create(out_dir, &format!("{label}_pde.csv"), &mut files)?, &pde.series, &prov)?;
            write_limit_csv(create(out_dir, &format!("{label}_limit.csv"), &mut files)?, &limit, &prov)?;
            if cfg.pde.write_snapshot {
                let mut w = create(out_dir, &format!("{label}_final.fhn"), &mut files)?;
                write_snapshot(&mut w, &pde.final_field, cfg.params.epsilon)?;
                w.flush()?;
            }
            let final_current = pde.series.last().map(|d| d.current).unwrap_or(f64::NAN);
            match viscosity_residual(&hopf_cole(&pde.final_field, &cfg.params), final_current, None) {
                Ok(r) => summary.residual = Some(r),
                Err(e) => warnings.push(format!("viscosity residual unavailable: {e}")),
            }
            summary.pde = Some(PdeErrors {
                mass_drift: pde.mass_drift(),
                min_density: pde.series.iter().map(|d| d.min_density).fold(f64::INFINITY, f64::min),
                final_current,
                sup_current_vs_limit: pde
                    .series
                    .iter()
                    .filter_map(|d| interpolate(&limit, d.t).map(|s| (d.current - s.alpha).abs()))
                    .fold(0.0, f64::max),
                steps: pde.steps,
            });
        }
        ModelKind::Ode => {
            let limit = limit_trajectory(cfg, cfg.sim.t_end)?;
            write_limit_csv(create(out_dir, &format!("{label}_ode.csv"), &mut files)?, &limit, &prov)?;
            summary.dt = Some(cfg.ode.dt);
            if cfg.ode.detect_cycle {
                let s0 = LimitState::new(0.0, cfg.init.mean_v, cfg.init.mean_x);
                summary.cycle = detect_limit_cycle(&cfg.params, s0, &cfg.ode.cycle)?;
            }
        }
        ModelKind::Compare => {
            if cfg.params.epsilon < PDE_EPSILON_WARNING {
                warnings.push(format!(
                    "epsilon = {} is below {PDE_EPSILON_WARNING}; the PDE stability limit forces very small steps",
                    cfg.params.epsilon
                ));
            }
            let cmp = run_compare(cfg)?;
            write_compare_csv(create(out_dir, &format!("{label}_compare.csv"), &mut files)?, &cmp.rows, &prov)?;
            summary.compare = Some(cmp.errors);
            summary.dt = Some(cfg.sim.effective_dt(&cfg.params));
        }
    }
    summary.runtime_seconds = started.elapsed().as_secs_f64();
    summary.warnings = warnings;
    summary.files = files;
    Ok(summary)
}

/// Runs every entry of a plan and writes `summary.json` next to the CSVs.
pub fn run_plan(plan: &Plan, out_dir: &Path) -> Result<PlanSummary> {
    let runs = plan
        .runs
        .iter()
        .map(|cfg| run(cfg, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let summary = PlanSummary {
        version: VERSION.to_string(),
        preset: plan.preset,
        notes: plan.notes.clone(),
        runs,
    };
    write_summary(&summary, out_dir)?;
    Ok(summary)
}

pub fn write_summary<S: Serialize>(summary: &S, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut w = BufWriter::new(File::create(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
