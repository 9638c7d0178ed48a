//! Conservative finite-volume solver for the self-consistent mean-field
//! Fokker-Planck equation
//!
//! ```text
//! ∂t g = ∂x((a x - b v) g + D_x ∂x g)
//!      + ∂v((N(v) - I_ext + x + (v - J[g]) / ε) g + σ² ∂v g),   J[g] = ∬ v g
//! ```
//!
//! on a rectangle with zero-flux boundaries. `D_x = ε` when the adaptation
//! variable is noisy and 0 otherwise. Advection is first-order upwind,
//! diffusion is the centered three-point stencil, and both are assembled as
//! face fluxes in a single explicit update, so mass is conserved up to
//! roundoff. `J[g]` is frozen at its pre-step value.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{InitCondition, InitKind, ModelParams};
use crate::sum::exact_sum;

/// Fraction of the stability limit used for automatic time steps.
pub const CFL_SAFETY: f64 = 0.9;

/// Densities below `-NEGATIVITY_TOL` abort the run.
pub const NEGATIVITY_TOL: f64 = 1e-12;

/// Floor applied before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub v_min: f64,
    pub v_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub nv: usize,
    pub nx: usize,
}

impl Grid {
    pub fn new(v_min: f64, v_max: f64, x_min: f64, x_max: f64, nv: usize, nx: usize) -> Result<Self> {
        let g = Self {
            v_min,
            v_max,
            x_min,
            x_max,
            nv,
            nx,
        };
        g.validate()?;
        Ok(g)
    }

    /// `[-3λ, 3λ]²` with the given resolution.
    pub fn default_for(p: &ModelParams, nv: usize, nx: usize) -> Result<Self> {
        let half = 3.0 * p.lambda.abs().max(1.0);
        Self::new(-half, half, -half, half, nv, nx)
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.v_min, self.v_max, self.x_min, self.x_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(invalid("grid bounds must be finite"));
        }
        if !(self.v_min < self.v_max && self.x_min < self.x_max) {
            return Err(invalid("grid bounds must be strictly ordered"));
        }
        if self.nv < 8 || self.nx < 8 {
            return Err(invalid(format!(
                "grid needs at least 8 cells per axis, got nv = {}, nx = {}",
                self.nv, self.nx
            )));
        }
        Ok(())
    }

    pub fn dv(&self) -> f64 {
        (self.v_max - self.v_min) / self.nv as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dv() * self.dx()
    }

    pub fn v_center(&self, iv: usize) -> f64 {
        self.v_min + (iv as f64 + 0.5) * self.dv()
    }

    pub fn x_center(&self, ix: usize) -> f64 {
        self.x_min + (ix as f64 + 0.5) * self.dx()
    }

    pub fn len(&self) -> usize {
        self.nv * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, iv: usize, ix: usize) -> usize {
        ix * self.nv + iv
    }
}

/// Cell-averaged density, stored row-major as `rho[ix * nv + iv]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub t: f64,
}

impl DensityField {
    /// Samples `f(x, v)` at cell centers and normalizes to unit mass.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: Grid, f: F) -> Result<Self> {
        grid.validate()?;
        let mut rho = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            for iv in 0..grid.nv {
                rho.push(f(grid.x_center(ix), grid.v_center(iv)));
            }
        }
        Self::normalized(grid, rho, 0.0)
    }

    pub fn normalized(grid: Grid, rho: Vec<f64>, t: f64) -> Result<Self> {
        grid.validate()?;
        if rho.len() != grid.len() {
            return Err(invalid(format!(
                "density has {} cells, grid has {}",
                rho.len(),
                grid.len()
            )));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("density must be finite and nonnegative"));
        }
        let mass = exact_sum(rho.iter().copied()) * grid.cell_area();
        if !(mass > 0.0) {
            return Err(invalid("density has zero mass on the grid"));
        }
        let rho = rho.into_iter().map(|r| r / mass).collect();
        Ok(Self { grid, rho, t })
    }

    /// Discretized initial Gaussian with variance `epsilon / A` per coordinate.
    /// A point cluster is placed in the single cell containing the center.
    pub fn from_init(grid: Grid, init: &InitCondition, epsilon: f64) -> Result<Self> {
        init.validate(epsilon)?;
        let cell = |v: f64, x: f64| {
            let iv = (((v - grid.v_min) / grid.dv()).floor().max(0.0) as usize).min(grid.nv - 1);
            let ix = (((x - grid.x_min) / grid.dx()).floor().max(0.0) as usize).min(grid.nx - 1);
            grid.index(iv, ix)
        };
        match &init.kind {
            InitKind::GaussianHypothesisH => {
                let var = epsilon / init.concentration;
                Self::from_fn(grid, |x, v| {
                    (-((v - init.mean_v).powi(2) + (x - init.mean_x).powi(2)) / (2.0 * var)).exp()
                })
            }
            InitKind::PointCluster => {
                let mut rho = vec![0.0; grid.len()];
                rho[cell(init.mean_v, init.mean_x)] = 1.0;
                Self::normalized(grid, rho, 0.0)
            }
            InitKind::Custom { v, x } => {
                let mut rho = vec![0.0; grid.len()];
                for (&vi, &xi) in v.iter().zip(x) {
                    rho[cell(vi, xi)] += 1.0;
                }
                Self::normalized(grid, rho, 0.0)
            }
        }
    }

    pub fn mass(&self) -> f64 {
        exact_sum(self.rho.iter().copied()) * self.grid.cell_area()
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn at(&self, iv: usize, ix: usize) -> f64 {
        self.rho[self.grid.index(iv, ix)]
    }

    /// Cell `(iv, ix)` holding the largest density.
    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .rho
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (k % self.grid.nv, k / self.grid.nv)
    }

    /// Marginal density in `v`.
    pub fn marginal_v(&self) -> Vec<f64> {
        let g = &self.grid;
        (0..g.nv)
            .map(|iv| (0..g.nx).map(|ix| self.at(iv, ix)).sum::<f64>() * g.dx())
            .collect()
    }
}

/// Midpoint-rule mean voltage `∬ v g dx dv`.
pub fn first_moment(f: &DensityField) -> f64 {
    let g = &f.grid;
    let area = g.cell_area();
    exact_sum((0..g.len()).map(|k| g.v_center(k % g.nv) * f.rho[k])) * area
}

/// Which flux contributions enter a step. Both are on for the physical model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FluxTerms {
    pub advection: bool,
    pub diffusion: bool,
}

impl Default for FluxTerms {
    fn default() -> Self {
        Self {
            advection: true,
            diffusion: true,
        }
    }
}

/// Face velocities and the stability limit for one step.
struct StepPlan {
    /// `(nv + 1) * nx` velocities at v-faces, index `ix * (nv + 1) + iv`.
    uv: Vec<f64>,
    /// `nv * (nx + 1)` velocities at x-faces, index `ix * nv + iv`.
    ux: Vec<f64>,
    dv_coef: f64,
    dx_coef: f64,
    max_dt: f64,
    limiting: (usize, usize),
}

fn plan_step(f: &DensityField, p: &ModelParams, current: f64, terms: FluxTerms) -> StepPlan {
    let g = &f.grid;
    let (nv, nx) = (g.nv, g.nx);
    let (dv, dx) = (g.dv(), g.dx());
    let spec = p.drift_spec();
    let mut uv = vec![0.0; (nv + 1) * nx];
    let mut ux = vec![0.0; nv * (nx + 1)];
    if terms.advection {
        for ix in 0..nx {
            let x = g.x_center(ix);
            // boundary faces stay at zero velocity (no flux)
            for iv in 1..nv {
                let v = g.v_min + iv as f64 * dv;
                uv[ix * (nv + 1) + iv] =
                    -spec.eval(v) + p.i_ext - x - (v - current) / p.epsilon;
            }
        }
        for ix in 1..nx {
            let x = g.x_min + ix as f64 * dx;
            for iv in 0..nv {
                ux[ix * nv + iv] = -p.a * x + p.b * g.v_center(iv);
            }
        }
    }
    let (dv_coef, dx_coef) = if terms.diffusion {
        (p.sigma * p.sigma, p.adaptation_diffusion())
    } else {
        (0.0, 0.0)
    };

    // Per-cell rate: outflow speed over the cell's faces plus the diffusion
    // part, 2 (D_v/dv² + D_x/dx²).
    let diff_rate = 2.0 * (dv_coef / (dv * dv) + dx_coef / (dx * dx));
    let mut worst = 0.0f64;
    let mut limiting = (0, 0);
    for ix in 0..nx {
        for iv in 0..nv {
            let left = uv[ix * (nv + 1) + iv];
            let right = uv[ix * (nv + 1) + iv + 1];
            let down = ux[ix * nv + iv];
            let up = ux[(ix + 1) * nv + iv];
            let out_v = right.max(0.0) + (-left).max(0.0);
            let out_x = up.max(0.0) + (-down).max(0.0);
            let rate = out_v / dv + out_x / dx + diff_rate;
            if rate > worst {
                worst = rate;
                limiting = (iv, ix);
            }
        }
    }
    let max_dt = if worst > 0.0 {
        CFL_SAFETY / worst
    } else {
        f64::INFINITY
    };
    StepPlan {
        uv,
        ux,
        dv_coef,
        dx_coef,
        max_dt,
        limiting,
    }
}

fn apply_step(f: &DensityField, plan: &StepPlan, dt: f64) -> Vec<f64> {
    let g = &f.grid;
    let (nv, nx) = (g.nv, g.nx);
    let (dv, dx) = (g.dv(), g.dx());
    let rho = &f.rho;

    let mut fv = vec![0.0; (nv + 1) * nx];
    for ix in 0..nx {
        let row = &rho[ix * nv..(ix + 1) * nv];
        for iv in 1..nv {
            let u = plan.uv[ix * (nv + 1) + iv];
            let (gl, gr) = (row[iv - 1], row[iv]);
            fv[ix * (nv + 1) + iv] = u.max(0.0) * gl + u.min(0.0) * gr - plan.dv_coef * (gr - gl) / dv;
        }
    }
    let mut fx = vec![0.0; nv * (nx + 1)];
    for ix in 1..nx {
        for iv in 0..nv {
            let u = plan.ux[ix * nv + iv];
            let (gd, gu) = (rho[(ix - 1) * nv + iv], rho[ix * nv + iv]);
            fx[ix * nv + iv] = u.max(0.0) * gd + u.min(0.0) * gu - plan.dx_coef * (gu - gd) / dx;
        }
    }

    let mut next = vec![0.0; rho.len()];
    for ix in 0..nx {
        for iv in 0..nv {
            let k = ix * nv + iv;
            let div_v = (fv[ix * (nv + 1) + iv + 1] - fv[ix * (nv + 1) + iv]) / dv;
            let div_x = (fx[(ix + 1) * nv + iv] - fx[ix * nv + iv]) / dx;
            next[k] = rho[k] - dt * (div_v + div_x);
        }
    }
    next
}

/// Largest admissible explicit step for `f`, and the cell that limits it.
pub fn max_stable_dt(f: &DensityField, p: &ModelParams) -> (f64, (usize, usize)) {
    let plan = plan_step(f, p, first_moment(f), FluxTerms::default());
    (plan.max_dt, plan.limiting)
}

/// One explicit conservative step of size `dt` with `J[g]` taken from `f`.
pub fn fp_step(f: &DensityField, p: &ModelParams, dt: f64) -> Result<DensityField> {
    fp_step_with(f, p, dt, first_moment(f), FluxTerms::default())
}

/// [`fp_step`] with an externally supplied current and a choice of flux terms.
pub fn fp_step_with(
    f: &DensityField,
    p: &ModelParams,
    dt: f64,
    current: f64,
    terms: FluxTerms,
) -> Result<DensityField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    let plan = plan_step(f, p, current, terms);
    step_with_plan(f, &plan, dt)
}

fn step_with_plan(f: &DensityField, plan: &StepPlan, dt: f64) -> Result<DensityField> {
    // the automatic step is exactly max_dt; allow for its rounding
    if dt > plan.max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            iv: plan.limiting.0,
            ix: plan.limiting.1,
            dt,
            max_dt: plan.max_dt,
        });
    }
    let rho = apply_step(f, plan, dt);
    let t = f.t + dt;
    if let Some((k, &value)) = rho
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.is_finite() && **r >= -NEGATIVITY_TOL))
    {
        return Err(Error::SchemeFailure {
            t,
            iv: k % f.grid.nv,
            ix: k / f.grid.nv,
            value,
        });
    }
    Ok(DensityField {
        grid: f.grid,
        rho,
        t,
    })
}

/// Source of the mean voltage `J` entering the drift.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CurrentSource {
    /// `J[g]` of the evolving density.
    #[default]
    SelfConsistent,
    /// Prescribed `(t, J)` samples, linearly interpolated; turns the PDE linear.
    Prescribed(Vec<(f64, f64)>),
}

impl CurrentSource {
    fn value(&self, f: &DensityField) -> f64 {
        match self {
            CurrentSource::SelfConsistent => first_moment(f),
            CurrentSource::Prescribed(samples) => interpolate_pairs(samples, f.t),
        }
    }

    /// Reads `(t, J)` pairs from a CSV with a header row; `#` lines are skipped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Format(format!("missing column {i}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(e.to_string()))
            };
            samples.push((parse(0)?, parse(1)?));
        }
        if samples.is_empty() {
            return Err(Error::Format("prescribed current file has no samples".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Format("prescribed current times must increase".into()));
        }
        Ok(CurrentSource::Prescribed(samples))
    }
}

fn interpolate_pairs(samples: &[(f64, f64)], t: f64) -> f64 {
    match samples {
        [] => 0.0,
        [only] => only.1,
        _ => {
            if t <= samples[0].0 {
                return samples[0].1;
            }
            let last = samples[samples.len() - 1];
            if t >= last.0 {
                return last.1;
            }
            let i = samples.partition_point(|s| s.0 <= t);
            let (a, b) = (samples[i - 1], samples[i]);
            a.1 + (t - a.0) / (b.0 - a.0) * (b.1 - a.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub t_end: f64,
    /// Record diagnostics every this many steps (the final step is always recorded).
    pub record_stride: usize,
    /// Keep a field snapshot every this many steps.
    pub snapshot_stride: Option<usize>,
    /// Fixed step; `None` uses `CFL_SAFETY` times the stability limit each step.
    pub dt: Option<f64>,
    pub current: CurrentSource,
}

impl SolveOptions {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            record_stride: 1,
            snapshot_stride: None,
            dt: None,
            current: CurrentSource::SelfConsistent,
        }
    }
}

/// Per-record diagnostics of a PDE run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeDiagnostics {
    pub t: f64,
    pub current: f64,
    pub mass: f64,
    pub min_density: f64,
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub series: Vec<PdeDiagnostics>,
    pub snapshots: Vec<DensityField>,
    pub final_field: DensityField,
    pub steps: usize,
}

impl PdeRun {
    /// Largest deviation of the recorded mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.series.first().map(|d| d.mass).unwrap_or(1.0);
        self.series
            .iter()
            .map(|d| (d.mass - m0).abs())
            .fold(0.0, f64::max)
    }

    /// `J` at time `t`, linearly interpolated between records.
    pub fn current_at(&self, t: f64) -> f64 {
        let pairs: Vec<(f64, f64)> = self.series.iter().map(|d| (d.t, d.current)).collect();
        interpolate_pairs(&pairs, t)
    }
}

fn diagnostics_of(f: &DensityField) -> PdeDiagnostics {
    PdeDiagnostics {
        t: f.t,
        current: first_moment(f),
        mass: f.mass(),
        min_density: f.min_density(),
    }
}

/// Repeated [`fp_step`] up to `opts.t_end`.
pub fn solve(f0: DensityField, p: &ModelParams, opts: &SolveOptions) -> Result<PdeRun> {
    p.validate()?;
    f0.grid.validate()?;
    if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
        return Err(invalid(format!("t_end must be >= 0, got {}", opts.t_end)));
    }
    if opts.record_stride == 0 || opts.snapshot_stride == Some(0) {
        return Err(invalid("strides must be >= 1"));
    }
    let t_stop = f0.t + opts.t_end;
    let mut series = vec![diagnostics_of(&f0)];
    let mut snapshots = Vec::new();
    if opts.snapshot_stride.is_some() {
        snapshots.push(f0.clone());
    }
    let mut field = f0;
    let mut steps = 0usize;
    while t_stop - field.t > 1e-12 * t_stop.abs().max(1.0) {
        let current = opts.current.value(&field);
        let plan = plan_step(&field, p, current, FluxTerms::default());
        let remaining = t_stop - field.t;
        let dt = match opts.dt {
            Some(dt) => dt.min(remaining),
            None => plan.max_dt.min(remaining),
        };
        field = step_with_plan(&field, &plan, dt)?;
        steps += 1;
        let last = t_stop - field.t <= 1e-12 * t_stop.abs().max(1.0);
        if last {
            field.t = t_stop;
        }
        if steps.is_multiple_of(opts.record_stride) || last {
            series.push(diagnostics_of(&field));
        }
        if let Some(s) = opts.snapshot_stride {
            if steps.is_multiple_of(s) || last {
                snapshots.push(field.clone());
            }
        }
    }
    Ok(PdeRun {
        series,
        snapshots,
        final_field: field,
        steps,
    })
}

/// Hopf-Cole transform `ψ = ε log g` with masking of floored cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfCole {
    pub grid: Grid,
    pub epsilon: f64,
    pub psi: Vec<f64>,
    /// `true` where the density was above [`DENSITY_FLOOR`].
    pub valid: Vec<bool>,
}

impl HopfCole {
    pub fn masked_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| !**v).count() as f64 / self.valid.len() as f64
    }

    pub fn max_valid(&self) -> Option<f64> {
        self.psi
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(p, _)| *p)
            .max_by(f64::total_cmp)
    }
}

pub fn hopf_cole(f: &DensityField, p: &ModelParams) -> HopfCole {
    let eps = p.epsilon;
    let valid: Vec<bool> = f.rho.iter().map(|&r| r > DENSITY_FLOOR).collect();
    let psi = f.rho.iter().map(|&r| eps * r.max(DENSITY_FLOOR).ln()).collect();
    HopfCole {
        grid: f.grid,
        epsilon: eps,
        psi,
        valid,
    }
}

/// Writes `(t, J, mass)` rows.
pub fn write_series_csv<W: Write>(writer: W, series: &[PdeDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "current", "mass", "min_density"])?;
    for d in series {
        w.write_record([
            d.t.to_string(),
            d.current.to_string(),
            d.mass.to_string(),
            d.min_density.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SNAPSHOT_MAGIC: &str = "# fhn density snapshot v1";
const END_HEADER: &str = "end_header";

/// Text header describing the grid, then `nx * nv` little-endian `f64`
/// values in row-major `[ix][iv]` order.
pub fn write_snapshot<W: Write>(mut w: W, f: &DensityField, epsilon: f64) -> Result<()> {
    let g = &f.grid;
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "format=f64-le")?;
    writeln!(w, "layout=row-major[nx][nv]")?;
    writeln!(w, "v_min={:?}", g.v_min)?;
    writeln!(w, "v_max={:?}", g.v_max)?;
    writeln!(w, "x_min={:?}", g.x_min)?;
    writeln!(w, "x_max={:?}", g.x_max)?;
    writeln!(w, "nv={}", g.nv)?;
    writeln!(w, "nx={}", g.nx)?;
    writeln!(w, "t={:?}", f.t)?;
    writeln!(w, "epsilon={epsilon:?}")?;
    writeln!(w, "{END_HEADER}")?;
    for r in &f.rho {
        w.write_all(&r.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]; returns the field and `epsilon`.
pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<(DensityField, f64)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a density snapshot".into()));
    }
    let mut kv = std::collections::HashMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("snapshot header not terminated".into()));
        }
        let l = line.trim_end();
        if l == END_HEADER {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Format(format!("header missing {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("{k}: {e}")))
    };
    let count = |k: &str| -> Result<usize> {
        get(k)?
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("{k}: {e}")))
    };
    if get("format")? != "f64-le" {
        return Err(Error::Format("unsupported value format".into()));
    }
    let grid = Grid::new(
        num("v_min")?,
        num("v_max")?,
        num("x_min")?,
        num("x_max")?,
        count("nv")?,
        count("nx")?,
    )?;
    let mut bytes = vec![0u8; grid.len() * 8];
    r.read_exact(&mut bytes)?;
    let rho = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((
        DensityField {
            grid,
            rho,
            t: num("t")?,
        },
        num("epsilon")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(eps: f64) -> ModelParams {
        ModelParams::new(4.0, 0.3, 0.1, 0.0, eps)
    }

    fn small_grid() -> Grid {
        Grid::new(-2.0, 3.0, -2.5, 2.5, 50, 40).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1.0, 0.0, 0.0, 1.0, 10, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 0.0, 1.0, 7, 10).is_err());
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 10, 20).unwrap();
        assert_eq!((g.dv(), g.dx()), (0.1, 0.1));
        assert!((g.v_center(0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn symmetric_density_has_zero_moment() {
        let g = Grid::new(-2.0, 2.0, -1.0, 1.0, 40, 10).unwrap();
        let f = DensityField::from_fn(g, |x, v| (-(v * v) - x * x).exp()).unwrap();
        assert!(first_moment(&f).abs() < 1e-14);
        assert!((f.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cell_moment() {
        let g = Grid::new(-2.0, 2.0, -1.0, 1.0, 40, 10).unwrap();
        let c = 0.73;
        let f = DensityField::from_init(g, &InitCondition::point(c, 0.0), 0.1).unwrap();
        assert!((first_moment(&f) - c).abs() <= g.dv() / 2.0 + 1e-12);
    }

    #[test]
    fn gaussian_moment_by_quadrature() {
        let g = Grid::new(0.0, 3.0, -1.0, 1.0, 600, 8).unwrap();
        let f = DensityField::from_fn(g, |_, v| (-(v - 1.5f64).powi(2) / (2.0 * 0.05)).exp()).unwrap();
        assert!((first_moment(&f) - 1.5).abs() < 1e-3);
    }

    #[test]
    fn uniform_density_is_stationary_under_pure_diffusion() {
        let g = small_grid();
        let f = DensityField::from_fn(g, |_, _| 1.0).unwrap();
        let p = fig1(0.1);
        let next = fp_step_with(&f, &p, 1e-4, first_moment(&f), FluxTerms { advection: false, diffusion: true }).unwrap();
        for (a, b) in f.rho.iter().zip(&next.rho) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_conserves_mass_and_positivity() {
        let g = small_grid();
        let p = fig1(0.1);
        let mut f = DensityField::from_init(g, &InitCondition::gaussian(0.8, 0.0, 0.3), 0.1).unwrap();
        let m0 = f.mass();
        for _ in 0..200 {
            let (dt, _) = max_stable_dt(&f, &p);
            let m_before = f.mass();
            f = fp_step(&f, &p, dt).unwrap();
            assert!((f.mass() - m_before).abs() / m_before < 1e-13);
            assert!(f.min_density() >= -NEGATIVITY_TOL);
        }
        assert!((f.mass() - m0).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = small_grid();
        let p = fig1(0.1);
        let f = DensityField::from_init(g, &InitCondition::gaussian(0.8, 0.0, 0.3), 0.1).unwrap();
        let (dt, cell) = max_stable_dt(&f, &p);
        match fp_step(&f, &p, 2.0 * dt / CFL_SAFETY) {
            Err(Error::Cfl { iv, ix, max_dt, .. }) => {
                assert_eq!((iv, ix), cell);
                assert_eq!(max_dt, dt);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn zero_horizon_solve_returns_initial_diagnostics() {
        let g = small_grid();
        let f = DensityField::from_init(g, &InitCondition::gaussian(0.8, 0.0, 0.3), 0.1).unwrap();
        let run = solve(f, &fig1(0.1), &SolveOptions::new(0.0)).unwrap();
        assert_eq!(run.steps, 0);
        assert_eq!(run.series.len(), 1);
        assert!((run.series[0].current - 0.8).abs() < 1e-3);
    }

    #[test]
    fn mass_drift_over_ten_thousand_steps() {
        let g = Grid::new(-1.5, 2.5, -2.0, 2.0, 32, 16).unwrap();
        let p = fig1(0.2);
        let f = DensityField::from_init(g, &InitCondition::gaussian(0.8, 0.0, 0.3), 0.2).unwrap();
        let (dt, _) = max_stable_dt(&f, &p);
        let mut opts = SolveOptions::new(10_000.0 * dt * 0.5);
        opts.dt = Some(dt * 0.5);
        opts.record_stride = 100;
        let run = solve(f, &p, &opts).unwrap();
        assert!(run.steps >= 10_000);
        assert!(run.mass_drift() < 1e-9, "{}", run.mass_drift());
    }

    #[test]
    fn late_density_concentrates_near_an_equilibrium() {
        let p = fig1(0.1);
        let g = Grid::new(-1.5, 5.5, -1.5, 2.5, 70, 40).unwrap();
        let eqs = crate::limit_ode::equilibria(&p).unwrap();
        for start in [0.6, 2.0] {
            let f = DensityField::from_init(g, &InitCondition::gaussian(start, 0.0, 0.3), p.epsilon).unwrap();
            let mut opts = SolveOptions::new(20.0);
            opts.record_stride = 1000;
            let run = solve(f, &p, &opts).unwrap();
            let (iv, ix) = run.final_field.argmax();
            let near = eqs.iter().any(|e| {
                (g.v_center(iv) - e.v).abs() <= 2.0 * g.dv() && (g.x_center(ix) - e.x).abs() <= 2.0 * g.dx()
            });
            assert!(near, "start {start}: argmax at ({}, {})", g.v_center(iv), g.x_center(ix));
        }
    }

    #[test]
    fn prescribed_current_is_interpolated() {
        let src = CurrentSource::from_csv("t,J\n# comment\n0,1.0\n2,3.0\n".as_bytes()).unwrap();
        let g = small_grid();
        let mut f = DensityField::from_fn(g, |_, _| 1.0).unwrap();
        f.t = 1.0;
        assert!((src.value(&f) - 2.0).abs() < 1e-15);
        assert!(CurrentSource::from_csv("t,J\n1,0\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn hopf_cole_recovers_exponent() {
        let eps = 0.05;
        let g = Grid::new(-1.0, 1.0, -1.0, 1.0, 40, 40).unwrap();
        let q = |x: f64, v: f64| -0.5 * v * v - 0.15 * x * x;
        let f = DensityField {
            grid: g,
            rho: (0..g.len()).map(|k| (q(g.x_center(k / g.nv), g.v_center(k % g.nv)) / eps).exp()).collect(),
            t: 0.0,
        };
        let h = hopf_cole(&f, &ModelParams::new(4.0, 0.3, 0.1, 0.0, eps));
        for k in 0..g.len() {
            assert!(h.valid[k]);
            assert!((h.psi[k] - q(g.x_center(k / g.nv), g.v_center(k % g.nv))).abs() < 1e-8);
        }
    }

    #[test]
    fn hopf_cole_maximum_of_concentrated_field() {
        for eps in [0.05, 0.01] {
            let a = 0.3;
            let g = Grid::new(-1.0, 1.0, -2.0, 2.0, 200, 200).unwrap();
            let f = DensityField::from_fn(g, |x, v| (-(v * v) / (2.0 * eps) - a * x * x / (2.0 * eps)).exp()).unwrap();
            let p = ModelParams::new(4.0, a, 0.1, 0.0, eps);
            let h = hopf_cole(&f, &p);
            let max = h.max_valid().unwrap();
            let tol = eps * (2.0 * std::f64::consts::PI * eps).ln().abs();
            assert!(max.abs() <= tol, "eps {eps}: max psi {max} vs tol {tol}");
        }
    }

    #[test]
    fn masked_fraction_grows_as_epsilon_shrinks() {
        let g = Grid::new(-3.0, 3.0, -3.0, 3.0, 60, 60).unwrap();
        let frac = |eps: f64| {
            let f = DensityField::from_fn(g, |x, v| (-(v * v + x * x) / (2.0 * eps)).exp()).unwrap();
            hopf_cole(&f, &ModelParams::new(4.0, 0.3, 0.1, 0.0, eps)).masked_fraction()
        };
        let (f1, f2, f3) = (frac(0.05), frac(0.01), frac(0.005));
        assert!(f1 <= f2 && f2 <= f3 && f3 > f1, "{f1} {f2} {f3}");
    }

    #[test]
    fn snapshot_round_trip() {
        let g = small_grid();
        let mut f = DensityField::from_init(g, &InitCondition::gaussian(0.3, 0.1, 0.3), 0.1).unwrap();
        f.t = 1.25;
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &f, 0.1).unwrap();
        let (back, eps) = read_snapshot(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(eps, 0.1);
        assert_eq!(back, f);
        assert!(read_snapshot(std::io::Cursor::new(b"garbage\n".to_vec())).is_err());
    }
}
