//! Concentration diagnostics: empirical log-density profiles against the
//! limiting quadratic `ψ = -(v-α)²/2 - a(x-β)²/2`, variance ratios, and the
//! Hamilton-Jacobi residual of a Hopf-Cole transformed PDE density.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fokker_planck::HopfCole;
use crate::limit_ode::LimitState;
use crate::model::ModelParams;
use crate::particle::TrajectoryRecord;

pub const MIN_PROFILE_SAMPLES: usize = 1000;
pub const MIN_PROFILE_BINS: usize = 16;
/// Bins holding fewer samples are masked.
pub const MIN_BIN_COUNT: usize = 5;
/// Default histogram resolution for `n >= 5000`.
pub const DEFAULT_BINS: usize = 64;

/// Resolvable dynamic range `4 ε ln 10` (four decades of density).
pub fn dynamic_range(epsilon: f64) -> f64 {
    4.0 * epsilon * std::f64::consts::LN_10
}

/// Normalization added to `ε log μ̂_v` so that an exact Gaussian of variance
/// `ε` maps onto `-(v-α)²/2`: `(ε/2) log(2π ε)`.
pub fn voltage_shift(epsilon: f64) -> f64 {
    0.5 * epsilon * (2.0 * std::f64::consts::PI * epsilon).ln()
}

/// Same for the adaptation variable with variance `ε / a`: `(ε/2) log(2π ε / a)`.
pub fn adaptation_shift(epsilon: f64, a: f64) -> f64 {
    0.5 * epsilon * (2.0 * std::f64::consts::PI * epsilon / a).ln()
}

/// Histogram estimate of `ε log μ̂ + shift` on equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub centers: Vec<f64>,
    pub width: f64,
    pub counts: Vec<usize>,
    /// Normalized histogram density `μ̂`.
    pub density: Vec<f64>,
    /// `ε log μ̂` before the shift; `None` on masked bins.
    pub raw: Vec<Option<f64>>,
    /// `raw + shift`; `None` on masked bins.
    pub values: Vec<Option<f64>>,
    pub shift: f64,
}

impl Profile {
    /// Center of the bin with the largest count.
    pub fn mode(&self) -> f64 {
        let k = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.centers[k]
    }
}

pub fn log_density_profile(samples: &[f64], epsilon: f64, bins: usize, shift: f64) -> Result<Profile> {
    if samples.len() < MIN_PROFILE_SAMPLES {
        return Err(invalid(format!(
            "profile needs at least {MIN_PROFILE_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if bins < MIN_PROFILE_BINS {
        return Err(invalid(format!("profile needs at least {MIN_PROFILE_BINS} bins, got {bins}")));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let span = (hi - lo).max(f64::EPSILON * lo.abs().max(1.0));
    let start = lo - 0.1 * span;
    let width = 1.2 * span / bins as f64;

    let mut counts = vec![0usize; bins];
    for &s in samples {
        let k = (((s - start) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = samples.len() as f64;
    let centers: Vec<f64> = (0..bins).map(|k| start + (k as f64 + 0.5) * width).collect();
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let raw: Vec<Option<f64>> = counts
        .iter()
        .zip(&density)
        .map(|(&c, &d)| (c >= MIN_BIN_COUNT).then(|| epsilon * d.ln()))
        .collect();
    let values = raw.iter().map(|r| r.map(|r| r + shift)).collect();
    Ok(Profile {
        centers,
        width,
        counts,
        density,
        raw,
        values,
        shift,
    })
}

/// The limiting Gaussian exponent at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalProfile {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
}

impl TheoreticalProfile {
    pub fn voltage(&self, v: f64) -> f64 {
        -0.5 * (v - self.alpha).powi(2)
    }

    pub fn adaptation(&self, x: f64) -> f64 {
        -0.5 * self.a * (x - self.beta).powi(2)
    }
}

pub fn theoretical_profile(state: &LimitState, p: &ModelParams) -> TheoreticalProfile {
    TheoreticalProfile {
        alpha: state.alpha,
        beta: state.beta,
        a: p.a,
    }
}

/// Largest `|profile - theory|` over unmasked bins inside the resolvable range.
/// `None` when no bin qualifies.
pub fn profile_sup_error<F: Fn(f64) -> f64>(profile: &Profile, theory: F, epsilon: f64) -> Option<f64> {
    let floor = -dynamic_range(epsilon);
    profile
        .centers
        .iter()
        .zip(&profile.values)
        .filter_map(|(&c, v)| {
            let th = theory(c);
            v.filter(|_| th >= floor).map(|v| (v - th).abs())
        })
        .max_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub t: f64,
    pub sup_error_v: Option<f64>,
    pub sup_error_x: Option<f64>,
    /// `var(v) / ε`
    pub var_ratio_v: f64,
    /// `var(x) / (ε / a)`
    pub var_ratio_x: f64,
    /// Euclidean distance between `(mean_v, mean_x)` and `(α, β)`.
    pub mean_error: f64,
}

/// Raw ensemble at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSnapshot {
    pub t: f64,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
}

fn align(limit: &[LimitState], t: f64, tolerance: f64) -> Result<&LimitState> {
    let i = limit.partition_point(|s| s.t < t);
    let candidates = [i.checked_sub(1), Some(i)];
    candidates
        .iter()
        .flatten()
        .filter_map(|&k| limit.get(k))
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .filter(|s| (s.t - t).abs() <= tolerance)
        .ok_or(Error::Alignment { t, tolerance })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::sum::exact_sum(xs.iter().copied()) / n;
    let var = crate::sum::exact_sum(xs.iter().map(|z| (z - mean) * (z - mean))) / n;
    (mean, var)
}

/// Compares raw ensembles with the limit trajectory, nearest-neighbor aligned
/// within `tolerance`.
pub fn compare_samples(
    snapshots: &[SampleSnapshot],
    limit: &[LimitState],
    p: &ModelParams,
    bins: usize,
    tolerance: f64,
) -> Result<Vec<ProfileComparison>> {
    let eps = p.epsilon;
    snapshots
        .iter()
        .map(|snap| {
            let target = align(limit, snap.t, tolerance)?;
            let theory = theoretical_profile(target, p);
            let (mv, vv) = mean_var(&snap.v);
            let (mx, vx) = mean_var(&snap.x);
            let pv = log_density_profile(&snap.v, eps, bins, voltage_shift(eps))?;
            let px = log_density_profile(&snap.x, eps, bins, adaptation_shift(eps, p.a))?;
            Ok(ProfileComparison {
                t: snap.t,
                sup_error_v: profile_sup_error(&pv, |v| theory.voltage(v), eps),
                sup_error_x: profile_sup_error(&px, |x| theory.adaptation(x), eps),
                var_ratio_v: vv / eps,
                var_ratio_x: vx / (eps / p.a),
                mean_error: (mv - target.alpha).hypot(mx - target.beta),
            })
        })
        .collect()
}

/// Moment-only comparison from recorded statistics (no profiles).
pub fn compare_record(
    record: &TrajectoryRecord,
    limit: &[LimitState],
    p: &ModelParams,
    tolerance: f64,
) -> Result<Vec<ProfileComparison>> {
    let eps = p.epsilon;
    record
        .rows
        .iter()
        .map(|row| {
            let target = align(limit, row.t, tolerance)?;
            let m = &row.moments;
            Ok(ProfileComparison {
                t: row.t,
                sup_error_v: None,
                sup_error_x: None,
                var_ratio_v: m.var_v / eps,
                var_ratio_x: m.var_x / (eps / p.a),
                mean_error: (m.mean_v - target.alpha).hypot(m.mean_x - target.beta),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub median: f64,
    pub p90: f64,
    pub cells: usize,
}

/// Residual `R = (v - J) ∂vψ + |∂vψ|²` with central differences in `v`.
///
/// Cells are used when they and both `v`-neighbors are unmasked and
/// `ψ >= max ψ - range`; `range` defaults to [`dynamic_range`].
pub fn viscosity_residual(psi: &HopfCole, jg: f64, range: Option<f64>) -> Result<ResidualStats> {
    let g = &psi.grid;
    let top = psi
        .max_valid()
        .ok_or_else(|| Error::InsufficientSupport("every cell is masked".into()))?;
    let floor = top - range.unwrap_or_else(|| dynamic_range(psi.epsilon));
    let dv = g.dv();
    let mut r = Vec::new();
    for ix in 0..g.nx {
        for iv in 1..g.nv.saturating_sub(1) {
            let k = g.index(iv, ix);
            let (kl, kr) = (k - 1, k + 1);
            if !(psi.valid[k] && psi.valid[kl] && psi.valid[kr]) || psi.psi[k] < floor {
                continue;
            }
            let d = (psi.psi[kr] - psi.psi[kl]) / (2.0 * dv);
            let v = g.v_center(iv);
            r.push(((v - jg) * d + d * d).abs());
        }
    }
    if r.is_empty() {
        return Err(Error::InsufficientSupport(
            "no unmasked interior cell inside the resolvable range".into(),
        ));
    }
    r.sort_by(f64::total_cmp);
    Ok(ResidualStats {
        median: percentile_sorted(&r, 0.5),
        p90: percentile_sorted(&r, 0.9),
        cells: r.len(),
    })
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Least-squares slope of `ys` against `ts`.
pub fn regression_slope(ts: &[f64], ys: &[f64]) -> Option<f64> {
    let n = ts.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mt = ts[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (ts[i] - mt) * (ys[i] - my);
        sxx += (ts[i] - mt) * (ts[i] - mt);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Times of the maxima of `ys` between consecutive upward crossings of
/// `level`, refined by a parabola through the discrete peak.
pub fn peak_times(ts: &[f64], ys: &[f64], level: f64) -> Vec<f64> {
    let ups: Vec<usize> = (1..ys.len())
        .filter(|&i| ys[i - 1] < level && ys[i] >= level)
        .collect();
    ups.windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0], w[1]);
            let k = (a..b).max_by(|&i, &j| ys[i].total_cmp(&ys[j]))?;
            if k == 0 || k + 1 >= ys.len() {
                return Some(ts[k]);
            }
            let (y0, y1, y2) = (ys[k - 1], ys[k], ys[k + 1]);
            let denom = y0 - 2.0 * y1 + y2;
            let shift = if denom != 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
            Some(ts[k] + shift.clamp(-1.0, 1.0) * (ts[k + 1] - ts[k - 1]) / 2.0)
        })
        .collect()
}

/// Mean spacing of consecutive peaks, if at least `min_cycles` intervals exist.
pub fn mean_peak_period(ts: &[f64], ys: &[f64], level: f64, min_cycles: usize) -> Option<f64> {
    let peaks = peak_times(ts, ys, level);
    if peaks.len() < min_cycles + 1 {
        return None;
    }
    Some((peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64)
}
