//! Regime classification of the limit system from the cubic discriminant
//! and the Jacobian trace, plus numerical limit-cycle detection.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::limit_ode::{equilibria, limit_rhs, Equilibrium, LimitState};
use crate::model::{cubic_derivative, ModelParams};

/// Below this magnitude `Δ` and `T` are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Discriminant of the equilibrium cubic in closed form:
///
/// ```text
/// Δ = -27 I² + 18 (1+λ)(λ+b/a) I - 4 (λ+b/a)³ - 4 (1+λ)³ I + (1+λ)² (λ+b/a)²
/// ```
pub fn discriminant(p: &ModelParams) -> Result<f64> {
    if !(p.a > 0.0) {
        return Err(invalid(format!("a must be > 0, got {}", p.a)));
    }
    let i0 = p.i_ext;
    let l = 1.0 + p.lambda;
    let k = p.lambda + p.b / p.a;
    Ok(-27.0 * i0 * i0 + 18.0 * l * k * i0 - 4.0 * k * k * k - 4.0 * l * l * l * i0
        + l * l * k * k)
}

/// Jacobian trace at the equilibrium with voltage `vstar`:
/// `-3 v*² + 2(1+λ) v* - λ - a`.
pub fn trace_at(vstar: f64, p: &ModelParams) -> f64 {
    -3.0 * vstar * vstar + 2.0 * (1.0 + p.lambda) * vstar - p.lambda - p.a
}

/// Jacobian determinant `a N'(v*) + b`.
pub fn determinant_at(vstar: f64, p: &ModelParams) -> f64 {
    p.a * cubic_derivative(vstar, &p.drift_spec()) + p.b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
    /// Trace or determinant within tolerance of zero.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Bistable,
    MonostableStable,
    Oscillatory,
    DegenerateSaddleNode,
    DegenerateHopf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub v: f64,
    pub x: f64,
    pub trace: f64,
    pub determinant: f64,
    /// Eigenvalues as `(re, im)` pairs.
    pub eigenvalues: [(f64, f64); 2],
    pub stability: Stability,
    pub double_root: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub period: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub returns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationReport {
    pub delta: f64,
    pub equilibria: Vec<EquilibriumReport>,
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<LimitCycle>,
}

fn eigen_2x2(trace: f64, det: f64) -> [(f64, f64); 2] {
    let disc = trace * trace / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(trace / 2.0 - s, 0.0), (trace / 2.0 + s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(trace / 2.0, -s), (trace / 2.0, s)]
    }
}

fn stability(trace: f64, det: f64) -> Stability {
    if det.abs() < DEGENERACY_TOL || (det > 0.0 && trace.abs() < DEGENERACY_TOL) {
        Stability::Marginal
    } else if det < 0.0 {
        Stability::Saddle
    } else if trace < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

fn report_equilibrium(e: &Equilibrium, p: &ModelParams) -> EquilibriumReport {
    let trace = trace_at(e.v, p);
    let determinant = determinant_at(e.v, p);
    EquilibriumReport {
        v: e.v,
        x: e.x,
        trace,
        determinant,
        eigenvalues: eigen_2x2(trace, determinant),
        stability: stability(trace, determinant),
        double_root: e.double_root,
    }
}

/// Computes `Δ`, the equilibria with their linear stability, and the regime.
/// The `cycle` field is left empty; see [`detect_limit_cycle`].
pub fn classify(p: &ModelParams) -> Result<BifurcationReport> {
    let delta = discriminant(p)?;
    let eqs = equilibria(p)?;
    let equilibria: Vec<_> = eqs.iter().map(|e| report_equilibrium(e, p)).collect();
    let regime = if delta.abs() < DEGENERACY_TOL {
        Regime::DegenerateSaddleNode
    } else if delta > 0.0 {
        Regime::Bistable
    } else {
        // Δ < 0: the cubic has a single real root
        let t = equilibria
            .first()
            .map(|e| e.trace)
            .ok_or_else(|| Error::Inconclusive("no real equilibrium found".into()))?;
        if t.abs() < DEGENERACY_TOL {
            Regime::DegenerateHopf
        } else if t < 0.0 {
            Regime::MonostableStable
        } else {
            Regime::Oscillatory
        }
    };
    Ok(BifurcationReport {
        delta,
        equilibria,
        regime,
        cycle: None,
    })
}

/// Classifies the system for each input current in `currents`, all other
/// parameters taken from `base`.
pub fn sweep_input_current(base: &ModelParams, currents: &[f64]) -> Result<Vec<(f64, BifurcationReport)>> {
    currents
        .iter()
        .map(|&i| {
            let p = ModelParams { i_ext: i, ..*base };
            classify(&p).map(|r| (i, r))
        })
        .collect()
}

/// Settings for [`detect_limit_cycle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleOptions {
    pub dt: f64,
    pub transient: f64,
    /// Total integration budget including the transient.
    pub max_time: f64,
    pub min_returns: usize,
    pub max_relative_spread: f64,
    pub fixed_point_tol: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            transient: 200.0,
            max_time: 5000.0,
            min_returns: 5,
            max_relative_spread: 0.01,
            fixed_point_tol: 1e-8,
        }
    }
}

fn rk4(s: (f64, f64), h: f64, p: &ModelParams) -> (f64, f64) {
    let f = |a: f64, b: f64| limit_rhs(&LimitState::new(0.0, a, b), p);
    let k1 = f(s.0, s.1);
    let k2 = f(s.0 + 0.5 * h * k1.0, s.1 + 0.5 * h * k1.1);
    let k3 = f(s.0 + 0.5 * h * k2.0, s.1 + 0.5 * h * k2.1);
    let k4 = f(s.0 + h * k3.0, s.1 + h * k3.1);
    (
        s.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Looks for an attracting periodic orbit through the Poincaré section
/// `v = v*` (upward crossings).
///
/// Returns `Ok(None)` when the trajectory settles on a fixed point (state
/// moves less than `fixed_point_tol` over one time unit), `Ok(Some(cycle))`
/// once `min_returns` consecutive return times agree to within
/// `max_relative_spread`, and [`Error::Inconclusive`] when the budget runs out.
pub fn detect_limit_cycle(
    p: &ModelParams,
    s0: LimitState,
    opts: &CycleOptions,
) -> Result<Option<LimitCycle>> {
    if !(opts.dt > 0.0) || opts.min_returns == 0 {
        return Err(invalid("cycle detection needs dt > 0 and min_returns >= 1"));
    }
    let eqs = equilibria(p)?;
    let section = eqs
        .get(eqs.len() / 2)
        .map(|e| e.v)
        .ok_or_else(|| Error::Inconclusive("no equilibrium to place the section".into()))?;

    let h = opts.dt;
    let per_unit = ((1.0 / h).round() as usize).max(1);
    let transient_steps = (opts.transient / h).round() as usize;
    let total_steps = (opts.max_time / h).round() as usize;

    let mut s = (s0.alpha, s0.beta);
    let mut anchor = s;
    let mut crossings: Vec<f64> = Vec::new();
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for k in 1..=total_steps {
        let prev = s;
        s = rk4(prev, h, p);
        if !(s.0.is_finite() && s.1.is_finite()) {
            return Err(Error::BlowUp {
                t: s0.t + k as f64 * h,
                index: 0,
                context: "limit-cycle integration".into(),
            });
        }
        if k % per_unit == 0 {
            let moved = (s.0 - anchor.0).abs().max((s.1 - anchor.1).abs());
            if moved < opts.fixed_point_tol {
                return Ok(None);
            }
            anchor = s;
        }
        if k <= transient_steps {
            continue;
        }
        if !crossings.is_empty() {
            v_min = v_min.min(s.0);
            v_max = v_max.max(s.0);
        }
        if prev.0 < section && s.0 >= section {
            let frac = (section - prev.0) / (s.0 - prev.0);
            crossings.push((k as f64 - 1.0 + frac) * h);
            if crossings.len() > opts.min_returns {
                let recent = &crossings[crossings.len() - opts.min_returns - 1..];
                let periods: Vec<f64> = recent.windows(2).map(|w| w[1] - w[0]).collect();
                let mean = periods.iter().sum::<f64>() / periods.len() as f64;
                let lo = periods.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = periods.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if mean > 0.0 && (hi - lo) / mean < opts.max_relative_spread {
                    return Ok(Some(LimitCycle {
                        period: mean,
                        v_min,
                        v_max,
                        returns: periods.len(),
                    }));
                }
            }
        }
    }
    Err(Error::Inconclusive(format!(
        "no fixed point or periodic orbit identified within {} time units ({} section crossings)",
        opts.max_time,
        crossings.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, a: f64, b: f64, i: f64) -> ModelParams {
        ModelParams::new(lambda, a, b, i, 0.1)
    }

    /// Brute-force discriminant from the root-difference product.
    fn discriminant_from_roots(p: &ModelParams) -> f64 {
        let (pp, q, r) = crate::limit_ode::equilibrium_cubic(p).unwrap();
        // textbook form for v³ + p v² + q v + r
        18.0 * pp * q * r - 4.0 * pp.powi(3) * r + pp * pp * q * q - 4.0 * q.powi(3) - 27.0 * r * r
    }

    /// Eigenvalues of a central-difference Jacobian of the limit rhs.
    fn fd_eigen(v: f64, x: f64, p: &ModelParams) -> [(f64, f64); 2] {
        let h = 1e-6;
        let f = |a: f64, b: f64| limit_rhs(&LimitState::new(0.0, a, b), p);
        let (fa_p, fa_m) = (f(v + h, x), f(v - h, x));
        let (fb_p, fb_m) = (f(v, x + h), f(v, x - h));
        let j11 = (fa_p.0 - fa_m.0) / (2.0 * h);
        let j21 = (fa_p.1 - fa_m.1) / (2.0 * h);
        let j12 = (fb_p.0 - fb_m.0) / (2.0 * h);
        let j22 = (fb_p.1 - fb_m.1) / (2.0 * h);
        let tr = j11 + j22;
        let det = j11 * j22 - j12 * j21;
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            [(tr / 2.0 - disc.sqrt(), 0.0), (tr / 2.0 + disc.sqrt(), 0.0)]
        } else {
            [(tr / 2.0, -(-disc).sqrt()), (tr / 2.0, (-disc).sqrt())]
        }
    }

    #[test]
    fn discriminant_examples() {
        let d = discriminant(&params(4.0, 0.3, 0.1, 0.0)).unwrap();
        assert!((d - 3887.0 / 27.0).abs() < 1e-10, "{d}");
        let d = discriminant(&params(4.0, 0.03, 0.1, 4.0)).unwrap();
        assert!((d + 25.04).abs() < 0.01, "{d}");
        let mut p = params(4.0, 0.3, 0.1, 0.0);
        p.a = 0.0;
        assert!(discriminant(&p).is_err());
    }

    #[test]
    fn printed_discriminant_is_textbook_discriminant() {
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let p = params(1.0 + 6.0 * next(), 0.01 + next(), next(), -3.0 + 10.0 * next());
            let printed = discriminant(&p).unwrap();
            let textbook = discriminant_from_roots(&p);
            let scale = printed.abs().max(textbook.abs()).max(1.0);
            assert!((printed - textbook).abs() <= 1e-10 * scale, "{printed} {textbook}");
        }
    }

    #[test]
    fn trace_examples() {
        let p = params(4.0, 0.3, 0.1, 0.0);
        assert!((trace_at(0.0, &p) + 4.3).abs() < 1e-15);
        // roots of 3v² - 10v + 4 make the trace equal to -a
        let mut q = params(4.0, 1e-12, 0.1, 0.0);
        let v = (10.0 - (100.0f64 - 48.0).sqrt()) / 6.0;
        q.a = 1e-12;
        assert!(trace_at(v, &q).abs() < 1e-11);
    }

    #[test]
    fn trace_matches_fd_eigenvalue_sum() {
        for (lambda, a, b, i) in [(4.0, 0.3, 0.1, 0.0), (4.0, 0.01, 0.1, 8.0), (3.0, 0.05, 0.4, 2.0), (5.5, 0.2, 0.0, -1.0)] {
            let p = params(lambda, a, b, i);
            for e in equilibria(&p).unwrap() {
                let ev = fd_eigen(e.v, e.x, &p);
                let sum = ev[0].0 + ev[1].0;
                assert!((sum - trace_at(e.v, &p)).abs() < 1e-8, "{sum}");
            }
        }
    }

    #[test]
    fn classify_bistable() {
        let r = classify(&params(4.0, 0.3, 0.1, 0.0)).unwrap();
        assert_eq!(r.regime, Regime::Bistable);
        assert_eq!(r.equilibria.len(), 3);
        assert!((r.delta - 143.96).abs() < 0.01);
        let labels: Vec<_> = r.equilibria.iter().map(|e| e.stability).collect();
        assert_eq!(labels, vec![Stability::Stable, Stability::Saddle, Stability::Stable]);
    }

    #[test]
    fn classify_uncoupled_adaptation() {
        let r = classify(&params(4.0, 0.3, 0.0, 0.0)).unwrap();
        let vs: Vec<f64> = r.equilibria.iter().map(|e| e.v).collect();
        assert_eq!(vs.len(), 3);
        for (v, w) in vs.iter().zip([0.0, 1.0, 4.0]) {
            assert!((v - w).abs() < 1e-12);
        }
        let p = params(4.0, 0.3, 0.0, 0.0);
        for (e, want) in r.equilibria.iter().zip([true, false, true]) {
            let ev = fd_eigen(e.v, e.x, &p);
            let stable = ev.iter().all(|z| z.0 < 0.0);
            assert_eq!(stable, want);
            assert_eq!(e.stability == Stability::Stable, want);
        }
    }

    #[test]
    fn hopf_transition_in_input_sweep() {
        let base = params(4.0, 0.01, 0.1, 0.0);
        // independent oracle: bisection on T(v*(I)) with the single root from Newton
        let single_root = |i: f64| {
            let mut v: f64 = 1.0;
            for _ in 0..200 {
                let f = v * v * v - 5.0 * v * v + 14.0 * v - i;
                v -= f / (3.0 * v * v - 10.0 * v + 14.0);
            }
            v
        };
        let t_of = |i: f64| -3.0 * single_root(i).powi(2) + 10.0 * single_root(i) - 4.0 - 0.01;
        let (mut lo, mut hi) = (0.0, 10.0);
        assert!(t_of(lo) < 0.0 && t_of(hi) > 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if t_of(mid) < 0.0 { lo = mid } else { hi = mid }
        }
        let threshold = 0.5 * (lo + hi);

        let currents: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let sweep = sweep_input_current(&base, &currents).unwrap();
        let first_osc = sweep
            .iter()
            .find(|(_, r)| r.regime == Regime::Oscillatory)
            .map(|(i, _)| *i)
            .unwrap();
        assert!(first_osc >= threshold && first_osc - threshold <= 0.05 + 1e-12, "{first_osc} vs {threshold}");
        for (i, r) in &sweep {
            let expected = if *i < threshold { Regime::MonostableStable } else { Regime::Oscillatory };
            assert_eq!(r.regime, expected, "I = {i}");
        }
    }

    #[test]
    fn degenerate_saddle_node() {
        // (v - 1)² (v - 3): Δ = 0 exactly
        let r = classify(&params(4.0, 0.1, 0.3, 3.0)).unwrap();
        assert_eq!(r.regime, Regime::DegenerateSaddleNode);
        assert!(r.equilibria.iter().any(|e| e.double_root));
    }

    #[test]
    fn cycle_none_for_stable_fixed_point() {
        let p = params(4.0, 0.01, 0.1, 2.0);
        assert_eq!(classify(&p).unwrap().regime, Regime::MonostableStable);
        let got = detect_limit_cycle(&p, LimitState::new(0.0, 1.5, 0.0), &CycleOptions::default()).unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn cycle_none_near_bistable_attractor() {
        let p = params(4.0, 0.3, 0.1, 0.0);
        let eq = equilibria(&p).unwrap();
        let s0 = LimitState::new(0.0, eq[2].v + 0.05, eq[2].x - 0.05);
        assert!(detect_limit_cycle(&p, s0, &CycleOptions::default()).unwrap().is_none());
    }

    #[test]
    fn cycle_period_reproducible_across_initial_conditions() {
        let p = params(4.0, 0.01, 0.1, 14.0);
        assert_eq!(classify(&p).unwrap().regime, Regime::Oscillatory);
        let opts = CycleOptions::default();
        let a = detect_limit_cycle(&p, LimitState::new(0.0, 0.0, 0.0), &opts).unwrap().unwrap();
        let b = detect_limit_cycle(&p, LimitState::new(0.0, 3.0, 20.0), &opts).unwrap().unwrap();
        assert!(a.period > 0.0);
        assert!((a.period - b.period).abs() / a.period < 5e-3, "{} {}", a.period, b.period);
        assert!(a.v_min < a.v_max);
    }

    #[test]
    fn tiny_budget_is_inconclusive() {
        let p = params(4.0, 0.01, 0.1, 14.0);
        let opts = CycleOptions { transient: 1.0, max_time: 20.0, ..CycleOptions::default() };
        let err = detect_limit_cycle(&p, LimitState::new(0.0, 0.0, 0.0), &opts).unwrap_err();
        assert!(matches!(err, Error::Inconclusive(_)));
    }
}
