//! The strong-coupling limit: single-neuron FitzHugh-Nagumo dynamics of the
//! concentration point `(alpha, beta)`.
//!
//! ```text
//! alpha' = -N(alpha) + I_ext - beta
//! beta'  = -a beta + b alpha
//! ```
//!
//! The adaptation equation uses the `-a beta + b alpha` sign, which is the
//! one forced by the network's `dx = (-a x + b v) dt`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitState {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LimitState {
    pub fn new(t: f64, alpha: f64, beta: f64) -> Self {
        Self { t, alpha, beta }
    }
}

/// Right-hand side `(dalpha/dt, dbeta/dt)`.
#[inline]
pub fn limit_rhs(s: &LimitState, p: &ModelParams) -> (f64, f64) {
    rhs(s.alpha, s.beta, p)
}

#[inline]
fn rhs(alpha: f64, beta: f64, p: &ModelParams) -> (f64, f64) {
    (
        -p.drift_spec().eval(alpha) + p.i_ext - beta,
        -p.a * beta + p.b * alpha,
    )
}

fn rk4_step(alpha: f64, beta: f64, h: f64, p: &ModelParams) -> (f64, f64) {
    let (k1a, k1b) = rhs(alpha, beta, p);
    let (k2a, k2b) = rhs(alpha + 0.5 * h * k1a, beta + 0.5 * h * k1b, p);
    let (k3a, k3b) = rhs(alpha + 0.5 * h * k2a, beta + 0.5 * h * k2b, p);
    let (k4a, k4b) = rhs(alpha + h * k3a, beta + h * k3b, p);
    (
        alpha + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
        beta + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
    )
}

/// Classical fourth-order Runge-Kutta from `s0` over `t_end` time units.
///
/// Samples sit at `s0.t + k dt`; the last step is shortened to land on the horizon.
pub fn rk4_integrate(
    s0: LimitState,
    p: &ModelParams,
    dt: f64,
    t_end: f64,
) -> Result<Vec<LimitState>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid(format!("t_end must be >= 0, got {t_end}")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s0);
    let (mut alpha, mut beta) = (s0.alpha, s0.beta);
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * dt;
        let h = dt.min(t_end - t_prev);
        (alpha, beta) = rk4_step(alpha, beta, h, p);
        let t = s0.t + if k == steps { t_end } else { k as f64 * dt };
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::BlowUp {
                t,
                index: 0,
                context: format!("limit ODE with dt = {dt}"),
            });
        }
        out.push(LimitState::new(t, alpha, beta));
    }
    Ok(out)
}

/// Linear interpolation in a time-ordered trajectory; clamps outside its range.
pub fn interpolate(traj: &[LimitState], t: f64) -> Option<LimitState> {
    let first = traj.first()?;
    let last = traj.last()?;
    if t <= first.t {
        return Some(*first);
    }
    if t >= last.t {
        return Some(*last);
    }
    let idx = traj.partition_point(|s| s.t <= t);
    let (s0, s1) = (traj[idx - 1], traj[idx]);
    let w = (t - s0.t) / (s1.t - s0.t);
    Some(LimitState::new(
        t,
        s0.alpha + w * (s1.alpha - s0.alpha),
        s0.beta + w * (s1.beta - s0.beta),
    ))
}

/// A fixed point `(v*, x* = (b/a) v*)` of the limit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub v: f64,
    pub x: f64,
    /// Set when the point is a double root of the equilibrium cubic.
    pub double_root: bool,
}

/// Coefficients `(p, q, r)` of the monic equilibrium cubic
/// `v³ + p v² + q v + r = v³ - (1+λ) v² + (λ + b/a) v - I_ext`.
pub fn equilibrium_cubic(params: &ModelParams) -> Result<(f64, f64, f64)> {
    if !(params.a > 0.0) {
        return Err(invalid(format!(
            "a must be > 0 for equilibria to exist, got {}",
            params.a
        )));
    }
    let lambda = params.lambda;
    Ok((
        -(1.0 + lambda),
        lambda + params.b / params.a,
        -params.i_ext,
    ))
}

/// All real equilibria, sorted by voltage.
///
/// Roots of the depressed cubic are bootstrapped analytically (trigonometric
/// form for three real roots, Cardano otherwise) and then polished by Newton
/// iteration on the original cubic.
pub fn equilibria(params: &ModelParams) -> Result<Vec<Equilibrium>> {
    let (p, q, r) = equilibrium_cubic(params)?;
    let roots = real_cubic_roots(p, q, r);
    // the truncated drift is cubic only on [-M, M]; equilibria on the linear
    // extension are not reported
    let roots = match params.truncation {
        Some(m) => roots.into_iter().filter(|e| e.v.abs() <= m).collect(),
        None => roots,
    };
    Ok(with_adaptation(roots, params))
}

fn with_adaptation(mut roots: Vec<Equilibrium>, params: &ModelParams) -> Vec<Equilibrium> {
    for e in &mut roots {
        e.x = params.b / params.a * e.v;
    }
    roots
}

fn newton_polish(mut v: f64, p: f64, q: f64, r: f64) -> f64 {
    for _ in 0..100 {
        let f = ((v + p) * v + q) * v + r;
        let df = (3.0 * v + 2.0 * p) * v + q;
        if df == 0.0 || !f.is_finite() {
            break;
        }
        let step = f / df;
        let next = v - step;
        if !next.is_finite() {
            break;
        }
        let done = step.abs() <= 4.0 * f64::EPSILON * v.abs().max(1.0);
        v = next;
        if done {
            break;
        }
    }
    v
}

/// Real roots of `v³ + p v² + q v + r`.
pub(crate) fn real_cubic_roots(p: f64, q: f64, r: f64) -> Vec<Equilibrium> {
    use std::f64::consts::PI;
    let shift = -p / 3.0;
    // depressed: t³ + pp t + qq with v = t + shift
    let pp = q - p * p / 3.0;
    let qq = 2.0 * p * p * p / 27.0 - p * q / 3.0 + r;
    let disc = -(4.0 * pp * pp * pp + 27.0 * qq * qq);
    let scale = (pp.abs().powf(1.5) + qq.abs()).max(f64::MIN_POSITIVE);

    let mut roots: Vec<Equilibrium> = Vec::with_capacity(3);
    let plain = |v: f64| Equilibrium {
        v,
        x: 0.0,
        double_root: false,
    };
    if disc.abs() <= 1e-14 * scale * scale {
        // repeated root
        if pp.abs() <= 1e-14 * scale.max(1.0) {
            roots.push(Equilibrium {
                v: newton_polish(shift, p, q, r),
                x: 0.0,
                double_root: true,
            });
        } else {
            let simple = 3.0 * qq / pp;
            let double = -1.5 * qq / pp;
            roots.push(plain(newton_polish(simple + shift, p, q, r)));
            roots.push(Equilibrium {
                v: double + shift,
                x: 0.0,
                double_root: true,
            });
        }
    } else if disc > 0.0 {
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * qq / (pp * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        for k in 0..3 {
            let t = m * (theta - 2.0 * PI * k as f64 / 3.0).cos();
            roots.push(plain(newton_polish(t + shift, p, q, r)));
        }
    } else {
        // one real root (Cardano)
        let s = (qq * qq / 4.0 + pp * pp * pp / 27.0).sqrt();
        let t = (-qq / 2.0 + s).cbrt() + (-qq / 2.0 - s).cbrt();
        roots.push(plain(newton_polish(t + shift, p, q, r)));
    }
    roots.sort_by(|a, b| a.v.total_cmp(&b.v));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, a: f64, b: f64, i: f64) -> ModelParams {
        ModelParams::new(lambda, a, b, i, 0.1)
    }

    fn voltages(p: &ModelParams) -> Vec<f64> {
        equilibria(p).unwrap().iter().map(|e| e.v).collect()
    }

    #[test]
    fn rhs_examples() {
        let p = params(4.0, 0.03, 0.1, 4.0);
        let (da, db) = limit_rhs(&LimitState::new(0.0, 3.0, 10.0), &p);
        assert!(da.abs() < 1e-12 && db.abs() < 1e-12, "{da} {db}");

        let p = params(4.0, 0.3, 0.0, 0.0);
        for v in [0.0, 1.0, 4.0] {
            let (da, db) = limit_rhs(&LimitState::new(0.0, v, 0.0), &p);
            assert_eq!((da, db), (0.0, 0.0));
        }
    }

    #[test]
    fn factored_equilibria() {
        let vs = voltages(&params(4.0, 0.3, 0.0, 0.0));
        assert_eq!(vs.len(), 3);
        for (got, want) in vs.iter().zip([0.0, 1.0, 4.0]) {
            assert!((got - want).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn quadratic_formula_equilibria() {
        // v (v² - 5v + 13/3): roots 0 and (5 ± sqrt(25 - 52/3)) / 2
        let vs = voltages(&params(4.0, 0.3, 0.1, 0.0));
        let d = (25.0f64 - 52.0 / 3.0).sqrt();
        let want = [0.0, (5.0 - d) / 2.0, (5.0 + d) / 2.0];
        assert_eq!(vs.len(), 3);
        for (got, w) in vs.iter().zip(want) {
            assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        }
        assert!((vs[1] - 1.115).abs() < 1e-3 && (vs[2] - 3.885).abs() < 1e-3);
    }

    #[test]
    fn single_equilibrium_with_complex_pair() {
        let p = params(4.0, 0.03, 0.1, 4.0);
        let eq = equilibria(&p).unwrap();
        assert_eq!(eq.len(), 1);
        assert!((eq[0].v - 3.0).abs() < 1e-12);
        assert!((eq[0].x - 10.0).abs() < 1e-9);
    }

    #[test]
    fn double_root_is_annotated() {
        // (v - 1)² (v - 3) = v³ - 5v² + 7v - 3 : λ = 4, b/a = 3, I = 3
        let p = params(4.0, 0.1, 0.3, 3.0);
        let eq = equilibria(&p).unwrap();
        assert_eq!(eq.len(), 2, "{eq:?}");
        assert!(eq.iter().any(|e| e.double_root && (e.v - 1.0).abs() < 1e-6));
        assert!(eq.iter().any(|e| !e.double_root && (e.v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn zero_adaptation_rate_is_rejected() {
        let mut p = params(4.0, 0.3, 0.1, 0.0);
        p.a = 0.0;
        assert!(equilibria(&p).is_err());
    }

    #[test]
    fn equilibria_zero_the_rhs() {
        for lambda in [2.0, 3.5, 4.0, 6.0] {
            for i in [-2.0, 0.0, 1.3, 4.0, 6.0] {
                let p = params(lambda, 0.3, 0.1, i);
                for e in equilibria(&p).unwrap() {
                    let (da, db) = limit_rhs(&LimitState::new(0.0, e.v, e.x), &p);
                    assert!(da.abs() < 1e-10 && db.abs() < 1e-10, "{lambda} {i}: {da} {db}");
                }
            }
        }
    }

    #[test]
    fn equilibrium_is_stationary_under_rk4() {
        let p = params(4.0, 0.3, 0.1, 0.0);
        let e = equilibria(&p).unwrap()[2];
        let traj = rk4_integrate(LimitState::new(0.0, e.v, e.x), &p, 0.01, 10.0).unwrap();
        assert_eq!(traj.len(), 1001);
        for s in &traj {
            assert!((s.alpha - e.v).abs() < 1e-10 && (s.beta - e.x).abs() < 1e-10);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Richardson comparison against a dt/64 reference on a smooth segment
        let p = params(4.0, 0.3, 0.1, 0.0);
        let s0 = LimitState::new(0.0, 0.8, 0.0);
        let end = |dt: f64| *rk4_integrate(s0, &p, dt, 2.0).unwrap().last().unwrap();
        let reference = end(0.1 / 64.0);
        let err = |dt: f64| {
            let s = end(dt);
            (s.alpha - reference.alpha).abs().max((s.beta - reference.beta).abs())
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 2f64.powf(3.8), "ratio {ratio}");
        assert!((ratio - 16.0).abs() < 3.0, "ratio {ratio}");
    }

    #[test]
    fn horizon_is_hit_exactly() {
        let p = params(4.0, 0.3, 0.1, 0.0);
        let traj = rk4_integrate(LimitState::new(1.0, 0.5, 0.0), &p, 0.3, 1.0).unwrap();
        assert!((traj.last().unwrap().t - 2.0).abs() < 1e-12);
        assert_eq!(rk4_integrate(LimitState::new(0.0, 0.5, 0.0), &p, 0.3, 0.0).unwrap().len(), 1);
        assert!(rk4_integrate(LimitState::new(0.0, 0.5, 0.0), &p, 0.0, 1.0).is_err());
    }

    #[test]
    fn bistable_trajectories_pick_sides_of_the_separatrix() {
        let p = params(4.0, 0.3, 0.1, 0.0);
        let eq = equilibria(&p).unwrap();
        let end = |v0: f64| rk4_integrate(LimitState::new(0.0, v0, 1.0), &p, 0.01, 80.0).unwrap().last().unwrap().alpha;
        assert!((end(1.0) - eq[0].v).abs() < 1e-3);
        assert!((end(1.6) - eq[2].v).abs() < 1e-3);
    }

    #[test]
    fn interpolation_is_linear_between_samples() {
        let traj = vec![LimitState::new(0.0, 0.0, 1.0), LimitState::new(1.0, 2.0, 3.0)];
        let s = interpolate(&traj, 0.25).unwrap();
        assert!((s.alpha - 0.5).abs() < 1e-15 && (s.beta - 1.5).abs() < 1e-15);
        assert_eq!(interpolate(&traj, 5.0).unwrap().alpha, 2.0);
        assert!(interpolate(&[], 0.0).is_none());
    }
}
