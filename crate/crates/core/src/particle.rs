//! Euler-Maruyama integration of the mean-field coupled network.
//!
//! Each step is two-phase: the population mean `vbar` is reduced from the
//! pre-step state, then every neuron is advanced independently. Noise comes
//! from one ChaCha stream per neuron, keyed by `(seed, stream id)`, and the
//! mean is a correctly rounded sum, so trajectories are bitwise identical
//! for any thread count and equivariant under permutations of the neurons
//! together with their stream ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{sample_initial, voltage_drift, InitCondition, ModelParams};
use crate::sum::exact_sum;

/// Below this size the per-neuron update runs on the calling thread.
const PAR_THRESHOLD: usize = 4096;
const PAR_CHUNK: usize = 1024;

/// Stream id reserved for drawing the initial ensemble.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub t: f64,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
}

impl EnsembleState {
    pub fn new(t: f64, v: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(invalid("ensemble must contain at least one neuron"));
        }
        if v.len() != x.len() {
            return Err(invalid(format!(
                "voltage and adaptation arrays differ in length ({} vs {})",
                v.len(),
                x.len()
            )));
        }
        if let Some(i) = first_non_finite(&v, &x) {
            return Err(invalid(format!("non-finite initial state at index {i}")));
        }
        Ok(Self { t, v, x })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Reorders neurons so that neuron `i` of the result is neuron `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            t: self.t,
            v: perm.iter().map(|&i| self.v[i]).collect(),
            x: perm.iter().map(|&i| self.x[i]).collect(),
        }
    }
}

fn first_non_finite(v: &[f64], x: &[f64]) -> Option<usize> {
    v.iter()
        .zip(x)
        .position(|(a, b)| !(a.is_finite() && b.is_finite()))
}

/// Independent per-neuron noise streams.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    rngs: Vec<ChaCha8Rng>,
}

impl NoiseStreams {
    /// Streams `0..n` of `seed`.
    pub fn new(seed: u64, n: usize) -> Self {
        let ids: Vec<u64> = (0..n as u64).collect();
        Self::with_ids(seed, &ids)
    }

    pub fn with_ids(seed: u64, ids: &[u64]) -> Self {
        let rngs = ids
            .iter()
            .map(|&id| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(id);
                rng
            })
            .collect();
        Self { rngs }
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }
}

fn default_quantiles() -> Vec<f64> {
    vec![0.1, 0.25, 0.75, 0.9]
}

/// Network run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    /// Defaults to `min(epsilon / 10, 1e-3)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    /// Steps between recorded statistics; defaults to about 0.05 time units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
}

impl SimConfig {
    pub fn new(n: usize, t_end: f64, seed: u64) -> Self {
        Self {
            n,
            dt: None,
            t_end,
            seed,
            record_stride: None,
            quantiles: default_quantiles(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride);
        self
    }

    pub fn effective_dt(&self, p: &ModelParams) -> f64 {
        self.dt.unwrap_or_else(|| default_dt(p.epsilon))
    }

    pub fn effective_stride(&self, p: &ModelParams) -> usize {
        self.record_stride
            .unwrap_or_else(|| ((0.05 / self.effective_dt(p)).round() as usize).max(1))
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        let dt = self.effective_dt(p);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be > 0, got {dt}")));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if self.record_stride == Some(0) {
            return Err(invalid("record_stride must be >= 1"));
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(invalid(format!("quantile level {q} outside [0, 1]")));
        }
        Ok(())
    }
}

/// `min(epsilon / 10, 1e-3)`.
pub fn default_dt(epsilon: f64) -> f64 {
    (epsilon / 10.0).min(1e-3)
}

/// Population moments (divisor `n`). `m4_*` are raw fourth moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_v: f64,
    pub mean_x: f64,
    pub var_v: f64,
    pub var_x: f64,
    pub m4_v: f64,
    pub m4_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub t: f64,
    pub moments: Moments,
    pub quantiles_v: Vec<f64>,
    pub quantiles_x: Vec<f64>,
}

/// Recorded statistics of one network run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub quantile_levels: Vec<f64>,
    pub rows: Vec<StatsRow>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn mean_v(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.moments.mean_v).collect()
    }

    pub fn mean_x(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.moments.mean_x).collect()
    }

    /// Column names: moments first, then `q<pct>_v` and `q<pct>_x`.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["t", "mean_v", "mean_x", "var_v", "var_x", "m4_v", "m4_x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for var in ["v", "x"] {
            for q in &self.quantile_levels {
                cols.push(format!("q{}_{var}", quantile_label(*q)));
            }
        }
        cols
    }
}

fn quantile_label(q: f64) -> String {
    let pct = q * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Result of [`simulate`].
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub record: TrajectoryRecord,
    pub final_state: EnsembleState,
    pub dt: f64,
    pub steps: usize,
}

/// Arithmetic mean of the voltages, from a correctly rounded sum.
pub fn coupling_mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(invalid("coupling mean of an empty ensemble"));
    }
    Ok(exact_sum(v.iter().copied()) / v.len() as f64)
}

/// Advances the ensemble by one Euler-Maruyama step of size `dt`.
pub fn em_step(
    state: &mut EnsembleState,
    p: &ModelParams,
    dt: f64,
    noise: &mut NoiseStreams,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    if noise.len() != state.len() {
        return Err(invalid(format!(
            "{} noise streams for {} neurons",
            noise.len(),
            state.len()
        )));
    }
    let vbar = coupling_mean(&state.v)?;
    let kernel = StepKernel::new(p, dt, vbar);

    if state.len() < PAR_THRESHOLD {
        kernel.apply(&mut state.v, &mut state.x, &mut noise.rngs);
    } else {
        state
            .v
            .par_chunks_mut(PAR_CHUNK)
            .zip(state.x.par_chunks_mut(PAR_CHUNK))
            .zip(noise.rngs.par_chunks_mut(PAR_CHUNK))
            .for_each(|((v, x), rngs)| kernel.apply(v, x, rngs));
    }
    state.t += dt;

    if let Some(index) = first_non_finite(&state.v, &state.x) {
        return Err(Error::BlowUp {
            t: state.t,
            index,
            context: format!("dt = {dt}, epsilon = {}", p.epsilon),
        });
    }
    Ok(())
}

struct StepKernel<'a> {
    p: &'a ModelParams,
    dt: f64,
    vbar: f64,
    v_noise: f64,
    x_noise: f64,
}

impl<'a> StepKernel<'a> {
    fn new(p: &'a ModelParams, dt: f64, vbar: f64) -> Self {
        Self {
            p,
            dt,
            vbar,
            v_noise: p.sigma * (2.0 * dt).sqrt(),
            x_noise: (2.0 * p.adaptation_diffusion() * dt).sqrt(),
        }
    }

    #[inline]
    fn apply(&self, v: &mut [f64], x: &mut [f64], rngs: &mut [ChaCha8Rng]) {
        let (a, b, dt) = (self.p.a, self.p.b, self.dt);
        for ((vi, xi), rng) in v.iter_mut().zip(x.iter_mut()).zip(rngs.iter_mut()) {
            let (v0, x0) = (*vi, *xi);
            let mut dv = voltage_drift(v0, x0, self.vbar, self.p) * dt;
            if self.v_noise != 0.0 {
                let xi_v: f64 = StandardNormal.sample(rng);
                dv += self.v_noise * xi_v;
            }
            let mut dx = (-a * x0 + b * v0) * dt;
            if self.x_noise != 0.0 {
                let eta: f64 = StandardNormal.sample(rng);
                dx += self.x_noise * eta;
            }
            *vi = v0 + dv;
            *xi = x0 + dx;
        }
    }
}

/// Population moments of the ensemble.
pub fn empirical_moments(state: &EnsembleState) -> Moments {
    let n = state.len() as f64;
    let stats = |xs: &[f64]| {
        let mean = exact_sum(xs.iter().copied()) / n;
        let var = exact_sum(xs.iter().map(|&z| (z - mean) * (z - mean))) / n;
        let m4 = exact_sum(xs.iter().map(|&z| (z * z) * (z * z))) / n;
        (mean, var, m4)
    };
    let (mean_v, var_v, m4_v) = stats(&state.v);
    let (mean_x, var_x, m4_x) = stats(&state.x);
    Moments {
        mean_v,
        mean_x,
        var_v,
        var_x,
        m4_v,
        m4_x,
    }
}

/// Linear-interpolation quantiles at position `q (n - 1)` of the sorted sample.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(invalid("quantiles of an empty sample"));
    }
    if let Some(q) = qs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(qs.iter().map(|&q| sorted_quantile(&sorted, q)).collect())
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn stats_row(state: &EnsembleState, levels: &[f64]) -> StatsRow {
    let mut sv = state.v.clone();
    sv.sort_by(f64::total_cmp);
    let mut sx = state.x.clone();
    sx.sort_by(f64::total_cmp);
    StatsRow {
        t: state.t,
        moments: empirical_moments(state),
        quantiles_v: levels.iter().map(|&q| sorted_quantile(&sv, q)).collect(),
        quantiles_x: levels.iter().map(|&q| sorted_quantile(&sx, q)).collect(),
    }
}

/// Draws the initial ensemble and integrates it to `cfg.t_end`.
pub fn simulate(cfg: &SimConfig, p: &ModelParams, init: &InitCondition) -> Result<SimOutput> {
    simulate_observed(cfg, p, init, |_| {})
}

/// [`simulate`], calling `observer` with the full state at every recorded time.
pub fn simulate_observed<F>(
    cfg: &SimConfig,
    p: &ModelParams,
    init: &InitCondition,
    observer: F,
) -> Result<SimOutput>
where
    F: FnMut(&EnsembleState),
{
    p.validate()?;
    cfg.validate(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    let state = sample_initial(init, cfg.n, p, &mut rng)?;
    let mut noise = NoiseStreams::new(cfg.seed, cfg.n);
    simulate_from(state, cfg, p, &mut noise, observer)
}

/// Integrates an explicit starting state with caller-owned noise streams
/// (warm restarts, permutation experiments).
pub fn simulate_from<F>(
    mut state: EnsembleState,
    cfg: &SimConfig,
    p: &ModelParams,
    noise: &mut NoiseStreams,
    mut observer: F,
) -> Result<SimOutput>
where
    F: FnMut(&EnsembleState),
{
    p.validate()?;
    cfg.validate(p)?;
    let dt = cfg.effective_dt(p);
    let stride = cfg.effective_stride(p);
    let steps = (cfg.t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let t0 = state.t;

    let mut rows = vec![stats_row(&state, &cfg.quantiles)];
    observer(&state);
    for k in 1..=steps {
        em_step(&mut state, p, dt, noise).map_err(|e| match e {
            Error::BlowUp { t, index, context } => Error::BlowUp {
                t,
                index,
                context: format!(
                    "{context}, step {k} of {steps}; the stiff coupling needs dt well below epsilon"
                ),
            },
            other => other,
        })?;
        // pin time to the grid to avoid accumulated drift
        state.t = t0 + k as f64 * dt;
        if k % stride == 0 || k == steps {
            rows.push(stats_row(&state, &cfg.quantiles));
            observer(&state);
        }
    }
    Ok(SimOutput {
        record: TrajectoryRecord {
            quantile_levels: cfg.quantiles.clone(),
            rows,
        },
        final_state: state,
        dt,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cubic;
    use proptest::prelude::*;

    fn fig1(eps: f64) -> ModelParams {
        ModelParams::new(4.0, 0.3, 0.1, 0.0, eps)
    }

    #[test]
    fn coupling_mean_examples() {
        assert_eq!(coupling_mean(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        let c = 0.37;
        let v = vec![c; 17];
        let m = coupling_mean(&v).unwrap();
        assert_eq!(m, c);
        assert!(v.iter().all(|&vi| m - vi == 0.0));
        assert!(coupling_mean(&[]).is_err());
    }

    #[test]
    fn coupling_identity_against_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 37, 100] {
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 * z + 1.0
                })
                .collect();
            let vbar = coupling_mean(&v).unwrap();
            for i in 0..n {
                let direct: f64 = v.iter().map(|&vj| vj - v[i]).sum::<f64>() / n as f64;
                let via_mean = vbar - v[i];
                let scale = v.iter().map(|z| z.abs()).fold(1.0, f64::max);
                assert!((direct - via_mean).abs() <= 1e-12 * scale, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn moments_examples() {
        let s = EnsembleState::new(0.0, vec![2.0; 4], vec![-1.0; 4]).unwrap();
        let m = empirical_moments(&s);
        assert_eq!((m.mean_v, m.var_v, m.m4_v), (2.0, 0.0, 16.0));
        assert_eq!((m.mean_x, m.var_x, m.m4_x), (-1.0, 0.0, 1.0));
        let s = EnsembleState::new(0.0, vec![-1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let m = empirical_moments(&s);
        assert_eq!((m.mean_v, m.var_v, m.m4_v), (0.0, 1.0, 1.0));
    }

    #[test]
    fn gaussian_sample_variance_matches_closed_form() {
        let p = ModelParams::new(4.0, 0.3, 0.1, 0.0, 0.01);
        let init = InitCondition::gaussian(0.0, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = sample_initial(&init, 100_000, &p, &mut rng).unwrap();
        let m = empirical_moments(&s);
        assert!((m.var_v / 0.01 - 1.0).abs() < 0.05, "{}", m.var_v);
        assert!((m.var_x / 0.01 - 1.0).abs() < 0.05, "{}", m.var_x);
    }

    #[test]
    fn quantile_examples() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(quantiles(&v, &[0.0, 0.5, 1.0]).unwrap(), vec![1.0, 3.0, 5.0]);
        assert_eq!(quantiles(&[1.0, 2.0, 3.0, 4.0], &[0.25]).unwrap(), vec![1.75]);
        assert!(quantiles(&v, &[1.5]).is_err());
        assert!(quantiles(&v, &[-0.1]).is_err());
        assert!(quantiles(&[], &[0.5]).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(EnsembleState::new(0.0, vec![], vec![]).is_err());
        assert!(EnsembleState::new(0.0, vec![1.0], vec![]).is_err());
        assert!(EnsembleState::new(0.0, vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn single_neuron_is_explicit_euler() {
        let p = fig1(0.05).with_sigma(0.0).with_adaptation_noise(false);
        let mut s = EnsembleState::new(0.0, vec![0.7], vec![0.2]).unwrap();
        let mut noise = NoiseStreams::new(1, 1);
        let dt = 1e-3;
        em_step(&mut s, &p, dt, &mut noise).unwrap();
        let spec = p.drift_spec();
        let v_expected = 0.7 + (-cubic(0.7, &spec) - 0.2) * dt;
        let x_expected = 0.2 + (-0.3 * 0.2 + 0.1 * 0.7) * dt;
        assert_eq!(s.v[0], v_expected);
        assert_eq!(s.x[0], x_expected);
    }

    #[test]
    fn blow_up_is_reported() {
        let p = fig1(1e-3);
        let mut s = EnsembleState::new(0.0, vec![0.0, 50.0], vec![0.0, 0.0]).unwrap();
        let mut noise = NoiseStreams::new(3, 2);
        let mut err = None;
        for _ in 0..200 {
            if let Err(e) = em_step(&mut s, &p, 0.5, &mut noise) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::BlowUp { .. })), "{err:?}");
    }

    #[test]
    fn zero_horizon_records_initial_statistics() {
        let p = fig1(0.1);
        let cfg = SimConfig::new(64, 0.0, 5);
        let out = simulate(&cfg, &p, &InitCondition::point(0.4, 0.1)).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.record.rows.len(), 1);
        assert_eq!(out.record.rows[0].t, 0.0);
        assert_eq!(out.record.rows[0].moments.mean_v, 0.4);
    }

    #[test]
    fn record_times_increase_and_quantiles_are_ordered() {
        let p = fig1(0.05);
        let cfg = SimConfig::new(300, 1.0, 11).with_record_stride(7);
        let out = simulate(&cfg, &p, &InitCondition::gaussian(0.8, 0.0, 0.3)).unwrap();
        let rows = &out.record.rows;
        assert!(rows.windows(2).all(|w| w[1].t > w[0].t));
        assert!((rows.last().unwrap().t - 1.0).abs() < 1e-12);
        for r in rows {
            assert!(r.moments.var_v >= 0.0 && r.moments.var_x >= 0.0);
            assert!(r.quantiles_v.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.quantiles_x.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn stationary_at_stable_equilibrium() {
        // (0, 0) is a stable equilibrium of the limit system for these parameters
        let p = fig1(0.05).with_sigma(0.0).with_adaptation_noise(false);
        let mut s = EnsembleState::new(0.0, vec![0.0; 8], vec![0.0; 8]).unwrap();
        let mut noise = NoiseStreams::new(0, 8);
        for _ in 0..1000 {
            em_step(&mut s, &p, 1e-3, &mut noise).unwrap();
        }
        assert!(s.v.iter().chain(&s.x).all(|z| z.abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = fig1(0.02);
        let cfg = SimConfig::new(200, 0.5, 42);
        let init = InitCondition::gaussian(1.0, 0.5, 0.3);
        let a = simulate(&cfg, &p, &init).unwrap();
        let b = simulate(&cfg, &p, &init).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = fig1(0.02);
        let n = 3 * PAR_THRESHOLD / 2;
        let cfg = SimConfig::new(n, 0.05, 9).with_record_stride(10);
        let init = InitCondition::gaussian(0.6, 0.0, 0.3);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&cfg, &p, &init).unwrap())
        };
        let one = run(1);
        let four = run(4);
        let bits = |s: &EnsembleState| s.v.iter().chain(&s.x).map(|z| z.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&one.final_state), bits(&four.final_state));
        assert_eq!(one.record, four.record);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn permutation_equivariance(seed in any::<u64>(), rot in 1usize..40) {
            let n = 40;
            let p = fig1(0.05);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = sample_initial(&InitCondition::gaussian(1.1, 0.3, 0.3), n, &p, &mut rng).unwrap();
            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
            let ids: Vec<u64> = (0..n as u64).collect();
            let pids: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
            let cfg = SimConfig::new(n, 0.2, seed).with_dt(2e-3);
            let mut na = NoiseStreams::with_ids(seed, &ids);
            let mut nb = NoiseStreams::with_ids(seed, &pids);
            let a = simulate_from(init.clone(), &cfg, &p, &mut na, |_| {}).unwrap();
            let b = simulate_from(init.permuted(&perm), &cfg, &p, &mut nb, |_| {}).unwrap();
            let pa = a.final_state.permuted(&perm);
            prop_assert_eq!(pa.v, b.final_state.v);
            prop_assert_eq!(pa.x, b.final_state.x);
            prop_assert_eq!(a.record, b.record);
        }
    }
}
