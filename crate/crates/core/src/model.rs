//! Model parameters, the cubic FitzHugh-Nagumo drift and its truncation,
//! and initial-condition samplers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::particle::EnsembleState;

/// Physical parameters of the network, the mean-field PDE and the limit ODE.
///
/// `epsilon` is the inverse coupling strength `1/J`. The voltage noise has
/// amplitude `sigma`, applied as `sigma * sqrt(2 dt) * xi` per step, so
/// `sigma = 1` corresponds to unit diffusion in the PDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    #[serde(default)]
    pub i_ext: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub epsilon: f64,
    /// Adds `sqrt(2 epsilon) dB` to the adaptation variable.
    #[serde(default = "default_true")]
    pub adaptation_noise: bool,
    /// Truncation level `M` of the cubic; `None` keeps the full cubic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl ModelParams {
    pub fn new(lambda: f64, a: f64, b: f64, i_ext: f64, epsilon: f64) -> Self {
        Self {
            a,
            b,
            lambda,
            i_ext,
            sigma: 1.0,
            epsilon,
            adaptation_noise: true,
            truncation: None,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_adaptation_noise(mut self, on: bool) -> Self {
        self.adaptation_noise = on;
        self
    }

    pub fn with_truncation(mut self, m: Option<f64>) -> Self {
        self.truncation = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.lambda, self.i_ext, self.sigma, self.epsilon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        if self.a <= 0.0 {
            return Err(invalid(format!("a must be > 0, got {}", self.a)));
        }
        if self.b < 0.0 {
            return Err(invalid(format!("b must be >= 0, got {}", self.b)));
        }
        if self.epsilon <= 0.0 {
            return Err(invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.sigma < 0.0 {
            return Err(invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid(format!("truncation level must be > 0, got {m}")));
            }
        }
        Ok(())
    }

    pub fn drift_spec(&self) -> DriftSpec {
        DriftSpec {
            lambda: self.lambda,
            truncation: self.truncation,
        }
    }

    /// Diffusion coefficient of the adaptation variable (`epsilon` or 0).
    pub fn adaptation_diffusion(&self) -> f64 {
        if self.adaptation_noise {
            self.epsilon
        } else {
            0.0
        }
    }
}

/// Shape of the cubic nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub lambda: f64,
    pub truncation: Option<f64>,
}

impl DriftSpec {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            truncation: None,
        }
    }

    /// Cubic evaluated with the configured truncation, if any.
    pub fn eval(&self, v: f64) -> f64 {
        match self.truncation {
            Some(m) => truncated_unchecked(v, m, self.lambda),
            None => cubic(v, self),
        }
    }

    pub fn eval_derivative(&self, v: f64) -> f64 {
        match self.truncation {
            Some(m) => cubic_derivative(v.clamp(-m, m), self),
            None => cubic_derivative(v, self),
        }
    }
}

/// `v (v - λ) (v - 1)`. The input current is applied in [`voltage_drift`].
#[inline]
pub fn cubic(v: f64, spec: &DriftSpec) -> f64 {
    v * (v - spec.lambda) * (v - 1.0)
}

/// `3v² - 2(1 + λ)v + λ`.
#[inline]
pub fn cubic_derivative(v: f64, spec: &DriftSpec) -> f64 {
    3.0 * v * v - 2.0 * (1.0 + spec.lambda) * v + spec.lambda
}

/// Cubic on `[-M, M]`, extended linearly outside with the boundary slope so
/// the result is C¹ and globally Lipschitz.
pub fn cubic_truncated(v: f64, m: f64, spec: &DriftSpec) -> Result<f64> {
    if !(m > 0.0) {
        return Err(invalid(format!("truncation level must be > 0, got {m}")));
    }
    Ok(truncated_unchecked(v, m, spec.lambda))
}

#[inline]
fn truncated_unchecked(v: f64, m: f64, lambda: f64) -> f64 {
    let spec = DriftSpec::new(lambda);
    if v > m {
        cubic(m, &spec) + cubic_derivative(m, &spec) * (v - m)
    } else if v < -m {
        cubic(-m, &spec) + cubic_derivative(-m, &spec) * (v + m)
    } else {
        cubic(v, &spec)
    }
}

/// Deterministic voltage drift of one neuron given the population mean `vbar`:
/// `-N(v) + I_ext - x + (vbar - v) / epsilon`.
#[inline]
pub fn voltage_drift(v: f64, x: f64, vbar: f64, p: &ModelParams) -> f64 {
    -p.drift_spec().eval(v) + p.i_ext - x + (vbar - v) / p.epsilon
}

/// How the initial ensemble is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    /// Gaussian with variance `epsilon / A` per coordinate; its log-density
    /// saturates the quadratic envelope `-(A/2)(v² + x²) + B`.
    GaussianHypothesisH,
    /// All neurons at `(mean_v, mean_x)`.
    PointCluster,
    /// Explicit ensemble; lengths must equal `n`.
    Custom { v: Vec<f64>, x: Vec<f64> },
}

/// Initial ensemble description. In configuration files it is a flat table:
/// `kind` is one of `gaussian-hypothesis-h`, `point-cluster`, `custom`, and
/// `custom` additionally takes the arrays `v` and `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InitRepr", into = "InitRepr")]
pub struct InitCondition {
    pub mean_v: f64,
    pub mean_x: f64,
    /// Concentration `A` of the quadratic envelope.
    pub concentration: f64,
    /// Level constant `B`; defaults to the smallest admissible value.
    pub offset: Option<f64>,
    pub kind: InitKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum InitTag {
    GaussianHypothesisH,
    PointCluster,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitRepr {
    kind: InitTag,
    #[serde(default)]
    mean_v: f64,
    #[serde(default)]
    mean_x: f64,
    #[serde(default = "default_concentration")]
    concentration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
}

impl TryFrom<InitRepr> for InitCondition {
    type Error = String;

    fn try_from(r: InitRepr) -> std::result::Result<Self, String> {
        let kind = match (r.kind, r.v, r.x) {
            (InitTag::Custom, Some(v), Some(x)) => InitKind::Custom { v, x },
            (InitTag::Custom, _, _) => return Err("kind `custom` needs arrays `v` and `x`".into()),
            (_, None, None) => match r.kind {
                InitTag::GaussianHypothesisH => InitKind::GaussianHypothesisH,
                _ => InitKind::PointCluster,
            },
            _ => return Err("arrays `v` and `x` are only allowed with kind `custom`".into()),
        };
        Ok(InitCondition {
            mean_v: r.mean_v,
            mean_x: r.mean_x,
            concentration: r.concentration,
            offset: r.offset,
            kind,
        })
    }
}

impl From<InitCondition> for InitRepr {
    fn from(c: InitCondition) -> Self {
        let (kind, v, x) = match c.kind {
            InitKind::GaussianHypothesisH => (InitTag::GaussianHypothesisH, None, None),
            InitKind::PointCluster => (InitTag::PointCluster, None, None),
            InitKind::Custom { v, x } => (InitTag::Custom, Some(v), Some(x)),
        };
        InitRepr {
            kind,
            mean_v: c.mean_v,
            mean_x: c.mean_x,
            concentration: c.concentration,
            offset: c.offset,
            v,
            x,
        }
    }
}

fn default_concentration() -> f64 {
    0.3
}

impl InitCondition {
    pub fn gaussian(mean_v: f64, mean_x: f64, concentration: f64) -> Self {
        Self {
            mean_v,
            mean_x,
            concentration,
            offset: None,
            kind: InitKind::GaussianHypothesisH,
        }
    }

    pub fn point(mean_v: f64, mean_x: f64) -> Self {
        Self {
            mean_v,
            mean_x,
            concentration: f64::INFINITY,
            offset: None,
            kind: InitKind::PointCluster,
        }
    }

    /// Per-coordinate standard deviation `sqrt(epsilon / A)`.
    pub fn std_dev(&self, epsilon: f64) -> f64 {
        (epsilon / self.concentration).sqrt()
    }

    /// Smallest `B` for which the Gaussian satisfies the envelope: `ε log(A / (2π ε))`, floored at 0.
    pub fn minimal_offset(&self, epsilon: f64) -> f64 {
        let a = self.concentration;
        (epsilon * (a / (2.0 * std::f64::consts::PI * epsilon)).ln()).max(0.0)
    }

    pub fn effective_offset(&self, epsilon: f64) -> f64 {
        self.offset.unwrap_or_else(|| self.minimal_offset(epsilon))
    }

    /// `epsilon * ln(density)` of the Gaussian sampler at `(x, v)`.
    pub fn eps_log_density(&self, x: f64, v: f64, epsilon: f64) -> f64 {
        let a = self.concentration;
        let r2 = (v - self.mean_v).powi(2) + (x - self.mean_x).powi(2);
        epsilon * (a / (2.0 * std::f64::consts::PI * epsilon)).ln() - 0.5 * a * r2
    }

    /// Quadratic envelope `-(A/2) r² + B` around the configured center.
    pub fn envelope(&self, x: f64, v: f64, epsilon: f64) -> f64 {
        let r2 = (v - self.mean_v).powi(2) + (x - self.mean_x).powi(2);
        -0.5 * self.concentration * r2 + self.effective_offset(epsilon)
    }

    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if !(self.mean_v.is_finite() && self.mean_x.is_finite()) {
            return Err(invalid("initial center must be finite"));
        }
        if let InitKind::GaussianHypothesisH = self.kind {
            if !(self.concentration > 0.0) {
                return Err(invalid(format!(
                    "concentration A must be > 0, got {}",
                    self.concentration
                )));
            }
            if let Some(b) = self.offset {
                let need = epsilon
                    * (self.concentration / (2.0 * std::f64::consts::PI * epsilon)).ln();
                if b < need {
                    return Err(invalid(format!(
                        "offset B = {b} is below the Gaussian log-normalization {need}; the envelope would not hold"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws an initial ensemble of `n` neurons.
pub fn sample_initial<R: Rng + ?Sized>(
    cond: &InitCondition,
    n: usize,
    p: &ModelParams,
    rng: &mut R,
) -> Result<EnsembleState> {
    if n == 0 {
        return Err(invalid("ensemble size must be >= 1"));
    }
    cond.validate(p.epsilon)?;
    let (v, x) = match &cond.kind {
        InitKind::PointCluster => (vec![cond.mean_v; n], vec![cond.mean_x; n]),
        InitKind::GaussianHypothesisH => {
            let sd = cond.std_dev(p.epsilon);
            let mut v = Vec::with_capacity(n);
            let mut x = Vec::with_capacity(n);
            for _ in 0..n {
                let zv: f64 = StandardNormal.sample(rng);
                let zx: f64 = StandardNormal.sample(rng);
                v.push(cond.mean_v + sd * zv);
                x.push(cond.mean_x + sd * zx);
            }
            (v, x)
        }
        InitKind::Custom { v, x } => {
            if v.len() != n || x.len() != n {
                return Err(invalid(format!(
                    "custom ensemble has {} voltages and {} adaptation values, expected {n}",
                    v.len(),
                    x.len()
                )));
            }
            (v.clone(), x.clone())
        }
    };
    EnsembleState::new(0.0, v, x)
}
