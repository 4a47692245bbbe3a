//! Weighting rules that turn a round's gradients into aggregation weights,
//! and the shared model update `x - gamma * sum_i w_i g_i`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::clients::GradientSet;
use crate::error::{check_len, Error, Result};
use crate::rng::Stream;
use crate::simplex::{
    candidate_point, entropic_md_step, solve_weights, uniform_weights, LossOracle, MdConfig,
    SimplexWeights, WeightObjective, WeightSolution,
};
use crate::tasks::ModelPoint;
use crate::vecops::{dot, norm_sq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSmoothing {
    None,
    RunningMean,
}

/// Which similarity drives the TAWT pseudo-gradient `-c * s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMeasure {
    /// `s = cos(angle)`
    Cosine,
    /// `s = angle` in radians
    Angle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    MeritFed(MdConfig),
    SgdFull,
    SgdIdeal { members: Vec<usize> },
    FedAdp { alpha: f64, smoothing: AngleSmoothing },
    Tawt { eta: f64, c: f64, measure: SimilarityMeasure },
    FedAvgSampled { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub kind: MethodKind,
    pub gamma: f64,
}

impl MethodConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("{}: model step must be > 0", self.name)));
        }
        match &self.kind {
            MethodKind::SgdIdeal { members } if members.is_empty() => {
                Err(Error::Config(format!("{}: ideal set is empty", self.name)))
            }
            MethodKind::SgdIdeal { members } if members.iter().any(|&m| m >= n) => {
                Err(Error::Config(format!("{}: ideal set index out of range", self.name)))
            }
            MethodKind::FedAvgSampled { k } if *k == 0 || *k > n => Err(Error::Config(format!(
                "{}: sampled client count {k} must be in 1..={n}",
                self.name
            ))),
            MethodKind::Tawt { eta, .. } if !(*eta > 0.0 && eta.is_finite()) => {
                Err(Error::Config(format!("{}: TAWT step must be > 0", self.name)))
            }
            MethodKind::MeritFed(md) => md.validate_params(),
            _ => Ok(()),
        }
    }
}

/// Per-method state carried across rounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodState {
    /// Previous weights: the TAWT iterate, or the MeritFed warm start.
    pub weights: Option<SimplexWeights>,
    /// FedAdp smoothed angles per client.
    pub smoothed_angles: Vec<f64>,
    /// Rounds completed.
    pub round: usize,
}

pub fn weights_sgd_full(n: usize) -> Result<SimplexWeights> {
    uniform_weights(n)
}

pub fn weights_sgd_ideal(members: &[usize], n: usize) -> Result<SimplexWeights> {
    SimplexWeights::uniform_on(n, members)
}

/// Angle between `a` and `b` in `[0, pi]`.
pub fn angle(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let na = norm_sq(a).sqrt();
    let nb = norm_sq(b).sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::UndefinedAngle);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Gompertz mapping `alpha (1 - exp(-exp(-alpha * angle)))`.
pub fn gompertz(angle: f64, alpha: f64) -> f64 {
    alpha * (1.0 - (-(-alpha * angle).exp()).exp())
}

fn softmax(scores: &[f64]) -> Result<SimplexWeights> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericInput("softmax scores are not finite".into()));
    }
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    SimplexWeights::new(exp.iter().map(|e| e / sum).collect())
}

/// FedAdp: softmax of Gompertz-mapped (smoothed) angles to the target
/// gradient. Updates the smoothed angles in `state`.
pub fn weights_fedadp(
    grads: &GradientSet,
    target: usize,
    state: &mut MethodState,
    alpha: f64,
    smoothing: AngleSmoothing,
) -> Result<SimplexWeights> {
    let n = grads.len();
    if target >= n {
        return Err(Error::Config(format!("target index {target} out of range")));
    }
    let reference = grads.row(target);
    let angles = grads.rows().map(|g| angle(reference, g)).collect::<Result<Vec<_>>>()?;
    let t = state.round + 1;
    let smoothed = match smoothing {
        AngleSmoothing::None => angles,
        AngleSmoothing::RunningMean => {
            if state.smoothed_angles.len() != n {
                angles
            } else {
                let tf = t as f64;
                state
                    .smoothed_angles
                    .iter()
                    .zip(&angles)
                    .map(|(prev, a)| ((tf - 1.0) * prev + a) / tf)
                    .collect()
            }
        }
    };
    let scores: Vec<f64> = smoothed.iter().map(|&a| gompertz(a, alpha)).collect();
    state.smoothed_angles = smoothed;
    state.round = t;
    softmax(&scores)
}

/// TAWT heuristic: one multiplicative step from the previous weights with
/// pseudo-gradient `-c * similarity(g_target, g_t)`.
pub fn weights_tawt(
    grads: &GradientSet,
    target: usize,
    state: &mut MethodState,
    eta: f64,
    c: f64,
    measure: SimilarityMeasure,
) -> Result<SimplexWeights> {
    let n = grads.len();
    if target >= n {
        return Err(Error::Config(format!("target index {target} out of range")));
    }
    let reference = grads.row(target);
    let pseudo = grads
        .rows()
        .map(|g| {
            let a = angle(reference, g)?;
            Ok(-c * match measure {
                SimilarityMeasure::Cosine => a.cos(),
                SimilarityMeasure::Angle => a,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let prev = match state.weights.take() {
        Some(w) if w.len() == n => w,
        _ => uniform_weights(n)?,
    };
    let next = entropic_md_step(&prev, &pseudo, eta)?;
    state.weights = Some(next.clone());
    state.round += 1;
    Ok(next)
}

/// Uniform weights on a uniformly random `k`-subset.
pub fn weights_fedavg_sampled(n: usize, k: usize, rng: &mut Stream) -> Result<SimplexWeights> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("sampled client count {k} must be in 1..={n}")));
    }
    let members = index::sample(rng, n, k).into_vec();
    SimplexWeights::uniform_on(n, &members)
}

/// MeritFed weights: approximately minimize the validation loss of the
/// candidate point over the simplex.
pub fn weights_meritfed(
    x: &[f64],
    grads: &GradientSet,
    gamma: f64,
    md: &MdConfig,
    oracle: &dyn LossOracle,
    state: &mut MethodState,
    rng: &mut Stream,
) -> Result<WeightSolution> {
    let obj = WeightObjective::new(x, grads, gamma, oracle)?;
    let init = match (&state.weights, md.warm_start) {
        (Some(w), true) if w.len() == grads.len() => w.clone(),
        _ => uniform_weights(grads.len())?,
    };
    let solution = solve_weights(&obj, md, &init, rng)?;
    state.weights = Some(solution.weights.clone());
    state.round += 1;
    Ok(solution)
}

/// `x - gamma * sum_i w_i g_i`, summed in client-index order.
pub fn apply_update(
    x: &ModelPoint,
    grads: &GradientSet,
    w: &SimplexWeights,
    gamma: f64,
) -> Result<ModelPoint> {
    Ok(ModelPoint(candidate_point(x, grads, gamma, w.as_slice())?))
}

/// Inputs available to a weighting rule in one round.
pub struct RoundInputs<'a> {
    pub x: &'a ModelPoint,
    pub grads: &'a GradientSet,
    pub target: usize,
    pub oracle: &'a dyn LossOracle,
}

/// Weights chosen by `method` this round, plus the solver's own gap estimate
/// (zero for closed-form rules).
pub fn compute_weights(
    method: &MethodConfig,
    state: &mut MethodState,
    inputs: &RoundInputs<'_>,
    rng: &mut Stream,
) -> Result<(SimplexWeights, f64)> {
    let n = inputs.grads.len();
    match &method.kind {
        MethodKind::SgdFull => Ok((weights_sgd_full(n)?, 0.0)),
        MethodKind::SgdIdeal { members } => Ok((weights_sgd_ideal(members, n)?, 0.0)),
        MethodKind::FedAdp { alpha, smoothing } => Ok((
            weights_fedadp(inputs.grads, inputs.target, state, *alpha, *smoothing)?,
            0.0,
        )),
        MethodKind::Tawt { eta, c, measure } => Ok((
            weights_tawt(inputs.grads, inputs.target, state, *eta, *c, *measure)?,
            0.0,
        )),
        MethodKind::FedAvgSampled { k } => Ok((weights_fedavg_sampled(n, *k, rng)?, 0.0)),
        MethodKind::MeritFed(md) => {
            let s = weights_meritfed(inputs.x, inputs.grads, method.gamma, md, inputs.oracle, state, rng)?;
            Ok((s.weights, s.delta))
        }
    }
}
