//! The federated round loop.
//!
//! Each configured method evolves its own trajectory from a shared starting
//! point. Client randomness is keyed by `(client, round)` rather than by
//! method, so every method sees the same minibatch indices and attack noise
//! in a given round (coupled-noise comparison).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{apply_update, compute_weights, MethodConfig, MethodState, RoundInputs};
use crate::clients::{
    apply_attacks, batch_indices, honest_message_on, target_group, AttackSpec, ClientRole,
    GradientSet, RoleKind,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::simplex::{grid_minimum, reference_minimum, LossOracle, SimplexWeights, WeightObjective};
use crate::tasks::{
    mixture_direction, mixture_stationary_point, sample_gaussian_shard, softmax_task_generate,
    ModelPoint, Shard, SoftmaxTask, TaskModel, ValidationMode, ValidationOracle,
};
use crate::vecops::dist_sq;

/// Smoothness and PL constants of the mean-estimation loss `||x - c||^2 + d`.
pub const MEAN_TASK_SMOOTHNESS: f64 = 2.0;
pub const MEAN_TASK_PL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSpec {
    /// Gaussian mean estimation: groups centered at `0`, `mu * 1`, `e`.
    Mean { dim: usize, mu: f64 },
    /// Class-cluster softmax regression with group-2 mixing `alpha`.
    Softmax { features: usize, classes: usize, alpha: f64 },
}

/// How honest clients obtain their stochastic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientOracle {
    /// Minibatches sampled without replacement from the client's shard.
    Shard,
    /// Fresh samples from the client's distribution every round.
    Fresh,
    /// The exact population gradient (mean estimation only).
    Exact,
}

/// How the per-round weight-problem accuracy `delta` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaEstimator {
    /// `Reference` when the objective admits it, else `BestIterate`.
    Auto,
    /// Gap to a certified lower bound from the min-norm-point solver.
    Reference,
    /// Gap to the 0.01-resolution simplex grid minimum (n <= 3).
    Grid,
    /// The weight solver's own best-iterate gap.
    BestIterate,
}

impl DeltaEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            DeltaEstimator::Auto => "auto",
            DeltaEstimator::Reference => "reference",
            DeltaEstimator::Grid => "grid",
            DeltaEstimator::BestIterate => "best-iterate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: TaskSpec,
    /// Honest client counts of groups 1, 2, 3 (group 1 holds the target).
    pub groups: [usize; 3],
    pub byzantine: usize,
    pub attack: Option<AttackSpec>,
    pub shard_size: usize,
    pub batch_size: usize,
    pub gradient_oracle: GradientOracle,
    pub validation: ValidationMode,
    pub validation_size: usize,
    pub gamma: f64,
    pub rounds: usize,
    /// Fill value of the starting point; task default when `None`.
    pub x0: Option<f64>,
    pub methods: Vec<MethodConfig>,
    pub delta_estimator: DeltaEstimator,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn clients(&self) -> usize {
        self.groups.iter().sum::<usize>() + self.byzantine
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.clients();
        if self.groups[0] == 0 {
            return Err(Error::Config("group 1 must contain the target client".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("round count must be >= 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("model step {} must be > 0", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.gradient_oracle == GradientOracle::Shard && self.batch_size > self.shard_size {
            return Err(Error::Config(format!(
                "batch size {} exceeds shard size {}",
                self.batch_size, self.shard_size
            )));
        }
        match (self.byzantine, &self.attack) {
            (0, _) => {}
            (_, None) => return Err(Error::Config("byzantine clients need an attack".into())),
            (_, Some(a)) => a.validate()?,
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method names must be unique".into()));
        }
        for m in &self.methods {
            m.validate(n)?;
        }
        match &self.task {
            TaskSpec::Mean { dim, mu } => {
                if *dim == 0 {
                    return Err(Error::Config("dimension must be >= 1".into()));
                }
                if !mu.is_finite() {
                    return Err(Error::Config("mu must be finite".into()));
                }
            }
            TaskSpec::Softmax { features, classes, alpha } => {
                SoftmaxTask::new(*features, *classes)?;
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(Error::Config(format!("alpha {alpha} must be in (0, 1]")));
                }
                if self.gradient_oracle == GradientOracle::Exact {
                    return Err(Error::Config("exact gradients need the mean task".into()));
                }
                if self.validation == ValidationMode::Population {
                    return Err(Error::Config("population validation needs the mean task".into()));
                }
            }
        }
        if self.validation == ValidationMode::ExtraValidation && self.validation_size == 0 {
            return Err(Error::Config("validation set is empty".into()));
        }
        if self.delta_estimator == DeltaEstimator::Grid && n > 3 {
            return Err(Error::Config("grid delta estimator needs at most 3 clients".into()));
        }
        if self.delta_estimator == DeltaEstimator::Reference
            && matches!(self.task, TaskSpec::Softmax { .. })
        {
            return Err(Error::Config("reference delta estimator needs the mean task".into()));
        }
        Ok(())
    }

    /// Roles: group 1, group 2, group 3 honest clients, then Byzantine ones.
    pub fn roles(&self) -> Vec<ClientRole> {
        let mut roles = Vec::with_capacity(self.clients());
        for (g, &count) in self.groups.iter().enumerate() {
            for _ in 0..count {
                let index = roles.len();
                roles.push(ClientRole { index, kind: RoleKind::Honest { group: g as u32 + 1 } });
            }
        }
        if let Some(attack) = self.attack {
            for _ in 0..self.byzantine {
                let index = roles.len();
                roles.push(ClientRole { index, kind: RoleKind::Byzantine { attack } });
            }
        }
        roles
    }
}

/// Metrics of one method's iterate at one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    /// `||x - x*||^2`, when the optimum is known.
    pub dist_sq: Option<f64>,
    /// `f(x) - f*`, when known.
    pub loss_gap: Option<f64>,
    /// `||grad f(x)||^2`, when known.
    pub grad_norm_sq: Option<f64>,
    pub val_loss: f64,
    pub accuracy: Option<f64>,
    /// Weights that produced this iterate (absent at round 0).
    pub weights: Option<SimplexWeights>,
    pub delta: Option<f64>,
    /// Weight-problem objective at the chosen weights.
    pub objective: Option<f64>,
    /// Weight-problem objective at uniform weights on the target group.
    pub ideal_objective: Option<f64>,
}

/// All methods' metrics for iterate `x^round`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub methods: Vec<MethodMetrics>,
}

/// Receives metric records as rounds complete.
pub trait MetricSink {
    fn record(&mut self, metrics: &RoundMetrics);
}

impl MetricSink for () {
    fn record(&mut self, _: &RoundMetrics) {}
}

impl MetricSink for Vec<RoundMetrics> {
    fn record(&mut self, metrics: &RoundMetrics) {
        self.push(metrics.clone());
    }
}

/// Closed-form constants of a task, needed by the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskConstants {
    pub smoothness: f64,
    pub pl: f64,
    pub sigma_sq: f64,
    pub initial_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremBounds {
    pub constants: TaskConstants,
    /// `(1/T) sum_{t<T} ||grad f(x^t)||^2`
    pub avg_grad_norm_sq: f64,
    /// `2 (f(x^0) - f*) / (T gamma) + 2 sigma^2 gamma L / G + 2 delta / gamma`
    pub nonconvex_rhs: f64,
    pub nonconvex_holds: bool,
    /// `f(x^T) - f*`
    pub final_gap: f64,
    /// `(1 - gamma mu)^T (f(x^0) - f*) + sigma^2 gamma L / (mu G) + delta T / (gamma mu)`
    pub pl_rhs: f64,
    pub pl_holds: bool,
    /// Whether `gamma <= 1 / (2L)`.
    pub step_within_limit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub method: String,
    pub delta_estimator: DeltaEstimator,
    pub mean_delta: f64,
    pub rounds: usize,
    pub gamma: f64,
    pub group_size: usize,
    /// `None` when the task's constants are unknown.
    pub bounds: Option<TheoremBounds>,
}

impl TheoremReport {
    pub fn applicable(&self) -> bool {
        self.bounds.is_some()
    }
}

/// Evaluates both convergence bounds for one trajectory.
///
/// `grad_norms_sq` holds `||grad f(x^t)||^2` for `t = 0..T`.
#[allow(clippy::too_many_arguments)]
pub fn theorem_check(
    method: &str,
    grad_norms_sq: &[f64],
    final_gap: f64,
    constants: Option<TaskConstants>,
    gamma: f64,
    group_size: usize,
    mean_delta: f64,
    delta_estimator: DeltaEstimator,
) -> TheoremReport {
    let rounds = grad_norms_sq.len();
    let bounds = constants.filter(|_| rounds > 0 && group_size > 0).map(|c| {
        let t = rounds as f64;
        let g = group_size as f64;
        let l = c.smoothness;
        let mu = c.pl;
        let avg = grad_norms_sq.iter().sum::<f64>() / t;
        let nonconvex_rhs = 2.0 * c.initial_gap / (t * gamma)
            + 2.0 * c.sigma_sq * gamma * l / g
            + 2.0 * mean_delta / gamma;
        let pl_rhs = (1.0 - gamma * mu).powf(t) * c.initial_gap
            + c.sigma_sq * gamma * l / (mu * g)
            + mean_delta * t / (gamma * mu);
        TheoremBounds {
            constants: c,
            avg_grad_norm_sq: avg,
            nonconvex_rhs,
            nonconvex_holds: avg <= nonconvex_rhs,
            final_gap,
            pl_rhs,
            pl_holds: final_gap <= pl_rhs,
            step_within_limit: gamma <= 1.0 / (2.0 * l),
        }
    });
    TheoremReport {
        method: method.to_string(),
        delta_estimator,
        mean_delta,
        rounds,
        gamma,
        group_size,
        bounds,
    }
}

/// One client's shared randomness for a round.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientDraw {
    Indices(Vec<usize>),
    Batch(Shard),
    Exact,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seed: u64,
    /// The drawn direction `e` (mean task).
    pub mixture_direction: Option<Vec<f64>>,
    /// The target optimum `x*` (mean task).
    pub optimum: Option<Vec<f64>>,
    /// Stationary point of uniform averaging over all honest clients (mean
    /// task, no Byzantine clients).
    pub uniform_stationary_point: Option<Vec<f64>>,
    /// Rounds `0..=T`.
    pub rounds: Vec<RoundMetrics>,
    pub final_points: Vec<(String, ModelPoint)>,
    pub theorem: Vec<TheoremReport>,
    /// Set when `gamma > 1/(2L)` for a task with known `L`.
    pub step_warning: bool,
}

impl ExperimentOutcome {
    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.final_points.iter().position(|(n, _)| n == name)
    }

    /// Per-round metrics of one method, rounds `0..=T`.
    pub fn series(&self, name: &str) -> Vec<&MethodMetrics> {
        let Some(i) = self.method_index(name) else { return Vec::new() };
        self.rounds.iter().map(|r| &r.methods[i]).collect()
    }

    pub fn final_metrics(&self, name: &str) -> Option<&MethodMetrics> {
        let i = self.method_index(name)?;
        self.rounds.last().map(|r| &r.methods[i])
    }
}

/// A prepared experiment: data, roles and oracles for one seed.
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub roles: Vec<ClientRole>,
    pub model: TaskModel,
    /// Per-client shards (empty for exact gradients).
    pub shards: Vec<Shard>,
    pub oracle: ValidationOracle,
    pub test: Option<Shard>,
    /// Mean-task centers of groups 1..3.
    centers: Option<[Vec<f64>; 3]>,
    pub mixture_direction: Option<Vec<f64>>,
    pub target_members: Vec<usize>,
    softmax: Option<(SoftmaxTask, f64)>,
    delta_estimator: DeltaEstimator,
}

struct Trajectory {
    method: MethodConfig,
    state: MethodState,
    x: ModelPoint,
    grad_norms: Vec<f64>,
    deltas: Vec<f64>,
}

impl Experiment {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let roles = spec.roles();
        let target_members = target_group(&roles)?;
        let seed = spec.seed;
        let mut shards = Vec::with_capacity(roles.len());
        let (model, centers, direction, softmax, test, oracle);
        match &spec.task {
            TaskSpec::Mean { dim, mu } => {
                let e = mixture_direction(*dim, seed);
                let c = [vec![0.0; *dim], vec![*mu; *dim], e.clone()];
                if spec.gradient_oracle == GradientOracle::Shard
                    || spec.validation == ValidationMode::ReuseTrain
                {
                    for role in &roles {
                        // Byzantine workers hold target-distribution data.
                        let group = role.group().unwrap_or(1);
                        let mut rng = stream(seed, Purpose::Shard, role.index as u64, 0);
                        shards.push(sample_gaussian_shard(
                            &c[group as usize - 1],
                            spec.shard_size,
                            group,
                            role.index,
                            &mut rng,
                        ));
                    }
                }
                model = TaskModel::Mean { dim: *dim };
                oracle = match spec.validation {
                    ValidationMode::Population => ValidationOracle::population(c[0].clone()),
                    ValidationMode::ReuseTrain => {
                        ValidationOracle::from_samples(model.clone(), shards[0].clone(), spec.validation)?
                    }
                    ValidationMode::ExtraValidation => {
                        let mut rng = stream(seed, Purpose::Validation, 0, 0);
                        let data = sample_gaussian_shard(&c[0], spec.validation_size, 1, 0, &mut rng);
                        ValidationOracle::from_samples(model.clone(), data, spec.validation)?
                    }
                };
                centers = Some(c);
                direction = Some(e);
                softmax = None;
                test = None;
            }
            TaskSpec::Softmax { features, classes, alpha } => {
                let task = SoftmaxTask::new(*features, *classes)?;
                let mut groups = spec.groups;
                // Byzantine workers hold target-distribution data.
                groups[0] += spec.byzantine;
                let data = softmax_task_generate(
                    &task,
                    groups,
                    *alpha,
                    spec.shard_size,
                    spec.validation_size.max(1),
                    seed,
                )?;
                // Generation is ordered by group; reorder so Byzantine shards
                // follow the honest groups.
                let g1 = spec.groups[0];
                let mut generated = data.shards;
                let byz: Vec<Shard> = generated.drain(g1..g1 + spec.byzantine).collect();
                generated.extend(byz);
                for (i, s) in generated.iter_mut().enumerate() {
                    s.owner = i;
                }
                shards = generated;
                model = TaskModel::Softmax(task.clone());
                oracle = match spec.validation {
                    ValidationMode::ReuseTrain => {
                        ValidationOracle::from_samples(model.clone(), shards[0].clone(), spec.validation)?
                    }
                    _ => ValidationOracle::from_samples(model.clone(), data.validation, spec.validation)?,
                };
                centers = None;
                direction = None;
                softmax = Some((task, *alpha));
                test = Some(data.test);
            }
        }
        for m in &spec.methods {
            if let crate::aggregators::MethodKind::MeritFed(md) = &m.kind {
                md.validate(oracle.size())?;
            }
        }
        let delta_estimator = match spec.delta_estimator {
            DeltaEstimator::Auto if oracle.isotropic_center().is_some() => DeltaEstimator::Reference,
            DeltaEstimator::Auto => DeltaEstimator::BestIterate,
            other => other,
        };
        Ok(Experiment {
            spec: spec.clone(),
            roles,
            model,
            shards,
            oracle,
            test,
            centers,
            mixture_direction: direction,
            target_members,
            softmax,
            delta_estimator,
        })
    }

    pub fn delta_estimator(&self) -> DeltaEstimator {
        self.delta_estimator
    }

    /// The target optimum, when known in closed form.
    pub fn optimum(&self) -> Option<&[f64]> {
        self.centers.as_ref().map(|c| c[0].as_slice())
    }

    pub fn initial_point(&self) -> ModelPoint {
        let fill = self.spec.x0.unwrap_or(match self.spec.task {
            TaskSpec::Mean { .. } => 1.0,
            TaskSpec::Softmax { .. } => 0.0,
        });
        ModelPoint::filled(self.model.model_dim(), fill)
    }

    /// Stationary point of uniform averaging over all clients' gradients
    /// (mean task without Byzantine clients).
    pub fn uniform_stationary_point(&self) -> Option<Vec<f64>> {
        let c = self.centers.as_ref()?;
        if self.spec.byzantine > 0 {
            return None;
        }
        let g = self.spec.groups;
        mixture_stationary_point(&[(g[0], &c[0]), (g[1], &c[1]), (g[2], &c[2])]).ok()
    }

    pub fn constants(&self) -> Option<TaskConstants> {
        let TaskSpec::Mean { dim, .. } = self.spec.task else { return None };
        let x0 = self.initial_point();
        let sigma_sq = match self.spec.gradient_oracle {
            GradientOracle::Exact => 0.0,
            _ => 4.0 * dim as f64 / self.spec.batch_size as f64,
        };
        Some(TaskConstants {
            smoothness: MEAN_TASK_SMOOTHNESS,
            pl: MEAN_TASK_PL,
            sigma_sq,
            initial_gap: dist_sq(&x0, self.optimum()?),
        })
    }

    /// The shared per-client randomness of round `t`.
    pub fn round_draws(&self, t: usize) -> Result<Vec<ClientDraw>> {
        let seed = self.spec.seed;
        let b = self.spec.batch_size;
        self.roles
            .par_iter()
            .map(|role| {
                let i = role.index;
                let mut rng = stream(seed, Purpose::Batch, i as u64, t as u64);
                let draw = match self.spec.gradient_oracle {
                    GradientOracle::Exact => ClientDraw::Exact,
                    GradientOracle::Shard => {
                        ClientDraw::Indices(batch_indices(self.shards[i].len(), b, &mut rng)?)
                    }
                    GradientOracle::Fresh => {
                        let group = role.group().unwrap_or(1);
                        ClientDraw::Batch(match (&self.centers, &self.softmax) {
                            (Some(c), _) => {
                                sample_gaussian_shard(&c[group as usize - 1], b, group, i, &mut rng)
                            }
                            (None, Some((task, alpha))) => {
                                let dist = task.group_distribution(group, *alpha)?;
                                task.sample_shard(&dist, b, i, &mut rng)?
                            }
                            (None, None) => unreachable!("task data missing"),
                        })
                    }
                };
                Ok(draw)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e: Error| e.in_round(t, "-", None))
    }

    fn client_gradient(&self, i: usize, x: &[f64], draw: &ClientDraw) -> Result<Vec<f64>> {
        match draw {
            ClientDraw::Indices(idx) => honest_message_on(&self.model, x, &self.shards[i], idx),
            ClientDraw::Batch(batch) => Ok(self.model.loss_grad(x, batch, None)?.1),
            ClientDraw::Exact => {
                let centers = self.centers.as_ref().ok_or_else(|| {
                    Error::UnsupportedTask("exact gradients need the mean task".into())
                })?;
                let group = self.roles[i].group().unwrap_or(1);
                let c = &centers[group as usize - 1];
                Ok(x.iter().zip(c).map(|(a, b)| 2.0 * (a - b)).collect())
            }
        }
    }

    /// Phase one (honest gradients) and phase two (attacks) of round `t`,
    /// evaluated at `x`.
    pub fn messages(&self, x: &[f64], t: usize, draws: &[ClientDraw]) -> Result<GradientSet> {
        let mut messages = Vec::with_capacity(self.roles.len());
        for (i, draw) in draws.iter().enumerate() {
            messages.push(self.client_gradient(i, x, draw).map_err(|e| e.in_round(t, "-", Some(i)))?);
        }
        let seed = self.spec.seed;
        apply_attacks(&self.roles, &mut messages, &self.target_members, |i| {
            stream(seed, Purpose::Attack, i as u64, t as u64)
        })
        .map_err(|e| e.in_round(t, "-", None))?;
        GradientSet::from_rows(t, messages)
    }

    fn point_metrics(&self, method: &str, x: &[f64]) -> Result<MethodMetrics> {
        let val_loss = self.oracle.value(x, None)?;
        let (dist, gap, grad) = match self.optimum() {
            Some(opt) => {
                let d = dist_sq(x, opt);
                (Some(d), Some(d), Some(4.0 * d))
            }
            None => (None, None, None),
        };
        let accuracy = match (&self.softmax, &self.test) {
            (Some((task, _)), Some(test)) => Some(task.accuracy(x, test)?),
            _ => None,
        };
        Ok(MethodMetrics {
            method: method.to_string(),
            dist_sq: dist,
            loss_gap: gap,
            grad_norm_sq: grad,
            val_loss,
            accuracy,
            weights: None,
            delta: None,
            objective: None,
            ideal_objective: None,
        })
    }

    /// Weight-problem accuracy of `weights` under the configured estimator.
    pub fn delta(
        &self,
        obj: &WeightObjective<'_>,
        weights: &SimplexWeights,
        solver_delta: f64,
    ) -> Result<f64> {
        match self.delta_estimator {
            DeltaEstimator::Reference => {
                let value = obj.value(weights.as_slice(), None)?;
                let (_, lower) = reference_minimum(obj)?.ok_or_else(|| {
                    Error::Config("reference delta estimator needs an isotropic oracle".into())
                })?;
                Ok((value - lower).max(0.0))
            }
            DeltaEstimator::Grid => {
                let value = obj.value(weights.as_slice(), None)?;
                let (_, min) = grid_minimum(obj.n(), 100, |w| obj.value(w, None))?;
                Ok((value - min).max(0.0))
            }
            DeltaEstimator::BestIterate | DeltaEstimator::Auto => Ok(solver_delta),
        }
    }

    fn step(&self, traj: &mut Trajectory, method_index: usize, t: usize, draws: &[ClientDraw]) -> Result<MethodMetrics> {
        let name = traj.method.name.clone();
        let ctx = |e: Error| e.in_round(t, &name, None);
        let grads = self.messages(&traj.x, t, draws).map_err(ctx)?;
        if !grads.is_finite() {
            return Err(ctx(Error::NumericInput("non-finite client message".into())));
        }
        let purpose = match traj.method.kind {
            crate::aggregators::MethodKind::FedAvgSampled { .. } => Purpose::Sampling,
            _ => Purpose::Solver,
        };
        let mut rng = stream(self.spec.seed, purpose, method_index as u64, t as u64);
        let inputs = RoundInputs { x: &traj.x, grads: &grads, target: 0, oracle: &self.oracle };
        let (weights, solver_delta) =
            compute_weights(&traj.method, &mut traj.state, &inputs, &mut rng).map_err(ctx)?;
        if !SimplexWeights::is_valid(weights.as_slice()) {
            return Err(ctx(Error::SolverDegenerate("weights left the simplex".into())));
        }
        let obj = WeightObjective::new(&traj.x, &grads, traj.method.gamma, &self.oracle).map_err(ctx)?;
        let delta = self.delta(&obj, &weights, solver_delta).map_err(ctx)?;
        let objective = obj.value(weights.as_slice(), None).map_err(ctx)?;
        let ideal = SimplexWeights::uniform_on(grads.len(), &self.target_members).map_err(ctx)?;
        let ideal_objective = obj.value(ideal.as_slice(), None).map_err(ctx)?;

        traj.x = apply_update(&traj.x, &grads, &weights, traj.method.gamma).map_err(ctx)?;
        let mut m = self.point_metrics(&name, &traj.x).map_err(ctx)?;
        if let Some(g) = m.grad_norm_sq {
            traj.grad_norms.push(g);
        }
        traj.deltas.push(delta);
        m.weights = Some(weights);
        m.delta = Some(delta);
        m.objective = Some(objective);
        m.ideal_objective = Some(ideal_objective);
        Ok(m)
    }

    /// Runs all rounds, streaming each round's metrics to `sink`.
    pub fn run(&self, sink: &mut dyn MetricSink) -> Result<ExperimentOutcome> {
        let x0 = self.initial_point();
        let mut trajectories: Vec<Trajectory> = self
            .spec
            .methods
            .iter()
            .map(|m| Trajectory {
                method: m.clone(),
                state: MethodState::default(),
                x: x0.clone(),
                grad_norms: Vec::with_capacity(self.spec.rounds + 1),
                deltas: Vec::with_capacity(self.spec.rounds),
            })
            .collect();

        let mut initial = Vec::with_capacity(trajectories.len());
        for traj in trajectories.iter_mut() {
            let m = self.point_metrics(&traj.method.name, &traj.x)?;
            if let Some(g) = m.grad_norm_sq {
                traj.grad_norms.push(g);
            }
            initial.push(m);
        }
        let mut rounds = Vec::with_capacity(self.spec.rounds + 1);
        let first = RoundMetrics { round: 0, methods: initial };
        sink.record(&first);
        rounds.push(first);

        for t in 0..self.spec.rounds {
            let draws = self.round_draws(t)?;
            let methods = trajectories
                .par_iter_mut()
                .enumerate()
                .map(|(k, traj)| self.step(traj, k, t, &draws))
                .collect::<Result<Vec<_>>>()?;
            let record = RoundMetrics { round: t + 1, methods };
            sink.record(&record);
            rounds.push(record);
        }

        let constants = self.constants();
        let group_size = self.target_members.len();
        let theorem = trajectories
            .iter()
            .map(|traj| {
                let mean_delta = traj.deltas.iter().sum::<f64>() / traj.deltas.len().max(1) as f64;
                let (norms, final_gap) = match traj.grad_norms.split_last() {
                    Some((&last, rest)) => (rest.to_vec(), last / 4.0),
                    None => (Vec::new(), f64::NAN),
                };
                theorem_check(
                    &traj.method.name,
                    &norms,
                    final_gap,
                    constants,
                    traj.method.gamma,
                    group_size,
                    mean_delta,
                    self.delta_estimator,
                )
            })
            .collect();
        let step_warning = constants
            .map(|c| self.spec.gamma > 1.0 / (2.0 * c.smoothness))
            .unwrap_or(false);

        Ok(ExperimentOutcome {
            seed: self.spec.seed,
            mixture_direction: self.mixture_direction.clone(),
            optimum: self.optimum().map(<[f64]>::to_vec),
            uniform_stationary_point: self.uniform_stationary_point(),
            rounds,
            final_points: trajectories.into_iter().map(|t| (t.method.name, t.x)).collect(),
            theorem,
            step_warning,
        })
    }
}

/// Prepares and runs `spec`, discarding streamed records.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    Experiment::new(spec)?.run(&mut ())
}

pub fn run_experiment_with_sink(
    spec: &ExperimentSpec,
    sink: &mut dyn MetricSink,
) -> Result<ExperimentOutcome> {
    Experiment::new(spec)?.run(sink)
}
