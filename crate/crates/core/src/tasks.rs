//! Objectives, client data and validation oracles for the two tasks:
//! Gaussian mean estimation and a synthetic softmax classification problem
//! with grouped class mixtures.

use std::ops::{Deref, DerefMut};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{stream, Purpose, Stream};
use crate::simplex::{sample_unit_sphere, LossOracle};
use crate::vecops::{dist_sq, mean_of_rows};

/// The iterate being optimized for the target client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint(pub Vec<f64>);

impl ModelPoint {
    pub fn filled(dim: usize, value: f64) -> Self {
        ModelPoint(vec![value; dim])
    }
}

impl Deref for ModelPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelPoint {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A client's local dataset: row-major features plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Option<Vec<u32>>,
    pub group: u32,
    pub owner: usize,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.features
            .len()
            .checked_div(self.dim)
            .unwrap_or_else(|| self.labels.as_ref().map_or(0, Vec::len))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim.max(1))
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Concatenates `other` onto `self` (same dimension and labeling).
    pub fn extend_from(&mut self, other: &Shard) -> Result<()> {
        check_len(self.dim, other.dim)?;
        match (&mut self.labels, &other.labels) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (None, None) => {}
            _ => return Err(Error::Data("cannot mix labeled and unlabeled shards".into())),
        }
        self.features.extend_from_slice(&other.features);
        Ok(())
    }
}

/// Data distribution of one client group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistributionKind {
    /// `N(center, I)`.
    GaussianMean { center: Vec<f64> },
    /// Class-cluster features; a sample is from `primary` classes with
    /// probability `alpha`, otherwise from `secondary` classes.
    SoftmaxCluster {
        primary: Vec<u32>,
        secondary: Vec<u32>,
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub group_id: u32,
}

/// `||x - sample||^2`
pub fn mean_loss(x: &[f64], sample: &[f64]) -> Result<f64> {
    check_len(x.len(), sample.len())?;
    Ok(dist_sq(x, sample))
}

/// `2 (x - mean(batch))`
pub fn mean_grad<'a>(x: &[f64], batch: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; x.len()];
    let mut count = 0usize;
    for s in batch {
        check_len(x.len(), s.len())?;
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv = 1.0 / count as f64;
    Ok(x.iter().zip(&acc).map(|(xi, s)| 2.0 * (xi - s * inv)).collect())
}

/// Minimizer and minimum of `E ||x - xi||^2` for `xi ~ N(center, I)`.
pub fn mean_true_optimum(spec: &DistributionSpec) -> Result<(ModelPoint, f64)> {
    match &spec.kind {
        DistributionKind::GaussianMean { center } => {
            Ok((ModelPoint(center.clone()), center.len() as f64))
        }
        DistributionKind::SoftmaxCluster { .. } => Err(Error::UnsupportedTask(
            "closed-form optimum is only available for Gaussian mean estimation".into(),
        )),
    }
}

/// Stationary point of uniformly weighted mean-estimation gradients:
/// the client-count-weighted average of the group centers.
pub fn mixture_stationary_point(groups: &[(usize, &[f64])]) -> Result<Vec<f64>> {
    let dim = groups
        .first()
        .map(|(_, c)| c.len())
        .ok_or_else(|| Error::InvalidDimension("no groups".into()))?;
    let total: usize = groups.iter().map(|(k, _)| k).sum();
    if total == 0 {
        return Err(Error::InvalidDimension("no clients".into()));
    }
    let mut x = vec![0.0; dim];
    for (count, center) in groups {
        check_len(dim, center.len())?;
        for (xi, ci) in x.iter_mut().zip(center.iter()) {
            *xi += *count as f64 * ci;
        }
    }
    x.iter_mut().for_each(|v| *v /= total as f64);
    Ok(x)
}

fn gaussian_row<R: Rng + ?Sized>(center: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.extend(center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
}

/// `count` i.i.d. samples from `N(center, I)`.
pub fn sample_gaussian_shard<R: Rng + ?Sized>(
    center: &[f64],
    count: usize,
    group: u32,
    owner: usize,
    rng: &mut R,
) -> Shard {
    let mut features = Vec::with_capacity(count * center.len());
    for _ in 0..count {
        gaussian_row(center, rng, &mut features);
    }
    Shard { dim: center.len(), features, labels: None, group, owner }
}

/// The mixture direction `e`: uniform on the unit sphere in `R^dim`.
pub fn mixture_direction(dim: usize, seed: u64) -> Vec<f64> {
    sample_unit_sphere(dim, &mut stream(seed, Purpose::MixtureDirection, 0, 0))
}

/// Layout of the synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTask {
    pub features: usize,
    pub classes: usize,
    /// Distance between any two class centers.
    pub separation: f64,
}

/// Class groups: target `{0,1,2}`, mixed-in `{3,4,5}`, disjoint `{6..}`.
pub const TARGET_CLASSES: [u32; 3] = [0, 1, 2];
pub const MIXED_CLASSES: [u32; 3] = [3, 4, 5];

impl SoftmaxTask {
    pub fn new(features: usize, classes: usize) -> Result<Self> {
        let task = SoftmaxTask { features, classes, separation: 4.0 };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 7 {
            return Err(Error::Config(format!(
                "softmax task needs >= 7 classes (target 0-2, mixed 3-5, disjoint 6+), got {}",
                self.classes
            )));
        }
        if self.features < self.classes {
            return Err(Error::Config(format!(
                "softmax task needs features ({}) >= classes ({}) for orthogonal class centers",
                self.features, self.classes
            )));
        }
        Ok(())
    }

    pub fn disjoint_classes(&self) -> Vec<u32> {
        (6..self.classes as u32).collect()
    }

    /// Parameter count: one weight row plus bias per class.
    pub fn model_dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    /// Class center `c_k = (s / sqrt 2) e_k`, so centers are `s` apart.
    pub fn center(&self, class: u32) -> Vec<f64> {
        let mut c = vec![0.0; self.features];
        c[class as usize] = self.separation / std::f64::consts::SQRT_2;
        c
    }

    /// Distribution of clients in `group` (1, 2 or 3) with mixing `alpha`.
    pub fn group_distribution(&self, group: u32, alpha: f64) -> Result<DistributionSpec> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("mixing alpha {alpha} must be in (0, 1]")));
        }
        let kind = match group {
            1 => DistributionKind::SoftmaxCluster {
                primary: TARGET_CLASSES.to_vec(),
                secondary: vec![],
                alpha: 1.0,
            },
            2 => DistributionKind::SoftmaxCluster {
                primary: TARGET_CLASSES.to_vec(),
                secondary: MIXED_CLASSES.to_vec(),
                alpha,
            },
            3 => DistributionKind::SoftmaxCluster {
                primary: self.disjoint_classes(),
                secondary: vec![],
                alpha: 1.0,
            },
            g => return Err(Error::Config(format!("unknown client group {g}"))),
        };
        Ok(DistributionSpec { kind, group_id: group })
    }

    pub fn sample_shard<R: Rng + ?Sized>(
        &self,
        spec: &DistributionSpec,
        count: usize,
        owner: usize,
        rng: &mut R,
    ) -> Result<Shard> {
        let DistributionKind::SoftmaxCluster { primary, secondary, alpha } = &spec.kind else {
            return Err(Error::UnsupportedTask("expected a softmax distribution".into()));
        };
        if primary.is_empty() || (*alpha < 1.0 && secondary.is_empty()) {
            return Err(Error::Config("empty class set".into()));
        }
        if let Some(c) = primary.iter().chain(secondary).find(|&&c| c as usize >= self.classes) {
            return Err(Error::Config(format!("class {c} outside 0..{}", self.classes)));
        }
        let mut features = Vec::with_capacity(count * self.features);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let pool = if *alpha >= 1.0 || rng.gen::<f64>() < *alpha { primary } else { secondary };
            let label = pool[rng.gen_range(0..pool.len())];
            gaussian_row(&self.center(label), rng, &mut features);
            labels.push(label);
        }
        Ok(Shard {
            dim: self.features,
            features,
            labels: Some(labels),
            group: spec.group_id,
            owner,
        })
    }

    /// Mean cross-entropy and its gradient over `indices` (all rows when
    /// `None`). `theta` is row-major `classes x (features + 1)`, bias last.
    pub fn loss_grad(
        &self,
        theta: &[f64],
        shard: &Shard,
        indices: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        check_len(self.model_dim(), theta.len())?;
        check_len(self.features, shard.dim)?;
        let labels = shard
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("softmax loss needs labeled samples".into()))?;
        let count = indices.map_or(shard.len(), <[usize]>::len);
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let stride = self.features + 1;
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        let mut logits = vec![0.0; self.classes];
        let mut accumulate = |i: usize| -> Result<()> {
            let label = labels[i] as usize;
            if label >= self.classes {
                return Err(Error::Data(format!("label {label} outside 0..{}", self.classes)));
            }
            let x = shard.row(i);
            for (k, l) in logits.iter_mut().enumerate() {
                let row = &theta[k * stride..(k + 1) * stride];
                *l = row[..self.features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + row[self.features];
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_norm = max + sum.ln();
            loss += log_norm - logits[label];
            for (k, l) in logits.iter().enumerate() {
                let p = (l - log_norm).exp() - if k == label { 1.0 } else { 0.0 };
                let row = &mut grad[k * stride..(k + 1) * stride];
                for (g, xi) in row[..self.features].iter_mut().zip(x) {
                    *g += p * xi;
                }
                row[self.features] += p;
            }
            Ok(())
        };
        match indices {
            Some(idx) => {
                for &i in idx {
                    if i >= shard.len() {
                        return Err(Error::Data(format!("sample index {i} out of range")));
                    }
                    accumulate(i)?;
                }
            }
            None => (0..shard.len()).try_for_each(&mut accumulate)?,
        }
        let inv = 1.0 / count as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn accuracy(&self, theta: &[f64], shard: &Shard) -> Result<f64> {
        check_len(self.model_dim(), theta.len())?;
        let labels = shard
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("accuracy needs labeled samples".into()))?;
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let stride = self.features + 1;
        let correct = shard
            .rows()
            .zip(labels)
            .filter(|(x, &label)| {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for k in 0..self.classes {
                    let row = &theta[k * stride..(k + 1) * stride];
                    let l = row[..self.features].iter().zip(*x).map(|(a, b)| a * b).sum::<f64>()
                        + row[self.features];
                    if l > best.0 {
                        best = (l, k);
                    }
                }
                best.1 == label as usize
            })
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Generated data for the classification task.
#[derive(Debug, Clone)]
pub struct SoftmaxData {
    pub shards: Vec<Shard>,
    pub validation: Shard,
    pub test: Shard,
}

/// Generates one shard per client for groups of sizes `groups = [g1, g2, g3]`
/// plus target-distribution validation and test shards.
pub fn softmax_task_generate(
    task: &SoftmaxTask,
    groups: [usize; 3],
    alpha: f64,
    shard_size: usize,
    holdout_size: usize,
    seed: u64,
) -> Result<SoftmaxData> {
    task.validate()?;
    let mut shards = Vec::new();
    let mut owner = 0usize;
    for (gi, &count) in groups.iter().enumerate() {
        let spec = task.group_distribution(gi as u32 + 1, alpha)?;
        for _ in 0..count {
            let mut rng = stream(seed, Purpose::Shard, owner as u64, 0);
            shards.push(task.sample_shard(&spec, shard_size, owner, &mut rng)?);
            owner += 1;
        }
    }
    let target = task.group_distribution(1, alpha)?;
    let validation =
        task.sample_shard(&target, holdout_size, 0, &mut stream(seed, Purpose::Validation, 0, 0))?;
    let test = task.sample_shard(&target, holdout_size, 0, &mut stream(seed, Purpose::Test, 0, 0))?;
    Ok(SoftmaxData { shards, validation, test })
}

/// The model family a loss is computed for.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskModel {
    Mean { dim: usize },
    Softmax(SoftmaxTask),
}

impl TaskModel {
    pub fn model_dim(&self) -> usize {
        match self {
            TaskModel::Mean { dim } => *dim,
            TaskModel::Softmax(t) => t.model_dim(),
        }
    }

    /// Mean loss and gradient over `indices` of `shard` (all rows if `None`).
    pub fn loss_grad(
        &self,
        x: &[f64],
        shard: &Shard,
        indices: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            TaskModel::Mean { dim } => {
                check_len(*dim, x.len())?;
                check_len(*dim, shard.dim)?;
                let rows: Vec<&[f64]> = match indices {
                    Some(idx) => {
                        if let Some(&bad) = idx.iter().find(|&&i| i >= shard.len()) {
                            return Err(Error::Data(format!("sample index {bad} out of range")));
                        }
                        idx.iter().map(|&i| shard.row(i)).collect()
                    }
                    None => shard.rows().collect(),
                };
                if rows.is_empty() {
                    return Err(Error::EmptyBatch);
                }
                let loss = rows.iter().map(|r| dist_sq(x, r)).sum::<f64>() / rows.len() as f64;
                Ok((loss, mean_grad(x, rows)?))
            }
            TaskModel::Softmax(t) => t.loss_grad(x, shard, indices),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// A separate dataset drawn from the target distribution.
    ExtraValidation,
    /// The target client's own training shard.
    ReuseTrain,
    /// The exact population loss (mean estimation only).
    Population,
}

#[derive(Debug, Clone)]
enum OracleSource {
    Samples {
        model: TaskModel,
        data: Shard,
        /// For mean estimation: sample mean and `mean ||xi - mean||^2`.
        summary: Option<(Vec<f64>, f64)>,
    },
    Population { center: Vec<f64> },
}

/// The empirical target loss used by the server's weight problem.
#[derive(Debug, Clone)]
pub struct ValidationOracle {
    source: OracleSource,
    pub mode: ValidationMode,
}

impl ValidationOracle {
    pub fn from_samples(model: TaskModel, data: Shard, mode: ValidationMode) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("validation set is empty".into()));
        }
        if mode == ValidationMode::Population {
            return Err(Error::Config("population mode takes no samples".into()));
        }
        let summary = match &model {
            TaskModel::Mean { dim } => {
                check_len(*dim, data.dim)?;
                let (mean, count) = mean_of_rows(data.dim, data.rows());
                let spread = data.rows().map(|r| dist_sq(r, &mean)).sum::<f64>() / count as f64;
                Some((mean, spread))
            }
            TaskModel::Softmax(_) => None,
        };
        Ok(ValidationOracle { source: OracleSource::Samples { model, data, summary }, mode })
    }

    /// Exact loss `E ||y - xi||^2 = ||y - center||^2 + d`.
    pub fn population(center: Vec<f64>) -> Self {
        ValidationOracle {
            source: OracleSource::Population { center },
            mode: ValidationMode::Population,
        }
    }

    pub fn samples(&self) -> Option<&Shard> {
        match &self.source {
            OracleSource::Samples { data, .. } => Some(data),
            OracleSource::Population { .. } => None,
        }
    }

    /// Loss and gradient on the full set (`minibatch == 0`) or on a minibatch
    /// drawn without replacement from `rng`.
    pub fn validation_eval(
        &self,
        x: &[f64],
        minibatch: usize,
        rng: &mut Stream,
    ) -> Result<(f64, Vec<f64>)> {
        match self.size() {
            Some(size) if minibatch > size => Err(Error::Config(format!(
                "minibatch {minibatch} exceeds validation size {size}"
            ))),
            Some(size) if minibatch > 0 && minibatch < size => {
                let idx = index::sample(rng, size, minibatch).into_vec();
                self.eval(x, Some(&idx))
            }
            None if minibatch > 0 => {
                Err(Error::Config("population oracle has no minibatches".into()))
            }
            _ => self.eval(x, None),
        }
    }
}

impl LossOracle for ValidationOracle {
    fn size(&self) -> Option<usize> {
        match &self.source {
            OracleSource::Samples { data, .. } => Some(data.len()),
            OracleSource::Population { .. } => None,
        }
    }

    fn eval(&self, y: &[f64], subset: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        match &self.source {
            OracleSource::Population { center } => {
                check_len(center.len(), y.len())?;
                let grad = y.iter().zip(center).map(|(a, c)| 2.0 * (a - c)).collect();
                Ok((dist_sq(y, center) + center.len() as f64, grad))
            }
            OracleSource::Samples { summary: Some((mean, spread)), .. } if subset.is_none() => {
                check_len(mean.len(), y.len())?;
                let grad = y.iter().zip(mean).map(|(a, c)| 2.0 * (a - c)).collect();
                Ok((dist_sq(y, mean) + spread, grad))
            }
            OracleSource::Samples { model, data, .. } => model.loss_grad(y, data, subset),
        }
    }

    fn isotropic_center(&self) -> Option<&[f64]> {
        match &self.source {
            OracleSource::Population { center } => Some(center),
            OracleSource::Samples { summary: Some((mean, _)), .. } => Some(mean),
            OracleSource::Samples { .. } => None,
        }
    }
}
