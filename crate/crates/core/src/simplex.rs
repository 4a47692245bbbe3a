//! Optimization over the probability simplex.
//!
//! The server-side weight problem is `min_{w in simplex} phi(w)` with
//! `phi(w) = f_val(x - gamma * sum_i w_i g_i)`. It is solved with entropic
//! mirror descent, whose step is the multiplicative-weights update. The
//! descent direction is either the exact chain-rule gradient or a two-point
//! zeroth-order estimate along a random unit direction.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clients::GradientSet;
use crate::error::{check_len, Error, Result};
use crate::rng::Stream;
use crate::vecops::{all_finite, axpy, dot, norm_sq};

/// Tolerance on `sum(w) == 1` for a valid weight vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point of the unit simplex: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Validates `values` and renormalizes them to sum to exactly one (up to
    /// rounding).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension("weight vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NumericInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NumericInput(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self::normalized(values, sum))
    }

    fn normalized(mut values: Vec<f64>, sum: f64) -> Self {
        let inv = 1.0 / sum;
        values.iter_mut().for_each(|v| *v *= inv);
        SimplexWeights(values)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("client count must be >= 1".into()));
        }
        Ok(SimplexWeights(vec![1.0 / n as f64; n]))
    }

    /// Uniform weight `1/|members|` on `members`, zero elsewhere.
    pub fn uniform_on(n: usize, members: &[usize]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("client count must be >= 1".into()));
        }
        if members.is_empty() {
            return Err(Error::Config("member set must be nonempty".into()));
        }
        let mut values = vec![0.0; n];
        for &m in members {
            if m >= n {
                return Err(Error::Config(format!("member index {m} out of range 0..{n}")));
            }
            values[m] = 1.0;
        }
        let count = values.iter().filter(|v| **v > 0.0).count();
        let w = 1.0 / count as f64;
        values.iter_mut().filter(|v| **v > 0.0).for_each(|v| *v = w);
        Ok(SimplexWeights(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True when `values` is a simplex point within [`SIMPLEX_TOL`].
    pub fn is_valid(values: &[f64]) -> bool {
        !values.is_empty()
            && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexWeights::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Vec<f64> {
        w.0
    }
}

pub fn uniform_weights(n: usize) -> Result<SimplexWeights> {
    SimplexWeights::uniform(n)
}

/// One entropic mirror-descent step: `w_i' ∝ w_i exp(-alpha g_i)`.
///
/// Computed in the log domain with `min g` and then the maximum exponent
/// subtracted, both exact by shift invariance. Coordinates that are exactly zero stay zero.
pub fn entropic_md_step(w: &SimplexWeights, g: &[f64], alpha: f64) -> Result<SimplexWeights> {
    check_len(w.len(), g.len())?;
    if !all_finite(g) {
        return Err(Error::NumericInput("mirror-descent direction is not finite".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::NumericInput(format!("step size {alpha} must be positive")));
    }
    // Centering g first keeps a large common offset from swamping ln w_i.
    let g_min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let exponents: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(g)
        .map(|(&wi, &gi)| if wi > 0.0 { wi.ln() - alpha * (gi - g_min) } else { f64::NEG_INFINITY })
        .collect();
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::SolverDegenerate(format!("exponent maximum is {max}")));
    }
    let values: Vec<f64> = exponents.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = values.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::SolverDegenerate(format!("normalizer is {sum}")));
    }
    Ok(SimplexWeights::normalized(values, sum))
}

/// Draws a direction uniformly from the unit sphere in `R^n`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm_sq(&v).sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Two-point estimate `n (phi(w + h e) - phi(w - h e)) / (2h) * e`.
pub fn zo_two_point_estimate<F>(mut phi: F, w: &[f64], h: f64, e: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidSmoothing(h));
    }
    check_len(w.len(), e.len())?;
    let n = w.len() as f64;
    let plus: Vec<f64> = w.iter().zip(e).map(|(wi, ei)| wi + h * ei).collect();
    let minus: Vec<f64> = w.iter().zip(e).map(|(wi, ei)| wi - h * ei).collect();
    let scale = n * (phi(&plus)? - phi(&minus)?) / (2.0 * h);
    if !scale.is_finite() {
        return Err(Error::NumericInput("finite difference is not finite".into()));
    }
    Ok(e.iter().map(|ei| scale * ei).collect())
}

/// Chain-rule gradient of `phi` at `w`:
/// `d phi / d w_i = -gamma <g_i, grad f_val(x - gamma sum_j w_j g_j)>`.
pub fn weight_gradient_exact<F>(
    x: &[f64],
    grads: &GradientSet,
    gamma: f64,
    w: &[f64],
    mut val_grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let y = candidate_point(x, grads, gamma, w)?;
    let gy = val_grad(&y)?;
    check_len(x.len(), gy.len())?;
    Ok(grads.rows().map(|gi| -gamma * dot(gi, &gy)).collect())
}

/// `x - gamma * sum_i w_i g_i`, summed in client-index order.
pub fn candidate_point(x: &[f64], grads: &GradientSet, gamma: f64, w: &[f64]) -> Result<Vec<f64>> {
    check_len(grads.dim(), x.len())?;
    check_len(grads.len(), w.len())?;
    let mut y = x.to_vec();
    for (gi, &wi) in grads.rows().zip(w) {
        if wi != 0.0 {
            axpy(&mut y, -gamma * wi, gi);
        }
    }
    Ok(y)
}

/// Empirical or exact loss used as the weight-problem objective.
pub trait LossOracle: Sync {
    /// Number of samples, or `None` for an exact population loss.
    fn size(&self) -> Option<usize>;

    /// Loss and gradient at `y`, over `subset` (sample indices) or the whole
    /// dataset when `subset` is `None`.
    fn eval(&self, y: &[f64], subset: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;

    fn value(&self, y: &[f64], subset: Option<&[usize]>) -> Result<f64> {
        Ok(self.eval(y, subset)?.0)
    }

    /// Sample mean of the oracle when its loss is `c + ||y - mean||^2`;
    /// enables the exact reference solver.
    fn isotropic_center(&self) -> Option<&[f64]> {
        None
    }
}

/// `phi(w) = f_val(x - gamma sum_i w_i g_i)` for one round.
#[derive(Clone, Copy)]
pub struct WeightObjective<'a> {
    pub x: &'a [f64],
    pub grads: &'a GradientSet,
    pub gamma: f64,
    pub oracle: &'a dyn LossOracle,
}

impl<'a> WeightObjective<'a> {
    pub fn new(
        x: &'a [f64],
        grads: &'a GradientSet,
        gamma: f64,
        oracle: &'a dyn LossOracle,
    ) -> Result<Self> {
        check_len(grads.dim(), x.len())?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("model step {gamma} must be positive")));
        }
        Ok(WeightObjective { x, grads, gamma, oracle })
    }

    pub fn n(&self) -> usize {
        self.grads.len()
    }

    pub fn candidate(&self, w: &[f64]) -> Result<Vec<f64>> {
        candidate_point(self.x, self.grads, self.gamma, w)
    }

    pub fn value(&self, w: &[f64], subset: Option<&[usize]>) -> Result<f64> {
        self.oracle.value(&self.candidate(w)?, subset)
    }

    /// Objective value and exact gradient in `w`.
    pub fn value_and_gradient(&self, w: &[f64], subset: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let y = self.candidate(w)?;
        let (v, gy) = self.oracle.eval(&y, subset)?;
        let grad = self.grads.rows().map(|gi| -self.gamma * dot(gi, &gy)).collect();
        Ok((v, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    ExactChainRule,
    ZerothOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdConfig {
    pub step_size: f64,
    pub steps: usize,
    pub estimator: Estimator,
    pub smoothing: f64,
    /// 0 = full validation set; otherwise a fresh minibatch per step.
    pub minibatch: usize,
    /// Start each round's solve from the previous round's weights.
    pub warm_start: bool,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            step_size: 1.0,
            steps: 50,
            estimator: Estimator::ExactChainRule,
            smoothing: 1e-4,
            minibatch: 0,
            warm_start: true,
        }
    }
}

impl MdConfig {
    /// Checks step size, step count and smoothing.
    pub fn validate_params(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("MD step size {} must be > 0", self.step_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("MD step count must be >= 1".into()));
        }
        if !(self.smoothing.is_finite() && self.smoothing > 0.0) {
            return Err(Error::InvalidSmoothing(self.smoothing));
        }
        Ok(())
    }

    /// Full check, including the minibatch against the oracle size.
    pub fn validate(&self, oracle_size: Option<usize>) -> Result<()> {
        self.validate_params()?;
        match oracle_size {
            Some(size) if self.minibatch > size => Err(Error::Config(format!(
                "MD minibatch {} exceeds validation set size {size}",
                self.minibatch
            ))),
            None if self.minibatch > 0 => Err(Error::Config(
                "MD minibatch requires a sample-based validation oracle".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Result of one weight solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: SimplexWeights,
    /// Full-validation objective at the returned weights.
    pub value: f64,
    /// Gap between the returned iterate and the best iterate seen.
    pub delta: f64,
}

/// Runs `cfg.steps` entropic mirror-descent steps from `init` and returns the
/// iterate with the lowest full-validation objective among all `steps + 1`.
pub fn solve_weights(
    obj: &WeightObjective<'_>,
    cfg: &MdConfig,
    init: &SimplexWeights,
    rng: &mut Stream,
) -> Result<WeightSolution> {
    cfg.validate(obj.oracle.size())?;
    check_len(obj.n(), init.len())?;
    let n = obj.n();
    let full = |w: &[f64]| obj.value(w, None);

    let mut w = init.clone();
    let mut values = Vec::with_capacity(cfg.steps + 1);
    let mut best = (f64::INFINITY, w.clone());
    for k in 0..=cfg.steps {
        let subset = match obj.oracle.size() {
            Some(size) if cfg.minibatch > 0 && k < cfg.steps => {
                Some(index::sample(rng, size, cfg.minibatch).into_vec())
            }
            _ => None,
        };
        // Evaluate the current iterate on the full set, and compute the
        // direction for the next step.
        let (value, direction) = match cfg.estimator {
            Estimator::ExactChainRule if subset.is_none() => {
                let (v, g) = obj.value_and_gradient(w.as_slice(), None)?;
                (v, g)
            }
            Estimator::ExactChainRule => {
                let v = full(w.as_slice())?;
                let (_, g) = obj.value_and_gradient(w.as_slice(), subset.as_deref())?;
                (v, g)
            }
            Estimator::ZerothOrder => {
                let v = full(w.as_slice())?;
                if k == cfg.steps {
                    (v, Vec::new())
                } else {
                    let e = sample_unit_sphere(n, rng);
                    let g = zo_two_point_estimate(
                        |p| obj.value(p, subset.as_deref()),
                        w.as_slice(),
                        cfg.smoothing,
                        &e,
                    )?;
                    (v, g)
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::NumericInput(format!("objective is {value} at MD step {k}")));
        }
        values.push(value);
        if value < best.0 {
            best = (value, w.clone());
        }
        if k < cfg.steps {
            w = entropic_md_step(&w, &direction, cfg.step_size)?;
        }
    }
    let min_seen = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(WeightSolution {
        weights: best.1,
        value: best.0,
        delta: (best.0 - min_seen).max(0.0),
    })
}

/// Frank-Wolfe duality gap `<grad, w> - min_i grad_i`, an upper bound on
/// `phi(w) - min phi` for convex `phi`.
pub fn frank_wolfe_gap(grad: &[f64], w: &[f64]) -> f64 {
    let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
    (dot(grad, w) - min).max(0.0)
}

/// Weights of the minimum-norm point of `conv(points)` (Wolfe's algorithm).
///
/// Returns a simplex vector `lambda` minimizing `||sum_i lambda_i p_i||`.
pub fn min_norm_point(points: &[Vec<f64>]) -> Result<SimplexWeights> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidDimension("no points".into()));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Shape { expected: d, got: p.len() });
    }
    if points.iter().any(|p| !all_finite(p)) {
        return Err(Error::NumericInput("point is not finite".into()));
    }
    let sq: Vec<f64> = points.iter().map(|p| norm_sq(p)).collect();
    let scale = sq.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let start = argmin(&sq);

    let mut active = vec![start];
    let mut lambda = vec![1.0];
    let mut x = points[start].clone();
    let combine = |active: &[usize], lambda: &[f64]| {
        let mut x = vec![0.0; d];
        for (&i, &l) in active.iter().zip(lambda) {
            axpy(&mut x, l, &points[i]);
        }
        x
    };

    for _ in 0..(20 * (n + d) + 100) {
        let inner: Vec<f64> = points.iter().map(|p| dot(&x, p)).collect();
        let j = argmin(&inner);
        if norm_sq(&x) - inner[j] <= 1e-13 * scale || active.contains(&j) {
            break;
        }
        active.push(j);
        lambda.push(0.0);
        let mut progressed = true;
        loop {
            let Some(alpha) = affine_minimizer(points, &active) else {
                // Numerically dependent set: undo the insertion and stop.
                active.pop();
                lambda.pop();
                progressed = false;
                break;
            };
            if alpha.iter().all(|&a| a > 1e-15) {
                lambda = alpha;
                break;
            }
            let mut theta = 1.0;
            let mut leaving = 0;
            for (k, (&l, &a)) in lambda.iter().zip(&alpha).enumerate() {
                if a <= 1e-15 {
                    let t = if l - a > 0.0 { l / (l - a) } else { 0.0 };
                    if t < theta {
                        theta = t;
                        leaving = k;
                    }
                }
            }
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l = (1.0 - theta) * *l + theta * a;
            }
            lambda[leaving] = 0.0;
            let mut k = 0;
            while k < active.len() {
                if lambda[k] <= 1e-15 && active.len() > 1 {
                    active.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let s: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= s);
        }
        x = combine(&active, &lambda);
        if !progressed {
            break;
        }
    }

    let mut weights = vec![0.0; n];
    for (&i, &l) in active.iter().zip(&lambda) {
        weights[i] = l.max(0.0);
    }
    let sum: f64 = weights.iter().sum();
    Ok(SimplexWeights::normalized(weights, sum))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Minimizer of `||sum_k a_k p_{S_k}||^2` subject to `sum_k a_k = 1` (signs
/// free), from the bordered normal equations. `None` if singular.
fn affine_minimizer(points: &[Vec<f64>], active: &[usize]) -> Option<Vec<f64>> {
    let m = active.len();
    let size = m + 1;
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    let mut scale: f64 = 0.0;
    for r in 0..m {
        for c in 0..m {
            let v = dot(&points[active[r]], &points[active[c]]);
            a[r * size + c] = v;
            scale = scale.max(v.abs());
        }
        a[r * size + m] = 1.0;
        a[m * size + r] = 1.0;
    }
    b[m] = 1.0;
    let sol = solve_dense(&mut a, &mut b, size, 1e-14 * scale)?;
    Some(sol[..m].to_vec())
}

/// Gaussian elimination with partial pivoting on a row-major `size x size`
/// system.
fn solve_dense(a: &mut [f64], b: &mut [f64], size: usize, pivot_tol: f64) -> Option<Vec<f64>> {
    for col in 0..size {
        let pivot = (col..size)
            .max_by(|&i, &j| a[i * size + col].abs().total_cmp(&a[j * size + col].abs()))?;
        if a[pivot * size + col].abs() <= pivot_tol {
            return None;
        }
        if pivot != col {
            for k in 0..size {
                a.swap(col * size + k, pivot * size + k);
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..size {
            let f = a[row * size + col] / a[col * size + col];
            if f != 0.0 {
                for k in col..size {
                    a[row * size + k] -= f * a[col * size + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; size];
    for row in (0..size).rev() {
        let mut s = b[row];
        for k in (row + 1)..size {
            s -= a[row * size + k] * x[k];
        }
        x[row] = s / a[row * size + row];
    }
    all_finite(&x).then_some(x)
}

/// Reference minimum of an objective whose oracle is isotropic quadratic,
/// `phi(w) = c + ||x - gamma G^T w - center||^2`.
///
/// Returns the reference weights and a certified lower bound on `min phi`
/// (reference value minus its Frank-Wolfe gap).
pub fn reference_minimum(obj: &WeightObjective<'_>) -> Result<Option<(SimplexWeights, f64)>> {
    let Some(center) = obj.oracle.isotropic_center() else {
        return Ok(None);
    };
    // sum_i w_i (gamma g_i - (x - center)) = gamma G^T w - (x - center)
    let offset: Vec<f64> = obj.x.iter().zip(center).map(|(x, c)| x - c).collect();
    let points: Vec<Vec<f64>> = obj
        .grads
        .rows()
        .map(|g| g.iter().zip(&offset).map(|(gi, o)| obj.gamma * gi - o).collect())
        .collect();
    let w_ref = min_norm_point(&points)?;
    let (value, grad) = obj.value_and_gradient(w_ref.as_slice(), None)?;
    let gap = frank_wolfe_gap(&grad, w_ref.as_slice());
    Ok(Some((w_ref, value - gap)))
}

/// Minimum of `phi` over the simplex grid `{w : w_i in {0, 1/r, ..., 1}}`.
/// Enumerates all compositions, so only practical for small `n`.
pub fn grid_minimum<F>(n: usize, resolution: usize, mut phi: F) -> Result<(SimplexWeights, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if n == 0 || resolution == 0 {
        return Err(Error::InvalidDimension("grid needs n >= 1 and resolution >= 1".into()));
    }
    let mut counts = vec![0usize; n];
    counts[n - 1] = resolution;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let step = 1.0 / resolution as f64;
    loop {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 * step).collect();
        let v = phi(&w)?;
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((w, v));
        }
        if !advance_composition(&mut counts) {
            break;
        }
    }
    let (w, v) = best.expect("grid is nonempty");
    let sum: f64 = w.iter().sum();
    Ok((SimplexWeights::normalized(w, sum), v))
}

/// Steps `counts` to the next composition in colex order; false when done.
fn advance_composition(counts: &mut [usize]) -> bool {
    let n = counts.len();
    if n == 1 {
        return false;
    }
    // Find the rightmost position (excluding the last) that can take one more
    // unit from the tail.
    let total: usize = counts.iter().sum();
    let mut i = n - 1;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        let tail: usize = counts[i + 1..].iter().sum();
        if tail > 0 {
            counts[i] += 1;
            let rest = total - counts[..=i].iter().sum::<usize>();
            for c in counts[i + 1..].iter_mut() {
                *c = 0;
            }
            counts[n - 1] = rest;
            return true;
        }
    }
}
