//! Client messages: honest stochastic gradients and Byzantine attacks.
//!
//! Colluding attacks (IPM, ALIE) only ever see the honest gradients of the
//! current round; they are handed nothing else.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::Stream;
use crate::tasks::{Shard, TaskModel};
use crate::vecops::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlieSign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackSpec {
    BitFlip,
    RandomNoise { sigma: f64 },
    Ipm { eps: f64 },
    Alie { z: f64, sign: AlieSign },
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::BitFlip => Ok(()),
            AttackSpec::RandomNoise { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            AttackSpec::Ipm { eps } if eps > 0.0 && eps.is_finite() => Ok(()),
            AttackSpec::Alie { z, .. } if z > 0.0 && z.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid attack parameters: {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::BitFlip => "bf",
            AttackSpec::RandomNoise { .. } => "rn",
            AttackSpec::Ipm { .. } => "ipm",
            AttackSpec::Alie { .. } => "alie",
        }
    }

    /// Whether the attack needs the round's honest gradients.
    pub fn is_colluding(&self) -> bool {
        matches!(self, AttackSpec::Ipm { .. } | AttackSpec::Alie { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RoleKind {
    Honest { group: u32 },
    Byzantine { attack: AttackSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRole {
    pub index: usize,
    pub kind: RoleKind,
}

impl ClientRole {
    pub fn is_honest(&self) -> bool {
        matches!(self.kind, RoleKind::Honest { .. })
    }

    pub fn group(&self) -> Option<u32> {
        match self.kind {
            RoleKind::Honest { group } => Some(group),
            RoleKind::Byzantine { .. } => None,
        }
    }
}

/// Checks the role invariants: client 0 is honest in group 1 and indices
/// match positions. Returns the target-group member set.
pub fn target_group(roles: &[ClientRole]) -> Result<Vec<usize>> {
    if roles.first().and_then(ClientRole::group) != Some(1) {
        return Err(Error::Config("client 0 must be an honest group-1 client".into()));
    }
    if let Some((pos, r)) = roles.iter().enumerate().find(|(i, r)| r.index != *i) {
        return Err(Error::Config(format!("role at position {pos} has index {}", r.index)));
    }
    Ok(roles.iter().filter(|r| r.group() == Some(1)).map(|r| r.index).collect())
}

/// The `n` client messages of one round, row-major `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub round: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GradientSet {
    pub fn from_rows(round: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidDimension("gradient set is empty".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            check_len(dim, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(GradientSet { round, dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// Same set with clients reordered: row `k` of the result is row
    /// `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_len(self.len(), perm.len())?;
        let rows = perm.iter().map(|&p| self.row(p).to_vec()).collect();
        GradientSet::from_rows(self.round, rows)
    }
}

/// Uniformly sampled batch indices, without replacement.
pub fn batch_indices(shard_len: usize, batch_size: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if batch_size > shard_len {
        return Err(Error::Config(format!(
            "batch size {batch_size} exceeds shard size {shard_len}"
        )));
    }
    if batch_size == shard_len {
        return Ok((0..shard_len).collect());
    }
    Ok(index::sample(rng, shard_len, batch_size).into_vec())
}

/// Task gradient at `x` on a batch drawn from `shard` with `rng`.
pub fn honest_message(
    model: &TaskModel,
    x: &[f64],
    shard: &Shard,
    batch_size: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let idx = batch_indices(shard.len(), batch_size, rng)?;
    honest_message_on(model, x, shard, &idx)
}

/// Task gradient at `x` on the given sample indices.
pub fn honest_message_on(
    model: &TaskModel,
    x: &[f64],
    shard: &Shard,
    indices: &[usize],
) -> Result<Vec<f64>> {
    let full = indices.len() == shard.len() && indices.iter().enumerate().all(|(k, &i)| k == i);
    let (_, g) = model.loss_grad(x, shard, if full { None } else { Some(indices) })?;
    Ok(g)
}

/// Bit flipping: send `-g`.
pub fn attack_bf(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| -v).collect()
}

/// Random noise: send `g + sigma z`, `z ~ N(0, I)`.
pub fn attack_rn<R: Rng + ?Sized>(g: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    g.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn honest_dim(honest: &[&[f64]]) -> Result<usize> {
    let dim = honest[0].len();
    for h in honest {
        check_len(dim, h.len())?;
    }
    Ok(dim)
}

fn coordinate_mean(honest: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for h in honest {
        for (m, v) in mean.iter_mut().zip(*h) {
            *m += v;
        }
    }
    let inv = 1.0 / honest.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Inner product manipulation: `-eps * mean(honest)`.
pub fn attack_ipm(honest: &[&[f64]], eps: f64) -> Result<Vec<f64>> {
    if honest.is_empty() {
        return Err(Error::AttackInput("IPM needs at least one honest gradient".into()));
    }
    let dim = honest_dim(honest)?;
    Ok(coordinate_mean(honest, dim).into_iter().map(|m| -eps * m).collect())
}

/// "A little is enough": per coordinate `mean -/+ z * std` with the sample
/// (n - 1) standard deviation of the honest gradients.
pub fn attack_alie(honest: &[&[f64]], z: f64, sign: AlieSign) -> Result<Vec<f64>> {
    if honest.len() < 2 {
        return Err(Error::AttackInput(format!(
            "ALIE needs at least 2 honest gradients, got {}",
            honest.len()
        )));
    }
    let dim = honest_dim(honest)?;
    let mean = coordinate_mean(honest, dim);
    let mut var = vec![0.0; dim];
    for h in honest {
        for ((s, v), m) in var.iter_mut().zip(*h).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (honest.len() - 1) as f64;
    let dir = match sign {
        AlieSign::Minus => -1.0,
        AlieSign::Plus => 1.0,
    };
    Ok(mean.iter().zip(&var).map(|(m, s)| m + dir * z * (s / denom).sqrt()).collect())
}

/// Phase two of a round: fills Byzantine rows of `messages`.
///
/// `messages[i]` must already hold, for every client, the gradient it would
/// compute honestly (Byzantine workers use theirs for BF and RN). `honest`
/// lists the clients whose messages colluding attacks may observe.
/// `noise_stream(i)` yields the RN stream of Byzantine client `i`.
pub fn apply_attacks<F>(
    roles: &[ClientRole],
    messages: &mut [Vec<f64>],
    honest: &[usize],
    mut noise_stream: F,
) -> Result<()>
where
    F: FnMut(usize) -> Stream,
{
    check_len(roles.len(), messages.len())?;
    let mut colluding: Option<(AttackSpec, Vec<f64>)> = None;
    for role in roles {
        let RoleKind::Byzantine { attack } = role.kind else { continue };
        let i = role.index;
        let out = match attack {
            AttackSpec::BitFlip => attack_bf(&messages[i]),
            AttackSpec::RandomNoise { sigma } => attack_rn(&messages[i], sigma, &mut noise_stream(i)),
            AttackSpec::Ipm { .. } | AttackSpec::Alie { .. } => {
                if let Some((spec, v)) = &colluding {
                    if *spec == attack {
                        messages[i] = v.clone();
                        continue;
                    }
                }
                let observed: Vec<&[f64]> = honest.iter().map(|&h| messages[h].as_slice()).collect();
                let v = match attack {
                    AttackSpec::Ipm { eps } => attack_ipm(&observed, eps)?,
                    AttackSpec::Alie { z, sign } => attack_alie(&observed, z, sign)?,
                    _ => unreachable!(),
                };
                colluding = Some((attack, v.clone()));
                v
            }
        };
        if !all_finite(&out) {
            return Err(Error::NumericInput(format!("client {i} produced a non-finite message")));
        }
        messages[i] = out;
    }
    Ok(())
}
