//! Desk-scale numerics for SFT, DPO and the low-rank (QLoRA-style) update.
//!
//! Everything is `f64`. Losses are functions of per-token log-probabilities
//! supplied by the caller; no model is run here.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token log-probabilities of one sequence under one policy. Entries are finite and `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    pub fn new(logp: Vec<f64>) -> Result<Self> {
        if let Some(bad) = logp.iter().find(|v| !(v.is_finite() && **v <= 0.0)) {
            return Err(Error::BadParameter(format!(
                "token log-probabilities must be finite and <= 0, got {bad}"
            )));
        }
        Ok(Self(logp))
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
}

impl TryFrom<Vec<f64>> for TokenLogProbs {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TokenLogProbs> for Vec<f64> {
    fn from(t: TokenLogProbs) -> Self {
        t.0
    }
}

/// Log-probabilities of the preferred (`pos`) and dispreferred (`neg`)
/// outputs under the trained policy and the frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub policy_pos: TokenLogProbs,
    pub policy_neg: TokenLogProbs,
    pub ref_pos: TokenLogProbs,
    pub ref_neg: TokenLogProbs,
    pub beta: f64,
}

impl PreferenceRecord {
    pub fn new(
        policy_pos: TokenLogProbs,
        policy_neg: TokenLogProbs,
        ref_pos: TokenLogProbs,
        ref_neg: TokenLogProbs,
        beta: f64,
    ) -> Result<Self> {
        let rec = Self {
            policy_pos,
            policy_neg,
            ref_pos,
            ref_neg,
            beta,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::BadParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        for t in [&self.policy_pos, &self.policy_neg, &self.ref_pos, &self.ref_neg] {
            if t.is_empty() {
                return Err(Error::EmptySequence);
            }
        }
        Ok(())
    }

    /// Same record with preferred and dispreferred roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            policy_pos: self.policy_neg.clone(),
            policy_neg: self.policy_pos.clone(),
            ref_pos: self.ref_neg.clone(),
            ref_neg: self.ref_pos.clone(),
            beta: self.beta,
        }
    }
}

/// `log π(y|x) = Σ_i log π(y_i | x, y_<i)`.
pub fn seq_loglik(t: &TokenLogProbs) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(t.0.iter().sum())
}

/// Batch mean of sequence negative log-likelihoods.
pub fn sft_loss(batch: &[TokenLogProbs]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for seq in batch {
        total -= seq_loglik(seq)?;
    }
    Ok(total / batch.len() as f64)
}

/// Policy log-ratio minus reference log-ratio.
pub fn dpo_delta(rec: &PreferenceRecord) -> Result<f64> {
    let policy = seq_loglik(&rec.policy_pos)? - seq_loglik(&rec.policy_neg)?;
    let reference = seq_loglik(&rec.ref_pos)? - seq_loglik(&rec.ref_neg)?;
    Ok(policy - reference)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log σ(βΔ) = softplus(-βΔ)` for one record.
pub fn dpo_record_loss(rec: &PreferenceRecord) -> Result<f64> {
    rec.validate()?;
    Ok(softplus(-rec.beta * dpo_delta(rec)?))
}

pub fn dpo_loss(batch: &[PreferenceRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for rec in batch {
        total += dpo_record_loss(rec)?;
    }
    Ok(total / batch.len() as f64)
}

/// `∂L_SFT/∂logp` for every token: `-1/B`.
pub fn sft_grad(batch: &[TokenLogProbs]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let g = -1.0 / batch.len() as f64;
    batch
        .iter()
        .map(|seq| {
            if seq.is_empty() {
                Err(Error::EmptySequence)
            } else {
                Ok(vec![g; seq.len()])
            }
        })
        .collect()
}

/// Gradient of the batch DPO loss for one record. Reference entries are
/// frozen and always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceGrad {
    pub policy_pos: Vec<f64>,
    pub policy_neg: Vec<f64>,
    pub ref_pos: Vec<f64>,
    pub ref_neg: Vec<f64>,
}

/// `∂L/∂logp⁺ = -β·σ(-βΔ)/B`, `∂L/∂logp⁻ = +β·σ(-βΔ)/B`.
pub fn dpo_grad(batch: &[PreferenceRecord]) -> Result<Vec<PreferenceGrad>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|rec| {
            rec.validate()?;
            let delta = dpo_delta(rec)?;
            let g = rec.beta * sigmoid(-rec.beta * delta) / n;
            Ok(PreferenceGrad {
                policy_pos: vec![-g; rec.policy_pos.len()],
                policy_neg: vec![g; rec.policy_neg.len()],
                ref_pos: vec![0.0; rec.ref_pos.len()],
                ref_neg: vec![0.0; rec.ref_neg.len()],
            })
        })
        .collect()
}

/// Inputs for [`grad_check`].
#[derive(Debug, Clone)]
pub enum GradInputs {
    Sft(Vec<TokenLogProbs>),
    Dpo(Vec<PreferenceRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic gradients with central finite differences of step `eps`
/// over every trainable log-probability entry (policy entries only for DPO).
pub fn grad_check(inputs: &GradInputs, eps: f64) -> Result<GradCheck> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::BadParameter(format!("eps must lie in [1e-8, 1e-3], got {eps}")));
    }
    let mut worst = 0.0f64;
    let mut coords = 0usize;
    match inputs {
        GradInputs::Sft(batch) => {
            let grads = sft_grad(batch)?;
            for (i, row) in grads.iter().enumerate() {
                for (j, &analytic) in row.iter().enumerate() {
                    let mut plus = batch.clone();
                    plus[i].0[j] += eps;
                    let mut minus = batch.clone();
                    minus[i].0[j] -= eps;
                    let numeric = (sft_loss(&plus)? - sft_loss(&minus)?) / (2.0 * eps);
                    worst = worst.max(rel_error(analytic, numeric));
                    coords += 1;
                }
            }
        }
        GradInputs::Dpo(batch) => {
            let grads = dpo_grad(batch)?;
            for (i, rec) in batch.iter().enumerate() {
                for (side, len) in [(0usize, rec.policy_pos.len()), (1, rec.policy_neg.len())] {
                    for j in 0..len {
                        let perturbed = |delta: f64| -> Result<f64> {
                            let mut b = batch.clone();
                            let seq = if side == 0 {
                                &mut b[i].policy_pos
                            } else {
                                &mut b[i].policy_neg
                            };
                            seq.0[j] += delta;
                            dpo_loss(&b)
                        };
                        let numeric = (perturbed(eps)? - perturbed(-eps)?) / (2.0 * eps);
                        let analytic = if side == 0 {
                            grads[i].policy_pos[j]
                        } else {
                            grads[i].policy_neg[j]
                        };
                        worst = worst.max(rel_error(analytic, numeric));
                        coords += 1;
                    }
                }
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coordinates: coords,
    })
}

/// Trainable factors of `ΔW = (α/r)·B·A`; the (quantized) base matrix stays frozen
/// and is not represented.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankUpdate {
    /// `r × d_in`
    pub a: DMatrix<f64>,
    /// `d_out × r`
    pub b: DMatrix<f64>,
    pub alpha: f64,
    pub rank: usize,
}

impl LowRankUpdate {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, alpha: f64, rank: usize) -> Result<Self> {
        let u = Self { a, b, alpha, rank };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rank;
        if r == 0 {
            return Err(Error::Shape("rank must be at least 1".into()));
        }
        if self.a.nrows() != r {
            return Err(Error::Shape(format!("A has {} rows, rank is {r}", self.a.nrows())));
        }
        if self.b.ncols() != r {
            return Err(Error::Shape(format!("B has {} columns, rank is {r}", self.b.ncols())));
        }
        let (d_out, d_in) = (self.b.nrows(), self.a.ncols());
        if r > d_in.min(d_out) {
            return Err(Error::Shape(format!(
                "rank {r} exceeds min(d_in={d_in}, d_out={d_out})"
            )));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// `(α/r)·B·A`, shape `d_out × d_in`.
pub fn lowrank_delta(u: &LowRankUpdate) -> Result<DMatrix<f64>> {
    u.validate()?;
    Ok((&u.b * &u.a) * u.scale())
}

/// Effective weight `W + ΔW` for a frozen base `W`.
pub fn apply_lowrank(base: &DMatrix<f64>, u: &LowRankUpdate) -> Result<DMatrix<f64>> {
    let delta = lowrank_delta(u)?;
    if base.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "base is {:?}, update is {:?}",
            base.shape(),
            delta.shape()
        )));
    }
    Ok(base + delta)
}
