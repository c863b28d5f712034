//! Beliefs over hidden data-owner types and their Bayesian updates.
//!
//! The coordinator never observes a type directly; it sees delivered effort.
//! Each type is expected to deliver the effort of its own menu item, so a
//! Gaussian likelihood centred on those efforts turns deliveries into
//! evidence. Updates run in log space to survive long observation batches.

use serde::Serialize;
use thiserror::Error;

use crate::contract::ContractMenu;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BeliefError {
    #[error("probabilities must be finite, non-negative, and sum to one")]
    BadProbabilities,
    #[error("sigma must be finite and strictly positive")]
    BadSigma,
    #[error("{left} entries on one side, {right} on the other")]
    SizeMismatch { left: usize, right: usize },
    #[error("every type has zero likelihood for this batch; belief left unchanged")]
    DegenerateEvidence,
    #[error("cannot build a belief over zero types")]
    Empty,
}

/// Probability distribution over the type ladder, indexed by ladder position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeBelief<S> {
    probs: Vec<S>,
}

impl<S: Real> TypeBelief<S> {
    pub fn uniform(num_types: usize) -> Self {
        assert!(num_types > 0, "belief needs at least one type");
        let p = S::one() / S::of(num_types as f64);
        TypeBelief { probs: vec![p; num_types] }
    }

    pub fn from_probs(probs: Vec<S>) -> Result<Self, BeliefError> {
        if probs.is_empty() {
            return Err(BeliefError::Empty);
        }
        let mut sum = S::zero();
        for &p in &probs {
            if !p.is_finite() || p < S::zero() || p > S::one() {
                return Err(BeliefError::BadProbabilities);
            }
            sum += p;
        }
        let tol = S::of(1e-12).max(S::epsilon() * S::of(64.0 * probs.len() as f64));
        if (sum - S::one()).abs() > tol {
            return Err(BeliefError::BadProbabilities);
        }
        Ok(TypeBelief { probs })
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable type; ties go to the lower index.
    pub fn map_type(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    /// Entry-wise mean of several beliefs (the population belief).
    pub fn average(beliefs: &[TypeBelief<S>]) -> Result<TypeBelief<S>, BeliefError> {
        let first = beliefs.first().ok_or(BeliefError::Empty)?;
        let k = first.len();
        let mut acc = vec![S::zero(); k];
        for b in beliefs {
            if b.len() != k {
                return Err(BeliefError::SizeMismatch { left: k, right: b.len() });
            }
            for (a, &p) in acc.iter_mut().zip(b.probs()) {
                *a += p;
            }
        }
        let n = S::of(beliefs.len() as f64);
        for a in &mut acc {
            *a = *a / n;
        }
        Ok(TypeBelief { probs: acc })
    }
}

/// One round's evidence about one data owner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation<S> {
    pub do_id: usize,
    pub round: usize,
    pub delivered_effort: S,
    /// False when the owner produced nothing this round.
    pub participated: bool,
}

/// Gaussian observation model: a type-`k` owner delivers effort near the
/// menu's `k`-th contracted effort with spread `sigma`. Non-participation
/// carries a per-type weight instead (uniform by default, i.e. uninformative).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodModel<S> {
    sigma: S,
    expected_efforts: Vec<S>,
    dropout_weight: Vec<S>,
}

impl<S: Real> LikelihoodModel<S> {
    pub fn new(expected_efforts: Vec<S>, sigma: S) -> Result<Self, BeliefError> {
        if !(sigma.is_finite() && sigma > S::zero()) {
            return Err(BeliefError::BadSigma);
        }
        if expected_efforts.is_empty() {
            return Err(BeliefError::Empty);
        }
        let k = expected_efforts.len();
        Ok(LikelihoodModel { sigma, expected_efforts, dropout_weight: vec![S::one(); k] })
    }

    pub fn from_menu(menu: &ContractMenu<S>, sigma: S) -> Result<Self, BeliefError> {
        Self::new(menu.items.iter().map(|it| it.effort).collect(), sigma)
    }

    /// Replace the uninformative dropout weights.
    pub fn with_dropout_weight(mut self, weight: Vec<S>) -> Result<Self, BeliefError> {
        if weight.len() != self.expected_efforts.len() {
            return Err(BeliefError::SizeMismatch {
                left: self.expected_efforts.len(),
                right: weight.len(),
            });
        }
        if weight.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(BeliefError::BadProbabilities);
        }
        self.dropout_weight = weight;
        Ok(self)
    }

    pub fn num_types(&self) -> usize {
        self.expected_efforts.len()
    }

    fn log_likelihood(&self, obs: &Observation<S>, k: usize) -> S {
        if !obs.participated {
            return self.dropout_weight[k].ln();
        }
        let z = (obs.delivered_effort - self.expected_efforts[k]) / self.sigma;
        let half = S::of(0.5);
        -half * z * z - self.sigma.ln() - half * (S::of(2.0) * S::PI()).ln()
    }
}

/// Density of one observation under type `k`.
pub fn likelihood<S: Real>(model: &LikelihoodModel<S>, obs: &Observation<S>, k: usize) -> S {
    model.log_likelihood(obs, k).exp()
}

/// Bayes update of `belief` with a batch of observations of one owner.
/// The batch order does not matter; an empty batch returns the belief as is.
/// Zero-probability types stay at zero. If every type assigns the batch zero
/// likelihood the update is refused and the caller keeps the old belief.
pub fn posterior_update<S: Real>(
    belief: &TypeBelief<S>,
    model: &LikelihoodModel<S>,
    batch: &[Observation<S>],
) -> Result<TypeBelief<S>, BeliefError> {
    if model.num_types() != belief.len() {
        return Err(BeliefError::SizeMismatch { left: belief.len(), right: model.num_types() });
    }
    if batch.is_empty() {
        return Ok(belief.clone());
    }
    let mut log_w: Vec<S> = belief
        .probs()
        .iter()
        .map(|&p| if p > S::zero() { p.ln() } else { S::neg_infinity() })
        .collect();
    for (k, lw) in log_w.iter_mut().enumerate() {
        if lw.is_infinite() {
            continue;
        }
        for obs in batch {
            *lw += model.log_likelihood(obs, k);
        }
    }
    let peak = log_w.iter().copied().fold(S::neg_infinity(), S::max);
    if !peak.is_finite() {
        return Err(BeliefError::DegenerateEvidence);
    }
    let weights: Vec<S> = log_w.iter().map(|&lw| (lw - peak).exp()).collect();
    let total: S = weights.iter().copied().sum();
    if !(total.is_finite() && total > S::zero()) {
        return Err(BeliefError::DegenerateEvidence);
    }
    Ok(TypeBelief { probs: weights.into_iter().map(|w| w / total).collect() })
}
