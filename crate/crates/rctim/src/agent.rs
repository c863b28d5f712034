//! Simulated data owners: a hidden type plus a behavior policy that decides
//! which menu item to pick, how much of the contracted effort actually gets
//! delivered, and whether a renegotiated item is acceptable.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::contract::{
    do_utility, select_contract, ContractError, ContractItem, ContractMenu, TypeLadder,
};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("fulfilment fraction must lie in (0, 1]")]
    BadFraction,
    #[error("dropout probability must lie in [0, 1)")]
    BadDropout,
    #[error("misreport target {target} out of range for {num_types} types")]
    BadTarget { target: usize, num_types: usize },
    #[error("agent type index {index} out of range for {num_types} types")]
    BadTypeIndex { index: usize, num_types: usize },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// How an agent departs from the truthful baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Behavior<S> {
    /// Picks by honest utility and delivers in full.
    Truthful,
    /// Always claims the item meant for `target`, whatever the utilities.
    Misreport { target: usize },
    /// Picks honestly but delivers only `fraction` of the contracted effort.
    PartialFulfil { fraction: S },
    /// Picks honestly; each round independently vanishes with `probability`.
    Dropout { probability: S },
}

impl<S: Real> Behavior<S> {
    pub fn validate(&self, num_types: usize) -> Result<(), AgentError> {
        match *self {
            Behavior::Truthful => Ok(()),
            Behavior::Misreport { target } => {
                if target < num_types {
                    Ok(())
                } else {
                    Err(AgentError::BadTarget { target, num_types })
                }
            }
            Behavior::PartialFulfil { fraction } => {
                if fraction > S::zero() && fraction <= S::one() {
                    Ok(())
                } else {
                    Err(AgentError::BadFraction)
                }
            }
            Behavior::Dropout { probability } => {
                if probability >= S::zero() && probability < S::one() {
                    Ok(())
                } else {
                    Err(AgentError::BadDropout)
                }
            }
        }
    }
}

/// What one agent produced in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeliveredEffort<S> {
    pub do_id: usize,
    pub round: usize,
    pub contracted: S,
    pub delivered: S,
    pub dropped: bool,
}

/// One data owner. `true_type` indexes the shared ladder; the coordinator
/// never reads it, only the agent's observable actions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DOAgent<S> {
    pub id: usize,
    pub true_type: usize,
    pub behavior: Behavior<S>,
    /// Item currently held, if the agent signed one: (menu index, item).
    pub contract: Option<(usize, ContractItem<S>)>,
}

impl<S: Real> DOAgent<S> {
    pub fn new(
        id: usize,
        true_type: usize,
        behavior: Behavior<S>,
        num_types: usize,
    ) -> Result<Self, AgentError> {
        if true_type >= num_types {
            return Err(AgentError::BadTypeIndex { index: true_type, num_types });
        }
        behavior.validate(num_types)?;
        Ok(DOAgent { id, true_type, behavior, contract: None })
    }

    /// Menu index this agent claims, or `None` to sit the task out. Every
    /// policy except `Misreport` delegates to honest selection on the true
    /// type.
    pub fn choose(
        &self,
        ladder: &TypeLadder<S>,
        menu: &ContractMenu<S>,
    ) -> Result<Option<usize>, AgentError> {
        match self.behavior {
            Behavior::Misreport { target } => {
                if target >= menu.len() {
                    return Err(AgentError::BadTarget { target, num_types: menu.len() });
                }
                Ok(Some(target))
            }
            _ => Ok(select_contract(ladder.profile(self.true_type), menu)?),
        }
    }

    /// Run one round against the held item. Deterministic given the rng
    /// state; only `Dropout` consumes randomness.
    pub fn execute_round(
        &self,
        round: usize,
        item: &ContractItem<S>,
        rng: &mut ChaCha12Rng,
    ) -> DeliveredEffort<S> {
        let contracted = item.effort;
        let (delivered, dropped) = match self.behavior {
            Behavior::Truthful | Behavior::Misreport { .. } => (contracted, false),
            Behavior::PartialFulfil { fraction } => ((fraction * contracted).min(contracted), false),
            Behavior::Dropout { probability } => {
                let u: f64 = rng.gen();
                if u < probability.to_f64_lossy() {
                    (S::zero(), true)
                } else {
                    (contracted, false)
                }
            }
        };
        DeliveredEffort { do_id: self.id, round, contracted, delivered, dropped }
    }

    /// Agents compare honestly even when they misreport: the offer is taken
    /// iff it does not lower true-type utility (up to fp tolerance).
    pub fn accept_renegotiation(
        &self,
        ladder: &TypeLadder<S>,
        old: &ContractItem<S>,
        new: &ContractItem<S>,
    ) -> Result<bool, AgentError> {
        let p = ladder.profile(self.true_type);
        let u_old = do_utility(p, old)?;
        let u_new = do_utility(p, new)?;
        let tol = S::of(1e-9) * (S::one() + u_old.abs() + u_new.abs());
        Ok(u_new >= u_old - tol)
    }
}
