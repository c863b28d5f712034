//! Synthetic training progress: cumulative delivered effort maps to global
//! accuracy through a saturating exponential. A trainer trait lets callers
//! swap in a real training loop producing (accuracy, loss) per round.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("round effort must be non-negative and finite")]
    NegativeEffort,
    #[error("rounds out of sequence: comparing round {curr} against {prev}")]
    RoundMismatch { prev: usize, curr: usize },
    #[error("progress model fields out of range")]
    BadModel,
    #[error("model state fields out of range")]
    BadState,
}

/// Snapshot of the global model after a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalModelState<S> {
    pub round: usize,
    /// Test accuracy in `[0, 1]`.
    pub accuracy: S,
    /// Loss proxy; only its ordering matters to the convergence predicate.
    pub loss: S,
    /// Total effort absorbed so far; non-decreasing.
    pub cumulative_effective_effort: S,
}

impl<S: Real> GlobalModelState<S> {
    /// Untrained model: zero accuracy, unit loss, no effort absorbed.
    pub fn fresh() -> Self {
        GlobalModelState {
            round: 0,
            accuracy: S::zero(),
            loss: S::one(),
            cumulative_effective_effort: S::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        let ok = self.accuracy >= S::zero()
            && self.accuracy <= S::one()
            && self.loss >= S::zero()
            && self.loss.is_finite()
            && self.cumulative_effective_effort >= S::zero();
        if ok {
            Ok(())
        } else {
            Err(LearningError::BadState)
        }
    }
}

/// Saturating accuracy curve `xi_max * (1 - exp(-rate * effort))` with
/// optional Gaussian round noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgressModel<S> {
    /// Asymptotic accuracy in `(0, 1]`.
    pub xi_max: S,
    /// Curve steepness per effort unit; strictly positive.
    pub rate: S,
    /// Standard deviation of the per-round accuracy noise; zero disables it.
    pub noise_sigma: S,
}

impl<S: Real> ProgressModel<S> {
    pub fn validate(&self) -> Result<(), LearningError> {
        let ok = self.xi_max > S::zero()
            && self.xi_max <= S::one()
            && self.rate.is_finite()
            && self.rate > S::zero()
            && self.noise_sigma >= S::zero()
            && self.noise_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LearningError::BadModel)
        }
    }
}

/// Anything that can turn a round of delivered effort into the next
/// (accuracy, loss) pair. Implementations may keep internal state.
pub trait Trainer<S> {
    fn train_round(
        &mut self,
        state: &GlobalModelState<S>,
        round_effort: S,
        rng: &mut ChaCha12Rng,
    ) -> Result<(S, S), LearningError>;
}

impl<S: Real> Trainer<S> for ProgressModel<S> {
    fn train_round(
        &mut self,
        state: &GlobalModelState<S>,
        round_effort: S,
        rng: &mut ChaCha12Rng,
    ) -> Result<(S, S), LearningError> {
        self.validate()?;
        let total = state.cumulative_effective_effort + round_effort;
        let clean = self.xi_max * (S::one() - (-self.rate * total).exp());
        let noise = if self.noise_sigma > S::zero() {
            // sampled in f64 so the draw count per round is scalar-independent
            let n = Normal::new(0.0, self.noise_sigma.to_f64_lossy())
                .map_err(|_| LearningError::BadModel)?;
            S::of(n.sample(rng))
        } else {
            let _: u64 = rng.gen(); // keep the stream advancing either way
            S::zero()
        };
        let accuracy = (clean + noise).max(S::zero()).min(S::one());
        Ok((accuracy, S::one() - accuracy))
    }
}

/// Advance one round using any trainer: accuracy and loss come from the
/// trainer, effort accumulates, the round counter increments.
pub fn advance_with<S: Real, T: Trainer<S> + ?Sized>(
    state: &GlobalModelState<S>,
    round_effort: S,
    trainer: &mut T,
    rng: &mut ChaCha12Rng,
) -> Result<GlobalModelState<S>, LearningError> {
    if !(round_effort.is_finite() && round_effort >= S::zero()) {
        return Err(LearningError::NegativeEffort);
    }
    let (accuracy, loss) = trainer.train_round(state, round_effort, rng)?;
    let next = GlobalModelState {
        round: state.round + 1,
        accuracy,
        loss,
        cumulative_effective_effort: state.cumulative_effective_effort + round_effort,
    };
    next.validate()?;
    Ok(next)
}

/// Advance one round on the synthetic progress curve.
pub fn advance<S: Real>(
    state: &GlobalModelState<S>,
    round_effort: S,
    model: &ProgressModel<S>,
    rng: &mut ChaCha12Rng,
) -> Result<GlobalModelState<S>, LearningError> {
    let mut m = *model;
    advance_with(state, round_effort, &mut m, rng)
}

/// Currency the coordinator earns from model quality: `q_scale * accuracy`.
pub fn revenue<S: Real>(accuracy: S, q_scale: S) -> S {
    q_scale * accuracy
}

/// Convergence predicate for consecutive rounds: loss did not increase.
pub fn converging<S: Real>(
    curr: &GlobalModelState<S>,
    prev: &GlobalModelState<S>,
) -> Result<bool, LearningError> {
    if curr.round != prev.round + 1 {
        return Err(LearningError::RoundMismatch { prev: prev.round, curr: curr.round });
    }
    Ok(curr.loss <= prev.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn model(noise_sigma: f64) -> ProgressModel<f64> {
        ProgressModel { xi_max: 0.9, rate: 0.01, noise_sigma }
    }

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(7)
    }

    #[test]
    fn hundred_effort_units_on_the_reference_curve() {
        let s1 = advance(&GlobalModelState::fresh(), 100.0, &model(0.0), &mut rng()).unwrap();
        let expected = 0.9 * (1.0 - (-1.0f64).exp());
        assert_relative_eq!(s1.accuracy, expected, max_relative = 1e-12);
        assert!((s1.accuracy - 0.568_9).abs() < 1e-4);
        assert_relative_eq!(s1.loss, 1.0 - expected, max_relative = 1e-12);
        assert_eq!(s1.round, 1);
        assert_relative_eq!(s1.cumulative_effective_effort, 100.0);
    }

    #[test]
    fn zero_effort_changes_nothing_but_the_round() {
        let s0 = GlobalModelState::fresh();
        let s1 = advance(&s0, 0.0, &model(0.0), &mut rng()).unwrap();
        assert_eq!(s1.accuracy, s0.accuracy);
        assert_eq!(s1.cumulative_effective_effort, 0.0);
        assert_eq!(s1.round, 1);
    }

    #[test]
    fn noiseless_trajectory_is_monotone_and_saturates() {
        let m = model(0.0);
        let mut r = rng();
        let mut state = GlobalModelState::fresh();
        let mut prev_acc = state.accuracy;
        for _ in 0..600 {
            state = advance(&state, 10.0, &m, &mut r).unwrap();
            assert!(state.accuracy >= prev_acc);
            assert!(state.accuracy <= m.xi_max);
            prev_acc = state.accuracy;
        }
        // rate * effort = 60 at the end; within a hair of the asymptote
        assert!((m.xi_max - state.accuracy) < 1e-9);
    }

    #[test]
    fn negative_effort_is_rejected() {
        let err = advance(&GlobalModelState::fresh(), -1.0, &model(0.0), &mut rng());
        assert_eq!(err.unwrap_err(), LearningError::NegativeEffort);
    }

    #[test]
    fn revenue_is_linear_in_accuracy() {
        assert_eq!(revenue(0.0, 2.0), 0.0);
        assert_relative_eq!(revenue(0.5, 2.0), 1.0);
        assert_relative_eq!(revenue(0.3, 2.0) + revenue(0.2, 2.0), revenue(0.5, 2.0));
    }

    #[test]
    fn convergence_compares_losses_non_strictly() {
        let prev = GlobalModelState { round: 3, accuracy: 0.5, loss: 0.5, cumulative_effective_effort: 10.0 };
        let better = GlobalModelState { round: 4, loss: 0.4, ..prev };
        let worse = GlobalModelState { round: 4, loss: 0.6, ..prev };
        let same = GlobalModelState { round: 4, ..prev };
        assert!(converging(&better, &prev).unwrap());
        assert!(!converging(&worse, &prev).unwrap());
        assert!(converging(&same, &prev).unwrap());
        assert_eq!(
            converging(&prev, &prev).unwrap_err(),
            LearningError::RoundMismatch { prev: 3, curr: 3 }
        );
    }

    #[test]
    fn same_seed_same_noisy_trajectory() {
        let m = model(0.05);
        let run = || {
            let mut r = rng();
            let mut state = GlobalModelState::fresh();
            let mut trace = Vec::new();
            for _ in 0..20 {
                state = advance(&state, 50.0, &m, &mut r).unwrap();
                trace.push(state.accuracy);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_stays_clamped_to_the_unit_interval() {
        let m = model(5.0);
        let mut r = rng();
        let mut state = GlobalModelState::fresh();
        for _ in 0..50 {
            state = advance(&state, 50.0, &m, &mut r).unwrap();
            assert!((0.0..=1.0).contains(&state.accuracy));
            assert!(state.loss >= 0.0);
        }
    }

    #[test]
    fn external_trainer_drives_the_state() {
        struct FixedStep;
        impl Trainer<f64> for FixedStep {
            fn train_round(
                &mut self,
                state: &GlobalModelState<f64>,
                _round_effort: f64,
                _rng: &mut ChaCha12Rng,
            ) -> Result<(f64, f64), LearningError> {
                let acc = (state.accuracy + 0.1).min(1.0);
                Ok((acc, 1.0 - acc))
            }
        }
        let mut t = FixedStep;
        let mut r = rng();
        let mut state = GlobalModelState::fresh();
        for _ in 0..3 {
            state = advance_with(&state, 1.0, &mut t, &mut r).unwrap();
        }
        assert_relative_eq!(state.accuracy, 0.3, max_relative = 1e-12);
        assert_eq!(state.round, 3);
    }
}
