//! Round-by-round orchestration: publish a menu, let agents sign and work,
//! settle payments against the task budget, update beliefs from delivered
//! effort, and renegotiate the menu at the partition point. A static variant
//! runs the same loop with the renegotiation gate disabled so paired
//! comparisons stay seed-for-seed fair.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{AgentError, Behavior, DOAgent, DeliveredEffort};
use crate::belief::{
    posterior_update, BeliefError, LikelihoodModel, Observation, TypeBelief,
};
use crate::contract::{
    do_utility, optimize_menu, select_contract, ContractError, ContractItem, ContractMenu,
    DOTypeProfile, EffortGrid, MenuProvenance, RevenueModel, TypeLadder,
};
use crate::cost::{CommProfile, ComputeProfile, CostMode, CostParams};
use crate::learning::{advance, converging, GlobalModelState, LearningError, ProgressModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config field `{field}`: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("comparison input is empty")]
    EmptyComparison,
    #[error("comparison pair {index} mixes seeds {left} and {right}")]
    PairSeedMismatch { index: usize, left: u64, right: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Rctim,
    Static,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Rctim => "rctim",
            Mechanism::Static => "static",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FulfillmentRule {
    /// Full reward iff delivered matches contracted effort (1e-9 tolerance).
    Binary,
    /// Reward scaled by delivered / contracted.
    ProRata,
}

/// Integer counts per category closest to `n * share`: floors first, the
/// shortfall goes to the largest remainders, earlier index winning ties.
fn largest_remainder_counts(shares: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // stable sort keeps the earlier category ahead on tied remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders")
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Population shares per behavior; normalized, then turned into agent counts
/// by largest remainder and assigned to owners in id order.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorMix {
    pub truthful: f64,
    pub misreport: f64,
    pub partial: f64,
    pub dropout: f64,
    /// Menu index misreporting agents always claim.
    pub misreport_target: usize,
    /// Fraction of contracted effort partial agents deliver.
    pub partial_fraction: f64,
    /// Per-round vanish probability of dropout agents.
    pub dropout_probability: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        BehaviorMix {
            truthful: 1.0,
            misreport: 0.0,
            partial: 0.0,
            dropout: 0.0,
            misreport_target: 0,
            partial_fraction: 0.5,
            dropout_probability: 0.3,
        }
    }
}

impl BehaviorMix {
    fn shares(&self) -> [f64; 4] {
        [self.truthful, self.misreport, self.partial, self.dropout]
    }

    pub fn validate(&self, num_types: usize) -> Result<(), SimError> {
        let shares = self.shares();
        if shares.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
            return Err(SimError::BadConfig {
                field: "behavior_mix",
                reason: "shares must be finite and non-negative".into(),
            });
        }
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            return Err(SimError::BadConfig {
                field: "behavior_mix",
                reason: "shares must not all be zero".into(),
            });
        }
        if self.misreport > 0.0 {
            Behavior::<f64>::Misreport { target: self.misreport_target }
                .validate(num_types)
                .map_err(|e| SimError::BadConfig {
                    field: "behavior_mix.misreport_target",
                    reason: e.to_string(),
                })?;
        }
        if self.partial > 0.0 {
            Behavior::PartialFulfil { fraction: self.partial_fraction }
                .validate(num_types)
                .map_err(|e| SimError::BadConfig {
                    field: "behavior_mix.partial_fraction",
                    reason: e.to_string(),
                })?;
        }
        if self.dropout > 0.0 {
            Behavior::Dropout { probability: self.dropout_probability }
                .validate(num_types)
                .map_err(|e| SimError::BadConfig {
                    field: "behavior_mix.dropout_probability",
                    reason: e.to_string(),
                })?;
        }
        Ok(())
    }

    /// Behavior per owner id: largest-remainder quotas over the normalized
    /// shares, assigned in fixed block order (truthful, misreport, partial,
    /// dropout). Deterministic in the owner index.
    pub fn assign(&self, num_dos: usize, num_types: usize) -> Result<Vec<Behavior<f64>>, SimError> {
        self.validate(num_types)?;
        let counts = largest_remainder_counts(&self.shares(), num_dos);
        let templates: [Behavior<f64>; 4] = [
            Behavior::Truthful,
            Behavior::Misreport { target: self.misreport_target },
            Behavior::PartialFulfil { fraction: self.partial_fraction },
            Behavior::Dropout { probability: self.dropout_probability },
        ];
        let mut out = Vec::with_capacity(num_dos);
        for (b, &n) in counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(templates[b], n));
        }
        debug_assert_eq!(out.len(), num_dos);
        Ok(out)
    }
}

/// Everything one run needs. Defaults reproduce the reference experiment:
/// 45 owners over 10 types, 50 rounds, budget 400, renegotiation at round 25.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub total_rounds: usize,
    pub num_dos: usize,
    pub num_types: usize,
    /// Whole-task cash budget.
    pub budget: f64,
    /// Round deadline in seconds.
    pub t_max: f64,
    /// Renegotiation partition: the gate sits at round `total_rounds / partition`.
    pub partition: usize,
    pub seed: u64,
    pub behavior_mix: BehaviorMix,
    /// Distribution agents' true types are sampled from; empty means "use
    /// the prior".
    pub true_type_distribution: Vec<f64>,
    /// Coordinator's initial belief; empty means uniform.
    pub prior: Vec<f64>,
    /// Revenue per unit accuracy.
    pub q_scale: f64,
    /// Accuracy estimate plugged into menu design.
    pub design_accuracy: f64,
    pub fulfillment_rule: FulfillmentRule,
    /// Reserved for a posted-price extension; carried but unused.
    pub do_starting_price: f64,
    /// Unit-cost conversion from energy to currency.
    pub gamma: f64,
    pub cost_mode: CostMode,
    pub comp_energy_per_effort: f64,
    pub comm_energy_per_round: f64,
    pub capacitance: f64,
    pub voltage: f64,
    pub cpu_frequency: f64,
    pub cycles_per_effort: f64,
    pub transmission_power: f64,
    pub bandwidth: f64,
    pub channel_gain: f64,
    pub noise_power: f64,
    pub model_size: f64,
    /// Type k gets valuation `theta_start + k * theta_step`.
    pub theta_start: f64,
    pub theta_step: f64,
    /// Type k holds `(k + 1) * data_size_step` samples.
    pub data_size_step: f64,
    /// Asymptotic model accuracy; shared by training progress and the
    /// optimizer's revenue surrogate.
    pub xi_max: f64,
    /// Progress-curve steepness per delivered effort unit.
    pub progress_rate: f64,
    pub progress_noise_sigma: f64,
    /// Steepness of the optimizer's effort-revenue surrogate; zero makes the
    /// designer value effort not at all.
    pub design_revenue_rate: f64,
    pub grid_points: usize,
    /// Likelihood spread as a multiple of the mean adjacent menu-effort gap.
    pub likelihood_sigma_scale: f64,
    /// Fire the gate at every multiple of `total_rounds / partition` instead
    /// of only the first.
    pub multi_gate: bool,
    /// Stop early once accuracy reaches this level.
    pub target_accuracy: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            total_rounds: 50,
            num_dos: 45,
            num_types: 10,
            budget: 400.0,
            t_max: 1.5,
            partition: 2,
            seed: 0,
            behavior_mix: BehaviorMix::default(),
            true_type_distribution: Vec::new(),
            prior: Vec::new(),
            q_scale: 2.0,
            design_accuracy: 0.5,
            fulfillment_rule: FulfillmentRule::Binary,
            do_starting_price: 0.2,
            gamma: 0.003,
            cost_mode: CostMode::Direct,
            comp_energy_per_effort: 0.01,
            comm_energy_per_round: 0.1,
            capacitance: 1e-28,
            voltage: 1.0,
            cpu_frequency: 1e9,
            cycles_per_effort: 2e4,
            transmission_power: 0.1,
            bandwidth: 1e6,
            channel_gain: 1.0,
            noise_power: 1e-3,
            model_size: 1e6,
            theta_start: 1.0,
            theta_step: 1.0,
            data_size_step: 100.0,
            xi_max: 0.9,
            progress_rate: 2e-7,
            progress_noise_sigma: 0.0,
            design_revenue_rate: 1e-4,
            grid_points: 512,
            likelihood_sigma_scale: 0.25,
            multi_gate: false,
            target_accuracy: None,
        }
    }
}

fn check_distribution(name: &'static str, dist: &[f64], k: usize) -> Result<(), SimError> {
    if dist.is_empty() {
        return Ok(());
    }
    if dist.len() != k {
        return Err(SimError::BadConfig {
            field: name,
            reason: format!("needs {k} entries, got {}", dist.len()),
        });
    }
    if dist.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(SimError::BadConfig {
            field: name,
            reason: "entries must be finite and non-negative".into(),
        });
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SimError::BadConfig {
            field: name,
            reason: format!("entries must sum to 1, got {total}"),
        });
    }
    Ok(())
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &'static str, reason: &str| SimError::BadConfig {
            field,
            reason: reason.to_string(),
        };
        if self.num_dos == 0 {
            return Err(bad("num_dos", "must be positive"));
        }
        if self.num_types == 0 {
            return Err(bad("num_types", "must be positive"));
        }
        if self.partition == 0 {
            return Err(bad("partition", "must be positive"));
        }
        if !self.total_rounds.is_multiple_of(self.partition) {
            return Err(SimError::BadConfig {
                field: "partition",
                reason: format!(
                    "total_rounds {} is not divisible by partition {}",
                    self.total_rounds, self.partition
                ),
            });
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(bad("budget", "must be positive"));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(bad("t_max", "must be positive"));
        }
        if !(self.q_scale.is_finite() && self.q_scale >= 0.0) {
            return Err(bad("q_scale", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.design_accuracy) {
            return Err(bad("design_accuracy", "must lie in [0, 1]"));
        }
        if !(self.do_starting_price.is_finite() && self.do_starting_price >= 0.0) {
            return Err(bad("do_starting_price", "must be non-negative"));
        }
        if !(self.theta_start.is_finite() && self.theta_start > 0.0) {
            return Err(bad("theta_start", "must be positive"));
        }
        if !(self.theta_step.is_finite() && self.theta_step > 0.0) {
            return Err(bad("theta_step", "must be positive"));
        }
        if !(self.data_size_step.is_finite() && self.data_size_step > 0.0) {
            return Err(bad("data_size_step", "must be positive"));
        }
        if !(self.xi_max > 0.0 && self.xi_max <= 1.0) {
            return Err(bad("xi_max", "must lie in (0, 1]"));
        }
        if !(self.progress_rate.is_finite() && self.progress_rate > 0.0) {
            return Err(bad("progress_rate", "must be positive"));
        }
        if !(self.progress_noise_sigma.is_finite() && self.progress_noise_sigma >= 0.0) {
            return Err(bad("progress_noise_sigma", "must be non-negative"));
        }
        if !(self.design_revenue_rate.is_finite() && self.design_revenue_rate >= 0.0) {
            return Err(bad("design_revenue_rate", "must be non-negative"));
        }
        if self.grid_points == 0 {
            return Err(bad("grid_points", "must be positive"));
        }
        if !(self.likelihood_sigma_scale.is_finite() && self.likelihood_sigma_scale > 0.0) {
            return Err(bad("likelihood_sigma_scale", "must be positive"));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(bad("target_accuracy", "must lie in [0, 1]"));
            }
        }
        check_distribution("prior", &self.prior, self.num_types)?;
        check_distribution("true_type_distribution", &self.true_type_distribution, self.num_types)?;
        self.behavior_mix.validate(self.num_types)?;
        Ok(())
    }

    pub fn prior_belief(&self) -> Result<TypeBelief<f64>, SimError> {
        if self.prior.is_empty() {
            Ok(TypeBelief::uniform(self.num_types))
        } else {
            Ok(TypeBelief::from_probs(self.prior.clone())?)
        }
    }

    /// Distribution true types are sampled from; falls back to the prior.
    pub fn true_type_dist(&self) -> Result<Vec<f64>, SimError> {
        if self.true_type_distribution.is_empty() {
            Ok(self.prior_belief()?.probs().to_vec())
        } else {
            Ok(self.true_type_distribution.clone())
        }
    }

    pub fn build_ladder(&self) -> Result<TypeLadder<f64>, SimError> {
        let mut types = Vec::with_capacity(self.num_types);
        for k in 0..self.num_types {
            types.push(DOTypeProfile {
                theta: self.theta_start + self.theta_step * k as f64,
                data_size: self.data_size_step * (k + 1) as f64,
                compute: ComputeProfile {
                    capacitance: self.capacitance,
                    voltage: self.voltage,
                    cpu_frequency: self.cpu_frequency,
                    cycles_per_effort: self.cycles_per_effort,
                },
                comm: CommProfile {
                    transmission_power: self.transmission_power,
                    bandwidth: self.bandwidth,
                    channel_gain: self.channel_gain,
                    noise_power: self.noise_power,
                    model_size: self.model_size,
                },
                cost_params: CostParams {
                    gamma: self.gamma,
                    mode: self.cost_mode,
                    comp_energy_per_effort: self.comp_energy_per_effort,
                    comm_energy_per_round: self.comm_energy_per_round,
                },
            });
        }
        Ok(TypeLadder::new(types)?)
    }

    pub fn progress_model(&self) -> ProgressModel<f64> {
        ProgressModel {
            xi_max: self.xi_max,
            rate: self.progress_rate,
            noise_sigma: self.progress_noise_sigma,
        }
    }

    pub fn revenue_model(&self) -> RevenueModel<f64> {
        RevenueModel { xi_max: self.xi_max, effort_rate: self.design_revenue_rate }
    }

    /// Round the single renegotiation gate sits at; zero when there are no
    /// rounds to split.
    pub fn gate_round(&self) -> usize {
        self.total_rounds / self.partition
    }
}

const STREAM_TYPES: u64 = 0;
const STREAM_PROGRESS: u64 = 1;
const STREAM_AGENT_BASE: u64 = 1000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Leave a little slack under the cap so realized spend (which is stochastic
/// in who participates) stays inside the whole-task budget.
const DESIGN_BUDGET_MARGIN: f64 = 0.9;

/// Translate a per-round cash envelope into the menu-level cap
/// `sum_k theta_k R_k <= cap`. Under a roughly uniform type mix, expected
/// per-round cash is about `num_dos / num_types` times that sum.
fn design_budget_cap(per_round_cash: f64, num_dos: usize, num_types: usize) -> f64 {
    DESIGN_BUDGET_MARGIN * per_round_cash * num_types as f64 / num_dos as f64
}

/// Per-round cash envelope for a redesign partway through the task. The
/// original plan is never loosened: savings from underspending stay in
/// reserve, only an overspent ledger tightens the envelope. This keeps the
/// redesign an exact replay of the initial design when beliefs still equal
/// the prior.
fn redesign_envelope(config: &SimulationConfig, remaining_budget: f64, rounds_left: usize) -> f64 {
    if rounds_left == 0 {
        return remaining_budget;
    }
    let planned = config.budget / config.total_rounds as f64;
    planned.min(remaining_budget / rounds_left as f64)
}

/// Effort a truthful owner of each type would deliver from this menu: the
/// effort of the item the selection rule picks, zero for types that would
/// reject. Adjacent incentive constraints bind by construction, so ties send
/// a type one slot down; centering the observation model on the raw menu
/// efforts would therefore bias every posterior one type low.
fn predicted_efforts(
    ladder: &TypeLadder<f64>,
    menu: &ContractMenu<f64>,
) -> Result<Vec<f64>, SimError> {
    let mut out = Vec::with_capacity(ladder.len());
    for k in 0..ladder.len() {
        let e = match select_contract(ladder.profile(k), menu)? {
            Some(j) => menu.items[j].effort,
            None => 0.0,
        };
        out.push(e);
    }
    Ok(out)
}

/// Likelihood spread tied to the spacing of the predicted efforts so the
/// observation model stays informative across rescaled instances.
fn sigma_from_efforts(efforts: &[f64], scale: f64) -> f64 {
    let mut gaps = Vec::new();
    for w in efforts.windows(2) {
        let g = w[1] - w[0];
        if g > 0.0 {
            gaps.push(g);
        }
    }
    if gaps.is_empty() {
        let top = efforts.iter().cloned().fold(0.0f64, f64::max);
        return (0.05 * top).max(1e-9);
    }
    scale * gaps.iter().sum::<f64>() / gaps.len() as f64
}

/// Observation model for a published menu: Gaussian around each type's
/// predicted delivered effort.
fn likelihood_for_menu(
    ladder: &TypeLadder<f64>,
    menu: &ContractMenu<f64>,
    scale: f64,
) -> Result<LikelihoodModel<f64>, SimError> {
    let centers = predicted_efforts(ladder, menu)?;
    let sigma = sigma_from_efforts(&centers, scale);
    Ok(LikelihoodModel::new(centers, sigma)?)
}

/// One cash transfer to one owner. `fraction` is the share of the contracted
/// reward actually granted (fulfilment rule times any budget capping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Payment {
    pub do_id: usize,
    pub cash: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settlement {
    pub payments: Vec<Payment>,
    pub total_cash: f64,
    /// True when the remaining budget truncated at least one payment.
    pub budget_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub payments: Vec<Payment>,
    pub budget_spent_cumulative: f64,
    pub dc_utility: f64,
    pub delivered: Vec<DeliveredEffort<f64>>,
    pub accuracy: f64,
    pub loss: f64,
    pub population_belief: Vec<f64>,
    pub budget_capped: bool,
}

/// Per-run payment book. The remaining balance is the primary state: it never
/// drops below zero, so derived cumulative spend never exceeds the budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLedger {
    pub budget: f64,
    remaining: f64,
    pub rounds: Vec<RoundRecord>,
}

impl RoundLedger {
    pub fn new(budget: f64) -> Self {
        RoundLedger { budget, remaining: budget, rounds: Vec::new() }
    }

    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    pub fn spent(&self) -> f64 {
        self.budget - self.remaining
    }

    /// Cumulative cash through round `t`.
    pub fn spent_through(&self, t: usize) -> f64 {
        self.rounds
            .iter()
            .rev()
            .find(|r| r.round <= t)
            .map(|r| r.budget_spent_cumulative)
            .unwrap_or(0.0)
    }
}

/// Pay the round out of the remaining budget. Cash per owner is
/// `theta_slot * R_slot` scaled by the fulfilment rule; a payment the budget
/// cannot cover is truncated to what remains and flagged.
pub fn settle_round(
    ledger: &mut RoundLedger,
    delivered: &[DeliveredEffort<f64>],
    contracts: &[Option<(usize, ContractItem<f64>)>],
    ladder: &TypeLadder<f64>,
    rule: FulfillmentRule,
) -> Result<Settlement, SimError> {
    let mut payments = Vec::with_capacity(delivered.len());
    let mut total = 0.0;
    let mut capped = false;
    for rec in delivered {
        let (slot, item) = match contracts.get(rec.do_id).and_then(|c| *c) {
            Some(c) => c,
            None => continue, // no contract, no payment
        };
        let rule_fraction = match rule {
            FulfillmentRule::Binary => {
                let tol = 1e-9 * (1.0 + rec.contracted.abs());
                if rec.delivered >= rec.contracted - tol {
                    1.0
                } else {
                    0.0
                }
            }
            FulfillmentRule::ProRata => {
                if rec.contracted > 0.0 {
                    (rec.delivered / rec.contracted).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
        };
        let due = ladder.profile(slot).theta * item.reward * rule_fraction;
        let cash = if due >= ledger.remaining {
            capped = capped || due > ledger.remaining;
            let all = ledger.remaining;
            ledger.remaining = 0.0;
            all
        } else {
            // due < remaining, so the balance cannot round below zero
            ledger.remaining -= due;
            due
        };
        let fraction = if due > 0.0 { rule_fraction * cash / due } else { rule_fraction };
        total += cash;
        payments.push(Payment { do_id: rec.do_id, cash, fraction });
    }
    Ok(Settlement { payments, total_cash: total, budget_capped: capped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RenegotiationEvent {
    pub round: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// The redesign did not fit the remaining budget; old contracts stood.
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub ledger: RoundLedger,
    pub final_accuracy: f64,
    pub total_dc_utility: f64,
    pub per_do_utility: Vec<f64>,
    pub menus: Vec<ContractMenu<f64>>,
    pub renegotiations: Vec<RenegotiationEvent>,
    pub rounds_completed: usize,
    /// Diagnostic when the run stopped before the first round.
    pub aborted: Option<String>,
}

impl RunResult {
    pub fn total_payments(&self) -> f64 {
        self.ledger.spent()
    }

    pub fn renegotiation_accepted(&self) -> usize {
        self.renegotiations.iter().map(|e| e.accepted).sum()
    }
}

/// True at the partition round when both gate conditions hold: cumulative
/// spend within the pro-rata budget share and the model still converging.
pub fn renegotiation_due(
    t: usize,
    ledger: &RoundLedger,
    curr: &GlobalModelState<f64>,
    prev: &GlobalModelState<f64>,
    config: &SimulationConfig,
) -> Result<bool, SimError> {
    let gate = config.gate_round();
    if t == 0 || gate == 0 {
        return Ok(false);
    }
    let at_gate = if config.multi_gate {
        t.is_multiple_of(gate) && t < config.total_rounds
    } else {
        t == gate
    };
    if !at_gate {
        return Ok(false);
    }
    let share = config.budget * t as f64 / config.total_rounds as f64;
    if ledger.spent_through(t) > share {
        return Ok(false);
    }
    Ok(converging(curr, prev)?)
}

/// Offer produced by a renegotiation pass: owner `do_id` is offered the item
/// its maximum-a-posteriori type would select from the redesigned menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RenegotiationOffer {
    pub do_id: usize,
    pub item_index: usize,
}

/// Replacement menu plus its per-owner offers; `None` when no menu fits the
/// remaining budget.
pub type RenegotiationOutcome = Option<(ContractMenu<f64>, Vec<RenegotiationOffer>)>;

/// Redesign the menu under the averaged per-owner beliefs and the remaining
/// budget, then address each owner at its MAP type. `None` when no menu fits
/// what is left.
#[allow(clippy::too_many_arguments)]
pub fn renegotiate(
    beliefs: &[TypeBelief<f64>],
    ladder: &TypeLadder<f64>,
    grid: &EffortGrid<f64>,
    config: &SimulationConfig,
    remaining_budget: f64,
    rounds_left: usize,
    accuracy: f64,
    round: usize,
) -> Result<RenegotiationOutcome, SimError> {
    let population = TypeBelief::average(beliefs)?;
    let envelope = redesign_envelope(config, remaining_budget, rounds_left);
    let cap = design_budget_cap(envelope, beliefs.len(), ladder.len());
    let menu = match optimize_menu(
        ladder,
        &population,
        grid,
        cap,
        config.q_scale,
        config.t_max,
        accuracy,
        &config.revenue_model(),
    ) {
        Ok(m) => ContractMenu { provenance: MenuProvenance::Renegotiated { round }, ..m },
        Err(ContractError::OverBudget { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    // address each owner at the slot its MAP type would take, so an offer to
    // a correctly inferred owner reproduces what it would choose on its own
    let mut offers = Vec::with_capacity(beliefs.len());
    for (do_id, b) in beliefs.iter().enumerate() {
        let map = b.map_type();
        let item_index = select_contract(ladder.profile(map), &menu)?.unwrap_or(map);
        offers.push(RenegotiationOffer { do_id, item_index });
    }
    Ok(Some((menu, offers)))
}

/// Full mechanism: initial menu, round loop, renegotiation gate.
pub fn run(config: &SimulationConfig) -> Result<RunResult, SimError> {
    run_mechanism(config, Mechanism::Rctim)
}

/// Same loop with the gate disabled; the initial menu stands for the whole
/// task. Seed discipline matches `run` so paired comparisons are valid.
pub fn run_baseline_static(config: &SimulationConfig) -> Result<RunResult, SimError> {
    run_mechanism(config, Mechanism::Static)
}

pub fn run_mechanism(
    config: &SimulationConfig,
    mechanism: Mechanism,
) -> Result<RunResult, SimError> {
    config.validate()?;
    let ladder = config.build_ladder()?;
    let prior = config.prior_belief()?;
    let grid = EffortGrid::build(&ladder, config.t_max, config.grid_points)?;
    let n = config.num_dos;

    let planned = if config.total_rounds == 0 {
        config.budget
    } else {
        config.budget / config.total_rounds as f64
    };
    let cap = design_budget_cap(planned, n, config.num_types);
    let initial_menu = match optimize_menu(
        &ladder,
        &prior,
        &grid,
        cap,
        config.q_scale,
        config.t_max,
        config.design_accuracy,
        &config.revenue_model(),
    ) {
        Ok(m) => m,
        Err(e @ ContractError::OverBudget { .. }) => {
            return Ok(RunResult {
                mechanism,
                seed: config.seed,
                ledger: RoundLedger::new(config.budget),
                final_accuracy: 0.0,
                total_dc_utility: 0.0,
                per_do_utility: vec![0.0; n],
                menus: Vec::new(),
                renegotiations: Vec::new(),
                rounds_completed: 0,
                aborted: Some(format!("initial menu design failed: {e}")),
            });
        }
        Err(e) => return Err(e.into()),
    };
    run_with_menu(config, mechanism, initial_menu)
}

/// Run the round loop under an externally supplied opening menu instead of
/// the optimizer's. Useful for evaluating hand-built or perturbed menus
/// against the designed one on identical seeds.
pub fn run_with_menu(
    config: &SimulationConfig,
    mechanism: Mechanism,
    initial_menu: ContractMenu<f64>,
) -> Result<RunResult, SimError> {
    config.validate()?;
    let ladder = config.build_ladder()?;
    let prior = config.prior_belief()?;
    let grid = EffortGrid::build(&ladder, config.t_max, config.grid_points)?;
    let progress = config.progress_model();
    let n = config.num_dos;
    if initial_menu.items.len() != ladder.len() {
        return Err(ContractError::SizeMismatch {
            expected: ladder.len(),
            got: initial_menu.items.len(),
        }
        .into());
    }

    // hidden state: the type composition follows the true distribution as
    // closely as integer counts allow, so a population whose distribution is
    // said to equal the prior actually has it; the seed shuffles who is which,
    // which also decouples type from the block-ordered behavior assignment
    let true_dist = config.true_type_dist()?;
    let behaviors = config.behavior_mix.assign(n, config.num_types)?;
    let mut type_rng = stream_rng(config.seed, STREAM_TYPES);
    let mut true_types: Vec<usize> = largest_remainder_counts(&true_dist, n)
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    true_types.shuffle(&mut type_rng);
    let mut agents = Vec::with_capacity(n);
    for id in 0..n {
        agents.push(DOAgent::new(id, true_types[id], behaviors[id], config.num_types)?);
    }
    let mut agent_rngs: Vec<ChaCha12Rng> =
        (0..n).map(|id| stream_rng(config.seed, STREAM_AGENT_BASE + id as u64)).collect();
    let mut progress_rng = stream_rng(config.seed, STREAM_PROGRESS);

    for agent in &mut agents {
        if let Some(idx) = agent.choose(&ladder, &initial_menu)? {
            agent.contract = Some((idx, initial_menu.items[idx]));
        }
    }

    let mut beliefs = vec![prior.clone(); n];
    let mut likelihood =
        likelihood_for_menu(&ladder, &initial_menu, config.likelihood_sigma_scale)?;
    let mut menus = vec![initial_menu];
    let mut renegotiations = Vec::new();
    let mut ledger = RoundLedger::new(config.budget);
    let mut state = GlobalModelState::fresh();
    let mut per_do_utility = vec![0.0; n];
    let mut total_dc_utility = 0.0;

    for t in 1..=config.total_rounds {
        // execution
        let mut records: Vec<DeliveredEffort<f64>> = Vec::new();
        for agent in &agents {
            if let Some((_, item)) = agent.contract {
                let mut rec = agent.execute_round(t, &item, &mut agent_rngs[agent.id]);
                // an upload that cannot beat the true type's deadline never
                // arrives; with a shared compute profile this cannot trigger
                if rec.delivered > 0.0 {
                    let p = ladder.profile(agent.true_type);
                    let slack = config.t_max
                        - p.comp_seconds_per_effort() * rec.delivered
                        - p.comm_seconds().map_err(ContractError::from)?;
                    if slack <= 0.0 {
                        rec.delivered = 0.0;
                        rec.dropped = true;
                    }
                }
                records.push(rec);
            }
        }

        // settlement against what is left of the budget
        let contracts: Vec<Option<(usize, ContractItem<f64>)>> =
            agents.iter().map(|a| a.contract).collect();
        let settlement =
            settle_round(&mut ledger, &records, &contracts, &ladder, config.fulfillment_rule)?;

        // owners book their realized utility
        for pay in &settlement.payments {
            let agent = &agents[pay.do_id];
            let (_, item) = agent.contract.expect("paid owners hold a contract");
            let p = ladder.profile(agent.true_type);
            per_do_utility[pay.do_id] += p.theta * item.reward * pay.fraction;
        }
        for rec in &records {
            if !rec.dropped {
                let p = ladder.profile(agents[rec.do_id].true_type);
                per_do_utility[rec.do_id] -=
                    p.total_cost(rec.delivered).map_err(ContractError::from)?;
            }
        }

        // evidence
        for rec in &records {
            let obs = Observation {
                do_id: rec.do_id,
                round: t,
                delivered_effort: rec.delivered,
                participated: !rec.dropped,
            };
            beliefs[rec.do_id] = posterior_update(&beliefs[rec.do_id], &likelihood, &[obs])?;
        }

        // global model
        let round_effort: f64 = records.iter().map(|r| r.delivered).sum();
        let prev_state = state;
        state = advance(&state, round_effort, &progress, &mut progress_rng)?;

        // realized coordinator utility: quality terms of the owners that
        // produced something, minus the round's cash
        let mut quality = 0.0;
        for rec in &records {
            if rec.delivered > 0.0 {
                let p = ladder.profile(agents[rec.do_id].true_type);
                let slack = config.t_max
                    - p.comp_seconds_per_effort() * rec.delivered
                    - p.comm_seconds().map_err(ContractError::from)?;
                quality += config.q_scale * state.accuracy + slack.ln();
            }
        }
        let dc_utility = quality - settlement.total_cash;
        total_dc_utility += dc_utility;

        let population = TypeBelief::average(&beliefs)?;
        ledger.rounds.push(RoundRecord {
            round: t,
            payments: settlement.payments,
            budget_spent_cumulative: ledger.spent(),
            dc_utility,
            delivered: records,
            accuracy: state.accuracy,
            loss: state.loss,
            population_belief: population.probs().to_vec(),
            budget_capped: settlement.budget_capped,
        });

        // renegotiation gate
        if mechanism == Mechanism::Rctim
            && renegotiation_due(t, &ledger, &state, &prev_state, config)?
        {
            let rounds_left = config.total_rounds - t;
            if rounds_left > 0 {
                match renegotiate(
                    &beliefs,
                    &ladder,
                    &grid,
                    config,
                    ledger.remaining(),
                    rounds_left,
                    state.accuracy,
                    t,
                )? {
                    Some((menu, offers)) => {
                        let mut accepted = 0;
                        let mut rejected = 0;
                        for offer in offers {
                            let agent = &mut agents[offer.do_id];
                            let item = menu.items[offer.item_index];
                            let take = match agent.contract {
                                Some((_, old)) => {
                                    agent.accept_renegotiation(&ladder, &old, &item)?
                                }
                                None => {
                                    // outside option is zero utility
                                    let u = do_utility(ladder.profile(agent.true_type), &item)?;
                                    u >= -1e-9 * (1.0 + u.abs())
                                }
                            };
                            if take {
                                agent.contract = Some((offer.item_index, item));
                                accepted += 1;
                            } else {
                                rejected += 1;
                            }
                        }
                        likelihood =
                            likelihood_for_menu(&ladder, &menu, config.likelihood_sigma_scale)?;
                        menus.push(menu);
                        renegotiations.push(RenegotiationEvent {
                            round: t,
                            accepted,
                            rejected,
                            infeasible: false,
                        });
                    }
                    None => {
                        renegotiations.push(RenegotiationEvent {
                            round: t,
                            accepted: 0,
                            rejected: 0,
                            infeasible: true,
                        });
                    }
                }
            }
        }

        if let Some(target) = config.target_accuracy {
            if state.accuracy >= target {
                break;
            }
        }
    }

    let rounds_completed = ledger.rounds.len();
    Ok(RunResult {
        mechanism,
        seed: config.seed,
        final_accuracy: state.accuracy,
        total_dc_utility,
        per_do_utility,
        menus,
        renegotiations,
        rounds_completed,
        aborted: None,
        ledger,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub pairs: usize,
    pub mean_utility_rctim: f64,
    pub mean_utility_static: f64,
    pub mean_difference: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub win_rate: f64,
    /// One-sided exact sign test: probability of at least this many wins
    /// among the non-ties under a fair coin.
    pub sign_test_p: f64,
}

/// Exact binomial tail `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
fn binomial_tail(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut coeff = 0.5f64.powi(n as i32); // C(n, 0) / 2^n
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= wins {
            tail += coeff;
        }
        coeff *= (n - i) as f64 / (i + 1) as f64;
    }
    tail.min(1.0)
}

/// Paired summary of (renegotiating, static) runs on shared seeds.
pub fn compare(pairs: &[(RunResult, RunResult)]) -> Result<CompareSummary, SimError> {
    if pairs.is_empty() {
        return Err(SimError::EmptyComparison);
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.seed != b.seed {
            return Err(SimError::PairSeedMismatch { index: i, left: a.seed, right: b.seed });
        }
    }
    let n = pairs.len() as f64;
    let mean_rctim = pairs.iter().map(|(a, _)| a.total_dc_utility).sum::<f64>() / n;
    let mean_static = pairs.iter().map(|(_, b)| b.total_dc_utility).sum::<f64>() / n;
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (a, b) in pairs {
        let d = a.total_dc_utility - b.total_dc_utility;
        let tol = 1e-9 * (1.0 + a.total_dc_utility.abs() + b.total_dc_utility.abs());
        if d > tol {
            wins += 1;
        } else if d < -tol {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    Ok(CompareSummary {
        pairs: pairs.len(),
        mean_utility_rctim: mean_rctim,
        mean_utility_static: mean_static,
        mean_difference: mean_rctim - mean_static,
        wins,
        losses,
        ties,
        win_rate: wins as f64 / pairs.len() as f64,
        sign_test_p: binomial_tail(wins, wins + losses),
    })
}
