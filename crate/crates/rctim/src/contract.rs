//! Contract menus over a ladder of data-owner types.
//!
//! A menu offers one (reward, effort) item per type. Rewards follow a
//! closed-form schedule that binds the lowest type to zero utility and makes
//! every type indifferent between its own item and the one below, which is
//! what makes the menu self-selecting. The optimizer picks efforts on a grid,
//! restores monotonicity by pooling adjacent types, and shrinks efforts by a
//! common factor when the implied payments exceed the budget.

use serde::Serialize;
use thiserror::Error;

use crate::belief::TypeBelief;
use crate::cost::{self, CommProfile, ComputeProfile, CostError, CostParams};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ContractError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("type ladder is empty")]
    EmptyLadder,
    #[error("theta must increase strictly along the ladder (violated at position {index})")]
    ThetaNotAscending { index: usize },
    #[error("data_size of type {index} must be strictly positive")]
    NonPositiveDataSize { index: usize },
    #[error("expected {expected} entries, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("effort {effort} of type {index} leaves no time slack before the deadline")]
    InfeasibleEffort { index: usize, effort: f64 },
    #[error("type {index} cannot finish its upload before the deadline")]
    NoFeasibleWindow { index: usize },
    #[error("efforts must be non-decreasing (violated at position {index})")]
    NonMonotoneEfforts { index: usize },
    #[error("effort grid for type {index} is empty or not strictly ascending")]
    BadGrid { index: usize },
    #[error("menu item {index} has a negative or non-finite field")]
    BadItem { index: usize },
    #[error("no menu fits budget {budget}: the cheapest feasible menu pays {cheapest}")]
    OverBudget { budget: f64, cheapest: f64 },
    #[error("revenue model fields must be finite and non-negative")]
    BadRevenueModel,
}

/// One rung of the type ladder: valuation, data size, and cost parameters.
/// The type's index is its position in the ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DOTypeProfile<S> {
    /// Valuation coefficient; strictly increasing along the ladder.
    pub theta: S,
    /// Local samples held by owners of this type.
    pub data_size: S,
    pub compute: ComputeProfile<S>,
    pub comm: CommProfile<S>,
    pub cost_params: CostParams<S>,
}

impl<S: Real> DOTypeProfile<S> {
    pub fn validate(&self) -> Result<(), ContractError> {
        self.comm.validate()?;
        self.compute.validate()?;
        self.cost_params.validate()?;
        if !(self.theta.is_finite() && self.theta > S::zero()) {
            return Err(ContractError::ThetaNotAscending { index: 0 });
        }
        Ok(())
    }

    pub fn total_cost(&self, effort: S) -> Result<S, CostError> {
        cost::total_cost(&self.cost_params, &self.comm, &self.compute, effort)
    }

    /// Marginal currency cost per effort unit.
    pub fn effort_cost_rate(&self) -> S {
        cost::effort_cost_rate(&self.cost_params, &self.compute)
    }

    /// Effort-independent currency cost per round.
    pub fn fixed_round_cost(&self) -> Result<S, CostError> {
        cost::fixed_round_cost(&self.cost_params, &self.comm)
    }

    /// Training seconds per effort unit.
    pub fn comp_seconds_per_effort(&self) -> S {
        self.compute.cycles_per_effort / self.compute.cpu_frequency
    }

    /// Upload seconds per round.
    pub fn comm_seconds(&self) -> Result<S, CostError> {
        cost::comm_time(&self.comm)
    }

    /// Largest effort that still finishes before `t_max`.
    pub fn feasible_effort_bound(&self, t_max: S) -> Result<S, ContractError> {
        let window = t_max - self.comm_seconds()?;
        if window <= S::zero() {
            return Err(ContractError::NoFeasibleWindow { index: 0 });
        }
        Ok(window / self.comp_seconds_per_effort())
    }
}

/// Data-owner types sorted by strictly ascending valuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeLadder<S> {
    types: Vec<DOTypeProfile<S>>,
}

impl<S: Real> TypeLadder<S> {
    pub fn new(types: Vec<DOTypeProfile<S>>) -> Result<Self, ContractError> {
        if types.is_empty() {
            return Err(ContractError::EmptyLadder);
        }
        for (k, t) in types.iter().enumerate() {
            t.validate().map_err(|e| match e {
                ContractError::ThetaNotAscending { .. } => {
                    ContractError::ThetaNotAscending { index: k }
                }
                other => other,
            })?;
            if !(t.data_size.is_finite() && t.data_size > S::zero()) {
                return Err(ContractError::NonPositiveDataSize { index: k });
            }
            if k > 0 && types[k - 1].theta >= t.theta {
                return Err(ContractError::ThetaNotAscending { index: k });
            }
        }
        Ok(TypeLadder { types })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn profile(&self, k: usize) -> &DOTypeProfile<S> {
        &self.types[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DOTypeProfile<S>> {
        self.types.iter()
    }
}

/// One menu entry: the reward promised for delivering the contracted effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractItem<S> {
    pub reward: S,
    pub effort: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MenuProvenance {
    Initial,
    Renegotiated { round: usize },
}

/// A full menu: item `k` is intended for ladder position `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractMenu<S> {
    pub items: Vec<ContractItem<S>>,
    /// Budget the menu was designed against.
    pub budget_cap: S,
    pub provenance: MenuProvenance,
}

impl<S: Real> ContractMenu<S> {
    pub fn new(
        items: Vec<ContractItem<S>>,
        budget_cap: S,
        provenance: MenuProvenance,
    ) -> Result<Self, ContractError> {
        for (k, it) in items.iter().enumerate() {
            let ok = it.reward.is_finite()
                && it.effort.is_finite()
                && it.reward >= S::zero()
                && it.effort >= S::zero();
            if !ok {
                return Err(ContractError::BadItem { index: k });
            }
        }
        Ok(ContractMenu { items, budget_cap, provenance })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn efforts(&self) -> Vec<S> {
        self.items.iter().map(|it| it.effort).collect()
    }

    pub fn rewards(&self) -> Vec<S> {
        self.items.iter().map(|it| it.reward).collect()
    }
}

fn relative_tol<S: Real>(scale: S) -> S {
    S::of(1e-9).max(S::epsilon() * S::of(32.0)) * (S::one() + scale.abs())
}

/// Utility an owner of `profile` gets from holding `item`:
/// valuation times reward minus the round cost of the contracted effort.
pub fn do_utility<S: Real>(
    profile: &DOTypeProfile<S>,
    item: &ContractItem<S>,
) -> Result<S, ContractError> {
    let c = profile.total_cost(item.effort)?;
    Ok(profile.theta * item.reward - c)
}

/// Coordinator's expected utility of a menu under `belief`:
/// per type, revenue from the accuracy estimate plus the log of the time
/// slack left before `t_max`, minus the payment `theta * reward`.
pub fn dc_expected_utility<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
    accuracy: S,
    q_scale: S,
    t_max: S,
) -> Result<S, ContractError> {
    let k = types.len();
    if menu.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: menu.len() });
    }
    if belief.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: belief.len() });
    }
    let mut total = S::zero();
    for (i, item) in menu.items.iter().enumerate() {
        let p = types.profile(i);
        let slack = t_max - p.comp_seconds_per_effort() * item.effort - p.comm_seconds()?;
        if slack <= S::zero() {
            return Err(ContractError::InfeasibleEffort {
                index: i,
                effort: item.effort.to_f64_lossy(),
            });
        }
        let term = q_scale * accuracy + slack.ln() - p.theta * item.reward;
        total += belief.probs()[i] * term;
    }
    Ok(total)
}

/// Menu payment the budget rule compares against: sum of `theta_k * R_k`.
pub fn total_payment<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
) -> Result<S, ContractError> {
    if menu.len() != types.len() {
        return Err(ContractError::SizeMismatch { expected: types.len(), got: menu.len() });
    }
    Ok(menu
        .items
        .iter()
        .zip(types.iter())
        .map(|(it, p)| p.theta * it.reward)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcViolation<S> {
    /// Type doing the choosing.
    pub chooser: usize,
    /// Item it would rather take.
    pub item: usize,
    /// Own-item utility minus foreign-item utility; negative means violated.
    pub slack: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcReport<S> {
    pub violations: Vec<IcViolation<S>>,
}

impl<S> IcReport<S> {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Incentive compatibility: every type weakly prefers its own item over every
/// other, i.e. `theta_k R_k - C_k(e_k) >= theta_k R_j - C_k(e_j)` for all
/// ordered pairs. Binding adjacent pairs count as satisfied.
pub fn check_ic<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
) -> Result<IcReport<S>, ContractError> {
    let k = types.len();
    if menu.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: menu.len() });
    }
    let mut violations = Vec::new();
    for chooser in 0..k {
        let p = types.profile(chooser);
        let own = do_utility(p, &menu.items[chooser])?;
        for item in 0..k {
            if item == chooser {
                continue;
            }
            let other = do_utility(p, &menu.items[item])?;
            let slack = own - other;
            if slack < -relative_tol(own.abs() + other.abs()) {
                violations.push(IcViolation { chooser, item, slack });
            }
        }
    }
    Ok(IcReport { violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrReport<S> {
    /// Types whose own item leaves them below zero utility.
    pub violations: Vec<(usize, S)>,
    /// Whether the lowest type sits exactly at zero utility.
    pub lowest_type_binds: bool,
}

impl<S> IrReport<S> {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Individual rationality: every type gets non-negative utility from its own
/// item. Also reports whether the constraint binds at the lowest type.
pub fn check_ir<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
) -> Result<IrReport<S>, ContractError> {
    let k = types.len();
    if menu.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: menu.len() });
    }
    let mut violations = Vec::new();
    let mut lowest_type_binds = false;
    for i in 0..k {
        let p = types.profile(i);
        let u = do_utility(p, &menu.items[i])?;
        let tol = relative_tol(p.theta * menu.items[i].reward);
        if u < -tol {
            violations.push((i, u));
        }
        if i == 0 {
            lowest_type_binds = u.abs() <= tol;
        }
    }
    Ok(IrReport { violations, lowest_type_binds })
}

/// Both efforts and rewards must be non-decreasing along the ladder.
pub fn check_monotonicity<S: Real>(menu: &ContractMenu<S>) -> bool {
    menu.items.windows(2).all(|w| w[0].effort <= w[1].effort && w[0].reward <= w[1].reward)
}

/// Budget feasibility: menu payment within the menu's own budget cap.
pub fn check_budget<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
) -> Result<bool, ContractError> {
    Ok(total_payment(menu, types)? <= menu.budget_cap)
}

/// Closed-form reward schedule for a non-decreasing effort assignment:
/// the lowest type is paid exactly its cost (zero utility), and each step up
/// adds that type's marginal cost of the extra effort, scaled by its own
/// valuation. This binds every adjacent downward incentive constraint.
pub fn rewards_from_efforts<S: Real>(
    efforts: &[S],
    types: &TypeLadder<S>,
) -> Result<Vec<S>, ContractError> {
    let k = types.len();
    if efforts.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: efforts.len() });
    }
    for (i, &e) in efforts.iter().enumerate() {
        if !(e.is_finite() && e >= S::zero()) {
            return Err(ContractError::InfeasibleEffort { index: i, effort: e.to_f64_lossy() });
        }
        if i > 0 && e < efforts[i - 1] {
            return Err(ContractError::NonMonotoneEfforts { index: i });
        }
    }
    let first = types.profile(0);
    let mut acc = first.total_cost(efforts[0])? / first.theta;
    let mut rewards = Vec::with_capacity(k);
    rewards.push(acc);
    for j in 1..k {
        let p = types.profile(j);
        acc += p.effort_cost_rate() / p.theta * (efforts[j] - efforts[j - 1]);
        rewards.push(acc);
    }
    Ok(rewards)
}

/// Expected menu payment under `belief`: direct summation of
/// `rho_k * theta_k * R_k` over the closed-form rewards.
pub fn expected_total_reward<S: Real>(
    efforts: &[S],
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
) -> Result<S, ContractError> {
    if belief.len() != types.len() {
        return Err(ContractError::SizeMismatch { expected: types.len(), got: belief.len() });
    }
    let rewards = rewards_from_efforts(efforts, types)?;
    Ok(rewards
        .iter()
        .zip(types.iter())
        .zip(belief.probs())
        .map(|((&r, p), &rho)| rho * p.theta * r)
        .sum())
}

/// Alternative closed-form aggregation of the expected menu payment, kept as
/// a diagnostic. It drops the probability weights on the per-type effort
/// terms, so it generally disagrees with `expected_total_reward`; the direct
/// summation is the authoritative value.
pub fn expected_total_reward_diagnostic<S: Real>(
    efforts: &[S],
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
) -> Result<S, ContractError> {
    let k = types.len();
    if belief.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: belief.len() });
    }
    if efforts.len() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: efforts.len() });
    }
    let rho = belief.probs();
    let mut total = S::zero();
    for (i, &effort) in efforts.iter().enumerate() {
        let p = types.profile(i);
        let base = p.effort_cost_rate() * effort;
        let mut x = base;
        if i + 1 < k {
            let tail: S = (i + 1..k).map(|j| types.profile(j).theta * rho[j]).sum();
            x += base * (S::one() / p.theta - S::one() / types.profile(i + 1).theta) * tail;
        }
        total += x;
    }
    let first = types.profile(0);
    let weight: S = types.iter().zip(rho).map(|(p, &r)| p.theta * r).sum();
    Ok(total + first.fixed_round_cost()? / first.theta * weight)
}

/// Item an owner of `profile` picks from the menu: the utility argmax, ties
/// broken toward the lower effort and then the lower index. `None` when every
/// item sits strictly below zero utility.
pub fn select_contract<S: Real>(
    profile: &DOTypeProfile<S>,
    menu: &ContractMenu<S>,
) -> Result<Option<usize>, ContractError> {
    let mut best: Option<(usize, S, S)> = None; // (index, utility, effort)
    for (i, item) in menu.items.iter().enumerate() {
        let u = do_utility(profile, item)?;
        match best {
            None => best = Some((i, u, item.effort)),
            Some((_, bu, be)) => {
                let tol = relative_tol(u.abs() + bu.abs());
                if u > bu + tol || ((u - bu).abs() <= tol && item.effort < be) {
                    best = Some((i, u, item.effort));
                }
            }
        }
    }
    Ok(best.and_then(|(i, u, _)| {
        if u < -relative_tol(u) {
            None
        } else {
            Some(i)
        }
    }))
}

/// Local epochs needed to produce `effort` sample-epochs on `data_size`
/// samples.
pub fn epochs_from_effort<S: Real>(effort: S, data_size: S) -> Result<S, ContractError> {
    if !(data_size.is_finite() && data_size > S::zero()) {
        return Err(ContractError::NonPositiveDataSize { index: 0 });
    }
    if !(effort.is_finite() && effort >= S::zero()) {
        return Err(ContractError::Cost(CostError::BadEffort));
    }
    Ok(effort / data_size)
}

/// Candidate efforts per type. Every point leaves positive time slack before
/// the deadline for its own type.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortGrid<S> {
    points: Vec<Vec<S>>,
}

impl<S: Real> EffortGrid<S> {
    /// Evenly spaced points per type over `(0, 0.999 * feasible bound]`.
    pub fn build(
        types: &TypeLadder<S>,
        t_max: S,
        points_per_type: usize,
    ) -> Result<Self, ContractError> {
        if points_per_type == 0 {
            return Err(ContractError::BadGrid { index: 0 });
        }
        let mut points = Vec::with_capacity(types.len());
        for (k, p) in types.iter().enumerate() {
            let bound = p
                .feasible_effort_bound(t_max)
                .map_err(|_| ContractError::NoFeasibleWindow { index: k })?;
            let top = S::of(0.999) * bound;
            let n = S::of(points_per_type as f64);
            let pts: Vec<S> =
                (1..=points_per_type).map(|i| top * S::of(i as f64) / n).collect();
            points.push(pts);
        }
        Ok(EffortGrid { points })
    }

    /// Wrap explicit per-type points; each list must be strictly ascending,
    /// positive, and feasible for its type.
    pub fn from_points(
        points: Vec<Vec<S>>,
        types: &TypeLadder<S>,
        t_max: S,
    ) -> Result<Self, ContractError> {
        if points.len() != types.len() {
            return Err(ContractError::SizeMismatch { expected: types.len(), got: points.len() });
        }
        for (k, pts) in points.iter().enumerate() {
            if pts.is_empty() {
                return Err(ContractError::BadGrid { index: k });
            }
            for (i, &e) in pts.iter().enumerate() {
                if !(e.is_finite() && e > S::zero()) || (i > 0 && e <= pts[i - 1]) {
                    return Err(ContractError::BadGrid { index: k });
                }
            }
            let p = types.profile(k);
            let top = *pts.last().expect("non-empty");
            let slack = t_max - p.comp_seconds_per_effort() * top - p.comm_seconds()?;
            if slack <= S::zero() {
                return Err(ContractError::InfeasibleEffort {
                    index: k,
                    effort: top.to_f64_lossy(),
                });
            }
        }
        Ok(EffortGrid { points })
    }

    pub fn num_types(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self, k: usize) -> &[S] {
        &self.points[k]
    }
}

/// Saturating accuracy curve the optimizer prices effort with: a type putting
/// in effort `e` is credited accuracy `xi_max * (1 - exp(-effort_rate * e))`.
/// With `effort_rate = 0` effort earns nothing and the optimizer settles on
/// the cheapest feasible efforts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevenueModel<S> {
    pub xi_max: S,
    pub effort_rate: S,
}

impl<S: Real> RevenueModel<S> {
    pub fn flat() -> Self {
        RevenueModel { xi_max: S::one(), effort_rate: S::zero() }
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        let ok = self.xi_max.is_finite()
            && self.xi_max >= S::zero()
            && self.effort_rate.is_finite()
            && self.effort_rate >= S::zero();
        if ok {
            Ok(())
        } else {
            Err(ContractError::BadRevenueModel)
        }
    }

    pub fn gain(&self, effort: S) -> S {
        self.xi_max * (S::one() - (-self.effort_rate * effort).exp())
    }
}

/// The objective the optimizer maximizes: `dc_expected_utility` plus the
/// belief-weighted effort revenue of the surrogate curve.
pub fn design_utility<S: Real>(
    menu: &ContractMenu<S>,
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
    accuracy: S,
    q_scale: S,
    t_max: S,
    revenue: &RevenueModel<S>,
) -> Result<S, ContractError> {
    revenue.validate()?;
    let base = dc_expected_utility(menu, types, belief, accuracy, q_scale, t_max)?;
    let extra: S = menu
        .items
        .iter()
        .zip(belief.probs())
        .map(|(it, &rho)| rho * q_scale * revenue.gain(it.effort))
        .sum();
    Ok(base + extra)
}

/// Marginal payment weights: the expected payment decomposes as
/// `sum_k w_k * e_k + fixed`, with `w_k = (c_k / theta_k) * S_k -
/// (c_{k+1} / theta_{k+1}) * S_{k+1}` and `S_k` the tail sum of
/// `rho_i * theta_i`.
fn payment_weights<S: Real>(types: &TypeLadder<S>, belief: &TypeBelief<S>) -> Vec<S> {
    let k = types.len();
    let mut tail = vec![S::zero(); k + 1];
    for i in (0..k).rev() {
        tail[i] = tail[i + 1] + belief.probs()[i] * types.profile(i).theta;
    }
    (0..k)
        .map(|i| {
            let p = types.profile(i);
            let own = p.effort_cost_rate() / p.theta * tail[i];
            if i + 1 < k {
                let q = types.profile(i + 1);
                own - q.effort_cost_rate() / q.theta * tail[i + 1]
            } else {
                own
            }
        })
        .collect()
}

struct DesignProblem<'a, S> {
    types: &'a TypeLadder<S>,
    belief: &'a TypeBelief<S>,
    weights: Vec<S>,
    comp_rate: Vec<S>,
    comm_secs: Vec<S>,
    q_scale: S,
    t_max: S,
    revenue: RevenueModel<S>,
}

impl<'a, S: Real> DesignProblem<'a, S> {
    fn new(
        types: &'a TypeLadder<S>,
        belief: &'a TypeBelief<S>,
        q_scale: S,
        t_max: S,
        revenue: &RevenueModel<S>,
    ) -> Result<Self, ContractError> {
        revenue.validate()?;
        if belief.len() != types.len() {
            return Err(ContractError::SizeMismatch { expected: types.len(), got: belief.len() });
        }
        let comp_rate = types.iter().map(|p| p.comp_seconds_per_effort()).collect();
        let comm_secs = types
            .iter()
            .map(|p| p.comm_seconds().map_err(ContractError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DesignProblem {
            types,
            belief,
            weights: payment_weights(types, belief),
            comp_rate,
            comm_secs,
            q_scale,
            t_max,
            revenue: *revenue,
        })
    }

    /// Per-type contribution of `e` to the design objective, up to constants.
    fn objective(&self, k: usize, e: S) -> S {
        let slack = self.t_max - self.comp_rate[k] * e - self.comm_secs[k];
        if slack <= S::zero() {
            return S::neg_infinity();
        }
        let rho = self.belief.probs()[k];
        rho * (self.q_scale * self.revenue.gain(e) + slack.ln()) - self.weights[k] * e
    }
}

/// First maximizer of `f` over ascending `candidates` (lowest effort wins
/// ties).
fn grid_argmax<S: Real>(candidates: &[S], f: impl Fn(S) -> S) -> S {
    let mut best = candidates[0];
    let mut best_val = f(best);
    for &e in &candidates[1..] {
        let v = f(e);
        if v > best_val {
            best = e;
            best_val = v;
        }
    }
    best
}

/// Monotone effort assignment by pooling adjacent violators: start from the
/// per-type argmax sequence and merge neighbouring blocks whose efforts
/// invert, re-maximizing the pooled objective over the members' candidate
/// points capped at the smallest member bound.
fn monotone_efforts<S: Real>(problem: &DesignProblem<S>, grid: &EffortGrid<S>) -> Vec<S> {
    struct Block<S> {
        lo: usize,
        hi: usize,
        effort: S,
    }
    let k = problem.types.len();
    let mut blocks: Vec<Block<S>> = Vec::with_capacity(k);
    for i in 0..k {
        let effort = grid_argmax(grid.points(i), |e| problem.objective(i, e));
        blocks.push(Block { lo: i, hi: i, effort });
        while blocks.len() >= 2 {
            let prev = &blocks[blocks.len() - 2];
            let last = &blocks[blocks.len() - 1];
            if prev.effort <= last.effort {
                break;
            }
            let lo = prev.lo;
            let hi = last.hi;
            let cap = (lo..=hi)
                .map(|m| *grid.points(m).last().expect("grid non-empty"))
                .fold(S::infinity(), S::min);
            let mut candidates: Vec<S> = (lo..=hi)
                .flat_map(|m| grid.points(m).iter().copied())
                .filter(|&e| e <= cap)
                .collect();
            candidates.sort_by(|a, b| a.partial_cmp(b).expect("grid points are finite"));
            candidates.dedup();
            let effort = grid_argmax(&candidates, |e| {
                (lo..=hi).map(|m| problem.objective(m, e)).sum()
            });
            blocks.pop();
            blocks.pop();
            blocks.push(Block { lo, hi, effort });
        }
    }
    let mut efforts = Vec::with_capacity(k);
    for b in &blocks {
        for _ in b.lo..=b.hi {
            efforts.push(b.effort);
        }
    }
    efforts
}

/// Design the menu: per-type grid argmax of the design objective, monotone
/// pooling, closed-form rewards (zero utility at the lowest type), and, if
/// the implied payment overruns the budget, a common effort scale-down found
/// by bisection with rewards re-derived at every step. Self-selection and
/// participation follow from the reward schedule and can be re-checked with
/// `check_ic` / `check_ir`.
#[allow(clippy::too_many_arguments)]
pub fn optimize_menu<S: Real>(
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
    grid: &EffortGrid<S>,
    budget: S,
    q_scale: S,
    t_max: S,
    accuracy: S,
    revenue: &RevenueModel<S>,
) -> Result<ContractMenu<S>, ContractError> {
    let k = types.len();
    if grid.num_types() != k {
        return Err(ContractError::SizeMismatch { expected: k, got: grid.num_types() });
    }
    let problem = DesignProblem::new(types, belief, q_scale, t_max, revenue)?;
    let mut efforts = monotone_efforts(&problem, grid);

    let payment = |efforts: &[S]| -> Result<S, ContractError> {
        let rewards = rewards_from_efforts(efforts, types)?;
        Ok(rewards
            .iter()
            .zip(types.iter())
            .map(|(&r, p)| p.theta * r)
            .sum())
    };

    if payment(&efforts)? > budget {
        let floor = payment(&vec![S::zero(); k])?;
        if floor > budget {
            return Err(ContractError::OverBudget {
                budget: budget.to_f64_lossy(),
                cheapest: floor.to_f64_lossy(),
            });
        }
        let scaled = |s: S| -> Vec<S> { efforts.iter().map(|&e| e * s).collect() };
        let mut lo = S::zero();
        let mut hi = S::one();
        for _ in 0..100 {
            let mid = (lo + hi) * S::of(0.5);
            if payment(&scaled(mid))? <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        efforts = scaled(lo);
        debug_assert!(payment(&efforts)? <= budget);
    }

    let rewards = rewards_from_efforts(&efforts, types)?;
    let items = rewards
        .into_iter()
        .zip(efforts)
        .map(|(reward, effort)| ContractItem { reward, effort })
        .collect();
    let menu = ContractMenu::new(items, budget, MenuProvenance::Initial)?;
    debug_assert!(check_monotonicity(&menu));
    let _ = accuracy; // level shift only; the argmax never depends on it
    Ok(menu)
}

/// Values of the per-type design objective along that type's grid. Diagnostic
/// surface for inspecting curvature.
pub fn per_type_objective_curve<S: Real>(
    types: &TypeLadder<S>,
    belief: &TypeBelief<S>,
    grid: &EffortGrid<S>,
    q_scale: S,
    t_max: S,
    revenue: &RevenueModel<S>,
    k: usize,
) -> Result<Vec<S>, ContractError> {
    let problem = DesignProblem::new(types, belief, q_scale, t_max, revenue)?;
    Ok(grid.points(k).iter().map(|&e| problem.objective(k, e)).collect())
}
