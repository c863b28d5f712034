//! Randomized properties of the screening machinery: whatever the instance,
//! an optimized menu must be incentive compatible, individually rational,
//! monotone, and within budget; the closed-form rewards must bind adjacent
//! constraints; belief updates must stay normalized. Instances draw valuation
//! ladders with non-increasing cost-to-valuation ratios, the ordering the
//! screening construction relies on.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use rctim::agent::{Behavior, DOAgent};
use rctim::belief::{posterior_update, LikelihoodModel, Observation, TypeBelief};
use rctim::contract::{
    check_budget, check_ic, check_ir, check_monotonicity, do_utility, optimize_menu,
    rewards_from_efforts, select_contract, total_payment, ContractItem, ContractMenu,
    DOTypeProfile, EffortGrid, MenuProvenance, RevenueModel, TypeLadder,
};
use rctim::cost::{CommProfile, ComputeProfile, CostMode, CostParams};

/// Direct-mode profile: marginal cost `rate` per effort unit, `fixed` per
/// round, shared timing hardware (bound ~1.35e5 efforts at t_max = 1.5).
fn profile(theta: f64, rate: f64, fixed: f64) -> DOTypeProfile<f64> {
    DOTypeProfile {
        theta,
        data_size: 25.0,
        compute: ComputeProfile {
            capacitance: 1e-28,
            voltage: 1.0,
            cpu_frequency: 1e9,
            cycles_per_effort: 1e4,
        },
        comm: CommProfile {
            transmission_power: 0.1,
            bandwidth: 1e6,
            channel_gain: 1.0,
            noise_power: 1e-3,
            model_size: 1e6,
        },
        cost_params: CostParams {
            gamma: 1.0,
            mode: CostMode::Direct,
            comp_energy_per_effort: rate,
            comm_energy_per_round: fixed,
        },
    }
}

const T_MAX: f64 = 1.5;

/// Ladder with strictly ascending thetas and non-increasing cost-to-valuation
/// ratios (single crossing), the ordering the screening construction assumes.
fn ladder_strategy() -> impl Strategy<Value = TypeLadder<f64>> {
    (2usize..=6)
        .prop_flat_map(|k| {
            (
                proptest::collection::vec(0.05f64..2.0, k),
                proptest::collection::vec(0.2f64..1.0, k),
                1e-4f64..1e-2,
                0.0f64..1e-3,
            )
        })
        .prop_map(|(gaps, decays, ratio0, fixed)| {
            let mut theta = 0.0;
            let mut ratio = ratio0;
            let mut types = Vec::new();
            for (gap, decay) in gaps.iter().zip(&decays) {
                theta += gap;
                ratio *= decay;
                types.push(profile(theta, ratio * theta, fixed));
            }
            TypeLadder::new(types).expect("generator keeps thetas ascending")
        })
}

/// Ladder plus a strictly increasing effort assignment for it.
fn ladder_with_efforts() -> impl Strategy<Value = (TypeLadder<f64>, Vec<f64>)> {
    ladder_strategy().prop_flat_map(|ladder| {
        let k = ladder.len();
        (Just(ladder), proptest::collection::vec(0.1f64..300.0, k)).prop_map(
            |(ladder, gaps)| {
                let mut e = 0.0;
                let efforts = gaps
                    .into_iter()
                    .map(|g| {
                        e += g;
                        e
                    })
                    .collect();
                (ladder, efforts)
            },
        )
    })
}

fn menu_from_efforts(ladder: &TypeLadder<f64>, efforts: &[f64], cap: f64) -> ContractMenu<f64> {
    let rewards = rewards_from_efforts(efforts, ladder).unwrap();
    let items = rewards
        .into_iter()
        .zip(efforts)
        .map(|(reward, &effort)| ContractItem { reward, effort })
        .collect();
    ContractMenu::new(items, cap, MenuProvenance::Initial).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// The optimizer's output survives all four screening checks and pins
    /// the lowest type to zero utility, whether or not the budget binds.
    #[test]
    fn optimized_menus_pass_every_screening_check(
        ladder in ladder_strategy(),
        points in 8usize..40,
        budget_headroom in 0.01f64..30.0,
        effort_rate in 0.0f64..1e-3,
    ) {
        let grid = EffortGrid::build(&ladder, T_MAX, points).unwrap();
        let belief = TypeBelief::uniform(ladder.len());
        let revenue = RevenueModel { xi_max: 0.9, effort_rate };
        let zero_floor = {
            let rewards = rewards_from_efforts(&vec![0.0; ladder.len()], &ladder).unwrap();
            rewards.iter().zip(ladder.iter()).map(|(&r, p)| p.theta * r).sum::<f64>()
        };
        let budget = zero_floor + budget_headroom;
        let menu = optimize_menu(
            &ladder, &belief, &grid, budget, 2.0, T_MAX, 0.5, &revenue,
        ).unwrap();

        let ic = check_ic(&menu, &ladder).unwrap();
        prop_assert!(ic.ok(), "IC violations: {:?}", ic.violations);
        let ir = check_ir(&menu, &ladder).unwrap();
        prop_assert!(ir.ok(), "IR violations: {:?}", ir.violations);
        prop_assert!(ir.lowest_type_binds, "lowest type keeps surplus");
        prop_assert!(check_monotonicity(&menu));
        prop_assert!(check_budget(&menu, &ladder).unwrap());
    }

    /// Closed-form rewards make each type exactly indifferent to the item one
    /// slot down: the adjacent downward constraints bind by construction.
    #[test]
    fn adjacent_constraints_bind_exactly(
        (ladder, efforts) in ladder_with_efforts(),
    ) {
        let menu = menu_from_efforts(&ladder, &efforts, f64::INFINITY);
        for k in 1..ladder.len() {
            let p = ladder.profile(k);
            let own = do_utility(p, &menu.items[k]).unwrap();
            let down = do_utility(p, &menu.items[k - 1]).unwrap();
            let tol = 1e-9 * (1.0 + own.abs() + down.abs());
            prop_assert!(
                (own - down).abs() <= tol,
                "type {k}: own {own} vs down {down}"
            );
        }
    }

    /// The expected payment of a menu is the plain belief-weighted sum of
    /// `theta_k * R_k`, recomputed here from scratch.
    #[test]
    fn expected_reward_matches_direct_summation(
        (ladder, efforts) in ladder_with_efforts(),
        raw_probs in proptest::collection::vec(0.01f64..1.0, 6),
    ) {
        let k = ladder.len();
        let total: f64 = raw_probs[..k].iter().sum();
        let probs: Vec<f64> = raw_probs[..k].iter().map(|p| p / total).collect();
        let belief = TypeBelief::from_probs(probs.clone()).unwrap();
        let direct = rctim::contract::expected_total_reward(&efforts, &ladder, &belief).unwrap();
        let rewards = rewards_from_efforts(&efforts, &ladder).unwrap();
        let by_hand: f64 = (0..k)
            .map(|i| probs[i] * ladder.profile(i).theta * rewards[i])
            .sum();
        prop_assert!((direct - by_hand).abs() <= 1e-12 * (1.0 + by_hand.abs()));
    }

    /// Posteriors stay normalized and never resurrect a zero-probability type.
    #[test]
    fn posterior_updates_stay_normalized(
        raw_probs in proptest::collection::vec(0.0f64..1.0, 3..8),
        center_gaps in proptest::collection::vec(1.0f64..50.0, 8),
        observations in proptest::collection::vec((0.0f64..400.0, any::<bool>()), 1..12),
        sigma in 0.5f64..40.0,
    ) {
        let k = raw_probs.len();
        let total: f64 = raw_probs.iter().sum();
        prop_assume!(total > 1e-6);
        let belief = TypeBelief::from_probs(
            raw_probs.iter().map(|p| p / total).collect(),
        ).unwrap();
        let mut centers = Vec::with_capacity(k);
        let mut c = 0.0;
        for g in &center_gaps[..k] {
            c += g;
            centers.push(c);
        }
        let model = LikelihoodModel::new(centers, sigma).unwrap();
        let batch: Vec<Observation<f64>> = observations
            .iter()
            .enumerate()
            .map(|(round, &(delivered_effort, participated))| Observation {
                do_id: 0,
                round,
                delivered_effort: if participated { delivered_effort } else { 0.0 },
                participated,
            })
            .collect();
        let post = posterior_update(&belief, &model, &batch).unwrap();
        let sum: f64 = post.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for (pre, post) in belief.probs().iter().zip(post.probs()) {
            prop_assert!(*pre > 0.0 || *post == 0.0, "zero prior resurrected");
        }
    }

    /// Whatever its behavior, an agent never delivers more than contracted,
    /// and a dropped round delivers exactly nothing.
    #[test]
    fn delivery_never_exceeds_the_contract(
        behavior_pick in 0usize..4,
        fraction in 0.0f64..1.0,
        probability in 0.0f64..1.0,
        effort in 0.1f64..1e4,
        reward in 0.0f64..10.0,
        seed in any::<u64>(),
        round in 1usize..100,
    ) {
        let behavior = match behavior_pick {
            0 => Behavior::Truthful,
            1 => Behavior::Misreport { target: 0 },
            2 => Behavior::PartialFulfil { fraction },
            _ => Behavior::Dropout { probability },
        };
        let agent = DOAgent::new(7, 1, behavior, 2).unwrap();
        let item = ContractItem { reward, effort };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rec = agent.execute_round(round, &item, &mut rng);
        prop_assert!(rec.delivered >= 0.0);
        prop_assert!(rec.delivered <= rec.contracted * (1.0 + 1e-12));
        prop_assert_eq!(rec.contracted, effort);
        prop_assert_eq!(rec.dropped, rec.delivered == 0.0);
    }

    /// Scaling all rewards and the cap by the same power of two (exact in
    /// floating point) cannot flip the budget verdict.
    #[test]
    fn budget_verdict_survives_common_rescaling(
        (ladder, efforts) in ladder_with_efforts(),
        cap_scale in 0.2f64..3.0,
        exponent in -6i32..=6,
    ) {
        let base = menu_from_efforts(&ladder, &efforts, 1.0);
        let cap = cap_scale * total_payment(&base, &ladder).unwrap();
        let menu = ContractMenu::new(base.items.clone(), cap, MenuProvenance::Initial).unwrap();
        let factor = 2f64.powi(exponent);
        let scaled_items = menu
            .items
            .iter()
            .map(|it| ContractItem { reward: it.reward * factor, effort: it.effort })
            .collect();
        let scaled =
            ContractMenu::new(scaled_items, cap * factor, MenuProvenance::Initial).unwrap();
        prop_assert_eq!(
            check_budget(&menu, &ladder).unwrap(),
            check_budget(&scaled, &ladder).unwrap()
        );
    }

    /// `select_contract` is the utility argmax with ties resolved to the
    /// lazier item; rejection happens exactly on all-negative menus.
    #[test]
    fn selection_is_the_brute_force_argmax(
        ladder in ladder_strategy(),
        raw_items in proptest::collection::vec((0.0f64..5.0, 0.1f64..1e3), 1..8),
        who in 0usize..6,
    ) {
        let items: Vec<ContractItem<f64>> = raw_items
            .iter()
            .map(|&(reward, effort)| ContractItem { reward, effort })
            .collect();
        let menu = ContractMenu::new(items, f64::INFINITY, MenuProvenance::Initial).unwrap();
        let p = ladder.profile(who.min(ladder.len() - 1));
        let utilities: Vec<f64> = menu
            .items
            .iter()
            .map(|it| do_utility(p, it).unwrap())
            .collect();
        let best = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let chosen = select_contract(p, &menu).unwrap();
        // stay clear of the tolerance band around ties and around zero
        let near_tie = utilities
            .iter()
            .filter(|&&u| (u - best).abs() <= 1e-6 * (1.0 + best.abs()))
            .count()
            > 1;
        if best < -1e-6 {
            prop_assert_eq!(chosen, None, "all-negative menu must be rejected");
        } else if best > 1e-6 && !near_tie {
            let argmax = utilities
                .iter()
                .position(|&u| u == best)
                .expect("max exists");
            prop_assert_eq!(chosen, Some(argmax));
        } else if let Some(i) = chosen {
            prop_assert!(utilities[i] >= best - 1e-6 * (1.0 + best.abs()));
        }
    }
}
