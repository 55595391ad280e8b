use proptest::prelude::*;
use rand::Rng;

use mglab::estimation::{bonus, BonusConfig, Counters};
use mglab::harness::{
    hindsight_best_general, hindsight_best_markov, regret_against_class, regret_curves, run_episodes, Checkpoints,
    RegretOptions, RunOptions,
};
use mglab::learners::{exp_weights_distribution, AdaptiveOpExp3, FixedLearner, Learner};
use mglab::nash::nash_value;
use mglab::ope::{
    mixture_ope, ope_evaluate, optimistic_best_response_set, optimistic_mixture_best_response, CoverMode,
    OptimisticModel,
};
use mglab::opponents::{FiniteClassSampler, Opponent, OpponentView};
use mglab::reductions::{lmdp_to_mg, random_lmdp};
use mglab::rng::{rng_from_seed, sample_index, SimRng};
use mglab::testkit::{
    all_deterministic_general, all_deterministic_markov, perturbed_model_tables, random_dims, random_dist,
    random_game, random_history_policy, random_markov, random_simplex_point,
};
use mglab::value::{best_response_to_mixture, exact_value_general, exact_value_markov};
use mglab::{sample_episode, GameDims, GeneralPolicy, Guards, MarkovGame, MixedWeights, Side};

fn guards() -> Guards {
    Guards::default()
}

fn random_policy(dims: GameDims, side: Side, rng: &mut SimRng) -> GeneralPolicy {
    if rng.gen::<bool>() {
        random_history_policy(dims, side, rng.gen())
    } else {
        random_markov(dims, side, rng).into_general()
    }
}

fn small_instance(seed: u64) -> (SimRng, GameDims, MarkovGame) {
    let mut rng = rng_from_seed(seed);
    let dims = random_dims(&mut rng, 2, 2, 3);
    let game = random_game(dims, &mut rng);
    (rng, dims, game)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_values_lie_in_zero_h_and_markov_paths_agree(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let mu = random_markov(dims, Side::Max, &mut rng);
        let nu = random_markov(dims, Side::Min, &mut rng);
        let markov = exact_value_markov(&game, &mu, &nu).unwrap();
        let general = exact_value_general(&game, &mu.into_general(), &nu.into_general(), &guards()).unwrap();
        prop_assert!((markov - general).abs() <= 1e-12, "{markov} vs {general}");
        let v = exact_value_general(
            &game,
            &random_policy(dims, Side::Max, &mut rng),
            &random_policy(dims, Side::Min, &mut rng),
            &guards(),
        )
        .unwrap();
        prop_assert!((0.0..=dims.horizon as f64 + 1e-12).contains(&v));
    }

    #[test]
    fn mixture_best_response_beats_random_general_policies(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let n = rng.gen_range(1..=3);
        let opponents: Vec<GeneralPolicy> = (0..n).map(|_| random_policy(dims, Side::Min, &mut rng)).collect();
        let w = MixedWeights::new(random_simplex_point(n, &mut rng)).unwrap();
        let br = best_response_to_mixture(&game, &opponents, &w, &guards()).unwrap();
        let mixture = |mu: &GeneralPolicy| -> f64 {
            opponents
                .iter()
                .zip(w.as_slice())
                .map(|(nu, wi)| wi * exact_value_general(&game, mu, nu, &guards()).unwrap())
                .sum()
        };
        prop_assert!((mixture(&br.policy) - br.value).abs() <= 1e-9);
        for _ in 0..50 {
            let mu = random_history_policy(dims, Side::Max, rng.gen());
            prop_assert!(mixture(&mu) <= br.value + 1e-9);
        }
    }

    #[test]
    fn ope_is_clipped_and_monotone_in_the_bonus(seed in any::<u64>(), bump in 0.0f64..2.0) {
        let (mut rng, dims, game) = small_instance(seed);
        let (p_hat, bonus) = perturbed_model_tables(&game, &mut rng);
        let mu = random_policy(dims, Side::Max, &mut rng);
        let nu = random_policy(dims, Side::Min, &mut rng);
        let base = OptimisticModel::from_parts(&game, p_hat.clone(), bonus.clone()).unwrap();
        let v = ope_evaluate(&base, &mu, &nu, &guards()).unwrap();
        prop_assert!(v <= dims.horizon as f64);
        let mut raised = bonus;
        let cell = rng.gen_range(0..raised.len());
        raised[cell] += bump;
        let bigger = OptimisticModel::from_parts(&game, p_hat, raised).unwrap();
        let w = ope_evaluate(&bigger, &mu, &nu, &guards()).unwrap();
        prop_assert!(w >= v - 1e-12, "raising cell {cell} by {bump}: {v} -> {w}");
        prop_assert!(w <= dims.horizon as f64);
    }

    #[test]
    fn softmax_is_shift_invariant(
        g in proptest::collection::vec(-50.0f64..50.0, 1..8),
        shift in -1e3f64..1e3,
        eta in 0.0f64..2.0,
    ) {
        let p = exp_weights_distribution(&g, eta);
        let shifted: Vec<f64> = g.iter().map(|x| x + shift).collect();
        let q = exp_weights_distribution(&shifted, eta);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn counters_rows_and_marginals_are_consistent(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let mu = random_policy(dims, Side::Max, &mut rng);
        let nu = random_policy(dims, Side::Min, &mut rng);
        let mut counters = Counters::new(dims);
        let episodes = rng.gen_range(1..30);
        for _ in 0..episodes {
            counters.update(&sample_episode(&game, &mu, &nu, &mut rng).unwrap()).unwrap();
        }
        prop_assert_eq!(counters.total(), (episodes * dims.horizon) as u64);
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                for j in 0..dims.joint_actions() {
                    let next = counters.next_counts(h, s, j);
                    prop_assert_eq!(next.iter().sum::<u64>(), counters.visits(h, s, j));
                    let row = counters.empirical_transition(h, s, j);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn revealed_policy_generated_the_opponent_actions(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let class: Vec<GeneralPolicy> = (0..3).map(|_| random_policy(dims, Side::Min, &mut rng)).collect();
        let mut opponent = FiniteClassSampler::new(&game, class, None, seed).unwrap();
        let mu = random_policy(dims, Side::Max, &mut rng);
        for k in 1..=5 {
            let nu = opponent.choose(&OpponentView { episode: k, trajectories: &[], own_policies: &[] }).unwrap();
            let traj = sample_episode(&game, &mu, &nu, &mut rng).unwrap();
            for h in 1..=dims.horizon {
                let b = traj.steps[h - 1].action.a_min;
                let p = nu.probs(&traj.prefix(h, dims.actions_min)).unwrap()[b];
                prop_assert!(p > 0.0, "episode {k} step {h}: action {b} has probability 0");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Lazy counters stay within a factor two of the live counters, and the
    /// restart count obeys the doubling bound.
    #[test]
    fn adaptive_lazy_sync_and_restart_bound(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let game = std::sync::Arc::new(game);
        let psi: Vec<GeneralPolicy> = (0..rng.gen_range(1..=3)).map(|_| random_markov(dims, Side::Min, &mut rng).into_general()).collect();
        let k_total = 60;
        let mut learner = AdaptiveOpExp3::new(game.clone(), &BonusConfig::new(k_total), 0.25, CoverMode::Auto, guards()).unwrap();
        let mut opponent = FiniteClassSampler::new(&game, psi.clone(), None, seed).unwrap();
        let mut env = rng_from_seed(seed ^ 1);
        for k in 1..=k_total {
            let mu = learner.select(&mut env).unwrap();
            let nu = opponent.choose(&OpponentView { episode: k, trajectories: &[], own_policies: &[] }).unwrap();
            let traj = sample_episode(&game, &mu, &nu, &mut env).unwrap();
            learner.update(&nu, &traj, k).unwrap();
            let (n, lazy) = (learner.counters(), learner.lazy_counters());
            for (i, (&a, &b)) in n.visit_table().iter().zip(lazy.visit_table()).enumerate() {
                if a > 0 {
                    prop_assert!(b >= 1 && a < 2 * b, "after episode {k}, cell {i}: N = {a}, lazy = {b}");
                }
            }
            let p: f64 = learner.weights().probs().iter().sum();
            prop_assert!((p - 1.0).abs() <= 1e-9);
        }
        let log_sum: u32 = learner
            .counters()
            .visit_table()
            .iter()
            .map(|&n| n.max(1).next_power_of_two().trailing_zeros())
            .sum();
        let bound = learner.psi().len() + log_sum as usize + dims.num_states * dims.joint_actions() * dims.horizon;
        prop_assert!(learner.restarts() <= bound, "{} restarts, bound {bound}", learner.restarts());
    }

    /// Every policy in the cover-built set comes within `epsilon H` of the
    /// optimistic mixture best response at random mixtures.
    #[test]
    fn best_response_set_is_epsilon_optimal(seed in any::<u64>(), adaptive in any::<bool>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let (p_hat, bonus) = perturbed_model_tables(&game, &mut rng);
        let model = OptimisticModel::from_parts(&game, p_hat, bonus).unwrap();
        let n = rng.gen_range(1..=3);
        let psi: Vec<GeneralPolicy> = (0..n).map(|_| random_policy(dims, Side::Min, &mut rng)).collect();
        let eps = 0.2;
        let mode = if adaptive { CoverMode::Adaptive } else { CoverMode::Grid };
        let set = optimistic_best_response_set(&model, &psi, eps, mode, &guards()).unwrap();
        for _ in 0..50 {
            let w = MixedWeights::new(random_simplex_point(n, &mut rng)).unwrap();
            let best = optimistic_mixture_best_response(&model, &psi, &w, &guards()).unwrap().value;
            let covered = set
                .iter()
                .map(|mu| mixture_ope(&model, mu, &psi, &w, &guards()).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(best - covered <= eps * dims.horizon as f64 + 1e-9, "{best} vs {covered}");
        }
    }

    /// Regret against a singleton class, the Nash comparator, and the
    /// realized-minus-exact martingale on a logged run.
    #[test]
    fn regret_accounting_identities(seed in any::<u64>()) {
        let (mut rng, dims, game) = small_instance(seed);
        let k_total = 80;
        let class: Vec<GeneralPolicy> = (0..3).map(|_| random_policy(dims, Side::Min, &mut rng)).collect();
        let mut opponent = FiniteClassSampler::new(&game, class, None, seed).unwrap();
        let mut learner = FixedLearner::new(random_policy(dims, Side::Max, &mut rng));
        let log = run_episodes(&game, &mut learner, &mut opponent, k_total, seed, &RunOptions::default()).unwrap();

        let mu0 = random_policy(dims, Side::Max, &mut rng);
        let curve = regret_against_class(&game, &log.records, &log.revealed, std::slice::from_ref(&mu0), &guards()).unwrap();
        let mut direct = 0.0;
        for (k, (r, nu)) in log.records.iter().zip(&log.revealed).enumerate() {
            direct += exact_value_general(&game, &mu0, nu, &guards()).unwrap() - r.exact_value;
            prop_assert!((curve[k] - direct).abs() <= 1e-9);
        }

        let options = RegretOptions { markov: true, general: false, nash: true, checkpoints: Checkpoints::EveryK };
        let series = regret_curves(&game, &log.records, &log.revealed, &options, &guards()).unwrap();
        let v_star = nash_value(&game).unwrap().value;
        let mut gap = 0.0;
        for (row, r) in series.rows.iter().zip(&log.records) {
            gap += v_star - r.exact_value;
            prop_assert!(gap <= row.regret_markov.unwrap() + 1e-6 * row.k as f64, "k = {}", row.k);
        }

        let drift: f64 = log.records.iter().map(|r| r.realized_return - r.exact_value).sum();
        prop_assert!(drift.abs() <= 5.0 * dims.horizon as f64 * (k_total as f64).sqrt());
    }
}

/// Hindsight oracles against enumeration of every deterministic policy on
/// trees small enough to list.
#[test]
fn hindsight_oracles_match_brute_force() {
    let mut rng = rng_from_seed(41);
    for trial in 0..8 {
        let dims = GameDims {
            num_states: 1 + trial % 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        let game = random_game(dims, &mut rng);
        let revealed: Vec<GeneralPolicy> = (0..5).map(|_| random_policy(dims, Side::Min, &mut rng)).collect();
        let total = |mu: &GeneralPolicy| -> f64 {
            revealed.iter().map(|nu| exact_value_general(&game, mu, nu, &guards()).unwrap()).sum()
        };
        let brute_general = all_deterministic_general(dims, Side::Max)
            .iter()
            .map(total)
            .fold(f64::NEG_INFINITY, f64::max);
        let (policy, value) = hindsight_best_general(&game, &revealed, &guards()).unwrap();
        assert!((value - brute_general).abs() <= 1e-9, "trial {trial}: {value} vs {brute_general}");
        assert!((total(&policy) - value).abs() <= 1e-9);

        let brute_markov = all_deterministic_markov(dims, Side::Max)
            .into_iter()
            .map(|m| total(&m.into_general()))
            .fold(f64::NEG_INFINITY, f64::max);
        let (_, value) = hindsight_best_markov(&game, &revealed, &guards()).unwrap();
        assert!((value - brute_markov).abs() <= 1e-9, "trial {trial}: {value} vs {brute_markov}");
        assert!(brute_markov <= brute_general + 1e-9);
    }
}

/// `|P_hat - P|_1 <= beta(n) / H` on every cell at once, in at least a
/// `1 - 2 delta` fraction of seeded trials at the default `c`.
#[test]
fn bonus_covers_sampling_error() {
    let mut rng = rng_from_seed(5);
    let dims = GameDims {
        num_states: 3,
        actions_max: 2,
        actions_min: 2,
        horizon: 2,
        initial_state: 0,
    };
    let game = random_game(dims, &mut rng);
    let cfg = BonusConfig::new(1000);
    let trials = 1000;
    let mut held = 0;
    for _ in 0..trials {
        let n = rng.gen_range(1..=40u64);
        let beta = bonus(n, &dims, &cfg).unwrap();
        let ok = (0..dims.horizon).all(|h| {
            (0..dims.num_states).all(|s| {
                (0..dims.joint_actions()).all(|j| {
                    let p = game.next_state_dist(h, s, j);
                    let mut counts = vec![0u64; dims.num_states];
                    for _ in 0..n {
                        counts[sample_index(p, &mut rng)] += 1;
                    }
                    let l1: f64 = counts.iter().zip(p).map(|(&c, &q)| (c as f64 / n as f64 - q).abs()).sum();
                    l1 <= beta / dims.horizon as f64
                })
            })
        });
        held += ok as usize;
    }
    assert!(held as f64 >= (1.0 - 2.0 * cfg.delta) * trials as f64, "{held} / {trials}");
}

/// In the LMDP game each even-step opponent action leads to its own
/// (next state, reward) pair, so the action reveals nothing beyond them.
#[test]
fn lmdp_opponent_action_is_determined_by_outcome() {
    let mut rng = rng_from_seed(9);
    for _ in 0..10 {
        let (s, a, h, l) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let r = lmdp_to_mg(&random_lmdp(s, a, h, l, &mut rng)).unwrap();
        let d = r.game.dims();
        for step in (1..d.horizon).step_by(2) {
            for state in s..d.num_states {
                for a_max in 0..d.actions_max {
                    let mut seen = std::collections::HashSet::new();
                    for b in 0..d.actions_min {
                        let joint = d.joint_index(a_max, b);
                        let next = r.game.next_state_dist(step, state, joint);
                        let target = next.iter().position(|&p| p == 1.0).expect("deterministic transition");
                        let reward = r.game.reward(step, state, joint);
                        assert!(seen.insert((target, reward.to_bits())), "action {b} shares an outcome");
                    }
                }
            }
        }
    }
}

#[test]
fn random_dist_rows_are_distributions() {
    let mut rng = rng_from_seed(3);
    for n in 1..6 {
        for _ in 0..200 {
            let v = random_dist(n, &mut rng);
            assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && v.iter().all(|&x| x >= 0.0));
        }
    }
}
