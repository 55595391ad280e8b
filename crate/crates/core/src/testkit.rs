//! Random instance generators and brute-force oracles shared by the unit
//! tests, the integration tests and the `verify` suites.

use std::collections::HashMap;

use rand::Rng;

use crate::estimation::Counters;
use crate::game::{GameDims, MarkovGame};
use crate::policy::{GeneralPolicy, MarkovPolicy, Side};
use crate::rng::{rng_from_seed, SimRng};

/// Random shape with `1..=max_states` states, `1..=max_actions` actions per
/// side (at least one side with two) and `1..=max_horizon` steps.
pub fn random_dims(rng: &mut SimRng, max_states: usize, max_actions: usize, max_horizon: usize) -> GameDims {
    let num_states = rng.gen_range(1..=max_states);
    let mut actions_max = rng.gen_range(1..=max_actions);
    let actions_min = rng.gen_range(1..=max_actions);
    if actions_max * actions_min == 1 && max_actions > 1 {
        actions_max = 2;
    }
    GameDims {
        num_states,
        actions_max,
        actions_min,
        horizon: rng.gen_range(1..=max_horizon),
        initial_state: rng.gen_range(0..num_states),
    }
}

/// A random probability vector; about one row in four is a point mass and
/// one in four has a zero entry.
pub fn random_dist(n: usize, rng: &mut SimRng) -> Vec<f64> {
    match rng.gen_range(0..4) {
        0 => {
            let mut v = vec![0.0; n];
            v[rng.gen_range(0..n)] = 1.0;
            v
        }
        kind => {
            let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            if kind == 1 && n > 1 {
                v[rng.gen_range(0..n)] = 0.0;
            }
            let total: f64 = v.iter().sum();
            if total <= 0.0 {
                return vec![1.0 / n as f64; n];
            }
            let mut out: Vec<f64> = v.iter().map(|x| x / total).collect();
            // absorb rounding so the row sums to 1 as tightly as possible
            let err: f64 = 1.0 - out.iter().sum::<f64>();
            let i = out
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            out[i] += err;
            out
        }
    }
}

pub fn random_game(dims: GameDims, rng: &mut SimRng) -> MarkovGame {
    let mut transitions = Vec::with_capacity(dims.num_cells() * dims.num_states);
    let mut rewards = Vec::with_capacity(dims.num_cells());
    for _ in 0..dims.num_cells() {
        transitions.extend(random_dist(dims.num_states, rng));
        rewards.push(rng.gen::<f64>());
    }
    MarkovGame::new(dims, transitions, rewards).expect("random game is valid")
}

/// A random game whose transition rows are multiples of `1 / denom`, with
/// counters whose empirical transitions reproduce them exactly.
pub fn random_rational_game(dims: GameDims, denom: u64, rng: &mut SimRng) -> (MarkovGame, Counters) {
    let mut counts = Vec::with_capacity(dims.num_cells() * dims.num_states);
    let mut rewards = Vec::with_capacity(dims.num_cells());
    for _ in 0..dims.num_cells() {
        let mut row = vec![0u64; dims.num_states];
        for _ in 0..denom {
            row[rng.gen_range(0..dims.num_states)] += 1;
        }
        counts.extend(row);
        rewards.push(rng.gen::<f64>());
    }
    let counters = Counters::from_next_counts(dims, counts).expect("count table has the right size");
    let mut transitions = Vec::with_capacity(dims.num_cells() * dims.num_states);
    for h in 0..dims.horizon {
        for s in 0..dims.num_states {
            for joint in 0..dims.joint_actions() {
                transitions.extend(counters.empirical_transition(h, s, joint));
            }
        }
    }
    let game = MarkovGame::new(dims, transitions, rewards).expect("rational game is valid");
    (game, counters)
}

/// A uniformly random point of the simplex with `k` vertices.
pub fn random_simplex_point(k: usize, rng: &mut SimRng) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

/// A perturbed transition table `P_hat` (each row mixed with a random row)
/// and the per-cell bonus `H * |P_hat - P|_1`.
pub fn perturbed_model_tables(game: &MarkovGame, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
    let d = game.dims();
    let mut p_hat = Vec::with_capacity(d.num_cells() * d.num_states);
    let mut bonus = Vec::with_capacity(d.num_cells());
    for row in game.transitions().chunks(d.num_states) {
        let lambda: f64 = rng.gen();
        let noise = random_dist(d.num_states, rng);
        let mut mixed: Vec<f64> = row.iter().zip(&noise).map(|(p, q)| (1.0 - lambda) * p + lambda * q).collect();
        let err = 1.0 - mixed.iter().sum::<f64>();
        let i = mixed
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        mixed[i] += err;
        let dist: f64 = mixed.iter().zip(row).map(|(a, b)| (a - b).abs()).sum();
        bonus.push(d.horizon as f64 * dist);
        p_hat.extend(mixed);
    }
    (p_hat, bonus)
}

pub fn random_markov(dims: GameDims, side: Side, rng: &mut SimRng) -> MarkovPolicy {
    let n = side.num_actions(&dims);
    MarkovPolicy::from_fn(dims, side, |_, _| random_dist(n, rng)).expect("random rows are valid")
}

fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A history-dependent policy whose distribution at each prefix is a
/// pseudo-random function of `(seed, prefix)`.
pub fn random_history_policy(dims: GameDims, side: Side, seed: u64) -> GeneralPolicy {
    let n = side.num_actions(&dims);
    GeneralPolicy::from_fn(dims, side, "random-history", u64::MAX, move |hist| {
        let mut key = mix(seed ^ 0x5eed);
        for &x in hist {
            key = mix(key ^ (x as u64 + 1));
        }
        random_dist(n, &mut rng_from_seed(key))
    })
    .expect("random history policy is valid")
}

/// A deterministic history-dependent policy with pseudo-random decisions.
pub fn random_deterministic_history_policy(dims: GameDims, side: Side, seed: u64) -> GeneralPolicy {
    let n = side.num_actions(&dims);
    GeneralPolicy::from_fn(dims, side, "random-deterministic-history", u64::MAX, move |hist| {
        let mut key = mix(seed ^ 0xd37);
        for &x in hist {
            key = mix(key ^ (x as u64 + 1));
        }
        let mut v = vec![0.0; n];
        v[(key % n as u64) as usize] = 1.0;
        v
    })
    .expect("random deterministic policy is valid")
}

/// Every deterministic Markov policy for `side`, in lexicographic order of
/// the step-major action table.
pub fn all_deterministic_markov(dims: GameDims, side: Side) -> Vec<MarkovPolicy> {
    let n = side.num_actions(&dims);
    let slots = dims.horizon * dims.num_states;
    let total = n.checked_pow(slots as u32).expect("candidate count overflows");
    let mut out = Vec::with_capacity(total);
    let mut actions = vec![0usize; slots];
    for _ in 0..total {
        out.push(MarkovPolicy::deterministic(dims, side, &actions).unwrap());
        for slot in (0..slots).rev() {
            actions[slot] += 1;
            if actions[slot] < n {
                break;
            }
            actions[slot] = 0;
        }
    }
    out
}

/// All histories of the full game tree (every joint action and state at
/// every step), in depth-first order.
pub fn all_histories(dims: GameDims) -> Vec<Vec<u32>> {
    fn walk(dims: &GameDims, hist: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        out.push(hist.clone());
        if hist.len() / 2 + 1 < dims.horizon {
            for j in 0..dims.joint_actions() {
                for s in 0..dims.num_states {
                    hist.push(j as u32);
                    hist.push(s as u32);
                    walk(dims, hist, out);
                    hist.truncate(hist.len() - 2);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&dims, &mut vec![dims.initial_state as u32], &mut out);
    out
}

/// Every deterministic general policy for `side` (one action per history of
/// the full tree). Only usable on tiny trees.
pub fn all_deterministic_general(dims: GameDims, side: Side) -> Vec<GeneralPolicy> {
    let n = side.num_actions(&dims);
    let hists = all_histories(dims);
    let total = n.checked_pow(hists.len() as u32).expect("too many general policies");
    assert!(total <= 1 << 20, "{total} general policies is too many to enumerate");
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; hists.len()];
    for _ in 0..total {
        let table: HashMap<Vec<u32>, u32> = hists
            .iter()
            .zip(&digits)
            .map(|(h, &a)| (h.clone(), a as u32))
            .collect();
        out.push(GeneralPolicy::from_table(dims, side, table).unwrap());
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < n {
                break;
            }
            *d = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_dists_are_valid() {
        let mut rng = rng_from_seed(0);
        for n in 1..6 {
            for _ in 0..200 {
                let d = random_dist(n, &mut rng);
                assert!(crate::policy::check_dist(&d, n, 1e-12).is_ok(), "{d:?}");
            }
        }
    }

    #[test]
    fn enumeration_counts() {
        let dims = GameDims {
            num_states: 1,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        assert_eq!(all_deterministic_markov(dims, Side::Max).len(), 4);
        assert_eq!(all_histories(dims).len(), 5);
        assert_eq!(all_deterministic_general(dims, Side::Max).len(), 32);
    }
}
