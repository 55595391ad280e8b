//! Exact and optimistic value recursions over the joint-history tree.
//!
//! All recursions walk only the branches with positive probability, so the
//! node guard counts the nodes actually visited. The cost is exponential in
//! the horizon on purpose: best responses to mixtures of history-dependent
//! opponents admit no polynomial algorithm in general.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::guard::{Guards, NodeBudget};
use crate::policy::{GeneralPolicy, MarkovPolicy, MixedWeights, Side};
use crate::trajectory::check_sides;

/// The quantities a Bellman backup needs: transitions, rewards, and an
/// additive per-cell bonus, with optional clipping of `Q_h` at `H - h + 1`.
pub trait ValueModel: Sync {
    fn dims(&self) -> GameDims;
    fn next_dist(&self, h: usize, s: usize, joint: usize) -> &[f64];
    fn reward(&self, h: usize, s: usize, joint: usize) -> f64;
    fn bonus(&self, h: usize, s: usize, joint: usize) -> f64;
    fn clips(&self) -> bool;
}

/// The true model: no bonus, no clipping.
impl ValueModel for MarkovGame {
    fn dims(&self) -> GameDims {
        MarkovGame::dims(self)
    }

    fn next_dist(&self, h: usize, s: usize, joint: usize) -> &[f64] {
        self.next_state_dist(h, s, joint)
    }

    fn reward(&self, h: usize, s: usize, joint: usize) -> f64 {
        MarkovGame::reward(self, h, s, joint)
    }

    fn bonus(&self, _: usize, _: usize, _: usize) -> f64 {
        0.0
    }

    fn clips(&self) -> bool {
        false
    }
}

/// Averaging clipped `Q` values can overshoot `H - h` by rounding; clip `V`
/// as well so the ceiling holds exactly.
#[inline]
fn settle<M: ValueModel + ?Sized>(model: &M, h: usize, v: f64) -> f64 {
    if model.clips() {
        v.min((model.dims().horizon - h) as f64)
    } else {
        v
    }
}

#[inline]
fn backup<M: ValueModel + ?Sized>(model: &M, h: usize, s: usize, joint: usize, cont: f64) -> f64 {
    let q = cont + model.reward(h, s, joint) + model.bonus(h, s, joint);
    if model.clips() {
        q.min((model.dims().horizon - h) as f64)
    } else {
        q
    }
}

/// Per-node record emitted when tracing a history-tree evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub history: Vec<u32>,
    pub step: usize,
    pub value: f64,
    /// `(joint action, Q)` for every joint action with positive probability.
    pub q: Vec<(usize, f64)>,
}

struct TreeEval<'a, M: ?Sized> {
    model: &'a M,
    mu: &'a GeneralPolicy,
    nu: &'a GeneralPolicy,
    budget: NodeBudget,
    trace: Option<&'a mut Vec<TraceRow>>,
}

impl<M: ValueModel + ?Sized> TreeEval<'_, M> {
    fn node(&mut self, hist: &mut Vec<u32>) -> Result<f64> {
        self.budget.tick()?;
        let d = self.model.dims();
        let h = hist.len() / 2;
        let s = *hist.last().unwrap() as usize;
        let pm = self.mu.probs(hist)?.into_owned();
        let pn = self.nu.probs(hist)?.into_owned();
        let mut v = 0.0;
        let mut qs = Vec::new();
        for (a, &pa) in pm.iter().enumerate() {
            if pa <= 0.0 {
                continue;
            }
            for (b, &pb) in pn.iter().enumerate() {
                if pb <= 0.0 {
                    continue;
                }
                let joint = d.joint_index(a, b);
                let mut cont = 0.0;
                if h + 1 < d.horizon {
                    let dist = self.model.next_dist(h, s, joint);
                    for (next, &p) in dist.iter().enumerate() {
                        if p > 0.0 {
                            hist.push(joint as u32);
                            hist.push(next as u32);
                            cont += p * self.node(hist)?;
                            hist.truncate(hist.len() - 2);
                        }
                    }
                }
                let q = backup(self.model, h, s, joint, cont);
                if self.trace.is_some() {
                    qs.push((joint, q));
                }
                v += pa * pb * q;
            }
        }
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.push(TraceRow {
                history: hist.clone(),
                step: h + 1,
                value: v,
                q: qs,
            });
        }
        Ok(settle(self.model, h, v))
    }
}

/// `V_1(s_1)` of `mu x nu` under `model` by recursion over the history tree.
pub fn evaluate_general<M: ValueModel + ?Sized>(
    model: &M,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    evaluate_general_traced(model, mu, nu, guards, None)
}

pub fn evaluate_general_traced<M: ValueModel + ?Sized>(
    model: &M,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<f64> {
    check_policy_pair(&model.dims(), mu, nu)?;
    let mut eval = TreeEval {
        model,
        mu,
        nu,
        budget: NodeBudget::new(guards.history_nodes, "history-tree evaluation (nodes)"),
        trace,
    };
    let mut hist = vec![model.dims().initial_state as u32];
    eval.node(&mut hist)
}

/// `V_1(s_1)` of `mu x nu` under `model` by state-indexed backward induction.
pub fn evaluate_markov<M: ValueModel + ?Sized>(
    model: &M,
    mu: &MarkovPolicy,
    nu: &MarkovPolicy,
) -> Result<f64> {
    let d = model.dims();
    if mu.side() != Side::Max || nu.side() != Side::Min || mu.dims() != d || nu.dims() != d {
        return Err(Error::PolicyFault("policy pair does not match the model".into()));
    }
    let mut next_v = vec![0.0; d.num_states];
    let mut v = vec![0.0; d.num_states];
    for h in (0..d.horizon).rev() {
        for s in 0..d.num_states {
            let mut acc = 0.0;
            for (a, &pa) in mu.row(h, s).iter().enumerate() {
                if pa <= 0.0 {
                    continue;
                }
                for (b, &pb) in nu.row(h, s).iter().enumerate() {
                    if pb <= 0.0 {
                        continue;
                    }
                    let joint = d.joint_index(a, b);
                    let cont: f64 = if h + 1 < d.horizon {
                        model
                            .next_dist(h, s, joint)
                            .iter()
                            .zip(&next_v)
                            .map(|(p, w)| p * w)
                            .sum()
                    } else {
                        0.0
                    };
                    acc += pa * pb * backup(model, h, s, joint, cont);
                }
            }
            v[s] = settle(model, h, acc);
        }
        std::mem::swap(&mut v, &mut next_v);
    }
    Ok(next_v[d.initial_state])
}

/// Dispatches to the state-indexed recursion when both policies are Markov.
pub fn evaluate<M: ValueModel + ?Sized>(
    model: &M,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    match (mu.as_markov(), nu.as_markov()) {
        (Some(m), Some(n)) => evaluate_markov(model, m, n),
        _ => evaluate_general(model, mu, nu, guards),
    }
}

/// Exact `V_1^{mu x nu}(s_1)` for general policies over the full history tree.
pub fn exact_value_general(
    game: &MarkovGame,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    check_sides(game, mu, nu)?;
    evaluate_general(game, mu, nu, guards)
}

/// Exact `V_1^{mu x nu}(s_1)` for Markov policies, `O(H S^2 A)`.
pub fn exact_value_markov(game: &MarkovGame, mu: &MarkovPolicy, nu: &MarkovPolicy) -> Result<f64> {
    evaluate_markov(game, mu, nu)
}

/// Exact value, taking the Markov shortcut when possible.
pub fn exact_value(
    game: &MarkovGame,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<f64> {
    check_sides(game, mu, nu)?;
    evaluate(game, mu, nu, guards)
}

fn check_policy_pair(d: &GameDims, mu: &GeneralPolicy, nu: &GeneralPolicy) -> Result<()> {
    if mu.side() != Side::Max || nu.side() != Side::Min {
        return Err(Error::PolicyFault(
            "expected a max-player policy and a min-player policy".into(),
        ));
    }
    if mu.dims() != *d || nu.dims() != *d {
        return Err(Error::PolicyFault("policy built for a different game shape".into()));
    }
    Ok(())
}

/// Result of [`best_response_to_mixture`].
#[derive(Debug, Clone)]
pub struct MixtureBestResponse {
    pub policy: GeneralPolicy,
    /// `sum_i w_i V^{mu x nu_i}` of the returned policy under the model.
    pub value: f64,
    /// Per-opponent values of the returned policy; entries with zero weight
    /// are not computed and reported as `NaN`.
    pub per_opponent: Vec<f64>,
}

struct BrSearch<'a, M: ?Sized> {
    model: &'a M,
    opponents: &'a [GeneralPolicy],
    budget: NodeBudget,
}

struct BrNode {
    values: Vec<f64>,
    weighted: f64,
    decisions: Vec<(Vec<u32>, u32)>,
}

impl<M: ValueModel + ?Sized> BrSearch<'_, M> {
    /// `weight[i]` is `w_i` times the likelihood of the opponent actions in
    /// `hist` under opponent `i` (an unnormalized posterior).
    fn node(&mut self, hist: &mut Vec<u32>, weight: &[f64]) -> Result<BrNode> {
        self.budget.tick()?;
        let d = self.model.dims();
        let n = self.opponents.len();
        let h = hist.len() / 2;
        let s = *hist.last().unwrap() as usize;
        let mut opp_dists: Vec<Option<Cow<'_, [f64]>>> = Vec::with_capacity(n);
        for (i, nu) in self.opponents.iter().enumerate() {
            opp_dists.push(if weight[i] > 0.0 { Some(nu.probs(hist)?) } else { None });
        }
        let mut best: Option<(usize, BrNode)> = None;
        let mut child_weight = vec![0.0; n];
        for a in 0..d.actions_max {
            let mut values = vec![0.0; n];
            let mut decisions = Vec::new();
            for b in 0..d.actions_min {
                let mut any = false;
                for i in 0..n {
                    child_weight[i] = match &opp_dists[i] {
                        Some(dist) => weight[i] * dist[b],
                        None => 0.0,
                    };
                    any |= child_weight[i] > 0.0;
                }
                if !any {
                    continue;
                }
                let joint = d.joint_index(a, b);
                let mut cont = vec![0.0; n];
                if h + 1 < d.horizon {
                    let cw = child_weight.clone();
                    for (next, &p) in self.model.next_dist(h, s, joint).iter().enumerate() {
                        if p <= 0.0 {
                            continue;
                        }
                        hist.push(joint as u32);
                        hist.push(next as u32);
                        let child = self.node(hist, &cw)?;
                        hist.truncate(hist.len() - 2);
                        for i in 0..n {
                            if cw[i] > 0.0 {
                                cont[i] += p * child.values[i];
                            }
                        }
                        decisions.extend(child.decisions);
                    }
                }
                for i in 0..n {
                    if child_weight[i] > 0.0 {
                        let pb = opp_dists[i].as_ref().unwrap()[b];
                        values[i] += pb * backup(self.model, h, s, joint, cont[i]);
                    }
                }
            }
            let weighted: f64 = (0..n)
                .filter(|&i| weight[i] > 0.0)
                .map(|i| weight[i] * values[i])
                .sum();
            let better = match &best {
                None => true,
                Some((_, b)) => weighted > b.weighted + 1e-12 * (1.0 + b.weighted.abs()),
            };
            if better {
                best = Some((a, BrNode { values, weighted, decisions }));
            }
        }
        let (a, mut node) = best.expect("at least one max-player action");
        if a != 0 {
            node.decisions.push((hist.clone(), a as u32));
        }
        Ok(node)
    }
}

/// Best general max-player policy against the mixture `sum_i w_i nu_i`.
///
/// Backward induction over the joint-history tree: at every history the
/// returned policy picks the action maximizing the posterior-weighted
/// continuation value, ties to the lowest action index. Per-opponent values
/// are carried up the tree so that clipping (when the model clips) is applied
/// to each opponent's own Q-values exactly as in a per-opponent evaluation.
/// Without binding clips this is the exact argmax over all general policies;
/// with a single opponent it is exact in every case.
pub fn best_response_to_mixture<M: ValueModel + ?Sized>(
    model: &M,
    opponents: &[GeneralPolicy],
    w: &MixedWeights,
    guards: &Guards,
) -> Result<MixtureBestResponse> {
    let d = model.dims();
    if opponents.is_empty() {
        return Err(Error::EmptyClass);
    }
    if opponents.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "{} opponents but {} weights",
            opponents.len(),
            w.len()
        )));
    }
    for nu in opponents {
        if nu.side() != Side::Min || nu.dims() != d {
            return Err(Error::PolicyFault(format!(
                "opponent {} is not a min-player policy for this game",
                nu.id()
            )));
        }
    }
    let mut search = BrSearch {
        model,
        opponents,
        budget: NodeBudget::new(guards.history_nodes, "mixture best response (history nodes)"),
    };
    let mut hist = vec![d.initial_state as u32];
    let root = search.node(&mut hist, w.as_slice())?;
    let table: HashMap<Vec<u32>, u32> = root.decisions.into_iter().collect();
    let policy = GeneralPolicy::from_table(d, Side::Max, table)?.with_label("best-response");
    let per_opponent = (0..opponents.len())
        .map(|i| if w.as_slice()[i] > 0.0 { root.values[i] } else { f64::NAN })
        .collect();
    Ok(MixtureBestResponse {
        policy,
        value: root.weighted,
        per_opponent,
    })
}

/// Exact law of complete trajectories `[s_1, j_1, ..., s_H, j_H, s_{H+1}]`
/// under `mu x nu` in `game`; only atoms with positive probability are listed.
pub fn trajectory_law(
    game: &MarkovGame,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    guards: &Guards,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    check_sides(game, mu, nu)?;
    let mut out = BTreeMap::new();
    let mut budget = NodeBudget::new(guards.history_nodes, "trajectory law (history nodes)");
    let mut hist = vec![game.initial_state() as u32];
    law_node(game, mu, nu, &mut hist, 1.0, &mut budget, &mut out)?;
    Ok(out)
}

fn law_node(
    game: &MarkovGame,
    mu: &GeneralPolicy,
    nu: &GeneralPolicy,
    hist: &mut Vec<u32>,
    prob: f64,
    budget: &mut NodeBudget,
    out: &mut BTreeMap<Vec<u32>, f64>,
) -> Result<()> {
    budget.tick()?;
    let d = game.dims();
    let h = hist.len() / 2;
    if h == d.horizon {
        *out.entry(hist.clone()).or_insert(0.0) += prob;
        return Ok(());
    }
    let s = *hist.last().unwrap() as usize;
    let pm = mu.probs(hist)?.into_owned();
    let pn = nu.probs(hist)?.into_owned();
    for (a, &pa) in pm.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        for (b, &pb) in pn.iter().enumerate() {
            if pb <= 0.0 {
                continue;
            }
            let joint = d.joint_index(a, b);
            for (next, &p) in game.next_state_dist(h, s, joint).iter().enumerate() {
                if p > 0.0 {
                    hist.push(joint as u32);
                    hist.push(next as u32);
                    law_node(game, mu, nu, hist, prob * pa * pb * p, budget, out)?;
                    hist.truncate(hist.len() - 2);
                }
            }
        }
    }
    Ok(())
}

/// Realized return of a complete encoded trajectory.
pub fn encoded_return(game: &MarkovGame, full: &[u32]) -> f64 {
    let d = game.dims();
    (0..d.horizon)
        .map(|h| game.reward(h, full[2 * h] as usize, full[2 * h + 1] as usize))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::matching_game;
    use crate::testkit;

    #[test]
    fn matching_uniform_vs_constant_is_half() {
        let g = matching_game(1).unwrap();
        let mu = MarkovPolicy::uniform(g.dims(), Side::Max).into_general();
        let nu = MarkovPolicy::constant(g.dims(), Side::Min, 0).unwrap().into_general();
        let v = exact_value_general(&g, &mu, &nu, &Guards::default()).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_game_has_zero_value() {
        let dims = GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 3,
            initial_state: 0,
        };
        let g = MarkovGame::from_fn(dims, |_, _, _, _| 0.5, |_, _, _| 0.0).unwrap();
        let mu = MarkovPolicy::uniform(dims, Side::Max);
        let nu = MarkovPolicy::uniform(dims, Side::Min);
        assert_eq!(exact_value_markov(&g, &mu, &nu).unwrap(), 0.0);
    }

    #[test]
    fn constant_reward_accumulates_over_horizon() {
        let dims = GameDims {
            num_states: 1,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        let g = MarkovGame::from_fn(dims, |_, _, _, _| 1.0, |_, _, _| 1.0).unwrap();
        let mu = MarkovPolicy::uniform(dims, Side::Max);
        let nu = MarkovPolicy::uniform(dims, Side::Min);
        assert_eq!(exact_value_markov(&g, &mu, &nu).unwrap(), 2.0);
    }

    #[test]
    fn markov_and_general_recursions_agree() {
        let mut rng = crate::rng::rng_from_seed(17);
        for _ in 0..100 {
            let dims = testkit::random_dims(&mut rng, 3, 2, 3);
            let g = testkit::random_game(dims, &mut rng);
            let mu = testkit::random_markov(dims, Side::Max, &mut rng);
            let nu = testkit::random_markov(dims, Side::Min, &mut rng);
            let a = exact_value_markov(&g, &mu, &nu).unwrap();
            let b = exact_value_general(&g, &mu.clone().into_general(), &nu.clone().into_general(), &Guards::default())
                .unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            assert!((0.0..=dims.horizon as f64).contains(&a));
        }
    }

    #[test]
    fn general_value_matches_monte_carlo() {
        // Monte-Carlo oracle: 10^6 sampled episodes, 3 standard errors.
        let mut rng = crate::rng::rng_from_seed(23);
        let dims = GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 2,
            initial_state: 0,
        };
        let g = testkit::random_game(dims, &mut rng);
        let mu = testkit::random_history_policy(dims, Side::Max, 5);
        let nu = testkit::random_markov(dims, Side::Min, &mut rng).into_general();
        let exact = exact_value_general(&g, &mu, &nu, &Guards::default()).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut ep_rng = crate::rng::rng_from_seed(99);
        for _ in 0..n {
            let r = crate::trajectory::sample_episode(&g, &mu, &nu, &mut ep_rng)
                .unwrap()
                .realized_return();
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn trajectory_law_sums_to_one_and_gives_value() {
        let mut rng = crate::rng::rng_from_seed(4);
        let dims = GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 2,
            horizon: 3,
            initial_state: 1,
        };
        let g = testkit::random_game(dims, &mut rng);
        let mu = testkit::random_history_policy(dims, Side::Max, 8);
        let nu = testkit::random_history_policy(dims, Side::Min, 9);
        let law = trajectory_law(&g, &mu, &nu, &Guards::default()).unwrap();
        let total: f64 = law.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let v: f64 = law.iter().map(|(t, p)| p * encoded_return(&g, t)).sum();
        let exact = exact_value_general(&g, &mu, &nu, &Guards::default()).unwrap();
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn history_guard_names_bound() {
        let g = matching_game(8).unwrap();
        let mu = MarkovPolicy::uniform(g.dims(), Side::Max).into_general();
        let nu = testkit::random_history_policy(g.dims(), Side::Min, 1);
        let guards = Guards {
            history_nodes: 100,
            ..Guards::default()
        };
        let err = exact_value_general(&g, &mu, &nu, &guards).unwrap_err();
        assert!(err.is_guard());
        assert!(err.to_string().contains("100"));
    }

    #[test]
    fn mixture_of_two_constant_opponents() {
        let g = matching_game(1).unwrap();
        let opp = |a| MarkovPolicy::constant(g.dims(), Side::Min, a).unwrap().into_general();
        let w = MixedWeights::new(vec![0.75, 0.25]).unwrap();
        let br = best_response_to_mixture(&g, &[opp(0), opp(1)], &w, &Guards::default()).unwrap();
        assert!((br.value - 0.75).abs() < 1e-15);
        assert_eq!(&*br.policy.probs(&[0]).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn single_opponent_best_response_is_the_max_over_markov_responses() {
        let mut rng = crate::rng::rng_from_seed(31);
        for _ in 0..20 {
            let dims = testkit::random_dims(&mut rng, 2, 2, 2);
            let g = testkit::random_game(dims, &mut rng);
            let nu = testkit::random_markov(dims, Side::Min, &mut rng);
            let br = best_response_to_mixture(
                &g,
                &[nu.clone().into_general()],
                &MixedWeights::uniform(1).unwrap(),
                &Guards::default(),
            )
            .unwrap();
            // against a Markov opponent a deterministic Markov best response exists
            let best = testkit::all_deterministic_markov(dims, Side::Max)
                .iter()
                .map(|m| exact_value_markov(&g, m, &nu).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((br.value - best).abs() < 1e-12, "{} vs {best}", br.value);
            let check = exact_value_general(&g, &br.policy, &nu.into_general(), &Guards::default()).unwrap();
            assert!((check - br.value).abs() < 1e-12);
        }
    }
}
