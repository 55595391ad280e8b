//! Randomized invariant suites behind `mglab verify`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cover::{l1_distance, round_to_grid, simplex_cover};
use crate::error::{Error, Result};
use crate::estimation::Bonus;
use crate::game::GameDims;
use crate::guard::Guards;
use crate::ope::{ope_evaluate, ope_evaluate_markov, OptimisticModel};
use crate::policy::{GeneralPolicy, Side};
use crate::reductions::{
    check_value_identity, lmdp_to_mg, lmdp_trajectory_law, parse_dimacs, pomdp_to_mg, pomdp_trajectory_law,
    random_3cnf, random_lmdp, random_pomdp, sat_to_mg, LmdpPolicy, PomdpPolicy, BUNDLED_FORMULAS,
};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::testkit::{
    perturbed_model_tables, random_dims, random_game, random_history_policy, random_markov, random_rational_game,
    random_simplex_point,
};
use crate::value::{exact_value, exact_value_general, trajectory_law};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ope,
    Optimism,
    Cover,
    Pomdp,
    Lmdp,
    Sat,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [Suite::Ope, Suite::Optimism, Suite::Cover, Suite::Pomdp, Suite::Lmdp, Suite::Sat];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ope => "ope",
            Suite::Optimism => "optimism",
            Suite::Cover => "cover",
            Suite::Pomdp => "pomdp",
            Suite::Lmdp => "lmdp",
            Suite::Sat => "sat",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ope" => Suite::Ope,
            "optimism" => Suite::Optimism,
            "cover" => Suite::Cover,
            "pomdp" => Suite::Pomdp,
            "lmdp" => Suite::Lmdp,
            "sat" => Suite::Sat,
            "all" => Suite::All,
            _ => return Err(Error::Config(format!("unknown suite {s:?}"))),
        })
    }
}

/// Deliberate bugs for checking that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flips the sign of the optimism bonus.
    NegativeBonus,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative-bonus" => Ok(Fault::NegativeBonus),
            _ => Err(Error::Config(format!("unknown fault {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub guards: Guards,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 50,
            seed: 0,
            fault: None,
            guards: Guards::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: String,
    pub property: String,
    pub trials: usize,
    pub counterexample: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.counterexample {
            None => write!(f, "PASS {}/{} ({} trials)", self.suite, self.property, self.trials),
            Some(c) => write!(f, "FAIL {}/{} ({} trials)\n  counterexample: {c}", self.suite, self.property, self.trials),
        }
    }
}

/// Runs a property over `trials` seeded cases and stops at the first
/// counterexample.
fn property(
    suite: Suite,
    name: &str,
    trials: usize,
    seed: u64,
    mut case: impl FnMut(usize, &mut SimRng) -> Result<Option<String>>,
) -> Result<PropertyResult> {
    let mut rng = rng_from_seed(derive_seed(seed, name));
    for t in 0..trials {
        if let Some(c) = case(t, &mut rng)? {
            return Ok(PropertyResult {
                suite: suite.name().into(),
                property: name.into(),
                trials: t + 1,
                counterexample: Some(format!("trial {t}: {c}")),
            });
        }
    }
    Ok(PropertyResult {
        suite: suite.name().into(),
        property: name.into(),
        trials,
        counterexample: None,
    })
}

fn random_pair(dims: GameDims, rng: &mut SimRng) -> (GeneralPolicy, GeneralPolicy) {
    let general = rng.gen::<bool>();
    if general {
        (
            random_history_policy(dims, Side::Max, rng.gen()),
            random_history_policy(dims, Side::Min, rng.gen()),
        )
    } else {
        (
            random_markov(dims, Side::Max, rng).into_general(),
            random_markov(dims, Side::Min, rng).into_general(),
        )
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    match suite {
        Suite::All => {
            let mut out = Vec::new();
            for s in Suite::EACH {
                out.extend(run_suite(s, opts)?);
            }
            Ok(out)
        }
        Suite::Ope => Ok(vec![ope_equals_exact_value(opts)?, markov_collapse(opts)?]),
        Suite::Optimism => Ok(vec![ope_dominates_exact_value(opts)?, ope_at_most_horizon(opts)?]),
        Suite::Cover => cover_soundness(opts),
        Suite::Pomdp => Ok(vec![pomdp_fidelity(opts)?]),
        Suite::Lmdp => Ok(vec![lmdp_fidelity(opts)?]),
        Suite::Sat => sat_value_identity(opts),
    }
}

/// Games whose transitions equal the counters' empirical estimate, zero
/// bonus: OPE must reproduce the exact value on 10 policy pairs per game.
pub fn ope_equals_exact_value(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Ope, "ope-equals-exact-value", opts.trials, opts.seed, |_, rng| {
        let dims = random_dims(rng, 3, 2, 3);
        let (game, counters) = random_rational_game(dims, 12, rng);
        let model = OptimisticModel::new(&game, &counters, &Bonus::zero())?;
        for _ in 0..10 {
            let (mu, nu) = random_pair(dims, rng);
            let (a, b) = (ope_evaluate(&model, &mu, &nu, g)?, exact_value_general(&game, &mu, &nu, g)?);
            if (a - b).abs() > 1e-9 {
                return Ok(Some(format!("{dims:?}, {mu:?} vs {nu:?}: OPE {a}, exact {b}")));
            }
        }
        Ok(None)
    })
}

/// State-indexed and history-indexed OPE agree on Markov pairs.
pub fn markov_collapse(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Ope, "markov-collapse", opts.trials, opts.seed, |_, rng| {
        let dims = random_dims(rng, 3, 3, 4);
        let game = random_game(dims, rng);
        let (p_hat, bonus) = perturbed_model_tables(&game, rng);
        let model = OptimisticModel::from_parts(&game, p_hat, bonus)?;
        let mu = random_markov(dims, Side::Max, rng);
        let nu = random_markov(dims, Side::Min, rng);
        let a = ope_evaluate_markov(&model, &mu, &nu)?;
        let b = ope_evaluate(&model, &mu.clone().into_general(), &nu.clone().into_general(), g)?;
        Ok(((a - b).abs() > 1e-12).then(|| format!("{dims:?}: state-indexed {a}, history-indexed {b}")))
    })
}

/// With per-cell bonus `H * |P_hat - P|_1`, OPE upper-bounds the exact
/// value on 10 policy pairs per game.
pub fn ope_dominates_exact_value(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Optimism, "ope-dominates-exact-value", opts.trials, opts.seed, |_, rng| {
        let dims = random_dims(rng, 3, 2, 3);
        let game = random_game(dims, rng);
        let (p_hat, mut bonus) = perturbed_model_tables(&game, rng);
        if opts.fault == Some(Fault::NegativeBonus) {
            for b in bonus.iter_mut() {
                *b = -*b - 0.1;
            }
        }
        let model = OptimisticModel::from_parts_unchecked(&game, p_hat, bonus);
        for _ in 0..10 {
            let (mu, nu) = random_pair(dims, rng);
            let (a, b) = (ope_evaluate(&model, &mu, &nu, g)?, exact_value(&game, &mu, &nu, g)?);
            if a < b - 1e-9 {
                return Ok(Some(format!("{dims:?}, {mu:?} vs {nu:?}: OPE {a} < exact {b}")));
            }
        }
        Ok(None)
    })
}

pub fn ope_at_most_horizon(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Optimism, "ope-at-most-horizon", opts.trials, opts.seed, |_, rng| {
        let dims = random_dims(rng, 3, 2, 3);
        let game = random_game(dims, rng);
        let (p_hat, bonus) = perturbed_model_tables(&game, rng);
        let bonus = bonus.iter().map(|b| b * 10.0).collect();
        let model = OptimisticModel::from_parts(&game, p_hat, bonus)?;
        let (mu, nu) = random_pair(dims, rng);
        let v = ope_evaluate(&model, &mu, &nu, g)?;
        Ok((v > dims.horizon as f64).then(|| format!("{dims:?}: OPE {v} exceeds H")))
    })
}

/// For k in {2, 3} and epsilon in {0.5, 0.1}, random simplex points round to
/// a member of the grid within l1 distance epsilon.
pub fn cover_soundness(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    for k in [2usize, 3] {
        for eps in [0.5, 0.1] {
            let cover = simplex_cover(k, eps, opts.guards.cover_points)?;
            let members: HashSet<Vec<u64>> = cover
                .points
                .iter()
                .map(|p| p.as_slice().iter().map(|x| (x * cover.m as f64).round() as u64).collect())
                .collect();
            let name = format!("grid-within-eps-k{k}-eps{eps}");
            out.push(property(Suite::Cover, &name, opts.trials, opts.seed, |_, rng| {
                let w = random_simplex_point(k, rng);
                let parts = round_to_grid(&w, cover.m);
                let q: Vec<f64> = parts.iter().map(|&c| c as f64 / cover.m as f64).collect();
                let key: Vec<u64> = parts.iter().map(|&c| c as u64).collect();
                let dist = l1_distance(&w, &q);
                Ok(if !members.contains(&key) {
                    Some(format!("{w:?} rounds to {q:?}, which is not in the cover"))
                } else if dist > eps {
                    Some(format!("{w:?} is {dist} from its grid point {q:?}"))
                } else {
                    None
                })
            })?);
        }
    }
    Ok(out)
}

/// Sizes of the POMDP game and equality of the observation-action law
/// under a random history-dependent policy.
pub fn pomdp_fidelity(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Pomdp, "trajectory-law-equivalence", opts.trials, opts.seed, |_, rng| {
        let (hidden, actions, obs) = (rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen_range(1..=2));
        let horizon = rng.gen_range(1..=3);
        let pomdp = random_pomdp(hidden, actions, obs, horizon, rng);
        let r = pomdp_to_mg(&pomdp)?;
        let d = r.game.dims();
        if d.num_states != obs * actions + obs
            || d.actions_max != actions
            || d.actions_min != obs
            || d.horizon != 2 * horizon
        {
            return Ok(Some(format!("sizes {d:?} for O={obs}, A={actions}, H={horizon}")));
        }
        let seed: u64 = rng.gen();
        let policy: PomdpPolicy = std::sync::Arc::new(move |h: &[u32]| {
            crate::testkit::random_dist(actions, &mut rng_from_seed(seed ^ hash_slice(h)))
        });
        let direct = pomdp_trajectory_law(&pomdp, &policy, g)?;
        let mu = r.learner_policy(policy, g)?;
        let nu = r.adversary(g)?;
        let mut mapped = BTreeMap::new();
        for (t, p) in trajectory_law(&r.game, &mu, &nu, g)? {
            *mapped.entry(r.map_trajectory(&t)).or_insert(0.0) += p;
        }
        Ok(compare_laws(&direct, &mapped))
    })
}

/// Sizes of the LMDP game and equality of the state-action-reward law,
/// mixing the component opponents by their weights.
pub fn lmdp_fidelity(opts: &VerifyOptions) -> Result<PropertyResult> {
    let g = &opts.guards;
    property(Suite::Lmdp, "trajectory-law-equivalence", opts.trials, opts.seed, |_, rng| {
        let (states, actions, comps) = (rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3));
        let horizon = rng.gen_range(1..=2);
        let lmdp = random_lmdp(states, actions, horizon, comps, rng);
        let r = lmdp_to_mg(&lmdp)?;
        let d = r.game.dims();
        if d.num_states != states * actions + states
            || d.actions_max != actions
            || d.actions_min != 2 * states
            || d.horizon != 2 * horizon
            || r.opponents.len() != comps
        {
            return Ok(Some(format!("sizes {d:?} for S={states}, A={actions}, H={horizon}, L={comps}")));
        }
        let seed: u64 = rng.gen();
        let policy: LmdpPolicy = std::sync::Arc::new(move |h: &[u32]| {
            crate::testkit::random_dist(actions, &mut rng_from_seed(seed ^ hash_slice(h)))
        });
        let direct = lmdp_trajectory_law(&lmdp, &policy, g)?;
        let mu = r.learner_policy(policy, g)?;
        let mut mapped = BTreeMap::new();
        for (nu, &q) in r.opponents.iter().zip(r.weights.as_slice()) {
            for (t, p) in trajectory_law(&r.game, &mu, nu, g)? {
                *mapped.entry(r.map_trajectory(&t)).or_insert(0.0) += q * p;
            }
        }
        Ok(compare_laws(&direct, &mapped))
    })
}

/// The bundled formulas once each, then `trials` random 3-CNF formulas
/// with at most 4 variables and 4 clauses.
pub fn sat_value_identity(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    for (name, text) in BUNDLED_FORMULAS {
        let r = sat_to_mg(&parse_dimacs(text)?)?;
        out.push(property(Suite::Sat, &format!("value-identity-{name}"), 1, opts.seed, |_, rng| {
            Ok(check_value_identity(&r, SAT_EXHAUSTIVE_BITS, SAT_FILL_INS, rng)?.counterexample)
        })?);
    }
    out.push(property(Suite::Sat, "value-identity-random", opts.trials, opts.seed, |_, rng| {
        let f = random_3cnf(rng.gen_range(1..=4), rng.gen_range(1..=4), rng);
        let r = sat_to_mg(&f)?;
        let report = check_value_identity(&r, SAT_EXHAUSTIVE_BITS, SAT_FILL_INS, rng)?;
        Ok(report.counterexample.map(|c| format!("{f:?}: {c}")))
    })?);
    Ok(out)
}

/// Games with at most this many (step, state) cells are checked on every
/// deterministic Markov policy.
pub const SAT_EXHAUSTIVE_BITS: u32 = 16;
const SAT_FILL_INS: usize = 4;

fn hash_slice(h: &[u32]) -> u64 {
    h.iter().fold(0xcbf2_9ce4_8422_2325u64, |acc, &x| (acc ^ x as u64).wrapping_mul(0x100_0000_01b3))
}

fn compare_laws(a: &BTreeMap<Vec<u32>, f64>, b: &BTreeMap<Vec<u32>, f64>) -> Option<String> {
    for (t, p) in a {
        let q = b.get(t).copied().unwrap_or(0.0);
        if (p - q).abs() > 1e-9 {
            return Some(format!("trajectory {t:?}: direct {p}, via game {q}"));
        }
    }
    b.iter()
        .find(|(t, q)| !a.contains_key(*t) && **q > 1e-9)
        .map(|(t, q)| format!("trajectory {t:?} has mass {q} only via the game"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let opts = VerifyOptions {
            trials: 10,
            ..VerifyOptions::default()
        };
        for r in run_suite(Suite::All, &opts).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn negative_bonus_is_caught() {
        let opts = VerifyOptions {
            trials: 10,
            fault: Some(Fault::NegativeBonus),
            ..VerifyOptions::default()
        };
        let results = run_suite(Suite::Optimism, &opts).unwrap();
        assert!(!results[0].passed());
        assert!(results[0].to_string().contains("counterexample"));
    }
}
