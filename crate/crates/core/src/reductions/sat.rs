//! 3-CNF formulas, DIMACS input, and the Markov game whose clause-playing
//! opponents score an assignment clause by clause.
//!
//! States are `s_1, ..., s_n` (indices `0..n`), `T = n` and `F = n + 1`, and
//! the horizon is `n`. At `s_i` the learner sets `x_i`; if that satisfies the
//! opponent's clause the game moves to `T`, otherwise to `s_{i+1}` (or `F`
//! after the last variable). `T` and `F` are absorbing. The last step pays 1
//! in `T`, and at `s_n` pays 1 exactly when `x_n` satisfies the clause, so
//! the value against `nu_j` is the satisfaction of clause `j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::learners::Learner;
use crate::policy::{GeneralPolicy, MarkovPolicy, Side};
use crate::rng::{rng_from_seed, SimRng};
use crate::trajectory::sample_episode;

/// A 3-CNF formula. Literals are DIMACS style: `+i` is `x_i`, `-i` is its
/// negation, `1 <= i <= num_vars`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub clauses: Vec<[i32; 3]>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<[i32; 3]>) -> Result<Self> {
        let f = CnfFormula { num_vars, clauses };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_vars == 0 {
            return Err(Error::InvalidArgument("formula needs at least one variable".into()));
        }
        if self.clauses.is_empty() {
            return Err(Error::InvalidArgument("formula needs at least one clause".into()));
        }
        for (j, c) in self.clauses.iter().enumerate() {
            for &lit in c {
                if lit == 0 || lit.unsigned_abs() as usize > self.num_vars {
                    return Err(Error::InvalidArgument(format!(
                        "clause {} has literal {lit} outside 1..={}",
                        j + 1,
                        self.num_vars
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// True if setting `x_var = value` (1-based `var`) satisfies clause `j`.
    pub fn literal_hit(&self, j: usize, var: usize, value: bool) -> bool {
        self.clauses[j]
            .iter()
            .any(|&lit| lit.unsigned_abs() as usize == var && (lit > 0) == value)
    }

    /// `assignment[i]` is the value of `x_{i+1}`.
    pub fn clause_satisfied(&self, j: usize, assignment: &[bool]) -> bool {
        self.clauses[j]
            .iter()
            .any(|&lit| assignment[lit.unsigned_abs() as usize - 1] == (lit > 0))
    }

    pub fn satisfied(&self, assignment: &[bool]) -> bool {
        (0..self.num_clauses()).all(|j| self.clause_satisfied(j, assignment))
    }

    /// A satisfying assignment by exhaustive search, if one exists.
    pub fn brute_force(&self) -> Option<Vec<bool>> {
        assert!(self.num_vars < 32, "brute force is limited to fewer than 32 variables");
        (0u64..1 << self.num_vars)
            .map(|bits| assignment_from_bits(bits, self.num_vars))
            .find(|x| self.satisfied(x))
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.num_vars, self.num_clauses());
        for c in &self.clauses {
            out.push_str(&format!("{} {} {} 0\n", c[0], c[1], c[2]));
        }
        out
    }
}

/// Bit `i` of `bits` is the value of `x_{i+1}`.
pub fn assignment_from_bits(bits: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

/// Parses DIMACS CNF. Comment lines start with `c`; a `%` line ends the
/// input. Clauses may span lines and must end with `0`. Clauses with one or
/// two literals are padded by repeating their last literal.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current: Vec<i32> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(Error::Parse(format!("line {}: duplicate header", lineno + 1)));
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                ["p", "cnf", n, m] => n.parse().ok().zip(m.parse().ok()),
                _ => None,
            };
            match parsed {
                Some(nm) => header = Some(nm),
                None => return Err(Error::Parse(format!("line {}: expected 'p cnf <vars> <clauses>'", lineno + 1))),
            }
            continue;
        }
        let Some((n, _)) = header else {
            return Err(Error::Parse(format!("line {}: clause before the 'p cnf' header", lineno + 1)));
        };
        for tok in line.split_whitespace() {
            let lit: i32 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad literal {tok:?}", lineno + 1)))?;
            if lit == 0 {
                clauses.push(pad_clause(&current, lineno + 1)?);
                current.clear();
            } else {
                if lit.unsigned_abs() as usize > n {
                    return Err(Error::Parse(format!(
                        "line {}: literal {lit} exceeds the declared {n} variables",
                        lineno + 1
                    )));
                }
                current.push(lit);
            }
        }
    }
    let Some((n, m)) = header else {
        return Err(Error::Parse("missing 'p cnf' header".into()));
    };
    if !current.is_empty() {
        return Err(Error::Parse("last clause is not terminated by 0".into()));
    }
    if clauses.len() != m {
        return Err(Error::Parse(format!("header declares {m} clauses, found {}", clauses.len())));
    }
    CnfFormula::new(n, clauses).map_err(|e| Error::Parse(e.to_string()))
}

fn pad_clause(lits: &[i32], lineno: usize) -> Result<[i32; 3]> {
    match *lits {
        [a] => Ok([a, a, a]),
        [a, b] => Ok([a, b, b]),
        [a, b, c] => Ok([a, b, c]),
        [] => Err(Error::Parse(format!("line {lineno}: empty clause"))),
        _ => Err(Error::Parse(format!("line {lineno}: clause has more than 3 literals"))),
    }
}

/// The game and the clause opponents `nu_j`, which play `j` everywhere.
#[derive(Debug, Clone)]
pub struct SatReduction {
    pub game: MarkovGame,
    pub opponents: Vec<GeneralPolicy>,
    pub formula: CnfFormula,
}

impl SatReduction {
    pub fn true_state(&self) -> usize {
        self.formula.num_vars
    }

    pub fn false_state(&self) -> usize {
        self.formula.num_vars + 1
    }

    /// The deterministic Markov policy setting `x_i = assignment[i - 1]` at
    /// `s_i` (and action 0 elsewhere).
    pub fn assignment_policy(&self, assignment: &[bool]) -> Result<MarkovPolicy> {
        let n = self.formula.num_vars;
        let d = self.game.dims();
        let actions: Vec<usize> = (0..d.horizon)
            .flat_map(|h| (0..d.num_states).map(move |s| (h, s)))
            .map(|(h, s)| if s == h && s < n { assignment[s] as usize } else { 0 })
            .collect();
        MarkovPolicy::deterministic(d, Side::Max, &actions)
    }

    /// The assignment a deterministic Markov policy induces: `x_i = mu(s_i)`
    /// at the step where `s_i` is reachable.
    pub fn induced_assignment(&self, mu: &MarkovPolicy) -> Option<Vec<bool>> {
        (0..self.formula.num_vars)
            .map(|i| mu.action_at(i, i).map(|a| a == 1))
            .collect()
    }
}

pub fn sat_to_mg(formula: &CnfFormula) -> Result<SatReduction> {
    formula.validate()?;
    let n = formula.num_vars;
    let (t_state, f_state) = (n, n + 1);
    let dims = GameDims {
        num_states: n + 2,
        actions_max: 2,
        actions_min: formula.num_clauses(),
        horizon: n,
        initial_state: 0,
    };
    let step = |s: usize, a: usize, j: usize| -> usize {
        if s >= n {
            s
        } else if formula.literal_hit(j, s + 1, a == 1) {
            t_state
        } else if s + 1 < n {
            s + 1
        } else {
            f_state
        }
    };
    let game = MarkovGame::from_fn(
        dims,
        |_, s, ja, next| if step(s, ja.a_max, ja.a_min) == next { 1.0 } else { 0.0 },
        |h, s, ja| {
            let last = h + 1 == n;
            if last && (s == t_state || (s == n - 1 && formula.literal_hit(ja.a_min, n, ja.a_max == 1))) {
                1.0
            } else {
                0.0
            }
        },
    )?;
    let opponents = (0..formula.num_clauses())
        .map(|j| {
            MarkovPolicy::constant(dims, Side::Min, j).map(|p| p.into_general().with_label(&format!("clause-{}", j + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SatReduction {
        game,
        opponents,
        formula: formula.clone(),
    })
}

/// Outcome of [`check_value_identity`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityReport {
    /// Number of Markov policies evaluated against every clause.
    pub policies_checked: usize,
    /// True if every deterministic Markov policy was enumerated.
    pub exhaustive: bool,
    pub counterexample: Option<String>,
}

/// Checks `V^{mu, nu_j} = 1[x(mu) satisfies clause j]` for deterministic
/// Markov `mu`.
///
/// When `|A_max|^{S H} <= 2^full_limit_bits` every policy is enumerated.
/// Otherwise the `n` entries `(h = i, s_i)` run over all `2^n` assignments
/// and the remaining entries are filled in at random, `fill_ins` times per
/// assignment; the check then also verifies that every remaining `(h, s)` is
/// unreachable or has action-independent rewards and transitions, so the
/// value cannot depend on those entries.
pub fn check_value_identity(
    r: &SatReduction,
    full_limit_bits: u32,
    fill_ins: usize,
    rng: &mut SimRng,
) -> Result<IdentityReport> {
    let d = r.game.dims();
    let n = r.formula.num_vars;
    let cells = d.horizon * d.num_states;
    let check = |mu: &MarkovPolicy| -> Result<Option<String>> {
        let x = r.induced_assignment(mu).expect("deterministic policy");
        for (j, nu) in r.opponents.iter().enumerate() {
            let v = crate::value::exact_value_markov(&r.game, mu, nu.as_markov().expect("clause policies are Markov"))?;
            let expected = if r.formula.clause_satisfied(j, &x) { 1.0 } else { 0.0 };
            if v != expected {
                return Ok(Some(format!(
                    "assignment {x:?}, clause {} {:?}: value {v}, expected {expected}",
                    j + 1,
                    r.formula.clauses[j]
                )));
            }
        }
        Ok(None)
    };
    let mut report = IdentityReport {
        policies_checked: 0,
        exhaustive: cells as u32 <= full_limit_bits,
        counterexample: None,
    };
    if report.exhaustive {
        for bits in 0u64..1 << cells {
            let actions: Vec<usize> = (0..cells).map(|i| (bits >> (cells - 1 - i) & 1) as usize).collect();
            let mu = MarkovPolicy::deterministic(d, Side::Max, &actions)?;
            report.policies_checked += 1;
            if let Some(c) = check(&mu)? {
                report.counterexample = Some(c);
                return Ok(report);
            }
        }
        return Ok(report);
    }
    if let Some(c) = irrelevant_cells_violation(r) {
        report.counterexample = Some(c);
        return Ok(report);
    }
    for bits in 0u64..1 << n {
        let x = assignment_from_bits(bits, n);
        for _ in 0..fill_ins {
            let actions: Vec<usize> = (0..d.horizon)
                .flat_map(|h| (0..d.num_states).map(move |s| (h, s)))
                .map(|(h, s)| if s == h && s < n { x[s] as usize } else { rng.gen_range(0..2) })
                .collect();
            let mu = MarkovPolicy::deterministic(d, Side::Max, &actions)?;
            report.policies_checked += 1;
            if let Some(c) = check(&mu)? {
                report.counterexample = Some(c);
                return Ok(report);
            }
        }
    }
    Ok(report)
}

/// Describes an `(h, s)` other than `(i, s_i)` that is reachable and whose
/// reward or transition depends on the learner's action, if any.
fn irrelevant_cells_violation(r: &SatReduction) -> Option<String> {
    let d = r.game.dims();
    let n = r.formula.num_vars;
    let mut reach = vec![false; d.num_states];
    reach[d.initial_state] = true;
    for h in 0..d.horizon {
        let mut next = vec![false; d.num_states];
        for s in 0..d.num_states {
            if !reach[s] {
                continue;
            }
            for joint in 0..d.joint_actions() {
                for (s2, &p) in r.game.next_state_dist(h, s, joint).iter().enumerate() {
                    if p > 0.0 {
                        next[s2] = true;
                    }
                }
            }
            if s == h && s < n {
                continue;
            }
            for b in 0..d.actions_min {
                let j0 = d.joint_index(0, b);
                for a in 1..d.actions_max {
                    let j = d.joint_index(a, b);
                    if r.game.reward(h, s, j) != r.game.reward(h, s, j0)
                        || r.game.next_state_dist(h, s, j) != r.game.next_state_dist(h, s, j0)
                    {
                        return Some(format!("step {} state {s} is reachable and action-dependent", h + 1));
                    }
                }
            }
        }
        reach = next;
    }
    None
}

/// A uniformly random 3-CNF formula; literals within a clause may repeat.
pub fn random_3cnf(num_vars: usize, num_clauses: usize, rng: &mut SimRng) -> CnfFormula {
    let clauses = (0..num_clauses)
        .map(|_| {
            let mut c = [0i32; 3];
            for lit in c.iter_mut() {
                let v = rng.gen_range(1..=num_vars) as i32;
                *lit = if rng.gen::<bool>() { v } else { -v };
            }
            c
        })
        .collect();
    CnfFormula { num_vars, clauses }
}

/// `(1 - 1/(2m)) T`.
pub fn sat_threshold(num_clauses: usize, episodes: usize) -> f64 {
    (1.0 - 1.0 / (2.0 * num_clauses as f64)) * episodes as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatDecision {
    pub decision: bool,
    pub total_reward: f64,
    pub episodes: usize,
    pub threshold: f64,
}

/// Runs `learner` for `episodes` episodes against a clause opponent drawn
/// uniformly each episode and compares the realized total with the
/// threshold.
pub fn sat_decision_experiment(
    reduction: &SatReduction,
    learner: &mut dyn Learner,
    episodes: usize,
    seed: u64,
) -> Result<SatDecision> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let m = reduction.formula.num_clauses();
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for k in 1..=episodes {
        let mu = learner.select(&mut rng).map_err(|e| e.at_episode(k))?;
        let nu = &reduction.opponents[rng.gen_range(0..m)];
        let traj = sample_episode(&reduction.game, &mu, nu, &mut rng).map_err(|e| e.at_episode(k))?;
        total += traj.realized_return();
        learner.update(nu, &traj, k).map_err(|e| e.at_episode(k))?;
    }
    let threshold = sat_threshold(m, episodes);
    Ok(SatDecision {
        decision: total > threshold,
        total_reward: total,
        episodes,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::FixedLearner;
    use crate::testkit::all_deterministic_markov;
    use crate::value::exact_value_markov;

    fn value(r: &SatReduction, mu: &MarkovPolicy, j: usize) -> f64 {
        exact_value_markov(&r.game, mu, r.opponents[j].as_markov().unwrap()).unwrap()
    }

    #[test]
    fn single_clause_examples() {
        let f = CnfFormula::new(3, vec![[1, 2, -3]]).unwrap();
        let r = sat_to_mg(&f).unwrap();
        assert_eq!(r.game.num_states(), 5);
        let sat = r.assignment_policy(&[true, false, false]).unwrap();
        let unsat = r.assignment_policy(&[false, false, true]).unwrap();
        assert_eq!(value(&r, &sat, 0), 1.0);
        assert_eq!(value(&r, &unsat, 0), 0.0);
    }

    #[test]
    fn value_identity_on_every_markov_policy() {
        let f = CnfFormula::new(2, vec![[1, 1, 2], [-1, -2, -2], [2, 2, 2]]).unwrap();
        let r = sat_to_mg(&f).unwrap();
        let all = all_deterministic_markov(r.game.dims(), Side::Max);
        assert_eq!(all.len(), 1 << 8);
        for mu in &all {
            let x = r.induced_assignment(mu).unwrap();
            for j in 0..3 {
                let expected = if f.clause_satisfied(j, &x) { 1.0 } else { 0.0 };
                assert_eq!(value(&r, mu, j), expected);
            }
        }
    }

    #[test]
    fn contradiction_caps_expected_reward() {
        let f = parse_dimacs("p cnf 1 2\n1 0\n-1 0\n").unwrap();
        assert_eq!(f.clauses, vec![[1, 1, 1], [-1, -1, -1]]);
        let r = sat_to_mg(&f).unwrap();
        for mu in all_deterministic_markov(r.game.dims(), Side::Max) {
            let avg = (value(&r, &mu, 0) + value(&r, &mu, 1)) / 2.0;
            assert!(avg <= 1.0 - 1.0 / 2.0);
        }
        assert!(f.brute_force().is_none());
    }

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(sat_threshold(2, 100), 75.0);
        assert!(80.0 > sat_threshold(2, 100));
    }

    #[test]
    fn oracle_learner_decides_true() {
        let f = CnfFormula::new(3, vec![[1, 2, -3], [-1, 2, 3]]).unwrap();
        let x = f.brute_force().unwrap();
        let r = sat_to_mg(&f).unwrap();
        let mut l = FixedLearner::new(r.assignment_policy(&x).unwrap().into_general());
        let d = sat_decision_experiment(&r, &mut l, 50, 3).unwrap();
        assert!(d.decision);
        assert_eq!(d.total_reward, 50.0);
    }

    #[test]
    fn dimacs_parsing() {
        let f = parse_dimacs("c hello\np cnf 3 2\n1 -2\n 3 0 -1 0\n%\n0\n").unwrap();
        assert_eq!(f.clauses, vec![[1, -2, 3], [-1, -1, -1]]);
        assert!(parse_dimacs("p cnf x 2\n").is_err());
        assert!(parse_dimacs("1 2 3 0\n").is_err());
        assert!(parse_dimacs("p cnf 2 1\n1 2 3 0\n").is_err());
        assert!(parse_dimacs("p cnf 4 1\n1 2 3 4 0\n").is_err());
        assert!(parse_dimacs("p cnf 3 2\n1 2 3 0\n").is_err());
        assert!(parse_dimacs("p cnf 3 1\n1 2 3\n").is_err());
        let round = parse_dimacs(&f.to_dimacs()).unwrap();
        assert_eq!(round, f);
    }
}
