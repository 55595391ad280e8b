//! Markov and general (history-dependent) policies.
//!
//! A history prefix is encoded as a flat `&[u32]` slice that interleaves states
//! and joint-action indices: `[s_1, j_1, s_2, j_2, ..., s_h]`. Its 0-based step
//! is `len / 2` and its current state is the last element.
//!
//! Every policy carries a canonical [`PolicyId`], a hash of its full decision
//! table. Markov policies hash their state-indexed table; history-indexed
//! policies hash the list of histories (in lexicographic order) at which they
//! deviate from the default point mass on action 0, so a lookup table and a
//! closure with identical behaviour on the game tree share an id.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};
use crate::guard::NodeBudget;

/// Tolerance on policy row sums.
pub const DIST_TOL: f64 = 1e-12;
/// Looser tolerance applied to distributions produced by closures at runtime.
pub const FN_DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Max,
    Min,
}

impl Side {
    pub fn num_actions(self, dims: &GameDims) -> usize {
        match self {
            Side::Max => dims.actions_max,
            Side::Min => dims.actions_min,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Side::Max => 0,
            Side::Min => 1,
        }
    }
}

/// Structural identity of a policy.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyId(pub u64);

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolicyId({self})")
    }
}

fn finish_id(hasher: Sha256) -> PolicyId {
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    PolicyId(u64::from_le_bytes(bytes))
}

fn hash_header(hasher: &mut Sha256, kind: &str, side: Side, dims: &GameDims) {
    hasher.update(kind.as_bytes());
    hasher.update([side.tag()]);
    for v in [
        dims.num_states,
        dims.actions_max,
        dims.actions_min,
        dims.horizon,
        dims.initial_state,
    ] {
        hasher.update((v as u64).to_le_bytes());
    }
}

fn hash_entry(hasher: &mut Sha256, history: &[u32], dist: &[f64]) {
    hasher.update((history.len() as u64).to_le_bytes());
    for &x in history {
        hasher.update(x.to_le_bytes());
    }
    for &p in dist {
        hasher.update(p.to_bits().to_le_bytes());
    }
}

pub(crate) fn check_dist(dist: &[f64], len: usize, tol: f64) -> std::result::Result<(), String> {
    if dist.len() != len {
        return Err(format!("distribution has {} entries, expected {len}", dist.len()));
    }
    let mut sum = 0.0;
    for &p in dist {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(format!("invalid probability {p}"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

fn one_hots(n: usize) -> Arc<[Vec<f64>]> {
    (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        })
        .collect()
}

/// `mu_h(. | s)` for one player, stored flat as `[h][s][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    dims: GameDims,
    side: Side,
    probs: Vec<f64>,
}

impl MarkovPolicy {
    pub fn new(dims: GameDims, side: Side, probs: Vec<f64>) -> Result<Self> {
        let n = side.num_actions(&dims);
        let rows = dims.horizon * dims.num_states;
        if probs.len() != rows * n {
            return Err(Error::PolicyFault(format!(
                "Markov table has {} entries, expected {}",
                probs.len(),
                rows * n
            )));
        }
        for (row, chunk) in probs.chunks(n).enumerate() {
            check_dist(chunk, n, DIST_TOL).map_err(|e| {
                Error::PolicyFault(format!(
                    "row (h={}, s={}): {e}",
                    row / dims.num_states + 1,
                    row % dims.num_states
                ))
            })?;
        }
        Ok(MarkovPolicy { dims, side, probs })
    }

    pub fn uniform(dims: GameDims, side: Side) -> Self {
        let n = side.num_actions(&dims);
        let probs = vec![1.0 / n as f64; dims.horizon * dims.num_states * n];
        MarkovPolicy { dims, side, probs }
    }

    /// Deterministic policy from one action per `(h, s)`, step-major.
    pub fn deterministic(dims: GameDims, side: Side, actions: &[usize]) -> Result<Self> {
        let n = side.num_actions(&dims);
        if actions.len() != dims.horizon * dims.num_states {
            return Err(Error::PolicyFault(format!(
                "expected {} actions, got {}",
                dims.horizon * dims.num_states,
                actions.len()
            )));
        }
        let mut probs = vec![0.0; actions.len() * n];
        for (row, &a) in actions.iter().enumerate() {
            if a >= n {
                return Err(Error::OutOfRange(format!("action {a} with {n} actions")));
            }
            probs[row * n + a] = 1.0;
        }
        Ok(MarkovPolicy { dims, side, probs })
    }

    /// Plays `action` at every step and state.
    pub fn constant(dims: GameDims, side: Side, action: usize) -> Result<Self> {
        Self::deterministic(dims, side, &vec![action; dims.horizon * dims.num_states])
    }

    /// Builds a policy row by row from `f(h, s)`.
    pub fn from_fn(
        dims: GameDims,
        side: Side,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::new();
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                probs.extend(f(h, s));
            }
        }
        Self::new(dims, side, probs)
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn num_actions(&self) -> usize {
        self.side.num_actions(&self.dims)
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let n = self.num_actions();
        let start = (h * self.dims.num_states + s) * n;
        &self.probs[start..start + n]
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// The action of a deterministic row, if the row is a point mass.
    pub fn action_at(&self, h: usize, s: usize) -> Option<usize> {
        let row = self.row(h, s);
        row.iter().position(|&p| p == 1.0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn canonical_id(&self) -> PolicyId {
        let mut hasher = Sha256::new();
        hash_header(&mut hasher, "markov", self.side, &self.dims);
        for &p in &self.probs {
            hasher.update(p.to_bits().to_le_bytes());
        }
        finish_id(hasher)
    }

    pub fn into_general(self) -> GeneralPolicy {
        GeneralPolicy::from_markov(self)
    }
}

type PolicyFn = dyn Fn(&[u32]) -> Vec<f64> + Send + Sync;

enum Body {
    Markov(MarkovPolicy),
    /// Deterministic decisions; histories absent from the map play action 0.
    Table(HashMap<Vec<u32>, u32>),
    /// The flag records whether every materialized decision is a point mass.
    Func(Arc<PolicyFn>, bool),
}

/// A possibly history-dependent policy with a canonical identity.
///
/// Cloning is cheap: the decision table is shared.
#[derive(Clone)]
pub struct GeneralPolicy {
    dims: GameDims,
    side: Side,
    id: PolicyId,
    label: Arc<str>,
    body: Arc<Body>,
    one_hots: Arc<[Vec<f64>]>,
}

impl fmt::Debug for GeneralPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &*self.body {
            Body::Markov(_) => "markov",
            Body::Table(_) => "table",
            Body::Func(..) => "fn",
        };
        f.debug_struct("GeneralPolicy")
            .field("id", &self.id)
            .field("side", &self.side)
            .field("kind", &kind)
            .field("label", &self.label)
            .finish()
    }
}

impl PartialEq for GeneralPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for GeneralPolicy {}

impl GeneralPolicy {
    pub fn from_markov(policy: MarkovPolicy) -> Self {
        let id = policy.canonical_id();
        let n = policy.num_actions();
        GeneralPolicy {
            dims: policy.dims,
            side: policy.side,
            id,
            label: Arc::from("markov"),
            one_hots: one_hots(n),
            body: Arc::new(Body::Markov(policy)),
        }
    }

    /// Deterministic lookup-table policy; unlisted histories play action 0.
    pub fn from_table(dims: GameDims, side: Side, decisions: HashMap<Vec<u32>, u32>) -> Result<Self> {
        let n = side.num_actions(&dims);
        let mut entries: Vec<(&Vec<u32>, u32)> = Vec::with_capacity(decisions.len());
        for (hist, &a) in &decisions {
            if a as usize >= n {
                return Err(Error::OutOfRange(format!("table action {a} with {n} actions")));
            }
            if a != 0 {
                entries.push((hist, a));
            }
        }
        entries.sort();
        let hots = one_hots(n);
        let mut hasher = Sha256::new();
        hash_header(&mut hasher, "tree", side, &dims);
        for (hist, a) in &entries {
            hash_entry(&mut hasher, hist, &hots[*a as usize]);
        }
        let id = finish_id(hasher);
        let decisions = decisions.into_iter().filter(|(_, a)| *a != 0).collect();
        Ok(GeneralPolicy {
            dims,
            side,
            id,
            label: Arc::from("table"),
            one_hots: hots,
            body: Arc::new(Body::Table(decisions)),
        })
    }

    /// Wraps a closure. The decision table is materialized over the full game
    /// tree rooted at the initial state to validate it and compute the id, so
    /// construction fails if the tree exceeds `guard_nodes`.
    pub fn from_fn(
        dims: GameDims,
        side: Side,
        label: &str,
        guard_nodes: u64,
        f: impl Fn(&[u32]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let n = side.num_actions(&dims);
        let hots = one_hots(n);
        let mut hasher = Sha256::new();
        hash_header(&mut hasher, "tree", side, &dims);
        let mut budget = NodeBudget::new(guard_nodes, "policy materialization (history nodes)");
        let mut hist = vec![dims.initial_state as u32];
        let mut det = true;
        materialize(&dims, n, &f, &hots[0], &mut hist, &mut hasher, &mut budget, &mut det)?;
        Ok(GeneralPolicy {
            dims,
            side,
            id: finish_id(hasher),
            label: Arc::from(label),
            one_hots: hots,
            body: Arc::new(Body::Func(Arc::new(f), det)),
        })
    }

    /// Like [`GeneralPolicy::from_fn`], but materializes only the histories
    /// reachable in `game` under some pair of actions. Use this for closures
    /// that are only meaningful on one game's tree.
    pub fn from_fn_in_game(
        game: &MarkovGame,
        side: Side,
        label: &str,
        guard_nodes: u64,
        f: impl Fn(&[u32]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let dims = game.dims();
        let n = side.num_actions(&dims);
        let hots = one_hots(n);
        let mut hasher = Sha256::new();
        hash_header(&mut hasher, "tree", side, &dims);
        let mut budget = NodeBudget::new(guard_nodes, "policy materialization (history nodes)");
        let mut hist = vec![dims.initial_state as u32];
        let mut det = true;
        materialize_in_game(game, n, &f, &hots[0], &mut hist, &mut hasher, &mut budget, &mut det)?;
        Ok(GeneralPolicy {
            dims,
            side,
            id: finish_id(hasher),
            label: Arc::from(label),
            one_hots: hots,
            body: Arc::new(Body::Func(Arc::new(f), det)),
        })
    }

    pub fn id(&self) -> PolicyId {
        self.id
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Arc::from(label);
        self
    }

    pub fn num_actions(&self) -> usize {
        self.one_hots.len()
    }

    pub fn as_markov(&self) -> Option<&MarkovPolicy> {
        match &*self.body {
            Body::Markov(m) => Some(m),
            _ => None,
        }
    }

    /// Action distribution at history prefix `hist`.
    pub fn probs<'a>(&'a self, hist: &[u32]) -> Result<std::borrow::Cow<'a, [f64]>> {
        use std::borrow::Cow;
        match &*self.body {
            Body::Markov(m) => {
                let h = hist.len() / 2;
                let s = *hist.last().expect("history is never empty") as usize;
                if h >= self.dims.horizon || s >= self.dims.num_states {
                    return Err(Error::PolicyFault(format!(
                        "history (step {}, state {s}) outside the policy's domain",
                        h + 1
                    )));
                }
                Ok(Cow::Borrowed(m.row(h, s)))
            }
            Body::Table(t) => {
                let a = t.get(hist).copied().unwrap_or(0) as usize;
                Ok(Cow::Borrowed(&self.one_hots[a]))
            }
            Body::Func(f, _) => {
                let dist = f(hist);
                check_dist(&dist, self.num_actions(), FN_DIST_TOL).map_err(|e| {
                    Error::PolicyFault(format!("policy '{}' at history {hist:?}: {e}", self.label))
                })?;
                Ok(Cow::Owned(dist))
            }
        }
    }

    /// True if every decision is a point mass on the tree materialized at
    /// construction.
    pub fn is_deterministic(&self) -> Result<bool> {
        match &*self.body {
            Body::Markov(m) => Ok(m.is_deterministic()),
            Body::Table(_) => Ok(true),
            Body::Func(_, det) => Ok(*det),
        }
    }
}

fn materialize(
    dims: &GameDims,
    n: usize,
    f: &dyn Fn(&[u32]) -> Vec<f64>,
    default: &[f64],
    hist: &mut Vec<u32>,
    hasher: &mut Sha256,
    budget: &mut NodeBudget,
    det: &mut bool,
) -> Result<()> {
    budget.tick()?;
    let dist = f(hist);
    check_dist(&dist, n, FN_DIST_TOL)
        .map_err(|e| Error::PolicyFault(format!("at history {hist:?}: {e}")))?;
    *det &= dist.iter().all(|&p| p == 0.0 || p == 1.0);
    if dist.as_slice() != default {
        hash_entry(hasher, hist, &dist);
    }
    let h = hist.len() / 2;
    if h + 1 < dims.horizon {
        for j in 0..dims.joint_actions() {
            for s in 0..dims.num_states {
                hist.push(j as u32);
                hist.push(s as u32);
                materialize(dims, n, f, default, hist, hasher, budget, det)?;
                hist.truncate(hist.len() - 2);
            }
        }
    }
    Ok(())
}

fn materialize_in_game(
    game: &MarkovGame,
    n: usize,
    f: &dyn Fn(&[u32]) -> Vec<f64>,
    default: &[f64],
    hist: &mut Vec<u32>,
    hasher: &mut Sha256,
    budget: &mut NodeBudget,
    det: &mut bool,
) -> Result<()> {
    budget.tick()?;
    let dims = game.dims();
    let dist = f(hist);
    check_dist(&dist, n, FN_DIST_TOL)
        .map_err(|e| Error::PolicyFault(format!("at history {hist:?}: {e}")))?;
    *det &= dist.iter().all(|&p| p == 0.0 || p == 1.0);
    if dist.as_slice() != default {
        hash_entry(hasher, hist, &dist);
    }
    let h = hist.len() / 2;
    if h + 1 < dims.horizon {
        let s = *hist.last().unwrap() as usize;
        for j in 0..dims.joint_actions() {
            for (next, &p) in game.next_state_dist(h, s, j).iter().enumerate() {
                if p > 0.0 {
                    hist.push(j as u32);
                    hist.push(next as u32);
                    materialize_in_game(game, n, f, default, hist, hasher, budget, det)?;
                    hist.truncate(hist.len() - 2);
                }
            }
        }
    }
    Ok(())
}

/// A distribution over a finite list of policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedWeights(Vec<f64>);

impl MixedWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyClass);
        }
        check_dist(&weights, weights.len(), DIST_TOL)
            .map_err(|e| Error::InvalidArgument(format!("mixture weights: {e}")))?;
        Ok(MixedWeights(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyClass);
        }
        Ok(MixedWeights(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for MixedWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MixedWeights::new(v)
    }
}

impl From<MixedWeights> for Vec<f64> {
    fn from(w: MixedWeights) -> Self {
        w.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> GameDims {
        GameDims {
            num_states: 2,
            actions_max: 2,
            actions_min: 3,
            horizon: 2,
            initial_state: 0,
        }
    }

    #[test]
    fn markov_rows_must_be_distributions() {
        let bad = MarkovPolicy::new(dims(), Side::Max, vec![0.5, 0.6, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(bad.is_err());
        let ok = MarkovPolicy::new(dims(), Side::Max, vec![0.5, 0.5, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(ok.is_ok());
    }

    #[test]
    fn markov_embedding_ignores_history_before_current_state() {
        let m = MarkovPolicy::deterministic(dims(), Side::Min, &[0, 1, 2, 1]).unwrap();
        let g = m.into_general();
        assert_eq!(&*g.probs(&[0]).unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(&*g.probs(&[0, 3, 1]).unwrap(), &[0.0, 1.0, 0.0]);
        assert_eq!(&*g.probs(&[1, 5, 1]).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn table_and_closure_with_same_behaviour_share_an_id() {
        let d = dims();
        let mut table = HashMap::new();
        table.insert(vec![0, 2, 1], 1u32);
        table.insert(vec![0, 0, 0], 0u32);
        let t = GeneralPolicy::from_table(d, Side::Max, table).unwrap();
        let f = GeneralPolicy::from_fn(d, Side::Max, "f", 1000, |h| {
            if h == [0, 2, 1] {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        })
        .unwrap();
        assert_eq!(t.id(), f.id());
        let other = GeneralPolicy::from_fn(d, Side::Max, "g", 1000, |h| {
            if h == [0, 2, 0] {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        })
        .unwrap();
        assert_ne!(t.id(), other.id());
    }

    #[test]
    fn ids_distinguish_sides_and_tables() {
        let d = GameDims { actions_min: 2, ..dims() };
        let a = MarkovPolicy::constant(d, Side::Max, 1).unwrap().canonical_id();
        let b = MarkovPolicy::constant(d, Side::Min, 1).unwrap().canonical_id();
        let c = MarkovPolicy::constant(d, Side::Max, 0).unwrap().canonical_id();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, MarkovPolicy::constant(d, Side::Max, 1).unwrap().canonical_id());
    }

    #[test]
    fn malformed_closure_is_a_policy_fault() {
        let r = GeneralPolicy::from_fn(dims(), Side::Max, "bad", 1000, |_| vec![0.7, 0.7]);
        assert!(matches!(r, Err(Error::PolicyFault(_))));
    }

    #[test]
    fn materialization_respects_guard() {
        let r = GeneralPolicy::from_fn(dims(), Side::Max, "big", 5, |_| vec![1.0, 0.0]);
        assert!(matches!(r, Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn mixed_weights_validation() {
        assert!(MixedWeights::new(vec![0.75, 0.25]).is_ok());
        assert!(MixedWeights::new(vec![0.75, 0.3]).is_err());
        assert!(MixedWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(MixedWeights::new(vec![]).is_err());
    }
}
