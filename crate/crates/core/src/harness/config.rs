//! JSON experiment configuration and the world it describes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::regret::{deterministic_markov_candidates, regret_curves, RegretOptions, RegretSeries};
use super::{run_episodes, RunLog, RunOptions};
use crate::error::{Error, Result};
use crate::estimation::BonusConfig;
use crate::game::{GameDims, GameDoc, MarkovGame};
use crate::guard::Guards;
use crate::learners::{AdaptiveOpExp3, FixedLearner, Learner, ModelKind, OpExp3};
use crate::ope::CoverMode;
use crate::opponents::{
    lmdp_adversary, pomdp_adversary, Cycle, FiniteClassSampler, FixedOpponent, MatchingMemoryAdversary, Opponent,
    Switcher,
};
use crate::policy::{GeneralPolicy, MarkovPolicy, MixedWeights, Side};
use crate::reductions::{
    hard_pomdp_combination_lock, lmdp_to_mg, matching_game, parse_dimacs, pomdp_to_mg, rps_game, sat_to_mg,
    CnfFormula, Lmdp, LmdpReduction, Pomdp, PomdpReduction, SatReduction,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::testkit::{random_game, random_history_policy, random_markov};

/// Which game to play. File variants are replaced by their inline forms
/// when a config is loaded, so a stored config is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    Matching {
        horizon: usize,
    },
    Rps,
    Random {
        num_states: usize,
        actions_max: usize,
        actions_min: usize,
        horizon: usize,
        seed: u64,
    },
    Inline {
        game: GameDoc,
    },
    File {
        path: PathBuf,
    },
    Pomdp {
        pomdp: Pomdp,
    },
    PomdpFile {
        path: PathBuf,
    },
    Lmdp {
        lmdp: Lmdp,
    },
    LmdpFile {
        path: PathBuf,
    },
    CombinationLock {
        horizon: usize,
        seed: u64,
    },
    Sat {
        formula: CnfFormula,
    },
    /// A DIMACS CNF file.
    SatFile {
        path: PathBuf,
    },
}

/// A policy for either player; the side comes from where it is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Constant {
        action: usize,
    },
    Uniform,
    /// One action per `(h, s)`, step-major.
    Deterministic {
        actions: Vec<usize>,
    },
    /// Full `(h, s, a)` probability table, step-major.
    Table {
        probs: Vec<f64>,
    },
    /// A random Markov policy.
    Random {
        seed: u64,
    },
    /// A random history-dependent policy.
    RandomHistory {
        seed: u64,
    },
}

impl PolicySpec {
    pub fn build(&self, dims: GameDims, side: Side) -> Result<GeneralPolicy> {
        Ok(match self {
            PolicySpec::Constant { action } => MarkovPolicy::constant(dims, side, *action)?.into_general(),
            PolicySpec::Uniform => MarkovPolicy::uniform(dims, side).into_general(),
            PolicySpec::Deterministic { actions } => MarkovPolicy::deterministic(dims, side, actions)?.into_general(),
            PolicySpec::Table { probs } => MarkovPolicy::new(dims, side, probs.clone())?.into_general(),
            PolicySpec::Random { seed } => random_markov(dims, side, &mut rng_from_seed(*seed)).into_general(),
            PolicySpec::RandomHistory { seed } => random_history_policy(dims, side, *seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    AllDeterministicMarkov,
    List { policies: Vec<PolicySpec> },
}

impl ClassSpec {
    pub fn build(&self, dims: GameDims, guards: &Guards) -> Result<Vec<GeneralPolicy>> {
        match self {
            ClassSpec::AllDeterministicMarkov => Ok(deterministic_markov_candidates(dims, guards)?
                .into_iter()
                .map(MarkovPolicy::into_general)
                .collect()),
            ClassSpec::List { policies } => policies.iter().map(|p| p.build(dims, Side::Max)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    OpExp3 {
        class: ClassSpec,
        #[serde(default)]
        model: ModelKind,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
    },
    AdaptiveOpExp3 {
        /// Cover radius; defaults to `1 / K`.
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default)]
        cover: CoverMode,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
    },
    Fixed {
        policy: PolicySpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpponentSpec {
    FixedMarkov {
        policy: PolicySpec,
    },
    FiniteClass {
        policies: Vec<PolicySpec>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// `first` through episode `switch_at` (default `K / 2`), then `second`.
    Switcher {
        first: PolicySpec,
        second: PolicySpec,
        #[serde(default)]
        switch_at: Option<usize>,
    },
    Cycle {
        policies: Vec<PolicySpec>,
    },
    MatchingMemory,
    Pomdp,
    Lmdp,
    /// Uniform over the clause opponents of a SAT game.
    SatClauses,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSpec,
    pub learner: LearnerSpec,
    pub opponent: OpponentSpec,
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub guards: Guards,
    /// Record wall-clock micros per episode (makes logs irreproducible).
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub regret: RegretOptions,
    /// Also write `regret_realized.csv`.
    #[serde(default = "default_true")]
    pub realized_regret: bool,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    /// Parses and validates a config. Relative file paths are resolved
    /// against `base_dir` and inlined.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.resolve(base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve(&mut self, base_dir: &Path) -> Result<()> {
        let full = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let parse_err = |p: &Path, e: String| Error::Config(format!("{}: {e}", p.display()));
        self.game = match &self.game {
            GameSpec::File { path } => {
                let p = full(path);
                let doc: GameDoc = serde_json::from_str(&read(&p)?).map_err(|e| parse_err(&p, e.to_string()))?;
                GameSpec::Inline { game: doc }
            }
            GameSpec::PomdpFile { path } => {
                let p = full(path);
                let pomdp = serde_json::from_str(&read(&p)?).map_err(|e| parse_err(&p, e.to_string()))?;
                GameSpec::Pomdp { pomdp }
            }
            GameSpec::LmdpFile { path } => {
                let p = full(path);
                let lmdp = serde_json::from_str(&read(&p)?).map_err(|e| parse_err(&p, e.to_string()))?;
                GameSpec::Lmdp { lmdp }
            }
            GameSpec::SatFile { path } => {
                let p = full(path);
                let formula = parse_dimacs(&read(&p)?).map_err(|e| parse_err(&p, e.to_string()))?;
                GameSpec::Sat { formula }
            }
            other => other.clone(),
        };
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        let needs = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("the {what} opponent needs a {what} game")))
            }
        };
        match self.opponent {
            OpponentSpec::Pomdp => needs("pomdp", matches!(self.game, GameSpec::Pomdp { .. } | GameSpec::CombinationLock { .. }))?,
            OpponentSpec::Lmdp => needs("lmdp", matches!(self.game, GameSpec::Lmdp { .. }))?,
            OpponentSpec::SatClauses => needs("sat", matches!(self.game, GameSpec::Sat { .. }))?,
            _ => {}
        }
        if let LearnerSpec::AdaptiveOpExp3 { epsilon: Some(e), .. } = self.learner {
            if !(e > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn bonus(&self, c: Option<f64>, delta: Option<f64>) -> BonusConfig {
        let mut b = BonusConfig::new(self.episodes);
        if let Some(c) = c {
            b.c = c;
        }
        if let Some(d) = delta {
            b.delta = d;
        }
        b
    }
}

/// The game of a config plus any reduction it came from.
#[derive(Debug, Clone)]
pub struct World {
    pub game: Arc<MarkovGame>,
    pub pomdp: Option<PomdpReduction>,
    pub lmdp: Option<LmdpReduction>,
    pub sat: Option<SatReduction>,
}

impl World {
    fn plain(game: MarkovGame) -> Self {
        World {
            game: Arc::new(game),
            pomdp: None,
            lmdp: None,
            sat: None,
        }
    }
}

pub fn build_world(spec: &GameSpec) -> Result<World> {
    Ok(match spec {
        GameSpec::Matching { horizon } => World::plain(matching_game(*horizon)?),
        GameSpec::Rps => World::plain(rps_game()),
        GameSpec::Random {
            num_states,
            actions_max,
            actions_min,
            horizon,
            seed,
        } => {
            let dims = GameDims {
                num_states: *num_states,
                actions_max: *actions_max,
                actions_min: *actions_min,
                horizon: *horizon,
                initial_state: 0,
            };
            if dims.num_states == 0 || dims.actions_max == 0 || dims.actions_min == 0 || dims.horizon == 0 {
                return Err(Error::Config("random game sizes must be positive".into()));
            }
            World::plain(random_game(dims, &mut rng_from_seed(*seed)))
        }
        GameSpec::Inline { game } => World::plain(MarkovGame::from_doc(game)?),
        GameSpec::Pomdp { pomdp } => pomdp_world(pomdp)?,
        GameSpec::CombinationLock { horizon, seed } => pomdp_world(&hard_pomdp_combination_lock(*horizon, *seed)?.0)?,
        GameSpec::Lmdp { lmdp } => {
            let r = lmdp_to_mg(lmdp)?;
            World {
                game: Arc::new(r.game.clone()),
                pomdp: None,
                lmdp: Some(r),
                sat: None,
            }
        }
        GameSpec::Sat { formula } => {
            let r = sat_to_mg(formula)?;
            World {
                game: Arc::new(r.game.clone()),
                pomdp: None,
                lmdp: None,
                sat: Some(r),
            }
        }
        GameSpec::File { .. } | GameSpec::PomdpFile { .. } | GameSpec::LmdpFile { .. } | GameSpec::SatFile { .. } => {
            return Err(Error::Config("file game specs must be resolved before building".into()))
        }
    })
}

fn pomdp_world(pomdp: &Pomdp) -> Result<World> {
    let r = pomdp_to_mg(pomdp)?;
    Ok(World {
        game: Arc::new(r.game.clone()),
        pomdp: Some(r),
        lmdp: None,
        sat: None,
    })
}

pub fn build_learner(cfg: &ExperimentConfig, world: &World) -> Result<Box<dyn Learner>> {
    let game = world.game.clone();
    let dims = game.dims();
    Ok(match &cfg.learner {
        LearnerSpec::OpExp3 { class, model, c, delta } => {
            let class = class.build(dims, &cfg.guards)?;
            Box::new(OpExp3::new(game, class, &cfg.bonus(*c, *delta), *model, cfg.guards)?)
        }
        LearnerSpec::AdaptiveOpExp3 { epsilon, cover, c, delta } => {
            let eps = epsilon.unwrap_or(1.0 / cfg.episodes as f64);
            Box::new(AdaptiveOpExp3::new(game, &cfg.bonus(*c, *delta), eps, *cover, cfg.guards)?)
        }
        LearnerSpec::Fixed { policy } => Box::new(FixedLearner::new(policy.build(dims, Side::Max)?)),
    })
}

pub fn build_opponent(cfg: &ExperimentConfig, world: &World) -> Result<Box<dyn Opponent>> {
    let game = &world.game;
    let dims = game.dims();
    let seed = derive_seed(cfg.seed, "opponent");
    let build_all = |specs: &[PolicySpec]| -> Result<Vec<GeneralPolicy>> {
        specs.iter().map(|p| p.build(dims, Side::Min)).collect()
    };
    Ok(match &cfg.opponent {
        OpponentSpec::FixedMarkov { policy } => Box::new(FixedOpponent::new(game, policy.build(dims, Side::Min)?)?),
        OpponentSpec::FiniteClass { policies, weights } => {
            let w = weights.clone().map(MixedWeights::new).transpose()?;
            Box::new(FiniteClassSampler::new(game, build_all(policies)?, w, seed)?)
        }
        OpponentSpec::Switcher {
            first,
            second,
            switch_at,
        } => Box::new(Switcher::new(
            game,
            first.build(dims, Side::Min)?,
            second.build(dims, Side::Min)?,
            switch_at.unwrap_or(cfg.episodes / 2),
        )?),
        OpponentSpec::Cycle { policies } => Box::new(Cycle::new(game, build_all(policies)?)?),
        OpponentSpec::MatchingMemory => Box::new(MatchingMemoryAdversary::new(game, seed)?),
        OpponentSpec::Pomdp => {
            let r = world.pomdp.as_ref().ok_or_else(|| Error::Config("not a POMDP game".into()))?;
            Box::new(pomdp_adversary(r, &cfg.guards)?)
        }
        OpponentSpec::Lmdp => {
            let r = world.lmdp.as_ref().ok_or_else(|| Error::Config("not an LMDP game".into()))?;
            Box::new(lmdp_adversary(r, seed)?)
        }
        OpponentSpec::SatClauses => {
            let r = world.sat.as_ref().ok_or_else(|| Error::Config("not a SAT game".into()))?;
            Box::new(FiniteClassSampler::new(game, r.opponents.clone(), None, seed)?)
        }
    })
}

/// A finished run: its log, regret series, and the resolved config.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub log: RunLog,
    pub regret: RegretSeries,
}

/// Builds the world, plays the episodes, and computes regret. Deterministic
/// in the config (with `timing` off).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let world = build_world(&cfg.game)?;
    let mut learner = build_learner(cfg, &world)?;
    let mut opponent = build_opponent(cfg, &world)?;
    let options = RunOptions {
        guards: cfg.guards,
        timing: cfg.timing,
    };
    let log = run_episodes(&world.game, learner.as_mut(), opponent.as_mut(), cfg.episodes, cfg.seed, &options)?;
    let regret = regret_curves(&world.game, &log.records, &log.revealed, &cfg.regret, &cfg.guards)?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        log,
        regret,
    })
}
