//! `mglab`: run experiments, verify invariants, emit covers, decide SAT.
//!
//! Exit codes:
//! - 0: success
//! - 1: a verified property failed
//! - 2: configuration, input, or runtime error
//! - 3: a size guard was exceeded

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use mglab::cover::{grid_resolution, grid_size, simplex_cover};
use mglab::estimation::BonusConfig;
use mglab::harness::{
    read_episode_csv, run_experiment, sha256_hex, write_outputs, ClassSpec, ExperimentConfig, Manifest,
    MANIFEST_FORMAT,
};
use mglab::learners::{AdaptiveOpExp3, FixedLearner, Learner, ModelKind, OpExp3};
use mglab::ope::CoverMode;
use mglab::reductions::{parse_dimacs, sat_decision_experiment, sat_to_mg};
use mglab::verify::{run_suite, Fault, Suite, VerifyOptions};
use mglab::{Error, Guards, MarkovPolicy, Side};

const EXIT_PROPERTY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_GUARD: u8 = 3;

#[derive(Parser)]
#[command(name = "mglab", version, about = "Regret experiments for tabular zero-sum Markov games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write episodes.csv, regret.csv and manifest.json.
    Run(RunArgs),
    /// Run randomized invariant suites.
    Verify(VerifyArgs),
    /// Print the composition grid covering the k-simplex as JSON.
    Cover(CoverArgs),
    /// Decide satisfiability of a 3-CNF formula by running a learner.
    Sat(SatArgs),
    /// Summarize a config, manifest, or episode CSV.
    Inspect(InspectArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the config recorded in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compute only this hindsight baseline.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Run seeds seed, seed+1, ..., seed+N-1 concurrently into `<out>/seed-<s>`.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Markov,
    General,
}

#[derive(Parser)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberately break a component to check that the suites notice.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Ope,
    Optimism,
    Cover,
    Pomdp,
    Lmdp,
    Sat,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    NegativeBonus,
}

#[derive(Parser)]
struct CoverArgs {
    /// Simplex dimension.
    #[arg(long)]
    k: usize,
    /// l1 radius.
    #[arg(long)]
    eps: f64,
    /// Only print the grid size.
    #[arg(long)]
    count: bool,
}

#[derive(Parser)]
struct SatArgs {
    #[arg(long)]
    dimacs: PathBuf,
    #[arg(long, value_enum, default_value_t = SatLearner::OpExp3)]
    learner: SatLearner,
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SatLearner {
    /// Plays a satisfying assignment found by enumeration, or all-false.
    BruteForce,
    /// OP-EXP3 over all deterministic Markov policies.
    OpExp3,
    /// Adaptive OP-EXP3 with cover radius 1/T.
    Adaptive,
    /// Uniformly random actions.
    Uniform,
}

#[derive(Parser)]
struct InspectArgs {
    /// A config or manifest (.json) or an episode log (.csv).
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Cover(a) => cmd_cover(a),
        Command::Sat(a) => cmd_sat(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_guard() { EXIT_GUARD } else { EXIT_CONFIG })
        }
    }
}

fn guards(base: Guards) -> mglab::Result<Guards> {
    base.with_env_override()
}

fn cmd_run(a: RunArgs) -> mglab::Result<u8> {
    let mut cfg = match (&a.config, &a.manifest) {
        (Some(p), _) => ExperimentConfig::from_path(p)?,
        (None, Some(p)) => Manifest::from_path(p)?.config,
        (None, None) => unreachable!("clap requires one of --config and --manifest"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.baseline {
        cfg.regret.markov = matches!(b, Baseline::Markov);
        cfg.regret.general = matches!(b, Baseline::General);
    }
    cfg.guards = guards(cfg.guards)?;
    if a.parallel == 0 {
        return Err(Error::Config("--parallel must be at least 1".into()));
    }
    let out = a.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if a.parallel == 1 {
        run_one(&cfg, &out)?;
        return Ok(0);
    }
    let results: Vec<mglab::Result<()>> = (0..a.parallel as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            run_one(&c, &out.join(format!("seed-{}", c.seed)))
        })
        .collect();
    // Report a guard violation ahead of other errors.
    let mut first: Option<Error> = None;
    for e in results.into_iter().filter_map(|r| r.err()) {
        if first.as_ref().is_none_or(|f| !f.is_guard() && e.is_guard()) {
            first = Some(e);
        }
    }
    first.map_or(Ok(0), Err)
}

fn run_one(cfg: &ExperimentConfig, out: &Path) -> mglab::Result<()> {
    let result = run_experiment(cfg)?;
    let manifest = write_outputs(out, &result)?;
    eprintln!(
        "seed {}: {} episodes, wrote {} ({} files)",
        manifest.seed,
        manifest.episodes,
        out.display(),
        manifest.outputs.len() + 1
    );
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> mglab::Result<u8> {
    let suite = match a.suite {
        SuiteArg::Ope => Suite::Ope,
        SuiteArg::Optimism => Suite::Optimism,
        SuiteArg::Cover => Suite::Cover,
        SuiteArg::Pomdp => Suite::Pomdp,
        SuiteArg::Lmdp => Suite::Lmdp,
        SuiteArg::Sat => Suite::Sat,
        SuiteArg::All => Suite::All,
    };
    let opts = VerifyOptions {
        trials: a.trials,
        seed: a.seed,
        fault: a.inject_fault.map(|f| match f {
            FaultArg::NegativeBonus => Fault::NegativeBonus,
        }),
        guards: guards(Guards::default())?,
    };
    let results = run_suite(suite, &opts)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} properties, {} failed", results.len(), failed);
    Ok(if failed == 0 { 0 } else { EXIT_PROPERTY })
}

fn cmd_cover(a: CoverArgs) -> mglab::Result<u8> {
    let g = guards(Guards::default())?;
    if a.count {
        let m = grid_resolution(a.k, a.eps)?;
        println!("{}", grid_size(a.k, m));
        return Ok(0);
    }
    let cover = simplex_cover(a.k, a.eps, g.cover_points)?;
    println!("{}", serde_json::to_string(&cover)?);
    Ok(0)
}

fn cmd_sat(a: SatArgs) -> mglab::Result<u8> {
    let text = std::fs::read_to_string(&a.dimacs)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", a.dimacs.display())))?;
    let formula = parse_dimacs(&text)?;
    let r = sat_to_mg(&formula)?;
    let g = guards(Guards::default())?;
    let game = std::sync::Arc::new(r.game.clone());
    let bonus = BonusConfig::new(a.episodes.max(1));
    let mut learner: Box<dyn Learner> = match a.learner {
        SatLearner::BruteForce => {
            let x = formula.brute_force().unwrap_or_else(|| vec![false; formula.num_vars]);
            Box::new(FixedLearner::new(r.assignment_policy(&x)?.into_general()))
        }
        SatLearner::OpExp3 => {
            let class = ClassSpec::AllDeterministicMarkov.build(game.dims(), &g)?;
            Box::new(OpExp3::new(game, class, &bonus, ModelKind::default(), g)?)
        }
        SatLearner::Adaptive => {
            let eps = 1.0 / a.episodes.max(1) as f64;
            Box::new(AdaptiveOpExp3::new(game, &bonus, eps, CoverMode::Auto, g)?)
        }
        SatLearner::Uniform => Box::new(FixedLearner::new(MarkovPolicy::uniform(game.dims(), Side::Max).into_general())),
    };
    let d = sat_decision_experiment(&r, learner.as_mut(), a.episodes, a.seed)?;
    println!("{}", if d.decision { "True" } else { "False" });
    println!(
        "R/T = {}/{} = {:.6} (threshold {:.6})",
        d.total_reward,
        d.episodes,
        d.total_reward / d.episodes as f64,
        d.threshold / d.episodes as f64
    );
    Ok(0)
}

fn cmd_inspect(a: InspectArgs) -> mglab::Result<u8> {
    let path = &a.path;
    if path.extension().is_some_and(|e| e == "csv") {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let records = read_episode_csv(file)?;
        let n = records.len();
        let mean = |f: &dyn Fn(&mglab::harness::EpisodeRecord) -> f64| {
            records.iter().map(f).sum::<f64>() / n.max(1) as f64
        };
        println!("episodes: {n}");
        println!("mean realized return: {:.6}", mean(&|r| r.realized_return));
        println!("mean exact value: {:.6}", mean(&|r| r.exact_value));
        println!("restarts: {}", records.iter().filter(|r| r.restart).count());
        return Ok(0);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_manifest = serde_json::from_str::<serde_json::Value>(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .get("format")
        .and_then(|f| f.as_str())
        == Some(MANIFEST_FORMAT);
    if !is_manifest {
        let cfg = ExperimentConfig::from_path(path)?;
        println!("{}", cfg.to_json_pretty()?);
        return Ok(0);
    }
    let m = Manifest::from_path(path)?;
    println!("format: {}", m.format);
    println!("version: {}", m.version);
    println!("seed: {}", m.seed);
    println!("episodes: {}", m.episodes);
    println!("config sha256: {}", m.config_sha256);
    let show = |name: &str, v: Option<f64>| println!("{name}: {}", v.map_or("-".into(), |x| x.to_string()));
    show("hindsight best markov", m.hindsight_best_markov);
    show("hindsight best general", m.hindsight_best_general);
    show("nash value", m.nash_value);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut mismatched = 0;
    for (name, hash) in &m.outputs {
        let status = match std::fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => "ok",
            Ok(_) => {
                mismatched += 1;
                "MODIFIED"
            }
            Err(_) => {
                mismatched += 1;
                "MISSING"
            }
        };
        println!("{name}: {status}");
    }
    Ok(if mismatched == 0 { 0 } else { EXIT_PROPERTY })
}
