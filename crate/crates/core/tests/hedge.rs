use std::sync::Arc;

use mglab::estimation::BonusConfig;
use mglab::harness::{regret_curves, run_episodes, Checkpoints, RegretOptions, RunOptions};
use mglab::learners::{ModelKind, OpExp3};
use mglab::opponents::Switcher;
use mglab::reductions::rps_game;
use mglab::testkit::all_deterministic_markov;
use mglab::{Guards, MarkovPolicy, Side};

/// Known model over the three pure actions is full-information Hedge; its
/// regret against rock-then-paper stays under `6 sqrt(K ln 3)`.
#[test]
fn hedge_regret_against_rock_then_paper() {
    const K: usize = 3000;
    let game = Arc::new(rps_game());
    let class: Vec<_> = all_deterministic_markov(game.dims(), Side::Max)
        .into_iter()
        .map(MarkovPolicy::into_general)
        .collect();
    let rock = MarkovPolicy::constant(game.dims(), Side::Min, 0).unwrap().into_general();
    let paper = MarkovPolicy::constant(game.dims(), Side::Min, 1).unwrap().into_general();
    let options = RegretOptions {
        markov: true,
        general: false,
        nash: false,
        checkpoints: Checkpoints::Explicit(vec![K]),
    };
    let mut total = 0.0;
    for seed in 0..10 {
        let mut learner =
            OpExp3::new(game.clone(), class.clone(), &BonusConfig::new(K), ModelKind::Known, Guards::default()).unwrap();
        let mut opponent = Switcher::new(&game, rock.clone(), paper.clone(), K / 2).unwrap();
        let log = run_episodes(&game, &mut learner, &mut opponent, K, seed, &RunOptions::default()).unwrap();
        let series = regret_curves(&game, &log.records, &log.revealed, &options, &Guards::default()).unwrap();
        total += series.rows.iter().find(|r| r.k == K).unwrap().regret_markov.unwrap();
    }
    let bound = 6.0 * (K as f64 * 3f64.ln()).sqrt();
    let avg = total / 10.0;
    assert!(avg <= bound, "mean regret {avg} above {bound}");
}
