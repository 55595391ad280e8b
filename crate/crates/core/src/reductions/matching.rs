use crate::error::{Error, Result};
use crate::game::{GameDims, MarkovGame};

/// The memory-matching game: one state, binary actions for both players,
/// zero reward before the last step and `1[a = b]` at step `H`.
pub fn matching_game(horizon: usize) -> Result<MarkovGame> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("matching game needs H >= 1".into()));
    }
    let dims = GameDims {
        num_states: 1,
        actions_max: 2,
        actions_min: 2,
        horizon,
        initial_state: 0,
    };
    MarkovGame::from_fn(
        dims,
        |_, _, _, _| 1.0,
        |h, _, ja| if h + 1 == horizon && ja.a_max == ja.a_min { 1.0 } else { 0.0 },
    )
}

/// Rock-paper-scissors as a one-step game with payoffs rescaled to
/// `0.5 + 0.5 * u` where `u` is the usual `{-1, 0, 1}` payoff.
/// Actions are `0 = rock`, `1 = paper`, `2 = scissors` for both players.
pub fn rps_game() -> MarkovGame {
    let dims = GameDims {
        num_states: 1,
        actions_max: 3,
        actions_min: 3,
        horizon: 1,
        initial_state: 0,
    };
    MarkovGame::from_fn(dims, |_, _, _, _| 1.0, |_, _, ja| 0.5 + 0.5 * rps_payoff(ja.a_max, ja.a_min))
        .expect("rps game is valid")
}

/// Raw `{-1, 0, 1}` payoff of `a` against `b`.
pub fn rps_payoff(a: usize, b: usize) -> f64 {
    match (3 + a - b) % 3 {
        0 => 0.0,
        1 => 1.0,
        _ => -1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{MarkovPolicy, Side};
    use crate::value::exact_value_markov;

    #[test]
    fn shape() {
        let g = matching_game(3).unwrap();
        let d = g.dims();
        assert_eq!((d.num_states, d.actions_max, d.actions_min, d.horizon), (1, 2, 2, 3));
        assert!(matching_game(0).is_err());
    }

    #[test]
    fn uniform_learner_gets_half() {
        let g = matching_game(4).unwrap();
        let mu = MarkovPolicy::uniform(g.dims(), Side::Max);
        for b in 0..2 {
            let nu = MarkovPolicy::constant(g.dims(), Side::Min, b).unwrap();
            assert_eq!(exact_value_markov(&g, &mu, &nu).unwrap(), 0.5);
        }
    }

    #[test]
    fn rps_payoffs() {
        assert_eq!(rps_payoff(1, 0), 1.0);
        assert_eq!(rps_payoff(0, 1), -1.0);
        assert_eq!(rps_payoff(2, 0), -1.0);
        assert_eq!(rps_payoff(0, 2), 1.0);
        let g = rps_game();
        assert_eq!(g.reward(0, 0, g.dims().joint_index(1, 0)), 1.0);
        assert_eq!(g.reward(0, 0, g.dims().joint_index(1, 1)), 0.5);
    }
}
