//! Hard instances and reductions into Markov games.

mod lmdp;
mod matching;
mod pomdp;
mod sat;

pub use lmdp::{lmdp_to_mg, lmdp_trajectory_law, mdp_optimal_value, random_lmdp, Lmdp, LmdpComponent, LmdpPolicy, LmdpReduction};
pub use matching::{matching_game, rps_game, rps_payoff};
pub use pomdp::{
    hard_pomdp_combination_lock, open_loop_policy, pomdp_to_mg, pomdp_trajectory_law, random_pomdp, Pomdp, PomdpPolicy,
    PomdpReduction,
};
pub use sat::{
    assignment_from_bits, check_value_identity, IdentityReport, parse_dimacs, random_3cnf, sat_decision_experiment, sat_threshold, sat_to_mg, CnfFormula,
    SatDecision, SatReduction,
};

/// DIMACS formulas shipped with the crate, as `(name, text)`.
pub const BUNDLED_FORMULAS: &[(&str, &str)] = &[
    ("one_clause", include_str!("../../data/one_clause.cnf")),
    ("contradiction", include_str!("../../data/contradiction.cnf")),
    ("four_vars", include_str!("../../data/four_vars.cnf")),
    ("unsat_three_vars", include_str!("../../data/unsat_three_vars.cnf")),
];
