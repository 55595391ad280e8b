//! Nash value of a Markov game by backward induction over stage matrix games.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::policy::{MarkovPolicy, Side};

/// Duality-gap target for each stage game.
pub const STAGE_GAP_TOL: f64 = 1e-4;
/// Iteration cap for one stage game.
pub const STAGE_MAX_ITERS: usize = 2_000_000;

/// Approximate solution of a zero-sum matrix game (row player maximizes).
#[derive(Debug, Clone, Serialize)]
pub struct MatrixSolution {
    pub value: f64,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    /// `max_i (M y)_i - min_j (x^T M)_j` of the averaged strategies.
    pub gap: f64,
    pub iterations: usize,
}

fn softmax_into(scores: &[f64], eta: f64, out: &mut [f64]) {
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (eta * (s - top)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Solves `max_x min_y x^T M y` for a row-major `rows x cols` matrix by
/// optimistic exponential-weights self-play, averaging the iterates until
/// the duality gap is at most `tol`.
pub fn solve_matrix_game(m: &[f64], rows: usize, cols: usize, tol: f64, max_iters: usize) -> Result<MatrixSolution> {
    assert_eq!(m.len(), rows * cols);
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(MatrixSolution {
            value: lo,
            row: vec![1.0 / rows as f64; rows],
            col: vec![1.0 / cols as f64; cols],
            gap: 0.0,
            iterations: 0,
        });
    }
    let eta = 0.25 / range;
    let mut x = vec![1.0 / rows as f64; rows];
    let mut y = vec![1.0 / cols as f64; cols];
    let mut cum_x = vec![0.0; rows];
    let mut cum_y = vec![0.0; cols];
    let mut last_x = vec![0.0; rows];
    let mut last_y = vec![0.0; cols];
    let mut avg_x = vec![0.0; rows];
    let mut avg_y = vec![0.0; cols];
    let mut scores_x = vec![0.0; rows];
    let mut scores_y = vec![0.0; cols];
    let evaluate = |ax: &[f64], ay: &[f64]| {
        let best_row = (0..rows)
            .map(|i| (0..cols).map(|j| m[i * cols + j] * ay[j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let best_col = (0..cols)
            .map(|j| (0..rows).map(|i| m[i * cols + j] * ax[i]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        (best_row, best_col)
    };
    for t in 1..=max_iters {
        // payoffs of the current iterates
        for i in 0..rows {
            last_x[i] = (0..cols).map(|j| m[i * cols + j] * y[j]).sum();
        }
        for j in 0..cols {
            last_y[j] = -(0..rows).map(|i| m[i * cols + j] * x[i]).sum::<f64>();
        }
        for i in 0..rows {
            avg_x[i] += x[i];
            cum_x[i] += last_x[i];
            scores_x[i] = cum_x[i] + last_x[i];
        }
        for j in 0..cols {
            avg_y[j] += y[j];
            cum_y[j] += last_y[j];
            scores_y[j] = cum_y[j] + last_y[j];
        }
        softmax_into(&scores_x, eta, &mut x);
        softmax_into(&scores_y, eta, &mut y);
        if t % 16 == 0 || t == max_iters {
            let ax: Vec<f64> = avg_x.iter().map(|v| v / t as f64).collect();
            let ay: Vec<f64> = avg_y.iter().map(|v| v / t as f64).collect();
            let (upper, lower) = evaluate(&ax, &ay);
            let gap = upper - lower;
            if gap <= tol {
                return Ok(MatrixSolution {
                    value: 0.5 * (upper + lower),
                    row: ax,
                    col: ay,
                    gap,
                    iterations: t,
                });
            }
        }
    }
    Err(Error::Tolerance(format!(
        "stage game did not reach duality gap {tol} within {max_iters} iterations"
    )))
}

/// Nash value `V*_1(s_1)` with a Markov equilibrium pair.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub value: f64,
    pub max_policy: MarkovPolicy,
    pub min_policy: MarkovPolicy,
}

pub fn nash_value(game: &MarkovGame) -> Result<NashSolution> {
    nash_value_with(game, STAGE_GAP_TOL, STAGE_MAX_ITERS)
}

pub fn nash_value_with(game: &MarkovGame, tol: f64, max_iters: usize) -> Result<NashSolution> {
    let d = game.dims();
    let (na, nb) = (d.actions_max, d.actions_min);
    let mut next_v = vec![0.0; d.num_states];
    let mut max_rows = vec![Vec::new(); d.horizon * d.num_states];
    let mut min_rows = vec![Vec::new(); d.horizon * d.num_states];
    for h in (0..d.horizon).rev() {
        let mut v = vec![0.0; d.num_states];
        for s in 0..d.num_states {
            let mut q = vec![0.0; na * nb];
            for joint in 0..d.joint_actions() {
                let cont: f64 = if h + 1 < d.horizon {
                    game.next_state_dist(h, s, joint).iter().zip(&next_v).map(|(p, w)| p * w).sum()
                } else {
                    0.0
                };
                q[joint] = game.reward(h, s, joint) + cont;
            }
            let sol = solve_matrix_game(&q, na, nb, tol, max_iters)
                .map_err(|e| Error::Tolerance(format!("step {}, state {s}: {e}", h + 1)))?;
            v[s] = sol.value;
            max_rows[h * d.num_states + s] = normalized(sol.row);
            min_rows[h * d.num_states + s] = normalized(sol.col);
        }
        next_v = v;
    }
    let max_policy = MarkovPolicy::new(d, Side::Max, max_rows.concat())?;
    let min_policy = MarkovPolicy::new(d, Side::Min, min_rows.concat())?;
    Ok(NashSolution {
        value: next_v[d.initial_state],
        max_policy,
        min_policy,
    })
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
    let err = 1.0 - v.iter().sum::<f64>();
    let i = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    v[i] += err;
    v
}
