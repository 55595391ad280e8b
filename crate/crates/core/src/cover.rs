//! l1 covers of the probability simplex.
//!
//! [`simplex_cover`] is the integer-composition grid. [`adaptive_cover`]
//! refines the simplex only where a labelling function (in practice the best
//! response at each mixture) changes, which keeps the number of evaluated
//! points near the boundaries of the label regions instead of the whole
//! volume.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::MixedWeights;

/// The grid `{ c / m : c a composition of m into k parts }`.
#[derive(Debug, Clone, Serialize)]
pub struct SimplexCover {
    pub k: usize,
    pub m: usize,
    pub points: Vec<MixedWeights>,
}

/// Grid denominator `m = ceil(2k / epsilon)`.
pub fn grid_resolution(k: usize, epsilon: f64) -> Result<usize> {
    if k == 0 {
        return Err(Error::EmptyClass);
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be in (0, 1], got {epsilon}")));
    }
    let m = (2.0 * k as f64 / epsilon).ceil();
    if m > 1e15 {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} is too small")));
    }
    Ok(m as usize)
}

/// `C(m + k - 1, k - 1)`, saturating at `u128::MAX`.
pub fn grid_size(k: usize, m: usize) -> u128 {
    let n = (m + k - 1) as u128;
    let r = (k - 1).min(m) as u128;
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// The composition grid covering `Delta_k` within l1 radius `epsilon`.
pub fn simplex_cover(k: usize, epsilon: f64, max_points: u64) -> Result<SimplexCover> {
    let m = grid_resolution(k, epsilon)?;
    let size = grid_size(k, m);
    if size > max_points as u128 {
        return Err(Error::GuardExceeded {
            what: "simplex cover grid (points); epsilon or k is infeasible for a full grid",
            bound: max_points,
        });
    }
    let mut points = Vec::with_capacity(size as usize);
    let mut parts = vec![0usize; k];
    compositions(m, 0, &mut parts, &mut |c| {
        let w = c.iter().map(|&x| x as f64 / m as f64).collect();
        points.push(MixedWeights::new(w).expect("grid point is a distribution"));
    });
    Ok(SimplexCover { k, m, points })
}

fn compositions(rest: usize, i: usize, parts: &mut [usize], emit: &mut dyn FnMut(&[usize])) {
    if i + 1 == parts.len() {
        parts[i] = rest;
        emit(parts);
        return;
    }
    for x in (0..=rest).rev() {
        parts[i] = x;
        compositions(rest - x, i + 1, parts, emit);
    }
}

/// Largest-remainder rounding of `w` onto the grid with denominator `m`.
pub fn round_to_grid(w: &[f64], m: usize) -> Vec<usize> {
    let scaled: Vec<f64> = w.iter().map(|x| x * m as f64).collect();
    let mut parts: Vec<usize> = scaled.iter().map(|x| x.floor() as usize).collect();
    let used: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(m.saturating_sub(used)) {
        parts[i] += 1;
    }
    parts
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// A labelled point visited by [`adaptive_cover`].
#[derive(Debug, Clone)]
pub struct LabelledPoint<L> {
    pub weights: Vec<f64>,
    pub label: L,
}

/// Refines `Delta_k` by longest-edge bisection, starting from the simplex
/// spanned by the unit vectors. A sub-simplex is accepted when all of its
/// vertices carry the same label or its l1 diameter is at most `epsilon`.
///
/// Every mixture then lies in an accepted sub-simplex: either all vertices
/// share a label or some vertex is within `epsilon` of it. Each point is
/// labelled once; `max_points` bounds the number of labelled points. Returns
/// the labelled points in first-visit order.
pub fn adaptive_cover<L, F>(
    k: usize,
    epsilon: f64,
    max_points: u64,
    mut label: F,
) -> Result<Vec<LabelledPoint<L>>>
where
    L: Clone + PartialEq,
    F: FnMut(&[f64]) -> Result<L>,
{
    if k == 0 {
        return Err(Error::EmptyClass);
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut points: Vec<LabelledPoint<L>> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut visit = |w: Vec<f64>, points: &mut Vec<LabelledPoint<L>>| -> Result<usize> {
        let key: Vec<u64> = w.iter().map(|x| x.to_bits()).collect();
        if let Some(&i) = index.get(&key) {
            return Ok(i);
        }
        if points.len() as u64 >= max_points {
            return Err(Error::GuardExceeded {
                what: "adaptive simplex cover (labelled points)",
                bound: max_points,
            });
        }
        let l = label(&w)?;
        points.push(LabelledPoint { weights: w, label: l });
        index.insert(key, points.len() - 1);
        Ok(points.len() - 1)
    };
    let mut root = Vec::with_capacity(k);
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        root.push(visit(e, &mut points)?);
    }
    let mut stack = vec![root];
    while let Some(simplex) = stack.pop() {
        let first = &points[simplex[0]].label;
        if simplex.iter().all(|&v| points[v].label == *first) {
            continue;
        }
        let mut longest = (0, 0, -1.0);
        for a in 0..simplex.len() {
            for b in a + 1..simplex.len() {
                let d = l1_distance(&points[simplex[a]].weights, &points[simplex[b]].weights);
                if d > longest.2 {
                    longest = (a, b, d);
                }
            }
        }
        let (a, b, diameter) = longest;
        if diameter <= epsilon {
            continue;
        }
        let mid: Vec<f64> = points[simplex[a]]
            .weights
            .iter()
            .zip(&points[simplex[b]].weights)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let m = visit(mid, &mut points)?;
        let mut left = simplex.clone();
        left[b] = m;
        let mut right = simplex;
        right[a] = m;
        stack.push(right);
        stack.push(left);
    }
    Ok(points)
}
