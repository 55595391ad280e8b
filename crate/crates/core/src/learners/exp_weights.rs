use serde::{Deserialize, Serialize};

use crate::rng::{sample_index, SimRng};

/// Softmax of `eta * g` with max-subtraction.
pub fn exp_weights_distribution(g: &[f64], eta: f64) -> Vec<f64> {
    if g.is_empty() {
        return Vec::new();
    }
    let top = g.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = g.iter().map(|&x| (eta * (x - top)).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= total;
    }
    out
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Cumulative gains over a policy list and the induced distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpWeights {
    gains: Vec<CompensatedSum>,
    probs: Vec<f64>,
}

impl ExpWeights {
    pub fn new(n: usize) -> Self {
        ExpWeights {
            gains: vec![CompensatedSum::default(); n],
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Adds one gain per policy; the distribution is unchanged until
    /// [`ExpWeights::reweight`].
    pub fn add(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.gains.len());
        for (g, &v) in self.gains.iter_mut().zip(values) {
            g.add(v);
        }
    }

    pub fn reweight(&mut self, eta: f64) {
        self.probs = exp_weights_distribution(&self.gains(), eta);
    }

    pub fn gains(&self) -> Vec<f64> {
        self.gains.iter().map(CompensatedSum::value).collect()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut SimRng) -> usize {
        sample_index(&self.probs, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_values() {
        let p = exp_weights_distribution(&[2.0, 0.0], 0.5);
        // e / (e + 1)
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(exp_weights_distribution(&[3.0, 3.0, 3.0, 3.0], 7.0), vec![0.25; 4]);
        let p = exp_weights_distribution(&[1e6, -1e6, 5.0], 0.0);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn large_gains_do_not_overflow() {
        let p = exp_weights_distribution(&[1e308, 1e308 - 1e292], 1.0);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}
