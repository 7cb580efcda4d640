//! Randomized event-based policy: one weight vector per (building, stage of
//! day, event bin), normalized into action probabilities at selection time.
//! Individual EVs are picked by the mLLLP order.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EvState, Physics};
use crate::error::SimError;
use crate::events::BIN_COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    buildings: usize,
    stages: usize,
    actions: Vec<f64>,
    weight_floor: f64,
    weights: Vec<f64>,
}

impl PolicyTable {
    /// All weights equal, so every action starts equally likely.
    pub fn uniform(buildings: usize, stages: usize, actions: Vec<f64>, weight_floor: f64) -> Self {
        let m = actions.len();
        let w = 1.0 / m as f64;
        PolicyTable { buildings, stages, weights: vec![w.max(weight_floor); buildings * stages * BIN_COUNT * m], actions, weight_floor }
    }

    pub fn from_parts(
        buildings: usize,
        stages: usize,
        actions: Vec<f64>,
        weight_floor: f64,
        weights: Vec<f64>,
    ) -> Option<Self> {
        (weights.len() == buildings * stages * BIN_COUNT * actions.len())
            .then_some(PolicyTable { buildings, stages, actions, weight_floor, weights })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.buildings, self.stages, BIN_COUNT, self.actions.len()]
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn weight_floor(&self) -> f64 {
        self.weight_floor
    }

    pub fn flat_weights(&self) -> &[f64] {
        &self.weights
    }

    fn offset(&self, k: usize, t: usize, bin: usize) -> usize {
        debug_assert!(k < self.buildings && bin < BIN_COUNT);
        let t = t % self.stages;
        ((k * self.stages + t) * BIN_COUNT + bin) * self.actions.len()
    }

    /// Weights of one cell; `k` is 0-based and `t` wraps by day.
    pub fn cell(&self, k: usize, t: usize, bin: usize) -> &[f64] {
        let o = self.offset(k, t, bin);
        &self.weights[o..o + self.actions.len()]
    }

    pub fn cell_mut(&mut self, k: usize, t: usize, bin: usize) -> &mut [f64] {
        let o = self.offset(k, t, bin);
        let m = self.actions.len();
        &mut self.weights[o..o + m]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, k: usize, t: usize, bin: usize, rng: &mut R) -> (usize, f64) {
        let m = sample_index(self.cell(k, t, bin), rng.random::<f64>());
        (m, self.actions[m])
    }

    pub fn greedy_action(&self, k: usize, t: usize, bin: usize) -> (usize, f64) {
        let m = greedy_index(self.cell(k, t, bin));
        (m, self.actions[m])
    }

    /// Expected charge ratio of one cell.
    pub fn expected_ratio(&self, k: usize, t: usize, bin: usize) -> f64 {
        expected_ratio(self.cell(k, t, bin), &self.actions)
    }
}

// ── Selection ────────────────────────────────────────────────────────────────

pub fn action_probabilities(weights: &[f64]) -> Result<Vec<f64>, SimError> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(SimError::ZeroWeights);
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Inverse-CDF draw from unnormalized weights using a uniform `u` in [0, 1).
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let sum: f64 = weights.iter().sum();
    let target = u * sum;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Index of the largest weight; ties go to the smaller index (smaller ratio).
pub fn greedy_index(weights: &[f64]) -> usize {
    let mut best = 0;
    for (i, w) in weights.iter().enumerate().skip(1) {
        if *w > weights[best] {
            best = i;
        }
    }
    best
}

pub fn expected_ratio(weights: &[f64], actions: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    weights.iter().zip(actions).map(|(w, a)| w * a).sum::<f64>() / sum
}

/// Number of EVs to charge: must-charge EVs plus a share of the deferrable
/// ones, rounded half up.
pub fn charge_count(n_m: usize, n_c: usize, alpha: f64) -> usize {
    let raw = n_m as f64 + alpha * (n_c - n_m) as f64;
    ((raw + 0.5 + 1e-9).floor() as usize).clamp(n_m, n_c)
}

// ── mLLLP dispatch ───────────────────────────────────────────────────────────

/// A chargeable EV as seen by the dispatcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub laxity: f64,
    pub processing: f64,
}

impl Candidate {
    pub fn new(id: usize, ev: &EvState, phys: &Physics) -> Self {
        Candidate { id, laxity: phys.laxity(ev), processing: phys.processing_hours(ev.energy_kwh) }
    }
}

/// Least laxity first, then longest processing time, then lowest id.
pub fn mllp_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.laxity
        .total_cmp(&b.laxity)
        .then(b.processing.total_cmp(&a.processing))
        .then(a.id.cmp(&b.id))
}

/// Picks `count` EVs in mLLLP order; reorders `cands` in place and returns
/// the chosen ids sorted ascending.
pub fn mllp_select(cands: &mut [Candidate], count: usize) -> Result<Vec<usize>, SimError> {
    if count > cands.len() {
        return Err(SimError::TooManySelected { count, available: cands.len() });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count < cands.len() {
        cands.select_nth_unstable_by(count - 1, mllp_order);
    }
    let mut ids: Vec<usize> = cands[..count].iter().map(|c| c.id).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Derivative of every selection probability with respect to weight `m`.
pub fn selection_gradient(weights: &[f64], m: usize) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    let s2 = sum * sum;
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| if i == m { (sum - weights[m]) / s2 } else { -w / s2 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::table_physics;
    use crate::rng::{stream, Purpose};

    #[test]
    fn probability_examples() {
        let m = 11;
        let p = action_probabilities(&vec![0.3; m]).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / m as f64).abs() < 1e-15));
        assert_eq!(action_probabilities(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(action_probabilities(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(action_probabilities(&[0.0, 0.0]), Err(SimError::ZeroWeights));
    }

    #[test]
    fn sampling_frequencies() {
        let table = PolicyTable::uniform(1, 48, crate::scenario::action_grid(11), 1e-6);
        let mut rng = stream(3, Purpose::Test, &[]);
        let n = 100_000;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[table.sample_action(0, 5, 2, &mut rng).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 11.0).abs() < 0.01);
        }
        let mut single = table.clone();
        single.cell_mut(0, 5, 2).copy_from_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((0..100).all(|_| single.sample_action(0, 5, 2, &mut rng).0 == 2));
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_index(&[0.1, 0.8, 0.1]), 1);
        assert_eq!(greedy_index(&[0.2, 0.2, 0.2]), 0);
        assert_eq!(greedy_index(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(greedy_index(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn charge_count_examples() {
        assert_eq!(charge_count(5, 20, 0.0), 5);
        assert_eq!(charge_count(5, 20, 1.0), 20);
        assert_eq!(charge_count(5, 20, 0.4), 11);
        assert_eq!(charge_count(0, 3, 0.5), 2);
    }

    #[test]
    fn mllp_examples() {
        let phys = table_physics();
        let evs = [EvState::parked(2.0, 6.0, 1), EvState::parked(3.0, 6.0, 1), EvState::parked(1.0, 1.5, 1)];
        let mut c: Vec<Candidate> = evs.iter().enumerate().map(|(i, e)| Candidate::new(i, e, &phys)).collect();
        assert!((c[0].laxity - 0.188).abs() < 1e-3);
        assert_eq!(mllp_select(&mut c, 2).unwrap(), vec![0, 2]);
        assert_eq!(mllp_select(&mut c, 3).unwrap(), vec![0, 1, 2]);
        let mut twins = vec![Candidate::new(4, &evs[0], &phys), Candidate::new(1, &evs[0], &phys)];
        assert_eq!(mllp_select(&mut twins, 1).unwrap(), vec![1]);
        assert!(mllp_select(&mut twins, 3).is_err());
    }

    #[test]
    fn selection_gradient_example() {
        assert_eq!(selection_gradient(&[0.5, 0.5], 0), vec![0.5, -0.5]);
        let g = selection_gradient(&[0.2, 0.7, 0.1], 1);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }
}
