//! Event-conditioned policy gradient from a batch of sample paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rollout::{RolloutBatch, StateSignature};
use crate::events::BIN_COUNT;
use crate::policy::{action_probabilities, selection_gradient, PolicyTable};

/// Event frequencies of one building at `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub paths: usize,
    /// Paths per event bin.
    pub bin_counts: [usize; BIN_COUNT],
    /// Paths per state signature, within each bin.
    pub state_counts: BTreeMap<StateSignature, usize>,
}

impl EventStats {
    pub fn event_frequency(&self, bin: usize) -> f64 {
        if self.paths == 0 {
            0.0
        } else {
            self.bin_counts[bin] as f64 / self.paths as f64
        }
    }

    /// Frequency of a state among the paths that triggered its event.
    pub fn state_frequency(&self, s: &StateSignature) -> f64 {
        let n_e = self.bin_counts[s.bin];
        if n_e == 0 {
            0.0
        } else {
            self.state_counts.get(s).copied().unwrap_or(0) as f64 / n_e as f64
        }
    }

    pub fn states_in(&self, bin: usize) -> impl Iterator<Item = (&StateSignature, &usize)> {
        self.state_counts.iter().filter(move |(s, _)| s.bin == bin)
    }
}

pub fn estimate_event_stats(batch: &RolloutBatch, k: usize) -> EventStats {
    let mut bin_counts = [0; BIN_COUNT];
    let mut state_counts = BTreeMap::new();
    for p in &batch.paths {
        let s = p.buildings[k].signature;
        bin_counts[s.bin] += 1;
        *state_counts.entry(s).or_insert(0) += 1;
    }
    EventStats { paths: batch.paths.len(), bin_counts, state_counts }
}

/// Mean tail cost over the branches that started in state `s` with action
/// `m`; `None` when no branch did.
pub fn estimate_action_value(batch: &RolloutBatch, k: usize, s: &StateSignature, m: usize) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in &batch.paths {
        let b = &p.buildings[k];
        if b.signature != *s {
            continue;
        }
        for br in b.branches.iter().filter(|br| br.t0_action == m) {
            sum += br.tail_cost();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean exact first-stage cost of action `m` over the paths in state `s`.
pub fn first_stage_cost(batch: &RolloutBatch, k: usize, s: &StateSignature, m: usize) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in batch.paths.iter().filter(|p| p.buildings[k].signature == *s) {
        sum += p.buildings[k].t0_cost[m];
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub k: usize,
    pub bin: usize,
    /// Derivative of the window cost with respect to each weight of the cell.
    pub d: Vec<f64>,
    pub event_frequency: f64,
    pub states: usize,
    /// (state, action) pairs never seen; their action value counts as zero.
    pub missing: usize,
    /// First-stage cost plus action value per action, averaged over states.
    pub q: Vec<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.d.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Combines action values with the selection derivatives:
/// `d[m] = sum_i dp_i/dw_m * q_i`.
pub fn weight_gradient(weights: &[f64], q: &[f64]) -> Vec<f64> {
    (0..weights.len())
        .map(|m| selection_gradient(weights, m).iter().zip(q).map(|(g, v)| g * v).sum())
        .collect()
}

pub fn policy_gradient(batch: &RolloutBatch, table: &PolicyTable, k: usize, bin: usize) -> GradientEstimate {
    let stats = estimate_event_stats(batch, k);
    let weights = table.cell(k, batch.t0, bin);
    let m_count = weights.len();
    let beta_e = stats.event_frequency(bin);
    let mut d = vec![0.0; m_count];
    let mut q_avg = vec![0.0; m_count];
    let (mut states, mut missing) = (0, 0);
    for (s, _) in stats.states_in(bin) {
        states += 1;
        let beta_s = stats.state_frequency(s);
        let q: Vec<f64> = (0..m_count)
            .map(|m| {
                let v = estimate_action_value(batch, k, s, m).unwrap_or_else(|| {
                    missing += 1;
                    0.0
                });
                first_stage_cost(batch, k, s, m) + v
            })
            .collect();
        for (dm, g) in d.iter_mut().zip(weight_gradient(weights, &q)) {
            *dm += beta_e * beta_s * g;
        }
        for (a, v) in q_avg.iter_mut().zip(&q) {
            *a += beta_s * v;
        }
    }
    GradientEstimate { k, bin, d, event_frequency: beta_e, states, missing, q: q_avg }
}

/// Expected microgrid exchange at `t0` under the current table, averaged
/// over paths with the first action integrated out exactly.
pub fn expected_exchange(batch: &RolloutBatch, table: &PolicyTable) -> f64 {
    if batch.paths.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .paths
        .iter()
        .map(|p| {
            p.buildings
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let probs = action_probabilities(table.cell(k, batch.t0, b.signature.bin)).expect("weights stay positive");
                    probs.iter().zip(&b.t0_exchange).map(|(p, g)| p * g).sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum();
    total / batch.paths.len() as f64
}

/// Signed distance of an exchange from its bounds: positive above the top.
pub fn exchange_violation(g: f64, lo: f64, hi: f64) -> f64 {
    (g - hi).max(0.0) - (lo - g).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::rollout::{Branch, PathBuilding, SamplePath, StageRecord};
    use crate::scenario::Branching;

    fn sig(bin: usize) -> StateSignature {
        StateSignature { bin, n_m: 0, n_c: 2, soc_step: 10, wind_step: 15 }
    }

    fn stage(cost: f64) -> StageRecord {
        StageRecord { bin: 0, n_m: 0, n_c: 0, action: 0, charged: 0, cost_rmb: cost, exchange_kw: 0.0 }
    }

    fn path(bin: usize, action: usize, tail: f64, t0_cost: [f64; 2]) -> SamplePath {
        SamplePath {
            index: 0,
            seed: 0,
            buildings: vec![PathBuilding {
                signature: sig(bin),
                t0_cost: t0_cost.to_vec(),
                t0_exchange: vec![100.0, 200.0],
                branches: vec![Branch { t0_action: action, stages: vec![stage(t0_cost[action]), stage(tail)] }],
            }],
        }
    }

    fn batch(paths: Vec<SamplePath>) -> RolloutBatch {
        RolloutBatch { t0: 0, branching: Branching::Sampled, paths }
    }

    #[test]
    fn event_frequencies() {
        let mut ps: Vec<SamplePath> = (0..20).map(|_| path(3, 0, 1.0, [0.0, 0.0])).collect();
        ps.extend((0..30).map(|_| path(5, 0, 1.0, [0.0, 0.0])));
        let stats = estimate_event_stats(&batch(ps), 0);
        assert!((stats.event_frequency(3) - 0.4).abs() < 1e-15);
        assert_eq!(stats.event_frequency(7), 0.0);
        let all: Vec<SamplePath> = (0..5).map(|_| path(6, 0, 1.0, [0.0, 0.0])).collect();
        assert_eq!(estimate_event_stats(&batch(all), 0).event_frequency(6), 1.0);
    }

    #[test]
    fn action_value_mean() {
        let b = batch(vec![path(2, 1, 10.0, [0.0, 0.0]), path(2, 1, 14.0, [0.0, 0.0]), path(2, 0, 99.0, [0.0, 0.0])]);
        assert_eq!(estimate_action_value(&b, 0, &sig(2), 1), Some(12.0));
        assert_eq!(estimate_action_value(&b, 0, &sig(4), 1), None);
    }

    #[test]
    fn two_action_gradient() {
        // c + V = (10, 14) with uniform weights.
        let b = batch(vec![path(0, 0, 4.0, [6.0, 4.0]), path(0, 1, 10.0, [6.0, 4.0])]);
        let table = PolicyTable::uniform(1, 1, vec![0.0, 1.0], 1e-6);
        let g = policy_gradient(&b, &table, 0, 0);
        assert!((g.d[0] + 2.0).abs() < 1e-12 && (g.d[1] - 2.0).abs() < 1e-12, "{:?}", g.d);
        assert_eq!(g.missing, 0);
        // Unobserved bin contributes nothing.
        assert_eq!(policy_gradient(&b, &table, 0, 4).d, vec![0.0, 0.0]);
    }

    #[test]
    fn equal_values_give_zero_gradient() {
        let d = weight_gradient(&[0.2, 0.5, 0.3], &[7.0, 7.0, 7.0]);
        assert!(d.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn exchange_expectation_and_violation() {
        let b = batch(vec![path(0, 0, 0.0, [0.0, 0.0])]);
        let table = PolicyTable::uniform(1, 1, vec![0.0, 1.0], 1e-6);
        assert!((expected_exchange(&b, &table) - 150.0).abs() < 1e-12);
        assert_eq!(exchange_violation(100.0, -5600.0, 5600.0), 0.0);
        assert_eq!(exchange_violation(5874.0, -5600.0, 5600.0), 274.0);
        assert_eq!(exchange_violation(-6000.0, -5600.0, 5600.0), -400.0);
    }
}
