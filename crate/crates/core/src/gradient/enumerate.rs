//! Exact window cost and gradient by expanding every action branch.
//!
//! Only usable when the exogenous inputs are known (or given as a short
//! list of weighted alternatives) and the window is short. Tests use it as
//! ground truth for the Monte-Carlo estimator.

use std::collections::BTreeMap;

use super::estimator::weight_gradient;
use super::rollout::{BuildingInputs, BuildingSim};
use crate::policy::{action_probabilities, PolicyTable};

#[derive(Debug, Clone, PartialEq)]
pub struct ExactWindow {
    /// Expected window cost.
    pub value: f64,
    /// Gradient per (stage of day, event bin) cell.
    pub gradient: BTreeMap<(usize, usize), Vec<f64>>,
    /// Number of complete action sequences expanded.
    pub leaves: usize,
}

struct Walker<'a> {
    table: &'a PolicyTable,
    inp: &'a BuildingInputs,
    gradient: Option<&'a mut BTreeMap<(usize, usize), Vec<f64>>>,
    leaves: usize,
}

impl Walker<'_> {
    /// Expected cost from `sim`'s stage to the end of the window.
    fn visit(&mut self, sim: &BuildingSim, reach: f64) -> f64 {
        let o = sim.offset;
        if o >= self.inp.window() {
            self.leaves += 1;
            return 0.0;
        }
        let obs = sim.observe(self.inp);
        let stage = (self.inp.t0 + o) % self.table.dims()[1];
        let weights = self.table.cell(self.inp.k, stage, obs.event.bin).to_vec();
        let probs = action_probabilities(&weights).expect("weights stay positive");
        let mut q = Vec::with_capacity(probs.len());
        for (m, p) in probs.iter().enumerate() {
            let mut next = sim.clone();
            let rec = next.step(self.inp, &obs, m, self.table.actions()[m]);
            q.push(rec.cost_rmb + self.visit(&next, reach * p));
        }
        if let Some(g) = self.gradient.as_deref_mut() {
            let cell = g.entry((stage, obs.event.bin)).or_insert_with(|| vec![0.0; probs.len()]);
            for (acc, d) in cell.iter_mut().zip(weight_gradient(&weights, &q)) {
                *acc += reach * d;
            }
        }
        probs.iter().zip(&q).map(|(p, v)| p * v).sum()
    }
}

/// Exact expected window cost and its gradient for a building started from
/// each of `starts` with the given probability.
pub fn exact_window(table: &PolicyTable, starts: &[(f64, BuildingInputs)]) -> ExactWindow {
    let mut gradient = BTreeMap::new();
    let mut value = 0.0;
    let mut leaves = 0;
    for (prob, inp) in starts {
        let mut w = Walker { table, inp, gradient: Some(&mut gradient), leaves: 0 };
        value += prob * w.visit(&BuildingSim::new(inp), *prob);
        leaves += w.leaves;
    }
    ExactWindow { value, gradient, leaves }
}

/// Expected cost from an intermediate state to the end of the window.
pub fn value_from(table: &PolicyTable, inp: &BuildingInputs, sim: &BuildingSim) -> f64 {
    Walker { table, inp, gradient: None, leaves: 0 }.visit(sim, 1.0)
}

/// States reachable at every offset of the window, with their probabilities.
pub fn reachable(table: &PolicyTable, inp: &BuildingInputs) -> Vec<Vec<(f64, BuildingSim)>> {
    let mut levels = vec![vec![(1.0, BuildingSim::new(inp))]];
    for o in 0..inp.window() {
        let mut next = Vec::new();
        for (p, sim) in &levels[o] {
            let obs = sim.observe(inp);
            let stage = (inp.t0 + o) % table.dims()[1];
            let probs = action_probabilities(table.cell(inp.k, stage, obs.event.bin)).expect("weights stay positive");
            for (m, pm) in probs.iter().enumerate() {
                let mut s = sim.clone();
                s.step(inp, &obs, m, table.actions()[m]);
                next.push((p * pm, s));
            }
        }
        levels.push(next);
    }
    levels
}
