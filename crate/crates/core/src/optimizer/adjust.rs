//! Splitting an exchange-bound violation into per-building ratio targets.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Reduce,
    Increase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustTarget {
    pub k: usize,
    pub current_ratio: f64,
    /// Signed change of the expected ratio.
    pub delta_ratio: f64,
    pub direction: Direction,
    pub target_ratio: f64,
    /// EVs moved by this building (positive means fewer EVs charge).
    pub ev_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub targets: Vec<AdjustTarget>,
    /// EVs that could not be placed because every building hit its limit.
    pub shortfall_evs: f64,
}

/// Inputs of one building to the allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildingSlack {
    pub grad_norm: f64,
    pub n_m: usize,
    pub n_c: usize,
    pub current_ratio: f64,
}

/// Shares `delta_kw / charge_kw` EVs among the elastic buildings.
///
/// Above the bound (`delta_kw > 0`) a building's share of the reduction is
/// its gradient norm over the total; below it (`delta_kw < 0`) it is one
/// minus that, renormalized. Shares beyond a building's room are passed on
/// to the others.
pub fn allocate_adjustment(delta_kw: f64, charge_kw: f64, buildings: &[BuildingSlack]) -> Result<Allocation, SimError> {
    let elastic: Vec<usize> = (0..buildings.len()).filter(|&k| buildings[k].n_c > buildings[k].n_m).collect();
    if elastic.is_empty() {
        return Err(SimError::AllInelastic);
    }
    let direction = if delta_kw > 0.0 { Direction::Reduce } else { Direction::Increase };
    let evs = delta_kw.abs() / charge_kw;
    let norm_sum: f64 = elastic.iter().map(|&k| buildings[k].grad_norm).sum();
    let raw: Vec<f64> = elastic
        .iter()
        .map(|&k| {
            let s = if norm_sum > 0.0 { buildings[k].grad_norm / norm_sum } else { 1.0 / elastic.len() as f64 };
            match direction {
                Direction::Reduce => s,
                Direction::Increase => 1.0 - s,
            }
        })
        .collect();
    let raw_sum: f64 = raw.iter().sum();
    let mut share: Vec<f64> = if raw_sum > 0.0 {
        raw.iter().map(|s| s / raw_sum).collect()
    } else {
        vec![1.0 / elastic.len() as f64; elastic.len()]
    };
    let room: Vec<f64> = elastic
        .iter()
        .map(|&k| {
            let b = &buildings[k];
            let span = (b.n_c - b.n_m) as f64;
            match direction {
                Direction::Reduce => b.current_ratio * span,
                Direction::Increase => (1.0 - b.current_ratio) * span,
            }
        })
        .collect();

    // Water-filling: cap each building at its room and hand the excess on.
    let mut given = vec![0.0; elastic.len()];
    let mut left = evs;
    let mut open: Vec<bool> = room.iter().map(|r| *r > 0.0).collect();
    for _ in 0..elastic.len() + 1 {
        let open_share: f64 = (0..elastic.len()).filter(|&i| open[i]).map(|i| share[i]).sum();
        if left <= 1e-12 || open_share <= 0.0 {
            break;
        }
        let mut spent = 0.0;
        for i in 0..elastic.len() {
            if !open[i] {
                continue;
            }
            let want = left * share[i] / open_share;
            let take = want.min(room[i] - given[i]);
            given[i] += take;
            spent += take;
            if room[i] - given[i] <= 1e-12 {
                open[i] = false;
            }
        }
        left -= spent;
        if (0..elastic.len()).all(|i| !open[i]) {
            break;
        }
        share = share.iter().enumerate().map(|(i, s)| if open[i] { *s } else { 0.0 }).collect();
    }

    let targets = elastic
        .iter()
        .zip(&given)
        .map(|(&k, &n)| {
            let b = &buildings[k];
            let span = (b.n_c - b.n_m) as f64;
            let delta_ratio = match direction {
                Direction::Reduce => -n / span,
                Direction::Increase => n / span,
            };
            AdjustTarget {
                k,
                current_ratio: b.current_ratio,
                delta_ratio,
                direction,
                target_ratio: (b.current_ratio + delta_ratio).clamp(0.0, 1.0),
                ev_change: if direction == Direction::Reduce { n } else { -n },
            }
        })
        .collect();
    Ok(Allocation { targets, shortfall_evs: left.max(0.0) })
}
