//! Least-squares move of one weight cell to a target expected charge ratio.
//!
//! Solves `min sum (x_m - w_m)^2` subject to `sum x = sum w`,
//! `sum x_m * alpha_m = target * sum w` and `floor <= x_m <= 1`. Stationarity
//! gives `x_m = clip(w_m - lambda - mu * alpha_m)`; `lambda` is found by
//! bisection for each `mu`, and `mu` by an outer bisection on the ratio
//! residual, which is monotone in `mu`. An exact solve on the free set then
//! removes the bisection error.

use serde::{Deserialize, Serialize};

const BISECT_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub weights: Vec<f64>,
    /// Expected ratio actually reached.
    pub ratio: f64,
    /// Target after clamping to the attainable range.
    pub target: f64,
    /// The requested target was outside the attainable range.
    pub clamped: bool,
    pub kkt_residual: f64,
}

fn clip(v: f64, floor: f64) -> f64 {
    v.clamp(floor, 1.0)
}

fn primal(w: &[f64], alpha: &[f64], lambda: f64, mu: f64, floor: f64) -> Vec<f64> {
    w.iter().zip(alpha).map(|(wi, a)| clip(wi - lambda - mu * a, floor)).collect()
}

/// `lambda` that makes the weights sum to `total` for a given `mu`.
fn solve_lambda(w: &[f64], alpha: &[f64], mu: f64, floor: f64, total: f64) -> f64 {
    let shifted: Vec<f64> = w.iter().zip(alpha).map(|(wi, a)| wi - mu * a).collect();
    let mut lo = shifted.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - floor;
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        let s: f64 = shifted.iter().map(|v| clip(v - mid, floor)).sum();
        if s > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Extreme feasible point: as much mass as possible on the lowest (or
/// highest) ratios.
fn extreme(alpha: &[f64], floor: f64, total: f64, lowest: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]));
    if !lowest {
        order.reverse();
    }
    let mut x = vec![floor; alpha.len()];
    let mut left = total - floor * alpha.len() as f64;
    for i in order {
        let add = left.min(1.0 - floor).max(0.0);
        x[i] += add;
        left -= add;
    }
    x
}

fn ratio_of(x: &[f64], alpha: &[f64]) -> f64 {
    x.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>() / x.iter().sum::<f64>()
}

/// Largest violation of the optimality conditions at `x` with multipliers
/// `(lambda, mu)`: constraint residuals, box, and sign of the bound
/// multipliers.
pub fn kkt_residual(w: &[f64], alpha: &[f64], x: &[f64], lambda: f64, mu: f64, floor: f64, target: f64) -> f64 {
    let total: f64 = w.iter().sum();
    let mut r = (x.iter().sum::<f64>() - total).abs();
    r = r.max((x.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>() - target * total).abs());
    let tol = 1e-12;
    for ((xi, wi), a) in x.iter().zip(w).zip(alpha) {
        r = r.max((floor - xi).max(0.0)).max((xi - 1.0).max(0.0));
        let g = xi - wi + lambda + mu * a;
        if *xi <= floor + tol {
            r = r.max((-g).max(0.0));
        } else if *xi >= 1.0 - tol {
            r = r.max(g.max(0.0));
        } else {
            r = r.max(g.abs());
        }
    }
    r
}

/// Exact solve of the two multipliers on the free coordinates of `x`.
fn polish(w: &[f64], alpha: &[f64], x: &[f64], floor: f64, total: f64, target: f64) -> Option<(Vec<f64>, f64, f64)> {
    let tol = 1e-12;
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > floor + tol && x[i] < 1.0 - tol).collect();
    let fixed_sum: f64 = (0..x.len()).filter(|i| !free.contains(i)).map(|i| x[i]).sum();
    let fixed_mom: f64 = (0..x.len()).filter(|i| !free.contains(i)).map(|i| x[i] * alpha[i]).sum();
    let n = free.len() as f64;
    let (sa, saa, sw, swa) = free.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &i| {
        (acc.0 + alpha[i], acc.1 + alpha[i] * alpha[i], acc.2 + w[i], acc.3 + w[i] * alpha[i])
    });
    // n*lambda + sa*mu = sw + fixed_sum - total
    // sa*lambda + saa*mu = swa + fixed_mom - target*total
    let r1 = sw + fixed_sum - total;
    let r2 = swa + fixed_mom - target * total;
    let det = n * saa - sa * sa;
    if free.len() < 2 || det.abs() < 1e-14 {
        return None;
    }
    let lambda = (r1 * saa - sa * r2) / det;
    let mu = (n * r2 - sa * r1) / det;
    let mut out = x.to_vec();
    for &i in &free {
        out[i] = w[i] - lambda - mu * alpha[i];
        if out[i] < floor - 1e-12 || out[i] > 1.0 + 1e-12 {
            return None;
        }
        out[i] = clip(out[i], floor);
    }
    Some((out, lambda, mu))
}

/// Projects `w` onto the weights with expected ratio `target`, keeping the
/// weight total and the `[floor, 1]` box.
pub fn project_weights(w: &[f64], alpha: &[f64], target: f64, floor: f64) -> Projection {
    let total: f64 = w.iter().sum();
    let lowest = extreme(alpha, floor, total, true);
    let highest = extreme(alpha, floor, total, false);
    let (r_min, r_max) = (ratio_of(&lowest, alpha), ratio_of(&highest, alpha));
    if target <= r_min + 1e-15 || target >= r_max - 1e-15 {
        let (x, r) = if target <= r_min + 1e-15 { (lowest, r_min) } else { (highest, r_max) };
        let clamped = (target - r).abs() > 1e-12;
        return Projection { weights: x, ratio: r, target: r, clamped, kkt_residual: 0.0 };
    }

    let residual = |mu: f64| {
        let lambda = solve_lambda(w, alpha, mu, floor, total);
        let x = primal(w, alpha, lambda, mu, floor);
        (x.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>() - target * total, lambda, x)
    };
    // The residual falls as mu grows; widen the bracket until it changes sign.
    let mut bound = 1.0;
    while bound < 1e12 && (residual(-bound).0 < 0.0 || residual(bound).0 > 0.0) {
        bound *= 2.0;
    }
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        if residual(mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let (_, lambda, x) = residual(mu);
    let mut best = (kkt_residual(w, alpha, &x, lambda, mu, floor, target), x, lambda, mu);
    if let Some((px, pl, pm)) = polish(w, alpha, &best.1, floor, total, target) {
        let r = kkt_residual(w, alpha, &px, pl, pm, floor, target);
        if r < best.0 {
            best = (r, px, pl, pm);
        }
    }
    let (kkt, x, _, _) = best;
    Projection { ratio: ratio_of(&x, alpha), weights: x, target, clamped: false, kkt_residual: kkt }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn current_ratio_is_a_fixed_point() {
        let w = [0.3, 0.3, 0.4];
        let a = [0.0, 0.5, 1.0];
        let p = project_weights(&w, &a, ratio_of(&w, &a), 1e-6);
        for (x, y) in p.weights.iter().zip(&w) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_target() {
        let w = [0.3, 0.3, 0.4];
        let a = [0.0, 0.5, 1.0];
        let p = project_weights(&w, &a, 0.35, 1e-6);
        assert!((p.ratio - 0.35).abs() < 1e-12);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.kkt_residual < 1e-9, "{}", p.kkt_residual);
        // Symmetric move on the outer actions: x = w - lambda - mu * alpha.
        let d: Vec<f64> = p.weights.iter().zip(&w).map(|(x, y)| x - y).collect();
        assert!((d[0] - d[1] - (d[1] - d[2])).abs() < 1e-12);
    }

    #[test]
    fn target_zero_reaches_the_floor() {
        let w = [0.3, 0.3, 0.4];
        let a = [0.0, 0.5, 1.0];
        let p = project_weights(&w, &a, 0.0, 1e-6);
        // Every weight except the zero-ratio one sits on the floor.
        for (x, y) in p.weights.iter().zip([1.0 - 2e-6, 1e-6, 1e-6]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(p.clamped);
        assert!((p.ratio - 1.5e-6 / 1.0).abs() < 1e-12);
        let exact = project_weights(&[0.5, 0.5], &[0.0, 1.0], 0.0, 1e-6);
        assert!(exact.clamped && exact.ratio < 1e-5);
    }
}
