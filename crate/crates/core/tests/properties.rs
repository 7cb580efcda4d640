//! Property suites. The five core invariants run a million cases each.

use std::sync::OnceLock;

use proptest::prelude::*;

use evsched_core::dynamics::{
    exchange_power, exchange_power_max_form, hes_dispatch, hes_step, one_step_cost, BuildingOutcome, EvState, Physics,
};
use evsched_core::events::{classify_evs, elastic_ratios, event_of, is_must_charge, BIN_COUNT};
use evsched_core::gradient::estimator::weight_gradient;
use evsched_core::optimizer::{project_weights, step_size};
use evsched_core::policy::{action_probabilities, charge_count, greedy_index, mllp_select, Candidate};
use evsched_core::scenario::{action_grid, presets, MicrogridConfig, Scenario};

const FULL_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/microgrid.toml");
const MILLION: u32 = 1_000_000;

fn phys() -> Physics {
    static PHYS: OnceLock<Physics> = OnceLock::new();
    *PHYS.get_or_init(|| MicrogridConfig::load(FULL_CONFIG).unwrap().physics())
}

fn candidates() -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec((0u8..6, 0u8..6), 1..12).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(id, (l, p))| Candidate { id, laxity: 0.5 * l as f64, processing: 0.5 * p as f64 })
            .collect()
    })
}

// ── Million-case invariants ──────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(MILLION))]

    #[test]
    fn soc_stays_in_range(r in 0.0..3000.0f64, l in 0.0..3000.0f64, p in 0.0..400.0f64, b in 0.0..=1.0f64) {
        let phys = phys();
        let h = hes_dispatch(r, l, p, b, &phys);
        let next = hes_step(b, h, &phys);
        prop_assert!((0.0..=1.0).contains(&next));
    }

    #[test]
    fn load_balances(r in 0.0..3000.0f64, l in 0.0..3000.0f64, p in 0.0..400.0f64, b in 0.0..=1.0f64) {
        let out = BuildingOutcome::settle(r, l, p, b, 0.4883, &phys());
        prop_assert!(out.balance_residual().abs() <= 1e-9);
    }

    #[test]
    fn exchange_closed_form_matches_max_form(r in 0.0..3000.0f64, l in 0.0..3000.0f64, p in 0.0..400.0f64, b in 0.0..=1.0f64) {
        let phys = phys();
        let g = exchange_power(r, l, p, hes_dispatch(r, l, p, b, &phys));
        prop_assert!((g - exchange_power_max_form(r, l, p, b, &phys)).abs() <= 1e-9);
    }

    #[test]
    fn charge_count_is_monotone(n_m in 0usize..60, extra in 0usize..60, more in 0usize..5, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let n_c = n_m + extra;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c = charge_count(n_m, n_c, lo);
        prop_assert!(c <= charge_count(n_m, n_c, hi));
        prop_assert!(c <= charge_count(n_m, n_c + more, lo));
        prop_assert!((n_m..=n_c).contains(&c));
    }

    #[test]
    fn mllp_is_deterministic(cands in candidates(), count_seed in 0usize..100, perm in any::<u64>()) {
        let count = count_seed % (cands.len() + 1);
        let first = mllp_select(&mut cands.clone(), count).unwrap();
        let mut shuffled = cands.clone();
        let n = shuffled.len();
        let mut state = perm;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let again = mllp_select(&mut shuffled, count).unwrap();
        prop_assert_eq!(&first, &again);
        prop_assert_eq!(first.len(), count);
        // Zero-laxity EVs come first whenever there is room for all of them.
        let must: Vec<usize> = cands.iter().filter(|c| c.laxity == 0.0).map(|c| c.id).collect();
        if count >= must.len() {
            prop_assert!(must.iter().all(|id| first.contains(id)));
        }
    }
}

// ── Dynamics and events ──────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn stage_cost_is_price_times_exchange(r in 0.0..3000.0f64, l in 0.0..3000.0f64, p in 0.0..400.0f64, b in 0.0..=1.0f64, price in 0.1..1.0f64) {
        let phys = phys();
        let g = exchange_power(r, l, p, hes_dispatch(r, l, p, b, &phys));
        let c = one_step_cost(r, l, p, b, price, &phys);
        prop_assert!((c - price * phys.dt * g).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn event_value_is_a_unit_fraction(
        n_m in 0usize..100, extra in 0usize..100, piles in 1usize..300,
        soc in 0.0..=1.0f64, wind in 0.0..2000.0f64, cap in 1.0..1000.0f64,
    ) {
        let n_c = (n_m + extra).min(piles.max(n_m));
        let e = event_of(elastic_ratios(n_m, n_c.max(n_m), piles, soc, wind, cap));
        prop_assert!((0.0..=1.0).contains(&e.value));
        prop_assert!(e.bin < BIN_COUNT);
    }

    #[test]
    fn more_energy_never_lowers_must_charge(
        evs in prop::collection::vec((1u8..30, 0.0..36.0f64), 0..20), which in 0usize..20, add in 0.0..10.0f64,
    ) {
        let phys = phys();
        let mut parked: Vec<EvState> = evs.iter().map(|&(h, e)| EvState::parked(0.5 * h as f64, e, 1)).collect();
        let (n_m, n_c) = classify_evs(&parked, &phys);
        prop_assert!(n_m <= n_c);
        if !parked.is_empty() {
            let i = which % parked.len();
            let before = is_must_charge(&parked[i], &phys);
            parked[i].energy_kwh = (parked[i].energy_kwh + add).min(phys.battery_kwh);
            prop_assert!(!before || is_must_charge(&parked[i], &phys));
            let (n_m2, _) = classify_evs(&parked, &phys);
            prop_assert!(n_m2 >= n_m);
        }
    }
}

// ── Policy and optimizer ─────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn scaling_a_cell_changes_nothing(w in prop::collection::vec(0.001..1.0f64, 2..12), c in 0.01..100.0f64) {
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let (p, q) = (action_probabilities(&w).unwrap(), action_probabilities(&scaled).unwrap());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(greedy_index(&w), greedy_index(&scaled));
    }

    #[test]
    fn equal_values_give_zero_gradient(w in prop::collection::vec(0.001..1.0f64, 2..12), v in -500.0..500.0f64) {
        let d = weight_gradient(&w, &vec![v; w.len()]);
        prop_assert!(d.iter().sum::<f64>().abs() <= 1e-9 * (1.0 + v.abs()));
        prop_assert!(d.iter().all(|x| x.abs() <= 1e-9 * (1.0 + v.abs())));
    }

    #[test]
    fn projection_hits_target_inside_the_box(w in prop::collection::vec(0.01..1.0f64, 2..12), u in 0.0..=1.0f64) {
        let alpha = action_grid(w.len());
        let p = project_weights(&w, &alpha, u, 1e-6);
        prop_assert!(p.weights.iter().all(|x| (1e-6..=1.0).contains(x)));
        prop_assert!((p.weights.iter().sum::<f64>() - w.iter().sum::<f64>()).abs() <= 1e-9);
        if !p.clamped {
            prop_assert!((p.ratio - u).abs() <= 1e-9);
            prop_assert!(p.kkt_residual < 1e-9);
        } else {
            prop_assert!((p.ratio - p.target).abs() <= 1e-12);
        }
    }
}

#[test]
fn steps_start_at_one_and_decrease() {
    assert_eq!(step_size(0, 0.1), 1.0);
    for j in 1..10_000 {
        assert!(step_size(j, 0.1) < step_size(j - 1, 0.1));
    }
}

// ── Scenario ─────────────────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_stays_are_deliverable(seed in any::<u64>()) {
        let cfg = MicrogridConfig::load(FULL_CONFIG).unwrap();
        let phys = cfg.physics();
        let scen = Scenario::generate(&cfg, seed);
        for it in &scen.itineraries {
            for s in it.segments() {
                let deliverable = phys.charge_kw * phys.charge_eff * s.parking_hours(cfg.dt_hours);
                prop_assert!(s.energy_kwh <= deliverable + 1e-9);
                prop_assert!(s.energy_kwh <= phys.battery_kwh);
            }
        }
        prop_assert_eq!(scen.dump_csv(&cfg), Scenario::generate(&cfg, seed).dump_csv(&cfg));
    }
}

#[test]
fn energy_accounts_over_a_run() {
    use evsched_core::harness::run_rule_based;
    let cfg = presets::tiny();
    let report = run_rule_based(&cfg, 0);
    let dt = cfg.dt_hours;
    let (mut supply, mut demand) = (0.0, 0.0);
    for b in report.stages.iter().flat_map(|s| &s.buildings) {
        supply += (b.exchange_kw + b.wind_kw + b.hes_kw) * dt;
        demand += (b.load_kw + b.charge_kw) * dt;
    }
    assert!((supply - demand).abs() <= 1e-6);
    // Both EVs leave fully charged: delivered energy covers their demand.
    let charged_kwh: f64 = report.stages.iter().flat_map(|s| &s.buildings).map(|b| b.charge_kw * dt).sum();
    assert!(charged_kwh * cfg.ev.charge_efficiency >= 1.656 + 3.0 - 1e-9);
}
