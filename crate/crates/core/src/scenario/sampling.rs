//! Random draws for wind, charging demand and commuting itineraries.
//!
//! Clock times are drawn in hours and snapped to the nearest stage.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{CommuteSpec, DemandModel, HomeSpec};
use super::itinerary::{Itinerary, Segment};
use crate::dynamics::Physics;

const DEMAND_ATTEMPTS: usize = 100;

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(mean, std).expect("finite normal parameters").sample(rng)
    } else {
        mean
    }
}

/// Realized wind around a forecast, clamped to `[0, capacity]`.
pub fn sample_wind<R: Rng + ?Sized>(rng: &mut R, forecast_kw: f64, rel_std: f64, capacity_kw: f64) -> f64 {
    if forecast_kw <= 0.0 {
        return 0.0;
    }
    normal(rng, forecast_kw, rel_std * forecast_kw).clamp(0.0, capacity_kw.max(0.0))
}

/// Energy requested for a stay of `parking_hours`, never more than the pile
/// can deliver in that time nor more than the battery holds.
pub fn sample_charge_demand<R: Rng + ?Sized>(rng: &mut R, model: &DemandModel, parking_hours: f64, phys: &Physics) -> f64 {
    let cap = phys.battery_kwh.min(phys.charge_kw * phys.charge_eff * parking_hours).max(0.0);
    let draw = |rng: &mut R| match model {
        DemandModel::Uniform { min_kwh, max_kwh } => {
            if max_kwh > min_kwh {
                rng.random_range(*min_kwh..*max_kwh)
            } else {
                *min_kwh
            }
        }
        DemandModel::Fixed { kwh } => *kwh,
    };
    let mut eta = draw(rng);
    for _ in 1..DEMAND_ATTEMPTS {
        if eta <= cap {
            break;
        }
        if matches!(model, DemandModel::Fixed { .. }) {
            break;
        }
        eta = draw(rng);
    }
    eta.clamp(0.0, cap)
}

/// Trip duration in stages, at least one.
pub fn sample_trip_stages<R: Rng + ?Sized>(rng: &mut R, home: &HomeSpec, dt: f64) -> usize {
    let hours = normal(rng, home.trip_mean_h, home.trip_std_h);
    ((hours / dt).round() as i64).max(1) as usize
}

/// A clock time of day in stages, drawn around `mean_h`; may fall outside
/// the day, callers clamp or wrap it.
pub fn sample_clock_stage<R: Rng + ?Sized>(rng: &mut R, mean_h: f64, std_h: f64, dt: f64) -> i64 {
    (normal(rng, mean_h, std_h) / dt).round() as i64
}

/// One commuter's cyclic day: overnight at home, a stay at the office, and
/// the evening stay at home that runs into the next morning.
pub fn sample_itinerary<R: Rng + ?Sized>(
    rng: &mut R,
    commute: &CommuteSpec,
    demand: &DemandModel,
    phys: &Physics,
    stages: usize,
    ev: usize,
) -> Itinerary {
    let home = commute.home_of(ev).expect("every EV has a home");
    let t = stages as i64;
    let dt = phys.dt;
    let leave_home = sample_clock_stage(rng, commute.home_departure_mean_h, commute.home_departure_std_h, dt).clamp(1, t - 1) as usize;
    let to_office = sample_trip_stages(rng, home, dt);
    let at_office = leave_home + to_office;
    let drawn = sample_clock_stage(rng, commute.office_departure_mean_h, commute.office_departure_std_h, dt).max(0) as usize;
    let leave_office = drawn.max(at_office + 1);
    let to_home = sample_trip_stages(rng, home, dt);
    let at_home = leave_office + to_home;
    // The evening stay ends at the next morning's departure.
    let next_morning = stages + leave_home;
    let evening = next_morning.saturating_sub(at_home).max(1);

    let seg = |arrival: usize, building: usize, parking: usize, rng: &mut R| {
        let energy_kwh = sample_charge_demand(rng, demand, parking as f64 * dt, phys);
        Segment { arrival_stage: arrival, building, parking_stages: parking, energy_kwh }
    };
    let carry_in = seg(0, home.building, leave_home, rng);
    let office = seg(at_office, commute.office_building, leave_office - at_office, rng);
    let evening = seg(at_home, home.building, evening, rng);
    Itinerary { ev, home: home.building, carry_in: Some(carry_in), daily: vec![office, evening] }
}
