use serde::{Deserialize, Serialize};

/// One parking stay: arrival stage, building (1-based), length and the
/// energy the driver asks for during the stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub arrival_stage: usize,
    pub building: usize,
    pub parking_stages: usize,
    pub energy_kwh: f64,
}

impl Segment {
    pub fn parking_hours(&self, dt_hours: f64) -> f64 {
        self.parking_stages as f64 * dt_hours
    }

    /// First stage at which the EV is back on the road.
    pub fn departure_stage(&self) -> usize {
        self.arrival_stage + self.parking_stages
    }

    pub fn shifted(&self, offset: usize) -> Segment {
        Segment { arrival_stage: self.arrival_stage + offset, ..self.clone() }
    }
}

/// A day of parking segments for one EV.
///
/// `carry_in` is the overnight stay the EV is already in when the simulated
/// horizon opens; it exists on the first day only. `daily` segments repeat
/// every day, and a segment may run past the end of its day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Itinerary {
    pub ev: usize,
    pub home: usize,
    #[serde(default)]
    pub carry_in: Option<Segment>,
    pub daily: Vec<Segment>,
}

impl Itinerary {
    /// All segments of the first day, in time order.
    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.carry_in.iter().chain(self.daily.iter())
    }

    /// Segments on the absolute stage axis for `days` consecutive days.
    pub fn expand(&self, days: usize, stages_per_day: usize) -> Vec<Segment> {
        let mut out: Vec<Segment> = self.carry_in.iter().cloned().collect();
        for day in 0..days {
            out.extend(self.daily.iter().map(|s| s.shifted(day * stages_per_day)));
        }
        out
    }

    /// Checks ordering and the deliverability bound `energy <= P * psi * tau`.
    pub fn check(&self, p_kw: f64, psi: f64, e_cap: f64, dt: f64) -> Result<(), String> {
        let mut free_from = 0usize;
        for (i, seg) in self.segments().enumerate() {
            if seg.parking_stages == 0 {
                return Err(format!("segment {i} has zero parking time"));
            }
            if seg.arrival_stage < free_from {
                return Err(format!("segment {i} overlaps the previous stay"));
            }
            if !(0.0..=e_cap).contains(&seg.energy_kwh) {
                return Err(format!("segment {i} energy {} outside [0, {e_cap}]", seg.energy_kwh));
            }
            let deliverable = p_kw * psi * seg.parking_hours(dt);
            if seg.energy_kwh > deliverable + 1e-9 {
                return Err(format!(
                    "segment {i} asks {} kWh but only {deliverable} kWh fit in the stay",
                    seg.energy_kwh
                ));
            }
            free_from = seg.departure_stage() + 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: usize, b: usize, n: usize, e: f64) -> Segment {
        Segment { arrival_stage: a, building: b, parking_stages: n, energy_kwh: e }
    }

    #[test]
    fn expand_repeats_daily_only() {
        let it = Itinerary {
            ev: 0,
            home: 1,
            carry_in: Some(seg(0, 1, 14, 10.0)),
            daily: vec![seg(17, 3, 17, 12.0), seg(36, 1, 26, 20.0)],
        };
        let abs = it.expand(2, 48);
        assert_eq!(abs.len(), 5);
        assert_eq!(abs[3].arrival_stage, 17 + 48);
        assert_eq!(abs[4].departure_stage(), 36 + 48 + 26);
    }

    #[test]
    fn check_rejects_undeliverable_energy() {
        let it = Itinerary { ev: 0, home: 1, carry_in: None, daily: vec![seg(0, 1, 1, 1.7)] };
        assert!(it.check(3.6, 0.92, 36.0, 0.5).is_err());
        let ok = Itinerary { ev: 0, home: 1, carry_in: None, daily: vec![seg(0, 1, 1, 1.656)] };
        assert!(ok.check(3.6, 0.92, 36.0, 0.5).is_ok());
    }

    #[test]
    fn check_rejects_back_to_back_stays() {
        let it = Itinerary { ev: 0, home: 1, carry_in: None, daily: vec![seg(0, 1, 2, 1.0), seg(2, 3, 2, 1.0)] };
        assert!(it.check(3.6, 0.92, 36.0, 0.5).is_err());
    }
}
