//! Microgrid configuration: file schema, expansion to per-stage profiles and
//! validation.
//!
//! The on-disk format is TOML. Hourly profiles are held constant over the
//! stages inside each hour; tariff blocks are given as clock-hour ranges that
//! may wrap past midnight. See `docs/config.md` for the full schema.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::Physics;
use crate::error::ConfigError;
use crate::scenario::Itinerary;

const HOURS_PER_DAY: f64 = 24.0;

// ── File schema ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    horizon: HorizonFile,
    tariff: TariffFile,
    grid: GridFile,
    ev: EvFile,
    hes: HesFile,
    #[serde(default)]
    wind: WindFile,
    #[serde(default)]
    optimizer: OptimizerFile,
    #[serde(default)]
    commute: Option<CommuteFile>,
    #[serde(rename = "building")]
    buildings: Vec<BuildingFile>,
    #[serde(default, rename = "itinerary")]
    itineraries: Vec<Itinerary>,
    #[serde(default, rename = "transition")]
    transitions: Vec<TransitionFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HorizonFile {
    stages: usize,
    dt_hours: f64,
    window_stages: usize,
    #[serde(default)]
    warmup_days: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TariffFile {
    #[serde(default)]
    blocks: Vec<TariffBlock>,
    #[serde(default)]
    price_rmb_per_kwh_by_stage: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TariffBlock {
    from_hour: f64,
    to_hour: f64,
    price_rmb_per_kwh: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    exchange_min_kw: f64,
    exchange_max_kw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvFile {
    count: usize,
    charge_power_kw: f64,
    battery_capacity_kwh: f64,
    charge_efficiency: f64,
    demand: DemandModel,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HesFile {
    energy_capacity_kwh: f64,
    charge_efficiency: f64,
    discharge_efficiency: f64,
    power_cap_kw: f64,
    #[serde(default = "default_soc")]
    initial_soc: f64,
}

fn default_soc() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindFile {
    relative_std: f64,
}

impl Default for WindFile {
    fn default() -> Self {
        WindFile { relative_std: 0.10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerFile {
    #[serde(default = "default_eps")]
    epsilon: f64,
    #[serde(default = "default_paths")]
    paths: usize,
    #[serde(default = "default_decay")]
    step_decay: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default)]
    action_count: Option<usize>,
    #[serde(default)]
    actions: Option<Vec<f64>>,
    #[serde(default = "default_floor")]
    weight_floor: f64,
    #[serde(default)]
    branching: Branching,
}

fn default_eps() -> f64 {
    0.1
}
fn default_paths() -> usize {
    50
}
fn default_decay() -> f64 {
    0.1
}
fn default_max_iter() -> usize {
    50
}
fn default_floor() -> f64 {
    1e-6
}

impl Default for OptimizerFile {
    fn default() -> Self {
        OptimizerFile {
            epsilon: default_eps(),
            paths: default_paths(),
            step_decay: default_decay(),
            max_iter: default_max_iter(),
            action_count: None,
            actions: None,
            weight_floor: default_floor(),
            branching: Branching::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommuteFile {
    office_building: usize,
    home_departure_mean_h: f64,
    home_departure_std_min: f64,
    office_departure_mean_h: f64,
    office_departure_std_min: f64,
    homes: Vec<HomeFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomeFile {
    building: usize,
    ev_count: usize,
    trip_mean_min: f64,
    trip_std_min: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildingFile {
    name: String,
    piles: usize,
    #[serde(default)]
    load_kw_by_hour: Option<Vec<f64>>,
    #[serde(default)]
    load_kw_by_stage: Option<Vec<f64>>,
    #[serde(default)]
    wind_forecast_kw_by_hour: Option<Vec<f64>>,
    #[serde(default)]
    wind_forecast_kw_by_stage: Option<Vec<f64>>,
    #[serde(default)]
    wind_capacity_kw: Option<f64>,
    #[serde(default)]
    exchange_min_kw: Option<f64>,
    #[serde(default)]
    exchange_max_kw: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionFile {
    stage: usize,
    rows: Vec<Vec<f64>>,
}

// ── Validated configuration ──────────────────────────────────────────────────

/// Required-energy model for new parking stays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandModel {
    Uniform { min_kwh: f64, max_kwh: f64 },
    Fixed { kwh: f64 },
}

/// How rollouts choose the stage-t0 action of each sample path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branching {
    /// Every sample path is replayed once per action, with shared randomness.
    #[default]
    AllActions,
    /// One action per path, drawn from the current policy.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeBounds {
    pub min_kw: f64,
    pub max_kw: f64,
}

impl ExchangeBounds {
    pub fn unbounded() -> Self {
        ExchangeBounds { min_kw: f64::NEG_INFINITY, max_kw: f64::INFINITY }
    }

    /// Signed violation: positive above the upper bound, negative below the lower.
    pub fn violation(&self, g: f64) -> f64 {
        (g - self.max_kw).max(0.0) - (self.min_kw - g).max(0.0)
    }

    pub fn contains(&self, g: f64) -> bool {
        g >= self.min_kw && g <= self.max_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingSpec {
    pub name: String,
    pub piles: usize,
    pub load_kw: Vec<f64>,
    pub wind_forecast_kw: Vec<f64>,
    pub wind_capacity_kw: f64,
    pub exchange: ExchangeBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvSpec {
    pub count: usize,
    pub charge_power_kw: f64,
    pub battery_kwh: f64,
    pub charge_efficiency: f64,
    pub demand: DemandModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HesSpec {
    pub energy_capacity_kwh: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub power_cap_kw: f64,
    pub initial_soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSpec {
    pub epsilon: f64,
    pub paths: usize,
    pub step_decay: f64,
    pub max_iter: usize,
    pub actions: Vec<f64>,
    pub weight_floor: f64,
    pub branching: Branching,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomeSpec {
    pub building: usize,
    pub ev_count: usize,
    pub trip_mean_h: f64,
    pub trip_std_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommuteSpec {
    pub office_building: usize,
    pub home_departure_mean_h: f64,
    pub home_departure_std_h: f64,
    pub office_departure_mean_h: f64,
    pub office_departure_std_h: f64,
    pub homes: Vec<HomeSpec>,
}

impl CommuteSpec {
    /// Home building of EV `ev` (EVs are assigned to homes in listing order).
    pub fn home_of(&self, ev: usize) -> Option<&HomeSpec> {
        let mut upto = 0;
        for h in &self.homes {
            upto += h.ev_count;
            if ev < upto {
                return Some(h);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MobilitySpec {
    Commute(CommuteSpec),
    Fixed(Vec<Itinerary>),
}

/// Per-stage location transition matrix: K rows (parked at building k) by
/// K+1 columns (buildings 1..K, then the road).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    pub stage: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicrogridConfig {
    pub stages: usize,
    pub dt_hours: f64,
    pub window: usize,
    pub warmup_days: usize,
    pub price: Vec<f64>,
    pub grid: ExchangeBounds,
    pub buildings: Vec<BuildingSpec>,
    pub wind_rel_std: f64,
    pub ev: EvSpec,
    pub hes: HesSpec,
    pub optimizer: OptimizerSpec,
    pub mobility: MobilitySpec,
    pub transitions: Vec<TransitionMatrix>,
}

/// Evenly spaced charge ratios on [0, 1]; a single action means "charge all".
pub fn action_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![1.0],
        m => (0..m).map(|i| i as f64 / (m - 1) as f64).collect(),
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

/// Piecewise-constant hourly profile averaged over each stage.
fn hourly_to_stages(hourly: &[f64], stages: usize, dt: f64) -> Vec<f64> {
    (0..stages)
        .map(|t| {
            let (start, end) = (t as f64 * dt, (t + 1) as f64 * dt);
            let mut acc = 0.0;
            let mut h = start.floor();
            while h < end - 1e-12 {
                let lo = h.max(start);
                let hi = (h + 1.0).min(end);
                acc += hourly[(h as usize) % hourly.len()] * (hi - lo);
                h += 1.0;
            }
            acc / dt
        })
        .collect()
}

fn tariff_to_stages(blocks: &[TariffBlock], stages: usize, dt: f64) -> Result<Vec<f64>, ConfigError> {
    (0..stages)
        .map(|t| {
            let clock = (t as f64 * dt) % HOURS_PER_DAY;
            blocks
                .iter()
                .find(|b| {
                    if b.from_hour <= b.to_hour {
                        clock >= b.from_hour && clock < b.to_hour
                    } else {
                        clock >= b.from_hour || clock < b.to_hour
                    }
                })
                .map(|b| b.price_rmb_per_kwh)
                .ok_or_else(|| invalid("tariff.blocks", format!("no block covers {clock:.2} h (stage {t})")))
        })
        .collect()
}

fn stage_profile(
    field: &str,
    by_hour: &Option<Vec<f64>>,
    by_stage: &Option<Vec<f64>>,
    stages: usize,
    dt: f64,
) -> Result<Vec<f64>, ConfigError> {
    match (by_hour, by_stage) {
        (Some(h), None) => {
            if h.len() != 24 {
                return Err(invalid(format!("{field}_by_hour"), format!("expected 24 values, got {}", h.len())));
            }
            Ok(hourly_to_stages(h, stages, dt))
        }
        (None, Some(s)) => {
            if s.len() != stages {
                return Err(invalid(format!("{field}_by_stage"), format!("expected {stages} values, got {}", s.len())));
            }
            Ok(s.clone())
        }
        (None, None) => Err(invalid(field, "missing profile")),
        (Some(_), Some(_)) => Err(invalid(field, "give either the hourly or the per-stage profile, not both")),
    }
}

impl MicrogridConfig {
    /// Reads and validates a TOML configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text)?;
        Self::from_file(file)
    }

    fn from_file(f: FileConfig) -> Result<Self, ConfigError> {
        let stages = f.horizon.stages;
        let dt = f.horizon.dt_hours;
        if stages == 0 || !(dt > 0.0) {
            return Err(invalid("horizon", "stages and dt_hours must be positive"));
        }
        let price = match (&f.tariff.price_rmb_per_kwh_by_stage, f.tariff.blocks.is_empty()) {
            (Some(p), true) => p.clone(),
            (None, false) => tariff_to_stages(&f.tariff.blocks, stages, dt)?,
            _ => return Err(invalid("tariff", "give either blocks or price_rmb_per_kwh_by_stage")),
        };

        let mut buildings = Vec::with_capacity(f.buildings.len());
        for (i, b) in f.buildings.iter().enumerate() {
            let load_kw = stage_profile(&format!("building[{i}].load_kw"), &b.load_kw_by_hour, &b.load_kw_by_stage, stages, dt)?;
            let wind_forecast_kw = stage_profile(
                &format!("building[{i}].wind_forecast_kw"),
                &b.wind_forecast_kw_by_hour,
                &b.wind_forecast_kw_by_stage,
                stages,
                dt,
            )?;
            let wind_capacity_kw = b
                .wind_capacity_kw
                .unwrap_or_else(|| wind_forecast_kw.iter().cloned().fold(0.0, f64::max));
            buildings.push(BuildingSpec {
                name: b.name.clone(),
                piles: b.piles,
                load_kw,
                wind_forecast_kw,
                wind_capacity_kw,
                exchange: ExchangeBounds {
                    min_kw: b.exchange_min_kw.unwrap_or(f64::NEG_INFINITY),
                    max_kw: b.exchange_max_kw.unwrap_or(f64::INFINITY),
                },
            });
        }

        let actions = match (&f.optimizer.actions, f.optimizer.action_count) {
            (Some(a), None) => a.clone(),
            (None, Some(m)) => action_grid(m),
            (None, None) => action_grid(11),
            (Some(_), Some(_)) => return Err(invalid("optimizer", "give either actions or action_count")),
        };

        let mobility = match (f.commute, f.itineraries.is_empty()) {
            (Some(c), true) => MobilitySpec::Commute(CommuteSpec {
                office_building: c.office_building,
                home_departure_mean_h: c.home_departure_mean_h,
                home_departure_std_h: c.home_departure_std_min / 60.0,
                office_departure_mean_h: c.office_departure_mean_h,
                office_departure_std_h: c.office_departure_std_min / 60.0,
                homes: c
                    .homes
                    .iter()
                    .map(|h| HomeSpec {
                        building: h.building,
                        ev_count: h.ev_count,
                        trip_mean_h: h.trip_mean_min / 60.0,
                        trip_std_h: h.trip_std_min / 60.0,
                    })
                    .collect(),
            }),
            (None, false) => MobilitySpec::Fixed(f.itineraries),
            _ => return Err(invalid("commute", "give either a [commute] table or [[itinerary]] entries")),
        };

        let cfg = MicrogridConfig {
            stages,
            dt_hours: dt,
            window: f.horizon.window_stages,
            warmup_days: f.horizon.warmup_days,
            price,
            grid: ExchangeBounds { min_kw: f.grid.exchange_min_kw, max_kw: f.grid.exchange_max_kw },
            buildings,
            wind_rel_std: f.wind.relative_std,
            ev: EvSpec {
                count: f.ev.count,
                charge_power_kw: f.ev.charge_power_kw,
                battery_kwh: f.ev.battery_capacity_kwh,
                charge_efficiency: f.ev.charge_efficiency,
                demand: f.ev.demand,
            },
            hes: HesSpec {
                energy_capacity_kwh: f.hes.energy_capacity_kwh,
                charge_efficiency: f.hes.charge_efficiency,
                discharge_efficiency: f.hes.discharge_efficiency,
                power_cap_kw: f.hes.power_cap_kw,
                initial_soc: f.hes.initial_soc,
            },
            optimizer: OptimizerSpec {
                epsilon: f.optimizer.epsilon,
                paths: f.optimizer.paths,
                step_decay: f.optimizer.step_decay,
                max_iter: f.optimizer.max_iter,
                actions,
                weight_floor: f.optimizer.weight_floor,
                branching: f.optimizer.branching,
            },
            mobility,
            transitions: f
                .transitions
                .into_iter()
                .map(|t| TransitionMatrix { stage: t.stage, rows: t.rows })
                .collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn building_count(&self) -> usize {
        self.buildings.len()
    }

    pub fn action_count(&self) -> usize {
        self.optimizer.actions.len()
    }

    /// Tariff of a stage; absolute stages wrap by day.
    pub fn price_at(&self, stage: usize) -> f64 {
        self.price[stage % self.stages]
    }

    pub fn physics(&self) -> Physics {
        Physics {
            dt: self.dt_hours,
            charge_kw: self.ev.charge_power_kw,
            charge_eff: self.ev.charge_efficiency,
            battery_kwh: self.ev.battery_kwh,
            hes_capacity_kwh: self.hes.energy_capacity_kwh,
            hes_charge_eff: self.hes.charge_efficiency,
            hes_discharge_eff: self.hes.discharge_efficiency,
            hes_power_kw: self.hes.power_cap_kw,
        }
    }

    /// Checks every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages == 0 || !(self.dt_hours > 0.0) {
            return Err(invalid("horizon", "stages and dt_hours must be positive"));
        }
        if ((self.stages as f64) * self.dt_hours - HOURS_PER_DAY).abs() > 1e-9 {
            return Err(invalid(
                "horizon",
                format!("stages * dt_hours = {} h, expected 24 h", self.stages as f64 * self.dt_hours),
            ));
        }
        if self.window == 0 || self.window > self.stages {
            return Err(invalid("horizon.window_stages", format!("must lie in [1, {}]", self.stages)));
        }
        if self.price.len() != self.stages {
            return Err(invalid("tariff", format!("expected {} stage prices, got {}", self.stages, self.price.len())));
        }
        if let Some(p) = self.price.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid("tariff", format!("price {p} must be finite and >= 0")));
        }
        if !(self.grid.min_kw <= self.grid.max_kw) {
            return Err(invalid("grid", format!("exchange_min_kw {} > exchange_max_kw {}", self.grid.min_kw, self.grid.max_kw)));
        }
        for (name, eff) in [
            ("ev.charge_efficiency", self.ev.charge_efficiency),
            ("hes.charge_efficiency", self.hes.charge_efficiency),
            ("hes.discharge_efficiency", self.hes.discharge_efficiency),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(invalid(name, format!("{eff} outside (0, 1]")));
            }
        }
        for (name, v) in [
            ("ev.battery_capacity_kwh", self.ev.battery_kwh),
            ("ev.charge_power_kw", self.ev.charge_power_kw),
            ("hes.energy_capacity_kwh", self.hes.energy_capacity_kwh),
            ("hes.power_cap_kw", self.hes.power_cap_kw),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.hes.initial_soc) {
            return Err(invalid("hes.initial_soc", "must lie in [0, 1]"));
        }
        if !(self.wind_rel_std >= 0.0) {
            return Err(invalid("wind.relative_std", "must be >= 0"));
        }
        match &self.ev.demand {
            DemandModel::Uniform { min_kwh, max_kwh } if !(0.0 <= *min_kwh && min_kwh <= max_kwh) => {
                return Err(invalid("ev.demand", "need 0 <= min_kwh <= max_kwh"));
            }
            DemandModel::Fixed { kwh } if !(*kwh >= 0.0) => return Err(invalid("ev.demand", "kwh must be >= 0")),
            _ => {}
        }
        if self.buildings.is_empty() {
            return Err(invalid("building", "at least one building is required"));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if b.piles == 0 {
                return Err(invalid(format!("building[{i}].piles"), "must be positive"));
            }
            if b.load_kw.len() != self.stages || b.wind_forecast_kw.len() != self.stages {
                return Err(invalid(format!("building[{i}]"), "profiles must cover every stage"));
            }
            if b.load_kw.iter().chain(&b.wind_forecast_kw).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(format!("building[{i}]"), "loads and wind forecasts must be finite and >= 0"));
            }
            if !(b.wind_capacity_kw >= 0.0) {
                return Err(invalid(format!("building[{i}].wind_capacity_kw"), "must be >= 0"));
            }
            if !(b.exchange.min_kw <= b.exchange.max_kw) {
                return Err(invalid(format!("building[{i}].exchange"), "min above max"));
            }
        }
        let opt = &self.optimizer;
        if opt.actions.is_empty() {
            return Err(invalid("optimizer.actions", "need at least one action"));
        }
        if opt.actions.iter().any(|a| !(0.0..=1.0).contains(a)) || opt.actions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("optimizer.actions", "ratios must be strictly increasing within [0, 1]"));
        }
        if !(opt.weight_floor > 0.0 && opt.weight_floor <= 1.0) {
            return Err(invalid("optimizer.weight_floor", "must lie in (0, 1]"));
        }
        if opt.paths == 0 || opt.max_iter == 0 || !(opt.epsilon > 0.0) || !(opt.step_decay >= 0.0) {
            return Err(invalid("optimizer", "paths, max_iter and epsilon must be positive, step_decay >= 0"));
        }
        let k = self.building_count();
        match &self.mobility {
            MobilitySpec::Commute(c) => {
                if c.office_building == 0 || c.office_building > k {
                    return Err(invalid("commute.office_building", format!("must lie in 1..={k}")));
                }
                let total: usize = c.homes.iter().map(|h| h.ev_count).sum();
                if total != self.ev.count {
                    return Err(invalid("commute.homes", format!("ev counts sum to {total}, ev.count is {}", self.ev.count)));
                }
                for h in &c.homes {
                    if h.building == 0 || h.building > k || h.building == c.office_building {
                        return Err(invalid("commute.homes", format!("bad home building {}", h.building)));
                    }
                    if self.buildings[h.building - 1].piles < h.ev_count {
                        return Err(invalid("commute.homes", format!("building {} has fewer piles than residents", h.building)));
                    }
                    if !(h.trip_mean_h >= 0.0 && h.trip_std_h >= 0.0) {
                        return Err(invalid("commute.homes", "trip times must be >= 0"));
                    }
                }
                if self.buildings[c.office_building - 1].piles < self.ev.count {
                    return Err(invalid("commute.office_building", "office has fewer piles than EVs"));
                }
                if !(c.home_departure_std_h >= 0.0 && c.office_departure_std_h >= 0.0) {
                    return Err(invalid("commute", "departure spreads must be >= 0"));
                }
            }
            MobilitySpec::Fixed(its) => {
                if its.len() != self.ev.count {
                    return Err(invalid("itinerary", format!("{} itineraries for {} EVs", its.len(), self.ev.count)));
                }
                for (i, it) in its.iter().enumerate() {
                    if it.ev != i {
                        return Err(invalid(format!("itinerary[{i}].ev"), "itineraries must be listed in EV order"));
                    }
                    if it.segments().any(|s| s.building == 0 || s.building > k) {
                        return Err(invalid(format!("itinerary[{i}]"), "segment building out of range"));
                    }
                    it.check(self.ev.charge_power_kw, self.ev.charge_efficiency, self.ev.battery_kwh, self.dt_hours)
                        .map_err(|e| invalid(format!("itinerary[{i}]"), e))?;
                }
            }
        }
        for m in &self.transitions {
            if m.stage >= self.stages {
                return Err(invalid("transition.stage", format!("{} out of range", m.stage)));
            }
            if m.rows.len() != k || m.rows.iter().any(|r| r.len() != k + 1) {
                return Err(invalid(format!("transition[stage {}]", m.stage), format!("expected {k} rows of {} entries", k + 1)));
            }
            for (r, row) in m.rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        format!("transition[stage {}].rows[{r}]", m.stage),
                        format!("row not stochastic (sums to {sum})"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON used for scenario hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
