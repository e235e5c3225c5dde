//! The hourly market MDP: state assembly, action sanitization, device
//! transitions, reward, and market data ingestion/synthesis.
//!
//! All powers at the environment interface are MJ/h and prices are currency
//! per MJ. Battery powers are converted to the capacity-normalized units of
//! [`crate::storage`] through `battery_capacity`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{
    battery_cost_exact, battery_cost_linear, battery_step, clamp_battery_power, clamp_hes_power,
    discharge_rate, electrolyzer_flow, fuel_cell_flow, hes_cost, reservoir_step,
    update_device_status, BatteryCostModel, BatteryParams, BatteryState, DeviceCost, HesCostModel,
    HydrogenParams, HydrogenState,
};

pub const HOURS_PER_DAY: usize = 24;

// ---------------------------------------------------------------------------
// Market data
// ---------------------------------------------------------------------------

/// Hourly electricity price and PV generation series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub prices: Vec<f64>,
    pub pv: Vec<f64>,
}

impl MarketSeries {
    pub fn new(prices: Vec<f64>, pv: Vec<f64>) -> Result<Self> {
        let s = Self { prices, pv };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.prices.len() != self.pv.len() {
            return Err(Error::Validation(format!(
                "price and pv series lengths differ: {} vs {}",
                self.prices.len(),
                self.pv.len()
            )));
        }
        for (i, &p) in self.prices.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::Validation(format!("negative price {p} at row {i}")));
            }
        }
        for (i, &p) in self.pv.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::Validation(format!("negative pv {p} at row {i}")));
            }
        }
        Ok(())
    }
}

/// Loads a series from CSV with header `hour,price,pv`, one row per hour.
/// The hour column must be a contiguous 0-based index.
pub fn load_series(path: impl AsRef<Path>) -> Result<MarketSeries> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    {
        let headers = reader.headers().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let expected = ["hour", "price", "pv"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Validation(format!(
                "expected CSV header {expected:?}, got {got:?}"
            )));
        }
    }
    let mut prices = Vec::new();
    let mut pv = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let field = |j: usize, name: &str| -> Result<f64> {
            record
                .get(j)
                .ok_or_else(|| Error::Validation(format!("row {i}: missing column {name}")))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("row {i}: unparsable {name}")))
        };
        let hour = field(0, "hour")?;
        if hour != i as f64 {
            return Err(Error::Validation(format!(
                "row {i}: hour column is {hour}, expected contiguous 0-based hours"
            )));
        }
        prices.push(field(1, "price")?);
        pv.push(field(2, "pv")?);
    }
    MarketSeries::new(prices, pv)
}

/// Writes a series back out in the same CSV schema `load_series` reads.
pub fn save_series(series: &MarketSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut write = || -> csv::Result<()> {
        writer.write_record(["hour", "price", "pv"])?;
        for h in 0..series.len() {
            writer.write_record([
                h.to_string(),
                format!("{}", series.prices[h]),
                format!("{}", series.pv[h]),
            ])?;
        }
        writer.flush().map_err(csv::Error::from)
    };
    write().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Shape parameters for the synthetic daily price/PV generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub price_base: f64,
    /// Amplitude of the morning (8h) price peak.
    pub price_morning: f64,
    /// Amplitude of the evening (19h) price peak.
    pub price_evening: f64,
    /// Uniform price noise amplitude.
    pub price_noise: f64,
    /// Midday PV peak, MJ/h.
    pub pv_peak: f64,
    /// Relative PV noise amplitude.
    pub pv_noise: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            price_base: 0.2,
            price_morning: 0.35,
            price_evening: 0.55,
            price_noise: 0.02,
            pv_peak: 60.0,
            pv_noise: 0.1,
        }
    }
}

/// Deterministic-given-seed synthetic series: a double-peaked daily price
/// curve and a daylight-window PV bell that is exactly zero at night.
pub fn synth_series(days: usize, rng: &mut impl Rng, profile: &SynthProfile) -> MarketSeries {
    let mut prices = Vec::with_capacity(days * HOURS_PER_DAY);
    let mut pv = Vec::with_capacity(days * HOURS_PER_DAY);
    for _ in 0..days {
        for h in 0..HOURS_PER_DAY {
            let hf = h as f64;
            let bump = |center: f64, width: f64| (-((hf - center).powi(2)) / (2.0 * width * width)).exp();
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let price = profile.price_base
                + profile.price_morning * bump(8.0, 2.5)
                + profile.price_evening * bump(19.0, 2.5)
                + profile.price_noise * noise;
            prices.push(price.max(0.0));

            // Daylight window 6..=19; sin² shape hits zero exactly at the edges.
            let p = if (6..=19).contains(&h) {
                let x = std::f64::consts::PI * (hf - 6.0) / 13.0;
                let shape = x.sin().powi(2);
                let mult: f64 = 1.0 + profile.pv_noise * rng.gen_range(-1.0f64..1.0);
                (profile.pv_peak * shape * mult.max(0.0)).max(0.0)
            } else {
                0.0
            };
            pv.push(p);
        }
    }
    MarketSeries { prices, pv }
}

// ---------------------------------------------------------------------------
// Episode and environment model
// ---------------------------------------------------------------------------

/// Which battery cost formula the reward uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Exact,
    Linear,
}

/// Per-case device and cost switches. A disabled device has its actions
/// forced to zero and its state left inert; a disabled cost contributes
/// nothing to the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceFlags {
    pub bes_enabled: bool,
    pub bes_cost_enabled: bool,
    pub hes_enabled: bool,
    pub hes_cost_enabled: bool,
}

impl Default for DeviceFlags {
    fn default() -> Self {
        Self {
            bes_enabled: true,
            bes_cost_enabled: true,
            hes_enabled: true,
            hes_cost_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Discount applied to the market price when selling.
    pub rho: f64,
    pub soc_init_range: (f64, f64),
    pub loh_init_range: (f64, f64),
    /// When set, net purchases (negative sell power) are charged the full
    /// market price instead of the discounted one.
    pub asymmetric_pricing: bool,
    /// Base seed recorded with the episode setup; reset itself draws from the
    /// generator the caller passes in.
    pub rng_seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            rho: 0.95,
            soc_init_range: (0.25, 1.0),
            loh_init_range: (5.0, 35.0),
            asymmetric_pricing: false,
            rng_seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        Ok(())
    }
}

/// Everything the transition and reward need, bundled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    pub battery: BatteryParams,
    /// Battery capacity in MJ; converts normalized battery power to MJ/h.
    pub battery_capacity: f64,
    pub battery_cost: BatteryCostModel,
    pub battery_cost_mode: CostMode,
    pub hydrogen: HydrogenParams,
    pub hes_cost: HesCostModel,
    pub flags: DeviceFlags,
    pub episode: EpisodeConfig,
}

impl Default for EnvModel {
    fn default() -> Self {
        Self {
            battery: BatteryParams {
                p_min: -0.5,
                p_max: 0.5,
                ..BatteryParams::default()
            },
            battery_capacity: 100.0,
            battery_cost: BatteryCostModel::default(),
            battery_cost_mode: CostMode::Exact,
            hydrogen: HydrogenParams::default(),
            // The benchmark prices hydrogen conversion above its arbitrage
            // value: with these operation and start-up charges, running the
            // electrolyzer or fuel cell costs more than the energy it shifts
            // earns, so enabling HES cost accounting should depress returns.
            hes_cost: HesCostModel {
                el: DeviceCost {
                    op: 2.0,
                    st: 25.0,
                    ..DeviceCost::default()
                },
                fc: DeviceCost {
                    op: 2.0,
                    st: 25.0,
                    ..DeviceCost::default()
                },
            },
            flags: DeviceFlags::default(),
            episode: EpisodeConfig::default(),
        }
    }
}

impl EnvModel {
    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.battery_cost.validate()?;
        self.hydrogen.validate()?;
        self.hes_cost.validate()?;
        self.episode.validate()?;
        if !(self.battery_capacity > 0.0) {
            return Err(Error::Config(format!(
                "battery_capacity must be positive, got {}",
                self.battery_capacity
            )));
        }
        Ok(())
    }

    /// Largest battery charge power in MJ/h.
    pub fn bat_charge_max(&self) -> f64 {
        self.battery.p_max * self.battery_capacity
    }

    /// Largest battery discharge power magnitude in MJ/h.
    pub fn bat_discharge_max(&self) -> f64 {
        -self.battery.p_min * self.battery_capacity
    }
}

/// Environment state. The observation exposed to policies is exactly the
/// 4-tuple `{price, pv, soc, loh}`; the device statuses stay internal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub price: f64,
    pub pv: f64,
    pub battery: BatteryState,
    pub hydrogen: HydrogenState,
    /// Step index within the episode, in `[0, horizon)`.
    pub t: usize,
    /// Absolute index of the episode's first hour in the market series.
    pub window_start: usize,
}

impl EnvState {
    pub fn observation(&self) -> [f64; 4] {
        [self.price, self.pv, self.battery.soc, self.hydrogen.loh]
    }
}

/// Raw scheduling action, all powers MJ/h. The battery power is signed
/// (positive = charge); EL and FC powers are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub p_bat: f64,
    pub p_el: f64,
    pub p_fc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    /// Net power sold to customers, MJ/h (negative = net purchase).
    pub p_sell: f64,
    pub cost_bat: f64,
    pub cost_hes: f64,
    pub done: bool,
}

/// Starts a fresh episode: the window start is drawn uniformly over day
/// boundaries, then SoC and LoH initial levels are drawn uniformly from their
/// configured ranges (in that order, so a fixed generator state reproduces
/// the same episode).
pub fn reset(series: &MarketSeries, model: &EnvModel, rng: &mut impl Rng) -> Result<EnvState> {
    let horizon = model.episode.horizon;
    if series.len() < horizon {
        return Err(Error::Validation(format!(
            "series of length {} is shorter than the episode horizon {}",
            series.len(),
            horizon
        )));
    }
    let usable_days = (series.len() - horizon) / HOURS_PER_DAY + 1;
    let day = rng.gen_range(0..usable_days);
    let start = day * HOURS_PER_DAY;

    let (soc_lo, soc_hi) = model.episode.soc_init_range;
    let soc = if soc_hi > soc_lo {
        rng.gen_range(soc_lo..=soc_hi)
    } else {
        soc_lo
    };
    let (loh_lo, loh_hi) = model.episode.loh_init_range;
    let loh = if loh_hi > loh_lo {
        rng.gen_range(loh_lo..=loh_hi)
    } else {
        loh_lo
    };

    Ok(EnvState {
        price: series.prices[start],
        pv: series.pv[start],
        battery: BatteryState {
            soc: soc.clamp(model.battery.soc_min, model.battery.soc_max),
        },
        hydrogen: HydrogenState::new(loh.clamp(model.hydrogen.loh_min, model.hydrogen.loh_max)),
        t: 0,
        window_start: start,
    })
}

/// Zeroes the smaller of two simultaneously positive EL/FC powers (ties drop
/// the fuel-cell side), so the devices never run at once.
pub fn enforce_exclusivity(action: Action) -> Action {
    if action.p_el > 0.0 && action.p_fc > 0.0 {
        if action.p_el >= action.p_fc {
            Action { p_fc: 0.0, ..action }
        } else {
            Action { p_el: 0.0, ..action }
        }
    } else {
        action
    }
}

/// One environment transition: sanitize → clamp → device transitions →
/// costs → reward.
pub fn step(
    state: &EnvState,
    raw_action: Action,
    series: &MarketSeries,
    model: &EnvModel,
) -> Result<StepResult> {
    let horizon = model.episode.horizon;
    if state.t >= horizon {
        return Err(Error::Contract("step called on a finished episode".into()));
    }

    // Disabled devices are frozen: actions forced to zero, state inert.
    let mut action = raw_action;
    if !model.flags.bes_enabled {
        action.p_bat = 0.0;
    }
    if !model.flags.hes_enabled {
        action.p_el = 0.0;
        action.p_fc = 0.0;
    }
    let action = enforce_exclusivity(Action {
        p_el: action.p_el.max(0.0),
        p_fc: action.p_fc.max(0.0),
        ..action
    });

    // Battery: clamp in normalized units, transition, convert back to MJ/h.
    let p_bat_norm = clamp_battery_power(
        state.battery,
        action.p_bat / model.battery_capacity,
        &model.battery,
    );
    let battery = battery_step(state.battery, p_bat_norm, &model.battery)?;
    let p_bat = p_bat_norm * model.battery_capacity;

    // Hydrogen subsystem.
    let (p_el, p_fc) = clamp_hes_power(&state.hydrogen, action.p_el, action.p_fc, &model.hydrogen);
    let f_el = electrolyzer_flow(p_el, &model.hydrogen)?;
    let f_fc = fuel_cell_flow(p_fc, &model.hydrogen)?;
    let hydrogen = reservoir_step(&state.hydrogen, f_el, f_fc, &model.hydrogen)?;
    let (hydrogen, status) = update_device_status(&hydrogen, p_el, p_fc);

    // Costs.
    let cost_bat = if model.flags.bes_cost_enabled {
        match model.battery_cost_mode {
            CostMode::Exact => battery_cost_exact(state.battery.soc, battery.soc, &model.battery_cost),
            CostMode::Linear => battery_cost_linear(
                state.battery.soc,
                battery.soc,
                discharge_rate(state.battery.soc, battery.soc, model.battery.dt),
                &model.battery_cost,
            ),
        }
    } else {
        0.0
    };
    let cost_hes = if model.flags.hes_cost_enabled {
        hes_cost(&status, &model.hes_cost)
    } else {
        0.0
    };

    // Reward.
    let p_sell = state.pv + p_fc - p_bat - p_el;
    let price_factor = if model.episode.asymmetric_pricing && p_sell < 0.0 {
        1.0
    } else {
        model.episode.rho
    };
    let reward = price_factor * state.price * p_sell - cost_bat - cost_hes;
    if !reward.is_finite() {
        return Err(Error::NonFinite("step reward"));
    }

    let t = state.t + 1;
    let done = t == horizon;
    let idx = (state.window_start + t).min(series.len() - 1);
    let next = EnvState {
        price: series.prices[idx],
        pv: series.pv[idx],
        battery,
        hydrogen,
        t,
        window_start: state.window_start,
    };
    Ok(StepResult {
        next,
        reward,
        p_sell,
        cost_bat,
        cost_hes,
        done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_48() -> MarketSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        synth_series(2, &mut rng, &SynthProfile::default())
    }

    #[test]
    fn reset_is_deterministic_given_seed() {
        let series = series_48();
        let model = EnvModel::default();
        let a = reset(&series, &model, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = reset(&series, &model, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reset_initial_ranges_monte_carlo() {
        let series = series_48();
        let model = EnvModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut soc_sum = 0.0;
        let mut loh_min = f64::INFINITY;
        let mut loh_max = f64::NEG_INFINITY;
        for _ in 0..n {
            let s = reset(&series, &model, &mut rng).unwrap();
            soc_sum += s.battery.soc;
            loh_min = loh_min.min(s.hydrogen.loh);
            loh_max = loh_max.max(s.hydrogen.loh);
        }
        let mean = soc_sum / n as f64;
        // Uniform(0.25, 1) has mean 0.625 and sd ~0.2165; 3 sigma over 1e4 draws.
        assert!((mean - 0.625).abs() < 3.0 * 0.2165 / (n as f64).sqrt(), "mean {mean}");
        assert!(loh_min >= 5.0 && loh_max <= 35.0);
    }

    #[test]
    fn reset_rejects_short_series() {
        let series = MarketSeries::new(vec![0.1; 10], vec![0.0; 10]).unwrap();
        let model = EnvModel::default();
        assert!(reset(&series, &model, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn exclusivity_rules() {
        let both = Action { p_bat: 0.0, p_el: 0.5, p_fc: 0.3 };
        let r = enforce_exclusivity(both);
        assert_eq!((r.p_el, r.p_fc), (0.5, 0.0));
        let none = enforce_exclusivity(Action::default());
        assert_eq!((none.p_el, none.p_fc), (0.0, 0.0));
        let tie = enforce_exclusivity(Action { p_bat: 0.0, p_el: 0.4, p_fc: 0.4 });
        assert_eq!((tie.p_el, tie.p_fc), (0.4, 0.0));
    }

    /// Engineered cost models so the step example's costs come out to
    /// exactly 0.5 (battery) and 0.2 (HES).
    #[test]
    fn step_reward_example() {
        let mut model = EnvModel::default();
        model.battery_cost_mode = CostMode::Linear;
        model.battery_cost = BatteryCostModel {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            w4: 0.5,
            ..BatteryCostModel::default()
        };
        let dev = crate::storage::DeviceCost {
            cc: 0.0,
            nu: 1.0,
            op: 0.1,
            st: 0.1,
            de: 0.0,
        };
        model.hes_cost = HesCostModel { el: dev, fc: dev };

        let series = MarketSeries::new(vec![0.1; 24], vec![5.0; 24]).unwrap();
        let state = EnvState {
            price: 0.1,
            pv: 5.0,
            battery: BatteryState { soc: 0.5 },
            hydrogen: HydrogenState::new(20.0),
            t: 0,
            window_start: 0,
        };
        let out = step(
            &state,
            Action { p_bat: 2.0, p_el: 1.0, p_fc: 0.0 },
            &series,
            &model,
        )
        .unwrap();
        assert_abs_diff_eq!(out.p_sell, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cost_bat, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cost_hes, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.reward, 0.95 * 0.1 * 2.0 - 0.7, epsilon = 1e-12);
    }

    #[test]
    fn zero_action_zero_pv_zero_cost_gives_zero_reward() {
        let mut model = EnvModel::default();
        model.flags.bes_cost_enabled = false;
        model.flags.hes_cost_enabled = false;
        let series = MarketSeries::new(vec![0.5; 24], vec![0.0; 24]).unwrap();
        let state = EnvState {
            price: 0.5,
            pv: 0.0,
            battery: BatteryState { soc: 0.5 },
            hydrogen: HydrogenState::new(20.0),
            t: 0,
            window_start: 0,
        };
        let out = step(&state, Action::default(), &series, &model).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn step_enforces_device_exclusivity() {
        let model = EnvModel::default();
        let series = series_48();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = reset(&series, &model, &mut rng).unwrap();
        let out = step(
            &state,
            Action { p_bat: 0.0, p_el: 40.0, p_fc: 30.0 },
            &series,
            &model,
        )
        .unwrap();
        assert!(!(out.next.hydrogen.sigma_el && out.next.hydrogen.sigma_fc));
    }

    #[test]
    fn episode_runs_exactly_horizon_steps() {
        let model = EnvModel::default();
        let series = series_48();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = reset(&series, &model, &mut rng).unwrap();
        let mut dones = 0;
        for t in 0..24 {
            let out = step(&state, Action::default(), &series, &model).unwrap();
            if out.done {
                dones += 1;
                assert_eq!(t, 23);
            }
            state = out.next;
        }
        assert_eq!(dones, 1);
        assert!(step(&state, Action::default(), &series, &model).is_err());
    }

    /// Fuzz: random action sequences never drive any device state out of
    /// bounds, and the reward decomposition holds exactly at every step.
    #[test]
    fn fuzz_invariants_over_many_random_steps() {
        let model = EnvModel::default();
        let series = series_48();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut state = reset(&series, &model, &mut rng).unwrap();
        for i in 0..100_000 {
            let action = Action {
                p_bat: rng.gen_range(-200.0..200.0),
                p_el: rng.gen_range(-50.0..300.0),
                p_fc: rng.gen_range(-50.0..300.0),
            };
            let out = step(&state, action, &series, &model).unwrap();
            let s = &out.next;
            assert!(s.battery.soc >= model.battery.soc_min && s.battery.soc <= model.battery.soc_max);
            assert!(s.hydrogen.loh >= model.hydrogen.loh_min && s.hydrogen.loh <= model.hydrogen.loh_max);
            let gross = model.episode.rho * state.price * out.p_sell;
            assert!(
                (out.reward + out.cost_bat + out.cost_hes - gross).abs() < 1e-12 * (1.0 + gross.abs()),
                "decomposition violated at iteration {i}"
            );
            state = if out.done {
                reset(&series, &model, &mut rng).unwrap()
            } else {
                out.next
            };
        }
    }

    #[test]
    fn disabled_devices_are_frozen() {
        let mut model = EnvModel::default();
        model.flags.hes_enabled = false;
        model.flags.hes_cost_enabled = false;
        let series = series_48();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let state = reset(&series, &model, &mut rng).unwrap();
        let out = step(
            &state,
            Action { p_bat: 0.0, p_el: 50.0, p_fc: 0.0 },
            &series,
            &model,
        )
        .unwrap();
        assert_eq!(out.next.hydrogen.prev_p_el, 0.0);
        assert_eq!(out.cost_hes, 0.0);
        // Only self-consumption moves the reservoir.
        assert_abs_diff_eq!(
            out.next.hydrogen.loh,
            (1.0 - model.hydrogen.eta_hes) * state.hydrogen.loh,
            epsilon = 1e-12
        );
    }

    #[test]
    fn synth_series_shape() {
        let profile = SynthProfile::default();
        let one = synth_series(1, &mut ChaCha8Rng::seed_from_u64(1), &profile);
        assert_eq!(one.len(), 24);
        assert_eq!(one.pv[0], 0.0);
        assert_eq!(one.pv[23], 0.0);
        assert!(one.pv[12] > 0.0);
        one.validate().unwrap();

        let a = synth_series(3, &mut ChaCha8Rng::seed_from_u64(2), &profile);
        let b = synth_series(3, &mut ChaCha8Rng::seed_from_u64(2), &profile);
        assert_eq!(a, b);
    }

    #[test]
    fn load_series_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");

        std::fs::write(&path, "hour,price,pv\n0,0.5,1.0\n1,0.6,2.0\n2,0.7,0.0\n").unwrap();
        let s = load_series(&path).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.prices[1], 0.6);

        std::fs::write(&path, "hour,price,pv\n0,0.5,1.0\n1,-0.6,2.0\n").unwrap();
        let err = load_series(&path).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");

        std::fs::write(&path, "hour,price,pv\n0,0.5,1.0\n2,0.6,2.0\n").unwrap();
        let err = load_series(&path).unwrap_err().to_string();
        assert!(err.contains("contiguous"), "{err}");

        std::fs::write(&path, "hour,cost,pv\n0,0.5,1.0\n").unwrap();
        assert!(load_series(&path).is_err());

        let synth = synth_series(2, &mut ChaCha8Rng::seed_from_u64(4), &SynthProfile::default());
        save_series(&synth, &path).unwrap();
        let reloaded = load_series(&path).unwrap();
        assert_eq!(synth, reloaded);
    }
}
