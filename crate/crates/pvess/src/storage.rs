//! Device physics and cost models for the battery (BES) and hydrogen (HES)
//! subsystems.
//!
//! Everything here is a pure function of its inputs. Units:
//!
//! - Battery state of charge (SoC) is a normalized energy fraction in [0, 1];
//!   battery powers are in units of capacity per hour.
//! - Hydrogen powers are MJ/h, molar flows kmol/h, and the reservoir level
//!   (LoH) is a pressure in kPa-scale units given by `R·T/V` with R in
//!   kJ/(kmol·K) and the reservoir volume in Nm³.
//!
//! The battery transition applies the efficiency multiplicatively in both
//! directions: a discharge power `P < 0` drains `eta_discharge·|P|` of SoC
//! while `|P|` is the grid-side power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for all state-bound checks.
pub const BOUND_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Battery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Charge efficiency (applied when power > 0).
    pub eta_charge: f64,
    /// Discharge efficiency (applied when power < 0).
    pub eta_discharge: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Most negative allowed power (discharge), capacity per hour.
    pub p_min: f64,
    /// Largest allowed power (charge), capacity per hour.
    pub p_max: f64,
    /// Timestep in hours.
    pub dt: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            eta_charge: 0.9,
            eta_discharge: 0.95,
            soc_min: 0.0,
            soc_max: 1.0,
            p_min: -1.0,
            p_max: 1.0,
            dt: 1.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(Error::Config(format!(
                "battery SoC bounds must satisfy 0 <= min < max <= 1, got [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        if !(self.p_min < 0.0 && 0.0 < self.p_max) {
            return Err(Error::Config(format!(
                "battery power bounds must straddle zero, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        for (name, eta) in [
            ("eta_charge", self.eta_charge),
            ("eta_discharge", self.eta_discharge),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {eta}")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Battery state: normalized stored energy fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
}

/// Coefficients of the SoC-based degradation cost and its linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryCostModel {
    /// Capital cost of the battery.
    pub capital_cost: f64,
    /// Battery capacity (same energy unit the capital cost is amortized over).
    pub capacity: f64,
    /// Round-trip efficiency.
    pub round_trip_eff: f64,
    /// Shape coefficient linking depth of discharge to cycle count.
    pub phi: f64,
    /// Convexity exponent of the depth-of-discharge penalty.
    pub omega: f64,
    /// Linearized-cost coefficients: current SoC, previous SoC, discharge
    /// rate, and a constant offset.
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for BatteryCostModel {
    fn default() -> Self {
        Self {
            capital_cost: 100.0,
            capacity: 1.0,
            round_trip_eff: 0.9,
            phi: 1.5,
            omega: 2.0,
            w1: -36.23,
            w2: 34.80,
            w3: 2.77,
            w4: -2.45,
        }
    }
}

impl BatteryCostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0) {
            return Err(Error::Config(format!(
                "battery capacity must be positive, got {}",
                self.capacity
            )));
        }
        if !(self.round_trip_eff > 0.0 && self.round_trip_eff <= 1.0) {
            return Err(Error::Config(format!(
                "round_trip_eff must be in (0, 1], got {}",
                self.round_trip_eff
            )));
        }
        if !(self.phi > 0.0 && self.omega > 0.0) {
            return Err(Error::Config(format!(
                "phi and omega must be positive, got {} and {}",
                self.phi, self.omega
            )));
        }
        Ok(())
    }
}

/// Advances the SoC by one step: `soc' = soc + eta · power · dt`.
///
/// `power` must already have passed through [`clamp_battery_power`]; a result
/// outside the SoC bounds by more than [`BOUND_TOL`] is a contract violation.
pub fn battery_step(
    state: BatteryState,
    power: f64,
    params: &BatteryParams,
) -> Result<BatteryState> {
    if !power.is_finite() {
        return Err(Error::NonFinite("battery_step power"));
    }
    let eta = if power > 0.0 {
        params.eta_charge
    } else {
        params.eta_discharge
    };
    let soc = state.soc + eta * power * params.dt;
    if soc < params.soc_min - BOUND_TOL || soc > params.soc_max + BOUND_TOL {
        return Err(Error::Contract(format!(
            "battery_step received unclamped power {power}: soc {soc} outside [{}, {}]",
            params.soc_min, params.soc_max
        )));
    }
    Ok(BatteryState {
        soc: soc.clamp(params.soc_min, params.soc_max),
    })
}

/// Restricts a requested battery power so the next SoC stays in bounds, then
/// clips to the device power limits. Total on finite inputs; idempotent.
pub fn clamp_battery_power(state: BatteryState, power: f64, params: &BatteryParams) -> f64 {
    let p = if power > 0.0 {
        power.min((params.soc_max - state.soc) / (params.eta_charge * params.dt))
    } else if power < 0.0 {
        power.max((params.soc_min - state.soc) / (params.eta_discharge * params.dt))
    } else {
        0.0
    };
    p.clamp(params.p_min, params.p_max)
}

/// Discharge rate over one interval; positive when the battery drained.
pub fn discharge_rate(soc_prev: f64, soc_now: f64, dt: f64) -> f64 {
    (soc_prev - soc_now) / dt
}

/// Degradation cost as a difference of depth-of-discharge potentials:
/// `c_cc/(Cap·eta_r²·phi) · ((1−soc_now)^omega − (1−soc_prev)^omega)`.
pub fn battery_cost_exact(soc_prev: f64, soc_now: f64, model: &BatteryCostModel) -> f64 {
    let scale = model.capital_cost / (model.capacity * model.round_trip_eff.powi(2) * model.phi);
    scale * ((1.0 - soc_now).powf(model.omega) - (1.0 - soc_prev).powf(model.omega))
}

/// Linearized degradation cost: `w1·soc_now + w2·soc_prev + w3·rate + w4`.
/// Applied as written; may be negative while charging.
pub fn battery_cost_linear(soc_prev: f64, soc_now: f64, rate: f64, model: &BatteryCostModel) -> f64 {
    model.w1 * soc_now + model.w2 * soc_prev + model.w3 * rate + model.w4
}

// ---------------------------------------------------------------------------
// Hydrogen subsystem
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydrogenParams {
    /// Electrolyzer conversion efficiency.
    pub eta_el: f64,
    /// Fuel-cell conversion efficiency.
    pub eta_fc: f64,
    /// Reservoir self-consumption rate per step.
    pub eta_hes: f64,
    /// Net calorific value of hydrogen, MJ/kmol.
    pub ncv: f64,
    /// Gas constant, kJ/(kmol·K).
    pub gas_const: f64,
    /// Mean reservoir temperature, K.
    pub temp: f64,
    /// Reservoir volume, Nm³.
    pub volume: f64,
    pub loh_min: f64,
    pub loh_max: f64,
    pub p_el_min: f64,
    pub p_el_max: f64,
    pub p_fc_min: f64,
    pub p_fc_max: f64,
}

impl Default for HydrogenParams {
    fn default() -> Self {
        Self {
            eta_el: 0.725,
            eta_fc: 0.6,
            eta_hes: 0.05,
            ncv: 240.0,
            gas_const: 8.314,
            temp: 313.0,
            volume: 35.0,
            loh_min: 0.0,
            loh_max: 40.0,
            p_el_min: 0.0,
            p_el_max: 150.0,
            p_fc_min: 0.0,
            p_fc_max: 150.0,
        }
    }
}

impl HydrogenParams {
    /// Pressure change per unit molar flow: `R·T/V`.
    pub fn rt_over_v(&self) -> f64 {
        self.gas_const * self.temp / self.volume
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [
            ("eta_el", self.eta_el),
            ("eta_fc", self.eta_fc),
            ("eta_hes", self.eta_hes),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {eta}")));
            }
        }
        if !(self.volume > 0.0) {
            return Err(Error::Config(format!(
                "reservoir volume must be positive, got {}",
                self.volume
            )));
        }
        if !(self.loh_min < self.loh_max) {
            return Err(Error::Config(format!(
                "LoH bounds must satisfy min < max, got [{}, {}]",
                self.loh_min, self.loh_max
            )));
        }
        for (name, lo, hi) in [
            ("EL", self.p_el_min, self.p_el_max),
            ("FC", self.p_fc_min, self.p_fc_max),
        ] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} power bounds must satisfy 0 <= min <= max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Reservoir level plus device on/off statuses and the previous-step active
/// powers (the inputs to the start-up and power-variation cost terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydrogenState {
    pub loh: f64,
    pub sigma_el: bool,
    pub sigma_fc: bool,
    pub prev_p_el: f64,
    pub prev_p_fc: f64,
}

impl HydrogenState {
    pub fn new(loh: f64) -> Self {
        Self {
            loh,
            sigma_el: false,
            sigma_fc: false,
            prev_p_el: 0.0,
            prev_p_fc: 0.0,
        }
    }
}

/// Per-step cost drivers produced by [`update_device_status`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HesStatus {
    pub sigma_el: bool,
    pub sigma_fc: bool,
    /// Start-up indicator: off → on this step.
    pub zeta_el: bool,
    pub zeta_fc: bool,
    /// Power variation while active, |p − prev_p|; zero when off.
    pub kappa_el: f64,
    pub kappa_fc: f64,
}

/// Capital, operation, start-up, and power-variation cost coefficients for
/// one HES device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCost {
    /// Capital acquisition cost.
    pub cc: f64,
    /// Nameplate lifetime in working hours (fixed, not accumulated runtime).
    pub nu: f64,
    /// Hourly operation/maintenance cost.
    pub op: f64,
    /// Start-up cost coefficient.
    pub st: f64,
    /// Power-variation degradation coefficient.
    pub de: f64,
}

impl Default for DeviceCost {
    fn default() -> Self {
        Self {
            cc: 2000.0,
            nu: 10_000.0,
            op: 0.5,
            st: 5.0,
            de: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HesCostModel {
    pub el: DeviceCost,
    pub fc: DeviceCost,
}

impl HesCostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("EL", &self.el), ("FC", &self.fc)] {
            if !(d.nu > 0.0) {
                return Err(Error::Config(format!(
                    "{name} lifetime hours must be positive, got {}",
                    d.nu
                )));
            }
            if d.cc < 0.0 || d.op < 0.0 || d.st < 0.0 || d.de < 0.0 {
                return Err(Error::Config(format!("{name} cost coefficients must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Hydrogen molar flow produced by the electrolyzer: `eta_el · p / NCV`.
pub fn electrolyzer_flow(p_el: f64, params: &HydrogenParams) -> Result<f64> {
    if !(p_el >= 0.0) {
        return Err(Error::Contract(format!(
            "electrolyzer power must be >= 0, got {p_el}"
        )));
    }
    Ok(params.eta_el * p_el / params.ncv)
}

/// Hydrogen molar flow consumed by the fuel cells: `p / (eta_fc · NCV)`.
pub fn fuel_cell_flow(p_fc: f64, params: &HydrogenParams) -> Result<f64> {
    if !(p_fc >= 0.0) {
        return Err(Error::Contract(format!(
            "fuel-cell power must be >= 0, got {p_fc}"
        )));
    }
    Ok(p_fc / (params.eta_fc * params.ncv))
}

/// Reservoir transition: `loh' = (1−eta_hes)·loh + (R·T/V)·(f_el − f_fc)`.
///
/// Flows must come from the [`clamp_hes_power`] pipeline; an out-of-bounds
/// result beyond [`BOUND_TOL`] is a contract violation.
pub fn reservoir_step(
    state: &HydrogenState,
    f_el: f64,
    f_fc: f64,
    params: &HydrogenParams,
) -> Result<HydrogenState> {
    let loh = (1.0 - params.eta_hes) * state.loh + params.rt_over_v() * (f_el - f_fc);
    if loh < params.loh_min - BOUND_TOL || loh > params.loh_max + BOUND_TOL {
        return Err(Error::Contract(format!(
            "reservoir_step received unclamped flows: loh {loh} outside [{}, {}]",
            params.loh_min, params.loh_max
        )));
    }
    Ok(HydrogenState {
        loh: loh.clamp(params.loh_min, params.loh_max),
        ..*state
    })
}

/// Restricts EL/FC powers so the subsequent [`reservoir_step`] stays within
/// the pressure bounds, then clips to the device power limits.
///
/// Expects exclusivity to have been enforced already (at most one of the two
/// powers positive). Idempotent.
pub fn clamp_hes_power(
    state: &HydrogenState,
    p_el: f64,
    p_fc: f64,
    params: &HydrogenParams,
) -> (f64, f64) {
    let rt_v = params.rt_over_v();
    let carried = (1.0 - params.eta_hes) * state.loh;

    let p_el = if p_el > 0.0 {
        // Headroom to the pressure ceiling, converted to EL power.
        let delta = (params.loh_max - carried).max(0.0);
        let cap = delta / rt_v * params.ncv / params.eta_el;
        p_el.min(cap).clamp(params.p_el_min, params.p_el_max)
    } else {
        0.0
    };
    let p_fc = if p_fc > 0.0 {
        // Drainable pressure above the floor, converted to FC power.
        let delta = (carried - params.loh_min).max(0.0);
        let cap = delta / rt_v * params.eta_fc * params.ncv;
        p_fc.min(cap).clamp(params.p_fc_min, params.p_fc_max)
    } else {
        0.0
    };
    (p_el, p_fc)
}

/// Updates on/off statuses and derives the start-up (`zeta`) and
/// power-variation (`kappa`) cost drivers from the commanded powers.
pub fn update_device_status(state: &HydrogenState, p_el: f64, p_fc: f64) -> (HydrogenState, HesStatus) {
    let sigma_el = p_el > 0.0;
    let sigma_fc = p_fc > 0.0;
    let status = HesStatus {
        sigma_el,
        sigma_fc,
        zeta_el: sigma_el && !state.sigma_el,
        zeta_fc: sigma_fc && !state.sigma_fc,
        kappa_el: if sigma_el { (p_el - state.prev_p_el).abs() } else { 0.0 },
        kappa_fc: if sigma_fc { (p_fc - state.prev_p_fc).abs() } else { 0.0 },
    };
    let next = HydrogenState {
        loh: state.loh,
        sigma_el,
        sigma_fc,
        prev_p_el: p_el,
        prev_p_fc: p_fc,
    };
    (next, status)
}

/// Hourly HES cost: `sum_i ((cc_i/nu_i + op_i)·sigma_i + st_i·zeta_i + de_i·kappa_i)`.
pub fn hes_cost(status: &HesStatus, model: &HesCostModel) -> f64 {
    let device = |on: bool, started: bool, kappa: f64, c: &DeviceCost| {
        let mut cost = 0.0;
        if on {
            cost += c.cc / c.nu + c.op;
        }
        if started {
            cost += c.st;
        }
        cost + c.de * kappa
    };
    device(status.sigma_el, status.zeta_el, status.kappa_el, &model.el)
        + device(status.sigma_fc, status.zeta_fc, status.kappa_fc, &model.fc)
}
