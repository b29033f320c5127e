//! Cost-minimal dispatch of PV + battery against grid prices, the TOTEX
//! cost model built on it, and PV/battery sizing.

mod sizing;
pub mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aging::{AgingError, ReplacementSchedule};
use crate::tariff::{TariffError, TariffSchedule};
use crate::timeseries::{Profile, PvDesign, TimeAxis, TimeseriesError};

pub use sizing::{
    community_battery_size, evaluate, size_building, Evaluation, SizingMode, SizingOptions,
    SizingResult,
};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("profiles and prices are on different time axes")]
    AxisMismatch,
    #[error("infeasible at step {step}: {reason}")]
    Infeasible { step: usize, reason: &'static str },
    #[error("export price exceeds import price at step {0}")]
    ExportAboveImport(usize),
    #[error("invalid battery: {0}")]
    InvalidBattery(&'static str),
    #[error("sizing search grid is empty: {0}")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
    #[error(transparent)]
    Aging(#[from] AgingError),
}

pub type Result<T> = std::result::Result<T, DispatchError>;

/// Capital recovery factor `r(1+r)^L / ((1+r)^L − 1)`; `1/L` when `r = 0`.
pub fn annuity(rate: f64, years: u32) -> f64 {
    let l = years.max(1) as f64;
    if rate.abs() < 1e-12 {
        return 1.0 / l;
    }
    let g = (1.0 + rate).powf(l);
    rate * g / (g - 1.0)
}

/// Techno-economic inputs. Costs in CHF; `pv_maintenance` is a yearly
/// fraction of PV investment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EconomicParams {
    pub lifetime_years: u32,
    pub discount_rate: f64,
    pub pv_maintenance: f64,
    pub pv_specific_chf_per_w: f64,
    pub pv_fixed_chf: f64,
    pub battery_specific_chf_per_kwh: f64,
    pub battery_fixed_chf: f64,
    pub battery_charge_chf_per_kwh: f64,
    pub battery_discharge_chf_per_kwh: f64,
    pub inverter_life_years: f64,
    /// Inverter replacement cost as a share of the PV fixed cost.
    pub inverter_cost_share: f64,
}

impl Default for EconomicParams {
    fn default() -> Self {
        Self {
            lifetime_years: 25,
            discount_rate: 0.03,
            pv_maintenance: 0.01,
            pv_specific_chf_per_w: 1.05,
            pv_fixed_chf: 10_049.0,
            battery_specific_chf_per_kwh: 229.0,
            battery_fixed_chf: 0.0,
            battery_charge_chf_per_kwh: 0.0,
            battery_discharge_chf_per_kwh: 0.0,
            inverter_life_years: 15.0,
            inverter_cost_share: 0.40,
        }
    }
}

impl EconomicParams {
    pub fn annuity(&self) -> f64 {
        annuity(self.discount_rate, self.lifetime_years)
    }

    /// `μ · P_nom · C_MOD + β_W · C_FW` for one array.
    pub fn pv_capex(&self, pv: &PvDesign) -> f64 {
        if pv.modules == 0 {
            return 0.0;
        }
        pv.modules as f64 * pv.module.p_nom_w * self.pv_specific_chf_per_w + self.pv_fixed_chf
    }

    /// `E · C_sp + β_BAT · C_fix`.
    pub fn battery_capex(&self, capacity_kwh: f64) -> f64 {
        if capacity_kwh <= 0.0 {
            return 0.0;
        }
        capacity_kwh * self.battery_specific_chf_per_kwh + self.battery_fixed_chf
    }

    pub fn inverter_cost(&self, pv: &[PvDesign]) -> f64 {
        pv.iter().filter(|p| p.modules > 0).count() as f64
            * self.inverter_cost_share
            * self.pv_fixed_chf
    }
}

fn default_eta() -> f64 {
    0.95
}
fn default_soc_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryDesign {
    pub capacity_kwh: f64,
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
    #[serde(default = "default_eta")]
    pub eta_charge: f64,
    #[serde(default = "default_eta")]
    pub eta_discharge: f64,
    #[serde(default)]
    pub soc_min: f64,
    #[serde(default = "default_soc_max")]
    pub soc_max: f64,
    #[serde(default)]
    pub soc_initial: f64,
}

impl BatteryDesign {
    /// Defaults: 0.5 C power, 95% one-way efficiencies, full SoC window,
    /// starting empty.
    pub fn with_capacity(capacity_kwh: f64) -> Self {
        Self {
            capacity_kwh,
            p_charge_kw: capacity_kwh / 2.0,
            p_discharge_kw: capacity_kwh / 2.0,
            eta_charge: default_eta(),
            eta_discharge: default_eta(),
            soc_min: 0.0,
            soc_max: 1.0,
            soc_initial: 0.0,
        }
    }

    pub fn none() -> Self {
        Self::with_capacity(0.0)
    }

    /// Same technology, different capacity; power scales with capacity.
    pub fn resized(&self, capacity_kwh: f64) -> Self {
        let c_rate = |p: f64| {
            if self.capacity_kwh > 0.0 {
                p / self.capacity_kwh
            } else {
                0.5
            }
        };
        Self {
            capacity_kwh,
            p_charge_kw: c_rate(self.p_charge_kw) * capacity_kwh,
            p_discharge_kw: c_rate(self.p_discharge_kw) * capacity_kwh,
            ..*self
        }
    }

    pub fn is_present(&self) -> bool {
        self.capacity_kwh > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_kwh >= 0.0) || !(self.p_charge_kw >= 0.0) || !(self.p_discharge_kw >= 0.0) {
            return Err(DispatchError::InvalidBattery("capacity and power must be non-negative"));
        }
        if !(self.eta_charge > 0.0 && self.eta_charge <= 1.0)
            || !(self.eta_discharge > 0.0 && self.eta_discharge <= 1.0)
        {
            return Err(DispatchError::InvalidBattery("efficiencies must lie in (0, 1]"));
        }
        if !(0.0 <= self.soc_min
            && self.soc_min <= self.soc_initial
            && self.soc_initial <= self.soc_max
            && self.soc_max <= 1.0)
        {
            return Err(DispatchError::InvalidBattery(
                "need 0 ≤ soc_min ≤ soc_initial ≤ soc_max ≤ 1",
            ));
        }
        Ok(())
    }
}

/// Per-step grid prices in CHF/kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub axis: TimeAxis,
    pub import: Vec<f64>,
    pub export: Vec<f64>,
}

impl PriceSeries {
    pub fn new(axis: TimeAxis, import: Vec<f64>, export: Vec<f64>) -> Result<Self> {
        if import.len() != axis.len() || export.len() != axis.len() {
            return Err(DispatchError::AxisMismatch);
        }
        Ok(Self {
            axis,
            import,
            export,
        })
    }

    /// Import at `schedule` (ct/kWh), export at its feed-in rate.
    pub fn from_tariff(
        axis: &TimeAxis,
        schedule: &TariffSchedule,
        ghi: Option<&Profile>,
    ) -> Result<Self> {
        let import = schedule
            .import_series(axis, ghi)?
            .into_iter()
            .map(|c| c / 100.0)
            .collect();
        let export = vec![schedule.price_export() / 100.0; axis.len()];
        Self::new(*axis, import, export)
    }

    pub fn flat(axis: TimeAxis, import: f64, export: f64) -> Self {
        Self {
            axis,
            import: vec![import; axis.len()],
            export: vec![export; axis.len()],
        }
    }
}

/// Per-step power flows (kW) and state of charge (fraction). `soc` has one
/// more entry than the other series: `soc[t]` is the state at the start of
/// step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub axis: TimeAxis,
    pub load_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub import_kw: Vec<f64>,
    pub export_kw: Vec<f64>,
    pub charge_kw: Vec<f64>,
    pub discharge_kw: Vec<f64>,
    pub soc: Vec<f64>,
    pub battery: BatteryDesign,
    pub pv: Vec<PvDesign>,
}

impl DispatchPlan {
    pub fn len(&self) -> usize {
        self.load_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_kw.is_empty()
    }

    /// Largest |load + charge + export − pv − discharge − import| over steps.
    pub fn max_balance_residual(&self) -> f64 {
        (0..self.len())
            .map(|t| {
                (self.load_kw[t] + self.charge_kw[t] + self.export_kw[t]
                    - self.pv_kw[t]
                    - self.discharge_kw[t]
                    - self.import_kw[t])
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation from the SoC recursion, as a fraction.
    pub fn max_soc_residual(&self) -> f64 {
        let b = &self.battery;
        if !b.is_present() {
            return self.soc.iter().map(|s| (s - b.soc_initial).abs()).fold(0.0, f64::max);
        }
        let dt = self.axis.step_hours();
        (0..self.len())
            .map(|t| {
                let next = self.soc[t]
                    + (b.eta_charge * self.charge_kw[t] - self.discharge_kw[t] / b.eta_discharge)
                        * dt
                        / b.capacity_kwh;
                (self.soc[t + 1] - next).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Net nodal consumption: load + charge − pv − discharge.
    pub fn net_kw(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| self.import_kw[t] - self.export_kw[t])
            .collect()
    }

    pub fn imported_kwh(&self) -> f64 {
        self.import_kw.iter().sum::<f64>() * self.axis.step_hours()
    }

    pub fn exported_kwh(&self) -> f64 {
        self.export_kw.iter().sum::<f64>() * self.axis.step_hours()
    }
}

/// `Σ (P_imp · p_imp − P_exp · p_exp) · Δt` in CHF.
pub fn grid_cost(plan: &DispatchPlan, prices: &PriceSeries) -> Result<f64> {
    if plan.axis != prices.axis || plan.len() != prices.import.len() {
        return Err(DispatchError::AxisMismatch);
    }
    let dt = plan.axis.step_hours();
    Ok((0..plan.len())
        .map(|t| plan.import_kw[t] * prices.import[t] - plan.export_kw[t] * prices.export[t])
        .sum::<f64>()
        * dt)
}

/// `Σ (P_dis · C_d + P_ch · C_c) · Δt` in CHF.
pub fn battery_operation_cost(plan: &DispatchPlan, econ: &EconomicParams) -> f64 {
    let dt = plan.axis.step_hours();
    (0..plan.len())
        .map(|t| {
            plan.discharge_kw[t] * econ.battery_discharge_chf_per_kwh
                + plan.charge_kw[t] * econ.battery_charge_chf_per_kwh
        })
        .sum::<f64>()
        * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOutcome {
    pub plan: DispatchPlan,
    pub grid_cost: f64,
    pub battery_operation: f64,
    /// Optimal objective value from the forward pass.
    pub lp_optimum: f64,
}

impl DispatchOutcome {
    pub fn operating_cost(&self) -> f64 {
        self.grid_cost + self.battery_operation
    }

    /// Relative gap between the recovered plan's cost and the optimum.
    pub fn relative_gap(&self) -> f64 {
        let c = self.operating_cost();
        (c - self.lp_optimum).abs() / self.lp_optimum.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// Optional cap on grid import, kW.
    pub import_cap_kw: Option<f64>,
}

/// Minimizes grid exchange plus battery operation cost for the year given
/// load, PV and a fixed battery. Grid-to-battery and battery-to-grid flows
/// are allowed; terminal SoC is held at or above the initial SoC.
pub fn optimize_dispatch(
    load: &Profile,
    pv: &Profile,
    battery: &BatteryDesign,
    prices: &PriceSeries,
    econ: &EconomicParams,
    options: DispatchOptions,
) -> Result<DispatchOutcome> {
    load.ensure_same_axis(pv).map_err(|_| DispatchError::AxisMismatch)?;
    if *load.axis() != prices.axis {
        return Err(DispatchError::AxisMismatch);
    }
    battery.validate()?;
    let axis = *load.axis();
    let dt = axis.step_hours();
    let net: Vec<f64> = load
        .values()
        .iter()
        .zip(pv.values())
        .map(|(l, p)| l - p)
        .collect();
    let problem = solver::Problem {
        net_kw: &net,
        import_price: &prices.import,
        export_price: &prices.export,
        dt_hours: dt,
        battery,
        charge_cost: econ.battery_charge_chf_per_kwh,
        discharge_cost: econ.battery_discharge_chf_per_kwh,
        import_cap_kw: options.import_cap_kw,
    };
    let sol = solver::solve(&problem)?;
    let n = net.len();
    let mut plan = DispatchPlan {
        axis,
        load_kw: load.values().to_vec(),
        pv_kw: pv.values().to_vec(),
        import_kw: Vec::with_capacity(n),
        export_kw: Vec::with_capacity(n),
        charge_kw: Vec::with_capacity(n),
        discharge_kw: Vec::with_capacity(n),
        soc: Vec::with_capacity(n + 1),
        battery: *battery,
        pv: Vec::new(),
    };
    let cap = battery.capacity_kwh;
    plan.soc.push(battery.soc_initial);
    for t in 0..n {
        let f = problem.flows(t, sol.delta_kwh[t]);
        plan.charge_kw.push(f.charge_kw);
        plan.discharge_kw.push(f.discharge_kw);
        // balance: load + ch + exp = pv + dis + imp, closed on the grid side
        let x = plan.load_kw[t] + f.charge_kw - plan.pv_kw[t] - f.discharge_kw;
        plan.import_kw.push(x.max(0.0));
        plan.export_kw.push((-x).max(0.0));
        let soc = if cap > 0.0 {
            plan.soc[t] + (battery.eta_charge * f.charge_kw - f.discharge_kw / battery.eta_discharge) * dt / cap
        } else {
            battery.soc_initial
        };
        plan.soc.push(soc);
    }
    let grid = grid_cost(&plan, prices)?;
    let bo = battery_operation_cost(&plan, econ);
    Ok(DispatchOutcome {
        plan,
        grid_cost: grid,
        battery_operation: bo,
        lp_optimum: sol.optimum,
    })
}

/// TOTEX decomposition. OPEX terms are CHF/yr; CAPEX terms are CHF of
/// investment, annualized into TOTEX through `annuity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub totex: f64,
    pub opex: f64,
    pub capex: f64,
    pub ox_ge: f64,
    pub ox_bo: f64,
    /// PV maintenance, including annualized net inverter replacement.
    pub ox_pm: f64,
    pub inverter_annualized: f64,
    pub cx_pv: f64,
    pub cx_bat: f64,
    /// L / L_bat.
    pub battery_multiplier: f64,
    pub annuity: f64,
}

impl CostBreakdown {
    pub fn compute(
        ox_ge: f64,
        ox_bo: f64,
        pv: &[PvDesign],
        battery_kwh: f64,
        econ: &EconomicParams,
        schedule: &ReplacementSchedule,
    ) -> Self {
        let r = econ.annuity();
        let cx_pv: f64 = pv.iter().map(|p| econ.pv_capex(p)).sum();
        let cx_bat = econ.battery_capex(battery_kwh);
        let multiplier = if cx_bat > 0.0 {
            schedule.battery_capex_multiplier()
        } else {
            1.0
        };
        let inverter_annualized = r * schedule.inverter_net_present_cost(econ.discount_rate);
        let ox_pm = econ.pv_maintenance * cx_pv + inverter_annualized;
        let opex = ox_ge + ox_bo + ox_pm;
        let capex = cx_pv + multiplier * cx_bat;
        Self {
            totex: opex + r * capex,
            opex,
            capex,
            ox_ge,
            ox_bo,
            ox_pm,
            inverter_annualized,
            cx_pv,
            cx_bat,
            battery_multiplier: multiplier,
            annuity: r,
        }
    }
}
