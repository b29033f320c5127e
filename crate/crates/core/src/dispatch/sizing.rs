//! PV and battery sizing by nested search over TOTEX.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    optimize_dispatch, BatteryDesign, CostBreakdown, DispatchError, DispatchOptions,
    DispatchOutcome, EconomicParams, PriceSeries, Result,
};
use crate::aging::{replacement_schedule, AgingParams, ReplacementSchedule};
use crate::timeseries::{pv_production, Building, Meteo, ModuleSpec, Profile, PvDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SizingMode {
    #[default]
    MinTotex,
    /// Fill the usable roof; only the battery is optimized.
    MaxPv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingOptions {
    pub mode: SizingMode,
    pub allow_pv: bool,
    pub allow_battery: bool,
    pub pv_step_kwp: f64,
    pub battery_step_kwh: f64,
    /// Upper end of the battery search; defaults to one average day of
    /// load or PV production, whichever is larger.
    pub battery_max_kwh: Option<f64>,
    /// Technology of candidate batteries; capacity is overridden.
    pub battery_template: BatteryDesign,
    pub module: ModuleSpec,
    pub aging: AgingParams,
    pub dispatch: DispatchOptions,
}

impl Default for SizingOptions {
    fn default() -> Self {
        Self {
            mode: SizingMode::MinTotex,
            allow_pv: true,
            allow_battery: true,
            pv_step_kwp: 0.5,
            battery_step_kwh: 1.0,
            battery_max_kwh: None,
            battery_template: BatteryDesign::with_capacity(1.0),
            module: ModuleSpec::default(),
            aging: AgingParams::default(),
            dispatch: DispatchOptions::default(),
        }
    }
}

impl SizingOptions {
    /// No new investment: the status-quo baseline.
    pub fn baseline() -> Self {
        Self {
            allow_pv: false,
            allow_battery: false,
            ..Self::default()
        }
    }
}

/// A dispatched system with its aging and cost evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: DispatchOutcome,
    pub schedule: ReplacementSchedule,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingResult {
    pub pv: Option<PvDesign>,
    pub battery: BatteryDesign,
    pub evaluation: Evaluation,
    /// Number of dispatch runs spent in the search.
    pub evaluations: usize,
}

impl SizingResult {
    pub fn totex(&self) -> f64 {
        self.evaluation.cost.totex
    }
}

/// Dispatches a fixed system and prices it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    load: &Profile,
    pv_kw: &Profile,
    pv_designs: &[PvDesign],
    battery: &BatteryDesign,
    prices: &PriceSeries,
    econ: &EconomicParams,
    aging: &AgingParams,
    options: DispatchOptions,
) -> Result<Evaluation> {
    let mut outcome = optimize_dispatch(load, pv_kw, battery, prices, econ, options)?;
    outcome.plan.pv = pv_designs.to_vec();
    let soc: &[f64] = if battery.is_present() {
        &outcome.plan.soc
    } else {
        &[]
    };
    let schedule = replacement_schedule(
        soc,
        econ.lifetime_years,
        econ.inverter_life_years,
        econ.battery_capex(battery.capacity_kwh),
        econ.inverter_cost(pv_designs),
        aging,
    )?;
    let cost = CostBreakdown::compute(
        outcome.grid_cost,
        outcome.battery_operation,
        pv_designs,
        battery.capacity_kwh,
        econ,
        &schedule,
    );
    Ok(Evaluation {
        outcome,
        schedule,
        cost,
    })
}

struct Search<'a> {
    building: &'a Building,
    unit_pv: Profile,
    prices: &'a PriceSeries,
    econ: &'a EconomicParams,
    opts: &'a SizingOptions,
    battery_max: f64,
    runs: usize,
}

struct Candidate {
    modules: u32,
    battery_kwh: f64,
    eval: Evaluation,
}

impl Search<'_> {
    fn run(&mut self, modules: u32, battery_kwh: f64) -> Result<Evaluation> {
        self.runs += 1;
        let designs: Vec<PvDesign> = if modules > 0 {
            vec![PvDesign::new(modules, self.opts.module, self.building.roof_area_m2)?]
        } else {
            Vec::new()
        };
        let pv = self.unit_pv.scaled(modules as f64)?;
        let battery = self.opts.battery_template.resized(battery_kwh);
        evaluate(
            &self.building.load,
            &pv,
            &designs,
            &battery,
            self.prices,
            self.econ,
            &self.opts.aging,
            self.opts.dispatch,
        )
    }

    /// Best battery for a fixed array: scans upward from zero and stops
    /// once TOTEX has risen on two consecutive sizes.
    fn best_battery(&mut self, modules: u32) -> Result<Candidate> {
        let mut best = Candidate {
            modules,
            battery_kwh: 0.0,
            eval: self.run(modules, 0.0)?,
        };
        if !self.opts.allow_battery {
            return Ok(best);
        }
        let step = self.opts.battery_step_kwh;
        let mut worse = 0;
        let mut k = 1;
        loop {
            let size = k as f64 * step;
            if size > self.battery_max + 1e-9 {
                break;
            }
            let eval = self.run(modules, size)?;
            if eval.cost.totex < best.eval.cost.totex {
                best = Candidate {
                    modules,
                    battery_kwh: size,
                    eval,
                };
                worse = 0;
            } else {
                worse += 1;
                if worse >= 2 {
                    break;
                }
            }
            k += 1;
        }
        Ok(best)
    }
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let (ta, tb) = (a.eval.cost.totex, b.eval.cost.totex);
    ta < tb || (ta == tb && (a.modules, a.battery_kwh) < (b.modules, b.battery_kwh))
}

/// Sizes rooftop PV and a battery for one building, minimizing TOTEX (or
/// filling the roof in [`SizingMode::MaxPv`]).
///
/// PV sizes are searched on a lattice of `pv_step_kwp` mapped to whole
/// modules. Zero PV is evaluated separately because the fixed installation
/// cost makes TOTEX jump there; the rest of the lattice is searched by
/// golden section followed by a local scan.
pub fn size_building(
    building: &Building,
    meteo: &Meteo,
    prices: &PriceSeries,
    econ: &EconomicParams,
    opts: &SizingOptions,
) -> Result<SizingResult> {
    if opts.allow_pv && !(opts.pv_step_kwp > 0.0) {
        return Err(DispatchError::EmptyGrid("PV step must be positive"));
    }
    if opts.allow_battery && !(opts.battery_step_kwh > 0.0) {
        return Err(DispatchError::EmptyGrid("battery step must be positive"));
    }
    opts.battery_template.validate()?;
    let unit_design = PvDesign::freestanding(1, opts.module);
    let unit_pv = pv_production(&unit_design, &meteo.ghi, &meteo.temperature)?;
    building
        .load
        .ensure_same_axis(&unit_pv)
        .map_err(|_| DispatchError::AxisMismatch)?;

    let max_modules = if opts.allow_pv {
        PvDesign::max_modules(&opts.module, building.roof_area_m2)
    } else {
        0
    };
    let days = building.load.axis().len() as f64 / building.load.axis().steps_per_day() as f64;
    let daily = (building.load.integral().max(unit_pv.integral() * max_modules as f64)) / days;
    let battery_max = opts
        .battery_max_kwh
        .unwrap_or_else(|| daily.ceil().max(opts.battery_step_kwh));

    let mut search = Search {
        building,
        unit_pv,
        prices,
        econ,
        opts,
        battery_max,
        runs: 0,
    };

    let lattice: Vec<u32> = match opts.mode {
        _ if max_modules == 0 => vec![0],
        SizingMode::MaxPv => vec![max_modules],
        SizingMode::MinTotex => {
            let mut l = vec![0];
            let mut k = 1;
            loop {
                let kwp = k as f64 * opts.pv_step_kwp;
                let m = ((kwp * 1000.0 / opts.module.p_nom_w).round() as u32).clamp(1, max_modules);
                if *l.last().unwrap() != m {
                    l.push(m);
                }
                if m == max_modules {
                    break;
                }
                k += 1;
            }
            l
        }
    };

    let mut memo: BTreeMap<usize, Candidate> = BTreeMap::new();
    let at = |i: usize, s: &mut Search<'_>, memo: &mut BTreeMap<usize, Candidate>| -> Result<f64> {
        if let Some(c) = memo.get(&i) {
            return Ok(c.eval.cost.totex);
        }
        let c = s.best_battery(lattice[i])?;
        let t = c.eval.cost.totex;
        memo.insert(i, c);
        Ok(t)
    };

    at(0, &mut search, &mut memo)?;
    if lattice.len() > 1 {
        // golden section over indices 1..len-1
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (1usize, lattice.len() - 1);
        while hi - lo > 3 {
            let span = (hi - lo) as f64;
            let a = lo + ((1.0 - inv_phi) * span).round() as usize;
            let b = lo + (inv_phi * span).round() as usize;
            let (a, b) = if a == b { (a, (b + 1).min(hi)) } else { (a, b) };
            let fa = at(a, &mut search, &mut memo)?;
            let fb = at(b, &mut search, &mut memo)?;
            if fa <= fb {
                hi = b;
            } else {
                lo = a;
            }
        }
        for i in lo..=hi {
            at(i, &mut search, &mut memo)?;
        }
        // local scan around the incumbent
        let best_i = memo
            .iter()
            .filter(|(i, _)| **i > 0)
            .min_by(|x, y| x.1.eval.cost.totex.total_cmp(&y.1.eval.cost.totex).then(x.0.cmp(y.0)))
            .map(|(i, _)| *i)
            .unwrap_or(1);
        for i in best_i.saturating_sub(2).max(1)..=(best_i + 2).min(lattice.len() - 1) {
            at(i, &mut search, &mut memo)?;
        }
    }

    let mut chosen: Option<Candidate> = None;
    for (_, c) in memo {
        match &chosen {
            Some(b) if !better(&c, b) => {}
            _ => chosen = Some(c),
        }
    }
    let c = chosen.expect("lattice is never empty");
    let pv = if c.modules > 0 {
        Some(PvDesign::new(c.modules, opts.module, building.roof_area_m2)?)
    } else {
        None
    };
    Ok(SizingResult {
        pv,
        battery: opts.battery_template.resized(c.battery_kwh),
        evaluation: c.eval,
        evaluations: search.runs,
    })
}

/// Central battery sized as the sum of the members' individual optima.
pub fn community_battery_size(members: &[SizingResult]) -> f64 {
    members.iter().map(|m| m.battery.capacity_kwh).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{synthesize_load, synthesize_meteo, Archetype, TimeAxis, Unit};
    use chrono::NaiveDate;

    fn two_weeks() -> TimeAxis {
        let start = NaiveDate::from_ymd_opt(2025, 6, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
        TimeAxis::span(start, 60, 24 * 14).unwrap()
    }

    fn building(load_mwh: f64, roof: f64, axis: &TimeAxis) -> Building {
        let load = if load_mwh > 0.0 {
            synthesize_load(axis, load_mwh, Archetype::Residential, 7).unwrap()
        } else {
            Profile::zeros(*axis, Unit::Kw)
        };
        Building {
            id: "b".into(),
            bus_id: "n1".into(),
            load,
            roof_area_m2: roof,
            pv: None,
        }
    }

    fn prices(axis: &TimeAxis) -> PriceSeries {
        PriceSeries::from_tariff(axis, &crate::tariff::TariffSchedule::external_double_2025(), None).unwrap()
    }

    #[test]
    fn baseline_has_no_capex() {
        let axis = two_weeks();
        let b = building(0.2, 100.0, &axis);
        let meteo = synthesize_meteo(&axis, 46.5, 1);
        let r = size_building(&b, &meteo, &prices(&axis), &EconomicParams::default(), &SizingOptions::baseline()).unwrap();
        assert_eq!(r.evaluation.cost.capex, 0.0);
        assert!(r.pv.is_none());
        assert!(!r.battery.is_present());
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn max_pv_fills_roof() {
        let axis = two_weeks();
        let b = building(0.2, 100.0, &axis);
        let meteo = synthesize_meteo(&axis, 46.5, 1);
        let opts = SizingOptions {
            mode: SizingMode::MaxPv,
            ..SizingOptions::default()
        };
        let r = size_building(&b, &meteo, &prices(&axis), &EconomicParams::default(), &opts).unwrap();
        assert_eq!(r.pv.unwrap().modules, 42);
    }

    #[test]
    fn zero_load_gets_no_battery() {
        let axis = two_weeks();
        let b = building(0.0, 100.0, &axis);
        let meteo = synthesize_meteo(&axis, 46.5, 1);
        let opts = SizingOptions {
            mode: SizingMode::MaxPv,
            ..SizingOptions::default()
        };
        let r = size_building(&b, &meteo, &prices(&axis), &EconomicParams::default(), &opts).unwrap();
        assert!(!r.battery.is_present());
    }

    #[test]
    fn search_matches_exhaustive_scan() {
        let axis = two_weeks();
        let b = building(0.4, 60.0, &axis);
        let meteo = synthesize_meteo(&axis, 46.5, 3);
        // cheap, short-lived economics so the optimum is interior
        let econ = EconomicParams {
            pv_fixed_chf: 0.0,
            pv_specific_chf_per_w: 0.02,
            lifetime_years: 1,
            battery_specific_chf_per_kwh: 40.0,
            ..EconomicParams::default()
        };
        let opts = SizingOptions {
            battery_max_kwh: Some(4.0),
            ..SizingOptions::default()
        };
        let p = prices(&axis);
        let r = size_building(&b, &meteo, &p, &econ, &opts).unwrap();
        let unit = pv_production(&PvDesign::freestanding(1, opts.module), &meteo.ghi, &meteo.temperature).unwrap();
        let max = PvDesign::max_modules(&opts.module, b.roof_area_m2);
        let mut best = f64::INFINITY;
        for m in 0..=max {
            for e in 0..=4 {
                let designs: Vec<PvDesign> = if m > 0 { vec![PvDesign::new(m, opts.module, b.roof_area_m2).unwrap()] } else { vec![] };
                let ev = evaluate(
                    &b.load,
                    &unit.scaled(m as f64).unwrap(),
                    &designs,
                    &opts.battery_template.resized(e as f64),
                    &p,
                    &econ,
                    &opts.aging,
                    DispatchOptions::default(),
                )
                .unwrap();
                best = best.min(ev.cost.totex);
            }
        }
        // the lattice is coarser than single modules, so allow a little slack
        assert!(r.totex() <= best * 1.01, "{} vs {}", r.totex(), best);
    }
}
