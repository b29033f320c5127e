//! Internal exchange as a function of the community PV-to-load ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    select_members, settle, Allocation, BatteryOption, Dataset, InternalTariff, MemberSelection,
    Placement, Result, ScenarioError, ScenarioSpec,
};
use crate::dispatch::{optimize_dispatch, size_building, DispatchOptions, SizingMode, SizingOptions};
use crate::finance::MemberFlows;
use crate::timeseries::{Profile, Unit};

fn default_id() -> String {
    "sweep".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default)]
    pub members: MemberSelection,
    #[serde(default)]
    pub allocation: Allocation,
    /// Buildings in the order they receive a roof-filling array. Defaults
    /// to the members with roof potential, lowest PV-to-load ratio first.
    #[serde(default)]
    pub order: Option<Vec<String>>,
    /// Adds a central battery sized as the sum of the equipped buildings'
    /// individual optima.
    #[serde(default)]
    pub battery: bool,
    #[serde(default)]
    pub internal_tariff: InternalTariff,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            id: default_id(),
            members: MemberSelection::default(),
            allocation: Allocation::default(),
            order: None,
            battery: false,
            internal_tariff: InternalTariff::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Buildings equipped so far.
    pub pv_buildings: usize,
    pub pv_mwh: f64,
    pub load_mwh: f64,
    pub ratio: f64,
    pub exchange_mwh: f64,
    pub battery_kwh: f64,
}

/// Adds PV building by building and records the annual internal exchange
/// after each addition, starting from a community without PV.
pub fn ratio_sweep(dataset: &Dataset, spec: &SweepSpec, run_seed: u64) -> Result<Vec<SweepPoint>> {
    let mut scenario = ScenarioSpec::new(spec.id.clone());
    scenario.members = spec.members.clone();
    scenario.allocation = spec.allocation;
    scenario.internal_tariff = spec.internal_tariff;
    if spec.battery {
        scenario.battery = BatteryOption::Central { placement: Placement::Up };
    }
    let members = select_members(dataset, &scenario, run_seed)?;
    let order: Vec<usize> = match &spec.order {
        Some(ids) => {
            let mut out = Vec::with_capacity(ids.len());
            for id in ids {
                let k = dataset
                    .buildings
                    .iter()
                    .position(|b| &b.id == id)
                    .filter(|k| members.contains(k))
                    .ok_or_else(|| ScenarioError::Invalid(format!("{id} is not a member of the sweep community")))?;
                if out.contains(&k) {
                    return Err(ScenarioError::Invalid(format!("{id} added twice")));
                }
                out.push(k);
            }
            out
        }
        None => super::select_pv(dataset, &members, 1.0),
    };
    if order.is_empty() {
        return Err(ScenarioError::Invalid("sweep needs at least two points".into()));
    }
    let axis = dataset.axis;
    let modules: Vec<u32> = order.iter().map(|&k| dataset.max_pv(&dataset.buildings[k])).collect();
    let pv: Vec<Profile> = modules.iter().map(|&m| dataset.pv_profile(m)).collect();
    let optimum: Vec<f64> = if spec.battery {
        order
            .par_iter()
            .map(|&k| {
                let opts = SizingOptions {
                    mode: SizingMode::MaxPv,
                    battery_template: dataset.spec.battery,
                    module: dataset.spec.module,
                    aging: dataset.spec.aging,
                    ..SizingOptions::default()
                };
                size_building(&dataset.buildings[k], &dataset.meteo, &dataset.external_prices, dataset.economics(), &opts)
                    .map(|r| r.battery.capacity_kwh)
                    .map_err(ScenarioError::from)
            })
            .collect::<Result<_>>()?
    } else {
        vec![0.0; order.len()]
    };
    let total_load = Profile::sum(members.iter().map(|&k| &dataset.buildings[k].load))?
        .unwrap_or_else(|| Profile::zeros(axis, Unit::Kw));
    let load_mwh = total_load.annual_energy_mwh();

    (0..=order.len())
        .into_par_iter()
        .map(|added| {
            let mut flows: Vec<MemberFlows> = Vec::with_capacity(members.len() + 1);
            let mut pv_sum = vec![0.0; axis.len()];
            for &k in &members {
                let b = &dataset.buildings[k];
                let net: Vec<f64> = match order[..added].iter().position(|&o| o == k) {
                    Some(i) => {
                        for (s, p) in pv_sum.iter_mut().zip(pv[i].values()) {
                            *s += p;
                        }
                        b.load.values().iter().zip(pv[i].values()).map(|(l, p)| l - p).collect()
                    }
                    None => b.load.values().to_vec(),
                };
                flows.push(MemberFlows::from_net(b.id.clone(), axis, &net));
            }
            let pv_profile = Profile::new(axis, Unit::Kw, pv_sum)?;
            let battery_kwh: f64 = optimum[..added].iter().sum();
            if battery_kwh > 0.0 {
                let out = optimize_dispatch(
                    &total_load,
                    &pv_profile,
                    &dataset.spec.battery.resized(battery_kwh),
                    &dataset.external_prices,
                    dataset.economics(),
                    DispatchOptions::default(),
                )?;
                let net: Vec<f64> = out
                    .plan
                    .charge_kw
                    .iter()
                    .zip(&out.plan.discharge_kw)
                    .map(|(c, d)| c - d)
                    .collect();
                flows.push(MemberFlows::from_net("battery", axis, &net));
            }
            let s = settle(dataset, &flows, &scenario, false)?;
            let pv_mwh = pv_profile.annual_energy_mwh();
            Ok(SweepPoint {
                pv_buildings: added,
                pv_mwh,
                load_mwh,
                ratio: if load_mwh > 0.0 { pv_mwh / load_mwh } else { 0.0 },
                exchange_mwh: s.total_exchange_kwh() / 1000.0,
                battery_kwh,
            })
        })
        .collect()
}
