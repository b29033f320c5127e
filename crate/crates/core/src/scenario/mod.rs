//! Community experiments: member selection, PV and battery deployment,
//! community dispatch, settlement, network flows and KPIs.

mod dataset;
mod sweep;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aging::AgingError;
use crate::dispatch::{
    evaluate, size_building, BatteryDesign, CostBreakdown, DispatchError, DispatchOptions,
    DispatchPlan, Evaluation, SizingMode, SizingOptions, SizingResult,
};
use crate::finance::{
    discounted_payback, irr, lcoe, profit, revenue_loss, settle_exchange, standalone_bill,
    BillBreakdown, CashflowLedger, ExchangeSettlement, ExporterRemuneration, FinanceError,
    MemberFlows, ProRata, SettlementOptions,
};
use crate::powerflow::{run_year, BusVoltageStats, NodalSeries, PowerFlowError, SolveOptions, VoltageStats, YearFlow};
use crate::tariff::{TariffError, TariffSchedule};
use crate::timeseries::{Profile, PvDesign, TimeseriesError};

pub use dataset::{BuildingSpec, Dataset, DatasetSpec, LargeConsumerSpec, LargeProducerSpec, TariffSet};
pub use sweep::{ratio_sweep, SweepPoint, SweepSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Network {
        path: String,
        source: PowerFlowError,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("member selection is empty")]
    NoMembers,
    #[error("scenario {id}: {source}")]
    InScenario {
        id: String,
        source: Box<ScenarioError>,
    },
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Aging(#[from] AgingError),
    #[error(transparent)]
    Finance(#[from] FinanceError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberSelection {
    /// Share of all buildings; the count is rounded down.
    Fraction(f64),
    Ids(Vec<String>),
}

impl Default for MemberSelection {
    fn default() -> Self {
        MemberSelection::Fraction(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Electrically farthest buildings first.
    #[default]
    EndOfLine,
    /// Seeded uniform sample; without a seed the run seed is used.
    Random {
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Bus of the member with the largest PV array.
    Up,
    /// Electrically farthest bus.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryOption {
    #[default]
    None,
    Central { placement: Placement },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InternalTariff {
    #[default]
    Double,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraActor {
    #[default]
    None,
    LargeConsumer,
    LargeProducer,
}

fn yes() -> bool {
    true
}

fn default_pv_mode() -> SizingMode {
    SizingMode::MaxPv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    /// Without a community every member is billed on its own.
    #[serde(default = "yes")]
    pub community: bool,
    #[serde(default)]
    pub members: MemberSelection,
    #[serde(default)]
    pub allocation: Allocation,
    /// Share of members that receive PV.
    #[serde(default)]
    pub pv_penetration: f64,
    #[serde(default = "default_pv_mode")]
    pub pv_mode: SizingMode,
    #[serde(default)]
    pub battery: BatteryOption,
    #[serde(default)]
    pub internal_tariff: InternalTariff,
    #[serde(default)]
    pub extra_actor: ExtraActor,
    #[serde(default)]
    pub remuneration: ExporterRemuneration,
}

impl ScenarioSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            community: true,
            members: MemberSelection::default(),
            allocation: Allocation::default(),
            pv_penetration: 0.0,
            pv_mode: default_pv_mode(),
            battery: BatteryOption::None,
            internal_tariff: InternalTariff::Double,
            extra_actor: ExtraActor::None,
            remuneration: ExporterRemuneration::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id == "." || self.id == ".." {
            return Err(ScenarioError::Invalid(format!("scenario id {:?} is not a valid directory name", self.id)));
        }
        if !(0.0..=1.0).contains(&self.pv_penetration) {
            return Err(ScenarioError::Invalid(format!("pv_penetration {} outside [0, 1]", self.pv_penetration)));
        }
        if let MemberSelection::Fraction(f) = self.members {
            if !(0.0..=1.0).contains(&f) {
                return Err(ScenarioError::Invalid(format!("member fraction {f} outside [0, 1]")));
            }
        }
        if !self.community && self.battery != BatteryOption::None {
            return Err(ScenarioError::Invalid("a central battery needs a community".into()));
        }
        if !self.community && self.extra_actor != ExtraActor::None {
            return Err(ScenarioError::Invalid("large actors join a community only".into()));
        }
        Ok(())
    }
}

/// Building indices of the members, in selection order.
pub fn select_members(dataset: &Dataset, spec: &ScenarioSpec, run_seed: u64) -> Result<Vec<usize>> {
    let n = dataset.buildings.len();
    let chosen = match &spec.members {
        MemberSelection::Ids(ids) => {
            let mut out = Vec::with_capacity(ids.len());
            for id in ids {
                let k = dataset
                    .buildings
                    .iter()
                    .position(|b| &b.id == id)
                    .ok_or_else(|| ScenarioError::Invalid(format!("unknown member {id}")))?;
                if out.contains(&k) {
                    return Err(ScenarioError::Invalid(format!("member {id} listed twice")));
                }
                out.push(k);
            }
            out
        }
        MemberSelection::Fraction(f) => {
            // 1e-9 keeps 0.3·10 = 2.9999… at 3
            let count = ((f * n as f64) + 1e-9).floor() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            match spec.allocation {
                Allocation::EndOfLine => {
                    let dist: Vec<f64> = dataset
                        .buildings
                        .iter()
                        .map(|b| dataset.network.electrical_distance(&b.bus_id).unwrap_or(0.0))
                        .collect();
                    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
                }
                Allocation::Random { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(run_seed));
                    order.shuffle(&mut rng);
                }
            }
            order.truncate(count.min(n));
            order
        }
    };
    if chosen.is_empty() {
        return Err(ScenarioError::NoMembers);
    }
    Ok(chosen)
}

/// Number of members that receive PV: `floor(penetration · members)`, at
/// least one whenever the penetration is positive.
pub fn pv_count(penetration: f64, members: usize) -> usize {
    if penetration <= 0.0 {
        return 0;
    }
    (((penetration * members as f64) + 1e-9).floor() as usize).clamp(1, members)
}

/// Members that get PV: those with the lowest PV potential relative to
/// their load, skipping roofs that hold no module.
pub fn select_pv(dataset: &Dataset, members: &[usize], penetration: f64) -> Vec<usize> {
    let mut candidates: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&k| dataset.max_pv(&dataset.buildings[k]) > 0)
        .map(|&k| (dataset.pv_potential_ratio(&dataset.buildings[k]), k))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates
        .into_iter()
        .take(pv_count(penetration, members.len()))
        .map(|(_, k)| k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub id: String,
    pub bus: String,
    pub load_mwh: f64,
    pub pv_modules: u32,
    pub pv_kwp: f64,
    pub pv_mwh: f64,
    /// Individually optimal battery; pooled into the central one.
    pub battery_kwh: f64,
    pub standalone_totex_chf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyKpis {
    pub load_mwh: f64,
    pub pv_mwh: f64,
    pub exchange_mwh: f64,
    pub grid_import_mwh: f64,
    pub grid_export_mwh: f64,
    /// Share of load not drawn from the grid.
    pub self_sufficiency: f64,
    pub battery_throughput_mwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinanceKpis {
    pub cost: CostBreakdown,
    pub lcoe_chf_per_kwh: Option<f64>,
    pub irr: Option<f64>,
    pub irr_multiple_roots: bool,
    pub profit_chf: f64,
    pub discounted_payback_years: Option<f64>,
    pub baseline: CashflowLedger,
    pub scenario: CashflowLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillKpis {
    pub no_cel: BillBreakdown,
    pub cel: BillBreakdown,
    pub revenue_loss_chf: f64,
    /// Revenue loss over the no-community bill.
    pub revenue_loss_share: f64,
    pub internal_payments_chf: f64,
    pub internal_receipts_chf: f64,
    pub dso_retained_chf: f64,
    pub operator_margin_chf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineKpi {
    pub line_id: String,
    pub rated_a: f64,
    pub max_loading_pct: f64,
    pub median_loading_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkKpis {
    /// Whole feeder, at the transformer.
    pub max_feed_in_kw: f64,
    pub max_drawn_kw: f64,
    /// Community participants only.
    pub cel_max_feed_in_kw: f64,
    pub cel_max_drawn_kw: f64,
    pub transformer_voltage_dev_pu: f64,
    pub max_line_loading_pct: f64,
    pub median_line_loading_pct: f64,
    pub min_voltage_pu: f64,
    pub max_voltage_pu: f64,
    pub losses_mwh: f64,
    pub max_mismatch_pu: f64,
    pub lines: Vec<LineKpi>,
    pub voltages: VoltageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub scenario: ScenarioSpec,
    pub members: Vec<MemberReport>,
    pub pv_buildings: Vec<String>,
    pub pv_kwp: f64,
    pub battery_kwh: f64,
    pub battery_bus: Option<String>,
    pub energy: EnergyKpis,
    pub finance: FinanceKpis,
    pub bills: BillKpis,
    pub settlement: Vec<crate::finance::MemberSettlement>,
    pub network: NetworkKpis,
}

impl KpiReport {
    pub fn bus_voltages(&self) -> &[BusVoltageStats] {
        &self.network.voltages.buses
    }
}

/// Everything a scenario run produces. Plans and flows are kept for
/// inspection; only the report is written out.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: KpiReport,
    /// Dispatch of the virtual building, or one plan per member when there
    /// is no community.
    pub plans: Vec<DispatchPlan>,
    pub settlement: ExchangeSettlement,
    pub no_cel_settlement: ExchangeSettlement,
    pub flows: YearFlow,
}

fn internal_schedule(dataset: &Dataset, t: InternalTariff) -> &TariffSchedule {
    match t {
        InternalTariff::Double => &dataset.tariffs.internal_double,
        InternalTariff::Dynamic => &dataset.tariffs.internal_dynamic,
    }
}

fn sum_profiles<'a>(dataset: &Dataset, it: impl IntoIterator<Item = &'a Profile>) -> Result<Profile> {
    Ok(Profile::sum(it)?.unwrap_or_else(|| Profile::zeros(dataset.axis, crate::timeseries::Unit::Kw)))
}

fn sizing_options(dataset: &Dataset, spec: &ScenarioSpec, with_pv: bool) -> SizingOptions {
    SizingOptions {
        mode: spec.pv_mode,
        allow_pv: with_pv,
        allow_battery: spec.battery != BatteryOption::None,
        battery_template: dataset.spec.battery,
        module: dataset.spec.module,
        aging: dataset.spec.aging,
        dispatch: DispatchOptions::default(),
        ..SizingOptions::default()
    }
}

/// Sizes every member on its own against the external tariff.
pub fn size_members(
    dataset: &Dataset,
    spec: &ScenarioSpec,
    members: &[usize],
    pv: &[usize],
) -> Result<Vec<SizingResult>> {
    members
        .par_iter()
        .map(|&k| {
            let opts = sizing_options(dataset, spec, pv.contains(&k));
            size_building(
                &dataset.buildings[k],
                &dataset.meteo,
                &dataset.external_prices,
                dataset.economics(),
                &opts,
            )
            .map_err(ScenarioError::from)
        })
        .collect()
}

fn settle(
    dataset: &Dataset,
    flows: &[MemberFlows],
    spec: &ScenarioSpec,
    standalone: bool,
) -> Result<ExchangeSettlement> {
    Ok(settle_exchange(
        flows,
        &dataset.tariffs.external,
        internal_schedule(dataset, spec.internal_tariff),
        Some(&dataset.meteo.ghi),
        &ProRata,
        SettlementOptions {
            remuneration: spec.remuneration,
            standalone,
        },
    )?)
}

/// Members operating on their own: their breakdowns added up.
fn summed_cost(sized: &[SizingResult], annuity: f64) -> CostBreakdown {
    let mut c = CostBreakdown {
        totex: 0.0,
        opex: 0.0,
        capex: 0.0,
        ox_ge: 0.0,
        ox_bo: 0.0,
        ox_pm: 0.0,
        inverter_annualized: 0.0,
        cx_pv: 0.0,
        cx_bat: 0.0,
        battery_multiplier: 1.0,
        annuity,
    };
    for s in sized {
        let e = &s.evaluation.cost;
        c.ox_ge += e.ox_ge;
        c.capex += e.capex;
        c.ox_bo += e.ox_bo;
        c.ox_pm += e.ox_pm;
        c.inverter_annualized += e.inverter_annualized;
        c.cx_pv += e.cx_pv;
        c.cx_bat += e.cx_bat;
    }
    c.opex = c.ox_ge + c.ox_bo + c.ox_pm;
    c.totex = c.opex + annuity * c.capex;
    c
}

fn peaks(series: &[f64]) -> (f64, f64) {
    series
        .iter()
        .fold((0.0f64, 0.0f64), |(f, d), &x| (f.max(-x), d.max(x)))
}

/// Runs one scenario end to end. `run_seed` feeds random allocations that
/// carry no seed of their own.
pub fn run_scenario(dataset: &Dataset, spec: &ScenarioSpec, run_seed: u64) -> Result<ScenarioOutcome> {
    run_inner(dataset, spec, run_seed).map_err(|e| ScenarioError::InScenario {
        id: spec.id.clone(),
        source: Box::new(e),
    })
}

fn run_inner(dataset: &Dataset, spec: &ScenarioSpec, run_seed: u64) -> Result<ScenarioOutcome> {
    spec.validate()?;
    let econ = dataset.economics();
    let axis = dataset.axis;
    let dt = axis.step_hours();
    let members = select_members(dataset, spec, run_seed)?;
    let pv_set = select_pv(dataset, &members, spec.pv_penetration);
    let sized = size_members(dataset, spec, &members, &pv_set)?;

    let member_pv: Vec<Profile> = sized
        .iter()
        .map(|s| dataset.pv_profile(s.pv.map_or(0, |d| d.modules)))
        .collect();
    let mut designs: Vec<PvDesign> = sized.iter().filter_map(|s| s.pv).collect();
    // an empty f64 sum is -0.0
    let member_kwp: f64 = designs.iter().map(|d| d.kwp()).sum::<f64>() + 0.0;

    let mut participants: Vec<MemberFlows> = Vec::new();
    for (i, &k) in members.iter().enumerate() {
        let b = &dataset.buildings[k];
        let net: Vec<f64> = b
            .load
            .values()
            .iter()
            .zip(member_pv[i].values())
            .map(|(l, p)| l - p)
            .collect();
        participants.push(MemberFlows::from_net(b.id.clone(), axis, &net));
    }

    let mut loads: Vec<&Profile> = members.iter().map(|&k| &dataset.buildings[k].load).collect();
    let mut pvs: Vec<&Profile> = member_pv.iter().collect();
    let producer_pv;
    match spec.extra_actor {
        ExtraActor::None => {}
        ExtraActor::LargeConsumer => {
            loads.push(&dataset.large_consumer);
            participants.push(MemberFlows::from_net("large_consumer", axis, dataset.large_consumer.values()));
        }
        ExtraActor::LargeProducer => {
            producer_pv = dataset.pv_profile(dataset.large_producer.modules);
            let neg: Vec<f64> = producer_pv.values().iter().map(|p| -p).collect();
            participants.push(MemberFlows::from_net("large_producer", axis, &neg));
            pvs.push(&producer_pv);
            designs.push(dataset.large_producer);
        }
    }
    let total_load = sum_profiles(dataset, loads.iter().copied())?;
    let total_pv = sum_profiles(dataset, pvs.iter().copied())?;

    let battery_kwh = match spec.battery {
        BatteryOption::None => 0.0,
        BatteryOption::Central { .. } => crate::dispatch::community_battery_size(&sized),
    };
    let battery = if battery_kwh > 0.0 {
        dataset.spec.battery.resized(battery_kwh)
    } else {
        BatteryDesign::none()
    };
    let battery_bus = match spec.battery {
        BatteryOption::Central { placement } if battery_kwh > 0.0 => Some(match placement {
            Placement::Up => {
                let (i, _) = sized.iter().enumerate().fold((0usize, -1.0f64), |acc, (i, s)| {
                    let kwp = s.pv.map_or(0.0, |d| d.kwp());
                    if kwp > acc.1 {
                        (i, kwp)
                    } else {
                        acc
                    }
                });
                dataset.buildings[members[i]].bus_id.clone()
            }
            Placement::Down => dataset.network.farthest_bus().to_string(),
        }),
        _ => None,
    };

    // Physical operation and investment.
    let (plans, ox_bo, capex_initial, yearly_extra, community_eval): (
        Vec<DispatchPlan>,
        f64,
        f64,
        Vec<f64>,
        Option<Evaluation>,
    ) = if spec.community {
        let eval = evaluate(
            &total_load,
            &total_pv,
            &designs,
            &battery,
            &dataset.external_prices,
            econ,
            &dataset.spec.aging,
            DispatchOptions::default(),
        )?;
        let plan = eval.outcome.plan.clone();
        if battery.is_present() {
            let net: Vec<f64> = plan
                .charge_kw
                .iter()
                .zip(&plan.discharge_kw)
                .map(|(c, d)| c - d)
                .collect();
            participants.push(MemberFlows::from_net("battery", axis, &net));
        }
        let capex = eval.cost.cx_pv + eval.cost.cx_bat;
        let extra = eval.schedule.yearly_cashflows();
        (vec![plan], eval.outcome.battery_operation, capex, extra, Some(eval))
    } else {
        let mut extra = vec![0.0; econ.lifetime_years as usize + 1];
        let mut capex = 0.0;
        let mut bo = 0.0;
        for s in &sized {
            capex += s.evaluation.cost.cx_pv + s.evaluation.cost.cx_bat;
            bo += s.evaluation.outcome.battery_operation;
            for (a, b) in extra.iter_mut().zip(s.evaluation.schedule.yearly_cashflows()) {
                *a += b;
            }
        }
        (sized.iter().map(|s| s.evaluation.outcome.plan.clone()).collect(), bo, capex, extra, None)
    };

    let settlement = settle(dataset, &participants, spec, !spec.community)?;
    let no_cel = settle(dataset, &participants, spec, true)?;

    // TOTEX is the optimizer's view: grid exchange of the aggregate at
    // external prices, internal trades netted out.
    let cost = match &community_eval {
        Some(eval) => eval.cost,
        None => summed_cost(&sized, econ.annuity()),
    };

    // Cash flows.
    let horizon = econ.lifetime_years as usize;
    let load_mwh = total_load.annual_energy_mwh();
    let mut baseline_bill = 0.0;
    for p in &loads {
        baseline_bill += standalone_bill(p.values(), &axis, &dataset.tariffs.external, Some(&dataset.meteo.ghi))?.total();
    }
    let baseline = CashflowLedger::constant(horizon, 0.0, baseline_bill, 0.0, load_mwh, &[]);
    let bills_paid = settlement.total_bill().total();
    let paid_out: f64 = settlement
        .members
        .iter()
        .map(|m| m.internal_receipts + m.feed_in_revenue)
        .sum();
    let scenario_ledger = CashflowLedger::constant(
        horizon,
        capex_initial,
        bills_paid + ox_bo + econ.pv_maintenance * cost.cx_pv,
        paid_out,
        load_mwh,
        &yearly_extra,
    );
    let rate = econ.discount_rate;
    let savings: Vec<f64> = baseline
        .net_costs()
        .iter()
        .zip(scenario_ledger.net_costs())
        .map(|(b, s)| b - s)
        .collect();
    let (irr_rate, irr_multiple) = match irr(&savings) {
        Ok(r) => (Some(r.rate), r.multiple_roots),
        Err(_) => (None, false),
    };
    let finance = FinanceKpis {
        cost,
        lcoe_chf_per_kwh: lcoe(&scenario_ledger, rate).ok(),
        irr: irr_rate,
        irr_multiple_roots: irr_multiple,
        profit_chf: profit(&baseline, &scenario_ledger, rate)?,
        discounted_payback_years: discounted_payback(&savings, rate),
        baseline,
        scenario: scenario_ledger,
    };

    let bill_cel = settlement.total_bill();
    let bill_no_cel = no_cel.total_bill();
    let loss = revenue_loss(&bill_no_cel, &bill_cel);
    let bills = BillKpis {
        no_cel: bill_no_cel,
        cel: bill_cel,
        revenue_loss_chf: loss,
        revenue_loss_share: if bill_no_cel.total() > 0.0 { loss / bill_no_cel.total() } else { 0.0 },
        internal_payments_chf: settlement.internal_payments,
        internal_receipts_chf: settlement.internal_receipts,
        dso_retained_chf: settlement.dso_retained,
        operator_margin_chf: settlement.operator_margin,
    };

    // Nodal flows: members inject their net, others their load.
    let mut nodal = NodalSeries::default();
    for b in &dataset.buildings {
        nodal.add(&b.bus_id, &vec![0.0; axis.len()])?;
    }
    for (k, b) in dataset.buildings.iter().enumerate() {
        match members.iter().position(|&m| m == k) {
            Some(i) => {
                let net: Vec<f64> = b
                    .load
                    .values()
                    .iter()
                    .zip(member_pv[i].values())
                    .map(|(l, p)| l - p)
                    .collect();
                nodal.add(&b.bus_id, &net)?;
            }
            None => nodal.add(&b.bus_id, b.load.values())?,
        }
    }
    if let (Some(bus), true) = (&battery_bus, spec.community) {
        let plan = &plans[0];
        let net: Vec<f64> = plan
            .charge_kw
            .iter()
            .zip(&plan.discharge_kw)
            .map(|(c, d)| c - d)
            .collect();
        nodal.add(bus, &net)?;
    }
    let flows = run_year(&dataset.network, &nodal, SolveOptions::default())?;

    let community_net: Vec<f64> = if spec.community {
        plans[0].net_kw()
    } else {
        let mut v = vec![0.0; axis.len()];
        for p in &plans {
            for (a, b) in v.iter_mut().zip(p.net_kw()) {
                *a += b;
            }
        }
        v
    };
    let (cel_feed, cel_drawn) = peaks(&community_net);
    let transformer_dev = flows
        .steps
        .iter()
        .map(|s| (s.transformer_voltage(&dataset.network) - 1.0).abs())
        .fold(0.0, f64::max);
    let loading = flows.line_loading();
    let lines: Vec<LineKpi> = flows
        .line_ids
        .iter()
        .zip(&dataset.network.spec().lines)
        .zip(&loading)
        .map(|((id, spec_line), l)| LineKpi {
            line_id: id.clone(),
            rated_a: spec_line.rated_a,
            max_loading_pct: l.max_pct,
            median_loading_pct: l.median_pct,
        })
        .collect();
    let (vmin, vmax) = flows
        .steps
        .iter()
        .flat_map(|s| s.voltages.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut medians: Vec<f64> = loading.iter().map(|l| l.median_pct).collect();
    medians.sort_by(f64::total_cmp);
    let network = NetworkKpis {
        max_feed_in_kw: flows.max_feed_in_kw(),
        max_drawn_kw: flows.max_drawn_kw(),
        cel_max_feed_in_kw: cel_feed,
        cel_max_drawn_kw: cel_drawn,
        transformer_voltage_dev_pu: transformer_dev,
        max_line_loading_pct: loading.iter().map(|l| l.max_pct).fold(0.0, f64::max),
        median_line_loading_pct: crate::powerflow::percentile_sorted(&medians, 50.0).unwrap_or(0.0),
        min_voltage_pu: vmin,
        max_voltage_pu: vmax,
        losses_mwh: flows.steps.iter().map(|s| s.losses_kw).sum::<f64>() * dt / 1000.0,
        max_mismatch_pu: flows.max_mismatch_pu(),
        lines,
        voltages: flows.voltage_stats(),
    };

    let grid_import: f64 = settlement.members.iter().map(|m| m.grid_import_kwh).sum();
    let grid_export: f64 = settlement.members.iter().map(|m| m.grid_export_kwh).sum();
    let throughput: f64 = plans
        .iter()
        .flat_map(|p| p.discharge_kw.iter())
        .sum::<f64>()
        * dt
        / 1000.0;
    let energy = EnergyKpis {
        load_mwh,
        pv_mwh: total_pv.annual_energy_mwh(),
        exchange_mwh: settlement.total_exchange_kwh() / 1000.0,
        grid_import_mwh: grid_import / 1000.0,
        grid_export_mwh: grid_export / 1000.0,
        self_sufficiency: if load_mwh > 0.0 { (1.0 - grid_import / 1000.0 / load_mwh).clamp(0.0, 1.0) } else { 0.0 },
        battery_throughput_mwh: throughput,
    };

    let member_reports: Vec<MemberReport> = members
        .iter()
        .zip(&sized)
        .zip(&member_pv)
        .map(|((&k, s), pv)| {
            let b = &dataset.buildings[k];
            MemberReport {
                id: b.id.clone(),
                bus: b.bus_id.clone(),
                load_mwh: b.load.annual_energy_mwh(),
                pv_modules: s.pv.map_or(0, |d| d.modules),
                pv_kwp: s.pv.map_or(0.0, |d| d.kwp()),
                pv_mwh: pv.annual_energy_mwh(),
                battery_kwh: s.battery.capacity_kwh,
                standalone_totex_chf: s.totex(),
            }
        })
        .collect();

    let report = KpiReport {
        scenario: spec.clone(),
        pv_buildings: pv_set.iter().map(|&k| dataset.buildings[k].id.clone()).collect(),
        pv_kwp: member_kwp,
        battery_kwh,
        battery_bus,
        members: member_reports,
        energy,
        finance,
        bills,
        settlement: settlement.members.clone(),
        network,
    };
    Ok(ScenarioOutcome {
        report,
        plans,
        settlement,
        no_cel_settlement: no_cel,
        flows,
    })
}

#[cfg(test)]
mod tests;
