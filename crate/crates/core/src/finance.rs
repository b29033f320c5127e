//! Economic KPIs: LCOE, NPV of savings, IRR, payback, bills and the
//! settlement of internal exchanges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tariff::{Decomposition, TariffError, TariffSchedule};
use crate::timeseries::{Profile, TimeAxis};

#[derive(Debug, Error)]
pub enum FinanceError {
    #[error("discounted served energy is zero")]
    ZeroEnergy,
    #[error("ledger horizons differ: {0} vs {1} years")]
    HorizonMismatch(usize, usize),
    #[error("ledger columns have different lengths")]
    LedgerShape,
    #[error("cash flows never change sign; IRR undefined")]
    NoSignChange,
    #[error("no IRR in (-0.99, 1.0)")]
    NoRootInBracket,
    #[error("member {0} flows are not on the settlement axis")]
    AxisMismatch(String),
    #[error(transparent)]
    Tariff(#[from] TariffError),
}

pub type Result<T> = std::result::Result<T, FinanceError>;

pub fn discount_factor(rate: f64, year: usize) -> f64 {
    (1.0 + rate).powi(-(year as i32))
}

pub fn npv(flows: &[f64], rate: f64) -> f64 {
    flows
        .iter()
        .enumerate()
        .map(|(t, c)| c * discount_factor(rate, t))
        .sum()
}

/// Yearly cash flows over `0..=L`. Year 0 carries the initial investment
/// and no served energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashflowLedger {
    /// Outflows, CHF.
    pub costs: Vec<f64>,
    /// Inflows, CHF.
    pub revenues: Vec<f64>,
    /// Energy supplied to the load, MWh.
    pub energy_mwh: Vec<f64>,
}

impl CashflowLedger {
    pub fn zeros(horizon_years: usize) -> Self {
        Self {
            costs: vec![0.0; horizon_years + 1],
            revenues: vec![0.0; horizon_years + 1],
            energy_mwh: vec![0.0; horizon_years + 1],
        }
    }

    /// Ledger of a system with constant yearly operation: `capex` at year
    /// 0, then `annual_cost`, `annual_revenue` and `annual_energy_mwh` in
    /// every operating year, plus `extra_costs[t]` (replacements, residual
    /// credits as negatives).
    pub fn constant(
        horizon_years: usize,
        capex: f64,
        annual_cost: f64,
        annual_revenue: f64,
        annual_energy_mwh: f64,
        extra_costs: &[f64],
    ) -> Self {
        let mut l = Self::zeros(horizon_years);
        l.costs[0] = capex;
        for t in 1..=horizon_years {
            l.costs[t] = annual_cost;
            l.revenues[t] = annual_revenue;
            l.energy_mwh[t] = annual_energy_mwh;
        }
        for (t, x) in extra_costs.iter().enumerate().take(horizon_years + 1) {
            l.costs[t] += x;
        }
        l
    }

    pub fn horizon(&self) -> usize {
        self.costs.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.costs.is_empty()
            || self.revenues.len() != self.costs.len()
            || self.energy_mwh.len() != self.costs.len()
        {
            return Err(FinanceError::LedgerShape);
        }
        Ok(())
    }

    /// Costs net of revenues, per year.
    pub fn net_costs(&self) -> Vec<f64> {
        self.costs.iter().zip(&self.revenues).map(|(c, r)| c - r).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * alpha).collect();
        Self {
            costs: s(&self.costs),
            revenues: s(&self.revenues),
            energy_mwh: s(&self.energy_mwh),
        }
    }
}

/// Discounted net costs over discounted served energy, CHF/kWh. Year 0
/// is included so that the initial investment counts; revenues (feed-in,
/// internal sales) offset the grid cost.
pub fn lcoe(ledger: &CashflowLedger, rate: f64) -> Result<f64> {
    ledger.validate()?;
    let mut cost = 0.0;
    let mut energy = 0.0;
    for t in 0..ledger.costs.len() {
        let d = discount_factor(rate, t);
        cost += (ledger.costs[t] - ledger.revenues[t]) * d;
        energy += ledger.energy_mwh[t] * 1000.0 * d;
    }
    if energy == 0.0 {
        return Err(FinanceError::ZeroEnergy);
    }
    Ok(cost / energy)
}

/// NPV of the savings of `scenario` against `baseline`, each taken as
/// costs net of revenues.
pub fn profit(baseline: &CashflowLedger, scenario: &CashflowLedger, rate: f64) -> Result<f64> {
    baseline.validate()?;
    scenario.validate()?;
    if baseline.horizon() != scenario.horizon() {
        return Err(FinanceError::HorizonMismatch(baseline.horizon(), scenario.horizon()));
    }
    let b = baseline.net_costs();
    let s = scenario.net_costs();
    let diff: Vec<f64> = b.iter().zip(&s).map(|(x, y)| x - y).collect();
    Ok(npv(&diff, rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irr {
    pub rate: f64,
    /// More than one root was found in the bracket; `rate` is the smallest.
    pub multiple_roots: bool,
}

pub const IRR_LOW: f64 = -0.99;
pub const IRR_HIGH: f64 = 1.0;
const IRR_SCAN: usize = 4000;

/// Rate at which `npv(flows) = 0`, by a scan of (−0.99, 1.0) followed by
/// bisection of the first bracket to 1e-12.
pub fn irr(flows: &[f64]) -> Result<Irr> {
    let pos = flows.iter().any(|&x| x > 0.0);
    let neg = flows.iter().any(|&x| x < 0.0);
    if !(pos && neg) {
        return Err(FinanceError::NoSignChange);
    }
    let f = |r: f64| npv(flows, r);
    let grid: Vec<f64> = (0..=IRR_SCAN)
        .map(|k| IRR_LOW + (IRR_HIGH - IRR_LOW) * k as f64 / IRR_SCAN as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&r| f(r)).collect();
    let mut brackets = Vec::new();
    for k in 0..IRR_SCAN {
        let (a, b) = (values[k], values[k + 1]);
        if a == 0.0 {
            brackets.push((grid[k], grid[k]));
        } else if a.signum() != b.signum() && b != 0.0 {
            brackets.push((grid[k], grid[k + 1]));
        }
    }
    if values[IRR_SCAN] == 0.0 {
        brackets.push((grid[IRR_SCAN], grid[IRR_SCAN]));
    }
    let &(mut lo, mut hi) = brackets.first().ok_or(FinanceError::NoRootInBracket)?;
    if lo != hi {
        let mut flo = f(lo);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
    }
    Ok(Irr {
        rate: 0.5 * (lo + hi),
        multiple_roots: brackets.len() > 1,
    })
}

/// Years until the discounted cumulative net flow turns non-negative,
/// interpolated within the year; `None` if it never does.
pub fn discounted_payback(flows: &[f64], rate: f64) -> Option<f64> {
    let mut cum = 0.0;
    for (t, x) in flows.iter().enumerate() {
        let d = x * discount_factor(rate, t);
        let next = cum + d;
        if next >= 0.0 && t > 0 && cum < 0.0 {
            return Some((t - 1) as f64 + (-cum) / d);
        }
        if next >= 0.0 && t == 0 && d >= 0.0 {
            return Some(0.0);
        }
        cum = next;
    }
    None
}

/// `C_power + C_energy`, CHF/yr.
pub fn total_cost(power_charges: f64, energy_charges: f64) -> f64 {
    power_charges + energy_charges
}

/// Yearly bill components in CHF. The first three are charges for energy
/// drawn from the grid at the external tariff; the `_cel` ones for energy
/// bought inside the community at the internal tariff.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BillBreakdown {
    pub energy: f64,
    pub tax: f64,
    pub grid: f64,
    pub energy_cel: f64,
    pub tax_cel: f64,
    pub grid_cel: f64,
}

impl BillBreakdown {
    pub fn external(&self) -> f64 {
        self.energy + self.tax + self.grid
    }

    pub fn internal(&self) -> f64 {
        self.energy_cel + self.tax_cel + self.grid_cel
    }

    pub fn total(&self) -> f64 {
        self.external() + self.internal()
    }

    pub fn add(&mut self, other: &BillBreakdown) {
        self.energy += other.energy;
        self.tax += other.tax;
        self.grid += other.grid;
        self.energy_cel += other.energy_cel;
        self.tax_cel += other.tax_cel;
        self.grid_cel += other.grid_cel;
    }

    fn add_external(&mut self, kwh: f64, d: &Decomposition) {
        self.energy += kwh * d.energy / 100.0;
        self.grid += kwh * d.grid / 100.0;
        self.tax += kwh * d.tax / 100.0;
    }

    fn add_internal(&mut self, kwh: f64, d: &Decomposition) {
        self.energy_cel += kwh * d.energy / 100.0;
        self.grid_cel += kwh * d.grid / 100.0;
        self.tax_cel += kwh * d.tax / 100.0;
    }
}

/// DSO revenue that disappears when the community forms: the baseline
/// bill minus what is still paid to the DSO, i.e. everything except the
/// internally traded energy component.
pub fn revenue_loss(no_cel: &BillBreakdown, cel: &BillBreakdown) -> f64 {
    no_cel.total() - (cel.total() - cel.energy_cel)
}

/// Splits `total` among participants in proportion to some key. Shares
/// must sum to `total`.
pub trait RepartitionKey: Sync {
    fn allocate(&self, total: f64, volumes: &[f64], out: &mut [f64]);
}

/// Shares proportional to each participant's offered volume. The last
/// participant with a positive volume takes the remainder so the shares
/// add up exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProRata;

impl RepartitionKey for ProRata {
    fn allocate(&self, total: f64, volumes: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let sum: f64 = volumes.iter().sum();
        if total <= 0.0 || sum <= 0.0 {
            return;
        }
        let last = volumes.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        let mut given = 0.0;
        for (k, &v) in volumes.iter().enumerate() {
            if k == last {
                out[k] = total - given;
                break;
            }
            if v > 0.0 {
                out[k] = total * v / sum;
                given += out[k];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExporterRemuneration {
    /// Sellers receive the energy component of the internal price.
    #[default]
    InternalEnergy,
    /// Sellers receive the feed-in rate; the difference to the energy
    /// component stays with the community operator.
    FeedIn,
}

/// Grid-side flows of one settlement participant, kW per step.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberFlows {
    pub id: String,
    pub axis: TimeAxis,
    pub import_kw: Vec<f64>,
    pub export_kw: Vec<f64>,
}

impl MemberFlows {
    /// Splits a net consumption series (positive = import).
    pub fn from_net(id: impl Into<String>, axis: TimeAxis, net_kw: &[f64]) -> Self {
        Self {
            id: id.into(),
            axis,
            import_kw: net_kw.iter().map(|x| x.max(0.0)).collect(),
            export_kw: net_kw.iter().map(|x| (-x).max(0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSettlement {
    pub id: String,
    pub internal_import_kwh: f64,
    pub internal_export_kwh: f64,
    pub grid_import_kwh: f64,
    pub grid_export_kwh: f64,
    pub bill: BillBreakdown,
    /// Paid by the community for energy sold internally.
    pub internal_receipts: f64,
    /// Paid by the DSO for residual exports.
    pub feed_in_revenue: f64,
}

impl MemberSettlement {
    /// Bill minus everything the member is paid.
    pub fn net_cost(&self) -> f64 {
        self.bill.total() - self.internal_receipts - self.feed_in_revenue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSettlement {
    /// Energy traded inside the community per step, kWh.
    pub exchange_kwh: Vec<f64>,
    pub members: Vec<MemberSettlement>,
    /// Σ internal purchases at the internal price.
    pub internal_payments: f64,
    pub internal_receipts: f64,
    /// Grid and tax parts of internal purchases, passed to the DSO.
    pub dso_retained: f64,
    pub operator_margin: f64,
}

impl ExchangeSettlement {
    pub fn total_exchange_kwh(&self) -> f64 {
        self.exchange_kwh.iter().sum()
    }

    pub fn total_bill(&self) -> BillBreakdown {
        let mut b = BillBreakdown::default();
        for m in &self.members {
            b.add(&m.bill);
        }
        b
    }

    /// Payments minus receipts, DSO share and operator margin.
    pub fn conservation_residual(&self) -> f64 {
        self.internal_payments - self.internal_receipts - self.dso_retained - self.operator_margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SettlementOptions {
    pub remuneration: ExporterRemuneration,
    /// Settle everything at the external tariff (no community).
    pub standalone: bool,
}

/// Matches simultaneous surpluses and deficits inside the community step
/// by step: `exchange_t = min(Σ surplus_t, Σ deficit_t)`, split with `key`.
/// Internal buyers pay `internal`; residual imports pay `external`;
/// residual exports earn the external feed-in rate.
pub fn settle_exchange(
    members: &[MemberFlows],
    external: &TariffSchedule,
    internal: &TariffSchedule,
    ghi: Option<&Profile>,
    key: &dyn RepartitionKey,
    options: SettlementOptions,
) -> Result<ExchangeSettlement> {
    let Some(first) = members.first() else {
        return Ok(ExchangeSettlement {
            exchange_kwh: Vec::new(),
            members: Vec::new(),
            internal_payments: 0.0,
            internal_receipts: 0.0,
            dso_retained: 0.0,
            operator_margin: 0.0,
        });
    };
    let axis = first.axis;
    for m in members {
        if m.axis != axis || m.import_kw.len() != axis.len() || m.export_kw.len() != axis.len() {
            return Err(FinanceError::AxisMismatch(m.id.clone()));
        }
    }
    let ext = external.decomposition_series(&axis, ghi)?;
    let int = if options.standalone {
        Vec::new()
    } else {
        internal.decomposition_series(&axis, ghi)?
    };
    let feed_in = external.price_export() / 100.0;
    let dt = axis.step_hours();
    let n = members.len();
    let mut out: Vec<MemberSettlement> = members
        .iter()
        .map(|m| MemberSettlement {
            id: m.id.clone(),
            internal_import_kwh: 0.0,
            internal_export_kwh: 0.0,
            grid_import_kwh: 0.0,
            grid_export_kwh: 0.0,
            bill: BillBreakdown::default(),
            internal_receipts: 0.0,
            feed_in_revenue: 0.0,
        })
        .collect();
    let mut exchange = vec![0.0; axis.len()];
    let (mut deficit, mut surplus) = (vec![0.0; n], vec![0.0; n]);
    let (mut buy, mut sell) = (vec![0.0; n], vec![0.0; n]);
    let mut receipts = 0.0;
    for t in 0..axis.len() {
        for (k, m) in members.iter().enumerate() {
            deficit[k] = m.import_kw[t] * dt;
            surplus[k] = m.export_kw[t] * dt;
        }
        let x = if options.standalone {
            0.0
        } else {
            deficit.iter().sum::<f64>().min(surplus.iter().sum())
        };
        exchange[t] = x;
        key.allocate(x, &deficit, &mut buy);
        key.allocate(x, &surplus, &mut sell);
        for k in 0..n {
            let o = &mut out[k];
            let grid_in = deficit[k] - buy[k];
            let grid_out = surplus[k] - sell[k];
            o.grid_import_kwh += grid_in;
            o.grid_export_kwh += grid_out;
            o.bill.add_external(grid_in, &ext[t]);
            o.feed_in_revenue += grid_out * feed_in;
            if x > 0.0 {
                o.internal_import_kwh += buy[k];
                o.internal_export_kwh += sell[k];
                o.bill.add_internal(buy[k], &int[t]);
                let rate = match options.remuneration {
                    ExporterRemuneration::InternalEnergy => int[t].energy / 100.0,
                    ExporterRemuneration::FeedIn => feed_in,
                };
                o.internal_receipts += sell[k] * rate;
                receipts += sell[k] * rate;
            }
        }
    }
    let total = out.iter().fold(BillBreakdown::default(), |mut b, m| {
        b.add(&m.bill);
        b
    });
    let payments = total.internal();
    let dso = total.grid_cel + total.tax_cel;
    Ok(ExchangeSettlement {
        exchange_kwh: exchange,
        members: out,
        internal_payments: payments,
        internal_receipts: receipts,
        dso_retained: dso,
        operator_margin: total.energy_cel - receipts,
    })
}

/// Bill of a consumer buying everything from the grid at `external`.
pub fn standalone_bill(
    import_kw: &[f64],
    axis: &TimeAxis,
    external: &TariffSchedule,
    ghi: Option<&Profile>,
) -> Result<BillBreakdown> {
    if import_kw.len() != axis.len() {
        return Err(FinanceError::AxisMismatch("standalone".into()));
    }
    let ext = external.decomposition_series(axis, ghi)?;
    let dt = axis.step_hours();
    let mut b = BillBreakdown::default();
    for (t, p) in import_kw.iter().enumerate() {
        b.add_external(p * dt, &ext[t]);
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn axis(n: usize) -> TimeAxis {
        let start = NaiveDate::from_ymd_opt(2025, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap();
        TimeAxis::span(start, 15, n).unwrap()
    }

    #[test]
    fn lcoe_examples() {
        let l = CashflowLedger::constant(10, 100.0, 100.0, 0.0, 1.0, &[]);
        let mut flat = l.clone();
        flat.costs[0] = 0.0;
        assert!((lcoe(&flat, 0.0).unwrap() - 0.10).abs() < 1e-15);
        let mut one = CashflowLedger::zeros(1);
        one.costs[1] = 230.0;
        one.energy_mwh[1] = 2.0;
        assert!((lcoe(&one, 0.03).unwrap() - 0.115).abs() < 1e-15);
        assert!(matches!(lcoe(&CashflowLedger::zeros(3), 0.03), Err(FinanceError::ZeroEnergy)));
    }

    #[test]
    fn profit_examples() {
        let b = CashflowLedger::constant(25, 0.0, 1000.0, 0.0, 1.0, &[]);
        let s = CashflowLedger::constant(25, 0.0, 900.0, 0.0, 1.0, &[]);
        assert_eq!(profit(&b, &s, 0.0).unwrap(), 2500.0);
        assert_eq!(profit(&b, &b, 0.03).unwrap(), 0.0);
        assert!(matches!(
            profit(&b, &CashflowLedger::zeros(3), 0.0),
            Err(FinanceError::HorizonMismatch(25, 3))
        ));
    }

    #[test]
    fn irr_examples() {
        assert!((irr(&[-100.0, 110.0]).unwrap().rate - 0.10).abs() < 1e-9);
        assert!((irr(&[-100.0, 0.0, 121.0]).unwrap().rate - 0.10).abs() < 1e-9);
        // x = 1 + r solves 100x² − 60x − 60 = 0
        let x = (60.0 + (3600.0f64 + 24000.0).sqrt()) / 200.0;
        assert!((irr(&[-100.0, 60.0, 60.0]).unwrap().rate - (x - 1.0)).abs() < 1e-9);
        assert!((x - 1.0 - 0.13066).abs() < 1e-5);
        assert!(matches!(irr(&[100.0, 10.0]), Err(FinanceError::NoSignChange)));
    }

    #[test]
    fn irr_multiple_roots_flagged() {
        // roots at 10% and 20%: (1.1 − x)(1.2 − x) scaled
        let flows = [-1.0, 2.3, -1.32];
        let r = irr(&flows).unwrap();
        assert!(r.multiple_roots);
        assert!((r.rate - 0.10).abs() < 1e-9);
    }

    #[test]
    fn payback() {
        assert_eq!(discounted_payback(&[-100.0, 50.0, 50.0, 50.0], 0.0), Some(2.0));
        assert_eq!(discounted_payback(&[-100.0, 10.0], 0.0), None);
        let p = discounted_payback(&[-100.0, 60.0, 60.0], 0.0).unwrap();
        assert!((p - (1.0 + 40.0 / 60.0)).abs() < 1e-12);
    }

    #[test]
    fn producer_and_consumer_one_step() {
        let a = axis(1);
        let members = [
            MemberFlows::from_net("p", a, &[-1.0]),
            MemberFlows::from_net("c", a, &[1.0]),
        ];
        let s = settle_exchange(
            &members,
            &TariffSchedule::external_double_2025(),
            &TariffSchedule::internal_double_2025(),
            None,
            &ProRata,
            SettlementOptions::default(),
        )
        .unwrap();
        assert_eq!(s.exchange_kwh, vec![0.25]);
        assert_eq!(s.members[1].internal_import_kwh, 0.25);
        assert_eq!(s.members[0].grid_export_kwh, 0.0);
        // 2025-01-06 00:00 is off-peak: 20.91 ct
        assert!((s.members[1].bill.internal() - 0.25 * 0.2091).abs() < 1e-12);
        assert!(s.conservation_residual().abs() < 1e-12);
    }

    #[test]
    fn all_importers_pay_external_only() {
        let a = axis(4);
        let members = [
            MemberFlows::from_net("a", a, &[1.0, 2.0, 0.5, 0.0]),
            MemberFlows::from_net("b", a, &[0.3, 0.0, 0.5, 1.0]),
        ];
        let ext = TariffSchedule::external_double_2025();
        let s = settle_exchange(&members, &ext, &TariffSchedule::internal_double_2025(), None, &ProRata, SettlementOptions::default()).unwrap();
        assert_eq!(s.total_exchange_kwh(), 0.0);
        for (m, f) in s.members.iter().zip(&members) {
            assert_eq!(m.bill.internal(), 0.0);
            let alone = standalone_bill(&f.import_kw, &a, &ext, None).unwrap();
            assert!((m.bill.external() - alone.external()).abs() < 1e-12);
            assert_eq!(revenue_loss(&alone, &m.bill), 0.0);
        }
    }

    #[test]
    fn revenue_loss_expansion() {
        let no = BillBreakdown { energy: 500.0, tax: 50.0, grid: 300.0, ..Default::default() };
        let cel = BillBreakdown {
            energy: 400.0,
            tax: 40.0,
            grid: 240.0,
            energy_cel: 80.0,
            tax_cel: 10.0,
            grid_cel: 90.0,
        };
        // (500+50+300) − (400+40+240+10+90)
        assert!((revenue_loss(&no, &cel) - 70.0).abs() < 1e-12);
    }

    #[test]
    fn feed_in_remuneration_books_margin() {
        let a = axis(1);
        let members = [MemberFlows::from_net("p", a, &[-2.0]), MemberFlows::from_net("c", a, &[2.0])];
        let opts = SettlementOptions { remuneration: ExporterRemuneration::FeedIn, standalone: false };
        let s = settle_exchange(&members, &TariffSchedule::external_double_2025(), &TariffSchedule::internal_double_2025(), None, &ProRata, opts).unwrap();
        assert!((s.members[0].internal_receipts - 0.5 * 0.115).abs() < 1e-12);
        assert!(s.conservation_residual().abs() < 1e-12);
        assert!(s.operator_margin != 0.0);
    }

    proptest! {
        #[test]
        fn pro_rata_sums_exactly(vols in proptest::collection::vec(0.0f64..10.0, 1..8), frac in 0.0f64..1.0) {
            let total = vols.iter().sum::<f64>() * frac;
            let mut out = vec![0.0; vols.len()];
            ProRata.allocate(total, &vols, &mut out);
            let s: f64 = out.iter().sum();
            prop_assert!((s - total).abs() <= 1e-12 * total.max(1.0));
            for (o, v) in out.iter().zip(&vols) {
                if *v == 0.0 { prop_assert_eq!(*o, 0.0); }
            }
        }

        #[test]
        fn irr_zeroes_npv(c0 in 10.0f64..1000.0, flows in proptest::collection::vec(1.0f64..300.0, 1..30)) {
            let mut f = vec![-c0];
            f.extend(flows);
            if let Ok(r) = irr(&f) {
                prop_assert!(npv(&f, r.rate).abs() <= 1e-6 * c0);
            }
        }
    }
}
