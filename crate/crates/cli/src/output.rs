//! CSV and JSON writers. Floats use the shortest round-trip form so that
//! reruns are byte-identical.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use celsim_core::scenario::{KpiReport, ScenarioOutcome, SweepPoint};
use serde::Serialize;

/// Frozen column set of `summary.csv`.
pub const SUMMARY_COLUMNS: &[&str] = &[
    "scenario_id",
    "community",
    "members",
    "pv_buildings",
    "pv_kwp",
    "battery_kwh",
    "battery_bus",
    "internal_tariff",
    "extra_actor",
    "load_mwh",
    "pv_mwh",
    "exchange_mwh",
    "grid_import_mwh",
    "grid_export_mwh",
    "self_sufficiency",
    "totex_chf",
    "opex_chf",
    "capex_chf",
    "lcoe_chf_per_kwh",
    "irr",
    "irr_multiple",
    "profit_chf",
    "dpp_years",
    "bill_no_cel_chf",
    "bill_cel_chf",
    "revenue_loss_chf",
    "revenue_loss_pct",
    "max_feed_in_kw",
    "max_drawn_kw",
    "cel_max_feed_in_kw",
    "cel_max_drawn_kw",
    "transformer_voltage_dev_pu",
    "max_line_loading_pct",
    "min_voltage_pu",
    "max_voltage_pu",
    "losses_mwh",
];

fn num(x: f64) -> String {
    if x.is_finite() {
        // + 0.0 folds -0.0 into 0.0
        format!("{}", x + 0.0)
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

pub fn summary_row(r: &KpiReport) -> Vec<String> {
    let s = &r.scenario;
    let e = &r.energy;
    let f = &r.finance;
    let b = &r.bills;
    let n = &r.network;
    vec![
        s.id.clone(),
        s.community.to_string(),
        r.members.len().to_string(),
        r.pv_buildings.len().to_string(),
        num(r.pv_kwp),
        num(r.battery_kwh),
        r.battery_bus.clone().unwrap_or_default(),
        tag(&s.internal_tariff),
        tag(&s.extra_actor),
        num(e.load_mwh),
        num(e.pv_mwh),
        num(e.exchange_mwh),
        num(e.grid_import_mwh),
        num(e.grid_export_mwh),
        num(e.self_sufficiency),
        num(f.cost.totex),
        num(f.cost.opex),
        num(f.cost.capex),
        opt(f.lcoe_chf_per_kwh),
        opt(f.irr),
        f.irr_multiple_roots.to_string(),
        num(f.profit_chf),
        opt(f.discounted_payback_years),
        num(b.no_cel.total()),
        num(b.cel.total()),
        num(b.revenue_loss_chf),
        num(100.0 * b.revenue_loss_share),
        num(n.max_feed_in_kw),
        num(n.max_drawn_kw),
        num(n.cel_max_feed_in_kw),
        num(n.cel_max_drawn_kw),
        num(n.transformer_voltage_dev_pu),
        num(n.max_line_loading_pct),
        num(n.min_voltage_pu),
        num(n.max_voltage_pu),
        num(n.losses_mwh),
    ]
}

fn csv_file(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_summary(path: &Path, reports: &[KpiReport]) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in reports {
        w.write_record(summary_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes kpi.json, bills.csv, flows.csv and voltages.csv into `dir`.
pub fn write_scenario(dir: &Path, o: &ScenarioOutcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let r = &o.report;
    let mut json = serde_json::to_string_pretty(r)?;
    json.push('\n');
    fs::write(dir.join("kpi.json"), json)?;

    let mut w = csv_file(&dir.join("bills.csv"))?;
    w.write_record([
        "participant",
        "grid_import_kwh",
        "grid_export_kwh",
        "internal_import_kwh",
        "internal_export_kwh",
        "energy_chf",
        "tax_chf",
        "grid_chf",
        "energy_cel_chf",
        "tax_cel_chf",
        "grid_cel_chf",
        "bill_cel_chf",
        "bill_no_cel_chf",
        "internal_receipts_chf",
        "feed_in_revenue_chf",
        "net_cost_chf",
    ])?;
    for (m, base) in o.settlement.members.iter().zip(&o.no_cel_settlement.members) {
        let b = &m.bill;
        w.write_record([
            m.id.clone(),
            num(m.grid_import_kwh),
            num(m.grid_export_kwh),
            num(m.internal_import_kwh),
            num(m.internal_export_kwh),
            num(b.energy),
            num(b.tax),
            num(b.grid),
            num(b.energy_cel),
            num(b.tax_cel),
            num(b.grid_cel),
            num(b.total()),
            num(base.bill.total()),
            num(m.internal_receipts),
            num(m.feed_in_revenue),
            num(m.net_cost()),
        ])?;
    }
    w.flush()?;

    let mut w = csv_file(&dir.join("flows.csv"))?;
    w.write_record(["line_id", "rated_a", "max_loading_pct", "median_loading_pct"])?;
    for l in &r.network.lines {
        w.write_record([l.line_id.clone(), num(l.rated_a), num(l.max_loading_pct), num(l.median_loading_pct)])?;
    }
    w.flush()?;

    let mut w = csv_file(&dir.join("voltages.csv"))?;
    w.write_record([
        "bus",
        "over_p95_pu",
        "under_p95_pu",
        "over_count",
        "under_count",
        "min_pu",
        "q1_pu",
        "median_pu",
        "q3_pu",
        "max_pu",
    ])?;
    for v in r.bus_voltages() {
        let d = v.distribution;
        w.write_record([
            v.bus.clone(),
            opt(v.over_p95),
            opt(v.under_p95),
            v.over_count.to_string(),
            v.under_count.to_string(),
            opt(d.map(|d| d.min)),
            opt(d.map(|d| d.q1)),
            opt(d.map(|d| d.median)),
            opt(d.map(|d| d.q3)),
            opt(d.map(|d| d.max)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut w = csv_file(path)?;
    w.write_record(["pv_buildings", "pv_mwh", "load_mwh", "ratio", "exchange_mwh", "battery_kwh"])?;
    for p in points {
        w.write_record([
            p.pv_buildings.to_string(),
            num(p.pv_mwh),
            num(p.load_mwh),
            num(p.ratio),
            num(p.exchange_mwh),
            num(p.battery_kwh),
        ])?;
    }
    w.flush()?;
    Ok(())
}
