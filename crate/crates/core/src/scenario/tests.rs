use super::*;
use crate::powerflow::{BusSpec, LineSpec, NetworkSpec, TransformerSpec};
use crate::timeseries::Archetype;
use std::collections::BTreeMap;

/// Chain T - a - b - c with four buildings, hourly resolution.
fn chain(dir: &std::path::Path) -> Dataset {
    let bus = |id: &str| BusSpec { id: id.into() };
    let line = |id: &str, from: &str, to: &str, r: f64| LineSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length_m: 50.0,
        r1_ohm: r,
        x1_ohm: r / 10.0,
        rated_a: 120.0,
    };
    let net = NetworkSpec {
        buses: vec![bus("T"), bus("a"), bus("b"), bus("c")],
        lines: vec![line("l1", "T", "a", 0.02), line("l2", "a", "b", 0.03), line("l3", "b", "c", 0.04)],
        transformer: TransformerSpec::default(),
        slack_bus: Some("T".into()),
        buildings: BTreeMap::new(),
    };
    std::fs::write(dir.join("net.json"), serde_json::to_string(&net).unwrap()).unwrap();
    let b = |id: &str, bus: &str, mwh: f64, roof: f64, seed: u64| BuildingSpec {
        id: id.into(),
        bus: Some(bus.into()),
        annual_mwh: mwh,
        archetype: Archetype::Residential,
        roof_area_m2: roof,
        seed: Some(seed),
        load_csv: None,
    };
    let spec = DatasetSpec {
        name: "chain".into(),
        year: 2025,
        step_minutes: 60,
        latitude_deg: 46.5,
        meteo_seed: 3,
        ghi_csv: None,
        temperature_csv: None,
        network: "net.json".into(),
        tariffs: None,
        buildings: vec![
            b("near", "a", 8.0, 60.0, 1),
            b("mid", "b", 5.0, 40.0, 2),
            b("far", "c", 4.0, 80.0, 3),
            b("flat", "b", 3.0, 0.0, 4),
        ],
        large_consumer: LargeConsumerSpec::default(),
        large_producer: LargeProducerSpec { modules: 40 },
        economics: Default::default(),
        aging: Default::default(),
        module: Default::default(),
        battery: BatteryDesign::with_capacity(1.0),
    };
    Dataset::from_spec(spec, dir).unwrap()
}

fn dataset() -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let d = chain(dir.path());
    (dir, d)
}

fn ids(d: &Dataset, k: &[usize]) -> Vec<String> {
    k.iter().map(|&i| d.buildings[i].id.clone()).collect()
}

#[test]
fn end_of_line_picks_leaf_first() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("s");
    spec.members = MemberSelection::Fraction(0.5);
    let m = select_members(&d, &spec, 0).unwrap();
    // |Z| grows along the chain; ties on bus b keep file order
    assert_eq!(ids(&d, &m), ["far", "mid"]);
    spec.members = MemberSelection::Fraction(1.0);
    assert_eq!(ids(&d, &select_members(&d, &spec, 0).unwrap()), ["far", "mid", "flat", "near"]);
}

#[test]
fn random_allocation_is_seeded() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("s");
    spec.members = MemberSelection::Fraction(0.75);
    spec.allocation = Allocation::Random { seed: Some(9) };
    let a = select_members(&d, &spec, 0).unwrap();
    let b = select_members(&d, &spec, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    spec.allocation = Allocation::Random { seed: None };
    assert_eq!(select_members(&d, &spec, 5).unwrap(), select_members(&d, &spec, 5).unwrap());
}

#[test]
fn empty_selection_is_an_error() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("s");
    spec.members = MemberSelection::Fraction(0.2);
    assert!(matches!(select_members(&d, &spec, 0), Err(ScenarioError::NoMembers)));
    spec.members = MemberSelection::Ids(vec!["ghost".into()]);
    assert!(select_members(&d, &spec, 0).is_err());
}

#[test]
fn penetration_rounds_down_with_floor_of_one() {
    assert_eq!(pv_count(0.0, 9), 0);
    assert_eq!(pv_count(0.25, 9), 2);
    assert_eq!(pv_count(0.5, 9), 4);
    assert_eq!(pv_count(0.3, 10), 3);
    assert_eq!(pv_count(0.01, 9), 1);
    assert_eq!(pv_count(1.0, 32), 32);
}

#[test]
fn pv_goes_to_lowest_ratio_roofs() {
    let (_dir, d) = dataset();
    let all: Vec<usize> = (0..4).collect();
    let chosen = select_pv(&d, &all, 1.0);
    assert_eq!(chosen.len(), 3, "the roofless building is skipped");
    let ratios: Vec<f64> = chosen.iter().map(|&k| d.pv_potential_ratio(&d.buildings[k])).collect();
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(ids(&d, &select_pv(&d, &all, 0.25)), ids(&d, &chosen[..1]));
}

#[test]
fn spec_json_forms() {
    let s: ScenarioSpec = serde_json::from_str(
        r#"{"id":"x","members":{"fraction":0.6},"allocation":{"random":{"seed":4}},
            "pv_penetration":0.5,"battery":{"central":{"placement":"down"}},
            "internal_tariff":"dynamic","extra_actor":"large_producer"}"#,
    )
    .unwrap();
    assert_eq!(s.members, MemberSelection::Fraction(0.6));
    assert_eq!(s.allocation, Allocation::Random { seed: Some(4) });
    assert_eq!(s.battery, BatteryOption::Central { placement: Placement::Down });
    let t: ScenarioSpec = serde_json::from_str(r#"{"id":"y","allocation":"end_of_line","members":{"ids":["a"]}}"#).unwrap();
    assert!(t.community);
    assert_eq!(t.pv_mode, SizingMode::MaxPv);
    assert!(serde_json::from_str::<ScenarioSpec>(r#"{"id":"z","typo":1}"#).is_err());
    let mut bad = ScenarioSpec::new("b");
    bad.community = false;
    bad.battery = BatteryOption::Central { placement: Placement::Up };
    assert!(bad.validate().is_err());
    assert!(ScenarioSpec::new("../up").validate().is_err());
}

#[test]
fn status_quo_has_no_exchange_or_loss() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("base");
    spec.community = false;
    let o = run_scenario(&d, &spec, 0).unwrap();
    let r = &o.report;
    assert_eq!(r.energy.exchange_mwh, 0.0);
    assert_eq!(r.bills.revenue_loss_chf, 0.0);
    assert_eq!(r.finance.profit_chf, 0.0);
    assert_eq!(r.finance.irr, None);
    assert_eq!(r.pv_kwp, 0.0);
    // a community without PV has nothing to trade either
    spec.community = true;
    let o = run_scenario(&d, &spec, 0).unwrap();
    assert_eq!(o.report.energy.exchange_mwh, 0.0);
    assert_eq!(o.report.bills.revenue_loss_chf, 0.0);
}

#[test]
fn single_member_never_exchanges() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("one");
    spec.members = MemberSelection::Ids(vec!["far".into()]);
    spec.pv_penetration = 1.0;
    let o = run_scenario(&d, &spec, 0).unwrap();
    assert_eq!(o.report.energy.exchange_mwh, 0.0);
    assert!(o.report.pv_kwp > 0.0);
}

#[test]
fn internal_tariff_leaves_physics_untouched() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("t");
    spec.pv_penetration = 0.5;
    spec.battery = BatteryOption::Central { placement: Placement::Down };
    let a = run_scenario(&d, &spec, 0).unwrap();
    spec.internal_tariff = InternalTariff::Dynamic;
    let b = run_scenario(&d, &spec, 0).unwrap();
    assert_eq!(a.plans, b.plans);
    assert_eq!(a.flows, b.flows);
    assert_eq!(a.settlement.exchange_kwh, b.settlement.exchange_kwh);
    assert_ne!(a.report.bills.cel, b.report.bills.cel);
}

#[test]
fn central_battery_does_not_raise_totex() {
    let (_dir, mut d) = dataset();
    d.spec.economics.battery_specific_chf_per_kwh = 60.0;
    let mut spec = ScenarioSpec::new("b");
    spec.pv_penetration = 0.5;
    let without = run_scenario(&d, &spec, 0).unwrap();
    spec.battery = BatteryOption::Central { placement: Placement::Up };
    let with = run_scenario(&d, &spec, 0).unwrap();
    assert!(with.report.battery_kwh > 0.0, "cheap storage pays off under the double tariff");
    assert!(with.report.finance.cost.totex <= without.report.finance.cost.totex + 1e-6);
    let biggest = with
        .report
        .members
        .iter()
        .max_by(|x, y| x.pv_kwp.total_cmp(&y.pv_kwp))
        .unwrap();
    assert_eq!(with.report.battery_bus.as_deref(), Some(biggest.bus.as_str()));
}

#[test]
fn settlement_balances_and_flows_close() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("c");
    spec.pv_penetration = 0.5;
    spec.extra_actor = ExtraActor::LargeConsumer;
    let o = run_scenario(&d, &spec, 0).unwrap();
    assert!(o.settlement.conservation_residual().abs() < 1e-9);
    assert!(o.report.energy.exchange_mwh > 0.0);
    // community imports equal the virtual building's plan
    let plan_import = o.plans[0].imported_kwh() / 1000.0;
    assert!((plan_import - o.report.energy.grid_import_mwh).abs() < 1e-6);
    assert!(o.report.network.max_mismatch_pu < 1e-8);
    assert!(o.settlement.members.iter().any(|m| m.id == "large_consumer"));
}

#[test]
fn runs_are_reproducible() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("r");
    spec.members = MemberSelection::Fraction(0.75);
    spec.allocation = Allocation::Random { seed: None };
    spec.pv_penetration = 1.0;
    let a = run_scenario(&d, &spec, 11).unwrap();
    let b = run_scenario(&d, &spec, 11).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
}

#[test]
fn errors_name_the_scenario() {
    let (_dir, d) = dataset();
    let mut spec = ScenarioSpec::new("broken");
    spec.members = MemberSelection::Fraction(0.1);
    let e = run_scenario(&d, &spec, 0).unwrap_err();
    assert!(e.to_string().starts_with("scenario broken:"), "{e}");
}

#[test]
fn sweep_starts_at_zero_and_tracks_ratio() {
    let (_dir, d) = dataset();
    let pts = ratio_sweep(&d, &SweepSpec::default(), 0).unwrap();
    assert_eq!(pts.len(), 4);
    assert_eq!(pts[0].exchange_mwh, 0.0);
    assert_eq!(pts[0].ratio, 0.0);
    assert!(pts.windows(2).all(|w| w[1].ratio > w[0].ratio));
    assert!(pts[1].exchange_mwh > 0.0);
    let one = SweepSpec {
        members: MemberSelection::Ids(vec!["mid".into()]),
        ..SweepSpec::default()
    };
    let pts = ratio_sweep(&d, &one, 0).unwrap();
    assert!(pts.iter().all(|p| p.exchange_mwh == 0.0));
    let roofless = SweepSpec {
        members: MemberSelection::Ids(vec!["flat".into()]),
        ..SweepSpec::default()
    };
    assert!(ratio_sweep(&d, &roofless, 0).is_err());
}

#[test]
fn sweep_with_battery_pools_optima() {
    let (_dir, d) = dataset();
    let spec = SweepSpec {
        battery: true,
        ..SweepSpec::default()
    };
    let pts = ratio_sweep(&d, &spec, 0).unwrap();
    assert_eq!(pts[0].battery_kwh, 0.0);
    assert!(pts.windows(2).all(|w| w[1].battery_kwh >= w[0].battery_kwh));
}
