use celsim_core::dispatch::{
    optimize_dispatch, BatteryDesign, DispatchOptions, EconomicParams, PriceSeries,
};
use celsim_core::tariff::TariffSchedule;
use celsim_core::timeseries::{
    pv_production, synthesize_load, synthesize_meteo, Archetype, Profile, PvDesign, TimeAxis, Unit,
};
use chrono::NaiveDate;
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct LP formulation solved by a general simplex code.
#[allow(clippy::too_many_arguments)]
fn lp_reference(
    load: &[f64],
    pv: &[f64],
    b: &BatteryDesign,
    pi: &[f64],
    pe: &[f64],
    dt: f64,
    cc: f64,
    cd: f64,
) -> f64 {
    let n = load.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let big = 1e6;
    let cap = b.capacity_kwh;
    let mut e_prev = lp.add_var(0.0, (b.soc_initial * cap, b.soc_initial * cap));
    for t in 0..n {
        let imp = lp.add_var(pi[t] * dt, (0.0, big));
        let exp = lp.add_var(-pe[t] * dt, (0.0, big));
        let ch = lp.add_var(cc * dt, (0.0, b.p_charge_kw));
        let dis = lp.add_var(cd * dt, (0.0, b.p_discharge_kw));
        let lo = if t + 1 == n { b.soc_initial * cap } else { b.soc_min * cap };
        let e = lp.add_var(0.0, (lo, b.soc_max * cap));
        lp.add_constraint(
            [(imp, 1.0), (exp, -1.0), (ch, -1.0), (dis, 1.0)],
            ComparisonOp::Eq,
            load[t] - pv[t],
        );
        lp.add_constraint(
            [
                (e, 1.0),
                (e_prev, -1.0),
                (ch, -b.eta_charge * dt),
                (dis, dt / b.eta_discharge),
            ],
            ComparisonOp::Eq,
            0.0,
        );
        e_prev = e;
    }
    lp.solve().expect("reference LP solves").objective()
}

fn axis(n: usize, step: u32) -> TimeAxis {
    let start = NaiveDate::from_ymd_opt(2025, 3, 3).unwrap().and_hms_opt(0, 0, 0).unwrap();
    TimeAxis::span(start, step, n).unwrap()
}

#[test]
fn agrees_with_simplex_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..25 {
        let n = rng.gen_range(4..40);
        let a = axis(n, 15);
        let load: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        let pv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.4)).collect();
        let pe: Vec<f64> = pi.iter().map(|p| p * rng.gen_range(0.0..1.0)).collect();
        let cap = rng.gen_range(0.0..6.0);
        let mut b = BatteryDesign::with_capacity(cap);
        b.eta_charge = rng.gen_range(0.85..1.0);
        b.eta_discharge = rng.gen_range(0.85..1.0);
        b.soc_initial = rng.gen_range(0.0..0.5);
        b.soc_min = b.soc_initial * 0.5;
        b.soc_max = 0.95;
        let econ = EconomicParams {
            battery_charge_chf_per_kwh: rng.gen_range(0.0..0.02),
            battery_discharge_chf_per_kwh: rng.gen_range(0.0..0.02),
            ..EconomicParams::default()
        };
        let prices = PriceSeries::new(a, pi.clone(), pe.clone()).unwrap();
        let out = optimize_dispatch(
            &Profile::new(a, Unit::Kw, load.clone()).unwrap(),
            &Profile::new(a, Unit::Kw, pv.clone()).unwrap(),
            &b,
            &prices,
            &econ,
            DispatchOptions::default(),
        )
        .unwrap();
        let reference = lp_reference(
            &load,
            &pv,
            &b,
            &pi,
            &pe,
            0.25,
            econ.battery_charge_chf_per_kwh,
            econ.battery_discharge_chf_per_kwh,
        );
        let got = out.operating_cost();
        assert!(
            (got - reference).abs() <= 1e-6 * reference.abs().max(1.0),
            "case {case}: {got} vs {reference}"
        );
        assert!(out.plan.max_balance_residual() < 1e-9);
        assert!(out.plan.max_soc_residual() < 1e-9);
    }
}

#[test]
fn full_year_dynamic_tariff() {
    let a = TimeAxis::year(2025, 15).unwrap();
    let meteo = synthesize_meteo(&a, 46.5, 5);
    let load = synthesize_load(&a, 4.5, Archetype::Residential, 5).unwrap();
    let pv = pv_production(&PvDesign::freestanding(20, Default::default()), &meteo.ghi, &meteo.temperature).unwrap();
    let schedule = TariffSchedule::internal_dynamic_2025();
    let prices = PriceSeries::from_tariff(&a, &schedule, Some(&meteo.ghi)).unwrap();
    let b = BatteryDesign::with_capacity(10.0);
    let econ = EconomicParams::default();
    let out = optimize_dispatch(&load, &pv, &b, &prices, &econ, DispatchOptions::default()).unwrap();
    assert!(out.relative_gap() < 1e-6);
    assert!(out.plan.max_balance_residual() < 1e-6);
    assert!(out.plan.max_soc_residual() < 1e-6);
    let idle = optimize_dispatch(&load, &pv, &BatteryDesign::none(), &prices, &econ, DispatchOptions::default()).unwrap();
    assert!(out.grid_cost <= idle.grid_cost + 1e-9);
}

#[test]
fn higher_import_prices_never_lower_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = 96;
        let a = axis(n, 15);
        let load = Profile::new(a, Unit::Kw, (0..n).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let pv = Profile::new(a, Unit::Kw, (0..n).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.4)).collect();
        let bump: Vec<f64> = pi.iter().map(|p| p + rng.gen_range(0.0..0.05)).collect();
        let pe = vec![0.115; n];
        let b = BatteryDesign::with_capacity(5.0);
        let econ = EconomicParams::default();
        let c1 = optimize_dispatch(&load, &pv, &b, &PriceSeries::new(a, pi, pe.clone()).unwrap(), &econ, DispatchOptions::default()).unwrap();
        let c2 = optimize_dispatch(&load, &pv, &b, &PriceSeries::new(a, bump, pe).unwrap(), &econ, DispatchOptions::default()).unwrap();
        assert!(c2.grid_cost >= c1.grid_cost - 1e-9);
    }
}
