//! Oracles shared by the integration tests.

use std::collections::BTreeMap;

use celsim_core::powerflow::{BusSpec, LineSpec, NetworkSpec, TransformerSpec};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Full Newton-Raphson in rectangular coordinates on the bus admittance
/// matrix. Node 0 is the MV slack; node k + 1 is bus k. Returns |V| per bus.
pub fn newton(spec: &NetworkSpec, loads_kw: &[f64]) -> Vec<f64> {
    let t = spec.transformer;
    let z_base = t.v_lv_kv.powi(2) * 1000.0 / t.s_kva;
    let idx: BTreeMap<&str, usize> = spec.buses.iter().enumerate().map(|(k, b)| (b.id.as_str(), k + 1)).collect();
    let n = spec.buses.len() + 1;
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut stamp = |a: usize, b: usize, z: Complex64| {
        let yy = Complex64::new(1.0, 0.0) / z;
        y[(a, a)] += yy;
        y[(b, b)] += yy;
        y[(a, b)] -= yy;
        y[(b, a)] -= yy;
    };
    let zt = {
        let z = t.uk_pct / 100.0;
        let r = z / (1.0 + t.xr * t.xr).sqrt();
        Complex64::new(r, r * t.xr)
    };
    let root = spec.slack_bus.as_deref().map(|s| idx[s]).unwrap();
    stamp(0, root, zt);
    for l in &spec.lines {
        stamp(idx[l.from.as_str()], idx[l.to.as_str()], Complex64::new(l.r1_ohm, l.x1_ohm) / z_base);
    }
    let s_spec: Vec<Complex64> = std::iter::once(Complex64::new(0.0, 0.0))
        .chain(loads_kw.iter().map(|p| Complex64::new(-p / t.s_kva, 0.0)))
        .collect();
    let m = n - 1;
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let v: Vec<Complex64> = std::iter::once(Complex64::new(1.0, 0.0))
            .chain((0..m).map(|k| Complex64::new(x[2 * k], x[2 * k + 1])))
            .collect();
        let mut r = DVector::zeros(2 * m);
        for k in 1..n {
            let mut i = Complex64::new(0.0, 0.0);
            for j in 0..n {
                i += y[(k, j)] * v[j];
            }
            let s = v[k] * i.conj() - s_spec[k];
            r[2 * (k - 1)] = s.re;
            r[2 * (k - 1) + 1] = s.im;
        }
        r
    };
    let mut x = DVector::from_fn(2 * m, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
    for _ in 0..50 {
        let f = residual(&x);
        if f.amax() < 1e-14 {
            break;
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for c in 0..2 * m {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (residual(&xp) - residual(&xm)) / (2.0 * h);
            jac.set_column(c, &d);
        }
        let step = jac.lu().solve(&f).expect("nonsingular Jacobian");
        x -= step;
    }
    assert!(residual(&x).amax() < 1e-12, "oracle did not converge");
    (0..m).map(|k| x[2 * k].hypot(x[2 * k + 1])).collect()
}

pub fn spec_from(parents: &[usize], r: &[f64], x: &[f64]) -> NetworkSpec {
    let n = parents.len() + 1;
    NetworkSpec {
        buses: (0..n).map(|k| BusSpec { id: format!("n{k}") }).collect(),
        lines: parents
            .iter()
            .enumerate()
            .map(|(k, &p)| LineSpec {
                id: format!("l{k}"),
                from: format!("n{p}"),
                to: format!("n{}", k + 1),
                length_m: 10.0,
                r1_ohm: r[k],
                x1_ohm: x[k],
                rated_a: 120.0,
            })
            .collect(),
        transformer: TransformerSpec::default(),
        slack_bus: Some("n0".into()),
        buildings: BTreeMap::new(),
    }
}
