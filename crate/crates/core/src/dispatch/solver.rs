//! Exact solver for the single-battery dispatch LP.
//!
//! With one storage state and separable convex stage costs the LP reduces
//! to a dynamic program over stored energy whose value functions are convex
//! piecewise linear. They are kept as a left endpoint, the value there, and
//! a multiset of (slope, length) segments; the stage update is an infimal
//! convolution (merge the segment multisets) followed by clipping to the
//! SoC window. The backward pass recovers one optimal energy trajectory.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{BatteryDesign, DispatchError, Result};

const LEN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slope(f64);

impl Eq for Slope {}

impl PartialOrd for Slope {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Slope {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Convex piecewise-linear function on `[left, left + Σ len]`.
#[derive(Debug, Clone)]
struct Pwl {
    left: f64,
    left_value: f64,
    width: f64,
    segs: BTreeMap<Slope, f64>,
}

impl Pwl {
    fn point(at: f64) -> Self {
        Self {
            left: at,
            left_value: 0.0,
            width: 0.0,
            segs: BTreeMap::new(),
        }
    }

    fn add_stage(&mut self, g: &StageCost) {
        self.left += g.left;
        self.left_value += g.left_value;
        for &(s, l) in &g.segs {
            if l > LEN_EPS {
                *self.segs.entry(Slope(s)).or_insert(0.0) += l;
                self.width += l;
            }
        }
    }

    /// Restricts the domain to `x ≥ bound`. False if the domain is empty.
    fn clip_left(&mut self, bound: f64) -> bool {
        let mut d = bound - self.left;
        if d <= 0.0 {
            return true;
        }
        while d > 0.0 {
            let Some(mut entry) = self.segs.first_entry() else {
                if d > 1e-9 {
                    return false;
                }
                break;
            };
            let s = entry.key().0;
            let l = *entry.get();
            if l <= d + LEN_EPS {
                self.left_value += s * l;
                self.width -= l;
                d -= l;
                entry.remove();
            } else {
                self.left_value += s * d;
                self.width -= d;
                *entry.get_mut() = l - d;
                d = 0.0;
            }
        }
        if self.segs.is_empty() {
            self.width = 0.0;
        }
        self.left = bound;
        true
    }

    /// Restricts the domain to `x ≤ bound`. False if the domain is empty.
    fn clip_right(&mut self, bound: f64) -> bool {
        let mut d = self.left + self.width - bound;
        if d <= 0.0 {
            return true;
        }
        if d > self.width + 1e-9 {
            return false;
        }
        while d > 0.0 {
            let Some(mut entry) = self.segs.last_entry() else {
                break;
            };
            let l = *entry.get();
            if l <= d + LEN_EPS {
                self.width -= l;
                d -= l;
                entry.remove();
            } else {
                self.width -= d;
                *entry.get_mut() = l - d;
                d = 0.0;
            }
        }
        if self.segs.is_empty() {
            self.width = 0.0;
        }
        true
    }

    /// Leftmost minimizer and the minimum.
    fn minimum(&self) -> (f64, f64) {
        let (mut x, mut v) = (self.left, self.left_value);
        for (s, l) in &self.segs {
            if s.0 >= 0.0 {
                break;
            }
            x += l;
            v += s.0 * l;
        }
        (x, v)
    }
}

/// Stage cost as a function of the change in stored energy Δ (kWh).
#[derive(Debug, Clone)]
struct StageCost {
    left: f64,
    left_value: f64,
    /// Ascending slopes.
    segs: Vec<(f64, f64)>,
}

pub struct Problem<'a> {
    /// Load minus PV, kW.
    pub net_kw: &'a [f64],
    /// CHF/kWh.
    pub import_price: &'a [f64],
    pub export_price: &'a [f64],
    pub dt_hours: f64,
    pub battery: &'a BatteryDesign,
    pub charge_cost: f64,
    pub discharge_cost: f64,
    pub import_cap_kw: Option<f64>,
}

pub struct Flows {
    pub charge_kw: f64,
    pub discharge_kw: f64,
    /// Net grid exchange, positive for import.
    pub grid_kw: f64,
}

pub struct Solution {
    /// Change of stored energy in each step, kWh.
    pub delta_kwh: Vec<f64>,
    pub optimum: f64,
}

impl Problem<'_> {
    /// Battery and grid flows implied by an energy change `delta`.
    pub fn flows(&self, t: usize, delta: f64) -> Flows {
        let b = self.battery;
        let dt = self.dt_hours;
        let (charge_kw, discharge_kw) = if delta >= 0.0 {
            (delta / (b.eta_charge * dt), 0.0)
        } else {
            (0.0, -delta * b.eta_discharge / dt)
        };
        Flows {
            charge_kw,
            discharge_kw,
            grid_kw: self.net_kw[t] + charge_kw - discharge_kw,
        }
    }

    /// Cost of step `t` when stored energy changes by `delta`.
    pub fn stage_cost(&self, t: usize, delta: f64) -> f64 {
        let f = self.flows(t, delta);
        let grid = if f.grid_kw >= 0.0 {
            f.grid_kw * self.import_price[t]
        } else {
            f.grid_kw * self.export_price[t]
        };
        (grid + self.charge_cost * f.charge_kw + self.discharge_cost * f.discharge_kw)
            * self.dt_hours
    }

    fn stage(&self, t: usize) -> Result<StageCost> {
        let b = self.battery;
        let dt = self.dt_hours;
        let n = self.net_kw[t];
        let (pi, pe) = (self.import_price[t], self.export_price[t]);
        if pe > pi {
            return Err(DispatchError::ExportAboveImport(t));
        }
        let lo = -b.p_discharge_kw * dt / b.eta_discharge;
        let mut hi = b.p_charge_kw * b.eta_charge * dt;
        if let Some(cap) = self.import_cap_kw {
            let room = cap - n;
            let limit = if room >= 0.0 {
                room * b.eta_charge * dt
            } else {
                room * dt / b.eta_discharge
            };
            hi = hi.min(limit);
            if hi < lo - 1e-12 {
                return Err(DispatchError::Infeasible {
                    step: t,
                    reason: "import cap exceeds what the battery can cover",
                });
            }
            hi = hi.max(lo);
        }
        // Δ at which grid exchange crosses zero
        let zero = if n <= 0.0 { -n * b.eta_charge * dt } else { -n * dt / b.eta_discharge };
        let mut pts = vec![lo, hi];
        for p in [zero, 0.0] {
            if p > lo && p < hi {
                pts.push(p);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut segs = Vec::with_capacity(3);
        for w in pts.windows(2) {
            let (a, c) = (w[0], w[1]);
            if c - a <= LEN_EPS {
                continue;
            }
            let mid = 0.5 * (a + c);
            let f = self.flows(t, mid);
            let price = if f.grid_kw > 0.0 { pi } else { pe };
            let slope = if mid > 0.0 {
                (price + self.charge_cost) / b.eta_charge
            } else {
                b.eta_discharge * (price - self.discharge_cost)
            };
            segs.push((slope, c - a));
        }
        Ok(StageCost {
            left: lo,
            left_value: self.stage_cost(t, lo),
            segs,
        })
    }
}

/// Solves the dispatch LP exactly. The terminal stored energy is kept at or
/// above the initial one.
pub fn solve(p: &Problem<'_>) -> Result<Solution> {
    let n = p.net_kw.len();
    if p.import_price.len() != n || p.export_price.len() != n {
        return Err(DispatchError::AxisMismatch);
    }
    let b = p.battery;
    let cap = b.capacity_kwh;
    if cap <= 0.0 {
        let mut optimum = 0.0;
        for t in 0..n {
            p.stage(t)?;
            optimum += p.stage_cost(t, 0.0);
        }
        return Ok(Solution {
            delta_kwh: vec![0.0; n],
            optimum,
        });
    }
    let (emin, emax, e0) = (b.soc_min * cap, b.soc_max * cap, b.soc_initial * cap);

    let mut stages = Vec::with_capacity(n);
    for t in 0..n {
        stages.push(p.stage(t)?);
    }
    let advance = |v: &mut Pwl, t: usize| -> Result<()> {
        v.add_stage(&stages[t]);
        if !v.clip_left(emin) || !v.clip_right(emax) {
            return Err(DispatchError::Infeasible {
                step: t,
                reason: "state of charge window cannot be respected",
            });
        }
        Ok(())
    };
    // value functions are kept only at block starts and rebuilt per block
    // on the way back
    let block = ((n as f64).sqrt().ceil() as usize).max(1);
    let mut checkpoints = Vec::with_capacity(n / block + 1);
    let mut v = Pwl::point(e0);
    for t in 0..n {
        if t % block == 0 {
            checkpoints.push(v.clone());
        }
        advance(&mut v, t)?;
    }
    if !v.clip_left(e0) {
        return Err(DispatchError::Infeasible {
            step: n.saturating_sub(1),
            reason: "terminal state of charge below initial",
        });
    }
    let (mut s, optimum) = v.minimum();

    let mut delta = vec![0.0; n];
    for (c, checkpoint) in checkpoints.iter().enumerate().rev() {
        let start = c * block;
        let end = (start + block).min(n);
        let mut values = Vec::with_capacity(end - start);
        let mut w = checkpoint.clone();
        for t in start..end {
            values.push(w.clone());
            if t + 1 < end {
                advance(&mut w, t)?;
            }
        }
        for t in (start..end).rev() {
            let vt = &values[t - start];
            let g = &stages[t];
            let g_width: f64 = g.segs.iter().map(|x| x.1).sum();
            let mut u = (s - (vt.left + g.left)).clamp(0.0, vt.width + g_width);
            // walk both segment lists in slope order; equal slopes go to the
            // stage first, which defers charging to the latest cheap step
            let mut vi = vt.segs.iter().peekable();
            let mut gi = g.segs.iter().peekable();
            let mut used_g = 0.0;
            while u > 0.0 {
                let take_g = match (gi.peek(), vi.peek()) {
                    (Some(&&(gs, _)), Some(&(vs, _))) => gs <= vs.0,
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => break,
                };
                if take_g {
                    let &(_, l) = gi.next().unwrap();
                    let step = l.min(u);
                    used_g += step;
                    u -= step;
                } else {
                    let (_, &l) = vi.next().unwrap();
                    u -= l.min(u);
                }
            }
            let d = g.left + used_g;
            let prev = (s - d).clamp(vt.left, vt.left + vt.width);
            delta[t] = s - prev;
            s = prev;
        }
    }

    // replay forward to remove float drift from the bounds
    let mut e = e0;
    for (t, d) in delta.iter_mut().enumerate() {
        let g = &stages[t];
        let g_hi = g.left + g.segs.iter().map(|x| x.1).sum::<f64>();
        let next = (e + d.clamp(g.left, g_hi)).clamp(emin, emax);
        *d = next - e;
        e = next;
    }
    if e < e0 {
        // only float noise can get here
        let last = n - 1;
        delta[last] += e0 - e;
    }
    Ok(Solution {
        delta_kwh: delta,
        optimum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bat(cap: f64, p: f64, eta: f64) -> BatteryDesign {
        BatteryDesign {
            capacity_kwh: cap,
            p_charge_kw: p,
            p_discharge_kw: p,
            eta_charge: eta,
            eta_discharge: eta,
            soc_min: 0.0,
            soc_max: 1.0,
            soc_initial: 0.0,
        }
    }

    fn cost_of(p: &Problem<'_>, delta: &[f64]) -> f64 {
        delta.iter().enumerate().map(|(t, &d)| p.stage_cost(t, d)).sum()
    }

    /// Exhaustive search over a fine energy lattice; exact when every
    /// breakpoint of the problem lies on the lattice.
    fn lattice_optimum(p: &Problem<'_>, grid: f64) -> f64 {
        let b = p.battery;
        let levels = (b.capacity_kwh / grid).round() as usize;
        let n = p.net_kw.len();
        let mut best = vec![f64::INFINITY; levels + 1];
        best[(b.soc_initial * b.capacity_kwh / grid).round() as usize] = 0.0;
        for t in 0..n {
            let mut next = vec![f64::INFINITY; levels + 1];
            for (i, &c) in best.iter().enumerate() {
                if !c.is_finite() {
                    continue;
                }
                for (j, slot) in next.iter_mut().enumerate() {
                    let d = (j as f64 - i as f64) * grid;
                    let f = p.flows(t, d);
                    if f.charge_kw > b.p_charge_kw + 1e-9 || f.discharge_kw > b.p_discharge_kw + 1e-9 {
                        continue;
                    }
                    let v = c + p.stage_cost(t, d);
                    if v < *slot {
                        *slot = v;
                    }
                }
            }
            best = next;
        }
        let start = (b.soc_initial * b.capacity_kwh / grid).round() as usize;
        best[start..].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn charges_right_before_peak() {
        let b = bat(1.0, 1.0, 1.0);
        let net = [1.0, 0.0, 0.0, 1.0];
        let pi = [0.2, 0.2, 0.2, 0.4];
        let pe = [0.0; 4];
        let p = Problem {
            net_kw: &net,
            import_price: &pi,
            export_price: &pe,
            dt_hours: 1.0,
            battery: &b,
            charge_cost: 0.0,
            discharge_cost: 0.0,
            import_cap_kw: None,
        };
        let s = solve(&p).unwrap();
        assert_eq!(s.delta_kwh, vec![0.0, 0.0, 1.0, -1.0]);
        assert!((s.optimum - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_export_above_import() {
        let b = bat(1.0, 1.0, 1.0);
        let p = Problem {
            net_kw: &[0.0],
            import_price: &[0.1],
            export_price: &[0.2],
            dt_hours: 1.0,
            battery: &b,
            charge_cost: 0.0,
            discharge_cost: 0.0,
            import_cap_kw: None,
        };
        assert!(matches!(solve(&p), Err(DispatchError::ExportAboveImport(0))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // eta = 1, integer nets and powers and a 1 kWh lattice make the
        // lattice search exact
        #[test]
        fn matches_lattice_search(
            net in proptest::collection::vec(-3i32..=3, 1..7),
            pi in proptest::collection::vec(1u32..=9, 7),
            pe_frac in proptest::collection::vec(0u32..=10, 7),
            cap in 0u32..=4,
            pw in 1u32..=2,
            cc in 0u32..=2,
        ) {
            let b = bat(cap as f64, pw as f64, 1.0);
            let n = net.len();
            let net: Vec<f64> = net.iter().map(|&x| x as f64).collect();
            let pi: Vec<f64> = pi[..n].iter().map(|&x| x as f64 / 10.0).collect();
            let pe: Vec<f64> = (0..n).map(|t| pi[t] * pe_frac[t] as f64 / 10.0).collect();
            let p = Problem {
                net_kw: &net,
                import_price: &pi,
                export_price: &pe,
                dt_hours: 1.0,
                battery: &b,
                charge_cost: cc as f64 / 100.0,
                discharge_cost: cc as f64 / 100.0,
                import_cap_kw: None,
            };
            let s = solve(&p).unwrap();
            let got = cost_of(&p, &s.delta_kwh);
            let want = if cap == 0 { cost_of(&p, &vec![0.0; n]) } else { lattice_optimum(&p, 1.0) };
            prop_assert!((got - want).abs() < 1e-9, "got {got} want {want}");
            prop_assert!((s.optimum - want).abs() < 1e-9);
        }

        #[test]
        fn trajectory_respects_bounds(
            net in proptest::collection::vec(-5.0f64..5.0, 1..40),
            pi in proptest::collection::vec(0.05f64..0.5, 40),
            cap in 0.5f64..10.0,
            eta in 0.8f64..1.0,
            soc0 in 0.0f64..0.5,
        ) {
            let mut b = bat(cap, cap / 2.0, eta);
            b.soc_min = 0.1_f64.min(soc0);
            b.soc_initial = soc0;
            b.soc_max = 0.9;
            let n = net.len();
            let pe: Vec<f64> = pi[..n].iter().map(|x| x * 0.4).collect();
            let p = Problem {
                net_kw: &net,
                import_price: &pi[..n],
                export_price: &pe,
                dt_hours: 0.25,
                battery: &b,
                charge_cost: 0.0,
                discharge_cost: 0.0,
                import_cap_kw: None,
            };
            let s = solve(&p).unwrap();
            let mut e = soc0 * cap;
            for (t, &d) in s.delta_kwh.iter().enumerate() {
                let f = p.flows(t, d);
                prop_assert!(f.charge_kw <= b.p_charge_kw + 1e-9);
                prop_assert!(f.discharge_kw <= b.p_discharge_kw + 1e-9);
                e += d;
                prop_assert!(e >= b.soc_min * cap - 1e-9 && e <= b.soc_max * cap + 1e-9);
            }
            prop_assert!(e >= soc0 * cap - 1e-9);
            let got = cost_of(&p, &s.delta_kwh);
            prop_assert!((got - s.optimum).abs() <= 1e-9 * s.optimum.abs().max(1.0));
            // never worse than leaving the battery idle
            prop_assert!(got <= cost_of(&p, &vec![0.0; n]) + 1e-9);
        }
    }
}
