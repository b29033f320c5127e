//! Battery capacity fade from rainflow-counted SoC cycles plus calendar
//! aging, and the replacement schedule it implies over the project life.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgingError {
    #[error("annual fade is {0} although the battery cycles; check aging coefficients")]
    NonPositiveFade(f64),
    #[error("aging parameter `{0}` must be positive")]
    Parameter(&'static str),
}

/// One counted cycle. `count` is 1.0 for a full cycle and 0.5 for a half
/// cycle left in the residue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub depth: f64,
    pub mean_soc: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleSet {
    pub cycles: Vec<Cycle>,
}

impl CycleSet {
    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    /// Σ count × depth.
    pub fn throughput(&self) -> f64 {
        self.cycles.iter().map(|c| c.count * c.depth).sum()
    }

    pub fn full_equivalents(&self) -> f64 {
        self.cycles.iter().map(|c| c.count).sum()
    }

    pub fn merged(mut self, other: CycleSet) -> CycleSet {
        self.cycles.extend(other.cycles);
        self
    }
}

/// Drops repeated values and points that are not local extrema.
pub fn turning_points(series: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(series.len());
    for &x in series {
        match out.len() {
            0 => out.push(x),
            1 => {
                if x != out[0] {
                    out.push(x);
                }
            }
            n => {
                let (a, b) = (out[n - 2], out[n - 1]);
                if x == b {
                    continue;
                }
                if (b - a) * (x - b) > 0.0 {
                    // same direction, b is not a reversal
                    out[n - 1] = x;
                } else {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Four-point rainflow count of an SoC trace (fractions of capacity).
/// Closed cycles count 1.0; the residue contributes one half cycle per
/// adjacent pair.
pub fn rainflow(soc: &[f64]) -> CycleSet {
    let mut stack: Vec<f64> = Vec::new();
    let mut cycles = Vec::new();
    for x in turning_points(soc) {
        stack.push(x);
        while stack.len() >= 4 {
            let n = stack.len();
            let (a, b, c, d) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (c - b).abs();
            if inner <= (b - a).abs() && inner <= (d - c).abs() {
                cycles.push(Cycle {
                    depth: inner,
                    mean_soc: (b + c) / 2.0,
                    count: 1.0,
                });
                stack.truncate(n - 3);
                stack.push(d);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        cycles.push(Cycle {
            depth: (w[1] - w[0]).abs(),
            mean_soc: (w[0] + w[1]) / 2.0,
            count: 0.5,
        });
    }
    cycles.retain(|c| c.depth > 0.0);
    CycleSet { cycles }
}

/// Optional dependence of cycle damage on the cycle's mean SoC. Inert by
/// default since no coefficients are available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSocWeight {
    #[default]
    None,
    /// `1 + slope × (mean − reference)`, floored at zero.
    Linear { reference: f64, slope: f64 },
}

impl MeanSocWeight {
    pub fn weight(&self, mean_soc: f64) -> f64 {
        match *self {
            MeanSocWeight::None => 1.0,
            MeanSocWeight::Linear { reference, slope } => {
                (1.0 + slope * (mean_soc - reference)).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgingParams {
    /// Fade per full-depth equivalent cycle.
    pub k_cyc: f64,
    pub cyc_exponent: f64,
    /// Fade per year.
    pub k_cal: f64,
    /// Remaining-capacity fraction at end of life.
    pub eol_threshold: f64,
    pub mean_soc_weight: MeanSocWeight,
}

impl Default for AgingParams {
    /// 3000 full cycles or 15 calendar years each reach 20% fade.
    fn default() -> Self {
        Self {
            k_cyc: 0.20 / 3000.0,
            cyc_exponent: 1.1,
            k_cal: 0.20 / 15.0,
            eol_threshold: 0.80,
            mean_soc_weight: MeanSocWeight::None,
        }
    }
}

impl AgingParams {
    pub fn validate(&self) -> Result<(), AgingError> {
        if !(self.k_cyc >= 0.0) {
            return Err(AgingError::Parameter("k_cyc"));
        }
        if !(self.k_cal >= 0.0) {
            return Err(AgingError::Parameter("k_cal"));
        }
        if !(self.cyc_exponent > 0.0) {
            return Err(AgingError::Parameter("cyc_exponent"));
        }
        if !(self.eol_threshold > 0.0 && self.eol_threshold < 1.0) {
            return Err(AgingError::Parameter("eol_threshold"));
        }
        Ok(())
    }

    fn cycle_damage(&self, cycles: &CycleSet) -> f64 {
        cycles
            .cycles
            .iter()
            .map(|c| c.count * c.depth.powf(self.cyc_exponent) * self.mean_soc_weight.weight(c.mean_soc))
            .sum::<f64>()
            * self.k_cyc
    }
}

/// Lost capacity fraction after `elapsed_years`, clamped to [0, 1].
pub fn capacity_fade(cycles: &CycleSet, elapsed_years: f64, params: &AgingParams) -> f64 {
    (params.cycle_damage(cycles) + params.k_cal * elapsed_years.max(0.0)).clamp(0.0, 1.0)
}

/// Replacement timing and end-of-horizon credits for the battery and the
/// PV inverter. Years are measured from commissioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementSchedule {
    pub horizon_years: u32,
    pub annual_fade: f64,
    /// Service life of one battery, years (infinite if it never fades).
    pub battery_life_years: f64,
    pub battery_replacement_years: Vec<f64>,
    /// Horizon divided by the number of batteries bought.
    pub effective_battery_life: f64,
    pub inverter_replacement_years: Vec<f64>,
    pub battery_unit_cost: f64,
    pub inverter_unit_cost: f64,
    /// Undiscounted credits granted at the horizon.
    pub battery_residual: f64,
    pub inverter_residual: f64,
}

impl ReplacementSchedule {
    /// Ratio L / L_bat used to scale battery CAPEX.
    pub fn battery_capex_multiplier(&self) -> f64 {
        self.horizon_years as f64 / self.effective_battery_life
    }

    pub fn battery_builds(&self) -> usize {
        self.battery_replacement_years.len() + 1
    }

    /// Present value of all replacements minus residual credits.
    pub fn net_present_cost(&self, rate: f64) -> f64 {
        let pv = |year: f64| (1.0 + rate).powf(-year);
        let reps: f64 = self
            .battery_replacement_years
            .iter()
            .map(|&y| self.battery_unit_cost * pv(y))
            .chain(
                self.inverter_replacement_years
                    .iter()
                    .map(|&y| self.inverter_unit_cost * pv(y)),
            )
            .sum();
        reps - (self.battery_residual + self.inverter_residual) * pv(self.horizon_years as f64)
    }

    /// Inverter part of [`Self::net_present_cost`].
    pub fn inverter_net_present_cost(&self, rate: f64) -> f64 {
        let pv = |year: f64| (1.0 + rate).powf(-year);
        self.inverter_replacement_years
            .iter()
            .map(|&y| self.inverter_unit_cost * pv(y))
            .sum::<f64>()
            - self.inverter_residual * pv(self.horizon_years as f64)
    }

    /// Replacement outlays and residual credits bucketed into project years
    /// 1..=L (index 0 unused). A replacement at a fractional year lands in
    /// the year it falls in.
    pub fn yearly_cashflows(&self) -> Vec<f64> {
        let l = self.horizon_years as usize;
        let mut out = vec![0.0; l + 1];
        let bucket = |y: f64| (y.ceil() as usize).clamp(1, l);
        for &y in &self.battery_replacement_years {
            out[bucket(y)] += self.battery_unit_cost;
        }
        for &y in &self.inverter_replacement_years {
            out[bucket(y)] += self.inverter_unit_cost;
        }
        if l > 0 {
            out[l] -= self.battery_residual + self.inverter_residual;
        }
        out
    }
}

/// Replacement years for a component of life `life` over `horizon`, and the
/// credited fraction of the last unit's life remaining at the horizon.
fn periodic(life: f64, horizon: f64) -> (Vec<f64>, f64) {
    if !life.is_finite() || life <= 0.0 {
        return (Vec::new(), 0.0);
    }
    let mut years = Vec::new();
    let mut k = 1.0;
    // tolerance avoids a spurious replacement when k·life ≈ horizon
    while k * life < horizon - 1e-9 {
        years.push(k * life);
        k += 1.0;
    }
    let last_build = years.last().copied().unwrap_or(0.0);
    let remaining = ((last_build + life - horizon) / life).clamp(0.0, 1.0);
    (years, remaining)
}

/// Extrapolates one representative year of SoC (fractions) over the
/// horizon, assuming every year cycles identically.
pub fn replacement_schedule(
    annual_soc: &[f64],
    horizon_years: u32,
    inverter_life_years: f64,
    battery_unit_cost: f64,
    inverter_unit_cost: f64,
    params: &AgingParams,
) -> Result<ReplacementSchedule, AgingError> {
    params.validate()?;
    let horizon = horizon_years as f64;
    let cycles = rainflow(annual_soc);
    let has_battery = battery_unit_cost > 0.0 || !cycles.is_empty();
    let annual_fade = if has_battery {
        capacity_fade(&cycles, 1.0, params)
    } else {
        0.0
    };
    if annual_fade <= 0.0 && !cycles.is_empty() {
        return Err(AgingError::NonPositiveFade(annual_fade));
    }
    let (battery_life, battery_years, battery_remaining) = if annual_fade > 0.0 {
        // snapped to 1e-9 yr so that 0.2/0.02 gives exactly 10
        let life = ((1.0 - params.eol_threshold) / annual_fade * 1e9).round() / 1e9;
        let (years, rem) = periodic(life, horizon);
        (life, years, rem)
    } else {
        (f64::INFINITY, Vec::new(), 0.0)
    };
    let builds = battery_years.len() + 1;
    let (inverter_years, inverter_remaining) = if inverter_unit_cost > 0.0 {
        periodic(inverter_life_years, horizon)
    } else {
        (Vec::new(), 0.0)
    };
    Ok(ReplacementSchedule {
        horizon_years,
        annual_fade,
        battery_life_years: battery_life,
        battery_replacement_years: battery_years,
        effective_battery_life: horizon / builds as f64,
        inverter_replacement_years: inverter_years,
        battery_unit_cost,
        inverter_unit_cost,
        battery_residual: battery_unit_cost * battery_remaining,
        inverter_residual: inverter_unit_cost * inverter_remaining,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted(mut c: Vec<Cycle>) -> Vec<(f64, f64, f64)> {
        c.sort_by(|a, b| {
            (a.depth, a.mean_soc, a.count)
                .partial_cmp(&(b.depth, b.mean_soc, b.count))
                .unwrap()
        });
        c.into_iter().map(|c| (c.depth, c.mean_soc, c.count)).collect()
    }

    #[test]
    fn single_excursion_is_two_halves() {
        let c = rainflow(&[0.2, 0.8, 0.2]);
        assert_eq!(c.len(), 2);
        assert!(c.cycles.iter().all(|c| c.count == 0.5 && (c.depth - 0.6).abs() < 1e-15));
        assert!((c.full_equivalents() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_trace_has_no_cycles() {
        assert!(rainflow(&[0.5; 50]).is_empty());
        assert!(rainflow(&[]).is_empty());
        assert!(rainflow(&[0.3]).is_empty());
    }

    #[test]
    fn canonical_sequence() {
        // 0.1 → 0.9 → 0.3 → 0.7 → 0.1: the 0.3–0.7 excursion closes,
        // leaving 0.1 → 0.9 → 0.1 as residue
        let c = rainflow(&[0.1, 0.9, 0.3, 0.7, 0.1]);
        let got = sorted(c.cycles);
        let want = vec![(0.39999999999999997, 0.5, 1.0), (0.8, 0.5, 0.5), (0.8, 0.5, 0.5)];
        assert_eq!(got.len(), 3);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12 && g.2 == w.2);
        }
    }

    #[test]
    fn turning_points_drop_plateaus_and_ramps() {
        assert_eq!(
            turning_points(&[0.1, 0.1, 0.2, 0.3, 0.3, 0.2, 0.2, 0.5]),
            vec![0.1, 0.3, 0.2, 0.5]
        );
    }

    #[test]
    fn calibration_identities() {
        let p = AgingParams::default();
        let full = CycleSet {
            cycles: vec![
                Cycle {
                    depth: 1.0,
                    mean_soc: 0.5,
                    count: 1.0
                };
                3000
            ],
        };
        assert!((capacity_fade(&full, 0.0, &p) - 0.20).abs() < 1e-9);
        assert!((capacity_fade(&CycleSet::default(), 15.0, &p) - 0.20).abs() < 1e-9);
        assert_eq!(capacity_fade(&CycleSet::default(), 0.0, &p), 0.0);
        assert_eq!(capacity_fade(&full, 100.0, &p), 1.0);
    }

    #[test]
    fn mean_soc_hook() {
        let mut p = AgingParams::default();
        let c = CycleSet {
            cycles: vec![Cycle {
                depth: 0.5,
                mean_soc: 0.8,
                count: 1.0,
            }],
        };
        let base = capacity_fade(&c, 0.0, &p);
        p.mean_soc_weight = MeanSocWeight::Linear {
            reference: 0.5,
            slope: 1.0,
        };
        assert!((capacity_fade(&c, 0.0, &p) - 1.3 * base).abs() < 1e-15);
    }

    fn params_with_fade(annual: f64) -> AgingParams {
        AgingParams {
            k_cyc: 0.0,
            k_cal: annual,
            ..AgingParams::default()
        }
    }

    #[test]
    fn two_percent_fade_over_25_years() {
        let s = replacement_schedule(&[0.5; 10], 25, 15.0, 1000.0, 0.0, &params_with_fade(0.02))
            .unwrap();
        assert_eq!(s.battery_replacement_years, vec![10.0, 20.0]);
        assert!((s.battery_residual - 500.0).abs() < 1e-9);
        assert!((s.effective_battery_life - 25.0 / 3.0).abs() < 1e-12);
        assert!((s.battery_capex_multiplier() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_battery_means_no_replacements() {
        let s = replacement_schedule(&[0.0; 10], 25, 15.0, 0.0, 0.0, &AgingParams::default())
            .unwrap();
        assert!(s.battery_replacement_years.is_empty());
        assert_eq!(s.effective_battery_life, 25.0);
        assert_eq!(s.battery_residual, 0.0);
    }

    #[test]
    fn inverter_replaced_once() {
        let s = replacement_schedule(&[0.0; 4], 25, 15.0, 0.0, 3000.0, &AgingParams::default())
            .unwrap();
        assert_eq!(s.inverter_replacement_years, vec![15.0]);
        assert!((s.inverter_residual - 3000.0 * 5.0 / 15.0).abs() < 1e-9);
        let long = replacement_schedule(&[0.0; 4], 40, 15.0, 0.0, 3000.0, &AgingParams::default())
            .unwrap();
        assert_eq!(long.inverter_replacement_years, vec![15.0, 30.0]);
    }

    #[test]
    fn exact_life_division_leaves_no_credit() {
        let s = replacement_schedule(&[0.5; 4], 25, 15.0, 100.0, 0.0, &params_with_fade(0.016))
            .unwrap();
        assert_eq!(s.battery_replacement_years, vec![12.5]);
        assert!(s.battery_residual.abs() < 1e-9);
    }

    #[test]
    fn cycling_without_fade_is_rejected() {
        let p = AgingParams {
            k_cyc: 0.0,
            k_cal: 0.0,
            ..AgingParams::default()
        };
        assert!(matches!(
            replacement_schedule(&[0.0, 1.0, 0.0], 25, 15.0, 100.0, 0.0, &p),
            Err(AgingError::NonPositiveFade(_))
        ));
    }

    #[test]
    fn yearly_cashflows_bucket_replacements() {
        let s = replacement_schedule(&[0.5; 4], 25, 15.0, 1000.0, 300.0, &params_with_fade(0.02))
            .unwrap();
        let cf = s.yearly_cashflows();
        assert_eq!(cf.len(), 26);
        assert_eq!(cf[10], 1000.0);
        assert_eq!(cf[15], 300.0);
        assert_eq!(cf[20], 1000.0);
        assert!((cf[25] + 500.0 + 100.0).abs() < 1e-9);
        let npc = s.net_present_cost(0.0);
        assert!((npc - cf.iter().sum::<f64>()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn plateaus_do_not_change_cycles(
            xs in prop::collection::vec(0.0f64..1.0, 2..40),
            at in 0usize..40,
            reps in 1usize..4,
        ) {
            let i = at % xs.len();
            let mut ys = xs.clone();
            for _ in 0..reps {
                ys.insert(i, xs[i]);
            }
            prop_assert_eq!(sorted(rainflow(&xs).cycles), sorted(rainflow(&ys).cycles));
        }

        #[test]
        fn counted_throughput_is_half_the_path(xs in prop::collection::vec(0.0f64..1.0, 0..60)) {
            let path: f64 = xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let t = rainflow(&xs).throughput();
            prop_assert!(t <= path / 2.0 + 1e-12);
            prop_assert!((t - path / 2.0).abs() < 1e-9);
        }

        #[test]
        fn closed_sequences_reverse_to_same_damage(xs in prop::collection::vec(0.0f64..1.0, 3..40)) {
            // rotate to start at the maximum and close the loop
            let imax = xs.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            let mut closed: Vec<f64> = xs[imax..].iter().chain(&xs[..imax]).copied().collect();
            closed.push(xs[imax]);
            let mut rev = closed.clone();
            rev.reverse();
            let p = AgingParams::default();
            let a = capacity_fade(&rainflow(&closed), 0.0, &p);
            let b = capacity_fade(&rainflow(&rev), 0.0, &p);
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }

        #[test]
        fn fade_is_additive_and_linear_in_time(
            d1 in prop::collection::vec(0.01f64..1.0, 0..10),
            d2 in prop::collection::vec(0.01f64..1.0, 0..10),
            y in 0.0f64..3.0,
        ) {
            let p = AgingParams::default();
            let mk = |d: &Vec<f64>| CycleSet { cycles: d.iter().map(|&depth| Cycle { depth, mean_soc: 0.5, count: 1.0 }).collect() };
            let (a, b) = (mk(&d1), mk(&d2));
            let sum = capacity_fade(&a, y, &p) + capacity_fade(&b, y, &p) - capacity_fade(&CycleSet::default(), y, &p);
            prop_assert!((capacity_fade(&a.clone().merged(b.clone()), y, &p) - sum).abs() < 1e-12);
            let c0 = capacity_fade(&CycleSet::default(), 0.0, &p);
            prop_assert!((capacity_fade(&CycleSet::default(), 2.0 * y, &p) - 2.0 * capacity_fade(&CycleSet::default(), y, &p) + c0).abs() < 1e-12);
        }

        #[test]
        fn replacements_monotone_in_params(
            k_cal in 0.001f64..0.05,
            k_cyc in 0.0f64..1e-3,
            eol in 0.5f64..0.95,
            bump in 1.0f64..2.0,
        ) {
            let soc = [0.1, 0.9, 0.2, 0.8, 0.1, 0.6, 0.1];
            let base = AgingParams { k_cal, k_cyc, eol_threshold: eol, ..AgingParams::default() };
            let n = |p: &AgingParams| replacement_schedule(&soc, 25, 15.0, 100.0, 0.0, p).unwrap().battery_replacement_years.len();
            let n0 = n(&base);
            let more_cal = n(&AgingParams { k_cal: k_cal * bump, ..base });
            let more_cyc = n(&AgingParams { k_cyc: k_cyc * bump, ..base });
            let stricter_eol = n(&AgingParams { eol_threshold: (eol * bump).min(0.99), ..base });
            prop_assert!(more_cal >= n0);
            prop_assert!(more_cyc >= n0);
            prop_assert!(stricter_eol >= n0);
        }
    }
}
