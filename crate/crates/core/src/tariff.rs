//! External double tariff, the two internal community tariffs, and their
//! per-kWh component decomposition. All rates are in ct/kWh.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDateTime, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{Profile, TimeAxis};

#[derive(Debug, Error, PartialEq)]
pub enum TariffError {
    #[error("dynamic tariff needs irradiance at every step")]
    MissingIrradiance,
    #[error("negative tariff component `{0}`")]
    NegativeComponent(&'static str),
    #[error("dynamic tariff bounds invalid: p_min {p_min} > p_max {p_max}")]
    DynamicBounds { p_min: f64, p_max: f64 },
    #[error("dynamic fixed part {fixed} exceeds minimum price {p_min}")]
    DynamicFixed { fixed: f64, p_min: f64 },
    #[error("reference irradiance must be positive")]
    ReferenceIrradiance,
    #[error("peak window {0} → {1} is empty or wraps midnight")]
    Window(NaiveTime, NaiveTime),
    #[error("schedule of kind {0:?} is missing its dynamic parameters")]
    MissingDynamic(TariffKind),
    #[error("irradiance has {found} steps, axis has {expected}")]
    IrradianceLength { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, TariffError>;

/// Rounds to two decimals (published precision of ct/kWh rates).
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOffpeak {
    pub peak: f64,
    pub offpeak: f64,
}

impl PeakOffpeak {
    pub fn new(peak: f64, offpeak: f64) -> Self {
        Self { peak, offpeak }
    }

    pub fn get(&self, peak: bool) -> f64 {
        if peak {
            self.peak
        } else {
            self.offpeak
        }
    }

    fn reduced(&self, keep: f64) -> Self {
        Self::new(round2(self.peak * keep), round2(self.offpeak * keep))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxStack {
    pub federal: f64,
    pub winter_reserve: f64,
    pub cantonal_tax: f64,
    pub cantonal_emolument: f64,
}

impl TaxStack {
    pub fn total(&self) -> f64 {
        round2(self.federal + self.winter_reserve + self.cantonal_tax + self.cantonal_emolument)
    }
}

/// Stacked per-kWh components of a double tariff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffComponents {
    pub energy: PeakOffpeak,
    pub regional_grid: PeakOffpeak,
    pub national_grid: PeakOffpeak,
    pub taxes: TaxStack,
}

impl TariffComponents {
    /// 2025 "Energie Suisse" double tariff, standard (DSO) rates.
    pub fn double_2025() -> Self {
        Self {
            energy: PeakOffpeak::new(16.68, 11.81),
            regional_grid: PeakOffpeak::new(14.34, 8.43),
            national_grid: PeakOffpeak::new(2.32, 1.48),
            taxes: TaxStack {
                federal: 2.30,
                winter_reserve: 0.23,
                cantonal_tax: 0.60,
                cantonal_emolument: 0.02,
            },
        }
    }

    /// Same tariff with the grid-usage components multiplied by
    /// `1 - reduction` and rounded to two decimals.
    pub fn with_grid_reduction(&self, reduction: f64) -> Self {
        let keep = 1.0 - reduction;
        Self {
            regional_grid: self.regional_grid.reduced(keep),
            national_grid: self.national_grid.reduced(keep),
            ..*self
        }
    }

    pub fn grid(&self, peak: bool) -> f64 {
        round2(self.regional_grid.get(peak) + self.national_grid.get(peak))
    }

    pub fn total(&self, peak: bool) -> f64 {
        round2(self.energy.get(peak) + self.grid(peak) + self.taxes.total())
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("energy.peak", self.energy.peak),
            ("energy.offpeak", self.energy.offpeak),
            ("regional_grid.peak", self.regional_grid.peak),
            ("regional_grid.offpeak", self.regional_grid.offpeak),
            ("national_grid.peak", self.national_grid.peak),
            ("national_grid.offpeak", self.national_grid.offpeak),
            ("taxes.federal", self.taxes.federal),
            ("taxes.winter_reserve", self.taxes.winter_reserve),
            ("taxes.cantonal_tax", self.taxes.cantonal_tax),
            ("taxes.cantonal_emolument", self.taxes.cantonal_emolument),
        ];
        for (name, v) in named {
            if !(v >= 0.0) {
                return Err(TariffError::NegativeComponent(name));
            }
        }
        Ok(())
    }
}

fn default_peak_start() -> NaiveTime {
    NaiveTime::from_hms_opt(17, 0, 0).expect("valid")
}
fn default_peak_end() -> NaiveTime {
    NaiveTime::from_hms_opt(22, 0, 0).expect("valid")
}
fn default_peak_days() -> Vec<Weekday> {
    vec![
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
    ]
}

/// Weekly peak window; everything outside it is off-peak. Holidays are
/// priced as their weekday.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouWindow {
    #[serde(default = "default_peak_start")]
    pub peak_start: NaiveTime,
    #[serde(default = "default_peak_end")]
    pub peak_end: NaiveTime,
    #[serde(default = "default_peak_days")]
    pub peak_days: Vec<Weekday>,
}

impl Default for TouWindow {
    fn default() -> Self {
        Self {
            peak_start: default_peak_start(),
            peak_end: default_peak_end(),
            peak_days: default_peak_days(),
        }
    }
}

impl TouWindow {
    pub fn is_peak(&self, at: NaiveDateTime) -> bool {
        let time = at.time();
        self.peak_days.contains(&at.weekday()) && time >= self.peak_start && time < self.peak_end
    }

    fn validate(&self) -> Result<()> {
        if self.peak_start >= self.peak_end {
            return Err(TariffError::Window(self.peak_start, self.peak_end));
        }
        Ok(())
    }
}

fn default_g_ref() -> f64 {
    1000.0
}

/// Irradiance-indexed internal price between `p_min` and `p_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicTariffParams {
    pub p_max: f64,
    pub p_min: f64,
    pub fixed_grid: f64,
    pub fixed_tax: f64,
    #[serde(default = "default_g_ref")]
    pub g_ref: f64,
}

impl Default for DynamicTariffParams {
    fn default() -> Self {
        Self {
            p_max: 24.52,
            p_min: 11.50,
            fixed_grid: 7.39,
            fixed_tax: 3.15,
            g_ref: default_g_ref(),
        }
    }
}

impl DynamicTariffParams {
    pub fn fixed(&self) -> f64 {
        round2(self.fixed_grid + self.fixed_tax)
    }

    /// `p_max − (p_max − p_min) · clamp(G/G_ref, 0, 1)`.
    pub fn price(&self, ghi: f64) -> f64 {
        let x = (ghi / self.g_ref).clamp(0.0, 1.0);
        self.p_max - (self.p_max - self.p_min) * x
    }

    fn validate(&self) -> Result<()> {
        if self.p_min > self.p_max {
            return Err(TariffError::DynamicBounds {
                p_min: self.p_min,
                p_max: self.p_max,
            });
        }
        if !(self.g_ref > 0.0) {
            return Err(TariffError::ReferenceIrradiance);
        }
        if self.fixed_grid < 0.0 {
            return Err(TariffError::NegativeComponent("dynamic.fixed_grid"));
        }
        if self.fixed_tax < 0.0 {
            return Err(TariffError::NegativeComponent("dynamic.fixed_tax"));
        }
        if self.fixed() > self.p_min + 1e-9 {
            return Err(TariffError::DynamicFixed {
                fixed: self.fixed(),
                p_min: self.p_min,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TariffKind {
    ExternalDouble,
    InternalDouble,
    InternalDynamic,
}

fn default_feed_in() -> f64 {
    11.5
}

/// A priced tariff: what one kWh costs at a given instant and how that
/// price splits into energy, grid and tax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub kind: TariffKind,
    pub components: TariffComponents,
    #[serde(default)]
    pub tou: TouWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicTariffParams>,
    #[serde(default = "default_feed_in")]
    pub feed_in: f64,
}

/// Energy / grid / tax split of a price, ct/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub energy: f64,
    pub grid: f64,
    pub tax: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.energy + self.grid + self.tax
    }
}

/// Grid-usage reduction granted to internal exchanges.
pub const INTERNAL_GRID_REDUCTION: f64 = 0.40;

impl TariffSchedule {
    pub fn external_double_2025() -> Self {
        Self {
            kind: TariffKind::ExternalDouble,
            components: TariffComponents::double_2025(),
            tou: TouWindow::default(),
            dynamic: None,
            feed_in: default_feed_in(),
        }
    }

    pub fn internal_double_2025() -> Self {
        Self {
            kind: TariffKind::InternalDouble,
            components: TariffComponents::double_2025().with_grid_reduction(INTERNAL_GRID_REDUCTION),
            ..Self::external_double_2025()
        }
    }

    pub fn internal_dynamic_2025() -> Self {
        Self {
            kind: TariffKind::InternalDynamic,
            components: TariffComponents::double_2025().with_grid_reduction(INTERNAL_GRID_REDUCTION),
            dynamic: Some(DynamicTariffParams::default()),
            ..Self::external_double_2025()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.components.validate()?;
        self.tou.validate()?;
        if self.feed_in < 0.0 {
            return Err(TariffError::NegativeComponent("feed_in"));
        }
        match (self.kind, &self.dynamic) {
            (TariffKind::InternalDynamic, None) => Err(TariffError::MissingDynamic(self.kind)),
            (TariffKind::InternalDynamic, Some(d)) => d.validate(),
            _ => Ok(()),
        }
    }

    pub fn needs_irradiance(&self) -> bool {
        self.kind == TariffKind::InternalDynamic
    }

    fn dynamic_params(&self) -> Result<&DynamicTariffParams> {
        self.dynamic.as_ref().ok_or(TariffError::MissingDynamic(self.kind))
    }

    /// Import price in ct/kWh at `at`; `ghi` (W/m²) is required for the
    /// dynamic tariff and ignored otherwise.
    pub fn price_import(&self, at: NaiveDateTime, ghi: Option<f64>) -> Result<f64> {
        match self.kind {
            TariffKind::ExternalDouble | TariffKind::InternalDouble => {
                Ok(self.components.total(self.tou.is_peak(at)))
            }
            TariffKind::InternalDynamic => {
                let g = ghi.ok_or(TariffError::MissingIrradiance)?;
                Ok(self.dynamic_params()?.price(g))
            }
        }
    }

    pub fn decompose(&self, at: NaiveDateTime, ghi: Option<f64>) -> Result<Decomposition> {
        match self.kind {
            TariffKind::ExternalDouble | TariffKind::InternalDouble => {
                let peak = self.tou.is_peak(at);
                Ok(Decomposition {
                    energy: self.components.energy.get(peak),
                    grid: self.components.grid(peak),
                    tax: self.components.taxes.total(),
                })
            }
            TariffKind::InternalDynamic => {
                let g = ghi.ok_or(TariffError::MissingIrradiance)?;
                let d = self.dynamic_params()?;
                let price = d.price(g);
                Ok(Decomposition {
                    energy: price - d.fixed(),
                    grid: d.fixed_grid,
                    tax: d.fixed_tax,
                })
            }
        }
    }

    pub fn price_export(&self) -> f64 {
        self.feed_in
    }

    fn check_ghi(&self, axis: &TimeAxis, ghi: Option<&Profile>) -> Result<()> {
        match ghi {
            Some(g) if g.len() != axis.len() => Err(TariffError::IrradianceLength {
                expected: axis.len(),
                found: g.len(),
            }),
            None if self.needs_irradiance() => Err(TariffError::MissingIrradiance),
            _ => Ok(()),
        }
    }

    /// Import prices for every step of `axis`, ct/kWh.
    pub fn import_series(&self, axis: &TimeAxis, ghi: Option<&Profile>) -> Result<Vec<f64>> {
        self.check_ghi(axis, ghi)?;
        (0..axis.len())
            .map(|t| self.price_import(axis.timestamp(t), ghi.map(|g| g.values()[t])))
            .collect()
    }

    pub fn decomposition_series(
        &self,
        axis: &TimeAxis,
        ghi: Option<&Profile>,
    ) -> Result<Vec<Decomposition>> {
        self.check_ghi(axis, ghi)?;
        (0..axis.len())
            .map(|t| self.decompose(axis.timestamp(t), ghi.map(|g| g.values()[t])))
            .collect()
    }
}

/// Flags internal grid components that are not `(1 − reduction)` times the
/// external ones at two-decimal precision. Each message names the component.
pub fn check_grid_reduction(
    external: &TariffComponents,
    internal: &TariffComponents,
    reduction: f64,
) -> Vec<String> {
    let expected = external.with_grid_reduction(reduction);
    let mut warnings = Vec::new();
    let pairs = [
        ("regional_grid.peak", expected.regional_grid.peak, internal.regional_grid.peak),
        ("regional_grid.offpeak", expected.regional_grid.offpeak, internal.regional_grid.offpeak),
        ("national_grid.peak", expected.national_grid.peak, internal.national_grid.peak),
        ("national_grid.offpeak", expected.national_grid.offpeak, internal.national_grid.offpeak),
    ];
    for (name, want, got) in pairs {
        if (want - got).abs() > 0.005 {
            warnings.push(format!(
                "{name}: internal rate {got:.2} is not a {:.0}% reduction (expected {want:.2})",
                reduction * 100.0
            ));
        }
    }
    for (name, a, b) in [
        ("energy.peak", external.energy.peak, internal.energy.peak),
        ("energy.offpeak", external.energy.offpeak, internal.energy.offpeak),
        ("taxes", external.taxes.total(), internal.taxes.total()),
    ] {
        if (a - b).abs() > 0.005 {
            warnings.push(format!("{name}: internal rate {b:.2} differs from external {a:.2}"));
        }
    }
    warnings
}

/// Plain-text audit table of the component breakdown of each schedule.
pub fn audit_table(schedules: &[&TariffSchedule]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "tariff", "period", "energy", "grid", "tax", "total"
    );
    for s in schedules {
        let name = match s.kind {
            TariffKind::ExternalDouble => "external_double",
            TariffKind::InternalDouble => "internal_double",
            TariffKind::InternalDynamic => "internal_dynamic",
        };
        match (s.kind, &s.dynamic) {
            (TariffKind::InternalDynamic, Some(d)) => {
                for (label, price) in [("max", d.p_max), ("min", d.p_min)] {
                    let _ = writeln!(
                        out,
                        "{:<18} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                        name,
                        label,
                        price - d.fixed(),
                        d.fixed_grid,
                        d.fixed_tax,
                        price
                    );
                }
            }
            _ => {
                let c = &s.components;
                for (label, peak) in [("peak", true), ("offpeak", false)] {
                    let _ = writeln!(
                        out,
                        "{:<18} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                        name,
                        label,
                        c.energy.get(peak),
                        c.grid(peak),
                        c.taxes.total(),
                        c.total(peak)
                    );
                }
            }
        }
        let _ = writeln!(out, "{:<18} {:>8} {:>35.2}", name, "feed-in", s.feed_in);
    }
    out
}
