//! Fifteen-minute profiles: time axis, CSV ingestion, synthetic demand and
//! meteo generation, and building-level PV production.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of the usable roof that may carry modules.
pub const ROOF_USE_FRACTION: f64 = 0.70;

#[derive(Debug, Error)]
pub enum TimeseriesError {
    #[error("step of {0} minutes does not divide an hour")]
    BadStep(u32),
    #[error("{n_steps} steps of {step_minutes} min from {start} do not span one civil year")]
    NotOneYear {
        start: NaiveDateTime,
        step_minutes: u32,
        n_steps: usize,
    },
    #[error("row {row}: gap at {expected}")]
    Gap { row: usize, expected: NaiveDateTime },
    #[error("row {row}: duplicate or out-of-order timestamp {found}")]
    Duplicate { row: usize, found: NaiveDateTime },
    #[error("row {row}: cannot parse {what}: {text:?}")]
    Parse {
        row: usize,
        what: &'static str,
        text: String,
    },
    #[error("row {row}: negative value {value} for a {unit} profile")]
    Negative { row: usize, value: f64, unit: Unit },
    #[error("row {row}: missing value")]
    Missing { row: usize },
    #[error("bad header {0:?}, expected `timestamp,value`")]
    Header(String),
    #[error("profile is empty")]
    Empty,
    #[error("expected {expected} values, got {found}")]
    Length { expected: usize, found: usize },
    #[error("profiles are on different time axes")]
    AxisMismatch,
    #[error("unknown archetype {0:?}")]
    UnknownArchetype(String),
    #[error("annual energy must be positive, got {0} MWh")]
    NonPositiveEnergy(f64),
    #[error("module area {installed:.3} m² exceeds 70% of the {roof:.3} m² roof")]
    RoofExceeded { installed: f64, roof: f64 },
    #[error("invalid PV design: {0}")]
    InvalidDesign(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TimeseriesError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "kW")]
    Kw,
    #[serde(rename = "W/m2")]
    WattsPerSquareMetre,
    #[serde(rename = "degC")]
    Celsius,
}

impl Unit {
    fn non_negative(self) -> bool {
        !matches!(self, Unit::Celsius)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Kw => "kW",
            Unit::WattsPerSquareMetre => "W/m²",
            Unit::Celsius => "°C",
        })
    }
}

/// Regular time grid covering exactly one civil year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    start: NaiveDateTime,
    step_minutes: u32,
    n_steps: usize,
}

impl TimeAxis {
    pub fn new(start: NaiveDateTime, step_minutes: u32, n_steps: usize) -> Result<Self> {
        if step_minutes == 0 || 60 % step_minutes != 0 {
            return Err(TimeseriesError::BadStep(step_minutes));
        }
        let end = start + Duration::minutes(step_minutes as i64 * n_steps as i64);
        let one_year = start
            .with_year(start.year() + 1)
            .unwrap_or_else(|| start + Duration::days(365));
        if end != one_year {
            return Err(TimeseriesError::NotOneYear {
                start,
                step_minutes,
                n_steps,
            });
        }
        Ok(Self {
            start,
            step_minutes,
            n_steps,
        })
    }

    /// The calendar year `year` starting on 1 January 00:00.
    pub fn year(year: i32, step_minutes: u32) -> Result<Self> {
        if step_minutes == 0 || 60 % step_minutes != 0 {
            return Err(TimeseriesError::BadStep(step_minutes));
        }
        let start = NaiveDate::from_ymd_opt(year, 1, 1)
            .expect("valid year")
            .and_hms_opt(0, 0, 0)
            .expect("midnight");
        let days = if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
            366
        } else {
            365
        };
        Self::new(start, step_minutes, days * 24 * 60 / step_minutes as usize)
    }

    /// Truncated axis used by short synthetic instances and tests. Skips the
    /// one-year check.
    pub fn span(start: NaiveDateTime, step_minutes: u32, n_steps: usize) -> Result<Self> {
        if step_minutes == 0 || 60 % step_minutes != 0 {
            return Err(TimeseriesError::BadStep(step_minutes));
        }
        Ok(Self {
            start,
            step_minutes,
            n_steps,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn len(&self) -> usize {
        self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.n_steps == 0
    }

    /// Step duration in hours.
    pub fn step_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.step_minutes as i64 * t as i64)
    }

    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes) as usize
    }
}

/// A sequence of values aligned to a [`TimeAxis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    axis: TimeAxis,
    unit: Unit,
    values: Vec<f64>,
}

impl Profile {
    pub fn new(axis: TimeAxis, unit: Unit, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.len() {
            return Err(TimeseriesError::Length {
                expected: axis.len(),
                found: values.len(),
            });
        }
        for (row, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TimeseriesError::Missing { row });
            }
            if unit.non_negative() && v < 0.0 {
                return Err(TimeseriesError::Negative {
                    row,
                    value: v,
                    unit,
                });
            }
        }
        Ok(Self { axis, unit, values })
    }

    pub fn zeros(axis: TimeAxis, unit: Unit) -> Self {
        Self {
            axis,
            unit,
            values: vec![0.0; axis.len()],
        }
    }

    pub fn constant(axis: TimeAxis, unit: Unit, value: f64) -> Result<Self> {
        Self::new(axis, unit, vec![value; axis.len()])
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sum of values times step length (kWh for a kW profile).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axis.step_hours()
    }

    pub fn annual_energy_mwh(&self) -> f64 {
        self.integral() / 1000.0
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.axis,
            self.unit,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn ensure_same_axis(&self, other: &Profile) -> Result<()> {
        if self.axis != other.axis {
            return Err(TimeseriesError::AxisMismatch);
        }
        Ok(())
    }

    /// Element-wise sum of profiles sharing one axis and unit.
    pub fn sum<'a>(profiles: impl IntoIterator<Item = &'a Profile>) -> Result<Option<Profile>> {
        let mut acc: Option<Profile> = None;
        for p in profiles {
            match acc.as_mut() {
                None => acc = Some(p.clone()),
                Some(a) => {
                    a.ensure_same_axis(p)?;
                    if a.unit != p.unit {
                        return Err(TimeseriesError::AxisMismatch);
                    }
                    for (x, y) in a.values.iter_mut().zip(&p.values) {
                        *x += y;
                    }
                }
            }
        }
        Ok(acc)
    }
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
}

/// Reads a `timestamp,value` CSV. Timestamps are naive local time and must
/// advance by exactly the step given by the first two rows.
pub fn read_profile<R: Read>(reader: R, unit: Unit) -> Result<Profile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2
        || !headers[0].eq_ignore_ascii_case("timestamp")
        || !headers[1].eq_ignore_ascii_case("value")
    {
        return Err(TimeseriesError::Header(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut stamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row number, header excluded
        let row = i + 1;
        let ts = rec.get(0).unwrap_or("");
        let ts = parse_timestamp(ts).ok_or_else(|| TimeseriesError::Parse {
            row,
            what: "timestamp",
            text: ts.to_string(),
        })?;
        let raw = rec.get(1).unwrap_or("");
        if raw.is_empty() {
            return Err(TimeseriesError::Missing { row });
        }
        let v: f64 = raw.parse().map_err(|_| TimeseriesError::Parse {
            row,
            what: "value",
            text: raw.to_string(),
        })?;
        if !v.is_finite() {
            return Err(TimeseriesError::Missing { row });
        }
        if unit.non_negative() && v < 0.0 {
            return Err(TimeseriesError::Negative { row, value: v, unit });
        }
        if let Some(&prev) = stamps.last() {
            let prev: NaiveDateTime = prev;
            if ts <= prev {
                return Err(TimeseriesError::Duplicate { row, found: ts });
            }
            if stamps.len() >= 2 {
                let step = stamps[1] - stamps[0];
                if ts - prev != step {
                    return Err(TimeseriesError::Gap {
                        row,
                        expected: prev + step,
                    });
                }
            }
        }
        stamps.push(ts);
        values.push(v);
    }
    if stamps.len() < 2 {
        return Err(TimeseriesError::Empty);
    }
    let step = (stamps[1] - stamps[0]).num_minutes();
    let axis = TimeAxis::new(stamps[0], step as u32, stamps.len())?;
    Profile::new(axis, unit, values)
}

pub fn ingest_profile(path: impl AsRef<Path>, unit: Unit) -> Result<Profile> {
    let f = std::fs::File::open(path)?;
    read_profile(std::io::BufReader::new(f), unit)
}

/// Writes a profile in the same CSV format accepted by [`read_profile`].
pub fn write_profile<W: std::io::Write>(profile: &Profile, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "value"])?;
    for (t, v) in profile.values.iter().enumerate() {
        let ts = profile.axis.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string();
        w.write_record([ts, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Residential,
    Nonresidential,
}

impl FromStr for Archetype {
    type Err = TimeseriesError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "residential" => Ok(Archetype::Residential),
            "nonresidential" | "non-residential" | "non_residential" => {
                Ok(Archetype::Nonresidential)
            }
            _ => Err(TimeseriesError::UnknownArchetype(s.to_string())),
        }
    }
}

// Hourly shape factors, unnormalized.
const RESIDENTIAL_HOURLY: [f64; 24] = [
    0.45, 0.38, 0.35, 0.34, 0.35, 0.42, 0.65, 0.90, 0.85, 0.70, 0.65, 0.68, //
    0.78, 0.70, 0.62, 0.62, 0.72, 0.95, 1.25, 1.40, 1.30, 1.10, 0.85, 0.60,
];
const NONRESIDENTIAL_HOURLY: [f64; 24] = [
    0.30, 0.28, 0.28, 0.28, 0.30, 0.38, 0.60, 0.90, 1.15, 1.25, 1.28, 1.28, //
    1.22, 1.25, 1.28, 1.25, 1.15, 0.95, 0.70, 0.52, 0.42, 0.38, 0.34, 0.32,
];

impl Archetype {
    fn hourly(self) -> &'static [f64; 24] {
        match self {
            Archetype::Residential => &RESIDENTIAL_HOURLY,
            Archetype::Nonresidential => &NONRESIDENTIAL_HOURLY,
        }
    }

    fn day_factor(self, weekday: Weekday) -> f64 {
        let weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
        match (self, weekend) {
            (Archetype::Residential, true) => 1.12,
            (Archetype::Residential, false) => 1.0,
            (Archetype::Nonresidential, true) => 0.45,
            (Archetype::Nonresidential, false) => 1.0,
        }
    }
}

/// Seasonal factor peaking mid-winter, amplitude `amp`.
fn seasonal(day_of_year: u32, amp: f64) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * (day_of_year as f64 - 15.0) / 365.25;
    1.0 + amp * phase.cos()
}

/// Synthetic demand profile scaled to `annual_mwh`.
///
/// Shape = archetype hourly template (linearly interpolated within the hour)
/// × weekday/weekend factor × winter-peaking seasonal factor × seeded
/// multiplicative noise in [0.85, 1.15]. The result is rescaled so that its
/// integral equals the requested energy.
pub fn synthesize_load(
    axis: &TimeAxis,
    annual_mwh: f64,
    archetype: Archetype,
    seed: u64,
) -> Result<Profile> {
    if !(annual_mwh > 0.0) || !annual_mwh.is_finite() {
        return Err(TimeseriesError::NonPositiveEnergy(annual_mwh));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hourly = archetype.hourly();
    let mut values = Vec::with_capacity(axis.len());
    for t in 0..axis.len() {
        let ts = axis.timestamp(t);
        let h = ts.hour() as usize;
        let frac = ts.minute() as f64 / 60.0;
        let shape = hourly[h] * (1.0 - frac) + hourly[(h + 1) % 24] * frac;
        let noise = rng.gen_range(0.85..1.15);
        values.push(
            shape * archetype.day_factor(ts.weekday()) * seasonal(ts.ordinal(), 0.25) * noise,
        );
    }
    let raw = values.iter().sum::<f64>() * axis.step_hours();
    let k = annual_mwh * 1000.0 / raw;
    for v in values.iter_mut() {
        *v *= k;
    }
    Profile::new(*axis, Unit::Kw, values)
}

/// Synthetic global horizontal irradiance and air temperature.
#[derive(Debug, Clone)]
pub struct Meteo {
    pub ghi: Profile,
    pub temperature: Profile,
}

impl Meteo {
    pub fn new(ghi: Profile, temperature: Profile) -> Result<Self> {
        ghi.ensure_same_axis(&temperature)?;
        Ok(Self { ghi, temperature })
    }

    pub fn axis(&self) -> &TimeAxis {
        self.ghi.axis()
    }
}

/// Clear-sky irradiance (Haurwitz) scaled by a seeded daily clearness index,
/// plus a seasonal/diurnal temperature model. `latitude_deg` defaults to a
/// Swiss plateau site in the bundled dataset.
pub fn synthesize_meteo(axis: &TimeAxis, latitude_deg: f64, seed: u64) -> Meteo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat = latitude_deg.to_radians();
    let mut ghi = Vec::with_capacity(axis.len());
    let mut temp = Vec::with_capacity(axis.len());
    let mut clearness = 0.6;
    let mut day_temp_offset = 0.0;
    let mut current_day = None;
    for t in 0..axis.len() {
        let ts = axis.timestamp(t);
        let doy = ts.ordinal() as f64;
        if current_day != Some(ts.ordinal()) {
            current_day = Some(ts.ordinal());
            // persistent weather: AR(1) on clearness, season-dependent mean
            let summer = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();
            let mean = 0.35 + 0.35 * summer;
            let shock: f64 = rng.gen_range(-0.35..0.35);
            clearness = (0.5 * clearness + 0.5 * mean + shock).clamp(0.05, 1.0);
            day_temp_offset = rng.gen_range(-3.0..3.0);
        }
        // solar position at mid-step
        let hour = ts.hour() as f64 + (ts.minute() as f64 + axis.step_minutes() as f64 / 2.0) / 60.0;
        let decl = 23.45f64.to_radians()
            * (2.0 * std::f64::consts::PI * (284.0 + doy) / 365.0).sin();
        let hour_angle = (15.0 * (hour - 12.5)).to_radians();
        let cos_z = lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos();
        let clear = if cos_z > 0.01 {
            1098.0 * cos_z * (-0.057 / cos_z).exp()
        } else {
            0.0
        };
        ghi.push((clear * clearness).max(0.0));
        let seasonal_t = 10.0 - 9.0 * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();
        let diurnal = 4.0 * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin();
        temp.push(seasonal_t + diurnal + day_temp_offset + 2.0 * (clearness - 0.5));
    }
    Meteo {
        ghi: Profile::new(*axis, Unit::WattsPerSquareMetre, ghi).expect("non-negative"),
        temperature: Profile::new(*axis, Unit::Celsius, temp).expect("finite"),
    }
}

fn default_p_nom() -> f64 {
    315.0
}
fn default_module_area() -> f64 {
    1.6310
}
fn default_temp_coeff() -> f64 {
    -0.004
}
fn default_noct() -> f64 {
    45.0
}
fn default_derate() -> f64 {
    1.0
}

/// Module technology; defaults are a 315 W, 1.631 m² monocrystalline module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    #[serde(default = "default_p_nom")]
    pub p_nom_w: f64,
    #[serde(default = "default_module_area")]
    pub area_m2: f64,
    #[serde(default = "default_temp_coeff")]
    pub temp_coeff: f64,
    #[serde(default = "default_noct")]
    pub noct_c: f64,
    /// Lumped orientation and system losses, 1.0 = none.
    #[serde(default = "default_derate")]
    pub derate: f64,
}

impl Default for ModuleSpec {
    fn default() -> Self {
        Self {
            p_nom_w: default_p_nom(),
            area_m2: default_module_area(),
            temp_coeff: default_temp_coeff(),
            noct_c: default_noct(),
            derate: default_derate(),
        }
    }
}

/// Rooftop PV array of identical modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvDesign {
    pub modules: u32,
    pub module: ModuleSpec,
    pub roof_area_m2: f64,
}

impl PvDesign {
    pub fn new(modules: u32, module: ModuleSpec, roof_area_m2: f64) -> Result<Self> {
        if !(module.p_nom_w >= 0.0) || !(module.area_m2 > 0.0) || !(module.derate >= 0.0) {
            return Err(TimeseriesError::InvalidDesign(
                "module power, area and derate must be positive",
            ));
        }
        let installed = modules as f64 * module.area_m2;
        // small slack so that max_for_roof never trips its own check
        if installed > ROOF_USE_FRACTION * roof_area_m2 * (1.0 + 1e-12) {
            return Err(TimeseriesError::RoofExceeded {
                installed,
                roof: roof_area_m2,
            });
        }
        Ok(Self {
            modules,
            module,
            roof_area_m2,
        })
    }

    /// Largest module count fitting on 70% of the roof.
    pub fn max_modules(module: &ModuleSpec, roof_area_m2: f64) -> u32 {
        let usable = ROOF_USE_FRACTION * roof_area_m2.max(0.0);
        let n = (usable / module.area_m2).floor();
        // guard against 0.7*100/1.631 style rounding just below an integer
        let n = if ((n + 1.0) * module.area_m2 - usable).abs() < 1e-9 {
            n + 1.0
        } else {
            n
        };
        n as u32
    }

    pub fn max_for_roof(module: ModuleSpec, roof_area_m2: f64) -> Result<Self> {
        Self::new(Self::max_modules(&module, roof_area_m2), module, roof_area_m2)
    }

    /// Array not bound to a roof (large producer). The roof is set to the
    /// minimum area that admits the modules.
    pub fn freestanding(modules: u32, module: ModuleSpec) -> Self {
        Self {
            modules,
            module,
            roof_area_m2: modules as f64 * module.area_m2 / ROOF_USE_FRACTION,
        }
    }

    pub fn kwp(&self) -> f64 {
        self.modules as f64 * self.module.p_nom_w / 1000.0
    }

    pub fn installed_area_m2(&self) -> f64 {
        self.modules as f64 * self.module.area_m2
    }
}

/// AC output in kW from GHI (W/m²) and air temperature (°C):
/// `μ · P_nom · G/1000 · [1 + γ (T_cell − 25)] · derate / 1000` with
/// `T_cell = T + G (NOCT − 20)/800`, floored at zero.
pub fn pv_production(design: &PvDesign, ghi: &Profile, temp: &Profile) -> Result<Profile> {
    ghi.ensure_same_axis(temp)?;
    let m = &design.module;
    let peak_kw = design.modules as f64 * m.p_nom_w / 1000.0;
    let values = ghi
        .values()
        .iter()
        .zip(temp.values())
        .map(|(&g, &t)| {
            let t_cell = t + g * (m.noct_c - 20.0) / 800.0;
            let p = peak_kw * (g / 1000.0) * (1.0 + m.temp_coeff * (t_cell - 25.0)) * m.derate;
            p.max(0.0)
        })
        .collect();
    Profile::new(*ghi.axis(), Unit::Kw, values)
}

/// A metered building and its connection point.
#[derive(Debug, Clone)]
pub struct Building {
    pub id: String,
    pub bus_id: String,
    pub load: Profile,
    pub roof_area_m2: f64,
    pub pv: Option<PvDesign>,
}

impl Building {
    pub fn annual_load_mwh(&self) -> f64 {
        self.load.annual_energy_mwh()
    }
}
