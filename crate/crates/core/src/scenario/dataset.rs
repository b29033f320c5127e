//! Case-study inputs: buildings, weather, network, tariffs and economics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, ScenarioError};
use crate::aging::AgingParams;
use crate::dispatch::{BatteryDesign, EconomicParams, PriceSeries};
use crate::powerflow::LvNetwork;
use crate::tariff::TariffSchedule;
use crate::timeseries::{
    ingest_profile, pv_production, synthesize_load, synthesize_meteo, Archetype, Building, Meteo,
    ModuleSpec, Profile, PvDesign, TimeAxis, Unit,
};

fn default_archetype() -> Archetype {
    Archetype::Residential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub id: String,
    /// Connection bus; falls back to the network's building map.
    #[serde(default)]
    pub bus: Option<String>,
    pub annual_mwh: f64,
    #[serde(default = "default_archetype")]
    pub archetype: Archetype,
    pub roof_area_m2: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Measured load in kW; replaces the synthetic profile.
    #[serde(default)]
    pub load_csv: Option<PathBuf>,
}

fn default_large_consumer_mwh() -> f64 {
    22.0
}
fn default_large_producer_modules() -> u32 {
    547
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeConsumerSpec {
    #[serde(default = "default_large_consumer_mwh")]
    pub annual_mwh: f64,
    #[serde(default = "default_archetype")]
    pub archetype: Archetype,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LargeConsumerSpec {
    fn default() -> Self {
        Self {
            annual_mwh: default_large_consumer_mwh(),
            archetype: default_archetype(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeProducerSpec {
    #[serde(default = "default_large_producer_modules")]
    pub modules: u32,
}

impl Default for LargeProducerSpec {
    fn default() -> Self {
        Self {
            modules: default_large_producer_modules(),
        }
    }
}

/// External tariff and the two internal variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSet {
    pub external: TariffSchedule,
    pub internal_double: TariffSchedule,
    pub internal_dynamic: TariffSchedule,
}

impl Default for TariffSet {
    fn default() -> Self {
        Self {
            external: TariffSchedule::external_double_2025(),
            internal_double: TariffSchedule::internal_double_2025(),
            internal_dynamic: TariffSchedule::internal_dynamic_2025(),
        }
    }
}

fn default_year() -> i32 {
    2025
}
fn default_step() -> u32 {
    15
}
fn default_latitude() -> f64 {
    46.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_year")]
    pub year: i32,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
    #[serde(default = "default_latitude")]
    pub latitude_deg: f64,
    #[serde(default)]
    pub meteo_seed: u64,
    /// Measured irradiance (W/m²) and temperature (°C) replace the
    /// synthetic weather when both are given.
    #[serde(default)]
    pub ghi_csv: Option<PathBuf>,
    #[serde(default)]
    pub temperature_csv: Option<PathBuf>,
    pub network: PathBuf,
    #[serde(default)]
    pub tariffs: Option<PathBuf>,
    pub buildings: Vec<BuildingSpec>,
    #[serde(default)]
    pub large_consumer: LargeConsumerSpec,
    #[serde(default)]
    pub large_producer: LargeProducerSpec,
    #[serde(default)]
    pub economics: EconomicParams,
    #[serde(default)]
    pub aging: AgingParams,
    #[serde(default)]
    pub module: ModuleSpec,
    #[serde(default = "default_battery")]
    pub battery: BatteryDesign,
}

fn default_battery() -> BatteryDesign {
    BatteryDesign::with_capacity(1.0)
}

/// A loaded dataset with all profiles materialized.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub axis: TimeAxis,
    pub meteo: Meteo,
    pub buildings: Vec<Building>,
    pub network: LvNetwork,
    pub tariffs: TariffSet,
    pub external_prices: PriceSeries,
    /// Output of a single module, kW.
    pub unit_pv: Profile,
    pub large_consumer: Profile,
    pub large_producer: PvDesign,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let spec: DatasetSpec = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_spec(spec, base)
    }

    /// Builds the dataset, resolving relative file references against `base`.
    pub fn from_spec(spec: DatasetSpec, base: &Path) -> Result<Self> {
        let axis = TimeAxis::year(spec.year, spec.step_minutes)?;
        let net_path = resolve(base, &spec.network);
        let network = LvNetwork::load(&net_path).map_err(|e| ScenarioError::Network {
            path: net_path.display().to_string(),
            source: e,
        })?;
        let tariffs = match &spec.tariffs {
            Some(p) => read_json(&resolve(base, p))?,
            None => TariffSet::default(),
        };
        for t in [&tariffs.external, &tariffs.internal_double, &tariffs.internal_dynamic] {
            t.validate()?;
        }
        let meteo = match (&spec.ghi_csv, &spec.temperature_csv) {
            (Some(g), Some(t)) => Meteo::new(
                ingest_profile(resolve(base, g), Unit::WattsPerSquareMetre)?,
                ingest_profile(resolve(base, t), Unit::Celsius)?,
            )?,
            (None, None) => synthesize_meteo(&axis, spec.latitude_deg, spec.meteo_seed),
            _ => {
                return Err(ScenarioError::Invalid(
                    "ghi_csv and temperature_csv must be given together".into(),
                ))
            }
        };
        if *meteo.axis() != axis {
            return Err(ScenarioError::Invalid("weather series do not cover the dataset year".into()));
        }
        let mut buildings = Vec::with_capacity(spec.buildings.len());
        let mut ids = std::collections::BTreeSet::new();
        for (k, b) in spec.buildings.iter().enumerate() {
            if !ids.insert(b.id.clone()) {
                return Err(ScenarioError::Invalid(format!("duplicate building id {}", b.id)));
            }
            let bus = match &b.bus {
                Some(bus) => bus.clone(),
                None => network
                    .building_bus(&b.id)
                    .map(String::from)
                    .ok_or_else(|| ScenarioError::Invalid(format!("building {} has no bus", b.id)))?,
            };
            if network.bus_index(&bus).is_none() {
                return Err(ScenarioError::Invalid(format!("building {} on unknown bus {bus}", b.id)));
            }
            let load = match &b.load_csv {
                Some(p) => ingest_profile(resolve(base, p), Unit::Kw)?,
                None => synthesize_load(&axis, b.annual_mwh, b.archetype, b.seed.unwrap_or(1000 + k as u64))?,
            };
            if *load.axis() != axis {
                return Err(ScenarioError::Invalid(format!("load of {} is not on the dataset axis", b.id)));
            }
            buildings.push(Building {
                id: b.id.clone(),
                bus_id: bus,
                load,
                roof_area_m2: b.roof_area_m2,
                pv: None,
            });
        }
        let unit_pv = pv_production(&PvDesign::freestanding(1, spec.module), &meteo.ghi, &meteo.temperature)?;
        let external_prices = PriceSeries::from_tariff(&axis, &tariffs.external, Some(&meteo.ghi))?;
        let large_consumer = synthesize_load(
            &axis,
            spec.large_consumer.annual_mwh,
            spec.large_consumer.archetype,
            spec.large_consumer.seed,
        )?;
        let large_producer = PvDesign::freestanding(spec.large_producer.modules, spec.module);
        Ok(Self {
            spec,
            axis,
            meteo,
            buildings,
            network,
            tariffs,
            external_prices,
            unit_pv,
            large_consumer,
            large_producer,
        })
    }

    pub fn building(&self, id: &str) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    pub fn economics(&self) -> &EconomicParams {
        &self.spec.economics
    }

    /// PV output of `modules` modules, kW.
    pub fn pv_profile(&self, modules: u32) -> Profile {
        self.unit_pv
            .scaled(modules as f64)
            .expect("non-negative module count")
    }

    /// Largest array the building's roof admits.
    pub fn max_pv(&self, building: &Building) -> u32 {
        PvDesign::max_modules(&self.spec.module, building.roof_area_m2)
    }

    /// Annual production of a roof-filling array over annual load.
    pub fn pv_potential_ratio(&self, building: &Building) -> f64 {
        let pv = self.unit_pv.integral() * self.max_pv(building) as f64;
        let load = building.load.integral();
        if load > 0.0 {
            pv / load
        } else {
            f64::INFINITY
        }
    }

    /// Human-readable coverage checks; empty when everything is consistent.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.network.warnings() {
            out.push(format!("network: {w}"));
        }
        for b in &self.buildings {
            if b.load.values().iter().all(|&v| v == 0.0) {
                out.push(format!("building {}: load is zero all year", b.id));
            }
        }
        out
    }
}
