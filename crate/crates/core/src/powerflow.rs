//! Balanced single-line power flow on radial LV feeders by backward-forward
//! sweep, with per-step and yearly KPI extraction.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RATED_A: f64 = 120.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("duplicate bus id {0}")]
    DuplicateBus(String),
    #[error("duplicate line id {0}")]
    DuplicateLine(String),
    #[error("line {line} references unknown bus {bus}")]
    UnknownBus { line: String, bus: String },
    #[error("non-radial network: line {0} closes a loop")]
    NonRadial(String),
    #[error("bus {0} is not connected to the transformer")]
    Disconnected(String),
    #[error("line {0} has negative impedance")]
    NegativeImpedance(String),
    #[error("invalid transformer: {0}")]
    Transformer(&'static str),
    #[error("no slack bus: {0}")]
    Slack(String),
    #[error("building {building} mapped to unknown bus {bus}")]
    BuildingBus { building: String, bus: String },
    #[error("sweep did not converge in {iterations} iterations (last change {delta:e} p.u.)")]
    NotConverged { iterations: usize, delta: f64 },
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<PowerFlowError>,
    },
    #[error("injection for unknown bus {0}")]
    InjectionBus(String),
    #[error("injection series have different lengths")]
    InjectionLength,
    #[error("power factor must lie in (0, 1]")]
    PowerFactor,
    #[error("network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PowerFlowError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: String,
}

fn default_rated() -> f64 {
    DEFAULT_RATED_A
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub r1_ohm: f64,
    pub x1_ohm: f64,
    #[serde(default = "default_rated", rename = "rated_a")]
    pub rated_a: f64,
}

fn default_uk() -> f64 {
    4.0
}
fn default_xr() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub s_kva: f64,
    pub v_hv_kv: f64,
    pub v_lv_kv: f64,
    #[serde(default = "default_uk")]
    pub uk_pct: f64,
    #[serde(default = "default_xr")]
    pub xr: f64,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        Self {
            s_kva: 630.0,
            v_hv_kv: 20.0,
            v_lv_kv: 0.4,
            uk_pct: default_uk(),
            xr: default_xr(),
        }
    }
}

impl TransformerSpec {
    /// Series impedance in p.u. on its own rating.
    pub fn impedance_pu(&self) -> Complex64 {
        let z = self.uk_pct / 100.0;
        let r = z / (1.0 + self.xr * self.xr).sqrt();
        Complex64::new(r, r * self.xr)
    }
}

/// Network description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub transformer: TransformerSpec,
    /// LV terminal of the transformer; defaults to the only bus that never
    /// appears as a line's `to` end.
    #[serde(default)]
    pub slack_bus: Option<String>,
    #[serde(default)]
    pub buildings: BTreeMap<String, String>,
}

/// A validated radial network in per-unit form.
///
/// Node 0 is the MV terminal of the transformer (the slack at 1.0 p.u.),
/// node `k + 1` is bus `k`. Every non-slack node has exactly one parent
/// branch; `order` lists nodes so that parents precede children.
#[derive(Debug, Clone)]
pub struct LvNetwork {
    spec: NetworkSpec,
    bus_index: HashMap<String, usize>,
    root: usize,
    parent: Vec<usize>,
    /// Line index feeding each bus, `None` for the root.
    parent_line: Vec<Option<usize>>,
    z_pu: Vec<Complex64>,
    order: Vec<usize>,
    s_base_kva: f64,
    i_base_a: f64,
    z_base_ohm: f64,
    warnings: Vec<String>,
}

impl LvNetwork {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        Self::new(spec)
    }

    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let t = spec.transformer;
        if !(t.s_kva > 0.0) || !(t.v_lv_kv > 0.0) || !(t.uk_pct >= 0.0) || !(t.xr >= 0.0) {
            return Err(PowerFlowError::Transformer(
                "rating and voltage must be positive, u_k and X/R non-negative",
            ));
        }
        let mut bus_index = HashMap::new();
        for (k, b) in spec.buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), k).is_some() {
                return Err(PowerFlowError::DuplicateBus(b.id.clone()));
            }
        }
        let mut seen_lines = HashMap::new();
        let mut warnings = Vec::new();
        for (k, l) in spec.lines.iter().enumerate() {
            if seen_lines.insert(l.id.clone(), k).is_some() {
                return Err(PowerFlowError::DuplicateLine(l.id.clone()));
            }
            for end in [&l.from, &l.to] {
                if !bus_index.contains_key(end) {
                    return Err(PowerFlowError::UnknownBus {
                        line: l.id.clone(),
                        bus: end.clone(),
                    });
                }
            }
            if l.r1_ohm < 0.0 || l.x1_ohm < 0.0 {
                return Err(PowerFlowError::NegativeImpedance(l.id.clone()));
            }
            if l.r1_ohm == 0.0 || l.x1_ohm == 0.0 {
                warnings.push(format!(
                    "line {}: R1 = {} Ω, X1 = {} Ω (zero component)",
                    l.id, l.r1_ohm, l.x1_ohm
                ));
            }
            if !(l.rated_a > 0.0) {
                warnings.push(format!("line {}: rated current not positive", l.id));
            }
        }
        let root_bus = match &spec.slack_bus {
            Some(id) => *bus_index
                .get(id)
                .ok_or_else(|| PowerFlowError::Slack(format!("unknown bus {id}")))?,
            None => {
                let mut fed = vec![false; spec.buses.len()];
                for l in &spec.lines {
                    fed[bus_index[&l.to]] = true;
                }
                let roots: Vec<usize> = (0..fed.len()).filter(|&k| !fed[k]).collect();
                match roots.as_slice() {
                    [r] => *r,
                    [] => return Err(PowerFlowError::Slack("every bus is fed by a line".into())),
                    _ => {
                        return Err(PowerFlowError::Slack(format!(
                            "ambiguous, candidates {}",
                            roots.iter().map(|&r| spec.buses[r].id.as_str()).collect::<Vec<_>>().join(", ")
                        )))
                    }
                }
            }
        };
        for (b, bus) in &spec.buildings {
            if !bus_index.contains_key(bus) {
                return Err(PowerFlowError::BuildingBus {
                    building: b.clone(),
                    bus: bus.clone(),
                });
            }
        }

        // undirected adjacency, BFS from the root
        let n = spec.buses.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (k, l) in spec.lines.iter().enumerate() {
            let (a, b) = (bus_index[&l.from], bus_index[&l.to]);
            if a == b {
                return Err(PowerFlowError::NonRadial(l.id.clone()));
            }
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        let s_base = t.s_kva;
        let z_base = t.v_lv_kv * t.v_lv_kv * 1000.0 / s_base;
        let i_base = s_base / (3f64.sqrt() * t.v_lv_kv);
        let mut parent = vec![0usize; n + 1];
        let mut parent_line = vec![None; n + 1];
        let mut z_pu = vec![Complex64::new(0.0, 0.0); n + 1];
        let mut visited = vec![false; n];
        let mut used_line = vec![false; spec.lines.len()];
        let mut order = vec![0usize];
        let mut queue = VecDeque::from([root_bus]);
        visited[root_bus] = true;
        parent[root_bus + 1] = 0;
        z_pu[root_bus + 1] = t.impedance_pu();
        while let Some(u) = queue.pop_front() {
            order.push(u + 1);
            for &(v, k) in &adj[u] {
                if used_line[k] {
                    continue;
                }
                used_line[k] = true;
                if visited[v] {
                    return Err(PowerFlowError::NonRadial(spec.lines[k].id.clone()));
                }
                visited[v] = true;
                parent[v + 1] = u + 1;
                parent_line[v + 1] = Some(k);
                let l = &spec.lines[k];
                z_pu[v + 1] = Complex64::new(l.r1_ohm, l.x1_ohm) / z_base;
                queue.push_back(v);
            }
        }
        if let Some(k) = visited.iter().position(|v| !v) {
            return Err(PowerFlowError::Disconnected(spec.buses[k].id.clone()));
        }
        Ok(Self {
            spec,
            bus_index,
            root: root_bus,
            parent,
            parent_line,
            z_pu,
            order,
            s_base_kva: s_base,
            i_base_a: i_base,
            z_base_ohm: z_base,
            warnings,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn n_buses(&self) -> usize {
        self.spec.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.spec.lines.len()
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = &str> {
        self.spec.buses.iter().map(|b| b.id.as_str())
    }

    pub fn line_ids(&self) -> impl Iterator<Item = &str> {
        self.spec.lines.iter().map(|l| l.id.as_str())
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn slack_bus(&self) -> &str {
        &self.spec.buses[self.root].id
    }

    pub fn building_bus(&self, building: &str) -> Option<&str> {
        self.spec.buildings.get(building).map(|s| s.as_str())
    }

    pub fn base_current_a(&self) -> f64 {
        self.i_base_a
    }

    pub fn base_impedance_ohm(&self) -> f64 {
        self.z_base_ohm
    }

    /// Σ |Z| in Ω of the lines between the transformer and `bus`.
    pub fn electrical_distance(&self, bus: &str) -> Option<f64> {
        let mut node = self.bus_index(bus)? + 1;
        let mut d = 0.0;
        while let Some(k) = self.parent_line[node] {
            let l = &self.spec.lines[k];
            d += l.r1_ohm.hypot(l.x1_ohm);
            node = self.parent[node];
        }
        Some(d)
    }

    /// Line ids on the path from the transformer to `bus`, root side first.
    pub fn path_lines(&self, bus: &str) -> Option<Vec<&str>> {
        let mut node = self.bus_index(bus)? + 1;
        let mut out = Vec::new();
        while let Some(k) = self.parent_line[node] {
            out.push(self.spec.lines[k].id.as_str());
            node = self.parent[node];
        }
        out.reverse();
        Some(out)
    }

    /// Bus farthest from the transformer by [`Self::electrical_distance`];
    /// ties go to the smallest id.
    pub fn farthest_bus(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for id in self.bus_ids() {
            let d = self.electrical_distance(id).unwrap_or(0.0);
            best = match best {
                Some((b, bd)) if bd > d || (bd == d && b < id) => Some((b, bd)),
                _ => Some((id, d)),
            };
        }
        best.map(|b| b.0).unwrap_or("")
    }

    /// Copy with all line impedances scaled by `factor`.
    pub fn with_line_impedance_scaled(&self, factor: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        for l in &mut spec.lines {
            l.r1_ohm *= factor;
            l.x1_ohm *= factor;
        }
        Self::new(spec)
    }
}

/// Power-flow solution for one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFlow {
    /// Magnitude per bus, p.u., in bus order.
    pub voltages: Vec<f64>,
    /// Per line, in line order.
    pub currents_a: Vec<f64>,
    pub loading_pct: Vec<f64>,
    /// Apparent power through the transformer, kVA.
    pub transformer_kva: f64,
    /// Active power drawn from MV, kW (negative when feeding back).
    pub transformer_kw: f64,
    pub feed_in_kw: f64,
    pub drawn_kw: f64,
    pub losses_kw: f64,
    pub iterations: usize,
    /// Largest nodal complex power mismatch at the solution, p.u.
    pub mismatch_pu: f64,
}

impl StepFlow {
    /// Voltage magnitude on the transformer LV terminal, p.u.
    pub fn transformer_voltage(&self, net: &LvNetwork) -> f64 {
        self.voltages[net.root]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub power_factor: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            power_factor: 1.0,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// Solves one step. `injections_kw[k]` is the net consumption of bus `k`
/// (load − generation − battery discharge + charge), kW.
pub fn solve_step(net: &LvNetwork, injections_kw: &[f64], options: SolveOptions) -> Result<StepFlow> {
    if injections_kw.len() != net.n_buses() {
        return Err(PowerFlowError::InjectionLength);
    }
    if !(options.power_factor > 0.0 && options.power_factor <= 1.0) {
        return Err(PowerFlowError::PowerFactor);
    }
    let nodes = net.n_buses() + 1;
    let tan_phi = (1.0 - options.power_factor.powi(2)).sqrt() / options.power_factor;
    let mut s = vec![Complex64::new(0.0, 0.0); nodes];
    for (k, &p) in injections_kw.iter().enumerate() {
        s[k + 1] = Complex64::new(p, p * tan_phi) / net.s_base_kva;
    }
    let one = Complex64::new(1.0, 0.0);
    let mut v = vec![one; nodes];
    let mut j = vec![Complex64::new(0.0, 0.0); nodes];
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    while delta >= options.tolerance {
        if iterations == options.max_iterations {
            return Err(PowerFlowError::NotConverged { iterations, delta });
        }
        iterations += 1;
        for k in 1..nodes {
            j[k] = (s[k] / v[k]).conj();
        }
        for &k in net.order.iter().skip(1).rev() {
            let p = net.parent[k];
            if p != 0 {
                let jk = j[k];
                j[p] += jk;
            }
        }
        delta = 0.0;
        for &k in net.order.iter().skip(1) {
            let new = v[net.parent[k]] - net.z_pu[k] * j[k];
            delta = delta.max((new - v[k]).norm());
            v[k] = new;
        }
    }
    // branch currents consistent with the final voltages
    for k in 1..nodes {
        j[k] = (s[k] / v[k]).conj();
    }
    for &k in net.order.iter().skip(1).rev() {
        let p = net.parent[k];
        if p != 0 {
            let jk = j[k];
            j[p] += jk;
        }
    }
    let mut mismatch: f64 = 0.0;
    for k in 1..nodes {
        // branch voltage residual under the final currents, as power
        let residual = v[net.parent[k]] - net.z_pu[k] * j[k] - v[k];
        mismatch = mismatch.max((residual * j[k].conj()).norm());
    }
    let losses: f64 = j.iter().zip(&net.z_pu).skip(1).map(|(jk, z)| jk.norm_sqr() * z.re).sum();
    let tr_node = net.root + 1;
    let s_tr = v[0] * j[tr_node].conj() * net.s_base_kva;
    let mut currents = vec![0.0; net.n_lines()];
    let mut loading = vec![0.0; net.n_lines()];
    for (jk, parent_line) in j.iter().zip(&net.parent_line).skip(1) {
        if let Some(line) = *parent_line {
            let amps = jk.norm() * net.i_base_a;
            currents[line] = amps;
            loading[line] = amps / net.spec.lines[line].rated_a * 100.0;
        }
    }
    Ok(StepFlow {
        voltages: v[1..].iter().map(|x| x.norm()).collect(),
        currents_a: currents,
        loading_pct: loading,
        transformer_kva: s_tr.norm(),
        transformer_kw: s_tr.re,
        feed_in_kw: (-s_tr.re).max(0.0),
        drawn_kw: s_tr.re.max(0.0),
        losses_kw: losses * net.s_base_kva,
        iterations,
        mismatch_pu: mismatch,
    })
}

/// Nodal net consumption for each step, kW: `series[bus][t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalSeries {
    pub by_bus: BTreeMap<String, Vec<f64>>,
}

impl NodalSeries {
    /// Adds `values` to the series of `bus`.
    pub fn add(&mut self, bus: &str, values: &[f64]) -> Result<()> {
        let e = self
            .by_bus
            .entry(bus.to_string())
            .or_insert_with(|| vec![0.0; values.len()]);
        if e.len() != values.len() {
            return Err(PowerFlowError::InjectionLength);
        }
        for (a, b) in e.iter_mut().zip(values) {
            *a += b;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_bus.values().next().map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flows for every step of a year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearFlow {
    pub bus_ids: Vec<String>,
    pub line_ids: Vec<String>,
    pub steps: Vec<StepFlow>,
}

/// Solves every step in parallel. Results are ordered by step regardless
/// of scheduling.
pub fn run_year(net: &LvNetwork, nodal: &NodalSeries, options: SolveOptions) -> Result<YearFlow> {
    let n = nodal.len();
    let mut columns: Vec<Option<&Vec<f64>>> = vec![None; net.n_buses()];
    for (bus, series) in &nodal.by_bus {
        let k = net
            .bus_index(bus)
            .ok_or_else(|| PowerFlowError::InjectionBus(bus.clone()))?;
        if series.len() != n {
            return Err(PowerFlowError::InjectionLength);
        }
        columns[k] = Some(series);
    }
    let steps = (0..n)
        .into_par_iter()
        .map(|t| {
            let inj: Vec<f64> = columns.iter().map(|c| c.map_or(0.0, |s| s[t])).collect();
            solve_step(net, &inj, options).map_err(|e| PowerFlowError::AtStep {
                step: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(YearFlow {
        bus_ids: net.bus_ids().map(String::from).collect(),
        line_ids: net.line_ids().map(String::from).collect(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineLoading {
    pub max_pct: f64,
    pub median_pct: f64,
}

impl YearFlow {
    pub fn max_feed_in_kw(&self) -> f64 {
        self.steps.iter().map(|s| s.feed_in_kw).fold(0.0, f64::max)
    }

    pub fn max_drawn_kw(&self) -> f64 {
        self.steps.iter().map(|s| s.drawn_kw).fold(0.0, f64::max)
    }

    pub fn max_mismatch_pu(&self) -> f64 {
        self.steps.iter().map(|s| s.mismatch_pu).fold(0.0, f64::max)
    }

    pub fn line_loading(&self) -> Vec<LineLoading> {
        (0..self.line_ids.len())
            .map(|k| {
                let mut v: Vec<f64> = self.steps.iter().map(|s| s.loading_pct[k]).collect();
                v.sort_by(f64::total_cmp);
                LineLoading {
                    max_pct: v.last().copied().unwrap_or(0.0),
                    median_pct: percentile_sorted(&v, 50.0).unwrap_or(0.0),
                }
            })
            .collect()
    }

    pub fn voltage_stats(&self) -> VoltageStats {
        let series: Vec<Vec<f64>> = (0..self.bus_ids.len())
            .map(|k| self.steps.iter().map(|s| s.voltages[k]).collect())
            .collect();
        voltage_stats(&self.bus_ids, &series)
    }
}

/// Linear-interpolation percentile of ascending data (`q` in percent).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme samples within 1.5 IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl BoxStats {
    pub fn from_sorted(sorted: &[f64]) -> Option<Self> {
        let q1 = percentile_sorted(sorted, 25.0)?;
        let q3 = percentile_sorted(sorted, 75.0)?;
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(Self {
            min: sorted[0],
            q1,
            median: percentile_sorted(sorted, 50.0)?,
            q3,
            max: *sorted.last()?,
            whisker_low: sorted.iter().copied().find(|&x| x >= lo_fence)?,
            whisker_high: sorted.iter().rev().copied().find(|&x| x <= hi_fence)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusVoltageStats {
    pub bus: String,
    /// 95th percentile of the samples above 1 p.u.
    pub over_p95: Option<f64>,
    /// Voltage whose deviation below 1 p.u. is exceeded by only 5% of the
    /// under-voltage samples (their 5th percentile).
    pub under_p95: Option<f64>,
    pub over_count: usize,
    pub under_count: usize,
    pub distribution: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageStats {
    pub buses: Vec<BusVoltageStats>,
    /// Box statistics of the per-bus over-voltage percentiles.
    pub over_box: Option<BoxStats>,
    pub under_box: Option<BoxStats>,
}

/// Per-bus over/under-voltage percentiles from voltage series in p.u.
pub fn voltage_stats(bus_ids: &[String], series: &[Vec<f64>]) -> VoltageStats {
    let buses: Vec<BusVoltageStats> = bus_ids
        .iter()
        .zip(series)
        .map(|(id, s)| {
            let mut all = s.clone();
            all.sort_by(f64::total_cmp);
            let over: Vec<f64> = all.iter().copied().filter(|&v| v > 1.0).collect();
            let under: Vec<f64> = all.iter().copied().filter(|&v| v < 1.0).collect();
            BusVoltageStats {
                bus: id.clone(),
                over_p95: percentile_sorted(&over, 95.0),
                under_p95: percentile_sorted(&under, 5.0),
                over_count: over.len(),
                under_count: under.len(),
                distribution: BoxStats::from_sorted(&all),
            }
        })
        .collect();
    let collect = |f: fn(&BusVoltageStats) -> Option<f64>| {
        let mut v: Vec<f64> = buses.iter().filter_map(f).collect();
        v.sort_by(f64::total_cmp);
        BoxStats::from_sorted(&v)
    };
    VoltageStats {
        over_box: collect(|b| b.over_p95),
        under_box: collect(|b| b.under_p95),
        buses,
    }
}
