use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use celsim_core::scenario::{ScenarioSpec, SweepSpec};
use serde::Deserialize;

/// On-disk run configuration. Relative paths are taken from the config
/// file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub scenarios: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Batch {
    List(Vec<ScenarioSpec>),
    Wrapped { scenarios: Vec<ScenarioSpec> },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset);
        cfg.scenarios.as_mut().map(fix);
        cfg.sweep.as_mut().map(fix);
        cfg.out.as_mut().map(fix);
        for p in [Some(&cfg.dataset), cfg.scenarios.as_ref(), cfg.sweep.as_ref()].into_iter().flatten() {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(cfg)
    }

    pub fn scenarios(&self) -> Result<Vec<ScenarioSpec>> {
        let Some(path) = &self.scenarios else {
            bail!("config names no scenario file");
        };
        let batch: Batch = serde_json::from_str(&read(path)?)
            .with_context(|| format!("{}: invalid scenario batch", path.display()))?;
        let list = match batch {
            Batch::List(l) => l,
            Batch::Wrapped { scenarios } => scenarios,
        };
        let mut seen = BTreeSet::new();
        for s in &list {
            if !seen.insert(s.id.as_str()) {
                bail!("{}: scenario id {} appears twice", path.display(), s.id);
            }
            s.validate().with_context(|| format!("scenario {}", s.id))?;
        }
        Ok(list)
    }

    pub fn sweep(&self, over: Option<&Path>) -> Result<SweepSpec> {
        let path = match (over, &self.sweep) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => bail!("no sweep file given"),
        };
        serde_json::from_str(&read(&path)?).with_context(|| format!("{}: invalid sweep", path.display()))
    }
}
