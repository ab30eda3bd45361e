//! End-to-end experiment plumbing: configuration, scenario files, the
//! benchmark runner and the post-hoc analyses built on its outcomes.

mod analysis;
mod bench;
mod trace;

pub use analysis::{
    cluster_failures, collision_features, filter_solvable, holdout_split, kmeans, robustness_experiment,
    within_cluster_ss, Bucket, ClusterReport, FilterReport, KMeans, RobustnessRow, CLUSTER_FEATURES,
};
pub use bench::{run_benchmark, scenario_ids, BenchmarkReport, CellSummary, ScenarioRow};
pub use trace::{emit_traces, trace_svg};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agents::{collect_demos, DemoDataset, DemoTag, DriverParams, ExpertEgo, PolicyModel, TrainConfig};
use crate::costs::CostWeights;
use crate::error::{Error, Result};
use crate::geometry::{MapModel, MapSet};
use crate::kinematics::BicycleParams;
use crate::mapgen::{sample_benchmark, SampleConfig};
use crate::optimizers::AttackConfig;
use crate::scenario::{deserialize_scenario, serialize_scenario, ScenarioSpec};

/// Everything a run needs besides its inputs, loadable from one TOML or
/// JSON file. Missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub kinematics: BicycleParams,
    pub costs: CostWeights,
    pub attack: AttackConfig,
    pub training: TrainConfig,
    pub finetune: TrainConfig,
    pub driver: DriverParams,
    pub sample: SampleConfig,
    /// Seeds of the expert-driven benchmarks that make up the regular
    /// demonstration set.
    pub regular_seeds: Vec<u64>,
    pub routes_per_map: usize,
    pub densities: Vec<usize>,
    /// Probability of drawing a critical pair when fine-tuning on mixed data.
    pub mix_ratio: f64,
    /// Fraction of solvable scenarios held out in the robustness experiment.
    pub holdout_fraction: f64,
    pub clusters: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            kinematics: BicycleParams::default(),
            costs: CostWeights::default(),
            attack: AttackConfig::default(),
            training: TrainConfig::default(),
            finetune: TrainConfig {
                steps: 4000,
                ..TrainConfig::default()
            },
            driver: DriverParams::default(),
            sample: SampleConfig::default(),
            regular_seeds: (100..108).collect(),
            routes_per_map: 2,
            densities: vec![1, 2, 4],
            mix_ratio: 0.5,
            holdout_fraction: 0.2,
            clusters: 6,
        }
    }
}

impl HarnessConfig {
    /// Parse by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.kinematics.validate()?;
        self.costs.validate()?;
        self.attack.validate()?;
        self.driver.validate()?;
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::InvalidValue {
                field: "mix_ratio",
                msg: "must lie in [0, 1]".into(),
            });
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidValue {
                field: "holdout_fraction",
                msg: "must lie strictly between 0 and 1".into(),
            });
        }
        if self.densities.is_empty() || self.densities.contains(&0) {
            return Err(Error::InvalidValue {
                field: "densities",
                msg: "need at least one positive density".into(),
            });
        }
        Ok(())
    }

    /// Override every seed-bearing field.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.attack.seed = seed;
        self.training.seed = seed;
        self.finetune.seed = seed;
        self
    }
}

/// Expert-driven scenarios over `cfg.regular_seeds`, rolled out and recorded
/// as regular demonstrations.
pub fn regular_demos(maps: &[MapModel], cfg: &HarnessConfig) -> Result<(Vec<ScenarioSpec>, DemoDataset)> {
    let expert = ExpertEgo::new(cfg.driver.clone());
    let per_map = maps.iter().map(|m| m.routes.len()).min().unwrap_or(0).min(3);
    let mut specs = Vec::new();
    for &seed in &cfg.regular_seeds {
        specs.extend(sample_benchmark(
            maps,
            per_map,
            &cfg.densities,
            seed,
            &expert,
            &cfg.kinematics,
            &cfg.sample,
        )?);
    }
    let set = MapSet::new(maps.iter().cloned());
    let data = collect_demos(&specs, DemoTag::Regular, &cfg.driver, &cfg.kinematics, &set)?;
    Ok((specs, data))
}

/// Train the base policy on regular demonstrations.
pub fn train_base_policy(maps: &[MapModel], cfg: &HarnessConfig) -> Result<(PolicyModel, DemoDataset)> {
    let (_, data) = regular_demos(maps, cfg)?;
    let model = crate::agents::train_policy(&data, &cfg.training)?;
    Ok((model, data))
}

/// Map `f` over `items` on up to `jobs` threads. Output order matches input
/// order whatever the scheduling.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Write `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}

pub fn save_map(dir: &Path, map: &MapModel) -> Result<PathBuf> {
    let path = dir.join(format!("{}.json", map.map_id));
    write_file(&path, &map.to_json())?;
    Ok(path)
}

/// Load every `*.json` map in `dir`.
pub fn load_maps(dir: &Path) -> Result<MapSet> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    let mut set = MapSet::default();
    for p in entries {
        set.insert(MapModel::from_json(&read_file(&p)?)?);
    }
    Ok(set)
}

pub fn save_scenario(path: &Path, spec: &ScenarioSpec) -> Result<()> {
    write_file(path, &serialize_scenario(spec))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    deserialize_scenario(&read_file(path)?)
}

pub fn save_policy(path: &Path, model: &PolicyModel) -> Result<()> {
    write_file(path, &model.to_json())
}

pub fn load_policy(path: &Path) -> Result<PolicyModel> {
    PolicyModel::from_json(&read_file(path)?)
}

pub fn save_demos(path: &Path, data: &DemoDataset) -> Result<()> {
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

pub fn load_demos(path: &Path) -> Result<DemoDataset> {
    DemoDataset::read_jsonl(std::io::Cursor::new(read_file(path)?))
}

/// Scenario list written next to the scenario files, paths relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenarios: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
}

impl Manifest {
    /// Write each spec as `<dir>/scenarios/<id>.json` plus `<dir>/manifest.json`.
    pub fn write(dir: &Path, specs: &[(String, ScenarioSpec)]) -> Result<Self> {
        let mut scenarios = Vec::with_capacity(specs.len());
        for (id, spec) in specs {
            let rel = format!("scenarios/{id}.json");
            save_scenario(&dir.join(&rel), spec)?;
            scenarios.push(ManifestEntry {
                id: id.clone(),
                path: rel,
            });
        }
        let m = Self { scenarios };
        write_json(&dir.join("manifest.json"), &m)?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Vec<(String, ScenarioSpec)>> {
        let m: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.scenarios
            .iter()
            .map(|e| Ok((e.id.clone(), load_scenario(&base.join(&e.path))?)))
            .collect()
    }
}
