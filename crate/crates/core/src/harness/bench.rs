use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use super::{par_map, HarnessConfig};
use crate::agents::EgoAgent;
use crate::error::{Error, Result};
use crate::geometry::MapSet;
use crate::optimizers::{attack, AttackConfig, AttackOutcome, Method};
use crate::scenario::ScenarioSpec;
use crate::sim::Simulator;

/// Stable ids in benchmark order: `<index>_<map>_n<adversaries>`.
pub fn scenario_ids(specs: &[ScenarioSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i:03}_{}_n{}", s.map_id, s.num_adversaries()))
        .collect()
}

/// One attack. The wall-clock columns come last so that runs can be compared
/// on the prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub method: String,
    pub density: usize,
    pub success: bool,
    pub verdict: String,
    pub time_index: Option<usize>,
    pub iterations: usize,
    pub best_cost: f64,
    pub error: Option<String>,
    pub wall_time: f64,
    pub time_to_success: Option<f64>,
    pub s_per_it: Option<f64>,
}

impl ScenarioRow {
    pub const WALL_CLOCK_COLUMNS: [&'static str; 3] = ["wall_time", "time_to_success", "s_per_it"];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    /// Adversary count, or `None` for the row over all densities.
    pub density: Option<usize>,
    pub scenarios: usize,
    pub successes: usize,
    pub cr: f64,
    pub t50: Option<f64>,
    pub s_per_it: Option<f64>,
}

impl CellSummary {
    pub fn from_rows<'a>(method: &str, density: Option<usize>, rows: impl Iterator<Item = &'a ScenarioRow>) -> Self {
        let rows: Vec<&ScenarioRow> = rows.collect();
        let n = rows.len();
        let successes = rows.iter().filter(|r| r.success).count();
        let mut times: Vec<f64> = rows.iter().filter_map(|r| r.time_to_success).collect();
        times.sort_by(f64::total_cmp);
        // The cell reaches half its scenarios when the ceil(n/2)-th success lands.
        let need = n.div_ceil(2);
        let t50 = (need > 0 && times.len() >= need).then(|| times[need - 1]);
        let iters: usize = rows.iter().map(|r| r.iterations).sum();
        let wall: f64 = rows.iter().map(|r| r.wall_time).sum();
        Self {
            method: method.to_string(),
            density,
            scenarios: n,
            successes,
            cr: if n == 0 {
                0.0
            } else {
                100.0 * successes as f64 / n as f64
            },
            t50,
            s_per_it: (iters > 0).then(|| wall / iters as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub config: HarnessConfig,
    pub cells: Vec<CellSummary>,
    pub rows: Vec<ScenarioRow>,
    /// Parallel to `rows`; `None` where the attack errored.
    pub outcomes: Vec<Option<AttackOutcome>>,
}

impl BenchmarkReport {
    pub fn cell(&self, method: Method, density: Option<usize>) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method.as_str() && c.density == density)
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.rows)
    }

    pub fn write_cells_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.cells)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "seed": self.seed,
            "config": self.config,
            "cells": self.cells,
            "rows": self.rows,
        })
    }
}

fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Attack every spec with every method and aggregate per method and density.
/// Attack errors become failed rows.
pub fn run_benchmark(
    specs: &[(String, ScenarioSpec)],
    maps: &MapSet,
    ego: &dyn EgoAgent,
    methods: &[Method],
    cfg: &HarnessConfig,
    jobs: usize,
) -> Result<BenchmarkReport> {
    if specs.is_empty() || methods.is_empty() {
        return Err(Error::InvalidValue {
            field: "specs",
            msg: "need at least one scenario and one method".into(),
        });
    }
    for (_, spec) in specs {
        maps.get(&spec.map_id)?;
    }
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| specs[a].0.cmp(&specs[b].0));
    let jobs_list: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| order.iter().map(move |&i| (m, i)))
        .collect();

    let results = par_map(&jobs_list, jobs, |&(method, i)| {
        let spec = &specs[i].1;
        let map = maps.get(&spec.map_id)?;
        let sim = Simulator::new(map, cfg.kinematics, cfg.costs);
        let acfg = AttackConfig {
            method,
            ..cfg.attack.clone()
        };
        attack(&sim, spec, ego, &acfg)
    });

    let mut rows = Vec::with_capacity(results.len());
    let mut outcomes = Vec::with_capacity(results.len());
    for (&(method, i), res) in jobs_list.iter().zip(results) {
        let (id, spec) = &specs[i];
        let row = match &res {
            Ok(o) => ScenarioRow {
                scenario: id.clone(),
                method: method.as_str().into(),
                density: spec.num_adversaries(),
                success: o.success,
                verdict: o.verdict.kind.as_str().into(),
                time_index: o.verdict.time_index,
                iterations: o.iterations,
                best_cost: o.best_cost,
                error: None,
                wall_time: o.wall_time,
                time_to_success: o.time_to_success,
                s_per_it: o.seconds_per_iteration(),
            },
            Err(e) => ScenarioRow {
                scenario: id.clone(),
                method: method.as_str().into(),
                density: spec.num_adversaries(),
                success: false,
                verdict: "error".into(),
                time_index: None,
                iterations: 0,
                best_cost: f64::NAN,
                error: Some(e.to_string()),
                wall_time: 0.0,
                time_to_success: None,
                s_per_it: None,
            },
        };
        rows.push(row);
        outcomes.push(res.ok());
    }

    let densities: BTreeSet<usize> = specs.iter().map(|(_, s)| s.num_adversaries()).collect();
    let mut cells = Vec::new();
    for m in methods {
        let name = m.as_str();
        for &d in &densities {
            cells.push(CellSummary::from_rows(
                name,
                Some(d),
                rows.iter().filter(|r| r.method == name && r.density == d),
            ));
        }
        cells.push(CellSummary::from_rows(
            name,
            None,
            rows.iter().filter(|r| r.method == name),
        ));
    }
    Ok(BenchmarkReport {
        seed: cfg.attack.seed,
        config: cfg.clone(),
        cells,
        rows,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(success: bool, tts: Option<f64>, density: usize) -> ScenarioRow {
        ScenarioRow {
            scenario: "s".into(),
            method: "king_direct".into(),
            density,
            success,
            verdict: "no_collision".into(),
            time_index: None,
            iterations: 10,
            best_cost: 0.0,
            error: None,
            wall_time: 1.0,
            time_to_success: tts,
            s_per_it: Some(0.1),
        }
    }

    #[test]
    fn t50_is_median_success_time() {
        let rows = [
            row(true, Some(3.0), 1),
            row(true, Some(1.0), 1),
            row(false, None, 1),
            row(true, Some(2.0), 1),
        ];
        let c = CellSummary::from_rows("king_direct", Some(1), rows.iter());
        assert_eq!(c.cr, 75.0);
        assert_eq!(c.t50, Some(2.0));
        assert_eq!(c.s_per_it, Some(0.1));
    }

    #[test]
    fn t50_absent_below_half() {
        let rows = [row(true, Some(1.0), 2), row(false, None, 2), row(false, None, 2)];
        let c = CellSummary::from_rows("king_direct", Some(2), rows.iter());
        assert!(c.t50.is_none());
        let rows = [row(true, Some(1.0), 2), row(false, None, 2)];
        assert_eq!(CellSummary::from_rows("x", None, rows.iter()).t50, Some(1.0));
    }
}
