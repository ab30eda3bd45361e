use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use critsim::agents::{
    collect_demos, fine_tune, train_policy, DemoTag, EgoAgent, PolicyEgo, RuleBasedEgo, TrainConfig,
};
use critsim::harness::{self, Bucket, FilterReport, HarnessConfig, Manifest};
use critsim::mapgen::{desk_templates, generate_map, sample_benchmark, MapTemplate, TemplateKind};
use critsim::optimizers::{attack, replay, AttackConfig, Method};
use critsim::scenario::ScenarioSpec;
use critsim::sim::Simulator;
use critsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "critsim",
    version,
    about = "Adversarial scenario generation in a differentiable 2D traffic simulator"
)]
struct Cli {
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scenario-level loops.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate map JSON files from templates.
    Genmaps {
        /// Comma-separated template kinds; defaults to the desk set.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
    },
    /// Sample a benchmark and write a scenario manifest.
    Genbench {
        #[arg(long)]
        maps: PathBuf,
        /// Ego used to certify the initial scenarios; rule-based if absent.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        routes_per_map: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        densities: Vec<usize>,
    },
    /// Attack one scenario with one method.
    Attack {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "king_direct")]
        method: String,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Attack every scenario of a manifest with every method.
    Benchmark {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "king_direct,random_search,simba,cma_es"
        )]
        methods: Vec<String>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Split a benchmark's attacks into solvable, not solvable and no collision.
    Filter {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "king_direct")]
        method: String,
    },
    /// Cluster the solvable collisions of a filtered benchmark.
    Cluster {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        filter: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Record expert demonstrations.
    Collect {
        #[arg(long)]
        maps: PathBuf,
        /// Scenario manifest (regular data).
        #[arg(long, conflicts_with = "filter")]
        manifest: Option<PathBuf>,
        /// Filter result; collects from its solvable attacked scenarios.
        #[arg(long, requires = "report")]
        filter: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "regular")]
        tag: String,
    },
    /// Train a policy from scratch.
    Train {
        #[arg(long)]
        data: Vec<PathBuf>,
    },
    /// Continue training a policy.
    Finetune {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Probability of drawing a critical pair.
        #[arg(long)]
        mix_ratio: Option<f64>,
    },
    /// Held-out comparison of fine-tuning variants.
    Robustness {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        filter: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Regular demonstrations the base policy was trained on.
        #[arg(long)]
        regular: PathBuf,
    },
    /// Roll out one scenario and write CSV and SVG traces.
    Trace {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

/// Location of every attacked scenario file a benchmark wrote.
#[derive(Serialize, Deserialize)]
struct PlanIndex {
    scenario: String,
    method: String,
    success: bool,
    path: String,
}

fn ego_for(policy: Option<&Path>, cfg: &HarnessConfig) -> Result<Box<dyn EgoAgent>> {
    Ok(match policy {
        Some(p) => Box::new(PolicyEgo::new(harness::load_policy(p)?, cfg.driver.clone())),
        None => Box::new(RuleBasedEgo::new(cfg.driver.clone())),
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn load_plans(report: &Path, method: &str) -> Result<Vec<(String, ScenarioSpec, bool)>> {
    let index: Vec<PlanIndex> = harness::read_json(&report.with_file_name("plans.json"))?;
    let base = report.parent().unwrap_or(Path::new("."));
    index
        .into_iter()
        .filter(|p| p.method == method)
        .map(|p| Ok((p.scenario, harness::load_scenario(&base.join(&p.path))?, p.success)))
        .collect()
}

fn solvable_specs(report: &Path, filter: &Path) -> Result<(Vec<String>, Vec<ScenarioSpec>)> {
    let f: FilterReport = harness::read_json(filter)?;
    let method = filter_method(filter)?;
    let plans = load_plans(report, &method)?;
    let keep: std::collections::BTreeSet<&str> = f.ids(Bucket::Solvable).collect();
    Ok(plans
        .into_iter()
        .filter(|(id, _, _)| keep.contains(id.as_str()))
        .map(|(id, s, _)| (id, s))
        .unzip())
}

fn filter_method(filter: &Path) -> Result<String> {
    let meta: serde_json::Value = harness::read_json(&filter.with_file_name("filter_meta.json"))?;
    Ok(meta["method"].as_str().unwrap_or("king_direct").to_string())
}

fn load_all_demos(paths: &[PathBuf]) -> Result<critsim::agents::DemoDataset> {
    let mut data = critsim::agents::DemoDataset::default();
    for p in paths {
        data.extend(harness::load_demos(p)?);
    }
    Ok(data)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.attack.seed);
    cfg = cfg.with_seed(seed);
    let out = &cli.out;

    match &cli.cmd {
        Cmd::Genmaps { kinds } => {
            let templates = if kinds.is_empty() {
                desk_templates(seed)
            } else {
                kinds
                    .iter()
                    .map(|k| Ok(MapTemplate::new(TemplateKind::parse(k)?, seed)))
                    .collect::<Result<_>>()?
            };
            for t in &templates {
                let path = harness::save_map(&out.join("maps"), &generate_map(t)?)?;
                println!("{}", path.display());
            }
        }
        Cmd::Genbench {
            maps,
            policy,
            routes_per_map,
            densities,
        } => {
            let set = harness::load_maps(maps)?;
            let ego = ego_for(policy.as_deref(), &cfg)?;
            let maps: Vec<_> = set.iter().cloned().collect();
            let densities = if densities.is_empty() {
                &cfg.densities
            } else {
                densities
            };
            let specs = sample_benchmark(
                &maps,
                routes_per_map.unwrap_or(cfg.routes_per_map),
                densities,
                seed,
                ego.as_ref(),
                &cfg.kinematics,
                &cfg.sample,
            )?;
            let named: Vec<_> = harness::scenario_ids(&specs).into_iter().zip(specs).collect();
            Manifest::write(out, &named)?;
            println!("{} scenarios -> {}", named.len(), out.join("manifest.json").display());
        }
        Cmd::Attack {
            maps,
            scenario,
            method,
            policy,
        } => {
            let set = harness::load_maps(maps)?;
            let spec = harness::load_scenario(scenario)?;
            let ego = ego_for(policy.as_deref(), &cfg)?;
            let sim = Simulator::new(set.get(&spec.map_id)?, cfg.kinematics, cfg.costs);
            let acfg = AttackConfig {
                method: Method::parse(method)?,
                ..cfg.attack.clone()
            };
            let o = attack(&sim, &spec, ego.as_ref(), &acfg)?;
            let id = stem(scenario);
            let plan_rel = format!("plans/{id}_{method}.json");
            harness::save_scenario(&out.join(&plan_rel), &spec.with_plan(o.best_plan.clone()))?;
            harness::write_json(
                &out.join(format!("{id}_{method}.json")),
                &o.to_json(&id, Some(&plan_rel)),
            )?;
            println!(
                "{id} {method}: success={} verdict={} iterations={} wall={:.2}s",
                o.success,
                o.verdict.kind.as_str(),
                o.iterations,
                o.wall_time
            );
        }
        Cmd::Benchmark {
            maps,
            manifest,
            methods,
            policy,
        } => {
            let set = harness::load_maps(maps)?;
            let specs = Manifest::load(manifest)?;
            let ego = ego_for(policy.as_deref(), &cfg)?;
            let methods: Vec<Method> = methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
            let report = harness::run_benchmark(&specs, &set, ego.as_ref(), &methods, &cfg, cli.jobs)?;
            let mut index = Vec::new();
            for (row, o) in report.rows.iter().zip(&report.outcomes) {
                let Some(o) = o else { continue };
                let spec = &specs
                    .iter()
                    .find(|(id, _)| *id == row.scenario)
                    .expect("row from specs")
                    .1;
                let rel = format!("plans/{}_{}.json", row.scenario, row.method);
                harness::save_scenario(&out.join(&rel), &spec.with_plan(o.best_plan.clone()))?;
                index.push(PlanIndex {
                    scenario: row.scenario.clone(),
                    method: row.method.clone(),
                    success: o.success,
                    path: rel,
                });
            }
            harness::write_json(&out.join("plans.json"), &index)?;
            harness::write_json(&out.join("report.json"), &report.to_json())?;
            let mut rows = Vec::new();
            report.write_rows_csv(&mut rows)?;
            harness::write_file(&out.join("rows.csv"), &rows)?;
            let mut cells = Vec::new();
            report.write_cells_csv(&mut cells)?;
            harness::write_file(&out.join("cells.csv"), &cells)?;
            print!("{}", String::from_utf8_lossy(&cells));
        }
        Cmd::Filter { maps, report, method } => {
            let set = harness::load_maps(maps)?;
            let plans = load_plans(report, method)?;
            let f = harness::filter_solvable(&plans, &set, &cfg)?;
            harness::write_json(&out.join("filter.json"), &f)?;
            harness::write_json(
                &out.join("filter_meta.json"),
                &serde_json::json!({ "method": method, "report": report }),
            )?;
            println!(
                "solvable {} not_solvable {} no_collision {}",
                f.count(Bucket::Solvable),
                f.count(Bucket::NotSolvable),
                f.count(Bucket::NoCollision)
            );
        }
        Cmd::Cluster {
            maps,
            report,
            filter,
            policy,
        } => {
            let set = harness::load_maps(maps)?;
            let f: FilterReport = harness::read_json(filter)?;
            let ego = ego_for(policy.as_deref(), &cfg)?;
            let (ids, specs) = solvable_specs(report, filter)?;
            let mut feats = Vec::new();
            for (id, spec) in ids.into_iter().zip(&specs) {
                if let Some(x) = harness::collision_features(spec, ego.as_ref(), &set, &cfg.kinematics)? {
                    feats.push((id, x));
                }
            }
            let c = harness::cluster_failures(
                &feats,
                f.count(Bucket::NoCollision),
                f.count(Bucket::NotSolvable),
                cfg.clusters,
                seed,
            )?;
            harness::write_json(&out.join("clusters.json"), &c)?;
            println!("cluster sizes {:?} wcss {:.3}", c.counts, c.wcss);
        }
        Cmd::Collect {
            maps,
            manifest,
            filter,
            report,
            tag,
        } => {
            let set = harness::load_maps(maps)?;
            let tag = match tag.as_str() {
                "regular" => DemoTag::Regular,
                "critical" => DemoTag::Critical,
                other => {
                    return Err(Error::InvalidValue {
                        field: "tag",
                        msg: format!("expected regular or critical, got {other}"),
                    })
                }
            };
            let specs: Vec<ScenarioSpec> = match (manifest, filter, report) {
                (Some(m), _, _) => Manifest::load(m)?.into_iter().map(|(_, s)| s).collect(),
                (None, Some(f), Some(r)) => solvable_specs(r, f)?.1,
                _ => {
                    return Err(Error::InvalidValue {
                        field: "manifest",
                        msg: "give --manifest or --filter with --report".into(),
                    })
                }
            };
            let data = collect_demos(&specs, tag, &cfg.driver, &cfg.kinematics, &set)?;
            let path = out.join(format!(
                "{}.jsonl",
                if tag == DemoTag::Regular { "regular" } else { "critical" }
            ));
            harness::save_demos(&path, &data)?;
            println!("{} pairs -> {}", data.len(), path.display());
        }
        Cmd::Train { data } => {
            let data = load_all_demos(data)?;
            let model = train_policy(&data, &cfg.training)?;
            let loss = critsim::agents::policy::evaluate_l1(&model, &data)?;
            harness::save_policy(&out.join("policy.json"), &model)?;
            println!("trained on {} pairs, L1 {loss:.4}", data.len());
        }
        Cmd::Finetune {
            policy,
            data,
            mix_ratio,
        } => {
            let base = harness::load_policy(policy)?;
            let data = load_all_demos(data)?;
            let tc = TrainConfig {
                mix_ratio: mix_ratio.or(cfg.finetune.mix_ratio),
                ..cfg.finetune
            };
            let model = fine_tune(&base, &data, &tc)?;
            harness::save_policy(&out.join("policy_finetuned.json"), &model)?;
            println!("fine-tuned on {} pairs", data.len());
        }
        Cmd::Robustness {
            maps,
            report,
            filter,
            policy,
            regular,
        } => {
            let set = harness::load_maps(maps)?;
            let (_, specs) = solvable_specs(report, filter)?;
            let (train, held) = harness::holdout_split(&specs, cfg.holdout_fraction, seed);
            let pick = |ix: &[usize]| ix.iter().map(|&i| specs[i].clone()).collect::<Vec<_>>();
            let base = harness::load_policy(policy)?;
            let regular = harness::load_demos(regular)?;
            let rows = harness::robustness_experiment(
                &pick(&train),
                &pick(&held),
                &base,
                &regular,
                &set,
                &cfg,
                &cfg.finetune,
            )?;
            harness::write_file(&out.join("robustness.csv"), &csv_bytes(&rows)?)?;
            for r in &rows {
                println!("{:<16} CR {:6.2}  ({}/{})", r.variant, r.cr, r.collisions, r.heldout);
            }
        }
        Cmd::Trace { maps, scenario, policy } => {
            let set = harness::load_maps(maps)?;
            let spec = harness::load_scenario(scenario)?;
            let ego = ego_for(policy.as_deref(), &cfg)?;
            let map = set.get(&spec.map_id)?;
            let sim = Simulator::new(map, cfg.kinematics, cfg.costs);
            let r = replay(&sim, &spec, &spec.initial_plan, ego.as_ref())?;
            let (csv, svg) = harness::emit_traces(&r, map, &out.join(stem(scenario)))?;
            println!("{} {} ({})", csv.display(), svg.display(), r.verdict.kind.as_str());
        }
    }
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
