use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessConfig;
use crate::agents::{
    collect_demos, fine_tune, world_to_ego, DemoDataset, DemoTag, EgoAgent, ExpertEgo, PolicyEgo, PolicyModel,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::geometry::MapSet;
use crate::kinematics::BicycleParams;
use crate::optimizers::replay;
use crate::scenario::{normalize_angle, ScenarioSpec, VerdictKind};
use crate::sim::{Mode, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Solvable,
    NotSolvable,
    NoCollision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub entries: Vec<(String, Bucket)>,
}

impl FilterReport {
    pub fn count(&self, b: Bucket) -> usize {
        self.entries.iter().filter(|(_, x)| *x == b).count()
    }

    pub fn ids(&self, b: Bucket) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, x)| *x == b)
            .map(|(id, _)| id.as_str())
    }
}

/// Sort attacked scenarios into buckets. `attacked` holds each scenario with
/// its best plan already substituted and whether the attack succeeded. The
/// expert replays the fixed adversary plan; the collision is solvable when
/// the expert avoids every collision involving the ego.
pub fn filter_solvable(
    attacked: &[(String, ScenarioSpec, bool)],
    maps: &MapSet,
    cfg: &HarnessConfig,
) -> Result<FilterReport> {
    let expert = ExpertEgo::new(cfg.driver.clone());
    let mut entries = Vec::with_capacity(attacked.len());
    for (id, spec, success) in attacked {
        let bucket = if !success {
            Bucket::NoCollision
        } else {
            let sim = Simulator::new(maps.get(&spec.map_id)?, cfg.kinematics, cfg.costs);
            let r = sim.rollout(spec, &expert, Mode::NoRecord)?;
            if r.verdict.involves_ego() {
                Bucket::NotSolvable
            } else {
                Bucket::Solvable
            }
        };
        entries.push((id.clone(), bucket));
    }
    Ok(FilterReport { entries })
}

pub const CLUSTER_FEATURES: usize = 6;

/// Impact descriptor of a colliding replay: adversary heading relative to the
/// ego (sin, cos), bearing of the adversary center in the ego frame (sin,
/// cos), ego speed and adversary speed. `None` if the replay has no ego
/// collision.
pub fn collision_features(
    spec: &ScenarioSpec,
    ego: &dyn EgoAgent,
    maps: &MapSet,
    kin: &BicycleParams,
) -> Result<Option<[f64; CLUSTER_FEATURES]>> {
    let sim = Simulator::new(maps.get(&spec.map_id)?, *kin, Default::default());
    let r = replay(&sim, spec, &spec.initial_plan, ego)?;
    let (VerdictKind::EgoCollision, Some((a, b))) = (r.verdict.kind, r.verdict.agents_involved) else {
        return Ok(None);
    };
    let last = r.states.last().expect("rollout has states");
    let other = if a == 0 { b } else { a };
    let (e, o) = (&last.agents[0], &last.agents[other]);
    let rel = normalize_angle(o.heading - e.heading);
    let p = world_to_ego(e.position, e.heading, o.position);
    let bearing = p.y.atan2(p.x);
    Ok(Some([
        rel.sin(),
        rel.cos(),
        bearing.sin(),
        bearing.cos(),
        e.speed,
        o.speed,
    ]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; CLUSTER_FEATURES]>,
    pub wcss: f64,
    pub iterations: usize,
}

fn dist2(a: &[f64; CLUSTER_FEATURES], b: &[f64; CLUSTER_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64; CLUSTER_FEATURES], centroids: &[[f64; CLUSTER_FEATURES]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Sum of squared distances of points to the mean of their cluster.
pub fn within_cluster_ss(points: &[[f64; CLUSTER_FEATURES]], labels: &[usize], k: usize) -> f64 {
    let mut sums = vec![[0.0; CLUSTER_FEATURES]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..CLUSTER_FEATURES {
            sums[l][d] += p[d];
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let n = counts[l] as f64;
            (0..CLUSTER_FEATURES)
                .map(|d| (p[d] - sums[l][d] / n).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Lloyd iterations from greedy farthest-point seeds. The first seed is drawn
/// with `seed`; ties go to the lowest index.
pub fn kmeans(points: &[[f64; CLUSTER_FEATURES]], k: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewScenarios {
            needed: k.max(1),
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut closest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for (i, d) in closest.iter().enumerate() {
            if *d > closest[far] {
                far = i;
            }
        }
        let c = points[far];
        for (d, p) in closest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![[0.0; CLUSTER_FEATURES]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..CLUSTER_FEATURES {
                sums[l][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..CLUSTER_FEATURES {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let wcss = within_cluster_ss(points, &labels, k);
    Ok(KMeans {
        labels,
        centroids,
        wcss,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub ids: Vec<String>,
    pub features: Vec<[f64; CLUSTER_FEATURES]>,
    pub standardized: Vec<[f64; CLUSTER_FEATURES]>,
    pub labels: Vec<usize>,
    /// In standardized units.
    pub centroids: Vec<[f64; CLUSTER_FEATURES]>,
    pub counts: Vec<usize>,
    pub no_collision: usize,
    pub not_solvable: usize,
    pub wcss: f64,
}

/// Standardize per dimension and run k-means.
pub fn cluster_failures(
    solvable: &[(String, [f64; CLUSTER_FEATURES])],
    no_collision: usize,
    not_solvable: usize,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    if solvable.len() < k {
        return Err(Error::TooFewScenarios {
            needed: k,
            got: solvable.len(),
        });
    }
    let n = solvable.len() as f64;
    let mut mean = [0.0; CLUSTER_FEATURES];
    let mut sd = [0.0; CLUSTER_FEATURES];
    for (_, f) in solvable {
        for d in 0..CLUSTER_FEATURES {
            mean[d] += f[d] / n;
        }
    }
    for (_, f) in solvable {
        for d in 0..CLUSTER_FEATURES {
            sd[d] += (f[d] - mean[d]).powi(2) / n;
        }
    }
    for s in &mut sd {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let standardized: Vec<[f64; CLUSTER_FEATURES]> = solvable
        .iter()
        .map(|(_, f)| std::array::from_fn(|d| (f[d] - mean[d]) / sd[d]))
        .collect();
    let km = kmeans(&standardized, k, 100, seed)?;
    let mut counts = vec![0; k];
    for &l in &km.labels {
        counts[l] += 1;
    }
    Ok(ClusterReport {
        ids: solvable.iter().map(|(id, _)| id.clone()).collect(),
        features: solvable.iter().map(|(_, f)| *f).collect(),
        standardized,
        labels: km.labels,
        centroids: km.centroids,
        counts,
        no_collision,
        not_solvable,
        wcss: km.wcss,
    })
}

/// Split indices so that no ego start location appears on both sides. Whole
/// start-location groups are moved to the held-out side in seeded order until
/// it holds at least `fraction` of the scenarios.
pub fn holdout_split(specs: &[ScenarioSpec], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<(String, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        let p = s.initial_state.ego().position;
        let key = (s.map_id.clone(), (p.x * 2.0).round() as i64, (p.y * 2.0).round() as i64);
        groups.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let want = (fraction * specs.len() as f64).round().max(1.0) as usize;
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for g in groups {
        if held.len() < want {
            held.extend(g);
        } else {
            train.extend(g);
        }
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub variant: String,
    pub training_pairs: usize,
    pub heldout: usize,
    pub collisions: usize,
    pub cr: f64,
}

/// Fine-tune `base` on regular data only, critical data only and a mix, then
/// replay every held-out scenario's fixed adversary plan with each variant.
/// `train` and `heldout` carry their attack plans as the initial plan.
pub fn robustness_experiment(
    train: &[ScenarioSpec],
    heldout: &[ScenarioSpec],
    base: &PolicyModel,
    regular: &DemoDataset,
    maps: &MapSet,
    cfg: &HarnessConfig,
    finetune: &TrainConfig,
) -> Result<Vec<RobustnessRow>> {
    let critical = collect_demos(train, DemoTag::Critical, &cfg.driver, &cfg.kinematics, maps)?;
    let mut mixed = regular.clone();
    mixed.extend(critical.clone());

    let plain = TrainConfig {
        mix_ratio: None,
        ..*finetune
    };
    let variants = [
        ("no_fine_tuning", None),
        ("regular_only", Some((regular, plain))),
        ("critical_only", Some((&critical, plain))),
        (
            "mixed",
            Some((
                &mixed,
                TrainConfig {
                    mix_ratio: Some(cfg.mix_ratio),
                    ..*finetune
                },
            )),
        ),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (name, tuning) in variants {
        let (model, pairs) = match tuning {
            None => (base.clone(), 0),
            Some((data, tc)) => (fine_tune(base, data, &tc)?, data.len()),
        };
        let ego = PolicyEgo::new(model, cfg.driver.clone());
        let mut collisions = 0;
        for spec in heldout {
            let sim = Simulator::new(maps.get(&spec.map_id)?, cfg.kinematics, cfg.costs);
            let r = sim.rollout(spec, &ego, Mode::NoRecord)?;
            if r.verdict.kind == VerdictKind::EgoCollision {
                collisions += 1;
            }
        }
        rows.push(RobustnessRow {
            variant: name.into(),
            training_pairs: pairs,
            heldout: heldout.len(),
            collisions,
            cr: if heldout.is_empty() {
                0.0
            } else {
                100.0 * collisions as f64 / heldout.len() as f64
            },
        });
    }
    Ok(rows)
}
