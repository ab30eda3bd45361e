//! Procedural road layouts with centerline routes for every legal movement,
//! and seeded sampling of benchmark scenarios on them.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::EgoAgent;
use crate::builder::{build_initial_scenario, BuildConfig};
use crate::error::{Error, Result};
use crate::geometry::{MapModel, NamedRoute, Polygon, DEFAULT_SDF_RESOLUTION};
use crate::kinematics::BicycleParams;
use crate::route::Route;
use crate::scenario::{ScenarioSpec, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    FourWayIntersection,
    TJunction,
    TwoLaneStraight,
    CurvedMerge,
    Roundabout,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::FourWayIntersection,
        TemplateKind::TJunction,
        TemplateKind::TwoLaneStraight,
        TemplateKind::CurvedMerge,
        TemplateKind::Roundabout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::FourWayIntersection => "four_way_intersection",
            TemplateKind::TJunction => "t_junction",
            TemplateKind::TwoLaneStraight => "two_lane_straight",
            TemplateKind::CurvedMerge => "curved_merge",
            TemplateKind::Roundabout => "roundabout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown map template '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapTemplate {
    pub kind: TemplateKind,
    pub lane_width: f64,
    /// Distance from the junction center to the end of each arm; the full
    /// length for the straight road.
    pub arm_length: f64,
    /// Ramp radius for the merge, circulating radius for the roundabout.
    pub curvature_radius: f64,
    /// Curb fillet radius at junction corners.
    pub corner_radius: f64,
    pub seed: u64,
}

impl MapTemplate {
    pub fn new(kind: TemplateKind, seed: u64) -> Self {
        let (arm_length, curvature_radius) = match kind {
            TemplateKind::TwoLaneStraight => (100.0, 0.0),
            TemplateKind::CurvedMerge => (60.0, 40.0),
            TemplateKind::Roundabout => (60.0, 13.5),
            _ => (60.0, 0.0),
        };
        Self {
            kind,
            lane_width: 3.5,
            arm_length,
            curvature_radius,
            corner_radius: 6.0,
            seed,
        }
    }

    pub fn map_id(&self) -> String {
        format!("{}_{}", self.kind.as_str(), self.seed)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateGeometry(m.to_string()));
        if !(self.lane_width >= 3.0) {
            return bad("lane width must be at least 3 m");
        }
        if !(self.corner_radius > 0.0) {
            return bad("corner radius must be positive");
        }
        let (w, a, r) = (self.lane_width, self.arm_length, self.curvature_radius);
        let ok = match self.kind {
            TemplateKind::TwoLaneStraight => a > 4.0 * END_MARGIN,
            TemplateKind::FourWayIntersection | TemplateKind::TJunction => {
                a > w + self.corner_radius + 4.0 * END_MARGIN
            }
            TemplateKind::CurvedMerge => r > 2.0 * w && a > 4.0 * END_MARGIN + 10.0,
            TemplateKind::Roundabout => r > 2.0 * w && a > r + 4.5 + 4.0 * END_MARGIN,
        };
        if ok {
            Ok(())
        } else {
            bad("template dimensions are inconsistent")
        }
    }
}

/// Routes start and end this far inside the ends of their arms.
const END_MARGIN: f64 = 5.0;
const ROUTE_SPACING: f64 = 1.0;
const ARC_STEP: f64 = 5.0 * PI / 180.0;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::new(vec![
        Vec2::new(x0, y0),
        Vec2::new(x1, y0),
        Vec2::new(x1, y1),
        Vec2::new(x0, y1),
    ])
}

fn rotate(p: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Points on a circle from angle `a0` to `a1` inclusive.
fn arc(center: Vec2, r: f64, a0: f64, a1: f64) -> Vec<Vec2> {
    let n = ((a1 - a0).abs() / ARC_STEP).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            center + Vec2::new(a.cos(), a.sin()) * r
        })
        .collect()
}

/// Drivable wedge filling the inner corner `c` between two perpendicular
/// arms with a quarter-circle curb; `sx`, `sy` point away from the junction.
fn corner_fillet(c: Vec2, sx: f64, sy: f64, f: f64) -> Polygon {
    let center = c + Vec2::new(sx * f, sy * f);
    let n = (FRAC_PI_2 / ARC_STEP).ceil() as usize;
    let mut v = vec![c];
    for k in 0..=n {
        let b = FRAC_PI_2 * k as f64 / n as f64;
        v.push(center + Vec2::new(-sx * b.sin(), -sy * b.cos()) * f);
    }
    Polygon::new(v)
}

/// Replace sharp vertices (turn above ~17 degrees) with circular arcs of at
/// most `radius`, shrunk where the adjacent segments are too short.
pub fn fillet_polyline(pts: &[Vec2], radius: f64) -> Vec<Vec2> {
    const MIN_TURN: f64 = 0.3;
    let n = pts.len();
    if n < 3 {
        return pts.to_vec();
    }
    let turn = |i: usize| -> f64 {
        let d1 = (pts[i] - pts[i - 1]).normalize();
        let d2 = (pts[i + 1] - pts[i]).normalize();
        d1.dot(&d2).clamp(-1.0, 1.0).acos()
    };
    let sharp: Vec<bool> = (0..n).map(|i| i > 0 && i + 1 < n && turn(i) > MIN_TURN).collect();
    let mut out = vec![pts[0]];
    for i in 1..n - 1 {
        if !sharp[i] {
            out.push(pts[i]);
            continue;
        }
        let d1 = (pts[i] - pts[i - 1]).normalize();
        let d2 = (pts[i + 1] - pts[i]).normalize();
        let phi = turn(i);
        let share = |j: usize| if sharp[j] { 0.5 } else { 1.0 };
        let avail = ((pts[i] - pts[i - 1]).norm() * share(i - 1)).min((pts[i + 1] - pts[i]).norm() * share(i + 1));
        let half_tan = (phi * 0.5).tan();
        let r = radius.min(avail / half_tan);
        let t = r * half_tan;
        let p1 = pts[i] - d1 * t;
        let left = d1.x * d2.y - d1.y * d2.x > 0.0;
        let normal = if left {
            Vec2::new(-d1.y, d1.x)
        } else {
            Vec2::new(d1.y, -d1.x)
        };
        let center = p1 + normal * r;
        let a0 = (p1 - center).y.atan2((p1 - center).x);
        let a1 = if left { a0 + phi } else { a0 - phi };
        out.extend(arc(center, r, a0, a1));
    }
    out.push(pts[n - 1]);
    out
}

fn finish_route(name: String, raw: &[Vec2], radius: f64) -> NamedRoute {
    let pts = Route::new(&fillet_polyline(raw, radius)).resampled(ROUTE_SPACING);
    NamedRoute {
        name,
        points: pts.points().to_vec(),
    }
}

/// Layout of two perpendicular roads meeting at the origin. Movements from
/// the west approach, in the canonical frame.
fn west_approach(
    t: &MapTemplate,
    with_left: bool,
    with_straight: bool,
    with_right: bool,
) -> Vec<(&'static str, Vec<Vec2>, f64)> {
    let w = t.lane_width;
    let h = w * 0.5;
    let e = t.arm_length - END_MARGIN;
    let start = Vec2::new(-e, -h);
    let mut out = Vec::new();
    if with_straight {
        out.push(("straight", vec![start, Vec2::new(e, -h)], 0.0));
    }
    if with_right {
        out.push((
            "right",
            vec![start, Vec2::new(-h, -h), Vec2::new(-h, -e)],
            t.corner_radius + h,
        ));
    }
    if with_left {
        out.push((
            "left",
            vec![start, Vec2::new(h, -h), Vec2::new(h, e)],
            t.corner_radius + w + h,
        ));
    }
    out
}

fn junction_routes(t: &MapTemplate, approaches: &[(&str, usize, bool, bool, bool)]) -> Vec<NamedRoute> {
    let mut routes = Vec::new();
    for &(arm, quarter, l, s, r) in approaches {
        let angle = quarter as f64 * FRAC_PI_2;
        for (mv, raw, radius) in west_approach(t, l, s, r) {
            let pts: Vec<Vec2> = raw.iter().map(|p| rotate(*p, angle)).collect();
            routes.push(finish_route(format!("{arm}_{mv}"), &pts, radius));
        }
    }
    routes
}

fn four_way(t: &MapTemplate) -> (Vec<Polygon>, Vec<NamedRoute>) {
    let (w, a, f) = (t.lane_width, t.arm_length, t.corner_radius);
    let mut polys = vec![rect(-a, -w, a, w), rect(-w, -a, w, a)];
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        polys.push(corner_fillet(Vec2::new(sx * w, sy * w), sx, sy, f));
    }
    // approaches rotate counterclockwise: west, south, east, north
    let routes = junction_routes(
        t,
        &[
            ("w", 0, true, true, true),
            ("s", 1, true, true, true),
            ("e", 2, true, true, true),
            ("n", 3, true, true, true),
        ],
    );
    (polys, routes)
}

fn t_junction(t: &MapTemplate) -> (Vec<Polygon>, Vec<NamedRoute>) {
    let (w, a, f) = (t.lane_width, t.arm_length, t.corner_radius);
    let polys = vec![
        rect(-a, -w, a, w),
        rect(-w, -a, w, 0.0),
        corner_fillet(Vec2::new(-w, -w), -1.0, -1.0, f),
        corner_fillet(Vec2::new(w, -w), 1.0, -1.0, f),
    ];
    // stem points south; from the west the only turn is right, from the
    // east only left, from the south both
    let routes = junction_routes(
        t,
        &[
            ("w", 0, false, true, true),
            ("s", 1, true, false, true),
            ("e", 2, true, true, false),
        ],
    );
    (polys, routes)
}

fn two_lane_straight(t: &MapTemplate) -> (Vec<Polygon>, Vec<NamedRoute>) {
    let (w, l) = (t.lane_width, t.arm_length);
    let h = w * 0.5;
    let polys = vec![rect(0.0, -w, l, w)];
    let routes = vec![
        finish_route(
            "eastbound".into(),
            &[Vec2::new(END_MARGIN, -h), Vec2::new(l - END_MARGIN, -h)],
            0.0,
        ),
        finish_route(
            "westbound".into(),
            &[Vec2::new(l - END_MARGIN, h), Vec2::new(END_MARGIN, h)],
            0.0,
        ),
    ];
    (polys, routes)
}

fn curved_merge(t: &MapTemplate) -> (Vec<Polygon>, Vec<NamedRoute>) {
    let (w, a, r) = (t.lane_width, t.arm_length, t.curvature_radius);
    let h = w * 0.5;
    let e = a - END_MARGIN;
    // ramp circle touches the eastbound lane from below at x = x0
    let x0 = -10.0;
    let center = Vec2::new(x0, -h - r);
    let ramp_half = h + 0.5;
    let (a_top, a_end) = (FRAC_PI_2, FRAC_PI_2 + PI / 3.0);
    let mut ramp = arc(center, r + ramp_half, a_top, a_end);
    ramp.extend(arc(center, r - ramp_half, a_end, a_top));
    let polys = vec![rect(-a, -w, a, w), Polygon::new(ramp)];

    let start_angle = a_end - 5.0 / r;
    let mut merge = arc(center, r, start_angle, a_top);
    merge.push(Vec2::new(e, -h));
    let routes = vec![
        finish_route("eastbound".into(), &[Vec2::new(-e, -h), Vec2::new(e, -h)], 0.0),
        finish_route("ramp_merge".into(), &merge, 0.0),
        finish_route("westbound".into(), &[Vec2::new(e, h), Vec2::new(-e, h)], 0.0),
    ];
    (polys, routes)
}

fn roundabout(t: &MapTemplate) -> (Vec<Polygon>, Vec<NamedRoute>) {
    let (w, a, rc) = (t.lane_width, t.arm_length, t.curvature_radius);
    let h = w * 0.5;
    let e = a - END_MARGIN;
    let (ri, ro) = (rc - 4.5, rc + 4.5);
    let mut polys = Vec::new();
    let sectors = 12;
    for k in 0..sectors {
        let a0 = TAU * k as f64 / sectors as f64;
        let a1 = TAU * (k + 1) as f64 / sectors as f64;
        let mut v = arc(Vec2::zeros(), ro, a0, a1);
        v.extend(arc(Vec2::zeros(), ri, a1, a0));
        polys.push(Polygon::new(v));
    }
    let inner_end = (ri * ri - w * w).sqrt() + 1.0;
    for q in 0..4 {
        let angle = q as f64 * FRAC_PI_2;
        let arm = rect(-a, -w, -inner_end, w);
        polys.push(Polygon::new(arm.vertices.iter().map(|p| rotate(*p, angle)).collect()));
    }

    // entry from the west arm meets the ring at angle pi + asin(h / rc)
    let off = (h / rc).asin();
    let arms = ["w", "s", "e", "n"];
    let moves = ["right", "straight", "left"];
    let mut routes = Vec::new();
    for (q, arm) in arms.iter().enumerate() {
        let rot = q as f64 * FRAC_PI_2;
        for (m, mv) in moves.iter().enumerate() {
            let theta_in = PI + off;
            // exits are a quarter turn apart; each leaves the ring `off`
            // before the exit arm's axis
            let theta_out = theta_in + (m as f64 + 1.0) * FRAC_PI_2 - 2.0 * off;
            let gap = 25f64.to_radians();
            let mut raw = vec![Vec2::new(-e, -h)];
            raw.push(Vec2::new(theta_in.cos(), theta_in.sin()) * rc);
            let n = ((theta_out - theta_in - 2.0 * gap) / (10f64.to_radians()))
                .ceil()
                .max(1.0) as usize;
            for k in 0..=n {
                let th = theta_in + gap + (theta_out - theta_in - 2.0 * gap) * k as f64 / n as f64;
                raw.push(Vec2::new(th.cos(), th.sin()) * rc);
            }
            raw.push(Vec2::new(theta_out.cos(), theta_out.sin()) * rc);
            // outgoing lane of the exit arm, right of its outward axis
            let ua = PI + (m as f64 + 1.0) * FRAC_PI_2;
            let u = Vec2::new(ua.cos(), ua.sin());
            raw.push(u * e + Vec2::new(u.y, -u.x) * h);
            let pts: Vec<Vec2> = raw.iter().map(|p| rotate(*p, rot)).collect();
            routes.push(finish_route(format!("{arm}_{mv}"), &pts, t.corner_radius));
        }
    }
    (polys, routes)
}

/// Build the map for a template. The seed rotates the whole layout.
pub fn generate_map(tpl: &MapTemplate) -> Result<MapModel> {
    tpl.validate()?;
    let (polys, routes) = match tpl.kind {
        TemplateKind::FourWayIntersection => four_way(tpl),
        TemplateKind::TJunction => t_junction(tpl),
        TemplateKind::TwoLaneStraight => two_lane_straight(tpl),
        TemplateKind::CurvedMerge => curved_merge(tpl),
        TemplateKind::Roundabout => roundabout(tpl),
    };
    let angle = ChaCha8Rng::seed_from_u64(tpl.seed).random_range(0.0..TAU);
    let polys = polys
        .into_iter()
        .map(|p| Polygon::new(p.vertices.iter().map(|v| rotate(*v, angle)).collect()))
        .collect();
    let routes = routes
        .into_iter()
        .map(|r| NamedRoute {
            name: r.name,
            points: r.points.iter().map(|v| rotate(*v, angle)).collect(),
        })
        .collect();
    MapModel::new(tpl.map_id(), polys, routes, DEFAULT_SDF_RESOLUTION)
}

/// The four layouts used for the desk benchmark.
pub fn desk_templates(seed: u64) -> Vec<MapTemplate> {
    [
        TemplateKind::FourWayIntersection,
        TemplateKind::TJunction,
        TemplateKind::CurvedMerge,
        TemplateKind::Roundabout,
    ]
    .into_iter()
    .enumerate()
    .map(|(k, kind)| MapTemplate::new(kind, seed.wrapping_add(k as u64)))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Range of the ego's start offset along its route, meters.
    pub ego_offset: (f64, f64),
    /// Range of adversary start offsets along their routes, meters.
    pub adversary_offset: (f64, f64),
    pub max_attempts: usize,
    pub build: BuildConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            horizon: 80,
            dt: 0.25,
            ego_offset: (0.0, 10.0),
            adversary_offset: (0.0, 45.0),
            max_attempts: 400,
            build: BuildConfig::default(),
        }
    }
}

/// Polyline of `route` starting `s` meters along it.
pub fn trim_route(route: &Route, s: f64) -> Vec<Vec2> {
    let mut out = vec![route.point_at(s)];
    let cum = {
        let mut acc = 0.0;
        let pts = route.points();
        let mut c = vec![0.0];
        for k in 1..pts.len() {
            acc += (pts[k] - pts[k - 1]).norm();
            c.push(acc);
        }
        c
    };
    out.extend(
        route
            .points()
            .iter()
            .zip(cum)
            .filter(|&(_, c)| c > s + 1e-6)
            .map(|(p, _)| *p),
    );
    out
}

/// Deterministic benchmark set: for each map, `routes_per_map` ego routes,
/// each at every density, all certified collision-free with `ego`.
pub fn sample_benchmark(
    maps: &[MapModel],
    routes_per_map: usize,
    densities: &[usize],
    seed: u64,
    ego: &dyn EgoAgent,
    kin: &BicycleParams,
    cfg: &SampleConfig,
) -> Result<Vec<ScenarioSpec>> {
    let mut specs = Vec::new();
    for (mi, map) in maps.iter().enumerate() {
        if map.routes.len() < routes_per_map {
            return Err(Error::InsufficientRoutes(format!(
                "map {} has {} routes, {routes_per_map} requested",
                map.map_id,
                map.routes.len()
            )));
        }
        let routes: Vec<Route> = map.routes.iter().map(|r| Route::new(&r.points)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (mi as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..routes.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen = 0;
        for &ego_idx in &order {
            if chosen == routes_per_map {
                break;
            }
            let admissible: Vec<usize> = (0..routes.len())
                .filter(|&j| routes[j].min_distance_to(&routes[ego_idx]) <= cfg.build.proximity_radius)
                .collect();
            if admissible.is_empty() {
                continue;
            }
            let mut batch = Vec::with_capacity(densities.len());
            for &n in densities {
                let spec = sample_one(map, &routes, ego_idx, &admissible, n, &mut rng, ego, kin, cfg)?;
                batch.push(spec);
            }
            specs.extend(batch);
            chosen += 1;
        }
        if chosen < routes_per_map {
            return Err(Error::InsufficientRoutes(format!(
                "map {} has only {chosen} usable ego routes",
                map.map_id
            )));
        }
    }
    Ok(specs)
}

#[allow(clippy::too_many_arguments)]
fn sample_one(
    map: &MapModel,
    routes: &[Route],
    ego_idx: usize,
    admissible: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
    ego: &dyn EgoAgent,
    kin: &BicycleParams,
    cfg: &SampleConfig,
) -> Result<ScenarioSpec> {
    let mut last_err = None;
    for _ in 0..cfg.max_attempts {
        let ego_route = trim_route(&routes[ego_idx], rng.random_range(cfg.ego_offset.0..=cfg.ego_offset.1));
        let adv: Vec<Vec<Vec2>> = (0..n)
            .map(|_| {
                let j = admissible[rng.random_range(0..admissible.len())];
                let hi = cfg.adversary_offset.1.min(routes[j].length() * 0.5);
                trim_route(&routes[j], rng.random_range(cfg.adversary_offset.0.min(hi)..=hi))
            })
            .collect();
        let seed = rng.random::<u64>();
        match build_initial_scenario(map, &ego_route, &adv, cfg.horizon, cfg.dt, seed, ego, kin, &cfg.build) {
            Ok(spec) => return Ok(spec),
            Err(e @ (Error::RouteInfeasible(_) | Error::ProximityUnmet { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::InsufficientRoutes(format!(
        "no valid placement of {n} adversaries on map {} after {} attempts ({})",
        map.map_id,
        cfg.max_attempts,
        last_err.map_or_else(String::new, |e| e.to_string())
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fillet_of_right_angle() {
        let pts = [Vec2::new(-20.0, 0.0), Vec2::new(0.0, 0.0), Vec2::new(0.0, -20.0)];
        let out = fillet_polyline(&pts, 5.0);
        let center = Vec2::new(-5.0, -5.0);
        for p in &out[1..out.len() - 1] {
            assert!(((p - center).norm() - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn straight_road_shape() {
        let m = generate_map(&MapTemplate::new(TemplateKind::TwoLaneStraight, 0)).unwrap();
        assert_eq!(m.drivable.len(), 1);
        assert_eq!(m.routes.len(), 2);
    }

    #[test]
    fn trim_starts_at_offset() {
        let r = Route::new(&[Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0)]);
        let t = trim_route(&r, 12.5);
        assert_eq!(t, vec![Vec2::new(12.5, 0.0), Vec2::new(20.0, 0.0)]);
    }

    #[test]
    fn route_counts_and_clearance() {
        let expect = [
            (TemplateKind::FourWayIntersection, 12),
            (TemplateKind::TJunction, 6),
            (TemplateKind::TwoLaneStraight, 2),
            (TemplateKind::CurvedMerge, 3),
            (TemplateKind::Roundabout, 12),
        ];
        for (kind, n) in expect {
            let m = generate_map(&MapTemplate::new(kind, 7)).unwrap();
            assert_eq!(m.routes.len(), n, "{kind:?}");
            for r in &m.routes {
                for p in &r.points {
                    let d = m.exact_sdf(*p);
                    assert!(d >= 1.0, "{kind:?} {} at {p:?}: clearance {d}", r.name);
                }
            }
        }
    }

    #[test]
    fn routes_are_drivable_by_rule_based_tracking() {
        use crate::agents::{controllers, rule_based_ego, DriverParams, STOP_WAYPOINTS};
        use crate::kinematics::step;
        use crate::scenario::{AgentState, TrafficState};
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        for kind in TemplateKind::ALL {
            let m = generate_map(&MapTemplate::new(kind, 3)).unwrap();
            for r in &m.routes {
                let route = Route::new(&r.points);
                let mut s = TrafficState {
                    agents: vec![AgentState::new(route.start(), route.heading_at(0.0), 6.0)],
                };
                for t in 0..100 {
                    let wp = rule_based_ego(&s, &route, &p, &kin).unwrap_or(STOP_WAYPOINTS);
                    let a = controllers(&wp, &s.agents[0], &p.controller);
                    s.agents[0] = step(&s.agents[0], a, &kin);
                    assert!(
                        !m.box_offroad_violation(&s.agents[0].bbox()),
                        "{kind:?} {} off road at step {t}",
                        r.name
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in TemplateKind::ALL {
            let t = MapTemplate::new(kind, 11);
            assert_eq!(generate_map(&t).unwrap().to_json(), generate_map(&t).unwrap().to_json());
        }
    }
}
