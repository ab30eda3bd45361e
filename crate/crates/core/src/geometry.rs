//! Oriented boxes, polygon helpers and the map model with its signed
//! distance grid.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scenario::{as_array, as_points, as_u64, Vec2};

pub const MAP_FORMAT_VERSION: u64 = 1;
pub const DEFAULT_SDF_RESOLUTION: f64 = 0.2;
const GRID_MARGIN: f64 = 6.0;

fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

/// Derivative of a scalar with respect to a box pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGrad {
    pub center: Vec2,
    pub heading: f64,
}

impl PoseGrad {
    pub fn zero() -> Self {
        Self {
            center: Vec2::zeros(),
            heading: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            center: self.center * s,
            heading: self.heading * s,
        }
    }
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            heading,
            half_length,
            half_width,
        }
    }

    pub fn axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.heading.sin_cos();
        (Vec2::new(c, s), Vec2::new(-s, c))
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let fl = f * self.half_length;
        let wl = l * self.half_width;
        [
            self.center + fl + wl,
            self.center - fl + wl,
            self.center - fl - wl,
            self.center + fl - wl,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (f, l) = self.axes();
        let d = p - self.center;
        d.dot(&f).abs() <= self.half_length && d.dot(&l).abs() <= self.half_width
    }
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let p = c.dot(&axis);
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Separating-axis test over the four edge normals; touching counts as overlap.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let (fa, la) = a.axes();
    let (fb, lb) = b.axes();
    for axis in [fa, la, fb, lb] {
        let (a_lo, a_hi) = project(&ca, axis);
        let (b_lo, b_hi) = project(&cb, axis);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

/// Closest point on segment `e0 -> e1` to `p`, as the segment parameter.
pub fn segment_param(p: Vec2, e0: Vec2, e1: Vec2) -> f64 {
    let d = e1 - e0;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        0.0
    } else {
        ((p - e0).dot(&d) / len2).clamp(0.0, 1.0)
    }
}

pub fn point_segment_distance(p: Vec2, e0: Vec2, e1: Vec2) -> f64 {
    let t = segment_param(p, e0, e1);
    (p - (e0 + (e1 - e0) * t)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDistance {
    pub distance: f64,
    pub grad_a: PoseGrad,
    pub grad_b: PoseGrad,
}

struct Candidate {
    dist: f64,
    t: f64,
    corner: usize,
    edge: usize,
    corner_owner_is_a: bool,
}

fn scan(corners: &[Vec2; 4], edges: &[Vec2; 4], owner_a: bool, best: &mut Option<Candidate>) {
    for (ci, &p) in corners.iter().enumerate() {
        for ei in 0..4 {
            let e0 = edges[ei];
            let e1 = edges[(ei + 1) % 4];
            let t = segment_param(p, e0, e1);
            let dist = (p - (e0 + (e1 - e0) * t)).norm();
            if best.as_ref().is_none_or(|b| dist < b.dist) {
                *best = Some(Candidate {
                    dist,
                    t,
                    corner: ci,
                    edge: ei,
                    corner_owner_is_a: owner_a,
                });
            }
        }
    }
}

/// Distance between the closest points of two boxes and its envelope-rule
/// gradient with respect to both poses. Overlapping boxes give zero.
pub fn box_distance(a: &OrientedBox, b: &OrientedBox) -> BoxDistance {
    if boxes_overlap(a, b) {
        return BoxDistance {
            distance: 0.0,
            grad_a: PoseGrad::zero(),
            grad_b: PoseGrad::zero(),
        };
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = None;
    scan(&ca, &cb, true, &mut best);
    scan(&cb, &ca, false, &mut best);
    let best = best.expect("boxes always have corners");

    let (pbox, pc, ebox, ec) = if best.corner_owner_is_a {
        (a, &ca, b, &cb)
    } else {
        (b, &cb, a, &ca)
    };
    let p = pc[best.corner];
    let e0 = ec[best.edge];
    let e1 = ec[(best.edge + 1) % 4];
    let q = e0 + (e1 - e0) * best.t;
    let n = (p - q) / best.dist;

    let g_corner = PoseGrad {
        center: n,
        heading: n.dot(&perp(p - pbox.center)),
    };
    let g_edge = PoseGrad {
        center: -n,
        heading: -(1.0 - best.t) * n.dot(&perp(e0 - ebox.center)) - best.t * n.dot(&perp(e1 - ebox.center)),
    };
    let (grad_a, grad_b) = if best.corner_owner_is_a {
        (g_corner, g_edge)
    } else {
        (g_edge, g_corner)
    };
    BoxDistance {
        distance: best.dist,
        grad_a,
        grad_b,
    }
}

/// Simple polygon, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        let mut p = Self { vertices };
        if p.signed_area() < 0.0 {
            p.vertices.reverse();
        }
        p
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| cross(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum::<f64>()
            / 2.0
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Distance from `p` to the polygon outline.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Regular grid of signed distances sampled at nodes
/// `origin + (i, j) * resolution`, row-major in `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: Vec2,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64, j as f64) * self.resolution
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn in_extent(&self, p: Vec2) -> bool {
        let max = self.node(self.nx - 1, self.ny - 1);
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= max.x && p.y <= max.y
    }

    /// Bilinear interpolation with its spatial gradient; points outside the
    /// grid are clamped to the border (zero gradient across the clamp).
    pub fn sample(&self, p: Vec2) -> (f64, Vec2) {
        let fx = (p.x - self.origin.x) / self.resolution;
        let fy = (p.y - self.origin.y) / self.resolution;
        let max_x = (self.nx - 1) as f64;
        let max_y = (self.ny - 1) as f64;
        let (cx, gx) = if fx < 0.0 {
            (0.0, 0.0)
        } else if fx > max_x {
            (max_x, 0.0)
        } else {
            (fx, 1.0)
        };
        let (cy, gy) = if fy < 0.0 {
            (0.0, 0.0)
        } else if fy > max_y {
            (max_y, 0.0)
        } else {
            (fy, 1.0)
        };
        let i = (cx.floor() as usize).min(self.nx - 2);
        let j = (cy.floor() as usize).min(self.ny - 2);
        let tx = cx - i as f64;
        let ty = cy - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        let value = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        let dx = ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) / self.resolution;
        let dy = ((1.0 - tx) * (v01 - v00) + tx * (v11 - v10)) / self.resolution;
        (value, Vec2::new(dx * gx, dy * gy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedRoute {
    pub name: String,
    pub points: Vec<Vec2>,
}

/// Drivable area as a union of simple polygons, named centerline routes and
/// the derived signed distance grid (positive on the road).
#[derive(Debug, Clone, PartialEq)]
pub struct MapModel {
    pub map_id: String,
    pub drivable: Vec<Polygon>,
    pub routes: Vec<NamedRoute>,
    pub sdf: SdfGrid,
    boundary: Vec<(Vec2, Vec2)>,
}

impl MapModel {
    pub fn new(
        map_id: impl Into<String>,
        drivable: Vec<Polygon>,
        mut routes: Vec<NamedRoute>,
        resolution: f64,
    ) -> Result<Self> {
        if drivable.is_empty() {
            return Err(Error::DegenerateGeometry("no drivable polygons".into()));
        }
        for (k, p) in drivable.iter().enumerate() {
            if !p.is_simple() || p.signed_area().abs() < 1e-9 {
                return Err(Error::DegenerateGeometry(format!("polygon {k} is not simple")));
            }
        }
        if !(resolution > 0.0) {
            return Err(Error::DegenerateGeometry("grid resolution must be positive".into()));
        }
        routes.sort_by(|a, b| a.name.cmp(&b.name));
        let boundary = union_boundary(&drivable);
        let sdf = build_sdf(&drivable, &boundary, resolution);
        Ok(Self {
            map_id: map_id.into(),
            drivable,
            routes,
            sdf,
            boundary,
        })
    }

    pub fn inside(&self, p: Vec2) -> bool {
        self.drivable.iter().any(|poly| poly.contains(p))
    }

    /// Exact signed distance to the boundary of the drivable union.
    pub fn exact_sdf(&self, p: Vec2) -> f64 {
        let d = self
            .boundary
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        if self.inside(p) {
            d
        } else {
            -d
        }
    }

    pub fn boundary_segments(&self) -> &[(Vec2, Vec2)] {
        &self.boundary
    }

    pub fn route(&self, name: &str) -> Option<&NamedRoute> {
        self.routes.iter().find(|r| r.name == name)
    }

    pub fn sdf_at(&self, p: Vec2) -> f64 {
        self.sdf.sample(p).0
    }

    /// Gaussian off-road potential `exp(-max(sdf, 0)^2 / (2 sigma^2))` and its
    /// gradient. Points off the grid are clamped to its border.
    pub fn offroad_field(&self, p: Vec2, sigma: f64) -> (f64, Vec2) {
        let (d, g) = self.sdf.sample(p);
        if d <= 0.0 {
            return (1.0, Vec2::zeros());
        }
        let s2 = sigma * sigma;
        let value = (-d * d / (2.0 * s2)).exp();
        (value, g * (-value * d / s2))
    }

    /// Like [`MapModel::offroad_field`] but rejects points off the grid.
    pub fn offroad_field_strict(&self, p: Vec2, sigma: f64) -> Result<(f64, Vec2)> {
        if !self.sdf.in_extent(p) {
            return Err(Error::OutOfExtent(p.x, p.y));
        }
        Ok(self.offroad_field(p, sigma))
    }

    /// True when the center or any corner has negative interpolated sdf.
    pub fn box_offroad_violation(&self, b: &OrientedBox) -> bool {
        self.sdf_at(b.center) < 0.0 || b.corners().iter().any(|&c| self.sdf_at(c) < 0.0)
    }

    pub fn to_json_value(&self) -> Value {
        let pts = |ps: &[Vec2]| ps.iter().map(|p| json!([p.x, p.y])).collect::<Vec<_>>();
        let routes: serde_json::Map<String, Value> = self
            .routes
            .iter()
            .map(|r| (r.name.clone(), Value::Array(pts(&r.points))))
            .collect();
        json!({
            "version": MAP_FORMAT_VERSION,
            "map_id": self.map_id,
            "drivable": self.drivable.iter().map(|p| Value::Array(pts(&p.vertices))).collect::<Vec<_>>(),
            "routes": routes,
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.to_json_value()).expect("map JSON is always serializable")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::schema("$", e.to_string()))?;
        let version = as_u64(
            v.get("version")
                .ok_or_else(|| Error::schema("version", "missing required key"))?,
            "version",
        )?;
        if version != MAP_FORMAT_VERSION {
            return Err(Error::schema("version", format!("unsupported version {version}")));
        }
        let map_id = v
            .get("map_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::schema("map_id", "expected a string"))?;
        let drivable = as_array(
            v.get("drivable")
                .ok_or_else(|| Error::schema("drivable", "missing required key"))?,
            "drivable",
        )?
        .iter()
        .enumerate()
        .map(|(i, p)| as_points(p, &format!("drivable[{i}]")).map(Polygon::new))
        .collect::<Result<Vec<_>>>()?;
        let mut routes = Vec::new();
        if let Some(r) = v.get("routes") {
            let obj: &serde_json::Map<String, Value> = r
                .as_object()
                .ok_or_else(|| Error::schema("routes", "expected an object"))?;
            let sorted: BTreeMap<_, _> = obj.iter().collect();
            for (name, pts) in sorted {
                routes.push(NamedRoute {
                    name: name.clone(),
                    points: as_points(pts, &format!("routes.{name}"))?,
                });
            }
        }
        MapModel::new(map_id, drivable, routes, DEFAULT_SDF_RESOLUTION)
    }
}

/// Polygon edge pieces that lie on the boundary of the union. Each edge is
/// cut into short pieces; a piece is kept when a point just outside it (along
/// the outward normal) is outside every polygon.
fn union_boundary(polys: &[Polygon]) -> Vec<(Vec2, Vec2)> {
    const PIECE: f64 = 0.05;
    const PROBE: f64 = 1e-4;
    let inside_any = |p: Vec2| polys.iter().any(|poly| poly.contains(p));
    let mut out = Vec::new();
    for poly in polys {
        for (a, b) in poly.edges() {
            let len = (b - a).norm();
            if len == 0.0 {
                continue;
            }
            let dir = (b - a) / len;
            // outward normal of a counter-clockwise polygon
            let outward = Vec2::new(dir.y, -dir.x);
            let pieces = (len / PIECE).ceil().max(1.0) as usize;
            let mut run_start: Option<usize> = None;
            for k in 0..=pieces {
                let keep = k < pieces && {
                    let mid = a + (b - a) * ((k as f64 + 0.5) / pieces as f64);
                    !inside_any(mid + outward * PROBE)
                };
                match (keep, run_start) {
                    (true, None) => run_start = Some(k),
                    (false, Some(s)) => {
                        let p0 = a + (b - a) * (s as f64 / pieces as f64);
                        let p1 = a + (b - a) * (k as f64 / pieces as f64);
                        out.push((p0, p1));
                        run_start = None;
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

fn build_sdf(polys: &[Polygon], boundary: &[(Vec2, Vec2)], resolution: f64) -> SdfGrid {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in polys.iter().flat_map(|p| p.vertices.iter()) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let origin = Vec2::new(
        ((lo.x - GRID_MARGIN) / resolution).floor() * resolution,
        ((lo.y - GRID_MARGIN) / resolution).floor() * resolution,
    );
    let nx = (((hi.x + GRID_MARGIN) - origin.x) / resolution).ceil() as usize + 1;
    let ny = (((hi.y + GRID_MARGIN) - origin.y) / resolution).ceil() as usize + 1;

    // Bucket boundary segments into coarse tiles so each node only scans
    // nearby segments, growing the search ring until it is conclusive.
    let tile = 4.0;
    let tx = ((nx as f64 * resolution) / tile).ceil() as usize + 1;
    let ty = ((ny as f64 * resolution) / tile).ceil() as usize + 1;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); tx * ty];
    let tile_of = |p: Vec2| {
        let i = (((p.x - origin.x) / tile).floor().max(0.0) as usize).min(tx - 1);
        let j = (((p.y - origin.y) / tile).floor().max(0.0) as usize).min(ty - 1);
        (i, j)
    };
    for (k, &(a, b)) in boundary.iter().enumerate() {
        let (i0, j0) = tile_of(a.inf(&b));
        let (i1, j1) = tile_of(a.sup(&b));
        for j in j0..=j1 {
            for i in i0..=i1 {
                buckets[j * tx + i].push(k);
            }
        }
    }

    let mut values = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let p = origin + Vec2::new(i as f64, j as f64) * resolution;
            let (ci, cj) = tile_of(p);
            let mut best = f64::INFINITY;
            let mut ring = 0usize;
            loop {
                let i_lo = ci.saturating_sub(ring);
                let j_lo = cj.saturating_sub(ring);
                let i_hi = (ci + ring).min(tx - 1);
                let j_hi = (cj + ring).min(ty - 1);
                for jj in j_lo..=j_hi {
                    for ii in i_lo..=i_hi {
                        let on_ring = ii == i_lo || ii == i_hi || jj == j_lo || jj == j_hi;
                        if ring > 0 && !on_ring {
                            continue;
                        }
                        for &k in &buckets[jj * tx + ii] {
                            let (a, b) = boundary[k];
                            best = best.min(point_segment_distance(p, a, b));
                        }
                    }
                }
                // every segment outside the scanned square is at least
                // `ring * tile` away from p
                let covered = ring as f64 * tile;
                let exhausted = i_lo == 0 && j_lo == 0 && i_hi == tx - 1 && j_hi == ty - 1;
                if best <= covered || exhausted {
                    break;
                }
                ring += 1;
            }
            let inside = polys.iter().any(|poly| poly.contains(p));
            values[j * nx + i] = if inside { best } else { -best };
        }
    }
    SdfGrid {
        origin,
        resolution,
        nx,
        ny,
        values,
    }
}

/// Maps keyed by id.
#[derive(Debug, Clone, Default)]
pub struct MapSet {
    maps: BTreeMap<String, MapModel>,
}

impl MapSet {
    pub fn new(maps: impl IntoIterator<Item = MapModel>) -> Self {
        Self {
            maps: maps.into_iter().map(|m| (m.map_id.clone(), m)).collect(),
        }
    }

    pub fn insert(&mut self, map: MapModel) {
        self.maps.insert(map.map_id.clone(), map);
    }

    pub fn get(&self, id: &str) -> Result<&MapModel> {
        self.maps.get(id).ok_or_else(|| Error::UnknownMap(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapModel> {
        self.maps.values()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}
