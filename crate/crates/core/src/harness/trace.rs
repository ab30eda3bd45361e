use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::write_file;
use crate::error::Result;
use crate::geometry::MapModel;
use crate::scenario::VerdictKind;
use crate::sim::RolloutResult;

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn trace_csv(result: &RolloutResult) -> String {
    let mut out = String::from("t,agent,x,y,heading,speed\n");
    for (t, s) in result.states.iter().enumerate() {
        for (i, a) in s.agents.iter().enumerate() {
            let _ = writeln!(
                out,
                "{t},{i},{:.6},{:.6},{:.6},{:.6}",
                a.position.x, a.position.y, a.heading, a.speed
            );
        }
    }
    out
}

/// Overhead plot: road outline, one polyline per agent, boxes at the final
/// step and a cross at the impact point of an ego collision.
pub fn trace_svg(result: &RolloutResult, map: &MapModel) -> String {
    let segs = map.boundary_segments();
    let (mut lo, mut hi) = (
        nalgebra::Vector2::repeat(f64::INFINITY),
        nalgebra::Vector2::repeat(f64::NEG_INFINITY),
    );
    for (a, b) in segs {
        lo = lo.inf(a).inf(b);
        hi = hi.sup(a).sup(b);
    }
    for s in &result.states {
        for a in &s.agents {
            lo = lo.inf(&a.position);
            hi = hi.sup(&a.position);
        }
    }
    let pad = 5.0;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    // World y points up, SVG y points down.
    let x = |v: f64| v - lo.x + pad;
    let y = |v: f64| hi.y - v + pad;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.2} {h:.2}" width="{:.0}" height="{:.0}">"#,
        w * 6.0,
        h * 6.0
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#f7f7f7"/>"##);
    let _ = write!(svg, r##"<path fill="none" stroke="#444" stroke-width="0.3" d=""##);
    for (a, b) in segs {
        let _ = write!(svg, "M{:.2} {:.2}L{:.2} {:.2}", x(a.x), y(a.y), x(b.x), y(b.y));
    }
    let _ = writeln!(svg, r#""/>"#);

    let n = result.states.first().map_or(0, |s| s.agents.len());
    for i in 0..n {
        let color = COLORS[i.min(COLORS.len() - 1)];
        let pts: Vec<String> = result
            .states
            .iter()
            .map(|s| format!("{:.2},{:.2}", x(s.agents[i].position.x), y(s.agents[i].position.y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="0.4" points="{}"/>"#,
            pts.join(" ")
        );
        if let Some(last) = result.states.last() {
            let c = last.agents[i].bbox().corners();
            let poly: Vec<String> = c.iter().map(|p| format!("{:.2},{:.2}", x(p.x), y(p.y))).collect();
            let _ = writeln!(
                svg,
                r#"<polygon fill="{color}" fill-opacity="0.5" stroke="{color}" stroke-width="0.2" points="{}"/>"#,
                poly.join(" ")
            );
        }
    }

    if result.verdict.kind == VerdictKind::EgoCollision {
        if let (Some(last), Some((a, b))) = (result.states.last(), result.verdict.agents_involved) {
            let p = (last.agents[a].position + last.agents[b].position) * 0.5;
            let (cx, cy) = (x(p.x), y(p.y));
            let _ = writeln!(
                svg,
                r#"<path class="impact" stroke="black" stroke-width="0.5" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}"/>"#,
                cx - 1.5,
                cy - 1.5,
                cx + 1.5,
                cy + 1.5,
                cx - 1.5,
                cy + 1.5,
                cx + 1.5,
                cy - 1.5
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `<stem>.csv` and `<stem>.svg`; returns both paths.
pub fn emit_traces(result: &RolloutResult, map: &MapModel, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    write_file(&csv, trace_csv(result).as_bytes())?;
    write_file(&svg, trace_svg(result, map).as_bytes())?;
    Ok((csv, svg))
}
