//! Self-contained SVG plots of recorded trajectories.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::io::{EntityKind, TrajectoryRow};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN: f64 = 70.0;
const LEGEND_W: f64 = 140.0;
const AGENT_COLORS: [&str; 5] = ["#1f77b4", "#2ca02c", "#9467bd", "#17becf", "#8c564b"];
const TARGET_COLORS: [&str; 5] = ["#d62728", "#ff7f0e", "#e377c2", "#bcbd22", "#7f7f7f"];

struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit(rows: &[TrajectoryRow]) -> Frame {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for r in rows {
            xs.push(r.x);
            ys.push(r.y);
            if let (Some(x), Some(y)) = (r.est_x, r.est_y) {
                xs.push(x);
                ys.push(y);
            }
        }
        let lo_hi = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() { (lo, hi) } else { (-100.0, 100.0) }
        };
        let (xl, xh) = lo_hi(&xs);
        let (yl, yh) = lo_hi(&ys);
        let span = (xh - xl).max(yh - yl).max(20.0) * 1.1;
        let (cx, cy) = ((xl + xh) / 2.0, (yl + yh) / 2.0);
        let plot = (WIDTH - 2.0 * MARGIN - LEGEND_W).min(HEIGHT - 2.0 * MARGIN);
        Frame { x0: cx - span / 2.0, y0: cy - span / 2.0, scale: plot / span }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) * self.scale
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) * self.scale
    }

    fn span(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN - LEGEND_W).min(HEIGHT - 2.0 * MARGIN) / self.scale
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, extra: &str) {
    if pts.is_empty() {
        return;
    }
    let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>"#, d.join(" "));
}

/// Agent paths (solid), target paths (solid), target estimates (dashed)
/// and collision markers, with axes in metres and one legend entry per
/// entity.
pub fn render_svg(rows: &[TrajectoryRow], title: &str) -> String {
    let f = Frame::fit(rows);
    let mut entities: BTreeMap<usize, (EntityKind, Vec<&TrajectoryRow>)> = BTreeMap::new();
    for r in rows {
        entities.entry(r.entity_id).or_insert_with(|| (r.kind, Vec::new())).1.push(r);
    }
    for (_, rs) in entities.values_mut() {
        rs.sort_by_key(|r| r.step);
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="30" font-size="16">{}</text>"#, MARGIN, escape(title));

    let span = f.span();
    let (left, right) = (MARGIN, MARGIN + span * f.scale);
    let (top, bottom) = (HEIGHT - MARGIN - span * f.scale, HEIGHT - MARGIN);
    let _ = writeln!(s, r##"<g id="axes" stroke="#333" stroke-width="1">"##);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}"/>"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{left:.2}" y2="{top:.2}"/>"#);
    let step = nice_step(span);
    let mut v = (f.x0 / step).ceil() * step;
    while v <= f.x0 + span {
        let x = f.px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" stroke="none">{v:.0}</text>"#, bottom + 20.0);
        v += step;
    }
    let mut v = (f.y0 / step).ceil() * step;
    while v <= f.y0 + span {
        let y = f.py(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" stroke="none">{v:.0}</text>"#, left - 8.0, y + 4.0);
        v += step;
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x [m]</text>"#, (left + right) / 2.0, HEIGHT - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">y [m]</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );

    let (mut na, mut nt) = (0usize, 0usize);
    let mut legend = Vec::new();
    for (id, (kind, rs)) in &entities {
        let (color, label) = match kind {
            EntityKind::Agent => {
                na += 1;
                (AGENT_COLORS[(na - 1) % AGENT_COLORS.len()], format!("agent {id}"))
            }
            EntityKind::Target => {
                nt += 1;
                (TARGET_COLORS[(nt - 1) % TARGET_COLORS.len()], format!("target {id}"))
            }
        };
        let path: Vec<(f64, f64)> = rs.iter().map(|r| (f.px(r.x), f.py(r.y))).collect();
        let _ = writeln!(s, r#"<g class="entity" data-id="{id}">"#);
        polyline(&mut s, &path, color, "");
        if let Some((x, y)) = path.first() {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        if *kind == EntityKind::Target {
            let est: Vec<(f64, f64)> = rs
                .iter()
                .filter_map(|r| Some((f.px(r.est_x?), f.py(r.est_y?))))
                .collect();
            polyline(&mut s, &est, color, r#" stroke-dasharray="4 3" opacity="0.8""#);
        }
        if *kind == EntityKind::Agent {
            for r in rs.iter().filter(|r| r.collision != 0) {
                let (x, y) = (f.px(r.x), f.py(r.y));
                let _ = writeln!(
                    s,
                    r#"<path class="collision" d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="black" stroke-width="2"/>"#,
                    x - 5.0,
                    y - 5.0,
                    x + 5.0,
                    y + 5.0,
                    x - 5.0,
                    y + 5.0,
                    x + 5.0,
                    y - 5.0
                );
            }
        }
        let _ = writeln!(s, "</g>");
        legend.push((color, label));
    }

    let lx = WIDTH - MARGIN - LEGEND_W + 20.0;
    let _ = writeln!(s, r#"<g id="legend">"#);
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{label}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            y + 4.0
        );
    }
    if nt > 0 {
        let y = MARGIN + 18.0 * legend.len() as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.2}">estimate</text>"##,
            lx + 20.0,
            lx + 26.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u32, id: usize, kind: EntityKind, x: f64, collision: u8) -> TrajectoryRow {
        TrajectoryRow {
            step,
            entity_id: id,
            kind,
            x,
            y: -x,
            z: 50.0,
            heading: 0.0,
            est_x: (kind == EntityKind::Target).then_some(x + 1.0),
            est_y: (kind == EntityKind::Target).then_some(-x),
            track_err: None,
            reward: 0.0,
            collision,
        }
    }

    #[test]
    fn empty_input_draws_axes_only() {
        let svg = render_svg(&[], "empty");
        assert!(svg.contains(r#"id="axes""#));
        assert!(!svg.contains("polyline"));
        assert_eq!(svg.matches("legend-entry").count(), 0);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn legend_lists_each_entity_and_output_is_deterministic() {
        let rows: Vec<_> = (0..5)
            .flat_map(|t| {
                [
                    row(t, 0, EntityKind::Agent, t as f64 * 10.0, 0),
                    row(t, 1, EntityKind::Agent, t as f64 * 5.0, (t == 3) as u8),
                    row(t, 2, EntityKind::Target, t as f64 * 3.0, 0),
                ]
            })
            .collect();
        let svg = render_svg(&rows, "t");
        assert_eq!(svg.matches("legend-entry").count(), 3);
        assert_eq!(svg.matches(r#"class="collision""#).count(), 1);
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg, render_svg(&rows, "t"));
    }
}
