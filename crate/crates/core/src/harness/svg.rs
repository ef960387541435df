//! Static top-down drawing of a trace.

use std::fmt::Write as _;

use crate::geometry::Vec2;
use crate::navigation::Cell;
use crate::pipeline::{EpisodeTrace, TraceError};

const PX_PER_M: f64 = 50.0;
const RAY_LEN: f64 = 6.0;

/// Map, objects, instructors, planned paths, pointing rays and the driven trajectory.
pub fn export_svg(trace: &EpisodeTrace) -> Result<String, TraceError> {
    let grid = trace.header.map.to_grid()?;
    let (lo, hi) = grid.extent();
    let w = (hi.x - lo.x) * PX_PER_M;
    let h = (hi.y - lo.y) * PX_PER_M;
    let px = |p: Vec2| ((p.x - lo.x) * PX_PER_M, (hi.y - p.y) * PX_PER_M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // occupied cells, merged into horizontal runs
    let res = grid.resolution();
    let cell_px = res * PX_PER_M;
    s.push_str(r##"<g fill="#333" stroke="none">"##);
    s.push('\n');
    for j in 0..grid.height() {
        let mut i = 0;
        while i < grid.width() {
            let c = grid.get(i, j);
            if c == Cell::Free {
                i += 1;
                continue;
            }
            let start = i;
            while i < grid.width() && grid.get(i, j) == c {
                i += 1;
            }
            let corner = grid.cell_center(start, j) - Vec2::new(0.5 * res, -0.5 * res);
            let (x, y) = px(corner);
            let fill = if c == Cell::Unknown { r##" fill="#bbb""## } else { "" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{cell_px:.2}"{fill}/>"#,
                (i - start) as f64 * cell_px
            );
        }
    }
    s.push_str("</g>\n");

    for o in &trace.header.objects {
        let (x0, y0) = px(Vec2::new(o.footprint.min[0], o.footprint.max[1]));
        let (x1, y1) = px(Vec2::new(o.footprint.max[0], o.footprint.min[1]));
        let colour = o
            .attributes
            .iter()
            .find(|a| matches!(a.as_str(), "red" | "blue" | "green" | "yellow" | "black" | "white" | "brown"))
            .map(String::as_str)
            .unwrap_or("orange");
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.6" stroke="black"><title>{}</title></rect>"#,
            x1 - x0,
            y1 - y0,
            o.id
        );
    }
    for i in &trace.header.instructors {
        let (x, y) = px(i.base.position());
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="purple"><title>{}</title></circle>"#,
            0.2 * PX_PER_M,
            i.id
        );
    }

    for r in &trace.steps {
        if let Some(p) = &r.detail.pointing {
            let o = p.ray_ground_origin();
            let e = o + Vec2::new(p.azimuth.cos(), p.azimuth.sin()) * RAY_LEN;
            let (x0, y0) = px(o);
            let (x1, y1) = px(e);
            let _ = writeln!(
                s,
                r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="crimson" stroke-dasharray="6 4"/>"#
            );
        }
        if let Some(path) = &r.detail.path {
            let pts: Vec<String> = path
                .iter()
                .map(|p| {
                    let (x, y) = px(p.position());
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="seagreen" stroke-width="2"/>"#, pts.join(" "));
        }
        if let Some(g) = &r.detail.goal {
            let (x, y) = px(g.position());
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="seagreen"/>"#);
        }
    }

    let mut traj = vec![px(trace.header.robot.pose.position())];
    traj.extend(trace.steps.iter().map(|r| px(r.pose.position())));
    let pts: Vec<String> = traj.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="royalblue" stroke-width="2"/>"#, pts.join(" "));
    let end = trace.terminal.pose;
    let (x, y) = px(end.position());
    let _ = writeln!(
        s,
        r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="none" stroke="royalblue" stroke-width="2"><title>{}</title></circle>"#,
        trace.header.robot.radius * PX_PER_M,
        trace.terminal.outcome
    );
    s.push_str("</svg>\n");
    Ok(s)
}
