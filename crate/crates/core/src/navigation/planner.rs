//! A* on the inflated 8-connected grid with line-of-sight shortcutting.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::OccupancyGrid;
use crate::geometry::{Pose2, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("start pose ({x:.2}, {y:.2}) is in collision")]
    StartOccupied { x: f64, y: f64 },
    #[error("goal pose ({x:.2}, {y:.2}) is in collision")]
    GoalOccupied { x: f64, y: f64 },
    #[error("no path between start and goal")]
    NoPath,
}

/// Sequence of poses; consecutive positions are joined by straight segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Pose2>,
    pub length: f64,
}

impl Path {
    pub fn from_waypoints(waypoints: Vec<Pose2>) -> Self {
        let length = waypoints.windows(2).map(|w| (w[1].position() - w[0].position()).norm()).sum();
        Self { waypoints, length }
    }

    pub fn goal(&self) -> Option<&Pose2> {
        self.waypoints.last()
    }
}

/// Inflation that makes every point inside a free cell safe for a disk of `robot_radius`.
pub fn inflation_radius(grid: &OccupancyGrid, robot_radius: f64) -> f64 {
    robot_radius + 0.5 * grid.resolution() * std::f64::consts::SQRT_2
}

/// Inflates `grid` for `robot_radius` and plans on the result.
pub fn plan(grid: &OccupancyGrid, start: &Pose2, goal: &Pose2, robot_radius: f64) -> Result<Path, PlanError> {
    let inflated = grid.inflate(inflation_radius(grid, robot_radius));
    plan_inflated(&inflated, start, goal)
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // min-heap on f, then h, then index for a deterministic expansion order
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then_with(|| o.h.total_cmp(&self.h))
            .then_with(|| o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn octile(a: (i64, i64), b: (i64, i64)) -> f64 {
    let dx = (a.0 - b.0).abs() as f64;
    let dy = (a.1 - b.1).abs() as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// Grid-cell A* with no corner cutting. Costs are in cell units.
pub fn astar(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<Vec<(usize, usize)>> {
    let w = grid.width();
    let n = w * grid.height();
    let idx = |c: (i64, i64)| c.1 as usize * w + c.0 as usize;
    let s = (start.0 as i64, start.1 as i64);
    let g = (goal.0 as i64, goal.1 as i64);
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    cost[idx(s)] = 0.0;
    open.push(Open {
        f: octile(s, g),
        h: octile(s, g),
        idx: idx(s),
    });
    while let Some(Open { idx: cur, .. }) = open.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        let c = ((cur % w) as i64, (cur / w) as i64);
        if c == g {
            let mut out = vec![(c.0 as usize, c.1 as usize)];
            let mut k = cur;
            while parent[k] != usize::MAX {
                k = parent[k];
                out.push((k % w, k / w));
            }
            out.reverse();
            return Some(out);
        }
        for dj in -1..=1i64 {
            for di in -1..=1i64 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let nb = (c.0 + di, c.1 + dj);
                if !grid.is_free(nb.0, nb.1) {
                    continue;
                }
                let diagonal = di != 0 && dj != 0;
                if diagonal && !(grid.is_free(c.0 + di, c.1) && grid.is_free(c.0, c.1 + dj)) {
                    continue;
                }
                let ni = idx(nb);
                if closed[ni] {
                    continue;
                }
                let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
                let nc = cost[cur] + step;
                if nc < cost[ni] {
                    cost[ni] = nc;
                    parent[ni] = cur;
                    let h = octile(nb, g);
                    open.push(Open { f: nc + h, h, idx: ni });
                }
            }
        }
    }
    None
}

/// Greedy shortcutting: from each kept point jump to the farthest later point still in sight.
pub fn shortcut(grid: &OccupancyGrid, points: &[Vec2]) -> Vec<Vec2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut a = 0;
    while a + 1 < points.len() {
        let mut b = a + 1;
        for cand in (a + 2..points.len()).rev() {
            if grid.line_of_sight(&points[a], &points[cand]) {
                b = cand;
                break;
            }
        }
        out.push(points[b]);
        a = b;
    }
    out
}

/// Plans on an already inflated grid.
pub fn plan_inflated(inflated: &OccupancyGrid, start: &Pose2, goal: &Pose2) -> Result<Path, PlanError> {
    let sp = start.position();
    let gp = goal.position();
    let sc = inflated
        .world_to_cell(&sp)
        .filter(|&(i, j)| inflated.is_free(i as i64, j as i64))
        .ok_or(PlanError::StartOccupied { x: sp.x, y: sp.y })?;
    let gc = inflated
        .world_to_cell(&gp)
        .filter(|&(i, j)| inflated.is_free(i as i64, j as i64))
        .ok_or(PlanError::GoalOccupied { x: gp.x, y: gp.y })?;
    if (sp - gp).norm() < 1e-9 {
        return Ok(Path::from_waypoints(vec![*goal]));
    }
    let cells = astar(inflated, sc, gc).ok_or(PlanError::NoPath)?;
    let mut pts = Vec::with_capacity(cells.len() + 2);
    pts.push(sp);
    pts.extend(cells.iter().map(|&(i, j)| inflated.cell_center(i, j)));
    pts.push(gp);
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
    let pts = shortcut(inflated, &pts);
    let last = pts.len() - 1;
    let waypoints = pts
        .iter()
        .enumerate()
        .map(|(k, p)| match k {
            0 => Pose2::new(p.x, p.y, start.theta),
            _ if k == last => *goal,
            _ => {
                let d = p - pts[k - 1];
                Pose2::new(p.x, p.y, d.y.atan2(d.x))
            }
        })
        .collect();
    Ok(Path::from_waypoints(waypoints))
}
