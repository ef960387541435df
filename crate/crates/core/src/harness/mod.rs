//! Scenario files, seeded runs, batch aggregation and trace export.

pub mod run;
pub mod scenario;
pub mod svg;

pub use run::{aggregate, batch, batch_csv, report_for, run, run_with, sweep, sweep_with, BatchRow, RunReport};
pub use scenario::{
    load_scenario, InlineMap, InstructorSpec, MapSpec, ObjectSpec, PointAt, RectSpec, RobotSpec, ScenarioError, ScenarioSpec,
    SCENARIO_SCHEMA_VERSION,
};
pub use svg::export_svg;

use std::path::{Path, PathBuf};

/// All `*.json` scenario files in a directory, sorted by path.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    Ok(v)
}
