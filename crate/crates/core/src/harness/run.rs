//! Single runs, seed sweeps and their summaries.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{ScenarioError, ScenarioSpec};
use crate::grounding::Lexicon;
use crate::pipeline::{Episode, EpisodeOptions, EpisodeTrace, PipelineState, StopReason};
use crate::world::NoiseConfig;

/// Outcome of one episode, scored against the scenario's expected target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub outcome: PipelineState,
    pub stop_reason: Option<StopReason>,
    pub failure_detail: Option<String>,
    pub final_distance: Option<f64>,
    pub azimuth_error: Option<f64>,
    pub states: Vec<PipelineState>,
    pub steps: u64,
    pub sim_time: f64,
    pub invocations: u32,
    pub gaze_degraded: bool,
    pub target_in_view: bool,
    pub chosen: Option<String>,
    pub expected_target: Option<String>,
    pub success_radius: f64,
    pub noise: NoiseConfig,
    pub success: bool,
}

/// Runs one episode. `seed` overrides the scenario's seed.
pub fn run(spec: &ScenarioSpec, seed: Option<u64>) -> Result<(EpisodeTrace, RunReport), ScenarioError> {
    run_with(spec, seed, Arc::new(Lexicon::default()), spec.noise)
}

/// Like [`run`] with an explicit lexicon and noise model.
pub fn run_with(
    spec: &ScenarioSpec,
    seed: Option<u64>,
    lexicon: Arc<Lexicon>,
    noise: NoiseConfig,
) -> Result<(EpisodeTrace, RunReport), ScenarioError> {
    let seed = seed.unwrap_or(spec.seed);
    let world = spec.build_world(seed)?;
    let mut cfg = spec.pipeline_config();
    cfg.noise = noise;
    let opts = EpisodeOptions {
        scenario: spec.name.clone(),
        expected_target: spec.expected_target.clone(),
        fail_when_idle: true,
    };
    let trace = Episode::new(world, cfg, lexicon, spec.commands.clone(), opts).run_to_end();
    let report = report_for(&trace, spec.success_radius, noise);
    Ok((trace, report))
}

/// Scores a finished trace.
pub fn report_for(trace: &EpisodeTrace, success_radius: f64, noise: NoiseConfig) -> RunReport {
    let t = &trace.terminal;
    let m = &t.metrics;
    let expected = trace.header.expected_target.clone();
    let right_object = match (&expected, &m.chosen) {
        (Some(e), Some(c)) => e == c,
        (Some(_), None) => false,
        (None, _) => true,
    };
    let success = t.outcome == PipelineState::Done
        && m.final_distance.is_some_and(|d| d <= success_radius)
        && m.target_in_view
        && right_object;
    RunReport {
        scenario: trace.header.scenario.clone(),
        seed: trace.header.seed,
        outcome: t.outcome,
        stop_reason: t.stop_reason,
        failure_detail: t.failure_detail.clone(),
        final_distance: m.final_distance,
        azimuth_error: m.azimuth_error,
        states: trace.state_sequence(),
        steps: m.steps,
        sim_time: m.sim_time,
        invocations: m.invocations,
        gaze_degraded: m.gaze_degraded,
        target_in_view: m.target_in_view,
        chosen: m.chosen.clone(),
        expected_target: expected,
        success_radius,
        noise,
        success,
    }
}

/// Runs every seed of a scenario in parallel; reports come back sorted by seed.
pub fn sweep(spec: &ScenarioSpec, seeds: &[u64]) -> Result<Vec<RunReport>, ScenarioError> {
    sweep_with(spec, seeds, spec.noise)
}

pub fn sweep_with(spec: &ScenarioSpec, seeds: &[u64], noise: NoiseConfig) -> Result<Vec<RunReport>, ScenarioError> {
    spec.build_world(spec.seed)?;
    let lex = Arc::new(Lexicon::default());
    let mut reports: Vec<RunReport> = seeds
        .par_iter()
        .map(|&s| run_with(spec, Some(s), lex.clone(), noise).map(|(_, r)| r))
        .collect::<Result<_, _>>()?;
    reports.sort_by_key(|r| r.seed);
    Ok(reports)
}

/// Aggregate over one scenario's seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub scenario: String,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over runs that measured a distance.
    pub mean_final_distance: Option<f64>,
    /// Mean over runs that produced a pointing estimate, radians.
    pub mean_azimuth_error: Option<f64>,
    pub gaze_degraded_rate: f64,
    pub mean_invocations: f64,
    /// `outcome=count` pairs separated by `;`, sorted by outcome.
    pub outcomes: String,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Summarises reports of one scenario. Order of `reports` does not matter.
pub fn aggregate(scenario: &str, reports: &[RunReport]) -> BatchRow {
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let n = sorted.len();
    let successes = sorted.iter().filter(|r| r.success).count();
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    for r in &sorted {
        *outcomes.entry(r.outcome.to_string()).or_default() += 1;
    }
    BatchRow {
        scenario: scenario.to_string(),
        n,
        successes,
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        mean_final_distance: mean(sorted.iter().filter_map(|r| r.final_distance)),
        mean_azimuth_error: mean(sorted.iter().filter_map(|r| r.azimuth_error)),
        gaze_degraded_rate: if n == 0 {
            0.0
        } else {
            sorted.iter().filter(|r| r.gaze_degraded).count() as f64 / n as f64
        },
        mean_invocations: mean(sorted.iter().map(|r| r.invocations as f64)).unwrap_or(0.0),
        outcomes: outcomes.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
    }
}

/// One row per scenario.
pub fn batch(specs: &[ScenarioSpec], seeds: &[u64]) -> Result<Vec<BatchRow>, ScenarioError> {
    specs.iter().map(|s| Ok(aggregate(&s.name, &sweep(s, seeds)?))).collect()
}

pub fn batch_csv(rows: &[BatchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("batch rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}
