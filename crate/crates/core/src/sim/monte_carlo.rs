//! Repeated runs over derived seeds.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::engine::run;
use super::metrics::RiskReport;
use super::scenario::Scenario;
use crate::error::SimError;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `index`, a counter hash of the base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Summary {
    /// Population statistics; percentiles use the nearest-rank rule.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // Shifted moments: identical inputs give exactly zero spread.
        let origin = values[0];
        let shift = sorted.iter().map(|v| v - origin).sum::<f64>() / n as f64;
        let mean = origin + shift;
        let variance =
            (sorted.iter().map(|v| (v - origin) * (v - origin)).sum::<f64>() / n as f64 - shift * shift).max(0.0);
        let rank = |p: f64| {
            let r = libm::ceil(p * n as f64) as usize;
            sorted[r.clamp(1, n) - 1]
        };
        Self {
            count: n,
            mean,
            std_dev: libm::sqrt(variance),
            min: sorted[0],
            max: sorted[n - 1],
            p50: rank(0.50),
            p95: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: u64,
    pub seed: u64,
    pub exposure_seconds: f64,
    pub mean_reaction: Option<f64>,
    pub max_reaction: Option<f64>,
    pub suppressed_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub base_seed: u64,
    pub exposure: Summary,
    /// Pooled over every resolved person entry of every run.
    pub reaction: Summary,
    pub unresolved_reactions: usize,
    pub suppressed_shots: Summary,
    pub per_run: Vec<RunSummary>,
}

/// Config for run `index`.
pub fn run_config(config: &SimConfig, index: u64) -> SimConfig {
    config.clone().with_seed(derive_seed(config.seed, index))
}

/// Folds per-run reports into an aggregate. Input order does not matter.
pub fn aggregate(base_seed: u64, runs: &[(u64, RiskReport)]) -> MonteCarloReport {
    let mut runs: Vec<&(u64, RiskReport)> = runs.iter().collect();
    runs.sort_by_key(|(index, _)| *index);

    let exposures: Vec<f64> = runs.iter().map(|(_, r)| r.exposure_seconds).collect();
    let reactions: Vec<f64> = runs.iter().flat_map(|(_, r)| r.reaction_latencies.iter().flatten().copied()).collect();
    let suppressed: Vec<f64> = runs.iter().map(|(_, r)| r.suppressed_shots as f64).collect();
    let unresolved = runs
        .iter()
        .map(|(_, r)| r.reaction_latencies.iter().filter(|l| l.is_none()).count())
        .sum();

    MonteCarloReport {
        runs: runs.len(),
        base_seed,
        exposure: Summary::of(&exposures),
        reaction: Summary::of(&reactions),
        unresolved_reactions: unresolved,
        suppressed_shots: Summary::of(&suppressed),
        per_run: runs
            .iter()
            .map(|(index, r)| RunSummary {
                index: *index,
                seed: r.seed,
                exposure_seconds: r.exposure_seconds,
                mean_reaction: r.mean_reaction,
                max_reaction: r.max_reaction,
                suppressed_shots: r.suppressed_shots,
            })
            .collect(),
    }
}

/// Sequential Monte Carlo over `n` derived seeds.
pub fn monte_carlo(scenario: &Scenario, config: &SimConfig, n: usize) -> Result<MonteCarloReport, SimError> {
    if n == 0 {
        return Err(SimError::InvalidScenario("monte carlo needs at least one run".into()));
    }
    let mut reports = Vec::with_capacity(n);
    for index in 0..n as u64 {
        let (report, _) = run(scenario, &run_config(config, index))?;
        reports.push((index, report));
    }
    Ok(aggregate(config.seed, &reports))
}
