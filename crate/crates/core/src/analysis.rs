//! Post-run analyses: one-hot spatial tuning curves of the evolved
//! ganglion cells, per-generation population statistics, and the
//! survival-gain significance test across trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dynamics::{run, SimParams};
use crate::evolution::GenerationRecord;
use crate::phenotype::Phenotype;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("survival-gain test needs at least 2 trials, got {0}")]
    TooFewTrials(usize),
}

/// Spatial tuning of one ganglion cell: firing rate as a function of which
/// single photoreceptor is driven, plus the zero-input baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct TuningCurve {
    pub rgc_index: usize,
    pub responses: Vec<f64>,
    pub baseline: f64,
}

/// Probes the network one photoreceptor at a time: `responses[m]` is the
/// rate under input `amplitude` at photoreceptor m and zero elsewhere.
pub fn tuning_curves(phen: &Phenotype, sim: &SimParams, amplitude: f64) -> Vec<TuningCurve> {
    let n_c = phen.cell_counts[0];
    let n_g = phen.cell_counts[phen.rgc_index];
    let baseline = run(phen, &vec![0.0; n_c], sim).f;
    let mut responses = vec![vec![0.0; n_c]; n_g];
    let mut input = vec![0.0; n_c];
    for m in 0..n_c {
        input[m] = amplitude;
        let rates = run(phen, &input, sim).f;
        input[m] = 0.0;
        for (k, &rate) in rates.iter().enumerate() {
            responses[k][m] = rate;
        }
    }
    responses
        .into_iter()
        .enumerate()
        .map(|(k, responses)| TuningCurve { rgc_index: k, responses, baseline: baseline[k] })
        .collect()
}

/// CSV body: one row per (ganglion cell, photoreceptor).
pub fn render_tuning_curves(curves: &[TuningCurve]) -> String {
    let mut out = String::from("rgc,photoreceptor,response,baseline\n");
    for c in curves {
        for (m, r) in c.responses.iter().enumerate() {
            out.push_str(&format!("{},{m},{r},{}\n", c.rgc_index, c.baseline));
        }
    }
    out
}

/// Linear-interpolation quantile (the common "type 7" convention) on a
/// sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Order statistics of one generation's fitness values plus the elite
/// fitness by rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub elite_fitness: Vec<f64>,
}

/// Order statistics for one bare fitness vector; elite fitness is the
/// descending prefix of the sorted values.
pub fn stats_from_fitness(generation: usize, fitness: &[f64], elite_count: usize) -> GenerationStats {
    assert!(!fitness.is_empty() && elite_count <= fitness.len());
    let mut sorted = fitness.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    GenerationStats {
        generation,
        min: sorted[0],
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max: *sorted.last().unwrap(),
        iqr: q3 - q1,
        elite_fitness: sorted.iter().rev().take(elite_count).copied().collect(),
    }
}

/// Exact per-generation order statistics over a trial's records.
pub fn population_stats(records: &[GenerationRecord]) -> Vec<GenerationStats> {
    assert!(!records.is_empty());
    records
        .iter()
        .map(|rec| {
            let fitness: Vec<f64> = rec.fitness().collect();
            let mut stats = stats_from_fitness(rec.generation, &fitness, rec.elites.len());
            // Records carry the authoritative elite ranking; the values are
            // identical, only tie-broken index choices could differ.
            stats.elite_fitness = rec.elites.iter().map(|e| e.fitness).collect();
            stats
        })
        .collect()
}

/// Worst-elite improvement over a whole trial: min-elite fitness at the
/// last generation minus at the first. Pure arithmetic on stored records.
pub fn survival_gain(records: &[GenerationRecord]) -> f64 {
    assert!(!records.is_empty());
    records.last().unwrap().min_elite_fitness() - records[0].min_elite_fitness()
}

/// One-sided one-sample t-test result for gains against zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTest {
    pub mean_gain: f64,
    pub t_statistic: f64,
    /// P(mean gain this large under the zero-gain null); small values
    /// support a real survival gain.
    pub p_value: f64,
}

/// Tests whether trial gains are significantly greater than zero.
/// Degenerate zero-variance samples use the documented convention:
/// p = 0 for a positive mean, else p = 1.
pub fn survival_gain_test(gains: &[f64]) -> Result<SurvivalTest, AnalysisError> {
    let n = gains.len();
    if n < 2 {
        return Err(AnalysisError::TooFewTrials(n));
    }
    let mean = gains.iter().sum::<f64>() / n as f64;
    let var = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(SurvivalTest {
            mean_gain: mean,
            t_statistic: if mean > 0.0 { f64::INFINITY } else { 0.0 },
            p_value: p,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2");
    Ok(SurvivalTest { mean_gain: mean, t_statistic: t, p_value: 1.0 - dist.cdf(t) })
}
