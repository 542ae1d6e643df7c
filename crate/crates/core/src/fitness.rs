//! Individual evaluation: firing rates on the frozen stimulus sets feed a
//! deliberately weak linear readout, and its clipped test R² is blended
//! with a structural shape gain into the selection score.
//!
//! The readout is retrained from all-zeros for every evaluation and stopped
//! after a handful of epochs, so only networks whose rate code makes edge
//! location *easy* to decode score well.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{run, SimParams};
use crate::genome::{GaParams, Genome};
use crate::matrix::Matrix;
use crate::phenotype::{express, Phenotype};
use crate::stimuli::{Stimulus, StimulusSet};

#[derive(Debug, Error)]
pub enum FitnessError {
    #[error("coefficient of determination undefined: all targets identical")]
    DegenerateTargets,
}

/// Readout hyperparameters plus the synaptic weight scale used when
/// expressing genomes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Magnitude of every expressed synapse.
    pub weight_scale: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { learning_rate: 0.01, epochs: 7, weight_scale: 0.1 }
    }
}

/// Single linear unit mapping ganglion-cell rates to an edge location.
#[derive(Clone, Debug, PartialEq)]
pub struct Perceptron {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Perceptron {
    pub fn predict_one(&self, rates: &[f64]) -> f64 {
        self.b + self.w.iter().zip(rates).map(|(w, r)| w * r).sum::<f64>()
    }

    pub fn predict(&self, rates: &Matrix) -> Vec<f64> {
        (0..rates.rows).map(|k| self.predict_one(rates.row(k))).collect()
    }
}

/// Per-individual evaluation breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub r2: f64,
    pub shape_gain: f64,
    pub fitness: f64,
}

/// Structural term rewarding sparse interneuron wiring: each interneuron
/// contributes 1 - |#targets - 1|, averaged over interneurons. Zero when
/// the photoreceptor projects nowhere or no interneurons exist.
pub fn shape_gain(genome: &Genome) -> f64 {
    let n_t = genome.interneuron_count();
    if genome.photoreceptor.targets.is_empty() || n_t == 0 {
        return 0.0;
    }
    genome
        .interneurons
        .iter()
        .map(|gene| 1.0 - (gene.targets.len() as f64 - 1.0).abs())
        .sum::<f64>()
        / n_t as f64
}

fn rates_for(phen: &Phenotype, stimuli: &[Stimulus], sim: &SimParams) -> Matrix {
    let n_g = phen.cell_counts[phen.rgc_index];
    let mut data = Vec::with_capacity(stimuli.len() * n_g);
    for s in stimuli {
        data.extend(run(phen, &s.values, sim).f);
    }
    Matrix { rows: stimuli.len(), cols: n_g, data }
}

/// Simulates every train and test stimulus; one row of ganglion-cell rates
/// per stimulus.
pub fn collect_rates(
    phen: &Phenotype,
    stimuli: &StimulusSet,
    sim: &SimParams,
) -> (Matrix, Matrix) {
    (rates_for(phen, stimuli.train(), sim), rates_for(phen, stimuli.test(), sim))
}

/// Full-batch gradient descent on mean squared error from an all-zeros
/// start. Few epochs and a small rate keep this learner deliberately weak.
pub fn train_weak_perceptron(rates: &Matrix, targets: &[f64], hp: &EvalParams) -> Perceptron {
    assert_eq!(rates.rows, targets.len(), "one target per training row");
    let n = targets.len() as f64;
    let mut p = Perceptron { w: vec![0.0; rates.cols], b: 0.0 };
    let mut residual = vec![0.0; targets.len()];
    for _ in 0..hp.epochs {
        for (k, r) in residual.iter_mut().enumerate() {
            *r = p.predict_one(rates.row(k)) - targets[k];
        }
        let step = hp.learning_rate * 2.0 / n;
        for (j, w) in p.w.iter_mut().enumerate() {
            let grad: f64 = (0..rates.rows).map(|k| rates.get(k, j) * residual[k]).sum();
            *w -= step * grad;
        }
        p.b -= step * residual.iter().sum::<f64>();
    }
    p
}

/// 1 - SS_res/SS_tot clipped into [-1, 1]. Errors when the targets carry no
/// variance, which leaves the score undefined.
pub fn r2_score(predictions: &[f64], targets: &[f64]) -> Result<f64, FitnessError> {
    assert_eq!(predictions.len(), targets.len());
    assert!(targets.len() >= 2, "need at least two targets");
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(FitnessError::DegenerateTargets);
    }
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum();
    Ok((1.0 - ss_res / ss_tot).clamp(-1.0, 1.0))
}

/// Whole-pipeline score for one genome. Deterministic: no randomness enters
/// evaluation.
pub fn evaluate(
    genome: &Genome,
    stimuli: &StimulusSet,
    sim: &SimParams,
    eval: &EvalParams,
    ga: &GaParams,
) -> Result<FitnessReport, FitnessError> {
    let phen = express(genome, eval.weight_scale);
    let (train_rates, test_rates) = collect_rates(&phen, stimuli, sim);
    let train_targets: Vec<f64> = stimuli.train().iter().map(|s| s.edge_location).collect();
    let test_targets: Vec<f64> = stimuli.test().iter().map(|s| s.edge_location).collect();
    let perceptron = train_weak_perceptron(&train_rates, &train_targets, eval);
    let r2 = r2_score(&perceptron.predict(&test_rates), &test_targets)?;
    let gain = shape_gain(genome);
    Ok(FitnessReport { r2, shape_gain: gain, fitness: ga.w_r2 * r2 + ga.w_shape * gain })
}
