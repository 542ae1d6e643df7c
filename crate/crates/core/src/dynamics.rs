//! Leaky membrane dynamics over an expressed network: photoreceptors driven
//! by external input, interneurons by synaptic current only, and
//! exponential integrate-and-fire ganglion cells with spike-and-reset.
//!
//! Integration is forward Euler with simultaneous update: every derivative
//! is evaluated on the pre-step state, then all potentials advance at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phenotype::Phenotype;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
}

/// Integration and neuron constants. Time is unitless; `tau` values from
/// the genome share the same scale as `dt` and `t_total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    pub t_total: f64,
    pub v_rest: f64,
    /// Soft threshold of the exponential spike-initiation term.
    pub theta: f64,
    /// Sharpness of the spike-initiation term.
    pub delta: f64,
    /// Detection threshold: crossing it records a spike and resets.
    pub theta_r: f64,
    pub v_reset: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1.0,
            t_total: 200.0,
            v_rest: 0.5,
            theta: 0.8,
            delta: 0.05,
            theta_r: 1.0,
            v_reset: 0.5,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fail = |msg: String| Err(DynamicsError::InvalidParams(msg));
        if !(self.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_total >= self.dt) {
            return fail(format!(
                "t_total {} shorter than one step dt {}",
                self.t_total, self.dt
            ));
        }
        if !(self.delta > 0.0) {
            return fail(format!("delta must be positive, got {}", self.delta));
        }
        if !(0.0 <= self.v_reset && self.v_reset < self.theta_r) {
            return fail(format!(
                "v_reset {} must lie in [0, theta_r = {})",
                self.v_reset, self.theta_r
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_total / self.dt).round() as usize
    }
}

/// Instantaneous simulation state: one potential per cell, cumulative spike
/// counts per ganglion cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub v: Vec<Vec<f64>>,
    pub spike_counts: Vec<u32>,
    pub t: f64,
}

impl SimState {
    pub fn new(phen: &Phenotype, v_rest: f64) -> SimState {
        SimState {
            v: phen.cell_counts.iter().map(|&n| vec![v_rest; n]).collect(),
            spike_counts: vec![0; phen.cell_counts[phen.rgc_index]],
            t: 0.0,
        }
    }
}

/// Time-averaged spike rates, one per ganglion cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FiringRates {
    pub f: Vec<f64>,
}

fn accumulate_drive(v: &[Vec<f64>], phen: &Phenotype, j: usize, out: &mut [f64]) {
    out.fill(0.0);
    for &i in &phen.incoming[j] {
        let w = &phen.weights[&(i, j)];
        debug_assert_eq!(w.cols, out.len());
        for (a, &v_pre) in v[i].iter().enumerate() {
            if v_pre == 0.0 {
                continue;
            }
            for (acc, &weight) in out.iter_mut().zip(w.row(a)) {
                *acc += v_pre * weight;
            }
        }
    }
}

/// Total synaptic current into each cell of type `j`: the presynaptic
/// potential vectors pushed through every weight matrix targeting `j`.
pub fn internal_current(state: &SimState, phen: &Phenotype, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; phen.cell_counts[j]];
    accumulate_drive(&state.v, phen, j, &mut out);
    out
}

fn step_with_scratch(
    state: &mut SimState,
    phen: &Phenotype,
    i_ext: &[f64],
    p: &SimParams,
    drives: &mut [Vec<f64>],
) {
    assert_eq!(i_ext.len(), phen.cell_counts[0], "external input per photoreceptor");
    for j in 0..phen.cell_counts.len() {
        accumulate_drive(&state.v, phen, j, &mut drives[j]);
    }
    let g = phen.rgc_index;
    for (j, v_type) in state.v.iter_mut().enumerate() {
        let inv_tau = p.dt / phen.time_constants[j];
        if j == g {
            for (k, v) in v_type.iter_mut().enumerate() {
                let rise = p.delta * ((*v - p.theta) / p.delta).exp();
                *v += (-(*v - p.v_rest) + rise + drives[j][k]) * inv_tau;
                if *v < 0.0 {
                    *v = 0.0;
                }
                if *v >= p.theta_r {
                    state.spike_counts[k] += 1;
                    *v = p.v_reset;
                }
            }
        } else {
            let ext = if j == 0 { Some(i_ext) } else { None };
            for (k, v) in v_type.iter_mut().enumerate() {
                let input = ext.map_or(0.0, |e| e[k]) + drives[j][k];
                *v += (-(*v - p.v_rest) + input) * inv_tau;
                // Limitation current: hold bounded potentials inside [0,1].
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    state.t += p.dt;
    debug_assert!(state.v[g].iter().all(|&v| (0.0..=p.theta_r).contains(&v)));
}

/// One forward-Euler step. Allocates scratch; the batch loop in [`run`]
/// reuses scratch instead.
pub fn step(state: &mut SimState, phen: &Phenotype, i_ext: &[f64], p: &SimParams) {
    let mut drives: Vec<Vec<f64>> = phen.cell_counts.iter().map(|&n| vec![0.0; n]).collect();
    step_with_scratch(state, phen, i_ext, p, &mut drives);
}

/// Full constant-input run from rest: returns spike counts divided by the
/// total duration. Pure: identical arguments give bitwise-identical rates.
pub fn run(phen: &Phenotype, i_ext: &[f64], p: &SimParams) -> FiringRates {
    let mut state = SimState::new(phen, p.v_rest);
    let mut drives: Vec<Vec<f64>> = phen.cell_counts.iter().map(|&n| vec![0.0; n]).collect();
    for _ in 0..p.n_steps() {
        step_with_scratch(&mut state, phen, i_ext, p, &mut drives);
    }
    rates_of(&state, p)
}

fn rates_of(state: &SimState, p: &SimParams) -> FiringRates {
    FiringRates {
        f: state.spike_counts.iter().map(|&c| f64::from(c) / p.t_total).collect(),
    }
}

/// Per-step record of every membrane potential plus a binary spike column
/// per ganglion cell.
#[derive(Clone, Debug)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// As [`run`], also recording the full state trajectory (initial state
/// included).
pub fn run_traced(phen: &Phenotype, i_ext: &[f64], p: &SimParams) -> (FiringRates, Trace) {
    let mut columns = vec!["t".to_string()];
    for (i, &n) in phen.cell_counts.iter().enumerate() {
        for a in 0..n {
            columns.push(format!("v{i}_{a}"));
        }
    }
    for k in 0..phen.cell_counts[phen.rgc_index] {
        columns.push(format!("s{k}"));
    }
    let snapshot = |state: &SimState, prev_counts: &[u32]| -> Vec<f64> {
        let mut row = vec![state.t];
        row.extend(state.v.iter().flatten().copied());
        row.extend(
            state
                .spike_counts
                .iter()
                .zip(prev_counts)
                .map(|(&now, &before)| f64::from(now - before)),
        );
        row
    };

    let mut state = SimState::new(phen, p.v_rest);
    let mut drives: Vec<Vec<f64>> = phen.cell_counts.iter().map(|&n| vec![0.0; n]).collect();
    let mut rows = vec![snapshot(&state, &state.spike_counts.clone())];
    for _ in 0..p.n_steps() {
        let before = state.spike_counts.clone();
        step_with_scratch(&mut state, phen, i_ext, p, &mut drives);
        rows.push(snapshot(&state, &before));
    }
    (rates_of(&state, p), Trace { columns, rows })
}
