//! Run orchestration and artifact layout.
//!
//! A run directory holds the resolved config echo, one subdirectory per
//! trial (streamed generation/individual logs, rolling checkpoint, final
//! elites), and a cross-trial summary:
//!
//! ```text
//! out/
//!   resolved.toml
//!   summary.toml
//!   trial_00/
//!     generations.csv   one row per generation: order stats + elite ranks
//!     individuals.csv   one row per (generation, individual)
//!     checkpoint.toml   rolling checkpoint; marked done on completion
//!     elites.toml       final elite genomes
//!   analysis/           written by `analyze`
//! ```
//!
//! Every artifact starts with the tool version and the resolved config
//! hash; files never embed timestamps, so identical runs are byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    population_stats, render_tuning_curves, stats_from_fitness, survival_gain_test,
    AnalysisError, GenerationStats, SurvivalTest,
};
use crate::config::{file_header, ConfigError, RunConfig};
use crate::dynamics::run_traced;
use crate::evolution::{
    run_trial, EliteRecord, EvolutionError, GenerationRecord, Individual, TrialContext,
    TrialObserver,
};
use crate::genome::Genome;
use crate::phenotype::{express, render_phenotype};
use crate::rng::{stream, trial_seed, StreamKind};
use crate::stimuli::{make_stimulus_set, render_stimulus_set, StimuliError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stimuli(#[from] StimuliError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory already holds a run: {0} exists (resume it instead)")]
    AlreadyExists(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("{path}: config hash {found} does not match this run ({expected})")]
    HashMismatch { path: String, found: String, expected: String },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, content: &str) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, content).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, RunnerError> {
    if !path.exists() {
        return Err(RunnerError::MissingArtifact(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, RunnerError> {
    toml::from_str(text).map_err(|e| RunnerError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Rolling per-trial checkpoint: the unevaluated population bred for
/// `next_generation`, or a completion marker.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    config_hash: String,
    trial: usize,
    root_seed: u64,
    next_generation: usize,
    done: bool,
    population: Vec<Genome>,
}

/// Final elites of one trial.
#[derive(Debug, Serialize, Deserialize)]
struct EliteFile {
    config_hash: String,
    trial: usize,
    generation: usize,
    elites: Vec<EliteRecord>,
}

/// Cross-trial summary.
#[derive(Debug, Serialize, Deserialize)]
struct SummaryFile {
    config_hash: String,
    trials: usize,
    /// Min-elite fitness improvement per trial, trial order.
    survival_gains: Vec<f64>,
    mean_gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<SurvivalTest>,
}

/// What `run`/`resume` report back to the caller.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub trials_completed: usize,
    pub survival_gains: Vec<f64>,
    pub test: Option<SurvivalTest>,
    /// True when a stop point interrupted the run before completion.
    pub interrupted: bool,
}

#[derive(Debug, Default)]
pub struct ResumeReport {
    pub restarted: Vec<usize>,
    pub resumed: Vec<usize>,
    pub already_done: Vec<usize>,
    pub survival_gains: Vec<f64>,
    pub test: Option<SurvivalTest>,
}

impl ResumeReport {
    /// Nothing needed doing: every trial was already complete.
    pub fn was_noop(&self) -> bool {
        self.restarted.is_empty() && self.resumed.is_empty()
    }
}

/// Test-oriented interruption point: stop trial `trial` before
/// `before_generation` and skip all later trials.
#[derive(Clone, Copy, Debug)]
pub struct StopPoint {
    pub trial: usize,
    pub before_generation: usize,
}

fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial:02}"))
}

fn generations_columns(elite_count: usize) -> String {
    let elites: Vec<String> = (0..elite_count).map(|r| format!("elite_{r}")).collect();
    format!("generation,min,q1,median,q3,max,iqr,{}\n", elites.join(","))
}

fn stats_row(s: &GenerationStats) -> String {
    let elites: Vec<String> = s.elite_fitness.iter().map(f64::to_string).collect();
    format!(
        "{},{},{},{},{},{},{},{}\n",
        s.generation, s.min, s.q1, s.median, s.q3, s.max, s.iqr,
        elites.join(",")
    )
}

/// Streams CSV rows and rolling checkpoints while a trial runs.
struct TrialWriter {
    generations: fs::File,
    individuals: fs::File,
    checkpoint_path: PathBuf,
    config_hash: String,
    trial: usize,
    root_seed: u64,
    checkpoint_every: usize,
}

impl TrialWriter {
    fn write_checkpoint(
        &self,
        next_generation: usize,
        done: bool,
        population: &[Individual],
    ) -> std::io::Result<()> {
        let file = CheckpointFile {
            config_hash: self.config_hash.clone(),
            trial: self.trial,
            root_seed: self.root_seed,
            next_generation,
            done,
            population: population.iter().map(|i| i.genome.clone()).collect(),
        };
        let body = toml::to_string_pretty(&file)
            .map_err(|e| std::io::Error::other(format!("serialize checkpoint: {e}")))?;
        fs::write(&self.checkpoint_path, format!("{}{body}", file_header(&self.config_hash)))
    }
}

impl TrialObserver for TrialWriter {
    fn on_generation(
        &mut self,
        record: &GenerationRecord,
        next_population: Option<&[Individual]>,
    ) -> std::io::Result<()> {
        let stats = &population_stats(std::slice::from_ref(record))[0];
        self.generations.write_all(stats_row(stats).as_bytes())?;
        for (i, rep) in record.reports.iter().enumerate() {
            let row = format!(
                "{},{i},{},{},{}\n",
                record.generation, rep.fitness, rep.r2, rep.shape_gain
            );
            self.individuals.write_all(row.as_bytes())?;
        }
        self.generations.flush()?;
        self.individuals.flush()?;
        if let Some(next) = next_population {
            let next_gen = record.generation + 1;
            if next_gen % self.checkpoint_every == 0 {
                self.write_checkpoint(next_gen, false, next)?;
            }
        }
        Ok(())
    }
}

/// Creates (or truncates back to) a CSV keeping only rows whose leading
/// generation field is below `keep_below`; creates the file with header and
/// column line when absent.
fn prepare_csv(
    path: &Path,
    header: &str,
    columns: &str,
    keep_below: usize,
) -> Result<fs::File, RunnerError> {
    let mut content = format!("{header}{columns}");
    if keep_below > 0 && path.exists() {
        let existing = read_file(path)?;
        for line in existing.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("generation,") {
                continue;
            }
            let gen: usize = trimmed
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| RunnerError::Corrupt {
                    path: path.display().to_string(),
                    message: format!("unparseable row `{line}`"),
                })?;
            if gen < keep_below {
                content.push_str(line);
                content.push('\n');
            }
        }
    }
    write_file(path, &content)?;
    fs::OpenOptions::new().append(true).open(path).map_err(io_err(path))
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, RunnerError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))
}

/// Runs one trial from `resume_from` (or scratch) and writes its artifacts.
/// Returns whether the trial reached its configured generation count.
fn run_one_trial(
    config: &RunConfig,
    hash: &str,
    out: &Path,
    trial: usize,
    resume_from: Option<(usize, Vec<Individual>)>,
    stop_before: Option<usize>,
) -> Result<bool, RunnerError> {
    let dir = trial_dir(out, trial);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let header = file_header(hash);
    let start_gen = resume_from.as_ref().map_or(0, |(g, _)| *g);
    let generations = prepare_csv(
        &dir.join("generations.csv"),
        &header,
        &generations_columns(config.ga.elite_count),
        start_gen,
    )?;
    let individuals = prepare_csv(
        &dir.join("individuals.csv"),
        &header,
        "generation,individual,fitness,r2,shape_gain\n",
        start_gen,
    )?;

    let root = config.ga.rng_seed;
    let stimuli = make_stimulus_set(
        &config.stimulus,
        config.limits.photoreceptor_cells,
        &mut stream(root, StreamKind::Stimuli, trial as u64, 0),
    );
    let ctx = TrialContext {
        ga: &config.ga,
        sim: &config.sim,
        eval: &config.eval,
        stimuli: &stimuli,
        limits: config.limits,
    };
    let mut writer = TrialWriter {
        generations,
        individuals,
        checkpoint_path: dir.join("checkpoint.toml"),
        config_hash: hash.to_string(),
        trial,
        root_seed: root,
        checkpoint_every: config.run.checkpoint_every,
    };
    let seed = trial_seed(root, trial);
    let outcome = run_trial(&ctx, seed, resume_from, stop_before, &mut writer)?;

    if outcome.carry.is_some() {
        return Ok(false);
    }
    let last = outcome.records.last().ok_or_else(|| RunnerError::Corrupt {
        path: dir.join("checkpoint.toml").display().to_string(),
        message: "claims more generations than the config allows".into(),
    })?;
    let elites = EliteFile {
        config_hash: hash.to_string(),
        trial,
        generation: last.generation,
        elites: last.elites.clone(),
    };
    let body = toml::to_string_pretty(&elites).map_err(|e| RunnerError::Corrupt {
        path: dir.join("elites.toml").display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&dir.join("elites.toml"), &format!("{header}{body}"))?;
    writer
        .write_checkpoint(config.ga.generations, true, &[])
        .map_err(io_err(&dir.join("checkpoint.toml")))?;
    Ok(true)
}

/// Survival gain of a completed trial, read back from its generation log:
/// last minus first value of the bottom elite-rank column.
fn read_trial_gain(out: &Path, trial: usize) -> Result<f64, RunnerError> {
    let path = trial_dir(out, trial).join("generations.csv");
    let text = read_file(&path)?;
    let corrupt = |message: String| RunnerError::Corrupt {
        path: path.display().to_string(),
        message,
    };
    let mut first = None;
    let mut last = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("generation,") {
            continue;
        }
        let min_elite: f64 = trimmed
            .rsplit(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| corrupt(format!("unparseable row `{line}`")))?;
        if first.is_none() {
            first = Some(min_elite);
        }
        last = Some(min_elite);
    }
    match (first, last) {
        (Some(f), Some(l)) => Ok(l - f),
        _ => Err(corrupt("no generation rows".into())),
    }
}

fn write_summary(config: &RunConfig, hash: &str, out: &Path) -> Result<(Vec<f64>, Option<SurvivalTest>), RunnerError> {
    let gains: Vec<f64> = (0..config.run.trials)
        .map(|t| read_trial_gain(out, t))
        .collect::<Result<_, _>>()?;
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let test = if gains.len() >= 2 { Some(survival_gain_test(&gains)?) } else { None };
    let summary = SummaryFile {
        config_hash: hash.to_string(),
        trials: config.run.trials,
        survival_gains: gains.clone(),
        mean_gain: mean,
        test,
    };
    let body = toml::to_string_pretty(&summary).map_err(|e| RunnerError::Corrupt {
        path: out.join("summary.toml").display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&out.join("summary.toml"), &format!("{}{body}", file_header(hash)))?;
    Ok((gains, test))
}

/// Fresh run into `config.run.out_dir`. Refuses a directory that already
/// contains a run.
pub fn execute_run(config: &RunConfig) -> Result<RunReport, RunnerError> {
    execute_run_with_stop(config, None)
}

/// [`execute_run`] with an optional interruption point (used to exercise
/// resume paths deterministically).
pub fn execute_run_with_stop(
    config: &RunConfig,
    stop: Option<StopPoint>,
) -> Result<RunReport, RunnerError> {
    config.validate()?;
    let out = PathBuf::from(&config.run.out_dir);
    let resolved = out.join("resolved.toml");
    if resolved.exists() {
        return Err(RunnerError::AlreadyExists(resolved.display().to_string()));
    }
    let hash = config.hash();
    let pool = build_pool(config.run.workers)?;
    write_file(&resolved, &format!("{}{}", file_header(&hash), config.to_toml_string()))?;
    let mut completed = 0;
    let mut interrupted = false;
    for trial in 0..config.run.trials {
        if let Some(s) = stop {
            if trial > s.trial {
                interrupted = true;
                break;
            }
        }
        let stop_before = stop.filter(|s| s.trial == trial).map(|s| s.before_generation);
        let finished =
            pool.install(|| run_one_trial(config, &hash, &out, trial, None, stop_before))?;
        if !finished {
            interrupted = true;
            break;
        }
        completed += 1;
    }
    if interrupted {
        return Ok(RunReport {
            out_dir: out,
            config_hash: hash,
            trials_completed: completed,
            survival_gains: Vec::new(),
            test: None,
            interrupted,
        });
    }
    let (gains, test) = write_summary(config, &hash, &out)?;
    Ok(RunReport {
        out_dir: out,
        config_hash: hash,
        trials_completed: completed,
        survival_gains: gains,
        test,
        interrupted: false,
    })
}

/// Loads the resolved config of an existing run directory, verifying the
/// header hash against the recomputed one.
pub fn load_run_config(out: &Path) -> Result<(RunConfig, String), RunnerError> {
    let path = out.join("resolved.toml");
    let text = read_file(&path)?;
    let config: RunConfig = parse_toml(&path, &text)?;
    config.validate()?;
    let hash = config.hash();
    let header_hash = text
        .lines()
        .find_map(|l| l.strip_prefix("# config "))
        .map(str::trim)
        .ok_or_else(|| RunnerError::Corrupt {
            path: path.display().to_string(),
            message: "missing config-hash header".into(),
        })?;
    if header_hash != hash {
        return Err(RunnerError::HashMismatch {
            path: path.display().to_string(),
            found: header_hash.to_string(),
            expected: hash,
        });
    }
    Ok((config, hash))
}

/// Continues an interrupted run: finishes the partial trial from its
/// checkpoint, restarts trials that never reached one, runs missing trials,
/// and rewrites the summary.
pub fn execute_resume(out: &Path, workers: Option<usize>) -> Result<ResumeReport, RunnerError> {
    let (config, hash) = load_run_config(out)?;
    let pool = build_pool(workers.unwrap_or(config.run.workers))?;
    let mut report = ResumeReport::default();
    for trial in 0..config.run.trials {
        let checkpoint_path = trial_dir(out, trial).join("checkpoint.toml");
        let state = if checkpoint_path.exists() {
            let text = read_file(&checkpoint_path)?;
            let cp: CheckpointFile = parse_toml(&checkpoint_path, &text)?;
            if cp.config_hash != hash {
                return Err(RunnerError::HashMismatch {
                    path: checkpoint_path.display().to_string(),
                    found: cp.config_hash,
                    expected: hash,
                });
            }
            if cp.done {
                report.already_done.push(trial);
                continue;
            }
            report.resumed.push(trial);
            Some((
                cp.next_generation,
                cp.population.into_iter().map(Individual::unevaluated).collect(),
            ))
        } else {
            // Never checkpointed: replay the whole trial.
            report.restarted.push(trial);
            None
        };
        let finished =
            pool.install(|| run_one_trial(&config, &hash, out, trial, state, None))?;
        debug_assert!(finished, "no stop point given");
    }
    let (gains, test) = write_summary(&config, &hash, out)?;
    report.survival_gains = gains;
    report.test = test;
    Ok(report)
}

#[derive(Debug)]
pub struct AnalyzeReport {
    pub trials: usize,
    pub elites_per_trial: usize,
    pub analysis_dir: PathBuf,
}

fn parse_individuals_csv(path: &Path, text: &str) -> Result<Vec<(usize, f64)>, RunnerError> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("generation,") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let bad = || RunnerError::Corrupt {
            path: path.display().to_string(),
            message: format!("unparseable row `{line}`"),
        };
        if fields.len() < 3 {
            return Err(bad());
        }
        let gen: usize = fields[0].parse().map_err(|_| bad())?;
        let fitness: f64 = fields[2].parse().map_err(|_| bad())?;
        rows.push((gen, fitness));
    }
    Ok(rows)
}

/// Post-run analysis over a completed run directory: tuning curves and
/// phenotype dumps per final elite, per-generation statistics rebuilt from
/// the individual logs, and the cross-trial survival test.
pub fn execute_analyze(out: &Path, trace: bool) -> Result<AnalyzeReport, RunnerError> {
    let (config, hash) = load_run_config(out)?;
    let header = file_header(&hash);
    let analysis_dir = out.join("analysis");
    let mut elites_per_trial = 0;
    for trial in 0..config.run.trials {
        let tdir = trial_dir(out, trial);
        let elite_path = tdir.join("elites.toml");
        let elite_file: EliteFile = parse_toml(&elite_path, &read_file(&elite_path)?)?;
        if elite_file.config_hash != hash {
            return Err(RunnerError::HashMismatch {
                path: elite_path.display().to_string(),
                found: elite_file.config_hash,
                expected: hash,
            });
        }
        let adir = analysis_dir.join(format!("trial_{trial:02}"));

        // Per-generation statistics rebuilt from the streamed logs.
        let ind_path = tdir.join("individuals.csv");
        let rows = parse_individuals_csv(&ind_path, &read_file(&ind_path)?)?;
        let mut stats_csv =
            format!("{header}{}", generations_columns(config.ga.elite_count));
        let mut current: Vec<f64> = Vec::new();
        let mut current_gen = 0usize;
        for (gen, fitness) in rows.iter().chain(std::iter::once(&(usize::MAX, 0.0))) {
            if *gen != current_gen && !current.is_empty() {
                let stats = stats_from_fitness(current_gen, &current, config.ga.elite_count);
                stats_csv.push_str(&stats_row(&stats));
                current.clear();
            }
            current_gen = *gen;
            current.push(*fitness);
        }
        write_file(&adir.join("population_stats.csv"), &stats_csv)?;

        // Receptive-field style probes of every final elite.
        elites_per_trial = elite_file.elites.len();
        for (rank, elite) in elite_file.elites.iter().enumerate() {
            let phen = express(&elite.genome, config.eval.weight_scale);
            let curves = crate::analysis::tuning_curves(&phen, &config.sim, 1.0);
            write_file(
                &adir.join(format!("elite_{rank:02}_tuning.csv")),
                &format!("{header}{}", render_tuning_curves(&curves)),
            )?;
            write_file(
                &adir.join(format!("elite_{rank:02}_phenotype.txt")),
                &format!("{header}{}", render_phenotype(&phen)),
            )?;
            if trace {
                let n_c = config.limits.photoreceptor_cells;
                let mut probe = vec![0.0; n_c];
                probe[n_c / 2] = 1.0;
                let (_, tr) = run_traced(&phen, &probe, &config.sim);
                let mut csv = format!("{header}{}\n", tr.columns.join(","));
                for row in &tr.rows {
                    let fields: Vec<String> = row.iter().map(f64::to_string).collect();
                    csv.push_str(&fields.join(","));
                    csv.push('\n');
                }
                write_file(&adir.join(format!("elite_{rank:02}_trace.csv")), &csv)?;
            }
        }
    }

    // Cross-trial survival statistics.
    let gains: Vec<f64> = (0..config.run.trials)
        .map(|t| read_trial_gain(out, t))
        .collect::<Result<_, _>>()?;
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let test = if gains.len() >= 2 { Some(survival_gain_test(&gains)?) } else { None };
    let summary = SummaryFile {
        config_hash: hash.clone(),
        trials: config.run.trials,
        survival_gains: gains,
        mean_gain: mean,
        test,
    };
    let body = toml::to_string_pretty(&summary).map_err(|e| RunnerError::Corrupt {
        path: analysis_dir.join("survival.toml").display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&analysis_dir.join("survival.toml"), &format!("{header}{body}"))?;

    Ok(AnalyzeReport { trials: config.run.trials, elites_per_trial, analysis_dir })
}

/// Writes the frozen stimulus set of trial 0 for a given config, so inputs
/// can be inspected or replayed elsewhere.
pub fn execute_export_stimuli(config: &RunConfig, out_file: &Path) -> Result<(), RunnerError> {
    config.validate()?;
    let hash = config.hash();
    let set = make_stimulus_set(
        &config.stimulus,
        config.limits.photoreceptor_cells,
        &mut stream(config.ga.rng_seed, StreamKind::Stimuli, 0, 0),
    );
    let content = format!(
        "{}# stimulus set, trial 0\n{}",
        file_header(&hash),
        render_stimulus_set(&set)
    );
    write_file(out_file, &content)
}
