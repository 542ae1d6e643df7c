//! Generational loop: deterministic parallel evaluation, elite
//! preservation, ratio-based binary tournaments, and the breeding pipeline
//! (crossover gate, duplication/deletion, mutation).
//!
//! Randomness discipline: every generation's breeding draws from a stream
//! keyed by (trial seed, generation), and initial genomes from streams
//! keyed by (trial seed, individual). Evaluation itself consumes no
//! randomness, so worker count and scheduling cannot perturb results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{evaluate, EvalParams, FitnessError, FitnessReport};
use crate::genome::{crossover, duplicate_or_delete, init_genome, mutate, GaParams, Genome, Limits};
use crate::rng::{stream, StreamKind};
use crate::stimuli::StimulusSet;
use rand::Rng;

/// Shift applied to raw fitness before the ratio rule so probabilities stay
/// positive even for the worst possible score.
pub const SELECTION_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("population needs at least 4 individuals for tournament selection, got {0}")]
    PopulationTooSmall(usize),
    #[error("elite_count {elites} must be smaller than population_size {population}")]
    TooManyElites { elites: usize, population: usize },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error("trial observer failed: {0}")]
    Observer(#[from] std::io::Error),
}

/// One population member; `report` is filled by evaluation and cleared for
/// freshly bred genomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub report: Option<FitnessReport>,
}

impl Individual {
    pub fn unevaluated(genome: Genome) -> Individual {
        Individual { genome, report: None }
    }

    fn fitness(&self) -> f64 {
        self.report.expect("individual evaluated before use").fitness
    }
}

/// Everything immutable a trial needs.
pub struct TrialContext<'a> {
    pub ga: &'a GaParams,
    pub sim: &'a crate::dynamics::SimParams,
    pub eval: &'a EvalParams,
    pub stimuli: &'a StimulusSet,
    pub limits: Limits,
}

/// Elite snapshot inside a generation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliteRecord {
    pub index: usize,
    pub fitness: f64,
    pub genome: Genome,
}

/// Everything recorded about one evaluated generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Evaluation breakdown per individual, population order.
    pub reports: Vec<FitnessReport>,
    /// Top individuals by fitness, ties broken toward lower index.
    pub elites: Vec<EliteRecord>,
}

impl GenerationRecord {
    pub fn fitness(&self) -> impl Iterator<Item = f64> + '_ {
        self.reports.iter().map(|r| r.fitness)
    }

    pub fn min_elite_fitness(&self) -> f64 {
        self.elites.last().expect("elite_count >= 1").fitness
    }
}

/// Probability that fitness `a` beats fitness `b` in one tournament:
/// the ratio rule applied to shifted scores (x+1)/2 + epsilon.
pub fn selection_probability(a: f64, b: f64) -> f64 {
    let shift = |x: f64| (x + 1.0) / 2.0 + SELECTION_EPSILON;
    shift(a) / (shift(a) + shift(b))
}

/// Ratio tournament between two evaluated rivals.
pub fn select_parent<'a, R: Rng + ?Sized>(
    a: &'a Individual,
    b: &'a Individual,
    rng: &mut R,
) -> &'a Individual {
    if rng.random_bool(selection_probability(a.fitness(), b.fitness())) {
        a
    } else {
        b
    }
}

/// Two distinct population indices, uniform without replacement.
fn rival_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

fn tournament<'a, R: Rng + ?Sized>(population: &'a [Individual], rng: &mut R) -> &'a Individual {
    let (i, j) = rival_pair(population.len(), rng);
    select_parent(&population[i], &population[j], rng)
}

/// Indices of the whole population ranked by descending fitness, ties
/// broken by lower index.
pub fn rank_by_fitness(population: &[Individual]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| {
        population[b]
            .fitness()
            .total_cmp(&population[a].fitness())
            .then(a.cmp(&b))
    });
    order
}

/// Breeds the next population: elites copied verbatim (reports kept), every
/// other slot filled by tournament parents, an optional crossover, then the
/// duplication/deletion and mutation passes.
pub fn next_generation<R: Rng + ?Sized>(
    population: &[Individual],
    params: &GaParams,
    rng: &mut R,
) -> Result<Vec<Individual>, EvolutionError> {
    let n = population.len();
    if n < 4 {
        return Err(EvolutionError::PopulationTooSmall(n));
    }
    if params.elite_count >= n {
        return Err(EvolutionError::TooManyElites { elites: params.elite_count, population: n });
    }
    let order = rank_by_fitness(population);
    let mut next: Vec<Individual> = order[..params.elite_count]
        .iter()
        .map(|&i| population[i].clone())
        .collect();
    while next.len() < n {
        let p1 = tournament(population, rng);
        let p2 = tournament(population, rng);
        let child = if rng.random_bool(params.crossover_rate) {
            crossover(&p1.genome, &p2.genome, rng)
        } else {
            p1.genome.clone()
        };
        let child = duplicate_or_delete(&child, params, rng);
        let child = mutate(&child, params, rng);
        next.push(Individual::unevaluated(child));
    }
    Ok(next)
}

/// Fills in every missing report in parallel. Pure per individual, so the
/// worker count never changes the outcome.
pub fn evaluate_population(
    ctx: &TrialContext,
    population: &mut [Individual],
) -> Result<(), EvolutionError> {
    population.par_iter_mut().try_for_each(|ind| {
        if ind.report.is_none() {
            ind.report = Some(evaluate(&ind.genome, ctx.stimuli, ctx.sim, ctx.eval, ctx.ga)?);
        }
        Ok::<(), EvolutionError>(())
    })
}

/// Founder population: one independent init stream per individual.
pub fn init_population(ctx: &TrialContext, trial_seed: u64) -> Vec<Individual> {
    (0..ctx.ga.population_size)
        .map(|i| {
            let mut rng = stream(trial_seed, StreamKind::Init, i as u64, 0);
            Individual::unevaluated(init_genome(&mut rng, ctx.limits))
        })
        .collect()
}

fn make_record(generation: usize, population: &[Individual], elite_count: usize) -> GenerationRecord {
    let reports: Vec<FitnessReport> =
        population.iter().map(|ind| ind.report.expect("evaluated")).collect();
    let elites = rank_by_fitness(population)[..elite_count]
        .iter()
        .map(|&i| EliteRecord {
            index: i,
            fitness: reports[i].fitness,
            genome: population[i].genome.clone(),
        })
        .collect();
    GenerationRecord { generation, reports, elites }
}

/// Hook for streaming artifacts out of the trial loop. `next_population`
/// holds the freshly bred (unevaluated) population whenever one exists,
/// i.e. for every generation except the last; checkpoints capture it.
pub trait TrialObserver {
    fn on_generation(
        &mut self,
        record: &GenerationRecord,
        next_population: Option<&[Individual]>,
    ) -> std::io::Result<()>;
}

/// Observer that keeps nothing.
pub struct NoopObserver;

impl TrialObserver for NoopObserver {
    fn on_generation(&mut self, _: &GenerationRecord, _: Option<&[Individual]>) -> std::io::Result<()> {
        Ok(())
    }
}

/// Result of [`run_trial`]: the records it produced, plus the carry-over
/// population when stopped before the configured generation count.
pub struct TrialRun {
    pub records: Vec<GenerationRecord>,
    pub carry: Option<(usize, Vec<Individual>)>,
}

/// Runs generations `start..min(generations, stop_before)` of one trial.
///
/// `resume` supplies a mid-trial population (typically from a checkpoint);
/// `None` starts a fresh trial at generation 0. Breeding for generation
/// g+1 always draws from the stream keyed by g+1, so a resumed trial
/// replays exactly the uninterrupted sequence.
pub fn run_trial(
    ctx: &TrialContext,
    trial_seed: u64,
    resume: Option<(usize, Vec<Individual>)>,
    stop_before: Option<usize>,
    observer: &mut dyn TrialObserver,
) -> Result<TrialRun, EvolutionError> {
    let (start, mut population) = match resume {
        Some((gen, pop)) => (gen, pop),
        None => (0, init_population(ctx, trial_seed)),
    };
    let total = ctx.ga.generations;
    let end = stop_before.map_or(total, |s| s.min(total).max(start));
    let mut records = Vec::new();
    for gen in start..end {
        evaluate_population(ctx, &mut population)?;
        let record = make_record(gen, &population, ctx.ga.elite_count);
        let next = if gen + 1 < total {
            let mut rng = stream(trial_seed, StreamKind::Breed, (gen + 1) as u64, 0);
            Some(next_generation(&population, ctx.ga, &mut rng)?)
        } else {
            None
        };
        observer.on_generation(&record, next.as_deref())?;
        records.push(record);
        if let Some(next) = next {
            population = next;
        }
    }
    // Stopping before the configured horizon leaves the population bred for
    // generation `end` to carry into a later resume.
    let carry = if end < total { Some((end, population)) } else { None };
    Ok(TrialRun { records, carry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimParams;
    use crate::genome::TAU_GRID;
    use crate::stimuli::{make_stimulus_set, StimulusParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn synthetic_population(fitness: &[f64]) -> Vec<Individual> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        fitness
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let mut g = init_genome(&mut rng, Limits::default());
                // Distinct marker so genomes can be told apart.
                g.photoreceptor.time_constant = TAU_GRID[i % TAU_GRID.len()];
                Individual {
                    genome: g,
                    report: Some(FitnessReport { r2: f, shape_gain: 0.0, fitness: f }),
                }
            })
            .collect()
    }

    fn small_ctx<'a>(
        ga: &'a GaParams,
        sim: &'a SimParams,
        eval: &'a EvalParams,
        stimuli: &'a StimulusSet,
        limits: Limits,
    ) -> TrialContext<'a> {
        TrialContext { ga, sim, eval, stimuli, limits }
    }

    fn desk_setup() -> (GaParams, SimParams, EvalParams, StimulusSet, Limits) {
        let ga = GaParams {
            population_size: 6,
            elite_count: 2,
            generations: 4,
            ..GaParams::default()
        };
        let limits = Limits { max_interneuron_types: 3, photoreceptor_cells: 6, rgc_cells: 2 };
        let params = StimulusParams { train_count: 6, test_count: 4, ..StimulusParams::default() };
        let stimuli =
            make_stimulus_set(&params, limits.photoreceptor_cells, &mut ChaCha8Rng::seed_from_u64(5));
        (ga, SimParams::default(), EvalParams::default(), stimuli, limits)
    }

    #[test]
    fn equal_fitness_selects_at_exactly_half() {
        assert_eq!(selection_probability(0.3, 0.3), 0.5);
        assert_eq!(selection_probability(-1.0, -1.0), 0.5);
        let p = selection_probability(1.0, -1.0);
        let want = (1.0 + SELECTION_EPSILON) / (1.0 + 2.0 * SELECTION_EPSILON);
        assert!((p - want).abs() < 1e-15);
        assert!(p > 0.999 && p < 1.0);
    }

    #[test]
    fn better_rival_wins_more_than_half_the_time() {
        for a in [-0.9, -0.2, 0.0, 0.4, 1.0] {
            for b in [-1.0, -0.5, 0.1, 0.9] {
                let p = selection_probability(a, b);
                assert!((p - (1.0 - selection_probability(b, a))).abs() < 1e-15);
                if a > b {
                    assert!(p > 0.5);
                } else if a < b {
                    assert!(p < 0.5);
                }
            }
        }
    }

    #[test]
    fn tournament_frequency_matches_the_ratio_rule() {
        let pop = synthetic_population(&[0.6, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let mut wins = 0usize;
        for _ in 0..trials {
            if select_parent(&pop[0], &pop[1], &mut rng).fitness() == 0.6 {
                wins += 1;
            }
        }
        let want = selection_probability(0.6, 0.2);
        let got = wins as f64 / trials as f64;
        assert!((got - want).abs() < 0.01, "empirical {got} vs {want}");
    }

    #[test]
    fn rival_pairs_are_distinct_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0.0f64; 5];
        for _ in 0..50_000 {
            let (i, j) = rival_pair(5, &mut rng);
            assert_ne!(i, j);
            counts[i] += 1.0;
            counts[j] += 1.0;
        }
        let p = crate::testutil::chi_square_uniform_p(&counts, 100_000.0);
        assert!(p > 0.01, "chi-square p = {p}");
    }

    #[test]
    fn tiny_populations_are_rejected() {
        let pop = synthetic_population(&[0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            next_generation(&pop, &GaParams::default(), &mut rng),
            Err(EvolutionError::PopulationTooSmall(3))
        ));

        let pop = synthetic_population(&[0.1, 0.2, 0.3, 0.4]);
        let bad = GaParams { elite_count: 4, ..GaParams::default() };
        assert!(matches!(
            next_generation(&pop, &bad, &mut rng),
            Err(EvolutionError::TooManyElites { elites: 4, population: 4 })
        ));
    }

    #[test]
    fn elites_survive_verbatim_with_index_tiebreak() {
        let pop = synthetic_population(&[0.5, 0.9, 0.5, 0.1, 0.9, 0.3]);
        let params = GaParams { population_size: 6, elite_count: 3, ..GaParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let next = next_generation(&pop, &params, &mut rng).unwrap();
        assert_eq!(next.len(), 6, "population size is constant");
        // Ranking: 0.9@1, 0.9@4, then 0.5@0 (index beats 0.5@2).
        assert_eq!(next[0], pop[1]);
        assert_eq!(next[1], pop[4]);
        assert_eq!(next[2], pop[0]);
        for child in &next[3..] {
            assert!(child.report.is_none(), "bred children are unevaluated");
        }
    }

    #[test]
    fn suppressed_operators_clone_tournament_winners() {
        let pop = synthetic_population(&[0.8, 0.6, 0.4, 0.2, 0.0, -0.2]);
        let params = GaParams {
            population_size: 6,
            elite_count: 1,
            crossover_rate: 0.0,
            p_skip_type: 1.0,
            p_duplicate: 0.0,
            p_delete: 0.0,
            ..GaParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let next = next_generation(&pop, &params, &mut rng).unwrap();
        let parent_genomes: Vec<&Genome> = pop.iter().map(|i| &i.genome).collect();
        for child in &next[1..] {
            assert!(
                parent_genomes.contains(&&child.genome),
                "child must be a verbatim clone of some parent"
            );
        }
    }

    #[test]
    fn single_generation_run_evaluates_everyone() {
        let (mut ga, sim, eval, stimuli, limits) = desk_setup();
        ga.generations = 1;
        let ctx = small_ctx(&ga, &sim, &eval, &stimuli, limits);
        let out = run_trial(&ctx, 77, None, None, &mut NoopObserver).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.carry.is_none());
        assert_eq!(out.records[0].reports.len(), 6);
        assert_eq!(out.records[0].elites.len(), 2);
    }

    #[test]
    fn replays_are_identical_across_worker_counts() {
        let (ga, sim, eval, stimuli, limits) = desk_setup();
        let ctx = small_ctx(&ga, &sim, &eval, &stimuli, limits);
        let mut runs = Vec::new();
        for workers in [1usize, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
            let records = pool
                .install(|| run_trial(&ctx, 123, None, None, &mut NoopObserver))
                .unwrap()
                .records;
            runs.push(records);
        }
        assert_eq!(runs[0], runs[1], "worker count must not perturb results");
        let again = run_trial(&ctx, 123, None, None, &mut NoopObserver).unwrap().records;
        assert_eq!(runs[0], again);
        let other_seed = run_trial(&ctx, 124, None, None, &mut NoopObserver).unwrap().records;
        assert_ne!(runs[0], other_seed, "seed must matter");
    }

    #[test]
    fn min_elite_fitness_never_decreases() {
        let (ga, sim, eval, stimuli, limits) = desk_setup();
        let ctx = small_ctx(&ga, &sim, &eval, &stimuli, limits);
        let records = run_trial(&ctx, 9, None, None, &mut NoopObserver).unwrap().records;
        assert_eq!(records.len(), 4);
        for pair in records.windows(2) {
            assert!(
                pair[1].min_elite_fitness() >= pair[0].min_elite_fitness(),
                "elitism must be monotone"
            );
        }
    }

    #[test]
    fn interrupted_and_resumed_trial_splices_exactly() {
        let (ga, sim, eval, stimuli, limits) = desk_setup();
        let ctx = small_ctx(&ga, &sim, &eval, &stimuli, limits);
        let full = run_trial(&ctx, 55, None, None, &mut NoopObserver).unwrap().records;

        let first = run_trial(&ctx, 55, None, Some(2), &mut NoopObserver).unwrap();
        assert_eq!(first.records.len(), 2);
        let (gen, pop) = first.carry.expect("stopped early, must carry");
        assert_eq!(gen, 2);
        // Checkpointed populations are stored as bare genomes; dropping the
        // elite reports must not change the replay.
        let stripped: Vec<Individual> =
            pop.into_iter().map(|i| Individual::unevaluated(i.genome)).collect();
        let rest = run_trial(&ctx, 55, Some((gen, stripped)), None, &mut NoopObserver)
            .unwrap()
            .records;
        let mut spliced = first.records;
        spliced.extend(rest);
        assert_eq!(spliced, full);
    }

    #[test]
    fn observer_sees_the_bred_population_for_all_but_the_last_generation() {
        struct Counting {
            seen: Vec<(usize, bool)>,
        }
        impl TrialObserver for Counting {
            fn on_generation(
                &mut self,
                record: &GenerationRecord,
                next: Option<&[Individual]>,
            ) -> std::io::Result<()> {
                self.seen.push((record.generation, next.is_some()));
                Ok(())
            }
        }
        let (ga, sim, eval, stimuli, limits) = desk_setup();
        let ctx = small_ctx(&ga, &sim, &eval, &stimuli, limits);
        let mut obs = Counting { seen: Vec::new() };
        run_trial(&ctx, 13, None, None, &mut obs).unwrap();
        assert_eq!(obs.seen, vec![(0, true), (1, true), (2, true), (3, false)]);
    }

    #[test]
    fn crossover_gate_uses_both_parents() {
        // With crossover always on, children may mix material from two
        // parents; sanity-check that breeding still yields valid genomes.
        let mut pop = synthetic_population(&[0.2, 0.4, 0.6, 0.8]);
        for (i, ind) in pop.iter_mut().enumerate() {
            ind.genome.photoreceptor.targets = BTreeSet::from([usize::from(i % 2 == 0)]);
        }
        let params = GaParams {
            population_size: 4,
            elite_count: 1,
            crossover_rate: 1.0,
            ..GaParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let next = next_generation(&pop, &params, &mut rng).unwrap();
            for child in &next {
                child.genome.validate().unwrap();
            }
        }
    }
}
