//! Heritable network description and the genetic operators over it.
//!
//! A genome holds one gene group per neuron type: a photoreceptor type, up
//! to `Limits::max_interneuron_types` interneuron types, and an RGC type.
//! Canonical type indexing everywhere: 0 = photoreceptor, 1..=n = the n
//! interneuron types in list order, n + 1 = RGC.
//!
//! All evolvable scalar genes live on small discrete grids and mutate by a
//! signed random walk in index space; connectivity evolves by single-element
//! edits of each type's target set and by duplicating or deleting whole
//! types.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid of admissible Beta shape parameters for axon/dendrite profiles.
pub const SHAPE_GRID: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

/// Grid of admissible membrane time constants (simulation time units).
pub const TAU_GRID: [f64; 20] = [
    5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0,
    85.0, 90.0, 95.0, 100.0,
];

#[derive(Debug, Error)]
pub enum GenomeError {
    #[error("invalid genome: {0}")]
    Invalid(String),
    #[error("genome parse error: {0}")]
    Parse(#[from] Box<toml::de::Error>),
}

/// Structural bounds shared by every genome in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Maximum number of interneuron types a genome may hold.
    pub max_interneuron_types: usize,
    /// Photoreceptor cell count; also the ceiling for any type's cell count.
    pub photoreceptor_cells: usize,
    /// RGC cell count.
    pub rgc_cells: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_interneuron_types: 5,
            photoreceptor_cells: 24,
            rgc_cells: 5,
        }
    }
}

/// Heritable description of one neuron type.
///
/// The four shape parameters define Beta-density profiles over connection
/// distance; together with the polarity codes they determine the sign and
/// support of every weight matrix this type participates in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeGene {
    /// Number of cells of this type, evenly spread over the unit segment.
    pub cell_count: usize,
    /// Axon-side polarity code, -1 or +1.
    pub axon_polarity: i8,
    /// Dendrite-side polarity code, -1 or +1.
    pub dendrite_polarity: i8,
    /// Axonal density shape pair, values from `SHAPE_GRID`.
    pub axon_alpha: f64,
    pub axon_beta: f64,
    /// Dendritic density shape pair, values from `SHAPE_GRID`.
    pub dendrite_alpha: f64,
    pub dendrite_beta: f64,
    /// Membrane time constant, value from `TAU_GRID`.
    pub time_constant: f64,
    /// Canonical indices of the types this type projects to.
    pub targets: BTreeSet<usize>,
}

/// Genetic-algorithm parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population_size: usize,
    pub elite_count: usize,
    pub generations: usize,
    /// Probability that a child is produced by crossover rather than cloning.
    pub crossover_rate: f64,
    /// Probability that mutation skips a whole type gene group.
    pub p_skip_type: f64,
    /// Probability that mutation skips one gene inside a visited group.
    pub p_skip_gene: f64,
    pub p_duplicate: f64,
    pub p_delete: f64,
    /// Probability that a visited targets set receives one add/remove edit.
    pub p_targets_edit: f64,
    /// Mean of the Poisson-distributed random-walk step magnitude.
    pub poisson_lambda: f64,
    /// Fitness blend weight on the readout R².
    pub w_r2: f64,
    /// Fitness blend weight on the structural shape gain.
    pub w_shape: f64,
    pub rng_seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population_size: 150,
            elite_count: 10,
            generations: 400,
            crossover_rate: 0.2,
            p_skip_type: 0.5,
            p_skip_gene: 0.5,
            p_duplicate: 0.3,
            p_delete: 0.3,
            p_targets_edit: 0.15,
            poisson_lambda: 1.0,
            w_r2: 0.85,
            w_shape: 0.15,
            rng_seed: 42,
        }
    }
}

/// One heritable network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub limits: Limits,
    pub photoreceptor: TypeGene,
    pub interneurons: Vec<TypeGene>,
    pub rgc: TypeGene,
}

impl Genome {
    pub fn interneuron_count(&self) -> usize {
        self.interneurons.len()
    }

    /// Canonical index of the RGC type.
    pub fn rgc_index(&self) -> usize {
        self.interneurons.len() + 1
    }

    pub fn type_count(&self) -> usize {
        self.interneurons.len() + 2
    }

    /// Gene group at a canonical type index.
    pub fn gene(&self, index: usize) -> &TypeGene {
        match index {
            0 => &self.photoreceptor,
            i if i <= self.interneurons.len() => &self.interneurons[i - 1],
            i if i == self.rgc_index() => &self.rgc,
            i => panic!("type index {i} out of range"),
        }
    }

    /// Gene groups in canonical index order.
    pub fn genes(&self) -> impl Iterator<Item = &TypeGene> {
        std::iter::once(&self.photoreceptor)
            .chain(self.interneurons.iter())
            .chain(std::iter::once(&self.rgc))
    }

    /// Applies an index map to every targets set; `None` drops the entry.
    fn remap_targets(&mut self, map: impl Fn(usize) -> Option<usize>) {
        for gene in std::iter::once(&mut self.photoreceptor).chain(self.interneurons.iter_mut()) {
            gene.targets = gene.targets.iter().filter_map(|&t| map(t)).collect();
        }
    }

    /// Appends a copy of the type at `source` as a new interneuron type and
    /// reindexes every targets set (the RGC index moves up by one). Returns
    /// the canonical index of the new type. No existing set gains the new
    /// index; connections onto the copy must evolve separately.
    pub fn duplicate_type(&mut self, source: usize) -> usize {
        assert!(source < self.type_count(), "duplication source out of range");
        assert!(
            self.interneurons.len() < self.limits.max_interneuron_types,
            "duplication beyond the interneuron limit"
        );
        let copy = self.gene(source).clone();
        let old_rgc = self.rgc_index();
        self.interneurons.push(copy);
        let new_rgc = self.rgc_index();
        self.remap_targets(|t| Some(if t == old_rgc { new_rgc } else { t }));
        old_rgc
    }

    /// Removes the interneuron at canonical index `index`; references to it
    /// are dropped and higher indices shift down by one.
    pub fn delete_interneuron(&mut self, index: usize) {
        assert!(
            index >= 1 && index <= self.interneurons.len(),
            "deletion index {index} is not an interneuron"
        );
        self.interneurons.remove(index - 1);
        self.remap_targets(|t| {
            if t == index {
                None
            } else if t > index {
                Some(t - 1)
            } else {
                Some(t)
            }
        });
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        let err = |msg: String| Err(GenomeError::Invalid(msg));
        let lim = &self.limits;
        if self.interneurons.len() > lim.max_interneuron_types {
            return err(format!(
                "{} interneuron types exceed the limit {}",
                self.interneurons.len(),
                lim.max_interneuron_types
            ));
        }
        if self.photoreceptor.cell_count != lim.photoreceptor_cells {
            return err("photoreceptor cell count is fixed by the limits".into());
        }
        if self.rgc.cell_count != lim.rgc_cells {
            return err("rgc cell count is fixed by the limits".into());
        }
        if !self.rgc.targets.is_empty() {
            return err("rgc targets must stay empty".into());
        }
        let rgc_index = self.rgc_index();
        for (i, gene) in self.genes().enumerate() {
            if i >= 1 && i < rgc_index && !(1..=lim.photoreceptor_cells).contains(&gene.cell_count)
            {
                return err(format!("interneuron {i} cell count {}", gene.cell_count));
            }
            for polarity in [gene.axon_polarity, gene.dendrite_polarity] {
                if polarity != -1 && polarity != 1 {
                    return err(format!("type {i} polarity {polarity}"));
                }
            }
            for shape in [
                gene.axon_alpha,
                gene.axon_beta,
                gene.dendrite_alpha,
                gene.dendrite_beta,
            ] {
                if !SHAPE_GRID.contains(&shape) {
                    return err(format!("type {i} shape {shape} off grid"));
                }
            }
            if !TAU_GRID.contains(&gene.time_constant) {
                return err(format!("type {i} time constant {} off grid", gene.time_constant));
            }
            if let Some(&t) = gene.targets.iter().find(|&&t| t > rgc_index) {
                return err(format!("type {i} targets nonexistent type {t}"));
            }
        }
        Ok(())
    }

    /// Canonical structured-text form (named fields, declaration order).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("genome serializes to toml")
    }

    pub fn from_toml_str(text: &str) -> Result<Genome, GenomeError> {
        let genome: Genome = toml::from_str(text).map_err(Box::new)?;
        genome.validate()?;
        Ok(genome)
    }
}

fn random_polarity<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random_bool(0.5) {
        1
    } else {
        -1
    }
}

fn random_gene<R: Rng + ?Sized>(rng: &mut R, cell_count: usize) -> TypeGene {
    let shape = |rng: &mut R| SHAPE_GRID[rng.random_range(0..SHAPE_GRID.len())];
    TypeGene {
        cell_count,
        axon_polarity: random_polarity(rng),
        dendrite_polarity: random_polarity(rng),
        axon_alpha: shape(rng),
        axon_beta: shape(rng),
        dendrite_alpha: shape(rng),
        dendrite_beta: shape(rng),
        time_constant: TAU_GRID[rng.random_range(0..TAU_GRID.len())],
        targets: BTreeSet::new(),
    }
}

/// Builds a founder genome: no interneurons, photoreceptor and RGC fields
/// uniform over their domains, and the photoreceptor wired to the RGC by a
/// fair coin (the RGC is the only addressable target at birth).
pub fn init_genome<R: Rng + ?Sized>(rng: &mut R, limits: Limits) -> Genome {
    let photoreceptor = random_gene(rng, limits.photoreceptor_cells);
    let rgc = random_gene(rng, limits.rgc_cells);
    let mut genome = Genome {
        limits,
        photoreceptor,
        interneurons: Vec::new(),
        rgc,
    };
    if rng.random_bool(0.5) {
        genome.photoreceptor.targets.insert(genome.rgc_index());
    }
    genome
}

/// Clamped signed walk on a discrete domain of `len` grid points.
pub fn walk_grid_index(index: usize, step: i64, len: usize) -> usize {
    debug_assert!(len > 0 && index < len);
    (index as i64 + step).clamp(0, len as i64 - 1) as usize
}

/// Polarity walk: the two-element domain flips on odd step magnitude.
pub fn walk_polarity(value: i8, step: i64) -> i8 {
    if step.rem_euclid(2) == 1 {
        -value
    } else {
        value
    }
}

fn poisson_step<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> i64 {
    let magnitude = Poisson::new(lambda).expect("positive lambda").sample(rng) as i64;
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

fn grid_position(grid: &[f64], value: f64) -> usize {
    grid.iter()
        .position(|&v| v == value)
        .expect("value validated to lie on its grid")
}

fn walk_on_grid<R: Rng + ?Sized>(grid: &[f64], value: f64, lambda: f64, rng: &mut R) -> f64 {
    let index = grid_position(grid, value);
    grid[walk_grid_index(index, poisson_step(lambda, rng), grid.len())]
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TypeRole {
    Photoreceptor,
    Interneuron,
    Rgc,
}

/// Mutates the genes of one type group in place. `n_types` bounds the legal
/// target indices. Gene visit order is fixed; it is part of the replay
/// contract.
fn mutate_type_gene<R: Rng + ?Sized>(
    gene: &mut TypeGene,
    role: TypeRole,
    n_types: usize,
    cell_ceiling: usize,
    params: &GaParams,
    rng: &mut R,
) {
    if role == TypeRole::Interneuron && !rng.random_bool(params.p_skip_gene) {
        let index = gene.cell_count - 1;
        gene.cell_count =
            walk_grid_index(index, poisson_step(params.poisson_lambda, rng), cell_ceiling) + 1;
    }
    if !rng.random_bool(params.p_skip_gene) {
        gene.axon_polarity =
            walk_polarity(gene.axon_polarity, poisson_step(params.poisson_lambda, rng));
    }
    if !rng.random_bool(params.p_skip_gene) {
        gene.dendrite_polarity =
            walk_polarity(gene.dendrite_polarity, poisson_step(params.poisson_lambda, rng));
    }
    for shape in [
        &mut gene.axon_alpha,
        &mut gene.axon_beta,
        &mut gene.dendrite_alpha,
        &mut gene.dendrite_beta,
    ] {
        if !rng.random_bool(params.p_skip_gene) {
            *shape = walk_on_grid(&SHAPE_GRID, *shape, params.poisson_lambda, rng);
        }
    }
    if !rng.random_bool(params.p_skip_gene) {
        gene.time_constant = walk_on_grid(&TAU_GRID, gene.time_constant, params.poisson_lambda, rng);
    }
    // The RGC never projects anywhere; its targets gene is not a mutation
    // site.
    if role != TypeRole::Rgc && !rng.random_bool(params.p_skip_gene) {
        edit_targets(&mut gene.targets, n_types, params, rng);
    }
}

fn edit_targets<R: Rng + ?Sized>(
    targets: &mut BTreeSet<usize>,
    n_types: usize,
    params: &GaParams,
    rng: &mut R,
) {
    if !rng.random_bool(params.p_targets_edit) {
        return;
    }
    if rng.random_bool(0.5) {
        let absent: Vec<usize> = (0..n_types).filter(|i| !targets.contains(i)).collect();
        if !absent.is_empty() {
            targets.insert(absent[rng.random_range(0..absent.len())]);
        }
    } else if !targets.is_empty() {
        let present: Vec<usize> = targets.iter().copied().collect();
        targets.remove(&present[rng.random_range(0..present.len())]);
    }
}

/// Returns a mutated copy of `genome`. Each type group is skipped whole with
/// probability `p_skip_type`; surviving groups mutate gene by gene.
pub fn mutate<R: Rng + ?Sized>(genome: &Genome, params: &GaParams, rng: &mut R) -> Genome {
    let mut out = genome.clone();
    let n_types = out.type_count();
    let ceiling = out.limits.photoreceptor_cells;
    let roles = |i: usize, rgc: usize| {
        if i == 0 {
            TypeRole::Photoreceptor
        } else if i == rgc {
            TypeRole::Rgc
        } else {
            TypeRole::Interneuron
        }
    };
    let rgc_index = out.rgc_index();
    for i in 0..n_types {
        if rng.random_bool(params.p_skip_type) {
            continue;
        }
        let role = roles(i, rgc_index);
        let gene = match i {
            0 => &mut out.photoreceptor,
            i if i == rgc_index => &mut out.rgc,
            i => &mut out.interneurons[i - 1],
        };
        mutate_type_gene(gene, role, n_types, ceiling, params, rng);
    }
    out
}

/// Structural mutation: with probability `p_duplicate`, copies one uniformly
/// chosen existing type (photoreceptor and RGC included) into a new
/// interneuron slot, immediately exposing the copy to per-gene mutation; with
/// probability `p_delete`, removes one uniformly chosen interneuron. Either
/// event is a no-op when the interneuron count would leave its range.
pub fn duplicate_or_delete<R: Rng + ?Sized>(
    genome: &Genome,
    params: &GaParams,
    rng: &mut R,
) -> Genome {
    let mut out = genome.clone();
    if rng.random_bool(params.p_duplicate) && out.interneuron_count() < out.limits.max_interneuron_types
    {
        let source = rng.random_range(0..out.type_count());
        let new_index = out.duplicate_type(source);
        if !rng.random_bool(params.p_skip_type) {
            let n_types = out.type_count();
            let ceiling = out.limits.photoreceptor_cells;
            mutate_type_gene(
                &mut out.interneurons[new_index - 1],
                TypeRole::Interneuron,
                n_types,
                ceiling,
                params,
                rng,
            );
        }
    }
    if rng.random_bool(params.p_delete) && out.interneuron_count() > 0 {
        let victim = 1 + rng.random_range(0..out.interneuron_count());
        out.delete_interneuron(victim);
    }
    out
}

/// Whole-gene-group crossover. The child's interneuron count comes from a
/// fair-coin parent; photoreceptor and RGC groups are taken whole from
/// fair-coin parents; every interneuron slot is filled from a uniformly
/// random slot of a fair-coin parent (falling back to the other parent when
/// the chosen one has no interneurons). Inherited target indices beyond the
/// child's range are dropped.
pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> Genome {
    assert_eq!(a.limits, b.limits, "crossover requires identical limits");
    let parents = [a, b];
    let coin = |rng: &mut R| usize::from(rng.random_bool(0.5));
    let n_t = parents[coin(rng)].interneuron_count();
    let photoreceptor = parents[coin(rng)].photoreceptor.clone();
    let rgc = parents[coin(rng)].rgc.clone();
    let mut interneurons = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        let mut donor = parents[coin(rng)];
        if donor.interneuron_count() == 0 {
            donor = if std::ptr::eq(donor, a) { b } else { a };
        }
        let slot = rng.random_range(0..donor.interneuron_count());
        interneurons.push(donor.interneurons[slot].clone());
    }
    let mut child = Genome {
        limits: a.limits,
        photoreceptor,
        interneurons,
        rgc,
    };
    child.rgc.targets.clear();
    let rgc_index = child.rgc_index();
    child.remap_targets(|t| (t <= rgc_index).then_some(t));
    child
}
