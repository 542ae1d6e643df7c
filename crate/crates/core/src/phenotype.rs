//! Genome expression: cell placement, lateral distances, and the signed
//! clipped weight matrices connecting neuron types.
//!
//! Connection strength carries no analog magnitude: a weight is either 0 or
//! `±c`, where the sign is the product of the presynaptic axon polarity and
//! the postsynaptic dendrite polarity, and the support is wherever the joint
//! axon/dendrite Beta density over lateral distance clears a fixed
//! threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::distribution::{Beta, Continuous};

use crate::genome::{Genome, TypeGene};
use crate::matrix::Matrix;

/// Support threshold for the clipped joint density: a weight fires only
/// where the density product strictly exceeds this.
pub const WEIGHT_EPSILON: f64 = 1e-6;

/// A genome expanded into a simulatable network.
#[derive(Clone, Debug, PartialEq)]
pub struct Phenotype {
    /// Cell coordinates per type, canonical type order.
    pub positions: Vec<Vec<f64>>,
    /// Membrane time constant per type.
    pub time_constants: Vec<f64>,
    /// Cell count per type.
    pub cell_counts: Vec<usize>,
    /// Canonical index of the RGC type.
    pub rgc_index: usize,
    /// Weight matrix per declared projection (pre-type, post-type).
    pub weights: BTreeMap<(usize, usize), Matrix>,
    /// Presynaptic type indices per target type, derived from `weights`.
    pub incoming: Vec<Vec<usize>>,
}

/// Evenly tiled cell coordinates over the unit segment.
pub fn place_cells(n: usize) -> Vec<f64> {
    assert!(n >= 1, "a type has at least one cell");
    (0..n).map(|k| (2 * k + 1) as f64 / (2 * n) as f64).collect()
}

/// Pairwise lateral distances between two position lists.
pub fn distance_matrix(pos_i: &[f64], pos_j: &[f64]) -> Matrix {
    assert!(!pos_i.is_empty() && !pos_j.is_empty());
    Matrix::from_fn(pos_i.len(), pos_j.len(), |a, b| (pos_i[a] - pos_j[b]).abs())
}

/// Beta density on [0,1] with analytic endpoint conventions: a shape below 1
/// diverges at its endpoint (+inf), exactly 1 gives the finite limit, above
/// 1 gives 0.
pub fn beta_density(x: f64, alpha: f64, beta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x), "distance {x} outside [0,1]");
    if x == 0.0 || x == 1.0 {
        let shape = if x == 0.0 { alpha } else { beta };
        let other = if x == 0.0 { beta } else { alpha };
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape > 1.0 {
            0.0
        } else {
            // Linear at this end: pdf limit is 1/B(1, other) = other.
            other
        };
    }
    Beta::new(alpha, beta).expect("grid shapes are positive").pdf(x)
}

/// Whether the joint axon/dendrite density clears the support threshold at
/// one distance. A divergent factor dominates the threshold regardless of
/// the other factor's value.
fn joint_support(distance: f64, pre: &TypeGene, post: &TypeGene) -> bool {
    let axon = beta_density(distance, pre.axon_alpha, pre.axon_beta);
    let dendrite = beta_density(distance, post.dendrite_alpha, post.dendrite_beta);
    if axon.is_infinite() || dendrite.is_infinite() {
        return true;
    }
    axon * dendrite > WEIGHT_EPSILON
}

/// Weight matrix from type `pre` onto type `post` over the given distances.
/// Every entry is `0` or `sign * scale` with `sign` fixed by the polarity
/// product.
pub fn build_weights(pre: &TypeGene, post: &TypeGene, distances: &Matrix, scale: f64) -> Matrix {
    let signed = f64::from(pre.axon_polarity * post.dendrite_polarity) * scale;
    Matrix::from_fn(distances.rows, distances.cols, |a, b| {
        if joint_support(distances.get(a, b), pre, post) {
            signed
        } else {
            0.0
        }
    })
}

/// Expands a genome into its phenotype. Deterministic: no randomness enters
/// expression.
pub fn express(genome: &Genome, scale: f64) -> Phenotype {
    debug_assert!(genome.validate().is_ok());
    let genes: Vec<&TypeGene> = genome.genes().collect();
    let positions: Vec<Vec<f64>> = genes.iter().map(|g| place_cells(g.cell_count)).collect();
    let time_constants: Vec<f64> = genes.iter().map(|g| g.time_constant).collect();
    let cell_counts: Vec<usize> = genes.iter().map(|g| g.cell_count).collect();
    let mut weights = BTreeMap::new();
    for (i, gene) in genes.iter().enumerate() {
        for &j in &gene.targets {
            let d = distance_matrix(&positions[i], &positions[j]);
            weights.insert((i, j), build_weights(gene, genes[j], &d, scale));
        }
    }
    let mut incoming = vec![Vec::new(); genes.len()];
    for &(i, j) in weights.keys() {
        incoming[j].push(i);
    }
    Phenotype {
        positions,
        time_constants,
        cell_counts,
        rgc_index: genome.rgc_index(),
        weights,
        incoming,
    }
}

/// Plain-text phenotype dump: positions and dense weight matrices, row-major,
/// six significant digits.
pub fn render_phenotype(phen: &Phenotype) -> String {
    let mut out = String::new();
    writeln!(out, "types {}", phen.cell_counts.len()).unwrap();
    for (i, positions) in phen.positions.iter().enumerate() {
        writeln!(
            out,
            "type {i} cells {} tau {}",
            phen.cell_counts[i], phen.time_constants[i]
        )
        .unwrap();
        let rendered: Vec<String> = positions.iter().map(|p| format!("{p:.5e}")).collect();
        writeln!(out, "positions {}", rendered.join(" ")).unwrap();
    }
    for ((i, j), w) in &phen.weights {
        writeln!(out, "weights {i} {j} rows {} cols {}", w.rows, w.cols).unwrap();
        for r in 0..w.rows {
            let rendered: Vec<String> = w.row(r).iter().map(|v| format!("{v:.5e}")).collect();
            writeln!(out, "{}", rendered.join(" ")).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{init_genome, Limits, SHAPE_GRID};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    // Independent scalar oracle: textbook Beta density
    // x^(a-1) (1-x)^(b-1) / B(a,b) with the normalization built from
    // half-integer gamma values by recurrence. IEEE powf at the endpoints
    // (0^negative = +inf, 0^0 = 1) reproduces the analytic limits without
    // any branching.
    fn oracle_gamma(x: f64) -> f64 {
        if x == 0.5 {
            PI.sqrt()
        } else if x == 1.0 {
            1.0
        } else {
            (x - 1.0) * oracle_gamma(x - 1.0)
        }
    }

    fn oracle_density(x: f64, a: f64, b: f64) -> f64 {
        let norm = oracle_gamma(a) * oracle_gamma(b) / oracle_gamma(a + b);
        x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0) / norm
    }

    fn oracle_weight(d: f64, pre: &TypeGene, post: &TypeGene, scale: f64) -> f64 {
        let p1 = oracle_density(d, pre.axon_alpha, pre.axon_beta);
        let p2 = oracle_density(d, post.dendrite_alpha, post.dendrite_beta);
        let fired = p1.is_infinite() || p2.is_infinite() || p1 * p2 > WEIGHT_EPSILON;
        if fired {
            f64::from(pre.axon_polarity * post.dendrite_polarity) * scale
        } else {
            0.0
        }
    }

    fn gene_with(shapes: [f64; 4], x_a: i8, x_d: i8) -> TypeGene {
        TypeGene {
            cell_count: 4,
            axon_polarity: x_a,
            dendrite_polarity: x_d,
            axon_alpha: shapes[0],
            axon_beta: shapes[1],
            dendrite_alpha: shapes[2],
            dendrite_beta: shapes[3],
            time_constant: 20.0,
            targets: BTreeSet::new(),
        }
    }

    #[test]
    fn place_cells_tiles_uniformly() {
        assert_eq!(place_cells(1), vec![0.5]);
        assert_eq!(place_cells(2), vec![0.25, 0.75]);
        let p = place_cells(24);
        assert_eq!(p.len(), 24);
        for k in 0..23 {
            assert!((p[k + 1] - p[k] - 1.0 / 24.0).abs() < 1e-12);
            assert!((p[k] + p[23 - k] - 1.0).abs() < 1e-12, "symmetric about 0.5");
        }
        assert!(p.iter().all(|&x| 0.0 < x && x < 1.0));
    }

    #[test]
    fn distances_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos_i: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let pos_j: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let d_ij = distance_matrix(&pos_i, &pos_j);
        let d_ji = distance_matrix(&pos_j, &pos_i);
        for a in 0..7 {
            for b in 0..5 {
                assert_eq!(d_ij.get(a, b), d_ji.get(b, a));
            }
        }
        assert_eq!(distance_matrix(&[0.25], &[0.75]).get(0, 0), 0.5);
        let d_self = distance_matrix(&pos_i, &pos_i);
        for a in 0..7 {
            assert_eq!(d_self.get(a, a), 0.0);
        }
    }

    #[test]
    fn uniform_shapes_fire_everywhere() {
        let pre = gene_with([1.0; 4], 1, 1);
        let post = gene_with([1.0; 4], 1, 1);
        let d = distance_matrix(&place_cells(4), &place_cells(6));
        let w = build_weights(&pre, &post, &d, 0.1);
        assert!(w.data.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn polarity_product_signs_matrix() {
        let d = Matrix::zeros(1, 1);
        for (x_a, x_d, want) in [(1i8, -1i8, -0.1), (-1, 1, -0.1), (-1, -1, 0.1), (1, 1, 0.1)] {
            let pre = gene_with([0.5, 1.0, 1.0, 1.0], x_a, 1);
            let post = gene_with([1.0, 1.0, 1.0, 1.0], 1, x_d);
            let w = build_weights(&pre, &post, &d, 0.1);
            assert_eq!(w.get(0, 0), want, "x_a={x_a} x_d={x_d}");
        }
    }

    #[test]
    fn bell_shapes_vanish_at_zero_distance() {
        // Beta(2,2) density 6x(1-x) is 0 at both endpoints.
        let pre = gene_with([2.0; 4], 1, 1);
        let post = gene_with([2.0; 4], 1, 1);
        let d = Matrix::zeros(3, 3);
        let w = build_weights(&pre, &post, &d, 0.1);
        assert!(w.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_textbook_oracle_over_full_shape_grid() {
        // Full shape grid for the axon pair of the presynaptic gene and the
        // dendrite pair of the postsynaptic gene, 16 distances spanning both
        // endpoints; zero tolerance on the {-c, 0, +c} classification.
        let distances: Vec<f64> = (0..16).map(|k| k as f64 / 15.0).collect();
        let d = Matrix {
            rows: 1,
            cols: 16,
            data: distances.clone(),
        };
        let scale = 0.1;
        let mut fired = 0usize;
        let mut silent = 0usize;
        for &aa in &SHAPE_GRID {
            for &ab in &SHAPE_GRID {
                for &da in &SHAPE_GRID {
                    for &db in &SHAPE_GRID {
                        let pre = gene_with([aa, ab, 1.0, 1.0], 1, 1);
                        let post = gene_with([1.0, 1.0, da, db], 1, -1);
                        let w = build_weights(&pre, &post, &d, scale);
                        for (b, &dist) in distances.iter().enumerate() {
                            let want = oracle_weight(dist, &pre, &post, scale);
                            assert_eq!(
                                w.get(0, b),
                                want,
                                "shapes ({aa},{ab},{da},{db}) at distance {dist}"
                            );
                            if want == 0.0 {
                                silent += 1;
                            } else {
                                fired += 1;
                            }
                        }
                    }
                }
            }
        }
        // Both classes must actually occur or the sweep proves nothing.
        assert!(fired > 1000 && silent > 1000, "fired {fired}, silent {silent}");
    }

    #[test]
    fn support_is_monotone_in_joint_density() {
        let pre = gene_with([3.5, 0.5, 1.0, 1.0], 1, 1);
        let post = gene_with([1.0, 1.0, 2.0, 4.0], 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut by_density: Vec<(f64, bool)> = (0..200)
            .map(|_| {
                let d: f64 = rng.random::<f64>();
                let joint = beta_density(d, 3.5, 0.5) * beta_density(d, 2.0, 4.0);
                let w = build_weights(&pre, &post, &Matrix { rows: 1, cols: 1, data: vec![d] }, 0.1);
                (joint, w.get(0, 0) != 0.0)
            })
            .collect();
        by_density.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Once the threshold fires it must stay fired for larger densities.
        let mut seen_fired = false;
        for (_, fired) in by_density {
            if seen_fired {
                assert!(fired, "support must be an upper set of joint density");
            }
            seen_fired |= fired;
        }
    }

    #[test]
    fn express_builds_declared_projections_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut genome = init_genome(&mut rng, Limits::default());
        genome.photoreceptor.targets = BTreeSet::new();
        assert!(express(&genome, 0.1).weights.is_empty());

        genome.photoreceptor.targets = BTreeSet::from([1]);
        let phen = express(&genome, 0.1);
        assert_eq!(phen.weights.len(), 1);
        let w = &phen.weights[&(0, 1)];
        assert_eq!((w.rows, w.cols), (24, 5));
        assert_eq!(phen.incoming[1], vec![0]);
        assert_eq!(phen.rgc_index, 1);
    }

    #[test]
    fn express_is_deterministic_and_sign_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let mut genome = init_genome(&mut rng, Limits::default());
            for _ in 0..3 {
                let source = rng.random_range(0..genome.type_count());
                genome.duplicate_type(source);
            }
            for idx in 0..genome.type_count() - 1 {
                let n_types = genome.type_count();
                let gene = match idx {
                    0 => &mut genome.photoreceptor,
                    i => &mut genome.interneurons[i - 1],
                };
                gene.targets = (0..n_types).filter(|_| rng.random_bool(0.3)).collect();
            }
            genome.validate().unwrap();
            let phen = express(&genome, 0.1);
            assert_eq!(phen, express(&genome, 0.1), "expression must be replayable");
            let genes: Vec<&TypeGene> = genome.genes().collect();
            for ((i, j), w) in &phen.weights {
                let sign = f64::from(genes[*i].axon_polarity * genes[*j].dendrite_polarity);
                for &v in &w.data {
                    assert!(v == 0.0 || v == sign * 0.1, "entry {v} in ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn rendered_phenotype_lists_every_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut genome = init_genome(&mut rng, Limits::default());
        genome.photoreceptor.targets = BTreeSet::from([0, 1]);
        let phen = express(&genome, 0.1);
        let text = render_phenotype(&phen);
        assert!(text.contains("types 2"));
        assert!(text.contains("weights 0 1 rows 24 cols 5"));
        assert!(text.contains("weights 0 0 rows 24 cols 24"));
        let first_position = format!("{:.5e}", 1.0 / 48.0);
        assert!(text.contains(&first_position));
    }
}
