//! Statistical helpers shared by unit tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Chi-square goodness-of-fit p-value against a uniform distribution over
/// the given bins.
pub fn chi_square_uniform_p(counts: &[f64], total: f64) -> f64 {
    let expected = total / counts.len() as f64;
    let stat: f64 = counts.iter().map(|o| (o - expected) * (o - expected) / expected).sum();
    let df = (counts.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// One-sample Kolmogorov-Smirnov p-value (asymptotic) for samples against a
/// continuous uniform distribution on `[lo, hi]`.
pub fn ks_uniform_p(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - cdf).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = 2.0
        * (1..=100)
            .map(|k| {
                let k = k as f64;
                (-1.0f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum::<f64>();
    p.clamp(0.0, 1.0)
}
