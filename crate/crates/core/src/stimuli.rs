//! Step-edge stimuli on the photoreceptor grid: a reference step at a
//! random interior edge, perturbed by uniform noise and Gaussian smoothing,
//! frozen into train/test sets at the start of a trial.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("stimulus parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgePolarity {
    /// Dark below the edge, bright above.
    Rising,
    /// Bright below the edge, dark above.
    Falling,
}

impl EdgePolarity {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgePolarity::Rising => "rising",
            EdgePolarity::Falling => "falling",
        }
    }

    fn parse(s: &str) -> Result<Self, StimuliError> {
        match s {
            "rising" => Ok(EdgePolarity::Rising),
            "falling" => Ok(EdgePolarity::Falling),
            other => Err(StimuliError::Parse(format!("unknown polarity `{other}`"))),
        }
    }
}

/// One frozen input: the perturbed sample values plus the ground truth that
/// generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct Stimulus {
    pub values: Vec<f64>,
    pub edge_location: f64,
    pub polarity: EdgePolarity,
}

/// Train/test inputs, immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusSet {
    train: Vec<Stimulus>,
    test: Vec<Stimulus>,
}

impl StimulusSet {
    #[cfg(test)]
    pub(crate) fn from_parts(train: Vec<Stimulus>, test: Vec<Stimulus>) -> StimulusSet {
        StimulusSet { train, test }
    }

    pub fn train(&self) -> &[Stimulus] {
        &self.train
    }

    pub fn test(&self) -> &[Stimulus] {
        &self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusParams {
    pub train_count: usize,
    pub test_count: usize,
    pub noise_amp: f64,
    pub sigma: f64,
    /// Edges are drawn from [margin, 1 - margin] to keep them away from the
    /// field boundary.
    pub margin: f64,
}

impl Default for StimulusParams {
    fn default() -> Self {
        StimulusParams {
            train_count: 500,
            test_count: 100,
            noise_amp: 0.1,
            sigma: 2.0,
            margin: 0.1,
        }
    }
}

/// Noise-free step sampled at cell positions (k + 0.5)/n: 0 below the edge
/// and 1 at or above it for a rising edge, mirrored for falling.
pub fn reference_signal(edge: f64, polarity: EdgePolarity, n: usize) -> Vec<f64> {
    assert!(edge > 0.0 && edge < 1.0, "edge {edge} outside (0,1)");
    (0..n)
        .map(|k| {
            let pos = (k as f64 + 0.5) / n as f64;
            let above = pos >= edge;
            match polarity {
                EdgePolarity::Rising => f64::from(u8::from(above)),
                EdgePolarity::Falling => f64::from(u8::from(!above)),
            }
        })
        .collect()
}

/// Discrete Gaussian kernel, truncated at ceil(3 sigma) taps per side and
/// renormalized to unit sum.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

fn reflect(mut m: i64, n: i64) -> usize {
    while m < 0 || m >= n {
        m = if m < 0 { -m - 1 } else { 2 * n - 1 - m };
    }
    m as usize
}

fn smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = values.len() as i64;
    (0..n)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, &w)| w * values[reflect(k + i as i64 - radius, n)])
                .sum()
        })
        .collect()
}

/// Adds per-sample uniform noise, smooths with a reflective-boundary
/// Gaussian, and clamps into [0,1] as the final operation.
pub fn perturb<R: Rng + ?Sized>(
    signal: &[f64],
    noise_amp: f64,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(noise_amp >= 0.0 && sigma >= 0.0);
    let noisy: Vec<f64> = if noise_amp > 0.0 {
        signal.iter().map(|&v| v + rng.random_range(-noise_amp..noise_amp)).collect()
    } else {
        signal.to_vec()
    };
    let mut out = smooth(&noisy, sigma);
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

fn draw_stimuli<R: Rng + ?Sized>(
    params: &StimulusParams,
    n_samples: usize,
    count: usize,
    rng: &mut R,
) -> Vec<Stimulus> {
    (0..count)
        .map(|_| {
            let edge = rng.random_range(params.margin..=1.0 - params.margin);
            let polarity = if rng.random_bool(0.5) {
                EdgePolarity::Rising
            } else {
                EdgePolarity::Falling
            };
            let reference = reference_signal(edge, polarity, n_samples);
            Stimulus {
                values: perturb(&reference, params.noise_amp, params.sigma, rng),
                edge_location: edge,
                polarity,
            }
        })
        .collect()
}

/// Draws the frozen train/test sets. Train and test use independent
/// sub-streams seeded from `rng`, so neither depends on the other's size.
pub fn make_stimulus_set<R: Rng + ?Sized>(
    params: &StimulusParams,
    n_samples: usize,
    rng: &mut R,
) -> StimulusSet {
    assert!(params.train_count >= 1 && params.test_count >= 1);
    assert!(params.margin > 0.0 && params.margin < 0.5);
    let mut train_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut test_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    StimulusSet {
        train: draw_stimuli(params, n_samples, params.train_count, &mut train_rng),
        test: draw_stimuli(params, n_samples, params.test_count, &mut test_rng),
    }
}

/// One CSV row per stimulus: subset label, ground truth, then the sample
/// values. Floats use the shortest round-trip form, so re-parsing is exact.
pub fn render_stimulus_set(set: &StimulusSet) -> String {
    let mut out = String::from("set,edge,polarity,values...\n");
    let mut push = |label: &str, stimuli: &[Stimulus]| {
        for s in stimuli {
            let values: Vec<String> = s.values.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{label},{},{},{}\n",
                s.edge_location,
                s.polarity.as_str(),
                values.join(",")
            ));
        }
    };
    push("train", &set.train);
    push("test", &set.test);
    out
}

/// Inverse of [`render_stimulus_set`]; ignores `#` comment lines and the
/// column header.
pub fn parse_stimulus_set(text: &str) -> Result<StimulusSet, StimuliError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("set,") {
            continue;
        }
        let mut fields = line.split(',');
        let fail = |what: &str| {
            StimuliError::Parse(format!("line {}: {what}: `{line}`", lineno + 1))
        };
        let label = fields.next().ok_or_else(|| fail("missing subset label"))?;
        let edge: f64 = fields
            .next()
            .ok_or_else(|| fail("missing edge"))?
            .parse()
            .map_err(|_| fail("bad edge"))?;
        let polarity = EdgePolarity::parse(fields.next().ok_or_else(|| fail("missing polarity"))?)?;
        let values: Vec<f64> = fields
            .map(|f| f.parse().map_err(|_| fail("bad value")))
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(fail("no sample values"));
        }
        let stimulus = Stimulus { values, edge_location: edge, polarity };
        match label {
            "train" => train.push(stimulus),
            "test" => test.push(stimulus),
            other => return Err(fail(&format!("unknown subset `{other}`"))),
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(StimuliError::Parse("need at least one train and one test row".into()));
    }
    Ok(StimulusSet { train, test })
}
