//! Seeded ground-truth simulation and a minimal CPHD prediction step.
//!
//! The prediction here is the textbook constant-survival, additive-birth
//! model; it exists so multi-step runs can be demonstrated and is not part of
//! the corrector.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::combinatorics::{bell_number, EnumerationCap};
use crate::corrector::{corrector_step, CorrectorOptions, CorrectorResult, Prior};
use crate::error::{Error, Result};
use crate::numeric::{binomial, compensated_sum};
use crate::pgf::{poisson_pmf, CardinalityPgf, MAX_ORDER};
use crate::statespace::{
    normalize_intensity, IntensityGrid, MeasurementKernel, MeasurementSet, SensorModel, SpatialDensity, StateGrid,
};

use super::config::{Birth, ScenarioConfig, Truth};

/// Name of the generator recorded in outputs.
pub const RNG_NAME: &str = "ChaCha8";
/// Probability mass a prediction may drop at the truncation order without a warning.
pub const TRUNCATION_WARN: f64 = 1e-6;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn draw_count<R: Rng>(rng: &mut R, card: &CardinalityPgf) -> Result<usize> {
    match card {
        CardinalityPgf::Finite(p) => {
            let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            Ok(dist.sample(rng))
        }
        CardinalityPgf::Poisson(r) if *r == 0.0 => Ok(0),
        CardinalityPgf::Poisson(r) => {
            let dist = Poisson::new(*r).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            Ok(dist.sample(rng) as usize)
        }
    }
}

/// Cardinality from `card`, then that many i.i.d. grid points from `density`.
pub fn sample_iid_cluster<R: Rng>(rng: &mut R, card: &CardinalityPgf, density: &SpatialDensity) -> Result<Vec<usize>> {
    let n = draw_count(rng, card)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mass: Vec<f64> = density
        .values()
        .iter()
        .zip(density.weights())
        .map(|(v, w)| v * w)
        .collect();
    let dist = WeightedIndex::new(&mass).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

fn draw_measurement<R: Rng>(rng: &mut R, kernel: &MeasurementKernel, point: Option<usize>) -> Result<f64> {
    let bad = |e: String| Error::InvalidDistribution(e);
    match (kernel, point) {
        (MeasurementKernel::Tabulated { likelihood, .. }, Some(x)) => Ok(WeightedIndex::new(&likelihood[x])
            .map_err(|e| bad(e.to_string()))?
            .sample(rng) as f64),
        (MeasurementKernel::Tabulated { clutter_density, .. }, None) => Ok(WeightedIndex::new(clutter_density)
            .map_err(|e| bad(e.to_string()))?
            .sample(rng) as f64),
        (MeasurementKernel::Gaussian { positions, sigma, .. }, Some(x)) => Ok(Normal::new(positions[x], *sigma)
            .map_err(|e| bad(e.to_string()))?
            .sample(rng)),
        (
            MeasurementKernel::Gaussian {
                clutter_range: (lo, hi),
                ..
            },
            None,
        ) => Ok(rng.random_range(*lo..*hi)),
    }
}

/// Measurements of one scan: per-target detections and cluster sizes, then clutter.
pub fn sample_measurements<R: Rng>(rng: &mut R, truth: &[usize], sensor: &SensorModel) -> Result<MeasurementSet> {
    let mut values = Vec::new();
    for &x in truth {
        if rng.random::<f64>() < sensor.p_d[x] {
            let k = draw_count(rng, &sensor.measurement_cardinality[x])?;
            for _ in 0..k {
                values.push(draw_measurement(rng, &sensor.kernel, Some(x))?);
            }
        }
    }
    let k = draw_count(rng, &sensor.clutter_cardinality)?;
    for _ in 0..k {
        values.push(draw_measurement(rng, &sensor.kernel, None)?);
    }
    Ok(MeasurementSet::new(values))
}

/// `P(0..=n_max)` of a cardinality distribution.
fn truncated_pmf(card: &CardinalityPgf, n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|n| match card {
            CardinalityPgf::Poisson(r) => poisson_pmf(*r, n),
            _ => card.prob(n),
        })
        .collect()
}

/// Predicted state after survival thinning and birth.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prior: Prior,
    pub truncated_mass: f64,
    pub warnings: Vec<String>,
}

/// `D' = p_S D + D_birth`; `P'` is the binomially thinned `P` convolved with
/// the birth cardinality, truncated at the maximum order and renormalized.
pub fn predict_step(
    intensity: &IntensityGrid,
    cardinality: &[f64],
    survival: f64,
    birth: Option<&Birth>,
) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&survival) {
        return Err(Error::ModelViolation(format!(
            "survival probability {survival} is not in [0, 1]"
        )));
    }
    let n_max = MAX_ORDER - 1;
    let thinned: Vec<f64> = (0..cardinality.len())
        .map(|m| {
            compensated_sum((m..cardinality.len()).map(|n| {
                cardinality[n] * binomial(n, m) * survival.powi(m as i32) * (1.0 - survival).powi((n - m) as i32)
            }))
        })
        .collect();
    let birth_pmf = birth
        .map(|b| truncated_pmf(&b.cardinality, n_max))
        .unwrap_or_else(|| vec![1.0]);
    let full: Vec<f64> = (0..=n_max)
        .map(|n| {
            compensated_sum(
                (0..=n)
                    .filter(|&i| i < thinned.len() && n - i < birth_pmf.len())
                    .map(|i| thinned[i] * birth_pmf[n - i]),
            )
        })
        .collect();
    let kept = compensated_sum(full.iter().copied());
    let truncated_mass = (1.0 - kept).max(0.0);
    let mut warnings = Vec::new();
    if truncated_mass > TRUNCATION_WARN {
        warnings.push(format!(
            "prediction truncated at n = {n_max} drops mass {truncated_mass:e}"
        ));
    }
    let last = full.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let card = CardinalityPgf::Finite(full[..=last].iter().map(|p| p / kept).collect());

    let values = intensity
        .values()
        .iter()
        .enumerate()
        .map(|(x, d)| survival * d + birth.map_or(0.0, |b| b.intensity.values()[x]))
        .collect();
    Ok(Prediction {
        prior: Prior {
            intensity: IntensityGrid::new(values)?,
            cardinality: card,
        },
        truncated_mass,
        warnings,
    })
}

/// Serialized output of one corrector step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub measurement_count: usize,
    pub partition_count: usize,
    /// Wall time in milliseconds, recorded only on request so outputs stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub result: CorrectorResult,
}

impl StepResult {
    pub fn new(step: usize, measurement_count: usize, result: CorrectorResult, wall_time_ms: Option<f64>) -> Self {
        StepResult {
            step,
            measurement_count,
            partition_count: result.diagnostics.partition_count,
            wall_time_ms,
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedStep {
    pub step: usize,
    /// Ground-truth grid points, sorted.
    pub truth: Vec<usize>,
    pub measurements: MeasurementSet,
    pub update: StepResult,
    /// Warnings of the prediction that follows this update.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prediction_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub rng: String,
    pub seed: u64,
    pub steps: Vec<SimulatedStep>,
}

fn sample_prior(rng: &mut ChaCha8Rng, prior: &Prior, grid: &StateGrid) -> Result<Vec<usize>> {
    let (_, density) = normalize_intensity(&prior.intensity, grid)?;
    sample_iid_cluster(rng, &prior.cardinality, &density)
}

/// Ground truth and measurements drawn from a seeded generator, filtered by
/// alternating correction and prediction.
pub fn simulate(config: &ScenarioConfig, seed: u64, steps: usize, timing: bool) -> Result<SimulationOutput> {
    let grid: &StateGrid = &config.grid;
    let sim = config.simulation.as_ref();
    let survival = sim.map_or(1.0, |s| s.survival);
    let birth = sim.and_then(|s| s.birth.as_ref());
    let options: CorrectorOptions = config.options;

    let mut rng = rng_from_seed(seed);
    let mut truth = match sim.map(|s| &s.truth) {
        Some(Truth::Targets(t)) => t.clone(),
        Some(Truth::Process(p)) => sample_prior(&mut rng, p, grid)?,
        None => sample_prior(&mut rng, &config.prior, grid)?,
    };
    let birth_density = match birth {
        Some(b) if b.intensity.mass(grid) > 0.0 => Some(normalize_intensity(&b.intensity, grid)?.1),
        _ => None,
    };

    let mut prior = config.prior.clone();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        if step > 0 {
            truth.retain(|_| rng.random::<f64>() < survival);
            if let (Some(b), Some(density)) = (birth, &birth_density) {
                truth.extend(sample_iid_cluster(&mut rng, &b.cardinality, density)?);
            }
        }
        truth.sort_unstable();
        let z = sample_measurements(&mut rng, &truth, &config.sensor)?;
        if z.len() > options.cap.max() {
            return Err(Error::SizeLimit {
                size: z.len(),
                cap: options.cap.max(),
                bell: bell_number(z.len().min(EnumerationCap::HARD_MAX)).unwrap_or(u64::MAX),
            });
        }
        let start = std::time::Instant::now();
        let result = corrector_step(grid, &prior, &z, &config.sensor, options)?;
        let elapsed = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
        let prediction = predict_step(&result.intensity, &result.cardinality, survival, birth)?;
        out.push(SimulatedStep {
            step,
            truth: truth.clone(),
            update: StepResult::new(step, z.len(), result, elapsed),
            measurements: z,
            prediction_warnings: prediction.warnings,
        });
        prior = prediction.prior;
    }
    Ok(SimulationOutput {
        rng: RNG_NAME.to_string(),
        seed,
        steps: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density(values: Vec<f64>) -> SpatialDensity {
        let grid = StateGrid::with_weights(vec![1.0; values.len()]).unwrap();
        SpatialDensity::new(values, &grid).unwrap()
    }

    #[test]
    fn cluster_examples() {
        let mut rng = rng_from_seed(1);
        let d = density(vec![0.5, 0.5]);
        for _ in 0..20 {
            assert!(sample_iid_cluster(&mut rng, &CardinalityPgf::dirac(0).unwrap(), &d)
                .unwrap()
                .is_empty());
        }
        let d = density(vec![0.0, 1.0, 0.0]);
        let s = sample_iid_cluster(&mut rng, &CardinalityPgf::dirac(3).unwrap(), &d).unwrap();
        assert_eq!(s, vec![1, 1, 1]);
    }

    #[test]
    fn cluster_frequencies_match() {
        // chi-square on cardinality and on point frequencies, 10^5 draws
        let mut rng = rng_from_seed(42);
        let probs = [0.2, 0.5, 0.3];
        let card = CardinalityPgf::finite(probs.to_vec()).unwrap();
        let d = density(vec![0.1, 0.6, 0.3]);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        let mut points = [0usize; 3];
        for _ in 0..draws {
            let s = sample_iid_cluster(&mut rng, &card, &d).unwrap();
            counts[s.len()] += 1;
            for x in s {
                points[x] += 1;
            }
        }
        let chi = |obs: &[usize], p: &[f64], total: f64| -> f64 {
            obs.iter()
                .zip(p)
                .map(|(&o, &p)| (o as f64 - total * p).powi(2) / (total * p))
                .sum()
        };
        // 99.9% quantile of chi-square with 2 degrees of freedom
        assert!(chi(&counts, &probs, draws as f64) < 13.8);
        let total_points: usize = points.iter().sum();
        assert!(chi(&points, &[0.1, 0.6, 0.3], total_points as f64) < 13.8);
    }

    #[test]
    fn prediction_examples() {
        let d = IntensityGrid::new(vec![0.4, 0.6]).unwrap();
        let p = predict_step(&d, &[0.3, 0.7], 1.0, None).unwrap();
        assert_eq!(p.prior.intensity, d);
        assert_eq!(p.prior.cardinality, CardinalityPgf::Finite(vec![0.3, 0.7]));

        let p = predict_step(&d, &[0.0, 1.0], 0.5, None).unwrap();
        assert_eq!(p.prior.cardinality, CardinalityPgf::Finite(vec![0.5, 0.5]));

        let birth = Birth {
            intensity: IntensityGrid::new(vec![0.1, 0.2]).unwrap(),
            cardinality: CardinalityPgf::finite(vec![0.6, 0.4]).unwrap(),
        };
        let p = predict_step(&d, &[0.3, 0.7], 0.0, Some(&birth)).unwrap();
        assert_eq!(p.prior.intensity, birth.intensity);
        assert_eq!(p.prior.cardinality, birth.cardinality);
    }
}
