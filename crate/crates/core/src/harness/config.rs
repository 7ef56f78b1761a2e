//! Scenario configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combinatorics::EnumerationCap;
use crate::corrector::{CorrectorOptions, Prior, Scenario};
use crate::error::{Error, Result};
use crate::pgf::{CardinalityPgf, MAX_ORDER};
use crate::statespace::{IntensityGrid, MeasurementKernel, MeasurementSet, SensorModel, StateGrid};

/// Mass tolerance applied to distribution vectors read from a file; vectors
/// within it are renormalized exactly.
pub const LOAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub intensity: Vec<f64>,
    pub cardinality: CardinalityPgf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub p_d: Vec<f64>,
    pub clutter_cardinality: CardinalityPgf,
    pub measurement_cardinality: Vec<CardinalityPgf>,
    pub kernel: MeasurementKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSpec {
    pub intensity: Vec<f64>,
    pub cardinality: CardinalityPgf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub seed: u64,
    pub steps: usize,
    /// Ground truth at step 0; defaults to sampling the prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSpec>,
    #[serde(default = "one")]
    pub survival: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth: Option<BirthSpec>,
}

/// Explicit target grid points, or a process to sample them from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Targets(Vec<usize>),
    Process(PriorSpec),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_z: Option<usize>,
    #[serde(default)]
    pub acknowledge_cost: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_truncation: Option<usize>,
}

/// A scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSpec,
    pub prior: PriorSpec,
    pub sensor: SensorSpec,
    /// Measurement sets, one per step.
    #[serde(default)]
    pub measurements: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub options: OptionsSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Birth {
    pub intensity: IntensityGrid,
    pub cardinality: CardinalityPgf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Targets(Vec<usize>),
    Process(Prior),
}

enum PendingTruth {
    Targets(Vec<usize>),
    Process(Option<IntensityGrid>, Option<CardinalityPgf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub seed: u64,
    pub steps: usize,
    pub truth: Truth,
    pub survival: f64,
    pub birth: Option<Birth>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub grid: StateGrid,
    pub prior: Prior,
    pub sensor: SensorModel,
    pub measurements: Vec<MeasurementSet>,
    pub simulation: Option<SimulationConfig>,
    pub options: CorrectorOptions,
}

impl ScenarioConfig {
    /// The corrector inputs for measurement set `step`, or an empty set.
    pub fn scenario(&self, step: usize) -> Scenario {
        Scenario {
            grid: self.grid.clone(),
            prior: self.prior.clone(),
            sensor: self.sensor.clone(),
            measurements: self.measurements.get(step).cloned().unwrap_or_default(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(file)
}

fn cardinality(g: &CardinalityPgf, path: &str, out: &mut Vec<String>) -> Option<CardinalityPgf> {
    let r = match g {
        CardinalityPgf::Finite(p) => CardinalityPgf::finite_with_tolerance(p.clone(), LOAD_TOL),
        CardinalityPgf::Poisson(r) => CardinalityPgf::poisson(*r),
    };
    r.map_err(|e| out.push(format!("{path}: {e}"))).ok()
}

/// Rescales a probability vector whose mass is within `LOAD_TOL` of one;
/// anything else is left for the sensor validation to report.
fn renormalized(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    if values.iter().all(|v| v.is_finite() && *v >= 0.0) && (total - 1.0).abs() <= LOAD_TOL {
        values.iter().map(|v| v / total).collect()
    } else {
        values.to_vec()
    }
}

fn intensity(values: &[f64], n: usize, path: &str, out: &mut Vec<String>) -> Option<IntensityGrid> {
    if values.len() != n {
        out.push(format!("{path} has {} entries for {n} grid points", values.len()));
    }
    for (i, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0) {
            out.push(format!("{path}[{i}] = {v} must be nonnegative"));
        }
    }
    IntensityGrid::new(values.to_vec()).ok()
}

fn validate(file: ScenarioFile) -> Result<ScenarioConfig> {
    let mut v = Vec::new();
    let n = file.grid.weights.len();
    let ids = file
        .grid
        .ids
        .clone()
        .unwrap_or_else(|| (0..n).map(|i| format!("x{i}")).collect());
    let grid = match StateGrid::new(ids, file.grid.weights.clone()) {
        Ok(g) => Some(g),
        Err(Error::Validation(list)) => {
            v.extend(list);
            None
        }
        Err(e) => {
            v.push(format!("grid: {e}"));
            None
        }
    };

    let prior_intensity = intensity(&file.prior.intensity, n, "prior.intensity", &mut v);
    let prior_card = cardinality(&file.prior.cardinality, "prior.cardinality", &mut v);

    let s = &file.sensor;
    let clutter = cardinality(&s.clutter_cardinality, "sensor.clutter_cardinality", &mut v);
    let meas: Vec<Option<CardinalityPgf>> = s
        .measurement_cardinality
        .iter()
        .enumerate()
        .map(|(i, g)| cardinality(g, &format!("sensor.measurement_cardinality[{i}]"), &mut v))
        .collect();
    let kernel = match &s.kernel {
        MeasurementKernel::Tabulated {
            likelihood,
            clutter_density,
        } => MeasurementKernel::Tabulated {
            likelihood: likelihood.iter().map(|row| renormalized(row)).collect(),
            clutter_density: renormalized(clutter_density),
        },
        k => k.clone(),
    };
    let sensor = SensorModel {
        p_d: s.p_d.clone(),
        clutter_cardinality: clutter.clone().unwrap_or(CardinalityPgf::Poisson(0.0)),
        measurement_cardinality: meas
            .iter()
            .map(|g| g.clone().unwrap_or(CardinalityPgf::Poisson(0.0)))
            .collect(),
        kernel,
    };
    // placeholders above are valid, so only genuine sensor problems appear here
    v.extend(sensor.violations("sensor"));
    if s.p_d.len() != n {
        v.push(format!("sensor.p_d has {} entries for {n} grid points", s.p_d.len()));
    }

    let mut measurements = Vec::new();
    for (k, set) in file.measurements.iter().enumerate() {
        for (i, &z) in set.iter().enumerate() {
            let ok = match sensor.kernel.measurement_space_size() {
                Some(m) => z.fract() == 0.0 && z >= 0.0 && z < m as f64,
                None => z.is_finite(),
            };
            if !ok {
                v.push(format!("measurements[{k}][{i}] = {z} is not a valid measurement"));
            }
        }
        measurements.push(MeasurementSet::new(set.clone()));
    }

    let options = match file.options.max_z {
        Some(m) => EnumerationCap::new(m, file.options.acknowledge_cost)
            .map_err(|e| v.push(format!("options.max_z: {e}")))
            .ok(),
        None => Some(EnumerationCap::default()),
    }
    .map(|cap| CorrectorOptions {
        cap,
        poisson_truncation: file.options.poisson_truncation.unwrap_or(MAX_ORDER - 1),
    });
    if let Some(t) = file.options.poisson_truncation {
        if t >= MAX_ORDER {
            v.push(format!("options.poisson_truncation = {t} exceeds {}", MAX_ORDER - 1));
        }
    }
    if let Some(cap) = options.map(|o| o.cap) {
        for (k, set) in measurements.iter().enumerate() {
            if set.len() > cap.max() {
                v.push(format!(
                    "measurements[{k}] has {} measurements, above the cap of {}",
                    set.len(),
                    cap.max()
                ));
            }
        }
    }

    let simulation = file.simulation.as_ref().map(|sim| {
        let process = |p: &PriorSpec, v: &mut Vec<String>| {
            PendingTruth::Process(
                intensity(&p.intensity, n, "simulation.truth.intensity", v),
                cardinality(&p.cardinality, "simulation.truth.cardinality", v),
            )
        };
        let truth = match &sim.truth {
            Some(TruthSpec::Targets(t)) => {
                for (k, &x) in t.iter().enumerate() {
                    if x >= n {
                        v.push(format!("simulation.truth[{k}] = {x} is not a grid point (0..{n})"));
                    }
                }
                PendingTruth::Targets(t.clone())
            }
            Some(TruthSpec::Process(p)) => process(p, &mut v),
            None => process(&file.prior, &mut v),
        };
        if !(sim.survival.is_finite() && (0.0..=1.0).contains(&sim.survival)) {
            v.push(format!("simulation.survival = {} is not in [0, 1]", sim.survival));
        }
        let birth = sim.birth.as_ref().map(|b| {
            let i = intensity(&b.intensity, n, "simulation.birth.intensity", &mut v);
            let c = cardinality(&b.cardinality, "simulation.birth.cardinality", &mut v);
            (i, c)
        });
        (sim.seed, sim.steps, truth, sim.survival, birth)
    });

    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let prior = Prior {
        intensity: prior_intensity.expect("validated"),
        cardinality: prior_card.expect("validated"),
    };
    let simulation = simulation.map(|(seed, steps, truth, survival, birth)| SimulationConfig {
        seed,
        steps,
        truth: match truth {
            PendingTruth::Process(i, c) => Truth::Process(Prior {
                intensity: i.expect("validated"),
                cardinality: c.expect("validated"),
            }),
            PendingTruth::Targets(t) => Truth::Targets(t),
        },
        survival,
        birth: birth.map(|(i, c)| Birth {
            intensity: i.expect("validated"),
            cardinality: c.expect("validated"),
        }),
    });
    Ok(ScenarioConfig {
        grid: grid.expect("validated"),
        prior,
        sensor,
        measurements,
        simulation,
        options: options.expect("validated"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
  "grid": {"weights": [1.0, 1.0]},
  "prior": {"intensity": [0.5, 0.5], "cardinality": {"poisson": 1.0}},
  "sensor": {
    "p_d": [0.9, 0.8],
    "clutter_cardinality": {"poisson": 1.0},
    "measurement_cardinality": [{"poisson": 2.0}, {"poisson": 2.0}],
    "kernel": {"tabulated": {"likelihood": [[0.7, 0.3], [0.2, 0.8]], "clutter_density": [0.5, 0.5]}}
  },
  "measurements": [[0, 1]]
}"#;

    #[test]
    fn parses_small_scenario() {
        let c = parse_scenario(SMALL).unwrap();
        assert_eq!(c.grid.len(), 2);
        assert_eq!(c.measurements[0].values(), &[0.0, 1.0]);
        assert_eq!(c.options, CorrectorOptions::default());
    }

    #[test]
    fn reports_every_violation_with_paths() {
        let bad = SMALL
            .replace("[0.9, 0.8]", "[0.9, -0.8]")
            .replace("[0.7, 0.3]", "[0.7, 0.2]")
            .replace("[[0, 1]]", "[[0, 5]]");
        let Err(Error::Validation(v)) = parse_scenario(&bad) else {
            panic!()
        };
        assert!(v.iter().any(|l| l.contains("sensor.p_d[1]")), "{v:?}");
        assert!(v.iter().any(|l| l.contains("likelihood[0]")), "{v:?}");
        assert!(v.iter().any(|l| l.contains("measurements[0][1]")), "{v:?}");
    }

    #[test]
    fn renormalizes_within_load_tolerance() {
        let near = SMALL.replace("[0.7, 0.3]", "[0.7, 0.3000000001]");
        let c = parse_scenario(&near).unwrap();
        let MeasurementKernel::Tabulated { likelihood, .. } = &c.sensor.kernel else {
            panic!()
        };
        assert!((likelihood[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn truth_accepts_targets_or_a_process() {
        let targets = SMALL.replace(
            r#""measurements": [[0, 1]]"#,
            r#""measurements": [[0, 1]], "simulation": {"seed": 1, "steps": 2, "truth": [1, 1, 0]}"#,
        );
        let sim = parse_scenario(&targets).unwrap().simulation.unwrap();
        assert_eq!(sim.truth, Truth::Targets(vec![1, 1, 0]));

        let process = targets.replace(
            "[1, 1, 0]",
            r#"{"intensity": [2.0, 0.0], "cardinality": {"finite": [0.0, 0.0, 1.0]}}"#,
        );
        let sim = parse_scenario(&process).unwrap().simulation.unwrap();
        assert!(matches!(sim.truth, Truth::Process(_)));

        let Err(Error::Validation(v)) = parse_scenario(&targets.replace("[1, 1, 0]", "[1, 2]")) else {
            panic!()
        };
        assert!(v.iter().any(|l| l.contains("simulation.truth[1]")), "{v:?}");
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let err = parse_scenario(&SMALL[..120]).unwrap_err();
        assert!(matches!(err, Error::Parse { line, .. } if line > 1));
    }
}
