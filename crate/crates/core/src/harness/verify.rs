//! Seeded verification suites.
//!
//! Each suite draws one scenario per seed from its own generator and runs one
//! check on it. Scenario generation depends only on the suite and the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{bell_number, partitions_of, EnumerationCap, LabelSet};
use crate::corrector::{CorrectorOptions, Prior, Scenario};
use crate::error::{Error, Result};
use crate::oracle::check_oracle;
use crate::pgf::CardinalityPgf;
use crate::reductions::{check_identity, check_poisson_reduction, check_standard_reduction, CheckReport, Metric};
use crate::statespace::{IntensityGrid, MeasurementKernel, MeasurementSet, SensorModel, StateGrid};

use super::simulate::rng_from_seed;

pub const SUITES: [&str; 6] = [
    "combinatorics",
    "identities",
    "poisson-reduction",
    "standard-reduction",
    "oracle",
    "cardinality-routes",
];

/// Partition counts of sets of size 0..=8.
pub const BELL: [u64; 9] = [1, 1, 2, 5, 15, 52, 203, 877, 4140];

/// Closed-form and series cardinality routes must agree to this on poisson priors.
pub const ROUTE_TOL: f64 = 1e-10;

fn stream(seed: u64, suite: u64) -> ChaCha8Rng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(suite);
    rng
}

/// Random probability vector; with `sparse`, entries other than `keep` may be zero.
fn pmf(rng: &mut ChaCha8Rng, len: usize, sparse: bool, keep: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            if sparse && !keep.contains(&i) && rng.random::<f64>() < 0.25 {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut v = vec![0.0; len];
        v[keep.first().copied().unwrap_or(0)] = 1.0;
        return v;
    }
    raw.iter().map(|v| v / total).collect()
}

fn detection(rng: &mut ChaCha8Rng) -> f64 {
    let r: f64 = rng.random();
    if r < 0.15 {
        0.0
    } else if r < 0.3 {
        1.0
    } else {
        rng.random()
    }
}

fn grid(rng: &mut ChaCha8Rng, n: usize) -> StateGrid {
    StateGrid::with_weights((0..n).map(|_| rng.random_range(0.5..2.0)).collect()).expect("positive weights")
}

/// Intensity with total mass `mass` spread by a random density.
fn intensity(rng: &mut ChaCha8Rng, grid: &StateGrid, mass: f64) -> IntensityGrid {
    let q = pmf(rng, grid.len(), false, &[]);
    IntensityGrid::new(q.iter().zip(grid.weights()).map(|(q, w)| mass * q / w).collect()).expect("nonnegative")
}

fn tabulated(rng: &mut ChaCha8Rng, points: usize, values: usize, sparse: bool) -> MeasurementKernel {
    MeasurementKernel::Tabulated {
        likelihood: (0..points).map(|_| pmf(rng, values, sparse, &[])).collect(),
        clutter_density: pmf(rng, values, false, &[]),
    }
}

fn measurements(rng: &mut ChaCha8Rng, count: usize, values: usize) -> MeasurementSet {
    MeasurementSet::new((0..count).map(|_| rng.random_range(0..values) as f64).collect())
}

/// False when the update is undefined: `G(phi) = 0`, or the measurement set
/// has zero likelihood. Generators redraw such scenarios.
fn admissible(s: &Scenario) -> bool {
    !matches!(
        s.step(CorrectorOptions::default()),
        Err(Error::SingularEvaluation { .. } | Error::DegenerateUpdate(_))
    )
}

/// Grid of at most 4 points, at most 5 measurement values, prior support up to
/// 3 targets, at most 3 measurements, clutter with every count up to 3 possible.
pub fn micro_scenario(seed: u64) -> Scenario {
    let mut rng = stream(seed, 1);
    loop {
        let s = draw_micro(&mut rng);
        if admissible(&s) {
            return s;
        }
    }
}

fn draw_micro(rng: &mut ChaCha8Rng) -> Scenario {
    let g = rng.random_range(1..=4);
    let m = rng.random_range(2..=5);
    let n_max = rng.random_range(1..=3);
    let grid = grid(rng, g);
    let card = pmf(rng, n_max + 1, true, &[n_max]);
    let card = CardinalityPgf::finite(card).expect("normalized");
    let prior = Prior {
        intensity: intensity(rng, &grid, card.mean()),
        cardinality: card,
    };
    let p_d = (0..g).map(|_| detection(rng)).collect();
    let clutter = CardinalityPgf::finite(pmf(rng, 4, false, &[])).expect("normalized");
    let meas = (0..g)
        .map(|_| CardinalityPgf::finite(pmf(rng, 4, true, &[1])).expect("normalized"))
        .collect();
    let kernel = tabulated(rng, g, m, true);
    let nz = rng.random_range(0..=3);
    let z = measurements(rng, nz, m);
    Scenario {
        sensor: SensorModel::new(p_d, clutter, meas, kernel).expect("valid sensor"),
        grid,
        prior,
        measurements: z,
    }
}

/// Poisson prior, clutter and measurement counts; every eighth seed has no
/// target-generated measurements at all.
pub fn poisson_scenario(seed: u64) -> Scenario {
    let mut rng = stream(seed, 2);
    loop {
        let s = draw_poisson(&mut rng, seed);
        if admissible(&s) {
            return s;
        }
    }
}

fn draw_poisson(rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let g = rng.random_range(2..=6);
    let m = rng.random_range(3..=6);
    let grid = grid(rng, g);
    let rate = rng.random_range(0.5..4.0);
    let prior = Prior {
        intensity: intensity(rng, &grid, rate),
        cardinality: CardinalityPgf::Poisson(rate),
    };
    let silent = seed % 8 == 7;
    let p_d = (0..g).map(|_| detection(rng)).collect();
    let clutter = CardinalityPgf::Poisson(rng.random_range(0.5..3.0));
    let meas = (0..g)
        .map(|_| CardinalityPgf::Poisson(if silent { 0.0 } else { rng.random_range(0.2..4.0) }))
        .collect();
    let kernel = tabulated(rng, g, m, false);
    let nz = rng.random_range(0..=5);
    let z = measurements(rng, nz, m);
    Scenario {
        sensor: SensorModel::new(p_d, clutter, meas, kernel).expect("valid sensor"),
        grid,
        prior,
        measurements: z,
    }
}

/// Exactly one measurement per detection; finite or poisson prior and clutter.
pub fn standard_scenario(seed: u64) -> Scenario {
    let mut rng = stream(seed, 3);
    loop {
        let s = draw_standard(&mut rng, seed);
        if admissible(&s) {
            return s;
        }
    }
}

fn draw_standard(rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let g = rng.random_range(2..=6);
    let m = rng.random_range(3..=6);
    let grid = grid(rng, g);
    let card = if seed.is_multiple_of(5) {
        CardinalityPgf::Poisson(rng.random_range(0.5..4.0))
    } else {
        let n_max = rng.random_range(1..=5);
        CardinalityPgf::finite(pmf(rng, n_max + 1, true, &[n_max])).expect("normalized")
    };
    let prior = Prior {
        intensity: intensity(rng, &grid, card.mean()),
        cardinality: card,
    };
    let p_d = (0..g).map(|_| detection(rng)).collect();
    let clutter = if seed.is_multiple_of(3) {
        CardinalityPgf::Poisson(rng.random_range(0.5..3.0))
    } else {
        CardinalityPgf::finite(pmf(rng, 6, false, &[])).expect("normalized")
    };
    let meas = vec![CardinalityPgf::dirac(1).expect("valid"); g];
    let kernel = tabulated(rng, g, m, false);
    let nz = rng.random_range(0..=5);
    let z = measurements(rng, nz, m);
    Scenario {
        sensor: SensorModel::new(p_d, clutter, meas, kernel).expect("valid sensor"),
        grid,
        prior,
        measurements: z,
    }
}

/// General finite-support scenario with one or two measurements.
pub fn identity_scenario(seed: u64) -> Scenario {
    let mut rng = stream(seed, 4);
    loop {
        let s = draw_identity(&mut rng, seed);
        if admissible(&s) {
            return s;
        }
    }
}

fn draw_identity(rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let g = rng.random_range(1..=5);
    let m = rng.random_range(2..=5);
    let grid = grid(rng, g);
    let n_max = rng.random_range(1..=6);
    let card = CardinalityPgf::finite(pmf(rng, n_max + 1, true, &[n_max])).expect("normalized");
    let prior = Prior {
        intensity: intensity(rng, &grid, card.mean()),
        cardinality: card,
    };
    let p_d = (0..g).map(|_| detection(rng)).collect();
    let clutter = CardinalityPgf::finite(pmf(rng, 4, true, &[0])).expect("normalized");
    let meas = (0..g)
        .map(|_| CardinalityPgf::finite(pmf(rng, 4, true, &[1, 2])).expect("normalized"))
        .collect();
    let kernel = tabulated(rng, g, m, false);
    let z = measurements(rng, 1 + (seed % 2) as usize, m);
    Scenario {
        sensor: SensorModel::new(p_d, clutter, meas, kernel).expect("valid sensor"),
        grid,
        prior,
        measurements: z,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub seed: u64,
    pub report: CheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    /// Largest value of a metric over all entries.
    pub fn worst(&self, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .filter_map(|e| e.report.metric(metric))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.report.passed).count()
    }

    pub fn skipped(&self) -> usize {
        self.entries.iter().filter(|e| e.report.skipped).count()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} ({} checks, {} failed, {} skipped)",
            self.suite,
            if self.passed { "PASS" } else { "FAIL" },
            self.entries.len(),
            self.failures(),
            self.skipped()
        );
        let mut worst: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for e in &self.entries {
            for m in &e.report.metrics {
                let w = worst.entry(&m.name).or_insert((m.value, m.tolerance));
                if m.value > w.0 {
                    w.0 = m.value;
                }
            }
        }
        for (name, (value, tol)) in worst {
            if tol.is_finite() {
                let _ = write!(s, "\n  {name}: worst {value:.3e} (tolerance {tol:.0e})");
            } else {
                let _ = write!(s, "\n  {name}: worst {value:.3e} (reported only)");
            }
        }
        s
    }
}

fn combinatorics_check(n: usize) -> CheckReport {
    let cap = EnumerationCap::new(n.max(EnumerationCap::DEFAULT_MAX), true).expect("within hard cap");
    let name = "combinatorics";
    let parts = match partitions_of(LabelSet::first(n), cap) {
        Ok(p) => p,
        Err(e) => return CheckReport::failed(name, e.to_string()),
    };
    let bell = bell_number(n).unwrap_or(0);
    let valid = parts.iter().all(|p| p.is_partition_of(LabelSet::first(n)));
    let mut sorted = parts.clone();
    sorted.sort_by_key(|p| p.to_string());
    sorted.dedup();
    let count = parts.len() as f64;
    CheckReport::new(
        name,
        vec![
            Metric::new("count_minus_bell_abs", (count - BELL[n] as f64).abs(), 0.0),
            Metric::new("bell_triangle_abs", (bell as f64 - BELL[n] as f64).abs(), 0.0),
            Metric::new("invalid_partitions", if valid { 0.0 } else { 1.0 }, 0.0),
            Metric::new("duplicates", (parts.len() - sorted.len()) as f64, 0.0),
        ],
        vec![format!("n = {n}: {} partitions", parts.len())],
    )
}

/// Closed-form versus series cardinality; thresholded on poisson priors only.
pub fn route_check(scenario: &Scenario, options: CorrectorOptions) -> CheckReport {
    let name = "cardinality-routes";
    let r = match scenario.step(options) {
        Ok(r) => r,
        Err(e) => return CheckReport::failed(name, format!("corrector: {e}")),
    };
    let poisson = scenario.prior.cardinality.is_poisson();
    let metric: fn(f64) -> Metric = if poisson {
        |d| Metric::new("poisson_route_deviation", d, ROUTE_TOL)
    } else {
        |d| Metric::new("finite_prior_route_deviation", d, f64::INFINITY)
    };
    match r.diagnostics.route_deviation {
        Some(d) => CheckReport::new(
            name,
            vec![metric(d)],
            vec![if poisson {
                "poisson prior".into()
            } else {
                "finite prior, deviation reported only".into()
            }],
        ),
        None if poisson => CheckReport::failed(name, "closed form undefined on a poisson prior".into()),
        None => CheckReport::new(
            name,
            Vec::new(),
            vec!["closed form undefined: prior has P(0) = 0".into()],
        ),
    }
}

/// Runs `seeds` consecutive seeds starting at `first_seed`.
pub fn run_suite(suite: &str, first_seed: u64, seeds: u64, options: CorrectorOptions) -> Result<SuiteReport> {
    let seeds = first_seed..first_seed + seeds;
    let entries: Vec<SuiteEntry> = match suite {
        "combinatorics" => (0..BELL.len() as u64)
            .map(|n| SuiteEntry {
                seed: n,
                report: combinatorics_check(n as usize),
            })
            .collect(),
        "identities" => seeds
            .map(|s| SuiteEntry {
                seed: s,
                report: check_identity(&identity_scenario(s), options),
            })
            .collect(),
        "poisson-reduction" => seeds
            .map(|s| SuiteEntry {
                seed: s,
                report: check_poisson_reduction(&poisson_scenario(s), options),
            })
            .collect(),
        "standard-reduction" => seeds
            .map(|s| SuiteEntry {
                seed: s,
                report: check_standard_reduction(&standard_scenario(s), options),
            })
            .collect(),
        "oracle" => seeds
            .map(|s| SuiteEntry {
                seed: s,
                report: check_oracle(&micro_scenario(s), options),
            })
            .collect(),
        "cardinality-routes" => seeds
            .map(|s| {
                let scenario = if s % 2 == 0 {
                    poisson_scenario(s)
                } else {
                    micro_scenario(s)
                };
                SuiteEntry {
                    seed: s,
                    report: route_check(&scenario, options),
                }
            })
            .collect(),
        other => return Err(Error::ModelViolation(format!("unknown suite {other}"))),
    };
    Ok(SuiteReport {
        suite: suite.to_string(),
        passed: entries.iter().all(|e| e.report.passed),
        entries,
    })
}
