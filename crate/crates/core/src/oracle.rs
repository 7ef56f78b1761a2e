//! Exact multi-target Bayes posterior by exhaustive enumeration.
//!
//! Hypotheses are ordered tuples of grid points. The measurement likelihood is
//! enumerated twice, once over ordered decompositions of `Z` into clutter and
//! per-target cells and once over per-measurement origin assignments, and the
//! two are required to agree.

use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorOptions, CorrectorResult, Scenario};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, factorial, relative_deviation, total_variation, CompensatedSum};
use crate::pgf::CardinalityPgf;
use crate::reductions::{normalization_metrics, CheckReport, Metric};
use crate::statespace::{normalize_intensity, IntensityGrid, MeasurementSet, SensorModel, SpatialDensity};

pub const MAX_GRID: usize = 5;
pub const MAX_MEASUREMENTS: usize = 4;
pub const MAX_TARGETS: usize = 4;

pub const INTENSITY_TOL: f64 = 1e-9;
pub const CARDINALITY_TOL: f64 = 1e-10;
/// Agreement required between the two likelihood enumerations.
pub const ENUMERATION_TOL: f64 = 1e-12;

/// An ordered tuple of grid points with its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleState {
    pub points: Vec<usize>,
    pub weight: f64,
}

/// Every tuple of length `0..=n_max` in lexicographic order, weighted by
/// `P(n) prod p(x_i) w(x_i)`.
pub fn tuple_prior(card: &CardinalityPgf, p: &SpatialDensity, n_max: usize) -> Result<Vec<TupleState>> {
    if n_max > MAX_TARGETS {
        return Err(Error::ScaleCap(format!(
            "{n_max} targets exceed the oracle limit {MAX_TARGETS}"
        )));
    }
    match card.max_support() {
        Some(m) if m <= n_max => {}
        _ => {
            return Err(Error::ScaleCap(format!(
                "prior cardinality support does not fit in {n_max} targets"
            )))
        }
    }
    let mass: Vec<f64> = p.values().iter().zip(p.weights()).map(|(v, w)| v * w).collect();
    let g = p.len();
    let mut out = Vec::new();
    for n in 0..=n_max {
        let pn = card.prob(n);
        for code in 0..g.pow(n as u32) {
            // base-g digits, first position most significant
            let points: Vec<usize> = (0..n).map(|i| code / g.pow((n - 1 - i) as u32) % g).collect();
            let weight = pn * points.iter().map(|&x| mass[x]).product::<f64>();
            out.push(TupleState { points, weight });
        }
    }
    Ok(out)
}

/// Cell factors of the likelihood for one measurement set and one tuple.
struct CellFactors<'a> {
    z: &'a MeasurementSet,
    sensor: &'a SensorModel,
}

impl CellFactors<'_> {
    fn labels(mask: u32) -> impl Iterator<Item = usize> {
        (0..32).filter(move |l| mask & (1 << l) != 0)
    }

    /// `f_FA(W) = |W|! P_FA(|W|) prod p_FA(z)`.
    fn clutter(&self, mask: u32) -> Result<f64> {
        let k = mask.count_ones() as usize;
        let mut v = factorial(k) * self.sensor.clutter_cardinality.prob(k);
        for l in Self::labels(mask) {
            v *= self.sensor.kernel.clutter_density(self.z.value(l))?;
        }
        Ok(v)
    }

    /// `l(W | x)`: missed or empty-return probability for `W` empty, else
    /// `p_D |W|! P_z(|W|) prod p_z(z | x)`.
    fn target(&self, mask: u32, x: usize) -> Result<f64> {
        let pd = self.sensor.p_d[x];
        let g = &self.sensor.measurement_cardinality[x];
        if mask == 0 {
            return Ok(1.0 - pd + pd * g.prob(0));
        }
        let k = mask.count_ones() as usize;
        let mut v = pd * factorial(k) * g.prob(k);
        for l in Self::labels(mask) {
            v *= self.sensor.kernel.likelihood(self.z.value(l), x)?;
        }
        Ok(v)
    }
}

/// Unordered set partitions of `{0..n-1}` as lists of bitmask blocks.
fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut blocks: Vec<u32> = Vec::new();
    fn place(l: usize, n: usize, blocks: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if l == n {
            out.push(blocks.clone());
            return;
        }
        for i in 0..blocks.len() {
            blocks[i] |= 1 << l;
            place(l + 1, n, blocks, out);
            blocks[i] &= !(1 << l);
        }
        blocks.push(1 << l);
        place(l + 1, n, blocks, out);
        blocks.pop();
    }
    place(0, n, &mut blocks, &mut out);
    out
}

/// Injective maps from `k` blocks into `m` slots.
fn injections(k: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut used = vec![false; m];
    let mut current = Vec::with_capacity(k);
    fn extend(k: usize, used: &mut [bool], current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for s in 0..used.len() {
            if !used[s] {
                used[s] = true;
                current.push(s);
                extend(k, used, current, out);
                current.pop();
                used[s] = false;
            }
        }
    }
    extend(k, &mut used, &mut current, &mut out);
    out
}

/// `f(Z | X)` summed over ordered decompositions `Z = Z_0 + Z_1 + ... + Z_n`:
/// a set partition of `Z` together with an injective labeling of its blocks by
/// clutter (slot 0) and targets (slots 1..=n); unlabeled slots get empty cells.
pub fn multi_target_likelihood(z: &MeasurementSet, tuple: &[usize], sensor: &SensorModel) -> Result<f64> {
    let f = CellFactors { z, sensor };
    let slots = tuple.len() + 1;
    let mut acc = CompensatedSum::new();
    for blocks in set_partitions(z.len()) {
        if blocks.len() > slots {
            continue;
        }
        for labeling in injections(blocks.len(), slots) {
            let mut cells = vec![0u32; slots];
            for (b, &s) in blocks.iter().zip(&labeling) {
                cells[s] = *b;
            }
            let mut v = f.clutter(cells[0])?;
            for (i, &x) in tuple.iter().enumerate() {
                v *= f.target(cells[i + 1], x)?;
            }
            acc.add(v);
        }
    }
    Ok(acc.total())
}

/// `f(Z | X)` summed over origin assignments `Z -> {clutter, target 1..n}`.
pub fn assignment_likelihood(z: &MeasurementSet, tuple: &[usize], sensor: &SensorModel) -> Result<f64> {
    let f = CellFactors { z, sensor };
    let slots = tuple.len() + 1;
    let total = slots.pow(z.len() as u32);
    let mut acc = CompensatedSum::new();
    for code in 0..total {
        let mut cells = vec![0u32; slots];
        let mut c = code;
        for l in 0..z.len() {
            cells[c % slots] |= 1 << l;
            c /= slots;
        }
        let mut v = f.clutter(cells[0])?;
        for (i, &x) in tuple.iter().enumerate() {
            v *= f.target(cells[i + 1], x)?;
        }
        acc.add(v);
    }
    Ok(acc.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior {
    pub cardinality: Vec<f64>,
    pub intensity: IntensityGrid,
    /// Largest relative disagreement between the two likelihood enumerations.
    pub enumeration_gap: f64,
}

/// Exact posterior cardinality and intensity for a micro-scenario.
pub fn exact_posterior(scenario: &Scenario) -> Result<ExactPosterior> {
    let grid = &scenario.grid;
    let z = &scenario.measurements;
    let sensor = &scenario.sensor;
    if grid.len() > MAX_GRID {
        return Err(Error::ScaleCap(format!("{} grid points exceed {MAX_GRID}", grid.len())));
    }
    if z.len() > MAX_MEASUREMENTS {
        return Err(Error::ScaleCap(format!(
            "{} measurements exceed {MAX_MEASUREMENTS}",
            z.len()
        )));
    }
    if !sensor.kernel.is_discrete() {
        return Err(Error::ScaleCap("oracle needs a discrete measurement space".into()));
    }
    let n_max = scenario
        .prior
        .cardinality
        .max_support()
        .ok_or_else(|| Error::ScaleCap("oracle needs a finite-support prior cardinality".into()))?;
    let p = if n_max == 0 {
        // no target tuples, so any density will do
        let volume: f64 = grid.weights().iter().sum();
        SpatialDensity::new(vec![1.0 / volume; grid.len()], grid)?
    } else {
        normalize_intensity(&scenario.prior.intensity, grid)?.1
    };
    let tuples = tuple_prior(&scenario.prior.cardinality, &p, n_max)?;

    let mut gap: f64 = 0.0;
    let mut weights = Vec::with_capacity(tuples.len());
    for t in &tuples {
        let a = multi_target_likelihood(z, &t.points, sensor)?;
        let b = assignment_likelihood(z, &t.points, sensor)?;
        gap = gap.max(relative_deviation(a, b));
        weights.push(t.weight * a);
    }
    let total = compensated_sum(weights.iter().copied());
    if !(total > 0.0) {
        return Err(Error::DegenerateUpdate(format!(
            "measurement set has likelihood {total:e}"
        )));
    }

    let mut card = vec![CompensatedSum::new(); n_max + 1];
    let mut counts = vec![CompensatedSum::new(); grid.len()];
    for (t, w) in tuples.iter().zip(&weights) {
        let w = w / total;
        card[t.points.len()].add(w);
        for &x in &t.points {
            counts[x].add(w);
        }
    }
    let intensity = counts.iter().zip(grid.weights()).map(|(c, w)| c.total() / w).collect();
    Ok(ExactPosterior {
        cardinality: card.iter().map(|c| c.total()).collect(),
        intensity: IntensityGrid::new(intensity)?,
        enumeration_gap: gap,
    })
}

/// Deviations of a corrector result from the exact posterior.
pub fn compare_to_corrector(exact: &ExactPosterior, result: &CorrectorResult) -> CheckReport {
    let intensity_error = exact
        .intensity
        .values()
        .iter()
        .zip(result.intensity.values())
        .map(|(&a, &b)| relative_deviation(a, b))
        .fold(0.0, f64::max);
    let mean = |c: &[f64]| compensated_sum(c.iter().enumerate().map(|(n, p)| n as f64 * p));
    let moment_gap = (mean(&exact.cardinality) - mean(&result.cardinality)).abs();
    let mut report = CheckReport::new(
        "oracle",
        vec![
            Metric::new("intensity_max_rel_error", intensity_error, INTENSITY_TOL),
            Metric::new(
                "cardinality_total_variation",
                total_variation(&exact.cardinality, &result.cardinality),
                CARDINALITY_TOL,
            ),
            Metric::new("enumeration_gap", exact.enumeration_gap, ENUMERATION_TOL),
        ],
        Vec::new(),
    );
    report.notes.push(format!("first-moment gap {moment_gap:e}"));
    report
}

/// Corrector versus the exact posterior. Scenarios outside either
/// enumeration limit produce a skipped report.
pub fn check_oracle(scenario: &Scenario, options: CorrectorOptions) -> CheckReport {
    let result = match scenario.step(options) {
        Ok(r) => r,
        Err(e @ Error::SizeLimit { .. }) => return CheckReport::skipped("oracle", format!("corrector: {e}")),
        Err(e) => return CheckReport::failed("oracle", format!("corrector: {e}")),
    };
    match exact_posterior(scenario) {
        Ok(exact) => compare_to_corrector(&exact, &result).with_metrics(normalization_metrics(&result)),
        Err(e @ Error::ScaleCap(_)) => CheckReport::skipped("oracle", format!("oracle: {e}")),
        Err(e) => CheckReport::failed("oracle", format!("oracle: {e}")),
    }
}
