//! Discrete weighted state grids, intensities and the sensor model.

use serde::{Deserialize, Serialize};

use crate::combinatorics::LabelSet;
use crate::error::{Error, Result};
use crate::pgf::CardinalityPgf;

/// Mass tolerance for densities and tabulated kernels.
pub const DENSITY_TOL: f64 = 1e-12;

/// Finite state space: one quadrature weight (state-space volume) per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    ids: Vec<String>,
    weights: Vec<f64>,
}

impl StateGrid {
    pub fn new(ids: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        let mut violations = Vec::new();
        if ids.len() != weights.len() {
            violations.push(format!("{} point ids but {} weights", ids.len(), weights.len()));
        }
        if weights.is_empty() {
            violations.push("grid has no points".to_string());
        }
        for (i, w) in weights.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                violations.push(format!("grid.weights[{i}] = {w} must be positive"));
            }
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            violations.push("grid point ids are not unique".to_string());
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(StateGrid { ids, weights })
    }

    /// Grid with ids `x0, x1, ...`.
    pub fn with_weights(weights: Vec<f64>) -> Result<Self> {
        let ids = (0..weights.len()).map(|i| format!("x{i}")).collect();
        Self::new(ids, weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_x f(x) w(x)`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        crate::numeric::compensated_sum(values.iter().zip(&self.weights).map(|(v, w)| v * w))
    }
}

/// Intensity (PHD) values per grid point, in targets per unit volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntensityGrid {
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite { point: i, value: *v });
        }
        Ok(IntensityGrid { values })
    }

    /// Skips the nonnegativity check; used for corrector output that is
    /// cleaned separately.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        IntensityGrid { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self, grid: &StateGrid) -> f64 {
        grid.integrate(&self.values)
    }
}

/// Probability density over the grid (integrates to one against the weights).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDensity {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl SpatialDensity {
    pub fn new(values: Vec<f64>, grid: &StateGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "density has {} values for a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite { point: i, value: *v });
        }
        let mass = grid.integrate(&values);
        if (mass - 1.0).abs() > DENSITY_TOL {
            return Err(Error::DegeneratePrior(format!("density integrates to {mass}, not 1")));
        }
        Ok(SpatialDensity {
            values,
            weights: grid.weights().to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `p[f] = sum_x p(x) f(x) w(x)`.
    pub fn bracket<F: Fn(usize) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = crate::numeric::CompensatedSum::new();
        for (x, (p, w)) in self.values.iter().zip(&self.weights).enumerate() {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite { point: x, value: v });
            }
            acc.add(p * v * w);
        }
        Ok(acc.total())
    }
}

/// Splits an intensity into its mass `N` and the spatial density `D / N`.
pub fn normalize_intensity(intensity: &IntensityGrid, grid: &StateGrid) -> Result<(f64, SpatialDensity)> {
    if intensity.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "intensity has {} values for a {}-point grid",
            intensity.len(),
            grid.len()
        )));
    }
    let mass = intensity.mass(grid);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegeneratePrior(format!(
            "intensity mass {mass} must be positive"
        )));
    }
    let values: Vec<f64> = intensity.values().iter().map(|d| d / mass).collect();
    // renormalization above is exact up to rounding; skip the tolerance check
    Ok((
        mass,
        SpatialDensity {
            values,
            weights: grid.weights().to_vec(),
        },
    ))
}

/// How measurement values are scored against target states and clutter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKernel {
    /// Discrete measurement space `{0, ..., M-1}`; `likelihood[x][z]` is
    /// `p_z(z | x)` and `clutter_density[z]` is `p_FA(z)`.
    Tabulated {
        likelihood: Vec<Vec<f64>>,
        clutter_density: Vec<f64>,
    },
    /// Scalar measurements: Gaussian around a per-point position, clutter
    /// uniform on `clutter_range`.
    Gaussian {
        positions: Vec<f64>,
        sigma: f64,
        clutter_range: (f64, f64),
    },
}

impl MeasurementKernel {
    pub fn is_discrete(&self) -> bool {
        matches!(self, MeasurementKernel::Tabulated { .. })
    }

    /// Size of the discrete measurement space.
    pub fn measurement_space_size(&self) -> Option<usize> {
        match self {
            MeasurementKernel::Tabulated { clutter_density, .. } => Some(clutter_density.len()),
            MeasurementKernel::Gaussian { .. } => None,
        }
    }

    fn index(&self, z: f64) -> Result<usize> {
        let m = self.measurement_space_size().unwrap_or(0);
        if z.fract() != 0.0 || z < 0.0 || z >= m as f64 {
            return Err(Error::ModelViolation(format!(
                "measurement value {z} is not an index into a {m}-value measurement space"
            )));
        }
        Ok(z as usize)
    }

    /// `p_z(z | x)`.
    pub fn likelihood(&self, z: f64, point: usize) -> Result<f64> {
        match self {
            MeasurementKernel::Tabulated { likelihood, .. } => Ok(likelihood[point][self.index(z)?]),
            MeasurementKernel::Gaussian { positions, sigma, .. } => {
                let r = (z - positions[point]) / sigma;
                Ok((-0.5 * r * r).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
            }
        }
    }

    /// `p_FA(z)`.
    pub fn clutter_density(&self, z: f64) -> Result<f64> {
        match self {
            MeasurementKernel::Tabulated { clutter_density, .. } => Ok(clutter_density[self.index(z)?]),
            MeasurementKernel::Gaussian {
                clutter_range: (lo, hi),
                ..
            } => Ok(if z >= *lo && z <= *hi { 1.0 / (hi - lo) } else { 0.0 }),
        }
    }
}

/// Detection, clutter and per-target measurement models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub p_d: Vec<f64>,
    pub clutter_cardinality: CardinalityPgf,
    pub measurement_cardinality: Vec<CardinalityPgf>,
    pub kernel: MeasurementKernel,
}

impl SensorModel {
    pub fn new(
        p_d: Vec<f64>,
        clutter_cardinality: CardinalityPgf,
        measurement_cardinality: Vec<CardinalityPgf>,
        kernel: MeasurementKernel,
    ) -> Result<Self> {
        let m = SensorModel {
            p_d,
            clutter_cardinality,
            measurement_cardinality,
            kernel,
        };
        let violations = m.violations("sensor");
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn grid_len(&self) -> usize {
        self.p_d.len()
    }

    /// Every invariant violation, with field paths rooted at `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.p_d.len();
        for (i, p) in self.p_d.iter().enumerate() {
            if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                out.push(format!("{prefix}.p_d[{i}] = {p} is not in [0, 1]"));
            }
        }
        if let Err(e) = self.clutter_cardinality.validate() {
            out.push(format!("{prefix}.clutter_cardinality: {e}"));
        }
        if self.measurement_cardinality.len() != n {
            out.push(format!(
                "{prefix}.measurement_cardinality has {} entries for {n} grid points",
                self.measurement_cardinality.len()
            ));
        }
        for (i, g) in self.measurement_cardinality.iter().enumerate() {
            if let Err(e) = g.validate() {
                out.push(format!("{prefix}.measurement_cardinality[{i}]: {e}"));
            }
        }
        match &self.kernel {
            MeasurementKernel::Tabulated {
                likelihood,
                clutter_density,
            } => {
                let path = format!("{prefix}.kernel.tabulated");
                let m = clutter_density.len();
                if m == 0 {
                    out.push(format!("{path}.clutter_density is empty"));
                }
                check_pmf(clutter_density, &format!("{path}.clutter_density"), &mut out);
                if likelihood.len() != n {
                    out.push(format!(
                        "{path}.likelihood has {} rows for {n} grid points",
                        likelihood.len()
                    ));
                }
                for (x, row) in likelihood.iter().enumerate() {
                    let row_path = format!("{path}.likelihood[{x}]");
                    if row.len() != m {
                        out.push(format!("{row_path} has {} entries, expected {m}", row.len()));
                    }
                    check_pmf(row, &row_path, &mut out);
                }
            }
            MeasurementKernel::Gaussian {
                positions,
                sigma,
                clutter_range,
            } => {
                let path = format!("{prefix}.kernel.gaussian");
                if positions.len() != n {
                    out.push(format!(
                        "{path}.positions has {} entries for {n} grid points",
                        positions.len()
                    ));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    out.push(format!("{path}.sigma = {sigma} must be positive"));
                }
                if !(clutter_range.0 < clutter_range.1) {
                    out.push(format!("{path}.clutter_range must satisfy lo < hi"));
                }
            }
        }
        out
    }

    /// `1 - p_D(x) + p_D(x) G_Z(0 | x)`, the probability a target at `x`
    /// yields no measurement.
    pub fn no_measurement_prob(&self, point: usize) -> f64 {
        let pd = self.p_d[point];
        1.0 - pd + pd * self.measurement_cardinality[point].eval(0.0)
    }

    /// `p_z(z | x) / p_FA(z)`.
    pub fn likelihood_ratio(&self, z: f64, point: usize) -> Result<f64> {
        let fa = self.kernel.clutter_density(z)?;
        if !(fa > 0.0) {
            return Err(Error::ModelViolation(format!(
                "clutter density vanishes at observed measurement {z}"
            )));
        }
        Ok(self.kernel.likelihood(z, point)? / fa)
    }
}

fn check_pmf(values: &[f64], path: &str, out: &mut Vec<String>) {
    for (i, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0) {
            out.push(format!("{path}[{i}] = {v} must be nonnegative"));
        }
    }
    let total: f64 = values.iter().sum();
    if !values.is_empty() && (total - 1.0).abs() > DENSITY_TOL {
        out.push(format!("{path} sums to {total}, not 1"));
    }
}

/// Measurement values of one scan; label `i` is the i-th entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementSet {
    values: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(values: Vec<f64>) -> Self {
        MeasurementSet { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn labels(&self) -> LabelSet {
        LabelSet::first(self.values.len())
    }

    pub fn value(&self, label: usize) -> f64 {
        self.values[label]
    }

    /// Same values with labels permuted: new label `i` carries old label `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        MeasurementSet {
            values: order.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// `phi = p[1 - p_D + p_D G_Z(0)]`.
pub fn missed_detection_mass(p: &SpatialDensity, sensor: &SensorModel) -> Result<f64> {
    p.bracket(|x| sensor.no_measurement_prob(x))
}

/// `prod_{z in V} p_z(z | x) / p_FA(z)`.
pub fn likelihood_ratio_product(cell: LabelSet, point: usize, z: &MeasurementSet, sensor: &SensorModel) -> Result<f64> {
    if !cell.is_subset_of(z.labels()) {
        return Err(Error::Dimension(format!(
            "cell {cell} is not a subset of the measurement labels"
        )));
    }
    cell.iter()
        .try_fold(1.0, |acc, l| Ok(acc * sensor.likelihood_ratio(z.value(l), point)?))
}

/// Likelihood ratios `r[x][label]` for every grid point and measurement.
pub fn ratio_table(z: &MeasurementSet, sensor: &SensorModel) -> Result<Vec<Vec<f64>>> {
    (0..sensor.grid_len())
        .map(|x| z.values().iter().map(|&v| sensor.likelihood_ratio(v, x)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: &[f64]) -> StateGrid {
        StateGrid::with_weights(w.to_vec()).unwrap()
    }

    fn sensor(p_d: Vec<f64>, meas: CardinalityPgf) -> SensorModel {
        let n = p_d.len();
        SensorModel::new(
            p_d,
            CardinalityPgf::poisson(1.0).unwrap(),
            vec![meas; n],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![0.5, 0.25, 0.25]; n],
                clutter_density: vec![0.25, 0.25, 0.5],
            },
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let g = grid(&[0.5, 0.5]);
        let (n, p) = normalize_intensity(&IntensityGrid::new(vec![2.0, 2.0]).unwrap(), &g).unwrap();
        assert_eq!(n, 2.0);
        assert_eq!(p.values(), &[1.0, 1.0]);

        let g = grid(&[1.0, 1.0]);
        let (n, p) = normalize_intensity(&IntensityGrid::new(vec![3.0, 1.0]).unwrap(), &g).unwrap();
        assert_eq!(n, 4.0);
        assert_eq!(p.values(), &[0.75, 0.25]);

        let err = normalize_intensity(&IntensityGrid::new(vec![0.0, 0.0]).unwrap(), &g).unwrap_err();
        assert!(matches!(err, Error::DegeneratePrior(_)));
    }

    #[test]
    fn bracket_examples() {
        let g = grid(&[1.0, 2.0, 0.5]);
        let p = SpatialDensity::new(vec![0.2, 0.3, 0.4], &g).unwrap();
        assert!((p.bracket(|_| 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((p.bracket(|_| 3.5).unwrap() - 3.5).abs() < 1e-14);
        assert_eq!(p.bracket(|x| if x == 1 { 1.0 } else { 0.0 }).unwrap(), 0.3 * 2.0);
        assert_eq!(
            p.bracket(|x| if x == 2 { f64::NAN } else { 0.0 })
                .unwrap_err()
                .to_string(),
            "non-finite value NaN at grid point 2"
        );
    }

    #[test]
    fn phi_examples() {
        let g = grid(&[1.0, 1.0]);
        let p = SpatialDensity::new(vec![0.5, 0.5], &g).unwrap();
        let s = sensor(vec![0.0, 0.0], CardinalityPgf::poisson(1.0).unwrap());
        assert_eq!(missed_detection_mass(&p, &s).unwrap(), 1.0);
        let s = sensor(vec![1.0, 1.0], CardinalityPgf::finite(vec![0.0, 1.0]).unwrap());
        assert_eq!(missed_detection_mass(&p, &s).unwrap(), 0.0);
        let s = sensor(vec![1.0, 1.0], CardinalityPgf::poisson(1.0).unwrap());
        assert!((missed_detection_mass(&p, &s).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn ratio_product_examples() {
        let s = sensor(vec![0.5], CardinalityPgf::poisson(1.0).unwrap());
        let z = MeasurementSet::new(vec![0.0, 2.0, 1.0]);
        assert_eq!(likelihood_ratio_product(LabelSet::EMPTY, 0, &z, &s).unwrap(), 1.0);
        // value 1: p_z = 0.25 = p_FA
        assert_eq!(
            likelihood_ratio_product(LabelSet::singleton(2), 0, &z, &s).unwrap(),
            1.0
        );
        // values 0 and 2: (0.5/0.25) * (0.25/0.5)
        let v = LabelSet::from_labels([0, 1]).unwrap();
        assert_eq!(likelihood_ratio_product(v, 0, &z, &s).unwrap(), 2.0 * 0.5);
    }

    #[test]
    fn zero_clutter_density_is_a_model_violation() {
        let s = SensorModel::new(
            vec![0.5],
            CardinalityPgf::poisson(1.0).unwrap(),
            vec![CardinalityPgf::poisson(1.0).unwrap()],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![0.5, 0.5]],
                clutter_density: vec![1.0, 0.0],
            },
        )
        .unwrap();
        let z = MeasurementSet::new(vec![1.0]);
        assert!(matches!(
            likelihood_ratio_product(LabelSet::singleton(0), 0, &z, &s),
            Err(Error::ModelViolation(_))
        ));
    }

    #[test]
    fn sensor_validation_lists_every_violation() {
        let err = SensorModel::new(
            vec![0.5, -0.1, 1.2],
            CardinalityPgf::poisson(1.0).unwrap(),
            vec![CardinalityPgf::poisson(1.0).unwrap(); 3],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.6, 0.5]],
                clutter_density: vec![0.5, 0.5],
            },
        )
        .unwrap_err();
        let Error::Validation(v) = err else { panic!() };
        assert_eq!(v.len(), 3);
        assert!(v[0].starts_with("sensor.p_d[1]"));
        assert!(v[1].starts_with("sensor.p_d[2]"));
        assert!(v[2].contains("likelihood[2]"));
    }

    #[test]
    fn grid_rejects_bad_weights() {
        assert!(StateGrid::with_weights(vec![1.0, 0.0]).is_err());
        assert!(StateGrid::new(vec!["a".into(), "a".into()], vec![1.0, 1.0]).is_err());
    }
}
