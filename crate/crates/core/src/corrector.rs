//! Extended-target CPHD corrector.
//!
//! Given a predicted intensity `D`, a predicted cardinality p.g.f. `G` and a
//! measurement set `Z`, the corrector forms the coefficients
//!
//! * `eta_V   = p[ p_D G_Z^(|V|)(0) prod_{z in V} p_z(z)/p_FA(z) ]`
//! * `alpha_Q = prod_{V in Q} eta_V`
//! * `beta_W  = zeta_FA^(|W|)(0) + sum_{Q of W} zeta^(|Q|)(phi) alpha_Q`
//! * `omega_P = prod_{W in P} beta_W / sum_P prod_{W in P} beta_W`
//! * `kappa   = sum_P omega_P sum_{W in P} beta_W^-1 sum_{Q of W} alpha_Q zeta^(|Q|+1)(phi)`
//!
//! with `phi = p[1 - p_D + p_D G_Z(0)]`, and from them the posterior intensity
//! and the posterior cardinality distribution.
//!
//! Quotients `alpha_Q / eta_V` and `omega_P / beta_W` are evaluated as
//! leave-one-out products, so vanishing `eta` or `beta` values never divide.
//!
//! Every sum over partitions is reduced serially in canonical order with
//! compensated summation; only independent per-partition and per-cell work
//! runs in parallel, so results do not depend on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{subpartitions_of, EnumerationCap, LabelSet, Partition, PartitionTable};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, factorial, falling_factorial, CompensatedSum};
use crate::pgf::{series, CardinalityPgf, MAX_ORDER};
use crate::statespace::{
    missed_detection_mass, normalize_intensity, ratio_table, IntensityGrid, MeasurementSet, SensorModel,
    SpatialDensity, StateGrid,
};

/// Products larger than this are reported instead of saturating.
pub const OVERFLOW_LIMIT: f64 = 1e300;
/// Normalizers smaller than this in magnitude make the update degenerate.
pub const DEGENERATE_LIMIT: f64 = 1e-300;
/// Negative posterior intensities above this are rounding noise and get zeroed.
pub const NEGATIVE_INTENSITY_TOL: f64 = -1e-9;

/// Predicted multi-target state: intensity and cardinality distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub intensity: IntensityGrid,
    pub cardinality: CardinalityPgf,
}

/// Everything one corrector step consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: StateGrid,
    pub prior: Prior,
    pub sensor: SensorModel,
    pub measurements: MeasurementSet,
}

impl Scenario {
    pub fn step(&self, options: CorrectorOptions) -> Result<CorrectorResult> {
        corrector_step(&self.grid, &self.prior, &self.measurements, &self.sensor, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorOptions {
    pub cap: EnumerationCap,
    /// Truncation order of the posterior cardinality for Poisson priors;
    /// finite priors always use their own support.
    pub poisson_truncation: usize,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions {
            cap: EnumerationCap::default(),
            poisson_truncation: MAX_ORDER - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub cell: LabelSet,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionValue {
    pub partition: Partition,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub cell: LabelSet,
    pub subpartition: Partition,
    pub value: f64,
}

/// Every scalar coefficient of one corrector step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    /// `phi`, the prior-expected probability that a target yields no measurement.
    pub phi: f64,
    /// Mass of the predicted intensity.
    pub prior_mass: f64,
    /// `eta_V[0,1]` per non-empty cell, ordered by cell bitmask.
    pub eta: Vec<CellValue>,
    /// `alpha_Q` for every sub-partition `Q` of every cell.
    pub alpha: Vec<AlphaEntry>,
    /// `beta_W` per non-empty cell, same order as `eta`.
    pub beta: Vec<CellValue>,
    /// `omega_P` per partition of `Z`, canonical order.
    pub omega: Vec<PartitionValue>,
    /// `sum_P prod_{W in P} beta_W`, the normalizer of `omega`.
    pub partition_sum: f64,
    pub kappa: f64,
    /// `zeta^(i)(phi)` of the predicted cardinality, `i = 1..=|Z|+1`.
    pub zeta_prior: Vec<f64>,
    /// `zeta_FA^(i)(0)` of the clutter cardinality, `i = 1..=|Z|`.
    pub zeta_fa0: Vec<f64>,
}

impl CoefficientTable {
    pub fn eta_of(&self, cell: LabelSet) -> f64 {
        self.eta[cell.bits() as usize - 1].value
    }

    pub fn beta_of(&self, cell: LabelSet) -> f64 {
        self.beta[cell.bits() as usize - 1].value
    }

    /// `zeta^(i)(phi)` for `i >= 1`.
    pub fn zeta_prior_at(&self, i: usize) -> f64 {
        self.zeta_prior[i - 1]
    }

    /// `zeta_FA^(i)(0)` for `i >= 1`.
    pub fn zeta_fa_at(&self, i: usize) -> f64 {
        self.zeta_fa0[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mean_from_intensity: f64,
    pub mean_from_cardinality: f64,
    pub partition_count: usize,
    pub subpartition_count: usize,
    pub omega_sum: f64,
    pub cardinality_sum: f64,
    /// Largest `|P_jet(n) - P_closed_form(n)|`, when the closed form is defined.
    pub route_deviation: Option<f64>,
    pub negatives_zeroed: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorResult {
    pub intensity: IntensityGrid,
    /// `P(n)` for `n = 0..`, from series differentiation of the posterior p.g.f.
    pub cardinality: Vec<f64>,
    /// Same quantity from the closed-form derivative expansion; `None` when
    /// the predicted cardinality has `P(0) = 0` and the expansion is undefined.
    pub cardinality_closed_form: Option<Vec<f64>>,
    pub coefficients: CoefficientTable,
    pub diagnostics: Diagnostics,
}

/// `eta_V[0,1]` evaluated directly from the model.
pub fn eta(cell: LabelSet, p: &SpatialDensity, z: &MeasurementSet, sensor: &SensorModel) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::OutOfRange {
            what: "cell size",
            value: 0,
            min: 1,
            max: z.len(),
        });
    }
    let k = cell.len();
    let rho = (0..p.len())
        .map(|x| {
            let ratio = crate::statespace::likelihood_ratio_product(cell, x, z, sensor)?;
            Ok(sensor.p_d[x] * sensor.measurement_cardinality[x].derivative_at_zero(k) * ratio)
        })
        .collect::<Result<Vec<f64>>>()?;
    p.bracket(|x| rho[x])
}

/// `alpha_Q = prod_{V in Q} eta_V`.
pub fn alpha(q: &Partition, table: &CoefficientTable) -> f64 {
    q.cells().iter().map(|&v| table.eta_of(v)).product()
}

/// `beta_W`, re-evaluated from the table's `eta` and `zeta` entries.
pub fn beta(cell: LabelSet, table: &CoefficientTable) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    acc.add(table.zeta_fa_at(cell.len()));
    for q in subpartitions_of(cell)? {
        acc.add(table.zeta_prior_at(q.len()) * alpha(&q, table));
    }
    Ok(acc.total())
}

/// Normalized partition weights from per-cell `beta` values.
pub fn omega_weights<F: Fn(LabelSet) -> f64>(partitions: &[Partition], beta: F) -> Result<Vec<f64>> {
    let products: Vec<f64> = partitions
        .iter()
        .map(|p| p.cells().iter().map(|&w| beta(w)).product())
        .collect();
    let total = compensated_sum(products.iter().copied());
    if !(total.abs() >= DEGENERATE_LIMIT) {
        return Err(Error::DegenerateUpdate(format!(
            "partition weights sum to {total:e}; every partition is numerically impossible"
        )));
    }
    Ok(products.into_iter().map(|v| v / total).collect())
}

/// `kappa` evaluated literally as `sum_P omega_P sum_W beta_W^-1 sum_Q alpha_Q zeta^(|Q|+1)`.
///
/// Fails when a cell with `beta_W = 0` belongs to a partition of nonzero weight.
pub fn kappa(table: &CoefficientTable) -> Result<f64> {
    let mut outer = CompensatedSum::new();
    for pv in &table.omega {
        let mut inner = CompensatedSum::new();
        for &w in pv.partition.cells() {
            let b = table.beta_of(w);
            let s = compensated_sum(
                subpartitions_of(w)?
                    .iter()
                    .map(|q| alpha(q, table) * table.zeta_prior_at(q.len() + 1)),
            );
            if b == 0.0 {
                if pv.value != 0.0 && s != 0.0 {
                    return Err(Error::DegenerateUpdate(format!("beta vanishes on cell {w}")));
                }
                continue;
            }
            inner.add(s / b);
        }
        outer.add(pv.value * inner.total());
    }
    Ok(outer.total())
}

/// Per-cell results of the sub-partition pass.
struct CellTerms {
    beta: f64,
    /// `sum_{Q of W, |Q| = q} alpha_Q`, indexed by `q` (entry 0 unused).
    alpha_by_size: Vec<f64>,
    /// `sum_Q alpha_Q zeta^(|Q|+1)(phi)`.
    kappa_inner: f64,
    /// For each `V` occurring in a sub-partition of `W`:
    /// `sum_{Q of W, V in Q} zeta^(|Q|)(phi) prod_{V' in Q, V' != V} eta_V'`.
    loo: Vec<(LabelSet, f64)>,
    alpha: Vec<(Partition, f64)>,
}

/// All coefficients of a step, plus the per-point quantities the updates need.
struct Assembly<'a> {
    prior: &'a Prior,
    density: SpatialDensity,
    table_z: PartitionTable,
    /// `1 - p_D + p_D G_Z(0)` per grid point.
    no_detection: Vec<f64>,
    /// `rho_V(x) = p_D(x) G_Z^(|V|)(0|x) prod_{z in V} ratio(z, x)`, indexed by cell bitmask.
    rho: Vec<Vec<f64>>,
    cells: Vec<CellTerms>,
    /// `sum_{P containing W} omega_P / beta_W`, by cell bitmask - 1.
    omega_over_beta: Vec<f64>,
    coefficients: CoefficientTable,
    options: CorrectorOptions,
}

fn check_overflow(v: f64, what: &str) -> Result<f64> {
    if !(v.abs() <= OVERFLOW_LIMIT) {
        return Err(Error::Overflow(format!("{what} = {v:e} exceeds {OVERFLOW_LIMIT:e}")));
    }
    Ok(v)
}

fn zetas(g: &CardinalityPgf, x0: f64, max: usize) -> Result<Vec<f64>> {
    if max == 0 {
        return Ok(Vec::new());
    }
    g.zetas_at(x0, max)
}

impl<'a> Assembly<'a> {
    fn build(
        grid: &StateGrid,
        prior: &'a Prior,
        z: &MeasurementSet,
        sensor: &SensorModel,
        options: CorrectorOptions,
    ) -> Result<Self> {
        if prior.intensity.len() != grid.len() || sensor.grid_len() != grid.len() {
            return Err(Error::Dimension(format!(
                "grid has {} points, prior intensity {}, sensor {}",
                grid.len(),
                prior.intensity.len(),
                sensor.grid_len()
            )));
        }
        let nz = z.len();
        let table_z = PartitionTable::new(nz, options.cap)?;
        let (prior_mass, density) = normalize_intensity(&prior.intensity, grid)?;
        let phi = missed_detection_mass(&density, sensor)?;
        let no_detection: Vec<f64> = (0..grid.len()).map(|x| sensor.no_measurement_prob(x)).collect();

        let zeta_prior = zetas(&prior.cardinality, phi, nz + 1)?;
        let zeta_fa0 = zetas(&sensor.clutter_cardinality, 0.0, nz)?;

        // rho_V for every cell, building ratio products from the cell minus its lowest label
        let ratios = ratio_table(z, sensor)?;
        let ncells = 1usize << nz;
        let mut ratio_products = vec![vec![1.0; grid.len()]; ncells];
        for bits in 1..ncells {
            let low = bits.trailing_zeros() as usize;
            let rest = bits & (bits - 1);
            ratio_products[bits] = (0..grid.len())
                .map(|x| ratio_products[rest][x] * ratios[x][low])
                .collect();
        }
        let derivs: Vec<Vec<f64>> = (0..=nz)
            .map(|k| {
                sensor
                    .measurement_cardinality
                    .iter()
                    .map(|g| g.derivative_at_zero(k))
                    .collect()
            })
            .collect();
        let mut rho = vec![Vec::new(); ncells];
        for (bits, slot) in rho.iter_mut().enumerate().skip(1) {
            let k = bits.count_ones() as usize;
            *slot = (0..grid.len())
                .map(|x| sensor.p_d[x] * derivs[k][x] * ratio_products[bits][x])
                .collect();
        }
        let eta_values: Vec<f64> = table_z
            .cells()
            .map(|c| density.bracket(|x| rho[c.bits() as usize][x]))
            .collect::<Result<_>>()?;
        let eta_of = |c: LabelSet| eta_values[c.bits() as usize - 1];

        let cell_list: Vec<LabelSet> = table_z.cells().collect();
        let cells: Vec<CellTerms> = cell_list
            .par_iter()
            .map(|&w| {
                let size = w.len();
                let mut beta = CompensatedSum::new();
                beta.add(zeta_fa0[size - 1]);
                let mut by_size = vec![CompensatedSum::new(); size + 1];
                let mut kappa_inner = CompensatedSum::new();
                let mut loo: BTreeMap<u32, CompensatedSum> = BTreeMap::new();
                let subs = table_z.subpartitions(w);
                let mut alpha = Vec::with_capacity(subs.len());
                for q in subs {
                    let etas: Vec<f64> = q.cells().iter().map(|&v| eta_of(v)).collect();
                    let a = check_overflow(etas.iter().product(), "alpha")?;
                    let zq = zeta_prior[q.len() - 1];
                    by_size[q.len()].add(a);
                    beta.add(zq * a);
                    kappa_inner.add(a * zeta_prior[q.len()]);
                    for (i, v) in q.cells().iter().enumerate() {
                        let others: f64 = etas
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, e)| e)
                            .product();
                        loo.entry(v.bits()).or_default().add(zq * others);
                    }
                    alpha.push((q.clone(), a));
                }
                Ok(CellTerms {
                    beta: check_overflow(beta.total(), "beta")?,
                    alpha_by_size: by_size.iter().map(|s| s.total()).collect(),
                    kappa_inner: kappa_inner.total(),
                    loo: loo
                        .into_iter()
                        .map(|(bits, s)| (LabelSet::from_bits(bits), s.total()))
                        .collect(),
                    alpha,
                })
            })
            .collect::<Result<_>>()?;
        let beta_of = |c: LabelSet| cells[c.bits() as usize - 1].beta;

        // per-partition products and leave-one-out products, reduced in order below
        let per_partition: Vec<(f64, Vec<f64>)> = table_z
            .partitions()
            .par_iter()
            .map(|p| {
                let betas: Vec<f64> = p.cells().iter().map(|&w| beta_of(w)).collect();
                let n = betas.len();
                let mut prefix = vec![1.0; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] * betas[i];
                }
                let mut suffix = vec![1.0; n + 1];
                for i in (0..n).rev() {
                    suffix[i] = suffix[i + 1] * betas[i];
                }
                let loo = (0..n).map(|i| prefix[i] * suffix[i + 1]).collect();
                Ok((check_overflow(prefix[n], "partition product")?, loo))
            })
            .collect::<Result<_>>()?;

        let partition_sum = compensated_sum(per_partition.iter().map(|(v, _)| *v));
        if !(partition_sum.abs() >= DEGENERATE_LIMIT) {
            return Err(Error::DegenerateUpdate(format!(
                "sum over partitions of prod beta is {partition_sum:e}"
            )));
        }
        let mut obeta_acc = vec![CompensatedSum::new(); cell_list.len()];
        for (p, (_, loo)) in table_z.partitions().iter().zip(&per_partition) {
            for (&w, &l) in p.cells().iter().zip(loo) {
                obeta_acc[w.bits() as usize - 1].add(l);
            }
        }
        let omega_over_beta: Vec<f64> = obeta_acc.iter().map(|s| s.total() / partition_sum).collect();
        let kappa = compensated_sum(cells.iter().zip(&omega_over_beta).map(|(c, g)| g * c.kappa_inner));

        let omega = table_z
            .partitions()
            .iter()
            .zip(&per_partition)
            .map(|(p, (v, _))| PartitionValue {
                partition: p.clone(),
                value: v / partition_sum,
            })
            .collect();
        let coefficients = CoefficientTable {
            phi,
            prior_mass,
            eta: cell_list
                .iter()
                .map(|&c| CellValue {
                    cell: c,
                    value: eta_of(c),
                })
                .collect(),
            alpha: cell_list
                .iter()
                .zip(&cells)
                .flat_map(|(&c, t)| {
                    t.alpha.iter().map(move |(q, a)| AlphaEntry {
                        cell: c,
                        subpartition: q.clone(),
                        value: *a,
                    })
                })
                .collect(),
            beta: cell_list
                .iter()
                .zip(&cells)
                .map(|(&c, t)| CellValue { cell: c, value: t.beta })
                .collect(),
            omega,
            partition_sum,
            kappa,
            zeta_prior,
            zeta_fa0,
        };

        Ok(Assembly {
            prior,
            density,
            table_z,
            no_detection,
            rho,
            cells,
            omega_over_beta,
            coefficients,
            options,
        })
    }

    fn intensity(&self) -> (IntensityGrid, usize, Vec<String>) {
        let c = &self.coefficients;
        // weight of rho_V in the detection term: sum_{W containing V} (omega/beta)_W * loo_{W,V}
        let mut weight_acc = vec![CompensatedSum::new(); self.cells.len()];
        for (terms, g) in self.cells.iter().zip(&self.omega_over_beta) {
            for (v, l) in &terms.loo {
                weight_acc[v.bits() as usize - 1].add(g * l);
            }
        }
        let weights: Vec<f64> = weight_acc.iter().map(|s| s.total()).collect();
        let lead = c.zeta_prior_at(1) + c.kappa;
        let p = self.density.values();
        let values: Vec<f64> = (0..p.len())
            .into_par_iter()
            .map(|x| {
                let detected = compensated_sum(weights.iter().enumerate().map(|(i, w)| w * self.rho[i + 1][x]));
                (lead * self.no_detection[x] + detected) * p[x]
            })
            .collect();

        let mut zeroed = 0;
        let mut warnings = Vec::new();
        let values = values
            .into_iter()
            .enumerate()
            .map(|(x, v)| {
                if v >= 0.0 {
                    v
                } else if v >= NEGATIVE_INTENSITY_TOL {
                    zeroed += 1;
                    0.0
                } else {
                    warnings.push(format!("posterior intensity {v:e} at grid point {x} is negative"));
                    v
                }
            })
            .collect();
        (IntensityGrid::from_raw(values), zeroed, warnings)
    }

    fn cardinality_order(&self) -> usize {
        self.prior
            .cardinality
            .max_support()
            .unwrap_or(self.options.poisson_truncation.min(MAX_ORDER - 1))
    }

    /// Series in `x` of `x^q zeta^(q)(x phi)` for `q = 1..=|Z|` (index `q - 1`),
    /// truncated to `len` coefficients.
    fn scaled_zeta_series(&self, len: usize) -> Result<Vec<Vec<f64>>> {
        let nz = self.table_z.size();
        let phi = self.coefficients.phi;
        match &self.prior.cardinality {
            CardinalityPgf::Poisson(rate) => Ok((1..=nz)
                .map(|q| {
                    let mut s = vec![0.0; len];
                    if q == 1 && len > 1 {
                        s[1] = *rate;
                    }
                    s
                })
                .collect()),
            CardinalityPgf::Finite(probs) if phi == 0.0 => {
                // G(x phi) is constant; zeta^(q)(x phi) = zeta^(q)(0)
                let z0 = zetas(&CardinalityPgf::Finite(probs.clone()), 0.0, nz)?;
                Ok((1..=nz)
                    .map(|q| {
                        let mut s = vec![0.0; len];
                        if q < len {
                            s[q] = z0[q - 1];
                        }
                        s
                    })
                    .collect())
            }
            CardinalityPgf::Finite(probs) => {
                // G(y) = y^m H(y) with H(0) > 0, so
                // x^q zeta^(q)(x phi) = m (-1)^(q-1) (q-1)! / phi^q + phi^-q x^q d^q/dx^q log H(x phi)
                let m = self.prior.cardinality.valuation();
                let shifted: Vec<f64> = probs[m..]
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * phi.powi(j as i32))
                    .collect();
                let log_h = series::ln(&shifted, len);
                Ok((1..=nz)
                    .map(|q| {
                        let scale = phi.powi(-(q as i32));
                        let mut s: Vec<f64> = log_h
                            .iter()
                            .enumerate()
                            .map(|(j, l)| {
                                if j >= q {
                                    l * falling_factorial(j, q) * scale
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let sign = if q % 2 == 1 { 1.0 } else { -1.0 };
                        s[0] += m as f64 * sign * factorial(q - 1) * scale;
                        s
                    })
                    .collect())
            }
        }
    }

    /// Posterior cardinality by series expansion of the posterior p.g.f. at 0.
    fn cardinality_series(&self) -> Result<Vec<f64>> {
        let c = &self.coefficients;
        let len = self.cardinality_order() + 1;
        let phi = c.phi;
        let g = &self.prior.cardinality;

        // G(x phi) = sum_n P(n) phi^n x^n
        let prior_series: Vec<f64> = (0..len).map(|n| g.prob(n) * phi.powi(n as i32)).collect();
        let scaled = self.scaled_zeta_series(len)?;

        let cell_series: Vec<Vec<f64>> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, terms)| {
                let w = LabelSet::from_bits(i as u32 + 1);
                let mut s = vec![0.0; len];
                s[0] = c.zeta_fa_at(w.len());
                for (q, a) in terms.alpha_by_size.iter().enumerate().skip(1) {
                    for (sj, zj) in s.iter_mut().zip(&scaled[q - 1]) {
                        *sj += a * zj;
                    }
                }
                s
            })
            .collect();

        let products: Vec<Vec<f64>> = self
            .table_z
            .partitions()
            .par_iter()
            .map(|p| {
                p.cells().iter().fold(
                    {
                        let mut one = vec![0.0; len];
                        one[0] = 1.0;
                        one
                    },
                    |acc, &w| series::mul(&acc, &cell_series[w.bits() as usize - 1], len),
                )
            })
            .collect();
        let mut acc = vec![CompensatedSum::new(); len];
        for prod in &products {
            for (a, v) in acc.iter_mut().zip(prod) {
                a.add(*v);
            }
        }
        let partition_series: Vec<f64> = acc.iter().map(|a| a.total()).collect();
        let numerator = series::mul(&prior_series, &partition_series, len);
        let normalizer = g.eval(phi) * c.partition_sum;
        if !(normalizer.abs() >= DEGENERATE_LIMIT) {
            return Err(Error::DegenerateUpdate(format!(
                "posterior p.g.f. normalizer is {normalizer:e}"
            )));
        }
        Ok(numerator.into_iter().map(|v| v / normalizer).collect())
    }

    /// Posterior cardinality from the closed-form derivative expansion; it
    /// evaluates `zeta^(i)(0)` and is undefined when `P(0) = 0`.
    fn cardinality_closed_form(&self) -> Option<Vec<f64>> {
        let c = &self.coefficients;
        let nz = self.table_z.size();
        let g = &self.prior.cardinality;
        let zeta0 = zetas(g, 0.0, nz).ok()?;
        let n_max = self.cardinality_order();

        // u_W[i] = zeta_FA^(|W|)(0) delta_{i,0} + sum_{Q of W, |Q| = i} alpha_Q zeta^(i)(0)
        let u: Vec<Vec<f64>> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, terms)| {
                let w = LabelSet::from_bits(i as u32 + 1);
                (0..=w.len())
                    .map(|k| {
                        if k == 0 {
                            c.zeta_fa_at(w.len())
                        } else {
                            terms.alpha_by_size[k] * zeta0[k - 1]
                        }
                    })
                    .collect()
            })
            .collect();

        // sum over partitions and over (i_1..i_M) with sum i_j = i, 0 <= i_j <= |W_j|
        fn compositions(factors: &[&[f64]], remaining: usize, acc: f64, out: &mut CompensatedSum) {
            match factors.split_first() {
                None => {
                    if remaining == 0 {
                        out.add(acc);
                    }
                }
                Some((first, rest)) => {
                    for (k, v) in first.iter().enumerate().take(remaining + 1) {
                        compositions(rest, remaining - k, acc * v, out);
                    }
                }
            }
        }
        let top = n_max.min(nz);
        let inner: Vec<f64> = (0..=top)
            .map(|i| {
                let mut out = CompensatedSum::new();
                for p in self.table_z.partitions() {
                    let factors: Vec<&[f64]> = p.cells().iter().map(|w| u[w.bits() as usize - 1].as_slice()).collect();
                    compositions(&factors, i, 1.0, &mut out);
                }
                out.total()
            })
            .collect();

        let phi = c.phi;
        let normalizer = g.eval(phi) * c.partition_sum;
        Some(
            (0..=n_max)
                .map(|n| {
                    compensated_sum((0..=n.min(top)).map(|i| phi.powi((n - i) as i32) * g.prob(n - i) * inner[i]))
                        / normalizer
                })
                .collect(),
        )
    }
}

/// Posterior intensity `D_{k|k}`.
pub fn update_intensity(
    grid: &StateGrid,
    prior: &Prior,
    z: &MeasurementSet,
    sensor: &SensorModel,
    options: CorrectorOptions,
) -> Result<IntensityGrid> {
    Ok(Assembly::build(grid, prior, z, sensor, options)?.intensity().0)
}

/// Posterior cardinality `P_{k|k}(n)` from the series expansion of the posterior p.g.f.
pub fn posterior_pgf_series(
    grid: &StateGrid,
    prior: &Prior,
    z: &MeasurementSet,
    sensor: &SensorModel,
    options: CorrectorOptions,
) -> Result<Vec<f64>> {
    Assembly::build(grid, prior, z, sensor, options)?.cardinality_series()
}

/// Posterior cardinality from the closed-form derivative expansion.
pub fn posterior_cardinality_closed_form(
    grid: &StateGrid,
    prior: &Prior,
    z: &MeasurementSet,
    sensor: &SensorModel,
    options: CorrectorOptions,
) -> Result<Option<Vec<f64>>> {
    Ok(Assembly::build(grid, prior, z, sensor, options)?.cardinality_closed_form())
}

/// Relative gap between prior intensity mass and cardinality mean that earns a warning.
pub const PRIOR_MEAN_TOL: f64 = 1e-9;

/// One full corrector step: coefficients, intensity and both cardinality routes.
pub fn corrector_step(
    grid: &StateGrid,
    prior: &Prior,
    z: &MeasurementSet,
    sensor: &SensorModel,
    options: CorrectorOptions,
) -> Result<CorrectorResult> {
    let assembly = Assembly::build(grid, prior, z, sensor, options)?;
    let (intensity, negatives_zeroed, mut warnings) = assembly.intensity();
    let cardinality = assembly.cardinality_series()?;
    let closed = assembly.cardinality_closed_form();

    let mean = prior.cardinality.mean();
    let mass = assembly.coefficients.prior_mass;
    if (mass - mean).abs() > PRIOR_MEAN_TOL * mean.max(1.0) {
        warnings.push(format!(
            "prior intensity mass {mass} differs from the cardinality mean {mean}; only the intensity shape is used"
        ));
    }
    let cardinality_sum = compensated_sum(cardinality.iter().copied());
    if prior_is_truncated(&prior.cardinality) && (1.0 - cardinality_sum).abs() > 1e-10 {
        warnings.push(format!(
            "posterior cardinality truncated at n = {} loses mass {:e}",
            cardinality.len() - 1,
            1.0 - cardinality_sum
        ));
    }
    let route_deviation = closed
        .as_ref()
        .map(|c| crate::numeric::max_abs_deviation(&cardinality, c));
    let diagnostics = Diagnostics {
        mean_from_intensity: intensity.mass(grid),
        mean_from_cardinality: compensated_sum(cardinality.iter().enumerate().map(|(n, p)| n as f64 * p)),
        partition_count: assembly.table_z.partitions().len(),
        subpartition_count: assembly.coefficients.alpha.len(),
        omega_sum: compensated_sum(assembly.coefficients.omega.iter().map(|o| o.value)),
        cardinality_sum,
        route_deviation,
        negatives_zeroed,
        warnings,
    };
    Ok(CorrectorResult {
        intensity,
        cardinality,
        cardinality_closed_form: closed,
        coefficients: assembly.coefficients,
        diagnostics,
    })
}

fn prior_is_truncated(g: &CardinalityPgf) -> bool {
    g.is_poisson()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::MeasurementKernel;

    fn one_point(p_d: f64, meas: CardinalityPgf, ratio: f64) -> (StateGrid, SensorModel) {
        let grid = StateGrid::with_weights(vec![1.0]).unwrap();
        // measurement value 0 has p_z / p_FA = ratio
        let lik0 = 0.5 * ratio;
        let sensor = SensorModel::new(
            vec![p_d],
            CardinalityPgf::poisson(1.0).unwrap(),
            vec![meas],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![lik0, 1.0 - lik0]],
                clutter_density: vec![0.5, 0.5],
            },
        )
        .unwrap();
        (grid, sensor)
    }

    fn prior(values: Vec<f64>, card: CardinalityPgf) -> Prior {
        Prior {
            intensity: IntensityGrid::new(values).unwrap(),
            cardinality: card,
        }
    }

    #[test]
    fn eta_examples() {
        let (grid, sensor) = one_point(1.0, CardinalityPgf::poisson(1.0).unwrap(), 2.0);
        let p = SpatialDensity::new(vec![1.0], &grid).unwrap();
        let z = MeasurementSet::new(vec![0.0]);
        let v = eta(LabelSet::singleton(0), &p, &z, &sensor).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);

        let (_, sensor) = one_point(0.0, CardinalityPgf::poisson(1.0).unwrap(), 2.0);
        assert_eq!(eta(LabelSet::singleton(0), &p, &z, &sensor).unwrap(), 0.0);

        let (_, sensor) = one_point(0.7, CardinalityPgf::dirac(1).unwrap(), 2.0);
        let z2 = MeasurementSet::new(vec![0.0, 1.0]);
        assert_eq!(eta(LabelSet::first(2), &p, &z2, &sensor).unwrap(), 0.0);
    }

    #[test]
    fn alpha_and_omega_arithmetic() {
        let mut table = CoefficientTable {
            phi: 0.0,
            prior_mass: 1.0,
            eta: vec![
                CellValue {
                    cell: LabelSet::from_bits(1),
                    value: 0.3,
                },
                CellValue {
                    cell: LabelSet::from_bits(2),
                    value: 0.5,
                },
                CellValue {
                    cell: LabelSet::from_bits(3),
                    value: 0.0,
                },
            ],
            alpha: vec![],
            beta: vec![],
            omega: vec![],
            partition_sum: 1.0,
            kappa: 0.0,
            zeta_prior: vec![],
            zeta_fa0: vec![],
        };
        let singles = Partition::new(vec![LabelSet::from_bits(1), LabelSet::from_bits(2)]);
        let whole = Partition::new(vec![LabelSet::from_bits(3)]);
        assert!((alpha(&singles, &table) - 0.15).abs() < 1e-16);
        assert_eq!(alpha(&whole, &table), 0.0);
        table.eta[2].value = 0.8;
        assert_eq!(alpha(&whole, &table), 0.8);

        // beta_{z1,z2} = 2, beta_{z1} = beta_{z2} = 1
        let parts = vec![whole, singles];
        let omega = omega_weights(&parts, |w| if w.len() == 2 { 2.0 } else { 1.0 }).unwrap();
        assert!((omega[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((omega[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(omega_weights(&parts, |_| 0.0).is_err());
    }

    #[test]
    fn single_measurement_has_single_partition() {
        let (grid, sensor) = one_point(0.8, CardinalityPgf::poisson(1.5).unwrap(), 2.0);
        let pr = prior(vec![1.2], CardinalityPgf::finite(vec![0.2, 0.5, 0.3]).unwrap());
        let r = corrector_step(&grid, &pr, &MeasurementSet::new(vec![0.0]), &sensor, Default::default()).unwrap();
        assert_eq!(r.coefficients.omega.len(), 1);
        assert_eq!(r.coefficients.omega[0].value, 1.0);
    }

    #[test]
    fn no_detection_leaves_prior_unchanged() {
        let grid = StateGrid::with_weights(vec![1.0, 0.5]).unwrap();
        let sensor = SensorModel::new(
            vec![0.0, 0.0],
            CardinalityPgf::finite(vec![0.5, 0.3, 0.2]).unwrap(),
            vec![CardinalityPgf::finite(vec![0.1, 0.6, 0.3]).unwrap(); 2],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![0.2, 0.8], vec![0.7, 0.3]],
                clutter_density: vec![0.4, 0.6],
            },
        )
        .unwrap();
        let pr = prior(
            vec![0.8, 1.1],
            CardinalityPgf::finite(vec![0.15, 0.45, 0.3, 0.1]).unwrap(),
        );
        let z = MeasurementSet::new(vec![0.0, 1.0, 1.0]);
        let r = corrector_step(&grid, &pr, &z, &sensor, Default::default()).unwrap();
        for (a, b) in r.intensity.values().iter().zip(pr.intensity.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let CardinalityPgf::Finite(p) = &pr.cardinality else {
            unreachable!()
        };
        for (a, b) in r.cardinality.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in r.cardinality_closed_form.unwrap().iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.coefficients.kappa, 0.0);
        for b in &r.coefficients.beta {
            assert_eq!(b.value, r.coefficients.zeta_fa_at(b.cell.len()));
        }
    }

    #[test]
    fn empty_measurement_set_uses_empty_partition() {
        let (grid, sensor) = one_point(0.6, CardinalityPgf::poisson(1.0).unwrap(), 1.0);
        let pr = prior(vec![1.0], CardinalityPgf::finite(vec![0.3, 0.3, 0.4]).unwrap());
        let r = corrector_step(&grid, &pr, &MeasurementSet::default(), &sensor, Default::default()).unwrap();
        let phi = r.coefficients.phi;
        assert!((phi - (0.4 + 0.6 * (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(r.coefficients.omega.len(), 1);
        assert_eq!(r.coefficients.partition_sum, 1.0);
        assert_eq!(r.coefficients.kappa, 0.0);
        // G_post(x) = G(x phi) / G(phi)
        let g = pr.cardinality.eval(phi);
        let want = [0.3 / g, 0.3 * phi / g, 0.4 * phi * phi / g];
        for (a, b) in r.cardinality.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let zeta1 = pr.cardinality.zeta_at(phi, 1).unwrap();
        let d = zeta1 * (0.4 + 0.6 * (-1.0f64).exp());
        assert!((r.intensity.values()[0] - d).abs() < 1e-14);
    }

    #[test]
    fn kappa_literal_matches_rearranged() {
        let grid = StateGrid::with_weights(vec![1.0, 2.0]).unwrap();
        let sensor = SensorModel::new(
            vec![0.9, 0.4],
            CardinalityPgf::finite(vec![0.6, 0.3, 0.1]).unwrap(),
            vec![
                CardinalityPgf::finite(vec![0.2, 0.5, 0.3]).unwrap(),
                CardinalityPgf::poisson(1.3).unwrap(),
            ],
            MeasurementKernel::Tabulated {
                likelihood: vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]],
                clutter_density: vec![0.3, 0.3, 0.4],
            },
        )
        .unwrap();
        let pr = prior(
            vec![0.5, 0.6],
            CardinalityPgf::finite(vec![0.2, 0.3, 0.3, 0.2]).unwrap(),
        );
        let z = MeasurementSet::new(vec![0.0, 1.0, 2.0]);
        let r = corrector_step(&grid, &pr, &z, &sensor, Default::default()).unwrap();
        let literal = kappa(&r.coefficients).unwrap();
        assert!((literal - r.coefficients.kappa).abs() < 1e-13);
        assert!(r.coefficients.kappa != 0.0);
        for b in &r.coefficients.beta {
            let again = beta(b.cell, &r.coefficients).unwrap();
            assert!((again - b.value).abs() < 1e-14);
        }
        // alpha of the one-cell sub-partition is eta
        for a in r.coefficients.alpha.iter().filter(|a| a.subpartition.len() == 1) {
            assert_eq!(a.value, r.coefficients.eta_of(a.cell));
        }
    }

    #[test]
    fn poisson_prior_has_zero_kappa() {
        let (grid, sensor) = one_point(0.9, CardinalityPgf::poisson(2.0).unwrap(), 1.5);
        let pr = prior(vec![1.7], CardinalityPgf::poisson(1.7).unwrap());
        let z = MeasurementSet::new(vec![0.0, 0.0, 1.0]);
        let r = corrector_step(&grid, &pr, &z, &sensor, Default::default()).unwrap();
        assert_eq!(r.coefficients.kappa, 0.0);
        assert_eq!(r.cardinality.len(), MAX_ORDER);
        assert!(r.diagnostics.route_deviation.unwrap() < 1e-12);
    }

    #[test]
    fn zero_prior_at_zero_keeps_series_route() {
        // P(0) = 0: the closed form needs zeta(0) and is undefined
        let (grid, sensor) = one_point(0.7, CardinalityPgf::finite(vec![0.3, 0.5, 0.2]).unwrap(), 1.5);
        let pr = prior(vec![2.0], CardinalityPgf::finite(vec![0.0, 0.4, 0.6]).unwrap());
        let z = MeasurementSet::new(vec![0.0, 1.0]);
        let r = corrector_step(&grid, &pr, &z, &sensor, Default::default()).unwrap();
        assert!(r.cardinality_closed_form.is_none());
        assert!(r.cardinality[0].abs() < 1e-15);
        assert!((r.diagnostics.cardinality_sum - 1.0).abs() < 1e-12);
        assert!((r.diagnostics.mean_from_intensity - r.diagnostics.mean_from_cardinality).abs() < 1e-12);
    }

    #[test]
    fn cap_violation_is_reported() {
        let (grid, sensor) = one_point(0.7, CardinalityPgf::poisson(1.0).unwrap(), 1.0);
        let pr = prior(vec![1.0], CardinalityPgf::poisson(1.0).unwrap());
        let z = MeasurementSet::new(vec![0.0; 9]);
        let err = corrector_step(&grid, &pr, &z, &sensor, Default::default()).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { size: 9, .. }));
    }
}
