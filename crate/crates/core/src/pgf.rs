//! Cardinality probability generating functions and truncated-series
//! differentiation.
//!
//! Two representations of a truncated power series appear here:
//!
//! * [`Jet`] stores *derivatives* `f(x0), f'(x0), ..., f^(k)(x0)`. This is the
//!   public convention.
//! * The private [`series`] helpers work on *Taylor coefficients*
//!   `f^(j)(x0) / j!`, which keeps multiplication and logarithms free of
//!   factorial bookkeeping. `Jet` converts at its boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::factorial;

/// Highest derivative order served by [`CardinalityPgf::derivatives_at`] and
/// [`Jet`]; finite supports are limited to `n <= MAX_ORDER - 1`.
pub const MAX_ORDER: usize = 32;

/// Generating-function values below this are treated as zero when a
/// logarithm is required.
pub const SINGULAR_THRESHOLD: f64 = 1e-300;

/// Tolerance on the total mass of a finite-support distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Truncated power series in the Taylor-coefficient convention.
pub(crate) mod series {
    /// Product truncated to `len` coefficients.
    pub fn mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (i, &ai) in a.iter().enumerate().take(len) {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate().take(len - i) {
                out[i + j] += ai * bj;
            }
        }
        out
    }

    /// Quotient `a / b`; requires `b[0] != 0`.
    pub fn div(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for k in 0..len {
            let mut acc = a.get(k).copied().unwrap_or(0.0);
            for j in 1..=k {
                acc -= b.get(j).copied().unwrap_or(0.0) * out[k - j];
            }
            out[k] = acc / b[0];
        }
        out
    }

    /// Natural logarithm; requires `a[0] > 0`.
    ///
    /// Uses `a * (log a)' = a'` coefficient-wise:
    /// `l_k = (a_k - sum_{j<k} (j/k) l_j a_{k-j}) / a_0`.
    pub fn ln(a: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if len == 0 {
            return out;
        }
        out[0] = a[0].ln();
        for k in 1..len {
            let mut acc = a.get(k).copied().unwrap_or(0.0);
            for (j, lj) in out.iter().enumerate().take(k).skip(1) {
                acc -= (j as f64 / k as f64) * lj * a.get(k - j).copied().unwrap_or(0.0);
            }
            out[k] = acc / a[0];
        }
        out
    }

    /// Exponential.
    pub fn exp(a: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        if len == 0 {
            return out;
        }
        out[0] = a[0].exp();
        for k in 1..len {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * a.get(j).copied().unwrap_or(0.0) * out[k - j];
            }
            out[k] = acc / k as f64;
        }
        out
    }
}

/// Cardinality distribution of an iid cluster process, held through its
/// probability generating function `G(x) = sum_n P(n) x^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardinalityPgf {
    /// Probabilities `P(0), ..., P(N)`.
    Finite(Vec<f64>),
    /// Poisson with the given rate, kept analytic.
    Poisson(f64),
}

impl CardinalityPgf {
    /// Validated finite-support distribution (mass 1 within 1e-12).
    pub fn finite(probs: Vec<f64>) -> Result<Self> {
        Self::finite_with_tolerance(probs, NORMALIZATION_TOL)
    }

    /// Validates with a looser mass tolerance, then renormalizes.
    pub fn finite_with_tolerance(probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if probs.len() > MAX_ORDER {
            return Err(Error::InvalidDistribution(format!(
                "support up to n = {} exceeds the maximum n = {}",
                probs.len() - 1,
                MAX_ORDER - 1
            )));
        }
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("P({n}) = {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(CardinalityPgf::Finite(probs.iter().map(|p| p / total).collect()))
    }

    pub fn poisson(rate: f64) -> Result<Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "poisson rate {rate} must be finite and nonnegative"
            )));
        }
        Ok(CardinalityPgf::Poisson(rate))
    }

    /// Point mass at `n`.
    pub fn dirac(n: usize) -> Result<Self> {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        Self::finite(p)
    }

    /// Checks the invariants of an already-constructed value.
    pub fn validate(&self) -> Result<()> {
        match self {
            CardinalityPgf::Finite(p) => Self::finite(p.clone()).map(|_| ()),
            CardinalityPgf::Poisson(r) => Self::poisson(*r).map(|_| ()),
        }
    }

    pub fn is_poisson(&self) -> bool {
        matches!(self, CardinalityPgf::Poisson(_))
    }

    /// Largest `n` with `P(n)` stored; `None` for Poisson.
    pub fn max_support(&self) -> Option<usize> {
        match self {
            CardinalityPgf::Finite(p) => Some(p.len() - 1),
            CardinalityPgf::Poisson(_) => None,
        }
    }

    pub fn prob(&self, n: usize) -> f64 {
        match self {
            CardinalityPgf::Finite(p) => p.get(n).copied().unwrap_or(0.0),
            CardinalityPgf::Poisson(rate) => poisson_pmf(*rate, n),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CardinalityPgf::Finite(p) => p.iter().enumerate().map(|(n, p)| n as f64 * p).sum(),
            CardinalityPgf::Poisson(rate) => *rate,
        }
    }

    /// `G(x)`; `x` may lie outside `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CardinalityPgf::Finite(p) => p.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            CardinalityPgf::Poisson(rate) => (rate * x - rate).exp(),
        }
    }

    /// `G^(n)(0) = n! P(n)`.
    pub fn derivative_at_zero(&self, n: usize) -> f64 {
        match self {
            CardinalityPgf::Finite(p) => p.get(n).map_or(0.0, |p| factorial(n) * p),
            CardinalityPgf::Poisson(rate) => rate.powi(n as i32) * (-rate).exp(),
        }
    }

    /// Taylor coefficients `G^(j)(x0) / j!` for `j = 0..len`.
    pub(crate) fn taylor_at(&self, x0: f64, len: usize) -> Vec<f64> {
        match self {
            CardinalityPgf::Finite(p) => {
                // shift the polynomial: coefficient j of G(x0 + t)
                let mut c = p.clone();
                let n = c.len();
                for i in 0..n {
                    for k in (i..n - 1).rev() {
                        c[k] += x0 * c[k + 1];
                    }
                }
                c.resize(len.max(n), 0.0);
                c.truncate(len);
                c
            }
            CardinalityPgf::Poisson(rate) => {
                let g = self.eval(x0);
                let mut out = Vec::with_capacity(len);
                let mut term = g;
                for j in 0..len {
                    out.push(term);
                    term *= rate / (j + 1) as f64;
                }
                out
            }
        }
    }

    /// `[G(x0), G'(x0), ..., G^(k)(x0)]`.
    pub fn derivatives_at(&self, x0: f64, k: usize) -> Result<Vec<f64>> {
        if k > MAX_ORDER {
            return Err(Error::OrderOverflow {
                requested: k,
                max: MAX_ORDER,
            });
        }
        Ok(match self {
            CardinalityPgf::Finite(_) => self
                .taylor_at(x0, k + 1)
                .into_iter()
                .enumerate()
                .map(|(j, c)| c * factorial(j))
                .collect(),
            CardinalityPgf::Poisson(rate) => {
                let g = self.eval(x0);
                (0..=k).map(|j| rate.powi(j as i32) * g).collect()
            }
        })
    }

    /// `zeta^(i)(x0)`, the i-th derivative of `log G` at `x0`, for `i >= 1`.
    pub fn zeta_at(&self, x0: f64, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(Error::OutOfRange {
                what: "log-derivative order",
                value: 0,
                min: 1,
                max: MAX_ORDER,
            });
        }
        Ok(self.zetas_at(x0, i)?[i - 1])
    }

    /// `[zeta^(1)(x0), ..., zeta^(max)(x0)]`.
    pub fn zetas_at(&self, x0: f64, max: usize) -> Result<Vec<f64>> {
        if max > MAX_ORDER {
            return Err(Error::OrderOverflow {
                requested: max,
                max: MAX_ORDER,
            });
        }
        match self {
            // exact: log G = rate (x - 1)
            CardinalityPgf::Poisson(rate) => Ok((1..=max).map(|i| if i == 1 { *rate } else { 0.0 }).collect()),
            CardinalityPgf::Finite(_) => {
                let g = self.eval(x0);
                if !(g >= SINGULAR_THRESHOLD) {
                    return Err(Error::SingularEvaluation { at: x0, value: g });
                }
                let taylor = self.taylor_at(x0, max + 1);
                let log = series::ln(&taylor, max + 1);
                Ok((1..=max).map(|i| log[i] * factorial(i)).collect())
            }
        }
    }

    /// Index of the first nonzero probability.
    pub(crate) fn valuation(&self) -> usize {
        match self {
            CardinalityPgf::Finite(p) => p.iter().position(|&v| v > 0.0).unwrap_or(0),
            CardinalityPgf::Poisson(_) => 0,
        }
    }
}

pub fn poisson_pmf(rate: f64, n: usize) -> f64 {
    if rate == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * rate.ln() - rate - ln_factorial(n)).exp()
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Value and derivatives of a function at a point, truncated at a fixed order.
///
/// `derivatives()[j]` is `f^(j)(x0)` (derivative convention, not Taylor
/// coefficients). Arithmetic is closed up to the jet's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    derivs: Vec<f64>,
}

impl Jet {
    pub fn from_derivatives(derivs: Vec<f64>) -> Result<Self> {
        if derivs.is_empty() || derivs.len() > MAX_ORDER + 1 {
            return Err(Error::OrderOverflow {
                requested: derivs.len().saturating_sub(1),
                max: MAX_ORDER,
            });
        }
        Ok(Jet { derivs })
    }

    pub fn constant(value: f64, order: usize) -> Result<Self> {
        let mut d = vec![0.0; order + 1];
        d[0] = value;
        Self::from_derivatives(d)
    }

    /// The identity function `x` expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Result<Self> {
        let mut d = vec![0.0; order + 1];
        d[0] = x0;
        if order >= 1 {
            d[1] = 1.0;
        }
        Self::from_derivatives(d)
    }

    /// Jet of a cardinality p.g.f. at `x0`.
    pub fn of_pgf(g: &CardinalityPgf, x0: f64, order: usize) -> Result<Self> {
        Self::from_derivatives(g.derivatives_at(x0, order)?)
    }

    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.derivs[0]
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.derivs
    }

    fn taylor(&self) -> Vec<f64> {
        self.derivs.iter().enumerate().map(|(j, d)| d / factorial(j)).collect()
    }

    fn from_taylor(t: Vec<f64>) -> Self {
        Jet {
            derivs: t.into_iter().enumerate().map(|(j, c)| c * factorial(j)).collect(),
        }
    }

    fn same_order(&self, other: &Jet) -> Result<usize> {
        if self.order() != other.order() {
            return Err(Error::MixedOrders {
                left: self.order(),
                right: other.order(),
            });
        }
        Ok(self.derivs.len())
    }

    pub fn add(&self, other: &Jet) -> Result<Jet> {
        self.same_order(other)?;
        Ok(Jet {
            derivs: self.derivs.iter().zip(&other.derivs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Jet) -> Result<Jet> {
        self.same_order(other)?;
        Ok(Jet {
            derivs: self.derivs.iter().zip(&other.derivs).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            derivs: self.derivs.iter().map(|d| d * c).collect(),
        }
    }

    pub fn mul(&self, other: &Jet) -> Result<Jet> {
        let len = self.same_order(other)?;
        Ok(Self::from_taylor(series::mul(&self.taylor(), &other.taylor(), len)))
    }

    pub fn div(&self, other: &Jet) -> Result<Jet> {
        let len = self.same_order(other)?;
        if other.value().abs() < SINGULAR_THRESHOLD {
            return Err(Error::SingularEvaluation {
                at: f64::NAN,
                value: other.value(),
            });
        }
        Ok(Self::from_taylor(series::div(&self.taylor(), &other.taylor(), len)))
    }

    pub fn ln(&self) -> Result<Jet> {
        if !(self.value() >= SINGULAR_THRESHOLD) {
            return Err(Error::SingularEvaluation {
                at: f64::NAN,
                value: self.value(),
            });
        }
        Ok(Self::from_taylor(series::ln(&self.taylor(), self.derivs.len())))
    }

    pub fn exp(&self) -> Jet {
        Self::from_taylor(series::exp(&self.taylor(), self.derivs.len()))
    }
}

/// Jet of a product of factors (the general Leibniz rule).
pub fn pgf_product_series(factors: &[Jet]) -> Result<Jet> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidDistribution("product of zero jets".into()))?;
    rest.iter().try_fold(first.clone(), |acc, f| acc.mul(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn eval_examples() {
        let g = CardinalityPgf::finite(vec![0.5, 0.5]).unwrap();
        assert_eq!(g.eval(0.0), 0.5);
        assert!(close(g.eval(1.0), 1.0, 1e-15));
        let p = CardinalityPgf::poisson(2.0).unwrap();
        assert!(close(p.eval(0.0), (-2.0f64).exp(), 1e-15));
        assert!(close(p.eval(0.0), 0.135335, 1e-6));
        assert_eq!(p.eval(1.0), 1.0);
    }

    #[test]
    fn derivative_examples() {
        let g = CardinalityPgf::finite(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(g.derivatives_at(0.0, 2).unwrap(), vec![0.25, 0.5, 0.5]);
        assert_eq!(g.derivatives_at(1.0, 1).unwrap(), vec![1.0, 1.0]);
        let p = CardinalityPgf::poisson(2.0).unwrap();
        let e = (-2.0f64).exp();
        let d = p.derivatives_at(0.0, 2).unwrap();
        for (got, want) in d.iter().zip([e, 2.0 * e, 4.0 * e]) {
            assert!(close(*got, want, 1e-15));
        }
        assert!(matches!(g.derivatives_at(0.0, 33), Err(Error::OrderOverflow { .. })));
    }

    #[test]
    fn zeta_examples() {
        let p = CardinalityPgf::poisson(3.0).unwrap();
        assert_eq!(p.zeta_at(0.4, 1).unwrap(), 3.0);
        assert_eq!(p.zeta_at(0.4, 2).unwrap(), 0.0);
        let g = CardinalityPgf::finite(vec![0.5, 0.5]).unwrap();
        assert!(close(g.zeta_at(0.0, 1).unwrap(), 1.0, 1e-15));
        assert!(close(g.zeta_at(0.0, 2).unwrap(), -1.0, 1e-15));
    }

    #[test]
    fn zeta_singular_is_an_error() {
        let g = CardinalityPgf::finite(vec![0.0, 1.0]).unwrap();
        assert!(matches!(g.zeta_at(0.0, 1), Err(Error::SingularEvaluation { .. })));
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(CardinalityPgf::finite(vec![0.5, 0.6]).is_err());
        assert!(CardinalityPgf::finite(vec![-0.5, 1.5]).is_err());
        assert!(CardinalityPgf::finite(vec![]).is_err());
        assert!(CardinalityPgf::finite(vec![1.0 / 33.0; 33]).is_err());
        assert!(CardinalityPgf::poisson(-1.0).is_err());
        assert!(CardinalityPgf::finite_with_tolerance(vec![0.5, 0.5 + 1e-10], 1e-9).is_ok());
    }

    #[test]
    fn product_examples() {
        let one = Jet::from_derivatives(vec![1.0, 0.0, 0.0]).unwrap();
        let j = Jet::from_derivatives(vec![0.3, -1.2, 4.0]).unwrap();
        assert_eq!(pgf_product_series(&[one, j.clone()]).unwrap(), j);

        let (a, b, c, d) = (2.0, 3.0, 5.0, 7.0);
        let f = Jet::from_derivatives(vec![a, b, 0.0]).unwrap();
        let g = Jet::from_derivatives(vec![c, d, 0.0]).unwrap();
        let fg = pgf_product_series(&[f, g]).unwrap();
        assert_eq!(fg.derivatives(), &[a * c, a * d + b * c, 2.0 * b * d]);

        let short = Jet::constant(1.0, 1).unwrap();
        assert!(matches!(
            pgf_product_series(&[short, j]),
            Err(Error::MixedOrders { .. })
        ));
    }

    #[test]
    fn jet_ln_exp_roundtrip() {
        let j = Jet::from_derivatives(vec![1.5, 0.2, -0.7, 2.0]).unwrap();
        let back = j.ln().unwrap().exp();
        for (x, y) in back.derivatives().iter().zip(j.derivatives()) {
            assert!(close(*x, *y, 1e-14));
        }
        let q = j.div(&j).unwrap();
        assert!(close(q.value(), 1.0, 1e-15));
        assert!(q.derivatives()[1..].iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn taylor_shift_matches_direct_derivatives() {
        let g = CardinalityPgf::finite(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let d = g.derivatives_at(0.7, 4).unwrap();
        let x: f64 = 0.7;
        let want = [
            0.1 + 0.2 * x + 0.3 * x * x + 0.4 * x.powi(3),
            0.2 + 0.6 * x + 1.2 * x * x,
            0.6 + 2.4 * x,
            2.4,
            0.0,
        ];
        for (a, b) in d.iter().zip(want) {
            assert!(close(*a, b, 1e-14), "{a} vs {b}");
        }
    }

    #[test]
    fn poisson_pmf_values() {
        assert!(close(poisson_pmf(2.0, 3), 8.0 / 6.0 * (-2.0f64).exp(), 1e-14));
        assert_eq!(poisson_pmf(0.0, 0), 1.0);
        assert_eq!(poisson_pmf(0.0, 2), 0.0);
    }
}
