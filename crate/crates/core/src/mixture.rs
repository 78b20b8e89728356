//! Univariate Gaussian mixture densities.
//!
//! A k-component mixture is stored with its components labelled in ascending
//! order of their means, which makes the parameterisation identifiable. The
//! free coordinate system used by all derivative code is
//! `(π₁..π_{k-1}, μ₁..μ_k, σ²₁..σ²_k)`, with `π_k` implied by the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MscsError, Result};

/// Lower bound on every mixing weight (and `1 - WEIGHT_FLOOR` upper bound).
pub const WEIGHT_FLOOR: f64 = 1e-8;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// An i.i.d. sample of finite real observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MscsError::InvalidSample("sample is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MscsError::InvalidSample(format!(
                "observation {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Sample { values })
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

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Maximum-likelihood (divide-by-n) variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sorted copy of the observations.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = MscsError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample::new(values)
    }
}

impl From<Sample> for Vec<f64> {
    fn from(s: Sample) -> Self {
        s.values
    }
}

/// Number of free parameters of a k-component univariate mixture.
pub fn free_param_count(k: usize) -> usize {
    3 * k - 1
}

/// Parameters of an ordered k-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl MixtureParams {
    /// Builds a validated mixture. Components must already be in ascending
    /// order of their means.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let p = MixtureParams {
            weights,
            means,
            variances,
        };
        p.validate()?;
        Ok(p)
    }

    /// Sorts components by mean (ties broken by variance) and validates.
    pub fn relabeled(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.len() != means.len() || means.len() != variances.len() {
            return Err(MscsError::InvalidParams(
                "weights, means and variances differ in length".into(),
            ));
        }
        let (w, m, v) = sort_components(weights, means, variances);
        MixtureParams::new(w, m, v)
    }

    /// Builds a mixture without checking any invariant. Intended for tests
    /// and finite-difference probes; every density routine still works as
    /// long as weights and variances are positive.
    pub fn new_unchecked(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Self {
        MixtureParams {
            weights,
            means,
            variances,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(MscsError::InvalidParams("mixture has no components".into()));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(MscsError::InvalidParams(
                "weights, means and variances differ in length".into(),
            ));
        }
        let all = self.weights.iter().chain(&self.means).chain(&self.variances);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(MscsError::InvalidParams("non-finite parameter".into()));
        }
        if k > 1 {
            for (j, &w) in self.weights.iter().enumerate() {
                if !(WEIGHT_FLOOR..=1.0 - WEIGHT_FLOOR).contains(&w) {
                    return Err(MscsError::InvalidParams(format!(
                        "weight {j} = {w} outside [{WEIGHT_FLOOR}, {}]",
                        1.0 - WEIGHT_FLOOR
                    )));
                }
            }
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MscsError::InvalidParams(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if let Some(j) = self.means.windows(2).position(|w| w[0] >= w[1]) {
            return Err(MscsError::InvalidParams(format!(
                "means not strictly ascending at components {j} and {}",
                j + 1
            )));
        }
        if let Some(j) = self.variances.iter().position(|&v| v <= 0.0) {
            return Err(MscsError::InvalidParams(format!(
                "variance {j} = {} is not positive",
                self.variances[j]
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn free_param_count(&self) -> usize {
        free_param_count(self.k())
    }

    /// Σ π_j μ_j.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * (v + (m - mu) * (m - mu)))
            .sum()
    }

    pub fn max_sd(&self) -> f64 {
        self.variances.iter().copied().fold(0.0, f64::max).sqrt()
    }

    /// Writes `ln π_j + ln N(x; μ_j, σ²_j)` for every component into `out`.
    pub fn log_weighted_components(&self, x: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.k()) {
            let v = self.variances[j];
            let d = x - self.means[j];
            *o = self.weights[j].ln() - 0.5 * (LN_2PI + v.ln() + d * d / v);
        }
    }

    /// log f(x; θ), stabilised by log-sum-exp.
    pub fn log_density(&self, x: f64) -> f64 {
        let mut terms = vec![0.0; self.k()];
        self.log_weighted_components(x, &mut terms);
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Mixture CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * normal_cdf((x - m) / v.sqrt()))
            .sum()
    }

    /// Σ_i log f(x_i; θ), summed in index order.
    pub fn loglik(&self, sample: &Sample) -> f64 {
        let mut terms = vec![0.0; self.k()];
        let mut total = 0.0;
        for &x in sample.values() {
            self.log_weighted_components(x, &mut terms);
            total += log_sum_exp(&terms);
        }
        total
    }

    /// Draws `n` observations; identical seeds give identical samples.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(MscsError::InvalidSample("cannot draw 0 observations".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sds: Vec<f64> = self.variances.iter().map(|v| v.sqrt()).collect();
        let last = self.k() - 1;
        let values = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut j = last;
                for (idx, w) in self.weights.iter().enumerate().take(last) {
                    acc += w;
                    if u < acc {
                        j = idx;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                self.means[j] + sds[j] * z
            })
            .collect();
        Sample::new(values)
    }

    /// Packs into the free coordinate vector.
    pub fn pack(&self) -> FreeParamVector {
        let k = self.k();
        let mut theta = Vec::with_capacity(free_param_count(k));
        theta.extend_from_slice(&self.weights[..k - 1]);
        theta.extend_from_slice(&self.means);
        theta.extend_from_slice(&self.variances);
        FreeParamVector { theta, k }
    }
}

/// Free coordinates `(π₁..π_{k-1}, μ₁..μ_k, σ²₁..σ²_k)` of a k-mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParamVector {
    theta: Vec<f64>,
    k: usize,
}

impl FreeParamVector {
    pub fn new(theta: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || theta.len() != free_param_count(k) {
            return Err(MscsError::InvalidParams(format!(
                "free vector of length {} does not match order {k}",
                theta.len()
            )));
        }
        Ok(FreeParamVector { theta, k })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Unpacks and validates every mixture invariant.
    pub fn unpack(&self) -> Result<MixtureParams> {
        let p = unpack_unchecked(&self.theta, self.k);
        let implied = p.weights[self.k - 1];
        if self.k > 1 && !(implied > 0.0 && implied < 1.0) {
            return Err(MscsError::InvalidParams(format!(
                "implied last weight {implied} is outside (0, 1)"
            )));
        }
        p.validate()?;
        Ok(p)
    }
}

/// Unpacks free coordinates without validation.
pub(crate) fn unpack_unchecked(theta: &[f64], k: usize) -> MixtureParams {
    let mut weights = Vec::with_capacity(k);
    weights.extend_from_slice(&theta[..k - 1]);
    weights.push(1.0 - theta[..k - 1].iter().sum::<f64>());
    MixtureParams {
        weights,
        means: theta[k - 1..2 * k - 1].to_vec(),
        variances: theta[2 * k - 1..].to_vec(),
    }
}

/// Sorts components by ascending mean, ties by ascending variance.
pub(crate) fn sort_components(
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..means.len()).collect();
    idx.sort_by(|&a, &b| {
        means[a]
            .total_cmp(&means[b])
            .then(variances[a].total_cmp(&variances[b]))
    });
    (
        idx.iter().map(|&i| weights[i]).collect(),
        idx.iter().map(|&i| means[i]).collect(),
        idx.iter().map(|&i| variances[i]).collect(),
    )
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// Chebyshev fit (Numerical Recipes `erfcc`), fractional error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
