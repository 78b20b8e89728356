//! Null distribution of the likelihood ratio statistic between two mixture
//! orders: the W matrix, its eigenvalues, and the weighted χ²₁ sum
//! Σ λ_i Z_i² evaluated by Monte Carlo.

use nalgebra::{DMatrix, Schur};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{MscsError, Result};
use crate::info::{cross_matrix, info_matrices, CrossMatrix, InfoMatrices};
use crate::linalg::right_solve;
use crate::mixture::Sample;
use crate::seed::mix_seed;

pub const DEFAULT_MC_DRAWS: usize = 200_000;
pub const MIN_MC_DRAWS: usize = 10_000;

/// Largest accepted |Im λ| / (1 + |Re λ|).
pub const MAX_IMAG_RATIO: f64 = 1e-6;

const BLOCK: usize = 4096;

/// Block matrix whose eigenvalues weight the null of 2(ℓ_{k_small} − ℓ_{k_large}).
#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    pub entries: DMatrix<f64>,
    pub k_small: usize,
    pub k_large: usize,
}

/// Assembles W from the information matrices of both fits and their cross
/// matrix `cross = C(θ_small, θ_large)`:
///
/// ```text
/// [ -B₁A₁⁻¹   -C₁₂A₂⁻¹ ]
/// [  C₂₁A₁⁻¹   B₂A₂⁻¹  ]
/// ```
pub fn build_w_from_parts(
    small: &InfoMatrices,
    large: &InfoMatrices,
    cross: &CrossMatrix,
) -> Result<WMatrix> {
    let p1 = small.a.nrows();
    let p2 = large.a.nrows();
    if cross.c.shape() != (p1, p2) {
        return Err(MscsError::InvalidConfig(format!(
            "cross matrix is {:?}, expected ({p1}, {p2})",
            cross.c.shape()
        )));
    }
    let c21 = cross.c.transpose();
    let tl = -right_solve(&small.b, &small.a, small.k)?;
    let tr = -right_solve(&cross.c, &large.a, large.k)?;
    let bl = right_solve(&c21, &small.a, small.k)?;
    let br = right_solve(&large.b, &large.a, large.k)?;
    let mut w = DMatrix::zeros(p1 + p2, p1 + p2);
    w.view_mut((0, 0), (p1, p1)).copy_from(&tl);
    w.view_mut((0, p1), (p1, p2)).copy_from(&tr);
    w.view_mut((p1, 0), (p2, p1)).copy_from(&bl);
    w.view_mut((p1, p1), (p2, p2)).copy_from(&br);
    Ok(WMatrix {
        entries: w,
        k_small: small.k,
        k_large: large.k,
    })
}

/// W for two fits on the same sample.
pub fn build_w(fit_small: &FitResult, fit_large: &FitResult, sample: &Sample) -> Result<WMatrix> {
    if fit_small.k() >= fit_large.k() {
        return Err(MscsError::InvalidConfig(format!(
            "W needs k_small < k_large, got {} and {}",
            fit_small.k(),
            fit_large.k()
        )));
    }
    let small = info_matrices(&fit_small.params, sample);
    let large = info_matrices(&fit_large.params, sample);
    let cross = cross_matrix(&fit_small.params, &fit_large.params, sample);
    build_w_from_parts(&small, &large, &cross)
}

/// Real eigenvalue weights, sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    pub lambdas: Vec<f64>,
    pub max_imag_ratio: f64,
}

impl LambdaWeights {
    pub fn new(mut lambdas: Vec<f64>) -> Self {
        lambdas.sort_by(|a, b| b.total_cmp(a));
        LambdaWeights {
            lambdas,
            max_imag_ratio: 0.0,
        }
    }

    pub fn negated(&self) -> LambdaWeights {
        let mut l = LambdaWeights::new(self.lambdas.iter().map(|x| -x).collect());
        l.max_imag_ratio = self.max_imag_ratio;
        l
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Eigenvalues of a general real square matrix. Fails when any eigenvalue
/// has a non-negligible imaginary part.
pub fn eigvals_matrix(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let dim = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MscsError::EigenFailure { dim });
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, 100_000).ok_or(MscsError::EigenFailure { dim })?;
    let eig = schur.complex_eigenvalues();
    let ratio = eig
        .iter()
        .map(|z| z.im.abs() / (1.0 + z.re.abs()))
        .fold(0.0, f64::max);
    Ok((eig.iter().map(|z| z.re).collect(), ratio))
}

pub fn eigvals(w: &WMatrix) -> Result<LambdaWeights> {
    let (re, ratio) = eigvals_matrix(&w.entries)?;
    if ratio > MAX_IMAG_RATIO {
        return Err(MscsError::NonRealSpectrum {
            k_small: w.k_small,
            k_large: w.k_large,
            max_imag_ratio: ratio,
        });
    }
    let mut l = LambdaWeights::new(re);
    l.max_imag_ratio = ratio;
    Ok(l)
}

/// Default Monte Carlo seed for a pair of orders on a sample of size n.
pub fn default_null_seed(k1: usize, k2: usize, n: usize) -> u64 {
    mix_seed(&[k1 as u64, k2 as u64, n as u64])
}

/// Monte Carlo law of Σ λ_i Z_i². One sorted replicate set backs both the
/// CDF and the quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedChiSq {
    lambdas: Vec<f64>,
    mc_draws: usize,
    seed: u64,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl WeightedChiSq {
    pub fn new(lambdas: &[f64], mc_draws: usize, seed: u64) -> Result<Self> {
        if mc_draws < MIN_MC_DRAWS {
            return Err(MscsError::InvalidConfig(format!(
                "mc_draws must be at least {MIN_MC_DRAWS}, got {mc_draws}"
            )));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(MscsError::InvalidConfig("non-finite chi-square weight".into()));
        }
        let mut sorted = vec![0.0; mc_draws];
        // Each block owns a counter-derived stream, so the replicate set does
        // not depend on how blocks are scheduled.
        for (b, chunk) in sorted.chunks_mut(BLOCK).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, b as u64]));
            for slot in chunk.iter_mut() {
                let mut acc = 0.0;
                for &l in lambdas {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    acc += l * (z * z);
                }
                *slot = acc;
            }
        }
        sorted.sort_by(f64::total_cmp);
        Ok(WeightedChiSq {
            lambdas: lambdas.to_vec(),
            mc_draws,
            seed,
            sorted,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mc_draws(&self) -> usize {
        self.mc_draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Empirical P(Σ λ_i Z_i² ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.mc_draws as f64
    }

    /// Lower-tail empirical quantile inf{x : F̂(x) ≥ α}.
    pub fn quantile(&self, alpha: f64) -> f64 {
        let m = self.mc_draws as f64;
        let rank = (alpha * m - 1e-9).ceil().max(1.0) as usize;
        self.sorted[rank.min(self.mc_draws) - 1]
    }
}

pub fn wchisq_cdf(dist: &WeightedChiSq, x: f64) -> f64 {
    dist.cdf(x)
}

pub fn wchisq_quantile(dist: &WeightedChiSq, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MscsError::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(dist.quantile(alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::InfoMatrices;
    use rand::Rng;

    #[test]
    fn w_dimension_and_identity_blocks() {
        let b1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let b2 = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 + i as f64 } else { 0.05 });
        let small = InfoMatrices { k: 1, n: 10, a: -&b1, b: b1 };
        let large = InfoMatrices { k: 2, n: 10, a: -&b2, b: b2 };
        let cross = CrossMatrix { k: 1, k_other: 2, c: DMatrix::zeros(2, 5) };
        let w = build_w_from_parts(&small, &large, &cross).unwrap();
        assert_eq!(w.entries.shape(), (7, 7));
        let mut expect = DMatrix::identity(7, 7);
        for i in 2..7 {
            expect[(i, i)] = -1.0;
        }
        assert!((&w.entries - expect).norm() < 1e-12);
    }

    #[test]
    fn diagonal_and_companion_spectra() {
        let d = WMatrix {
            entries: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0])),
            k_small: 1,
            k_large: 1,
        };
        assert_eq!(eigvals(&d).unwrap().lambdas, vec![3.0, 2.0, -1.0]);
        // x² − 5x + 6
        let c = WMatrix {
            entries: DMatrix::from_row_slice(2, 2, &[5.0, -6.0, 1.0, 0.0]),
            k_small: 1,
            k_large: 1,
        };
        let l = eigvals(&c).unwrap().lambdas;
        assert!((l[0] - 3.0).abs() < 1e-12 && (l[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_rejected() {
        let r = WMatrix {
            entries: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            k_small: 2,
            k_large: 3,
        };
        assert!(matches!(eigvals(&r), Err(MscsError::NonRealSpectrum { .. })));
    }

    #[test]
    fn similarity_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.5, -0.5, -2.0, 0.25]));
        let p = DMatrix::from_fn(5, 5, |i, j| {
            (if i == j { 3.0 } else { 0.0 }) + rng.random_range(-0.5..0.5)
        });
        let w = &p * &d * p.clone().try_inverse().unwrap();
        let (a, _) = eigvals_matrix(&d).unwrap();
        let (b, _) = eigvals_matrix(&w).unwrap();
        let mut a = a;
        let mut b = b;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn chi_square_one_oracles() {
        let d = WeightedChiSq::new(&[1.0], DEFAULT_MC_DRAWS, 1).unwrap();
        assert!((d.cdf(3.841_459) - 0.95).abs() < 0.004);
        assert!((d.quantile(0.05) - 0.003_932).abs() < 0.0008);
        let d3 = WeightedChiSq::new(&[1.0, 1.0, 1.0], DEFAULT_MC_DRAWS, 2).unwrap();
        assert!((d3.cdf(2.365_974) - 0.5).abs() < 0.005);
    }

    #[test]
    fn point_mass_at_zero() {
        let d = WeightedChiSq::new(&[0.0, 0.0], MIN_MC_DRAWS, 5).unwrap();
        assert_eq!(d.cdf(0.0), 1.0);
        assert_eq!(d.cdf(3.0), 1.0);
        assert_eq!(d.cdf(-1e-12), 0.0);
    }

    #[test]
    fn homogeneity_with_shared_draws() {
        let l = [1.3, 0.4, -0.7];
        let base = WeightedChiSq::new(&l, 50_000, 9).unwrap();
        let twice = WeightedChiSq::new(&l.map(|x| 2.0 * x), 50_000, 9).unwrap();
        for a in [0.01, 0.2, 0.5, 0.9] {
            assert_eq!(twice.quantile(a), 2.0 * base.quantile(a));
        }
        let scaled = WeightedChiSq::new(&l.map(|x| 0.37 * x), 50_000, 9).unwrap();
        for a in [0.05, 0.5] {
            let q = base.quantile(a);
            assert!((scaled.quantile(a) - 0.37 * q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn two_weight_median_matches_large_run() {
        let d = WeightedChiSq::new(&[2.0, -1.0], DEFAULT_MC_DRAWS, 3).unwrap();
        // Independent brute force with a different generator and 10⁷ draws.
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let m = 10_000_000;
        let mut v: Vec<f64> = (0..m)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                2.0 * a * a - b * b
            })
            .collect();
        let idx = m / 2 - 1;
        let (_, med, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
        assert!((d.quantile(0.5) - *med).abs() < 0.01, "{} vs {}", d.quantile(0.5), med);
    }

    #[test]
    fn rejects_small_draw_count_and_bad_alpha() {
        assert!(WeightedChiSq::new(&[1.0], 100, 0).is_err());
        let d = WeightedChiSq::new(&[1.0], MIN_MC_DRAWS, 0).unwrap();
        assert!(wchisq_quantile(&d, 0.0).is_err());
        assert!(wchisq_quantile(&d, 1.0).is_err());
    }
}
