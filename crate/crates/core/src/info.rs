//! Per-observation scores and Hessians of log f(x; θ) in the free
//! parameterisation, their sample averages, and the TIC effective number of
//! parameters.
//!
//! All sample averages are reduced in index order.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{guarded_solve, symmetrize};
use crate::mixture::{free_param_count, unpack_unchecked, MixtureParams, Sample};

/// Sample-average Hessian (`a`) and score outer product (`b`) of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrices {
    pub k: usize,
    pub n: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Sample-average cross product of scores of two fits, `p_k × p_k'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMatrix {
    pub k: usize,
    pub k_other: usize,
    pub c: DMatrix<f64>,
}

impl CrossMatrix {
    /// C(θ_k', θ_k) from C(θ_k, θ_k').
    pub fn transposed(&self) -> CrossMatrix {
        CrossMatrix {
            k: self.k_other,
            k_other: self.k,
            c: self.c.transpose(),
        }
    }
}

/// Analytic gradient of log f(x; θ) written into `out` (length 3k−1).
pub fn score_into(params: &MixtureParams, x: f64, out: &mut [f64]) {
    let k = params.k();
    let mut r = vec![0.0; k];
    params.log_weighted_components(x, &mut r);
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for t in r.iter_mut() {
        *t = (*t - m).exp();
        s += *t;
    }
    r.iter_mut().for_each(|t| *t /= s);

    let w = params.weights();
    let mu = params.means();
    let var = params.variances();
    // r_j / π_j = φ_j / f.
    let last = r[k - 1] / w[k - 1];
    for j in 0..k - 1 {
        out[j] = r[j] / w[j] - last;
    }
    for j in 0..k {
        let d = x - mu[j];
        out[k - 1 + j] = r[j] * d / var[j];
        out[2 * k - 1 + j] = r[j] * (d * d - var[j]) / (2.0 * var[j] * var[j]);
    }
}

pub fn score(params: &MixtureParams, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; params.free_param_count()];
    score_into(params, x, &mut out);
    out
}

/// Hessian of log f(x; θ) by central differences of the analytic score,
/// symmetrised.
pub fn hessian_logf(params: &MixtureParams, x: f64) -> DMatrix<f64> {
    let k = params.k();
    let p = free_param_count(k);
    let theta = params.pack().as_slice().to_vec();
    let h_base = f64::EPSILON.cbrt();
    let mut hess = DMatrix::zeros(p, p);
    let mut plus = vec![0.0; p];
    let mut minus = vec![0.0; p];
    let mut probe = theta.clone();
    for i in 0..p {
        let h = h_base * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        score_into(&unpack_unchecked(&probe, k), x, &mut plus);
        probe[i] = theta[i] - h;
        score_into(&unpack_unchecked(&probe, k), x, &mut minus);
        probe[i] = theta[i];
        for r in 0..p {
            hess[(r, i)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    symmetrize(&mut hess);
    hess
}

/// Sample averages of the Hessian and score outer product.
pub fn info_matrices(params: &MixtureParams, sample: &Sample) -> InfoMatrices {
    let p = params.free_param_count();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut s = vec![0.0; p];
    for &x in sample.values() {
        a += hessian_logf(params, x);
        score_into(params, x, &mut s);
        for c in 0..p {
            for r in 0..p {
                b[(r, c)] += s[r] * s[c];
            }
        }
    }
    let n = sample.len() as f64;
    a /= n;
    b /= n;
    InfoMatrices {
        k: params.k(),
        n: sample.len(),
        a,
        b,
    }
}

/// Sample average of score(θ₁)·score(θ₂)ᵀ.
pub fn cross_matrix(params1: &MixtureParams, params2: &MixtureParams, sample: &Sample) -> CrossMatrix {
    let p1 = params1.free_param_count();
    let p2 = params2.free_param_count();
    let mut c = DMatrix::zeros(p1, p2);
    let mut s1 = vec![0.0; p1];
    let mut s2 = vec![0.0; p2];
    for &x in sample.values() {
        score_into(params1, x, &mut s1);
        score_into(params2, x, &mut s2);
        for col in 0..p2 {
            for row in 0..p1 {
                c[(row, col)] += s1[row] * s2[col];
            }
        }
    }
    c /= sample.len() as f64;
    CrossMatrix {
        k: params1.k(),
        k_other: params2.k(),
        c,
    }
}

/// tr{(−A)⁻¹ B} from precomputed matrices.
pub fn tic_from_info(info: &InfoMatrices) -> Result<f64> {
    let neg_a = -&info.a;
    let x = guarded_solve(&neg_a, &info.b, info.k)?;
    Ok(x.trace())
}

/// TIC effective number of parameters at `params`.
pub fn tic_effective_params(params: &MixtureParams, sample: &Sample) -> Result<f64> {
    tic_from_info(&info_matrices(params, sample))
}
