//! Maximum-likelihood fitting of univariate Gaussian mixtures by EM.

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MscsError, Result};
use crate::mixture::{sort_components, MixtureParams, Sample, WEIGHT_FLOOR};
use crate::seed::mix_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Slack on the floor when deciding whether a variance is pinned to it.
const FLOOR_PIN_RATIO: f64 = 1.0 + 1e-6;

/// A component pinned at the floor whose effective support is below this
/// count marks its chain as degenerate.
const DEGENERATE_SUPPORT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_restarts: usize,
    /// Variance floor as a fraction of the sample variance.
    pub variance_floor_factor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            rel_tol: 1e-8,
            n_restarts: 20,
            variance_floor_factor: 1e-3,
            seed: 0x5EED,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(MscsError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(MscsError::InvalidConfig("rel_tol must be positive".into()));
        }
        if self.n_restarts == 0 {
            return Err(MscsError::InvalidConfig("n_restarts must be at least 1".into()));
        }
        if !(self.variance_floor_factor > 0.0 && self.variance_floor_factor < 0.5) {
            return Err(MscsError::InvalidConfig(
                "variance_floor_factor must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }

    pub fn variance_floor(&self, sample: &Sample) -> f64 {
        self.variance_floor_factor * sample.variance()
    }
}

/// Maximum-likelihood fit of one mixture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MixtureParams,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub n_restarts_used: usize,
    pub degenerate_restarts: usize,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.params.k()
    }
}

/// Outcome of a single EM chain.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub params: MixtureParams,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub degenerate: bool,
    /// Log-likelihood at the start of every iteration, then at the end.
    pub trace: Vec<f64>,
}

/// Posterior component probabilities, one row per observation.
pub fn responsibilities(params: &MixtureParams, sample: &Sample) -> DMatrix<f64> {
    let k = params.k();
    let mut out = DMatrix::zeros(sample.len(), k);
    let mut terms = vec![0.0; k];
    for (i, &x) in sample.values().iter().enumerate() {
        params.log_weighted_components(x, &mut terms);
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for t in terms.iter_mut() {
            *t = (*t - m).exp();
            s += *t;
        }
        for j in 0..k {
            out[(i, j)] = terms[j] / s;
        }
    }
    out
}

/// Reusable buffers for the E and M steps.
struct Workspace {
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
    terms: Vec<f64>,
    nk: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
}

impl Workspace {
    fn new(k: usize) -> Self {
        Workspace {
            log_norm: vec![0.0; k],
            inv_var: vec![0.0; k],
            terms: vec![0.0; k],
            nk: vec![0.0; k],
            sx: vec![0.0; k],
            sxx: vec![0.0; k],
        }
    }

    /// E-step: accumulates sufficient statistics and returns loglik of `params`.
    fn accumulate(&mut self, params: &MixtureParams, xs: &[f64]) -> f64 {
        let k = params.k();
        for j in 0..k {
            let v = params.variances()[j];
            self.log_norm[j] = params.weights()[j].ln() - 0.5 * (LN_2PI + v.ln());
            self.inv_var[j] = 1.0 / v;
        }
        self.nk.iter_mut().for_each(|v| *v = 0.0);
        self.sx.iter_mut().for_each(|v| *v = 0.0);
        self.sxx.iter_mut().for_each(|v| *v = 0.0);
        let means = params.means();
        let mut ll = 0.0;
        for &x in xs {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                let d = x - means[j];
                let t = self.log_norm[j] - 0.5 * d * d * self.inv_var[j];
                self.terms[j] = t;
                if t > m {
                    m = t;
                }
            }
            let mut s = 0.0;
            for t in self.terms.iter_mut() {
                *t = (*t - m).exp();
                s += *t;
            }
            ll += m + s.ln();
            let inv_s = 1.0 / s;
            for j in 0..k {
                let r = self.terms[j] * inv_s;
                let d = x - means[j];
                self.nk[j] += r;
                self.sx[j] += r * d;
                self.sxx[j] += r * d * d;
            }
        }
        // Moments were centred on the current means; shift to the new ones.
        let mut new_means = vec![0.0; k];
        for j in 0..k {
            if self.nk[j] > 0.0 {
                let shift = self.sx[j] / self.nk[j];
                new_means[j] = means[j] + shift;
                self.sxx[j] -= self.nk[j] * shift * shift;
                self.sxx[j] = self.sxx[j].max(0.0);
            } else {
                new_means[j] = means[j];
            }
        }
        self.sx.copy_from_slice(&new_means);
        ll
    }

    fn m_step(&self, params: &MixtureParams, n: usize, floor: f64) -> MixtureParams {
        let k = params.k();
        let n = n as f64;
        let weights: Vec<f64> = self.nk.iter().map(|c| c / n).collect();
        let variances: Vec<f64> = (0..k)
            .map(|j| {
                if self.nk[j] > 0.0 {
                    (self.sxx[j] / self.nk[j]).max(floor)
                } else {
                    params.variances()[j].max(floor)
                }
            })
            .collect();
        assemble(weights, self.sx.clone(), variances, floor)
    }
}

/// Normalises and clamps weights, floors variances, relabels by ascending
/// mean and separates exact mean ties so the ordering stays strict.
fn assemble(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, floor: f64) -> MixtureParams {
    let k = weights.len();
    let variances: Vec<f64> = variances.into_iter().map(|v| v.max(floor)).collect();
    let weights = clamp_weights(weights);
    let (w, mut m, v) = sort_components(weights, means, variances);
    for j in 1..k {
        if m[j] <= m[j - 1] {
            m[j] = m[j - 1].next_up();
        }
    }
    MixtureParams::new_unchecked(w, m, v)
}

fn clamp_weights(mut w: Vec<f64>) -> Vec<f64> {
    let k = w.len();
    if k == 1 {
        return vec![1.0];
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let low: Vec<bool> = w.iter().map(|&x| x < WEIGHT_FLOOR).collect();
    let n_low = low.iter().filter(|&&b| b).count();
    if n_low > 0 {
        let free: f64 = w.iter().zip(&low).filter(|(_, &l)| !l).map(|(x, _)| x).sum();
        let target = 1.0 - n_low as f64 * WEIGHT_FLOOR;
        for (x, &l) in w.iter_mut().zip(&low) {
            *x = if l { WEIGHT_FLOOR } else { *x * target / free };
        }
    }
    // Put the rounding residue on the largest weight.
    let resid = 1.0 - w.iter().sum::<f64>();
    let jmax = (0..k).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    w[jmax] += resid;
    w
}

/// One EM iteration: E-step responsibilities, M-step updates with the
/// variance floor, then relabelling to ascending means.
pub fn em_step(params: &MixtureParams, sample: &Sample, floor: f64) -> MixtureParams {
    let mut ws = Workspace::new(params.k());
    ws.accumulate(params, sample.values());
    ws.m_step(params, sample.len(), floor)
}

/// Iterates EM from `init` until the relative loglik change drops below
/// `rel_tol` or `max_iter` iterations have run.
pub fn run_chain(
    init: MixtureParams,
    sample: &Sample,
    floor: f64,
    max_iter: usize,
    rel_tol: f64,
) -> ChainOutcome {
    let k = init.k();
    let xs = sample.values();
    let mut ws = Workspace::new(k);
    let mut params = init;
    let mut trace = Vec::with_capacity(max_iter.min(64) + 1);
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < max_iter {
        let ll = ws.accumulate(&params, xs);
        trace.push(ll);
        if n_iter > 0 && (ll - prev).abs() <= rel_tol * prev.abs() {
            converged = true;
            break;
        }
        prev = ll;
        params = ws.m_step(&params, xs.len(), floor);
        n_iter += 1;
    }
    let loglik = params.loglik(sample);
    if !converged {
        trace.push(loglik);
    }
    let degenerate = is_degenerate(&params, sample, floor);
    ChainOutcome {
        params,
        loglik,
        n_iter,
        converged,
        degenerate,
        trace,
    }
}

fn is_degenerate(params: &MixtureParams, sample: &Sample, floor: f64) -> bool {
    let pinned: Vec<usize> = (0..params.k())
        .filter(|&j| params.variances()[j] <= floor * FLOOR_PIN_RATIO)
        .collect();
    if pinned.is_empty() {
        return false;
    }
    let resp = responsibilities(params, sample);
    pinned
        .iter()
        .any(|&j| resp.column(j).sum() < DEGENERATE_SUPPORT)
}

fn closed_form_single(sample: &Sample) -> MixtureParams {
    MixtureParams::new_unchecked(vec![1.0], vec![sample.mean()], vec![sample.variance()])
}

/// k-means++ seeding followed by hard assignment to the nearest centre.
fn kmeanspp_init(sorted: &[f64], k: usize, floor: f64, rng: &mut ChaCha8Rng) -> MixtureParams {
    let n = sorted.len();
    let mut centres = vec![sorted[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = sorted.iter().map(|x| (x - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > u {
                    pick = i;
                    break;
                }
            }
            sorted[pick]
        } else {
            sorted[rng.random_range(0..n)]
        };
        centres.push(next);
        for (d, x) in d2.iter_mut().zip(sorted) {
            *d = d.min((x - next).powi(2));
        }
    }
    let mut count = vec![0.0; k];
    let mut sum = vec![0.0; k];
    let mut sumsq = vec![0.0; k];
    for &x in sorted {
        let j = (0..k)
            .min_by(|&a, &b| (x - centres[a]).abs().total_cmp(&(x - centres[b]).abs()))
            .unwrap_or(0);
        count[j] += 1.0;
        sum[j] += x;
        sumsq[j] += x * x;
    }
    let overall = variance_of(sorted);
    let mut means = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    for j in 0..k {
        if count[j] >= 2.0 {
            let m = sum[j] / count[j];
            means.push(m);
            vars.push((sumsq[j] / count[j] - m * m).max(floor));
        } else if count[j] == 1.0 {
            means.push(sum[j]);
            vars.push(overall / k as f64);
        } else {
            means.push(centres[j]);
            vars.push(overall / k as f64);
        }
    }
    let weights: Vec<f64> = count.iter().map(|c| c.max(0.5) / n as f64).collect();
    assemble(weights, means, vars, floor)
}

/// Means at jittered random sample quantiles, pooled variance, equal weights.
fn random_init(sorted: &[f64], k: usize, floor: f64, rng: &mut ChaCha8Rng) -> MixtureParams {
    let n = sorted.len();
    let var = variance_of(sorted);
    let sd = var.sqrt();
    let means: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            let q = sorted[((u * n as f64) as usize).min(n - 1)];
            let z: f64 = rng.sample(StandardNormal);
            q + 0.1 * sd * z
        })
        .collect();
    assemble(vec![1.0; k], means, vec![var; k], floor)
}

/// Splits the component with the largest π·σ² of a (k-1)-fit into two,
/// preserving its first two moments.
fn split_init(parent: &MixtureParams, floor: f64) -> MixtureParams {
    let j = (0..parent.k())
        .max_by(|&a, &b| {
            let sa = parent.weights()[a] * parent.variances()[a];
            let sb = parent.weights()[b] * parent.variances()[b];
            sa.total_cmp(&sb)
        })
        .unwrap_or(0);
    let (w, m, v) = (
        parent.weights()[j],
        parent.means()[j],
        parent.variances()[j],
    );
    let offset = 0.5 * v.sqrt();
    let mut weights = parent.weights().to_vec();
    let mut means = parent.means().to_vec();
    let mut vars = parent.variances().to_vec();
    weights[j] = w / 2.0;
    means[j] = m - offset;
    vars[j] = v * 0.75;
    weights.push(w / 2.0);
    means.push(m + offset);
    vars.push(v * 0.75);
    assemble(weights, means, vars, floor)
}

/// Embeds a (k-1)-fit exactly into k components by duplicating its widest
/// component with half the weight each.
fn embed_init(parent: &MixtureParams, floor: f64) -> MixtureParams {
    let j = (0..parent.k())
        .max_by(|&a, &b| parent.weights()[a].total_cmp(&parent.weights()[b]))
        .unwrap_or(0);
    let mut weights = parent.weights().to_vec();
    let mut means = parent.means().to_vec();
    let mut vars = parent.variances().to_vec();
    weights[j] /= 2.0;
    weights.push(weights[j]);
    means.push(means[j]);
    vars.push(vars[j]);
    assemble(weights, means, vars, floor)
}

fn variance_of(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn check_size(sample: &Sample, k: usize) -> Result<()> {
    if k == 0 {
        return Err(MscsError::InvalidConfig("order must be at least 1".into()));
    }
    if sample.len() < 3 * k {
        return Err(MscsError::InsufficientData {
            n: sample.len(),
            k,
            needed: 3 * k,
        });
    }
    Ok(())
}

/// Fits a k-component mixture. For k ≥ 2 the (k-1)-fit is computed first
/// to seed the split restart.
pub fn fit(sample: &Sample, k: usize, config: &EmConfig) -> Result<FitResult> {
    check_size(sample, k)?;
    let mut path = fit_path(sample, k, config)?;
    Ok(path.pop().expect("fit_path returns k fits"))
}

/// Fits every order 1..=k_max, each seeded from the previous one.
pub fn fit_path(sample: &Sample, k_max: usize, config: &EmConfig) -> Result<Vec<FitResult>> {
    check_size(sample, k_max)?;
    let mut fits: Vec<FitResult> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let f = fit_with_parent(sample, k, config, fits.last())?;
        fits.push(f);
    }
    Ok(fits)
}

/// Fits order k; `parent` (the (k-1)-fit) seeds restart 1 when present.
pub fn fit_with_parent(
    sample: &Sample,
    k: usize,
    config: &EmConfig,
    parent: Option<&FitResult>,
) -> Result<FitResult> {
    config.validate()?;
    check_size(sample, k)?;
    if let Some(p) = parent {
        if p.k() + 1 != k {
            return Err(MscsError::InvalidConfig(format!(
                "parent fit has order {}, expected {}",
                p.k(),
                k - 1
            )));
        }
    }
    if k == 1 {
        let params = closed_form_single(sample);
        let loglik = params.loglik(sample);
        return Ok(FitResult {
            params,
            loglik,
            n_iter: 1,
            converged: true,
            n_restarts_used: config.n_restarts,
            degenerate_restarts: 0,
        });
    }

    let floor = config.variance_floor(sample);
    let sorted = sample.sorted();
    let mut chains: Vec<ChainOutcome> = Vec::with_capacity(config.n_restarts);
    for r in 0..config.n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, k as u64, r as u64]));
        let init = match (r, parent) {
            (0, _) => kmeanspp_init(&sorted, k, floor, &mut rng),
            (1, Some(p)) => split_init(&p.params, floor),
            _ => random_init(&sorted, k, floor, &mut rng),
        };
        chains.push(run_chain(init, sample, floor, config.max_iter, config.rel_tol));
    }

    if let Some(p) = parent {
        let best_ok = chains
            .iter()
            .filter(|c| !c.degenerate)
            .map(|c| c.loglik)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_ok < p.loglik {
            debug!("order {k}: restarts below parent loglik, adding embedded chain");
            let init = embed_init(&p.params, floor);
            chains.push(run_chain(init, sample, floor, config.max_iter, config.rel_tol));
        }
    }

    let degenerate_restarts = chains.iter().filter(|c| c.degenerate).count();
    let all_degenerate = degenerate_restarts == chains.len();
    let best = chains
        .iter()
        .enumerate()
        .filter(|(_, c)| all_degenerate || !c.degenerate)
        .max_by(|(ia, a), (ib, b)| a.loglik.total_cmp(&b.loglik).then(ib.cmp(ia)))
        .map(|(_, c)| c)
        .expect("at least one chain");
    Ok(FitResult {
        params: best.params.clone(),
        loglik: best.loglik,
        n_iter: best.n_iter,
        converged: best.converged && !all_degenerate,
        n_restarts_used: chains.len(),
        degenerate_restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn density1() -> MixtureParams {
        MixtureParams::new(vec![0.75, 0.25], vec![0.0, 1.37], vec![0.83, 0.09]).unwrap()
    }

    fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn single_component_responsibilities_are_one() {
        let p = MixtureParams::new(vec![1.0], vec![0.0], vec![2.0]).unwrap();
        let s = Sample::new(vec![-3.0, 0.0, 9.0]).unwrap();
        let r = responsibilities(&p, &s);
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn separated_components() {
        let p = MixtureParams::new(vec![0.5, 0.5], vec![-100.0, 100.0], vec![1.0, 1.0]).unwrap();
        let s = Sample::new(vec![-100.0]).unwrap();
        let r = responsibilities(&p, &s);
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(r[(0, 1)] < 1e-12);
    }

    #[test]
    fn bayes_rule_oracle() {
        let p = density1();
        let s = Sample::new(vec![1.37, -0.4, 2.0]).unwrap();
        let r = responsibilities(&p, &s);
        for (i, &x) in s.values().iter().enumerate() {
            let a = 0.75 * normal_pdf(x, 0.0, 0.83);
            let b = 0.25 * normal_pdf(x, 1.37, 0.09);
            assert_relative_eq!(r[(i, 0)], a / (a + b), max_relative = 1e-12);
            assert_relative_eq!(r[(i, 1)], b / (a + b), max_relative = 1e-12);
            assert!((r.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_component_step_is_closed_form() {
        let s = Sample::new(vec![1.0, 2.0, 4.0, 7.0]).unwrap();
        let p = MixtureParams::new(vec![1.0], vec![-5.0], vec![0.1]).unwrap();
        let q = em_step(&p, &s, 1e-6);
        assert_relative_eq!(q.means()[0], 3.5, max_relative = 1e-15);
        assert_relative_eq!(q.variances()[0], s.variance(), max_relative = 1e-12);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let s = density1().sample(500, 9).unwrap();
        let floor = 1e-3 * s.variance();
        let mut p = density1();
        for _ in 0..200_000 {
            let q = em_step(&p, &s, floor);
            let moved = p
                .pack()
                .as_slice()
                .iter()
                .zip(q.pack().as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            p = q;
            if moved < 1e-13 {
                break;
            }
        }
        let again = em_step(&p, &s, floor);
        for (a, b) in p.pack().as_slice().iter().zip(again.pack().as_slice()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn ascent_holds_for_an_arbitrary_start() {
        let s = density1().sample(300, 5).unwrap();
        let p = MixtureParams::new(vec![0.3, 0.7], vec![-2.0, 3.0], vec![4.0, 0.5]).unwrap();
        let q = em_step(&p, &s, 1e-4);
        assert!(q.loglik(&s) >= p.loglik(&s) - 1e-9);
    }

    #[test]
    fn fit_rejects_small_samples() {
        let s = Sample::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(matches!(
            fit(&s, 2, &EmConfig::default()),
            Err(MscsError::InsufficientData { n: 5, k: 2, needed: 6 })
        ));
    }

    #[test]
    fn fit_output_is_valid_and_canonical() {
        let s = density1().sample(400, 77).unwrap();
        let cfg = EmConfig {
            n_restarts: 5,
            ..EmConfig::default()
        };
        let fits = fit_path(&s, 4, &cfg).unwrap();
        let floor = cfg.variance_floor(&s);
        for f in &fits {
            f.params.validate().unwrap();
            assert!(f.params.variances().iter().all(|&v| v >= floor));
            let re = f.params.loglik(&s);
            assert!((f.loglik - re).abs() <= 1e-9 * re.abs());
        }
        for w in fits.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-6);
        }
    }

    #[test]
    fn clamp_keeps_floor_and_unit_sum() {
        let w = clamp_weights(vec![1.0, 1e-12, 2.0]);
        assert_eq!(w[1], WEIGHT_FLOOR);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedded_start_reproduces_parent_loglik() {
        let s = density1().sample(200, 1).unwrap();
        let p = density1();
        let e = embed_init(&p, 1e-6);
        assert_eq!(e.k(), 3);
        e.validate().unwrap();
        assert!((e.loglik(&s) - p.loglik(&s)).abs() < 1e-9);
    }
}
