//! Reference-order selection, penalised likelihood ratio screening, and
//! assembly of the model selection confidence set.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::em::{fit_with_parent, EmConfig, FitResult};
use crate::error::{MscsError, Result};
use crate::info::{cross_matrix, info_matrices, tic_from_info, InfoMatrices};
use crate::mixture::{free_param_count, Sample};
use crate::null_dist::{
    build_w_from_parts, eigvals, LambdaWeights, WeightedChiSq, DEFAULT_MC_DRAWS,
};
use crate::seed::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Aic,
    Bic,
    Tic,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::Aic => "aic",
            PenaltyKind::Bic => "bic",
            PenaltyKind::Tic => "tic",
        })
    }
}

impl FromStr for PenaltyKind {
    type Err = MscsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(PenaltyKind::Aic),
            "bic" => Ok(PenaltyKind::Bic),
            "tic" => Ok(PenaltyKind::Tic),
            other => Err(MscsError::InvalidConfig(format!(
                "unknown penalty '{other}' (expected aic, bic or tic)"
            ))),
        }
    }
}

/// Where a candidate order sits relative to the reference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Smaller,
    Reference,
    Larger,
}

/// One screening comparison of a candidate order against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub k: usize,
    pub side: Side,
    /// 2(ℓ_k − ℓ_k̂).
    pub lrt: f64,
    pub delta: f64,
    /// Penalty actually used for `delta`; differs from the requested one
    /// after a TIC fallback.
    pub penalty_used: PenaltyKind,
    pub lrt_star: f64,
    pub lambdas: LambdaWeights,
    pub q_alpha: Option<f64>,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MscsOptions {
    pub k_max: usize,
    pub alpha: f64,
    /// Penalty δ_n inside the screening statistic.
    pub penalty: PenaltyKind,
    /// Criterion used to pick the reference order.
    pub ref_kind: PenaltyKind,
    pub em: EmConfig,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for MscsOptions {
    fn default() -> Self {
        MscsOptions {
            k_max: 8,
            alpha: 0.05,
            penalty: PenaltyKind::Tic,
            ref_kind: PenaltyKind::Bic,
            em: EmConfig::default(),
            mc_draws: DEFAULT_MC_DRAWS,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MscsResult {
    pub k_hat: usize,
    pub k_lower: usize,
    pub k_upper: usize,
    pub gamma: Vec<usize>,
    /// One record per order 1..=k_max, in order.
    pub records: Vec<TestRecord>,
    pub alpha: f64,
    pub penalty: PenaltyKind,
    pub ref_kind: PenaltyKind,
    /// Reference criterion for orders 1..=k_max (infinite when unavailable).
    pub criterion_values: Vec<f64>,
    pub k_max: usize,
    pub fits: Vec<FitResult>,
    pub warnings: Vec<String>,
}

impl MscsResult {
    pub fn contains(&self, k: usize) -> bool {
        (self.k_lower..=self.k_upper).contains(&k)
    }

    pub fn size(&self) -> usize {
        self.k_upper - self.k_lower + 1
    }
}

/// Fit-level quantities reused across every comparison.
struct FitSummary {
    info: InfoMatrices,
    tic: Result<f64>,
}

impl FitSummary {
    fn new(fit: &FitResult, sample: &Sample) -> Self {
        let info = info_matrices(&fit.params, sample);
        let tic = tic_from_info(&info);
        FitSummary { info, tic }
    }
}

fn criterion_from(fit: &FitResult, kind: PenaltyKind, n: usize, tic: impl FnOnce() -> Result<f64>) -> Result<f64> {
    let p = free_param_count(fit.k()) as f64;
    let complexity = match kind {
        PenaltyKind::Aic => 2.0 * p,
        PenaltyKind::Bic => p * (n as f64).ln(),
        PenaltyKind::Tic => 2.0 * tic()?,
    };
    Ok(-2.0 * fit.loglik + complexity)
}

/// Information criterion of one fit; smaller is better.
pub fn criterion_value(fit: &FitResult, kind: PenaltyKind, sample: &Sample) -> Result<f64> {
    criterion_from(fit, kind, sample.len(), || {
        tic_from_info(&info_matrices(&fit.params, sample))
    })
}

/// Index (1-based order) of the smallest value; ties go to the smaller order.
pub fn argmin_order(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best + 1
}

/// Order minimising the criterion over `fits` (assumed to be orders 1..=len).
pub fn select_reference(fits: &[FitResult], kind: PenaltyKind, sample: &Sample) -> Result<usize> {
    if fits.is_empty() {
        return Err(MscsError::NoFit("no candidate fits".into()));
    }
    let values: Vec<f64> = fits
        .iter()
        .map(|f| criterion_value(f, kind, sample).unwrap_or(f64::INFINITY))
        .collect();
    Ok(argmin_order(&values))
}

fn delta_from(kind: PenaltyKind, k_ref: usize, k: usize, n: usize, tic_ref: &Result<f64>, tic_k: &Result<f64>) -> Result<f64> {
    if k == k_ref {
        return Ok(0.0);
    }
    let dp = free_param_count(k) as f64 - free_param_count(k_ref) as f64;
    match kind {
        PenaltyKind::Aic => Ok(2.0 * dp),
        PenaltyKind::Bic => Ok((n as f64).ln() * dp),
        PenaltyKind::Tic => {
            let a = tic_k.clone()?;
            let b = tic_ref.clone()?;
            Ok(2.0 * (a - b))
        }
    }
}

/// Penalty δ_n(k̂, k) between the reference fit and a candidate fit.
pub fn delta_n(kind: PenaltyKind, fit_ref: &FitResult, fit_k: &FitResult, sample: &Sample) -> Result<f64> {
    let tic = |f: &FitResult| tic_from_info(&info_matrices(&f.params, sample));
    let (tr, tk) = if kind == PenaltyKind::Tic && fit_ref.k() != fit_k.k() {
        (tic(fit_ref), tic(fit_k))
    } else {
        (Ok(0.0), Ok(0.0))
    };
    delta_from(kind, fit_ref.k(), fit_k.k(), sample.len(), &tr, &tk)
}

/// Seed of the Monte Carlo null for comparing `k` against `k_ref`.
pub fn comparison_seed(seed: u64, k_ref: usize, k: usize, n: usize) -> u64 {
    mix_seed(&[seed, k_ref as u64, k as u64, n as u64])
}

/// Everything about a comparison that does not depend on α.
#[derive(Debug, Clone)]
struct PreparedScreen {
    k: usize,
    side: Side,
    lrt: f64,
    delta: f64,
    penalty_used: PenaltyKind,
    lambdas: LambdaWeights,
    null: Option<WeightedChiSq>,
    diagnostic: Option<String>,
}

impl PreparedScreen {
    fn reference(k: usize) -> Self {
        PreparedScreen {
            k,
            side: Side::Reference,
            lrt: 0.0,
            delta: 0.0,
            penalty_used: PenaltyKind::Aic,
            lambdas: LambdaWeights::new(Vec::new()),
            null: None,
            diagnostic: None,
        }
    }

    fn record(&self, alpha: f64) -> TestRecord {
        let lrt_star = self.lrt - self.delta;
        let q_alpha = self.null.as_ref().map(|d| d.quantile(alpha));
        let pass = match self.side {
            Side::Reference => true,
            _ => q_alpha.is_some_and(|q| lrt_star > q),
        };
        TestRecord {
            k: self.k,
            side: self.side,
            lrt: self.lrt,
            delta: self.delta,
            penalty_used: self.penalty_used,
            lrt_star,
            lambdas: self.lambdas.clone(),
            q_alpha,
            pass,
            diagnostic: self.diagnostic.clone(),
        }
    }
}

/// Null weights for LRT(k̂, k) = 2(ℓ_k − ℓ_k̂).
///
/// The spectrum of W for the ordered pair (small, large) is the limit law of
/// 2(ℓ_small − ℓ_large). For a larger candidate the statistic is the
/// negation of that quantity; for a smaller one it coincides with it.
fn null_weights(side: Side, w_spectrum: LambdaWeights) -> LambdaWeights {
    match side {
        Side::Larger => w_spectrum.negated(),
        _ => w_spectrum,
    }
}

#[allow(clippy::too_many_arguments)]
fn prepare_screen(
    fit_ref: &FitResult,
    sum_ref: &FitSummary,
    fit_k: &FitResult,
    sum_k: &FitSummary,
    sample: &Sample,
    kind: PenaltyKind,
    mc_draws: usize,
    mc_seed: u64,
) -> PreparedScreen {
    let (k_ref, k) = (fit_ref.k(), fit_k.k());
    let side = if k < k_ref { Side::Smaller } else { Side::Larger };
    let lrt = 2.0 * (fit_k.loglik - fit_ref.loglik);
    let mut notes = Vec::new();

    let (delta, penalty_used) =
        match delta_from(kind, k_ref, k, sample.len(), &sum_ref.tic, &sum_k.tic) {
            Ok(d) => (d, kind),
            Err(e) => {
                warn!("order {k} vs {k_ref}: TIC unavailable ({e}); falling back to AIC");
                notes.push(format!("TIC fallback to AIC: {e}"));
                let d = delta_from(PenaltyKind::Aic, k_ref, k, sample.len(), &Ok(0.0), &Ok(0.0))
                    .expect("AIC penalty is infallible");
                (d, PenaltyKind::Aic)
            }
        };

    let (small_fit, small, large_fit, large) = if k < k_ref {
        (fit_k, sum_k, fit_ref, sum_ref)
    } else {
        (fit_ref, sum_ref, fit_k, sum_k)
    };
    let cross = cross_matrix(&small_fit.params, &large_fit.params, sample);
    let spectrum = build_w_from_parts(&small.info, &large.info, &cross).and_then(|w| eigvals(&w));
    let (lambdas, null) = match spectrum {
        Ok(l) => {
            let l = null_weights(side, l);
            match WeightedChiSq::new(&l.lambdas, mc_draws, mc_seed) {
                Ok(d) => (l, Some(d)),
                Err(e) => {
                    notes.push(e.to_string());
                    (l, None)
                }
            }
        }
        Err(e) => {
            warn!("order {k} vs {k_ref}: null distribution unavailable ({e})");
            notes.push(e.to_string());
            (LambdaWeights::new(Vec::new()), None)
        }
    };
    PreparedScreen {
        k,
        side,
        lrt,
        delta,
        penalty_used,
        lambdas,
        null,
        diagnostic: if notes.is_empty() {
            None
        } else {
            Some(notes.join("; "))
        },
    }
}

/// Screens `fit_k` against the reference `fit_ref` at level α.
pub fn screen(
    fit_ref: &FitResult,
    fit_k: &FitResult,
    sample: &Sample,
    alpha: f64,
    kind: PenaltyKind,
    mc_seed: u64,
) -> Result<TestRecord> {
    screen_with_draws(fit_ref, fit_k, sample, alpha, kind, mc_seed, DEFAULT_MC_DRAWS)
}

pub fn screen_with_draws(
    fit_ref: &FitResult,
    fit_k: &FitResult,
    sample: &Sample,
    alpha: f64,
    kind: PenaltyKind,
    mc_seed: u64,
    mc_draws: usize,
) -> Result<TestRecord> {
    check_alpha(alpha)?;
    if fit_ref.k() == fit_k.k() {
        return Err(MscsError::InvalidConfig(
            "candidate order equals the reference order".into(),
        ));
    }
    let sr = FitSummary::new(fit_ref, sample);
    let sk = FitSummary::new(fit_k, sample);
    Ok(prepare_screen(fit_ref, &sr, fit_k, &sk, sample, kind, mc_draws, mc_seed).record(alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(MscsError::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Fits, reference order and α-free screening material for one sample.
/// Evaluating several α on one plan shares fits and null draws, so the
/// resulting sets are nested.
pub struct ScreeningPlan {
    options: MscsOptions,
    k_max: usize,
    k_hat: usize,
    fits: Vec<FitResult>,
    criterion_values: Vec<f64>,
    screens: Vec<PreparedScreen>,
    warnings: Vec<String>,
}

impl ScreeningPlan {
    pub fn prepare(sample: &Sample, options: &MscsOptions) -> Result<Self> {
        options.em.validate()?;
        check_alpha(options.alpha)?;
        if options.k_max == 0 {
            return Err(MscsError::InvalidConfig("k_max must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        let n = sample.len();
        let cap = n / 3;
        if cap == 0 {
            return Err(MscsError::NoFit(format!("{n} observations are too few")));
        }
        let mut k_max = options.k_max;
        if k_max > cap {
            let msg = format!("k_max {k_max} capped to {cap} for n = {n}");
            warn!("{msg}");
            warnings.push(msg);
            k_max = cap;
        }

        let mut fits: Vec<FitResult> = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            match fit_with_parent(sample, k, &options.em, fits.last()) {
                Ok(f) => fits.push(f),
                Err(e) => {
                    let msg = format!("fitting stopped at order {k}: {e}");
                    warn!("{msg}");
                    warnings.push(msg);
                    break;
                }
            }
        }
        if fits.is_empty() {
            return Err(MscsError::NoFit("order 1 could not be fitted".into()));
        }
        let k_max = fits.len();

        let summaries: Vec<FitSummary> = fits.iter().map(|f| FitSummary::new(f, sample)).collect();
        let criterion_values: Vec<f64> = fits
            .iter()
            .zip(&summaries)
            .map(|(f, s)| {
                criterion_from(f, options.ref_kind, n, || s.tic.clone()).unwrap_or(f64::INFINITY)
            })
            .collect();
        let k_hat = argmin_order(&criterion_values);

        let screens = (1..=k_max)
            .map(|k| {
                if k == k_hat {
                    PreparedScreen::reference(k)
                } else {
                    prepare_screen(
                        &fits[k_hat - 1],
                        &summaries[k_hat - 1],
                        &fits[k - 1],
                        &summaries[k - 1],
                        sample,
                        options.penalty,
                        options.mc_draws,
                        comparison_seed(options.seed, k_hat, k, n),
                    )
                }
            })
            .collect();
        Ok(ScreeningPlan {
            options: *options,
            k_max,
            k_hat,
            fits,
            criterion_values,
            screens,
            warnings,
        })
    }

    pub fn k_hat(&self) -> usize {
        self.k_hat
    }

    pub fn fits(&self) -> &[FitResult] {
        &self.fits
    }

    /// The confidence set at level α.
    pub fn at_alpha(&self, alpha: f64) -> Result<MscsResult> {
        check_alpha(alpha)?;
        let records: Vec<TestRecord> = self.screens.iter().map(|s| s.record(alpha)).collect();
        let k_hat = self.k_hat;
        let k_lower = records
            .iter()
            .filter(|r| r.side == Side::Smaller && r.pass)
            .map(|r| r.k)
            .min()
            .unwrap_or(k_hat);
        let k_upper = records
            .iter()
            .filter(|r| r.side == Side::Larger && r.pass)
            .map(|r| r.k)
            .max()
            .unwrap_or(k_hat);
        Ok(MscsResult {
            k_hat,
            k_lower,
            k_upper,
            gamma: (k_lower..=k_upper).collect(),
            records,
            alpha,
            penalty: self.options.penalty,
            ref_kind: self.options.ref_kind,
            criterion_values: self.criterion_values.clone(),
            k_max: self.k_max,
            fits: self.fits.clone(),
            warnings: self.warnings.clone(),
        })
    }
}

/// Fits orders 1..=k_max, selects k̂ and returns the confidence set.
pub fn build_mscs(sample: &Sample, options: &MscsOptions) -> Result<MscsResult> {
    ScreeningPlan::prepare(sample, options)?.at_alpha(options.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::fit_path;
    use crate::mixture::MixtureParams;

    fn density1() -> MixtureParams {
        MixtureParams::new(vec![0.75, 0.25], vec![0.0, 1.37], vec![0.83, 0.09]).unwrap()
    }

    fn quick_options() -> MscsOptions {
        MscsOptions {
            k_max: 4,
            em: EmConfig {
                n_restarts: 4,
                ..EmConfig::default()
            },
            mc_draws: 20_000,
            ..MscsOptions::default()
        }
    }

    #[test]
    fn bic_of_single_gaussian() {
        let s = density1().sample(100, 1).unwrap();
        let f = crate::em::fit(&s, 1, &EmConfig::default()).unwrap();
        let v = criterion_value(&f, PenaltyKind::Bic, &s).unwrap();
        assert!((v - (-2.0 * f.loglik + 2.0 * 100f64.ln())).abs() < 1e-12);
        let a = criterion_value(&f, PenaltyKind::Aic, &s).unwrap();
        assert!((a - (-2.0 * f.loglik + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn bic_differences_follow_parameter_counts() {
        let s = density1().sample(150, 2).unwrap();
        let fits = fit_path(&s, 3, &quick_options().em).unwrap();
        let b1 = criterion_value(&fits[0], PenaltyKind::Bic, &s).unwrap();
        let b3 = criterion_value(&fits[2], PenaltyKind::Bic, &s).unwrap();
        let expect = -2.0 * (fits[2].loglik - fits[0].loglik) + 150f64.ln() * 6.0;
        assert!((b3 - b1 - expect).abs() < 1e-9);
    }

    #[test]
    fn tie_break_prefers_smaller_order() {
        assert_eq!(argmin_order(&[10.0, 8.0, 8.0, 9.0]), 2);
        assert_eq!(argmin_order(&[3.0]), 1);
    }

    #[test]
    fn delta_forms() {
        let s = density1().sample(100, 3).unwrap();
        let fits = fit_path(&s, 3, &quick_options().em).unwrap();
        let d = delta_n(PenaltyKind::Bic, &fits[1], &fits[2], &s).unwrap();
        assert!((d - 100f64.ln() * 3.0).abs() < 1e-12);
        assert!((d - 13.815_510_557_964_274).abs() < 1e-9);
        for kind in [PenaltyKind::Aic, PenaltyKind::Bic, PenaltyKind::Tic] {
            assert_eq!(delta_n(kind, &fits[1], &fits[1], &s).unwrap(), 0.0);
        }
        let down = delta_n(PenaltyKind::Aic, &fits[1], &fits[0], &s).unwrap();
        assert_eq!(down, -6.0);
    }

    #[test]
    fn record_arithmetic() {
        let p = PreparedScreen {
            k: 3,
            side: Side::Larger,
            lrt: 5.0,
            delta: 2.0,
            penalty_used: PenaltyKind::Aic,
            lambdas: LambdaWeights::new(vec![1.0]),
            null: Some(WeightedChiSq::new(&[1.0], 10_000, 1).unwrap()),
            diagnostic: None,
        };
        let r = p.record(0.05);
        assert_eq!(r.lrt_star, 3.0);
        assert!(r.pass);
        assert_eq!(r.pass, r.lrt_star > r.q_alpha.unwrap());
    }

    #[test]
    fn underfit_on_bimodal_data_fails_screen() {
        let truth = MixtureParams::relabeled(
            vec![0.45, 0.45, 0.10],
            vec![-0.93, 0.93, 0.0],
            vec![0.22, 0.22, 0.04],
        )
        .unwrap();
        let s = truth.sample(1000, 5).unwrap();
        let fits = fit_path(&s, 3, &quick_options().em).unwrap();
        let r = screen_with_draws(&fits[2], &fits[0], &s, 0.05, PenaltyKind::Tic, 9, 20_000).unwrap();
        assert_eq!(r.side, Side::Smaller);
        assert!(!r.pass, "{r:?}");
        assert!(r.lrt_star < r.q_alpha.unwrap());
    }

    #[test]
    fn structure_and_nesting() {
        let s = density1().sample(200, 21).unwrap();
        let plan = ScreeningPlan::prepare(&s, &quick_options()).unwrap();
        let sets: Vec<MscsResult> = [0.01, 0.05, 0.10]
            .iter()
            .map(|&a| plan.at_alpha(a).unwrap())
            .collect();
        for r in &sets {
            assert!(r.k_lower <= r.k_hat && r.k_hat <= r.k_upper);
            assert_eq!(r.records.len(), r.k_max);
            for (i, rec) in r.records.iter().enumerate() {
                assert_eq!(rec.k, i + 1);
                assert_eq!(rec.lrt_star, rec.lrt - rec.delta);
            }
            assert_eq!(r.size(), r.gamma.len());
        }
        assert!(sets[0].k_lower <= sets[1].k_lower && sets[1].k_lower <= sets[2].k_lower);
        assert!(sets[0].k_upper >= sets[1].k_upper && sets[1].k_upper >= sets[2].k_upper);
    }

    #[test]
    fn kmax_is_capped() {
        let s = density1().sample(25, 4).unwrap();
        let opts = MscsOptions {
            k_max: 10,
            ..quick_options()
        };
        let r = build_mscs(&s, &opts).unwrap();
        assert_eq!(r.k_max, 8);
        assert_eq!(r.records.len(), 8);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn penalty_parsing() {
        assert_eq!("TIC".parse::<PenaltyKind>().unwrap(), PenaltyKind::Tic);
        assert!("hqc".parse::<PenaltyKind>().is_err());
    }
}
