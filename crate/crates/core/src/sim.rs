//! Monte Carlo coverage studies on the four benchmark mixture densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::engine::{MscsOptions, PenaltyKind, ScreeningPlan};
use crate::error::{MscsError, Result};
use crate::mixture::MixtureParams;
use crate::null_dist::DEFAULT_MC_DRAWS;
use crate::quad::integrate;
use crate::seed::mix_seed;

/// A data-generating density with its true order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u32,
    pub true_params: MixtureParams,
    pub k0: usize,
}

/// Benchmark densities, relabelled to ascending means.
pub fn scenario_params(id: u32) -> Result<ScenarioSpec> {
    let (w, m, v): (Vec<f64>, Vec<f64>, Vec<f64>) = match id {
        1 => (vec![0.75, 0.25], vec![0.00, 1.37], vec![0.83, 0.09]),
        2 => (
            vec![0.45, 0.45, 0.10],
            vec![-0.93, 0.93, 0.00],
            vec![0.22, 0.22, 0.04],
        ),
        3 => (
            vec![0.50, 0.30, 0.20],
            vec![-0.74, 0.37, 1.47],
            vec![0.14, 0.55, 0.14],
        ),
        4 => (
            vec![0.50, 0.35, 0.15],
            vec![0.00, 1.28, 2.56],
            vec![0.14, 0.14, 0.11],
        ),
        other => return Err(MscsError::UnknownScenario(other)),
    };
    let true_params = MixtureParams::relabeled(w, m, v)?;
    Ok(ScenarioSpec {
        id,
        k0: true_params.k(),
        true_params,
    })
}

pub fn scenario_table() -> Vec<ScenarioSpec> {
    (1..=4).map(|id| scenario_params(id).expect("built-in scenario")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: u32,
    pub n: usize,
    /// Number of Monte Carlo replicates (B).
    pub replicates: usize,
    pub alpha: f64,
    pub penalty: PenaltyKind,
    pub ref_kind: PenaltyKind,
    pub k_max: usize,
    pub master_seed: u64,
    pub em: EmConfig,
    pub mc_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario: 1,
            n: 100,
            replicates: 200,
            alpha: 0.05,
            penalty: PenaltyKind::Tic,
            ref_kind: PenaltyKind::Bic,
            k_max: 8,
            master_seed: 1,
            em: EmConfig::default(),
            mc_draws: DEFAULT_MC_DRAWS,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(MscsError::InvalidConfig("B must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(MscsError::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.n < 3 * self.k_max {
            return Err(MscsError::InvalidConfig(format!(
                "n = {} is below 3·k_max = {}",
                self.n,
                3 * self.k_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MscsError::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        self.em.validate()?;
        scenario_params(self.scenario).map(|_| ())
    }

    fn options(&self, replicate: usize, alpha: f64) -> MscsOptions {
        MscsOptions {
            k_max: self.k_max,
            alpha,
            penalty: self.penalty,
            ref_kind: self.ref_kind,
            em: EmConfig {
                seed: mix_seed(&[self.master_seed, replicate as u64, 1]),
                ..self.em
            },
            mc_draws: self.mc_draws,
            seed: mix_seed(&[self.master_seed, replicate as u64, 2]),
        }
    }
}

/// Seed of the sample drawn for one replicate.
pub fn replicate_seed(master_seed: u64, replicate: usize) -> u64 {
    mix_seed(&[master_seed, replicate as u64, 0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub covered: bool,
    pub size: usize,
    pub k_hat: usize,
    pub k_lower: usize,
    pub k_upper: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: u32,
    pub n: usize,
    pub alpha: f64,
    pub coverage: f64,
    pub mean_size: f64,
    pub pct_khat_correct: f64,
    pub replicates: usize,
    pub failed: usize,
    pub failures: Vec<(usize, String)>,
    pub per_replicate: Vec<ReplicateOutcome>,
}

fn replicate_plan(spec: &ScenarioSpec, config: &SimConfig, index: usize) -> Result<ScreeningPlan> {
    let sample = spec
        .true_params
        .sample(config.n, replicate_seed(config.master_seed, index))?;
    ScreeningPlan::prepare(&sample, &config.options(index, config.alpha))
}

fn outcome(spec: &ScenarioSpec, plan: &ScreeningPlan, alpha: f64, index: usize) -> Result<ReplicateOutcome> {
    let r = plan.at_alpha(alpha)?;
    Ok(ReplicateOutcome {
        index,
        covered: r.contains(spec.k0),
        size: r.size(),
        k_hat: r.k_hat,
        k_lower: r.k_lower,
        k_upper: r.k_upper,
    })
}

/// Draws one sample, builds its confidence set and scores it against k₀.
pub fn run_replicate(spec: &ScenarioSpec, config: &SimConfig, index: usize) -> Result<ReplicateOutcome> {
    let plan = replicate_plan(spec, config, index)?;
    outcome(spec, &plan, config.alpha, index)
}

fn aggregate(
    config: &SimConfig,
    alpha: f64,
    outcomes: Vec<std::result::Result<ReplicateOutcome, (usize, String)>>,
) -> Result<SimResult> {
    let total = outcomes.len();
    let mut ok = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() * 10 > total || ok.is_empty() {
        return Err(MscsError::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    let m = ok.len() as f64;
    let k0 = scenario_params(config.scenario)?.k0;
    Ok(SimResult {
        scenario: config.scenario,
        n: config.n,
        alpha,
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / m,
        mean_size: ok.iter().map(|r| r.size as f64).sum::<f64>() / m,
        pct_khat_correct: ok.iter().filter(|r| r.k_hat == k0).count() as f64 / m,
        replicates: total,
        failed: failures.len(),
        failures,
        per_replicate: ok,
    })
}

/// Runs `config.replicates` replicates at `config.alpha`.
pub fn run_simulation(config: &SimConfig) -> Result<SimResult> {
    let mut v = run_simulation_alphas(config, &[config.alpha])?;
    Ok(v.remove(0))
}

/// Runs the study once and evaluates every α on the same fits and null
/// draws. Results come back in the order of `alphas`.
pub fn run_simulation_alphas(config: &SimConfig, alphas: &[f64]) -> Result<Vec<SimResult>> {
    config.validate()?;
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(MscsError::InvalidConfig(format!("alpha {a} outside (0, 1)")));
    }
    let spec = scenario_params(config.scenario)?;
    let per_rep: Vec<Vec<std::result::Result<ReplicateOutcome, (usize, String)>>> = (0
        ..config.replicates)
        .into_par_iter()
        .map(|i| match replicate_plan(&spec, config, i) {
            Ok(plan) => alphas
                .iter()
                .map(|&a| outcome(&spec, &plan, a, i).map_err(|e| (i, e.to_string())))
                .collect(),
            Err(e) => alphas.iter().map(|_| Err((i, e.to_string()))).collect(),
        })
        .collect();
    alphas
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let column = per_rep.iter().map(|row| row[j].clone()).collect();
            aggregate(config, a, column)
        })
        .collect()
}

/// E_truth[log f_truth − log f_cand] by adaptive quadrature over the
/// truth's mean range widened by 12 of its largest component SDs.
pub fn kl_divergence(truth: &MixtureParams, cand: &MixtureParams) -> f64 {
    kl_divergence_tol(truth, cand, 1e-8)
}

pub fn kl_divergence_tol(truth: &MixtureParams, cand: &MixtureParams, tol: f64) -> f64 {
    let pad = 12.0 * truth.max_sd();
    let a = truth.means()[0] - pad;
    let b = truth.means()[truth.k() - 1] + pad;
    let v = integrate(
        |x| {
            let lt = truth.log_density(x);
            lt.exp() * (lt - cand.log_density(x))
        },
        a,
        b,
        tol,
        64,
    );
    v.max(0.0)
}
