//! Network-wide max-min fairness power allocation.
//!
//! Bisection over the common SINR level s: each probe solves the conic
//! margin subproblem, and level s is achievable iff the minimal margin is
//! at most one. A feasible probe also yields a witness allocation; scaling
//! it up to the tightest AP budget gives a certified-feasible level that can
//! exceed the probe itself, which shortens the search. Baselines: full-power
//! proportional sharing by estimation quality, and an equal split.

use nalgebra::DMatrix;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{Dcc, NetworkRealization};
use crate::pilot::{assign_pilots, Estimator};
use crate::socp::{assemble_subproblem, solve_subproblem, SubproblemResult};
use crate::stats::{compute_sinr, PowerAllocation, SinrCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    Infeasible,
}

/// Solver knobs. The defaults match the accuracy contract: 1e-3 relative on
/// the SINR level, 1e-9 interior-point tolerance.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol_sinr_rel: f64,
    pub tol_solver: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol_sinr_rel: 1e-3, tol_solver: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct MaxMinSolution {
    pub allocation: PowerAllocation,
    /// Achieved common SINR level: min_k SINR_k at the returned allocation.
    pub sinr_level: f64,
    /// Number of margin subproblems solved.
    pub iterations: usize,
    pub per_ue_sinr: Vec<f64>,
    pub status: SolveStatus,
    /// (level, feasible) for every probe, in probe order.
    pub trace: Vec<(f64, bool)>,
    /// Worst interior-point residual seen across probes.
    pub max_residual: f64,
}

/// Interference-free full-power bound: no UE can exceed
/// (sum_l sqrt(P) a_kl)^2 / sigma^2, so the max-min level cannot either.
fn level_ceiling(coeffs: &SinrCoefficients, cfg: &SystemConfig) -> f64 {
    let sqrt_p = cfg.max_dl_power_w.sqrt();
    let mut ceiling = f64::INFINITY;
    for ue in 0..coeffs.num_ues() {
        let amp: f64 = (0..coeffs.num_aps()).map(|ap| sqrt_p * coeffs.a(ue, ap)).sum();
        ceiling = ceiling.min(amp * amp / coeffs.noise_power);
    }
    ceiling
}

/// Scale the allocation so the most-loaded AP sits exactly at the budget.
/// Scaling up can only raise SINRs, so the scaled allocation certifies at
/// least the level the unscaled one did.
fn rescale_to_budget(gamma: &DMatrix<f64>, max_power: f64) -> DMatrix<f64> {
    let mut worst = 0.0f64;
    for ap in 0..gamma.ncols() {
        let p: f64 = gamma.column(ap).iter().map(|g| g * g).sum();
        worst = worst.max(p / max_power);
    }
    if worst > 0.0 {
        gamma / worst.sqrt()
    } else {
        gamma.clone()
    }
}

/// Zero out links whose coefficients are identically absent (unserved links
/// carry a = 0 and a zero interference column, so dropping them is free).
fn zero_inert_links(gamma: &mut DMatrix<f64>, coeffs: &SinrCoefficients) {
    let (k, l) = gamma.shape();
    for ue in 0..k {
        for ap in 0..l {
            let inert = coeffs.a(ue, ap) == 0.0
                && (0..k).all(|other| coeffs.b(other, ue, ap) == 0.0);
            if inert {
                gamma[(ue, ap)] = 0.0;
            }
        }
    }
}

/// Maximize the minimum per-UE SINR under per-AP power budgets.
pub fn bisection_maxmin(
    coeffs: &SinrCoefficients,
    cfg: &SystemConfig,
    opts: SolverOptions,
) -> Result<MaxMinSolution> {
    let (k, l) = (coeffs.num_ues(), coeffs.num_aps());
    let ceiling = level_ceiling(coeffs, cfg);
    if !(ceiling > 0.0) || !ceiling.is_finite() {
        return Ok(MaxMinSolution {
            allocation: PowerAllocation::zeros(k, l),
            sinr_level: 0.0,
            iterations: 0,
            per_ue_sinr: vec![0.0; k],
            status: SolveStatus::Infeasible,
            trace: Vec::new(),
            max_residual: 0.0,
        });
    }

    let tol = opts.tol_sinr_rel;
    let mut s_lo = 0.0f64;
    let mut s_hi = ceiling;
    let mut best: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut max_residual = 0.0f64;
    // Absolute-tolerance bound on the probe count, plus slack for the
    // relative-tolerance early exits.
    let cap = ((ceiling / tol).log2().ceil() as usize).max(1) + 8;

    while s_hi - s_lo > tol * s_lo.max(1.0) {
        if iterations >= cap {
            return Err(Error::Internal(format!(
                "bisection did not close the bracket in {cap} probes"
            )));
        }
        let s_mid = 0.5 * (s_lo + s_hi);
        let sub = assemble_subproblem(s_mid, coeffs, cfg)?;
        iterations += 1;
        match solve_subproblem(&sub, opts.tol_solver)? {
            SubproblemResult::Optimal { margin, mut gamma, residual, .. } if margin <= 1.0 => {
                trace.push((s_mid, true));
                max_residual = max_residual.max(residual);
                zero_inert_links(&mut gamma, coeffs);
                let scaled = rescale_to_budget(&gamma, cfg.max_dl_power_w);
                let achieved = compute_sinr(&PowerAllocation::from_gamma(scaled.clone()), coeffs)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                // The witness certifies `achieved`; it can only tighten the
                // bracket beyond the probe level.
                s_lo = s_mid.max(achieved).min(s_hi * (1.0 - 1e-12));
                best = Some(scaled);
            }
            SubproblemResult::Optimal { residual, .. } => {
                max_residual = max_residual.max(residual);
                trace.push((s_mid, false));
                s_hi = s_mid;
            }
            SubproblemResult::Infeasible => {
                trace.push((s_mid, false));
                s_hi = s_mid;
            }
        }
    }

    // Feasibility must be monotone in the level; a feasible probe above an
    // infeasible one indicates solver inconsistency.
    for (i, &(s1, f1)) in trace.iter().enumerate() {
        if f1 {
            continue;
        }
        for &(s2, f2) in &trace[i..] {
            if f2 && s2 > s1 {
                return Err(Error::Internal(format!(
                    "non-monotone feasibility: infeasible at {s1}, feasible at {s2}"
                )));
            }
        }
    }

    let Some(gamma) = best else {
        return Ok(MaxMinSolution {
            allocation: PowerAllocation::zeros(k, l),
            sinr_level: 0.0,
            iterations,
            per_ue_sinr: vec![0.0; k],
            status: SolveStatus::Infeasible,
            trace,
            max_residual,
        });
    };
    let allocation = PowerAllocation::from_gamma(gamma);
    allocation.validate(cfg.max_dl_power_w, 1e-9, None)?;
    let per_ue_sinr = compute_sinr(&allocation, coeffs);
    let sinr_level = per_ue_sinr.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MaxMinSolution {
        allocation,
        sinr_level,
        iterations,
        per_ue_sinr,
        status: SolveStatus::Converged,
        trace,
        max_residual,
    })
}

/// Full-power baseline: each AP splits its budget across served UEs in
/// proportion to the square root of the channel-estimate variance
/// q_kl = tr(estimate covariance).
pub fn heuristic_allocation(
    realization: &NetworkRealization,
    cfg: &SystemConfig,
) -> Result<PowerAllocation> {
    let assignment = assign_pilots(realization.num_ues(), cfg.tau_p);
    let estimator = Estimator::new(realization, &assignment, cfg)?;
    let (k, l) = (realization.num_ues(), realization.num_aps());
    let mut gamma = DMatrix::zeros(k, l);
    for ap in 0..l {
        let served = realization.dcc.served_by(ap);
        if served.is_empty() {
            continue;
        }
        let shares: Vec<f64> = served
            .iter()
            .map(|&ue| estimator.estimation_variance(ue, ap).max(0.0).sqrt())
            .collect();
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numerical(format!(
                "all estimation variances vanish at AP {ap}"
            )));
        }
        for (&ue, share) in served.iter().zip(&shares) {
            let rho = cfg.max_dl_power_w * share / total;
            gamma[(ue, ap)] = rho.sqrt();
        }
    }
    Ok(PowerAllocation::from_gamma(gamma))
}

/// Diagnostic baseline: each AP splits its budget evenly across served UEs.
pub fn full_power_equal_split(dcc: &Dcc, cfg: &SystemConfig) -> PowerAllocation {
    let (k, l) = (dcc.num_ues(), dcc.num_aps());
    let mut gamma = DMatrix::zeros(k, l);
    for ap in 0..l {
        let size = dcc.cluster_size(ap);
        if size == 0 {
            continue;
        }
        let g = (cfg.max_dl_power_w / size as f64).sqrt();
        for ue in 0..k {
            if dcc.serves(ue, ap) {
                gamma[(ue, ap)] = g;
            }
        }
    }
    PowerAllocation::from_gamma(gamma)
}
