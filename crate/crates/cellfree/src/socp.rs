//! Second-order-cone subproblem for a fixed SINR level.
//!
//! For a target level s the constraint set
//!
//!   (1 / sqrt(s)) c_k^T gamma_k >= || B_k [gamma; sigma] ||   for every UE k
//!   sum_i gamma_il^2 <= c * P_max                             for every AP l
//!   gamma >= 0
//!
//! is conic, and the smallest power margin c subject to it decides whether
//! level s is achievable within the per-AP budgets (feasible iff c <= 1).
//! The margin is found with an interior-point conic solver; the problem is
//! normalized to unit budget and unit noise before solving.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::stats::SinrCoefficients;

/// Margin subproblem data in physical units. `cone_diag` row k holds the
/// diagonal of B_k: sqrt(b_{k,i,l}) at column i*L + l, and an exact 1 in the
/// last column (the noise slot).
#[derive(Debug, Clone)]
pub struct SocSubproblem {
    pub sinr_target: f64,
    /// K x L matrix of |a_kl|.
    pub gain: DMatrix<f64>,
    /// K x (K*L + 1) diagonal entries of the per-UE cone matrices.
    pub cone_diag: DMatrix<f64>,
    /// sqrt(sigma^2).
    pub noise_std: f64,
    /// Per-AP power budget, watts.
    pub max_power: f64,
}

/// Stack the coefficient tensors into the cone form for level `s`.
/// The gamma vector is ordered UE-major: index k*L + l.
pub fn assemble_subproblem(
    s: f64,
    coeffs: &SinrCoefficients,
    cfg: &SystemConfig,
) -> Result<SocSubproblem> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("SINR level must be positive, got {s}")));
    }
    let (k, l) = (coeffs.num_ues(), coeffs.num_aps());
    let gain = coeffs.gain_matrix().clone();
    let mut cone_diag = DMatrix::zeros(k, k * l + 1);
    for ue in 0..k {
        for i in 0..k {
            for ap in 0..l {
                cone_diag[(ue, i * l + ap)] = coeffs.b(ue, i, ap).sqrt();
            }
        }
        cone_diag[(ue, k * l)] = 1.0;
    }
    Ok(SocSubproblem {
        sinr_target: s,
        gain,
        cone_diag,
        noise_std: coeffs.noise_power.sqrt(),
        max_power: cfg.max_dl_power_w,
    })
}

/// Outcome of one margin solve.
#[derive(Debug, Clone)]
pub enum SubproblemResult {
    /// The cone system is consistent; `margin` is the minimal power margin.
    Optimal {
        margin: f64,
        /// K x L allocation achieving the margin.
        gamma: DMatrix<f64>,
        iterations: u32,
        residual: f64,
    },
    /// No gamma satisfies the SINR cones at this level, at any power.
    Infeasible,
}

struct TripletBuilder {
    nrows: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl TripletBuilder {
    fn new(ncols: usize) -> Self {
        TripletBuilder { nrows: 0, cols: vec![Vec::new(); ncols], rhs: Vec::new() }
    }

    /// Append one constraint row `sum coeff_j x_j + s_row = rhs`.
    fn push_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        for &(col, v) in coeffs {
            if v != 0.0 {
                self.cols[col].push((self.nrows, v));
            }
        }
        self.rhs.push(rhs);
        self.nrows += 1;
    }

    fn into_csc(self) -> (CscMatrix<f64>, Vec<f64>) {
        let ncols = self.cols.len();
        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for mut col in self.cols {
            col.sort_by_key(|&(r, _)| r);
            for (r, v) in col {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        (CscMatrix::new(self.nrows, ncols, colptr, rowval, nzval), self.rhs)
    }
}

/// Solve for the minimal power margin at the subproblem's SINR level.
///
/// `tol` is the interior-point feasibility/gap tolerance; the returned
/// residual is checked against 1e-7 on the unit-scaled problem.
pub fn solve_subproblem(sub: &SocSubproblem, tol: f64) -> Result<SubproblemResult> {
    let (k, l) = sub.gain.shape();
    let n_gamma = k * l;
    let n_vars = n_gamma + 1; // gamma (unit-scaled) then the margin c
    let margin_col = n_gamma;
    let sqrt_p = sub.max_power.sqrt();
    let sqrt_s = sub.sinr_target.sqrt();
    // Unit scaling: gamma' = gamma / sqrt(P), a' = a sqrt(P) / sigma,
    // sqrt(b)' = sqrt(b) sqrt(P) / sigma, noise 1, budget 1. The SINR at any
    // level and the margin are invariant under this change of variables.
    let unit = sqrt_p / sub.noise_std;

    let mut b = TripletBuilder::new(n_vars);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(1 + k + l);

    // gamma >= 0.
    for j in 0..n_gamma {
        b.push_row(&[(j, -1.0)], 0.0);
    }
    cones.push(SupportedConeT::NonnegativeConeT(n_gamma));

    // Per-UE SINR cones, dimension KL + 2 each.
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(l);
    for ue in 0..k {
        row.clear();
        for ap in 0..l {
            let a = sub.gain[(ue, ap)] * unit;
            if a != 0.0 {
                row.push((ue * l + ap, -a / sqrt_s));
            }
        }
        b.push_row(&row, 0.0);
        for j in 0..n_gamma {
            let w = sub.cone_diag[(ue, j)] * unit;
            b.push_row(&[(j, -w)], 0.0);
        }
        b.push_row(&[], 1.0); // the unit noise slot
        cones.push(SupportedConeT::SecondOrderConeT(n_gamma + 2));
    }

    // Per-AP margin cones: sum_k gamma'_kl^2 <= c, written as the standard
    // cone || (2 gamma'_l, c - 1) || <= c + 1.
    for ap in 0..l {
        b.push_row(&[(margin_col, -1.0)], 1.0);
        for ue in 0..k {
            b.push_row(&[(ue * l + ap, -2.0)], 0.0);
        }
        b.push_row(&[(margin_col, -1.0)], -1.0);
        cones.push(SupportedConeT::SecondOrderConeT(k + 2));
    }

    let (a_mat, rhs) = b.into_csc();
    let p_mat = CscMatrix::<f64>::zeros((n_vars, n_vars));
    let mut q = vec![0.0; n_vars];
    q[margin_col] = 1.0;

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(tol)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .build()
        .map_err(|e| Error::Solver(format!("bad settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &rhs, &cones, settings)
        .map_err(|e| Error::Solver(format!("solver setup failed: {e}")))?;
    solver.solve();

    match solver.solution.status {
        SolverStatus::Solved => {
            let residual = solver.info.res_primal.max(solver.info.res_dual);
            if !(residual <= 1e-7) {
                return Err(Error::Solver(format!(
                    "residual {residual} above the 1e-7 accuracy contract"
                )));
            }
            let x = &solver.solution.x;
            let mut gamma = DMatrix::zeros(k, l);
            for ue in 0..k {
                for ap in 0..l {
                    gamma[(ue, ap)] = x[ue * l + ap].max(0.0) * sqrt_p;
                }
            }
            Ok(SubproblemResult::Optimal {
                margin: x[margin_col],
                gamma,
                iterations: solver.info.iterations,
                residual,
            })
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(SubproblemResult::Infeasible)
        }
        other => Err(Error::Solver(format!(
            "conic solver returned {other:?} at level {}",
            sub.sinr_target
        ))),
    }
}
