//! Uplink pilot phase and per-AP MMSE channel estimation.

use nalgebra::DVector;
use num_complex::Complex;
use rand::Rng;

use crate::channel::{CVector, ChannelSample};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{CMatrix, NetworkRealization};
use crate::rng::standard_complex;

/// Pilot index per UE plus the UE group sharing each pilot.
#[derive(Debug, Clone)]
pub struct PilotAssignment {
    pub pilot_of_ue: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

/// Orthogonal pilots when tau_p >= K, round-robin reuse otherwise.
pub fn assign_pilots(num_ues: usize, tau_p: usize) -> PilotAssignment {
    assert!(tau_p >= 1, "tau_p must be >= 1");
    let pilot_of_ue: Vec<usize> = (0..num_ues)
        .map(|k| if tau_p >= num_ues { k } else { k % tau_p })
        .collect();
    let mut groups = vec![Vec::new(); tau_p];
    for (k, &t) in pilot_of_ue.iter().enumerate() {
        groups[t].push(k);
    }
    PilotAssignment { pilot_of_ue, groups }
}

/// Received pilot signals y_{tl}, indexed t * L + l.
#[derive(Debug, Clone)]
pub struct ReceivedPilots {
    pub y: Vec<CVector>,
    num_aps: usize,
}

impl ReceivedPilots {
    #[inline]
    pub fn of(&self, pilot: usize, ap: usize) -> &CVector {
        &self.y[pilot * self.num_aps + ap]
    }
}

/// Superimpose the pilot-sharing UEs' channels, scaled by sqrt(tau_p p_i),
/// plus white noise of variance sigma^2 per antenna.
pub fn received_pilots<R: Rng + ?Sized>(
    sample: &ChannelSample,
    assignment: &PilotAssignment,
    cfg: &SystemConfig,
    rng: &mut R,
) -> ReceivedPilots {
    let mut out = empty_received(assignment.groups.len(), cfg);
    received_pilots_into(sample, assignment, cfg, rng, &mut out);
    out
}

/// Zeroed container with the right shape, for reuse with
/// [`received_pilots_into`].
pub fn empty_received(tau_p: usize, cfg: &SystemConfig) -> ReceivedPilots {
    ReceivedPilots {
        y: vec![CVector::zeros(cfg.antennas_per_ap); tau_p * cfg.num_aps],
        num_aps: cfg.num_aps,
    }
}

/// Allocation-free variant of [`received_pilots`].
pub fn received_pilots_into<R: Rng + ?Sized>(
    sample: &ChannelSample,
    assignment: &PilotAssignment,
    cfg: &SystemConfig,
    rng: &mut R,
    out: &mut ReceivedPilots,
) {
    let num_aps = cfg.num_aps;
    let noise_std = cfg.noise_power_w.sqrt();
    let scale = Complex::new((cfg.tau_p as f64 * cfg.pilot_power_w).sqrt(), 0.0);
    for (t, group) in assignment.groups.iter().enumerate() {
        for ap in 0..num_aps {
            let v = &mut out.y[t * num_aps + ap];
            for vi in v.iter_mut() {
                *vi = standard_complex(rng) * Complex::new(noise_std, 0.0);
            }
            for &ue in group {
                v.axpy(scale, sample.of(ue, ap), Complex::new(1.0, 0.0));
            }
        }
    }
}

/// Pilot-signal correlation matrices Phi_{tl} = sum_{i in P_t} tau_p p_i R_{il}
/// + sigma^2 I, indexed t * L + l.
pub fn compute_phi(
    assignment: &PilotAssignment,
    realization: &NetworkRealization,
    cfg: &SystemConfig,
) -> Vec<CMatrix> {
    let n = cfg.antennas_per_ap;
    let num_aps = realization.num_aps();
    let mut phi = Vec::with_capacity(assignment.groups.len() * num_aps);
    for group in &assignment.groups {
        for ap in 0..num_aps {
            let mut m = CMatrix::identity(n, n) * Complex::new(cfg.noise_power_w, 0.0);
            for &ue in group {
                m += realization.correlation_of(ue, ap)
                    * Complex::new(cfg.tau_p as f64 * cfg.pilot_power_w, 0.0);
            }
            phi.push(m);
        }
    }
    phi
}

/// MMSE estimates for one coherence block plus the estimator statistics.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    /// Estimated channels, indexed k * L + l.
    pub h_hat: Vec<CVector>,
    pub(crate) num_aps: usize,
}

impl ChannelEstimate {
    #[inline]
    pub fn of(&self, ue: usize, ap: usize) -> &CVector {
        &self.h_hat[ue * self.num_aps + ap]
    }
}

/// Precomputed MMSE operators for a fixed realization. The per-block
/// estimate is then one matrix-vector product per link:
/// h_hat_{kl} = sqrt(tau_p p_k) R_{kl} Phi_{tl}^{-1} y_{tl}.
#[derive(Debug, Clone)]
pub struct Estimator {
    gain: Vec<CMatrix>,
    est_cov: Vec<CMatrix>,
    phi: Vec<CMatrix>,
    pilot_of_ue: Vec<usize>,
    num_ues: usize,
    num_aps: usize,
}

impl Estimator {
    pub fn new(
        realization: &NetworkRealization,
        assignment: &PilotAssignment,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        let (num_ues, num_aps) = (realization.num_ues(), realization.num_aps());
        let phi = compute_phi(assignment, realization, cfg);
        let mut phi_inv = Vec::with_capacity(phi.len());
        for (idx, m) in phi.iter().enumerate() {
            let inv = m.clone().try_inverse().ok_or_else(|| {
                Error::Numerical(format!("pilot correlation matrix {idx} is singular"))
            })?;
            phi_inv.push(inv);
        }
        let mut gain = Vec::with_capacity(num_ues * num_aps);
        let mut est_cov = Vec::with_capacity(num_ues * num_aps);
        for ue in 0..num_ues {
            let t = assignment.pilot_of_ue[ue];
            let scale = (cfg.tau_p as f64 * cfg.pilot_power_w).sqrt();
            for ap in 0..num_aps {
                let r = realization.correlation_of(ue, ap);
                let g = (r * &phi_inv[t * num_aps + ap]) * Complex::new(scale, 0.0);
                // est_cov = tau_p p_k R Phi^{-1} R = sqrt(tau_p p_k) * gain * R.
                est_cov.push((&g * r) * Complex::new(scale, 0.0));
                gain.push(g);
            }
        }
        Ok(Estimator {
            gain,
            est_cov,
            phi,
            pilot_of_ue: assignment.pilot_of_ue.clone(),
            num_ues,
            num_aps,
        })
    }

    /// Apply the MMSE operators to one block of received pilots.
    pub fn estimate(&self, received: &ReceivedPilots) -> ChannelEstimate {
        let mut out = self.empty_estimate();
        self.estimate_into(received, &mut out);
        out
    }

    /// Zeroed container with the right shape, for reuse with
    /// [`estimate_into`].
    pub fn empty_estimate(&self) -> ChannelEstimate {
        let n = self.gain[0].nrows();
        ChannelEstimate {
            h_hat: vec![CVector::zeros(n); self.num_ues * self.num_aps],
            num_aps: self.num_aps,
        }
    }

    /// Allocation-free variant of [`estimate`].
    pub fn estimate_into(&self, received: &ReceivedPilots, out: &mut ChannelEstimate) {
        let one = Complex::new(1.0, 0.0);
        let zero = Complex::new(0.0, 0.0);
        for ue in 0..self.num_ues {
            let t = self.pilot_of_ue[ue];
            for ap in 0..self.num_aps {
                let idx = ue * self.num_aps + ap;
                out.h_hat[idx].gemv(one, &self.gain[idx], received.of(t, ap), zero);
            }
        }
    }

    /// Covariance of the estimate for one link.
    #[inline]
    pub fn estimate_covariance(&self, ue: usize, ap: usize) -> &CMatrix {
        &self.est_cov[ue * self.num_aps + ap]
    }

    /// Pilot-signal correlation matrix for (pilot, ap).
    #[inline]
    pub fn phi(&self, pilot: usize, ap: usize) -> &CMatrix {
        &self.phi[pilot * self.num_aps + ap]
    }

    /// trace of the estimate covariance, the per-link estimation quality
    /// figure used by the proportional power-sharing baseline.
    pub fn estimation_variance(&self, ue: usize, ap: usize) -> f64 {
        self.estimate_covariance(ue, ap).trace().re
    }
}

/// One-shot MMSE estimation; builds the operators and applies them.
pub fn mmse_estimate(
    received: &ReceivedPilots,
    realization: &NetworkRealization,
    assignment: &PilotAssignment,
    cfg: &SystemConfig,
) -> Result<ChannelEstimate> {
    Ok(Estimator::new(realization, assignment, cfg)?.estimate(received))
}
