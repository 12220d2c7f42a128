//! SINR coefficient estimation and SINR/SE evaluation.
//!
//! The hardening-bound SINR of UE k under allocation gamma is
//!
//!   SINR_k = (sum_l gamma_kl a_kl)^2 / (sum_l sum_i gamma_il^2 b_kil + sigma^2)
//!
//! where a_kl is the mean useful gain of link (k, l) and b_kil collects the
//! second moments of the interference (for i = k, the variance of the useful
//! gain). Both are estimated by Monte Carlo over coherence blocks: draw
//! channels, run the pilot phase, estimate, precode, and accumulate the
//! cross-moments h_kl^H w_il.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;

use crate::channel::ChannelFactors;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::NetworkRealization;
use crate::pilot::{assign_pilots, empty_received, received_pilots_into, Estimator};
use crate::precoding::{empty_precoders, precode_into, PrecodingScheme};
use crate::rng::{stream_rng, StreamTag};

/// Blocks per accumulation chunk. Chunks are summed in index order, so the
/// result is independent of how many workers processed them.
const CHUNK: usize = 128;

/// Monte-Carlo estimates of the SINR coefficients for one realization.
#[derive(Debug, Clone)]
pub struct SinrCoefficients {
    gain: DMatrix<f64>,
    cross: Vec<f64>,
    pub noise_power: f64,
    pub mc_count: usize,
    num_ues: usize,
    num_aps: usize,
}

impl SinrCoefficients {
    /// Assemble from precomputed tensors; validates shapes and sign
    /// constraints. `cross` is indexed (k * K + i) * L + l.
    pub fn from_parts(
        gain: DMatrix<f64>,
        cross: Vec<f64>,
        noise_power: f64,
        mc_count: usize,
    ) -> Result<Self> {
        let (num_ues, num_aps) = gain.shape();
        if cross.len() != num_ues * num_ues * num_aps {
            return Err(Error::Dimension(format!(
                "cross tensor has {} entries, expected K*K*L = {}",
                cross.len(),
                num_ues * num_ues * num_aps
            )));
        }
        if !(noise_power > 0.0) {
            return Err(Error::Domain("noise power must be > 0".into()));
        }
        if gain.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("gain entries must be finite and >= 0".into()));
        }
        if cross.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("cross entries must be finite and >= 0".into()));
        }
        Ok(SinrCoefficients { gain, cross, noise_power, mc_count, num_ues, num_aps })
    }

    #[inline]
    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    #[inline]
    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    /// Mean useful amplitude gain a_kl (nonnegative by phase alignment).
    #[inline]
    pub fn a(&self, ue: usize, ap: usize) -> f64 {
        self.gain[(ue, ap)]
    }

    /// K x L matrix of a_kl.
    pub fn gain_matrix(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Interference second moment b_{k,i,l}: power received by UE k from the
    /// signal AP l transmits to UE i (own-signal variance when i = k).
    #[inline]
    pub fn b(&self, ue: usize, interferer: usize, ap: usize) -> f64 {
        self.cross[(ue * self.num_ues + interferer) * self.num_aps + ap]
    }
}

/// Amplitude-domain power allocation gamma_kl = sqrt(rho_kl), K x L.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub gamma: DMatrix<f64>,
}

impl PowerAllocation {
    pub fn zeros(num_ues: usize, num_aps: usize) -> Self {
        PowerAllocation { gamma: DMatrix::zeros(num_ues, num_aps) }
    }

    pub fn from_gamma(gamma: DMatrix<f64>) -> Self {
        PowerAllocation { gamma }
    }

    /// Power spent by AP `ap`: sum_k gamma_kl^2.
    pub fn ap_power(&self, ap: usize) -> f64 {
        self.gamma.column(ap).iter().map(|g| g * g).sum()
    }

    /// Check nonnegativity and per-AP budgets (and, when a cluster structure
    /// is given, that unserved links carry no power).
    pub fn validate(
        &self,
        max_power: f64,
        rel_tol: f64,
        dcc: Option<&crate::geometry::Dcc>,
    ) -> Result<()> {
        if self.gamma.iter().any(|&g| g < 0.0 || !g.is_finite()) {
            return Err(Error::Domain("gamma entries must be finite and >= 0".into()));
        }
        for ap in 0..self.gamma.ncols() {
            let p = self.ap_power(ap);
            if p > max_power * (1.0 + rel_tol) {
                return Err(Error::Domain(format!(
                    "AP {ap} power {p} exceeds budget {max_power}"
                )));
            }
        }
        if let Some(dcc) = dcc {
            for k in 0..self.gamma.nrows() {
                for l in 0..self.gamma.ncols() {
                    if !dcc.serves(k, l) && self.gamma[(k, l)] != 0.0 {
                        return Err(Error::Domain(format!(
                            "unserved link (ue {k}, ap {l}) carries power"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

struct ChunkSums {
    g: Vec<Complex<f64>>,
    m2: Vec<f64>,
}

impl ChunkSums {
    fn new(num_ues: usize, num_aps: usize) -> Self {
        ChunkSums {
            g: vec![Complex::new(0.0, 0.0); num_ues * num_aps],
            m2: vec![0.0; num_ues * num_ues * num_aps],
        }
    }

    fn merge(&mut self, other: &ChunkSums) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
        for (a, b) in self.m2.iter_mut().zip(&other.m2) {
            *a += b;
        }
    }
}

/// Estimate the SINR coefficients for one realization and precoding scheme
/// by Monte Carlo over `cfg.mc_realizations` coherence blocks. Deterministic
/// in `(cfg.master_seed, sample_index)` regardless of worker count.
pub fn estimate_coefficients(
    realization: &NetworkRealization,
    scheme: PrecodingScheme,
    cfg: &SystemConfig,
    sample_index: u64,
) -> Result<SinrCoefficients> {
    let mc = cfg.mc_realizations;
    if mc < 100 {
        log::warn!("mc_realizations = {mc} is small; coefficient noise will be large");
    }
    if mc == 0 {
        return Err(Error::Config("mc_realizations must be >= 1".into()));
    }
    let (k, l) = (realization.num_ues(), realization.num_aps());
    let factors = ChannelFactors::new(realization)?;
    let assignment = assign_pilots(k, cfg.tau_p);
    let estimator = Estimator::new(realization, &assignment, cfg)?;
    let dcc = &realization.dcc;

    let n_chunks = mc.div_ceil(CHUNK);
    let partials: Vec<ChunkSums> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<ChunkSums> {
            let mut sums = ChunkSums::new(k, l);
            let mut sample = factors.empty_sample();
            let mut received = empty_received(assignment.groups.len(), cfg);
            let mut estimates = estimator.empty_estimate();
            let mut precoders = empty_precoders(dcc, scheme, cfg.antennas_per_ap);
            for block in (c * CHUNK)..mc.min((c + 1) * CHUNK) {
                let b = block as u64;
                let mut ch_rng = stream_rng(cfg.master_seed, sample_index, StreamTag::McChannel, b);
                let mut nz_rng = stream_rng(cfg.master_seed, sample_index, StreamTag::McNoise, b);
                factors.draw_into(&mut ch_rng, &mut sample);
                received_pilots_into(&sample, &assignment, cfg, &mut nz_rng, &mut received);
                estimator.estimate_into(&received, &mut estimates);
                precode_into(&estimates, dcc, scheme, cfg, &mut precoders)?;
                for i in 0..k {
                    for ap in 0..l {
                        if !dcc.serves(i, ap) {
                            continue;
                        }
                        let w = precoders.of(i, ap);
                        for ue in 0..k {
                            let inner = sample.of(ue, ap).dotc(w);
                            sums.m2[(ue * k + i) * l + ap] += inner.norm_sqr();
                            if ue == i {
                                sums.g[i * l + ap] += inner;
                            }
                        }
                    }
                }
            }
            Ok(sums)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = ChunkSums::new(k, l);
    for p in &partials {
        total.merge(p);
    }

    let inv_mc = 1.0 / mc as f64;
    let gain = DMatrix::from_fn(k, l, |ue, ap| (total.g[ue * l + ap] * inv_mc).norm());
    let mut cross = vec![0.0; k * k * l];
    // Monte-Carlo noise can push a tiny variance slightly negative; values
    // beyond this margin indicate a bug in the moment accumulation.
    let noise_margin = 40.0 / (mc as f64).sqrt();
    for ue in 0..k {
        for i in 0..k {
            for ap in 0..l {
                let idx = (ue * k + i) * l + ap;
                let m2 = total.m2[idx] * inv_mc;
                let value = if i == ue {
                    let centered = m2 - gain[(ue, ap)] * gain[(ue, ap)];
                    if centered < -(noise_margin * m2 + 1e-300) {
                        return Err(Error::Internal(format!(
                            "variance estimate {centered} at (k={ue}, l={ap}) is negative \
                             beyond Monte-Carlo tolerance"
                        )));
                    }
                    centered.max(0.0)
                } else {
                    m2
                };
                cross[idx] = value;
            }
        }
    }
    SinrCoefficients::from_parts(gain, cross, cfg.noise_power_w, mc)
}

/// Evaluate the hardening-bound SINR of every UE for a fixed allocation.
pub fn compute_sinr(alloc: &PowerAllocation, coeffs: &SinrCoefficients) -> Vec<f64> {
    let (k, l) = (coeffs.num_ues, coeffs.num_aps);
    assert_eq!(
        alloc.gamma.shape(),
        (k, l),
        "allocation shape does not match coefficients"
    );
    let mut sinr = Vec::with_capacity(k);
    for ue in 0..k {
        let mut num = 0.0;
        for ap in 0..l {
            num += alloc.gamma[(ue, ap)] * coeffs.a(ue, ap);
        }
        let mut den = coeffs.noise_power;
        for ap in 0..l {
            for i in 0..k {
                let g = alloc.gamma[(i, ap)];
                den += g * g * coeffs.b(ue, i, ap);
            }
        }
        sinr.push(num * num / den);
    }
    sinr
}

/// Spectral efficiency in bit/s/Hz: prelog * log2(1 + SINR).
pub fn compute_se(sinr: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    let prelog = cfg.prelog();
    sinr.iter().map(|&s| prelog * (1.0 + s).log2()).collect()
}
