//! MR and RZF precoding with per-block unit-norm normalization.
//!
//! Every served link's precoder has exactly unit norm in every coherence
//! block (a short-term constraint, not an average one); unserved links carry
//! explicit zero vectors so tensor shapes stay independent of the clusters.

use num_complex::Complex;

use crate::channel::CVector;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{CMatrix, Dcc};
use crate::pilot::ChannelEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecodingScheme {
    Mr,
    Rzf,
}

impl PrecodingScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mr" => Ok(PrecodingScheme::Mr),
            "rzf" => Ok(PrecodingScheme::Rzf),
            other => Err(Error::Config(format!("unknown precoding scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PrecodingScheme::Mr => "mr",
            PrecodingScheme::Rzf => "rzf",
        }
    }
}

/// Normalized precoders, indexed k * L + l; zero for unserved links.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub w: Vec<CVector>,
    pub scheme: PrecodingScheme,
    num_aps: usize,
}

impl PrecoderSet {
    #[inline]
    pub fn of(&self, ue: usize, ap: usize) -> &CVector {
        &self.w[ue * self.num_aps + ap]
    }
}

/// MR directions: the channel estimate itself on served links.
pub fn mr_directions(estimates: &ChannelEstimate, dcc: &Dcc) -> Vec<CVector> {
    let (k, l) = (dcc.num_ues(), dcc.num_aps());
    let n = estimates.of(0, 0).nrows();
    let mut dirs = Vec::with_capacity(k * l);
    for ue in 0..k {
        for ap in 0..l {
            if dcc.serves(ue, ap) {
                dirs.push(estimates.of(ue, ap).clone());
            } else {
                dirs.push(CVector::zeros(n));
            }
        }
    }
    dirs
}

/// RZF directions: each AP regularizes the Gram matrix of its served UEs'
/// estimates with the noise power and inverts,
/// w_bar_{kl} = (sum_{i in D_l} p_i h_hat_{il} h_hat_{il}^H + s2 I)^{-1} p_k h_hat_{kl}.
pub fn rzf_directions(
    estimates: &ChannelEstimate,
    dcc: &Dcc,
    cfg: &SystemConfig,
) -> Result<Vec<CVector>> {
    let (k, l) = (dcc.num_ues(), dcc.num_aps());
    let n = cfg.antennas_per_ap;
    let p = cfg.pilot_power_w;
    let mut dirs = vec![CVector::zeros(n); k * l];
    for ap in 0..l {
        let served = dcc.served_by(ap);
        if served.is_empty() {
            continue;
        }
        let mut gram = CMatrix::identity(n, n) * Complex::new(cfg.noise_power_w, 0.0);
        for &ue in &served {
            let h = estimates.of(ue, ap);
            gram += (h * h.adjoint()) * Complex::new(p, 0.0);
        }
        let inv = gram.try_inverse().ok_or_else(|| {
            Error::Numerical(format!("RZF regularized Gram matrix singular at AP {ap}"))
        })?;
        for &ue in &served {
            dirs[ue * l + ap] = (&inv * estimates.of(ue, ap)) * Complex::new(p, 0.0);
        }
    }
    Ok(dirs)
}

/// Normalize directions to unit norm on served links. A zero direction on a
/// served link is a hard error rather than a silent division.
pub fn normalize(
    directions: Vec<CVector>,
    dcc: &Dcc,
    scheme: PrecodingScheme,
) -> Result<PrecoderSet> {
    let l = dcc.num_aps();
    let mut w = directions;
    for ue in 0..dcc.num_ues() {
        for ap in 0..l {
            if !dcc.serves(ue, ap) {
                w[ue * l + ap].fill(Complex::new(0.0, 0.0));
            }
        }
    }
    normalize_in_place(&mut w, dcc)?;
    Ok(PrecoderSet { w, scheme, num_aps: l })
}

/// Build the normalized precoder set for one block under the given scheme.
pub fn precode(
    estimates: &ChannelEstimate,
    dcc: &Dcc,
    scheme: PrecodingScheme,
    cfg: &SystemConfig,
) -> Result<PrecoderSet> {
    let dirs = match scheme {
        PrecodingScheme::Mr => mr_directions(estimates, dcc),
        PrecodingScheme::Rzf => rzf_directions(estimates, dcc, cfg)?,
    };
    normalize(dirs, dcc, scheme)
}

/// Zeroed precoder set with the right shape, for reuse with [`precode_into`].
pub fn empty_precoders(dcc: &Dcc, scheme: PrecodingScheme, num_antennas: usize) -> PrecoderSet {
    PrecoderSet {
        w: vec![CVector::zeros(num_antennas); dcc.num_ues() * dcc.num_aps()],
        scheme,
        num_aps: dcc.num_aps(),
    }
}

/// Low-allocation variant of [`precode`]; overwrites `out` with the
/// normalized precoders for this block.
pub fn precode_into(
    estimates: &ChannelEstimate,
    dcc: &Dcc,
    scheme: PrecodingScheme,
    cfg: &SystemConfig,
    out: &mut PrecoderSet,
) -> Result<()> {
    let (k, l) = (dcc.num_ues(), dcc.num_aps());
    match scheme {
        PrecodingScheme::Mr => {
            for ue in 0..k {
                for ap in 0..l {
                    let idx = ue * l + ap;
                    if dcc.serves(ue, ap) {
                        out.w[idx].copy_from(estimates.of(ue, ap));
                    } else {
                        out.w[idx].fill(Complex::new(0.0, 0.0));
                    }
                }
            }
        }
        PrecodingScheme::Rzf => {
            let n = cfg.antennas_per_ap;
            let p = Complex::new(cfg.pilot_power_w, 0.0);
            let one = Complex::new(1.0, 0.0);
            let zero = Complex::new(0.0, 0.0);
            for ue in 0..k {
                for ap in 0..l {
                    if !dcc.serves(ue, ap) {
                        out.w[ue * l + ap].fill(zero);
                    }
                }
            }
            for ap in 0..l {
                let served = dcc.served_by(ap);
                if served.is_empty() {
                    continue;
                }
                let mut gram = CMatrix::identity(n, n) * Complex::new(cfg.noise_power_w, 0.0);
                for &ue in &served {
                    let h = estimates.of(ue, ap);
                    gram.gerc(p, h, h, one);
                }
                let inv = gram.try_inverse().ok_or_else(|| {
                    Error::Numerical(format!("RZF regularized Gram matrix singular at AP {ap}"))
                })?;
                for &ue in &served {
                    out.w[ue * l + ap].gemv(p, &inv, estimates.of(ue, ap), zero);
                }
            }
        }
    }
    out.scheme = scheme;
    normalize_in_place(&mut out.w, dcc)
}

fn normalize_in_place(w: &mut [CVector], dcc: &Dcc) -> Result<()> {
    let l = dcc.num_aps();
    for ue in 0..dcc.num_ues() {
        for ap in 0..l {
            if dcc.serves(ue, ap) {
                let v = &mut w[ue * l + ap];
                let norm = v.norm();
                if norm <= 0.0 || !norm.is_finite() {
                    return Err(Error::Numerical(format!(
                        "zero or invalid precoding direction on served link (ue {ue}, ap {ap})"
                    )));
                }
                *v /= Complex::new(norm, 0.0);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelFactors;
    use crate::config::DccPolicy;
    use crate::geometry::{build_realization, select_dcc};
    use crate::pilot::{assign_pilots, received_pilots, Estimator};
    use crate::rng::{standard_complex, stream_rng, StreamTag};
    use nalgebra::DMatrix;

    fn estimate_fixture(seed: u64) -> (SystemConfig, crate::geometry::NetworkRealization, ChannelEstimate) {
        let cfg = SystemConfig::default();
        let r = build_realization(&cfg, seed).unwrap();
        let a = assign_pilots(cfg.num_ues, cfg.tau_p);
        let est = Estimator::new(&r, &a, &cfg).unwrap();
        let factors = ChannelFactors::new(&r).unwrap();
        let mut ch = stream_rng(seed, 0, StreamTag::McChannel, 0);
        let mut nz = stream_rng(seed, 0, StreamTag::McNoise, 0);
        let s = factors.draw(&mut ch);
        let y = received_pilots(&s, &a, &cfg, &mut nz);
        let h_hat = est.estimate(&y);
        (cfg, r, h_hat)
    }

    fn fake_estimates(h: Vec<CVector>, num_aps: usize) -> ChannelEstimate {
        ChannelEstimate { h_hat: h, num_aps }
    }

    #[test]
    fn mr_follows_estimate() {
        let dcc = Dcc::new_all(1, 1);
        let e1 = CVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        let est = fake_estimates(vec![e1.clone()], 1);
        let dirs = mr_directions(&est, &dcc);
        assert_eq!(dirs[0], e1);
    }

    #[test]
    fn unserved_links_are_zero() {
        let beta = DMatrix::from_row_slice(1, 2, &[2.0, 1.0]);
        let dcc = select_dcc(&beta, DccPolicy::TopQ(1)).unwrap();
        let h = vec![
            CVector::from_element(2, Complex::new(1.0, 1.0)),
            CVector::from_element(2, Complex::new(1.0, 1.0)),
        ];
        let est = fake_estimates(h, 2);
        let set = precode(&est, &dcc, PrecodingScheme::Mr, &SystemConfig::default()).unwrap();
        assert!((set.of(0, 0).norm() - 1.0).abs() < 1e-15);
        assert_eq!(set.of(0, 1).norm(), 0.0);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let dcc = Dcc::new_all(1, 1);
        let e = CVector::from_vec(vec![Complex::new(0.2, -0.5), Complex::new(1.0, 0.25)]);
        let a = normalize(vec![e.clone()], &dcc, PrecodingScheme::Mr).unwrap();
        let b = normalize(vec![e * Complex::new(7.5, 0.0)], &dcc, PrecodingScheme::Mr).unwrap();
        assert!((a.of(0, 0) - b.of(0, 0)).norm() < 1e-15);
    }

    #[test]
    fn normalize_arithmetic() {
        let dcc = Dcc::new_all(1, 1);
        let v = CVector::from_vec(vec![Complex::new(3.0, 0.0), Complex::new(0.0, 4.0)]);
        let set = normalize(vec![v], &dcc, PrecodingScheme::Mr).unwrap();
        let w = set.of(0, 0);
        assert!((w[0] - Complex::new(0.6, 0.0)).norm() < 1e-15);
        assert!((w[1] - Complex::new(0.0, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn normalize_idempotent_and_exact() {
        let dcc = Dcc::new_all(1, 1);
        let mut rng = stream_rng(42, 0, StreamTag::McChannel, 0);
        for _ in 0..50 {
            let v = CVector::from_fn(3, |_, _| standard_complex(&mut rng));
            let once = normalize(vec![v], &dcc, PrecodingScheme::Mr).unwrap();
            assert!((once.of(0, 0).norm() - 1.0).abs() < 1e-14);
            let twice =
                normalize(vec![once.of(0, 0).clone()], &dcc, PrecodingScheme::Mr).unwrap();
            assert!((twice.of(0, 0) - once.of(0, 0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_served_direction_errors() {
        let dcc = Dcc::new_all(1, 1);
        let out = normalize(vec![CVector::zeros(2)], &dcc, PrecodingScheme::Mr);
        assert!(matches!(out, Err(Error::Numerical(_))));
    }

    #[test]
    fn rzf_single_ue_collinear_with_estimate() {
        let mut cfg = SystemConfig::default();
        cfg.num_ues = 1;
        let dcc = Dcc::new_all(1, 1);
        let e = CVector::from_vec(vec![Complex::new(3e-5, 0.0), Complex::new(0.0, 0.0)]);
        let est = fake_estimates(vec![e.clone()], 1);
        let dirs = rzf_directions(&est, &dcc, &cfg).unwrap();
        let w = normalize(dirs, &dcc, PrecodingScheme::Rzf).unwrap();
        let e_unit = &e / Complex::new(e.norm(), 0.0);
        // Inversion preserves the one-dimensional signal subspace.
        let align = w.of(0, 0).dotc(&e_unit).norm();
        assert!((align - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rzf_with_huge_regularization_matches_mr() {
        let (mut cfg, r, h_hat) = estimate_fixture(21);
        cfg.noise_power_w = 1e6;
        let mr = precode(&h_hat, &r.dcc, PrecodingScheme::Mr, &cfg).unwrap();
        let rzf = precode(&h_hat, &r.dcc, PrecodingScheme::Rzf, &cfg).unwrap();
        for k in 0..cfg.num_ues {
            for l in 0..cfg.num_aps {
                let align = rzf.of(k, l).dotc(mr.of(k, l)).norm();
                assert!((align - 1.0).abs() < 1e-6, "misaligned at ({k},{l}): {align}");
            }
        }
    }

    #[test]
    fn rzf_keeps_orthogonal_estimates_orthogonal() {
        // Two served UEs with orthogonal estimates: each estimate is an
        // eigenvector of the regularized Gram matrix, so the inverse maps it
        // to a scaled copy of itself and the directions stay orthogonal.
        let mut cfg = SystemConfig::default();
        cfg.num_ues = 2;
        cfg.num_aps = 1;
        cfg.ap_positions = Some(vec![(75.0, 75.0)]);
        let dcc = Dcc::new_all(2, 1);
        let e0 = CVector::from_vec(vec![Complex::new(2e-4, 0.0), Complex::new(0.0, 0.0)]);
        let e1 = CVector::from_vec(vec![Complex::new(0.0, 0.0), Complex::new(0.0, 5e-5)]);
        let est = fake_estimates(vec![e0, e1], 1);
        let dirs = rzf_directions(&est, &dcc, &cfg).unwrap();
        let set = normalize(dirs, &dcc, PrecodingScheme::Rzf).unwrap();
        let cross = set.of(0, 0).dotc(set.of(1, 0)).norm();
        assert!(cross < 1e-14, "cross inner product {cross}");
    }

    #[test]
    fn empty_cluster_ap_transmits_nothing() {
        let beta = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 4.0, 3.0]);
        let dcc = select_dcc(&beta, DccPolicy::TopQ(1)).unwrap();
        assert!(dcc.served_by(1).is_empty());
        let cfg = SystemConfig::default();
        let h: Vec<CVector> = (0..4)
            .map(|_| CVector::from_element(2, Complex::new(1e-4, 2e-4)))
            .collect();
        let est = fake_estimates(h, 2);
        let set = precode(&est, &dcc, PrecodingScheme::Rzf, &cfg).unwrap();
        for k in 0..2 {
            assert_eq!(set.of(k, 1).norm(), 0.0);
        }
    }

    #[test]
    fn rzf_invariant_to_joint_power_noise_scaling() {
        let (cfg, r, h_hat) = estimate_fixture(22);
        let base = precode(&h_hat, &r.dcc, PrecodingScheme::Rzf, &cfg).unwrap();
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.pilot_power_w *= 37.0;
        scaled_cfg.noise_power_w *= 37.0;
        let scaled = precode(&h_hat, &r.dcc, PrecodingScheme::Rzf, &scaled_cfg).unwrap();
        for k in 0..cfg.num_ues {
            for l in 0..cfg.num_aps {
                let align = scaled.of(k, l).dotc(base.of(k, l)).norm();
                assert!((align - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn served_links_unit_norm_every_block() {
        let (cfg, r, h_hat) = estimate_fixture(23);
        for scheme in [PrecodingScheme::Mr, PrecodingScheme::Rzf] {
            let set = precode(&h_hat, &r.dcc, scheme, &cfg).unwrap();
            for k in 0..cfg.num_ues {
                for l in 0..cfg.num_aps {
                    assert!((set.of(k, l).norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scheme_parse() {
        assert_eq!(PrecodingScheme::parse("MR").unwrap(), PrecodingScheme::Mr);
        assert_eq!(PrecodingScheme::parse("rzf").unwrap(), PrecodingScheme::Rzf);
        assert!(PrecodingScheme::parse("zf").is_err());
    }
}
