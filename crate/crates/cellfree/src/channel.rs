//! Correlated Rayleigh channel sampling.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CMatrix, NetworkRealization};
use crate::rng::standard_complex;

pub type CVector = DVector<Complex<f64>>;

/// Channel vectors for one coherence block, indexed k * L + l.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub h: Vec<CVector>,
    pub(crate) num_aps: usize,
}

impl ChannelSample {
    #[inline]
    pub fn of(&self, ue: usize, ap: usize) -> &CVector {
        &self.h[ue * self.num_aps + ap]
    }
}

/// Precomputed square roots of the correlation matrices, so drawing a block
/// reduces to one matrix-vector product per link.
#[derive(Debug, Clone)]
pub struct ChannelFactors {
    factors: Vec<CMatrix>,
    num_ues: usize,
    num_aps: usize,
}

impl ChannelFactors {
    pub fn new(realization: &NetworkRealization) -> Result<Self> {
        let factors = realization
            .correlation
            .iter()
            .map(psd_sqrt)
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelFactors {
            factors,
            num_ues: realization.num_ues(),
            num_aps: realization.num_aps(),
        })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    /// Draw one coherence block: h = R^{1/2} z with z standard complex normal.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelSample {
        let mut sample = self.empty_sample();
        self.draw_into(rng, &mut sample);
        sample
    }

    /// Zeroed sample with the right shape, for reuse with [`draw_into`].
    pub fn empty_sample(&self) -> ChannelSample {
        let n = self.factors[0].nrows();
        ChannelSample {
            h: vec![CVector::zeros(n); self.factors.len()],
            num_aps: self.num_aps,
        }
    }

    /// Allocation-free redraw into an existing sample.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, sample: &mut ChannelSample) {
        let n = self.factors[0].nrows();
        let one = Complex::new(1.0, 0.0);
        let zero = Complex::new(0.0, 0.0);
        let mut z = CVector::zeros(n);
        for (f, h) in self.factors.iter().zip(sample.h.iter_mut()) {
            for zi in z.iter_mut() {
                *zi = standard_complex(rng);
            }
            h.gemv(one, f, &z, zero);
        }
    }
}

/// Hermitian PSD square root. Diagonal matrices take the cheap path; general
/// matrices go through an eigendecomposition with a small negative-eigenvalue
/// clamp. Eigenvalues below the clamp tolerance are a hard error.
fn psd_sqrt(r: &CMatrix) -> Result<CMatrix> {
    let n = r.nrows();
    let scale = r.norm().max(f64::MIN_POSITIVE);
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || r[(i, j)].norm() <= 1e-14 * scale));
    if is_diagonal {
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            let d = r[(i, i)].re;
            if d < -1e-12 * scale {
                return Err(Error::Numerical(format!(
                    "correlation diagonal entry {d} is negative"
                )));
            }
            out[(i, i)] = Complex::new(d.max(0.0).sqrt(), 0.0);
        }
        return Ok(out);
    }
    let eig = nalgebra::SymmetricEigen::new(r.clone());
    let mut lambda_sqrt = DVector::zeros(n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-10 * scale {
            return Err(Error::Numerical(format!(
                "correlation matrix not PSD (eigenvalue {lam})"
            )));
        }
        lambda_sqrt[i] = lam.max(0.0).sqrt();
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= Complex::new(lambda_sqrt[j], 0.0);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// Draw a block directly from a realization (factorizes on every call; use
/// [`ChannelFactors`] when drawing many blocks).
pub fn draw_channels<R: Rng + ?Sized>(
    realization: &NetworkRealization,
    rng: &mut R,
) -> Result<ChannelSample> {
    Ok(ChannelFactors::new(realization)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::geometry::build_realization;
    use crate::rng::{stream_rng, StreamTag};

    fn one_link_realization(beta: f64, n: usize) -> NetworkRealization {
        let mut cfg = SystemConfig::default();
        cfg.num_aps = 1;
        cfg.num_ues = 1;
        cfg.antennas_per_ap = n;
        let mut r = build_realization(&cfg, 0).unwrap();
        r.beta[(0, 0)] = beta;
        r.correlation[0] = CMatrix::identity(n, n) * Complex::new(beta, 0.0);
        r
    }

    #[test]
    fn zero_covariance_gives_zero_channel() {
        let mut r = one_link_realization(1.0, 2);
        r.correlation[0] = CMatrix::zeros(2, 2);
        let mut rng = stream_rng(1, 0, StreamTag::McChannel, 0);
        let s = draw_channels(&r, &mut rng).unwrap();
        assert_eq!(s.of(0, 0).norm(), 0.0);
    }

    #[test]
    fn sample_covariance_matches_model() {
        let beta = 0.37;
        let n = 2;
        let r = one_link_realization(beta, n);
        let factors = ChannelFactors::new(&r).unwrap();
        let mut rng = stream_rng(11, 0, StreamTag::McChannel, 0);
        let draws = 30_000;
        let mut cov = CMatrix::zeros(n, n);
        let mut mean = CVector::zeros(n);
        for _ in 0..draws {
            let s = factors.draw(&mut rng);
            let h = s.of(0, 0);
            cov += h * h.adjoint();
            mean += h;
        }
        cov /= Complex::new(draws as f64, 0.0);
        mean /= Complex::new(draws as f64, 0.0);
        let target = CMatrix::identity(n, n) * Complex::new(beta, 0.0);
        let rel = (&cov - &target).norm() / target.norm();
        assert!(rel < 0.05, "covariance off by {rel}");
        // Each mean entry within 5 sigma / sqrt(draws) of zero.
        let bound = 5.0 * (beta / draws as f64).sqrt();
        for m in mean.iter() {
            assert!(m.norm() < bound, "mean entry {m} exceeds {bound}");
        }
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let r = one_link_realization(0.5, 3);
        let factors = ChannelFactors::new(&r).unwrap();
        let mut a = stream_rng(5, 2, StreamTag::McChannel, 7);
        let mut b = stream_rng(5, 2, StreamTag::McChannel, 7);
        let sa = factors.draw(&mut a);
        let sb = factors.draw(&mut b);
        assert_eq!(sa.of(0, 0), sb.of(0, 0));
    }

    #[test]
    fn non_psd_matrix_rejected() {
        let mut r = one_link_realization(1.0, 2);
        let mut bad = CMatrix::zeros(2, 2);
        bad[(0, 0)] = Complex::new(1.0, 0.0);
        bad[(1, 1)] = Complex::new(-1.0, 0.0);
        r.correlation[0] = bad;
        assert!(ChannelFactors::new(&r).is_err());
    }

    #[test]
    fn general_hermitian_factor_reproduces_matrix() {
        // Non-diagonal PSD matrix: factor squared must reproduce it.
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex::new(2.0, 0.0);
        m[(0, 1)] = Complex::new(0.5, 0.3);
        m[(1, 0)] = Complex::new(0.5, -0.3);
        m[(1, 1)] = Complex::new(1.0, 0.0);
        let f = psd_sqrt(&m).unwrap();
        let back = &f * f.adjoint();
        assert!((&back - &m).norm() < 1e-12);
    }
}
