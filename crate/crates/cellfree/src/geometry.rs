//! Network geometry: AP placement, UE drops, wrap-around distances,
//! large-scale fading, spatial correlation, and serving clusters.

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;

use crate::config::{DccPolicy, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};

pub type CMatrix = DMatrix<Complex<f64>>;

/// A point in the deployment volume, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Deterministic AP layout: a centered sqrt(L) x sqrt(L) grid at the AP
/// height, each AP in the middle of its sub-square, unless explicit
/// positions are configured.
pub fn place_aps(cfg: &SystemConfig) -> Result<Vec<Position>> {
    if let Some(pos) = &cfg.ap_positions {
        if pos.len() != cfg.num_aps {
            return Err(Error::Config(format!(
                "ap_positions lists {} points but L = {}",
                pos.len(),
                cfg.num_aps
            )));
        }
        return Ok(pos
            .iter()
            .map(|&(x, y)| Position { x, y, z: cfg.ap_height_m })
            .collect());
    }
    let side = (cfg.num_aps as f64).sqrt().round() as usize;
    if side * side != cfg.num_aps {
        return Err(Error::Config(format!(
            "L = {} is not a perfect square and no ap_positions were given",
            cfg.num_aps
        )));
    }
    let mut aps = Vec::with_capacity(cfg.num_aps);
    for row in 0..side {
        for col in 0..side {
            // Cell centers at side * (2i + 1) / (2 sqrt(L)).
            let x = cfg.area_side_m * (2 * col + 1) as f64 / (2 * side) as f64;
            let y = cfg.area_side_m * (2 * row + 1) as f64 / (2 * side) as f64;
            aps.push(Position { x, y, z: cfg.ap_height_m });
        }
    }
    Ok(aps)
}

/// K UE positions drawn uniformly in the square at z = 0, from the stream
/// keyed by `(master_seed, sample_index)`.
pub fn drop_ues(cfg: &SystemConfig, sample_index: u64) -> Vec<Position> {
    let mut rng = stream_rng(cfg.master_seed, sample_index, StreamTag::UeDrop, 0);
    drop_ues_with(cfg.num_ues, cfg.area_side_m, &mut rng)
}

pub fn drop_ues_with<R: Rng + ?Sized>(num_ues: usize, side: f64, rng: &mut R) -> Vec<Position> {
    (0..num_ues)
        .map(|_| Position {
            x: rng.random_range(0.0..side),
            y: rng.random_range(0.0..side),
            z: 0.0,
        })
        .collect()
}

/// Shortest horizontal offset on the wrap-around torus.
#[inline]
fn torus_delta(a: f64, b: f64, side: f64) -> f64 {
    let d = (a - b).abs() % side;
    d.min(side - d)
}

/// AP-UE distance: torus metric in the horizontal plane plus the vertical
/// offset, so the distance never drops below the AP height.
pub fn link_distance(ap: Position, ue: Position, cfg: &SystemConfig) -> f64 {
    let dx = torus_delta(ap.x, ue.x, cfg.area_side_m);
    let dy = torus_delta(ap.y, ue.y, cfg.area_side_m);
    let dz = ap.z - ue.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Distance-dependent channel gain in dB: intercept + slope * log10(d / 1 m).
pub fn pathloss_db(d_m: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!("pathloss needs d > 0, got {d_m}")));
    }
    Ok(cfg.pathloss_intercept_db + cfg.pathloss_exponent_coeff * d_m.log10())
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Spatial correlation model for an N-antenna link with average gain beta.
///
/// Implementations must return a Hermitian PSD matrix with trace N * beta.
pub trait CorrelationModel {
    fn correlation(&self, beta: f64, num_antennas: usize) -> CMatrix;
}

/// Uncorrelated antennas: R = beta * I.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagonalCorrelation;

impl CorrelationModel for DiagonalCorrelation {
    fn correlation(&self, beta: f64, num_antennas: usize) -> CMatrix {
        CMatrix::identity(num_antennas, num_antennas) * Complex::new(beta, 0.0)
    }
}

/// Build and validate one correlation matrix: Hermitian, PSD, trace N * beta.
pub fn build_correlation(
    beta: f64,
    model: &dyn CorrelationModel,
    num_antennas: usize,
) -> Result<CMatrix> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
    }
    let r = model.correlation(beta, num_antennas);
    validate_correlation(&r, beta, num_antennas)?;
    Ok(r)
}

fn validate_correlation(r: &CMatrix, beta: f64, num_antennas: usize) -> Result<()> {
    if r.nrows() != num_antennas || r.ncols() != num_antennas {
        return Err(Error::Dimension(format!(
            "correlation matrix is {}x{}, expected {num_antennas}x{num_antennas}",
            r.nrows(),
            r.ncols()
        )));
    }
    let herm_err = (r - r.adjoint()).norm();
    if herm_err > 1e-10 * r.norm().max(1.0) {
        return Err(Error::Numerical("correlation matrix is not Hermitian".into()));
    }
    let trace = r.trace().re;
    let expected = num_antennas as f64 * beta;
    if (trace - expected).abs() > 1e-9 * expected {
        return Err(Error::Numerical(format!(
            "correlation trace {trace} does not equal N * beta = {expected}"
        )));
    }
    let eig = r.clone().symmetric_eigenvalues();
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * expected {
        return Err(Error::Numerical(format!(
            "correlation matrix is not PSD (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Per-AP serving clusters D_l, stored densely as a K x L mask.
#[derive(Debug, Clone)]
pub struct Dcc {
    served: Vec<bool>,
    num_ues: usize,
    num_aps: usize,
}

impl Dcc {
    pub fn new_all(num_ues: usize, num_aps: usize) -> Self {
        Dcc { served: vec![true; num_ues * num_aps], num_ues, num_aps }
    }

    #[inline]
    pub fn serves(&self, ue: usize, ap: usize) -> bool {
        self.served[ue * self.num_aps + ap]
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    /// UEs served by AP `ap`, ascending.
    pub fn served_by(&self, ap: usize) -> Vec<usize> {
        (0..self.num_ues).filter(|&k| self.serves(k, ap)).collect()
    }

    /// Number of UEs served by AP `ap`.
    pub fn cluster_size(&self, ap: usize) -> usize {
        (0..self.num_ues).filter(|&k| self.serves(k, ap)).count()
    }
}

/// Select serving clusters from the large-scale fading matrix.
pub fn select_dcc(beta: &DMatrix<f64>, policy: DccPolicy) -> Result<Dcc> {
    let (num_ues, num_aps) = beta.shape();
    match policy {
        DccPolicy::All => Ok(Dcc::new_all(num_ues, num_aps)),
        DccPolicy::TopQ(q) => {
            if q < 1 || q > num_aps {
                return Err(Error::Config(format!("top-{q} out of range 1..=L ({num_aps})")));
            }
            let mut served = vec![false; num_ues * num_aps];
            for k in 0..num_ues {
                let mut order: Vec<usize> = (0..num_aps).collect();
                order.sort_by(|&a, &b| beta[(k, b)].partial_cmp(&beta[(k, a)]).unwrap());
                for &l in order.iter().take(q) {
                    served[k * num_aps + l] = true;
                }
            }
            Ok(Dcc { served, num_ues, num_aps })
        }
    }
}

/// Geometry plus channel statistics for one drop of the network.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub ap_positions: Vec<Position>,
    pub ue_positions: Vec<Position>,
    /// K x L large-scale fading, linear.
    pub beta: DMatrix<f64>,
    /// Correlation matrices, indexed k * L + l.
    pub correlation: Vec<CMatrix>,
    pub dcc: Dcc,
}

impl NetworkRealization {
    #[inline]
    pub fn num_ues(&self) -> usize {
        self.beta.nrows()
    }

    #[inline]
    pub fn num_aps(&self) -> usize {
        self.beta.ncols()
    }

    #[inline]
    pub fn correlation_of(&self, ue: usize, ap: usize) -> &CMatrix {
        &self.correlation[ue * self.num_aps() + ap]
    }

    /// K x L large-scale fading in dB.
    pub fn beta_db(&self) -> DMatrix<f64> {
        self.beta.map(linear_to_db)
    }
}

/// Build a full realization for `(config, sample_index)` with the default
/// diagonal correlation model.
pub fn build_realization(cfg: &SystemConfig, sample_index: u64) -> Result<NetworkRealization> {
    build_realization_with(cfg, sample_index, &DiagonalCorrelation)
}

pub fn build_realization_with(
    cfg: &SystemConfig,
    sample_index: u64,
    model: &dyn CorrelationModel,
) -> Result<NetworkRealization> {
    cfg.validate()?;
    let ap_positions = place_aps(cfg)?;
    let ue_positions = drop_ues(cfg, sample_index);
    let (k, l, n) = (cfg.num_ues, cfg.num_aps, cfg.antennas_per_ap);
    let mut beta = DMatrix::zeros(k, l);
    let mut correlation = Vec::with_capacity(k * l);
    for ue in 0..k {
        for ap in 0..l {
            let d = link_distance(ap_positions[ap], ue_positions[ue], cfg);
            let b = db_to_linear(pathloss_db(d, cfg)?);
            beta[(ue, ap)] = b;
            correlation.push(build_correlation(b, model, n)?);
        }
    }
    let dcc = select_dcc(&beta, cfg.dcc_policy)?;
    for ue in 0..k {
        if !(0..l).any(|ap| dcc.serves(ue, ap)) {
            return Err(Error::Internal(format!("UE {ue} is served by no AP")));
        }
    }
    Ok(NetworkRealization { ap_positions, ue_positions, beta, correlation, dcc })
}
