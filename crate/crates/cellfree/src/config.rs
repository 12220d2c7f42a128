//! System configuration and the flat `key = value` config file format.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// How each AP picks the set of UEs it serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DccPolicy {
    /// Every AP serves every UE (the canonical cell-free setup).
    All,
    /// Each UE is served by its Q strongest APs (by large-scale fading).
    TopQ(usize),
}

impl DccPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(DccPolicy::All);
        }
        if let Some(q) = s.strip_prefix("top-") {
            let q: usize = q
                .parse()
                .map_err(|_| Error::Config(format!("invalid dcc_policy '{s}'")))?;
            return Ok(DccPolicy::TopQ(q));
        }
        Err(Error::Config(format!(
            "invalid dcc_policy '{s}' (expected 'all' or 'top-<Q>')"
        )))
    }
}

impl fmt::Display for DccPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DccPolicy::All => write!(f, "all"),
            DccPolicy::TopQ(q) => write!(f, "top-{q}"),
        }
    }
}

/// Full parameterization of the simulated network.
///
/// Defaults describe a 150 m x 150 m wrap-around area with a 3x3 AP grid,
/// 5 UEs, 2 antennas per AP, 200-use coherence blocks split 5/195 between
/// pilots and downlink data, 100 mW uplink pilots, 1 W per-AP downlink
/// budget, and -94 dBm receiver noise.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    /// Number of APs (L).
    pub num_aps: usize,
    /// Number of UEs (K).
    pub num_ues: usize,
    /// Antennas per AP (N).
    pub antennas_per_ap: usize,
    /// Side of the square deployment area, meters.
    pub area_side_m: f64,
    /// AP height above the UE plane, meters.
    pub ap_height_m: f64,
    /// Channel uses per coherence block.
    pub tau_c: usize,
    /// Channel uses spent on uplink pilots.
    pub tau_p: usize,
    /// Channel uses spent on downlink data.
    pub tau_d: usize,
    /// Uplink pilot transmit power per UE, watts.
    pub pilot_power_w: f64,
    /// Per-AP downlink power budget, watts.
    pub max_dl_power_w: f64,
    /// Receiver noise power, watts.
    pub noise_power_w: f64,
    /// Pathloss at 1 m, dB.
    pub pathloss_intercept_db: f64,
    /// Pathloss slope, dB per decade of distance (negative).
    pub pathloss_exponent_coeff: f64,
    /// Monte-Carlo coherence blocks used to estimate SINR coefficients.
    pub mc_realizations: usize,
    /// Master seed; every stream in a run derives from it.
    pub master_seed: u64,
    /// Explicit AP (x, y) positions; overrides the default grid.
    pub ap_positions: Option<Vec<(f64, f64)>>,
    /// Serving-cluster selection policy.
    pub dcc_policy: DccPolicy,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            num_aps: 9,
            num_ues: 5,
            antennas_per_ap: 2,
            area_side_m: 150.0,
            ap_height_m: 10.0,
            tau_c: 200,
            tau_p: 5,
            tau_d: 195,
            pilot_power_w: 0.1,
            max_dl_power_w: 1.0,
            // -94 dBm
            noise_power_w: 10f64.powf((-94.0 - 30.0) / 10.0),
            pathloss_intercept_db: -30.5,
            pathloss_exponent_coeff: -36.7,
            mc_realizations: 1000,
            master_seed: 1,
            ap_positions: None,
            dcc_policy: DccPolicy::All,
        }
    }
}

impl SystemConfig {
    /// Downlink prelog factor tau_d / tau_c.
    pub fn prelog(&self) -> f64 {
        self.tau_d as f64 / self.tau_c as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aps < 1 || self.num_ues < 1 || self.antennas_per_ap < 1 {
            return Err(Error::Config("L, K, N must all be >= 1".into()));
        }
        if self.tau_p + self.tau_d > self.tau_c {
            return Err(Error::Config(format!(
                "tau_p + tau_d = {} exceeds tau_c = {}",
                self.tau_p + self.tau_d,
                self.tau_c
            )));
        }
        if self.tau_p < 1 {
            return Err(Error::Config("tau_p must be >= 1".into()));
        }
        for (name, v) in [
            ("area_side", self.area_side_m),
            ("p_ul", self.pilot_power_w),
            ("p_dl_max", self.max_dl_power_w),
            ("noise_power", self.noise_power_w),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        if self.ap_height_m < 0.0 || !self.ap_height_m.is_finite() {
            return Err(Error::Config("ap_height must be nonnegative".into()));
        }
        if let Some(pos) = &self.ap_positions {
            if pos.len() != self.num_aps {
                return Err(Error::Config(format!(
                    "ap_positions lists {} points but L = {}",
                    pos.len(),
                    self.num_aps
                )));
            }
        }
        if let DccPolicy::TopQ(q) = self.dcc_policy {
            if q < 1 || q > self.num_aps {
                return Err(Error::Config(format!(
                    "dcc_policy top-{q} out of range 1..=L ({})",
                    self.num_aps
                )));
            }
        }
        Ok(())
    }

    /// Parse the flat `key = value` format. Lines starting with `#` (and
    /// blank lines) are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "L" => cfg.num_aps = value.parse().map_err(|_| bad("L"))?,
                "K" => cfg.num_ues = value.parse().map_err(|_| bad("K"))?,
                "N" => cfg.antennas_per_ap = value.parse().map_err(|_| bad("N"))?,
                "area_side" => cfg.area_side_m = value.parse().map_err(|_| bad("area_side"))?,
                "ap_height" => cfg.ap_height_m = value.parse().map_err(|_| bad("ap_height"))?,
                "tau_c" => cfg.tau_c = value.parse().map_err(|_| bad("tau_c"))?,
                "tau_p" => cfg.tau_p = value.parse().map_err(|_| bad("tau_p"))?,
                "tau_d" => cfg.tau_d = value.parse().map_err(|_| bad("tau_d"))?,
                "p_ul" => cfg.pilot_power_w = value.parse().map_err(|_| bad("p_ul"))?,
                "p_dl_max" => cfg.max_dl_power_w = value.parse().map_err(|_| bad("p_dl_max"))?,
                "noise_power" => cfg.noise_power_w = value.parse().map_err(|_| bad("noise_power"))?,
                "pathloss_intercept" => {
                    cfg.pathloss_intercept_db = value.parse().map_err(|_| bad("pathloss_intercept"))?
                }
                "pathloss_exponent_coeff" => {
                    cfg.pathloss_exponent_coeff =
                        value.parse().map_err(|_| bad("pathloss_exponent_coeff"))?
                }
                "mc_realizations" => {
                    cfg.mc_realizations = value.parse().map_err(|_| bad("mc_realizations"))?
                }
                "master_seed" => cfg.master_seed = value.parse().map_err(|_| bad("master_seed"))?,
                "ap_positions" => cfg.ap_positions = Some(parse_positions(value).map_err(|e| {
                    Error::Config(format!("line {}: {e}", lineno + 1))
                })?),
                "dcc_policy" => cfg.dcc_policy = DccPolicy::parse(value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file '{}': {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Render in the same `key = value` format accepted by [`parse`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("L = {}\n", self.num_aps));
        out.push_str(&format!("K = {}\n", self.num_ues));
        out.push_str(&format!("N = {}\n", self.antennas_per_ap));
        out.push_str(&format!("area_side = {}\n", self.area_side_m));
        out.push_str(&format!("ap_height = {}\n", self.ap_height_m));
        out.push_str(&format!("tau_c = {}\n", self.tau_c));
        out.push_str(&format!("tau_p = {}\n", self.tau_p));
        out.push_str(&format!("tau_d = {}\n", self.tau_d));
        out.push_str(&format!("p_ul = {}\n", self.pilot_power_w));
        out.push_str(&format!("p_dl_max = {}\n", self.max_dl_power_w));
        out.push_str(&format!("noise_power = {}\n", self.noise_power_w));
        out.push_str(&format!("pathloss_intercept = {}\n", self.pathloss_intercept_db));
        out.push_str(&format!(
            "pathloss_exponent_coeff = {}\n",
            self.pathloss_exponent_coeff
        ));
        out.push_str(&format!("mc_realizations = {}\n", self.mc_realizations));
        out.push_str(&format!("master_seed = {}\n", self.master_seed));
        if let Some(pos) = &self.ap_positions {
            let items: Vec<String> = pos.iter().map(|(x, y)| format!("{x}:{y}")).collect();
            out.push_str(&format!("ap_positions = {}\n", items.join(";")));
        }
        out.push_str(&format!("dcc_policy = {}\n", self.dcc_policy));
        out
    }
}

fn parse_positions(value: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    let mut pos = Vec::new();
    for item in value.split(';') {
        let (x, y) = item
            .split_once(':')
            .ok_or_else(|| format!("bad ap_positions item '{item}' (expected x:y)"))?;
        let x: f64 = x.trim().parse().map_err(|_| format!("bad x '{x}'"))?;
        let y: f64 = y.trim().parse().map_err(|_| format!("bad y '{y}'"))?;
        pos.push((x, y));
    }
    Ok(pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tau_p + cfg.tau_d, cfg.tau_c);
        assert!((cfg.noise_power_w - 3.981071705534969e-13).abs() < 1e-27);
        assert!((cfg.prelog() - 0.975).abs() < 1e-15);
    }

    #[test]
    fn parse_roundtrip() {
        let mut cfg = SystemConfig::default();
        cfg.num_aps = 4;
        cfg.master_seed = 99;
        cfg.ap_positions = Some(vec![(1.0, 2.0), (3.0, 4.0), (5.0, 6.0), (7.5, 8.25)]);
        cfg.dcc_policy = DccPolicy::TopQ(2);
        let text = cfg.to_config_string();
        let back = SystemConfig::parse(&text).unwrap();
        assert_eq!(back.num_aps, 4);
        assert_eq!(back.master_seed, 99);
        assert_eq!(back.ap_positions.as_ref().unwrap()[3], (7.5, 8.25));
        assert_eq!(back.dcc_policy, DccPolicy::TopQ(2));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = SystemConfig::parse("# a comment\n\nK = 3\n").unwrap();
        assert_eq!(cfg.num_ues, 3);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            SystemConfig::parse("frobnicate = 1\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_tau_split_rejected() {
        let err = SystemConfig::parse("tau_p = 100\ntau_d = 150\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn nonpositive_power_rejected() {
        assert!(SystemConfig::parse("noise_power = 0\n").is_err());
        assert!(SystemConfig::parse("p_ul = -0.1\n").is_err());
    }

    #[test]
    fn top_q_bounds_checked() {
        assert!(SystemConfig::parse("dcc_policy = top-0\n").is_err());
        assert!(SystemConfig::parse("dcc_policy = top-10\n").is_err());
        assert!(SystemConfig::parse("dcc_policy = top-9\n").is_ok());
    }
}
