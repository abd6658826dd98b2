//! Scenario parameters, the `key = value` config format and derived constants.
//!
//! Keys in config files and `--set` overrides use the scenario names
//! (`L`, `K`, `N_AP`, `N_UE`, `N_s`, `L_k`, `tau_c`, ...). Units are fixed:
//! meters, milliwatts, GHz, MHz, dB.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Downlink transmission scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Coherent transmission with perfectly calibrated UE arrays.
    Pcal,
    /// Coherent transmission with uncalibrated UE arrays.
    Uncal,
    /// Differential space-time block coding with uncalibrated UE arrays.
    Dstbc,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Pcal, Mode::Uncal, Mode::Dstbc];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pcal => "pcal",
            Mode::Uncal => "uncal",
            Mode::Dstbc => "dstbc",
        }
    }

    /// Whether the UE RF chains carry random phase offsets in this mode.
    pub fn has_ue_offsets(self) -> bool {
        !matches!(self, Mode::Pcal)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pcal" => Ok(Mode::Pcal),
            "uncal" => Ok(Mode::Uncal),
            "dstbc" => Ok(Mode::Dstbc),
            other => Err(format!("unknown mode '{other}' (expected pcal, uncal or dstbc)")),
        }
    }
}

/// Precoder family. ZISI pairs with distributed power allocation and
/// P-MMSE with centralized allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    Zisi,
    Pmmse,
}

impl PrecoderKind {
    pub const ALL: [PrecoderKind; 2] = [PrecoderKind::Zisi, PrecoderKind::Pmmse];

    pub fn as_str(self) -> &'static str {
        match self {
            PrecoderKind::Zisi => "zisi",
            PrecoderKind::Pmmse => "pmmse",
        }
    }
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "zisi" => Ok(PrecoderKind::Zisi),
            "pmmse" => Ok(PrecoderKind::Pmmse),
            other => Err(format!("unknown precoder '{other}' (expected zisi or pmmse)")),
        }
    }
}

/// All simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of APs.
    #[serde(rename = "L")]
    pub num_aps: usize,
    /// Number of UEs.
    #[serde(rename = "K")]
    pub num_ues: usize,
    #[serde(rename = "N_AP")]
    pub ap_antennas: usize,
    #[serde(rename = "N_UE")]
    pub ue_antennas: usize,
    /// Data streams per UE.
    #[serde(rename = "N_s")]
    pub streams: usize,
    /// Serving cluster size, equal to the codeword span.
    #[serde(rename = "L_k")]
    pub cluster_size: usize,
    pub area_side_m: f64,
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_d: usize,
    #[serde(rename = "p_ue_total_mW")]
    pub p_ue_total_mw: f64,
    #[serde(rename = "p_ap_total_mW")]
    pub p_ap_total_mw: f64,
    #[serde(rename = "carrier_GHz")]
    pub carrier_ghz: f64,
    #[serde(rename = "bandwidth_MHz")]
    pub bandwidth_mhz: f64,
    #[serde(rename = "noise_figure_dB")]
    pub noise_figure_db: f64,
    #[serde(rename = "shadow_sigma_dB")]
    pub shadow_sigma_db: f64,
    pub h_ap_m: f64,
    pub h_ue_m: f64,
    /// Path loss at 1 m in dB (UMi log-distance law).
    #[serde(rename = "pathloss_intercept_dB")]
    pub pathloss_intercept_db: f64,
    /// Path loss exponent times 10.
    pub pathloss_slope: f64,
    /// PSK constellation order.
    #[serde(rename = "M_o")]
    pub psk_order: usize,
    pub mode: Mode,
    pub precoder: PrecoderKind,
    pub varsigma: f64,
    pub kappa: f64,
    pub seed: u64,
    pub n_setups: usize,
    pub n_blocks_per_setup: usize,
    /// Use the true uplink channels in place of MMSE estimates.
    pub perfect_csi: bool,
    /// Drop downlink receiver noise.
    pub noiseless: bool,
    /// Redraw UE offsets every coherence block instead of once per setup.
    pub redraw_offsets_per_block: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            num_aps: 40,
            num_ues: 20,
            ap_antennas: 8,
            ue_antennas: 2,
            streams: 2,
            cluster_size: 2,
            area_side_m: 500.0,
            tau_c: 200,
            tau_p: 16,
            tau_d: 184,
            p_ue_total_mw: 100.0,
            p_ap_total_mw: 200.0,
            carrier_ghz: 3.5,
            bandwidth_mhz: 20.0,
            noise_figure_db: 8.0,
            shadow_sigma_db: 4.0,
            h_ap_m: 11.65,
            h_ue_m: 1.65,
            pathloss_intercept_db: -30.5,
            pathloss_slope: 36.7,
            psk_order: 8,
            mode: Mode::Dstbc,
            precoder: PrecoderKind::Zisi,
            varsigma: 0.2,
            kappa: 0.5,
            seed: 1,
            n_setups: 200,
            n_blocks_per_setup: 100,
            perfect_csi: false,
            noiseless: false,
            redraw_offsets_per_block: false,
        }
    }
}

/// Every key accepted by [`SystemConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "L",
    "K",
    "N_AP",
    "N_UE",
    "N_s",
    "L_k",
    "area_side_m",
    "tau_c",
    "tau_p",
    "tau_d",
    "p_ue_total_mW",
    "p_ap_total_mW",
    "carrier_GHz",
    "bandwidth_MHz",
    "noise_figure_dB",
    "shadow_sigma_dB",
    "h_ap_m",
    "h_ue_m",
    "pathloss_intercept_dB",
    "pathloss_slope",
    "M_o",
    "mode",
    "precoder",
    "varsigma",
    "kappa",
    "seed",
    "n_setups",
    "n_blocks_per_setup",
    "perfect_csi",
    "noiseless",
    "redraw_offsets_per_block",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl SystemConfig {
    /// Reads a config file, starting from the defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::parse_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` text over the defaults without validating.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    content: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    content: raw.to_string(),
                });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "L" => self.num_aps = parse_value(key, value)?,
            "K" => self.num_ues = parse_value(key, value)?,
            "N_AP" => self.ap_antennas = parse_value(key, value)?,
            "N_UE" => self.ue_antennas = parse_value(key, value)?,
            "N_s" => self.streams = parse_value(key, value)?,
            "L_k" => self.cluster_size = parse_value(key, value)?,
            "area_side_m" => self.area_side_m = parse_value(key, value)?,
            "tau_c" => self.tau_c = parse_value(key, value)?,
            "tau_p" => self.tau_p = parse_value(key, value)?,
            "tau_d" => self.tau_d = parse_value(key, value)?,
            "p_ue_total_mW" => self.p_ue_total_mw = parse_value(key, value)?,
            "p_ap_total_mW" => self.p_ap_total_mw = parse_value(key, value)?,
            "carrier_GHz" => self.carrier_ghz = parse_value(key, value)?,
            "bandwidth_MHz" => self.bandwidth_mhz = parse_value(key, value)?,
            "noise_figure_dB" => self.noise_figure_db = parse_value(key, value)?,
            "shadow_sigma_dB" => self.shadow_sigma_db = parse_value(key, value)?,
            "h_ap_m" => self.h_ap_m = parse_value(key, value)?,
            "h_ue_m" => self.h_ue_m = parse_value(key, value)?,
            "pathloss_intercept_dB" => self.pathloss_intercept_db = parse_value(key, value)?,
            "pathloss_slope" => self.pathloss_slope = parse_value(key, value)?,
            "M_o" => self.psk_order = parse_value(key, value)?,
            "mode" => self.mode = parse_value(key, value)?,
            "precoder" => self.precoder = parse_value(key, value)?,
            "varsigma" => self.varsigma = parse_value(key, value)?,
            "kappa" => self.kappa = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "n_setups" => self.n_setups = parse_value(key, value)?,
            "n_blocks_per_setup" => self.n_blocks_per_setup = parse_value(key, value)?,
            "perfect_csi" => self.perfect_csi = parse_value(key, value)?,
            "noiseless" => self.noiseless = parse_value(key, value)?,
            "redraw_offsets_per_block" => self.redraw_offsets_per_block = parse_value(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Checks every structural invariant, naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, message: String| {
            Err(ConfigError::Invariant {
                key: key.to_string(),
                message,
            })
        };
        if self.num_aps == 0 {
            return fail("L", "at least one AP is required".into());
        }
        if self.num_ues == 0 {
            return fail("K", "at least one UE is required".into());
        }
        if self.ue_antennas == 0 {
            return fail("N_UE", "N_UE must be positive".into());
        }
        if self.streams == 0 || self.streams > self.ue_antennas {
            return fail("N_s", "N_s must satisfy 1 <= N_s <= N_UE".into());
        }
        if !self.ue_antennas.is_multiple_of(self.streams) {
            return fail("N_UE", "N_UE not divisible by N_s".into());
        }
        if self.ap_antennas < self.ue_antennas {
            return fail("N_AP", "N_AP must be at least N_UE for a full-rank Gram matrix".into());
        }
        if !matches!(self.cluster_size, 2 | 4) {
            return fail("L_k", format!("L_k = {} unsupported (orthogonal designs exist for 2 and 4)", self.cluster_size));
        }
        if self.cluster_size > self.num_aps {
            return fail("L_k", "L_k exceeds the number of APs".into());
        }
        if self.tau_p + self.tau_d != self.tau_c {
            return fail("tau_d", "tau_p + tau_d must equal tau_c".into());
        }
        if self.tau_p == 0 || !self.tau_p.is_multiple_of(self.ue_antennas) {
            return fail("tau_p", "tau_p must be a positive multiple of N_UE".into());
        }
        if self.tau_d / self.cluster_size < 2 {
            return fail("tau_d", "tau_d must hold a reference block and one data codeword".into());
        }
        if self.psk_order < 2 || !self.psk_order.is_power_of_two() {
            return fail("M_o", "M_o must be a power of two and at least 2".into());
        }
        if !(self.area_side_m > 0.0 && self.area_side_m.is_finite()) {
            return fail("area_side_m", "area side must be positive".into());
        }
        if !(self.h_ap_m - self.h_ue_m).is_finite() || self.h_ap_m <= self.h_ue_m {
            return fail("h_ap_m", "AP antennas must be mounted above UE antennas".into());
        }
        if self.p_ue_total_mw.is_nan() || self.p_ue_total_mw <= 0.0 {
            return fail("p_ue_total_mW", "UE power must be positive".into());
        }
        if self.p_ap_total_mw.is_nan() || self.p_ap_total_mw <= 0.0 {
            return fail("p_ap_total_mW", "AP power must be positive".into());
        }
        if self.bandwidth_mhz.is_nan() || self.bandwidth_mhz <= 0.0 {
            return fail("bandwidth_MHz", "bandwidth must be positive".into());
        }
        if self.shadow_sigma_db.is_nan() || self.shadow_sigma_db < 0.0 {
            return fail("shadow_sigma_dB", "shadowing deviation must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.varsigma) {
            return fail("varsigma", "varsigma must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return fail("kappa", "kappa must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn derive(&self) -> DerivedConstants {
        DerivedConstants::from_config(self)
    }

    /// Stream group size `N_UE / N_s`.
    pub fn group_size(&self) -> usize {
        self.ue_antennas / self.streams
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.psk_order.trailing_zeros() as usize
    }

    /// Number of orthogonal pilot groups of `N_UE` sequences each.
    pub fn pilot_groups(&self) -> usize {
        self.tau_p / self.ue_antennas
    }

    pub fn rho_max_w(&self) -> f64 {
        self.p_ap_total_mw * 1e-3
    }

    /// Per-antenna UE power, used as pilot power and as the P-MMSE weight.
    pub fn eta_w(&self) -> f64 {
        self.p_ue_total_mw * 1e-3 / self.ue_antennas as f64
    }
}

/// Constants computed once from a valid [`SystemConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub noise_power_w: f64,
    pub d_min_m: f64,
    /// Codeword intervals per coherence block, reference block included.
    pub codeword_intervals: usize,
    /// Information symbols per codeword.
    pub symbols_per_codeword: usize,
    /// UE antennas per stream group.
    pub group_size: usize,
    pub prelog_coherent: f64,
    pub prelog_dstbc: f64,
}

/// Thermal noise power in watts for the given bandwidth and noise figure.
pub fn noise_power_w(bandwidth_mhz: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * (bandwidth_mhz * 1e6).log10() + noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Symbols carried by one codeword of the orthogonal design spanning `span` APs.
pub fn symbols_per_codeword(span: usize) -> usize {
    match span {
        2 => 2,
        4 => 3,
        _ => span,
    }
}

impl DerivedConstants {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        let codeword_intervals = cfg.tau_d / cfg.cluster_size;
        let symbols_per_codeword = symbols_per_codeword(cfg.cluster_size);
        DerivedConstants {
            noise_power_w: noise_power_w(cfg.bandwidth_mhz, cfg.noise_figure_db),
            d_min_m: (cfg.area_side_m * cfg.area_side_m / cfg.num_aps as f64).sqrt(),
            codeword_intervals,
            symbols_per_codeword,
            group_size: cfg.group_size(),
            prelog_coherent: cfg.tau_d as f64 / cfg.tau_c as f64,
            prelog_dstbc: ((codeword_intervals - 1) * symbols_per_codeword) as f64 / cfg.tau_c as f64,
        }
    }

    pub fn prelog(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Pcal | Mode::Uncal => self.prelog_coherent,
            Mode::Dstbc => self.prelog_dstbc,
        }
    }

    /// Data symbols per stream in one coherence block of the DSTBC scheme.
    pub fn dstbc_symbols_per_stream(&self) -> usize {
        (self.codeword_intervals - 1) * self.symbols_per_codeword
    }
}
