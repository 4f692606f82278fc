//! Link budget, SINR and the link-to-system abstraction.
//!
//! Large-scale gain is path loss plus log-normal shadowing. Fast fading is a
//! unit-mean exponential power gain per PRB and receive branch, combined with
//! MRC. The effective SINR of an allocation is the geometric mean of its
//! per-PRB SINRs, and the deliverable rate is a truncated Shannon map.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::NodeId;

pub const PRB_BANDWIDTH_HZ: f64 = 180e3;
pub const TTI_S: f64 = 1e-3;
/// Bits carried by one PRB in one TTI per bit/s/Hz of spectral efficiency.
pub const BITS_PER_PRB_PER_SE: f64 = PRB_BANDWIDTH_HZ * TTI_S;
pub const MAX_SPECTRAL_EFFICIENCY: f64 = 6.0;
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
pub const RX_BRANCHES: usize = 2;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("MRC needs at least one receive branch")]
    NoBranches,
    #[error("effective SINR needs at least one PRB")]
    NoPrbs,
    #[error("interferer on {found:?} leaks into a {expected:?} link")]
    BandMismatch { expected: Band, found: Band },
    #[error("PRB index {prb} outside the {available} faded PRBs of the link")]
    PrbOutOfRange { prb: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    /// LTE-Uu at 2 GHz, RSU to vehicle.
    V2i2Ghz,
    /// PC5 sidelink at 5.9 GHz, vehicle to vehicle.
    V2v5_9Ghz,
}

impl Band {
    pub fn carrier_hz(self) -> f64 {
        match self {
            Band::V2i2Ghz => 2.0e9,
            Band::V2v5_9Ghz => 5.9e9,
        }
    }

    pub fn path_loss_db(self, distance_m: f64) -> f64 {
        match self {
            Band::V2i2Ghz => path_loss_v2i(distance_m),
            Band::V2v5_9Ghz => path_loss_v2v(distance_m),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn free_space_path_loss_db(distance_m: f64, carrier_hz: f64) -> f64 {
    let d = distance_m.max(1.0);
    20.0 * (4.0 * std::f64::consts::PI * d * carrier_hz / SPEED_OF_LIGHT).log10()
}

/// Macro-cell curve `128.1 + 37.6 log10(d_km)`, never below free space at 2 GHz.
pub fn path_loss_v2i(distance_m: f64) -> f64 {
    let d = distance_m.max(1.0);
    let macro_db = 128.1 + 37.6 * (d / 1000.0).log10();
    macro_db.max(free_space_path_loss_db(d, Band::V2i2Ghz.carrier_hz()))
}

/// Sidelink curve `63.3 + 20.4 log10(d_m)` at 5.9 GHz.
pub fn path_loss_v2v(distance_m: f64) -> f64 {
    63.3 + 20.4 * distance_m.max(1.0).log10()
}

/// Thermal noise plus receiver noise figure over one PRB, in dBm.
pub fn noise_power_dbm(noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + linear_to_db(PRB_BANDWIDTH_HZ) + noise_figure_db
}

/// Post-combining SNR of a maximal-ratio combiner: the sum of branch SNRs.
pub fn mrc_combine(branch_snr_linear: &[f64]) -> Result<f64, ChannelError> {
    if branch_snr_linear.is_empty() {
        return Err(ChannelError::NoBranches);
    }
    debug_assert!(branch_snr_linear.iter().all(|&s| s >= 0.0));
    Ok(branch_snr_linear.iter().sum())
}

/// MRC SINR of one PRB from received powers (mW) per branch.
///
/// `interference_mw[b]` is the total co-channel power seen on branch `b`.
pub fn combine_prb_sinr(
    signal_mw: &[f64],
    interference_mw: &[f64],
    noise_mw: f64,
) -> Result<f64, ChannelError> {
    debug_assert_eq!(signal_mw.len(), interference_mw.len());
    if signal_mw.is_empty() {
        return Err(ChannelError::NoBranches);
    }
    Ok(signal_mw
        .iter()
        .zip(interference_mw)
        .map(|(s, i)| s / (noise_mw + i))
        .sum())
}

/// Geometric mean of per-PRB linear SINRs.
pub fn effective_sinr(per_prb_sinr_linear: &[f64]) -> Result<f64, ChannelError> {
    if per_prb_sinr_linear.is_empty() {
        return Err(ChannelError::NoPrbs);
    }
    if per_prb_sinr_linear.iter().any(|&s| s <= 0.0) {
        return Ok(0.0);
    }
    let mean_ln =
        per_prb_sinr_linear.iter().map(|s| s.ln()).sum::<f64>() / per_prb_sinr_linear.len() as f64;
    Ok(mean_ln.exp())
}

/// Truncated Shannon spectral efficiency, bit/s/Hz.
pub fn spectral_efficiency(sinr_linear: f64) -> f64 {
    (1.0 + sinr_linear.max(0.0))
        .log2()
        .min(MAX_SPECTRAL_EFFICIENCY)
}

/// Bits deliverable over `n_prb` PRBs in one TTI at effective SINR `sinr_eff_linear`.
pub fn rate_from_sinr(sinr_eff_linear: f64, n_prb: u32) -> u64 {
    (f64::from(n_prb) * BITS_PER_PRB_PER_SE * spectral_efficiency(sinr_eff_linear)).floor() as u64
}

/// SINR (dB) at which the given spectral efficiency becomes decodable.
pub fn mcs_threshold_db(spectral_efficiency: f64) -> f64 {
    linear_to_db(2f64.powf(spectral_efficiency) - 1.0)
}

/// Block error probability against the SINR margin over the MCS threshold.
///
/// 1 below -1 dB, 0.1 at 0 dB, one decade per dB in between, 0 above +1 dB.
pub fn block_error_probability(margin_db: f64) -> f64 {
    if margin_db < -1.0 {
        1.0
    } else if margin_db > 1.0 {
        0.0
    } else {
        10f64.powf(-(margin_db + 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Ack,
    Nack,
}

/// Draw ACK/NACK for one transport block. Always consumes exactly one uniform.
pub fn transmission_outcome<R: Rng + ?Sized>(
    sinr_eff_db: f64,
    mcs_threshold_db: f64,
    rng: &mut R,
) -> Outcome {
    let u: f64 = rng.random();
    if u < block_error_probability(sinr_eff_db - mcs_threshold_db) {
        Outcome::Nack
    } else {
        Outcome::Ack
    }
}

/// Large-scale state and per-PRB fading of one directed link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub tx: NodeId,
    pub rx: NodeId,
    pub band: Band,
    pub distance_m: f64,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    /// Power gains laid out PRB-major: `fading_gain[prb * branches + b]`.
    pub fading_gain: Vec<f64>,
    pub branches: usize,
}

impl LinkState {
    /// Link with path loss from the band's curve and unit fading on every branch.
    pub fn new(
        tx: NodeId,
        rx: NodeId,
        band: Band,
        distance_m: f64,
        shadowing_db: f64,
        n_prb: usize,
        branches: usize,
    ) -> Self {
        LinkState {
            tx,
            rx,
            band,
            distance_m,
            pathloss_db: band.path_loss_db(distance_m),
            shadowing_db,
            fading_gain: vec![1.0; n_prb * branches],
            branches,
        }
    }

    pub fn n_prb(&self) -> usize {
        self.fading_gain.len().checked_div(self.branches).unwrap_or(0)
    }

    /// Path loss plus shadowing, as a linear power gain.
    pub fn large_scale_gain(&self) -> f64 {
        db_to_linear(-(self.pathloss_db + self.shadowing_db))
    }

    pub fn prb_gains(&self, prb: usize) -> Result<&[f64], ChannelError> {
        if prb >= self.n_prb() {
            return Err(ChannelError::PrbOutOfRange {
                prb,
                available: self.n_prb(),
            });
        }
        Ok(&self.fading_gain[prb * self.branches..(prb + 1) * self.branches])
    }

    /// Draw fresh Rayleigh (unit-mean exponential) power gains for every PRB and branch.
    pub fn refresh_fading<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for g in &mut self.fading_gain {
            *g = rng.sample(rand_distr::Exp1);
        }
    }
}

/// SINR in dB of `link` on `prb`, with MRC over the link's branches.
///
/// Every interferer must be on the same band as `link` and is paired with its
/// transmit power on that PRB. `noise_dbm` is the per-PRB noise power.
pub fn sinr_per_prb(
    link: &LinkState,
    prb: usize,
    interferers: &[(&LinkState, f64)],
    tx_power_dbm: f64,
    noise_dbm: f64,
) -> Result<f64, ChannelError> {
    let gains = link.prb_gains(prb)?;
    let rx_mw = db_to_linear(tx_power_dbm) * link.large_scale_gain();
    let signal: Vec<f64> = gains.iter().map(|g| rx_mw * g).collect();
    let mut interference = vec![0.0; gains.len()];
    for (other, power_dbm) in interferers {
        if other.band != link.band {
            return Err(ChannelError::BandMismatch {
                expected: link.band,
                found: other.band,
            });
        }
        let other_gains = other.prb_gains(prb)?;
        let i_mw = db_to_linear(*power_dbm) * other.large_scale_gain();
        for (acc, g) in interference.iter_mut().zip(other_gains) {
            *acc += i_mw * g;
        }
    }
    combine_prb_sinr(&signal, &interference, db_to_linear(noise_dbm)).map(linear_to_db)
}
