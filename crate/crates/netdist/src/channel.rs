//! Physical-layer model: free-space path loss, channel gain, SINR, and
//! deterministic packet-reception resolution for simultaneous transmissions.
//!
//! All link-budget arithmetic is carried out in linear milliwatts; dB and dBm
//! appear only at configuration and logging boundaries.

use serde::{Deserialize, Serialize};

/// Radio parameters shared by every agent in the team.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// System center frequency in Hz.
    pub center_freq_hz: f64,
    /// Ambient noise power at the receiver, in dBm.
    pub noise_dbm: f64,
    /// Reception threshold, in dB.
    pub sinr_threshold_db: f64,
    /// Transmit power, in dBm, uniform across agents.
    pub tx_power_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            center_freq_hz: 2.4e9,
            noise_dbm: -50.0,
            sinr_threshold_db: 1.0,
            tx_power_dbm: 39.0,
        }
    }
}

impl RadioConfig {
    pub fn noise_mw(&self) -> f64 {
        db_to_linear(self.noise_dbm)
    }

    pub fn sinr_threshold(&self) -> f64 {
        db_to_linear(self.sinr_threshold_db)
    }

    pub fn tx_power_mw(&self) -> f64 {
        db_to_linear(self.tx_power_dbm)
    }

    /// Replaces the transmit power with the one produced by [`power_for_range`].
    pub fn with_range(mut self, range_m: f64) -> Self {
        self.tx_power_dbm = power_for_range(range_m, &self);
        self
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Free-space path loss in dB between a transmitter and receiver `distance_m`
/// apart at carrier frequency `freq_hz`. Caller must ensure `distance_m > 0`.
pub fn path_loss_db(distance_m: f64, freq_hz: f64) -> f64 {
    debug_assert!(distance_m > 0.0, "path loss undefined at zero distance");
    20.0 * distance_m.log10() + 20.0 * freq_hz.log10() - 147.55
}

/// Linear channel gain corresponding to [`path_loss_db`].
pub fn channel_gain(distance_m: f64, freq_hz: f64) -> f64 {
    db_to_linear(-path_loss_db(distance_m, freq_hz))
}

/// Transmit power (dBm) at which the interference-free SINR at `range_m`
/// equals the configured threshold exactly.
pub fn power_for_range(range_m: f64, radio: &RadioConfig) -> f64 {
    assert!(range_m > 0.0);
    let power_mw = radio.sinr_threshold() * radio.noise_mw() / channel_gain(range_m, radio.center_freq_hz);
    linear_to_db(power_mw)
}

/// Per-agent transmission intent for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transmit {
    Silent,
    /// A single designated recipient.
    To(usize),
    /// No designated recipient; used by flooding-style policies.
    Broadcast,
}

impl Transmit {
    pub fn is_active(&self) -> bool {
        !matches!(self, Transmit::Silent)
    }

    pub fn recipient(&self) -> Option<usize> {
        match self {
            Transmit::To(j) => Some(*j),
            _ => None,
        }
    }
}

/// One phase's transmission intents, indexed by agent identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionPlan {
    pub intents: Vec<Transmit>,
}

impl TransmissionPlan {
    pub fn silent(n: usize) -> Self {
        TransmissionPlan {
            intents: vec![Transmit::Silent; n],
        }
    }

    pub fn transmitters(&self) -> impl Iterator<Item = usize> + '_ {
        self.intents
            .iter()
            .enumerate()
            .filter(|(_, tx)| tx.is_active())
            .map(|(i, _)| i)
    }
}

/// Deterministic result of resolving one phase of simultaneous transmissions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptionOutcome {
    /// `received[i]` holds the receivers whose SINR for transmitter `i` cleared
    /// the threshold.
    pub received: Vec<Vec<usize>>,
    /// `decoded_from[j]` is the unique transmitter receiver `j` decoded, if any.
    pub decoded_from: Vec<Option<usize>>,
}

impl ReceptionOutcome {
    pub fn empty(n: usize) -> Self {
        ReceptionOutcome {
            received: vec![Vec::new(); n],
            decoded_from: vec![None; n],
        }
    }
}

/// SINR at `receiver` for the signal from `transmitter`, with every other
/// member of `active` acting as an interferer.
pub fn sinr(
    transmitter: usize,
    receiver: usize,
    active: &[usize],
    positions: &[[f64; 2]],
    radio: &RadioConfig,
) -> f64 {
    let power = radio.tx_power_mw();
    let gain = |i: usize, j: usize| {
        let dx = positions[i][0] - positions[j][0];
        let dy = positions[i][1] - positions[j][1];
        channel_gain((dx * dx + dy * dy).sqrt(), radio.center_freq_hz)
    };
    let signal = power * gain(transmitter, receiver);
    let interference: f64 = active
        .iter()
        .filter(|&&k| k != transmitter && k != receiver)
        .map(|&k| power * gain(k, receiver))
        .sum();
    signal / (radio.noise_mw() + interference)
}

/// Resolves one phase of simultaneous transmissions.
///
/// A non-transmitting agent receives from transmitter `i` iff its SINR clears
/// the threshold; transmitting agents receive nothing (half-duplex). When more
/// than one transmission clears the threshold at a receiver (possible only
/// with thresholds below 0 dB), the highest-SINR one is decoded, ties broken
/// by lowest transmitter identity.
pub fn resolve_receptions(
    plan: &TransmissionPlan,
    positions: &[[f64; 2]],
    radio: &RadioConfig,
) -> ReceptionOutcome {
    let n = plan.intents.len();
    let active: Vec<usize> = plan.transmitters().collect();
    let threshold = radio.sinr_threshold();
    let mut outcome = ReceptionOutcome::empty(n);

    for receiver in 0..n {
        if plan.intents[receiver].is_active() {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &tx in &active {
            let ratio = sinr(tx, receiver, &active, positions, radio);
            if ratio >= threshold {
                outcome.received[tx].push(receiver);
                let better = match best {
                    None => true,
                    Some((best_ratio, best_tx)) => {
                        ratio > best_ratio || (ratio == best_ratio && tx < best_tx)
                    }
                };
                if better {
                    best = Some((ratio, tx));
                }
            }
        }
        outcome.decoded_from[receiver] = best.map(|(_, tx)| tx);
    }
    outcome
}
