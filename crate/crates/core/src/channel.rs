//! Lossy wireless medium: log-distance path loss with log-normal shadowing,
//! non-coherent FSK bit errors, probabilistic packet reception and carrier
//! sensing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::RandomStream;
use crate::error::{Error, Result};

/// Node index; the sink is always node 0.
pub type NodeId = usize;

pub const SINK: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Modulation {
    #[default]
    NoncoherentFsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    #[default]
    Nrz,
}

impl Encoding {
    /// Transmitted bits per data bit.
    pub fn ratio(self) -> f64 {
        match self {
            Encoding::Nrz => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub path_loss_exponent: f64,
    /// Path loss at the reference distance, dB.
    pub pl_d0: f64,
    /// Reference distance, meters.
    pub d0: f64,
    /// dBm.
    pub noise_floor: f64,
    /// Standard deviation of the log-normal shadowing term, dB.
    pub shadowing_sigma: f64,
    pub modulation: Modulation,
    pub encoding: Encoding,
    /// Noise bandwidth over bit rate in the FSK error expression.
    pub bandwidth_to_rate: f64,
    /// Bits per second.
    pub radio_speed: f64,
    /// Carrier-sense "busy" threshold, dB above the noise floor.
    pub cs_threshold: f64,
    /// Draw one shadowing offset per unordered pair instead of per ordered pair.
    pub symmetric_links: bool,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            path_loss_exponent: 4.0,
            pl_d0: 55.0,
            d0: 1.0,
            noise_floor: -105.0,
            shadowing_sigma: 4.0,
            modulation: Modulation::NoncoherentFsk,
            encoding: Encoding::Nrz,
            bandwidth_to_rate: 1.0,
            radio_speed: 19_200.0,
            cs_threshold: 3.0,
            symmetric_links: false,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::config("link.path_loss_exponent", "must be > 0"));
        }
        if !(self.d0 > 0.0) {
            return Err(Error::config("link.d0", "must be > 0"));
        }
        if !(self.radio_speed > 0.0) {
            return Err(Error::config("link.radio_speed", "must be > 0"));
        }
        if !(self.shadowing_sigma >= 0.0) {
            return Err(Error::config("link.shadowing_sigma", "must be >= 0"));
        }
        if !(self.bandwidth_to_rate > 0.0) {
            return Err(Error::config("link.bandwidth_to_rate", "must be > 0"));
        }
        Ok(())
    }

    pub fn path_loss(&self, d: f64, shadow: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(Error::domain(format!("distance must be > 0, got {d}")));
        }
        Ok(self.pl_d0 + 10.0 * self.path_loss_exponent * (d / self.d0).log10() + shadow)
    }

    pub fn snr(&self, tx_power: f64, d: f64, shadow: f64) -> Result<f64> {
        Ok(tx_power - self.path_loss(d, shadow)? - self.noise_floor)
    }

    /// Non-coherent FSK: `p_b = 1/2 exp(-snr/2 * B_N/R)`.
    pub fn bit_error_rate(&self, snr_db: f64) -> f64 {
        if snr_db == f64::NEG_INFINITY {
            return 0.5;
        }
        let snr = 10f64.powf(snr_db / 10.0);
        match self.modulation {
            Modulation::NoncoherentFsk => {
                (0.5 * (-snr / 2.0 * self.bandwidth_to_rate).exp()).clamp(0.0, 0.5)
            }
        }
    }

    /// Number of transmitted bits for `length` bytes.
    pub fn coded_bits(&self, length: usize) -> f64 {
        8.0 * length as f64 * self.encoding.ratio()
    }

    pub fn packet_reception_prob(&self, snr_db: f64, length: usize) -> Result<f64> {
        if length < 1 {
            return Err(Error::domain("packet length must be >= 1 byte"));
        }
        Ok(prr_from_ber(
            self.bit_error_rate(snr_db),
            self.coded_bits(length),
        ))
    }

    /// Airtime of `bytes` on-air bytes, seconds.
    pub fn airtime(&self, bytes: usize) -> f64 {
        self.coded_bits(bytes) / self.radio_speed
    }

    /// Absolute carrier-sense threshold, dBm.
    pub fn cs_threshold_dbm(&self) -> f64 {
        self.noise_floor + self.cs_threshold
    }

    /// Signal-to-interference-plus-noise ratio, dB, for a wanted signal of
    /// `wanted_dbm` against interferers received at `interferers_dbm`.
    pub fn sinr(&self, wanted_dbm: f64, interferers_dbm: &[f64]) -> f64 {
        let noise = dbm_to_mw(self.noise_floor);
        let interference: f64 = interferers_dbm.iter().map(|&p| dbm_to_mw(p)).sum();
        wanted_dbm - mw_to_dbm(noise + interference)
    }

    /// `true` (busy) iff the summed received power exceeds the threshold.
    pub fn carrier_busy(&self, received_dbm: &[f64]) -> bool {
        if received_dbm.is_empty() {
            return false;
        }
        let total: f64 = received_dbm.iter().map(|&p| dbm_to_mw(p)).sum();
        mw_to_dbm(total) > self.cs_threshold_dbm()
    }

    /// Distance at which the deterministic (unshadowed) received power
    /// equals the carrier-sense threshold.
    pub fn carrier_sense_range(&self, tx_power: f64) -> f64 {
        let margin = tx_power - self.pl_d0 - self.cs_threshold_dbm();
        self.d0 * 10f64.powf(margin / (10.0 * self.path_loss_exponent))
    }

    /// PRR at distance `d` averaged over the shadowing distribution.
    pub fn expected_prr(&self, tx_power: f64, d: f64, length: usize) -> f64 {
        let base = match self.snr(tx_power, d, 0.0) {
            Ok(s) => s,
            Err(_) => return 1.0,
        };
        let bits = self.coded_bits(length.max(1));
        let prr_at = |snr: f64| prr_from_ber(self.bit_error_rate(snr), bits);
        if self.shadowing_sigma == 0.0 {
            return prr_at(base);
        }
        // Simpson's rule over +-6 sigma of the Gaussian offset.
        let sigma = self.shadowing_sigma;
        let n = 400;
        let (a, b) = (-6.0 * sigma, 6.0 * sigma);
        let h = (b - a) / n as f64;
        let pdf = |x: f64| {
            (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let f = |x: f64| pdf(x) * prr_at(base - x);
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
        }
        (acc * h / 3.0).clamp(0.0, 1.0)
    }

    /// Distances where the shadowing-marginalized PRR crosses 0.9 and 0.1.
    /// `max_range` is the largest distance of interest (usually the area
    /// diagonal).
    pub fn transitional_region(
        &self,
        tx_power: f64,
        length: usize,
        max_range: f64,
    ) -> TransitionalRegion {
        let crossing = |level: f64| -> Option<f64> {
            if self.expected_prr(tx_power, max_range, length) > level {
                return None;
            }
            let mut lo = 1e-3_f64.min(max_range);
            if self.expected_prr(tx_power, lo, length) <= level {
                return Some(lo);
            }
            let mut hi = max_range;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if self.expected_prr(tx_power, mid, length) > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(0.5 * (lo + hi))
        };
        match (crossing(0.9), crossing(0.1)) {
            (Some(begin), Some(end)) => TransitionalRegion {
                begin,
                end,
                degenerate: false,
            },
            (Some(begin), None) => TransitionalRegion {
                begin,
                end: max_range,
                degenerate: true,
            },
            _ => TransitionalRegion {
                begin: max_range,
                end: max_range,
                degenerate: true,
            },
        }
    }
}

/// `(1 - p_b)^bits`.
pub fn prr_from_ber(ber: f64, bits: f64) -> f64 {
    (1.0 - ber).powf(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionalRegion {
    pub begin: f64,
    pub end: f64,
    /// Set when a crossing lies beyond the distance range considered.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Node placement plus frozen per-link shadowing, stored as a dense
/// path-loss matrix (`loss[tx][rx]`, dB).
#[derive(Debug, Clone)]
pub struct Topology {
    pub width: f64,
    pub height: f64,
    pub positions: Vec<Position>,
    loss: Vec<Vec<f64>>,
}

impl Topology {
    /// Uniform random placement with the sink at the middle of the top edge.
    pub fn random(
        model: &LinkModel,
        node_count: usize,
        width: f64,
        height: f64,
        placement_rng: &mut RandomStream,
        shadow_rng: &mut RandomStream,
    ) -> Self {
        let mut positions = Vec::with_capacity(node_count);
        positions.push(Position {
            x: width / 2.0,
            y: height,
        });
        for _ in 1..node_count {
            positions.push(Position {
                x: placement_rng.gen::<f64>() * width,
                y: placement_rng.gen::<f64>() * height,
            });
        }
        Self::from_positions(model, width, height, positions, shadow_rng)
    }

    pub fn from_positions(
        model: &LinkModel,
        width: f64,
        height: f64,
        positions: Vec<Position>,
        shadow_rng: &mut RandomStream,
    ) -> Self {
        let n = positions.len();
        let normal = Normal::new(0.0, model.shadowing_sigma.max(0.0)).expect("finite sigma");
        let mut loss = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let shadow = if model.shadowing_sigma == 0.0 {
                    0.0
                } else if model.symmetric_links && j < i {
                    // reuse the offset drawn for (j, i)
                    loss[j][i]
                        - model
                            .path_loss(positions[j].distance(&positions[i]).max(1e-3), 0.0)
                            .unwrap()
                } else {
                    normal.sample(shadow_rng)
                };
                let d = positions[i].distance(&positions[j]).max(1e-3);
                loss[i][j] = model.path_loss(d, shadow).expect("positive distance");
            }
        }
        Self {
            width,
            height,
            positions,
            loss,
        }
    }

    /// Hand-built topology from an explicit loss matrix (fixtures).
    pub fn from_loss_matrix(positions: Vec<Position>, loss: Vec<Vec<f64>>) -> Self {
        assert_eq!(positions.len(), loss.len());
        let width = positions.iter().map(|p| p.x).fold(0.0, f64::max);
        let height = positions.iter().map(|p| p.y).fold(0.0, f64::max);
        Self {
            width,
            height,
            positions,
            loss,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn loss(&self, tx: NodeId, rx: NodeId) -> f64 {
        self.loss[tx][rx]
    }

    pub fn rx_power(&self, tx: NodeId, rx: NodeId, tx_power: f64) -> f64 {
        tx_power - self.loss[tx][rx]
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.positions[a].distance(&self.positions[b])
    }

    pub fn diagonal(&self) -> f64 {
        (self.width.powi(2) + self.height.powi(2)).sqrt()
    }
}
