//! S-MAC and Adaptive S-MAC per-node rules.
//!
//! Both variants share one global listen/sleep schedule. Overhearers of an
//! RTS or CTS honour the announced duration (the network allocation vector)
//! by sleeping; the adaptive variant additionally wakes its overhearers at
//! their estimate of the exchange end so traffic can move on within a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmacConfig {
    /// Relative error of an overhearer's exchange-end estimate; the wakeup
    /// lands uniformly within `±adaptive_error` of the remaining duration.
    pub adaptive_error: f64,
    /// How long a node stays up after an adaptive wakeup or an exchange.
    pub adaptive_window: f64,
    /// Random backoff range at the start of the listen period, seconds.
    /// `None` uses the RTS slot length.
    pub contention_window: Option<f64>,
    /// Deferral range after a busy carrier, seconds.
    pub retry_backoff: f64,
}

impl Default for SmacConfig {
    fn default() -> Self {
        Self {
            adaptive_error: 0.1,
            adaptive_window: 0.1,
            contention_window: None,
            retry_backoff: 0.017,
        }
    }
}

impl SmacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.adaptive_error) {
            return Err(Error::config("smac.adaptive_error", "must be in [0, 1)"));
        }
        if !(self.adaptive_window > 0.0) {
            return Err(Error::config("smac.adaptive_window", "must be > 0"));
        }
        if let Some(cw) = self.contention_window {
            if !(cw > 0.0) {
                return Err(Error::config("smac.contention_window", "must be > 0"));
            }
        }
        if !(self.retry_backoff > 0.0) {
            return Err(Error::config("smac.retry_backoff", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NavState {
    pub nav_until: f64,
    pub adaptive_wakeup_at: Option<f64>,
}

impl NavState {
    /// True while the node must neither transmit nor start a handshake.
    pub fn blocks(&self, now: f64) -> bool {
        now < self.nav_until - 1e-12
    }

    /// Records an overheard duration field; the allocation only grows.
    pub fn overhear(&mut self, until: f64) {
        if until > self.nav_until {
            self.nav_until = until;
        }
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// Adaptive wakeup for an overhearer at `now` of an exchange announced to end
/// at `until`. `u` is uniform in `[-1, 1]` and scales the estimate error.
pub fn adaptive_wakeup(now: f64, until: f64, error: f64, u: f64) -> f64 {
    let remaining = (until - now).max(0.0);
    now + remaining * (1.0 + error * u.clamp(-1.0, 1.0))
}

/// End of an RTS/CTS/DATA/ACK exchange whose RTS starts at `start`.
pub fn exchange_end(start: f64, rts: f64, cts: f64, data: f64, ack: f64, turnaround: f64) -> f64 {
    start + rts + cts + data + ack + 3.0 * turnaround
}
