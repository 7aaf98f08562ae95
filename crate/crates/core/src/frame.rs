//! Time Frame and Super Frame layout.
//!
//! A Time Frame is `Synch | RTS | CTS | Sleep/Communication`. Intervals longer
//! than [`MAX_TIME_FRAME`] become a Super Frame of equal Time Frames where
//! only the first carries the RTS and CTS slots; every constituent frame
//! still opens with a Synch slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest allowed Time Frame, seconds.
pub const MAX_TIME_FRAME: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    /// Requested interval between RTS slots, seconds.
    pub frame_duration: f64,
    pub synch_slot: f64,
    pub mini_slot: f64,
    /// Number of RTS contention slots `w`.
    pub contention_slots: u32,
    pub cts_slot: f64,
    pub max_backoff: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_duration: 1.0,
            synch_slot: 0.05,
            mini_slot: 0.017,
            contention_slots: 8,
            cts_slot: 0.05,
            max_backoff: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePlan {
    pub synch_slot: f64,
    pub rts_slot: f64,
    pub cts_slot: f64,
    /// Sleep/Communication slot of the first Time Frame.
    pub sleep_comm_slot: f64,
    pub w: u32,
    pub mini_slot: f64,
    pub max_backoff: f64,
    pub time_frame: f64,
    /// Number of Time Frames when a Super Frame is used.
    pub super_frame: Option<usize>,
}

impl FramePlan {
    pub fn time_frames(&self) -> usize {
        self.super_frame.unwrap_or(1)
    }

    /// Duration between consecutive RTS slots.
    pub fn duration(&self) -> f64 {
        self.time_frame * self.time_frames() as f64
    }

    pub fn rts_start(&self) -> f64 {
        self.synch_slot
    }

    pub fn cts_start(&self) -> f64 {
        self.synch_slot + self.rts_slot
    }

    pub fn mini_slot_start(&self, k: u32) -> f64 {
        self.rts_start() + f64::from(k) * self.mini_slot
    }

    /// Start offsets of every Synch slot in the frame.
    pub fn synch_starts(&self) -> Vec<f64> {
        (0..self.time_frames())
            .map(|k| k as f64 * self.time_frame)
            .collect()
    }

    /// `[start, end)` offsets of the Sleep/Communication portions, in order.
    pub fn comm_segments(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(self.cts_start() + self.cts_slot, self.time_frame)];
        for k in 1..self.time_frames() {
            let base = k as f64 * self.time_frame;
            out.push((base + self.synch_slot, base + self.time_frame));
        }
        out
    }

    pub fn comm_total(&self) -> f64 {
        self.comm_segments().iter().map(|(a, b)| b - a).sum()
    }
}

/// Lays out a frame for `cfg`. `control_airtime` is the RTS airtime, used to
/// check that a mini-slot holds a backoff plus one RTS.
pub fn build_frame_plan(cfg: &FrameConfig, control_airtime: f64) -> Result<FramePlan> {
    if !(cfg.frame_duration > 0.0) {
        return Err(Error::config("frame.frame_duration", "must be > 0"));
    }
    if cfg.contention_slots < 1 {
        return Err(Error::config("frame.contention_slots", "must be >= 1"));
    }
    for (key, v) in [
        ("frame.synch_slot", cfg.synch_slot),
        ("frame.mini_slot", cfg.mini_slot),
        ("frame.cts_slot", cfg.cts_slot),
    ] {
        if !(v > 0.0) {
            return Err(Error::config(key, "must be > 0"));
        }
    }
    if !(cfg.max_backoff >= 0.0) {
        return Err(Error::config("frame.max_backoff", "must be >= 0"));
    }
    if cfg.mini_slot < cfg.max_backoff + control_airtime {
        return Err(Error::config(
            "frame.mini_slot",
            format!(
                "{:.4} s cannot hold max_backoff {:.4} s plus RTS airtime {:.4} s",
                cfg.mini_slot, cfg.max_backoff, control_airtime
            ),
        ));
    }
    if cfg.cts_slot < control_airtime {
        return Err(Error::config(
            "frame.cts_slot",
            "shorter than one CTS airtime",
        ));
    }
    let rts_slot = cfg.mini_slot * f64::from(cfg.contention_slots);
    let active = cfg.synch_slot + rts_slot + cfg.cts_slot;
    if active > MAX_TIME_FRAME {
        return Err(Error::config(
            "frame",
            format!("active slots take {active:.3} s, above the 12 s Time Frame limit"),
        ));
    }
    if cfg.frame_duration <= active {
        return Err(Error::config(
            "frame.frame_duration",
            format!(
                "{} s leaves no Sleep/Communication time after {active:.3} s of active slots",
                cfg.frame_duration
            ),
        ));
    }
    let (time_frame, super_frame) = if cfg.frame_duration <= MAX_TIME_FRAME {
        (cfg.frame_duration, None)
    } else {
        let k = (cfg.frame_duration / MAX_TIME_FRAME - 1e-12).ceil() as usize;
        (cfg.frame_duration / k as f64, Some(k))
    };
    Ok(FramePlan {
        synch_slot: cfg.synch_slot,
        rts_slot,
        cts_slot: cfg.cts_slot,
        sleep_comm_slot: time_frame - active,
        w: cfg.contention_slots,
        mini_slot: cfg.mini_slot,
        max_backoff: cfg.max_backoff,
        time_frame,
        super_frame,
    })
}
