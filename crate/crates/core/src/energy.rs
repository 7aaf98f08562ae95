//! Radio-state energy accounting.
//!
//! Default currents are MICA2-class figures chosen for this simulator, not
//! measured constants; every acceptance check built on them compares
//! protocols, so only the ordering sleep < listen < transmit matters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RadioState {
    Sleep,
    Listen,
    Receive,
    Transmit,
}

impl RadioState {
    pub const ALL: [RadioState; 4] = [
        RadioState::Sleep,
        RadioState::Listen,
        RadioState::Receive,
        RadioState::Transmit,
    ];

    fn index(self) -> usize {
        match self {
            RadioState::Sleep => 0,
            RadioState::Listen => 1,
            RadioState::Receive => 2,
            RadioState::Transmit => 3,
        }
    }

    pub fn awake(self) -> bool {
        self != RadioState::Sleep
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyTable {
    pub sleep_ma: f64,
    pub listen_ma: f64,
    pub receive_ma: f64,
    /// `(output power dBm, current mA)` points, interpolated linearly.
    pub transmit_ma: Vec<(f64, f64)>,
    pub switch_mj: f64,
    pub sample_mj: f64,
    pub voltage: f64,
    pub battery_mah: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            sleep_ma: 0.03,
            listen_ma: 15.0,
            receive_ma: 15.0,
            transmit_ma: vec![
                (-20.0, 8.6),
                (-10.0, 11.3),
                (-5.0, 15.1),
                (0.0, 25.4),
                (5.0, 26.7),
            ],
            switch_mj: 0.002,
            sample_mj: 0.09,
            voltage: 3.0,
            battery_mah: 2400.0,
        }
    }
}

impl EnergyTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.sleep_ma > 0.0) {
            return Err(Error::config("energy.sleep_ma", "must be > 0"));
        }
        if !(self.listen_ma > self.sleep_ma && self.receive_ma > self.sleep_ma) {
            return Err(Error::config(
                "energy.listen_ma",
                "listen/receive must exceed sleep",
            ));
        }
        if self.transmit_ma.is_empty() {
            return Err(Error::config(
                "energy.transmit_ma",
                "needs at least one point",
            ));
        }
        for w in self.transmit_ma.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 >= w[0].1) {
                return Err(Error::config(
                    "energy.transmit_ma",
                    "points must be sorted by power with non-decreasing current",
                ));
            }
        }
        if self.transmit_ma.iter().any(|&(_, c)| c <= self.sleep_ma) {
            return Err(Error::config(
                "energy.transmit_ma",
                "must exceed sleep current",
            ));
        }
        if !(self.voltage > 0.0) {
            return Err(Error::config("energy.voltage", "must be > 0"));
        }
        if !(self.battery_mah > 0.0) {
            return Err(Error::config("energy.battery_mah", "must be > 0"));
        }
        if self.switch_mj < 0.0 || self.sample_mj < 0.0 {
            return Err(Error::config("energy.switch_mj", "costs must be >= 0"));
        }
        Ok(())
    }

    pub fn transmit_current(&self, dbm: f64) -> f64 {
        let pts = &self.transmit_ma;
        if dbm <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            if dbm <= w[1].0 {
                let t = (dbm - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        pts[pts.len() - 1].1
    }

    pub fn current(&self, state: RadioState, tx_dbm: f64) -> f64 {
        match state {
            RadioState::Sleep => self.sleep_ma,
            RadioState::Listen => self.listen_ma,
            RadioState::Receive => self.receive_ma,
            RadioState::Transmit => self.transmit_current(tx_dbm),
        }
    }

    /// mW drawn in `state`.
    pub fn power_mw(&self, state: RadioState, tx_dbm: f64) -> f64 {
        self.current(state, tx_dbm) * self.voltage
    }

    /// Battery energy in mJ.
    pub fn battery_mj(&self) -> f64 {
        self.battery_mah * 3600.0 * self.voltage
    }
}

/// Per-node energy ledger. Time advances only through
/// [`EnergyAccount::set_state`] and [`EnergyAccount::advance`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAccount {
    pub initial_mj: f64,
    pub residual_mj: f64,
    by_state_mj: [f64; 4],
    time_in_state: [f64; 4],
    pub switching_mj: f64,
    pub sampling_mj: f64,
    pub state: RadioState,
    since: f64,
    pub dead_at: Option<f64>,
    tx_dbm: f64,
}

impl EnergyAccount {
    pub fn new(table: &EnergyTable, tx_dbm: f64, start: f64) -> Self {
        let initial = table.battery_mj();
        Self {
            initial_mj: initial,
            residual_mj: initial,
            by_state_mj: [0.0; 4],
            time_in_state: [0.0; 4],
            switching_mj: 0.0,
            sampling_mj: 0.0,
            state: RadioState::Sleep,
            since: start,
            dead_at: None,
            tx_dbm,
        }
    }

    fn draw(&mut self, mj: f64, now: f64, rate_mw: f64) {
        let before = self.residual_mj;
        self.residual_mj -= mj;
        if self.dead_at.is_none() && self.residual_mj <= 0.0 {
            // interpolate inside the interval for continuous draws
            let t = if rate_mw > 0.0 && mj > 0.0 {
                now - (mj - before) / rate_mw
            } else {
                now
            };
            self.dead_at = Some(t);
        }
    }

    /// Charges the time spent in the current state up to `now`; returns mJ.
    pub fn advance(&mut self, now: f64, table: &EnergyTable) -> f64 {
        let dt = now - self.since;
        debug_assert!(dt >= -1e-9, "energy clock went backwards");
        let dt = dt.max(0.0);
        let i = self.state.index();
        let rate = table.power_mw(self.state, self.tx_dbm);
        let mj = rate * dt;
        self.by_state_mj[i] += mj;
        self.time_in_state[i] += dt;
        self.since = now;
        self.draw(mj, now, rate);
        mj
    }

    /// Switches radio state at `now`. Transitions between sleep and an awake
    /// state cost `switch_mj`.
    pub fn set_state(&mut self, now: f64, state: RadioState, table: &EnergyTable) {
        self.advance(now, table);
        if state.awake() != self.state.awake() {
            self.switching_mj += table.switch_mj;
            self.draw(table.switch_mj, now, 0.0);
        }
        self.state = state;
    }

    pub fn charge_sample(&mut self, now: f64, table: &EnergyTable) {
        self.sampling_mj += table.sample_mj;
        self.draw(table.sample_mj, now, 0.0);
    }

    pub fn energy_in(&self, state: RadioState) -> f64 {
        self.by_state_mj[state.index()]
    }

    pub fn time_in(&self, state: RadioState) -> f64 {
        self.time_in_state[state.index()]
    }

    pub fn total_time(&self) -> f64 {
        self.time_in_state.iter().sum()
    }

    pub fn consumed_mj(&self) -> f64 {
        self.by_state_mj.iter().sum::<f64>() + self.switching_mj + self.sampling_mj
    }

    /// Fraction of accounted time the radio was awake.
    pub fn duty_cycle(&self) -> f64 {
        let total = self.total_time();
        if total <= 0.0 {
            return 0.0;
        }
        ((total - self.time_in(RadioState::Sleep)) / total).clamp(0.0, 1.0)
    }

    /// Relative mismatch between consumed energy and the battery drop.
    pub fn conservation_error(&self) -> f64 {
        let drop = self.initial_mj - self.residual_mj;
        (drop - self.consumed_mj()).abs() / self.initial_mj.max(1e-300)
    }
}
