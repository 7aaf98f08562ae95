//! Scenario files: a TOML document whose every key has a default.
//!
//! An empty file gives the 200-node, 100 m × 100 m reference setting.
//! Unknown keys are rejected so a typo never silently falls back to a
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::LinkModel;
use crate::energy::EnergyTable;
use crate::error::{Error, Result};
use crate::frame::{build_frame_plan, FrameConfig};
use crate::network::{Overrides, Protocol, SimConfig};
use crate::packet::PacketSizes;
use crate::recovery::{RecoveryParams, RecoveryScheme};
use crate::smac::SmacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SinkPlacement {
    /// Middle of the top edge.
    #[default]
    TopCenter,
    Center,
    Corner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Default for Area {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    /// Probe broadcasts per node during link estimation.
    pub probes: u32,
    pub max_children: usize,
    /// Synch rounds without change that end tree construction.
    pub quiet_rounds: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            probes: 20,
            max_children: 8,
            quiet_rounds: 3,
        }
    }
}

/// Recovery timing knobs that are not frame sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryTiming {
    pub gamma: f64,
    pub retry_cap: u32,
    pub turnaround: f64,
}

impl Default for RecoveryTiming {
    fn default() -> Self {
        let d = RecoveryParams::default();
        Self {
            gamma: d.gamma,
            retry_cap: d.retry_cap,
            turnaround: d.turnaround,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub node_count: usize,
    pub area: Area,
    pub sink: SinkPlacement,
    pub protocol: Protocol,
    pub recovery: RecoveryScheme,
    /// dBm.
    pub output_power: f64,
    /// Seconds between readings at each node.
    pub sampling_interval: f64,
    /// Packets already queued at every non-sink node when the run starts.
    pub initial_packets: usize,
    pub horizon: f64,
    /// Decode every control frame above the carrier-sense threshold.
    pub ideal_control: bool,
    pub stop_at_first_death: bool,
    /// CSV metric names to emit; empty means all.
    pub metrics: Vec<String>,
    pub link: LinkModel,
    pub frame: FrameConfig,
    pub packets: PacketSizes,
    pub energy: EnergyTable,
    pub routing: RoutingConfig,
    pub error_recovery: RecoveryTiming,
    pub smac: SmacConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            node_count: 200,
            area: Area::default(),
            sink: SinkPlacement::TopCenter,
            protocol: Protocol::Iamac,
            recovery: RecoveryScheme::Arq,
            output_power: 0.0,
            sampling_interval: 60.0,
            initial_packets: 0,
            horizon: 600.0,
            ideal_control: false,
            stop_at_first_death: true,
            metrics: Vec::new(),
            link: LinkModel::default(),
            frame: FrameConfig::default(),
            packets: PacketSizes::default(),
            energy: EnergyTable::default(),
            routing: RoutingConfig::default(),
            error_recovery: RecoveryTiming::default(),
            smac: SmacConfig::default(),
        }
    }
}

impl Scenario {
    /// The 200-node reference setting.
    pub fn reference() -> Self {
        Self {
            name: "reference".into(),
            ..Self::default()
        }
    }

    /// 50 nodes on 30 m × 30 m, dense enough to stay connected at 0 dBm
    /// for every seed, with a battery small enough for lifetime runs to
    /// end within minutes of simulated time.
    pub fn desk() -> Self {
        let mut s = Self {
            name: "desk".into(),
            node_count: 50,
            area: Area {
                width: 30.0,
                height: 30.0,
            },
            horizon: 300.0,
            ..Self::default()
        };
        s.energy.battery_mah = 0.5;
        s
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" | "default" => Ok(Self::reference()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset `{other}` (expected reference or desk)"),
            )),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = unknown_key(&msg).unwrap_or_else(|| "scenario".into());
            Error::config(key, msg)
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn recovery_params(&self) -> RecoveryParams {
        let p = &self.packets;
        RecoveryParams {
            payload_len: p.payload_len,
            hdr_len: p.header_len,
            block_overhead: p.block_overhead,
            ack_len: p.ack_len,
            // sessions time frames in data bits; fold the line code in
            radio_speed: self.link.radio_speed / self.link.encoding.ratio(),
            recovery_frame_overhead: p.recovery_frame_overhead,
            gamma: self.error_recovery.gamma,
            tx_buffer: p.tx_buffer,
            rx_buffer: p.rx_buffer,
            retry_cap: self.error_recovery.retry_cap,
            turnaround: self.error_recovery.turnaround,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count < 2 {
            return Err(Error::config(
                "node_count",
                "needs the sink and at least one sensor",
            ));
        }
        if !(self.area.width > 0.0) {
            return Err(Error::config("area.width", "must be > 0"));
        }
        if !(self.area.height > 0.0) {
            return Err(Error::config("area.height", "must be > 0"));
        }
        if !(self.sampling_interval > 0.0) || !self.sampling_interval.is_finite() {
            return Err(Error::config("sampling_interval", "must be > 0"));
        }
        if !self.output_power.is_finite() {
            return Err(Error::config("output_power", "must be finite"));
        }
        if self.routing.probes == 0 {
            return Err(Error::config("routing.probes", "must be >= 1"));
        }
        if self.routing.max_children == 0 {
            return Err(Error::config("routing.max_children", "must be >= 1"));
        }
        if self.error_recovery.turnaround < 0.0 {
            return Err(Error::config("error_recovery.turnaround", "must be >= 0"));
        }
        if self.error_recovery.gamma < 0.0 {
            return Err(Error::config("error_recovery.gamma", "must be >= 0"));
        }
        if self.packets.payload_len == 0 {
            return Err(Error::config("packets.payload_len", "must be >= 1"));
        }
        self.link.validate()?;
        self.energy.validate()?;
        self.smac.validate()?;
        self.frame_plan()?;
        let one_frame = self.frame.frame_duration;
        if !(self.horizon > one_frame) {
            return Err(Error::config(
                "horizon",
                format!("must exceed one frame ({one_frame} s)"),
            ));
        }
        Ok(())
    }

    pub fn frame_plan(&self) -> Result<crate::frame::FramePlan> {
        let airtime = self.link.airtime(self.packets.control_on_air());
        build_frame_plan(&self.frame, airtime)
    }

    /// Simulation parameters for this scenario; the seed may be overridden
    /// by sweeps.
    pub fn sim_config(&self) -> Result<SimConfig> {
        self.validate()?;
        let mut initial = vec![self.initial_packets; self.node_count];
        initial[crate::channel::SINK] = 0;
        Ok(SimConfig {
            seed: self.seed,
            protocol: self.protocol,
            recovery: self.recovery,
            link: self.link.clone(),
            sizes: self.packets.clone(),
            energy: self.energy.clone(),
            recovery_params: self.recovery_params(),
            frame: self.frame_plan()?,
            smac: self.smac.clone(),
            tx_power: self.output_power,
            sampling_interval: Some(self.sampling_interval),
            initial_packets: initial,
            horizon: self.horizon,
            ideal_control: self.ideal_control,
            stop_at_first_death: self.stop_at_first_death,
            logs: false,
            trace: false,
            node_names: None,
            overrides: Overrides::default(),
        })
    }
}

fn unknown_key(msg: &str) -> Option<String> {
    let rest = msg.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let s = Scenario::from_toml("").unwrap();
        assert_eq!(s.node_count, 200);
        assert_eq!(s.area, Area::default());
        assert_eq!(s.sink, SinkPlacement::TopCenter);
        assert_eq!(s.output_power, 0.0);
        assert_eq!(s.packets.data_packet_len(), 45);
        assert_eq!(s.protocol, Protocol::Iamac);
    }

    #[test]
    fn zero_sampling_interval_names_the_key() {
        let e = Scenario::from_toml("sampling_interval = 0.0").unwrap_err();
        assert!(e.to_string().contains("`sampling_interval`"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = Scenario::from_toml("fooo = 1").unwrap_err();
        assert!(e.to_string().contains("fooo"), "{e}");
        let e = Scenario::from_toml("[link]\nnoise = -100.0").unwrap_err();
        assert!(e.to_string().contains("noise"), "{e}");
    }

    #[test]
    fn nested_keys_and_round_trip() {
        let text = r#"
            protocol = "adaptive-smac"
            recovery = "seda"
            [area]
            width = 30.0
            height = 20.0
            [frame]
            frame_duration = 5.0
        "#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.protocol, Protocol::AdaptiveSmac);
        assert_eq!(s.recovery, RecoveryScheme::Seda);
        assert_eq!(s.area.width, 30.0);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn horizon_must_exceed_a_frame() {
        let e = Scenario::from_toml("horizon = 0.5").unwrap_err();
        assert!(e.to_string().contains("horizon"));
    }

    #[test]
    fn presets_validate() {
        Scenario::reference().validate().unwrap();
        Scenario::desk().validate().unwrap();
        assert!(Scenario::preset("nope").is_err());
    }
}
