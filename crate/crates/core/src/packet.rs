//! Frame types and on-air sizes shared by every MAC.

use serde::{Deserialize, Serialize};

use crate::channel::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PacketKind {
    SynchRouting,
    Rts,
    Cts,
    Data,
    Ack,
    SedaBlock,
    RecoveryFrame,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        matches!(
            self,
            PacketKind::SynchRouting | PacketKind::Rts | PacketKind::Cts
        )
    }

    /// Frames that carry sensor payload.
    pub fn is_data(self) -> bool {
        matches!(self, PacketKind::Data | PacketKind::SedaBlock)
    }

    pub fn label(self) -> &'static str {
        match self {
            PacketKind::SynchRouting => "SYNCH",
            PacketKind::Rts => "RTS",
            PacketKind::Cts => "CTS",
            PacketKind::Data => "DATA",
            PacketKind::Ack => "ACK",
            PacketKind::SedaBlock => "SEDA",
            PacketKind::RecoveryFrame => "RECOVERY",
        }
    }
}

/// Sensor reading travelling toward the sink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPacket {
    pub id: u64,
    pub origin: NodeId,
    pub born_at: f64,
    pub hops: u32,
}

/// A frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub kind: PacketKind,
    pub src: NodeId,
    /// `None` for broadcasts.
    pub dst: Option<NodeId>,
    /// Total on-air bytes, headers included.
    pub length: usize,
    /// Sensor payload bytes carried.
    pub payload_len: usize,
    /// S-MAC duration field: end of the announced exchange, absolute time.
    pub duration_until: Option<f64>,
}

/// Byte sizes of every frame. Control lengths exclude the physical and MAC
/// headers; data and ack lengths are whole frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketSizes {
    pub control_len: usize,
    pub header_len: usize,
    pub payload_len: usize,
    pub ack_len: usize,
    pub block_overhead: usize,
    pub recovery_frame_overhead: usize,
    pub tx_buffer: usize,
    pub rx_buffer: usize,
}

impl Default for PacketSizes {
    fn default() -> Self {
        Self {
            control_len: 18,
            header_len: 16,
            payload_len: 29,
            ack_len: 23,
            block_overhead: 2,
            recovery_frame_overhead: 5,
            tx_buffer: 128,
            rx_buffer: 128,
        }
    }
}

impl PacketSizes {
    pub fn control_on_air(&self) -> usize {
        self.control_len + self.header_len
    }

    pub fn data_packet_len(&self) -> usize {
        self.payload_len + self.header_len
    }

    pub fn block_len(&self) -> usize {
        self.payload_len + self.block_overhead
    }

    pub fn seda_frame_len(&self, blocks: usize) -> usize {
        self.header_len + blocks * self.block_len()
    }

    /// Recovery frame listing `corrupted` block indices, one byte each.
    pub fn recovery_frame_len(&self, corrupted: usize) -> usize {
        self.header_len + self.recovery_frame_overhead + corrupted
    }

    /// Blocks that fit in the transmit radio buffer alongside a header.
    pub fn blocks_per_buffer(&self) -> usize {
        self.tx_buffer.saturating_sub(self.header_len) / self.block_len()
    }

    pub fn control(&self, kind: PacketKind, src: NodeId, dst: Option<NodeId>) -> Packet {
        Packet {
            kind,
            src,
            dst,
            length: self.control_on_air(),
            payload_len: 0,
            duration_until: None,
        }
    }
}
