//! S-MAC and Adaptive S-MAC handlers: listen-period contention, the
//! RTS/CTS/DATA/ACK exchange, NAV sleeping and adaptive wakeups.

use std::collections::HashMap;

use rand::Rng;

use crate::channel::NodeId;
use crate::packet::{DataPacket, PacketKind};
use crate::smac::{adaptive_wakeup, exchange_end};

use super::{Ev, Protocol, Simulation, Tx, TxOwner};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Stage {
    Idle,
    AwaitCts {
        peer: NodeId,
        until: f64,
    },
    AwaitAck {
        peer: NodeId,
    },
    /// Receiver side: answered (or will answer) with a CTS.
    Responding {
        peer: NodeId,
        until: f64,
    },
    AwaitData {
        peer: NodeId,
    },
    /// Receiver side: ack queued or on air.
    Acking {
        peer: NodeId,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct SmacNode {
    pub stage: Stage,
    /// Exchange counter; timeouts carry the value they were armed with.
    pub xid: u64,
    /// Handshakes this node may still start in the current frame.
    pub credits: u32,
    pub adaptive_until: f64,
    pub inflight: Option<DataPacket>,
    /// Frame planned for `SmacSend`.
    pub next: Option<(PacketKind, NodeId, f64)>,
}

impl Default for SmacNode {
    fn default() -> Self {
        Self {
            stage: Stage::Idle,
            xid: 0,
            credits: 0,
            adaptive_until: f64::NEG_INFINITY,
            inflight: None,
            next: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SmacShared {
    pub nodes: Vec<SmacNode>,
    /// Frame in which each queued packet arrived at its current holder.
    pub arrived: HashMap<u64, u64>,
    pub listen_end: f64,
}

impl Simulation {
    fn adaptive(&self) -> bool {
        self.cfg.protocol == Protocol::AdaptiveSmac
    }

    fn t_ctrl(&self) -> f64 {
        self.control_airtime()
    }

    fn t_data(&self) -> f64 {
        self.airtime(self.cfg.sizes.data_packet_len())
    }

    fn t_ack(&self) -> f64 {
        self.airtime(self.cfg.recovery_params.ack_len)
    }

    fn turn(&self) -> f64 {
        self.cfg.recovery_params.turnaround
    }

    fn in_window(&self, id: NodeId) -> bool {
        let now = self.now();
        now < self.smac.listen_end - 1e-12 || now < self.smac.nodes[id].adaptive_until - 1e-12
    }

    /// Head of the queue if it may leave this node in the current frame.
    fn eligible(&self, id: NodeId) -> Option<DataPacket> {
        let head = *self.nodes[id].queue.front()?;
        if !self.adaptive() && self.smac.arrived.get(&head.id) == Some(&self.frame_idx) {
            return None;
        }
        Some(head)
    }

    pub(super) fn smac_listen_start(&mut self) {
        let plan = &self.cfg.frame;
        let cw = self.cfg.smac.contention_window.unwrap_or(plan.rts_slot);
        self.smac.listen_end = self.frame_start + plan.synch_slot + plan.rts_slot + plan.cts_slot;
        if self.smac.nodes.len() != self.nodes.len() {
            self.smac.nodes = vec![SmacNode::default(); self.nodes.len()];
        }
        let xid_base: Vec<u64> = self.smac.nodes.iter().map(|s| s.xid + 1).collect();
        for (id, xid) in xid_base.into_iter().enumerate() {
            self.smac.nodes[id] = SmacNode {
                xid,
                credits: 1,
                ..SmacNode::default()
            };
            self.nodes[id].nav.clear();
        }
        // only arrivals within the current frame matter
        self.smac.arrived.clear();
        let le = self.smac.listen_end;
        self.sched.schedule(le, Ev::SmacListenEnd);
        for id in 0..self.nodes.len() {
            if !self.nodes[id].alive
                || self.nodes[id].parent.is_none()
                || self.nodes[id].queue.is_empty()
            {
                continue;
            }
            let forced = self
                .cfg
                .overrides
                .smac_backoff
                .get_mut(&id)
                .and_then(|q| q.pop_front());
            let b = forced.unwrap_or_else(|| self.rng_contention.gen::<f64>() * cw);
            let epoch = self.nodes[id].epoch;
            let at = self.now() + b;
            self.sched.schedule(at, Ev::SmacBackoff { node: id, epoch });
        }
    }

    pub(super) fn smac_listen_end(&mut self) {
        for id in 0..self.nodes.len() {
            if self.smac.nodes[id].stage == Stage::Idle && !self.in_window(id) {
                self.sleep(id);
            }
        }
    }

    fn retry_later(&mut self, node: NodeId) {
        let at = self.now() + self.rng_contention.gen::<f64>() * self.cfg.smac.retry_backoff;
        let epoch = self.nodes[node].epoch;
        self.sched.schedule(at, Ev::SmacBackoff { node, epoch });
    }

    pub(super) fn smac_backoff(&mut self, node: NodeId, epoch: u64) {
        let n = &self.nodes[node];
        let s = &self.smac.nodes[node];
        if n.epoch != epoch
            || !n.alive
            || !n.awake
            || n.tx_active.is_some()
            || s.stage != Stage::Idle
            || s.credits == 0
        {
            return;
        }
        if !self.in_window(node) || n.parent.is_none() {
            return;
        }
        let Some(head) = self.eligible(node) else {
            return;
        };
        let now = self.now();
        if self.nodes[node].nav.blocks(now) {
            // the NAV wakeup will bring us back
            return;
        }
        if self.channel_busy(node, now) {
            self.retry_later(node);
            return;
        }
        let parent = self.nodes[node].parent.expect("checked");
        let until = exchange_end(
            now,
            self.t_ctrl(),
            self.t_ctrl(),
            self.t_data(),
            self.t_ack(),
            self.turn(),
        );
        let s = &mut self.smac.nodes[node];
        s.credits -= 1;
        s.xid += 1;
        s.stage = Stage::AwaitCts {
            peer: parent,
            until,
        };
        s.inflight = Some(head);
        let xid = s.xid;
        let bytes = self.cfg.sizes.control_on_air();
        self.begin_tx(
            node,
            Some(parent),
            PacketKind::Rts,
            bytes,
            bytes,
            0,
            0,
            TxOwner::Smac,
            Some(until),
        );
        let to = self.name(parent);
        self.trace_line(node, format!("RTS -> {to}"));
        let timeout = now + 2.0 * self.t_ctrl() + 2.0 * self.turn() + 1e-6;
        self.sched
            .schedule(timeout, Ev::SmacTimeout { node, epoch: xid });
    }

    pub(super) fn smac_send(&mut self, node: NodeId, xid: u64) {
        if self.smac.nodes[node].xid != xid
            || !self.nodes[node].alive
            || self.nodes[node].tx_active.is_some()
        {
            return;
        }
        let Some((kind, dst, until)) = self.smac.nodes[node].next.take() else {
            return;
        };
        let now = self.now();
        if self.nodes[node].nav.blocks(now) {
            self.trace_line(node, "NAV set, abandoning exchange");
            self.end_exchange(node);
            return;
        }
        let (bytes, dur) = match kind {
            PacketKind::Cts => (self.cfg.sizes.control_on_air(), Some(until)),
            PacketKind::Data => (self.cfg.sizes.data_packet_len(), None),
            _ => (self.cfg.recovery_params.ack_len, None),
        };
        self.begin_tx(
            node,
            Some(dst),
            kind,
            bytes,
            bytes,
            0,
            0,
            TxOwner::Smac,
            dur,
        );
        let to = self.name(dst);
        self.trace_line(node, format!("{} -> {to}", kind.label()));
        let timeout = match kind {
            PacketKind::Cts => Some(now + self.t_ctrl() + self.turn() + self.t_data() + 1e-6),
            PacketKind::Data => Some(now + self.t_data() + self.turn() + self.t_ack() + 1e-6),
            _ => None,
        };
        if let Some(t) = timeout {
            self.sched.schedule(t, Ev::SmacTimeout { node, epoch: xid });
        }
    }

    fn plan_send(&mut self, node: NodeId, kind: PacketKind, dst: NodeId, until: f64) {
        let s = &mut self.smac.nodes[node];
        s.next = Some((kind, dst, until));
        let xid = s.xid;
        let at = self.now() + self.turn();
        self.sched.schedule(at, Ev::SmacSend { node, epoch: xid });
    }

    pub(super) fn smac_timeout(&mut self, node: NodeId, xid: u64) {
        if self.smac.nodes[node].xid != xid || self.smac.nodes[node].stage == Stage::Idle {
            return;
        }
        self.trace_line(node, "timeout");
        self.end_exchange(node);
    }

    /// Returns a party to idle; it stays up while a window is open.
    fn end_exchange(&mut self, node: NodeId) {
        let now = self.now();
        let s = &mut self.smac.nodes[node];
        s.stage = Stage::Idle;
        s.inflight = None;
        s.next = None;
        s.xid += 1;
        if !self.nodes[node].alive {
            return;
        }
        if self.adaptive() {
            let until = now + self.cfg.smac.adaptive_window;
            self.open_adaptive_window(node, until);
        }
        if self.in_window(node) && !self.nodes[node].nav.blocks(now) {
            self.retry_later(node);
        } else if !self.in_window(node) {
            self.sleep(node);
        }
    }

    fn open_adaptive_window(&mut self, node: NodeId, until: f64) {
        let s = &mut self.smac.nodes[node];
        if until > s.adaptive_until {
            s.adaptive_until = until;
            let epoch = self.nodes[node].epoch;
            self.sched
                .schedule(until, Ev::SmacAdaptiveEnd { node, epoch });
        }
        self.wake(node);
    }

    pub(super) fn smac_wake(&mut self, node: NodeId, epoch: u64) {
        if self.nodes[node].epoch != epoch || !self.nodes[node].alive {
            return;
        }
        let now = self.now();
        if self.adaptive() {
            self.nodes[node].nav.adaptive_wakeup_at = None;
            let until = now + self.cfg.smac.adaptive_window;
            self.open_adaptive_window(node, until);
        } else if now < self.smac.listen_end {
            self.wake(node);
        } else {
            return;
        }
        if self.smac.nodes[node].stage == Stage::Idle {
            self.retry_later(node);
        }
    }

    pub(super) fn smac_adaptive_end(&mut self, node: NodeId, epoch: u64) {
        if self.nodes[node].epoch != epoch {
            return;
        }
        if self.smac.nodes[node].stage == Stage::Idle && !self.in_window(node) {
            self.sleep(node);
        }
    }

    fn overhear(&mut self, r: NodeId, until: f64) {
        let now = self.now();
        self.nodes[r].nav.overhear(until);
        if self.smac.nodes[r].stage != Stage::Idle {
            return;
        }
        self.sleep(r);
        let epoch = self.nodes[r].epoch;
        if self.adaptive() {
            let u = self.rng_misc.gen_range(-1.0..=1.0);
            let at = adaptive_wakeup(now, until, self.cfg.smac.adaptive_error, u);
            self.nodes[r].nav.adaptive_wakeup_at = Some(at);
            self.sched.schedule(at, Ev::SmacWake { node: r, epoch });
        } else {
            let at = self.nodes[r].nav.nav_until;
            if at < self.smac.listen_end {
                self.sched.schedule(at, Ev::SmacWake { node: r, epoch });
            }
        }
    }

    pub(super) fn smac_tx_end(&mut self, t: &Tx) {
        let Some(dst) = t.dst else { return };
        match t.kind {
            PacketKind::Rts | PacketKind::Cts => {
                let until = t.duration_until.unwrap_or(t.end);
                for r in self.hearers[t.src].clone() {
                    if !self.nodes[r].alive || !self.decode(t, r).header_ok {
                        continue;
                    }
                    if r == dst {
                        self.on_addressed_control(r, t, until);
                    } else {
                        self.overhear(r, until);
                    }
                }
            }
            PacketKind::Data => {
                if let Stage::Responding { peer, .. } = self.smac.nodes[dst].stage {
                    if peer == t.src && self.decode(t, dst).header_ok {
                        if let Some(p) = self.smac.nodes[t.src].inflight {
                            self.smac_accept(dst, t.src, p);
                        }
                        self.smac.nodes[dst].stage = Stage::Acking { peer };
                        self.smac.nodes[dst].xid += 1;
                        self.plan_send(dst, PacketKind::Ack, peer, t.end);
                    }
                }
                if let Stage::AwaitData { peer } = self.smac.nodes[t.src].stage {
                    self.smac.nodes[t.src].stage = Stage::AwaitAck { peer };
                }
            }
            PacketKind::Ack => {
                if self.smac.nodes[t.src].stage == (Stage::Acking { peer: dst }) {
                    self.end_exchange(t.src);
                }
                if let Stage::AwaitAck { peer } = self.smac.nodes[dst].stage {
                    if peer == t.src && self.decode(t, dst).header_ok {
                        if let Some(p) = self.smac.nodes[dst].inflight {
                            if self.nodes[dst].queue.front().map(|h| h.id) == Some(p.id) {
                                self.nodes[dst].queue.pop_front();
                                self.queue_changed(dst);
                            }
                        }
                        self.end_exchange(dst);
                    }
                }
            }
            _ => {}
        }
    }

    fn on_addressed_control(&mut self, r: NodeId, t: &Tx, until: f64) {
        let now = self.now();
        match (t.kind, self.smac.nodes[r].stage) {
            (PacketKind::Rts, Stage::Idle) => {
                if self.nodes[r].nav.blocks(now) || !self.nodes[r].awake {
                    return;
                }
                let s = &mut self.smac.nodes[r];
                s.xid += 1;
                s.stage = Stage::Responding { peer: t.src, until };
                self.plan_send(r, PacketKind::Cts, t.src, until);
            }
            (PacketKind::Cts, Stage::AwaitCts { peer, until }) if peer == t.src => {
                let s = &mut self.smac.nodes[r];
                s.xid += 1;
                s.stage = Stage::AwaitData { peer };
                self.plan_send(r, PacketKind::Data, peer, until);
            }
            _ => {}
        }
    }

    fn smac_accept(&mut self, receiver: NodeId, sender: NodeId, p: DataPacket) {
        if self.nodes[receiver].last_rx.get(&sender) == Some(&p.id) {
            return;
        }
        self.nodes[receiver].last_rx.insert(sender, p.id);
        self.smac.arrived.insert(p.id, self.frame_idx);
        if self.adaptive() {
            self.smac.nodes[receiver].credits += 1;
        }
        self.accept_packet(receiver, p);
    }
}
