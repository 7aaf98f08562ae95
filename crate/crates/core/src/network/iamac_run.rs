//! IAMAC frame handlers: RTS contention, CTS grants and the sequential
//! transfers of the Sleep/Communication slot.

use std::collections::VecDeque;

use crate::channel::NodeId;
use crate::iamac::{
    on_cts, on_rts, pick_contention_slot, remaining_slots, CtsReaction, Role, RtsReaction,
};
use crate::packet::{DataPacket, PacketKind};
use crate::recovery::{Session, TxRequest};

use super::{Ev, Simulation, Tx, TxOwner};

/// One child-to-parent transfer inside a communication segment.
#[derive(Debug)]
pub struct Exchange {
    pub parent: NodeId,
    pub child: NodeId,
    session: Option<Session>,
    /// Request already drawn from the session, waiting for its start time.
    queued: Option<TxRequest>,
    delivered_seen: usize,
    /// Packets handed to the session.
    taken: Vec<u64>,
    start: f64,
}

impl Exchange {
    pub(crate) fn held_ids(&self) -> impl Iterator<Item = u64> + '_ {
        let live = self.session.is_some();
        self.taken.iter().copied().filter(move |_| live)
    }
}

impl Simulation {
    fn contend_at(&mut self, node: NodeId, slot: u32, backoff: f64) {
        self.nodes[node].mac.pending_contention_slot = Some(slot);
        let at = self.frame_start + self.cfg.frame.mini_slot_start(slot) + backoff;
        let epoch = self.nodes[node].epoch;
        self.sched
            .schedule(at.max(self.now()), Ev::Contend { node, slot, epoch });
    }

    fn draw_slot(&mut self, node: NodeId, after: Option<u32>) -> Option<(u32, f64)> {
        let remaining = remaining_slots(after, self.cfg.frame.w);
        if let Some(list) = self.cfg.overrides.contention.get_mut(&node) {
            while let Some((slot, b)) = list.pop_front() {
                if remaining.contains(&slot) {
                    return Some((slot, b));
                }
            }
        }
        pick_contention_slot(
            &remaining,
            self.cfg.frame.max_backoff,
            &mut self.rng_contention,
        )
    }

    fn current_slot(&self) -> u32 {
        let off = self.now() - self.frame_start - self.cfg.frame.rts_start();
        ((off / self.cfg.frame.mini_slot).floor().max(0.0) as u32).min(self.cfg.frame.w - 1)
    }

    fn has_data(&self, id: NodeId) -> bool {
        !self.nodes[id].queue.is_empty()
    }

    pub(super) fn iamac_synch_end(&mut self, k: usize) {
        if k > 0 {
            self.iamac_comm_start(k);
            return;
        }
        for id in 0..self.nodes.len() {
            let n = &self.nodes[id];
            if !n.alive || n.parent.is_none() || n.queue.is_empty() {
                continue;
            }
            if let Some((slot, b)) = self.draw_slot(id, None) {
                self.contend_at(id, slot, b);
            }
        }
        let cts = self.frame_start + self.cfg.frame.cts_start();
        self.sched.schedule(cts, Ev::CtsSlotStart);
        let comm = self.frame_start + self.cfg.frame.comm_segments()[0].0;
        self.sched.schedule(comm, Ev::CommStart(0));
    }

    pub(super) fn iamac_contend(&mut self, node: NodeId, slot: u32, epoch: u64) {
        let n = &self.nodes[node];
        if n.epoch != epoch
            || !n.alive
            || n.mac.pending_contention_slot != Some(slot)
            || n.mac.cancel_rts_trans
            || n.mac.rts_sent
            || n.mac.is_deactivated()
            || n.tx_active.is_some()
        {
            return;
        }
        let now = self.now();
        if self.channel_busy(node, now) {
            self.trace_line(node, format!("busy in slot {slot}"));
            match self.draw_slot(node, Some(slot)) {
                Some((s, b)) => self.contend_at(node, s, b),
                None => self.nodes[node].mac.pending_contention_slot = None,
            }
            return;
        }
        let parent = self.nodes[node].parent.expect("contenders are routed");
        let bytes = self.cfg.sizes.control_on_air();
        self.begin_tx(
            node,
            Some(parent),
            PacketKind::Rts,
            bytes,
            bytes,
            0,
            0,
            TxOwner::Control,
            None,
        );
        self.nodes[node].mac.rts_transmitted();
        let to = self.name(parent);
        self.trace_line(node, format!("RTS -> {to} slot {slot}"));
    }

    pub(super) fn iamac_control_end(&mut self, t: &Tx) {
        let Some(dst) = t.dst else { return };
        let hearers = self.hearers[t.src].clone();
        for r in hearers {
            if !self.nodes[r].alive || self.nodes[r].mac.is_deactivated() {
                continue;
            }
            if !self.decode(t, r).header_ok {
                continue;
            }
            let parent = self.nodes[r].parent;
            match t.kind {
                PacketKind::Rts => {
                    let has_data = self.has_data(r);
                    let reaction = on_rts(
                        &mut self.nodes[r].mac,
                        r,
                        parent,
                        t.src,
                        dst,
                        t.start,
                        has_data,
                    );
                    self.apply_rts_reaction(r, t.src, reaction);
                }
                PacketKind::Cts => match on_cts(&mut self.nodes[r].mac, r, parent, t.src, dst) {
                    CtsReaction::Granted => {
                        let from = self.name(t.src);
                        self.trace_line(r, format!("granted by {from}"));
                    }
                    CtsReaction::Deactivate => self.deactivate(r),
                    CtsReaction::Ignored => {}
                },
                _ => {}
            }
        }
        if t.kind == PacketKind::Cts {
            self.send_next_cts(t.src);
        }
    }

    fn apply_rts_reaction(&mut self, r: NodeId, from: NodeId, reaction: RtsReaction) {
        let from = self.name(from);
        match reaction {
            RtsReaction::Queued => self.trace_line(r, format!("queued RTS from {from}")),
            RtsReaction::Dropped => self.trace_line(r, format!("dropped RTS from {from}")),
            RtsReaction::ParentRts { deleted, repick } => {
                for d in &deleted {
                    let d = self.name(*d);
                    self.trace_line(r, format!("deleted RTS from {d}"));
                }
                if repick {
                    let cur = self.current_slot();
                    match self.draw_slot(r, Some(cur)) {
                        Some((s, b)) => {
                            self.trace_line(r, format!("repicked slot {s}"));
                            self.contend_at(r, s, b);
                        }
                        None => self.nodes[r].mac.pending_contention_slot = None,
                    }
                }
            }
            RtsReaction::Deactivate => self.deactivate(r),
            RtsReaction::Ignored => {}
        }
    }

    pub(super) fn iamac_cts_slot_start(&mut self) {
        let airtime = self.control_airtime();
        for id in 0..self.nodes.len() {
            let n = &self.nodes[id];
            if !n.alive {
                continue;
            }
            let Some(plan) = n.mac.cts_plan() else {
                continue;
            };
            let span = (self.cfg.frame.cts_slot - plan.len() as f64 * airtime).max(0.0);
            let offset = match self.cfg.overrides.cts_timer.get(&id) {
                Some(&o) => o.min(span),
                None => rand::Rng::gen::<f64>(&mut self.rng_misc) * span,
            };
            let epoch = self.nodes[id].epoch;
            let at = self.now() + offset;
            self.sched.schedule(at, Ev::CtsTimer { node: id, epoch });
        }
    }

    pub(super) fn iamac_cts_timer(&mut self, node: NodeId, epoch: u64) {
        if self.nodes[node].epoch != epoch
            || !self.nodes[node].alive
            || self.nodes[node].tx_active.is_some()
        {
            return;
        }
        let Some(plan) = self.nodes[node].mac.cts_plan() else {
            return;
        };
        let now = self.now();
        if self.channel_busy(node, now) {
            self.trace_line(node, "busy before CTS");
            self.deactivate(node);
            return;
        }
        self.nodes[node].mac.cts_transmitted(plan.clone());
        self.nodes[node].cts_backlog = plan.into();
        self.send_next_cts(node);
    }

    fn send_next_cts(&mut self, node: NodeId) {
        if !self.nodes[node].alive || self.nodes[node].tx_active.is_some() {
            return;
        }
        let Some(child) = self.nodes[node].cts_backlog.pop_front() else {
            return;
        };
        let bytes = self.cfg.sizes.control_on_air();
        self.begin_tx(
            node,
            Some(child),
            PacketKind::Cts,
            bytes,
            bytes,
            0,
            0,
            TxOwner::Control,
            None,
        );
        let to = self.name(child);
        self.trace_line(node, format!("CTS -> {to}"));
    }

    pub(super) fn iamac_comm_start(&mut self, k: usize) {
        if k == 0 {
            for id in 0..self.nodes.len() {
                let m = &self.nodes[id].mac;
                if m.role == Role::Receiver && !m.grants.is_empty() {
                    let grants: VecDeque<NodeId> = m.grants.iter().copied().collect();
                    self.schedules.insert(id, grants);
                }
            }
        }
        let mut parties = vec![false; self.nodes.len()];
        for (&p, kids) in &self.schedules {
            if kids.is_empty() {
                continue;
            }
            parties[p] = true;
            for &c in kids {
                if self.granted(c, p) {
                    parties[c] = true;
                }
            }
        }
        for (id, &party) in parties.iter().enumerate() {
            if party {
                self.wake(id);
            } else {
                self.sleep(id);
            }
        }
        let parents: Vec<NodeId> = self
            .schedules
            .iter()
            .filter(|(_, k)| !k.is_empty())
            .map(|(&p, _)| p)
            .collect();
        for p in parents {
            let epoch = self.nodes[p].epoch;
            let now = self.now();
            self.sched
                .schedule(now, Ev::ExchangeStart { parent: p, epoch });
        }
    }

    fn granted(&self, child: NodeId, parent: NodeId) -> bool {
        let c = &self.nodes[child];
        c.alive && c.parent == Some(parent) && c.mac.role == Role::SenderGranted
    }

    fn segment_end(&self) -> f64 {
        let off = self.now() - self.frame_start;
        self.cfg
            .frame
            .comm_segments()
            .into_iter()
            .find(|&(a, b)| off >= a - 1e-9 && off < b)
            .map(|(_, b)| self.frame_start + b)
            .unwrap_or(self.now())
    }

    pub(super) fn iamac_exchange_start(&mut self, parent: NodeId, epoch: u64) {
        if self.nodes[parent].epoch != epoch || !self.nodes[parent].alive {
            return;
        }
        let seg_end = self.segment_end();
        let now = self.now();
        let Some(&child) = self.schedules.get(&parent).and_then(|k| k.front()) else {
            self.sleep(parent);
            return;
        };
        if !self.granted(child, parent) || self.nodes[child].queue.is_empty() {
            // absent child: wait one data airtime before moving on
            self.schedules.get_mut(&parent).map(VecDeque::pop_front);
            let wait = self.airtime(self.cfg.sizes.data_packet_len())
                + self.cfg.recovery_params.turnaround;
            if now + wait < seg_end {
                self.sched
                    .schedule(now + wait, Ev::ExchangeStart { parent, epoch });
            } else {
                self.sleep(parent);
            }
            return;
        }
        let budget = seg_end - 1e-6 - now;
        if budget <= 0.0 {
            return;
        }
        let queue: VecDeque<DataPacket> = std::mem::take(&mut self.nodes[child].queue);
        let taken = queue.iter().map(|p| p.id).collect();
        let last = self.nodes[parent].last_rx.get(&child).copied();
        let session = Session::new(
            self.cfg.recovery,
            queue,
            now,
            budget,
            last,
            self.cfg.recovery_params.clone(),
        )
        .with_ber_hint(self.nodes[child].ber_hint);
        self.exchanges.push(Exchange {
            parent,
            child,
            session: Some(session),
            queued: None,
            delivered_seen: 0,
            taken,
            start: now,
        });
        let ex = self.exchanges.len() - 1;
        let from = self.name(child);
        self.trace_line(parent, format!("exchange with {from}"));
        self.iamac_exchange_tx(ex);
    }

    pub(super) fn iamac_exchange_tx(&mut self, ex: usize) {
        let now = self.now();
        let e = &mut self.exchanges[ex];
        let Some(session) = e.session.as_mut() else {
            return;
        };
        let req = match e.queued.take() {
            Some(r) => Some(r),
            None => session.next_tx(),
        };
        let Some(req) = req else {
            self.finish_exchange(ex);
            return;
        };
        if req.start > now + 1e-9 {
            self.exchanges[ex].queued = Some(req.clone());
            self.sched.schedule(req.start, Ev::ExchangeTx { ex });
            return;
        }
        let (parent, child) = (e.parent, e.child);
        let (src, dst) = if req.from_receiver {
            (parent, child)
        } else {
            (child, parent)
        };
        if !self.nodes[src].alive || !self.nodes[dst].alive {
            self.finish_exchange(ex);
            return;
        }
        self.begin_tx(
            src,
            Some(dst),
            req.kind,
            req.bytes,
            req.header_bytes,
            req.block_bytes,
            req.blocks,
            TxOwner::Exchange(ex),
            None,
        );
    }

    pub(super) fn iamac_exchange_tx_end(&mut self, ex: usize, t: &Tx) {
        let rx = t.dst.expect("exchange frames are addressed");
        let outcome = self.decode(t, rx);
        let e = &mut self.exchanges[ex];
        let Some(session) = e.session.as_mut() else {
            return;
        };
        session.report(outcome);
        let fresh: Vec<DataPacket> = session.delivered()[e.delivered_seen..].to_vec();
        e.delivered_seen += fresh.len();
        let parent = e.parent;
        for p in fresh {
            self.accept_packet(parent, p);
        }
        self.iamac_exchange_tx(ex);
    }

    fn finish_exchange(&mut self, ex: usize) {
        let e = &mut self.exchanges[ex];
        let Some(session) = e.session.take() else {
            return;
        };
        let (parent, child, start) = (e.parent, e.child, e.start);
        let report = session.finish();
        if let Some(id) = report.last_rx_id {
            self.nodes[parent].last_rx.insert(child, id);
        }
        for p in report.dropped.iter().copied() {
            self.drop_packet(p);
        }
        let exhausted = !report.residual.is_empty();
        let mut queue = report.residual;
        queue.extend(std::mem::take(&mut self.nodes[child].queue));
        self.nodes[child].queue = queue;
        self.queue_changed(child);
        let now = self.now();
        let done_at = (start + report.elapsed).max(now);
        if exhausted {
            // out of time: the child keeps its turn for the next segment
            self.sleep(child);
            self.sleep(parent);
            return;
        }
        self.schedules.get_mut(&parent).map(VecDeque::pop_front);
        self.sleep(child);
        let epoch = self.nodes[parent].epoch;
        self.sched
            .schedule(done_at, Ev::ExchangeStart { parent, epoch });
    }
}
