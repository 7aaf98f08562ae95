//! IAMAC per-node control logic for the RTS and CTS slots.
//!
//! The functions here are pure state transitions; the network simulator
//! feeds them decoded packets and timer expiries and carries out the
//! resulting actions on the medium.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::channel::NodeId;
use crate::engine::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Undecided,
    /// Sent an RTS and waits for a CTS.
    Sender,
    SenderGranted,
    /// Sent CTSs and will receive in the Sleep/Communication slot.
    Receiver,
    Deactivated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtsRecord {
    pub from: NodeId,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacControlState {
    pub cancel_rts_trans: bool,
    pub cancel_cts_trans: bool,
    pub received_rtss_queue: VecDeque<RtsRecord>,
    pub role: Role,
    pub pending_contention_slot: Option<u32>,
    pub rts_sent: bool,
    pub cts_sent: bool,
    /// Children granted by our CTSs, in grant order.
    pub grants: Vec<NodeId>,
}

impl Default for MacControlState {
    fn default() -> Self {
        Self {
            cancel_rts_trans: false,
            cancel_cts_trans: false,
            received_rtss_queue: VecDeque::new(),
            role: Role::Undecided,
            pending_contention_slot: None,
            rts_sent: false,
            cts_sent: false,
            grants: Vec::new(),
        }
    }
}

impl MacControlState {
    /// Frame-boundary reset: queue and both flags cleared.
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn is_deactivated(&self) -> bool {
        self.role == Role::Deactivated
    }

    /// Sleeps until the next frame; queued data is untouched by design
    /// since it lives outside this state.
    pub fn deactivate(&mut self) {
        self.role = Role::Deactivated;
        self.received_rtss_queue.clear();
        self.pending_contention_slot = None;
        self.grants.clear();
    }

    /// Marks our own RTS as sent.
    pub fn rts_transmitted(&mut self) {
        self.rts_sent = true;
        self.cancel_cts_trans = true;
        self.pending_contention_slot = None;
        self.role = Role::Sender;
    }

    /// Children to answer with CTSs at the start of the CTS slot.
    pub fn cts_plan(&self) -> Option<Vec<NodeId>> {
        if self.is_deactivated() || self.cancel_cts_trans || self.received_rtss_queue.is_empty() {
            return None;
        }
        Some(self.received_rtss_queue.iter().map(|r| r.from).collect())
    }

    pub fn cts_transmitted(&mut self, children: Vec<NodeId>) {
        self.cts_sent = true;
        self.grants = children;
        self.role = Role::Receiver;
    }
}

/// Outcome of a decoded RTS at one node.
#[derive(Debug, Clone, PartialEq)]
pub enum RtsReaction {
    Ignored,
    /// Addressed to us and appended to the Received RTSs Queue.
    Queued,
    /// Addressed to us while we are committed to sending.
    Dropped,
    /// Overheard an RTS to our parent. `deleted` lists the queued RTSs that
    /// were removed; `repick` asks for a new contention slot.
    ParentRts {
        deleted: Vec<NodeId>,
        repick: bool,
    },
    Deactivate,
}

/// Applies the RTS-slot rules to a decoded RTS `src -> dst` at `me`.
pub fn on_rts(
    state: &mut MacControlState,
    me: NodeId,
    parent: Option<NodeId>,
    src: NodeId,
    dst: NodeId,
    at: f64,
    has_data: bool,
) -> RtsReaction {
    if state.is_deactivated() || src == me {
        return RtsReaction::Ignored;
    }
    if dst == me {
        if state.cancel_cts_trans {
            return RtsReaction::Dropped;
        }
        state
            .received_rtss_queue
            .push_back(RtsRecord { from: src, at });
        state.cancel_rts_trans = true;
        state.pending_contention_slot = None;
        return RtsReaction::Queued;
    }
    if Some(dst) == parent {
        state.cancel_cts_trans = true;
        let deleted: Vec<NodeId> = state
            .received_rtss_queue
            .drain(..)
            .map(|r| r.from)
            .collect();
        if !deleted.is_empty() {
            state.cancel_rts_trans = false;
        }
        let repick = has_data && !state.rts_sent && !state.cancel_rts_trans;
        return RtsReaction::ParentRts { deleted, repick };
    }
    state.deactivate();
    RtsReaction::Deactivate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsReaction {
    Ignored,
    Granted,
    Deactivate,
}

/// Applies the CTS-slot rules to a decoded CTS `src -> dst` at `me`.
pub fn on_cts(
    state: &mut MacControlState,
    me: NodeId,
    parent: Option<NodeId>,
    src: NodeId,
    dst: NodeId,
) -> CtsReaction {
    if state.is_deactivated() || src == me {
        return CtsReaction::Ignored;
    }
    if dst == me {
        if state.rts_sent && Some(src) == parent {
            state.role = Role::SenderGranted;
            return CtsReaction::Granted;
        }
        return CtsReaction::Ignored;
    }
    // consecutive CTSs from our parent grant our siblings
    if state.cts_sent || Some(src) == parent {
        return CtsReaction::Ignored;
    }
    state.deactivate();
    CtsReaction::Deactivate
}

/// Contention slots strictly after `current`, or all slots when `None`.
pub fn remaining_slots(current: Option<u32>, w: u32) -> Vec<u32> {
    match current {
        None => (0..w).collect(),
        Some(c) => (c + 1..w).collect(),
    }
}

/// Uniform slot from `remaining` and uniform backoff in `[0, max_backoff]`.
pub fn pick_contention_slot(
    remaining: &[u32],
    max_backoff: f64,
    rng: &mut RandomStream,
) -> Option<(u32, f64)> {
    if remaining.is_empty() {
        return None;
    }
    let slot = remaining[rng.gen_range(0..remaining.len())];
    let backoff = if max_backoff > 0.0 {
        rng.gen_range(0.0..=max_backoff)
    } else {
        0.0
    };
    Some((slot, backoff))
}

/// A child's transfer window inside the Sleep/Communication slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub child: NodeId,
    pub start: f64,
    pub end: f64,
}

/// Greedy sequential schedule: children take turns in grant order, each
/// holding the channel for its demand or until the slot ends.
pub fn schedule_communications(start: f64, end: f64, children: &[(NodeId, f64)]) -> Vec<Window> {
    let mut t = start;
    let mut out = Vec::new();
    for &(child, demand) in children {
        if t >= end {
            break;
        }
        let stop = (t + demand.max(0.0)).min(end);
        out.push(Window {
            child,
            start: t,
            end: stop,
        });
        t = stop;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_stream;

    const A: NodeId = 1;
    const B: NodeId = 2;
    const C: NodeId = 3;
    const E: NodeId = 4;

    #[test]
    fn example_scenario_transitions() {
        // A's parent is B; B and E report to C.
        let mut a = MacControlState::default();
        let mut b = MacControlState::default();
        let mut e = MacControlState::default();
        // step 1: A -> B
        a.rts_transmitted();
        assert_eq!(
            on_rts(&mut b, B, Some(C), A, B, 1.0, true),
            RtsReaction::Queued
        );
        assert!(b.cancel_rts_trans);
        // step 2: E -> C, overheard by B
        e.rts_transmitted();
        let r = on_rts(&mut b, B, Some(C), E, C, 2.0, true);
        assert_eq!(
            r,
            RtsReaction::ParentRts {
                deleted: vec![A],
                repick: true
            }
        );
        assert!(b.received_rtss_queue.is_empty());
        assert!(!b.cancel_rts_trans && b.cancel_cts_trans);
        // step 3: B -> C; E is unaffected, A deactivates
        b.rts_transmitted();
        let before = e.clone();
        assert_eq!(
            on_rts(&mut e, E, Some(C), B, C, 3.0, true),
            RtsReaction::ParentRts {
                deleted: vec![],
                repick: false
            }
        );
        assert_eq!(e.role, before.role);
        assert_eq!(
            on_rts(&mut a, A, Some(B), B, C, 3.0, true),
            RtsReaction::Deactivate
        );
        assert!(a.is_deactivated());
    }

    #[test]
    fn committed_sender_drops_incoming_rts() {
        let mut s = MacControlState::default();
        s.rts_transmitted();
        assert_eq!(
            on_rts(&mut s, B, Some(C), A, B, 0.0, true),
            RtsReaction::Dropped
        );
        assert!(s.cts_plan().is_none());
    }

    #[test]
    fn foreign_rts_deactivates_and_keeps_nothing() {
        let mut s = MacControlState::default();
        on_rts(&mut s, B, Some(C), A, B, 0.0, false);
        assert_eq!(
            on_rts(&mut s, B, Some(C), E, 9, 0.1, false),
            RtsReaction::Deactivate
        );
        assert!(s.received_rtss_queue.is_empty());
        assert_eq!(
            on_rts(&mut s, B, Some(C), A, B, 0.2, false),
            RtsReaction::Ignored
        );
    }

    #[test]
    fn cts_rules() {
        let mut parent = MacControlState::default();
        on_rts(&mut parent, C, None, A, C, 0.0, false);
        on_rts(&mut parent, C, None, B, C, 0.1, false);
        let plan = parent.cts_plan().unwrap();
        assert_eq!(plan, vec![A, B]);
        parent.cts_transmitted(plan);

        let mut a = MacControlState::default();
        a.rts_transmitted();
        let mut b = a.clone();
        assert_eq!(on_cts(&mut a, A, Some(C), C, A), CtsReaction::Granted);
        // A also hears the CTS meant for its sibling
        assert_eq!(on_cts(&mut a, A, Some(C), C, B), CtsReaction::Ignored);
        assert_eq!(on_cts(&mut b, B, Some(C), C, B), CtsReaction::Granted);
        assert_eq!(a.role, Role::SenderGranted);

        let mut x = MacControlState::default();
        assert_eq!(on_cts(&mut x, 7, Some(8), C, A), CtsReaction::Deactivate);
        assert_eq!(on_cts(&mut parent, C, None, 9, 10), CtsReaction::Ignored);
    }

    #[test]
    fn reset_clears_queue_and_flags() {
        let mut s = MacControlState::default();
        on_rts(&mut s, B, Some(C), A, B, 0.0, true);
        s.cancel_cts_trans = true;
        s.reset();
        assert_eq!(s, MacControlState::default());
    }

    #[test]
    fn slot_choice_is_uniform() {
        let mut rng = rng_stream(3, "contention");
        let w = 8;
        let slots = remaining_slots(None, w);
        let draws = 10_000;
        let mut counts = vec![0u32; w as usize];
        for _ in 0..draws {
            let (s, b) = pick_contention_slot(&slots, 0.002, &mut rng).unwrap();
            assert!((0.0..=0.002).contains(&b));
            counts[s as usize] += 1;
        }
        let p = 1.0 / f64::from(w);
        let sigma = (f64::from(draws) * p * (1.0 - p)).sqrt();
        let chi2: f64 = counts
            .iter()
            .map(|&c| (f64::from(c) - f64::from(draws) * p).powi(2) / (f64::from(draws) * p))
            .sum();
        for c in counts {
            assert!((f64::from(c) - f64::from(draws) * p).abs() < 3.0 * sigma);
        }
        // 7 degrees of freedom, 0.999 quantile
        assert!(chi2 < 24.32, "chi2 {chi2}");
    }

    #[test]
    fn repick_uses_later_slots_only() {
        let mut rng = rng_stream(4, "contention");
        assert_eq!(pick_contention_slot(&[5], 0.0, &mut rng), Some((5, 0.0)));
        for _ in 0..200 {
            let (s, _) =
                pick_contention_slot(&remaining_slots(Some(3), 8), 0.002, &mut rng).unwrap();
            assert!(s > 3);
        }
        assert!(remaining_slots(Some(7), 8).is_empty());
        assert_eq!(pick_contention_slot(&[], 0.002, &mut rng), None);
    }

    #[test]
    fn windows_are_contiguous_in_grant_order() {
        assert!(schedule_communications(0.0, 1.0, &[]).is_empty());
        let one = schedule_communications(0.3, 1.0, &[(5, 10.0)]);
        assert_eq!(
            one,
            vec![Window {
                child: 5,
                start: 0.3,
                end: 1.0
            }]
        );
        let two = schedule_communications(0.3, 1.0, &[(5, 0.2), (6, 0.2)]);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].child, 5);
        assert!((two[0].end - two[1].start).abs() < 1e-15);
        assert!(two[1].end <= 1.0);
    }
}
