//! ETX spanning-tree routing toward the sink.
//!
//! Bootstrap has two steps. Every node broadcasts a fixed number of probe
//! packets and neighbors count what they hear; link cost is
//! `ETX = 1 / (p_f * p_r)`. The sink then advertises cost zero in
//! Synch/Routing packets and every node adopts the neighbor that minimizes
//! advertised cost plus link ETX, subject to a cap on that neighbor's
//! children.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{LinkModel, NodeId, Topology, SINK};
use crate::engine::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    /// Probes heard from this neighbor.
    pub received_count: u32,
    /// Probes this neighbor sent.
    pub sent_count: u32,
    /// Our probes the neighbor reported hearing (piggybacked).
    pub reverse_count: u32,
    /// `None` when either direction delivered nothing.
    pub etx: Option<f64>,
    pub advertised_cost: f64,
    pub advertised_children: usize,
}

impl NeighborEntry {
    pub fn usable(&self) -> bool {
        self.etx.is_some()
    }
}

/// `1 / (p_f * p_r)`, or `None` when either ratio is zero.
pub fn etx(p_forward: f64, p_reverse: f64) -> Option<f64> {
    if p_forward <= 0.0 || p_reverse <= 0.0 {
        None
    } else {
        Some(1.0 / (p_forward * p_reverse))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborTable {
    pub entries: BTreeMap<NodeId, NeighborEntry>,
}

impl NeighborTable {
    pub fn get(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn usable(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values().filter(|e| e.usable())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteState {
    pub my_cost: f64,
    pub parent: Option<NodeId>,
    pub children: BTreeSet<NodeId>,
    /// 0 disables the cap.
    pub max_children: usize,
}

impl RouteState {
    pub fn new(id: NodeId, max_children: usize) -> Self {
        Self {
            my_cost: if id == SINK { 0.0 } else { f64::INFINITY },
            parent: None,
            children: BTreeSet::new(),
            max_children,
        }
    }

    pub fn is_routed(&self, id: NodeId) -> bool {
        id == SINK || self.parent.is_some()
    }
}

/// Contents of a Synch/Routing packet relevant to routing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynchAdvert {
    pub sender: NodeId,
    pub sender_cost: f64,
    pub sender_children: usize,
}

fn under_cap(children: usize, max_children: usize) -> bool {
    max_children == 0 || children < max_children
}

/// Picks the admissible candidate with the lowest total cost; ties go to the
/// lower node id.
pub fn select_parent<'a, I>(candidates: I, max_children: usize) -> Option<NodeId>
where
    I: IntoIterator<Item = &'a NeighborEntry>,
{
    candidates
        .into_iter()
        .filter(|e| under_cap(e.advertised_children, max_children))
        .filter_map(|e| e.etx.map(|x| (e.advertised_cost + x, e.id)))
        .filter(|(c, _)| c.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// A parent switch produced by [`propagate_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParentChange {
    pub old: Option<NodeId>,
    pub new: NodeId,
}

/// Applies a received Synch/Routing advert. Returns the parent switch, if
/// any; a cost-only refresh from the current parent returns `None` but still
/// updates `my_cost`.
pub fn propagate_cost(
    me: NodeId,
    state: &mut RouteState,
    table: &mut NeighborTable,
    advert: SynchAdvert,
) -> Option<ParentChange> {
    if me == SINK {
        return None;
    }
    let entry = table.entries.get_mut(&advert.sender)?;
    entry.advertised_cost = advert.sender_cost;
    entry.advertised_children = advert.sender_children;
    let link = entry.etx?;
    let candidate = advert.sender_cost + link;
    if state.parent == Some(advert.sender) {
        if candidate < state.my_cost {
            state.my_cost = candidate;
        }
        return None;
    }
    if candidate < state.my_cost && under_cap(advert.sender_children, state.max_children) {
        let old = state.parent.replace(advert.sender);
        state.my_cost = candidate;
        return Some(ParentChange {
            old,
            new: advert.sender,
        });
    }
    None
}

/// Counts probe receptions over a contention-free schedule.
/// `heard[i][j]` is the number of node `i`'s probes node `j` received.
pub fn probe_counts(
    topology: &Topology,
    model: &LinkModel,
    tx_power: f64,
    broadcast_count: u32,
    probe_len: usize,
    rng: &mut RandomStream,
) -> Vec<Vec<u32>> {
    let n = topology.len();
    let mut heard = vec![vec![0u32; n]; n];
    let mut prr = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let snr = topology.rx_power(i, j, tx_power) - model.noise_floor;
                prr[i][j] = model.packet_reception_prob(snr, probe_len).unwrap_or(0.0);
            }
        }
    }
    for _ in 0..broadcast_count {
        for i in 0..n {
            for j in 0..n {
                if i != j && prr[i][j] > 1e-12 && rng.gen::<f64>() < prr[i][j] {
                    heard[i][j] += 1;
                }
            }
        }
    }
    heard
}

/// Builds neighbor tables from probe counts.
pub fn estimate_links(heard: &[Vec<u32>], broadcast_count: u32) -> Vec<NeighborTable> {
    let n = heard.len();
    let b = f64::from(broadcast_count.max(1));
    (0..n)
        .map(|me| {
            let mut table = NeighborTable::default();
            for other in 0..n {
                if other == me || (heard[other][me] == 0 && heard[me][other] == 0) {
                    continue;
                }
                let p_f = f64::from(heard[me][other]) / b;
                let p_r = f64::from(heard[other][me]) / b;
                table.entries.insert(
                    other,
                    NeighborEntry {
                        id: other,
                        received_count: heard[other][me],
                        sent_count: broadcast_count,
                        reverse_count: heard[me][other],
                        etx: etx(p_f, p_r),
                        advertised_cost: f64::INFINITY,
                        advertised_children: 0,
                    },
                );
            }
            table
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RoutingTree {
    pub tables: Vec<NeighborTable>,
    pub routes: Vec<RouteState>,
    /// Synch rounds used until convergence.
    pub rounds: usize,
}

impl RoutingTree {
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.routes[id].parent
    }

    pub fn unrouted(&self) -> Vec<NodeId> {
        (0..self.routes.len())
            .filter(|&i| !self.routes[i].is_routed(i))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.unrouted().is_empty()
    }

    /// Hop count to the sink, `None` when unrouted or on a cycle.
    pub fn depth(&self, id: NodeId) -> Option<usize> {
        let mut cur = id;
        let mut hops = 0;
        while cur != SINK {
            cur = self.routes[cur].parent?;
            hops += 1;
            if hops > self.routes.len() {
                return None;
            }
        }
        Some(hops)
    }

    /// `child parent cost` lines, one per routed non-sink node.
    pub fn edge_list(&self) -> String {
        let mut out = String::from("# child parent cost\n");
        for (i, r) in self.routes.iter().enumerate() {
            if let Some(p) = r.parent {
                let _ = writeln!(out, "{i} {p} {:.6}", r.my_cost);
            }
        }
        out
    }

    /// Applies an advert to `receiver`, keeping children sets in sync. A
    /// parent that filled up since advertising refuses the join, so the cap
    /// holds even when several nodes react to the same advert.
    pub fn deliver_advert(&mut self, receiver: NodeId, advert: SynchAdvert) -> bool {
        let before = self.routes[receiver].clone();
        let change = propagate_cost(
            receiver,
            &mut self.routes[receiver],
            &mut self.tables[receiver],
            advert,
        );
        if let Some(ch) = change {
            let cap = self.routes[ch.new].max_children.max(before.max_children);
            if !under_cap(self.routes[ch.new].children.len(), cap) {
                self.routes[receiver] = before;
                return false;
            }
            if let Some(old) = ch.old {
                self.routes[old].children.remove(&receiver);
            }
            self.routes[ch.new].children.insert(receiver);
            true
        } else {
            false
        }
    }

    pub fn advert(&self, sender: NodeId) -> SynchAdvert {
        SynchAdvert {
            sender,
            sender_cost: self.routes[sender].my_cost,
            sender_children: self.routes[sender].children.len(),
        }
    }
}

/// Runs Synch/Routing rounds until `quiet_rounds` consecutive rounds change
/// nothing. `delivered(sender, receiver)` decides each reception.
pub fn build_tree<F>(
    tables: Vec<NeighborTable>,
    max_children: usize,
    rng: &mut RandomStream,
    quiet_rounds: usize,
    mut delivered: F,
) -> RoutingTree
where
    F: FnMut(NodeId, NodeId, &mut RandomStream) -> bool,
{
    let n = tables.len();
    let mut tree = RoutingTree {
        routes: (0..n).map(|i| RouteState::new(i, max_children)).collect(),
        tables,
        rounds: 0,
    };
    let mut order: Vec<NodeId> = (0..n).collect();
    let mut quiet = 0;
    let max_rounds = 4 * n + 10;
    while quiet < quiet_rounds && tree.rounds < max_rounds {
        tree.rounds += 1;
        order.shuffle(rng);
        let mut changed = false;
        for &sender in &order {
            if !tree.routes[sender].my_cost.is_finite() {
                continue;
            }
            let advert = tree.advert(sender);
            let listeners: Vec<NodeId> = tree.tables[sender].entries.keys().copied().collect();
            for rx in listeners {
                if delivered(sender, rx, rng) {
                    changed |= tree.deliver_advert(rx, advert);
                }
            }
        }
        quiet = if changed { 0 } else { quiet + 1 };
    }
    tree
}
