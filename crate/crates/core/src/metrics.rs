//! Run metrics: colliding sets, latency, throughput, queue occupancy.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::channel::NodeId;

/// A data-bearing transmission, as logged for the colliding-set metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataTx {
    pub frame: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub start: f64,
    pub end: f64,
}

/// Colliding sets keyed by `(frame, receiver)`.
pub type CollidingSets = BTreeMap<(u64, NodeId), BTreeSet<NodeId>>;

/// Members of the colliding set of the reception `rx`: nodes in range of the
/// receiver whose data transmissions overlap it, other than the sender and
/// the receiver itself.
pub fn colliding_members<'a, I>(rx: &DataTx, others: I, in_range: &[Vec<bool>]) -> BTreeSet<NodeId>
where
    I: IntoIterator<Item = &'a DataTx>,
{
    others
        .into_iter()
        .filter(|o| {
            o.src != rx.src
                && o.src != rx.dst
                && in_range[o.src][rx.dst]
                && o.start < rx.end
                && o.end > rx.start
        })
        .map(|o| o.src)
        .collect()
}

/// Brute-force colliding sets over a whole transmission log. `receptions`
/// lists the transmissions whose receiver was listening.
pub fn colliding_sets_offline(
    log: &[DataTx],
    receptions: &[DataTx],
    in_range: &[Vec<bool>],
) -> CollidingSets {
    let mut out = CollidingSets::new();
    for rx in receptions {
        let members = colliding_members(rx, log.iter(), in_range);
        out.entry((rx.frame, rx.dst)).or_default().extend(members);
    }
    out
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard error of the mean.
pub fn std_error(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Accumulates time-weighted queue length per node.
#[derive(Debug, Clone, Default)]
pub struct QueueTracker {
    len: Vec<usize>,
    since: Vec<f64>,
    integral: Vec<f64>,
    start: f64,
}

impl QueueTracker {
    pub fn new(nodes: usize, start: f64) -> Self {
        Self {
            len: vec![0; nodes],
            since: vec![start; nodes],
            integral: vec![0.0; nodes],
            start,
        }
    }

    pub fn set(&mut self, node: NodeId, now: f64, len: usize) {
        self.integral[node] += self.len[node] as f64 * (now - self.since[node]);
        self.since[node] = now;
        self.len[node] = len;
    }

    /// Time-weighted mean over `[start, now]` for each node.
    pub fn means(&self, now: f64) -> Vec<f64> {
        let span = (now - self.start).max(1e-12);
        (0..self.len.len())
            .map(|i| (self.integral[i] + self.len[i] as f64 * (now - self.since[i])) / span)
            .collect()
    }
}

/// Everything a run records.
#[derive(Debug, Clone, Default)]
pub struct MetricsLedger {
    pub frames: u64,
    /// Summed colliding-set size per frame.
    pub cs_per_frame: Vec<usize>,
    /// Nodes that put data on the air, per frame.
    pub senders_per_frame: Vec<usize>,
    pub interferer_distances: Vec<f64>,
    pub latencies: Vec<f64>,
    /// Sink arrival time of each delivered packet.
    pub delivered_at: Vec<f64>,
    pub delivered_packets: u64,
    pub delivered_payload: u64,
    pub generated: u64,
    pub dropped: u64,
    pub deactivations: u64,
    pub role_violations: u64,
    pub nav_violations: u64,
    pub data_receptions: u64,
    /// Online colliding sets, kept only when logging is on.
    pub cs_sets: Option<CollidingSets>,
    pub data_log: Option<Vec<DataTx>>,
    pub reception_log: Option<Vec<DataTx>>,
}

impl MetricsLedger {
    pub fn with_logs(logs: bool) -> Self {
        Self {
            cs_sets: logs.then(CollidingSets::new),
            data_log: logs.then(Vec::new),
            reception_log: logs.then(Vec::new),
            ..Self::default()
        }
    }

    pub fn mean_cs_sum(&self) -> f64 {
        if self.cs_per_frame.is_empty() {
            return 0.0;
        }
        self.cs_per_frame.iter().sum::<usize>() as f64 / self.cs_per_frame.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(frame: u64, src: NodeId, dst: NodeId, start: f64, end: f64) -> DataTx {
        DataTx {
            frame,
            src,
            dst,
            start,
            end,
        }
    }

    #[test]
    fn lone_transmitter_has_empty_set() {
        let range = vec![vec![true; 3]; 3];
        let log = vec![tx(0, 1, 0, 0.0, 1.0)];
        let sets = colliding_sets_offline(&log, &log, &range);
        assert!(sets[&(0, 0)].is_empty());
    }

    #[test]
    fn overlap_and_range_rules() {
        let mut range = vec![vec![true; 5]; 5];
        range[4][0] = false;
        let log = vec![
            tx(0, 1, 0, 0.0, 1.0),
            tx(0, 2, 3, 0.5, 1.5), // overlaps, in range
            tx(0, 4, 3, 0.2, 0.8), // overlaps, out of range of 0
            tx(0, 3, 2, 1.0, 2.0), // touches the end only
        ];
        let sets = colliding_sets_offline(&log, &log[..1], &range);
        assert_eq!(sets[&(0, 0)].iter().copied().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn percentile_and_errors() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&xs, 0.5), Some(2.0));
        assert_eq!(percentile(&xs, 1.0), Some(4.0));
        assert_eq!(mean(&[]), None);
        assert!((std_error(&[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn queue_tracker_time_weights() {
        let mut q = QueueTracker::new(1, 0.0);
        q.set(0, 1.0, 2);
        q.set(0, 3.0, 0);
        assert!((q.means(4.0)[0] - 1.0).abs() < 1e-12);
    }
}
