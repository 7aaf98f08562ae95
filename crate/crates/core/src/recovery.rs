//! Link-layer error recovery inside a Sleep/Communication budget.
//!
//! Two procedures are modelled. Stop-and-wait ARQ acknowledges every data
//! packet and retransmits after a timeout. Seda sends one long frame of
//! blocks without acknowledgments; the receiver answers with a recovery
//! frame naming the corrupted blocks and only those are resent.
//!
//! Both exist as closed-form capacity expressions and as step-driven
//! sessions. The sessions are driven either by [`drive`] over a
//! [`FrameChannel`] or by the network simulator, which supplies outcomes
//! from the shared medium.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::RandomStream;
use crate::error::{Error, Result};
use crate::packet::{DataPacket, PacketKind};

/// Analytic and protocol parameters. Lengths are bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryParams {
    pub payload_len: usize,
    pub hdr_len: usize,
    pub block_overhead: usize,
    pub ack_len: usize,
    pub radio_speed: f64,
    pub recovery_frame_overhead: usize,
    /// Fixed per-frame processing term, seconds.
    pub gamma: f64,
    pub tx_buffer: usize,
    pub rx_buffer: usize,
    /// Retransmissions allowed per packet or block.
    pub retry_cap: u32,
    /// Radio turnaround between frames, seconds.
    pub turnaround: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            payload_len: 29,
            hdr_len: 16,
            block_overhead: 2,
            ack_len: 23,
            radio_speed: 19_200.0,
            recovery_frame_overhead: 5,
            gamma: 0.0,
            tx_buffer: 128,
            rx_buffer: 128,
            retry_cap: 1,
            turnaround: 0.002,
        }
    }
}

impl RecoveryParams {
    pub fn pkt_len(&self) -> usize {
        self.payload_len + self.hdr_len
    }

    pub fn block_len(&self) -> usize {
        self.payload_len + self.block_overhead
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        8.0 * bytes as f64 / self.radio_speed
    }

    pub fn recovery_frame_len(&self, corrupted: usize) -> usize {
        self.hdr_len + self.recovery_frame_overhead + corrupted
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radio_speed > 0.0) {
            return Err(Error::config("recovery.radio_speed", "must be > 0"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config("recovery.gamma", "must be >= 0"));
        }
        if !(self.turnaround >= 0.0) {
            return Err(Error::config("recovery.turnaround", "must be >= 0"));
        }
        if self.payload_len == 0 {
            return Err(Error::config("recovery.payload_len", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryScheme {
    #[default]
    Arq,
    Seda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentionMode {
    /// `C(w,n) * n * w^-n`, the expression as published.
    Printed,
    /// Probability that all `n` uniform choices are distinct,
    /// `C(w,n) * n! * w^-n`.
    DistinctSlot,
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Probability that the RTSs of `n` mutually hidden children all reach
/// their parent when each picks one of `w` contention slots.
pub fn rts_success_prob(n: u32, w: u32, mode: ContentionMode) -> Result<f64> {
    if n < 1 || w < 1 {
        return Err(Error::domain(format!(
            "need n >= 1 and w >= 1, got n={n}, w={w}"
        )));
    }
    if n > w {
        return Ok(0.0);
    }
    let base = binomial(u64::from(w), u64::from(n)) * (1.0 / f64::from(w)).powi(n as i32);
    let factor = match mode {
        ContentionMode::Printed => f64::from(n),
        ContentionMode::DistinctSlot => (1..=n).map(f64::from).product(),
    };
    Ok((base * factor).clamp(0.0, 1.0))
}

fn check_capacity_domain(d_s: f64, ber: f64, params: &RecoveryParams) -> Result<()> {
    if !(0.0..1.0).contains(&ber) {
        return Err(Error::domain(format!("ber must lie in [0, 1), got {ber}")));
    }
    if !(d_s > params.gamma) {
        return Err(Error::domain(format!(
            "d_s ({d_s}) must exceed gamma ({})",
            params.gamma
        )));
    }
    Ok(())
}

/// Largest MPF with
/// `(L_P + L_ack)/S_R * MPF * (2 - (1-BER)^L_P) + gamma <= D_S`, lengths in bits.
pub fn arq_capacity(d_s: f64, ber: f64, params: &RecoveryParams) -> Result<u32> {
    check_capacity_domain(d_s, ber, params)?;
    let lp = 8.0 * params.pkt_len() as f64;
    let lack = 8.0 * params.ack_len as f64;
    let factor = 2.0 - (1.0 - ber).powf(lp);
    let per_packet = (lp + lack) / params.radio_speed * factor;
    let mpf = ((d_s - params.gamma) / per_packet + 1e-9).floor();
    Ok(mpf.max(0.0) as u32)
}

/// Expected airtime of a Seda frame of `mpf` blocks plus one recovery round.
pub fn seda_frame_time(mpf: u32, ber: f64, params: &RecoveryParams) -> f64 {
    let sr = params.radio_speed;
    let hdr = 8.0 * params.hdr_len as f64;
    let lb = 8.0 * params.block_len() as f64;
    let rf = 8.0 * params.recovery_frame_overhead as f64;
    let m = f64::from(mpf);
    let p_any = 1.0 - (1.0 - ber).powf(lb * m);
    let e_corrupt = m * (1.0 - (1.0 - ber).powf(lb));
    hdr / sr + m * lb / sr + p_any * (rf / sr + hdr / sr + e_corrupt * lb / sr) + params.gamma
}

/// Largest MPF whose [`seda_frame_time`] fits in `d_s`.
pub fn seda_capacity(d_s: f64, ber: f64, params: &RecoveryParams) -> Result<u32> {
    check_capacity_domain(d_s, ber, params)?;
    let upper = (d_s * params.radio_speed / (8.0 * params.block_len() as f64)).ceil() as u32 + 1;
    let mut best = 0;
    for m in 1..=upper {
        if seda_frame_time(m, ber, params) <= d_s + 1e-12 {
            best = m;
        } else {
            break;
        }
    }
    Ok(best)
}

/// A transmission a session wants on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRequest {
    pub kind: PacketKind,
    /// Sent by the data receiver (ack, recovery frame) rather than the sender.
    pub from_receiver: bool,
    pub start: f64,
    pub bytes: usize,
    /// Bytes covered by the frame-level check (whole frame unless blocks).
    pub header_bytes: usize,
    pub block_bytes: usize,
    pub blocks: usize,
    /// Payload bytes carried.
    pub payload: usize,
}

/// Reception result for a [`TxRequest`].
#[derive(Debug, Clone, PartialEq)]
pub struct TxOutcome {
    pub header_ok: bool,
    pub blocks_ok: Vec<bool>,
}

impl TxOutcome {
    pub fn whole(ok: bool) -> Self {
        Self {
            header_ok: ok,
            blocks_ok: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferReport {
    /// Packets newly received by the receiver, in arrival order.
    pub delivered: Vec<DataPacket>,
    /// Packets abandoned without ever reaching the receiver.
    pub dropped: Vec<DataPacket>,
    pub residual: VecDeque<DataPacket>,
    pub elapsed: f64,
    pub transmissions: u32,
    pub recovery_frames: u32,
    pub retransmissions: u32,
    /// Last packet id the receiver accepted (duplicate suppression).
    pub last_rx_id: Option<u64>,
}

impl TransferReport {
    pub fn delivered_payload(&self, payload_len: usize) -> usize {
        self.delivered.len() * payload_len
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ArqPhase {
    Ready,
    AwaitData,
    AwaitAck,
    Done,
}

/// Stop-and-wait ARQ: one packet in flight, ack timeout of ack airtime plus
/// turnaround, `retry_cap` retransmissions per packet.
#[derive(Debug, Clone)]
pub struct ArqSession {
    params: RecoveryParams,
    queue: VecDeque<DataPacket>,
    start: f64,
    clock: f64,
    end: f64,
    last_end: f64,
    attempts: u32,
    head_received: bool,
    phase: ArqPhase,
    report: TransferReport,
}

impl ArqSession {
    pub fn new(
        queue: VecDeque<DataPacket>,
        start: f64,
        budget: f64,
        last_rx_id: Option<u64>,
        params: RecoveryParams,
    ) -> Self {
        let head_received =
            matches!((queue.front(), last_rx_id), (Some(p), Some(id)) if p.id == id);
        Self {
            params,
            queue,
            start,
            clock: start,
            end: start + budget.max(0.0),
            last_end: start,
            attempts: 0,
            head_received,
            phase: ArqPhase::Ready,
            report: TransferReport {
                last_rx_id,
                ..TransferReport::default()
            },
        }
    }

    fn t_data(&self) -> f64 {
        self.params.airtime(self.params.pkt_len())
    }

    fn t_ack(&self) -> f64 {
        self.params.airtime(self.params.ack_len)
    }

    pub fn next_tx(&mut self) -> Option<TxRequest> {
        match self.phase {
            ArqPhase::Ready => {
                let head = self.queue.front()?;
                if self.clock + self.t_data() + self.t_ack() > self.end + 1e-12 {
                    self.phase = ArqPhase::Done;
                    return None;
                }
                let _ = head;
                self.phase = ArqPhase::AwaitData;
                self.report.transmissions += 1;
                if self.attempts > 0 {
                    self.report.retransmissions += 1;
                }
                Some(TxRequest {
                    kind: PacketKind::Data,
                    from_receiver: false,
                    start: self.clock,
                    bytes: self.params.pkt_len(),
                    header_bytes: self.params.pkt_len(),
                    block_bytes: 0,
                    blocks: 0,
                    payload: self.params.payload_len,
                })
            }
            ArqPhase::AwaitAck => Some(TxRequest {
                kind: PacketKind::Ack,
                from_receiver: true,
                start: self.clock,
                bytes: self.params.ack_len,
                header_bytes: self.params.ack_len,
                block_bytes: 0,
                blocks: 0,
                payload: 0,
            }),
            ArqPhase::AwaitData | ArqPhase::Done => None,
        }
    }

    fn failed_attempt(&mut self) {
        self.attempts += 1;
        if self.attempts > self.params.retry_cap {
            let p = self.queue.pop_front().expect("head in flight");
            if !self.head_received {
                self.report.dropped.push(p);
            }
            self.attempts = 0;
            self.head_received = false;
        }
    }

    pub fn report(&mut self, outcome: TxOutcome) {
        match self.phase {
            ArqPhase::AwaitData => {
                self.clock += self.t_data();
                self.last_end = self.clock;
                if outcome.header_ok {
                    let head = *self.queue.front().expect("head in flight");
                    if self.report.last_rx_id != Some(head.id) {
                        self.report.delivered.push(head);
                        self.report.last_rx_id = Some(head.id);
                    }
                    self.head_received = true;
                    self.phase = ArqPhase::AwaitAck;
                } else {
                    // timeout
                    self.clock += self.t_ack() + self.params.turnaround;
                    self.last_end = self.clock;
                    self.failed_attempt();
                    self.phase = ArqPhase::Ready;
                }
            }
            ArqPhase::AwaitAck => {
                self.clock += self.t_ack();
                self.last_end = self.clock;
                if outcome.header_ok {
                    self.queue.pop_front();
                    self.attempts = 0;
                    self.head_received = false;
                } else {
                    self.last_end = self.clock + self.params.turnaround;
                    self.failed_attempt();
                }
                self.clock += self.params.turnaround;
                self.phase = ArqPhase::Ready;
            }
            _ => panic!("outcome reported with nothing in flight"),
        }
    }

    /// Packets the receiver has accepted so far.
    pub fn delivered(&self) -> &[DataPacket] {
        &self.report.delivered
    }

    pub fn finish(mut self) -> TransferReport {
        // a timeout still pending at the end of the slot is cut short
        self.report.elapsed = self.last_end.min(self.end) - self.start;
        self.report.residual = self.queue;
        self.report
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SedaPhase {
    Ready,
    /// Data frame on air; `retry` marks a retransmission frame.
    AwaitFrame {
        retry: bool,
    },
    /// Retransmission of `sent_idx` is due.
    Resend,
    AwaitRecovery,
    Done,
}

/// Seda block recovery. The first `in_frame` queue entries are the blocks of
/// the current data frame; `pending` lists indices (into those) not yet
/// received.
#[derive(Debug, Clone)]
pub struct SedaSession {
    params: RecoveryParams,
    queue: VecDeque<DataPacket>,
    start: f64,
    clock: f64,
    end: f64,
    last_end: f64,
    in_frame: usize,
    received: Vec<bool>,
    sent_idx: Vec<usize>,
    tries: Vec<u32>,
    rounds: u32,
    ber_hint: f64,
    phase: SedaPhase,
    report: TransferReport,
}

impl SedaSession {
    pub fn new(
        queue: VecDeque<DataPacket>,
        start: f64,
        budget: f64,
        params: RecoveryParams,
    ) -> Self {
        Self {
            params,
            queue,
            start,
            clock: start,
            end: start + budget.max(0.0),
            last_end: start,
            in_frame: 0,
            received: Vec::new(),
            sent_idx: Vec::new(),
            tries: Vec::new(),
            rounds: 0,
            ber_hint: 0.0,
            phase: SedaPhase::Ready,
            report: TransferReport::default(),
        }
    }

    /// Bit error rate the sender assumes when sizing a frame, so that the
    /// expected recovery round still fits the budget.
    pub fn with_ber_hint(mut self, ber: f64) -> Self {
        self.ber_hint = ber.clamp(0.0, 0.999_999);
        self
    }

    fn frame_request(&mut self, blocks: usize) -> TxRequest {
        self.report.transmissions += 1;
        for &i in &self.sent_idx {
            self.tries[i] += 1;
        }
        let lb = self.params.block_len();
        TxRequest {
            kind: PacketKind::SedaBlock,
            from_receiver: false,
            start: self.clock,
            bytes: self.params.hdr_len + blocks * lb,
            header_bytes: self.params.hdr_len,
            block_bytes: lb,
            blocks,
            payload: blocks * self.params.payload_len,
        }
    }

    fn remaining(&self) -> f64 {
        self.end - self.clock
    }

    /// Settles the current frame: received blocks leave the queue, missing
    /// blocks that used up their retries are dropped, the rest stay queued.
    fn settle(&mut self) {
        let blocks: Vec<DataPacket> = self.queue.drain(..self.in_frame).collect();
        let mut keep = VecDeque::new();
        for (i, p) in blocks.into_iter().enumerate() {
            if self.received[i] {
                continue;
            }
            if self.tries[i] > self.params.retry_cap {
                self.report.dropped.push(p);
            } else {
                keep.push_back(p);
            }
        }
        // unsent leftovers go back to the head, preserving order
        while let Some(p) = keep.pop_back() {
            self.queue.push_front(p);
        }
        self.in_frame = 0;
        self.received.clear();
        self.sent_idx.clear();
        self.tries.clear();
        self.rounds = 0;
    }

    fn missing(&self) -> Vec<usize> {
        (0..self.in_frame).filter(|&i| !self.received[i]).collect()
    }

    pub fn next_tx(&mut self) -> Option<TxRequest> {
        match self.phase.clone() {
            SedaPhase::Ready => {
                if self.queue.is_empty() {
                    self.phase = SedaPhase::Done;
                    return None;
                }
                // room for a worst-case recovery frame naming every block
                let reserve =
                    self.params.airtime(self.params.recovery_frame_len(0)) + self.params.turnaround;
                let room = self.remaining() - reserve - self.params.airtime(self.params.hdr_len);
                let per_block = self.params.airtime(self.params.block_len() + 1);
                let fit = (room / per_block + 1e-9).floor().max(0.0) as u32;
                let mut n = fit;
                while n > 0 && seda_frame_time(n, self.ber_hint, &self.params) > self.remaining() {
                    n -= 1;
                }
                let n = (n as usize).min(self.queue.len());
                if n == 0 {
                    self.phase = SedaPhase::Done;
                    return None;
                }
                self.in_frame = n;
                self.received = vec![false; n];
                self.sent_idx = (0..n).collect();
                self.tries = vec![0; n];
                self.phase = SedaPhase::AwaitFrame { retry: false };
                Some(self.frame_request(n))
            }
            SedaPhase::AwaitRecovery => {
                let missing = self.missing().len();
                self.report.recovery_frames += 1;
                let bytes = self.params.recovery_frame_len(missing);
                Some(TxRequest {
                    kind: PacketKind::RecoveryFrame,
                    from_receiver: true,
                    start: self.clock,
                    bytes,
                    header_bytes: bytes,
                    block_bytes: 0,
                    blocks: 0,
                    payload: 0,
                })
            }
            SedaPhase::Resend => {
                self.phase = SedaPhase::AwaitFrame { retry: true };
                Some(self.frame_request(self.sent_idx.len()))
            }
            SedaPhase::AwaitFrame { .. } | SedaPhase::Done => None,
        }
    }

    /// Schedules a retransmission of as many of `idx` as the budget allows.
    /// Returns false when nothing can be resent.
    fn retransmit(&mut self, mut idx: Vec<usize>) -> bool {
        if self.rounds >= self.params.retry_cap {
            return false;
        }
        let p = &self.params;
        let mut fixed = p.airtime(p.hdr_len) + p.turnaround;
        let mut per = p.airtime(p.block_len());
        if self.rounds + 1 < p.retry_cap {
            fixed += p.airtime(p.recovery_frame_len(0)) + p.turnaround;
            per += p.airtime(1);
        }
        let fit = ((self.remaining() - fixed) / per + 1e-9).floor().max(0.0) as usize;
        idx.truncate(fit);
        if idx.is_empty() {
            return false;
        }
        self.rounds += 1;
        self.report.retransmissions += idx.len() as u32;
        self.sent_idx = idx;
        self.phase = SedaPhase::Resend;
        true
    }

    pub fn report(&mut self, outcome: TxOutcome) {
        match self.phase.clone() {
            SedaPhase::AwaitFrame { retry } => {
                let bytes = self.params.hdr_len + self.sent_idx.len() * self.params.block_len();
                self.clock += self.params.airtime(bytes);
                self.last_end = self.clock;
                // blocks carry their own sequence number and checksum, so a
                // damaged frame header alone does not void them
                let recognised = outcome.header_ok || outcome.blocks_ok.iter().any(|&b| b);
                if recognised {
                    for (k, &i) in self.sent_idx.iter().enumerate() {
                        if outcome.blocks_ok.get(k).copied().unwrap_or(false) && !self.received[i] {
                            self.received[i] = true;
                            self.report.delivered.push(self.queue[i]);
                        }
                    }
                }
                let missing = self.missing();
                if missing.is_empty() {
                    // silence means the frame is clean
                    self.clock += self.params.turnaround;
                    self.last_end = self.clock;
                    self.settle();
                    self.phase = SedaPhase::Ready;
                } else if !recognised {
                    // frame never recognised: no recovery frame comes back
                    self.clock += self.params.turnaround;
                    if !(retry && self.rounds >= self.params.retry_cap) {
                        self.clock += self.params.airtime(self.params.recovery_frame_len(0));
                    }
                    self.last_end = self.clock;
                    let all = if retry {
                        self.sent_idx.clone()
                    } else {
                        (0..self.in_frame).collect()
                    };
                    if !self.retransmit(all) {
                        self.settle();
                        self.phase = SedaPhase::Ready;
                    }
                } else if retry && self.rounds >= self.params.retry_cap {
                    self.clock += self.params.turnaround;
                    self.last_end = self.clock;
                    self.settle();
                    self.phase = SedaPhase::Ready;
                } else {
                    self.clock += self.params.turnaround;
                    self.phase = SedaPhase::AwaitRecovery;
                }
            }
            SedaPhase::AwaitRecovery => {
                let missing = self.missing();
                self.clock += self
                    .params
                    .airtime(self.params.recovery_frame_len(missing.len()));
                self.last_end = self.clock;
                self.clock += self.params.turnaround;
                let resend = if outcome.header_ok {
                    missing
                } else {
                    // lost recovery frame: resend the whole last frame
                    self.sent_idx.clone()
                };
                if !self.retransmit(resend) {
                    self.settle();
                    self.phase = SedaPhase::Ready;
                }
            }
            _ => panic!("outcome reported with nothing in flight"),
        }
    }

    pub fn delivered(&self) -> &[DataPacket] {
        &self.report.delivered
    }

    pub fn finish(mut self) -> TransferReport {
        if self.in_frame > 0 {
            self.settle();
        }
        self.report.elapsed = self.last_end - self.start;
        self.report.residual = self.queue;
        self.report
    }
}

/// Either session behind one interface.
#[derive(Debug, Clone)]
pub enum Session {
    Arq(ArqSession),
    Seda(SedaSession),
}

impl Session {
    pub fn new(
        scheme: RecoveryScheme,
        queue: VecDeque<DataPacket>,
        start: f64,
        budget: f64,
        last_rx_id: Option<u64>,
        params: RecoveryParams,
    ) -> Self {
        match scheme {
            RecoveryScheme::Arq => {
                Session::Arq(ArqSession::new(queue, start, budget, last_rx_id, params))
            }
            RecoveryScheme::Seda => Session::Seda(SedaSession::new(queue, start, budget, params)),
        }
    }

    pub fn with_ber_hint(self, ber: f64) -> Self {
        match self {
            Session::Seda(s) => Session::Seda(s.with_ber_hint(ber)),
            other => other,
        }
    }

    pub fn next_tx(&mut self) -> Option<TxRequest> {
        match self {
            Session::Arq(s) => s.next_tx(),
            Session::Seda(s) => s.next_tx(),
        }
    }

    pub fn report(&mut self, outcome: TxOutcome) {
        match self {
            Session::Arq(s) => s.report(outcome),
            Session::Seda(s) => s.report(outcome),
        }
    }

    pub fn delivered(&self) -> &[DataPacket] {
        match self {
            Session::Arq(s) => s.delivered(),
            Session::Seda(s) => s.delivered(),
        }
    }

    pub fn finish(self) -> TransferReport {
        match self {
            Session::Arq(s) => s.finish(),
            Session::Seda(s) => s.finish(),
        }
    }
}

/// Decides frame and block receptions for a point-to-point transfer.
pub trait FrameChannel {
    fn outcome(&mut self, req: &TxRequest) -> TxOutcome;

    /// Bit error rate a sender may assume for this link.
    fn ber_hint(&self) -> f64 {
        0.0
    }
}

/// Independent bit errors at a fixed rate.
pub struct BerChannel {
    pub ber: f64,
    pub rng: RandomStream,
}

impl BerChannel {
    fn ok(&mut self, bytes: usize) -> bool {
        if bytes == 0 {
            return true;
        }
        let p = (1.0 - self.ber).powf(8.0 * bytes as f64);
        self.rng.gen::<f64>() < p
    }
}

impl FrameChannel for BerChannel {
    fn outcome(&mut self, req: &TxRequest) -> TxOutcome {
        let header_ok = self.ok(req.header_bytes);
        let blocks_ok = (0..req.blocks).map(|_| self.ok(req.block_bytes)).collect();
        TxOutcome {
            header_ok,
            blocks_ok,
        }
    }

    fn ber_hint(&self) -> f64 {
        self.ber
    }
}

/// Runs a session to completion over `channel`.
pub fn drive<C: FrameChannel>(mut session: Session, channel: &mut C) -> TransferReport {
    while let Some(req) = session.next_tx() {
        let out = channel.outcome(&req);
        session.report(out);
    }
    session.finish()
}

pub fn arq_transfer<C: FrameChannel>(
    queue: VecDeque<DataPacket>,
    channel: &mut C,
    budget: f64,
    params: &RecoveryParams,
) -> TransferReport {
    drive(
        Session::new(
            RecoveryScheme::Arq,
            queue,
            0.0,
            budget,
            None,
            params.clone(),
        ),
        channel,
    )
}

pub fn seda_transfer<C: FrameChannel>(
    queue: VecDeque<DataPacket>,
    channel: &mut C,
    budget: f64,
    params: &RecoveryParams,
) -> TransferReport {
    let hint = channel.ber_hint();
    let session = Session::new(
        RecoveryScheme::Seda,
        queue,
        0.0,
        budget,
        None,
        params.clone(),
    )
    .with_ber_hint(hint);
    drive(session, channel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_stream;

    fn packets(n: usize) -> VecDeque<DataPacket> {
        (0..n as u64)
            .map(|id| DataPacket {
                id,
                origin: 1,
                born_at: 0.0,
                hops: 0,
            })
            .collect()
    }

    /// Scripted outcomes: `frames` answers header checks in order, `blocks`
    /// answers block checks in order; both default to success when exhausted.
    struct Script {
        frames: VecDeque<bool>,
        blocks: VecDeque<bool>,
        log: Vec<PacketKind>,
    }

    impl FrameChannel for Script {
        fn outcome(&mut self, req: &TxRequest) -> TxOutcome {
            self.log.push(req.kind);
            let header_ok = self.frames.pop_front().unwrap_or(true);
            let blocks_ok = (0..req.blocks)
                .map(|_| self.blocks.pop_front().unwrap_or(true))
                .collect();
            TxOutcome {
                header_ok,
                blocks_ok,
            }
        }
    }

    fn perfect() -> Script {
        Script {
            frames: VecDeque::new(),
            blocks: VecDeque::new(),
            log: Vec::new(),
        }
    }

    /// Brute-force enumeration of slot assignments.
    fn enumerate(n: u32, w: u32) -> (f64, f64) {
        let total = (w as u64).pow(n);
        let mut distinct = 0u64;
        let mut exactly_printed = 0.0;
        for code in 0..total {
            let mut c = code;
            let mut seen = vec![false; w as usize];
            let mut ok = true;
            for _ in 0..n {
                let s = (c % w as u64) as usize;
                c /= w as u64;
                if seen[s] {
                    ok = false;
                }
                seen[s] = true;
            }
            if ok {
                distinct += 1;
            }
        }
        // the published expression evaluated directly
        let mut binom = 1.0;
        for i in 0..n {
            binom = binom * (w - i) as f64 / (i + 1) as f64;
        }
        exactly_printed += binom * n as f64 / (w as f64).powi(n as i32);
        (distinct as f64 / total as f64, exactly_printed)
    }

    #[test]
    fn contention_probability_matches_enumeration() {
        for w in 1..=6 {
            for n in 1..=w {
                let (distinct, printed) = enumerate(n, w);
                let got_d = rts_success_prob(n, w, ContentionMode::DistinctSlot).unwrap();
                let got_p = rts_success_prob(n, w, ContentionMode::Printed).unwrap();
                assert!((got_d - distinct).abs() < 1e-12, "n={n} w={w}");
                assert!((got_p - printed.clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
        assert_eq!(
            rts_success_prob(1, 5, ContentionMode::Printed).unwrap(),
            1.0
        );
        assert_eq!(
            rts_success_prob(1, 5, ContentionMode::DistinctSlot).unwrap(),
            1.0
        );
        assert!((rts_success_prob(2, 4, ContentionMode::Printed).unwrap() - 0.75).abs() < 1e-12);
        assert!(
            (rts_success_prob(2, 4, ContentionMode::DistinctSlot).unwrap() - 0.75).abs() < 1e-12
        );
        assert!((rts_success_prob(3, 4, ContentionMode::Printed).unwrap() - 0.1875).abs() < 1e-12);
        assert!(
            (rts_success_prob(3, 4, ContentionMode::DistinctSlot).unwrap() - 0.375).abs() < 1e-12
        );
        assert_eq!(
            rts_success_prob(5, 4, ContentionMode::DistinctSlot).unwrap(),
            0.0
        );
        assert!(rts_success_prob(0, 4, ContentionMode::Printed).is_err());
        assert!(rts_success_prob(1, 0, ContentionMode::Printed).is_err());
    }

    #[test]
    fn distinct_mode_matches_monte_carlo() {
        let mut rng = rng_stream(11, "eq1-oracle");
        let trials = 1_000_000u32;
        for (n, w) in [(2u32, 3u32), (3, 8), (5, 8), (8, 8)] {
            let mut ok = 0u32;
            for _ in 0..trials {
                let mut mask = 0u32;
                let mut distinct = true;
                for _ in 0..n {
                    let s = rng.gen_range(0..w);
                    if mask & (1 << s) != 0 {
                        distinct = false;
                    }
                    mask |= 1 << s;
                }
                ok += u32::from(distinct);
            }
            let est = f64::from(ok) / f64::from(trials);
            let p = rts_success_prob(n, w, ContentionMode::DistinctSlot).unwrap();
            let se = (p * (1.0 - p) / f64::from(trials)).sqrt();
            assert!(
                (est - p).abs() <= 3.0 * se + 1e-12,
                "n={n} w={w}: {est} vs {p}"
            );
        }
    }

    #[test]
    fn arq_capacity_values() {
        let p = RecoveryParams::default();
        assert_eq!(arq_capacity(1.0, 0.0, &p).unwrap(), 35);
        assert_eq!(arq_capacity(1.0, 1e-3, &p).unwrap(), 27);
        assert_eq!(arq_capacity(1.0, 1.0 - 1e-12, &p).unwrap(), 17);
        assert_eq!(arq_capacity(0.01, 0.0, &p).unwrap(), 0);
        assert!(arq_capacity(1.0, 1.0, &p).is_err());
        assert!(arq_capacity(0.0, 0.0, &p).is_err());
    }

    #[test]
    fn seda_capacity_values_and_ordering() {
        let p = RecoveryParams::default();
        assert_eq!(seda_capacity(1.0, 0.0, &p).unwrap(), 76);
        let mut ber = 1e-5;
        while ber <= 1e-2 + 1e-15 {
            let a = arq_capacity(1.0, ber, &p).unwrap();
            let s = seda_capacity(1.0, ber, &p).unwrap();
            assert!(s >= a, "ber {ber}: seda {s} < arq {a}");
            ber *= 10f64.powf(0.25);
        }
    }

    #[test]
    fn seda_capacity_saturates() {
        let p = RecoveryParams::default();
        let a = seda_capacity(1.0, 0.5, &p).unwrap();
        let b = seda_capacity(1.0, 0.9, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            arq_capacity(1.0, 0.5, &p).unwrap(),
            arq_capacity(1.0, 0.9, &p).unwrap()
        );
    }

    proptest::proptest! {
        #[test]
        fn capacities_monotone(d in 0.1f64..20.0, dd in 0.0f64..5.0, ber in 0.0f64..0.05, db in 0.0f64..0.05) {
            let p = RecoveryParams::default();
            let b2 = (ber + db).min(0.999);
            proptest::prop_assert!(arq_capacity(d, b2, &p).unwrap() <= arq_capacity(d, ber, &p).unwrap());
            proptest::prop_assert!(seda_capacity(d, b2, &p).unwrap() <= seda_capacity(d, ber, &p).unwrap());
            proptest::prop_assert!(arq_capacity(d + dd, ber, &p).unwrap() >= arq_capacity(d, ber, &p).unwrap());
            proptest::prop_assert!(seda_capacity(d + dd, ber, &p).unwrap() >= seda_capacity(d, ber, &p).unwrap());
        }
    }

    #[test]
    fn arq_perfect_channel_timeline() {
        let p = RecoveryParams::default();
        let r = arq_transfer(packets(5), &mut perfect(), 10.0, &p);
        assert_eq!(r.delivered.len(), 5);
        let expect = 5.0 * (p.airtime(45) + p.airtime(23)) + 4.0 * p.turnaround;
        assert!(
            (r.elapsed - expect).abs() < 1e-12,
            "{} vs {expect}",
            r.elapsed
        );
        assert!(r.residual.is_empty());
    }

    #[test]
    fn arq_zero_budget_and_dead_channel() {
        let p = RecoveryParams::default();
        let r = arq_transfer(packets(3), &mut perfect(), 0.0, &p);
        assert_eq!(r.transmissions, 0);
        assert_eq!(r.residual.len(), 3);
        let mut dead = Script {
            frames: std::iter::repeat(false).take(1000).collect(),
            blocks: VecDeque::new(),
            log: Vec::new(),
        };
        let r = arq_transfer(packets(3), &mut dead, 10.0, &p);
        assert!(r.delivered.is_empty());
        assert_eq!(r.transmissions, 3 * (p.retry_cap + 1));
        assert_eq!(r.dropped.len(), 3);
    }

    #[test]
    fn arq_lost_ack_is_not_double_counted() {
        let p = RecoveryParams::default();
        // data ok, ack lost, data ok again, ack ok
        let mut s = Script {
            frames: VecDeque::from(vec![true, false, true, true]),
            blocks: VecDeque::new(),
            log: Vec::new(),
        };
        let r = arq_transfer(packets(1), &mut s, 10.0, &p);
        assert_eq!(r.delivered.len(), 1);
        assert_eq!(r.retransmissions, 1);
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn seda_perfect_channel() {
        let p = RecoveryParams::default();
        let mut ch = perfect();
        let r = seda_transfer(packets(10), &mut ch, 10.0, &p);
        assert_eq!(r.delivered.len(), 10);
        assert_eq!(r.recovery_frames, 0);
        assert!(!ch.log.contains(&PacketKind::RecoveryFrame));
    }

    #[test]
    fn seda_one_corrupted_block() {
        let p = RecoveryParams::default();
        let mut ch = Script {
            frames: VecDeque::new(),
            blocks: VecDeque::from(vec![true, true, false, true]),
            log: Vec::new(),
        };
        let r = seda_transfer(packets(4), &mut ch, 10.0, &p);
        assert_eq!(r.recovery_frames, 1);
        assert_eq!(r.retransmissions, 1);
        assert_eq!(r.delivered.len(), 4);
        assert_eq!(
            ch.log,
            vec![
                PacketKind::SedaBlock,
                PacketKind::RecoveryFrame,
                PacketKind::SedaBlock
            ]
        );
        // the retransmitted block arrives last
        assert_eq!(r.delivered.last().unwrap().id, 2);
    }

    #[test]
    fn seda_lost_recovery_frame_resends_whole_frame() {
        let p = RecoveryParams::default();
        let mut ch = Script {
            frames: VecDeque::from(vec![true, false, true]),
            blocks: VecDeque::from(vec![true, false, true]),
            log: Vec::new(),
        };
        let r = seda_transfer(packets(3), &mut ch, 10.0, &p);
        assert_eq!(r.retransmissions, 3);
        assert_eq!(r.delivered.len(), 3);
    }

    #[test]
    fn conservation_under_random_errors() {
        let p = RecoveryParams::default();
        for scheme in [RecoveryScheme::Arq, RecoveryScheme::Seda] {
            let mut ch = BerChannel {
                ber: 3e-3,
                rng: rng_stream(5, "conservation"),
            };
            let r = drive(
                Session::new(scheme, packets(200), 0.0, 1.0, None, p.clone()),
                &mut ch,
            );
            assert_eq!(
                r.delivered.len() + r.dropped.len() + r.residual.len(),
                200,
                "{scheme:?}"
            );
            assert!(r.elapsed <= 1.0 + 1e-9);
        }
    }
}
