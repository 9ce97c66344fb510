//! Wire messages exchanged between simulated nodes.
//!
//! Service-plane records (position service, beacons, probes, trust
//! queries) also have fixed-width little-endian encodings so that their
//! layout is stable independent of in-memory representation.

use std::fmt;

use thiserror::Error;

use crate::model::{AuthCode, Certificate, NodeId, Position, PseudoId, SimTime, TrustLevel};

/// Who a message claims to come from: a real id on the service plane, a
/// pseudo-id on the anonymous routing plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenderHandle {
    Node(NodeId),
    Pseudo(PseudoId),
}

impl fmt::Display for SenderHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SenderHandle::Node(n) => write!(f, "{n}"),
            SenderHandle::Pseudo(p) => write!(f, "p:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sent_at: SimTime,
    pub sender: SenderHandle,
    pub payload: Payload,
}

impl Message {
    pub fn new(sent_at: SimTime, sender: SenderHandle, payload: Payload) -> Self {
        Message {
            sent_at,
            sender,
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Beacon,
    Rreq,
    Hrep,
    Cnfm,
    Ack,
    Rrep,
    HelloM1,
    ReplyM2,
    TrustRequest,
    TrustResponse,
    PosUpdate,
    PosRequest,
    PosReply,
    MobilityAlert,
    SybilProbe,
    SybilProbeReply,
    HrepValidation,
    ValidationVerdict,
    Data,
}

impl MessageKind {
    pub const ALL: [MessageKind; 19] = [
        MessageKind::Beacon,
        MessageKind::Rreq,
        MessageKind::Hrep,
        MessageKind::Cnfm,
        MessageKind::Ack,
        MessageKind::Rrep,
        MessageKind::HelloM1,
        MessageKind::ReplyM2,
        MessageKind::TrustRequest,
        MessageKind::TrustResponse,
        MessageKind::PosUpdate,
        MessageKind::PosRequest,
        MessageKind::PosReply,
        MessageKind::MobilityAlert,
        MessageKind::SybilProbe,
        MessageKind::SybilProbeReply,
        MessageKind::HrepValidation,
        MessageKind::ValidationVerdict,
        MessageKind::Data,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MessageKind::Beacon => "beacon",
            MessageKind::Rreq => "rreq",
            MessageKind::Hrep => "hrep",
            MessageKind::Cnfm => "cnfm",
            MessageKind::Ack => "ack",
            MessageKind::Rrep => "rrep",
            MessageKind::HelloM1 => "hello_m1",
            MessageKind::ReplyM2 => "reply_m2",
            MessageKind::TrustRequest => "trust_request",
            MessageKind::TrustResponse => "trust_response",
            MessageKind::PosUpdate => "pos_update",
            MessageKind::PosRequest => "pos_request",
            MessageKind::PosReply => "pos_reply",
            MessageKind::MobilityAlert => "mobility_alert",
            MessageKind::SybilProbe => "sybil_probe",
            MessageKind::SybilProbeReply => "sybil_probe_reply",
            MessageKind::HrepValidation => "hrep_validation",
            MessageKind::ValidationVerdict => "validation_verdict",
            MessageKind::Data => "data",
        }
    }

    pub fn from_label(s: &str) -> Option<MessageKind> {
        MessageKind::ALL.into_iter().find(|k| k.label() == s)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Beacon(Beacon),
    Rreq(Rreq),
    Hrep(Hrep),
    Cnfm(Cnfm),
    Ack(Ack),
    Rrep(Rrep),
    HelloM1(HelloM1),
    ReplyM2(ReplyM2),
    TrustRequest(TrustQuery),
    TrustResponse(TrustQuery),
    PosUpdate(PosUpdate),
    PosRequest(PosRequest),
    PosReply(PosReply),
    MobilityAlert(MobilityAlert),
    SybilProbe(SybilProbe),
    SybilProbeReply(SybilProbeReply),
    HrepValidation(HrepValidation),
    ValidationVerdict(ValidationVerdict),
    Data(Data),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Beacon(_) => MessageKind::Beacon,
            Payload::Rreq(_) => MessageKind::Rreq,
            Payload::Hrep(_) => MessageKind::Hrep,
            Payload::Cnfm(_) => MessageKind::Cnfm,
            Payload::Ack(_) => MessageKind::Ack,
            Payload::Rrep(_) => MessageKind::Rrep,
            Payload::HelloM1(_) => MessageKind::HelloM1,
            Payload::ReplyM2(_) => MessageKind::ReplyM2,
            Payload::TrustRequest(_) => MessageKind::TrustRequest,
            Payload::TrustResponse(_) => MessageKind::TrustResponse,
            Payload::PosUpdate(_) => MessageKind::PosUpdate,
            Payload::PosRequest(_) => MessageKind::PosRequest,
            Payload::PosReply(_) => MessageKind::PosReply,
            Payload::MobilityAlert(_) => MessageKind::MobilityAlert,
            Payload::SybilProbe(_) => MessageKind::SybilProbe,
            Payload::SybilProbeReply(_) => MessageKind::SybilProbeReply,
            Payload::HrepValidation(_) => MessageKind::HrepValidation,
            Payload::ValidationVerdict(_) => MessageKind::ValidationVerdict,
            Payload::Data(_) => MessageKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beacon {
    pub sender: NodeId,
    pub position: Position,
    pub tusn: u64,
}

/// Route request. `excluded` lists claimed positions the sender refuses
/// as next hop after a validation denial.
#[derive(Debug, Clone, PartialEq)]
pub struct Rreq {
    pub request_id: u64,
    pub dest_pos: Position,
    /// Distance from the current sender to `dest_pos`.
    pub sender_to_dest: f64,
    pub sender_pseudo: PseudoId,
    pub hop_count: u32,
    pub excluded: Vec<Position>,
    /// Only set when real-id source authentication is configured.
    pub source_id: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hrep {
    pub request_id: u64,
    pub receiver_pseudo: PseudoId,
    pub claimed_position: Position,
    pub node_class: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cnfm {
    pub request_id: u64,
    pub sender_pseudo: PseudoId,
    pub receiver_pseudo: PseudoId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ack {
    pub request_id: u64,
    pub receiver_pseudo: PseudoId,
}

/// Route reply travelling the reverse path.
#[derive(Debug, Clone, PartialEq)]
pub struct Rrep {
    pub request_id: u64,
    pub sealed_auth: Vec<u8>,
    pub trust_string: Vec<TrustLevel>,
    /// Hops traversed so far on the reverse path.
    pub hop_count: u32,
    /// Length of the forward route in hops.
    pub route_hops: u32,
    /// Pseudo-ids visited, destination first.
    pub path: Vec<PseudoId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloM1 {
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplyM2 {
    pub certificate: Certificate,
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustQuery {
    pub requester: NodeId,
    pub subject: NodeId,
    pub verdict: bool,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosUpdate {
    pub node: NodeId,
    pub pos: Position,
    pub time: SimTime,
    pub code: AuthCode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosRequest {
    pub requester: NodeId,
    pub target: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosReply {
    pub target: NodeId,
    /// `None` is the negative reply.
    pub record: Option<(Position, SimTime, AuthCode)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityAlert {
    pub request_id: u64,
    pub node: NodeId,
    pub new_pos: Position,
    pub time: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SybilProbe {
    pub probe_id: u64,
    pub target_pos: Position,
    pub deadline: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SybilProbeReply {
    pub probe_id: u64,
    pub responder: NodeId,
}

/// A winning hrep forwarded by the sender to a server for checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrepValidation {
    pub validation_id: u64,
    pub hrep: Hrep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    /// Path selector refused a node flagged by the watchdog.
    Misbehaving,
    /// Nobody answered a probe at the claimed position.
    Sybil,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationVerdict {
    pub validation_id: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Data {
    pub request_id: u64,
    pub packet_id: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid flag byte {0}")]
    Flag(u8),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn pos(&mut self, p: Position) -> &mut Self {
        self.0.extend_from_slice(&p.to_bytes());
        self
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().expect("length checked up front")
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn pos(&mut self) -> Position {
        Position::new(self.f64(), self.f64())
    }
}

fn check_len(bytes: &[u8], expected: usize) -> Result<(), DecodeError> {
    if bytes.len() == expected {
        Ok(())
    } else {
        Err(DecodeError::Length {
            expected,
            got: bytes.len(),
        })
    }
}

fn flag(b: u8) -> Result<bool, DecodeError> {
    match b {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(DecodeError::Flag(other)),
    }
}

/// Fixed-width record encoding.
pub trait Record: Sized {
    const LEN: usize;
    fn encode(&self) -> Vec<u8>;
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError>;
}

impl Record for PosUpdate {
    const LEN: usize = 4 + 16 + 8 + 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u32(self.node.0)
            .pos(self.pos)
            .u64(self.time.0)
            .u64(self.code.0);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(PosUpdate {
            node: NodeId(r.u32()),
            pos: r.pos(),
            time: SimTime(r.u64()),
            code: AuthCode(r.u64()),
        })
    }
}

impl Record for PosRequest {
    const LEN: usize = 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u32(self.requester.0).u32(self.target.0);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(PosRequest {
            requester: NodeId(r.u32()),
            target: NodeId(r.u32()),
        })
    }
}

impl Record for PosReply {
    // target, found flag, then a zero-filled record when negative
    const LEN: usize = 4 + 1 + 16 + 8 + 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u32(self.target.0);
        match self.record {
            Some((pos, time, code)) => {
                w.u8(1).pos(pos).u64(time.0).u64(code.0);
            }
            None => {
                w.u8(0).pos(Position::default()).u64(0).u64(0);
            }
        }
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        let target = NodeId(r.u32());
        let found = flag(r.u8())?;
        let pos = r.pos();
        let time = SimTime(r.u64());
        let code = AuthCode(r.u64());
        Ok(PosReply {
            target,
            record: found.then_some((pos, time, code)),
        })
    }
}

impl Record for Beacon {
    const LEN: usize = 4 + 16 + 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u32(self.sender.0).pos(self.position).u64(self.tusn);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(Beacon {
            sender: NodeId(r.u32()),
            position: r.pos(),
            tusn: r.u64(),
        })
    }
}

impl Record for SybilProbe {
    const LEN: usize = 8 + 16 + 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u64(self.probe_id)
            .pos(self.target_pos)
            .u64(self.deadline.0);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(SybilProbe {
            probe_id: r.u64(),
            target_pos: r.pos(),
            deadline: SimTime(r.u64()),
        })
    }
}

impl Record for SybilProbeReply {
    const LEN: usize = 8 + 4;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u64(self.probe_id).u32(self.responder.0);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(SybilProbeReply {
            probe_id: r.u64(),
            responder: NodeId(r.u32()),
        })
    }
}

impl Record for TrustQuery {
    const LEN: usize = 4 + 4 + 1 + 8;
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(Self::LEN));
        w.u32(self.requester.0)
            .u32(self.subject.0)
            .u8(self.verdict as u8)
            .u64(self.timestamp.0);
        w.0
    }
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        check_len(bytes, Self::LEN)?;
        let mut r = Reader(bytes);
        Ok(TrustQuery {
            requester: NodeId(r.u32()),
            subject: NodeId(r.u32()),
            verdict: flag(r.u8())?,
            timestamp: SimTime(r.u64()),
        })
    }
}
