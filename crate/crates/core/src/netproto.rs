//! Length-prefixed JSON frames and the star-shaped session between one master
//! and `c` workers.
//!
//! Per worker the session is:
//!
//! ```text
//! worker                       master
//!   HELLO          ──────────▶
//!   ANCHOR_PART    ──────────▶            (barrier over all workers)
//!                  ◀──────────  ANCHOR_FULL
//!   SHARES         ──────────▶            (barrier over all workers)
//!                  ◀──────────  ANCHOR_PRED
//!                  ◀──────────  BYE
//! ```
//!
//! Either side may send `ERROR` instead, which aborts the session.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataio::{positive_column, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrixkit::{Matrix, MatrixRecord};
use crate::pipeline::{auc, steps, Mode, PredictionResult, RunConfig};
use crate::worker::{IntermediateShare, LocalDistilledModel};

/// Largest accepted payload.
pub const MAX_FRAME_BYTES: usize = 256 * 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    Hello,
    AnchorPart,
    AnchorFull,
    Shares,
    AnchorPred,
    Error,
    Bye,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "HELLO",
            Kind::AnchorPart => "ANCHOR_PART",
            Kind::AnchorFull => "ANCHOR_FULL",
            Kind::Shares => "SHARES",
            Kind::AnchorPred => "ANCHOR_PRED",
            Kind::Error => "ERROR",
            Kind::Bye => "BYE",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Kind::Hello,
            Kind::AnchorPart,
            Kind::AnchorFull,
            Kind::Shares,
            Kind::AnchorPred,
            Kind::Error,
            Kind::Bye,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello { version: u32 },
    AnchorPart { local_anchor: Matrix },
    AnchorFull { anchor: Matrix },
    Shares { share: IntermediateShare },
    AnchorPred { y_anc: Matrix },
    Error { reason: String },
    Bye,
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Hello { .. } => Kind::Hello,
            Body::AnchorPart { .. } => Kind::AnchorPart,
            Body::AnchorFull { .. } => Kind::AnchorFull,
            Body::Shares { .. } => Kind::Shares,
            Body::AnchorPred { .. } => Kind::AnchorPred,
            Body::Error { .. } => Kind::Error,
            Body::Bye => Kind::Bye,
        }
    }

    /// Column counts of every matrix carried by the body.
    pub fn matrix_widths(&self) -> Vec<usize> {
        match self {
            Body::AnchorPart { local_anchor: a } | Body::AnchorFull { anchor: a } | Body::AnchorPred { y_anc: a } => {
                vec![a.ncols()]
            }
            Body::Shares { share } => vec![share.x_tilde.ncols(), share.x_tilde_anc.ncols(), share.y_prime.ncols()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub session_id: String,
    pub party_id: usize,
    pub body: Body,
}

impl Message {
    pub fn new(session_id: &str, party_id: usize, body: Body) -> Self {
        Self {
            session_id: session_id.to_string(),
            party_id,
            body,
        }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    kind: String,
    session_id: String,
    party_id: usize,
    #[serde(default)]
    body: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloBody {
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorPartBody {
    local_anchor: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorFullBody {
    anchor: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SharesBody {
    m_tilde: usize,
    x_tilde: MatrixRecord,
    x_tilde_anc: MatrixRecord,
    y_prime: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorPredBody {
    y_anc: MatrixRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorBody {
    reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ByeBody {}

fn to_value<T: Serialize>(body: T) -> serde_json::Value {
    serde_json::to_value(body).expect("message bodies serialize")
}

fn from_value<T: DeserializeOwned>(kind: Kind, value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Protocol(format!("{} body: {e}", kind.as_str())))
}

fn matrix(record: MatrixRecord) -> Result<Matrix> {
    Matrix::try_from(record).map_err(|e| Error::Protocol(e.to_string()))
}

/// Serialize a message to its JSON payload.
pub fn encode_payload(msg: &Message) -> Vec<u8> {
    let body = match &msg.body {
        Body::Hello { version } => to_value(HelloBody { version: *version }),
        Body::AnchorPart { local_anchor } => to_value(AnchorPartBody {
            local_anchor: local_anchor.into(),
        }),
        Body::AnchorFull { anchor } => to_value(AnchorFullBody { anchor: anchor.into() }),
        Body::Shares { share } => to_value(SharesBody {
            m_tilde: share.m_tilde(),
            x_tilde: (&share.x_tilde).into(),
            x_tilde_anc: (&share.x_tilde_anc).into(),
            y_prime: (&share.y_prime).into(),
        }),
        Body::AnchorPred { y_anc } => to_value(AnchorPredBody { y_anc: y_anc.into() }),
        Body::Error { reason } => to_value(ErrorBody { reason: reason.clone() }),
        Body::Bye => to_value(ByeBody {}),
    };
    let env = Envelope {
        kind: msg.kind().as_str().to_string(),
        session_id: msg.session_id.clone(),
        party_id: msg.party_id,
        body,
    };
    serde_json::to_vec(&env).expect("envelope serializes")
}

/// Parse a JSON payload. Malformed text reports its line and column.
pub fn decode_payload(payload: &[u8]) -> Result<Message> {
    let text = std::str::from_utf8(payload)
        .map_err(|e| Error::Protocol(format!("payload is not UTF-8 at byte {}", e.valid_up_to())))?;
    let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Protocol(format!("malformed payload: {e}")))?;
    let kind = Kind::parse(&env.kind).ok_or_else(|| Error::Protocol(format!("unknown message kind `{}`", env.kind)))?;
    let body = match kind {
        Kind::Hello => {
            let b: HelloBody = from_value(kind, env.body)?;
            Body::Hello { version: b.version }
        }
        Kind::AnchorPart => {
            let b: AnchorPartBody = from_value(kind, env.body)?;
            Body::AnchorPart {
                local_anchor: matrix(b.local_anchor)?,
            }
        }
        Kind::AnchorFull => {
            let b: AnchorFullBody = from_value(kind, env.body)?;
            Body::AnchorFull {
                anchor: matrix(b.anchor)?,
            }
        }
        Kind::Shares => {
            let b: SharesBody = from_value(kind, env.body)?;
            let share = IntermediateShare {
                party_id: env.party_id,
                x_tilde: matrix(b.x_tilde)?,
                x_tilde_anc: matrix(b.x_tilde_anc)?,
                y_prime: matrix(b.y_prime)?,
            };
            if share.m_tilde() != b.m_tilde {
                return Err(Error::Protocol(format!(
                    "SHARES declares m_tilde {} but carries {} columns",
                    b.m_tilde,
                    share.m_tilde()
                )));
            }
            share.validate().map_err(|e| Error::Protocol(e.to_string()))?;
            Body::Shares { share }
        }
        Kind::AnchorPred => {
            let b: AnchorPredBody = from_value(kind, env.body)?;
            Body::AnchorPred { y_anc: matrix(b.y_anc)? }
        }
        Kind::Error => {
            let b: ErrorBody = from_value(kind, env.body)?;
            Body::Error { reason: b.reason }
        }
        Kind::Bye => {
            if !env.body.is_null() {
                let _: ByeBody = from_value(kind, env.body)?;
            }
            Body::Bye
        }
    };
    Ok(Message {
        session_id: env.session_id,
        party_id: env.party_id,
        body,
    })
}

/// Length prefix plus payload.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>> {
    let payload = encode_payload(msg);
    if payload.len() > MAX_FRAME_BYTES {
        return Err(Error::Framing(format!("payload of {} bytes exceeds the limit", payload.len())));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Message> {
    let Some((head, payload)) = bytes.split_first_chunk::<4>() else {
        return Err(Error::Framing(format!("frame of {} bytes has no length prefix", bytes.len())));
    };
    let len = u32::from_be_bytes(*head) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Framing(format!("declared length {len} exceeds the limit")));
    }
    match payload.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(Error::Framing(format!(
            "truncated frame: {} of {len} payload bytes",
            payload.len()
        ))),
        std::cmp::Ordering::Greater => Err(Error::Framing(format!(
            "{} trailing bytes after frame",
            payload.len() - len
        ))),
        std::cmp::Ordering::Equal => decode_payload(payload),
    }
}

/// Read one raw frame (prefix included). `Ok(None)` on clean end of stream.
pub fn read_frame_bytes<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Framing("stream ended inside a length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(head) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Framing(format!("declared length {len} exceeds the limit")));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&head);
    reader.read_exact(&mut frame[4..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Framing(format!("stream ended inside a {len}-byte payload")),
        _ => e.into(),
    })?;
    Ok(Some(frame))
}

pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<Message>> {
    read_frame_bytes(reader)?.map(|f| decode_frame(&f)).transpose()
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<()> {
    writer.write_all(&encode_frame(msg)?)?;
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    GatheringAnchor,
    BroadcastingAnchor,
    GatheringShares,
    ReturningPredictions,
    Done,
}

/// Master-side barrier bookkeeping.
#[derive(Debug, Clone)]
pub struct SessionState {
    expected_parties: usize,
    phase: Phase,
    received: Vec<bool>,
}

impl SessionState {
    pub fn new(expected_parties: usize) -> Self {
        Self {
            expected_parties,
            phase: Phase::GatheringAnchor,
            received: vec![false; expected_parties],
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn expected_parties(&self) -> usize {
        self.expected_parties
    }

    /// Record an upload from `party`. Returns `true` when it completed the
    /// current gathering phase.
    pub fn record(&mut self, party: usize, kind: Kind) -> Result<bool> {
        let wanted = match self.phase {
            Phase::GatheringAnchor => Kind::AnchorPart,
            Phase::GatheringShares => Kind::Shares,
            other => {
                return Err(Error::Protocol(format!("{} received during {other:?}", kind.as_str())));
            }
        };
        if kind != wanted {
            return Err(Error::Protocol(format!(
                "expected {} but party {party} sent {}",
                wanted.as_str(),
                kind.as_str()
            )));
        }
        if party >= self.expected_parties {
            return Err(Error::Protocol(format!("party id {party} outside 0..{}", self.expected_parties)));
        }
        if std::mem::replace(&mut self.received[party], true) {
            return Err(Error::Protocol(format!("duplicate {} from party {party}", kind.as_str())));
        }
        let complete = self.received.iter().all(|&r| r);
        if complete {
            self.phase = match self.phase {
                Phase::GatheringAnchor => Phase::BroadcastingAnchor,
                _ => Phase::ReturningPredictions,
            };
        }
        Ok(complete)
    }

    /// Mark the outgoing step of the current phase as sent.
    pub fn advance(&mut self) -> Result<()> {
        self.phase = match self.phase {
            Phase::BroadcastingAnchor => Phase::GatheringShares,
            Phase::ReturningPredictions => Phase::Done,
            other => return Err(Error::Protocol(format!("cannot advance from {other:?}"))),
        };
        self.received.fill(false);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NetOptions {
    pub session_id: String,
    pub timeout: Duration,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            session_id: "session".into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// What the master keeps from one session.
#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub session_id: String,
    pub parties: usize,
    pub anchor_rows: usize,
    pub m_hat: usize,
    /// Anchor predictions returned to each party, by party id.
    pub anchor_predictions: Vec<Matrix>,
}

fn anchor_seed(config: &RunConfig) -> Result<u64> {
    config.seeds.anchor_seed.ok_or_else(|| {
        Error::Configuration("networked sessions need a shared anchor_seed in the config".into())
    })
}

enum Event {
    Frame(usize, Message),
    Failed(usize, Error),
    Closed(usize),
}

fn spawn_reader(conn: usize, mut stream: TcpStream, tx: mpsc::Sender<Event>) {
    thread::spawn(move || loop {
        let event = match read_message(&mut stream) {
            Ok(Some(msg)) => Event::Frame(conn, msg),
            Ok(None) => Event::Closed(conn),
            Err(e) => Event::Failed(conn, e),
        };
        let stop = !matches!(event, Event::Frame(..));
        if tx.send(event).is_err() || stop {
            return;
        }
    });
}

struct Master<'a> {
    config: &'a RunConfig,
    options: &'a NetOptions,
    parties: usize,
    deadline: Instant,
    /// Writable half of each connection, by connection index.
    writers: Vec<TcpStream>,
    /// Party id of each connection once it said HELLO.
    party_of: Vec<Option<usize>>,
    conn_of: BTreeMap<usize, usize>,
    rx: mpsc::Receiver<Event>,
    tx: mpsc::Sender<Event>,
    /// Uploads that arrived before every party joined.
    pending: VecDeque<Event>,
}

impl Master<'_> {
    fn send(&mut self, conn: usize, body: Body) -> Result<()> {
        let party = self.party_of[conn].unwrap_or(usize::MAX);
        let msg = Message::new(&self.options.session_id, party, body);
        write_message(&mut self.writers[conn], &msg)
    }

    fn abort(&mut self, reason: &str) -> Error {
        log::warn!("session {} aborted: {reason}", self.options.session_id);
        for conn in 0..self.writers.len() {
            let _ = self.send(
                conn,
                Body::Error {
                    reason: format!("session aborted: {reason}"),
                },
            );
            let _ = self.writers[conn].shutdown(Shutdown::Both);
        }
        Error::SessionAborted(reason.to_string())
    }

    fn remaining(&self) -> Option<Duration> {
        self.deadline.checked_duration_since(Instant::now()).filter(|d| !d.is_zero())
    }

    fn accept_all(&mut self, listener: &TcpListener) -> Result<()> {
        listener.set_nonblocking(true)?;
        while self.conn_of.len() < self.parties {
            // New connections.
            match listener.accept() {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let conn = self.writers.len();
                    spawn_reader(conn, stream.try_clone()?, self.tx.clone());
                    self.writers.push(stream);
                    self.party_of.push(None);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
                Err(e) => return Err(e.into()),
            }
            // Greetings.
            match self.rx.recv_timeout(Duration::from_millis(5)) {
                Ok(Event::Frame(conn, msg)) => self.greet(conn, msg)?,
                Ok(Event::Failed(conn, e)) => {
                    if let Some(p) = self.party_of[conn] {
                        return Err(self.abort(&format!("party {p}: {e}")));
                    }
                }
                Ok(Event::Closed(conn)) => {
                    if let Some(p) = self.party_of[conn] {
                        return Err(self.abort(&format!("party {p} disconnected")));
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => unreachable!("master holds a sender"),
            }
            if self.remaining().is_none() {
                let missing = self.parties - self.conn_of.len();
                return Err(self.abort(&format!("{missing} parties missing after timeout")));
            }
        }
        listener.set_nonblocking(false)?;
        Ok(())
    }

    fn greet(&mut self, conn: usize, msg: Message) -> Result<()> {
        if self.party_of[conn].is_some() {
            self.pending.push_back(Event::Frame(conn, msg));
            return Ok(());
        }
        let reject = |m: &mut Self, reason: String| {
            log::warn!("rejecting connection {conn}: {reason}");
            let _ = m.send(conn, Body::Error { reason });
            let _ = m.writers[conn].shutdown(Shutdown::Both);
        };
        match msg.body {
            Body::Hello { version } if version == PROTOCOL_VERSION => {}
            Body::Hello { version } => {
                reject(self, format!("unsupported protocol version {version}"));
                return Ok(());
            }
            _ => {
                reject(self, format!("expected HELLO, got {}", msg.kind().as_str()));
                return Ok(());
            }
        }
        if msg.session_id != self.options.session_id {
            reject(self, format!("unknown session `{}`", msg.session_id));
        } else if msg.party_id >= self.parties {
            reject(self, format!("party id {} outside 0..{}", msg.party_id, self.parties));
        } else if self.conn_of.contains_key(&msg.party_id) {
            reject(self, format!("duplicate party id {}", msg.party_id));
        } else {
            self.party_of[conn] = Some(msg.party_id);
            self.conn_of.insert(msg.party_id, conn);
        }
        Ok(())
    }

    /// Collect one upload of `kind` from every party, in party order.
    fn gather(&mut self, state: &mut SessionState) -> Result<Vec<Message>> {
        let mut got: BTreeMap<usize, Message> = BTreeMap::new();
        loop {
            let Some(wait) = self.remaining() else {
                let missing = self.parties - got.len();
                return Err(self.abort(&format!("{missing} parties silent after timeout")));
            };
            let next = match self.pending.pop_front() {
                Some(event) => Ok(event),
                None => self.rx.recv_timeout(wait),
            };
            match next {
                Ok(Event::Frame(conn, msg)) => {
                    let Some(party) = self.party_of[conn] else {
                        continue;
                    };
                    if let Body::Error { reason } = &msg.body {
                        return Err(self.abort(&format!("party {party} reported: {reason}")));
                    }
                    if msg.session_id != self.options.session_id || msg.party_id != party {
                        return Err(self.abort(&format!("party {party} sent a mislabelled frame")));
                    }
                    match state.record(party, msg.kind()) {
                        Ok(done) => {
                            got.insert(party, msg);
                            if done {
                                return Ok(got.into_values().collect());
                            }
                        }
                        Err(e) => return Err(self.abort(&e.to_string())),
                    }
                }
                Ok(Event::Failed(conn, e)) => {
                    if let Some(p) = self.party_of[conn] {
                        return Err(self.abort(&format!("party {p}: {e}")));
                    }
                }
                Ok(Event::Closed(conn)) => {
                    if let Some(p) = self.party_of[conn] {
                        return Err(self.abort(&format!("party {p} disconnected")));
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => unreachable!("master holds a sender"),
            }
        }
    }

    fn run(&mut self, listener: &TcpListener) -> Result<SessionSummary> {
        let seed = anchor_seed(self.config)?;
        self.accept_all(listener)?;
        let mut state = SessionState::new(self.parties);

        let parts = self.gather(&mut state)?;
        let locals: Vec<Matrix> = parts
            .into_iter()
            .map(|m| match m.body {
                Body::AnchorPart { local_anchor } => local_anchor,
                _ => unreachable!("state machine admits only ANCHOR_PART here"),
            })
            .collect();
        let anchor = match steps::assemble(self.config, &locals, seed) {
            Ok(a) => a,
            Err(e) => return Err(self.abort(&e.to_string())),
        };
        drop(locals);
        for party in 0..self.parties {
            let conn = self.conn_of[&party];
            self.send(conn, Body::AnchorFull { anchor: anchor.x_anc.clone() })?;
        }
        state.advance()?;

        let uploads = self.gather(&mut state)?;
        let shares: Vec<IntermediateShare> = uploads
            .into_iter()
            .map(|m| match m.body {
                Body::Shares { mut share } => {
                    share.party_id = m.party_id;
                    share
                }
                _ => unreachable!("state machine admits only SHARES here"),
            })
            .collect();
        let widths: Vec<usize> = shares.iter().map(|s| s.m_tilde()).collect();
        let y_anc = match steps::master_round(self.config, &shares) {
            Ok(y) => y,
            Err(e) => return Err(self.abort(&e.to_string())),
        };
        for (party, y) in y_anc.iter().enumerate() {
            let conn = self.conn_of[&party];
            self.send(conn, Body::AnchorPred { y_anc: y.clone() })?;
        }
        state.advance()?;
        for party in 0..self.parties {
            let conn = self.conn_of[&party];
            let _ = self.send(conn, Body::Bye);
        }
        Ok(SessionSummary {
            session_id: self.options.session_id.clone(),
            parties: self.parties,
            anchor_rows: anchor.r(),
            m_hat: self.config.m_hat_for(&widths),
            anchor_predictions: y_anc,
        })
    }
}

/// Run one master session on an already bound listener.
pub fn serve_master_on(
    listener: &TcpListener,
    config: &RunConfig,
    parties: usize,
    options: &NetOptions,
) -> Result<SessionSummary> {
    if parties == 0 {
        return Err(Error::Configuration("a session needs at least one party".into()));
    }
    let (tx, rx) = mpsc::channel();
    let mut master = Master {
        config,
        options,
        parties,
        deadline: Instant::now() + options.timeout,
        writers: Vec::new(),
        party_of: Vec::new(),
        conn_of: BTreeMap::new(),
        rx,
        tx,
        pending: VecDeque::new(),
    };
    master.run(listener)
}

/// Bind `addr` and run one master session.
pub fn serve_master(
    addr: impl ToSocketAddrs,
    config: &RunConfig,
    parties: usize,
    options: &NetOptions,
) -> Result<SessionSummary> {
    let listener = TcpListener::bind(addr)?;
    log::info!("master listening on {}", listener.local_addr()?);
    serve_master_on(&listener, config, parties, options)
}

/// What a worker keeps after a session: its distilled model and, when a
/// test set was supplied, its predictions. No map or permutation survives.
#[derive(Debug, Clone)]
pub struct WorkerOutcome {
    pub model: LocalDistilledModel,
    pub anchor_prediction: Matrix,
    pub result: Option<PredictionResult>,
}

fn connect_with_retry(addr: &str, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::debug!("master not reachable yet: {e}");
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(Error::SessionAborted(format!("could not reach master at {addr}: {e}"))),
        }
    }
}

fn expect(stream: &mut TcpStream, kind: Kind, session: &str) -> Result<Message> {
    let msg = read_message(stream)?
        .ok_or_else(|| Error::SessionAborted(format!("master closed the connection before {}", kind.as_str())))?;
    if let Body::Error { reason } = &msg.body {
        return Err(Error::SessionAborted(reason.clone()));
    }
    if msg.kind() != kind {
        return Err(Error::Protocol(format!("expected {} but got {}", kind.as_str(), msg.kind().as_str())));
    }
    if msg.session_id != session {
        return Err(Error::Protocol(format!("frame for session `{}`", msg.session_id)));
    }
    Ok(msg)
}

/// Take part in one session as party `party_id`.
pub fn run_worker(
    addr: &str,
    config: &RunConfig,
    party_id: usize,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    options: &NetOptions,
) -> Result<WorkerOutcome> {
    let start = Instant::now();
    let deadline = start + options.timeout;
    let seed = anchor_seed(config)?;
    let session = options.session_id.as_str();
    let mut stream = connect_with_retry(addr, deadline)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(options.timeout))?;

    write_message(&mut stream, &Message::new(session, party_id, Body::Hello { version: PROTOCOL_VERSION }))?;
    let local_anchor = steps::local_anchor_part(config, party_id, &data.x, seed)?;
    write_message(&mut stream, &Message::new(session, party_id, Body::AnchorPart { local_anchor }))?;

    let anchor = match expect(&mut stream, Kind::AnchorFull, session)?.body {
        Body::AnchorFull { anchor } => anchor,
        _ => unreachable!(),
    };
    if anchor.ncols() != data.num_features() {
        return Err(Error::Protocol("anchor width differs from the local feature count".into()));
    }

    let frame = {
        // The map and permutation live only inside this block.
        let share = steps::proposed_share(config, party_id, data, &anchor)?;
        encode_frame(&Message::new(session, party_id, Body::Shares { share }))?
    };
    stream.write_all(&frame)?;
    stream.flush()?;
    drop(frame);

    let y_anc = match expect(&mut stream, Kind::AnchorPred, session)?.body {
        Body::AnchorPred { y_anc } => y_anc,
        _ => unreachable!(),
    };
    // Closing BYE; its absence is not an error once predictions arrived.
    if let Ok(Some(msg)) = read_message(&mut stream) {
        if msg.kind() != Kind::Bye {
            log::warn!("expected BYE, got {}", msg.kind().as_str());
        }
    }
    let _ = stream.shutdown(Shutdown::Both);

    let model = steps::distill(config, party_id, &anchor, &y_anc)?;
    let result = test
        .map(|t| -> Result<PredictionResult> {
            let pred = model.model.predict(&t.x)?;
            let col = positive_column(pred.ncols());
            let scores: Vec<f64> = pred.column(col).iter().copied().collect();
            let a = auc(&scores, &t.positive_labels())?;
            Ok(PredictionResult {
                mode: Mode::DcProposed,
                predictions: vec![pred],
                auc: vec![a],
                anchor_predictions: vec![y_anc.clone()],
                wall_time: start.elapsed(),
            })
        })
        .transpose()?;
    Ok(WorkerOutcome {
        model,
        anchor_prediction: y_anc,
        result,
    })
}
