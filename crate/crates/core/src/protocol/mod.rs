//! Two-party split execution of one scoring session. Device A holds the
//! first graph, device B the second, and a neutral scorer holds only the
//! head. Every value that leaves a device goes through the wire codec and is
//! appended to the session transcript.

mod wire;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;

pub use wire::{decode, encode, Kind, Sender, WireMessage};

use crate::error::{Error, Result};
use crate::graphs::PreparedGraph;
use crate::model::{Model, ModelFamily, ModelTape, SessionNoise, Side};
use crate::numerics::{Tensor, Var};
use crate::rng::Rng;

/// Ordered record of every boundary crossing in one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    events: Vec<WireMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: WireMessage) -> Result<()> {
        if let Some(last) = self.events.last() {
            if msg.step <= last.step {
                return Err(Error::Protocol {
                    step: msg.step,
                    msg: format!("step not after previous step {}", last.step),
                });
            }
        }
        msg.validate()?;
        self.events.push(msg);
        Ok(())
    }

    pub fn events(&self) -> &[WireMessage] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// (sender, kind) pairs in order.
    pub fn schedule(&self) -> Vec<(Sender, Kind)> {
        self.events.iter().map(|e| (e.sender, e.kind)).collect()
    }

    /// The score the scorer sent, if any.
    pub fn score(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == Kind::Score)
            .map(|e| e.payload[0])
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| e.to_json() + "\n").collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut t = Transcript::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let msg = WireMessage::from_json(&line, 0).map_err(|e| Error::Parse {
                file: file.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            t.push(msg).map_err(|e| Error::Parse {
                file: file.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(t)
    }
}

/// In-memory reliable channel. Sending encodes a frame and records the
/// decoded message; receivers only ever see decoded values.
struct Channel<'t> {
    session_id: String,
    next_step: u64,
    transcript: &'t mut Transcript,
}

impl Channel<'_> {
    fn send(&mut self, sender: Sender, kind: Kind, value: &Tensor) -> Result<WireMessage> {
        let (rows, dim) = value.dims2();
        let msg = WireMessage {
            session_id: self.session_id.clone(),
            step: self.next_step,
            sender,
            kind,
            m: kind.has_rows().then_some(rows),
            dim,
            payload: value.data().to_vec(),
        };
        self.next_step += 1;
        let frame = encode(&msg);
        let (received, _) = decode(&frame).map_err(|e| Error::Protocol {
            step: msg.step,
            msg: e.to_string(),
        })?;
        self.transcript.push(received.clone())?;
        Ok(received)
    }
}

fn expect(
    msg: &WireMessage,
    sender: Sender,
    kind: Kind,
    rows: Option<usize>,
    dim: usize,
) -> Result<Tensor> {
    let bad = |what: String| Error::Protocol {
        step: msg.step,
        msg: what,
    };
    if msg.sender != sender || msg.kind != kind {
        return Err(bad(format!(
            "expected {sender}:{kind}, got {}:{}",
            msg.sender, msg.kind
        )));
    }
    if msg.dim != dim || rows.is_some_and(|r| msg.m != Some(r)) {
        return Err(bad(format!(
            "unexpected shape m={:?} dim={}",
            msg.m, msg.dim
        )));
    }
    Tensor::matrix(msg.rows(), msg.dim, msg.payload.clone())
}

fn same_model(a: &Model, b: &Model) -> bool {
    a.family == b.family
        && a.task == b.task
        && a.feature_dim == b.feature_dim
        && a.hyper == b.hyper
        && a.params == b.params
}

fn receive(tape: &mut ModelTape<'_>, t: Tensor) -> Var {
    tape.constant(t)
}

/// Identifies one session and seeds its LDP noise.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub noise: SessionNoise,
}

impl Session {
    pub fn new(id: impl Into<String>, noise_seed: u64) -> Self {
        Session {
            id: id.into(),
            noise: SessionNoise::new(noise_seed),
        }
    }
}

/// Runs one session with `device_a` holding `g1` and `device_b` holding `g2`.
/// The scorer uses `device_a`'s head parameters (both devices must agree).
pub fn run_pairwise_session(
    device_a: &Model,
    device_b: &Model,
    g1: &PreparedGraph,
    g2: &PreparedGraph,
    session: &Session,
) -> Result<(f64, Transcript)> {
    if !same_model(device_a, device_b) {
        return Err(Error::invalid("devices hold different model parameters"));
    }
    let model = device_a;
    let d = model.hyper.d;
    let m = model.hyper.m;
    let mut transcript = Transcript::new();
    let mut ch = Channel {
        session_id: session.id.clone(),
        next_step: 0,
        transcript: &mut transcript,
    };
    let mut ta = ModelTape::new(device_a);
    let mut tb = ModelTape::new(device_b);
    let mut ts = ModelTape::new(model);

    let score = match model.family {
        ModelFamily::Ppgm => {
            let h1 = ta.gcn_encode(g1)?;
            let msg1 = ta.extract_messages(h1)?;
            let sent = ch.send(Sender::A, Kind::Messages, ta.value(msg1))?;
            let in_b = expect(&sent, Sender::A, Kind::Messages, Some(m), d)?;

            let h2 = tb.gcn_encode(g2)?;
            let msg2 = tb.extract_messages(h2)?;
            let sent = ch.send(Sender::B, Kind::Messages, tb.value(msg2))?;
            let in_a = expect(&sent, Sender::B, Kind::Messages, Some(m), d)?;

            let in_a = receive(&mut ta, in_a);
            let (o1, _) = ta.device_fuse(h1, msg1, in_a)?;
            let in_b = receive(&mut tb, in_b);
            let (o2, _) = tb.device_fuse(h2, msg2, in_b)?;
            let s1 = ch.send(Sender::A, Kind::Obfuscated, ta.value(o1))?;
            let s2 = ch.send(Sender::B, Kind::Obfuscated, tb.value(o2))?;
            scorer_ppgm(&mut ts, &s1, &s2)?
        }
        ModelFamily::Sgnn | ModelFamily::SgnnLdp => {
            let h1 = ta.gcn_encode(g1)?;
            let r1 = ta.graph_rep(h1, Side::A, session.noise)?;
            let s1 = ch.send(Sender::A, Kind::GraphRep, ta.value(r1))?;
            let h2 = tb.gcn_encode(g2)?;
            let r2 = tb.graph_rep(h2, Side::B, session.noise)?;
            let s2 = ch.send(Sender::B, Kind::GraphRep, tb.value(r2))?;
            scorer_sgnn(&mut ts, &s1, &s2)?
        }
        ModelFamily::NodeMatch => {
            let h1 = ta.gcn_encode(g1)?;
            let r1 = ta.graph_rep(h1, Side::A, session.noise)?;
            let n1 = ch.send(Sender::A, Kind::NodeReps, ta.value(h1))?;
            let s1 = ch.send(Sender::A, Kind::GraphRep, ta.value(r1))?;
            let h2 = tb.gcn_encode(g2)?;
            let r2 = tb.graph_rep(h2, Side::B, session.noise)?;
            let n2 = ch.send(Sender::B, Kind::NodeReps, tb.value(h2))?;
            let s2 = ch.send(Sender::B, Kind::GraphRep, tb.value(r2))?;
            scorer_nodematch(&mut ts, [&n1, &s1], [&n2, &s2])?
        }
    };
    ch.send(Sender::Scorer, Kind::Score, &Tensor::scalar(score))?;
    Ok((score, transcript))
}

fn scorer_ppgm(ts: &mut ModelTape<'_>, s1: &WireMessage, s2: &WireMessage) -> Result<f64> {
    let d = ts.model.hyper.d;
    let o1 = expect(s1, Sender::A, Kind::Obfuscated, None, d)?;
    let o2 = expect(s2, Sender::B, Kind::Obfuscated, None, d)?;
    let (o1, o2) = (ts.constant(o1), ts.constant(o2));
    let s = ts.score(o1, o2)?;
    Ok(ts.value(s).item())
}

fn scorer_sgnn(ts: &mut ModelTape<'_>, s1: &WireMessage, s2: &WireMessage) -> Result<f64> {
    let d = ts.model.hyper.d;
    let r1 = expect(s1, Sender::A, Kind::GraphRep, None, d)?;
    let r2 = expect(s2, Sender::B, Kind::GraphRep, None, d)?;
    let (r1, r2) = (ts.constant(r1), ts.constant(r2));
    let s = ts.score(r1, r2)?;
    Ok(ts.value(s).item())
}

fn scorer_nodematch(
    ts: &mut ModelTape<'_>,
    a: [&WireMessage; 2],
    b: [&WireMessage; 2],
) -> Result<f64> {
    let d = ts.model.hyper.d;
    let h1 = expect(a[0], Sender::A, Kind::NodeReps, None, d)?;
    let r1 = expect(a[1], Sender::A, Kind::GraphRep, None, d)?;
    let h2 = expect(b[0], Sender::B, Kind::NodeReps, None, d)?;
    let r2 = expect(b[1], Sender::B, Kind::GraphRep, None, d)?;
    let (h1, r1, h2, r2) = (
        ts.constant(h1),
        ts.constant(r1),
        ts.constant(h2),
        ts.constant(r2),
    );
    let z1 = ts.match_summary(h1, r1, h2)?;
    let z2 = ts.match_summary(h2, r2, h1)?;
    let s = ts.score(z1, z2)?;
    Ok(ts.value(s).item())
}

/// Recomputes the score from a recorded transcript using only what the
/// scorer received.
pub fn replay_score(model: &Model, t: &Transcript) -> Result<f64> {
    let ev = t.events();
    let mut ts = ModelTape::new(model);
    let need = |n: usize| {
        if ev.len() < n {
            Err(Error::invalid(format!(
                "transcript has {} events, expected at least {n}",
                ev.len()
            )))
        } else {
            Ok(())
        }
    };
    match model.family {
        ModelFamily::Ppgm => {
            need(4)?;
            scorer_ppgm(&mut ts, &ev[2], &ev[3])
        }
        ModelFamily::Sgnn | ModelFamily::SgnnLdp => {
            need(2)?;
            scorer_sgnn(&mut ts, &ev[0], &ev[1])
        }
        ModelFamily::NodeMatch => {
            need(4)?;
            scorer_nodematch(&mut ts, [&ev[0], &ev[1]], [&ev[2], &ev[3]])
        }
    }
}

/// What an eavesdropper can label a captured vector as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RepTag {
    Message,
    Obfuscated,
    GraphRep,
    NodeRep,
}

impl RepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RepTag::Message => "message",
            RepTag::Obfuscated => "obfuscated",
            RepTag::GraphRep => "graph_rep",
            RepTag::NodeRep => "node_rep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intercepted {
    pub tag: RepTag,
    pub sender: Sender,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// One captured vector chosen uniformly per draw.
    #[default]
    UniformOne,
    /// Everything that crossed.
    All,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::UniformOne => "uniform-one",
            Policy::All => "all",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-one" => Ok(Policy::UniformOne),
            "all" => Ok(Policy::All),
            other => Err(Error::invalid(format!(
                "unknown policy {other:?} (uniform-one|all)"
            ))),
        }
    }
}

/// Every device-emitted vector in the transcript, in order. Scores are not
/// representations and are skipped.
pub fn interceptable(t: &Transcript) -> Vec<Intercepted> {
    let mut out = Vec::new();
    for e in t.events() {
        let tag = match e.kind {
            Kind::Messages => RepTag::Message,
            Kind::Obfuscated => RepTag::Obfuscated,
            Kind::GraphRep => RepTag::GraphRep,
            Kind::NodeReps => RepTag::NodeRep,
            Kind::Score => continue,
        };
        for i in 0..e.rows() {
            out.push(Intercepted {
                tag,
                sender: e.sender,
                vector: e.vector(i).to_vec(),
            });
        }
    }
    out
}

pub fn intercept(t: &Transcript, policy: Policy, rng: &mut Rng) -> Result<Vec<Intercepted>> {
    if t.is_empty() {
        return Err(Error::invalid("cannot intercept an empty transcript"));
    }
    let mut all = interceptable(t);
    match policy {
        Policy::All => Ok(all),
        Policy::UniformOne => {
            if all.is_empty() {
                return Ok(all);
            }
            let i = rng.gen_range(0..all.len());
            Ok(vec![all.swap_remove(i)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Graph, Task};
    use crate::model::{score_pair, HyperParams};
    use crate::rng;

    fn model(family: ModelFamily) -> Model {
        let h = HyperParams {
            d: 8,
            layers: 2,
            m: 3,
            heads: 2,
            ldp_b: if family == ModelFamily::SgnnLdp {
                0.3
            } else {
                0.0
            },
            ..Default::default()
        };
        Model::init(family, Task::Classification, 3, h, &mut rng::stream(3, &[])).unwrap()
    }

    fn graph(n: usize, shift: f64) -> PreparedGraph {
        let feats = Tensor::matrix(
            n,
            3,
            (0..n * 3).map(|i| ((i as f64) + shift).cos()).collect(),
        )
        .unwrap();
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        PreparedGraph::new(&Graph::new("g", n, feats, edges, Default::default()).unwrap())
    }

    #[test]
    fn schedules_and_equivalence() {
        let (g1, g2) = (graph(4, 0.0), graph(6, 1.5));
        for family in ModelFamily::ALL {
            let m = model(family);
            let sess = Session::new("t", 11);
            let (score, t) = run_pairwise_session(&m, &m, &g1, &g2, &sess).unwrap();
            let mono = score_pair(&m, &g1, &g2, sess.noise).unwrap();
            assert_eq!(score.to_bits(), mono.to_bits(), "{family}");
            assert_eq!(replay_score(&m, &t).unwrap().to_bits(), score.to_bits());
            assert_eq!(t.score(), Some(score));
            let expected: Vec<(Sender, Kind)> = match family {
                ModelFamily::Ppgm => vec![
                    (Sender::A, Kind::Messages),
                    (Sender::B, Kind::Messages),
                    (Sender::A, Kind::Obfuscated),
                    (Sender::B, Kind::Obfuscated),
                    (Sender::Scorer, Kind::Score),
                ],
                ModelFamily::Sgnn | ModelFamily::SgnnLdp => {
                    vec![
                        (Sender::A, Kind::GraphRep),
                        (Sender::B, Kind::GraphRep),
                        (Sender::Scorer, Kind::Score),
                    ]
                }
                ModelFamily::NodeMatch => vec![
                    (Sender::A, Kind::NodeReps),
                    (Sender::A, Kind::GraphRep),
                    (Sender::B, Kind::NodeReps),
                    (Sender::B, Kind::GraphRep),
                    (Sender::Scorer, Kind::Score),
                ],
            };
            assert_eq!(t.schedule(), expected);
        }
    }

    #[test]
    fn interceptable_counts() {
        let (g1, g2) = (graph(4, 0.0), graph(5, 0.7));
        let m = model(ModelFamily::Ppgm);
        let (_, t) = run_pairwise_session(&m, &m, &g1, &g2, &Session::new("x", 0)).unwrap();
        assert_eq!(interceptable(&t).len(), 2 * 3 + 2);
        let m = model(ModelFamily::Sgnn);
        let (_, t) = run_pairwise_session(&m, &m, &g1, &g2, &Session::new("x", 0)).unwrap();
        assert_eq!(interceptable(&t).len(), 2);
        let m = model(ModelFamily::NodeMatch);
        let (_, t) = run_pairwise_session(&m, &m, &g1, &g2, &Session::new("x", 0)).unwrap();
        assert_eq!(interceptable(&t).len(), 4 + 5 + 2);
    }

    #[test]
    fn mismatched_devices_rejected() {
        let a = model(ModelFamily::Ppgm);
        let mut b = a.clone();
        b.params.get_mut("gcn.w0").unwrap().data_mut()[0] += 1e-9;
        let g = graph(3, 0.0);
        assert!(run_pairwise_session(&a, &b, &g, &g, &Session::new("x", 0)).is_err());
    }

    #[test]
    fn transcript_steps_must_increase() {
        let m = model(ModelFamily::Sgnn);
        let (_, t) = run_pairwise_session(
            &m,
            &m,
            &graph(3, 0.0),
            &graph(3, 1.0),
            &Session::new("x", 0),
        )
        .unwrap();
        let mut t2 = Transcript::new();
        t2.push(t.events()[1].clone()).unwrap();
        assert!(t2.push(t.events()[0].clone()).is_err());
    }

    #[test]
    fn malformed_message_names_step() {
        let msg = WireMessage {
            session_id: "x".into(),
            step: 3,
            sender: Sender::A,
            kind: Kind::Obfuscated,
            m: None,
            dim: 4,
            payload: vec![0.0; 4],
        };
        match expect(&msg, Sender::A, Kind::Obfuscated, None, 8) {
            Err(Error::Protocol { step, .. }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }
}
