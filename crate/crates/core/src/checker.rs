//! Offline verdicts over recorded traces.
//!
//! Every check recomputes validity and fusion from [`crate::validity`]
//! instead of trusting annotations. Liveness checks report
//! [`Status::Inconclusive`] when a finite trace can neither confirm nor
//! refute them. Violations carry a witness: event indices that, replayed
//! alone, still produce the violation. The header event is always part of it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{EnvelopeId, Tick};
use crate::trace::{EventKind, RunHeader, TraceEvent};
use crate::types::{Block, BlockHash, ClientId, ReplicaId, SubProposal, Transaction};
use crate::validity::{check_fair_fusion, AppState, Contribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Agreement,
    ChainValidity,
    ChainFinality,
    Termination,
    ValidRequest,
    ValidInput,
    RequestAgreement,
    StubbornInput,
    UserFairness,
    FusionValidity,
    FairFusion,
    CorrectContribution,
    LogSafety,
    LogValidity,
    LogFinality,
    LogUserFairness,
    SignatureSoundness,
    NetworkIntegrity,
}

impl Property {
    pub const ALL: [Property; 18] = [
        Property::Agreement,
        Property::ChainValidity,
        Property::ChainFinality,
        Property::Termination,
        Property::ValidRequest,
        Property::ValidInput,
        Property::RequestAgreement,
        Property::StubbornInput,
        Property::UserFairness,
        Property::FusionValidity,
        Property::FairFusion,
        Property::CorrectContribution,
        Property::LogSafety,
        Property::LogValidity,
        Property::LogFinality,
        Property::LogUserFairness,
        Property::SignatureSoundness,
        Property::NetworkIntegrity,
    ];

    /// Agreement, chain validity and chain finality.
    pub const SAFETY: [Property; 3] = [
        Property::Agreement,
        Property::ChainValidity,
        Property::ChainFinality,
    ];

    pub const LOG: [Property; 4] = [
        Property::LogSafety,
        Property::LogValidity,
        Property::LogFinality,
        Property::LogUserFairness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Agreement => "agreement",
            Property::ChainValidity => "chain-validity",
            Property::ChainFinality => "chain-finality",
            Property::Termination => "termination",
            Property::ValidRequest => "valid-request",
            Property::ValidInput => "valid-input",
            Property::RequestAgreement => "request-agreement",
            Property::StubbornInput => "stubborn-input",
            Property::UserFairness => "user-fairness",
            Property::FusionValidity => "fusion-validity",
            Property::FairFusion => "fair-fusion",
            Property::CorrectContribution => "correct-contribution",
            Property::LogSafety => "log-safety",
            Property::LogValidity => "log-validity",
            Property::LogFinality => "log-finality",
            Property::LogUserFairness => "log-user-fairness",
            Property::SignatureSoundness => "signature-soundness",
            Property::NetworkIntegrity => "network-integrity",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Violation,
    #[serde(rename = "horizon-inconclusive")]
    Inconclusive,
    NotApplicable,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Violation => "violation",
            Status::Inconclusive => "horizon-inconclusive",
            Status::NotApplicable => "not-applicable",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: Property,
    pub status: Status,
    /// Event indices; empty unless `status` is a violation.
    pub witness: Vec<usize>,
    pub detail: String,
}

impl Verdict {
    fn pass(property: Property) -> Self {
        Verdict {
            property,
            status: Status::Pass,
            witness: Vec::new(),
            detail: String::new(),
        }
    }

    fn with(property: Property, status: Status, detail: impl Into<String>) -> Self {
        Verdict {
            property,
            status,
            witness: Vec::new(),
            detail: detail.into(),
        }
    }

    fn violation(property: Property, mut witness: Vec<usize>, detail: impl Into<String>) -> Self {
        witness.sort_unstable();
        witness.dedup();
        Verdict {
            property,
            status: Status::Violation,
            witness,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn get(&self, p: Property) -> &Verdict {
        self.verdicts
            .iter()
            .find(|v| v.property == p)
            .expect("every property is checked")
    }

    pub fn status(&self, p: Property) -> Status {
        self.get(p).status
    }

    pub fn violations(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts
            .iter()
            .filter(|v| v.status == Status::Violation)
    }

    pub fn has_violation(&self) -> bool {
        self.violations().next().is_some()
    }

    /// 0 all pass, 1 any violation, 2 inconclusive only.
    pub fn exit_code(&self) -> i32 {
        if self.has_violation() {
            1
        } else if self
            .verdicts
            .iter()
            .any(|v| v.status == Status::Inconclusive)
        {
            2
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("trace does not start with a run-started event")]
    MissingHeader,
    #[error("tick decreases at event {index}")]
    TickDecreases { index: usize },
    #[error("grace must be at least 1")]
    ZeroGrace,
}

/// Checks every property; `grace` overrides the trace header's.
pub fn check(events: &[TraceEvent], grace: Option<u64>) -> Result<Report, CheckError> {
    let trace = Trace::new(events, grace)?;
    Ok(Report {
        verdicts: Property::ALL.iter().map(|&p| trace.check(p)).collect(),
    })
}

/// Checks a single property.
pub fn check_property(
    events: &[TraceEvent],
    p: Property,
    grace: Option<u64>,
) -> Result<Verdict, CheckError> {
    Ok(Trace::new(events, grace)?.check(p))
}

struct OutputRec<'a> {
    idx: usize,
    instance: u64,
    block: &'a Block,
    hash: BlockHash,
}

/// A replica's outputs, and the contiguous chain they form.
struct ReplicaView<'a> {
    outputs: Vec<OutputRec<'a>>,
    /// Leading outputs numbered `0, 1, 2, ...`.
    contiguous: usize,
    /// State after each contiguous block, `None` once invalid.
    states: Vec<Option<AppState>>,
}

impl ReplicaView<'_> {
    /// Contiguous chain length formed by outputs before event `idx`, or
    /// `None` if a non-contiguous output precedes it.
    fn len_before(&self, idx: usize) -> Option<usize> {
        let seen = self.outputs.iter().take_while(|o| o.idx < idx).count();
        (seen <= self.contiguous).then_some(seen)
    }

    fn state_of_len(&self, len: usize) -> Option<&AppState> {
        if len == 0 {
            return None;
        }
        self.states.get(len - 1)?.as_ref()
    }

    fn prefix_witness(&self, upto: usize) -> impl Iterator<Item = usize> + '_ {
        self.outputs[..upto.min(self.contiguous)]
            .iter()
            .map(|o| o.idx)
    }
}

struct Trace<'a> {
    events: &'a [TraceEvent],
    header: &'a RunHeader,
    hidx: usize,
    grace: u64,
    views: BTreeMap<ReplicaId, ReplicaView<'a>>,
}

fn contains(txs: &[Transaction], tx: &Transaction) -> bool {
    txs.iter().any(|t| t == tx)
}

impl<'a> Trace<'a> {
    fn new(events: &'a [TraceEvent], grace: Option<u64>) -> Result<Self, CheckError> {
        let (hidx, header) = events
            .iter()
            .enumerate()
            .find_map(|(i, e)| match &e.kind {
                EventKind::RunStarted { header } => Some((i, header)),
                _ => None,
            })
            .ok_or(CheckError::MissingHeader)?;
        if let Some(index) = (1..events.len()).find(|&i| events[i].tick < events[i - 1].tick) {
            return Err(CheckError::TickDecreases { index });
        }
        let grace = grace.unwrap_or(header.grace);
        if grace == 0 {
            return Err(CheckError::ZeroGrace);
        }
        let mut views: BTreeMap<ReplicaId, ReplicaView<'a>> = BTreeMap::new();
        for (idx, e) in events.iter().enumerate() {
            if let (Some(r), EventKind::Output { instance, block }) = (e.replica(), &e.kind) {
                views
                    .entry(r)
                    .or_insert_with(|| ReplicaView {
                        outputs: Vec::new(),
                        contiguous: 0,
                        states: Vec::new(),
                    })
                    .outputs
                    .push(OutputRec {
                        idx,
                        instance: *instance,
                        block,
                        hash: block.hash(),
                    });
            }
        }
        for view in views.values_mut() {
            view.contiguous = view
                .outputs
                .iter()
                .enumerate()
                .take_while(|(k, o)| o.instance == *k as u64)
                .count();
            let mut state = Some(header.validity.genesis_state());
            for o in &view.outputs[..view.contiguous] {
                state = state.and_then(|s| s.applied(&o.block.txs));
                view.states.push(state.clone());
            }
        }
        Ok(Trace {
            events,
            header,
            hidx,
            grace,
            views,
        })
    }

    fn is_frc(&self) -> bool {
        self.header.construction.uses_frc()
    }

    fn correct_views(&self) -> impl Iterator<Item = (ReplicaId, &ReplicaView<'a>)> {
        self.views
            .iter()
            .filter(|(r, _)| self.header.is_correct_replica(**r))
            .map(|(r, v)| (*r, v))
    }

    fn indexed(&self) -> impl Iterator<Item = (usize, &'a TraceEvent)> {
        self.events.iter().enumerate()
    }

    fn end(&self) -> Option<(usize, Tick, usize)> {
        self.indexed().find_map(|(i, e)| match e.kind {
            EventKind::RunEnded { undelivered, .. } => Some((i, e.tick, undelivered)),
            _ => None,
        })
    }

    fn check(&self, p: Property) -> Verdict {
        match p {
            Property::Agreement => self.agreement(),
            Property::ChainValidity => self.chain_validity(),
            Property::ChainFinality => self.chain_finality(),
            Property::Termination => self.termination(),
            Property::ValidRequest => self.valid_request(),
            Property::ValidInput => self.valid_input(),
            Property::RequestAgreement => self.request_agreement(),
            Property::StubbornInput => self.stubborn_input(),
            Property::UserFairness => self.user_fairness(Property::UserFairness),
            Property::FusionValidity => self.certificates(p),
            Property::FairFusion => self.certificates(p),
            Property::CorrectContribution => self.certificates(p),
            Property::LogSafety => self.log_safety(),
            Property::LogValidity => self.log_validity(),
            Property::LogFinality => self.log_finality(),
            Property::LogUserFairness => self.user_fairness(Property::LogUserFairness),
            Property::SignatureSoundness => self.signature_soundness(),
            Property::NetworkIntegrity => self.network_integrity(),
        }
    }

    // Chain level.

    fn agreement(&self) -> Verdict {
        let mut first: BTreeMap<u64, (ReplicaId, usize, BlockHash)> = BTreeMap::new();
        for (r, view) in self.correct_views() {
            for o in &view.outputs {
                match first.get(&o.instance) {
                    Some(&(s, sidx, h)) if s != r && h != o.hash => {
                        return Verdict::violation(
                            Property::Agreement,
                            vec![self.hidx, sidx, o.idx],
                            format!(
                                "{s} and {r} output different blocks at instance {}",
                                o.instance
                            ),
                        );
                    }
                    Some(_) => {}
                    None => {
                        first.insert(o.instance, (r, o.idx, o.hash));
                    }
                }
            }
        }
        Verdict::pass(Property::Agreement)
    }

    fn chain_validity(&self) -> Verdict {
        for (r, view) in self.correct_views() {
            for k in 0..view.contiguous {
                let o = &view.outputs[k];
                let problem = if k == 0 {
                    (!o.block.is_genesis())
                        .then(|| "instance 0 is not the genesis block".to_owned())
                } else if o.block.parent != Some(view.outputs[k - 1].hash) {
                    Some("parent pointer does not match".to_owned())
                } else if o.block.proposer().is_none() {
                    Some("no verifiable proposer signature".to_owned())
                } else if view.states[k].is_none() {
                    Some("transactions invalid on the prefix".to_owned())
                } else if self.is_frc() {
                    let prefix = view.states[k - 1].as_ref().expect("valid prefix");
                    self.certificate_problem(prefix, o.instance, o.block)
                } else {
                    None
                };
                if let Some(why) = problem {
                    let witness = std::iter::once(self.hidx)
                        .chain(view.prefix_witness(k + 1))
                        .collect();
                    return Verdict::violation(
                        Property::ChainValidity,
                        witness,
                        format!("{r} instance {}: {why}", o.instance),
                    );
                }
            }
        }
        Verdict::pass(Property::ChainValidity)
    }

    /// The certified-chain rule, recomputed.
    fn certificate_problem(
        &self,
        prefix: &AppState,
        instance: u64,
        block: &Block,
    ) -> Option<String> {
        let Some(cert) = &block.certificate else {
            return Some("missing certificate".to_owned());
        };
        if cert.instance != instance {
            return Some(format!("certificate for instance {}", cert.instance));
        }
        let mut senders = BTreeSet::new();
        for e in &cert.entries {
            if e.instance != instance || !e.verify_signature() {
                return Some(format!("entry of {} does not verify", e.sender));
            }
            if !senders.insert(e.sender) {
                return Some(format!("{} contributes twice", e.sender));
            }
        }
        if senders.len() <= self.header.f as usize {
            return Some(format!(
                "{} contributors, {} needed",
                senders.len(),
                self.header.f + 1
            ));
        }
        let fused = self
            .header
            .fusion
            .fuse_from_state(prefix, &contributions(&cert.entries));
        (fused.txs != block.txs)
            .then(|| "transactions differ from the fusion of the certificate".to_owned())
    }

    fn chain_finality(&self) -> Verdict {
        let mut decided: BTreeMap<u64, (usize, BlockHash)> = BTreeMap::new();
        for (idx, e) in self.indexed() {
            if let EventKind::RcDecided { instance, hash, .. } = &e.kind {
                match decided.get(instance) {
                    Some(&(first, h)) if h != *hash => {
                        return Verdict::violation(
                            Property::ChainFinality,
                            vec![self.hidx, first, idx],
                            format!("instance {instance} decided twice"),
                        );
                    }
                    Some(_) => {}
                    None => {
                        decided.insert(*instance, (idx, *hash));
                    }
                }
            }
        }
        for (r, view) in self.correct_views() {
            let mut seen: BTreeMap<u64, (usize, BlockHash)> = BTreeMap::new();
            for o in &view.outputs {
                match seen.get(&o.instance) {
                    Some(&(first, h)) if h != o.hash => {
                        return Verdict::violation(
                            Property::ChainFinality,
                            vec![self.hidx, first, o.idx],
                            format!("{r} output two blocks at instance {}", o.instance),
                        );
                    }
                    Some(_) => {}
                    None => {
                        seen.insert(o.instance, (o.idx, o.hash));
                    }
                }
            }
        }
        Verdict::pass(Property::ChainFinality)
    }

    fn termination(&self) -> Verdict {
        let horizon = self.header.horizon_instances;
        let behind: Vec<ReplicaId> = self
            .header
            .correct_replicas()
            .filter(|r| {
                self.views
                    .get(r)
                    .is_none_or(|v| v.contiguous == 0 || (v.contiguous as u64) <= horizon)
            })
            .collect();
        if behind.is_empty() {
            Verdict::pass(Property::Termination)
        } else {
            let names: Vec<String> = behind.iter().map(|r| r.to_string()).collect();
            Verdict::with(
                Property::Termination,
                Status::Inconclusive,
                format!("{} did not output instance {horizon}", names.join(", ")),
            )
        }
    }

    // Ledger level.

    fn valid_request(&self) -> Verdict {
        let mut last_snapshot: BTreeMap<ClientId, (usize, usize, BlockHash)> = BTreeMap::new();
        for (idx, e) in self.indexed() {
            let Some(c) = e.client() else { continue };
            match &e.kind {
                EventKind::ReadSnapshot { len, tip } => {
                    last_snapshot.insert(c, (idx, *len, *tip));
                }
                EventKind::RequestIssued { tx } if self.header.is_correct_client(c) => {
                    let Some((sidx, len, tip)) = last_snapshot.remove(&c) else {
                        continue;
                    };
                    // Any correct replica whose chain covers the snapshot.
                    let source = self
                        .correct_views()
                        .find(|(_, v)| v.len_before(sidx).is_some_and(|l| l >= len));
                    let Some((_, view)) = source else { continue };
                    let mut witness = vec![self.hidx, sidx, idx];
                    witness.extend(view.prefix_witness(len));
                    if len == 0 || view.outputs[len - 1].hash != tip {
                        return Verdict::violation(
                            Property::ValidRequest,
                            witness,
                            format!("{} read a chain no correct replica holds", tx.id()),
                        );
                    }
                    let valid = view.state_of_len(len).is_some_and(|s| s.check(tx).is_ok());
                    if !valid {
                        return Verdict::violation(
                            Property::ValidRequest,
                            witness,
                            format!(
                                "{} was requested although invalid on the client's read",
                                tx.id()
                            ),
                        );
                    }
                }
                _ => {}
            }
        }
        Verdict::pass(Property::ValidRequest)
    }

    /// Inputs of correct replicas at the ledger layer: `(event, instance, txs)`.
    fn ledger_inputs(&self, r: ReplicaId) -> Vec<(usize, u64, &'a [Transaction])> {
        let frc = self.is_frc();
        self.indexed()
            .filter(|(_, e)| e.replica() == Some(r))
            .filter_map(|(i, e)| match &e.kind {
                EventKind::FrcInput { instance, txs } if frc => {
                    Some((i, *instance, txs.as_slice()))
                }
                EventKind::RcInput { instance, block } if !frc => {
                    Some((i, *instance, block.txs.as_slice()))
                }
                _ => None,
            })
            .collect()
    }

    fn valid_input(&self) -> Verdict {
        for r in self.header.correct_replicas() {
            let mut received: BTreeSet<&Transaction> = BTreeSet::new();
            let frc = self.is_frc();
            for (idx, e) in self.indexed().filter(|(_, e)| e.replica() == Some(r)) {
                let txs = match &e.kind {
                    EventKind::ReqDelivered { tx, .. } => {
                        received.insert(tx);
                        continue;
                    }
                    EventKind::FrcInput { txs, .. } if frc => txs,
                    EventKind::RcInput { block, .. } if !frc => &block.txs,
                    _ => continue,
                };
                if let Some(tx) = txs.iter().find(|tx| !received.contains(tx)) {
                    return Verdict::violation(
                        Property::ValidInput,
                        vec![self.hidx, idx],
                        format!("{r} input {} without a request for it", tx.id()),
                    );
                }
            }
        }
        Verdict::pass(Property::ValidInput)
    }

    fn issued_by_correct(
        &self,
    ) -> impl Iterator<Item = (usize, &'a TraceEvent, &'a Transaction)> + '_ {
        self.indexed()
            .filter_map(|(i, e)| match (&e.kind, e.client()) {
                (EventKind::RequestIssued { tx }, Some(c)) if self.header.is_correct_client(c) => {
                    Some((i, e, tx))
                }
                _ => None,
            })
    }

    /// First delivery of `tx` to each replica after event `after`.
    fn receipts(&self, tx: &Transaction, after: usize) -> BTreeMap<ReplicaId, usize> {
        let mut out = BTreeMap::new();
        for (i, e) in self.indexed().skip(after + 1) {
            if let (EventKind::ReqDelivered { tx: t, .. }, Some(r)) = (&e.kind, e.replica()) {
                if t == tx {
                    out.entry(r).or_insert(i);
                }
            }
        }
        out
    }

    fn request_agreement(&self) -> Verdict {
        let end = self.end();
        let mut inconclusive = 0;
        for (idx, e, tx) in self.issued_by_correct() {
            let receipts = self.receipts(tx, idx);
            let Some(missing) = self
                .header
                .correct_replicas()
                .find(|r| !receipts.contains_key(r))
            else {
                continue;
            };
            let latest = e.tick.max(self.header.gst) + self.header.delta;
            match end {
                Some((eidx, etick, _)) if etick > latest => {
                    return Verdict::violation(
                        Property::RequestAgreement,
                        vec![self.hidx, idx, eidx],
                        format!(
                            "{missing} never received {} (due by tick {latest})",
                            tx.id()
                        ),
                    );
                }
                _ => inconclusive += 1,
            }
        }
        if inconclusive > 0 {
            Verdict::with(
                Property::RequestAgreement,
                Status::Inconclusive,
                format!("{inconclusive} requests still in flight at the end"),
            )
        } else {
            Verdict::pass(Property::RequestAgreement)
        }
    }

    fn finalised_anywhere(&self, tx: &Transaction) -> bool {
        self.correct_views()
            .any(|(_, v)| v.outputs.iter().any(|o| contains(&o.block.txs, tx)))
    }

    /// Whether appending `tx` after `t[..k]` on `prefix` is invalid for some
    /// `k` in `0..=t.len()`.
    fn invalid_somewhere(prefix: &AppState, t: &[Transaction], tx: &Transaction) -> bool {
        let mut state = prefix.clone();
        for k in 0..=t.len() {
            if k > 0 && state.apply(&t[k - 1]).is_err() {
                return true;
            }
            if state.check(tx).is_err() {
                return true;
            }
        }
        false
    }

    fn stubborn_input(&self) -> Verdict {
        let mut inconclusive = 0;
        for r in self.header.correct_replicas() {
            let inputs = self.ledger_inputs(r);
            let view = self.views.get(&r);
            let mut seen: BTreeSet<&Transaction> = BTreeSet::new();
            for (didx, e) in self.indexed() {
                let (EventKind::ReqDelivered { tx, .. }, Some(to)) = (&e.kind, e.replica()) else {
                    continue;
                };
                if to != r || !seen.insert(tx) {
                    continue;
                }
                let finalised =
                    view.is_some_and(|v| v.outputs.iter().any(|o| contains(&o.block.txs, tx)));
                if finalised {
                    continue;
                }
                // Inputs at the delivery instance or later; without r's
                // chain, those after the delivery.
                let current = view.and_then(|v| v.len_before(didx));
                let from_i0: Vec<_> = inputs
                    .iter()
                    .filter(|(i, instance, _)| {
                        current.map_or(*i > didx, |len| *instance as usize >= len)
                    })
                    .collect();
                let witnessed = from_i0.iter().any(|(_, instance, t)| {
                    !contains(t, tx)
                        && view
                            .and_then(|v| v.state_of_len(*instance as usize))
                            .is_some_and(|prefix| Self::invalid_somewhere(prefix, t, tx))
                });
                if witnessed || from_i0.last().is_some_and(|(_, _, t)| contains(t, tx)) {
                    continue;
                }
                let trailing: Vec<usize> = from_i0
                    .iter()
                    .rev()
                    .take_while(|(i, _, t)| *i > didx && !contains(t, tx))
                    .map(|(i, _, _)| *i)
                    .collect();
                if trailing.len() as u64 >= self.grace {
                    let mut witness = vec![self.hidx, didx];
                    witness.extend(trailing);
                    return Verdict::violation(
                        Property::StubbornInput,
                        witness,
                        format!("{r} left valid pending {} out of its last inputs", tx.id()),
                    );
                } else {
                    inconclusive += 1;
                }
            }
        }
        if inconclusive > 0 {
            Verdict::with(
                Property::StubbornInput,
                Status::Inconclusive,
                format!("{inconclusive} deliveries not yet followed by an input"),
            )
        } else {
            Verdict::pass(Property::StubbornInput)
        }
    }

    /// Per-replica states at each output, computed on the flattened log.
    fn log_states(&self, view: &ReplicaView<'_>) -> Vec<Option<AppState>> {
        let mut state = Some(self.header.validity.genesis_state());
        view.outputs[..view.contiguous]
            .iter()
            .map(|o| {
                for tx in &o.block.txs {
                    state = state.take().and_then(|mut s| s.apply(tx).ok().map(|()| s));
                }
                state.clone()
            })
            .collect()
    }

    fn user_fairness(&self, property: Property) -> Verdict {
        let log_view = property == Property::LogUserFairness;
        let states: BTreeMap<ReplicaId, Vec<Option<AppState>>> = self
            .correct_views()
            .map(|(r, v)| {
                (
                    r,
                    if log_view {
                        self.log_states(v)
                    } else {
                        v.states.clone()
                    },
                )
            })
            .collect();
        // Before its first output a replica holds the genesis chain.
        let genesis = self.header.validity.genesis_state();
        let state_at = |r: ReplicaId, len: usize| -> Option<&AppState> {
            if len == 0 {
                return Some(&genesis);
            }
            states.get(&r)?.get(len - 1)?.as_ref()
        };
        let decided: Vec<usize> = self
            .indexed()
            .filter(|(_, e)| matches!(e.kind, EventKind::RcDecided { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut inconclusive = 0;
        for (idx, _, tx) in self.issued_by_correct() {
            let governing = self.correct_views().find(|(r, v)| {
                v.len_before(idx)
                    .and_then(|len| state_at(*r, len))
                    .is_some_and(|s| s.check(tx).is_ok())
            });
            let Some((r, view)) = governing else { continue };
            if self.finalised_anywhere(tx) {
                continue;
            }
            let issued_len = view.len_before(idx).expect("governing replica has a chain");
            let invalidated = (issued_len + 1..=view.contiguous).any(|len| {
                view.outputs[len - 1].idx > idx
                    && state_at(r, len).is_some_and(|s| s.check(tx).is_err())
            });
            if invalidated {
                continue;
            }
            let receipts = self.receipts(tx, idx);
            if self
                .header
                .correct_replicas()
                .any(|s| !receipts.contains_key(&s))
            {
                inconclusive += 1;
                continue;
            }
            let last = *receipts.values().max().expect("n >= 1");
            let after: Vec<usize> = decided.iter().copied().filter(|&d| d > last).collect();
            if (after.len() as u64) < self.grace {
                inconclusive += 1;
                continue;
            }
            let mut witness = vec![self.hidx, idx];
            witness.extend(view.outputs.iter().map(|o| o.idx));
            witness.extend(receipts.values().copied());
            witness.extend(after.iter().take(self.grace as usize));
            return Verdict::violation(
                property,
                witness,
                format!(
                    "{} from {} still valid for {r} and pending {} decided instances after universal receipt",
                    tx.id(),
                    tx.client,
                    after.len()
                ),
            );
        }
        if inconclusive > 0 {
            Verdict::with(
                property,
                Status::Inconclusive,
                format!(
                    "{inconclusive} transactions pending within grace or not yet received by all"
                ),
            )
        } else {
            Verdict::pass(property)
        }
    }

    // Fair layer.

    fn certificates(&self, property: Property) -> Verdict {
        if !self.is_frc() {
            return Verdict::with(property, Status::NotApplicable, "not a fair-consensus run");
        }
        let mut checked: BTreeSet<(u64, BlockHash)> = BTreeSet::new();
        for (r, view) in self.correct_views() {
            for k in 1..view.contiguous {
                let o = &view.outputs[k];
                let Some(prefix) = view.states[k - 1].as_ref() else {
                    break;
                };
                if !checked.insert((o.instance, o.hash)) {
                    continue;
                }
                let problem = match property {
                    Property::FusionValidity => {
                        self.certificate_problem(prefix, o.instance, o.block)
                    }
                    Property::FairFusion => o.block.certificate.as_ref().and_then(|c| {
                        check_fair_fusion(prefix, &contributions(&c.entries), &o.block.txs)
                            .err()
                            .map(|v| format!("{} dropped although valid everywhere", v.tx.id()))
                    }),
                    _ => {
                        let correct = o.block.certificate.as_ref().is_some_and(|c| {
                            c.entries.iter().any(|e| {
                                self.header.is_correct_replica(e.sender) && e.verify_signature()
                            })
                        });
                        (!correct).then(|| "no correct replica contributed".to_owned())
                    }
                };
                if let Some(why) = problem {
                    let witness = std::iter::once(self.hidx)
                        .chain(view.prefix_witness(k + 1))
                        .collect();
                    return Verdict::violation(
                        property,
                        witness,
                        format!("{r} instance {}: {why}", o.instance),
                    );
                }
            }
        }
        Verdict::pass(property)
    }

    // Log level.

    fn log_safety(&self) -> Verdict {
        // Position -> (tx, replica, index of its block in the replica's outputs).
        let mut reference: Vec<(&Transaction, ReplicaId, usize)> = Vec::new();
        for (r, view) in self.correct_views() {
            let mut pos = 0;
            for (k, o) in view.outputs[..view.contiguous].iter().enumerate() {
                for tx in &o.block.txs {
                    match reference.get(pos) {
                        Some(&(t, s, sk)) if t != tx => {
                            let mut witness = vec![self.hidx];
                            witness.extend(view.prefix_witness(k + 1));
                            witness.extend(self.views[&s].prefix_witness(sk + 1));
                            return Verdict::violation(
                                Property::LogSafety,
                                witness,
                                format!("{s} and {r} commit different transactions at log position {pos}"),
                            );
                        }
                        Some(_) => {}
                        None => reference.push((tx, r, k)),
                    }
                    pos += 1;
                }
            }
        }
        Verdict::pass(Property::LogSafety)
    }

    fn log_validity(&self) -> Verdict {
        for (r, view) in self.correct_views() {
            let states = self.log_states(view);
            if let Some(k) = states.iter().position(Option::is_none) {
                let witness = std::iter::once(self.hidx)
                    .chain(view.prefix_witness(k + 1))
                    .collect();
                return Verdict::violation(
                    Property::LogValidity,
                    witness,
                    format!(
                        "{r}'s log is invalid after instance {}",
                        view.outputs[k].instance
                    ),
                );
            }
        }
        Verdict::pass(Property::LogValidity)
    }

    fn log_finality(&self) -> Verdict {
        for r in self.header.correct_replicas() {
            let mut by_instance: BTreeMap<u64, (usize, BlockHash)> = BTreeMap::new();
            let mut committed_to = 0usize;
            let mut last_commit: Option<usize> = None;
            let mut last_output: Option<(usize, &Block)> = None;
            let mut outputs = Vec::new();
            let mut log_len = 0usize;
            for (idx, e) in self.indexed().filter(|(_, e)| e.replica() == Some(r)) {
                match &e.kind {
                    EventKind::Output { instance, block } => {
                        let h = block.hash();
                        if let Some(&(first, fh)) = by_instance.get(instance) {
                            if fh != h {
                                return Verdict::violation(
                                    Property::LogFinality,
                                    vec![self.hidx, first, idx],
                                    format!("{r} rewrote the log positions of instance {instance}"),
                                );
                            }
                        }
                        if !by_instance.contains_key(instance) {
                            by_instance.insert(*instance, (idx, h));
                            log_len += block.txs.len();
                        }
                        outputs.push(idx);
                        last_output = Some((idx, block));
                    }
                    EventKind::LogCommitted { start, txs } => {
                        if *start < committed_to {
                            let mut witness = vec![self.hidx, idx];
                            witness.extend(last_commit);
                            return Verdict::violation(
                                Property::LogFinality,
                                witness,
                                format!("{r} committed position {start} twice"),
                            );
                        }
                        let matches_output = last_output.is_some_and(|(_, b)| {
                            b.txs.iter().map(Transaction::id).eq(txs.iter().copied())
                        });
                        if !matches_output {
                            let mut witness = vec![self.hidx, idx];
                            witness.extend(last_output.map(|(i, _)| i));
                            return Verdict::violation(
                                Property::LogFinality,
                                witness,
                                format!("{r} committed positions not matching its output"),
                            );
                        }
                        if start + txs.len() != log_len {
                            let mut witness = vec![self.hidx, idx];
                            witness.extend(&outputs);
                            return Verdict::violation(
                                Property::LogFinality,
                                witness,
                                format!("{r} committed positions {start}.. but its log has {log_len} entries"),
                            );
                        }
                        committed_to = start + txs.len();
                        last_commit = Some(idx);
                    }
                    _ => {}
                }
            }
        }
        Verdict::pass(Property::LogFinality)
    }

    // Integrity.

    fn signature_soundness(&self) -> Verdict {
        for (idx, e) in self.indexed() {
            let bad = match (&e.kind, e.process) {
                (EventKind::RequestIssued { tx }, Some(p)) => {
                    !tx.verify_signature() || p != tx.client.into()
                }
                (EventKind::ReqDelivered { tx, .. }, _) => !tx.verify_signature(),
                (EventKind::SubPropSent { proposal, .. }, Some(p)) => {
                    !proposal.verify_signature() || p != proposal.sender.into()
                }
                (EventKind::RcInput { block, .. }, _) => {
                    e.replica().is_none_or(|r| !block.verify_proposer(r))
                }
                _ => false,
            };
            if bad {
                return Verdict::violation(
                    Property::SignatureSoundness,
                    vec![self.hidx, idx],
                    "signature does not bind the acting process",
                );
            }
        }
        Verdict::pass(Property::SignatureSoundness)
    }

    fn network_integrity(&self) -> Verdict {
        enum Sent<'s> {
            Req(ReplicaId, ClientId, crate::types::TxId),
            Sub(ReplicaId, ReplicaId, &'s SubProposal),
        }
        let mut sent: BTreeMap<EnvelopeId, (usize, Sent<'a>)> = BTreeMap::new();
        let mut delivered: BTreeMap<EnvelopeId, usize> = BTreeMap::new();
        for (idx, e) in self.indexed() {
            match &e.kind {
                EventKind::ReqSent { envelope, to, tx } => {
                    if let Some(c) = e.client() {
                        sent.insert(*envelope, (idx, Sent::Req(*to, c, *tx)));
                    }
                }
                EventKind::SubPropSent {
                    envelope,
                    to,
                    proposal,
                } => {
                    if let Some(r) = e.replica() {
                        sent.insert(*envelope, (idx, Sent::Sub(*to, r, proposal)));
                    }
                }
                EventKind::ReqDelivered { envelope, .. }
                | EventKind::SubPropDelivered { envelope, .. } => {
                    let Some(at) = e.replica() else { continue };
                    let ok = match (sent.get(envelope), &e.kind) {
                        (
                            Some((_, Sent::Req(to, c, id))),
                            EventKind::ReqDelivered { from, tx, .. },
                        ) => *to == at && c == from && *id == tx.id(),
                        (
                            Some((_, Sent::Sub(to, s, sp))),
                            EventKind::SubPropDelivered { from, instance, .. },
                        ) => *to == at && s == from && sp.instance == *instance,
                        _ => false,
                    };
                    if !ok {
                        let mut witness = vec![self.hidx, idx];
                        witness.extend(sent.get(envelope).map(|(i, _)| *i));
                        return Verdict::violation(
                            Property::NetworkIntegrity,
                            witness,
                            format!(
                                "delivery of envelope {} at {at} matches no send",
                                envelope.0
                            ),
                        );
                    }
                    if let Some(first) = delivered.insert(*envelope, idx) {
                        let witness = vec![self.hidx, sent[envelope].0, first, idx];
                        return Verdict::violation(
                            Property::NetworkIntegrity,
                            witness,
                            format!("envelope {} delivered twice", envelope.0),
                        );
                    }
                }
                _ => {}
            }
        }
        Verdict::pass(Property::NetworkIntegrity)
    }
}

fn contributions(entries: &[SubProposal]) -> Vec<Contribution<'_>> {
    entries
        .iter()
        .map(|e| Contribution {
            contributor: e.sender,
            txs: &e.txs,
        })
        .collect()
}

/// The sub-trace made of `witness`, in order.
pub fn restrict(events: &[TraceEvent], witness: &[usize]) -> Vec<TraceEvent> {
    witness
        .iter()
        .filter_map(|&i| events.get(i).cloned())
        .collect()
}
