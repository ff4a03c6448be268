//! Direct, deliberately naive evaluation of each property definition: the
//! state of every replica is materialised before every event and validity
//! is always recomputed from whole chains.

use std::collections::{BTreeMap, BTreeSet};

use fairledger::checker::{Property, Status};
use fairledger::trace::{EventKind, RunHeader, TraceEvent};
use fairledger::types::{flatten_chain_to_log, Block, Chain, Log, Process, ReplicaId, Transaction};
use fairledger::validity::Contribution;

type Chains = BTreeMap<ReplicaId, Vec<Block>>;

struct Oracle<'a> {
    events: &'a [TraceEvent],
    h: &'a RunHeader,
    grace: u64,
    /// `before[i]`: chains of correct replicas before event `i`; one extra
    /// entry for the end.
    before: Vec<Chains>,
}

fn verdict(violation: bool, inconclusive: bool) -> Status {
    if violation {
        Status::Violation
    } else if inconclusive {
        Status::Inconclusive
    } else {
        Status::Pass
    }
}

fn is_prefix(a: &[Block], b: &[Block]) -> bool {
    a.len() <= b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}

pub fn evaluate(events: &[TraceEvent], grace: u64) -> BTreeMap<Property, Status> {
    let h = events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::RunStarted { header } => Some(header),
            _ => None,
        })
        .expect("header");
    let mut before = Vec::with_capacity(events.len() + 1);
    let mut chains: Chains = h.correct_replicas().map(|r| (r, Vec::new())).collect();
    for e in events {
        before.push(chains.clone());
        if let (EventKind::Output { instance, block }, Some(r)) = (&e.kind, replica(e)) {
            if let Some(c) = chains.get_mut(&r) {
                let k = *instance as usize;
                if k <= c.len() {
                    c.truncate(k);
                    c.push(block.clone());
                }
            }
        }
    }
    before.push(chains);
    let o = Oracle {
        events,
        h,
        grace,
        before,
    };
    Property::ALL.iter().map(|&p| (p, o.eval(p))).collect()
}

fn replica(e: &TraceEvent) -> Option<ReplicaId> {
    match e.process {
        Some(Process::Replica(r)) => Some(r),
        _ => None,
    }
}

fn client_correct(h: &RunHeader, e: &TraceEvent) -> bool {
    matches!(e.process, Some(Process::Client(c)) if h.is_correct_client(c))
}

impl Oracle<'_> {
    fn eval(&self, p: Property) -> Status {
        match p {
            Property::Agreement => self.agreement(),
            Property::ChainValidity => self.chain_validity(),
            Property::ChainFinality => self.chain_finality(),
            Property::Termination => self.termination(),
            Property::ValidRequest => self.valid_request(),
            Property::ValidInput => self.valid_input(),
            Property::RequestAgreement => self.request_agreement(),
            Property::StubbornInput => self.stubborn_input(),
            Property::UserFairness => self.user_fairness(false),
            Property::LogUserFairness => self.user_fairness(true),
            Property::FusionValidity | Property::FairFusion | Property::CorrectContribution => {
                self.fusion(p)
            }
            Property::LogSafety => self.log_safety(),
            Property::LogValidity => self.log_validity(),
            Property::LogFinality => self.log_finality(),
            Property::SignatureSoundness => self.signatures(),
            Property::NetworkIntegrity => self.network(),
        }
    }

    fn final_chains(&self) -> &Chains {
        self.before.last().unwrap()
    }

    fn valid(&self, blocks: &[Block]) -> bool {
        self.h.validity.valid_chain(blocks) == Ok(true)
    }

    /// `validChain(chain ⌢ [txs])`.
    fn valid_with(&self, chain: &[Block], txs: Vec<Transaction>) -> bool {
        let Some(tip) = chain.last() else {
            return false;
        };
        let mut c = chain.to_vec();
        c.push(Block::unsigned(tip.hash(), txs));
        self.valid(&c)
    }

    fn log_of(chain: &[Block]) -> Log {
        flatten_chain_to_log(&Chain::from_blocks(chain.to_vec()).unwrap_or_default())
    }

    fn agreement(&self) -> Status {
        let bad = self.before.iter().any(|chains| {
            let cs: Vec<&Vec<Block>> = chains.values().collect();
            cs.iter().enumerate().any(|(i, a)| {
                cs[i + 1..]
                    .iter()
                    .any(|b| !is_prefix(a, b) && !is_prefix(b, a))
            })
        });
        verdict(bad, false)
    }

    fn chain_validity(&self) -> Status {
        for (i, e) in self.events.iter().enumerate() {
            let (EventKind::Output { .. }, Some(r)) = (&e.kind, replica(e)) else {
                continue;
            };
            let Some(chain) = self.before[i + 1].get(&r) else {
                continue;
            };
            let ok = chain.first() == Some(&Block::genesis())
                && self.valid(chain)
                && chain[1..].iter().all(|b| b.proposer().is_some())
                && (!self.h.construction.uses_frc()
                    || (1..chain.len()).all(|k| self.certified(&chain[..k], k as u64, &chain[k])));
            if !ok {
                return Status::Violation;
            }
        }
        Status::Pass
    }

    fn certified(&self, prefix: &[Block], instance: u64, b: &Block) -> bool {
        let Some(cert) = &b.certificate else {
            return false;
        };
        let senders: BTreeSet<ReplicaId> = cert.entries.iter().map(|e| e.sender).collect();
        let coll: Vec<Contribution<'_>> = cert
            .entries
            .iter()
            .map(|e| Contribution {
                contributor: e.sender,
                txs: &e.txs,
            })
            .collect();
        cert.instance == instance
            && cert
                .entries
                .iter()
                .all(|e| e.instance == instance && e.verify_signature())
            && senders.len() == cert.entries.len()
            && senders.len() > self.h.f as usize
            && self
                .h
                .fusion
                .fuse(&self.h.validity, prefix, &coll)
                .is_ok_and(|f| f.txs == b.txs)
    }

    fn chain_finality(&self) -> Status {
        let mut decided: BTreeMap<u64, BTreeSet<_>> = BTreeMap::new();
        let mut outputs: BTreeMap<(ReplicaId, u64), BTreeSet<_>> = BTreeMap::new();
        for e in self.events {
            match (&e.kind, replica(e)) {
                (EventKind::RcDecided { instance, hash, .. }, _) => {
                    decided.entry(*instance).or_default().insert(*hash);
                }
                (EventKind::Output { instance, block }, Some(r))
                    if self.h.is_correct_replica(r) =>
                {
                    outputs
                        .entry((r, *instance))
                        .or_default()
                        .insert(block.hash());
                }
                _ => {}
            }
        }
        verdict(
            decided
                .values()
                .chain(outputs.values())
                .any(|s| s.len() > 1),
            false,
        )
    }

    fn termination(&self) -> Status {
        let done = self
            .final_chains()
            .values()
            .all(|c| c.len() as u64 > self.h.horizon_instances);
        verdict(false, !done)
    }

    fn valid_request(&self) -> Status {
        for (i, e) in self.events.iter().enumerate() {
            let EventKind::RequestIssued { tx } = &e.kind else {
                continue;
            };
            if !client_correct(self.h, e) {
                continue;
            }
            let prev = self.events[..i]
                .iter()
                .rev()
                .find(|p| p.process == e.process);
            let Some(EventKind::ReadSnapshot { len, tip }) = prev.map(|p| &p.kind) else {
                continue;
            };
            let longest = self.before[i]
                .values()
                .max_by_key(|c| c.len())
                .cloned()
                .unwrap_or_default();
            if *len == 0 || *len > longest.len() {
                continue;
            }
            let prefix = &longest[..*len];
            if prefix.last().unwrap().hash() != *tip || !self.valid_with(prefix, vec![tx.clone()]) {
                return Status::Violation;
            }
        }
        Status::Pass
    }

    /// `(event, instance, txs)` inputs of `r` at the ledger layer.
    fn inputs(&self, r: ReplicaId) -> Vec<(usize, u64, &[Transaction])> {
        let frc = self.h.construction.uses_frc();
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| replica(e) == Some(r))
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

    fn delivered_before(&self, r: ReplicaId, tx: &Transaction, i: usize) -> bool {
        self.events[..i].iter().any(|e| {
            replica(e) == Some(r)
                && matches!(&e.kind, EventKind::ReqDelivered { tx: t, .. } if t == tx)
        })
    }

    fn valid_input(&self) -> Status {
        for r in self.h.correct_replicas() {
            for (i, _, txs) in self.inputs(r) {
                if txs.iter().any(|tx| !self.delivered_before(r, tx, i)) {
                    return Status::Violation;
                }
            }
        }
        Status::Pass
    }

    fn issued(&self) -> Vec<(usize, &TraceEvent, &Transaction)> {
        self.events
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match &e.kind {
                EventKind::RequestIssued { tx } if client_correct(self.h, e) => Some((i, e, tx)),
                _ => None,
            })
            .collect()
    }

    /// First delivery of `tx` to `r` after event `i`.
    fn receipt(&self, r: ReplicaId, tx: &Transaction, i: usize) -> Option<usize> {
        (i + 1..self.events.len()).find(|&j| {
            let e = &self.events[j];
            replica(e) == Some(r)
                && matches!(&e.kind, EventKind::ReqDelivered { tx: t, .. } if t == tx)
        })
    }

    fn end(&self) -> Option<&TraceEvent> {
        self.events
            .iter()
            .find(|e| matches!(e.kind, EventKind::RunEnded { .. }))
    }

    fn request_agreement(&self) -> Status {
        let (mut bad, mut open) = (false, false);
        for (i, e, tx) in self.issued() {
            if self
                .h
                .correct_replicas()
                .all(|r| self.receipt(r, tx, i).is_some())
            {
                continue;
            }
            let due = e.tick.max(self.h.gst) + self.h.delta;
            if self.end().is_some_and(|end| end.tick > due) {
                bad = true;
            } else {
                open = true;
            }
        }
        verdict(bad, open)
    }

    fn stubborn_input(&self) -> Status {
        let (mut bad, mut open) = (false, false);
        for r in self.h.correct_replicas() {
            let inputs = self.inputs(r);
            let final_chain = &self.final_chains()[&r];
            let mut seen = BTreeSet::new();
            for (d, e) in self.events.iter().enumerate() {
                let EventKind::ReqDelivered { tx, .. } = &e.kind else {
                    continue;
                };
                if replica(e) != Some(r) || !seen.insert(tx) {
                    continue;
                }
                // (i) finalised.
                if final_chain.iter().any(|b| b.txs.contains(tx)) {
                    continue;
                }
                let at = self.before[d][&r].len() as u64;
                let from_i0: Vec<_> = inputs.iter().filter(|(_, k, _)| *k >= at).collect();
                // (ii) invalid at some position of an input.
                let witnessed = from_i0.iter().any(|(_, k, t)| {
                    let k = *k as usize;
                    !t.contains(tx)
                        && final_chain.len() >= k
                        && k > 0
                        && (0..=t.len()).any(|m| {
                            let mut seq = t[..m].to_vec();
                            seq.push(tx.clone());
                            !self.valid_with(&final_chain[..k], seq)
                        })
                });
                // (iii) included from some instance on.
                let included = from_i0.last().is_some_and(|(_, _, t)| t.contains(tx));
                if witnessed || included {
                    continue;
                }
                let trailing = from_i0
                    .iter()
                    .rev()
                    .take_while(|(i, _, t)| *i > d && !t.contains(tx))
                    .count() as u64;
                if trailing >= self.grace {
                    bad = true;
                } else {
                    open = true;
                }
            }
        }
        verdict(bad, open)
    }

    fn user_fairness(&self, log_view: bool) -> Status {
        let genesis = [Block::genesis()];
        let valid_on = |chain: &[Block], tx: &Transaction| -> bool {
            let chain = if chain.is_empty() {
                &genesis[..]
            } else {
                chain
            };
            if log_view {
                let mut log = Self::log_of(chain);
                if !self.h.validity.valid_log(&log) {
                    return false;
                }
                log.txs.push(tx.clone());
                self.h.validity.valid_log(&log)
            } else {
                self.valid_with(chain, vec![tx.clone()])
            }
        };
        let finalised = |tx: &Transaction| -> bool {
            self.final_chains().values().any(|c| {
                if log_view {
                    Self::log_of(c).txs.contains(tx)
                } else {
                    c.iter().any(|b| b.txs.contains(tx))
                }
            })
        };
        let (mut bad, mut open) = (false, false);
        for (i, _, tx) in self.issued() {
            let Some(r) = self
                .h
                .correct_replicas()
                .find(|r| valid_on(&self.before[i][r], tx))
            else {
                continue;
            };
            if finalised(tx) {
                continue;
            }
            let invalidated = (i + 1..self.events.len()).any(|j| {
                replica(&self.events[j]) == Some(r)
                    && matches!(self.events[j].kind, EventKind::Output { .. })
                    && !valid_on(&self.before[j + 1][&r], tx)
            });
            if invalidated {
                continue;
            }
            let receipts: Option<Vec<usize>> = self
                .h
                .correct_replicas()
                .map(|s| self.receipt(s, tx, i))
                .collect();
            let Some(receipts) = receipts else {
                open = true;
                continue;
            };
            let last = receipts.into_iter().max().unwrap();
            let decided_after = self.events[last + 1..]
                .iter()
                .filter(|e| matches!(e.kind, EventKind::RcDecided { .. }))
                .count() as u64;
            if decided_after >= self.grace {
                bad = true;
            } else {
                open = true;
            }
        }
        verdict(bad, open)
    }

    fn fusion(&self, p: Property) -> Status {
        if !self.h.construction.uses_frc() {
            return Status::NotApplicable;
        }
        for chain in self.final_chains().values() {
            for k in 1..chain.len() {
                if !self.valid(&chain[..k]) {
                    break;
                }
                let b = &chain[k];
                let ok = match p {
                    Property::FusionValidity => self.certified(&chain[..k], k as u64, b),
                    Property::FairFusion => b.certificate.as_ref().is_none_or(|c| {
                        c.entries.iter().flat_map(|e| &e.txs).all(|tx| {
                            b.txs.contains(tx)
                                || (0..=b.txs.len()).any(|m| {
                                    let mut seq = b.txs[..m].to_vec();
                                    seq.push(tx.clone());
                                    !self.valid_with(&chain[..k], seq)
                                })
                        })
                    }),
                    _ => b.certificate.as_ref().is_some_and(|c| {
                        c.entries
                            .iter()
                            .any(|e| self.h.is_correct_replica(e.sender) && e.verify_signature())
                    }),
                };
                if !ok {
                    return Status::Violation;
                }
            }
        }
        Status::Pass
    }

    fn log_safety(&self) -> Status {
        let logs: Vec<Log> = self
            .final_chains()
            .values()
            .map(|c| Self::log_of(c))
            .collect();
        let bad = logs.iter().enumerate().any(|(i, a)| {
            logs[i + 1..]
                .iter()
                .any(|b| a.txs.iter().zip(&b.txs).any(|(x, y)| x != y))
        });
        verdict(bad, false)
    }

    fn log_validity(&self) -> Status {
        for (i, e) in self.events.iter().enumerate() {
            let (EventKind::Output { .. }, Some(r)) = (&e.kind, replica(e)) else {
                continue;
            };
            let Some(chain) = self.before[i + 1].get(&r) else {
                continue;
            };
            let log = Self::log_of(chain);
            if !(0..=log.len()).all(|k| {
                self.h.validity.valid_log(&Log {
                    txs: log.txs[..k].to_vec(),
                })
            }) {
                return Status::Violation;
            }
        }
        Status::Pass
    }

    fn log_finality(&self) -> Status {
        for r in self.h.correct_replicas() {
            let mut prev = Log::default();
            let mut committed_to = 0;
            for (i, e) in self.events.iter().enumerate() {
                if replica(e) != Some(r) {
                    continue;
                }
                match &e.kind {
                    EventKind::Output { .. } => {
                        let now = Self::log_of(&self.before[i + 1][&r]);
                        if !prev.txs.iter().zip(&now.txs).all(|(a, b)| a == b)
                            || now.len() < prev.len()
                        {
                            return Status::Violation;
                        }
                        prev = now;
                    }
                    EventKind::LogCommitted { start, txs } => {
                        let now = Self::log_of(&self.before[i][&r]);
                        let fresh: Vec<_> =
                            now.txs.iter().skip(*start).map(Transaction::id).collect();
                        if *start < committed_to || *start + txs.len() != now.len() || fresh != *txs
                        {
                            return Status::Violation;
                        }
                        committed_to = start + txs.len();
                    }
                    _ => {}
                }
            }
        }
        Status::Pass
    }

    fn signatures(&self) -> Status {
        let bad = self.events.iter().any(|e| match (&e.kind, e.process) {
            (EventKind::RequestIssued { tx }, Some(p)) => {
                !tx.verify_signature() || p != Process::Client(tx.client)
            }
            (EventKind::ReqDelivered { tx, .. }, _) => !tx.verify_signature(),
            (EventKind::SubPropSent { proposal, .. }, Some(p)) => {
                !proposal.verify_signature() || p != Process::Replica(proposal.sender)
            }
            (EventKind::RcInput { block, .. }, _) => {
                replica(e).is_none_or(|r| !block.verify_proposer(r))
            }
            _ => false,
        });
        verdict(bad, false)
    }

    fn network(&self) -> Status {
        let mut delivered = BTreeSet::new();
        for (i, e) in self.events.iter().enumerate() {
            let ok = match &e.kind {
                EventKind::ReqDelivered { envelope, from, tx } => {
                    delivered.insert(*envelope)
                        && self.events[..i].iter().any(|s| {
                            matches!(&s.kind, EventKind::ReqSent { envelope: en, to, tx: id }
                                if en == envelope && Some(*to) == replica(e) && *id == tx.id()
                                    && s.process == Some(Process::Client(*from)))
                        })
                }
                EventKind::SubPropDelivered { envelope, from, instance } => {
                    delivered.insert(*envelope)
                        && self.events[..i].iter().any(|s| {
                            matches!(&s.kind, EventKind::SubPropSent { envelope: en, to, proposal }
                                if en == envelope && Some(*to) == replica(e) && proposal.instance == *instance
                                    && s.process == Some(Process::Replica(*from)))
                        })
                }
                _ => true,
            };
            if !ok {
                return Status::Violation;
            }
        }
        Status::Pass
    }
}
