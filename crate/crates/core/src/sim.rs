//! The discrete-event engine running a ledger construction end to end.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::ReplicaStrategy;
use crate::constructions::{read, ClientState, Construction, ReplicaPool};
use crate::frc::{fused_block, CertifiedRule, FrcState};
use crate::netsim::{DelayPolicy, Envelope, NetError, Network, Scheduled, SimClock, Tick, Traffic};
use crate::rc::{BlockValidator, PlainRule, RcEngine, RcError, SelectionPolicy};
use crate::scenario::{ConfigError, Scenario};
use crate::trace::{EndReason, EventKind, RunHeader, TraceEvent};
use crate::types::{
    Block, Chain, ClientId, Process, ReplicaId, SigningKey, SubProposal, Transaction,
};

/// Overrides for systematic exploration.
#[derive(Default)]
pub struct SimHooks {
    pub selection: Option<Box<dyn SelectionPolicy + Send>>,
    pub delay: Option<Box<dyn DelayPolicy + Send>>,
    /// Tick of the genesis output.
    pub start_tick: Tick,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario has no construction")]
    NoConstruction,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rc(#[from] RcError),
}

pub fn simulate(s: &Scenario) -> Result<Vec<TraceEvent>, SimError> {
    simulate_with(s, SimHooks::default())
}

pub fn simulate_with(s: &Scenario, hooks: SimHooks) -> Result<Vec<TraceEvent>, SimError> {
    s.validate()?;
    let construction = s.construction.ok_or(SimError::NoConstruction)?;
    Engine::new(s, construction, hooks).run()
}

#[derive(Clone, Debug)]
enum Message {
    Req(Transaction),
    SubProp(SubProposal),
}

#[derive(Clone, Copy, Debug)]
enum Timer {
    Output { replica: ReplicaId, instance: u64 },
    Decide { instance: u64 },
    Request { index: usize },
}

struct Replica {
    key: SigningKey,
    corrupt: bool,
    pool: ReplicaPool,
    frc: FrcState,
    last_output: Option<u64>,
    /// Instances for which a censoring aggregator has input a clean block,
    /// or any block.
    clean_input: BTreeSet<u64>,
    any_input: BTreeSet<u64>,
}

struct Engine<'a> {
    s: &'a Scenario,
    construction: Construction,
    net: Network<Message, Timer>,
    rc: RcEngine,
    policy: Box<dyn SelectionPolicy + Send>,
    validator: Box<dyn BlockValidator>,
    strategy: ReplicaStrategy,
    replicas: Vec<Replica>,
    clients: BTreeMap<ClientId, ClientState>,
    decided_at: BTreeMap<Transaction, u64>,
    decide_scheduled: BTreeSet<u64>,
    output_horizon: Vec<Tick>,
    trace: Vec<TraceEvent>,
}

impl<'a> Engine<'a> {
    fn new(s: &'a Scenario, construction: Construction, hooks: SimHooks) -> Self {
        let adv = &s.adversary;
        let corrupt: Vec<Process> = adv
            .corrupt_replicas
            .iter()
            .map(|&r| Process::Replica(r))
            .chain(adv.corrupt_clients.iter().map(|&c| Process::Client(c)))
            .collect();
        let delay = hooks
            .delay
            .unwrap_or_else(|| adv.pre_gst_delay.build(adv.rushing));
        let clock = SimClock::new(s.gst, s.delta);
        let net = Network::new(
            clock,
            s.n,
            corrupt,
            delay,
            ChaCha8Rng::seed_from_u64(s.seed),
        );
        let validator: Box<dyn BlockValidator> = if construction.uses_frc() {
            Box::new(CertifiedRule {
                f: s.f,
                fusion: s.fusion,
            })
        } else {
            Box::new(PlainRule)
        };
        let replicas = (0..s.n)
            .map(ReplicaId)
            .map(|id| Replica {
                key: SigningKey::issue(id),
                corrupt: adv.is_corrupt_replica(id),
                pool: ReplicaPool::new(),
                frc: FrcState::new(),
                last_output: None,
                clean_input: BTreeSet::new(),
                any_input: BTreeSet::new(),
            })
            .collect();
        let mut engine = Engine {
            s,
            construction,
            net,
            rc: RcEngine::new(s.n, adv.corrupt_replicas.clone(), &s.validity),
            policy: hooks
                .selection
                .unwrap_or_else(|| adv.rc_policy.build(s.seed)),
            validator,
            strategy: adv.replica_strategy.clone(),
            replicas,
            clients: BTreeMap::new(),
            decided_at: BTreeMap::new(),
            decide_scheduled: BTreeSet::new(),
            output_horizon: vec![0; s.n as usize],
            trace: Vec::new(),
        };
        engine.start(hooks.start_tick);
        engine
    }

    fn start(&mut self, start_tick: Tick) {
        let s = self.s;
        let header = RunHeader {
            n: s.n,
            f: s.f,
            seed: s.seed,
            gst: s.gst,
            delta: s.delta,
            horizon_instances: s.horizon_instances,
            max_block_size: s.max_block_size,
            construction: self.construction,
            validity: s.validity.clone(),
            fusion: s.fusion,
            corrupt_replicas: s.adversary.corrupt_replicas.clone(),
            corrupt_clients: s.adversary.corrupt_clients.clone(),
            grace: s.grace,
        };
        self.emit(None, EventKind::RunStarted { header });
        for r in 0..s.n {
            self.net.schedule(
                start_tick,
                Timer::Output {
                    replica: ReplicaId(r),
                    instance: 0,
                },
            );
        }
        for (index, w) in s.workload.iter().enumerate() {
            self.net.schedule(w.tick, Timer::Request { index });
        }
    }

    fn emit(&mut self, process: Option<Process>, kind: EventKind) {
        self.trace.push(TraceEvent {
            tick: self.net.now(),
            process,
            kind,
        });
    }

    fn finished(&self) -> bool {
        self.replicas
            .iter()
            .filter(|r| !r.corrupt)
            .all(|r| r.last_output.is_some_and(|i| i >= self.s.horizon_instances))
    }

    fn run(mut self) -> Result<Vec<TraceEvent>, SimError> {
        let budget = self.s.max_ticks();
        let reason = loop {
            if self.finished() {
                break EndReason::Horizon;
            }
            match self.net.next_tick() {
                None => break EndReason::Quiescent,
                Some(t) if t > budget => break EndReason::MaxTicks,
                Some(_) => {}
            }
            match self.net.step().expect("peeked") {
                Scheduled::Deliver(env) => self.on_deliver(env)?,
                Scheduled::Timer(Timer::Output { replica, instance }) => {
                    self.on_output(replica, instance)?
                }
                Scheduled::Timer(Timer::Decide { instance }) => self.on_decide(instance),
                Scheduled::Timer(Timer::Request { index }) => self.on_request(index)?,
            }
        };
        let undelivered = self.net.in_flight();
        self.emit(
            None,
            EventKind::RunEnded {
                undelivered,
                reason,
            },
        );
        Ok(self.trace)
    }

    fn replica(&self, r: ReplicaId) -> &Replica {
        &self.replicas[r.0 as usize]
    }

    fn replica_mut(&mut self, r: ReplicaId) -> &mut Replica {
        &mut self.replicas[r.0 as usize]
    }

    /// Strategy of replica `r`; correct replicas are honest.
    fn strategy_of(&self, r: ReplicaId) -> ReplicaStrategy {
        if self.replica(r).corrupt {
            self.strategy.clone()
        } else {
            ReplicaStrategy::Honest
        }
    }

    fn local_chain_len(&self, r: &Replica) -> usize {
        r.last_output.map_or(1, |i| i as usize + 1)
    }

    fn is_finalised_at(&self, tx: &Transaction, instance: u64) -> bool {
        self.decided_at.get(tx).is_some_and(|&k| k <= instance)
    }

    // Clients.

    fn on_request(&mut self, index: usize) -> Result<(), SimError> {
        let item = self.s.workload[index].clone();
        let c = item.client;
        let process = Process::Client(c);
        let tx = self
            .clients
            .entry(c)
            .or_insert_with(|| ClientState::new(c))
            .next_tx(item.payload);
        if self.s.adversary.is_corrupt_client(c) {
            return self.broadcast_request(c, tx);
        }
        let ledger = self.rc.ledger().chain();
        let chains: Vec<Chain> = self
            .replicas
            .iter()
            .filter(|r| !r.corrupt)
            .map(|r| ledger.prefix(self.local_chain_len(r)))
            .collect();
        let snapshot = read(&chains.iter().collect::<Vec<_>>());
        let len = snapshot.len();
        self.emit(
            Some(process),
            EventKind::ReadSnapshot {
                len: snapshot.len(),
                tip: snapshot.tip_hash(),
            },
        );
        if let Err(reason) = self.rc.ledger().state_at(len).check(&tx) {
            self.emit(
                Some(process),
                EventKind::RequestSuppressed {
                    tx,
                    reason: reason.to_string(),
                },
            );
            return Ok(());
        }
        self.broadcast_request(c, tx.clone())?;
        let spam = self.s.adversary.client_strategy.react(&tx);
        if let Some(payload) = spam {
            for &spammer in &self.s.adversary.corrupt_clients {
                let stx = self
                    .clients
                    .entry(spammer)
                    .or_insert_with(|| ClientState::new(spammer))
                    .next_tx(payload.clone());
                self.broadcast_request(spammer, stx)?;
            }
        }
        Ok(())
    }

    fn broadcast_request(&mut self, c: ClientId, tx: Transaction) -> Result<(), SimError> {
        let process = Process::Client(c);
        self.emit(Some(process), EventKind::RequestIssued { tx: tx.clone() });
        self.net.set_executing(Some(process));
        let sent = self.net.broadcast(
            process,
            Message::Req(tx.clone()),
            Traffic::Request { tx: tx.id() },
        )?;
        for s in sent {
            let Process::Replica(to) = s.to else {
                unreachable!()
            };
            self.emit(
                Some(process),
                EventKind::ReqSent {
                    envelope: s.id,
                    to,
                    tx: tx.id(),
                },
            );
        }
        Ok(())
    }

    // Deliveries.

    fn on_deliver(&mut self, env: Envelope<Message>) -> Result<(), SimError> {
        let Process::Replica(r) = env.to else {
            unreachable!("only replicas receive")
        };
        let process = Some(env.to);
        match env.payload {
            Message::Req(tx) => {
                let Process::Client(from) = env.from else {
                    unreachable!()
                };
                self.emit(
                    process,
                    EventKind::ReqDelivered {
                        envelope: env.id,
                        from,
                        tx: tx.clone(),
                    },
                );
                if self.strategy_of(r).is_silent() {
                    return Ok(());
                }
                let upto = self.replica(r).last_output.unwrap_or(0);
                if !self.is_finalised_at(&tx, upto) {
                    self.replica_mut(r).pool.receive(tx);
                }
            }
            Message::SubProp(sp) => {
                let Process::Replica(from) = env.from else {
                    unreachable!()
                };
                self.emit(
                    process,
                    EventKind::SubPropDelivered {
                        envelope: env.id,
                        from,
                        instance: sp.instance,
                    },
                );
                let strategy = self.strategy_of(r);
                if strategy.is_silent() || sp.sender != from {
                    return Ok(());
                }
                let instance = sp.instance;
                if self.replica_mut(r).frc.receive(sp) {
                    self.aggregate(r, instance)?;
                }
            }
        }
        Ok(())
    }

    // Consensus.

    fn rc_input(&mut self, r: ReplicaId, instance: u64, block: Block) -> Result<(), SimError> {
        self.emit(
            Some(Process::Replica(r)),
            EventKind::RcInput {
                instance,
                block: block.clone(),
            },
        );
        self.rc.input(r, instance, block)?;
        if !self.decide_scheduled.contains(&instance)
            && self.rc.is_decidable(instance, self.validator.as_ref())
        {
            self.decide_scheduled.insert(instance);
            let at = self.net.now() + self.s.decision_latency();
            self.net.schedule(at, Timer::Decide { instance });
        }
        Ok(())
    }

    fn on_decide(&mut self, instance: u64) {
        let d = self
            .rc
            .decide(instance, self.policy.as_mut(), self.validator.as_ref())
            .expect("scheduled only when decidable");
        for tx in &d.block.txs {
            self.decided_at.entry(tx.clone()).or_insert(instance);
        }
        self.emit(
            None,
            EventKind::RcDecided {
                instance,
                proposer: d.proposer,
                hash: d.block.hash(),
            },
        );
        for idx in 0..self.replicas.len() {
            let replica = ReplicaId(idx as u32);
            let drawn = self.net.draw_delivery(
                None,
                Process::Replica(replica),
                Traffic::Output { instance },
            );
            let at = drawn.max(self.output_horizon[idx]);
            self.output_horizon[idx] = at;
            self.net.schedule(at, Timer::Output { replica, instance });
        }
    }

    fn on_output(&mut self, r: ReplicaId, instance: u64) -> Result<(), SimError> {
        self.rc.mark_output(r, instance);
        self.replica_mut(r).last_output = Some(instance);
        let strategy = self.strategy_of(r);
        if strategy.is_silent() {
            return Ok(());
        }
        let process = Some(Process::Replica(r));
        let block = self.rc.ledger().block(instance).expect("decided").clone();
        let log_start = self.rc.ledger().chain().blocks()[..instance as usize]
            .iter()
            .map(|b| b.txs.len())
            .sum();
        let committed: Vec<_> = block.txs.iter().map(Transaction::id).collect();
        self.emit(process, EventKind::Output { instance, block });
        if self.construction == Construction::DlsmrOverBcfrc && !committed.is_empty() {
            self.emit(
                process,
                EventKind::LogCommitted {
                    start: log_start,
                    txs: committed,
                },
            );
        }
        if instance >= self.s.horizon_instances {
            return Ok(());
        }

        let decided_at = &self.decided_at;
        let removed = self.replicas[r.0 as usize]
            .pool
            .clear(|tx| decided_at.get(tx).is_some_and(|&k| k <= instance));
        if !removed.is_empty() {
            self.emit(process, EventKind::PoolCleared { instance, removed });
        }
        let next = instance + 1;
        let state = self.rc.ledger().state_at(next as usize);
        let txs = self
            .replica(r)
            .pool
            .pick_fifo(state, self.s.max_block_size, |tx| strategy.censors(tx));
        let parent = self.rc.ledger().chain().hashes()[instance as usize];
        let key = self.replica(r).key.clone();

        if !self.construction.uses_frc() {
            let block = Block::signed(&key, parent, txs, None);
            self.rc_input(r, next, block)?;
            if strategy == ReplicaStrategy::Equivocate {
                self.rc_input(r, next, Block::signed(&key, parent, Vec::new(), None))?;
            }
            return Ok(());
        }

        self.emit(
            process,
            EventKind::FrcInput {
                instance: next,
                txs: txs.clone(),
            },
        );
        self.net.set_executing(process);
        for to in (0..self.s.n).map(ReplicaId) {
            let sp = SubProposal::new(&key, r, next, strategy.sub_proposal_for(to, &txs));
            let sent = self.net.send(
                Process::Replica(r),
                Process::Replica(to),
                Message::SubProp(sp.clone()),
                Traffic::SubProposal {
                    instance: next,
                    sender: r,
                },
            )?;
            self.emit(
                process,
                EventKind::SubPropSent {
                    envelope: sent.id,
                    to,
                    proposal: sp,
                },
            );
        }
        self.replica_mut(r).frc.prune(instance);
        self.aggregate(r, next)
    }

    /// Runs the fusion trigger of replica `r` for `instance`.
    fn aggregate(&mut self, r: ReplicaId, instance: u64) -> Result<(), SimError> {
        let strategy = self.strategy_of(r);
        if let ReplicaStrategy::Censor { .. } = strategy {
            return self.censoring_aggregate(r, instance, &strategy);
        }
        let f = self.s.f;
        let replica = self.replica(r);
        if !replica.frc.ready(instance, f, replica.last_output) {
            return Ok(());
        }
        let entries = self.replica_mut(r).frc.take(instance);
        let key = self.replica(r).key.clone();
        let block = fused_block(&key, self.s.fusion, self.rc.ledger(), instance, entries);
        self.rc_input(r, instance, block)
    }

    /// A censoring aggregator inputs a certified block free of target
    /// transactions as soon as enough target-free sub-proposals arrived.
    /// Otherwise it inputs the fusion of everything with targets deleted.
    fn censoring_aggregate(
        &mut self,
        r: ReplicaId,
        instance: u64,
        strategy: &ReplicaStrategy,
    ) -> Result<(), SimError> {
        let replica = self.replica(r);
        if instance == 0
            || replica.last_output != Some(instance - 1)
            || replica.clean_input.contains(&instance)
        {
            return Ok(());
        }
        let needed = self.s.f as usize + 1;
        let all: Vec<SubProposal> = replica.frc.received(instance).cloned().collect();
        let clean: Vec<SubProposal> = all
            .iter()
            .filter(|sp| !sp.txs.iter().any(|tx| strategy.censors(tx)))
            .cloned()
            .collect();
        let key = replica.key.clone();
        if clean.len() >= needed {
            let block = fused_block(&key, self.s.fusion, self.rc.ledger(), instance, clean);
            let replica = self.replica_mut(r);
            replica.clean_input.insert(instance);
            replica.any_input.insert(instance);
            return self.rc_input(r, instance, block);
        }
        if all.len() >= needed && !replica.any_input.contains(&instance) {
            let honest = fused_block(&key, self.s.fusion, self.rc.ledger(), instance, all);
            let txs = honest
                .txs
                .iter()
                .filter(|tx| !strategy.censors(tx))
                .cloned()
                .collect();
            let parent = honest.parent.expect("not genesis");
            let block = Block::signed(&key, parent, txs, honest.certificate);
            self.replica_mut(r).any_input.insert(instance);
            return self.rc_input(r, instance, block);
        }
        Ok(())
    }
}
