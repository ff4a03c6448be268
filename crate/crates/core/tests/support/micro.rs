//! An exhaustively enumerable space of tiny runs: n = 4, f = 1, two
//! requests, two instances. Every schedule choice is a parameter.

use std::collections::BTreeMap;

use fairledger::adversary::ReplicaStrategy;
use fairledger::constructions::Construction;
use fairledger::netsim::{DelayContext, DelayPolicy, Tick, Traffic};
use fairledger::rc::Scripted;
use fairledger::scenario::{Scenario, WorkloadItem};
use fairledger::sim::{simulate_with, SimHooks};
use fairledger::trace::TraceEvent;
use fairledger::types::{ClientId, Payload, Process, ReplicaId, TxId};
use fairledger::validity::{AccountSpec, ValidityModel};
use rand_chacha::ChaCha8Rng;

pub const GRACE: u64 = 1;
const CORRUPT: ReplicaId = ReplicaId(3);
const PHASES: [Tick; 3] = [1, 12, Tick::MAX];
const CHOICES: [usize; 3] = [0, 1, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MicroCase {
    pub construction: Construction,
    pub account: bool,
    pub censor: bool,
    /// Delay phase of request `tx` to correct replica `r`, at `tx * 3 + r`.
    pub phases: [u8; 6],
    pub swap: bool,
    pub choices: [usize; 2],
    pub rot: u32,
}

pub fn all_cases() -> impl Iterator<Item = MicroCase> {
    let constructions = [Construction::Bcrc, Construction::DlsmrOverBcfrc];
    constructions.into_iter().flat_map(|construction| {
        let rots: &'static [u32] = if construction.uses_frc() {
            &[0, 2]
        } else {
            &[0]
        };
        [false, true].into_iter().flat_map(move |account| {
            [false, true].into_iter().flat_map(move |censor| {
                rots.iter().flat_map(move |&rot| {
                    (0..9usize).flat_map(move |c| {
                        [false, true].into_iter().flat_map(move |swap| {
                            (0..729u32).map(move |p| {
                                let mut phases = [0u8; 6];
                                let mut x = p;
                                for ph in &mut phases {
                                    *ph = (x % 3) as u8;
                                    x /= 3;
                                }
                                MicroCase {
                                    construction,
                                    account,
                                    censor,
                                    phases,
                                    swap,
                                    choices: [CHOICES[c % 3], CHOICES[c / 3]],
                                    rot,
                                }
                            })
                        })
                    })
                })
            })
        })
    })
}

pub fn scenario(case: &MicroCase) -> Scenario {
    let mut s = Scenario::basic(4, 1, case.construction);
    s.gst = 1000;
    s.delta = 2;
    s.decision_latency = Some(5);
    s.horizon_instances = 2;
    s.grace = GRACE;
    s.max_ticks = Some(200);
    s.adversary.corrupt_replicas = [CORRUPT].into();
    if case.censor {
        s.adversary.replica_strategy = ReplicaStrategy::Censor {
            clients: [ClientId(0)].into(),
        };
    }
    let payloads = if case.account {
        s.validity = ValidityModel::Account {
            accounts: vec![
                AccountSpec::new("j", 10, &[0, 1]),
                AccountSpec::new("a", 0, &[0]),
                AccountSpec::new("b", 0, &[1]),
            ],
        };
        [
            Payload::transfer("j", "a", 7, 1),
            Payload::transfer("j", "b", 6, 1),
        ]
    } else {
        [Payload::opaque("t0"), Payload::opaque("t1")]
    };
    for (c, payload) in payloads.into_iter().enumerate() {
        s.workload.push(WorkloadItem {
            tick: 0,
            client: ClientId(c as u32),
            payload,
        });
    }
    s
}

struct MicroDelay {
    case: MicroCase,
    seen: BTreeMap<TxId, usize>,
}

impl DelayPolicy for MicroDelay {
    fn pre_gst_delay(&mut self, ctx: &DelayContext, _: &mut ChaCha8Rng) -> Tick {
        match ctx.traffic {
            Traffic::Request { tx } => {
                let Process::Replica(r) = ctx.to else {
                    return 1;
                };
                if r == CORRUPT {
                    return 1;
                }
                let next = self.seen.len();
                let t = *self.seen.entry(tx).or_insert(next);
                if t > 1 {
                    return 1;
                }
                let base = PHASES[self.case.phases[t * 3 + r.0 as usize] as usize];
                // The later of the two requests at each phase is one tick behind.
                base.saturating_add(u64::from((t == 0) == self.case.swap))
            }
            Traffic::SubProposal { instance, sender } => {
                let rot = if instance == 1 { self.case.rot } else { 0 };
                1 + u64::from((sender.0 + 4 - rot) % 4)
            }
            Traffic::Output { .. } => 1,
        }
    }
}

pub fn run(case: &MicroCase) -> Vec<TraceEvent> {
    let hooks = SimHooks {
        selection: Some(Box::new(Scripted(case.choices.to_vec()))),
        delay: Some(Box::new(MicroDelay {
            case: *case,
            seen: BTreeMap::new(),
        })),
        start_tick: 10,
    };
    simulate_with(&scenario(case), hooks).expect("micro scenario is valid")
}
