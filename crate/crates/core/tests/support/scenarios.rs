use fairledger::adversary::{ClientStrategy, ReplicaStrategy};
use fairledger::constructions::Construction;
use fairledger::netsim::DelaySpec;
use fairledger::rc::PolicySpec;
use fairledger::scenario::{Scenario, WorkloadItem};
use fairledger::types::{ClientId, Payload, ReplicaId};
use fairledger::validity::{AccountSpec, ValidityModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// n = 4, f = 1; replica 3 censors client 0 and the consensus oracle
/// favours it. Clients 0..3 send five requests each.
pub fn censor(construction: Construction, seed: u64) -> Scenario {
    let mut s = Scenario::basic(4, 1, construction);
    s.seed = seed;
    s.gst = 30;
    s.horizon_instances = 50;
    s.adversary.corrupt_replicas = [ReplicaId(3)].into();
    s.adversary.replica_strategy = ReplicaStrategy::Censor {
        clients: [ClientId(0)].into(),
    };
    s.adversary.rc_policy = PolicySpec::ByzantineFavouring;
    for k in 0..5u64 {
        for c in 0..3u32 {
            s.workload.push(WorkloadItem {
                tick: 5 + 40 * k + 3 * u64::from(c),
                client: ClientId(c),
                payload: Payload::opaque(format!("c{c}-{k}")),
            });
        }
    }
    s
}

/// Account model with a spamming client 9 sharing the joint account of
/// client 0. Even seeds let the spammer rush.
pub fn spam(seed: u64) -> Scenario {
    let mut s = Scenario::basic(4, 1, Construction::Bcfrc);
    s.seed = seed;
    s.gst = 20;
    s.horizon_instances = 40;
    s.validity = ValidityModel::Account {
        accounts: vec![
            AccountSpec::new("joint", 100, &[0, 9]),
            AccountSpec::new("alice", 50, &[0]),
            AccountSpec::new("bob", 50, &[1]),
            AccountSpec::new("sink", 0, &[9]),
        ],
    };
    s.adversary.corrupt_clients = [ClientId(9)].into();
    s.adversary.client_strategy = ClientStrategy::SpamInvalidator {
        sink: "sink".into(),
    };
    s.adversary.rushing = seed.is_multiple_of(2);
    for k in 0..5u64 {
        let t = 5 + 60 * k;
        let nonce = k + 1;
        s.workload.push(WorkloadItem {
            tick: t,
            client: ClientId(0),
            payload: Payload::transfer("joint", "bob", 3, nonce),
        });
        s.workload.push(WorkloadItem {
            tick: t + 2,
            client: ClientId(0),
            payload: Payload::transfer("alice", "bob", 1, nonce),
        });
        s.workload.push(WorkloadItem {
            tick: t + 4,
            client: ClientId(1),
            payload: Payload::transfer("bob", "alice", 2, nonce),
        });
    }
    s
}

/// A randomised scenario for `(n, f)`: corruption, strategy, consensus
/// policy, validity model, GST and workload are all drawn from `seed`.
pub fn random(n: u32, f: u32, construction: Construction, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(n) << 32) ^ (u64::from(f) << 48));
    let mut s = Scenario::basic(n, f, construction);
    s.seed = seed;
    s.gst = *[0, 25, 60].choose(&mut rng).unwrap();
    s.delta = rng.gen_range(2..=6);
    s.horizon_instances = rng.gen_range(8..=20);
    s.max_block_size = rng.gen_range(3..=6);
    let mut ids: Vec<u32> = (0..n).collect();
    ids.shuffle(&mut rng);
    let corrupt = rng.gen_range(0..=f) as usize;
    s.adversary.corrupt_replicas = ids[..corrupt].iter().map(|&r| ReplicaId(r)).collect();
    let clients = rng.gen_range(1..=4u32);
    s.adversary.replica_strategy = match rng.gen_range(0..4) {
        0 => ReplicaStrategy::Honest,
        1 => ReplicaStrategy::Censor {
            clients: [ClientId(rng.gen_range(0..clients))].into(),
        },
        2 => ReplicaStrategy::Equivocate,
        _ => ReplicaStrategy::Silent,
    };
    s.adversary.rc_policy = *[
        PolicySpec::RoundRobin,
        PolicySpec::ByzantineFavouring,
        PolicySpec::UniformRandom,
    ]
    .choose(&mut rng)
    .unwrap();
    s.adversary.pre_gst_delay = if rng.gen_bool(0.5) {
        DelaySpec::Uniform { max: 15 }
    } else {
        DelaySpec::Fixed { ticks: 9 }
    };
    let account = rng.gen_bool(0.5);
    if account {
        s.validity = ValidityModel::Account {
            accounts: (0..clients)
                .map(|c| AccountSpec::new(&format!("acct{c}"), 20, &[c]))
                .chain([AccountSpec::new("shared", 15, &[])])
                .collect(),
        };
    }
    let mut nonces = vec![0u64; clients as usize + 1];
    for k in 0..rng.gen_range(4..=14) {
        let c = rng.gen_range(0..clients);
        let payload = if account {
            let from = if rng.gen_bool(0.3) { clients } else { c };
            nonces[from as usize] += 1;
            let name = |i: u32| {
                if i == clients {
                    "shared".to_owned()
                } else {
                    format!("acct{i}")
                }
            };
            Payload::transfer(
                &name(from),
                &name(rng.gen_range(0..=clients)),
                rng.gen_range(1..=8),
                nonces[from as usize],
            )
        } else {
            Payload::opaque(format!("r{seed}-{k}"))
        };
        s.workload.push(WorkloadItem {
            tick: rng.gen_range(0..=120),
            client: ClientId(c),
            payload,
        });
    }
    s
}
