//! Byzantine behaviours for replicas and clients.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::netsim::DelaySpec;
use crate::rc::PolicySpec;
use crate::types::{ClientId, Payload, ReplicaId, Transaction};

/// What corrupt replicas do.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ReplicaStrategy {
    /// Follow the protocol.
    #[default]
    Honest,
    /// Follow the protocol but leave out transactions of the listed clients
    /// from everything produced. As aggregator, prefer a certificate that
    /// contains none of them.
    Censor { clients: BTreeSet<ClientId> },
    /// Send each receiver a different sub-proposal: the honest one to even
    /// replica ids, an empty one to odd ids. Without the fair layer, input
    /// both an honest and an empty block.
    Equivocate,
    /// Send and input nothing.
    Silent,
}

impl ReplicaStrategy {
    /// Whether the strategy drops `tx` from what it produces.
    pub fn censors(&self, tx: &Transaction) -> bool {
        match self {
            ReplicaStrategy::Censor { clients } => clients.contains(&tx.client),
            _ => false,
        }
    }

    pub fn is_silent(&self) -> bool {
        matches!(self, ReplicaStrategy::Silent)
    }

    /// Sub-proposal content sent to `receiver` given the honest pick.
    pub fn sub_proposal_for(
        &self,
        receiver: ReplicaId,
        honest: &[Transaction],
    ) -> Vec<Transaction> {
        match self {
            ReplicaStrategy::Equivocate if receiver.0 % 2 == 1 => Vec::new(),
            _ => honest.to_vec(),
        }
    }
}

/// What corrupt clients do.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ClientStrategy {
    /// Issue the scripted workload without the validity guard.
    #[default]
    Honest,
    /// On every request of a correct client, immediately issue a transfer
    /// from the same account with the same nonce to `sink`.
    SpamInvalidator { sink: String },
}

impl ClientStrategy {
    /// Payload issued in reaction to a correct client's transaction.
    pub fn react(&self, observed: &Transaction) -> Option<Payload> {
        match (self, &observed.payload) {
            (ClientStrategy::Honest, _) => None,
            (
                ClientStrategy::SpamInvalidator { sink },
                Payload::Transfer {
                    from,
                    amount,
                    nonce,
                    ..
                },
            ) => Some(Payload::transfer(from, sink, *amount, *nonce)),
            (ClientStrategy::SpamInvalidator { .. }, Payload::Opaque { data }) => {
                Some(Payload::opaque(data.clone()))
            }
        }
    }
}

fn default_rushing() -> bool {
    true
}

/// The adversary of a run: static corruption plus its choices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub corrupt_replicas: BTreeSet<ReplicaId>,
    #[serde(default)]
    pub corrupt_clients: BTreeSet<ClientId>,
    #[serde(default)]
    pub replica_strategy: ReplicaStrategy,
    #[serde(default)]
    pub client_strategy: ClientStrategy,
    #[serde(default)]
    pub rc_policy: PolicySpec,
    #[serde(default)]
    pub pre_gst_delay: DelaySpec,
    /// Traffic touching corrupt processes takes one tick.
    #[serde(default = "default_rushing")]
    pub rushing: bool,
}

impl Default for AdversarySpec {
    fn default() -> Self {
        AdversarySpec {
            corrupt_replicas: BTreeSet::new(),
            corrupt_clients: BTreeSet::new(),
            replica_strategy: ReplicaStrategy::Honest,
            client_strategy: ClientStrategy::Honest,
            rc_policy: PolicySpec::RoundRobin,
            pre_gst_delay: DelaySpec::default(),
            rushing: true,
        }
    }
}

impl AdversarySpec {
    pub fn is_corrupt_replica(&self, r: ReplicaId) -> bool {
        self.corrupt_replicas.contains(&r)
    }

    pub fn is_corrupt_client(&self, c: ClientId) -> bool {
        self.corrupt_clients.contains(&c)
    }
}
