//! Replica and client building blocks shared by the ledger constructions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{
    flatten_chain_to_log, longest_common_prefix, Block, Chain, ClientId, Log, Payload, SigningKey,
    Transaction, TxId,
};
use crate::validity::AppState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Blockchain over plain repeated consensus.
    Bcrc,
    /// Blockchain over fair repeated consensus.
    Bcfrc,
    /// Log view of `Bcfrc`.
    DlsmrOverBcfrc,
}

impl Construction {
    pub const ALL: [Construction; 3] = [
        Construction::Bcrc,
        Construction::Bcfrc,
        Construction::DlsmrOverBcfrc,
    ];

    pub fn uses_frc(self) -> bool {
        !matches!(self, Construction::Bcrc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Construction::Bcrc => "bcrc",
            Construction::Bcfrc => "bcfrc",
            Construction::DlsmrOverBcfrc => "dlsmr-over-bcfrc",
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A replica's pending transactions in arrival order.
#[derive(Clone, Debug, Default)]
pub struct ReplicaPool {
    txs: Vec<Transaction>,
    members: BTreeSet<Transaction>,
}

impl ReplicaPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `tx` unless already pooled.
    pub fn receive(&mut self, tx: Transaction) -> bool {
        if self.members.contains(&tx) {
            return false;
        }
        self.members.insert(tx.clone());
        self.txs.push(tx);
        true
    }

    /// Removes every transaction `finalised` accepts, returning their ids.
    pub fn clear(&mut self, mut finalised: impl FnMut(&Transaction) -> bool) -> Vec<TxId> {
        let mut removed = Vec::new();
        let members = &mut self.members;
        self.txs.retain(|tx| {
            if finalised(tx) {
                removed.push(tx.id());
                members.remove(tx);
                false
            } else {
                true
            }
        });
        removed
    }

    /// FIFO scan keeping each transaction valid at its position, up to
    /// `max` transactions. Skipped transactions stay pooled.
    pub fn pick_fifo(
        &self,
        state: &AppState,
        max: usize,
        mut exclude: impl FnMut(&Transaction) -> bool,
    ) -> Vec<Transaction> {
        let mut state = state.clone();
        let mut picked = Vec::new();
        for tx in &self.txs {
            if picked.len() == max {
                break;
            }
            if !exclude(tx) && state.apply(tx).is_ok() {
                picked.push(tx.clone());
            }
        }
        picked
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.iter()
    }

    pub fn contains(&self, tx: &Transaction) -> bool {
        self.members.contains(tx)
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }
}

/// Client identity and sequence counter.
#[derive(Clone, Debug)]
pub struct ClientState {
    id: ClientId,
    key: SigningKey,
    next_seq: u64,
}

impl ClientState {
    pub fn new(id: ClientId) -> Self {
        ClientState {
            id,
            key: SigningKey::issue(id),
            next_seq: 1,
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    /// Signs `payload` under the next sequence number.
    pub fn next_tx(&mut self, payload: Payload) -> Transaction {
        let tx = Transaction::new(&self.key, self.id, self.next_seq, payload);
        self.next_seq += 1;
        tx
    }
}

/// `read()`: the longest common prefix of the given correct chains.
pub fn read(chains: &[&Chain]) -> Chain {
    let Some(first) = chains.first() else {
        return Chain::genesis();
    };
    let slices: Vec<&[Block]> = chains.iter().map(|c| c.blocks()).collect();
    first.prefix(longest_common_prefix(&slices))
}

/// A replica's log in the state-machine view.
pub fn smr_log(chain: &Chain) -> Log {
    flatten_chain_to_log(chain)
}
