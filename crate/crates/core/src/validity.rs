//! Application-defined validity (`validChain` / `validLog`) and the fusion
//! function that merges several transaction sequences into one.
//!
//! Two validity models are provided. The account model is order-dependent:
//! a transfer can become invalid once a conflicting transfer consumes its
//! nonce or drains the balance. The set model only forbids a transaction id
//! from appearing twice, so every transaction commutes with every other.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    check_links, Block, ChainError, ClientId, Log, Payload, ReplicaId, Transaction, TxId,
};

/// Genesis entry of the account model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSpec {
    pub name: String,
    pub balance: u64,
    /// Clients allowed to spend from the account. Empty means anyone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub owners: Vec<ClientId>,
}

impl AccountSpec {
    pub fn new(name: &str, balance: u64, owners: &[u32]) -> Self {
        AccountSpec {
            name: name.to_owned(),
            balance,
            owners: owners.iter().copied().map(ClientId).collect(),
        }
    }
}

/// Validity model selected by name, with its genesis state embedded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ValidityModel {
    Account { accounts: Vec<AccountSpec> },
    Set,
}

impl ValidityModel {
    pub fn accounts(accounts: Vec<AccountSpec>) -> Self {
        ValidityModel::Account { accounts }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ValidityModel::Account { .. } => "account",
            ValidityModel::Set => "set",
        }
    }

    pub fn genesis_state(&self) -> AppState {
        match self {
            ValidityModel::Account { accounts } => {
                let mut state = AccountState::default();
                for a in accounts {
                    state.balances.insert(a.name.clone(), a.balance);
                    state
                        .owners
                        .insert(a.name.clone(), a.owners.iter().copied().collect());
                }
                AppState::Account(state)
            }
            ValidityModel::Set => AppState::Set(BTreeSet::new()),
        }
    }

    /// State after applying every transaction of `blocks` in chain order, or
    /// `None` if some transaction is invalid at its position.
    pub fn state_after(&self, blocks: &[Block]) -> Result<Option<AppState>, ChainError> {
        check_links(blocks)?;
        let mut state = self.genesis_state();
        for tx in blocks.iter().flat_map(|b| &b.txs) {
            if state.apply(tx).is_err() {
                return Ok(None);
            }
        }
        Ok(Some(state))
    }

    /// `validChain`: structural errors are reported separately from
    /// application invalidity.
    pub fn valid_chain(&self, blocks: &[Block]) -> Result<bool, ChainError> {
        Ok(self.state_after(blocks)?.is_some())
    }

    /// `validLog`, evaluated directly over the transaction sequence.
    pub fn valid_log(&self, log: &Log) -> bool {
        let mut state = self.genesis_state();
        log.txs.iter().all(|tx| state.apply(tx).is_ok())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("client signature does not verify")]
    BadSignature,
    #[error("transaction {0} already applied")]
    Duplicate(TxId),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("client {client} may not spend from {account}")]
    NotOwner { client: ClientId, account: String },
    #[error("nonce {got} but {expected} expected")]
    BadNonce { expected: u64, got: u64 },
    #[error("balance {balance} below {amount}")]
    InsufficientBalance { balance: u64, amount: u64 },
    #[error("payload not understood by the account model")]
    UnsupportedPayload,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccountState {
    pub balances: BTreeMap<String, u64>,
    /// Last consumed nonce per account; absent means 0.
    pub nonces: BTreeMap<String, u64>,
    owners: BTreeMap<String, BTreeSet<ClientId>>,
}

/// Application state reached by applying a transaction sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppState {
    Account(AccountState),
    Set(BTreeSet<TxId>),
}

impl AppState {
    /// Whether `tx` may be appended to the sequence that produced this state.
    pub fn check(&self, tx: &Transaction) -> Result<(), Rejection> {
        if !tx.verify_signature() {
            return Err(Rejection::BadSignature);
        }
        match self {
            AppState::Set(seen) => {
                if seen.contains(&tx.id()) {
                    Err(Rejection::Duplicate(tx.id()))
                } else {
                    Ok(())
                }
            }
            AppState::Account(accounts) => {
                let Payload::Transfer {
                    from,
                    to,
                    amount,
                    nonce,
                } = &tx.payload
                else {
                    return Err(Rejection::UnsupportedPayload);
                };
                let balance = *accounts
                    .balances
                    .get(from)
                    .ok_or_else(|| Rejection::UnknownAccount(from.clone()))?;
                if !accounts.balances.contains_key(to) {
                    return Err(Rejection::UnknownAccount(to.clone()));
                }
                let owners = &accounts.owners[from];
                if !owners.is_empty() && !owners.contains(&tx.client) {
                    return Err(Rejection::NotOwner {
                        client: tx.client,
                        account: from.clone(),
                    });
                }
                let expected = accounts.nonces.get(from).copied().unwrap_or(0) + 1;
                if *nonce != expected {
                    return Err(Rejection::BadNonce {
                        expected,
                        got: *nonce,
                    });
                }
                if balance < *amount {
                    return Err(Rejection::InsufficientBalance {
                        balance,
                        amount: *amount,
                    });
                }
                Ok(())
            }
        }
    }

    /// Applies `tx`; on rejection the state is left untouched.
    pub fn apply(&mut self, tx: &Transaction) -> Result<(), Rejection> {
        self.check(tx)?;
        match self {
            AppState::Set(seen) => {
                seen.insert(tx.id());
            }
            AppState::Account(accounts) => {
                if let Payload::Transfer {
                    from,
                    to,
                    amount,
                    nonce,
                } = &tx.payload
                {
                    *accounts.balances.get_mut(from).expect("checked") -= amount;
                    *accounts.balances.get_mut(to).expect("checked") += amount;
                    accounts.nonces.insert(from.clone(), *nonce);
                }
            }
        }
        Ok(())
    }

    pub fn applied(&self, txs: &[Transaction]) -> Option<AppState> {
        let mut next = self.clone();
        for tx in txs {
            next.apply(tx).ok()?;
        }
        Some(next)
    }
}

/// One contributor's sequence in a fusion collection.
#[derive(Clone, Copy, Debug)]
pub struct Contribution<'a> {
    pub contributor: ReplicaId,
    pub txs: &'a [Transaction],
}

/// A transaction the fusion left out, with the result position at which
/// appending it would have been invalid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dropped {
    pub tx: Transaction,
    pub witness: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fused {
    pub txs: Vec<Transaction>,
    pub dropped: Vec<Dropped>,
}

/// Deterministic merge procedure, selected by name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionModel {
    /// Contributions in ascending contributor id, concatenated, identical
    /// transactions deduplicated, then a greedy left-to-right validity filter.
    #[default]
    OrderedGreedy,
}

impl FusionModel {
    pub fn name(&self) -> &'static str {
        match self {
            FusionModel::OrderedGreedy => "ordered-greedy",
        }
    }

    /// Fuses `coll` on top of the chain that produced `prefix_state`.
    pub fn fuse_from_state(&self, prefix_state: &AppState, coll: &[Contribution<'_>]) -> Fused {
        let mut ordered: Vec<&Contribution<'_>> = coll.iter().collect();
        ordered.sort_by_key(|c| c.contributor);

        let mut seen: BTreeSet<&Transaction> = BTreeSet::new();
        let mut state = prefix_state.clone();
        let mut txs = Vec::new();
        let mut dropped = Vec::new();
        for tx in ordered.iter().flat_map(|c| c.txs.iter()) {
            if !seen.insert(tx) {
                continue;
            }
            match state.apply(tx) {
                Ok(()) => txs.push(tx.clone()),
                Err(_) => dropped.push(Dropped {
                    tx: tx.clone(),
                    witness: txs.len(),
                }),
            }
        }
        Fused { txs, dropped }
    }

    /// Fuses `coll` on top of `prefix`, which must be a valid chain.
    pub fn fuse(
        &self,
        validity: &ValidityModel,
        prefix: &[Block],
        coll: &[Contribution<'_>],
    ) -> Result<Fused, FusionError> {
        let state = validity
            .state_after(prefix)?
            .ok_or(FusionError::InvalidPrefix)?;
        Ok(self.fuse_from_state(&state, coll))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("fusion prefix is not a valid chain")]
    InvalidPrefix,
}

/// Fair fusion violation: a dropped transaction valid at every position.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("transaction {} was dropped although valid at every position", .tx.id())]
pub struct FairFusionViolation {
    pub tx: Transaction,
}

/// Position-by-position check that every transaction of `coll` missing from
/// `result` is invalid when appended after some prefix `result[..k]`,
/// `0 <= k <= result.len()`.
pub fn check_fair_fusion(
    prefix_state: &AppState,
    coll: &[Contribution<'_>],
    result: &[Transaction],
) -> Result<(), FairFusionViolation> {
    for tx in coll.iter().flat_map(|c| c.txs.iter()) {
        if result.contains(tx) {
            continue;
        }
        let mut state = prefix_state.clone();
        let mut witnessed = false;
        for k in 0..=result.len() {
            if k > 0 && state.apply(&result[k - 1]).is_err() {
                // result[..k] is itself invalid, so result[..k] :: [tx] is too.
                witnessed = true;
                break;
            }
            if state.check(tx).is_err() {
                witnessed = true;
                break;
            }
        }
        if !witnessed {
            return Err(FairFusionViolation { tx: tx.clone() });
        }
    }
    Ok(())
}
