//! Repeated consensus as a correct-by-construction decision service.
//!
//! Every instance decides exactly one valid, signed block, appended to the
//! common chain. Which valid proposal wins is up to a [`SelectionPolicy`].

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Block, Chain, ReplicaId};
use crate::validity::{AppState, Rejection, ValidityModel};

/// The decided chain with the application state after every prefix.
#[derive(Clone, Debug)]
pub struct Ledger {
    chain: Chain,
    states: Vec<AppState>,
}

impl Ledger {
    pub fn new(validity: &ValidityModel) -> Self {
        Ledger {
            chain: Chain::genesis(),
            states: vec![validity.genesis_state()],
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn block(&self, instance: u64) -> Option<&Block> {
        self.chain.blocks().get(instance as usize)
    }

    /// State after the first `len` blocks.
    pub fn state_at(&self, len: usize) -> &AppState {
        &self.states[len - 1]
    }

    /// Appends a block whose transactions apply on the current tip.
    pub fn push(&mut self, block: Block) -> Result<(), BlockRejection> {
        let state = self
            .states
            .last()
            .expect("genesis state")
            .applied(&block.txs)
            .ok_or(BlockRejection::InvalidTransactions(None))?;
        self.chain
            .push(block)
            .map_err(|_| BlockRejection::WrongParent)?;
        self.states.push(state);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BlockRejection {
    #[error("block is not signed by its proposer")]
    BadProposerSignature,
    #[error("block does not point to the decided tip")]
    WrongParent,
    #[error("transactions are invalid on the decided prefix")]
    InvalidTransactions(Option<Rejection>),
    #[error("block carries no certificate")]
    MissingCertificate,
    #[error("certificate is for instance {found}, not {expected}")]
    CertificateInstance { expected: u64, found: u64 },
    #[error("certificate has {found} distinct verified contributors, {needed} needed")]
    TooFewContributors { found: usize, needed: usize },
    #[error("certificate entry from {0} does not verify")]
    BadEntrySignature(ReplicaId),
    #[error("block transactions differ from the fusion of its certificate")]
    FusionMismatch,
}

/// Extended `validChain` used when deciding: is `block`, proposed by
/// `proposer`, acceptable at `instance` on top of `prefix`?
pub trait BlockValidator {
    fn validate(
        &self,
        prefix: &Chain,
        prefix_state: &AppState,
        instance: u64,
        proposer: ReplicaId,
        block: &Block,
    ) -> Result<(), BlockRejection>;
}

/// Proposer signature, parent pointer, and application validity.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlainRule;

impl BlockValidator for PlainRule {
    fn validate(
        &self,
        prefix: &Chain,
        prefix_state: &AppState,
        _instance: u64,
        proposer: ReplicaId,
        block: &Block,
    ) -> Result<(), BlockRejection> {
        plain_checks(prefix, prefix_state, proposer, block)
    }
}

pub(crate) fn plain_checks(
    prefix: &Chain,
    prefix_state: &AppState,
    proposer: ReplicaId,
    block: &Block,
) -> Result<(), BlockRejection> {
    if !block.verify_proposer(proposer) {
        return Err(BlockRejection::BadProposerSignature);
    }
    if block.parent != Some(prefix.tip_hash()) {
        return Err(BlockRejection::WrongParent);
    }
    let mut state = prefix_state.clone();
    for tx in &block.txs {
        state
            .apply(tx)
            .map_err(|e| BlockRejection::InvalidTransactions(Some(e)))?;
    }
    Ok(())
}

/// A valid proposal offered to the selection policy.
#[derive(Clone, Copy, Debug)]
pub struct Candidate<'a> {
    pub proposer: ReplicaId,
    pub block: &'a Block,
}

/// Chooses the decided block among the valid proposals of an instance.
/// `candidates` is never empty and is sorted by proposer.
pub trait SelectionPolicy {
    fn select(
        &mut self,
        instance: u64,
        candidates: &[Candidate<'_>],
        corrupt: &BTreeSet<ReplicaId>,
        n: u32,
    ) -> usize;
}

/// Named selection policies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    /// The designated proposer `instance mod n` wins if its block is valid,
    /// otherwise the lowest replica id.
    #[default]
    RoundRobin,
    /// Any valid block from a corrupt replica wins.
    ByzantineFavouring,
    /// Seeded uniform choice.
    UniformRandom,
}

impl PolicySpec {
    pub fn build(&self, seed: u64) -> Box<dyn SelectionPolicy + Send> {
        match self {
            PolicySpec::RoundRobin => Box::new(RoundRobin),
            PolicySpec::ByzantineFavouring => Box::new(ByzantineFavouring),
            PolicySpec::UniformRandom => {
                Box::new(UniformRandom(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fc0)))
            }
        }
    }
}

pub struct RoundRobin;

impl SelectionPolicy for RoundRobin {
    fn select(
        &mut self,
        instance: u64,
        candidates: &[Candidate<'_>],
        _: &BTreeSet<ReplicaId>,
        n: u32,
    ) -> usize {
        let designated = ReplicaId((instance % u64::from(n.max(1))) as u32);
        candidates
            .iter()
            .position(|c| c.proposer == designated)
            .unwrap_or(0)
    }
}

pub struct ByzantineFavouring;

impl SelectionPolicy for ByzantineFavouring {
    fn select(
        &mut self,
        _: u64,
        candidates: &[Candidate<'_>],
        corrupt: &BTreeSet<ReplicaId>,
        _: u32,
    ) -> usize {
        candidates
            .iter()
            .position(|c| corrupt.contains(&c.proposer))
            .unwrap_or(0)
    }
}

pub struct UniformRandom(ChaCha8Rng);

impl SelectionPolicy for UniformRandom {
    fn select(
        &mut self,
        _: u64,
        candidates: &[Candidate<'_>],
        _: &BTreeSet<ReplicaId>,
        _: u32,
    ) -> usize {
        self.0.gen_range(0..candidates.len())
    }
}

/// Picks `script[instance - 1] mod |candidates|`; used for systematic
/// exploration of the decision freedom.
pub struct Scripted(pub Vec<usize>);

impl SelectionPolicy for Scripted {
    fn select(
        &mut self,
        instance: u64,
        candidates: &[Candidate<'_>],
        _: &BTreeSet<ReplicaId>,
        _: u32,
    ) -> usize {
        let k = self.0.get(instance as usize - 1).copied().unwrap_or(0);
        k % candidates.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RcError {
    #[error("block input by {replica} at instance {instance} is not signed by it")]
    Unsigned { replica: ReplicaId, instance: u64 },
    #[error("{replica} input at instance {instance} before outputting instance {}", .instance - 1)]
    NotReady { replica: ReplicaId, instance: u64 },
    #[error("{replica} input twice at instance {instance}")]
    DuplicateInput { replica: ReplicaId, instance: u64 },
}

#[derive(Clone, Debug)]
struct Proposal {
    proposer: ReplicaId,
    block: Block,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub instance: u64,
    pub proposer: ReplicaId,
    pub block: Block,
}

/// Repeated consensus service state.
pub struct RcEngine {
    n: u32,
    corrupt: BTreeSet<ReplicaId>,
    ledger: Ledger,
    proposals: BTreeMap<u64, Vec<Proposal>>,
    entered: BTreeMap<u64, BTreeSet<ReplicaId>>,
    last_output: BTreeMap<ReplicaId, u64>,
}

impl RcEngine {
    pub fn new(n: u32, corrupt: BTreeSet<ReplicaId>, validity: &ValidityModel) -> Self {
        RcEngine {
            n,
            corrupt,
            ledger: Ledger::new(validity),
            proposals: BTreeMap::new(),
            entered: BTreeMap::new(),
            last_output: BTreeMap::new(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Number of decided instances after genesis.
    pub fn decided(&self) -> u64 {
        self.ledger.len() as u64 - 1
    }

    pub fn is_correct(&self, r: ReplicaId) -> bool {
        !self.corrupt.contains(&r)
    }

    fn correct_replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        (0..self.n)
            .map(ReplicaId)
            .filter(|r| !self.corrupt.contains(r))
    }

    /// Records that `replica` has output `instance`.
    pub fn mark_output(&mut self, replica: ReplicaId, instance: u64) {
        self.last_output.insert(replica, instance);
    }

    pub fn last_output(&self, replica: ReplicaId) -> Option<u64> {
        self.last_output.get(&replica).copied()
    }

    /// `input(i, b)`.
    pub fn input(
        &mut self,
        replica: ReplicaId,
        instance: u64,
        block: Block,
    ) -> Result<(), RcError> {
        if !block.verify_proposer(replica) {
            return Err(RcError::Unsigned { replica, instance });
        }
        if self.is_correct(replica) {
            if instance == 0 || self.last_output(replica) != Some(instance - 1) {
                return Err(RcError::NotReady { replica, instance });
            }
            if !self.entered.entry(instance).or_default().insert(replica) {
                return Err(RcError::DuplicateInput { replica, instance });
            }
        } else if instance <= self.decided() {
            // Late Byzantine input for a decided instance has no effect.
            return Ok(());
        }
        self.proposals.entry(instance).or_default().push(Proposal {
            proposer: replica,
            block,
        });
        Ok(())
    }

    fn valid_candidates(
        &self,
        instance: u64,
        validator: &dyn BlockValidator,
    ) -> Vec<Candidate<'_>> {
        let prefix = self.ledger.chain();
        let state = self.ledger.state_at(self.ledger.len());
        let mut out: Vec<Candidate<'_>> = self
            .proposals
            .get(&instance)
            .into_iter()
            .flatten()
            .filter(|p| {
                validator
                    .validate(prefix, state, instance, p.proposer, &p.block)
                    .is_ok()
            })
            .map(|p| Candidate {
                proposer: p.proposer,
                block: &p.block,
            })
            .collect();
        out.sort_by_key(|c| c.proposer);
        out
    }

    /// Every correct replica has entered `instance`, the previous instance is
    /// decided, and at least one valid proposal exists.
    pub fn is_decidable(&self, instance: u64, validator: &dyn BlockValidator) -> bool {
        if instance != self.decided() + 1 {
            return false;
        }
        let entered = self.entered.get(&instance);
        let all_in = self
            .correct_replicas()
            .all(|r| entered.is_some_and(|set| set.contains(&r)));
        all_in && !self.valid_candidates(instance, validator).is_empty()
    }

    /// Decides `instance` if decidable, appending the chosen block.
    pub fn decide(
        &mut self,
        instance: u64,
        policy: &mut dyn SelectionPolicy,
        validator: &dyn BlockValidator,
    ) -> Option<Decision> {
        if !self.is_decidable(instance, validator) {
            return None;
        }
        let candidates = self.valid_candidates(instance, validator);
        let pick = policy
            .select(instance, &candidates, &self.corrupt, self.n)
            .min(candidates.len() - 1);
        let chosen = candidates[pick];
        let decision = Decision {
            instance,
            proposer: chosen.proposer,
            block: chosen.block.clone(),
        };
        self.ledger
            .push(decision.block.clone())
            .expect("validated against the decided tip");
        self.proposals.remove(&instance);
        Some(decision)
    }
}
