//! Fair repeated consensus on top of [`crate::rc`].
//!
//! Each replica broadcasts its transactions as a signed sub-proposal, fuses
//! the sub-proposals of at least `f + 1` distinct senders, and inputs the
//! fused block, certificate attached, to repeated consensus.

use std::collections::{BTreeMap, BTreeSet};

use crate::rc::{plain_checks, BlockRejection, BlockValidator, Ledger};
use crate::types::{Block, Certificate, Chain, ReplicaId, SigningKey, SubProposal};
use crate::validity::{AppState, Contribution, FusionModel};

/// `validChain` extended with the contribution check.
#[derive(Clone, Copy, Debug)]
pub struct CertifiedRule {
    pub f: u32,
    pub fusion: FusionModel,
}

impl BlockValidator for CertifiedRule {
    fn validate(
        &self,
        prefix: &Chain,
        prefix_state: &AppState,
        instance: u64,
        proposer: ReplicaId,
        block: &Block,
    ) -> Result<(), BlockRejection> {
        plain_checks(prefix, prefix_state, proposer, block)?;
        check_certificate(self.f, self.fusion, prefix_state, instance, block)
    }
}

/// Certificate part of the certified chain rule: at least `f + 1` distinct,
/// verified senders for `instance`, and `block.txs` equal to their fusion.
pub fn check_certificate(
    f: u32,
    fusion: FusionModel,
    prefix_state: &AppState,
    instance: u64,
    block: &Block,
) -> Result<(), BlockRejection> {
    let cert = block
        .certificate
        .as_ref()
        .ok_or(BlockRejection::MissingCertificate)?;
    if cert.instance != instance {
        return Err(BlockRejection::CertificateInstance {
            expected: instance,
            found: cert.instance,
        });
    }
    let mut senders = BTreeSet::new();
    for entry in &cert.entries {
        if entry.instance != instance || !entry.verify_signature() {
            return Err(BlockRejection::BadEntrySignature(entry.sender));
        }
        senders.insert(entry.sender);
    }
    let needed = f as usize + 1;
    if senders.len() < needed || senders.len() != cert.entries.len() {
        return Err(BlockRejection::TooFewContributors {
            found: senders.len(),
            needed,
        });
    }
    let fused = fusion.fuse_from_state(prefix_state, &contributions(&cert.entries));
    if fused.txs != block.txs {
        return Err(BlockRejection::FusionMismatch);
    }
    Ok(())
}

pub fn contributions(entries: &[SubProposal]) -> Vec<Contribution<'_>> {
    entries
        .iter()
        .map(|e| Contribution {
            contributor: e.sender,
            txs: &e.txs,
        })
        .collect()
}

/// Per-replica sub-proposal bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct FrcState {
    done: u64,
    pending: BTreeMap<u64, BTreeMap<ReplicaId, SubProposal>>,
}

impl FrcState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last instance this replica fused and input.
    pub fn done(&self) -> u64 {
        self.done
    }

    /// Stores a sub-proposal; the first one per sender and instance wins.
    /// Returns whether it was kept.
    pub fn receive(&mut self, sp: SubProposal) -> bool {
        if sp.instance <= self.done || !sp.verify_signature() {
            return false;
        }
        let slot = self.pending.entry(sp.instance).or_default();
        if slot.contains_key(&sp.sender) {
            return false;
        }
        slot.insert(sp.sender, sp);
        true
    }

    pub fn received(&self, instance: u64) -> impl Iterator<Item = &SubProposal> {
        self.pending
            .get(&instance)
            .into_iter()
            .flat_map(|m| m.values())
    }

    /// The trigger: `f + 1` senders for `instance`, `done = instance - 1`,
    /// and `instance - 1` already output.
    pub fn ready(&self, instance: u64, f: u32, last_output: Option<u64>) -> bool {
        instance >= 1
            && self.done == instance - 1
            && last_output == Some(instance - 1)
            && self.received(instance).count() > f as usize
    }

    /// Takes every sub-proposal received for `instance` and sets `done`.
    pub fn take(&mut self, instance: u64) -> Vec<SubProposal> {
        self.done = instance;
        let taken = self.pending.remove(&instance).unwrap_or_default();
        self.pending.retain(|&i, _| i > instance);
        taken.into_values().collect()
    }

    /// Drops sub-proposals for instances up to `instance`.
    pub fn prune(&mut self, instance: u64) {
        self.pending.retain(|&i, _| i > instance);
    }
}

/// The certified block a replica inputs at `instance`, fusing `entries` on
/// the decided prefix of length `instance`.
pub fn fused_block(
    key: &SigningKey,
    fusion: FusionModel,
    ledger: &Ledger,
    instance: u64,
    entries: Vec<SubProposal>,
) -> Block {
    let len = instance as usize;
    let fused = fusion.fuse_from_state(ledger.state_at(len), &contributions(&entries));
    let parent = ledger.chain().hashes()[len - 1];
    Block::signed(
        key,
        parent,
        fused.txs,
        Some(Certificate::new(instance, entries)),
    )
}
