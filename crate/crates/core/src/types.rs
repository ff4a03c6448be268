//! Ledger vocabulary shared by every layer: process identities, simulated
//! signatures, transactions, blocks, chains and logs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Identity of a replica, drawn from `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

/// Identity of a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Any process taking part in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    Replica(ReplicaId),
    Client(ClientId),
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Replica(r) => r.fmt(f),
            Process::Client(c) => c.fmt(f),
        }
    }
}

impl From<ReplicaId> for Process {
    fn from(r: ReplicaId) -> Self {
        Process::Replica(r)
    }
}

impl From<ClientId> for Process {
    fn from(c: ClientId) -> Self {
        Process::Client(c)
    }
}

/// A SHA-256 digest, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        let out: [u8; 32] = Sha256::digest(bytes).into();
        Digest(out)
    }

    fn of_parts(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        Digest(hasher.finalize().into())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let array: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(array))
    }
}

/// Simulated signature: the signer's identity bound to a digest of the
/// signed payload.
///
/// Signatures can only be produced through a [`SigningKey`], and the
/// simulator hands out keys only to their owners (or, for corrupt
/// processes, to the adversary).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    signer: Process,
    digest: Digest,
}

impl Signature {
    pub fn signer(&self) -> Process {
        self.signer
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }
}

fn signature_digest(signer: Process, payload: &[u8]) -> Digest {
    let signer_bytes = canonical_bytes(&signer);
    Digest::of_parts(&[b"fairledger-sig", &signer_bytes, payload])
}

/// Checks that `sig` was produced by `signer` over exactly `payload`.
pub fn verify(sig: &Signature, payload: &[u8], signer: Process) -> bool {
    sig.signer == signer && sig.digest == signature_digest(signer, payload)
}

/// Signing capability of one process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningKey {
    owner: Process,
}

impl SigningKey {
    /// Issues the key of `owner`. Within a simulation only the engine calls
    /// this, and it refuses to issue keys of correct processes to the
    /// adversary.
    pub fn issue(owner: impl Into<Process>) -> Self {
        SigningKey {
            owner: owner.into(),
        }
    }

    pub fn owner(&self) -> Process {
        self.owner
    }

    pub fn sign(&self, payload: &[u8]) -> Signature {
        Signature {
            signer: self.owner,
            digest: signature_digest(self.owner, payload),
        }
    }
}

/// Canonical serialization: JSON with struct fields in declaration order.
pub fn canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("ledger types always serialize")
}

/// Application payload carried by a transaction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Payload {
    /// Move `amount` from account `from` to account `to`; `nonce` must be
    /// the next nonce of `from`.
    Transfer {
        from: String,
        to: String,
        amount: u64,
        nonce: u64,
    },
    /// Uninterpreted data.
    Opaque { data: String },
}

impl Payload {
    pub fn transfer(from: &str, to: &str, amount: u64, nonce: u64) -> Self {
        Payload::Transfer {
            from: from.to_owned(),
            to: to.to_owned(),
            amount,
            nonce,
        }
    }

    pub fn opaque(data: impl Into<String>) -> Self {
        Payload::Opaque { data: data.into() }
    }
}

/// `(client, seq)` uniquely names a transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId {
    pub client: ClientId,
    pub seq: u64,
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.client, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub client: ClientId,
    pub seq: u64,
    pub payload: Payload,
    pub signature: Signature,
}

#[derive(Serialize)]
struct TxSigned<'a> {
    client: ClientId,
    seq: u64,
    payload: &'a Payload,
}

impl Transaction {
    /// Builds a transaction signed by `key`, which must belong to `client`
    /// for the result to verify.
    pub fn new(key: &SigningKey, client: ClientId, seq: u64, payload: Payload) -> Self {
        let signature = key.sign(&Self::signed_bytes(client, seq, &payload));
        Transaction {
            client,
            seq,
            payload,
            signature,
        }
    }

    fn signed_bytes(client: ClientId, seq: u64, payload: &Payload) -> Vec<u8> {
        canonical_bytes(&TxSigned {
            client,
            seq,
            payload,
        })
    }

    pub fn id(&self) -> TxId {
        TxId {
            client: self.client,
            seq: self.seq,
        }
    }

    pub fn verify_signature(&self) -> bool {
        verify(
            &self.signature,
            &Self::signed_bytes(self.client, self.seq, &self.payload),
            Process::Client(self.client),
        )
    }
}

/// Content hash of a block; realises the parent pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockHash(pub Digest);

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// A replica's signed per-instance contribution (the `SUB-PROP` message).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubProposal {
    pub sender: ReplicaId,
    pub instance: u64,
    pub txs: Vec<Transaction>,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SubPropSigned<'a> {
    tag: &'static str,
    sender: ReplicaId,
    instance: u64,
    txs: &'a [Transaction],
}

impl SubProposal {
    pub fn new(key: &SigningKey, sender: ReplicaId, instance: u64, txs: Vec<Transaction>) -> Self {
        let signature = key.sign(&Self::signed_bytes(sender, instance, &txs));
        SubProposal {
            sender,
            instance,
            txs,
            signature,
        }
    }

    fn signed_bytes(sender: ReplicaId, instance: u64, txs: &[Transaction]) -> Vec<u8> {
        canonical_bytes(&SubPropSigned {
            tag: "SUB-PROP",
            sender,
            instance,
            txs,
        })
    }

    pub fn verify_signature(&self) -> bool {
        verify(
            &self.signature,
            &Self::signed_bytes(self.sender, self.instance, &self.txs),
            Process::Replica(self.sender),
        )
    }
}

/// Signed sub-proposals justifying a fused block.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Certificate {
    pub instance: u64,
    /// Sorted by sender.
    pub entries: Vec<SubProposal>,
}

impl Certificate {
    pub fn new(instance: u64, mut entries: Vec<SubProposal>) -> Self {
        entries.sort_by_key(|e| e.sender);
        Certificate { instance, entries }
    }

    pub fn senders(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.entries.iter().map(|e| e.sender)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub parent: Option<BlockHash>,
    pub txs: Vec<Transaction>,
    pub proposer_sig: Option<Signature>,
    pub certificate: Option<Certificate>,
}

#[derive(Serialize)]
struct BlockSigned<'a> {
    parent: &'a Option<BlockHash>,
    txs: &'a [Transaction],
    certificate: &'a Option<Certificate>,
}

impl Block {
    /// The genesis block `⟨⊥, []⟩`.
    pub fn genesis() -> Self {
        Block {
            parent: None,
            txs: Vec::new(),
            proposer_sig: None,
            certificate: None,
        }
    }

    /// An unsigned block, as produced by the log-to-chain correspondence.
    pub fn unsigned(parent: BlockHash, txs: Vec<Transaction>) -> Self {
        Block {
            parent: Some(parent),
            txs,
            proposer_sig: None,
            certificate: None,
        }
    }

    pub fn signed(
        key: &SigningKey,
        parent: BlockHash,
        txs: Vec<Transaction>,
        certificate: Option<Certificate>,
    ) -> Self {
        let parent = Some(parent);
        let sig = key.sign(&Self::signed_bytes(&parent, &txs, &certificate));
        Block {
            parent,
            txs,
            proposer_sig: Some(sig),
            certificate,
        }
    }

    fn signed_bytes(
        parent: &Option<BlockHash>,
        txs: &[Transaction],
        certificate: &Option<Certificate>,
    ) -> Vec<u8> {
        canonical_bytes(&BlockSigned {
            parent,
            txs,
            certificate,
        })
    }

    pub fn hash(&self) -> BlockHash {
        hash_block(self)
    }

    pub fn is_genesis(&self) -> bool {
        *self == Block::genesis()
    }

    /// The replica whose signature the block carries, if it verifies.
    pub fn proposer(&self) -> Option<ReplicaId> {
        let sig = self.proposer_sig?;
        match sig.signer() {
            Process::Replica(r) if self.verify_proposer(r) => Some(r),
            _ => None,
        }
    }

    pub fn verify_proposer(&self, replica: ReplicaId) -> bool {
        match &self.proposer_sig {
            Some(sig) => verify(
                sig,
                &Self::signed_bytes(&self.parent, &self.txs, &self.certificate),
                Process::Replica(replica),
            ),
            None => false,
        }
    }
}

pub fn hash_block(b: &Block) -> BlockHash {
    BlockHash(Digest::of(&canonical_bytes(b)))
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("chain is empty")]
    Empty,
    #[error("block 0 is not the genesis block")]
    BadGenesis,
    #[error("block {index} does not point to its predecessor")]
    BrokenLink { index: usize },
}

/// Checks structural well-formedness of a raw block sequence.
pub fn check_links(blocks: &[Block]) -> Result<(), ChainError> {
    let first = blocks.first().ok_or(ChainError::Empty)?;
    if !first.is_genesis() {
        return Err(ChainError::BadGenesis);
    }
    let mut prev = first.hash();
    for (index, block) in blocks.iter().enumerate().skip(1) {
        if block.parent != Some(prev) {
            return Err(ChainError::BrokenLink { index });
        }
        prev = block.hash();
    }
    Ok(())
}

/// Genesis-rooted, hash-linked sequence of blocks. Well-formedness is
/// checked on construction and on every append.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<BlockHash>,
}

impl Default for Chain {
    fn default() -> Self {
        Chain::genesis()
    }
}

impl Chain {
    pub fn genesis() -> Self {
        let g = Block::genesis();
        let h = g.hash();
        Chain {
            blocks: vec![g],
            hashes: vec![h],
        }
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, ChainError> {
        check_links(&blocks)?;
        let hashes = blocks.iter().map(Block::hash).collect();
        Ok(Chain { blocks, hashes })
    }

    pub fn push(&mut self, block: Block) -> Result<(), ChainError> {
        if block.parent != Some(self.tip_hash()) {
            return Err(ChainError::BrokenLink {
                index: self.blocks.len(),
            });
        }
        self.hashes.push(block.hash());
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn hashes(&self) -> &[BlockHash] {
        &self.hashes
    }

    /// Number of blocks, genesis included.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tip_hash(&self) -> BlockHash {
        *self.hashes.last().expect("chain always holds genesis")
    }

    /// The first `len` blocks.
    pub fn prefix(&self, len: usize) -> Chain {
        let len = len.clamp(1, self.blocks.len());
        Chain {
            blocks: self.blocks[..len].to_vec(),
            hashes: self.hashes[..len].to_vec(),
        }
    }

    pub fn is_prefix_of(&self, other: &Chain) -> bool {
        self.len() <= other.len() && other.hashes[..self.len()] == self.hashes[..]
    }

    pub fn contains_tx(&self, tx: &Transaction) -> bool {
        self.blocks.iter().any(|b| b.txs.contains(tx))
    }
}

impl TryFrom<Vec<Block>> for Chain {
    type Error = ChainError;

    fn try_from(blocks: Vec<Block>) -> Result<Self, ChainError> {
        Chain::from_blocks(blocks)
    }
}

impl From<Chain> for Vec<Block> {
    fn from(c: Chain) -> Self {
        c.blocks
    }
}

/// Length of the longest common prefix of a set of block sequences.
pub fn longest_common_prefix(chains: &[&[Block]]) -> usize {
    let Some(shortest) = chains.iter().map(|c| c.len()).min() else {
        return 0;
    };
    (0..shortest)
        .find(|&i| chains.iter().any(|c| c[i] != chains[0][i]))
        .unwrap_or(shortest)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Log {
    pub txs: Vec<Transaction>,
}

impl Log {
    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }
}

/// Views a chain as a log by concatenating block contents in chain order.
pub fn flatten_chain_to_log(c: &Chain) -> Log {
    Log {
        txs: c
            .blocks
            .iter()
            .flat_map(|b| b.txs.iter().cloned())
            .collect(),
    }
}

/// The chain with one single-transaction block per log position.
pub fn log_to_chain(log: &Log) -> Chain {
    let mut chain = Chain::genesis();
    for tx in &log.txs {
        let block = Block::unsigned(chain.tip_hash(), vec![tx.clone()]);
        chain.push(block).expect("block built on the current tip");
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(client: u32, seq: u64) -> Transaction {
        let c = ClientId(client);
        Transaction::new(
            &SigningKey::issue(c),
            c,
            seq,
            Payload::opaque(format!("{client}-{seq}")),
        )
    }

    #[test]
    fn genesis_hash_is_stable() {
        assert_eq!(Block::genesis().hash(), Block::genesis().hash());
        assert_eq!(Chain::genesis().tip_hash(), Block::genesis().hash());
    }

    #[test]
    fn field_wise_equal_blocks_hash_equal() {
        let g = Block::genesis().hash();
        let a = Block::unsigned(g, vec![tx(0, 1)]);
        let b = Block::unsigned(g, vec![tx(0, 1)]);
        assert_eq!(a.hash(), b.hash());
        let c = Block::unsigned(g, vec![tx(0, 2)]);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sign_verify_round_trip_and_mismatches() {
        let key = SigningKey::issue(ReplicaId(3));
        let sig = key.sign(b"m");
        assert!(verify(&sig, b"m", Process::Replica(ReplicaId(3))));
        assert!(!verify(&sig, b"m", Process::Replica(ReplicaId(4))));
        assert!(!verify(&sig, b"m2", Process::Replica(ReplicaId(3))));
        assert!(!verify(&sig, b"m", Process::Client(ClientId(3))));
    }

    #[test]
    fn transaction_signature_binds_client() {
        let t = tx(1, 1);
        assert!(t.verify_signature());
        let forged = Transaction::new(
            &SigningKey::issue(ClientId(2)),
            ClientId(1),
            1,
            t.payload.clone(),
        );
        assert!(!forged.verify_signature());
        let mut tampered = t.clone();
        tampered.seq = 2;
        assert!(!tampered.verify_signature());
    }

    #[test]
    fn block_proposer_signature() {
        let key = SigningKey::issue(ReplicaId(2));
        let b = Block::signed(&key, Block::genesis().hash(), vec![tx(0, 1)], None);
        assert_eq!(b.proposer(), Some(ReplicaId(2)));
        assert!(!b.verify_proposer(ReplicaId(1)));
        let mut tampered = b.clone();
        tampered.txs.clear();
        assert_eq!(tampered.proposer(), None);
        assert_eq!(Block::genesis().proposer(), None);
    }

    #[test]
    fn flatten_examples() {
        assert!(flatten_chain_to_log(&Chain::genesis()).is_empty());
        let mut c = Chain::genesis();
        let (t1, t2, t3) = (tx(0, 1), tx(0, 2), tx(1, 1));
        c.push(Block::unsigned(c.tip_hash(), vec![t1.clone(), t2.clone()]))
            .unwrap();
        c.push(Block::unsigned(c.tip_hash(), vec![t3.clone()]))
            .unwrap();
        assert_eq!(flatten_chain_to_log(&c).txs, vec![t1, t2, t3]);
    }

    #[test]
    fn log_to_chain_examples() {
        assert_eq!(log_to_chain(&Log::default()), Chain::genesis());
        let (t0, t1) = (tx(0, 1), tx(1, 1));
        let chain = log_to_chain(&Log {
            txs: vec![t0.clone(), t1.clone()],
        });
        assert_eq!(chain.len(), 3);
        assert!(chain.blocks()[0].is_genesis());
        assert_eq!(chain.blocks()[1].txs, vec![t0]);
        assert_eq!(chain.blocks()[2].txs, vec![t1]);
        assert_eq!(chain.blocks()[2].parent, Some(chain.hashes()[1]));
    }

    #[test]
    fn malformed_chains_are_rejected() {
        assert_eq!(Chain::from_blocks(vec![]), Err(ChainError::Empty));
        let g = Block::genesis();
        let orphan = Block::unsigned(BlockHash(Digest([7; 32])), vec![]);
        assert_eq!(
            Chain::from_blocks(vec![g.clone(), orphan.clone()]),
            Err(ChainError::BrokenLink { index: 1 })
        );
        assert_eq!(
            Chain::from_blocks(vec![orphan]),
            Err(ChainError::BadGenesis)
        );
        let mut c = Chain::genesis();
        assert!(c
            .push(Block::unsigned(BlockHash(Digest([1; 32])), vec![]))
            .is_err());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn lcp_of_chains() {
        let mut long = Chain::genesis();
        for seq in 1..=3 {
            long.push(Block::unsigned(long.tip_hash(), vec![tx(0, seq)]))
                .unwrap();
        }
        let short = long.prefix(3);
        assert_eq!(
            longest_common_prefix(&[short.blocks(), short.blocks(), long.blocks()]),
            3
        );
        let mut fork = long.prefix(2);
        fork.push(Block::unsigned(fork.tip_hash(), vec![tx(1, 9)]))
            .unwrap();
        assert_eq!(longest_common_prefix(&[fork.blocks(), long.blocks()]), 2);
        assert!(short.is_prefix_of(&long));
        assert!(!fork.is_prefix_of(&long));
    }

    #[test]
    fn chain_serde_round_trip_rechecks_links() {
        let mut c = Chain::genesis();
        c.push(Block::unsigned(c.tip_hash(), vec![tx(0, 1)]))
            .unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: Chain = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let broken = text.replacen("\"parent\":\"", "\"parent\":\"00", 1);
        assert!(serde_json::from_str::<Chain>(&broken).is_err());
    }
}
