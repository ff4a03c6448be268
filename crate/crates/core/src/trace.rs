//! Trace events and their JSON Lines encoding.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructions::Construction;
use crate::netsim::{EnvelopeId, Tick};
use crate::types::{
    Block, BlockHash, ClientId, Process, ReplicaId, SubProposal, Transaction, TxId,
};
use crate::validity::{FusionModel, ValidityModel};

/// Everything needed to interpret a trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub n: u32,
    pub f: u32,
    pub seed: u64,
    pub gst: Tick,
    pub delta: Tick,
    pub horizon_instances: u64,
    pub max_block_size: usize,
    pub construction: Construction,
    pub validity: ValidityModel,
    pub fusion: FusionModel,
    pub corrupt_replicas: BTreeSet<ReplicaId>,
    pub corrupt_clients: BTreeSet<ClientId>,
    pub grace: u64,
}

impl RunHeader {
    pub fn is_correct_replica(&self, r: ReplicaId) -> bool {
        r.0 < self.n && !self.corrupt_replicas.contains(&r)
    }

    pub fn correct_replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        (0..self.n)
            .map(ReplicaId)
            .filter(|r| !self.corrupt_replicas.contains(r))
    }

    pub fn is_correct_client(&self, c: ClientId) -> bool {
        !self.corrupt_clients.contains(&c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    /// Every correct replica output the horizon instance.
    Horizon,
    /// The tick budget ran out.
    MaxTicks,
    /// Nothing left to do.
    Quiescent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    RunStarted {
        header: RunHeader,
    },
    /// A client's `read()`: the first `len` blocks, ending at `tip`.
    ReadSnapshot {
        len: usize,
        tip: BlockHash,
    },
    RequestIssued {
        tx: Transaction,
    },
    /// A correct client's request that failed the validity guard.
    RequestSuppressed {
        tx: Transaction,
        reason: String,
    },
    ReqSent {
        envelope: EnvelopeId,
        to: ReplicaId,
        tx: TxId,
    },
    ReqDelivered {
        envelope: EnvelopeId,
        from: ClientId,
        tx: Transaction,
    },
    /// Block content a replica inputs to the fair layer.
    FrcInput {
        instance: u64,
        txs: Vec<Transaction>,
    },
    SubPropSent {
        envelope: EnvelopeId,
        to: ReplicaId,
        proposal: SubProposal,
    },
    SubPropDelivered {
        envelope: EnvelopeId,
        from: ReplicaId,
        instance: u64,
    },
    RcInput {
        instance: u64,
        block: Block,
    },
    RcDecided {
        instance: u64,
        proposer: ReplicaId,
        hash: BlockHash,
    },
    Output {
        instance: u64,
        block: Block,
    },
    PoolCleared {
        instance: u64,
        removed: Vec<TxId>,
    },
    /// Log positions `start..start + txs.len()` committed at once.
    LogCommitted {
        start: usize,
        txs: Vec<TxId>,
    },
    RunEnded {
        undelivered: usize,
        reason: EndReason,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<Process>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn replica(&self) -> Option<ReplicaId> {
        match self.process {
            Some(Process::Replica(r)) => Some(r),
            _ => None,
        }
    }

    pub fn client(&self) -> Option<ClientId> {
        match self.process {
            Some(Process::Client(c)) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One canonical JSON object per line.
pub fn write_jsonl<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_jsonl(events: &[TraceEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(events, &mut buf).expect("writing to memory");
    buf
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
            line: i + 1,
            source,
        })?;
        events.push(e);
    }
    Ok(events)
}
