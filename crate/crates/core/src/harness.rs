//! Running scenarios: single runs, side-by-side comparisons, seed sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checker::{self, Property, Report, Status};
use crate::constructions::Construction;
use crate::scenario::Scenario;
use crate::sim::{simulate, SimError};
use crate::trace::{to_jsonl, EventKind, TraceEvent};
use crate::types::{ClientId, ReplicaId, Transaction, TxId};

pub struct RunResult {
    pub scenario: Scenario,
    pub trace: Vec<TraceEvent>,
    pub report: Report,
}

/// Simulates `s` and checks the trace.
pub fn run(s: &Scenario) -> Result<RunResult, SimError> {
    let trace = simulate(s)?;
    let report = checker::check(&trace, None).expect("simulator traces are well formed");
    Ok(RunResult {
        scenario: s.clone(),
        trace,
        report,
    })
}

impl RunResult {
    /// Writes `trace.jsonl` and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let trace = dir.join("trace.jsonl");
        let report = dir.join("report.json");
        fs::write(&trace, to_jsonl(&self.trace))?;
        fs::write(&report, report_json(&self.report))?;
        Ok((trace, report))
    }
}

pub fn report_json(r: &Report) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

/// What became of a correct client's transaction by the end of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fate", rename_all = "kebab-case")]
pub enum Fate {
    /// Decided at `instance`; `after_receipt` counts decisions between the
    /// last correct replica's receipt and that one, inclusive.
    Finalised { instance: u64, after_receipt: u64 },
    /// Not finalised and invalid on the final chain.
    Invalidated,
    /// Valid, pending, and passed over for at least `grace` decisions after
    /// every correct replica received it.
    Starved,
    /// Still within grace or not yet received everywhere.
    Pending,
    /// Invalid at request time; never sent.
    Suppressed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxFate {
    pub tx: TxId,
    pub fate: Fate,
}

/// Fates of every request by a correct client, in request order.
pub fn fates(trace: &[TraceEvent], grace: u64) -> Vec<TxFate> {
    let Some(header) = trace.iter().find_map(|e| match &e.kind {
        EventKind::RunStarted { header } => Some(header),
        _ => None,
    }) else {
        return Vec::new();
    };
    let correct = |r: Option<ReplicaId>| r.is_some_and(|r| header.is_correct_replica(r));
    let correct_client = |c: Option<ClientId>| c.is_some_and(|c| header.is_correct_client(c));

    let mut decided_at: BTreeMap<&Transaction, u64> = BTreeMap::new();
    let mut chain_txs: BTreeMap<u64, &[Transaction]> = BTreeMap::new();
    let mut decisions: Vec<(usize, u64)> = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        match &e.kind {
            EventKind::Output { instance, block } if correct(e.replica()) => {
                chain_txs.entry(*instance).or_insert(&block.txs);
                for tx in &block.txs {
                    decided_at.entry(tx).or_insert(*instance);
                }
            }
            EventKind::RcDecided { instance, .. } => decisions.push((i, *instance)),
            _ => {}
        }
    }
    let final_state = chain_txs
        .values()
        .try_fold(header.validity.genesis_state(), |s, txs| s.applied(txs));

    let mut out = Vec::new();
    for (idx, e) in trace.iter().enumerate() {
        if !correct_client(e.client()) {
            continue;
        }
        let tx = match &e.kind {
            EventKind::RequestSuppressed { tx, .. } => {
                out.push(TxFate {
                    tx: tx.id(),
                    fate: Fate::Suppressed,
                });
                continue;
            }
            EventKind::RequestIssued { tx } => tx,
            _ => continue,
        };
        let mut receipts: BTreeMap<ReplicaId, usize> = BTreeMap::new();
        for (i, d) in trace.iter().enumerate().skip(idx + 1) {
            if let EventKind::ReqDelivered { tx: t, .. } = &d.kind {
                if t == tx && correct(d.replica()) {
                    receipts.entry(d.replica().expect("replica")).or_insert(i);
                }
            }
        }
        let everywhere = header.correct_replicas().all(|r| receipts.contains_key(&r));
        let last = receipts.values().max().copied().unwrap_or(usize::MAX);
        let fate = if let Some(&instance) = decided_at.get(tx) {
            let after_receipt = decisions
                .iter()
                .filter(|&&(i, k)| i > last && k <= instance)
                .count() as u64;
            Fate::Finalised {
                instance,
                after_receipt: if everywhere { after_receipt } else { 0 },
            }
        } else if final_state.as_ref().is_some_and(|s| s.check(tx).is_err()) {
            Fate::Invalidated
        } else if everywhere && decisions.iter().filter(|&&(i, _)| i > last).count() as u64 >= grace
        {
            Fate::Starved
        } else {
            Fate::Pending
        };
        out.push(TxFate { tx: tx.id(), fate });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub tx: TxId,
    pub bcrc: Option<Fate>,
    pub bcfrc: Option<Fate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub bcrc: Report,
    pub bcfrc: Report,
}

impl Comparison {
    pub fn exit_code(&self) -> i32 {
        self.bcrc.exit_code().max(self.bcfrc.exit_code())
    }

    /// Plain-text fate table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:<24} {:<24}\n", "tx", "bcrc", "bcfrc");
        for row in &self.rows {
            out += &format!(
                "{:<10} {:<24} {:<24}\n",
                row.tx.to_string(),
                fate_label(row.bcrc),
                fate_label(row.bcfrc)
            );
        }
        for (name, report) in [("bcrc", &self.bcrc), ("bcfrc", &self.bcfrc)] {
            let bad: Vec<&str> = report.violations().map(|v| v.property.name()).collect();
            out += &format!(
                "{name}: {}\n",
                if bad.is_empty() {
                    "no violations".to_owned()
                } else {
                    format!("violations: {}", bad.join(", "))
                }
            );
        }
        out
    }
}

fn fate_label(f: Option<Fate>) -> String {
    match f {
        None => "-".to_owned(),
        Some(Fate::Finalised { instance, .. }) => format!("finalised@{instance}"),
        Some(Fate::Invalidated) => "invalidated".to_owned(),
        Some(Fate::Starved) => "starved".to_owned(),
        Some(Fate::Pending) => "pending".to_owned(),
        Some(Fate::Suppressed) => "suppressed".to_owned(),
    }
}

/// Runs the same scenario under both blockchain constructions.
pub fn compare(s: &Scenario) -> Result<Comparison, SimError> {
    let mut results = Vec::new();
    for c in [Construction::Bcrc, Construction::Bcfrc] {
        let mut sc = s.clone();
        sc.construction = Some(c);
        results.push(run(&sc)?);
    }
    let bcfrc = results.pop().expect("two runs");
    let bcrc = results.pop().expect("two runs");
    let a = fates(&bcrc.trace, s.grace);
    let b = fates(&bcfrc.trace, s.grace);
    let mut rows: Vec<ComparisonRow> = a
        .iter()
        .map(|f| ComparisonRow {
            tx: f.tx,
            bcrc: Some(f.fate),
            bcfrc: b.iter().find(|g| g.tx == f.tx).map(|g| g.fate),
        })
        .collect();
    for g in b.iter().filter(|g| !a.iter().any(|f| f.tx == g.tx)) {
        rows.push(ComparisonRow {
            tx: g.tx,
            bcrc: None,
            bcfrc: Some(g.fate),
        });
    }
    Ok(Comparison {
        rows,
        bcrc: bcrc.report,
        bcfrc: bcfrc.report,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: usize,
    /// Property -> status -> number of seeds.
    pub counts: BTreeMap<Property, BTreeMap<Status, usize>>,
    pub violating_seeds: Vec<u64>,
    pub inconclusive_seeds: Vec<u64>,
}

impl SweepSummary {
    pub fn exit_code(&self) -> i32 {
        if !self.violating_seeds.is_empty() {
            1
        } else if !self.inconclusive_seeds.is_empty() {
            2
        } else {
            0
        }
    }

    pub fn count(&self, p: Property, s: Status) -> usize {
        self.counts
            .get(&p)
            .and_then(|m| m.get(&s))
            .copied()
            .unwrap_or(0)
    }
}

/// Runs `s` once per seed and tallies verdicts.
pub fn sweep(s: &Scenario, seeds: impl IntoIterator<Item = u64>) -> Result<SweepSummary, SimError> {
    let mut summary = SweepSummary::default();
    for seed in seeds {
        let mut sc = s.clone();
        sc.seed = seed;
        let r = run(&sc)?;
        summary.runs += 1;
        for v in &r.report.verdicts {
            *summary
                .counts
                .entry(v.property)
                .or_default()
                .entry(v.status)
                .or_default() += 1;
        }
        match r.report.exit_code() {
            1 => summary.violating_seeds.push(seed),
            2 => summary.inconclusive_seeds.push(seed),
            _ => {}
        }
    }
    Ok(summary)
}
