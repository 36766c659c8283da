//! Per-packet exports and summary statistics for simulation runs.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::configgen::ConfigCount;
use crate::forwarding::{DropReason, Protocol, SimTime, Timers};
use crate::sim::{Outcome, PacketRecord, Phase};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub injected: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub mean_latency: Option<f64>,
}

/// Aggregates over a run. Everything here is recomputable from the
/// per-packet records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub injected: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub in_flight: usize,
    /// Mean delivery latency over delivered packets.
    pub mean_latency: Option<f64>,
    pub max_latency: Option<SimTime>,
    /// Mean hop count over delivered packets.
    pub mean_hops: Option<f64>,
    pub drops: BTreeMap<DropReason, usize>,
    pub phases: BTreeMap<Phase, PhaseSummary>,
}

fn mean(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64)
    }
}

pub fn summarize(records: &[PacketRecord]) -> Summary {
    let mut s = Summary {
        injected: records.len(),
        ..Summary::default()
    };
    let mut latencies = Vec::new();
    let mut hops = Vec::new();
    let mut phase_latencies: BTreeMap<Phase, Vec<u64>> = BTreeMap::new();
    for r in records {
        let phase = s.phases.entry(r.phase).or_default();
        phase.injected += 1;
        match r.outcome {
            Outcome::Delivered { .. } => {
                let l = r.latency().expect("delivered");
                s.delivered += 1;
                phase.delivered += 1;
                latencies.push(l);
                hops.push(r.hop_count() as u64);
                phase_latencies.entry(r.phase).or_default().push(l);
            }
            Outcome::Dropped { reason, .. } => {
                s.dropped += 1;
                phase.dropped += 1;
                *s.drops.entry(reason).or_insert(0) += 1;
            }
            Outcome::InFlight => s.in_flight += 1,
        }
    }
    s.mean_latency = mean(&latencies);
    s.max_latency = latencies.iter().copied().max();
    s.mean_hops = mean(&hops);
    for (phase, ls) in phase_latencies {
        if let Some(p) = s.phases.get_mut(&phase) {
            p.mean_latency = mean(&ls);
        }
    }
    s
}

/// One row of the packets CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRow {
    pub seq: u64,
    pub injected_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub dropped_reason: Option<String>,
    pub latency: Option<SimTime>,
    pub hop_count: usize,
    /// Configuration mark on each traversed link, `-` separated.
    pub marks: String,
    /// Visited nodes, `-` separated.
    pub path: String,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

impl From<&PacketRecord> for PacketRow {
    fn from(r: &PacketRecord) -> Self {
        PacketRow {
            seq: r.seq,
            injected_at: r.injected_at,
            delivered_at: r.delivered_at(),
            dropped_reason: r.drop_reason().map(|d| d.to_string()),
            latency: r.latency(),
            hop_count: r.hop_count(),
            marks: join(&r.marks),
            path: join(&r.path),
        }
    }
}

pub fn write_packets_csv<W: io::Write>(records: &[PacketRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(PacketRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_packets_csv<R: io::Read>(input: R) -> csv::Result<Vec<PacketRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub seq: u64,
    pub latency_mrc: Option<SimTime>,
    pub latency_emrc: Option<SimTime>,
    /// `latency_emrc - latency_mrc` when both packets were delivered.
    pub delta: Option<i64>,
}

/// Pairs packets of the two runs by sequence number.
pub fn delta_rows(mrc: &[PacketRecord], emrc: &[PacketRecord]) -> Vec<DeltaRow> {
    let by_seq: BTreeMap<u64, &PacketRecord> = emrc.iter().map(|r| (r.seq, r)).collect();
    mrc.iter()
        .map(|m| {
            let latency_mrc = m.latency();
            let latency_emrc = by_seq.get(&m.seq).and_then(|e| e.latency());
            let delta = match (latency_mrc, latency_emrc) {
                (Some(a), Some(b)) => Some(b as i64 - a as i64),
                _ => None,
            };
            DeltaRow {
                seq: m.seq,
                latency_mrc,
                latency_emrc,
                delta,
            }
        })
        .collect()
}

pub fn write_delta_csv<W: io::Write>(
    mrc: &[PacketRecord],
    emrc: &[PacketRecord],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in delta_rows(mrc, emrc) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to reproduce an output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Option<String>,
    pub topology: Option<String>,
    pub modes: Vec<Protocol>,
    pub n: ConfigCount,
    pub timers: Timers,
    pub link_delay: SimTime,
    pub detection_delay: SimTime,
    pub hold_capacity: usize,
    pub seed: u64,
    pub out_dir: String,
    pub tool_version: String,
}
