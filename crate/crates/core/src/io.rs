//! CSV and JSON run outputs.

use std::io::{Read, Write};

use serde::Serialize;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::ledger::NodeId;
use crate::simulator::{MetricsSummary, Outcome, RoundRecord, RunConfig, SweepCell, SweepRow};

pub const ROUNDS_HEADER: [&str; 11] = [
    "round",
    "selected_aggregator",
    "aggregator_was_malicious",
    "verdict",
    "hsic_value",
    "tau",
    "retries",
    "accuracy",
    "scores",
    "final_aggregator",
    "attempts",
];

pub const SWEEP_HEADER: [&str; 8] = [
    "attack",
    "ratio",
    "mode",
    "rep",
    "final_accuracy",
    "pse_precision",
    "paa_precision",
    "mean_accuracy",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn attempt_label(a: &crate::simulator::Attempt) -> &'static str {
    match a.verdict {
        _ if a.forced => "forced",
        Some(v) => v.label(),
        None => "unaudited",
    }
}

/// Writes one line per round under [`ROUNDS_HEADER`]. `scores` is
/// `id:score` pairs and `attempts` is `id:verdict` pairs, both `;`-separated.
pub fn write_rounds_csv<W: Write>(records: &[RoundRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ROUNDS_HEADER)?;
    for r in records {
        let scores = r
            .scores
            .iter()
            .map(|(id, s)| format!("{id}:{s}"))
            .collect::<Vec<_>>()
            .join(";");
        let attempts = r
            .attempts
            .iter()
            .map(|a| format!("{}:{}", a.aggregator, attempt_label(a)))
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            r.round.to_string(),
            opt(r.selected_aggregator),
            r.aggregator_was_malicious.to_string(),
            r.verdict.label().to_string(),
            opt(r.hsic_value),
            opt(r.tau),
            r.retries.to_string(),
            r.accuracy.to_string(),
            scores,
            opt(r.final_aggregator),
            attempts,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A `rounds.csv` line read back.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: u64,
    pub selected_aggregator: Option<NodeId>,
    pub aggregator_was_malicious: bool,
    pub verdict: Outcome,
    pub hsic_value: Option<f64>,
    pub tau: Option<f64>,
    pub retries: u32,
    pub accuracy: f64,
    pub scores: Vec<(NodeId, f64)>,
    pub final_aggregator: Option<NodeId>,
    pub attempts: Vec<(NodeId, String)>,
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Decode(format!("bad {what}: `{field}`")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, what: &str) -> Result<Option<T>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, what).map(Some)
    }
}

fn pairs<T>(field: &str, mut value: impl FnMut(&str) -> Result<T>) -> Result<Vec<(NodeId, T)>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|p| {
            let (id, v) = p
                .split_once(':')
                .ok_or_else(|| Error::Decode(format!("bad pair `{p}`")))?;
            Ok((NodeId(parse(id, "node id")?), value(v)?))
        })
        .collect()
}

pub fn read_rounds_csv<R: Read>(r: R) -> Result<Vec<RoundRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().ne(ROUNDS_HEADER) {
        return Err(Error::Decode(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(RoundRow {
            round: parse(&rec[0], "round")?,
            selected_aggregator: parse_opt::<u32>(&rec[1], "node id")?.map(NodeId),
            aggregator_was_malicious: parse(&rec[2], "flag")?,
            verdict: rec[3].parse()?,
            hsic_value: parse_opt(&rec[4], "hsic")?,
            tau: parse_opt(&rec[5], "tau")?,
            retries: parse(&rec[6], "retries")?,
            accuracy: parse(&rec[7], "accuracy")?,
            scores: pairs(&rec[8], |v| parse(v, "score"))?,
            final_aggregator: parse_opt::<u32>(&rec[9], "node id")?.map(NodeId),
            attempts: pairs(&rec[10], |v| Ok(v.to_string()))?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    metrics: &'a MetricsSummary,
    config: ConfigFile,
}

/// Metrics plus the fully resolved configuration, pretty-printed.
pub fn write_summary_json<W: Write>(summary: &MetricsSummary, cfg: &RunConfig, mut w: W) -> Result<()> {
    let file = SummaryFile {
        metrics: summary,
        config: ConfigFile::from(cfg),
    };
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// One line per run under [`SWEEP_HEADER`]; a failed run leaves the metric
/// fields empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.write_record([
            r.attack.to_string(),
            r.ratio.to_string(),
            r.mode.to_string(),
            r.rep.to_string(),
            opt(r.final_accuracy),
            opt(r.pse_precision),
            opt(r.paa_precision),
            opt(r.mean_accuracy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Repetition averages, one line per `(attack, ratio, mode)`.
pub fn write_sweep_summary_csv<W: Write>(cells: &[SweepCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "attack",
        "ratio",
        "mode",
        "completed",
        "failed",
        "final_accuracy",
        "mean_accuracy",
        "pse_precision",
        "paa_precision",
    ])?;
    for c in cells {
        out.write_record([
            c.attack.to_string(),
            c.ratio.to_string(),
            c.mode.to_string(),
            c.completed.to_string(),
            c.failed.to_string(),
            opt(c.final_accuracy),
            opt(c.mean_accuracy),
            opt(c.pse_precision),
            opt(c.paa_precision),
        ])?;
    }
    out.flush()?;
    Ok(())
}
