//! Run reports, their CSV artifacts, the byte cross-check and replay comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use probfed_transport::{parameter_message_len, probability_message_len, Direction, MessageKind, SERVER_ID};

use crate::error::SimError;

pub const REPORT_CSV: &str = "report.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const BYTES_CSV: &str = "bytes.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const CONFIG_ECHO: &str = "config.echo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Paradigm {
    Probability,
    FedAvg,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Probability => "probability",
            Paradigm::FedAvg => "fedavg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub strategy: String,
    pub contributors: usize,
    /// Roster clients that did not contribute.
    pub dropped: usize,
    pub stale: usize,
    pub ensemble_acc: f64,
    pub ensemble_f1: f64,
    /// Test accuracy of each contributor.
    pub client_acc: BTreeMap<u32, f64>,
    pub mean_kd: Option<f64>,
    pub bytes_probability: u64,
    pub bytes_parameters: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub round: u32,
    pub record: &'static str,
    pub subject: String,
    pub step: usize,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BytesRow {
    pub round: u32,
    pub endpoint: u32,
    pub direction: Direction,
    pub kind: MessageKind,
    pub messages: u64,
    pub bytes: u64,
}

/// Everything one paradigm produced in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParadigmReport {
    pub paradigm: Paradigm,
    pub scenario: String,
    pub seed: u64,
    pub roster: Vec<u32>,
    pub rounds: Vec<RoundRecord>,
    pub trace: Vec<TraceRow>,
    pub bytes: Vec<BytesRow>,
}

impl ParadigmReport {
    pub fn new(paradigm: Paradigm, scenario: &str, seed: u64, roster: Vec<u32>) -> Self {
        Self {
            paradigm,
            scenario: scenario.to_string(),
            seed,
            roster,
            rounds: Vec::new(),
            trace: Vec::new(),
            bytes: Vec::new(),
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds.iter().map(|r| r.bytes_probability + r.bytes_parameters).sum()
    }

    /// Upload bytes of one endpoint in one round.
    pub fn upload_bytes(&self, round: u32, endpoint: u32) -> u64 {
        self.bytes
            .iter()
            .filter(|b| b.round == round && b.endpoint == endpoint && b.direction == Direction::Upload)
            .map(|b| b.bytes)
            .sum()
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn endpoint_name(id: u32) -> String {
    if id == SERVER_ID {
        "server".to_string()
    } else {
        id.to_string()
    }
}

fn parse_endpoint(s: &str) -> Option<u32> {
    if s == "server" {
        Some(SERVER_ID)
    } else {
        s.parse().ok()
    }
}

fn parse_direction(s: &str) -> Option<Direction> {
    [Direction::Upload, Direction::Download].into_iter().find(|d| d.as_str() == s)
}

fn parse_kind(s: &str) -> Option<MessageKind> {
    [MessageKind::Contribution, MessageKind::Broadcast, MessageKind::Parameters]
        .into_iter()
        .find(|k| k.as_str() == s)
}

/// Subject of a `msg` trace row.
pub fn msg_subject(endpoint: u32, direction: Direction, kind: MessageKind) -> String {
    format!("{}:{}:{}", endpoint_name(endpoint), direction.as_str(), kind.as_str())
}

fn roster_union(reports: &[&ParadigmReport]) -> Vec<u32> {
    let ids: BTreeSet<u32> = reports.iter().flat_map(|r| r.roster.iter().copied()).collect();
    ids.into_iter().collect()
}

pub fn render_report_csv(reports: &[&ParadigmReport]) -> String {
    let roster = roster_union(reports);
    let mut s = String::from("paradigm,round,strategy,contributors,dropped,stale,ensemble_acc,ensemble_f1");
    for id in &roster {
        let _ = write!(s, ",acc_client_{id}");
    }
    s.push_str(",mean_kd,bytes_probability,bytes_parameters\n");
    for rep in reports {
        for r in &rep.rounds {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                rep.paradigm.as_str(),
                r.round,
                r.strategy,
                r.contributors,
                r.dropped,
                r.stale,
                fmt_f64(r.ensemble_acc),
                fmt_f64(r.ensemble_f1)
            );
            for id in &roster {
                let _ = write!(s, ",{}", fmt_opt(r.client_acc.get(id).copied()));
            }
            let _ = writeln!(
                s,
                ",{},{},{}",
                fmt_opt(r.mean_kd),
                r.bytes_probability,
                r.bytes_parameters
            );
        }
    }
    s
}

pub fn render_trace_csv(reports: &[&ParadigmReport]) -> String {
    let mut s = String::from("paradigm,round,record,subject,step,a,b\n");
    for rep in reports {
        for t in &rep.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                rep.paradigm.as_str(),
                t.round,
                t.record,
                t.subject,
                t.step,
                t.a,
                t.b
            );
        }
    }
    s
}

pub fn render_bytes_csv(reports: &[&ParadigmReport]) -> String {
    let mut s = String::from("paradigm,round,endpoint,direction,kind,messages,bytes\n");
    for rep in reports {
        for b in &rep.bytes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                rep.paradigm.as_str(),
                b.round,
                endpoint_name(b.endpoint),
                b.direction.as_str(),
                b.kind.as_str(),
                b.messages,
                b.bytes
            );
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub total_bytes: u64,
    /// `total_bytes` over the baseline's total bytes.
    pub byte_ratio: f64,
}

impl ComparisonRow {
    /// A row with bytes only, for quoting external measurements.
    pub fn bytes_only(label: &str, total_bytes: u64, baseline_bytes: u64) -> Self {
        Self {
            label: label.to_string(),
            accuracy: None,
            macro_f1: None,
            total_bytes,
            byte_ratio: total_bytes as f64 / baseline_bytes as f64,
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if a == b {
        1.0
    } else {
        a as f64 / b as f64
    }
}

fn summary_row(r: &ParadigmReport, baseline: u64) -> ComparisonRow {
    let last = r.last();
    let label = match (r.paradigm, last) {
        (Paradigm::Probability, Some(l)) => format!("probability/{}", l.strategy),
        _ => r.paradigm.as_str().to_string(),
    };
    ComparisonRow {
        label,
        accuracy: last.map(|l| l.ensemble_acc),
        macro_f1: last.map(|l| l.ensemble_f1),
        total_bytes: r.total_bytes(),
        byte_ratio: ratio(r.total_bytes(), baseline),
    }
}

/// Side-by-side rows for two reports of the same scenario and seed; `b` is
/// the byte baseline.
pub fn compare_paradigms(a: &ParadigmReport, b: &ParadigmReport) -> Result<Vec<ComparisonRow>, SimError> {
    if a.scenario != b.scenario || a.seed != b.seed {
        return Err(SimError::ScenarioMismatch(format!(
            "{} (seed {}) vs {} (seed {})",
            a.scenario, a.seed, b.scenario, b.seed
        )));
    }
    let base = b.total_bytes();
    Ok(vec![summary_row(a, base), summary_row(b, base)])
}

pub fn render_comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("label,accuracy,macro_f1,total_bytes,byte_ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.label,
            fmt_opt(r.accuracy),
            fmt_opt(r.macro_f1),
            r.total_bytes,
            fmt_f64(r.byte_ratio)
        );
    }
    s
}

/// Aligned plain-text table.
pub fn render_comparison_table(rows: &[ComparisonRow]) -> String {
    let header = ["model", "accuracy", "macro-F1", "total bytes", "byte ratio"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.accuracy.map_or("-".into(), |x| format!("{x:.4}")),
                r.macro_f1.map_or("-".into(), |x| format!("{x:.4}")),
                group_thousands(r.total_bytes),
                format!("{:.6}", r.byte_ratio),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, row: &[String]| {
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.push('\n');
    };
    line(&mut s, &header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut s, &rule);
    for row in &cells {
        line(&mut s, row);
    }
    s
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), SimError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| SimError::io(&path, e))
}

fn read_file(dir: &Path, name: &str) -> Result<String, SimError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(SimError::MissingArtifact(path.display().to_string()));
    }
    fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))
}

/// Writes the CSV artifacts, the comparison (if any) and the config echo.
pub fn write_artifacts(
    dir: &Path,
    reports: &[&ParadigmReport],
    comparison: Option<&[ComparisonRow]>,
    echo: &str,
) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    write_file(dir, REPORT_CSV, &render_report_csv(reports))?;
    write_file(dir, TRACE_CSV, &render_trace_csv(reports))?;
    write_file(dir, BYTES_CSV, &render_bytes_csv(reports))?;
    if let Some(rows) = comparison {
        write_file(dir, COMPARISON_CSV, &render_comparison_csv(rows))?;
        write_file(dir, COMPARISON_TXT, &render_comparison_table(rows))?;
    }
    write_file(dir, CONFIG_ECHO, echo)
}

type CellKey = (String, u32, u32, Direction, MessageKind);

/// Rebuilds every `bytes.csv` cell from the `msg` rows of `trace.csv` and
/// the wire-format size formula.
pub fn cross_check_bytes(dir: &Path) -> Result<(), SimError> {
    let trace = read_file(dir, TRACE_CSV)?;
    let bytes = read_file(dir, BYTES_CSV)?;
    let bad = |what: &str, line: &str| SimError::BytesMismatch(format!("unparsable {what} row `{line}`"));

    let mut rebuilt: BTreeMap<CellKey, (u64, u64)> = BTreeMap::new();
    for line in trace.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 || f[2] != "msg" {
            continue;
        }
        let round: u32 = f[1].parse().map_err(|_| bad("trace", line))?;
        let parts: Vec<&str> = f[3].split(':').collect();
        let (Some(endpoint), Some(direction), Some(kind)) = (
            parts.first().and_then(|s| parse_endpoint(s)),
            parts.get(1).and_then(|s| parse_direction(s)),
            parts.get(2).and_then(|s| parse_kind(s)),
        ) else {
            return Err(bad("trace", line));
        };
        let count: usize = f[5].parse().map_err(|_| bad("trace", line))?;
        let n_classes: usize = f[6].parse().map_err(|_| bad("trace", line))?;
        let size = match kind {
            MessageKind::Parameters => parameter_message_len(count),
            _ => probability_message_len(count, n_classes),
        };
        let cell = rebuilt.entry((f[0].to_string(), round, endpoint, direction, kind)).or_default();
        cell.0 += 1;
        cell.1 += size;
    }

    let mut ledger: BTreeMap<CellKey, (u64, u64)> = BTreeMap::new();
    for line in bytes.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("bytes", line));
        }
        let key = (
            f[0].to_string(),
            f[1].parse().map_err(|_| bad("bytes", line))?,
            parse_endpoint(f[2]).ok_or_else(|| bad("bytes", line))?,
            parse_direction(f[3]).ok_or_else(|| bad("bytes", line))?,
            parse_kind(f[4]).ok_or_else(|| bad("bytes", line))?,
        );
        let val = (
            f[5].parse().map_err(|_| bad("bytes", line))?,
            f[6].parse().map_err(|_| bad("bytes", line))?,
        );
        ledger.insert(key, val);
    }

    if rebuilt != ledger {
        let keys: BTreeSet<&CellKey> = rebuilt.keys().chain(ledger.keys()).collect();
        for k in keys {
            let (r, l) = (rebuilt.get(k), ledger.get(k));
            if r != l {
                return Err(SimError::BytesMismatch(format!(
                    "{} round {} {} {} {}: trace gives {:?}, ledger gives {:?}",
                    k.0,
                    k.1,
                    endpoint_name(k.2),
                    k.3.as_str(),
                    k.4.as_str(),
                    r,
                    l
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Difference {
    pub file: String,
    /// 1-based line number.
    pub line: usize,
    pub left: Option<String>,
    pub right: Option<String>,
}

impl std::fmt::Display for Difference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} line {}: `{}` vs `{}`",
            self.file,
            self.line,
            self.left.as_deref().unwrap_or("<end of file>"),
            self.right.as_deref().unwrap_or("<end of file>")
        )
    }
}

/// `None` when every CSV artifact in the two run directories is
/// byte-identical, otherwise the first difference.
pub fn replay_check(a: &Path, b: &Path) -> Result<Option<Difference>, SimError> {
    let mut files = vec![REPORT_CSV, TRACE_CSV, BYTES_CSV];
    if a.join(COMPARISON_CSV).exists() || b.join(COMPARISON_CSV).exists() {
        files.push(COMPARISON_CSV);
    }
    for name in files {
        let (x, y) = (read_file(a, name)?, read_file(b, name)?);
        if x == y {
            continue;
        }
        let (mut lx, mut ly) = (x.split_inclusive('\n'), y.split_inclusive('\n'));
        let mut line = 0;
        loop {
            line += 1;
            let (p, q) = (lx.next(), ly.next());
            if p != q {
                return Ok(Some(Difference {
                    file: name.to_string(),
                    line,
                    left: p.map(|s| s.trim_end().to_string()),
                    right: q.map(|s| s.trim_end().to_string()),
                }));
            }
        }
    }
    Ok(None)
}
