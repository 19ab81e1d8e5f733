//! Benchmark records, aggregation and ordering checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::security::{STAGE_ACCESS_VERIFICATION, STAGE_QUERY_TOKEN, STAGE_TOKEN_VALIDATION};

pub const CSV_HEADER: [&str; 6] = ["trial", "mode", "ac_enabled", "stage", "micros", "total_micros"];
/// Client-observed time not attributed to any server stage.
pub const STAGE_TRANSPORT: &str = "transport";
pub const DEFAULT_TRIALS: u32 = 50;
/// Minimum ratio of the chain-query stage mean over each validation stage mean.
pub const QUERY_DOMINANCE_FACTOR: f64 = 5.0;

/// Published reference measurements in milliseconds, printed next to local results.
pub mod reference {
    pub const QUERY_TOKEN_MS_EDGE: f64 = 41.8;
    pub const QUERY_TOKEN_MS_FOG: f64 = 14.2;
    pub const TOKEN_VALIDATION_MS_EDGE: f64 = 0.1;
    pub const ACCESS_VERIFICATION_MS_EDGE: f64 = 0.5;
    pub const MONO_FOG_AC_ON_MS: f64 = 59.9;
    pub const MONO_FOG_AC_OFF_MS: f64 = 50.4;
    pub const MICRO_FOG_AC_ON_MS: f64 = 133.5;
    pub const MICRO_FOG_AC_OFF_MS: f64 = 43.8;
    pub const MONO_EDGE_AC_ON_MS: f64 = 140.3;
    pub const MICRO_EDGE_AC_ON_MS: f64 = 147.1;
    pub const EDGE_AC_OVERHEAD: f64 = 0.21;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mono,
    Micro,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mono => "mono",
            Mode::Micro => "micro",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mono" => Ok(Mode::Mono),
            "micro" => Ok(Mode::Micro),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub ac_enabled: bool,
    pub trials: u32,
    /// Base URL of the data-provider endpoint.
    pub target: String,
    pub think_time_ms: u64,
    pub cpu_throttle: Option<f64>,
}

impl ScenarioConfig {
    pub fn new(mode: Mode, ac_enabled: bool, target: impl Into<String>) -> Self {
        Self {
            mode,
            ac_enabled,
            trials: DEFAULT_TRIALS,
            target: target.into(),
            think_time_ms: 0,
            cpu_throttle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub mode: Mode,
    pub ac_enabled: bool,
    pub stage: String,
    pub micros: u64,
    pub total_micros: u64,
}

/// One row per server stage plus a transport row carrying the remainder.
pub fn trial_rows(
    trial: u32,
    mode: Mode,
    ac_enabled: bool,
    stages: &IndexMap<String, u64>,
    total_micros: u64,
) -> Vec<TrialRecord> {
    let server: u64 = stages.values().sum();
    let total = total_micros.max(server);
    stages
        .iter()
        .map(|(s, m)| (s.clone(), *m))
        .chain(std::iter::once((STAGE_TRANSPORT.to_string(), total - server)))
        .map(|(stage, micros)| TrialRecord {
            trial,
            mode,
            ac_enabled,
            stage,
            micros,
            total_micros: total,
        })
        .collect()
}

pub fn write_csv<W: io::Write>(out: W, records: &[TrialRecord]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<TrialRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("comparison needs all four cells; missing {0:?}")]
    IncompleteMatrix(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub p50: u64,
    pub p95: u64,
}

/// Nearest-rank percentile on a sorted slice.
pub fn percentile(sorted: &[u64], pct: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Stats {
    pub fn from_values(values: &[u64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        Some(Stats {
            count: values.len(),
            mean: values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64,
            p50: percentile(&sorted, 50.0),
            p95: percentile(&sorted, 95.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: Mode,
    pub ac_enabled: bool,
    pub trials: usize,
    pub total: Stats,
    pub stages: IndexMap<String, Stats>,
}

impl CellSummary {
    pub fn stage_mean(&self, stage: &str) -> Option<f64> {
        self.stages.get(stage).map(|s| s.mean)
    }

    pub fn label(&self) -> String {
        cell_label(self.mode, self.ac_enabled)
    }
}

fn cell_label(mode: Mode, ac: bool) -> String {
    format!("{mode}/ac-{}", if ac { "on" } else { "off" })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    /// Per mode with both cells present: mean(on − off) / mean(on).
    pub overhead: BTreeMap<Mode, f64>,
}

impl Summary {
    pub fn cell(&self, mode: Mode, ac_enabled: bool) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.mode == mode && c.ac_enabled == ac_enabled)
    }

    /// Whitespace-separated table, one row per cell and stage, for plotting tools.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# cell stage mean_ms p50_ms p95_ms\n");
        for c in &self.cells {
            let rows = c.stages.iter().map(|(s, st)| (s.as_str(), st)).chain([("total", &c.total)]);
            for (stage, st) in rows {
                out.push_str(&format!(
                    "{} {} {:.3} {:.3} {:.3}\n",
                    c.label(),
                    stage,
                    st.mean / 1000.0,
                    st.p50 as f64 / 1000.0,
                    st.p95 as f64 / 1000.0
                ));
            }
        }
        out
    }
}

pub fn aggregate(records: &[TrialRecord]) -> Result<Summary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut groups: BTreeMap<(Mode, bool), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.mode, r.ac_enabled)).or_default().push(r);
    }
    let cells: Vec<CellSummary> = groups
        .into_iter()
        .map(|((mode, ac_enabled), rows)| {
            let mut totals: BTreeMap<u32, u64> = BTreeMap::new();
            let mut by_stage: IndexMap<String, Vec<u64>> = IndexMap::new();
            for r in rows {
                totals.insert(r.trial, r.total_micros);
                by_stage.entry(r.stage.clone()).or_default().push(r.micros);
            }
            let totals: Vec<u64> = totals.into_values().collect();
            CellSummary {
                mode,
                ac_enabled,
                trials: totals.len(),
                total: Stats::from_values(&totals).expect("group is non-empty"),
                stages: by_stage
                    .into_iter()
                    .map(|(s, v)| (s, Stats::from_values(&v).expect("stage has rows")))
                    .collect(),
            }
        })
        .collect();
    let mut summary = Summary {
        cells,
        overhead: BTreeMap::new(),
    };
    for mode in [Mode::Mono, Mode::Micro] {
        if let (Some(on), Some(off)) = (summary.cell(mode, true), summary.cell(mode, false)) {
            if on.total.mean > 0.0 {
                let ratio = (on.total.mean - off.total.mean) / on.total.mean;
                summary.overhead.insert(mode, ratio);
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub checks: Vec<OrderingCheck>,
}

impl ComparisonReport {
    pub fn violations(&self) -> impl Iterator<Item = &OrderingCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn check(&self, name: &str) -> Option<&OrderingCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// True when `query` is positive and at least [`QUERY_DOMINANCE_FACTOR`] times `other`.
pub fn dominates(query: f64, other: f64) -> bool {
    query > 0.0 && query > other && query >= QUERY_DOMINANCE_FACTOR * other
}

fn ms(micros: f64) -> String {
    format!("{:.3} ms", micros / 1000.0)
}

pub fn compare_modes(summary: &Summary) -> Result<ComparisonReport, BenchError> {
    let mut missing = Vec::new();
    for mode in [Mode::Mono, Mode::Micro] {
        for ac in [true, false] {
            if summary.cell(mode, ac).is_none() {
                missing.push(cell_label(mode, ac));
            }
        }
    }
    if !missing.is_empty() {
        return Err(BenchError::IncompleteMatrix(missing));
    }
    let cell = |m, ac| summary.cell(m, ac).expect("checked above");
    let mut checks = Vec::new();
    for mode in [Mode::Mono, Mode::Micro] {
        let on = cell(mode, true);
        let query = on.stage_mean(STAGE_QUERY_TOKEN).unwrap_or(0.0);
        for stage in [STAGE_TOKEN_VALIDATION, STAGE_ACCESS_VERIFICATION] {
            let other = on.stage_mean(stage).unwrap_or(0.0);
            checks.push(OrderingCheck {
                name: format!("query_dominates_{stage}/{mode}"),
                passed: dominates(query, other),
                detail: format!(
                    "{STAGE_QUERY_TOKEN} {} vs {stage} {} (needs >= {QUERY_DOMINANCE_FACTOR}x)",
                    ms(query),
                    ms(other)
                ),
            });
        }
    }
    let (mono_on, micro_on) = (cell(Mode::Mono, true).total.mean, cell(Mode::Micro, true).total.mean);
    checks.push(OrderingCheck {
        name: "micro_above_mono".into(),
        passed: micro_on > mono_on,
        detail: format!("micro ac-on {} vs mono ac-on {}", ms(micro_on), ms(mono_on)),
    });
    for mode in [Mode::Mono, Mode::Micro] {
        let (on, off) = (cell(mode, true).total.mean, cell(mode, false).total.mean);
        checks.push(OrderingCheck {
            name: format!("ac_on_above_off/{mode}"),
            passed: on > off,
            detail: format!("ac-on {} vs ac-off {}", ms(on), ms(off)),
        });
    }
    Ok(ComparisonReport { checks })
}

/// Stage names seen in `records`, in first-appearance order.
pub fn stage_names(records: &[TrialRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.stage.clone()))
        .map(|r| r.stage.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trial: u32, mode: Mode, ac: bool, stage: &str, micros: u64, total: u64) -> TrialRecord {
        TrialRecord {
            trial,
            mode,
            ac_enabled: ac,
            stage: stage.into(),
            micros,
            total_micros: total,
        }
    }

    #[test]
    fn known_values_give_known_stats() {
        let s = Stats::from_values(&[30, 10, 20]).unwrap();
        assert_eq!(s.mean, 20.0);
        assert_eq!(s.p50, 20);
        assert_eq!(s.p95, 30);
        let one = Stats::from_values(&[7]).unwrap();
        assert_eq!((one.mean, one.p50, one.p95), (7.0, 7, 7));
        assert!(Stats::from_values(&[]).is_none());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 95.0), 95);
        assert_eq!(percentile(&v, 100.0), 100);
        assert_eq!(percentile(&v, 0.0), 1);
    }

    #[test]
    fn empty_csv_has_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "trial,mode,ac_enabled,stage,micros,total_micros\n");
        assert_eq!(aggregate(&[]), Err(BenchError::EmptyInput));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![rec(0, Mode::Micro, true, "query_token", 5, 9), rec(0, Mode::Micro, true, "transport", 4, 9)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("0,micro,true,query_token,5,9"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn trial_rows_conserve_total() {
        let stages: IndexMap<String, u64> = [("a".to_string(), 3), ("b".to_string(), 4)].into_iter().collect();
        let rows = trial_rows(1, Mode::Mono, true, &stages, 10);
        assert_eq!(rows.iter().map(|r| r.stage.as_str()).collect::<Vec<_>>(), ["a", "b", "transport"]);
        assert_eq!(rows.iter().map(|r| r.micros).sum::<u64>(), 10);
        assert!(rows.iter().all(|r| r.total_micros == 10));
        let clamped = trial_rows(1, Mode::Mono, true, &stages, 5);
        assert_eq!(clamped.last().unwrap().micros, 0);
        assert!(clamped.iter().all(|r| r.total_micros == 7));
    }

    fn cell_rows(mode: Mode, ac: bool, query: u64, validation: u64, total: u64) -> Vec<TrialRecord> {
        (0..3)
            .flat_map(|t| {
                vec![
                    rec(t, mode, ac, STAGE_QUERY_TOKEN, query, total),
                    rec(t, mode, ac, STAGE_TOKEN_VALIDATION, validation, total),
                    rec(t, mode, ac, STAGE_ACCESS_VERIFICATION, validation, total),
                ]
            })
            .collect()
    }

    #[test]
    fn overhead_and_orderings_on_plausible_matrix() {
        let mut rows = cell_rows(Mode::Mono, true, 1000, 50, 6000);
        rows.extend(cell_rows(Mode::Mono, false, 0, 0, 5000));
        rows.extend(cell_rows(Mode::Micro, true, 1000, 50, 9000));
        rows.extend(cell_rows(Mode::Micro, false, 0, 0, 4500));
        let s = aggregate(&rows).unwrap();
        assert!((s.overhead[&Mode::Mono] - 1000.0 / 6000.0).abs() < 1e-12);
        assert!((s.overhead[&Mode::Micro] - 0.5).abs() < 1e-12);
        let report = compare_modes(&s).unwrap();
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.checks.len(), 7);
        assert!(s.plot_data().lines().any(|l| l.starts_with("mono/ac-on query_token 1.000")));
    }

    #[test]
    fn equal_cells_flag_every_ordering() {
        let mut rows = Vec::new();
        for mode in [Mode::Mono, Mode::Micro] {
            for ac in [true, false] {
                rows.extend(cell_rows(mode, ac, 100, 100, 1000));
            }
        }
        let report = compare_modes(&aggregate(&rows).unwrap()).unwrap();
        assert_eq!(report.violations().count(), report.checks.len());
    }

    #[test]
    fn missing_cell_is_an_error() {
        let rows = cell_rows(Mode::Mono, true, 1, 1, 1);
        match compare_modes(&aggregate(&rows).unwrap()) {
            Err(BenchError::IncompleteMatrix(m)) => assert_eq!(m.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
