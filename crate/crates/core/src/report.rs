//! CSV tables and text summaries written by the CLI, and readers for them.
//!
//! Column names are stable. Every table written here can be read back with
//! [`read_rows`].

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decision_graph::DecisionGraph;
use crate::error::{Error, Result};
use crate::fairness::BlockFairnessRecord;
use crate::model::ResourceType;
use crate::sim::{RunMetrics, UserMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// User id, or `all` for the aggregate.
    pub scope: String,
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub discarded: u64,
    pub restricted: u64,
    pub reduced: u64,
    pub loss_probability: f64,
    pub mean_completion_time: f64,
    pub util_processing: f64,
    pub util_bandwidth: f64,
}

impl MetricsRow {
    fn new(m: &UserMetrics, run: &RunMetrics) -> Self {
        MetricsRow {
            scope: m.user_id.map_or_else(|| "all".to_string(), |u| u.to_string()),
            generated: m.generated,
            accepted: m.accepted,
            rejected: m.rejected,
            discarded: m.discarded,
            restricted: m.restricted,
            reduced: m.reduced,
            loss_probability: m.loss_probability(),
            mean_completion_time: m.mean_completion_time(),
            util_processing: run.utilization.processing,
            util_bandwidth: run.utilization.bandwidth,
        }
    }
}

/// One row per user followed by the aggregate row.
pub fn metrics_rows(run: &RunMetrics) -> Vec<MetricsRow> {
    run.users
        .iter()
        .chain(std::iter::once(&run.total))
        .map(|m| MetricsRow::new(m, run))
        .collect()
}

/// Per-block fairness row. The trailing summary row has `block = summary`
/// and carries `f` and `f1`; block rows leave those empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub block: String,
    pub user: Option<u32>,
    pub key_type: Option<String>,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub n_imbalance: Option<f64>,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    #[serde(rename = "F1")]
    pub f1: Option<f64>,
}

pub fn fairness_rows(records: &[BlockFairnessRecord], f: f64, f1: f64) -> Vec<FairnessRow> {
    let mut rows: Vec<FairnessRow> = records
        .iter()
        .flat_map(|rec| {
            rec.users.iter().map(move |u| FairnessRow {
                block: rec.block.to_string(),
                user: Some(u.user_id),
                key_type: Some(u.key_type.label().to_string()),
                v: Some(u.v),
                n_imbalance: Some(u.imbalance),
                f: None,
                f1: None,
            })
        })
        .collect();
    rows.push(FairnessRow {
        block: "summary".to_string(),
        user: None,
        key_type: None,
        v: None,
        n_imbalance: None,
        f: Some(f),
        f1: Some(f1),
    });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGraphRow {
    pub load_level: f64,
    /// Empty when no reduction is applied.
    pub optimal_c_v: Option<f64>,
    pub area_label: String,
    pub processed_count: f64,
    pub loss_probability: f64,
}

pub fn decision_graph_rows(graph: &DecisionGraph) -> Vec<DecisionGraphRow> {
    graph
        .points
        .iter()
        .map(|p| DecisionGraphRow {
            load_level: p.load_level,
            optimal_c_v: p.optimal,
            area_label: p.area.label().to_string(),
            processed_count: p.processed_count,
            loss_probability: p.loss_probability,
        })
        .collect()
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub congestion: String,
    pub load_level: Option<f64>,
    pub c_v: f64,
    pub s1_mean: f64,
    pub s1_half_width: f64,
    pub completion_mean: f64,
    pub completion_half_width: f64,
    pub loss_mean: f64,
    pub replications: usize,
}

/// One `Y` point of the fairness comparison. `F` is normalized by the mean
/// `F` of method A at the same `Y`; utilization stands in for resource
/// efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessComparisonRow {
    pub y: f64,
    pub f_method_a: f64,
    pub f_method_a_half_width: f64,
    pub f_revised: f64,
    pub f_revised_half_width: f64,
    pub f_normalized_method_a: f64,
    pub f_normalized_revised: f64,
    pub f1_method_a: f64,
    pub f1_revised: f64,
    pub efficiency_processing_method_a: f64,
    pub efficiency_bandwidth_method_a: f64,
    pub efficiency_processing_revised: f64,
    pub efficiency_bandwidth_revised: f64,
    pub replications: usize,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let bytes = rows_to_bytes(rows)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn rows_to_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

pub fn read_rows<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// `key: value` summary of a run.
pub fn summary_text(run: &RunMetrics) -> String {
    let mut s = String::new();
    let t = &run.total;
    let _ = writeln!(s, "control: {}", run.control.label());
    let _ = writeln!(s, "generated: {}", t.generated);
    let _ = writeln!(s, "accepted: {}", t.accepted);
    let _ = writeln!(s, "rejected: {}", t.rejected);
    let _ = writeln!(s, "discarded: {}", t.discarded);
    let _ = writeln!(s, "restricted: {}", t.restricted);
    let _ = writeln!(s, "reduced: {}", t.reduced);
    let _ = writeln!(s, "loss_probability: {}", t.loss_probability());
    let _ = writeln!(s, "loss_probability_defined: {}", !run.loss_undefined);
    let _ = writeln!(s, "mean_completion_time: {}", t.mean_completion_time());
    for rt in ResourceType::ALL {
        let _ = writeln!(s, "utilization_{}: {}", rt.label(), run.utilization[rt]);
    }
    let _ = writeln!(s, "mean_in_service: {}", run.mean_in_service);
    let _ = writeln!(s, "measured_time: {}", run.measured_time);
    let _ = writeln!(s, "blocks: {}", run.blocks.len());
    let _ = writeln!(s, "F: {}", run.fairness_f);
    let _ = writeln!(s, "F1: {}", run.fairness_f1);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::two_user_scenario;
    use crate::sim::run;

    #[test]
    fn metrics_csv_round_trips() {
        let m = run(&two_user_scenario(2.0)).unwrap();
        let rows = metrics_rows(&m);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].scope, "all");
        let bytes = rows_to_bytes(&rows).unwrap();
        let back: Vec<MetricsRow> = read_rows(&bytes[..]).unwrap();
        assert_eq!(back, rows);

        let fr = fairness_rows(&m.blocks, m.fairness_f, m.fairness_f1);
        let bytes = rows_to_bytes(&fr).unwrap();
        let back: Vec<FairnessRow> = read_rows(&bytes[..]).unwrap();
        assert_eq!(back, fr);
        assert_eq!(back.last().unwrap().f, Some(m.fairness_f));
    }

    #[test]
    fn header_is_stable() {
        let m = run(&two_user_scenario(1.0)).unwrap();
        let bytes = rows_to_bytes(&metrics_rows(&m)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(
            "scope,generated,accepted,rejected,discarded,restricted,reduced,loss_probability,mean_completion_time,util_processing,util_bandwidth\n"
        ));
        let fr = rows_to_bytes(&fairness_rows(&m.blocks, 0.0, 0.0)).unwrap();
        assert!(String::from_utf8(fr).unwrap().starts_with("block,user,key_type,V,n_imbalance,F,F1\n"));
    }

    #[test]
    fn garbage_is_an_error_not_a_panic() {
        let r: Result<Vec<MetricsRow>> = read_rows(&b"scope,generated\nall,notanumber\n"[..]);
        assert!(r.is_err());
    }
}
