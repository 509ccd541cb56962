//! CSV outputs. Column orders are fixed:
//!
//! | file         | columns                                          |
//! |--------------|--------------------------------------------------|
//! | codes        | `id,modality,label,code`                         |
//! | history      | `step,J,J_er,J_e,J_r,active_er,active_e,active_r`|
//! | map          | `scenario,queries,map`                           |
//! | per-query AP | `query_id,label,ap`                              |
//! | PR curve     | `threshold,recall,precision`                     |
//! | retrieval    | `query_id,rank,db_id,label,distance`             |
//!
//! Floats use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spdhash_core::eval::Scenario;
use spdhash_core::retrieval::{PrPoint, QueryAp, RankedResult};
use spdhash_core::trainer::TrainHistory;
use spdhash_core::{BinaryCode, Dataset};

use crate::error::{Error, Result};

pub fn code_string(code: &BinaryCode) -> String {
    code.bits().iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn codes_csv(dataset: &Dataset, codes: &[BinaryCode]) -> String {
    let mut s = String::from("id,modality,label,code\n");
    for (i, (sample, code)) in dataset.samples.iter().zip(codes).enumerate() {
        writeln!(
            s,
            "{i},{},{},{}",
            sample.modality.as_str(),
            sample.label,
            code_string(code)
        )
        .unwrap();
    }
    s
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from("step,J,J_er,J_e,J_r,active_er,active_e,active_r\n");
    for r in &history.records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.objective,
            r.inter,
            r.intra_image,
            r.intra_video,
            r.active_inter,
            r.active_image,
            r.active_video
        )
        .unwrap();
    }
    s
}

pub fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::I2v => "i2v",
        Scenario::V2i => "v2i",
        Scenario::V2v => "v2v",
    }
}

pub fn map_csv(scenario: Scenario, queries: usize, map: f64) -> String {
    format!("scenario,queries,map\n{},{queries},{map}\n", scenario_name(scenario))
}

pub fn ap_csv(per_query: &[QueryAp]) -> String {
    let mut s = String::from("query_id,label,ap\n");
    for q in per_query {
        writeln!(s, "{},{},{}", q.query_id, q.label, q.ap).unwrap();
    }
    s
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision).unwrap();
    }
    s
}

/// The first `topk` hits of each query; ranks start at 1.
pub fn retrieval_csv<'a>(
    results: impl IntoIterator<Item = (u64, &'a RankedResult)>,
    topk: usize,
) -> String {
    let mut s = String::from("query_id,rank,db_id,label,distance\n");
    for (qid, ranked) in results {
        for (rank, h) in ranked.0.iter().take(topk).enumerate() {
            writeln!(s, "{qid},{},{},{},{}", rank + 1, h.id, h.label, h.distance).unwrap();
        }
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
