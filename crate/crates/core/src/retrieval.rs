//! Exhaustive Hamming-space retrieval and ranking metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::hashnet::BinaryCode;

/// Number of differing bits.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            op: "hamming",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    codes: Vec<BinaryCode>,
    labels: Vec<u32>,
    ids: Vec<u64>,
    modality: Modality,
    code_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub id: u64,
    pub label: u32,
    pub distance: u32,
}

/// Database items ordered by `(distance, id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedResult(pub Vec<Hit>);

impl RankedResult {
    pub fn labels(&self) -> Vec<u32> {
        self.0.iter().map(|h| h.label).collect()
    }
}

impl RetrievalIndex {
    pub fn build(
        codes: Vec<BinaryCode>,
        labels: Vec<u32>,
        ids: Vec<u64>,
        modality: Modality,
    ) -> Result<Self> {
        if labels.len() != codes.len() || ids.len() != codes.len() {
            return Err(Error::LengthMismatch {
                op: "index build",
                expected: codes.len(),
                found: if labels.len() != codes.len() {
                    labels.len()
                } else {
                    ids.len()
                },
            });
        }
        let code_len = codes.first().map_or(0, BinaryCode::len);
        if let Some(c) = codes.iter().find(|c| c.len() != code_len) {
            return Err(Error::LengthMismatch {
                op: "index code length",
                expected: code_len,
                found: c.len(),
            });
        }
        Ok(Self {
            codes,
            labels,
            ids,
            modality,
            code_len,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn contains_label(&self, label: u32) -> bool {
        self.labels.contains(&label)
    }

    fn distances(&self, q: &BinaryCode) -> Result<Vec<u32>> {
        if !self.is_empty() && q.len() != self.code_len {
            return Err(Error::LengthMismatch {
                op: "query",
                expected: self.code_len,
                found: q.len(),
            });
        }
        self.codes.iter().map(|c| hamming(q, c)).collect()
    }

    /// Full ranking of the database; ties go to the smaller id.
    pub fn query(&self, q: &BinaryCode) -> Result<RankedResult> {
        let dist = self.distances(q)?;
        let mut hits: Vec<Hit> = (0..self.len())
            .map(|i| Hit {
                id: self.ids[i],
                label: self.labels[i],
                distance: dist[i],
            })
            .collect();
        hits.sort_by_key(|h| (h.distance, h.id));
        Ok(RankedResult(hits))
    }
}

/// Full-ranking average precision for binary relevance
/// (`relevant == query_label`).
pub fn average_precision(ranked_labels: &[u32], query_label: u32) -> Result<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &l) in ranked_labels.iter().enumerate() {
        if l == query_label {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant { label: query_label });
    }
    Ok(acc / hits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAp {
    pub query_id: u64,
    pub label: u32,
    pub ap: f64,
}

/// A query: code, label and caller-chosen id.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: u64,
    pub label: u32,
    pub code: BinaryCode,
}

pub fn per_query_ap(queries: &[Query], index: &RetrievalIndex) -> Result<Vec<QueryAp>> {
    queries
        .iter()
        .map(|q| {
            let ranked = index.query(&q.code)?;
            Ok(QueryAp {
                query_id: q.id,
                label: q.label,
                ap: average_precision(&ranked.labels(), q.label)?,
            })
        })
        .collect()
}

/// Unweighted mean of per-query AP. Zero queries give 0.
pub fn mean_ap(queries: &[Query], index: &RetrievalIndex) -> Result<f64> {
    let aps = per_query_ap(queries, index)?;
    if aps.is_empty() {
        return Ok(0.0);
    }
    Ok(aps.iter().map(|a| a.ap).sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u32,
    pub recall: f64,
    pub precision: f64,
}

/// Micro-averaged precision/recall of Hamming-ball retrieval for radii
/// `0..=K`. Precision with nothing retrieved is reported as 0.
pub fn pr_curve(queries: &[Query], index: &RetrievalIndex) -> Result<Vec<PrPoint>> {
    let k = index.code_len();
    let mut retrieved = vec![0u64; k + 1];
    let mut relevant_retrieved = vec![0u64; k + 1];
    let mut total_relevant = 0u64;
    for q in queries {
        if !index.contains_label(q.label) {
            return Err(Error::NoRelevant { label: q.label });
        }
        let dist = index.distances(&q.code)?;
        for (d, &l) in dist.iter().zip(index.labels()) {
            retrieved[*d as usize] += 1;
            if l == q.label {
                relevant_retrieved[*d as usize] += 1;
                total_relevant += 1;
            }
        }
    }
    let mut points = Vec::with_capacity(k + 1);
    let (mut cum_all, mut cum_rel) = (0u64, 0u64);
    for t in 0..=k {
        cum_all += retrieved[t];
        cum_rel += relevant_retrieved[t];
        let recall = if total_relevant == 0 {
            0.0
        } else {
            cum_rel as f64 / total_relevant as f64
        };
        let precision = if cum_all == 0 {
            0.0
        } else {
            cum_rel as f64 / cum_all as f64
        };
        points.push(PrPoint {
            threshold: t as u32,
            recall,
            precision,
        });
    }
    Ok(points)
}
