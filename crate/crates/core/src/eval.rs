//! Cross-modal retrieval scenarios on top of a trained model.

use alloc::vec::Vec;

use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::hashnet::{BinaryCode, Model};
use crate::retrieval::{mean_ap, per_query_ap, pr_curve, PrPoint, Query, QueryAp, RetrievalIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scenario {
    /// Image queries against a video database.
    I2v,
    /// Video queries against an image database.
    V2i,
    /// Video queries against a video database.
    V2v,
}

impl Scenario {
    pub fn query_modality(self) -> Modality {
        match self {
            Scenario::I2v => Modality::Image,
            Scenario::V2i | Scenario::V2v => Modality::Video,
        }
    }

    pub fn database_modality(self) -> Modality {
        match self {
            Scenario::I2v | Scenario::V2v => Modality::Video,
            Scenario::V2i => Modality::Image,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "i2v" => Some(Scenario::I2v),
            "v2i" => Some(Scenario::V2i),
            "v2v" => Some(Scenario::V2v),
            _ => None,
        }
    }
}

/// Binary codes of every sample in `dataset`, in dataset order.
pub fn encode_dataset(model: &Model, dataset: &Dataset) -> Result<Vec<BinaryCode>> {
    if dataset.input_dim != model.shape.input_dim {
        return Err(Error::LengthMismatch {
            op: "encode_dataset",
            expected: model.shape.input_dim,
            found: dataset.input_dim,
        });
    }
    dataset.samples.iter().map(|s| model.encode_sample(s)).collect()
}

/// Queries built from the samples of `modality`; ids are dataset indices.
pub fn queries_of(model: &Model, dataset: &Dataset, modality: Modality) -> Result<Vec<Query>> {
    dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.modality == modality)
        .map(|(i, s)| {
            Ok(Query {
                id: i as u64,
                label: s.label,
                code: model.encode_sample(s)?,
            })
        })
        .collect()
}

/// Index over the samples of `modality`; ids are dataset indices.
pub fn index_of(model: &Model, dataset: &Dataset, modality: Modality) -> Result<RetrievalIndex> {
    let q = queries_of(model, dataset, modality)?;
    let labels = q.iter().map(|q| q.label).collect();
    let ids = q.iter().map(|q| q.id).collect();
    let codes = q.into_iter().map(|q| q.code).collect();
    RetrievalIndex::build(codes, labels, ids, modality)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_query: Vec<QueryAp>,
    pub map: f64,
    pub pr: Vec<PrPoint>,
}

pub fn evaluate(
    model: &Model,
    queries: &Dataset,
    database: &Dataset,
    scenario: Scenario,
) -> Result<Evaluation> {
    let q = queries_of(model, queries, scenario.query_modality())?;
    let index = index_of(model, database, scenario.database_modality())?;
    let per_query = per_query_ap(&q, &index)?;
    let map = mean_ap(&q, &index)?;
    let pr = pr_curve(&q, &index)?;
    Ok(Evaluation { per_query, map, pr })
}
