//! Relaxed triplet ranking objective over a mixed image/video batch.
//!
//! Three triplet families are mined from labels: `Inter` (anchor of one
//! modality, positive and negative of the other), `IntraImage` and
//! `IntraVideo`. The batch objective is
//! `mean(Inter) + lambda1 * mean(IntraImage) + lambda2 * mean(IntraVideo)`
//! with empty families contributing zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::hashnet::RelaxedCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Inter,
    IntraImage,
    IntraVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub term: Term,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveConfig {
    /// Margin.
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidConfig("lambda weights must be non-negative"));
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    for x in [b, c] {
        if x.len() != a.len() {
            return Err(Error::LengthMismatch {
                op: "triplet",
                expected: a.len(),
                found: x.len(),
            });
        }
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, alpha + |bu - bv|^2 - |bu - bw|^2)`.
pub fn triplet_loss(bu: &[f64], bv: &[f64], bw: &[f64], alpha: f64) -> Result<f64> {
    check_lengths(bu, bv, bw)?;
    Ok((alpha + sq_dist(bu, bv) - sq_dist(bu, bw)).max(0.0))
}

/// Gradients of [`triplet_loss`] w.r.t. `(bu, bv, bw)`: `2(bw - bv)`,
/// `2(bv - bu)` and `2(bu - bw)` while the hinge is active, zero otherwise.
pub fn triplet_grads(
    bu: &[f64],
    bv: &[f64],
    bw: &[f64],
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let k = bu.len();
    if triplet_loss(bu, bv, bw, alpha)? <= 0.0 {
        return Ok((vec![0.0; k], vec![0.0; k], vec![0.0; k]));
    }
    let gu = bw.iter().zip(bv).map(|(w, v)| 2.0 * (w - v)).collect();
    let gv = bv.iter().zip(bu).map(|(v, u)| 2.0 * (v - u)).collect();
    let gw = bu.iter().zip(bw).map(|(u, w)| 2.0 * (u - w)).collect();
    Ok((gu, gv, gw))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedTriplets {
    pub inter: Vec<Triplet>,
    pub intra_image: Vec<Triplet>,
    pub intra_video: Vec<Triplet>,
}

impl MinedTriplets {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.inter.len(), self.intra_image.len(), self.intra_video.len())
    }

    pub fn get(&self, term: Term) -> &[Triplet] {
        match term {
            Term::Inter => &self.inter,
            Term::IntraImage => &self.intra_image,
            Term::IntraVideo => &self.intra_video,
        }
    }
}

/// Exhaustive in-batch enumeration, in index order.
pub fn mine_triplets(labels: &[u32], modalities: &[Modality]) -> Result<MinedTriplets> {
    if labels.len() != modalities.len() {
        return Err(Error::LengthMismatch {
            op: "mine_triplets",
            expected: labels.len(),
            found: modalities.len(),
        });
    }
    let n = labels.len();
    let mut out = MinedTriplets::default();
    for u in 0..n {
        let mu = modalities[u];
        let other = match mu {
            Modality::Image => Modality::Video,
            Modality::Video => Modality::Image,
        };
        let intra = match mu {
            Modality::Image => Term::IntraImage,
            Modality::Video => Term::IntraVideo,
        };
        for v in 0..n {
            if labels[v] != labels[u] {
                continue;
            }
            for w in 0..n {
                if labels[w] == labels[u] {
                    continue;
                }
                if modalities[v] == other && modalities[w] == other {
                    out.inter.push(Triplet {
                        anchor: u,
                        positive: v,
                        negative: w,
                        term: Term::Inter,
                    });
                } else if v != u && modalities[v] == mu && modalities[w] == mu {
                    let t = Triplet {
                        anchor: u,
                        positive: v,
                        negative: w,
                        term: intra,
                    };
                    match intra {
                        Term::IntraImage => out.intra_image.push(t),
                        _ => out.intra_video.push(t),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-term summary of a batch evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermStats {
    pub count: usize,
    /// Unweighted mean triplet loss (0 when empty).
    pub mean_loss: f64,
    /// Fraction of triplets with positive loss (0 when empty).
    pub active_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective {
    pub total: f64,
    pub inter: TermStats,
    pub intra_image: TermStats,
    pub intra_video: TermStats,
    /// `dJ/dcode` for every sample, in batch order.
    pub code_grads: Vec<Vec<f64>>,
}

pub fn batch_objective(
    codes: &[RelaxedCode],
    labels: &[u32],
    modalities: &[Modality],
    cfg: &ObjectiveConfig,
) -> Result<BatchObjective> {
    cfg.validate()?;
    if codes.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op: "batch_objective",
            expected: labels.len(),
            found: codes.len(),
        });
    }
    let k = codes.first().map_or(0, RelaxedCode::len);
    if let Some(c) = codes.iter().find(|c| c.len() != k) {
        return Err(Error::LengthMismatch {
            op: "batch_objective code length",
            expected: k,
            found: c.len(),
        });
    }
    let mined = mine_triplets(labels, modalities)?;
    let mut code_grads = vec![vec![0.0; k]; codes.len()];
    let mut total = 0.0;
    let mut stats = [TermStats::default(); 3];

    for (slot, (term, weight)) in [
        (Term::Inter, 1.0),
        (Term::IntraImage, cfg.lambda1),
        (Term::IntraVideo, cfg.lambda2),
    ]
    .into_iter()
    .enumerate()
    {
        let triplets = mined.get(term);
        if triplets.is_empty() {
            continue;
        }
        let n = triplets.len() as f64;
        let scale = weight / n;
        let mut sum = 0.0;
        let mut active = 0usize;
        for t in triplets {
            let (bu, bv, bw) = (
                codes[t.anchor].values(),
                codes[t.positive].values(),
                codes[t.negative].values(),
            );
            let loss = triplet_loss(bu, bv, bw, cfg.alpha)?;
            sum += loss;
            if loss > 0.0 {
                active += 1;
                if scale != 0.0 {
                    for i in 0..k {
                        code_grads[t.anchor][i] += scale * 2.0 * (bw[i] - bv[i]);
                        code_grads[t.positive][i] += scale * 2.0 * (bv[i] - bu[i]);
                        code_grads[t.negative][i] += scale * 2.0 * (bu[i] - bw[i]);
                    }
                }
            }
        }
        stats[slot] = TermStats {
            count: triplets.len(),
            mean_loss: sum / n,
            active_fraction: active as f64 / n,
        };
        total += weight * sum / n;
    }

    Ok(BatchObjective {
        total,
        inter: stats[0],
        intra_image: stats[1],
        intra_video: stats[2],
        code_grads,
    })
}
