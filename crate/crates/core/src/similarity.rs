//! Exact cosine scoring and top-k selection over modality views.
//!
//! Vectors are unit-norm, so cosine is the plain dot product, accumulated in
//! `f64`. Rankings order by score descending with ties broken by ascending
//! id; there is no epsilon in any comparison.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Modality, ModalityView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub item_id: String,
    pub modality: Modality,
    pub raw_cos: f64,
    pub std_score: Option<f64>,
}

/// `f64` dot product in index order. `-0.0` is folded into `+0.0` so that
/// `total_cmp` agrees with IEEE equality on ties.
#[inline]
pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        acc += f64::from(*a) * f64::from(*b);
    }
    acc + 0.0
}

pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(dot(u, v))
}

/// A scored store row. Rows are in ascending id order, so comparing rows
/// compares ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Hit {
    pub row: usize,
    pub raw: f64,
}

#[inline]
pub(crate) fn by_raw_desc(a: &Hit, b: &Hit) -> Ordering {
    b.raw.total_cmp(&a.raw).then(a.row.cmp(&b.row))
}

fn check_query(query: &[f32], view: &ModalityView<'_>) -> Result<()> {
    let dim = view.store().dim();
    if query.len() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: query.len(),
        });
    }
    Ok(())
}

pub(crate) fn score_view(query: &[f32], view: &ModalityView<'_>) -> Vec<Hit> {
    let store = view.store();
    view.rows()
        .iter()
        .map(|&row| Hit {
            row,
            raw: dot(query, store.vector(row)),
        })
        .collect()
}

/// Keeps the `k` best hits under `cmp`, sorted.
pub(crate) fn select_top<F>(mut hits: Vec<Hit>, k: usize, cmp: F) -> Vec<Hit>
where
    F: Fn(&Hit, &Hit) -> Ordering,
{
    if k == 0 {
        return Vec::new();
    }
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, &cmp);
        hits.truncate(k);
    }
    hits.sort_unstable_by(&cmp);
    hits
}

pub(crate) fn top_k_hits(query: &[f32], view: &ModalityView<'_>, k: usize) -> Result<Vec<Hit>> {
    check_query(query, view)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    if view.is_empty() {
        return Err(Error::EmptyModality(view.modality()));
    }
    Ok(select_top(score_view(query, view), k, by_raw_desc))
}

pub(crate) fn to_candidate(view: &ModalityView<'_>, hit: &Hit, std_score: Option<f64>) -> ScoredCandidate {
    let store = view.store();
    ScoredCandidate {
        item_id: store.id(hit.row).to_string(),
        modality: store.modality(hit.row),
        raw_cos: hit.raw,
        std_score,
    }
}

/// The `min(k, |view|)` highest-cosine items of `view`, best first.
pub fn top_k(query: &[f32], view: &ModalityView<'_>, k: usize) -> Result<Vec<ScoredCandidate>> {
    Ok(top_k_hits(query, view, k)?
        .iter()
        .map(|h| to_candidate(view, h, None))
        .collect())
}

/// Cosine against every item of `view`, aligned with view order.
pub fn all_scores(query: &[f32], view: &ModalityView<'_>) -> Result<Vec<f64>> {
    check_query(query, view)?;
    if view.is_empty() {
        return Err(Error::EmptyModality(view.modality()));
    }
    Ok(score_view(query, view).into_iter().map(|h| h.raw).collect())
}

/// `top_k` for many queries; output order follows input order.
pub fn top_k_batch(
    queries: &[&[f32]],
    view: &ModalityView<'_>,
    k: usize,
) -> Result<Vec<Vec<ScoredCandidate>>> {
    queries.par_iter().map(|q| top_k(q, view, k)).collect()
}
