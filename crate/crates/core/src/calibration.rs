//! Modality-specific score standardization.
//!
//! Every query is paired with its highest-cosine item in each modality. The
//! mean and variance of those pair scores give per-modality statistics, and
//! raw cosine scores are mapped to `(cos - mean_m) / std_m` so text and image
//! candidates can be ranked on one scale. Statistics are fixed once estimated
//! and never depend on the queries being served.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::similarity::{dot, top_k_hits, Hit, ScoredCandidate};
use crate::store::{EmbeddingStore, Modality, Qrels, QueryRecord, QuerySet};

pub const STATS_FORMAT: &str = "mbstats-v1";
/// Statistics with a standard deviation below this are rejected.
pub const MIN_STD: f64 = 1e-6;
/// Allowed drift between a stored pair score and its recomputed cosine.
pub const PAIR_SCORE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub query_id: String,
    pub item_id: String,
    pub modality: Modality,
    pub score: f64,
}

/// Query/item pairs grouped by the item's modality, each list ordered by
/// query id (then item id).
pub type PairSet = BTreeMap<Modality, Vec<PseudoPair>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsSource {
    Labeled,
    Pseudo,
}

impl fmt::Display for StatsSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatsSource::Labeled => "labeled",
            StatsSource::Pseudo => "pseudo",
        })
    }
}

impl FromStr for StatsSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "labeled" => Ok(StatsSource::Labeled),
            "pseudo" => Ok(StatsSource::Pseudo),
            other => Err(format!("unknown stats source '{other}'")),
        }
    }
}

/// Divisor of the variance estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceDivisor {
    /// `N`, the default.
    #[default]
    Population,
    /// `N - 1`.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityStats {
    pub mean: f64,
    pub std: f64,
    pub variance: f64,
    pub count: usize,
}

impl ModalityStats {
    /// Moments of `scores` in the given order, with compensated summation.
    pub fn from_scores(
        modality: Modality,
        scores: &[f64],
        divisor: VarianceDivisor,
    ) -> Result<Self> {
        let count = scores.len();
        if count < 2 {
            return Err(Error::TooFewPairs { modality, count });
        }
        let n = count as f64;
        let mean = compensated_sum(scores.iter().copied()) / n;
        let ss = compensated_sum(scores.iter().map(|&x| (x - mean) * (x - mean)));
        let variance = match divisor {
            VarianceDivisor::Population => ss / n,
            VarianceDivisor::Sample => ss / (n - 1.0),
        };
        let std = variance.sqrt();
        if std.is_nan() || std < MIN_STD {
            return Err(Error::DegenerateStats { modality, std });
        }
        Ok(ModalityStats {
            mean,
            std,
            variance,
            count,
        })
    }

    /// Builds stats from a known mean and standard deviation.
    pub fn from_moments(mean: f64, std: f64, count: usize) -> Self {
        ModalityStats {
            mean,
            std,
            variance: std * std,
            count,
        }
    }

    #[inline]
    pub fn standardize(&self, raw_cos: f64) -> f64 {
        (raw_cos - self.mean) / self.std
    }
}

/// Per-modality statistics, with where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsBundle {
    pub text: ModalityStats,
    pub image: ModalityStats,
    pub source: StatsSource,
    pub store_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    format: String,
    source: StatsSource,
    store_fingerprint: String,
    text: Option<ModalityStats>,
    image: Option<ModalityStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

impl StatsBundle {
    pub fn get(&self, modality: Modality) -> &ModalityStats {
        match modality {
            Modality::Text => &self.text,
            Modality::Image => &self.image,
        }
    }

    /// Fails unless this bundle was estimated on `store`.
    pub fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if self.store_fingerprint != store.fingerprint() {
            return Err(Error::FingerprintMismatch {
                stats: self.store_fingerprint.clone(),
                store: store.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self, config: Option<serde_json::Value>) -> String {
        let file = StatsFile {
            format: STATS_FORMAT.to_string(),
            source: self.source,
            store_fingerprint: self.store_fingerprint.clone(),
            text: Some(self.text),
            image: Some(self.image),
            config,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("stats serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: StatsFile = serde_json::from_str(s).map_err(|source| Error::Json {
            path: "stats.json".into(),
            line: source.line(),
            source,
        })?;
        if file.format != STATS_FORMAT {
            return Err(Error::CorruptManifest(format!(
                "unsupported stats format '{}'",
                file.format
            )));
        }
        let text = file.text.ok_or(Error::MissingModalityStats(Modality::Text))?;
        let image = file
            .image
            .ok_or(Error::MissingModalityStats(Modality::Image))?;
        for (m, s) in [(Modality::Text, &text), (Modality::Image, &image)] {
            if s.std.is_nan() || s.std < MIN_STD || !s.mean.is_finite() {
                return Err(Error::DegenerateStats {
                    modality: m,
                    std: s.std,
                });
            }
        }
        Ok(StatsBundle {
            text,
            image,
            source: file.source,
            store_fingerprint: file.store_fingerprint,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json { line, source, .. } => Error::Json {
                path: path.to_path_buf(),
                line,
                source,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, config: Option<serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(config)).map_err(|e| Error::io(path, e))
    }
}

/// `(raw_cos - mean_m) / std_m` with the statistics of modality `m`.
pub fn standardize(raw_cos: f64, stats: &StatsBundle, modality: Modality) -> f64 {
    stats.get(modality).standardize(raw_cos)
}

/// Pairs every query with its top-1 item in each modality.
pub fn build_pseudo_pairs(queries: &QuerySet, store: &EmbeddingStore) -> Result<PairSet> {
    queries.check_against(store)?;
    for m in Modality::ALL {
        if store.modality_view(m).is_empty() {
            return Err(Error::EmptyModality(m));
        }
    }
    if queries.len() < 2 {
        return Err(Error::TooFewQueries(queries.len()));
    }
    let views = Modality::ALL.map(|m| store.modality_view(m));
    let per_query: Vec<[PseudoPair; 2]> = queries
        .records()
        .par_iter()
        .map(|q| -> Result<[PseudoPair; 2]> {
            let pair = |i: usize| -> Result<PseudoPair> {
                let best = top_k_hits(&q.vector, &views[i], 1)?[0];
                Ok(PseudoPair {
                    query_id: q.id.clone(),
                    item_id: store.id(best.row).to_string(),
                    modality: views[i].modality(),
                    score: best.raw,
                })
            };
            Ok([pair(0)?, pair(1)?])
        })
        .collect::<Result<_>>()?;

    let mut out = PairSet::new();
    for [text, image] in per_query {
        out.entry(Modality::Text).or_default().push(text);
        out.entry(Modality::Image).or_default().push(image);
    }
    Ok(out)
}

/// Gold query/positive pairs from qrels, restricted to queries in `queries`.
pub fn labeled_pairs(queries: &QuerySet, store: &EmbeddingStore, qrels: &Qrels) -> Result<PairSet> {
    queries.check_against(store)?;
    let mut out = PairSet::new();
    for q in queries.records() {
        let Some(positives) = qrels.get(&q.id) else {
            continue;
        };
        for item_id in positives {
            let row = store
                .row_of(item_id)
                .ok_or_else(|| Error::UnknownItem(item_id.clone()))?;
            let modality = store.modality(row);
            out.entry(modality).or_default().push(PseudoPair {
                query_id: q.id.clone(),
                item_id: item_id.clone(),
                modality,
                score: dot(&q.vector, store.vector(row)),
            });
        }
    }
    Ok(out)
}

/// Flattens a pair set into file order: by query id, text before image.
pub fn flatten_pairs(pairs: &PairSet) -> Vec<PseudoPair> {
    let mut all: Vec<PseudoPair> = pairs.values().flatten().cloned().collect();
    all.sort_by(|a, b| {
        a.query_id
            .cmp(&b.query_id)
            .then(a.modality.cmp(&b.modality))
            .then(a.item_id.cmp(&b.item_id))
    });
    all
}

/// Regroups flat pairs by modality, keeping relative order.
pub fn group_pairs(flat: Vec<PseudoPair>) -> PairSet {
    let mut out = PairSet::new();
    for p in flat {
        out.entry(p.modality).or_default().push(p);
    }
    out
}

/// Checks that each pair is the top-1 item of its modality for its query and
/// that its score matches the recomputed cosine.
pub fn verify_pseudo_pairs(pairs: &PairSet, queries: &QuerySet, store: &EmbeddingStore) -> Result<()> {
    queries.check_against(store)?;
    for (&m, list) in pairs {
        let view = store.modality_view(m);
        for p in list {
            let bad = |reason: String| Error::InconsistentPair {
                query_id: p.query_id.clone(),
                item_id: p.item_id.clone(),
                reason,
            };
            let q = queries
                .get(&p.query_id)
                .ok_or_else(|| bad("query not in query set".into()))?;
            let row = store
                .row_of(&p.item_id)
                .ok_or_else(|| Error::UnknownItem(p.item_id.clone()))?;
            if store.modality(row) != m || p.modality != m {
                return Err(bad(format!("item is not of modality {m}")));
            }
            let recomputed = dot(&q.vector, store.vector(row));
            if (recomputed - p.score).abs() > PAIR_SCORE_TOLERANCE {
                return Err(bad(format!("score {} but cosine is {recomputed}", p.score)));
            }
            let best = top_k_hits(&q.vector, &view, 1)?[0];
            if best.row != row {
                return Err(bad(format!("top-1 item is '{}'", store.id(best.row))));
            }
        }
    }
    Ok(())
}

/// Population mean/variance per modality.
pub fn estimate_stats(pairs: &PairSet, source: StatsSource, store_fingerprint: &str) -> Result<StatsBundle> {
    estimate_stats_with(pairs, source, store_fingerprint, VarianceDivisor::Population)
}

pub fn estimate_stats_with(
    pairs: &PairSet,
    source: StatsSource,
    store_fingerprint: &str,
    divisor: VarianceDivisor,
) -> Result<StatsBundle> {
    let stats_for = |m: Modality| -> Result<ModalityStats> {
        let scores: Vec<f64> = pairs
            .get(&m)
            .map(|ps| ps.iter().map(|p| p.score).collect())
            .unwrap_or_default();
        ModalityStats::from_scores(m, &scores, divisor)
    };
    Ok(StatsBundle {
        text: stats_for(Modality::Text)?,
        image: stats_for(Modality::Image)?,
        source,
        store_fingerprint: store_fingerprint.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cos,
    Std,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cos => "cos",
            Method::Std => "std",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cos" => Ok(Method::Cos),
            "std" => Ok(Method::Std),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    hit: Hit,
    modality: Modality,
    std: f64,
}

/// Whole-store cosine order: raw descending, text before image, then id.
fn cos_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.hit
        .raw
        .total_cmp(&a.hit.raw)
        .then(a.modality.cmp(&b.modality))
        .then(a.hit.row.cmp(&b.hit.row))
}

/// Standardized order: std descending, then raw descending, text before
/// image, then id. The raw key keeps the within-modality order identical to
/// the cosine order even where rounding maps two scores to one value.
fn std_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.std
        .total_cmp(&a.std)
        .then(b.hit.raw.total_cmp(&a.hit.raw))
        .then(a.modality.cmp(&b.modality))
        .then(a.hit.row.cmp(&b.hit.row))
}

/// Ranks the whole store for one query.
///
/// Each modality is cut to its own top `k` by cosine first; the
/// standardization is increasing within a modality, so the global top `k`
/// is always contained in the union of the two cuts.
pub fn retrieve(
    query: &QueryRecord,
    store: &EmbeddingStore,
    k: usize,
    method: Method,
    stats: Option<&StatsBundle>,
) -> Result<Vec<ScoredCandidate>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let stats = match (method, stats) {
        (Method::Std, None) => return Err(Error::MissingStats),
        (Method::Std, Some(s)) => Some(s),
        (Method::Cos, _) => None,
    };
    let mut pool: Vec<Ranked> = Vec::with_capacity(2 * k.min(store.len()));
    for m in Modality::ALL {
        let view = store.modality_view(m);
        if view.is_empty() {
            if query.vector.len() != store.dim() {
                return Err(Error::DimMismatch {
                    expected: store.dim(),
                    found: query.vector.len(),
                });
            }
            continue;
        }
        for hit in top_k_hits(&query.vector, &view, k)? {
            let std = stats.map_or(f64::NAN, |s| s.get(m).standardize(hit.raw));
            pool.push(Ranked {
                hit,
                modality: m,
                std,
            });
        }
    }
    match method {
        Method::Cos => pool.sort_unstable_by(cos_order),
        Method::Std => pool.sort_unstable_by(std_order),
    }
    pool.truncate(k);
    Ok(pool
        .into_iter()
        .map(|r| ScoredCandidate {
            item_id: store.id(r.hit.row).to_string(),
            modality: r.modality,
            raw_cos: r.hit.raw,
            std_score: stats.map(|_| r.std),
        })
        .collect())
}

/// Runs `retrieve` for every query; output is in query-set order.
pub fn retrieve_all(
    queries: &QuerySet,
    store: &EmbeddingStore,
    k: usize,
    method: Method,
    stats: Option<&StatsBundle>,
) -> Result<Vec<(String, Vec<ScoredCandidate>)>> {
    queries.check_against(store)?;
    queries
        .records()
        .par_iter()
        .map(|q| Ok((q.id.clone(), retrieve(q, store, k, method, stats)?)))
        .collect()
}
