//! Calibrated multi-modal dense retrieval.
//!
//! Text and image embeddings from a vision-language model live on different
//! scales: a text query scores text candidates systematically higher than
//! images. This crate ranks a mixed store by standardizing each cosine score
//! with statistics of its modality, estimated without labels from top-1
//! pseudo pairs, and ships the evaluation and diagnostics to check the
//! effect.
//!
//! ```no_run
//! use modgap::{build_pseudo_pairs, estimate_stats, retrieve, EmbeddingStore, Method, QuerySet, StatsSource};
//!
//! # fn main() -> modgap::Result<()> {
//! let store = EmbeddingStore::load("store")?;
//! let calib = QuerySet::load("calib_queries")?;
//! let pairs = build_pseudo_pairs(&calib, &store)?;
//! let stats = estimate_stats(&pairs, StatsSource::Pseudo, store.fingerprint())?;
//!
//! let queries = QuerySet::load("queries")?;
//! let top = retrieve(&queries.records()[0], &store, 20, Method::Std, Some(&stats))?;
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod numeric;
pub mod similarity;
pub mod store;

pub use analysis::{
    histogram, mean_score_gap, query_skewness, skewness, svd_project, Histogram, Projection2D,
    ProjectionLabel, ProjectionRole, ScoreGapSample,
};
pub use calibration::{
    build_pseudo_pairs, estimate_stats, estimate_stats_with, labeled_pairs, retrieve, retrieve_all,
    standardize, Method, ModalityStats, PairSet, PseudoPair, StatsBundle, StatsSource,
    VarianceDivisor,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate_run, evaluate_run_with, mrr_at_k, ndcg_at_k, recall_at_k, recall_at_k_with,
    MetricReport, RankedRun, RecallMode,
};
pub use similarity::{all_scores, cosine, top_k, ScoredCandidate};
pub use store::{
    ingest, EmbeddingStore, ItemMeta, Modality, ModalityView, Qrels, QueryMeta, QueryRecord,
    QuerySet, QueryType,
};
