//! Diagnostics for the modality gap: score-distribution skewness,
//! standardized score gaps between modalities, and 2-D SVD projections.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::StatsBundle;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, mean};
use crate::similarity::all_scores;
use crate::store::{EmbeddingStore, Modality, QueryRecord};

/// Bins and range used for score-gap histograms unless overridden.
pub const DEFAULT_GAP_BINS: usize = 60;
pub const DEFAULT_GAP_RANGE: (f64, f64) = (-6.0, 6.0);

/// Population moment coefficient of skewness, `m3 / m2^(3/2)`.
pub fn skewness(scores: &[f64]) -> Result<f64> {
    if scores.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if scores.iter().all(|&x| x == scores[0]) {
        return Err(Error::ConstantInput);
    }
    let n = scores.len() as f64;
    let mu = compensated_sum(scores.iter().copied()) / n;
    let m2 = compensated_sum(scores.iter().map(|&x| (x - mu).powi(2))) / n;
    let m3 = compensated_sum(scores.iter().map(|&x| (x - mu).powi(3))) / n;
    if m2 == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalitySkew {
    pub text: f64,
    pub image: f64,
}

/// Skewness of one query's cosine scores against every item of each modality.
pub fn query_skewness(query: &QueryRecord, store: &EmbeddingStore) -> Result<ModalitySkew> {
    let skew = |m| skewness(&all_scores(&query.vector, &store.modality_view(m))?);
    Ok(ModalitySkew {
        text: skew(Modality::Text)?,
        image: skew(Modality::Image)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGapSample {
    pub query_id: String,
    /// Mean standardized image score minus mean standardized text score.
    pub gap: f64,
}

pub fn mean_score_gap(
    query: &QueryRecord,
    store: &EmbeddingStore,
    stats: &StatsBundle,
) -> Result<ScoreGapSample> {
    let mean_std = |m: Modality| -> Result<f64> {
        let s = stats.get(m);
        let scores: Vec<f64> = all_scores(&query.vector, &store.modality_view(m))?
            .into_iter()
            .map(|x| s.standardize(x))
            .collect();
        Ok(mean(&scores).expect("view is non-empty"))
    };
    let gap = mean_std(Modality::Image)? - mean_std(Modality::Text)?;
    Ok(ScoreGapSample {
        query_id: query.id.clone(),
        gap,
    })
}

/// Equal-width histogram. Bins are half-open `[lo, hi)` except the last,
/// which also takes `hi`; values outside the range land in `underflow` or
/// `overflow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::BadRange("bins must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::BadRange(format!("[{lo}, {hi}]")));
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);

    let mut h = Histogram {
        edges,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < lo {
            h.underflow += 1;
        } else if v > hi {
            h.overflow += 1;
        } else {
            let mut i = (((v - lo) / width).floor() as usize).min(bins - 1);
            // the float estimate can land one bin off near an edge
            while i > 0 && v < h.edges[i] {
                i -= 1;
            }
            while i + 1 < bins && v >= h.edges[i + 1] {
                i += 1;
            }
            h.counts[i] += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRole {
    Query,
    PositiveText,
    PositiveImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionLabel {
    pub id: String,
    pub role: ProjectionRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub labels: Vec<ProjectionLabel>,
    pub coords: Vec<[f64; 2]>,
    /// Top two singular values of the centered matrix.
    pub singular_values: [f64; 2],
}

/// Projects mean-centered rows onto their top two right singular vectors.
///
/// Each singular vector is oriented so that its largest-magnitude component
/// (first such index on ties) is positive.
pub fn svd_project(rows: &[Vec<f64>], labels: Vec<ProjectionLabel>) -> Result<Projection2D> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 rows, got {n}")));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 columns, got {d}")));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if labels.len() != n {
        return Err(Error::DegenerateInput(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }

    let mut centered = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let mu = compensated_sum(centered.column(j).iter().copied()) / n as f64;
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    if let Some(i) = centered.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }

    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    for (axis, &idx) in axes.iter_mut().zip(&order) {
        let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        *axis = v.into_iter().map(|x| x * sign).collect();
    }

    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let proj = |axis: &[f64]| compensated_sum(row.iter().zip(axis).map(|(a, b)| a * b));
            [proj(&axes[0]), proj(&axes[1])]
        })
        .collect();
    let sv = |i: usize| order.get(i).map_or(0.0, |&j| svd.singular_values[j]);
    Ok(Projection2D {
        labels,
        coords,
        singular_values: [sv(0), sv(1)],
    })
}
