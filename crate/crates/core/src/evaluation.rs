//! Recall@k, MRR@k and NDCG@k over ranked runs, reported as percentages and
//! grouped by question type.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Method;
use crate::error::{Error, Result};
use crate::numeric::mean;
use crate::similarity::ScoredCandidate;
use crate::store::{load_jsonl, write_jsonl, Qrels, QueryType};

/// How recall treats queries with several positives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecallMode {
    /// Fraction of positives found in the top k.
    #[default]
    Fraction,
    /// 100 if any positive is in the top k, else 0.
    AnyHit,
}

pub const GROUP_UNKNOWN: &str = "unknown";
pub const GROUP_OVERALL: &str = "overall";

fn check_positives(positives: &BTreeSet<String>) -> Result<()> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    Ok(())
}

fn hits_at<'a, S: AsRef<str>>(
    ranked: &'a [S],
    positives: &'a BTreeSet<String>,
    k: usize,
) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| positives.contains(id.as_ref()))
        .map(|(i, _)| i + 1)
}

pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], positives: &BTreeSet<String>, k: usize) -> Result<f64> {
    recall_at_k_with(ranked, positives, k, RecallMode::Fraction)
}

pub fn recall_at_k_with<S: AsRef<str>>(
    ranked: &[S],
    positives: &BTreeSet<String>,
    k: usize,
    mode: RecallMode,
) -> Result<f64> {
    check_positives(positives)?;
    let hits = hits_at(ranked, positives, k).count();
    Ok(match mode {
        RecallMode::Fraction => 100.0 * hits as f64 / positives.len() as f64,
        RecallMode::AnyHit => {
            if hits > 0 {
                100.0
            } else {
                0.0
            }
        }
    })
}

pub fn mrr_at_k<S: AsRef<str>>(ranked: &[S], positives: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_positives(positives)?;
    Ok(hits_at(ranked, positives, k)
        .next()
        .map_or(0.0, |rank| 100.0 / rank as f64))
}

/// Binary-gain NDCG with a `log2(rank + 1)` discount.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], positives: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_positives(positives)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = hits_at(ranked, positives, k).map(discount).sum();
    let ideal: f64 = (1..=positives.len().min(k)).map(discount).sum();
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * dcg / ideal)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLine {
    pub query_id: String,
    pub ranking: Vec<ScoredCandidate>,
    pub method: Method,
    pub k: usize,
}

/// Per-query rankings produced by one retrieval method.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub method: Method,
    pub k: usize,
    pub per_query: BTreeMap<String, Vec<ScoredCandidate>>,
}

impl RankedRun {
    pub fn new(method: Method, k: usize, per_query: BTreeMap<String, Vec<ScoredCandidate>>) -> Result<Self> {
        let run = RankedRun { method, k, per_query };
        run.validate()?;
        Ok(run)
    }

    /// Checks list lengths and that every list is in descending score order.
    pub fn validate(&self) -> Result<()> {
        for (qid, list) in &self.per_query {
            if list.len() > self.k {
                return Err(Error::InvalidRun(format!(
                    "query '{qid}' has {} candidates but k = {}",
                    list.len(),
                    self.k
                )));
            }
            let key = |c: &ScoredCandidate| -> Result<f64> {
                match self.method {
                    Method::Cos => Ok(c.raw_cos),
                    Method::Std => c.std_score.ok_or_else(|| {
                        Error::InvalidRun(format!("query '{qid}': std run without std_score"))
                    }),
                }
            };
            for w in list.windows(2) {
                if key(&w[0])? < key(&w[1])? {
                    return Err(Error::InvalidRun(format!(
                        "query '{qid}': ranking not in descending score order at '{}'",
                        w[1].item_id
                    )));
                }
            }
            if let Some(last) = list.last() {
                key(last)?;
            }
        }
        Ok(())
    }

    pub fn to_lines(&self) -> Vec<RunLine> {
        self.per_query
            .iter()
            .map(|(q, ranking)| RunLine {
                query_id: q.clone(),
                ranking: ranking.clone(),
                method: self.method,
                k: self.k,
            })
            .collect()
    }

    pub fn from_lines(lines: Vec<RunLine>) -> Result<Self> {
        let Some(first) = lines.first() else {
            return Err(Error::InvalidRun("run file is empty".into()));
        };
        let (method, k) = (first.method, first.k);
        let mut per_query = BTreeMap::new();
        for line in lines {
            if line.method != method || line.k != k {
                return Err(Error::InvalidRun(format!(
                    "query '{}' has method/k {}/{} but run is {method}/{k}",
                    line.query_id, line.method, line.k
                )));
            }
            if per_query.insert(line.query_id.clone(), line.ranking).is_some() {
                return Err(Error::InvalidRun(format!("query '{}' appears twice", line.query_id)));
            }
        }
        Self::new(method, k, per_query)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_lines(load_jsonl(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.to_lines())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub group: String,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    #[serde(flatten)]
    pub values: MetricValues,
}

/// Metrics at one cutoff. Group keys are `TextQ`, `ImageQ`, `unknown` and
/// `overall`; a group appears only if it has queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub groups: BTreeMap<String, GroupMetrics>,
}

impl MetricReport {
    pub fn group(&self, name: &str) -> Option<&GroupMetrics> {
        self.groups.get(name)
    }

    pub fn overall(&self) -> &GroupMetrics {
        &self.groups[GROUP_OVERALL]
    }
}

pub fn evaluate_run(
    run: &RankedRun,
    qrels: &Qrels,
    qtypes: &BTreeMap<String, QueryType>,
    k: usize,
) -> Result<MetricReport> {
    evaluate_run_with(run, qrels, qtypes, k, RecallMode::Fraction)
}

pub fn evaluate_run_with(
    run: &RankedRun,
    qrels: &Qrels,
    qtypes: &BTreeMap<String, QueryType>,
    k: usize,
    mode: RecallMode,
) -> Result<MetricReport> {
    if k > run.k {
        return Err(Error::CutoffExceedsRun { k, depth: run.k });
    }
    if run.per_query.is_empty() {
        return Err(Error::InvalidRun("run has no queries".into()));
    }
    let entries: Vec<(&String, &Vec<ScoredCandidate>)> = run.per_query.iter().collect();
    let per_query: Vec<(String, QueryMetrics)> = entries
        .par_iter()
        .map(|(qid, ranking)| {
            let positives = qrels.get(qid).ok_or_else(|| Error::MissingQrels((*qid).clone()))?;
            let ids: Vec<&str> = ranking.iter().map(|c| c.item_id.as_str()).collect();
            let values = MetricValues {
                recall: recall_at_k_with(&ids, positives, k, mode)?,
                mrr: mrr_at_k(&ids, positives, k)?,
                ndcg: ndcg_at_k(&ids, positives, k)?,
            };
            let group = qtypes
                .get(*qid)
                .map_or(GROUP_UNKNOWN.to_string(), |t| t.as_str().to_string());
            Ok(((*qid).clone(), QueryMetrics { group, values }))
        })
        .collect::<Result<_>>()?;

    let mut buckets: BTreeMap<String, Vec<MetricValues>> = BTreeMap::new();
    for (_, m) in &per_query {
        buckets.entry(m.group.clone()).or_default().push(m.values);
        buckets.entry(GROUP_OVERALL.to_string()).or_default().push(m.values);
    }
    let groups = buckets
        .into_iter()
        .map(|(name, vals)| {
            let avg = |f: fn(&MetricValues) -> f64| {
                mean(&vals.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0)
            };
            let g = GroupMetrics {
                count: vals.len(),
                values: MetricValues {
                    recall: avg(|v| v.recall),
                    mrr: avg(|v| v.mrr),
                    ndcg: avg(|v| v.ndcg),
                },
            };
            (name, g)
        })
        .collect();
    Ok(MetricReport {
        k,
        per_query: per_query.into_iter().collect(),
        groups,
    })
}

/// Plain-text table with one row per method: TextQ and ImageQ blocks of
/// Recall/MRR/NDCG, then the overall block.
pub fn format_table(rows: &[(String, &MetricReport)]) -> String {
    let mut out = String::new();
    let k = rows.first().map_or(0, |(_, r)| r.k);
    let _ = writeln!(
        out,
        "{:<8} | {:>23} | {:>23} | {:>23}",
        "", "TextQ", "ImageQ", "Overall"
    );
    let _ = writeln!(
        out,
        "{:<8} | {:>7}{:>8}{:>8} | {:>7}{:>8}{:>8} | {:>7}{:>8}{:>8}",
        format!("@{k}"),
        "Recall", "MRR", "NDCG", "Recall", "MRR", "NDCG", "Recall", "MRR", "NDCG"
    );
    for (method, report) in rows {
        let _ = write!(out, "{method:<8}");
        for g in ["TextQ", "ImageQ", GROUP_OVERALL] {
            match report.group(g) {
                Some(m) => {
                    let _ = write!(
                        out,
                        " | {:>7.2}{:>8.2}{:>8.2}",
                        m.values.recall, m.values.mrr, m.values.ndcg
                    );
                }
                None => {
                    let _ = write!(out, " | {:>7}{:>8}{:>8}", "-", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Modality;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn ranking(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i:03}")).collect()
    }

    #[test]
    fn recall_examples() {
        let mut r = ranking(30);
        r[2] = "a".into();
        assert_eq!(recall_at_k(&r, &set(&["a"]), 20).unwrap(), 100.0);
        r[5] = "b".into();
        assert_eq!(recall_at_k(&r, &set(&["a", "b", "c", "d"]), 20).unwrap(), 50.0);
        assert_eq!(recall_at_k(&r, &set(&["zzz"]), 20).unwrap(), 0.0);
        assert_eq!(
            recall_at_k_with(&r, &set(&["a", "b", "c", "d"]), 20, RecallMode::AnyHit).unwrap(),
            100.0
        );
        assert!(matches!(recall_at_k(&r, &set(&[]), 20), Err(Error::EmptyPositives)));
    }

    #[test]
    fn mrr_examples() {
        let mut r = ranking(30);
        r[0] = "a".into();
        assert_eq!(mrr_at_k(&r, &set(&["a"]), 20).unwrap(), 100.0);
        let mut r = ranking(30);
        r[3] = "a".into();
        assert_eq!(mrr_at_k(&r, &set(&["a"]), 20).unwrap(), 25.0);
        let mut r = ranking(30);
        r[20] = "a".into();
        assert_eq!(mrr_at_k(&r, &set(&["a"]), 20).unwrap(), 0.0);
        assert!(matches!(mrr_at_k(&r, &set(&[]), 20), Err(Error::EmptyPositives)));
    }

    #[test]
    fn ndcg_examples() {
        let mut r = ranking(30);
        r[0] = "a".into();
        assert_eq!(ndcg_at_k(&r, &set(&["a"]), 20).unwrap(), 100.0);
        let mut r = ranking(30);
        r[2] = "a".into();
        assert_eq!(ndcg_at_k(&r, &set(&["a"]), 20).unwrap(), 50.0);
        let mut r = ranking(30);
        r[0] = "a".into();
        r[1] = "b".into();
        assert_eq!(ndcg_at_k(&r, &set(&["a", "b"]), 20).unwrap(), 100.0);
        assert_eq!(ndcg_at_k(&r, &set(&["a"]), 0).unwrap(), 0.0);
    }

    fn cand(id: &str, raw: f64) -> ScoredCandidate {
        ScoredCandidate {
            item_id: id.into(),
            modality: Modality::Text,
            raw_cos: raw,
            std_score: None,
        }
    }

    fn run(per_query: &[(&str, &[&str])]) -> RankedRun {
        let map = per_query
            .iter()
            .map(|(q, ids)| {
                let list = ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| cand(id, 1.0 - i as f64 * 0.01))
                    .collect();
                (q.to_string(), list)
            })
            .collect();
        RankedRun::new(Method::Cos, 20, map).unwrap()
    }

    #[test]
    fn perfect_single_query() {
        let r = run(&[("q1", &["a", "b"])]);
        let qrels = Qrels::from_lines(vec![crate::store::QrelsLine {
            query_id: "q1".into(),
            positive_ids: vec!["a".into()],
        }])
        .unwrap();
        let rep = evaluate_run(&r, &qrels, &BTreeMap::new(), 20).unwrap();
        let o = rep.overall();
        assert_eq!((o.values.recall, o.values.mrr, o.values.ndcg), (100.0, 100.0, 100.0));
        assert_eq!(rep.group(GROUP_UNKNOWN).unwrap().count, 1);
    }

    #[test]
    fn aggregates_are_means_by_group() {
        let r = run(&[("q1", &["a"]), ("q2", &["c"])]);
        let mut qrels = Qrels::default();
        qrels.insert("q1", "a");
        qrels.insert("q2", "b");
        let qtypes = BTreeMap::from([
            ("q1".to_string(), QueryType::TextQ),
            ("q2".to_string(), QueryType::ImageQ),
        ]);
        let rep = evaluate_run(&r, &qrels, &qtypes, 20).unwrap();
        assert_eq!(rep.overall().values.recall, 50.0);
        assert_eq!(rep.overall().count, 2);
        assert_eq!(rep.group("TextQ").unwrap().values.recall, 100.0);
        assert_eq!(rep.group("ImageQ").unwrap().values.recall, 0.0);
        let table = format_table(&[("cos".into(), &rep)]);
        assert!(table.contains("ImageQ"));
        assert!(table.lines().nth(2).unwrap().starts_with("cos"));
    }

    #[test]
    fn missing_qrels_and_cutoff() {
        let r = run(&[("q1", &["a"])]);
        let err = evaluate_run(&r, &Qrels::default(), &BTreeMap::new(), 5).unwrap_err();
        assert!(matches!(err, Error::MissingQrels(_)));
        let mut qrels = Qrels::default();
        qrels.insert("q1", "a");
        let err = evaluate_run(&r, &qrels, &BTreeMap::new(), 100).unwrap_err();
        assert!(matches!(err, Error::CutoffExceedsRun { k: 100, depth: 20 }));
    }

    #[test]
    fn run_validation() {
        let map = BTreeMap::from([("q".to_string(), vec![cand("a", 0.1), cand("b", 0.5)])]);
        assert!(matches!(RankedRun::new(Method::Cos, 5, map.clone()), Err(Error::InvalidRun(_))));
        let ok = BTreeMap::from([("q".to_string(), vec![cand("b", 0.5), cand("a", 0.1)])]);
        assert!(matches!(RankedRun::new(Method::Cos, 1, ok.clone()), Err(Error::InvalidRun(_))));
        // std runs need std scores
        assert!(matches!(RankedRun::new(Method::Std, 5, ok), Err(Error::InvalidRun(_))));
    }
}
