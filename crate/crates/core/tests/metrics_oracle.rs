//! Metrics against a reference written from the definitions, working from
//! positives to ranks instead of scanning the ranking.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use modgap::evaluation::RankedRun;
use modgap::{
    evaluate_run, mrr_at_k, ndcg_at_k, recall_at_k, Method, Modality, Qrels, QueryType,
    ScoredCandidate,
};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

struct Reference;

impl Reference {
    fn ranks(ranking: &[String]) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for (i, id) in ranking.iter().enumerate() {
            m.entry(id.as_str()).or_insert(i + 1);
        }
        m
    }

    fn recall(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
        let ranks = Self::ranks(ranking);
        let found = positives
            .iter()
            .filter(|p| ranks.get(p.as_str()).is_some_and(|&r| r <= k))
            .count();
        found as f64 * 100.0 / positives.len() as f64
    }

    fn mrr(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
        let ranks = Self::ranks(ranking);
        let best = positives
            .iter()
            .filter_map(|p| ranks.get(p.as_str()).copied())
            .filter(|&r| r <= k)
            .min();
        best.map_or(0.0, |r| 100.0 * (1.0 / r as f64))
    }

    fn ndcg(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
        let ranks = Self::ranks(ranking);
        let gain = |r: usize| std::f64::consts::LN_2 / ((r + 1) as f64).ln();
        let dcg: f64 = positives
            .iter()
            .filter_map(|p| ranks.get(p.as_str()).copied())
            .filter(|&r| r <= k)
            .map(gain)
            .sum();
        let idcg: f64 = (1..=k.min(positives.len())).map(gain).sum();
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg * 100.0
        }
    }
}

fn random_case(r: &mut impl Rng) -> (Vec<String>, BTreeSet<String>) {
    let universe: Vec<String> = (0..r.random_range(5..150)).map(|i| format!("d{i}")).collect();
    let mut ranking = universe.clone();
    ranking.shuffle(r);
    ranking.truncate(r.random_range(0..=ranking.len()));
    let n_pos = r.random_range(1..=6.min(universe.len()));
    let positives = universe.choose_multiple(r, n_pos).cloned().collect();
    (ranking, positives)
}

#[test]
fn ndcg_can_drop_while_ideal_grows() {
    let positives: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let ranking: Vec<String> = ["a", "x", "y"].iter().map(|s| s.to_string()).collect();
    assert_eq!(ndcg_at_k(&ranking, &positives, 1).unwrap(), 100.0);
    assert!(ndcg_at_k(&ranking, &positives, 2).unwrap() < 100.0);
}

#[test]
fn metrics_match_reference_on_random_runs() {
    let mut r = common::rng(99);
    for _ in 0..50 {
        let (ranking, positives) = random_case(&mut r);
        for k in [1, 5, 20, 100] {
            let pairs = [
                (recall_at_k(&ranking, &positives, k).unwrap(), Reference::recall(&ranking, &positives, k)),
                (mrr_at_k(&ranking, &positives, k).unwrap(), Reference::mrr(&ranking, &positives, k)),
                (ndcg_at_k(&ranking, &positives, k).unwrap(), Reference::ndcg(&ranking, &positives, k)),
            ];
            for (got, want) in pairs {
                assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn evaluate_run_matches_reference_means() {
    let mut r = common::rng(100);
    let mut per_query = BTreeMap::new();
    let mut qrels = Qrels::default();
    let mut qtypes = BTreeMap::new();
    let mut cases = BTreeMap::new();
    for q in 0..50 {
        let (ranking, positives) = random_case(&mut r);
        let ranking: Vec<String> = ranking.into_iter().take(100).collect();
        let qid = format!("q{q:02}");
        let list = ranking
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredCandidate {
                item_id: id.clone(),
                modality: Modality::Text,
                raw_cos: 1.0 - i as f64 / 1000.0,
                std_score: None,
            })
            .collect::<Vec<_>>();
        per_query.insert(qid.clone(), list);
        for p in &positives {
            qrels.insert(qid.clone(), p.clone());
        }
        if q % 3 != 0 {
            qtypes.insert(qid.clone(), if q % 3 == 1 { QueryType::TextQ } else { QueryType::ImageQ });
        }
        cases.insert(qid, (ranking, positives));
    }
    let run = RankedRun::new(Method::Cos, 100, per_query).unwrap();
    for k in [1, 5, 20, 100] {
        let rep = evaluate_run(&run, &qrels, &qtypes, k).unwrap();
        let mut groups: BTreeMap<&str, Vec<[f64; 3]>> = BTreeMap::new();
        for (qid, (ranking, positives)) in &cases {
            let v = [
                Reference::recall(ranking, positives, k),
                Reference::mrr(ranking, positives, k),
                Reference::ndcg(ranking, positives, k),
            ];
            let g = qtypes.get(qid).map_or("unknown", |t| t.as_str());
            groups.entry(g).or_default().push(v);
            groups.entry("overall").or_default().push(v);
            let pq = &rep.per_query[qid].values;
            assert!((pq.recall - v[0]).abs() <= 1e-9);
            assert!((pq.mrr - v[1]).abs() <= 1e-9);
            assert!((pq.ndcg - v[2]).abs() <= 1e-9);
        }
        for (g, vals) in groups {
            let got = rep.group(g).unwrap();
            assert_eq!(got.count, vals.len());
            let avg = |i: usize| vals.iter().map(|v| v[i]).sum::<f64>() / vals.len() as f64;
            assert!((got.values.recall - avg(0)).abs() <= 1e-9);
            assert!((got.values.mrr - avg(1)).abs() <= 1e-9);
            assert!((got.values.ndcg - avg(2)).abs() <= 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn bounded_and_monotone_in_k(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let (ranking, positives) = random_case(&mut r);
        let mut prev = [0.0f64; 3];
        for k in 0..ranking.len() + 3 {
            let cur = [
                recall_at_k(&ranking, &positives, k).unwrap(),
                mrr_at_k(&ranking, &positives, k).unwrap(),
                ndcg_at_k(&ranking, &positives, k).unwrap(),
            ];
            for v in cur {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!(cur[0] >= prev[0]);
            prop_assert!(cur[1] >= prev[1]);
            // the ideal DCG stops growing once k covers every positive
            if k > positives.len() {
                prop_assert!(cur[2] >= prev[2]);
            }
            prev = cur;
        }
    }

    #[test]
    fn ndcg_is_perfect_iff_ideal_prefix(seed in any::<u64>(), k in 1usize..10) {
        let mut r = common::rng(seed);
        let (ranking, positives) = random_case(&mut r);
        let ideal = (0..k.min(positives.len()))
            .all(|i| ranking.get(i).is_some_and(|id| positives.contains(id)));
        let n = ndcg_at_k(&ranking, &positives, k).unwrap();
        prop_assert_eq!(ideal, (n - 100.0).abs() < 1e-9);
    }

    #[test]
    fn permuting_tail_keeps_recall_and_mrr(seed in any::<u64>(), k in 1usize..40) {
        let mut r = common::rng(seed);
        let (mut ranking, positives) = random_case(&mut r);
        let last_pos = ranking.iter().rposition(|id| positives.contains(id));
        let start = last_pos.map_or(0, |p| p + 1);
        let before = (recall_at_k(&ranking, &positives, k).unwrap(), mrr_at_k(&ranking, &positives, k).unwrap());
        ranking[start..].shuffle(&mut r);
        let after = (recall_at_k(&ranking, &positives, k).unwrap(), mrr_at_k(&ranking, &positives, k).unwrap());
        prop_assert_eq!(before, after);
    }
}
