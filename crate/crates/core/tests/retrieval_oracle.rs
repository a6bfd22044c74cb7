//! Top-k and standardized retrieval against brute-force sort oracles.

mod common;

use modgap::calibration::ModalityStats;
use modgap::{
    all_scores, retrieve, top_k, EmbeddingStore, Method, Modality, QueryRecord, StatsBundle,
    StatsSource,
};
use proptest::prelude::*;

/// Every item of one modality, scored in plain `f64`, stable-sorted by
/// (-score, id).
fn view_oracle(query: &[f32], store: &EmbeddingStore, m: Modality, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = store
        .iter()
        .filter(|(meta, _)| meta.modality == m)
        .map(|(meta, v)| {
            let s: f64 = query.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            (meta.id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn query(v: Vec<f32>) -> QueryRecord {
    QueryRecord {
        id: "q".into(),
        vector: v,
        text: None,
        uri: None,
        qtype: None,
    }
}

#[test]
fn top_k_matches_exhaustive_sort() {
    let store = common::random_store(11, 0, 1000, 32);
    let view = store.modality_view(Modality::Image);
    let mut r = common::rng(12);
    for _ in 0..20 {
        let q = common::random_vector(&mut r, 32);
        let got: Vec<(String, f64)> = top_k(&q, &view, 10)
            .unwrap()
            .into_iter()
            .map(|c| (c.item_id, c.raw_cos))
            .collect();
        assert_eq!(got, view_oracle(&q, &store, Modality::Image, 10));
    }
}

#[test]
fn top_k_matches_oracle_with_heavy_ties() {
    let store = common::tied_store(5, 300, 300, 16);
    let mut r = common::rng(6);
    for m in Modality::ALL {
        let view = store.modality_view(m);
        for k in [1, 3, 17, 100, 1000] {
            let q = common::random_vector(&mut r, 16);
            let got: Vec<(String, f64)> = top_k(&q, &view, k)
                .unwrap()
                .into_iter()
                .map(|c| (c.item_id, c.raw_cos))
                .collect();
            assert_eq!(got, view_oracle(&q, &store, m, k), "k={k} m={m}");
        }
    }
}

#[test]
fn all_scores_sorted_equals_top_k() {
    let store = common::random_store(21, 200, 0, 24);
    let view = store.modality_view(Modality::Text);
    let q = common::random_vector(&mut common::rng(22), 24);
    let scores = all_scores(&q, &view).unwrap();
    assert_eq!(scores.len(), view.len());
    for (i, s) in scores.iter().enumerate() {
        assert_eq!(*s, modgap::cosine(&q, view.vector(i)).unwrap());
    }
    let mut pairs: Vec<(f64, &str)> = scores.iter().copied().zip(view.ids()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let top: Vec<&str> = pairs.iter().take(15).map(|p| p.1).collect();
    let got = top_k(&q, &view, 15).unwrap();
    assert_eq!(got.iter().map(|c| c.item_id.as_str()).collect::<Vec<_>>(), top);
}

#[test]
fn results_independent_of_thread_count() {
    let store = common::random_store(31, 500, 500, 16);
    let queries = common::random_queries(32, 40, 16);
    let stats = StatsBundle {
        text: ModalityStats::from_moments(0.3, 0.1, 10),
        image: ModalityStats::from_moments(0.1, 0.05, 10),
        source: StatsSource::Pseudo,
        store_fingerprint: store.fingerprint().into(),
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| modgap::retrieve_all(&queries, &store, 25, Method::Std, Some(&stats)).unwrap())
    };
    assert_eq!(run(1), run(8));
}

/// Standardize every item, then one global stable sort.
fn std_oracle(q: &[f32], store: &EmbeddingStore, stats: &StatsBundle, k: usize) -> Vec<String> {
    let mut all: Vec<(f64, f64, Modality, String)> = store
        .iter()
        .map(|(meta, v)| {
            let raw: f64 = q.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            let s = stats.get(meta.modality);
            ((raw - s.mean) / s.std, raw, meta.modality, meta.id.clone())
        })
        .collect();
    all.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    all.into_iter().take(k).map(|t| t.3).collect()
}

fn cos_oracle(q: &[f32], store: &EmbeddingStore, k: usize) -> Vec<String> {
    let mut all: Vec<(f64, Modality, String)> = store
        .iter()
        .map(|(meta, v)| {
            let raw: f64 = q.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            (raw, meta.modality, meta.id.clone())
        })
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().take(k).map(|t| t.2).collect()
}

fn ids(v: Vec<modgap::ScoredCandidate>) -> Vec<String> {
    v.into_iter().map(|c| c.item_id).collect()
}

#[test]
fn k_beyond_store_returns_everything() {
    let store = common::random_store(41, 7, 5, 8);
    let q = query(common::random_vector(&mut common::rng(42), 8));
    let got = retrieve(&q, &store, 100, Method::Cos, None).unwrap();
    assert_eq!(got.len(), 12);
    assert_eq!(ids(got), cos_oracle(&q.vector, &store, 100));
}

#[test]
fn text_only_store_still_retrieves() {
    let store = common::random_store(43, 9, 0, 8);
    let q = query(common::random_vector(&mut common::rng(44), 8));
    let stats = StatsBundle {
        text: ModalityStats::from_moments(0.3, 0.1, 10),
        image: ModalityStats::from_moments(0.1, 0.05, 10),
        source: StatsSource::Pseudo,
        store_fingerprint: String::new(),
    };
    let got = retrieve(&q, &store, 5, Method::Std, Some(&stats)).unwrap();
    assert_eq!(ids(got), std_oracle(&q.vector, &store, &stats, 5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn merge_equals_global_sort(
        seed in any::<u64>(),
        n_text in 1usize..300,
        n_image in 1usize..300,
        tied in any::<bool>(),
        k in 0usize..700,
        mt in -0.5f64..0.9, st in 0.001f64..0.5,
        mi in -0.5f64..0.9, si in 0.001f64..0.5,
    ) {
        let store = if tied {
            common::tied_store(seed, n_text, n_image, 12)
        } else {
            common::random_store(seed, n_text, n_image, 12)
        };
        let q = query(common::random_vector(&mut common::rng(seed ^ 1), 12));
        let stats = StatsBundle {
            text: ModalityStats::from_moments(mt, st, 10),
            image: ModalityStats::from_moments(mi, si, 10),
            source: StatsSource::Pseudo,
            store_fingerprint: String::new(),
        };
        let got = retrieve(&q, &store, k, Method::Std, Some(&stats)).unwrap();
        prop_assert_eq!(got.len(), k.min(store.len()));
        for c in &got {
            let s = stats.get(c.modality);
            prop_assert_eq!(c.std_score, Some((c.raw_cos - s.mean) / s.std));
        }
        prop_assert_eq!(ids(got), std_oracle(&q.vector, &store, &stats, k));
        let cos = retrieve(&q, &store, k, Method::Cos, None).unwrap();
        prop_assert!(cos.iter().all(|c| c.std_score.is_none()));
        prop_assert_eq!(ids(cos), cos_oracle(&q.vector, &store, k));
    }

    #[test]
    fn top_k_prefix_property(seed in any::<u64>(), k1 in 0usize..60, extra in 0usize..60) {
        let store = common::tied_store(seed, 80, 0, 6);
        let view = store.modality_view(Modality::Text);
        let q = common::random_vector(&mut common::rng(seed.wrapping_add(9)), 6);
        let short = top_k(&q, &view, k1).unwrap();
        let long = top_k(&q, &view, k1 + extra).unwrap();
        prop_assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn std_restricted_to_modality_is_cos_order(
        seed in any::<u64>(),
        mt in -1.0f64..1.0, st in 1e-6f64..1.0,
        mi in -1.0f64..1.0, si in 1e-6f64..1.0,
    ) {
        let store = common::tied_store(seed, 60, 60, 5);
        let q = query(common::random_vector(&mut common::rng(!seed), 5));
        let stats = StatsBundle {
            text: ModalityStats::from_moments(mt, st, 10),
            image: ModalityStats::from_moments(mi, si, 10),
            source: StatsSource::Pseudo,
            store_fingerprint: String::new(),
        };
        let std = retrieve(&q, &store, store.len(), Method::Std, Some(&stats)).unwrap();
        for m in Modality::ALL {
            let restricted: Vec<&str> = std
                .iter()
                .filter(|c| c.modality == m)
                .map(|c| c.item_id.as_str())
                .collect();
            let view = store.modality_view(m);
            let cos = top_k(&q.vector, &view, view.len()).unwrap();
            let cos: Vec<&str> = cos.iter().map(|c| c.item_id.as_str()).collect();
            prop_assert_eq!(restricted, cos);
        }
    }
}
