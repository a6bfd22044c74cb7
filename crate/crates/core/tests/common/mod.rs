#![allow(dead_code)]

use modgap::{EmbeddingStore, ItemMeta, Modality, QueryMeta, QuerySet, QueryType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Random store with shuffled-looking ids so that id order differs from
/// insertion order.
pub fn random_store(seed: u64, n_text: usize, n_image: usize, dim: usize) -> EmbeddingStore {
    let mut r = rng(seed);
    let mut meta = Vec::new();
    let mut vectors = Vec::new();
    for i in 0..n_text + n_image {
        let modality = if i < n_text { Modality::Text } else { Modality::Image };
        let tag: u32 = r.random_range(0..1_000_000);
        meta.push(ItemMeta {
            id: format!("{tag:06}-{i}"),
            modality,
            text: None,
            uri: None,
        });
        vectors.extend(random_vector(&mut r, dim));
    }
    EmbeddingStore::from_records(meta, vectors, dim).unwrap()
}

/// Store whose vectors take only a handful of values, so exact score ties
/// are common.
pub fn tied_store(seed: u64, n_text: usize, n_image: usize, dim: usize) -> EmbeddingStore {
    let mut r = rng(seed);
    let palette: Vec<Vec<f32>> = (0..6).map(|_| random_vector(&mut r, dim)).collect();
    let mut meta = Vec::new();
    let mut vectors = Vec::new();
    for i in 0..n_text + n_image {
        let modality = if i < n_text { Modality::Text } else { Modality::Image };
        meta.push(ItemMeta {
            id: format!("item{:05}", r.random_range(0..100_000u32) * 10 + (i as u32 % 10)),
            modality,
            text: None,
            uri: None,
        });
        vectors.extend(palette[r.random_range(0..palette.len())].iter());
    }
    // drop accidental duplicate ids
    let mut seen = std::collections::BTreeSet::new();
    let mut m2 = Vec::new();
    let mut v2 = Vec::new();
    for (m, v) in meta.into_iter().zip(vectors.chunks(dim)) {
        if seen.insert(m.id.clone()) {
            m2.push(m);
            v2.extend_from_slice(v);
        }
    }
    EmbeddingStore::from_records(m2, v2, dim).unwrap()
}

pub fn random_queries(seed: u64, n: usize, dim: usize) -> QuerySet {
    let mut r = rng(seed);
    let meta = (0..n)
        .map(|i| QueryMeta {
            id: format!("q{i:04}"),
            text: Some(format!("query {i}")),
            uri: None,
            qtype: Some(if i % 2 == 0 { QueryType::TextQ } else { QueryType::ImageQ }),
        })
        .collect();
    let vectors = (0..n).flat_map(|_| random_vector(&mut r, dim)).collect();
    QuerySet::from_records(meta, vectors, dim).unwrap()
}
