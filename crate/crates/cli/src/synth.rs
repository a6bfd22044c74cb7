//! Synthetic benchmark with a controllable modality gap.
//!
//! Every item gets its own latent topic on the unit sphere. Text items and
//! all queries share an offset vector of norm `gap`, drawn orthogonal to
//! every latent, so raw cosine favours text candidates for any query while
//! the topic structure inside each modality is untouched. A query sits near
//! the latent of one gold item of its target modality.
//!
//! Randomness comes from ChaCha20 seeded with `seed_from_u64(seed)`; each
//! component reads its own stream so changing one count does not perturb the
//! draws of another.

use std::path::Path;

use modgap::{EmbeddingStore, ItemMeta, Modality, Qrels, QueryMeta, QuerySet, QueryType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::CliError;

const STREAM_OFFSET: u64 = 1;
const STREAM_ITEMS: u64 = 2;
const STREAM_QUERIES: u64 = 3;
const STREAM_CALIB: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_text: usize,
    pub n_image: usize,
    pub n_queries: usize,
    /// Norm of the offset shared by text items and queries.
    pub gap: f64,
    /// Scale of per-vector Gaussian noise around a latent.
    pub noise: f64,
    /// Share of evaluation queries whose gold item is an image.
    pub image_query_ratio: f64,
    /// Calibration queries, split evenly between TextQ and ImageQ.
    pub n_calib_queries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            dim: 64,
            n_text: 2000,
            n_image: 2000,
            n_queries: 200,
            gap: 2.0,
            noise: 0.5,
            image_query_ratio: 0.5,
            n_calib_queries: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::BadConfig(msg.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.n_text == 0 || self.n_image == 0 {
            return bad("n_text and n_image must be positive");
        }
        if self.n_queries == 0 {
            return bad("n_queries must be positive");
        }
        if !(self.gap >= 0.0 && self.gap.is_finite()) {
            return bad("gap must be finite and >= 0");
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&self.image_query_ratio) {
            return bad("image_query_ratio must lie in [0, 1]");
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

pub struct SynthData {
    pub store: EmbeddingStore,
    pub queries: QuerySet,
    pub qrels: Qrels,
    pub calib_queries: QuerySet,
    pub calib_qrels: Qrels,
}

impl SynthData {
    /// Lays out `store/`, `queries/`, `calib_queries/`, `qrels.jsonl` and
    /// `calib_qrels.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> modgap::Result<()> {
        self.store.write(dir.join("store"))?;
        self.queries.write(dir.join("queries"))?;
        self.calib_queries.write(dir.join("calib_queries"))?;
        self.qrels.write(dir.join("qrels.jsonl"))?;
        self.calib_qrels.write(dir.join("calib_qrels.jsonl"))
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= n;
    }
}

struct Item {
    id: String,
    modality: Modality,
    latent: Vec<f64>,
}

struct Geometry {
    dim: usize,
    noise: f64,
    offset: Vec<f64>,
}

impl Geometry {
    /// `normalize(latent + noise * eps / sqrt(dim) [+ offset])`.
    fn embed(&self, rng: &mut impl Rng, latent: &[f64], shifted: bool) -> Vec<f32> {
        let scale = self.noise / (self.dim as f64).sqrt();
        let mut v: Vec<f64> = latent
            .iter()
            .map(|z| z + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if shifted {
            for (x, o) in v.iter_mut().zip(&self.offset) {
                *x += o;
            }
        }
        normalize(&mut v);
        v.into_iter().map(|x| x as f32).collect()
    }
}

pub fn gen_synth(cfg: &SynthConfig) -> Result<SynthData, CliError> {
    cfg.validate()?;
    let dim = cfg.dim;

    let mut direction = gaussian_vec(&mut cfg.rng(STREAM_OFFSET), dim);
    normalize(&mut direction);
    let geo = Geometry {
        dim,
        noise: cfg.noise,
        offset: direction.iter().map(|u| u * cfg.gap).collect(),
    };

    let mut rng = cfg.rng(STREAM_ITEMS);
    let mut items = Vec::with_capacity(cfg.n_text + cfg.n_image);
    let mut meta = Vec::with_capacity(items.capacity());
    let mut vectors = Vec::with_capacity(items.capacity() * dim);
    let specs = [
        (Modality::Text, cfg.n_text, "txt"),
        (Modality::Image, cfg.n_image, "img"),
    ];
    for (modality, count, prefix) in specs {
        for i in 0..count {
            let mut latent = gaussian_vec(&mut rng, dim);
            let along: f64 = latent.iter().zip(&direction).map(|(a, b)| a * b).sum();
            for (z, u) in latent.iter_mut().zip(&direction) {
                *z -= along * u;
            }
            normalize(&mut latent);
            vectors.extend(geo.embed(&mut rng, &latent, modality == Modality::Text));
            let id = format!("{prefix}-{i:06}");
            meta.push(ItemMeta {
                id: id.clone(),
                modality,
                text: (modality == Modality::Text).then(|| format!("synthetic passage {i}")),
                uri: (modality == Modality::Image).then(|| format!("synth://image/{i}")),
            });
            items.push(Item {
                id,
                modality,
                latent,
            });
        }
    }
    let store = EmbeddingStore::from_records(meta, vectors, dim)?;

    let n_image_q = (cfg.n_queries as f64 * cfg.image_query_ratio).round() as usize;
    let (queries, qrels) = draw_queries(
        &mut cfg.rng(STREAM_QUERIES),
        &geo,
        &items,
        "q",
        cfg.n_queries,
        n_image_q,
    )?;
    let (calib_queries, calib_qrels) = draw_queries(
        &mut cfg.rng(STREAM_CALIB),
        &geo,
        &items,
        "calib",
        cfg.n_calib_queries,
        cfg.n_calib_queries / 2,
    )?;
    Ok(SynthData {
        store,
        queries,
        qrels,
        calib_queries,
        calib_qrels,
    })
}

/// The first `n_image_q` queries are ImageQ, the rest TextQ.
fn draw_queries(
    rng: &mut ChaCha20Rng,
    geo: &Geometry,
    items: &[Item],
    prefix: &str,
    n: usize,
    n_image_q: usize,
) -> Result<(QuerySet, Qrels), CliError> {
    let text: Vec<&Item> = items.iter().filter(|i| i.modality == Modality::Text).collect();
    let image: Vec<&Item> = items.iter().filter(|i| i.modality == Modality::Image).collect();
    let mut meta = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * geo.dim);
    let mut qrels = Qrels::default();
    for q in 0..n {
        let (qtype, pool) = if q < n_image_q {
            (QueryType::ImageQ, &image)
        } else {
            (QueryType::TextQ, &text)
        };
        let gold = pool[rng.random_range(0..pool.len())];
        vectors.extend(geo.embed(rng, &gold.latent, true));
        let id = format!("{prefix}-{q:05}");
        qrels.insert(id.clone(), gold.id.clone());
        meta.push(QueryMeta {
            id,
            text: None,
            uri: None,
            qtype: Some(qtype),
        });
    }
    Ok((QuerySet::from_records(meta, vectors, geo.dim)?, qrels))
}
