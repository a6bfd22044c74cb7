//! Immutable multi-modal embedding store and query sets.
//!
//! On disk a store is a directory holding three files:
//!
//! - `manifest.json`: format tag, dimension, row count, and the SHA-256 of the
//!   vector block.
//! - `meta.jsonl`: one metadata object per row.
//! - `vectors.f32le`: row-major little-endian `f32` block, rows in the same
//!   order as `meta.jsonl`.
//!
//! Query sets share the layout; their metadata omits `modality` and may carry
//! a `qtype`. In memory, rows are always held in ascending id order, whatever
//! order the files use.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STORE_FORMAT: &str = "mbstore-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.jsonl";
pub const VECTORS_FILE: &str = "vectors.f32le";

/// Accepted deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;
/// Norms below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Text, Modality::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Image => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}

/// Which modality a question's answer lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryType {
    TextQ,
    ImageQ,
}

impl QueryType {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::TextQ => "TextQ",
            QueryType::ImageQ => "ImageQ",
        }
    }

    /// Modality of the items that answer this question type.
    pub fn target(self) -> Modality {
        match self {
            QueryType::TextQ => Modality::Text,
            QueryType::ImageQ => Modality::Image,
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TextQ" => Ok(QueryType::TextQ),
            "ImageQ" => Ok(QueryType::ImageQ),
            other => Err(Error::UnknownQueryType(other.to_string())),
        }
    }
}

/// Metadata line of a store's `meta.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: String,
    pub modality: Modality,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub uri: Option<String>,
}

/// Metadata line of a query set's `meta.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub id: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_qtype")]
    pub qtype: Option<QueryType>,
}

fn de_qtype<'de, D>(d: D) -> std::result::Result<Option<QueryType>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(d)?;
    raw.map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dim: usize,
    pub count: usize,
    pub normalized: bool,
    pub sha256_vectors: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn vectors_to_bytes(vectors: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vectors.len() * 4);
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a raw little-endian `f32` block.
pub fn vectors_from_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::CorruptManifest(format!(
            "vector block length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn normalize_row(id: &str, row: &mut [f32]) -> Result<()> {
    let norm = l2_norm(row);
    if !norm.is_finite() || norm < MIN_NORM {
        return Err(Error::ZeroVector {
            id: id.to_string(),
            norm,
        });
    }
    for x in row.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

/// Sorts rows by id and rejects duplicates or empty ids. Returns the row
/// permutation (`order[i]` is the source row of output row `i`).
fn sorted_order<'a>(ids: impl Iterator<Item = &'a str>) -> Result<Vec<usize>> {
    let ids: Vec<&str> = ids.collect();
    if let Some(pos) = ids.iter().position(|id| id.is_empty()) {
        return Err(Error::EmptyId(pos));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    for w in order.windows(2) {
        if ids[w[0]] == ids[w[1]] {
            return Err(Error::DuplicateId(ids[w[0]].to_string()));
        }
    }
    Ok(order)
}

fn check_shape(rows: usize, dim: usize, len: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::DimMismatch {
            expected: 1,
            found: 0,
        });
    }
    if !len.is_multiple_of(dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: len,
        });
    }
    if len / dim != rows {
        return Err(Error::RowCountMismatch {
            meta: rows,
            rows: len / dim,
        });
    }
    Ok(())
}

/// Raw contents of a store-format directory after structural validation.
struct RawDir<M> {
    dim: usize,
    meta: Vec<M>,
    vectors: Vec<f32>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads every line of a JSONL file into `T`.
pub fn load_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl(path.as_ref())
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_dir<M: DeserializeOwned>(dir: &Path) -> Result<RawDir<M>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::CorruptManifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != STORE_FORMAT {
        return Err(Error::CorruptManifest(format!(
            "unsupported format '{}'",
            manifest.format
        )));
    }
    if !manifest.normalized {
        return Err(Error::CorruptManifest("normalized flag is false".into()));
    }
    if manifest.dim == 0 {
        return Err(Error::CorruptManifest("dim must be positive".into()));
    }

    let meta: Vec<M> = read_jsonl(&dir.join(META_FILE))?;
    if meta.len() != manifest.count {
        return Err(Error::CorruptManifest(format!(
            "manifest count {} but {} metadata records",
            manifest.count,
            meta.len()
        )));
    }

    let vec_path = dir.join(VECTORS_FILE);
    let bytes = fs::read(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        let row_bytes = manifest.count * 4;
        if row_bytes > 0 && bytes.len() % row_bytes == 0 {
            return Err(Error::DimMismatch {
                expected: manifest.dim,
                found: bytes.len() / row_bytes,
            });
        }
        return Err(Error::CorruptManifest(format!(
            "vector block is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&manifest.sha256_vectors) {
        return Err(Error::ChecksumMismatch {
            expected: manifest.sha256_vectors,
            actual,
        });
    }
    Ok(RawDir {
        dim: manifest.dim,
        meta,
        vectors: vectors_from_bytes(&bytes)?,
    })
}

fn write_dir<M: Serialize>(dir: &Path, dim: usize, meta: &[M], vectors: &[f32]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let block = vectors_to_bytes(vectors);
    let manifest = Manifest {
        format: STORE_FORMAT.to_string(),
        dim,
        count: meta.len(),
        normalized: true,
        sha256_vectors: sha256_hex(&block),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec(&manifest).expect("manifest serializes");
    json.push(b'\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    write_jsonl(dir.join(META_FILE), meta)?;
    let vec_path = dir.join(VECTORS_FILE);
    fs::write(&vec_path, block).map_err(|e| Error::io(&vec_path, e))
}

fn check_norms<'a>(dim: usize, vectors: &[f32], ids: impl Iterator<Item = &'a str>) -> Result<()> {
    for (row, id) in vectors.chunks_exact(dim).zip(ids) {
        let norm = l2_norm(row);
        if !((1.0 - NORM_TOLERANCE)..=(1.0 + NORM_TOLERANCE)).contains(&norm) {
            return Err(Error::NormOutOfTolerance {
                id: id.to_string(),
                norm,
            });
        }
    }
    Ok(())
}

fn permute_rows(dim: usize, vectors: &[f32], order: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(vectors.len());
    for &src in order {
        out.extend_from_slice(&vectors[src * dim..(src + 1) * dim]);
    }
    out
}

fn fingerprint<M: Serialize>(dim: usize, meta: &[M], vectors: &[f32]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(STORE_FORMAT.as_bytes());
    hasher.update((dim as u64).to_le_bytes());
    for m in meta {
        hasher.update(serde_json::to_vec(m).expect("metadata serializes"));
        hasher.update(b"\n");
    }
    hasher.update(vectors_to_bytes(vectors));
    hex::encode(hasher.finalize())
}

/// The retrieval database: unit-norm item vectors partitioned by modality.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    meta: Vec<ItemMeta>,
    vectors: Vec<f32>,
    by_modality: [Vec<usize>; 2],
    fingerprint: String,
}

impl EmbeddingStore {
    /// Builds a store from unordered metadata and a row-major vector matrix,
    /// normalizing every row to unit length.
    pub fn from_records(meta: Vec<ItemMeta>, mut vectors: Vec<f32>, dim: usize) -> Result<Self> {
        check_shape(meta.len(), dim, vectors.len())?;
        let order = sorted_order(meta.iter().map(|m| m.id.as_str()))?;
        for (m, row) in meta.iter().zip(vectors.chunks_exact_mut(dim)) {
            normalize_row(&m.id, row)?;
        }
        Ok(Self::assemble(dim, meta, vectors, &order))
    }

    fn assemble(dim: usize, meta: Vec<ItemMeta>, vectors: Vec<f32>, order: &[usize]) -> Self {
        let vectors = permute_rows(dim, &vectors, order);
        let mut slots: Vec<Option<ItemMeta>> = meta.into_iter().map(Some).collect();
        let meta: Vec<ItemMeta> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let mut by_modality = [Vec::new(), Vec::new()];
        for (row, m) in meta.iter().enumerate() {
            by_modality[m.modality.index()].push(row);
        }
        let fingerprint = fingerprint(dim, &meta, &vectors);
        EmbeddingStore {
            dim,
            meta,
            vectors,
            by_modality,
            fingerprint,
        }
    }

    /// Loads and validates a store directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let raw: RawDir<ItemMeta> = read_dir(dir.as_ref())?;
        let order = sorted_order(raw.meta.iter().map(|m| m.id.as_str()))?;
        check_norms(raw.dim, &raw.vectors, raw.meta.iter().map(|m| m.id.as_str()))?;
        Ok(Self::assemble(raw.dim, raw.meta, raw.vectors, &order))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_dir(dir.as_ref(), self.dim, &self.meta, &self.vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Content hash over canonical metadata and vector bits.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn meta(&self, row: usize) -> &ItemMeta {
        &self.meta[row]
    }

    pub fn id(&self, row: usize) -> &str {
        &self.meta[row].id
    }

    pub fn modality(&self, row: usize) -> Modality {
        self.meta[row].modality
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.meta
            .binary_search_by(|m| m.id.as_str().cmp(id))
            .ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemMeta, &[f32])> + '_ {
        self.meta.iter().zip(self.vectors.chunks_exact(self.dim))
    }

    /// Items of one modality in ascending id order. May be empty.
    pub fn modality_view(&self, modality: Modality) -> ModalityView<'_> {
        ModalityView {
            store: self,
            modality,
            rows: &self.by_modality[modality.index()],
        }
    }
}

/// Borrowed, ordered slice of one modality's items.
#[derive(Debug, Clone, Copy)]
pub struct ModalityView<'a> {
    store: &'a EmbeddingStore,
    modality: Modality,
    rows: &'a [usize],
}

impl<'a> ModalityView<'a> {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn store(&self) -> &'a EmbeddingStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Store rows backing this view.
    pub fn rows(&self) -> &'a [usize] {
        self.rows
    }

    pub fn id(&self, i: usize) -> &'a str {
        self.store.id(self.rows[i])
    }

    pub fn vector(&self, i: usize) -> &'a [f32] {
        self.store.vector(self.rows[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &'a str> + 'a {
        let store = self.store;
        self.rows.iter().map(move |&r| store.id(r))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &'a [f32]> + 'a {
        let store = self.store;
        self.rows.iter().map(move |&r| store.vector(r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub vector: Vec<f32>,
    pub text: Option<String>,
    pub uri: Option<String>,
    pub qtype: Option<QueryType>,
}

impl QueryRecord {
    fn meta(&self) -> QueryMeta {
        QueryMeta {
            id: self.id.clone(),
            text: self.text.clone(),
            uri: self.uri.clone(),
            qtype: self.qtype,
        }
    }
}

/// Textual queries with precomputed embeddings, ascending id order.
#[derive(Debug, Clone)]
pub struct QuerySet {
    dim: usize,
    records: Vec<QueryRecord>,
}

impl QuerySet {
    /// Builds a query set from unordered metadata and row-major vectors,
    /// normalizing every row.
    pub fn from_records(meta: Vec<QueryMeta>, mut vectors: Vec<f32>, dim: usize) -> Result<Self> {
        check_shape(meta.len(), dim, vectors.len())?;
        let order = sorted_order(meta.iter().map(|m| m.id.as_str()))?;
        for (m, row) in meta.iter().zip(vectors.chunks_exact_mut(dim)) {
            normalize_row(&m.id, row)?;
        }
        Ok(Self::assemble(dim, meta, &vectors, &order))
    }

    fn assemble(dim: usize, meta: Vec<QueryMeta>, vectors: &[f32], order: &[usize]) -> Self {
        let mut slots: Vec<Option<QueryMeta>> = meta.into_iter().map(Some).collect();
        let records = order
            .iter()
            .map(|&i| {
                let m = slots[i].take().unwrap();
                QueryRecord {
                    id: m.id,
                    vector: vectors[i * dim..(i + 1) * dim].to_vec(),
                    text: m.text,
                    uri: m.uri,
                    qtype: m.qtype,
                }
            })
            .collect();
        QuerySet { dim, records }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let raw: RawDir<QueryMeta> = read_dir(dir.as_ref())?;
        let order = sorted_order(raw.meta.iter().map(|m| m.id.as_str()))?;
        check_norms(raw.dim, &raw.vectors, raw.meta.iter().map(|m| m.id.as_str()))?;
        Ok(Self::assemble(raw.dim, raw.meta, &raw.vectors, &order))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta: Vec<QueryMeta> = self.records.iter().map(QueryRecord::meta).collect();
        let vectors: Vec<f32> = self
            .records
            .iter()
            .flat_map(|r| r.vector.iter().copied())
            .collect();
        write_dir(dir.as_ref(), self.dim, &meta, &vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&QueryRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Query id to declared question type, for queries that have one.
    pub fn qtypes(&self) -> BTreeMap<String, QueryType> {
        self.records
            .iter()
            .filter_map(|r| r.qtype.map(|t| (r.id.clone(), t)))
            .collect()
    }

    /// Fails with `DimMismatch` unless the set is usable against `store`.
    pub fn check_against(&self, store: &EmbeddingStore) -> Result<()> {
        if self.dim != store.dim() {
            return Err(Error::DimMismatch {
                expected: store.dim(),
                found: self.dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelsLine {
    pub query_id: String,
    pub positive_ids: Vec<String>,
}

/// Query id to its set of relevant item ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn from_lines(lines: Vec<QrelsLine>) -> Result<Self> {
        let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for line in lines {
            if line.positive_ids.is_empty() {
                return Err(Error::EmptyQrels(line.query_id));
            }
            entries
                .entry(line.query_id)
                .or_default()
                .extend(line.positive_ids);
        }
        Ok(Qrels { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_lines(read_jsonl(path.as_ref())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let lines: Vec<QrelsLine> = self
            .entries
            .iter()
            .map(|(q, p)| QrelsLine {
                query_id: q.clone(),
                positive_ids: p.iter().cloned().collect(),
            })
            .collect();
        write_jsonl(path, &lines)
    }

    pub fn insert(&mut self, query_id: impl Into<String>, item_id: impl Into<String>) {
        self.entries
            .entry(query_id.into())
            .or_default()
            .insert(item_id.into());
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every referenced item must exist in `store`.
    pub fn validate(&self, store: &EmbeddingStore) -> Result<()> {
        for ids in self.entries.values() {
            if let Some(missing) = ids.iter().find(|id| store.row_of(id).is_none()) {
                return Err(Error::UnknownItem(missing.clone()));
            }
        }
        Ok(())
    }
}

/// Builds a store from records and writes it to `out`.
pub fn ingest(
    meta: Vec<ItemMeta>,
    vectors: Vec<f32>,
    dim: usize,
    out: impl AsRef<Path>,
) -> Result<EmbeddingStore> {
    let store = EmbeddingStore::from_records(meta, vectors, dim)?;
    store.write(out)?;
    Ok(store)
}

/// Writes a raw little-endian `f32` block, as consumed by `ingest`.
pub fn write_f32le(path: impl AsRef<Path>, vectors: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&vectors_to_bytes(vectors))
        .map_err(|e| Error::io(path, e))
}
