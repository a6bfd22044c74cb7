use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use modgap::analysis::{ModalitySkew, ScoreGapSample};
use modgap::calibration::{flatten_pairs, group_pairs, verify_pseudo_pairs};
use modgap::evaluation::{format_table, GROUP_OVERALL, GROUP_UNKNOWN};
use modgap::numeric::mean;
use modgap::store::{load_jsonl, sha256_hex, vectors_from_bytes, write_jsonl, MANIFEST_FILE, META_FILE};
use modgap::{
    build_pseudo_pairs, estimate_stats_with, evaluate_run_with, histogram, labeled_pairs,
    mean_score_gap, query_skewness, retrieve_all, svd_project, EmbeddingStore, ItemMeta, Modality,
    PseudoPair, ProjectionLabel, ProjectionRole, Qrels, QueryRecord, QuerySet, QueryType,
    RankedRun, RecallMode, StatsBundle, StatsSource, VarianceDivisor,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::synth::{gen_synth, SynthConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::GenSynth(a) => gen_synth_cmd(a),
        Command::PseudoPairs(a) => pseudo_pairs(a),
        Command::EstimateStats(a) => estimate_stats_cmd(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => match a.kind {
            AnalyzeKind::Skewness(a) => skewness(a),
            AnalyzeKind::Gap(a) => gap(a),
            AnalyzeKind::Svd(a) => svd(a),
        },
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    modgap::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read(path)?))
}

/// Hash of a query-set directory: manifest (which pins the vectors) plus
/// metadata.
fn dir_digest(dir: &Path) -> Result<String> {
    let mut bytes = read(&dir.join(MANIFEST_FILE))?;
    bytes.extend(read(&dir.join(META_FILE))?);
    Ok(sha256_hex(&bytes))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path.display().to_string(), e))?;
    s.push('\n');
    write_text(path, &s)
}

/// JSON artifact with the resolved config under `config`.
fn write_artifact(path: &Path, config: Value, body: impl Serialize) -> Result<()> {
    let mut body = serde_json::to_value(body).map_err(|e| CliError::output(path.display().to_string(), e))?;
    match &mut body {
        Value::Object(map) => {
            map.insert("config".into(), config);
        }
        _ => unreachable!("artifacts are JSON objects"),
    }
    write_json(path, &body)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".config.json");
    PathBuf::from(name)
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path.display().to_string(), e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::output(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    Ok(EmbeddingStore::load(path)?)
}

fn load_queries(path: &Path, store: &EmbeddingStore) -> Result<QuerySet> {
    let q = QuerySet::load(path)?;
    q.check_against(store)?;
    Ok(q)
}

fn select(queries: &QuerySet, qtype: Option<QueryType>) -> Vec<&QueryRecord> {
    queries
        .records()
        .iter()
        .filter(|q| qtype.is_none() || q.qtype == qtype)
        .collect()
}

fn group_name(qtype: Option<QueryType>) -> &'static str {
    qtype.map_or(GROUP_UNKNOWN, QueryType::as_str)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let meta: Vec<ItemMeta> = load_jsonl(&a.meta)?;
    let block = read(&a.vectors)?;
    let vectors = vectors_from_bytes(&block)?;
    let dim = match a.dim {
        Some(d) => d,
        None if meta.is_empty() => return Err(modgap::Error::EmptyStore.into()),
        None if vectors.len() % meta.len() != 0 => {
            return Err(modgap::Error::RowCountMismatch {
                meta: meta.len(),
                rows: vectors.len() / meta.len(),
            }
            .into())
        }
        None => vectors.len() / meta.len(),
    };
    let config = json!({
        "command": "ingest",
        "dim": dim,
        "meta": sha256_hex(&read(&a.meta)?),
        "vectors": sha256_hex(&block),
    });
    let store = modgap::ingest(meta, vectors, dim, &a.out)?;
    write_json(
        &a.out.join("config.json"),
        &json!({ "config": config, "store_fingerprint": store.fingerprint() }),
    )?;
    eprintln!("ingested {} items (dim {dim}) into {}", store.len(), a.out.display());
    Ok(())
}

fn gen_synth_cmd(a: GenSynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        dim: a.dim,
        n_text: a.n_text,
        n_image: a.n_image,
        n_queries: a.n_queries,
        gap: a.gap,
        noise: a.noise,
        image_query_ratio: a.image_query_ratio,
        n_calib_queries: a.n_calib_queries,
    };
    let data = gen_synth(&cfg)?;
    data.write(&a.out)?;
    let mut config = serde_json::to_value(&cfg).expect("config serializes");
    config["command"] = json!("gen-synth");
    config["rng"] = json!("chacha20");
    write_json(
        &a.out.join("synth_config.json"),
        &json!({ "config": config, "store_fingerprint": data.store.fingerprint() }),
    )?;
    eprintln!(
        "wrote {} items, {} queries, {} calibration queries to {}",
        data.store.len(),
        data.queries.len(),
        data.calib_queries.len(),
        a.out.display()
    );
    Ok(())
}

fn pseudo_pairs(a: PseudoPairsArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let queries = load_queries(&a.queries, &store)?;
    let pairs = build_pseudo_pairs(&queries, &store)?;
    let flat = flatten_pairs(&pairs);
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &flat)?;
    let config = json!({
        "command": "pseudo-pairs",
        "queries": dir_digest(&a.queries)?,
        "store": store.fingerprint(),
    });
    write_json(&sidecar(&a.out), &json!({ "config": config, "pairs": flat.len() }))?;
    Ok(())
}

/// Every pair must name an item of the store with the pair's modality.
fn check_pair_items(pairs: &[PseudoPair], store: &EmbeddingStore) -> Result<()> {
    for p in pairs {
        let row = store
            .row_of(&p.item_id)
            .ok_or_else(|| modgap::Error::UnknownItem(p.item_id.clone()))?;
        if store.modality(row) != p.modality {
            return Err(modgap::Error::InconsistentPair {
                query_id: p.query_id.clone(),
                item_id: p.item_id.clone(),
                reason: format!("item is {}, pair says {}", store.modality(row), p.modality),
            }
            .into());
        }
    }
    Ok(())
}

fn estimate_stats_cmd(a: EstimateStatsArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let mut config = json!({
        "command": "estimate-stats",
        "source": match a.source { SourceArg::Pseudo => "pseudo", SourceArg::Labeled => "labeled" },
        "store": store.fingerprint(),
        "variance": match a.variance { VarianceArg::Population => "population", VarianceArg::Sample => "sample" },
    });
    let queries = a
        .queries
        .as_deref()
        .map(|p| load_queries(p, &store))
        .transpose()?;
    if let Some(p) = &a.queries {
        config["queries"] = json!(dir_digest(p)?);
    }
    let (pairs, source) = match a.source {
        SourceArg::Pseudo => {
            let path = a.pairs.as_deref().expect("clap enforces --pairs");
            let flat: Vec<PseudoPair> = load_jsonl(path)?;
            check_pair_items(&flat, &store)?;
            config["pairs"] = json!(file_digest(path)?);
            let pairs = group_pairs(flat);
            if let Some(q) = &queries {
                verify_pseudo_pairs(&pairs, q, &store)?;
            }
            (pairs, StatsSource::Pseudo)
        }
        SourceArg::Labeled => {
            let path = a.qrels.as_deref().expect("clap enforces --qrels");
            let qrels = Qrels::load(path)?;
            qrels.validate(&store)?;
            config["qrels"] = json!(file_digest(path)?);
            let q = queries.as_ref().expect("clap enforces --queries");
            (labeled_pairs(q, &store, &qrels)?, StatsSource::Labeled)
        }
    };
    let divisor = match a.variance {
        VarianceArg::Population => VarianceDivisor::Population,
        VarianceArg::Sample => VarianceDivisor::Sample,
    };
    let stats = estimate_stats_with(&pairs, source, store.fingerprint(), divisor)?;
    ensure_parent(&a.out)?;
    stats.save(&a.out, Some(config))?;
    eprintln!(
        "text mean {:.6} std {:.6} (n={}); image mean {:.6} std {:.6} (n={})",
        stats.text.mean, stats.text.std, stats.text.count, stats.image.mean, stats.image.std, stats.image.count
    );
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let queries = load_queries(&a.queries, &store)?;
    let stats = a.stats.as_deref().map(StatsBundle::load).transpose()?;
    if let Some(s) = &stats {
        s.check_store(&store)?;
    }
    let per_query = retrieve_all(&queries, &store, a.k, a.method, stats.as_ref())?;
    let run = RankedRun::new(a.method, a.k, per_query.into_iter().collect())?;
    ensure_parent(&a.out)?;
    run.write(&a.out)?;
    let config = json!({
        "command": "retrieve",
        "method": a.method,
        "k": a.k,
        "queries": dir_digest(&a.queries)?,
        "store": store.fingerprint(),
        "stats": a.stats.as_deref().map(file_digest).transpose()?,
    });
    write_json(&sidecar(&a.out), &json!({ "config": config, "queries": run.per_query.len() }))?;
    Ok(())
}

#[derive(Serialize)]
struct RunReport {
    method: modgap::Method,
    depth: usize,
    cutoffs: Vec<modgap::MetricReport>,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let qrels = Qrels::load(&a.qrels)?;
    let qtypes = match &a.queries {
        Some(p) => QuerySet::load(p)?.qtypes(),
        None => BTreeMap::new(),
    };
    let mode = match a.recall_mode {
        RecallModeArg::Fraction => RecallMode::Fraction,
        RecallModeArg::AnyHit => RecallMode::AnyHit,
    };
    let mut labelled = Vec::new();
    for spec in &a.run {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(spec)),
        };
        let run = RankedRun::load(&path)?;
        let label = label.unwrap_or_else(|| run.method.to_string());
        if labelled.iter().any(|(l, _, _)| *l == label) {
            return Err(CliError::Usage(format!(
                "duplicate run label '{label}'; name runs as label=path"
            )));
        }
        labelled.push((label, path, run));
    }

    let mut runs = BTreeMap::new();
    let mut run_digests = BTreeMap::new();
    for (label, path, run) in &labelled {
        let cutoffs = a
            .k
            .iter()
            .map(|&k| evaluate_run_with(run, &qrels, &qtypes, k, mode))
            .collect::<modgap::Result<Vec<_>>>()?;
        runs.insert(
            label.clone(),
            RunReport {
                method: run.method,
                depth: run.k,
                cutoffs,
            },
        );
        run_digests.insert(label.clone(), file_digest(path)?);
    }

    let mut table = String::new();
    for (i, &k) in a.k.iter().enumerate() {
        let rows: Vec<(String, &modgap::MetricReport)> = labelled
            .iter()
            .map(|(label, _, _)| (label.clone(), &runs[label].cutoffs[i]))
            .collect();
        if i > 0 {
            table.push('\n');
        }
        debug_assert_eq!(rows[0].1.k, k);
        table.push_str(&format_table(&rows));
    }
    print!("{table}");

    let config = json!({
        "command": "evaluate",
        "k": a.k,
        "qrels": file_digest(&a.qrels)?,
        "queries": a.queries.as_deref().map(dir_digest).transpose()?,
        "recall_mode": mode,
        "runs": run_digests,
    });
    write_artifact(&a.out, config, json!({ "runs": runs }))?;
    write_text(&a.out.with_extension("txt"), &table)
}

#[derive(Serialize)]
struct SkewRow<'a> {
    query_id: &'a str,
    qtype: &'static str,
    text: f64,
    image: f64,
}

#[derive(Serialize)]
struct SkewGroup {
    count: usize,
    text: f64,
    image: f64,
}

fn skewness(a: SkewnessArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let queries = load_queries(&a.queries, &store)?;
    let selected = select(&queries, a.qtype);
    let skews: Vec<ModalitySkew> = selected
        .par_iter()
        .map(|q| query_skewness(q, &store))
        .collect::<modgap::Result<_>>()?;
    let rows: Vec<SkewRow> = selected
        .iter()
        .zip(&skews)
        .map(|(q, s)| SkewRow {
            query_id: &q.id,
            qtype: group_name(q.qtype),
            text: s.text,
            image: s.image,
        })
        .collect();
    let mut buckets: BTreeMap<&str, Vec<&SkewRow>> = BTreeMap::new();
    for r in &rows {
        buckets.entry(r.qtype).or_default().push(r);
        buckets.entry(GROUP_OVERALL).or_default().push(r);
    }
    let means: BTreeMap<&str, SkewGroup> = buckets
        .into_iter()
        .map(|(g, rs)| {
            let avg = |f: fn(&SkewRow) -> f64| mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0);
            (
                g,
                SkewGroup {
                    count: rs.len(),
                    text: avg(|r| r.text),
                    image: avg(|r| r.image),
                },
            )
        })
        .collect();
    let config = json!({
        "command": "analyze skewness",
        "queries": dir_digest(&a.queries)?,
        "store": store.fingerprint(),
        "qtype": a.qtype.map(QueryType::as_str),
    });
    write_artifact(&a.out, config, json!({ "means": means, "per_query": rows }))?;
    if a.csv {
        write_csv(&a.out.with_extension("csv"), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BinRow {
    lo: f64,
    hi: f64,
    count: u64,
}

fn gap(a: GapArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let queries = load_queries(&a.queries, &store)?;
    let stats = StatsBundle::load(&a.stats)?;
    stats.check_store(&store)?;
    let selected = select(&queries, a.qtype);
    let samples: Vec<ScoreGapSample> = selected
        .par_iter()
        .map(|q| mean_score_gap(q, &store, &stats))
        .collect::<modgap::Result<_>>()?;
    let gaps: Vec<f64> = samples.iter().map(|s| s.gap).collect();
    let hist = histogram(&gaps, a.bins, a.lo, a.hi)?;
    let config = json!({
        "command": "analyze gap",
        "queries": dir_digest(&a.queries)?,
        "store": store.fingerprint(),
        "stats": file_digest(&a.stats)?,
        "qtype": a.qtype.map(QueryType::as_str),
        "bins": a.bins,
        "range": [a.lo, a.hi],
    });
    write_artifact(
        &a.out,
        config,
        json!({
            "mean_gap": mean(&gaps),
            "edges": hist.edges,
            "counts": hist.counts,
            "underflow": hist.underflow,
            "overflow": hist.overflow,
            "samples": samples,
        }),
    )?;
    if a.csv {
        let rows: Vec<BinRow> = hist
            .counts
            .iter()
            .enumerate()
            .map(|(i, &count)| BinRow {
                lo: hist.edges[i],
                hi: hist.edges[i + 1],
                count,
            })
            .collect();
        write_csv(&a.out.with_extension("csv"), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PointRow<'a> {
    id: &'a str,
    role: ProjectionRole,
    x: f64,
    y: f64,
}

fn svd(a: SvdArgs) -> Result<()> {
    let store = load_store(&a.store)?;
    let queries = load_queries(&a.queries, &store)?;
    let qrels = Qrels::load(&a.qrels)?;
    let mut selected = select(&queries, a.qtype);
    if let Some(n) = a.limit {
        selected.truncate(n);
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut seen = BTreeSet::new();
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    for q in &selected {
        rows.push(widen(&q.vector));
        labels.push(ProjectionLabel {
            id: q.id.clone(),
            role: ProjectionRole::Query,
        });
        let positives = qrels
            .get(&q.id)
            .ok_or_else(|| modgap::Error::MissingQrels(q.id.clone()))?;
        for id in positives {
            if !seen.insert(id.clone()) {
                continue;
            }
            let row = store
                .row_of(id)
                .ok_or_else(|| modgap::Error::UnknownItem(id.clone()))?;
            rows.push(widen(store.vector(row)));
            labels.push(ProjectionLabel {
                id: id.clone(),
                role: match store.modality(row) {
                    Modality::Text => ProjectionRole::PositiveText,
                    Modality::Image => ProjectionRole::PositiveImage,
                },
            });
        }
    }
    let proj = svd_project(&rows, labels)?;
    let config = json!({
        "command": "analyze svd",
        "queries": dir_digest(&a.queries)?,
        "store": store.fingerprint(),
        "qrels": file_digest(&a.qrels)?,
        "qtype": a.qtype.map(QueryType::as_str),
        "limit": a.limit,
    });
    write_artifact(&a.out, config, &proj)?;
    if a.csv {
        let points: Vec<PointRow> = proj
            .labels
            .iter()
            .zip(&proj.coords)
            .map(|(l, c)| PointRow {
                id: &l.id,
                role: l.role,
                x: c[0],
                y: c[1],
            })
            .collect();
        write_csv(&a.out.with_extension("csv"), &points)?;
    }
    Ok(())
}
