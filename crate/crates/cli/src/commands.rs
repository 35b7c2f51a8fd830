use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use codemix_core::augment::{merge_external, synth_pairs, REFERENCE_SYNTHETIC_TOTAL};
use codemix_core::corpus::{corpus_stats, parse_conll, read_jsonl, split_shuffle, write_jsonl, Dataset, SentLabel};
use codemix_core::embed::{
    apply_map, fit_procrustes_with, load_vectors, precision_at_1, romanize_vocab, BilingualLexicon, EmbeddingTable,
    FitOptions, Transliterator,
};
use codemix_core::eval::{metrics_with, read_predictions, report_table, score_predictions, ConfusionMatrix, Prediction};
use codemix_core::nn::baseline::majority_class;
use codemix_core::nn::model::{init_params, load_pretrained, predict};
use codemix_core::nn::{grad_check, train, Checkpoint, EncodedInstance, Vocab};
use codemix_core::textnorm::{from_jsonl, run_pipeline_detailed, to_jsonl, NormalizedInstance};
use codemix_core::{EncoderKind, MetricsReport, ModelSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::Stage;
use crate::config::{EmbeddingSource, Resolved};

const SPLITS: [&str; 3] = ["train", "validation", "test"];

fn read_normalized(path: &std::path::Path) -> Result<Vec<NormalizedInstance>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_jsonl(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn ingest(resolved: &Resolved) -> Result<Value> {
    let cfg = &resolved.config;
    let mut stage = Stage::open(resolved, "ingest")?;
    let mapping = cfg.tag_mapping()?;
    let pair = cfg.language_pair;
    let Some(train_path) = cfg.paths.train.clone() else {
        bail!("ingest needs paths.train");
    };
    let full = parse_conll(&stage.read_input(&train_path), &mapping, pair)?;
    let (train, validation) = match &cfg.paths.validation {
        Some(p) => (full, parse_conll(&stage.read_input(p), &mapping, pair)?),
        None => {
            let (val, train) = split_shuffle(&full, cfg.split.validation_fraction, cfg.split.seed)?;
            log::info!("no validation file; held out {} of {} training tweets", val.len(), full.len());
            (train, val)
        }
    };
    let mut sets: Vec<(&str, Dataset)> = vec![("train", train), ("validation", validation)];
    if let Some(p) = &cfg.paths.test {
        sets.push(("test", parse_conll(&stage.read_input(p), &mapping, pair)?));
    }
    if let Some(p) = &cfg.paths.external {
        sets.push(("external", parse_conll(&stage.read_input(p), &mapping, pair)?));
    }
    let mut stats = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (name, ds) in &sets {
        write_jsonl(ds, &stage.output(&format!("{name}.jsonl")))?;
        stats.insert(*name, corpus_stats(ds)?);
        counts.insert(*name, ds.len());
    }
    stage.write_json("stats.json", &stats)?;
    stage.finish()?;
    Ok(json!({ "instances": counts }))
}

pub fn preprocess(resolved: &Resolved) -> Result<Value> {
    let cfg = &resolved.config;
    let norm = cfg.norm_config()?;
    let mut stage = Stage::open(resolved, "preprocess")?;
    let mut flagged = BTreeMap::new();
    let mut unmapped: BTreeMap<String, usize> = BTreeMap::new();
    for split in SPLITS {
        let Ok(input) = stage.upstream("ingest", &format!("{split}.jsonl")) else {
            continue;
        };
        let ds = read_jsonl(&stage.read_input(&input), cfg.language_pair)?;
        let mut out = Vec::with_capacity(ds.len());
        for inst in &ds.instances {
            let outcome = run_pipeline_detailed(inst, &norm);
            for e in outcome.unmapped_emoji {
                *unmapped.entry(e).or_default() += 1;
            }
            out.push(outcome.instance);
        }
        flagged.insert(split, out.iter().filter(|i| i.flagged).count());
        stage.write(&format!("{split}.jsonl"), to_jsonl(&out))?;
    }
    if flagged.is_empty() {
        bail!("no ingested splits found; run `codemix ingest` first");
    }
    stage.write_json("summary.json", &json!({ "flagged": flagged, "unmapped_emoji": unmapped }))?;
    stage.finish()?;
    Ok(json!({ "flagged": flagged, "unmapped_emoji": unmapped.len() }))
}

#[derive(Serialize)]
struct AlignReport {
    pairs_used: usize,
    lexicon_pairs: usize,
    precision_at_1: f64,
    orthogonality_error: f64,
    rank_deficient: bool,
    romanization_collisions: usize,
    unmapped_chars: usize,
    combined_vocabulary: usize,
    map: Vec<Vec<f64>>,
}

pub fn align(resolved: &Resolved) -> Result<Value> {
    let cfg = &resolved.config;
    let mut stage = Stage::open(resolved, "align")?;
    let (Some(src_p), Some(tgt_p), Some(lex_p)) = (&cfg.paths.src_embeddings, &cfg.paths.tgt_embeddings, &cfg.paths.lexicon)
    else {
        bail!("align needs paths.src_embeddings, paths.tgt_embeddings and paths.lexicon");
    };
    let mut src = load_vectors(&stage.read_input(src_p), cfg.align.limit)?;
    let tgt = load_vectors(&stage.read_input(tgt_p), cfg.align.limit)?;
    let mut lex = BilingualLexicon::load_tsv(&stage.read_input(lex_p))?;
    let (mut collisions, mut unmapped_chars) = (0, 0);
    if cfg.align.romanize {
        let translit = match &cfg.paths.transliteration {
            Some(p) => Transliterator::load_tsv(&stage.read_input(p))?,
            None => Transliterator::devanagari_demo(),
        };
        let r = romanize_vocab(&src, &translit);
        collisions = r.collisions.len();
        unmapped_chars = r.unmapped_chars;
        src = r.table;
        lex = lex.romanize_sources(&translit);
    }
    let opts = FitOptions { center: cfg.align.center, normalize: cfg.align.normalize };
    let fit = fit_procrustes_with(&src, &tgt, &lex, opts)?;
    let aligned = apply_map(&fit.map, &src)?;
    let p1 = precision_at_1(&aligned, &tgt, &lex)?;
    // the target space wins where both languages share a word
    let mut rows: Vec<(String, Vec<f64>)> = tgt.words().iter().zip(tgt.matrix().rows()).map(|(w, r)| (w.clone(), r.to_vec())).collect();
    for (w, r) in aligned.words().iter().zip(aligned.matrix().rows()) {
        if tgt.index_of(w).is_none() {
            rows.push((w.clone(), r.to_vec()));
        }
    }
    let combined = EmbeddingTable::from_rows(rows)?;
    combined.write(&stage.output("embeddings.vec"))?;
    let report = AlignReport {
        pairs_used: fit.pairs_used,
        lexicon_pairs: lex.pairs.len(),
        precision_at_1: p1,
        orthogonality_error: fit.map.orthogonality_error(),
        rank_deficient: fit.rank_deficient,
        romanization_collisions: collisions,
        unmapped_chars,
        combined_vocabulary: combined.len(),
        map: fit.map.w.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    stage.write_json("alignment.json", &report)?;
    stage.finish()?;
    Ok(json!({
        "pairs_used": report.pairs_used,
        "precision_at_1": report.precision_at_1,
        "orthogonality_error": report.orthogonality_error,
        "combined_vocabulary": report.combined_vocabulary,
    }))
}

pub fn augment(resolved: &Resolved) -> Result<Value> {
    let cfg = &resolved.config;
    let norm = cfg.norm_config()?;
    let mut stage = Stage::open(resolved, "augment")?;
    let train_p = stage.upstream("ingest", "train.jsonl")?;
    let mut ds = read_jsonl(&stage.read_input(&train_p), cfg.language_pair)?;
    if let Ok(ext) = stage.upstream("ingest", "external.jsonl") {
        let extra = read_jsonl(&stage.read_input(&ext), cfg.language_pair)?;
        ds = merge_external(&ds, &extra)?;
    }
    let out = synth_pairs(&ds, &cfg.augment)?;
    log::info!(
        "{} synthetic tweets (reference total {REFERENCE_SYNTHETIC_TOTAL})",
        out.summary.synthetic
    );
    write_jsonl(&out.dataset, &stage.output("train.jsonl"))?;
    let normalized: Vec<NormalizedInstance> =
        out.dataset.instances.iter().map(|i| run_pipeline_detailed(i, &norm).instance).collect();
    stage.write("train.normalized.jsonl", to_jsonl(&normalized))?;
    stage.write_json("summary.json", &out.summary)?;
    stage.finish()?;
    Ok(json!({
        "input_size": out.summary.input_size,
        "threshold": out.summary.threshold,
        "synthetic": out.summary.synthetic,
        "output_size": out.summary.output_size,
        "reference_total": out.summary.reference_total,
    }))
}

pub fn train_cmd(resolved: &Resolved) -> Result<Value> {
    let cfg = &resolved.config;
    let spec = &cfg.model;
    let mut stage = Stage::open(resolved, "train")?;
    let train_p = if cfg.inputs.augmented {
        stage.upstream("augment", "train.normalized.jsonl")?
    } else {
        stage.upstream("preprocess", "train.jsonl")?
    };
    let val_p = stage.upstream("preprocess", "validation.jsonl")?;
    let train_n = read_normalized(&stage.read_input(&train_p))?;
    let val_n = read_normalized(&stage.read_input(&val_p))?;
    let vocab = Vocab::words(&train_n, cfg.inputs.min_count);
    let chars = Vocab::chars(&train_n);
    let encode = |xs: &[NormalizedInstance]| -> Vec<EncodedInstance> {
        xs.iter().map(|i| EncodedInstance::encode(i, &vocab, &chars)).collect()
    };
    let (train_e, val_e) = (encode(&train_n), encode(&val_n));

    let mut params = init_params(spec, vocab.len(), chars.len(), cfg.train.seed)?;
    let table_path = match cfg.inputs.embeddings {
        EmbeddingSource::None => None,
        EmbeddingSource::Aligned => Some(stage.upstream("align", "embeddings.vec")?),
        EmbeddingSource::Target => Some(
            cfg.paths
                .tgt_embeddings
                .clone()
                .context("inputs.embeddings = target needs paths.tgt_embeddings")?,
        ),
    };
    let mut pretrained_hits = None;
    if let Some(p) = table_path {
        let table = load_vectors(&stage.read_input(&p), None)?;
        let hits = load_pretrained(&mut params, &vocab, &table)?;
        log::info!("{hits} of {} vocabulary words have pretrained vectors", vocab.len() - 1);
        pretrained_hits = Some(hits);
    }

    let outcome = train(spec, params, &train_e, &val_e, &cfg.train)?;
    Checkpoint::new(spec, &vocab, &chars, &outcome.params).save(&stage.output("checkpoint.json"))?;
    stage.write("history.jsonl", codemix_core::nn::train::history_jsonl(&outcome.history))?;
    let majority = majority_class(&train_e).map(|k| val_e.iter().filter(|i| i.label == k).count() as f64 / val_e.len() as f64);
    let summary = json!({
        "encoder": spec.encoder,
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_f1": outcome.best_f1,
        "best_val_accuracy": outcome.history[outcome.best_epoch - 1].val_accuracy,
        "majority_val_accuracy": majority,
        "stopped_early": outcome.stopped_early,
        "vocabulary": vocab.len(),
        "characters": chars.len(),
        "parameters": outcome.params.num_scalars(),
        "pretrained_hits": pretrained_hits,
        "train_instances": train_e.len(),
        "validation_instances": val_e.len(),
    });
    stage.write_json("summary.json", &summary)?;
    stage.finish()?;
    Ok(summary)
}

#[derive(Serialize)]
struct ScoredRow {
    name: String,
    confusion: ConfusionMatrix,
    metrics: MetricsReport,
}

fn write_report(stage: &mut Stage, rows: Vec<ScoredRow>) -> Result<Value> {
    let table_rows: Vec<(String, MetricsReport)> = rows.iter().map(|r| (r.name.clone(), r.metrics.clone())).collect();
    let table = report_table(&table_rows);
    stage.write("report.txt", &table.text)?;
    stage.write("report.tsv", &table.tsv)?;
    stage.write_json("metrics.json", &rows)?;
    let summary: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "name": r.name, "accuracy": r.metrics.accuracy, "average_f1": r.metrics.average_f1() }))
        .collect();
    Ok(json!({ "rows": summary }))
}

fn score(name: String, preds: &[Prediction], averaging: codemix_core::eval::Averaging) -> Result<ScoredRow> {
    let confusion = score_predictions(preds)?;
    let metrics = metrics_with(&confusion, averaging);
    Ok(ScoredRow { name, confusion, metrics })
}

/// `predictions` holds `NAME=PATH` pairs; without any, the trained
/// checkpoint is scored on `split` next to the majority-class baseline.
pub fn evaluate(resolved: &Resolved, predictions: &[String], split: &str) -> Result<Value> {
    let cfg = &resolved.config;
    let averaging = cfg.train.averaging;
    let mut stage = Stage::open(resolved, "evaluate")?;
    let mut rows = Vec::new();
    if !predictions.is_empty() {
        for p in predictions {
            let (name, path) = p.split_once('=').context("--predictions takes NAME=PATH")?;
            let path = stage.read_input(&PathBuf::from(path));
            let preds = read_predictions(&path)?;
            rows.push(score(name.to_string(), &preds, averaging)?);
        }
        let out = write_report(&mut stage, rows)?;
        stage.finish()?;
        return Ok(out);
    }

    let ck_path = stage.upstream("train", "checkpoint.json")?;
    let ck = Checkpoint::load(&stage.read_input(&ck_path))?;
    let (vocab, chars) = ck.vocabs();
    let params = ck.params()?;
    let data_p = stage.upstream("preprocess", &format!("{split}.jsonl"))?;
    let train_p = stage.upstream("preprocess", "train.jsonl")?;
    let data = read_normalized(&stage.read_input(&data_p))?;
    let train_n = read_normalized(&stage.read_input(&train_p))?;
    let encoded: Vec<EncodedInstance> = data.iter().map(|i| EncodedInstance::encode(i, &vocab, &chars)).collect();
    let output = predict(&ck.spec, &params, &encoded)?;
    let to_label = |k: usize| SentLabel::from_index(k).expect("three classes");
    let model_preds: Vec<Prediction> = data
        .iter()
        .zip(output.predictions())
        .map(|(inst, k)| Prediction { id: inst.id.clone(), gold: inst.label, pred: to_label(k) })
        .collect();
    stage.write("predictions.tsv", codemix_core::eval::format_predictions(&model_preds))?;
    rows.push(score(display_name(&ck.spec), &model_preds, averaging)?);

    let train_e: Vec<EncodedInstance> = train_n.iter().map(|i| EncodedInstance::encode(i, &vocab, &chars)).collect();
    let majority = to_label(majority_class(&train_e).context("empty training set")?);
    let base: Vec<Prediction> =
        data.iter().map(|i| Prediction { id: i.id.clone(), gold: i.label, pred: majority }).collect();
    rows.push(score("Majority".to_string(), &base, averaging)?);
    let out = write_report(&mut stage, rows)?;
    stage.finish()?;
    Ok(out)
}

fn display_name(spec: &ModelSpec) -> String {
    let mut name = spec.encoder.name().to_string();
    if spec.char_bilstm.is_some() {
        name.push_str("+CHAR");
    }
    if let Some(m) = spec.mtl {
        name.push_str(&format!("+MTL({})", m.lambda));
    }
    name
}

/// Checks tiny versions of `encoders` (all five when empty), keeping the
/// configured char BiLSTM and MTL structure.
pub fn gradcheck(resolved: &Resolved, encoders: &[EncoderKind], tolerance: f64, seed: u64) -> Result<Value> {
    let cfg = &resolved.config;
    let mut stage = Stage::open(resolved, "gradcheck")?;
    let kinds = if encoders.is_empty() { EncoderKind::ALL.to_vec() } else { encoders.to_vec() };
    let mut reports = Vec::new();
    for kind in kinds {
        let mut spec = ModelSpec::tiny(kind);
        if cfg.model.char_bilstm.is_some() {
            spec = spec.with_chars(3, 2);
        }
        if let Some(m) = cfg.model.mtl {
            spec = spec.with_mtl(m.lambda);
        }
        let report = grad_check(&spec, tolerance, seed)?;
        log::info!("{}: max rel err {:.3e}", kind, report.max_rel_error);
        reports.push(report);
    }
    stage.write_json("report.json", &reports)?;
    stage.finish()?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures().into_iter().map(move |t| format!("{}:{}", r.encoder, t.name)))
        .collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {} (max rel err {worst:.3e}, tolerance {tolerance:e})", failed.join(", "));
    }
    Ok(json!({ "encoders": reports.len(), "tolerance": tolerance, "max_rel_error": worst, "passed": true }))
}

/// Collects whatever earlier commands produced into one Markdown document.
pub fn report(resolved: &Resolved) -> Result<Value> {
    let mut stage = Stage::open(resolved, "report")?;
    let mut doc = String::from("# Experiment report\n");
    let mut sections = Vec::new();
    let parts: [(&str, &str, &str); 6] = [
        ("ingest", "stats.json", "Corpus statistics"),
        ("preprocess", "summary.json", "Normalization"),
        ("align", "alignment.json", "Embedding alignment"),
        ("augment", "summary.json", "Augmentation"),
        ("train", "summary.json", "Training"),
        ("gradcheck", "report.json", "Gradient check"),
    ];
    for (command, file, title) in parts {
        let Ok(path) = stage.upstream(command, file) else {
            continue;
        };
        let text = std::fs::read_to_string(stage.read_input(&path))?;
        let mut value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(obj) = value.as_object_mut() {
            // the alignment matrix is too large to be useful here
            obj.remove("map");
        }
        doc.push_str(&format!("\n## {title}\n\n```json\n{}\n```\n", serde_json::to_string_pretty(&value)?));
        sections.push(command);
    }
    if let Ok(path) = stage.upstream("evaluate", "report.txt") {
        let table = std::fs::read_to_string(stage.read_input(&path))?;
        doc.push_str(&format!("\n## Evaluation\n\n{table}"));
        sections.push("evaluate");
    }
    if sections.is_empty() {
        bail!("nothing to report under {}", resolved.config.output_dir.display());
    }
    stage.write("report.md", &doc)?;
    stage.finish()?;
    Ok(json!({ "sections": sections }))
}
