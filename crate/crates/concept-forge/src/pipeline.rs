//! Stage composition: in-memory end-to-end runs plus the file-based commands
//! behind each CLI subcommand.
//!
//! Commands read and write fixed artifact names inside the `--out` directory
//! so stages chain without extra bookkeeping. Every command validates its
//! inputs before producing anything; in dry-run mode it stops after
//! validation and writes nothing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::ann::{build_index, load_index, save_index, search, IvfIndex, SearchParams};
use crate::augment::{
    augment_to_threshold, build_pool, examples_from_corpus, exclude_leakage,
    retrieve_candidates, AugmentationConfig, CandidatePool,
};
use crate::config::PipelineConfig;
use crate::corpus::{concept_occurrence_counts, parse_pubtator, Annotation, Document};
use crate::encoder::{
    load_checkpoint, load_concept_table, precompute_concept_embeddings, save_checkpoint,
    save_concept_table, EmbeddingVector, EncoderParams, Vocabulary,
};
use crate::eval::{
    document_embedding, predict_top_k, run_sweep, split_report, write_sweep_csv, Averaging,
    FilterSet, GridValue, MetricsReport, PredictionSet,
};
use crate::kb::{map_umls_to_target, ConceptId, Kb, KbError, Vocab};
use crate::pseudo::{
    filter_false_abbreviations, filter_overlaps, parse_mmi, resolve_mentions,
    select_top_candidate,
};
use crate::seeds::stream_rng;
use crate::train::{
    read_examples_jsonl, train_with_params, write_examples_jsonl, write_log_csv, LogRow,
    TrainConfig, TrainingExample,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Kb(#[from] crate::kb::KbError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Pseudo(#[from] crate::pseudo::PseudoError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Ann(#[from] crate::ann::AnnError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl PipelineError {
    /// Process exit code: 1 for validation problems (bad flags, missing or
    /// malformed configuration), 2 for failures while running a stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

// Artifact names inside the output directory.
pub const ART_DOCS: &str = "docs.jsonl";
pub const ART_MANUAL: &str = "manual.jsonl";
pub const ART_PSEUDO: &str = "pseudo.jsonl";
pub const ART_FILTERED: &str = "pseudo_filtered.jsonl";
pub const ART_EXAMPLES: &str = "train_examples.jsonl";
pub const ART_MODEL: &str = "model.bin";
pub const ART_CONCEPTS: &str = "concepts.bin";
pub const ART_INDEX: &str = "index.bin";
pub const ART_TRAIN_LOG: &str = "train_log.csv";
pub const ART_REPORT_CSV: &str = "report.csv";
pub const ART_REPORT_JSON: &str = "report.json";
pub const ART_SWEEP: &str = "sweep.csv";

fn require<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, PipelineError> {
    value
        .as_deref()
        .ok_or_else(|| PipelineError::Validation(format!("missing required flag --{flag}")))
}

fn input_path(path: impl AsRef<Path>) -> Result<PathBuf, PipelineError> {
    let path = path.as_ref();
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(PipelineError::Validation(format!(
            "input path does not exist: {}",
            path.display()
        )))
    }
}

fn load_kb(path: impl AsRef<Path>) -> Result<Kb, PipelineError> {
    Ok(Kb::load_path(&input_path(path)?)?)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(input_path(path)?)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| PipelineError::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

/// Runs the pseudo-annotator output through candidate selection and concept
/// mapping: per span, the top-scored candidate wins; source-vocabulary ids
/// are mapped into the target dictionary, dropping (with a logged count)
/// spans whose concept has no target mapping.
pub fn pseudo_annotate(
    mmi: &str,
    docs: &[Document],
    kb: &Kb,
) -> Result<Vec<Annotation>, PipelineError> {
    let mut sets = parse_mmi(mmi.as_bytes())?;
    resolve_mentions(&mut sets, docs)?;
    let by_id: HashMap<&str, &Document> =
        docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut out = Vec::new();
    let mut unmapped = 0usize;
    for set in &sets {
        let mut ann = select_top_candidate(set);
        if ann.concept.vocabulary == Vocab::Umls {
            let doc = by_id[set.doc_id.as_str()];
            match map_umls_to_target(&ann.concept, &doc.text(), kb) {
                Ok(target) => ann.concept = target,
                Err(KbError::UnmappedConcept(_)) => {
                    unmapped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        }
        out.push(ann);
    }
    if unmapped > 0 {
        log::warn!("dropped {unmapped} spans without a target-dictionary mapping");
    }
    Ok(out)
}

/// Applies the enabled annotation filters document by document. The
/// diversity flag acts later, at augmentation time.
pub fn apply_filters(
    docs: &[Document],
    anns: &[Annotation],
    kb: &Kb,
    filters: FilterSet,
) -> Result<Vec<Annotation>, PipelineError> {
    let by_id: HashMap<&str, &Document> =
        docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut by_doc: BTreeMap<&str, Vec<Annotation>> = BTreeMap::new();
    for ann in anns {
        if !by_id.contains_key(ann.doc_id.as_str()) {
            return Err(PipelineError::Validation(format!(
                "annotation references unknown document {}",
                ann.doc_id
            )));
        }
        by_doc.entry(ann.doc_id.as_str()).or_default().push(ann.clone());
    }
    let mut out = Vec::new();
    for (doc_id, doc_anns) in by_doc {
        let doc = by_id[doc_id];
        let mut kept = doc_anns;
        if filters.abbrev {
            kept = filter_false_abbreviations(doc, &kept, kb);
        }
        if filters.overlap {
            kept = filter_overlaps(&kept);
        }
        out.extend(kept);
    }
    Ok(out)
}

/// Builds the training corpus: manual examples from the target training set
/// plus pseudo examples pulled from the library for every dictionary concept
/// below the occurrence threshold.
#[allow(clippy::too_many_arguments)]
pub fn build_augmented_corpus(
    kb: &Kb,
    train_docs: &[Document],
    train_anns: &[Annotation],
    library_docs: &[Document],
    pseudo_anns: &[Annotation],
    exclude_ids: &HashSet<String>,
    aug: &AugmentationConfig,
    max_tokens: usize,
    use_diversity: bool,
) -> Vec<TrainingExample> {
    let manual = examples_from_corpus(train_docs, train_anns, max_tokens);
    let counts = concept_occurrence_counts(train_anns);
    let mut pools: BTreeMap<ConceptId, CandidatePool> = BTreeMap::new();
    for concept in kb.iter() {
        let have = counts.get(&concept.id).copied().unwrap_or(0);
        if have >= aug.k {
            continue;
        }
        let candidates = retrieve_candidates(concept, library_docs, aug.top_n_candidates);
        let candidates = exclude_leakage(candidates, exclude_ids);
        let pool = build_pool(&concept.id, &candidates, pseudo_anns, max_tokens);
        pools.insert(concept.id.clone(), pool);
    }
    augment_to_threshold(&manual, &counts, &mut pools, aug, use_diversity)
}

/// A trained encoder with its frozen concept table and training log.
pub struct TrainedModel {
    pub params: EncoderParams,
    pub concepts: BTreeMap<ConceptId, EmbeddingVector>,
    pub log: Vec<LogRow>,
}

/// Initializes the encoder over the corpus+dictionary vocabulary, freezes
/// the concept table, and trains.
pub fn train_model(
    kb: &Kb,
    corpus: &[TrainingExample],
    dim: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel, PipelineError> {
    let mut tokens: BTreeSet<String> = corpus
        .iter()
        .flat_map(|e| e.segment.tokens.iter().cloned())
        .collect();
    for ct in kb.concept_texts() {
        tokens.extend(ct.tokens());
    }
    let vocab = Vocabulary::build(tokens.iter().map(String::as_str));
    let mut rng = stream_rng(cfg.seed, "encoder-init");
    let params = EncoderParams::init(vocab, dim, &mut rng);
    let concepts = precompute_concept_embeddings(&params, kb);
    let (params, log) = train_with_params(params, corpus, &concepts, cfg)?;
    Ok(TrainedModel { params, concepts, log })
}

fn effective_nprobe(cfg: &PipelineConfig, index: &IvfIndex) -> usize {
    if cfg.nprobe == 0 {
        index.n_centroids()
    } else {
        cfg.nprobe
    }
}

/// All inputs of one in-memory pipeline run.
pub struct EndToEndInputs<'a> {
    pub kb_target: &'a Kb,
    /// Dictionary used for mapping annotator output; may equal `kb_target`.
    pub kb_bridge: &'a Kb,
    pub train_docs: &'a [Document],
    pub train_anns: &'a [Annotation],
    pub eval_docs: &'a [Document],
    pub eval_anns: &'a [Annotation],
    pub library_docs: &'a [Document],
    pub mmi: &'a str,
    /// Doc ids of other target-dataset splits, excluded from augmentation.
    pub extra_exclude_ids: &'a [String],
}

/// Annotate → filter → augment → train → index → evaluate, entirely in
/// memory. Deterministic in the config seed.
pub fn run_end_to_end(
    x: &EndToEndInputs,
    cfg: &PipelineConfig,
) -> Result<MetricsReport, PipelineError> {
    let pseudo = pseudo_annotate(x.mmi, x.library_docs, x.kb_bridge)?;
    let filtered = apply_filters(x.library_docs, &pseudo, x.kb_target, cfg.filters)?;
    let mut exclude: HashSet<String> =
        x.train_docs.iter().map(|d| d.doc_id.clone()).collect();
    exclude.extend(x.eval_docs.iter().map(|d| d.doc_id.clone()));
    exclude.extend(x.extra_exclude_ids.iter().cloned());
    let corpus = build_augmented_corpus(
        x.kb_target,
        x.train_docs,
        x.train_anns,
        x.library_docs,
        &filtered,
        &exclude,
        &cfg.augment_config(),
        cfg.max_tokens,
        cfg.filters.diversity,
    );
    let model = train_model(x.kb_target, &corpus, cfg.dim, &cfg.train_config())?;
    let index = build_index(&model.concepts, cfg.fine_quantizer(), cfg.seed)?;
    let sp = SearchParams::new(cfg.topk, effective_nprobe(cfg, &index));
    let preds: Vec<PredictionSet> = x
        .eval_docs
        .iter()
        .map(|d| predict_top_k(&model.params, &index, d, cfg.max_tokens, sp))
        .collect();
    Ok(split_report(
        &preds,
        x.eval_anns,
        x.train_anns,
        x.kb_target,
        cfg.topk,
        Averaging::Micro,
    )?)
}

/// Parses a sweep axis and grid specification into grid points.
pub fn parse_grid(axis: &str, grid: Option<&str>) -> Result<Vec<GridValue>, PipelineError> {
    let bad = |msg: String| PipelineError::Validation(msg);
    match axis {
        "k" => {
            let spec = grid.ok_or_else(|| bad("--grid is required for axis k".into()))?;
            spec.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map(GridValue::Threshold)
                        .map_err(|_| bad(format!("bad k grid value: {v}")))
                })
                .collect()
        }
        "wa" => {
            let spec = grid.ok_or_else(|| bad("--grid is required for axis wa".into()))?;
            spec.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map(GridValue::PseudoWeight)
                        .map_err(|_| bad(format!("bad wa grid value: {v}")))
                })
                .collect()
        }
        "filters" => Ok(FilterSet::ablation_ladder()
            .into_iter()
            .map(GridValue::Filters)
            .collect()),
        other => Err(bad(format!("unknown sweep axis: {other} (expected k, wa, or filters)"))),
    }
}

/// Runs the in-memory pipeline once per grid point, varying only the swept
/// knob, and returns the labeled reports.
pub fn sweep_end_to_end(
    x: &EndToEndInputs,
    base: &PipelineConfig,
    grid: &[GridValue],
) -> Result<Vec<(String, MetricsReport)>, PipelineError> {
    run_sweep(grid, |point| {
        let mut cfg = base.clone();
        match point {
            GridValue::Threshold(k) => cfg.k = *k,
            GridValue::PseudoWeight(w) => cfg.w_a = *w,
            GridValue::Filters(f) => cfg.filters = *f,
        }
        run_end_to_end(x, &cfg)
    })
}

// ---------------------------------------------------------------------------
// File-based commands.

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    Ok(PathBuf::from(require(&cfg.out, "out")?))
}

/// Parses a raw annotated corpus and materializes documents and manual
/// annotations as JSONL artifacts.
pub fn cmd_ingest(cfg: &PipelineConfig, dry_run: bool) -> Result<String, PipelineError> {
    let corpus = input_path(require(&cfg.corpus, "corpus")?)?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let (docs, anns) = parse_pubtator(BufReader::new(File::open(&corpus)?))?;
    let unknown = anns.iter().filter(|a| !kb.contains(&a.concept)).count();
    if unknown > 0 {
        log::warn!("{unknown} annotations reference concepts missing from the dictionary");
    }
    if dry_run {
        return Ok(format!(
            "[dry-run] ingest: {} documents, {} annotations validated",
            docs.len(),
            anns.len()
        ));
    }
    fs::create_dir_all(&out)?;
    write_jsonl(&docs, &out.join(ART_DOCS))?;
    write_jsonl(&anns, &out.join(ART_MANUAL))?;
    Ok(format!(
        "ingest: {} documents, {} annotations -> {}",
        docs.len(),
        anns.len(),
        out.display()
    ))
}

/// Converts raw annotator output into target-dictionary pseudo annotations.
pub fn cmd_annotate(
    cfg: &PipelineConfig,
    mmi_path: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let mmi = fs::read_to_string(input_path(mmi_path)?)?;
    let anns = pseudo_annotate(&mmi, &docs, &kb)?;
    if dry_run {
        return Ok(format!(
            "[dry-run] annotate: {} pseudo annotations validated",
            anns.len()
        ));
    }
    fs::create_dir_all(&out)?;
    write_jsonl(&anns, &out.join(ART_PSEUDO))?;
    Ok(format!(
        "annotate: {} pseudo annotations over {} documents -> {}",
        anns.len(),
        docs.len(),
        out.display()
    ))
}

/// Cleans pseudo annotations with the enabled filters.
pub fn cmd_filter(
    cfg: &PipelineConfig,
    annotations: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let anns: Vec<Annotation> = read_jsonl(annotations)?;
    let kept = apply_filters(&docs, &anns, &kb, cfg.filters)?;
    let summary = format!(
        "filter [{}]: kept {} of {} annotations",
        cfg.filters,
        kept.len(),
        anns.len()
    );
    if dry_run {
        return Ok(format!("[dry-run] {summary}"));
    }
    fs::create_dir_all(&out)?;
    write_jsonl(&kept, &out.join(ART_FILTERED))?;
    Ok(format!("{summary} -> {}", out.display()))
}

/// Builds the augmented training corpus from manual annotations plus
/// filtered pseudo annotations over the library.
#[allow(clippy::too_many_arguments)]
pub fn cmd_augment(
    cfg: &PipelineConfig,
    manual_path: &Path,
    pseudo_path: &Path,
    excludes: &[PathBuf],
    dry_run: bool,
) -> Result<String, PipelineError> {
    let train_docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let library_docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.library, "library")?))?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let manual_anns: Vec<Annotation> = read_jsonl(manual_path)?;
    let pseudo_anns: Vec<Annotation> = read_jsonl(pseudo_path)?;
    let mut exclude_ids: HashSet<String> =
        train_docs.iter().map(|d| d.doc_id.clone()).collect();
    for path in excludes {
        let docs: Vec<Document> = read_jsonl(path)?;
        exclude_ids.extend(docs.into_iter().map(|d| d.doc_id));
    }
    let corpus = build_augmented_corpus(
        &kb,
        &train_docs,
        &manual_anns,
        &library_docs,
        &pseudo_anns,
        &exclude_ids,
        &cfg.augment_config(),
        cfg.max_tokens,
        cfg.filters.diversity,
    );
    let manual = corpus
        .iter()
        .filter(|e| e.source == crate::corpus::AnnotationSource::Manual)
        .count();
    let pseudo = corpus.len() - manual;
    let summary = format!(
        "augment (k={}): {} manual + {} pseudo examples",
        cfg.k, manual, pseudo
    );
    if dry_run {
        return Ok(format!("[dry-run] {summary}"));
    }
    fs::create_dir_all(&out)?;
    let mut w = BufWriter::new(File::create(out.join(ART_EXAMPLES))?);
    write_examples_jsonl(&corpus, &mut w)?;
    w.flush()?;
    Ok(format!("{summary} -> {}", out.display()))
}

/// Trains the encoder on a training-example corpus and writes the model
/// checkpoint, the frozen concept table, and the training log.
pub fn cmd_train(
    cfg: &PipelineConfig,
    examples_path: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let file = File::open(input_path(examples_path)?)?;
    let corpus = read_examples_jsonl(BufReader::new(file))?;
    for ex in &corpus {
        for c in &ex.positives {
            if !kb.contains(c) {
                return Err(PipelineError::Validation(format!(
                    "training example {}:{} references unknown concept {c}",
                    ex.segment.doc_id, ex.segment.index
                )));
            }
        }
    }
    if dry_run {
        return Ok(format!(
            "[dry-run] train: {} examples validated against {} concepts",
            corpus.len(),
            kb.len()
        ));
    }
    let model = train_model(&kb, &corpus, cfg.dim, &cfg.train_config())?;
    fs::create_dir_all(&out)?;
    save_checkpoint(&model.params, BufWriter::new(File::create(out.join(ART_MODEL))?))?;
    save_concept_table(
        &model.concepts,
        BufWriter::new(File::create(out.join(ART_CONCEPTS))?),
    )?;
    write_log_csv(&model.log, BufWriter::new(File::create(out.join(ART_TRAIN_LOG))?))?;
    let last_loss = model.log.last().map_or(0.0, |r| r.loss);
    Ok(format!(
        "train: {} examples, {} epochs, final batch loss {:.6} -> {}",
        corpus.len(),
        cfg.epochs,
        last_loss,
        out.display()
    ))
}

/// Builds the concept index from a frozen concept table.
pub fn cmd_index(
    cfg: &PipelineConfig,
    vectors_path: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let out = out_dir(cfg)?;
    let table = load_concept_table(BufReader::new(File::open(input_path(vectors_path)?)?))?;
    let index = build_index(&table, cfg.fine_quantizer(), cfg.seed)?;
    let summary = format!(
        "index ({}): {} concepts, {} centroids",
        cfg.quantizer,
        index.len(),
        index.n_centroids()
    );
    if dry_run {
        return Ok(format!("[dry-run] {summary}"));
    }
    fs::create_dir_all(&out)?;
    save_index(&index, BufWriter::new(File::create(out.join(ART_INDEX))?))?;
    Ok(format!("{summary} -> {}", out.display()))
}

/// Ranks concepts for every document and prints the results.
pub fn cmd_extract(
    cfg: &PipelineConfig,
    model_path: &Path,
    index_path: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let params = load_checkpoint(BufReader::new(File::open(input_path(model_path)?)?))?;
    let index = load_index(BufReader::new(File::open(input_path(index_path)?)?))?;
    if params.dim() != index.dim() {
        return Err(PipelineError::Validation(format!(
            "model dimension {} does not match index dimension {}",
            params.dim(),
            index.dim()
        )));
    }
    if dry_run {
        return Ok(format!(
            "[dry-run] extract: {} documents against {} concepts",
            docs.len(),
            index.len()
        ));
    }
    let sp = SearchParams::new(cfg.topk, effective_nprobe(cfg, &index));
    let mut lines = String::new();
    for doc in &docs {
        let emb = document_embedding(&params, doc, cfg.max_tokens);
        for (rank, (id, dist)) in search(&index, &emb, sp).into_iter().enumerate() {
            lines.push_str(&format!("{}\t{}\t{}\t{:.6}\n", doc.doc_id, rank + 1, id, dist));
        }
    }
    lines.push_str(&format!("extract: {} documents, top-{}", docs.len(), cfg.topk));
    Ok(lines)
}

/// Scores predictions against gold annotations and writes the report.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    model_path: &Path,
    index_path: &Path,
    gold_path: &Path,
    train_annotations_path: &Path,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let gold: Vec<Annotation> = read_jsonl(gold_path)?;
    let train_anns: Vec<Annotation> = read_jsonl(train_annotations_path)?;
    let params = load_checkpoint(BufReader::new(File::open(input_path(model_path)?)?))?;
    let index = load_index(BufReader::new(File::open(input_path(index_path)?)?))?;
    let sp = SearchParams::new(cfg.topk, effective_nprobe(cfg, &index));
    let preds: Vec<PredictionSet> = docs
        .iter()
        .map(|d| predict_top_k(&params, &index, d, cfg.max_tokens, sp))
        .collect();
    let report = split_report(&preds, &gold, &train_anns, &kb, cfg.topk, Averaging::Micro)?;
    let summary = format!(
        "evaluate: f1 {:.4}, rare f1 {}",
        report.f1,
        report
            .rare_f1
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "NA".into())
    );
    if dry_run {
        return Ok(format!("[dry-run] {summary}"));
    }
    fs::create_dir_all(&out)?;
    report.write_csv(BufWriter::new(File::create(out.join(ART_REPORT_CSV))?))?;
    fs::write(out.join(ART_REPORT_JSON), report.to_json())?;
    Ok(format!("{summary} -> {}", out.display()))
}

/// Inputs for the sweep command, one path per artifact.
pub struct SweepPaths<'a> {
    pub manual: &'a Path,
    pub pseudo: &'a Path,
    pub eval_docs: &'a Path,
    pub eval_annotations: &'a Path,
}

/// Re-runs filter → augment → train → index → evaluate per grid point and
/// writes one `grid_value,split,metric,value` table.
pub fn cmd_sweep(
    cfg: &PipelineConfig,
    axis: &str,
    grid_spec: Option<&str>,
    paths: &SweepPaths,
    dry_run: bool,
) -> Result<String, PipelineError> {
    let train_docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.corpus, "corpus")?))?;
    let library_docs: Vec<Document> = read_jsonl(Path::new(require(&cfg.library, "library")?))?;
    let kb = load_kb(require(&cfg.kb, "kb")?)?;
    let out = out_dir(cfg)?;
    let manual_anns: Vec<Annotation> = read_jsonl(paths.manual)?;
    let pseudo_anns: Vec<Annotation> = read_jsonl(paths.pseudo)?;
    let eval_docs: Vec<Document> = read_jsonl(paths.eval_docs)?;
    let eval_anns: Vec<Annotation> = read_jsonl(paths.eval_annotations)?;
    let grid = parse_grid(axis, grid_spec)?;
    if dry_run {
        return Ok(format!(
            "[dry-run] sweep over {axis}: {} grid points validated",
            grid.len()
        ));
    }

    let mut exclude: HashSet<String> =
        train_docs.iter().map(|d| d.doc_id.clone()).collect();
    exclude.extend(eval_docs.iter().map(|d| d.doc_id.clone()));

    let rows = run_sweep(&grid, |point| -> Result<MetricsReport, PipelineError> {
        let mut run_cfg = cfg.clone();
        match point {
            GridValue::Threshold(k) => run_cfg.k = *k,
            GridValue::PseudoWeight(w) => run_cfg.w_a = *w,
            GridValue::Filters(f) => run_cfg.filters = *f,
        }
        let filtered = apply_filters(&library_docs, &pseudo_anns, &kb, run_cfg.filters)?;
        let corpus = build_augmented_corpus(
            &kb,
            &train_docs,
            &manual_anns,
            &library_docs,
            &filtered,
            &exclude,
            &run_cfg.augment_config(),
            run_cfg.max_tokens,
            run_cfg.filters.diversity,
        );
        let model = train_model(&kb, &corpus, run_cfg.dim, &run_cfg.train_config())?;
        let index = build_index(&model.concepts, run_cfg.fine_quantizer(), run_cfg.seed)?;
        let sp = SearchParams::new(run_cfg.topk, effective_nprobe(&run_cfg, &index));
        let preds: Vec<PredictionSet> = eval_docs
            .iter()
            .map(|d| predict_top_k(&model.params, &index, d, run_cfg.max_tokens, sp))
            .collect();
        Ok(split_report(
            &preds,
            &eval_anns,
            &manual_anns,
            &kb,
            run_cfg.topk,
            Averaging::Micro,
        )?)
    })?;

    fs::create_dir_all(&out)?;
    let mut w = BufWriter::new(File::create(out.join(ART_SWEEP))?);
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(format!(
        "sweep over {axis}: {} grid points -> {}",
        rows.len(),
        out.display()
    ))
}
