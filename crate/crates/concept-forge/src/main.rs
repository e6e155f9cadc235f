use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use concept_forge::config::{Overrides, PipelineConfig, QuantizerChoice};
use concept_forge::eval::FilterSet;
use concept_forge::pipeline::{self, PipelineError, SweepPaths};

#[derive(Parser)]
#[command(
    name = "concept-forge",
    version,
    about = "Document-level concept extraction: annotate, clean, augment, train, index, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Configuration file (sectioned key=value); explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Concept dictionary (JSONL).
    #[arg(long)]
    kb: Option<String>,
    /// Input corpus for this command (raw annotated corpus or docs.jsonl).
    #[arg(long)]
    corpus: Option<String>,
    /// Library documents (docs.jsonl) used for augmentation.
    #[arg(long)]
    library: Option<String>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<String>,
    /// Occurrence threshold for augmentation.
    #[arg(long)]
    k: Option<usize>,
    /// Weight of pseudo examples in the training objective.
    #[arg(long)]
    wa: Option<f64>,
    /// Run seed; every stage derives its randomness from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of abbrev,overlap,diversity ('' disables all).
    #[arg(long)]
    filters: Option<String>,
    /// Probed centroid lists per query (0 probes all).
    #[arg(long)]
    nprobe: Option<usize>,
    /// Concepts returned per document.
    #[arg(long)]
    topk: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Validate inputs and report, writing nothing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw annotated corpus into docs.jsonl and manual.jsonl
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Convert annotator output (pipe-delimited) into pseudo annotations
    Annotate {
        /// Annotator output file.
        mmi: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Clean pseudo annotations with the enabled filters
    Filter {
        /// Pseudo annotations (JSONL).
        annotations: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the augmented training corpus
    Augment {
        /// Manual annotations of the training corpus (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        /// Filtered pseudo annotations over the library (JSONL).
        #[arg(long)]
        pseudo: PathBuf,
        /// Additional document files whose ids must not leak in (repeatable).
        #[arg(long)]
        exclude: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoder and freeze the concept table
    Train {
        /// Training examples (JSONL).
        examples: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the concept index from a frozen concept table
    Index {
        /// Concept table artifact.
        vectors: PathBuf,
        /// Fine quantizer: identity or pq.
        #[arg(long)]
        quantizer: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank the top concepts for every document
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against gold annotations
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Gold annotations for the evaluation corpus (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        /// Manual training annotations, for rare-split counts (JSONL).
        #[arg(long = "train-annotations")]
        train_annotations: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the pipeline across a parameter grid
    Sweep {
        /// Swept knob: k, wa, or filters.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values (ignored for the filters axis).
        #[arg(long)]
        grid: Option<String>,
        /// Manual annotations of the training corpus (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        /// Unfiltered pseudo annotations over the library (JSONL).
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long = "eval-docs")]
        eval_docs: PathBuf,
        #[arg(long = "eval-annotations")]
        eval_annotations: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(
    common: &Common,
    quantizer: Option<&str>,
) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let filters = match &common.filters {
        Some(spec) => Some(FilterSet::parse(spec).map_err(PipelineError::Validation)?),
        None => None,
    };
    let quantizer = match quantizer {
        Some(spec) => Some(
            spec.parse::<QuantizerChoice>()
                .map_err(PipelineError::Validation)?,
        ),
        None => None,
    };
    cfg.apply(&Overrides {
        kb: common.kb.clone(),
        corpus: common.corpus.clone(),
        library: common.library.clone(),
        out: common.out.clone(),
        k: common.k,
        w_a: common.wa,
        seed: common.seed,
        filters,
        nprobe: common.nprobe,
        topk: common.topk,
        dim: common.dim,
        epochs: common.epochs,
        quantizer,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    match cli.command {
        Command::Ingest { common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_ingest(&cfg, common.dry_run)
        }
        Command::Annotate { mmi, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_annotate(&cfg, &mmi, common.dry_run)
        }
        Command::Filter { annotations, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_filter(&cfg, &annotations, common.dry_run)
        }
        Command::Augment { annotations, pseudo, exclude, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_augment(&cfg, &annotations, &pseudo, &exclude, common.dry_run)
        }
        Command::Train { examples, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_train(&cfg, &examples, common.dry_run)
        }
        Command::Index { vectors, quantizer, common } => {
            let cfg = build_config(&common, quantizer.as_deref())?;
            pipeline::cmd_index(&cfg, &vectors, common.dry_run)
        }
        Command::Extract { model, index, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_extract(&cfg, &model, &index, common.dry_run)
        }
        Command::Evaluate { model, index, annotations, train_annotations, common } => {
            let cfg = build_config(&common, None)?;
            pipeline::cmd_evaluate(
                &cfg,
                &model,
                &index,
                &annotations,
                &train_annotations,
                common.dry_run,
            )
        }
        Command::Sweep {
            axis,
            grid,
            annotations,
            pseudo,
            eval_docs,
            eval_annotations,
            common,
        } => {
            let cfg = build_config(&common, None)?;
            let paths = SweepPaths {
                manual: &annotations,
                pseudo: &pseudo,
                eval_docs: &eval_docs,
                eval_annotations: &eval_annotations,
            };
            pipeline::cmd_sweep(&cfg, &axis, grid.as_deref(), &paths, common.dry_run)
        }
    }
}

fn main() {
    let env = env_logger::Env::new().filter_or("CONCEPT_FORGE_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
