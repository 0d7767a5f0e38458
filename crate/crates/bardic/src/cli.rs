//! Command-line front end: one binary orchestrating the whole pipeline,
//! from raw text to trained models, translations, and scores.
//!
//! Every run writes exactly one JSON manifest recording the resolved
//! configuration, seeds, SHA-256 hashes of the inputs, timings, and the
//! headline numbers, so results can be audited and reproduced. Exit codes:
//! 0 success, 1 usage error, 2 data/config error.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::baselines;
use crate::decode::{attention_tsv, greedy_decode, unk_replace, DecodeResult};
use crate::embed::{
    build_embeddings, lexicon_constraints, load_embeddings, save_embeddings, EmbedStrategy,
    EmbeddingMatrix, SgnsConfig,
};
use crate::error::{Error, Result};
use crate::lexicon::{load_lexicon, retrofit, retrofit_objective, RetrofitProblem};
use crate::metrics::{bleu, pinc};
use crate::model::{ModelConfig, SizePreset};
use crate::text::{
    corpus_stats, load_parallel, load_sentences, save_parallel, save_sentences, ParallelCorpus,
    Sentence, Split, Vocabulary,
};
use crate::train::{load_checkpoint, save_checkpoint, train_model, TrainConfig};

#[derive(Parser)]
#[command(
    name = "bardic",
    version,
    about = "Modern-to-Shakespearean style transfer pipeline"
)]
struct Cli {
    /// Worker threads for parallel decoding (or env BARDIC_THREADS; default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file for training settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize raw split files, build the vocabulary, and report statistics.
    Preprocess(PreprocessArgs),
    /// Pretrain (and optionally retrofit) word embeddings.
    Embed(EmbedArgs),
    /// Retrofit an existing embedding file toward a lexicon.
    Retrofit(RetrofitArgs),
    /// Train a model and save the best checkpoint by validation BLEU.
    Train(TrainArgs),
    /// Greedily translate a file of sentences with a trained model.
    Translate(TranslateArgs),
    /// Score translations.
    Score(ScoreArgs),
    /// Run a non-neural reference system.
    Baseline(BaselineArgs),
    /// Print corpus statistics for one split.
    Stats(StatsArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory holding <split>.modern.txt / <split>.original.txt raw files.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory for tokenized splits, vocab.json, and stats.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Preprocessed data directory (needs train split + vocab.json).
    #[arg(long)]
    data_dir: PathBuf,
    /// none | plain | plain-ext | retro | retro-ext
    #[arg(long, default_value = "plain")]
    strategy: String,
    /// Extra pretraining text, one sentence per line (plain-ext/retro-ext).
    #[arg(long)]
    external_corpus: Option<PathBuf>,
    /// Lexicon TSV (required by retro/retro-ext).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 192)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip-gram passes over the pretraining text.
    #[arg(long, default_value_t = 5)]
    sgns_epochs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RetrofitArgs {
    /// Embedding file to retrofit.
    #[arg(long)]
    embeddings: PathBuf,
    /// vocab.json the embeddings were built against.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Preprocessed data directory (train/valid splits + vocab.json).
    #[arg(long)]
    data_dir: PathBuf,
    /// Model size preset: S | ME | L.
    #[arg(long, default_value = "me")]
    size: String,
    /// Override the preset's embedding width.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Override the preset's hidden width.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Share one embedding table between encoder and decoder.
    #[arg(long)]
    share: bool,
    /// Freeze the embedding table (requires --embeddings).
    #[arg(long)]
    fixed: bool,
    /// Enable the copy mechanism (the default).
    #[arg(long, overrides_with = "no_copy")]
    copy: bool,
    /// Disable the copy mechanism (plain seq2seq).
    #[arg(long)]
    no_copy: bool,
    /// Add the sentinel loss term to the objective.
    #[arg(long)]
    sentinel_loss: bool,
    /// Pretrained embedding file from `embed`/`retrofit`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Parameter-initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Global-norm gradient clip (default 5.0).
    #[arg(long, conflicts_with = "no_clip")]
    clip_norm: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// vocab.json the model was trained against.
    #[arg(long)]
    vocab: PathBuf,
    /// Source sentences, one per line.
    #[arg(long)]
    src: PathBuf,
    /// Output translations, one per line.
    #[arg(long)]
    out: PathBuf,
    /// Replace UNK outputs with the best-aligned source word.
    #[arg(long)]
    unk_replace: bool,
    /// Directory for per-sentence attention TSVs and an UNK sidecar.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(subcommand)]
    metric: ScoreMetric,
}

#[derive(Subcommand)]
enum ScoreMetric {
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Mean PINC of candidate sentences against their sources.
    Pinc {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        cand: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BaselineArgs {
    #[command(subcommand)]
    which: BaselineKind,
}

#[derive(Subcommand)]
enum BaselineKind {
    /// Copy the source through unchanged.
    AsItIs {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Context-free dictionary replacement.
    Dictionary {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Training target side; its frequencies break inversion ties.
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StatsArgs {
    /// Directory holding <split>.modern.txt / <split>.original.txt.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Training settings a `--config` JSON file may provide; any CLI flag wins.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    clip_norm: Option<f64>,
    shuffle_seed: Option<u64>,
}

pub fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("BARDIC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    // Build the pool once; later calls in one process keep the first size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();

    match dispatch(&cli, argv) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("bardic: {err}");
            2
        }
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Preprocess(args) => cmd_preprocess(args, argv, started),
        Command::Embed(args) => cmd_embed(args, argv, started),
        Command::Retrofit(args) => cmd_retrofit(args, argv, started),
        Command::Train(args) => cmd_train(args, cli.config.as_deref(), argv, started),
        Command::Translate(args) => cmd_translate(args, argv, started),
        Command::Score(args) => cmd_score(args, argv, started),
        Command::Baseline(args) => cmd_baseline(args, argv, started),
        Command::Stats(args) => cmd_stats(args, argv, started),
    }
}

// --- Manifest plumbing ------------------------------------------------------

fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths {
        out.insert(path.display().to_string(), file_sha256(path)?);
    }
    Ok(out)
}

fn write_manifest(
    path: &Path,
    command: &str,
    argv: &[String],
    config: Value,
    seeds: Value,
    inputs: BTreeMap<String, String>,
    metrics: Value,
    started: Instant,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "argv": argv,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "metrics": metrics,
        "timings": { "total_secs": started.elapsed().as_secs_f64() },
    });
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("cannot encode manifest: {e}")))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `<file>` → `<file>.manifest.json`, next to the output it describes.
fn manifest_beside(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{name}.manifest.json"))
}

fn split_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let tag = match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    };
    (
        dir.join(format!("{tag}.modern.txt")),
        dir.join(format!("{tag}.original.txt")),
    )
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split {other:?} (expected train|valid|test)"
        ))),
    }
}

// --- Subcommands ------------------------------------------------------------

fn cmd_preprocess(args: &PreprocessArgs, argv: &[String], started: Instant) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut inputs: Vec<PathBuf> = Vec::new();
    let mut split_metrics = serde_json::Map::new();
    let mut train_corpus: Option<ParallelCorpus> = None;

    for split in [Split::Train, Split::Valid, Split::Test] {
        let (src, tgt) = split_paths(&args.data_dir, split);
        let load = load_parallel(&src, &tgt, split)?;
        let (out_src, out_tgt) = split_paths(&args.out_dir, split);
        save_parallel(&load.corpus, &out_src, &out_tgt)?;
        let tag = match split {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        println!(
            "{tag}: {} pairs ({} dropped)",
            load.corpus.len(),
            load.dropped_pairs
        );
        split_metrics.insert(
            tag.to_string(),
            json!({ "pairs": load.corpus.len(), "dropped": load.dropped_pairs }),
        );
        inputs.push(src);
        inputs.push(tgt);
        if split == Split::Train {
            train_corpus = Some(load.corpus);
        }
    }

    let train = train_corpus.expect("train split loaded above");
    let vocab = Vocabulary::build(&train)?;
    vocab.save(&args.out_dir.join("vocab.json"))?;
    println!("vocabulary: {} entries", vocab.len());

    let stats = corpus_stats(&train)?;
    std::fs::write(args.out_dir.join("stats.txt"), stats.to_kv_block())
        .map_err(|e| Error::io(args.out_dir.join("stats.txt"), e))?;
    let stats_json = serde_json::to_string_pretty(&stats)
        .map_err(|e| Error::Data(format!("cannot encode stats: {e}")))?;
    std::fs::write(args.out_dir.join("stats.json"), stats_json)
        .map_err(|e| Error::io(args.out_dir.join("stats.json"), e))?;

    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| args.out_dir.join("manifest.json")),
        "preprocess",
        argv,
        json!({ "data_dir": args.data_dir, "out_dir": args.out_dir }),
        json!({}),
        hash_inputs(&input_refs)?,
        json!({ "splits": split_metrics, "vocab_size": vocab.len() }),
        started,
    )
}

fn cmd_embed(args: &EmbedArgs, argv: &[String], started: Instant) -> Result<()> {
    let kind = args.strategy.parse()?;
    let mut sgns = SgnsConfig::new(args.dim, args.seed);
    sgns.epochs = args.sgns_epochs;
    let mut strategy = EmbedStrategy::new(kind, sgns);
    strategy.external_corpus = args.external_corpus.clone();

    let vocab_path = args.data_dir.join("vocab.json");
    let vocab = Vocabulary::load(&vocab_path)?;
    let (src, tgt) = split_paths(&args.data_dir, Split::Train);
    let train = load_parallel(&src, &tgt, Split::Train)?.corpus;

    let lexicon = match &args.lexicon {
        Some(path) => load_lexicon(path)?.lexicon,
        None => {
            if kind.retrofits() {
                return Err(Error::Config(format!(
                    "strategy {} requires --lexicon",
                    args.strategy
                )));
            }
            crate::lexicon::Lexicon { pairs: Vec::new() }
        }
    };

    let matrix = build_embeddings(&strategy, &train, &lexicon, &vocab)?;
    save_embeddings(&matrix, &vocab, &args.out)?;
    println!(
        "embeddings: {} x {} -> {}",
        matrix.rows.rows(),
        matrix.dim,
        args.out.display()
    );

    let mut inputs: Vec<&Path> = vec![src.as_path(), tgt.as_path(), vocab_path.as_path()];
    if let Some(p) = &args.external_corpus {
        inputs.push(p);
    }
    if let Some(p) = &args.lexicon {
        inputs.push(p);
    }
    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_beside(&args.out)),
        "embed",
        argv,
        serde_json::to_value(&strategy).unwrap_or(Value::Null),
        json!({ "seed": args.seed }),
        hash_inputs(&inputs)?,
        json!({ "rows": matrix.rows.rows(), "dim": matrix.dim }),
        started,
    )
}

fn cmd_retrofit(args: &RetrofitArgs, argv: &[String], started: Instant) -> Result<()> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let base = load_embeddings(&args.embeddings, &vocab)?;
    let lexicon = load_lexicon(&args.lexicon)?.lexicon;
    let constraints = lexicon_constraints(&lexicon, &vocab);
    let pair_count = constraints.len();

    let mut problem = RetrofitProblem::with_defaults(base.rows.clone(), constraints);
    problem.delta = args.delta;
    problem.iterations = args.iterations;
    let before = retrofit_objective(&problem, &problem.p)?;
    let rows = retrofit(&problem)?;
    let after = retrofit_objective(&problem, &rows)?;

    let matrix = EmbeddingMatrix {
        rows,
        dim: base.dim,
        vocab_fingerprint: base.vocab_fingerprint.clone(),
    };
    save_embeddings(&matrix, &vocab, &args.out)?;
    println!("retrofit: objective {before:.6} -> {after:.6} ({pair_count} constraints)");

    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_beside(&args.out)),
        "retrofit",
        argv,
        json!({ "delta": args.delta, "iterations": args.iterations }),
        json!({}),
        hash_inputs(&[&args.embeddings, &args.vocab, &args.lexicon])?,
        json!({ "objective_before": before, "objective_after": after, "constraints": pair_count }),
        started,
    )
}

fn cmd_train(
    args: &TrainArgs,
    config_file: Option<&Path>,
    argv: &[String],
    started: Instant,
) -> Result<()> {
    let file: FileConfig = match config_file {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&body)
                .map_err(|e| Error::Config(format!("bad config file {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let vocab_path = args.data_dir.join("vocab.json");
    let vocab = Vocabulary::load(&vocab_path)?;
    let (train_src, train_tgt) = split_paths(&args.data_dir, Split::Train);
    let (valid_src, valid_tgt) = split_paths(&args.data_dir, Split::Valid);
    let train = load_parallel(&train_src, &train_tgt, Split::Train)?.corpus;
    let valid = load_parallel(&valid_src, &valid_tgt, Split::Valid)?.corpus;

    let preset: SizePreset = args.size.parse()?;
    let mut model_config = ModelConfig::new(preset, vocab.len());
    if let Some(d) = args.embed_dim {
        model_config.embed_dim = d;
    }
    if let Some(d) = args.hidden_dim {
        model_config.hidden_dim = d;
    }
    model_config.share_embeddings = args.share;
    model_config.embeddings_fixed = args.fixed;
    model_config.copy_enabled = !args.no_copy;
    model_config.sentinel_loss_enabled = args.sentinel_loss;

    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        batch_size: args
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        lr: args.lr.or(file.lr).unwrap_or(defaults.lr),
        shuffle_seed: args
            .shuffle_seed
            .or(file.shuffle_seed)
            .unwrap_or(defaults.shuffle_seed),
        clip_norm: if args.no_clip {
            None
        } else {
            args.clip_norm.or(file.clip_norm).or(defaults.clip_norm)
        },
        ..defaults
    };

    let embeddings = match &args.embeddings {
        Some(path) => Some(load_embeddings(path, &vocab)?),
        None => None,
    };
    if args.fixed && embeddings.is_none() {
        return Err(Error::Config(
            "--fixed requires --embeddings: freezing a random table trains nothing useful".into(),
        ));
    }
    if embeddings
        .as_ref()
        .is_some_and(|e| e.dim != model_config.embed_dim)
    {
        return Err(Error::Config(format!(
            "embedding file dimension {} does not match model embed_dim {}",
            embeddings.unwrap().dim,
            model_config.embed_dim
        )));
    }
    let strategy = match &args.embeddings {
        Some(path) => format!(
            "pretrained:{}{}",
            path.display(),
            if args.fixed { ",fixed" } else { "" }
        ),
        None => "random-init".to_string(),
    };

    let outcome = train_model(
        &train,
        &valid,
        &vocab,
        &model_config,
        &train_config,
        embeddings.as_ref(),
        &strategy,
        args.seed,
    )?;
    for record in &outcome.history {
        println!(
            "epoch {:>3}: loss {:.4}  valid BLEU {:.2}",
            record.epoch, record.train_loss, record.valid_bleu
        );
    }
    println!(
        "best epoch {} (valid BLEU {:.2}) -> {}",
        outcome.best.epoch,
        outcome.best.valid_bleu,
        args.out.display()
    );
    save_checkpoint(&outcome.best, &args.out)?;

    let mut inputs: Vec<&Path> = vec![
        train_src.as_path(),
        train_tgt.as_path(),
        valid_src.as_path(),
        valid_tgt.as_path(),
        vocab_path.as_path(),
    ];
    if let Some(p) = &args.embeddings {
        inputs.push(p);
    }
    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_beside(&args.out)),
        "train",
        argv,
        json!({
            "model": serde_json::to_value(model_config).unwrap_or(Value::Null),
            "train": serde_json::to_value(&train_config).unwrap_or(Value::Null),
            "strategy": strategy,
        }),
        json!({ "init_seed": args.seed, "shuffle_seed": train_config.shuffle_seed }),
        hash_inputs(&inputs)?,
        json!({
            "best_epoch": outcome.best.epoch,
            "best_valid_bleu": outcome.best.valid_bleu,
            "history": serde_json::to_value(&outcome.history).unwrap_or(Value::Null),
        }),
        started,
    )
}

fn cmd_translate(args: &TranslateArgs, argv: &[String], started: Instant) -> Result<()> {
    use rayon::prelude::*;

    let vocab = Vocabulary::load(&args.vocab)?;
    let ckpt = load_checkpoint(&args.model, &vocab.fingerprint())?;
    let sources = load_sentences(&args.src)?;

    let results: Vec<DecodeResult> = sources
        .par_iter()
        .map(|src| greedy_decode(src, &vocab, &ckpt.params, &ckpt.model_config, None))
        .collect::<Result<_>>()?;

    let outputs: Vec<Sentence> = if args.unk_replace {
        results
            .iter()
            .zip(&sources)
            .map(|(r, s)| unk_replace(r, s))
            .collect()
    } else {
        results.iter().map(|r| r.tokens.clone()).collect()
    };
    save_sentences(&outputs, &args.out)?;

    let total_unks: usize = results.iter().map(|r| r.unk_replacements.len()).sum();
    if let Some(dir) = &args.dump_attention {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (result, src)) in results.iter().zip(&sources).enumerate() {
            let path = dir.join(format!("sent-{i:04}.tsv"));
            std::fs::write(&path, attention_tsv(result, src)).map_err(|e| Error::io(&path, e))?;
        }
        let unks: Vec<Value> = results.iter().map(|r| json!(r.unk_replacements)).collect();
        let path = dir.join("unk_replacements.json");
        let body = serde_json::to_string_pretty(&unks)
            .map_err(|e| Error::Data(format!("cannot encode UNK sidecar: {e}")))?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    println!(
        "translated {} sentences ({} UNK emissions) -> {}",
        sources.len(),
        total_unks,
        args.out.display()
    );

    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_beside(&args.out)),
        "translate",
        argv,
        json!({
            "model": serde_json::to_value(ckpt.model_config).unwrap_or(Value::Null),
            "strategy": ckpt.strategy,
            "unk_replace": args.unk_replace,
        }),
        json!({}),
        hash_inputs(&[&args.model, &args.vocab, &args.src])?,
        json!({ "sentences": sources.len(), "unk_emissions": total_unks }),
        started,
    )
}

fn cmd_score(args: &ScoreArgs, argv: &[String], started: Instant) -> Result<()> {
    match &args.metric {
        ScoreMetric::Bleu {
            hyp,
            r#ref,
            manifest,
        } => {
            let candidates = load_sentences(hyp)?;
            let references = load_sentences(r#ref)?;
            let report = bleu(&candidates, &references)?;
            println!("{}", report.summary_line());
            write_manifest(
                &manifest
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("bardic-manifest.json")),
                "score.bleu",
                argv,
                json!({}),
                json!({}),
                hash_inputs(&[hyp, r#ref])?,
                json!({
                    "bleu": report.bleu,
                    "precisions": report.precisions,
                    "brevity_penalty": report.brevity_penalty,
                    "candidate_len": report.candidate_len,
                    "reference_len": report.reference_len,
                }),
                started,
            )
        }
        ScoreMetric::Pinc {
            src,
            cand,
            manifest,
        } => {
            let sources = load_sentences(src)?;
            let candidates = load_sentences(cand)?;
            let report = pinc(&sources, &candidates)?;
            println!("{}", report.summary_line());
            write_manifest(
                &manifest
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("bardic-manifest.json")),
                "score.pinc",
                argv,
                json!({}),
                json!({}),
                hash_inputs(&[src, cand])?,
                json!({
                    "pinc": report.pinc,
                    "n_max": report.n_max,
                    "pairs": report.pairs,
                    "empty_candidates": report.empty_candidates,
                }),
                started,
            )
        }
    }
}

fn cmd_baseline(args: &BaselineArgs, argv: &[String], started: Instant) -> Result<()> {
    match &args.which {
        BaselineKind::AsItIs { src, out, manifest } => {
            let sources = load_sentences(src)?;
            let outputs: Vec<Sentence> = sources.iter().map(baselines::as_it_is).collect();
            save_sentences(&outputs, out)?;
            println!("as-it-is: {} sentences -> {}", outputs.len(), out.display());
            write_manifest(
                &manifest.clone().unwrap_or_else(|| manifest_beside(out)),
                "baseline.as-it-is",
                argv,
                json!({}),
                json!({}),
                hash_inputs(&[src])?,
                json!({ "sentences": outputs.len() }),
                started,
            )
        }
        BaselineKind::Dictionary {
            src,
            lexicon,
            train_tgt,
            out,
            manifest,
        } => {
            let sources = load_sentences(src)?;
            let lex = load_lexicon(lexicon)?.lexicon;
            let mut freq = std::collections::HashMap::new();
            for sentence in load_sentences(train_tgt)? {
                for token in sentence.tokens() {
                    *freq.entry(token.clone()).or_insert(0u64) += 1;
                }
            }
            let outputs = baselines::dictionary_baseline(&sources, &lex, &freq);
            save_sentences(&outputs, out)?;
            println!(
                "dictionary: {} sentences -> {}",
                outputs.len(),
                out.display()
            );
            write_manifest(
                &manifest.clone().unwrap_or_else(|| manifest_beside(out)),
                "baseline.dictionary",
                argv,
                json!({ "lexicon_pairs": lex.pairs.len() }),
                json!({}),
                hash_inputs(&[src, lexicon, train_tgt])?,
                json!({ "sentences": outputs.len() }),
                started,
            )
        }
    }
}

fn cmd_stats(args: &StatsArgs, argv: &[String], started: Instant) -> Result<()> {
    let split = parse_split(&args.split)?;
    let (src, tgt) = split_paths(&args.data_dir, split);
    let corpus = load_parallel(&src, &tgt, split)?.corpus;
    let stats = corpus_stats(&corpus)?;
    print!("{}", stats.to_kv_block());
    write_manifest(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| PathBuf::from("bardic-manifest.json")),
        "stats",
        argv,
        json!({ "split": args.split }),
        json!({}),
        hash_inputs(&[&src, &tgt])?,
        serde_json::to_value(&stats).unwrap_or(Value::Null),
        started,
    )
}
