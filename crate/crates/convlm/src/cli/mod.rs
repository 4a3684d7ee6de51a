//! Command-line pipeline: `generate`, `train`, `rescore`, `evaluate`,
//! `embed`. Every command is deterministic under a fixed seed; errors print
//! a machine-parsable category and exit 1 (usage), 2 (data) or 3 (numeric).

pub mod files;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::corpus::{
    build_vocab, generate_nbest, generate_synthetic, parse_corpus, write_corpus, Actor, Corpus,
    NbestGenConfig, Vocabulary,
};
use crate::embedding::{load_embedding_file, pseudo_table, write_embedding_file, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_systems, default_stopwords, error_rates, load_stopwords, perplexity, MaskPolicy,
    MetricReport,
};
use crate::model::{init_model, Arch, FusionConfig, LmModel, SlotHeadConfig};
use crate::numerics::Rng;
use crate::rescoring::{
    read_nbest_file, rescore_stream, write_rescored_file, AdvanceWith, RescoreOptions, Rescorer,
};
use crate::training::{
    eval_session_options, load_model, load_train_state, prepare_sessions,
    save_model, save_train_state, train_loop, write_metric_log, TrainState,
};

pub const ENV_CONFIG: &str = "CONVLM_CONFIG";

#[derive(Parser)]
#[command(
    name = "convlm",
    about = "Conversational LM rescoring toolkit: synthetic dialogue corpora, Transformer-XL and LSTM language models, n-best rescoring and WER evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus with splits and an n-best benchmark
    Generate(GenerateArgs),
    /// Train a language model on a generated corpus
    Train(TrainArgs),
    /// Rescore an n-best file with a trained checkpoint
    Rescore(RescoreArgs),
    /// Compute WER/CWER (text mode) or perplexity (checkpoint mode)
    Evaluate(EvaluateArgs),
    /// Build pseudo domain embeddings from a corpus
    Embed(EmbedArgs),
}

#[derive(Args)]
struct ConfigOpts {
    /// JSON run configuration; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed override
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<RunConfig> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var(ENV_CONFIG).ok().map(PathBuf::from));
        let mut config = match path {
            Some(p) => RunConfig::load(&p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.training.seed = config.seed;
        Ok(config)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Output directory for splits and the n-best benchmark
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the number of conversations
    #[arg(long)]
    conversations: Option<usize>,
    /// Allow writing into a non-empty directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Directory produced by `generate` (train/valid/test splits)
    #[arg(long)]
    corpus_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Dialogue-act prefix augmentation
    #[arg(long)]
    da: bool,
    /// Joint slot-detection objective
    #[arg(long)]
    joint_sd: bool,
    /// Domain-embedding fusion layer
    #[arg(long)]
    fusion: bool,
    /// Architecture: txl or lstm
    #[arg(long)]
    arch: Option<String>,
    /// Carry memory across turns (default)
    #[arg(long, conflicts_with = "non_contextual")]
    contextual: bool,
    /// Reset state at every utterance boundary
    #[arg(long)]
    non_contextual: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Embedding file for fusion models
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Derive pseudo embeddings from the training corpus
    #[arg(long)]
    pseudo_embeddings: bool,
    /// Resume from a train-state checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RescoreArgs {
    /// Model checkpoint from `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input n-best file
    #[arg(long)]
    nbest: PathBuf,
    /// Output rescored file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    acoustic_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    /// Divide LM scores by hypothesis length
    #[arg(long)]
    length_normalize: bool,
    /// top_rescored (default) or top_first_pass
    #[arg(long, default_value = "top_rescored")]
    advance_with: String,
    /// Override the checkpoint's embedding table
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference transcripts (refs file or n-best file with references)
    #[arg(long, required_unless_present = "checkpoint")]
    refs: Option<PathBuf>,
    /// Hypothesis file (rescored n-best or {utterance_id, text} lines)
    #[arg(long, required_unless_present = "checkpoint")]
    hyp: Option<PathBuf>,
    /// Second hypothesis file for --compare
    #[arg(long)]
    hyp2: Option<PathBuf>,
    /// Compare --hyp (baseline) against --hyp2 (system)
    #[arg(long, requires = "hyp2")]
    compare: bool,
    /// Stop-word list file (shipped default when absent)
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Perplexity mode: model checkpoint
    #[arg(long, requires = "corpus")]
    checkpoint: Option<PathBuf>,
    /// Perplexity mode: corpus file to score
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// carry (default) or reset: cross-turn memory policy at evaluation
    #[arg(long, default_value = "carry")]
    context_policy: String,
    /// user_words (default) or all_words
    #[arg(long, default_value = "user_words")]
    mask_policy: String,
    /// Override the checkpoint's embedding table (perplexity mode)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Force one domain embedding for every conversation (perplexity mode)
    #[arg(long)]
    force_domain: Option<String>,
    /// Write the report here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Corpus file with domain-tagged conversations
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point: parse, dispatch, map errors to exit codes.
pub fn run_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Rescore(args) => cmd_rescore(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Embed(args) => cmd_embed(args),
    }
}

fn ensure_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    } else {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Stratified 80/10/10 split by conversation with a seeded shuffle inside
/// each domain, so every split carries every domain.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> (Corpus, Corpus, Corpus) {
    let mut by_domain: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, conv) in corpus.conversations.iter().enumerate() {
        by_domain
            .entry(conv.domain.clone().unwrap_or_default())
            .or_default()
            .push(i);
    }
    let mut rng = Rng::seed_from(seed).derive("split");
    let mut split_ids: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for indices in by_domain.values() {
        let mut shuffled = indices.clone();
        rng.shuffle(&mut shuffled);
        let n = shuffled.len();
        let n_test = (n / 10).max(1).min(n);
        let n_valid = (n / 10).max(1).min(n.saturating_sub(n_test));
        for (k, &idx) in shuffled.iter().enumerate() {
            if k < n_test {
                split_ids[2].push(idx);
            } else if k < n_test + n_valid {
                split_ids[1].push(idx);
            } else {
                split_ids[0].push(idx);
            }
        }
    }
    let make = |ids: &mut Vec<usize>| {
        ids.sort_unstable();
        Corpus {
            header: corpus.header.clone(),
            conversations: ids.iter().map(|&i| corpus.conversations[i].clone()).collect(),
        }
    };
    let train = make(&mut split_ids[0]);
    let valid = make(&mut split_ids[1]);
    let test = make(&mut split_ids[2]);
    (train, valid, test)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(n) = args.conversations {
        config.corpus.synth.n_conversations = n;
    }
    ensure_out_dir(&args.out_dir, args.force)?;
    let corpus = generate_synthetic(&config.corpus.synth, config.seed)?;
    let (train, valid, test) = split_corpus(&corpus, config.seed);
    write_corpus(&args.out_dir.join("train.jsonl"), &train)?;
    write_corpus(&args.out_dir.join("valid.jsonl"), &valid)?;
    write_corpus(&args.out_dir.join("test.jsonl"), &test)?;

    let nbest = generate_nbest(&config.corpus.synth, &test, &NbestGenConfig::default(), config.seed)?;
    crate::rescoring::write_nbest_file(&args.out_dir.join("test.nbest.jsonl"), &nbest)?;
    let refs: Vec<files::RefRecord> = nbest
        .iter()
        .filter(|r| r.actor == Actor::User)
        .map(|r| files::RefRecord {
            utterance_id: r.utterance_id.clone(),
            text: r.reference.clone().expect("generator sets references"),
        })
        .collect();
    files::write_refs(&args.out_dir.join("test.refs.jsonl"), &refs)?;
    std::fs::write(args.out_dir.join("effective_config.json"), config.echo()?)?;
    eprintln!(
        "generated {} conversations ({} train / {} valid / {} test) in {}",
        corpus.conversations.len(),
        train.conversations.len(),
        valid.conversations.len(),
        test.conversations.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn parse_arch(s: &str) -> Result<Arch> {
    match s {
        "txl" => Ok(Arch::Txl),
        "lstm" | "lstm_baseline" => Ok(Arch::LstmBaseline),
        other => Err(Error::config(format!("unknown arch {other:?} (txl | lstm)"))),
    }
}

/// Resolve the embedding table for a fusion run.
fn resolve_embeddings(
    fusion: &FusionConfig,
    file: Option<&Path>,
    pseudo: bool,
    train_corpus: &Corpus,
    d_embed_cfg: usize,
    seed: u64,
) -> Result<Option<EmbeddingTable>> {
    let FusionConfig::On { d_embed, .. } = fusion else {
        return Ok(None);
    };
    let table = if let Some(path) = file {
        load_embedding_file(path)?
    } else if pseudo {
        pseudo_table(&train_corpus.conversations, d_embed_cfg, seed)?
    } else {
        return Err(Error::config(
            "--fusion requires --embeddings <file> or --pseudo-embeddings".to_string(),
        ));
    };
    if table.is_empty() {
        return Err(Error::data("embedding table is empty".to_string()));
    }
    if table.dim() != *d_embed {
        return Err(Error::config(format!(
            "embedding dimension {} does not match fusion d_embed {}",
            table.dim(),
            d_embed
        )));
    }
    Ok(Some(table))
}

/// Checkpoint metadata the pipeline needs to reload a model: vocabulary,
/// dialogue-act flag and the training-time embedding table.
fn pipeline_meta(
    vocab: &Vocabulary,
    da_enabled: bool,
    embeddings: Option<&EmbeddingTable>,
) -> serde_json::Value {
    serde_json::json!({
        "vocab": vocab.tokens(),
        "da_enabled": da_enabled,
        "embeddings": embeddings.map(|t| t.to_json()),
    })
}

pub struct LoadedPipeline {
    pub model: LmModel<f32>,
    pub vocab: Vocabulary,
    pub da_enabled: bool,
    pub embeddings: Option<EmbeddingTable>,
}

/// Load a model checkpoint plus its pipeline metadata.
pub fn load_pipeline(path: &Path) -> Result<LoadedPipeline> {
    let (model, extra) = load_model::<f32>(path)?;
    let tokens: Vec<String> = serde_json::from_value(
        extra
            .get("vocab")
            .cloned()
            .ok_or_else(|| Error::data(format!("{}: checkpoint lacks vocab", path.display())))?,
    )?;
    let mut vocab: Vocabulary = serde_json::from_value(serde_json::json!({ "tokens": tokens }))?;
    vocab.rehydrate();
    let da_enabled = extra
        .get("da_enabled")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);
    let embeddings = EmbeddingTable::from_json(extra.get("embeddings").unwrap_or(&serde_json::Value::Null))?;
    Ok(LoadedPipeline {
        model,
        vocab,
        da_enabled,
        embeddings,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if args.da {
        config.corpus.da_enabled = true;
    }
    if args.joint_sd {
        config.model.slot_head = SlotHeadConfig::on();
    }
    if args.fusion && !config.model.fusion.enabled() {
        config.model.fusion = FusionConfig::on(config.embeddings.d_embed);
    }
    if let Some(arch) = &args.arch {
        config.model.arch = parse_arch(arch)?;
    }
    if args.contextual {
        config.model.contextual = true;
    }
    if args.non_contextual {
        config.model.contextual = false;
    }
    if let Some(steps) = args.steps {
        config.training.max_steps = steps;
    }
    if let Some(b) = args.batch_size {
        config.training.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        config.training.learning_rate = lr;
    }
    if args.pseudo_embeddings {
        config.embeddings.pseudo = true;
    }
    if let Some(f) = &args.embeddings {
        config.embeddings.file = Some(f.clone());
    }
    ensure_out_dir(&args.out_dir, args.force)?;

    let train_corpus = parse_corpus(&args.corpus_dir.join("train.jsonl"))?;
    let valid_corpus = parse_corpus(&args.corpus_dir.join("valid.jsonl"))?;
    let vocab = build_vocab(&train_corpus, config.corpus.vocab_size)?;
    config.model.vocab_size = vocab.len();
    config.model.n_slot_classes = train_corpus.n_slot_classes();

    let embeddings = resolve_embeddings(
        &config.model.fusion,
        config.embeddings.file.as_deref(),
        config.embeddings.pseudo,
        &train_corpus,
        config.embeddings.d_embed,
        config.seed,
    )?;

    let train_sessions = prepare_sessions(
        &train_corpus,
        &vocab,
        config.corpus.da_enabled,
        config.training.session_options(),
    )?;
    let val_sessions = prepare_sessions(
        &valid_corpus,
        &vocab,
        config.corpus.da_enabled,
        eval_session_options(),
    )?;

    let state: TrainState<f32> = match &args.resume {
        Some(path) => {
            let (state, _extra) = load_train_state::<f32>(path, &train_sessions)?;
            state
        }
        None => {
            let model = init_model::<f32>(&config.model, config.seed)?;
            TrainState::new(model, &config.training, train_sessions.len())
        }
    };

    eprintln!(
        "training {:?} ({} parameters) for {} steps",
        config.model.arch,
        state.model.param_count(),
        config.training.max_steps
    );
    let outcome = train_loop(
        state,
        &train_sessions,
        &val_sessions,
        &config.training,
        embeddings.as_ref(),
    )?;

    let meta = pipeline_meta(&vocab, config.corpus.da_enabled, embeddings.as_ref());
    let best = outcome.state.best_model();
    save_model(&args.out_dir.join("best.ckpt"), &best, &meta)?;
    save_train_state(&args.out_dir.join("state.ckpt"), &outcome.state, &meta)?;
    write_metric_log(&args.out_dir.join("metrics.jsonl"), &outcome.metrics)?;
    std::fs::write(args.out_dir.join("effective_config.json"), config.echo()?)?;
    if let Some(last_valid) = outcome
        .metrics
        .iter()
        .rev()
        .find(|m| m.split == "valid")
    {
        eprintln!(
            "finished at step {}: valid ppl {:.3}{}",
            outcome.state.step,
            last_valid.ppl.unwrap_or(f64::NAN),
            last_valid
                .slot_f1
                .map_or(String::new(), |f| format!(", slot F1 {f:.3}")),
        );
    }
    Ok(())
}

fn cmd_rescore(args: RescoreArgs) -> Result<()> {
    let mut pipeline = load_pipeline(&args.checkpoint)?;
    if let Some(path) = &args.embeddings {
        pipeline.embeddings = Some(load_embedding_file(path)?);
    }
    let records = read_nbest_file(&args.nbest)?;
    // Conversations must stream in dialogue order.
    let mut last_turn: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &records {
        if let Some(prev) = last_turn.get(&rec.conversation_id) {
            if rec.turn_index <= *prev {
                return Err(Error::data(format!(
                    "utterance {}: turn {} out of order (previous turn {prev})",
                    rec.utterance_id, rec.turn_index
                )));
            }
        }
        last_turn.insert(rec.conversation_id.clone(), rec.turn_index);
    }
    let opts = RescoreOptions {
        acoustic_scale: args.acoustic_scale,
        lm_scale: args.lm_scale,
        length_normalize: args.length_normalize,
        advance_with: match args.advance_with.as_str() {
            "top_rescored" => AdvanceWith::TopRescored,
            "top_first_pass" => AdvanceWith::TopFirstPass,
            other => {
                return Err(Error::config(format!(
                    "unknown --advance-with {other:?} (top_rescored | top_first_pass)"
                )))
            }
        },
        ..RescoreOptions::default()
    };
    let rescorer = Rescorer::new(
        &pipeline.model,
        &pipeline.vocab,
        pipeline.da_enabled,
        pipeline.embeddings.as_ref(),
    );
    let rescored = rescore_stream(&rescorer, &records, &opts, |w| eprintln!("warning: {w}"))?;
    write_rescored_file(&args.out, &rescored)?;
    eprintln!("rescored {} user turns into {}", rescored.len(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let report = if let Some(checkpoint) = &args.checkpoint {
        evaluate_ppl(&args, checkpoint)?
    } else {
        evaluate_text(&args)?
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn evaluate_ppl(args: &EvaluateArgs, checkpoint: &Path) -> Result<MetricReport> {
    let mut pipeline = load_pipeline(checkpoint)?;
    if let Some(path) = &args.embeddings {
        pipeline.embeddings = Some(load_embedding_file(path)?);
    }
    match args.context_policy.as_str() {
        "carry" => {}
        "reset" => pipeline.model.config.contextual = false,
        other => {
            return Err(Error::config(format!(
                "unknown --context-policy {other:?} (carry | reset)"
            )))
        }
    }
    let policy = match args.mask_policy.as_str() {
        "user_words" => MaskPolicy::UserWords,
        "all_words" => MaskPolicy::AllWords,
        other => {
            return Err(Error::config(format!(
                "unknown --mask-policy {other:?} (user_words | all_words)"
            )))
        }
    };
    let corpus_path = args.corpus.as_ref().expect("clap requires");
    let corpus = parse_corpus(corpus_path)?;
    let ppl = perplexity(
        &pipeline.model,
        &corpus,
        &pipeline.vocab,
        pipeline.da_enabled,
        policy,
        pipeline.embeddings.as_ref(),
        args.force_domain.as_deref(),
    )?;
    // Slot scores come along for free when the model has a head.
    let mut report = MetricReport {
        ppl: Some(ppl),
        utterances: Some(corpus.conversations.len()),
        ..MetricReport::default()
    };
    if pipeline.model.config.slot_head.enabled() {
        let sessions = prepare_sessions(
            &corpus,
            &pipeline.vocab,
            pipeline.da_enabled,
            eval_session_options(),
        )?;
        let mut predictions = Vec::new();
        let mut gold = Vec::new();
        let mut mask = Vec::new();
        for ts in &sessions {
            let emb = match (&pipeline.embeddings, &ts.domain) {
                (Some(table), Some(tag)) => table.vector_as::<f32>(tag),
                _ => None,
            };
            let preds =
                crate::model::score::predict_slots(&pipeline.model, &ts.session, emb.as_deref())?;
            let upto = preds.len();
            predictions.extend_from_slice(&preds);
            gold.extend(ts.session.slot_labels[..upto].iter().copied());
            mask.extend(ts.session.loss_mask[..upto].iter().copied());
        }
        let scores = crate::evaluation::slot_f1(&predictions, &gold, &mask)?;
        report.slot_precision = Some(scores.precision);
        report.slot_recall = Some(scores.recall);
        report.slot_f1 = Some(scores.f1);
    }
    Ok(report)
}

fn evaluate_text(args: &EvaluateArgs) -> Result<MetricReport> {
    let refs_path = args.refs.as_ref().expect("clap requires");
    let hyp_path = args.hyp.as_ref().expect("clap requires");
    let stopwords = match &args.stopwords {
        Some(path) => load_stopwords(path)?,
        None => default_stopwords(),
    };
    let refs = files::read_text_map(refs_path)?;
    let hyps = files::read_text_map(hyp_path)?;
    let pairs = files::paired_utterances(&refs, &hyps)?;
    let base_report = error_rates(&pairs, &stopwords)?;

    let mut report = MetricReport {
        wer: Some(base_report.wer),
        cwer: Some(base_report.cwer),
        utterances: Some(base_report.utterances),
        stopword_list_hash: Some(base_report.stopword_list_hash.clone()),
        per_utterance_errors: Some(base_report.utterance_errors()),
        ..MetricReport::default()
    };
    if args.compare {
        let hyp2_path = args.hyp2.as_ref().expect("clap requires");
        let hyps2 = files::read_text_map(hyp2_path)?;
        let pairs2 = files::paired_utterances(&refs, &hyps2)?;
        let sys_report = error_rates(&pairs2, &stopwords)?;
        report.comparison = Some(compare_systems(
            &hyp_path.display().to_string(),
            &base_report,
            &hyp2_path.display().to_string(),
            &sys_report,
        )?);
    }
    Ok(report)
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    let corpus = parse_corpus(&args.corpus)?;
    let table = pseudo_table(&corpus.conversations, args.dim, args.seed)?;
    if table.is_empty() {
        return Err(Error::data(
            "corpus has no domain-tagged conversations to embed".to_string(),
        ));
    }
    write_embedding_file(&args.out, &table)?;
    eprintln!(
        "wrote {} embeddings of dimension {} to {}",
        table.len(),
        table.dim(),
        args.out.display()
    );
    Ok(())
}
