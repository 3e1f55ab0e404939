//! Command-line front end: batch subcommands wiring the pipeline
//! together. Exit codes are a stable contract: 0 success, 1 runtime or
//! data error, 2 usage or configuration error. All outputs land under
//! the effective output directory with fixed names and are written
//! atomically, so any command can be re-run safely.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    export_summary, load_config, load_dataset, load_model, read_text, save_dataset, save_model,
    write_atomic, ArtifactError, ConfigError, ModelArtifact, PathsConfig, RunConfig,
};
use crate::eval::{render_report, round_half_up_2dp, ConfusionMatrix, EvalError, EvalSummary};
use crate::ingest::{clean_corpus, load_corpus, IngestError, LabelSchema, LoadOptions};
use crate::nncore::{
    grad_check, model_forward, predict, predict_class, Architecture, ModelSpec, ParamSet,
    DEFAULT_STEP,
};
use crate::optim::AdamHyper;
use crate::synth::{generate_corpus, to_corpus_text, SynthError};
use crate::textprep::{
    encode_sequence, prepare_tokens, Dataset, EncodedRecord, PrepConfig, PrepError, Vocabulary,
};
use crate::train::{split_dataset, train_model, Precision, TrainError, TrainOutcome};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Fixed artifact names under the output directory.
pub mod names {
    pub const CORPUS: &str = "corpus.csv";
    pub const VOCABULARY: &str = "vocabulary.txt";
    pub const SCHEMA: &str = "schema.toml";
    pub const DATASET: &str = "dataset.pnd";
    pub const PREPARE_STATS: &str = "prepare_stats.toml";
    pub const COMPARISON: &str = "comparison.tsv";

    pub fn model(arch: &str) -> String {
        format!("model-{arch}.pnm")
    }
    pub fn history(arch: &str) -> String {
        format!("history-{arch}.tsv")
    }
    pub fn confusion(arch: &str) -> String {
        format!("confusion-{arch}.csv")
    }
    pub fn summary(arch: &str) -> String {
        format!("summary-{arch}.toml")
    }
    pub fn report(arch: &str) -> String {
        format!("report-{arch}.txt")
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Wrong invocation or configuration: exit code 2.
    Usage(String),
    /// Data, IO, or numeric failure at run time: exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}
impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<PrepError> for CliError {
    fn from(e: PrepError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "phasenet",
    version,
    about = "Train and evaluate flight-phase narrative classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: crate::nncore::ModelError| e.to_string())
}

#[derive(Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration file; built-in defaults are used when absent
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override every seeded stage (synthesis, split, init, batching)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture: srnn, lstm, blstm, or cnn
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Architecture>,
    /// Output directory for all artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of records (overrides the profile)
        #[arg(long)]
        records: Option<usize>,
    },
    /// Ingest, clean, build the vocabulary, and encode the corpus
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one architecture on the prepared dataset
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a trained model on the held-out test split
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Model file (default: the trained model for the configured architecture)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classify ad-hoc narratives with a trained model
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Model file (default: the trained model for the configured architecture)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Narrative text, one argument per narrative
        #[arg(required = true)]
        text: Vec<String>,
    },
    /// Train and evaluate all four architectures under one seed
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Verify analytic gradients against finite differences at toy dimensions
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Configuration used when no `--config` file is given: dimensions
/// sized for the default synthetic corpus so the whole pipeline runs
/// out of the box.
pub fn default_run_config() -> RunConfig {
    RunConfig {
        model: ModelSpec {
            architecture: Architecture::Lstm,
            vocab_size: 2000,
            embed_dim: 32,
            hidden_dim: 64,
            kernel_width: 5,
            dense_dim: 64,
            num_classes: 7,
            max_len: 64,
        },
        prep: PrepConfig {
            max_len: 64,
            vocab_size: 2000,
            ..PrepConfig::default()
        },
        train: crate::train::TrainConfig {
            adam: AdamHyper {
                lr: 0.005,
                ..AdamHyper::default()
            },
            ..crate::train::TrainConfig::default()
        },
        paths: PathsConfig::default(),
        ingest: LoadOptions::default(),
        schema: LabelSchema::default(),
        synth: None,
    }
}

/// Load the config (or defaults), apply flag overrides, re-validate.
pub fn effective_config(common: &CommonArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => default_run_config(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
        if let Some(synth) = &mut config.synth {
            synth.seed = seed;
        }
    }
    if let Some(arch) = common.arch {
        config.model.architecture = arch;
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| config.paths.out_dir.clone());
    Ok((config, out_dir))
}

/// Bookkeeping from cmd_prepare, exported as structured text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub input_records: usize,
    pub retained_records: usize,
    pub dropped_empty_narrative: usize,
    pub dropped_unmappable_label: usize,
    pub dropped_no_tokens: usize,
    pub encoded_records: usize,
    pub vocab_tokens: usize,
    pub vocab_digest: String,
}

pub fn cmd_synth(
    config: &RunConfig,
    out_dir: &Path,
    records_override: Option<usize>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut profile = config.synth.clone().unwrap_or_default();
    if let Some(seed) = seed_override {
        profile.seed = seed;
    }
    let n = records_override.unwrap_or(profile.num_records);
    let records = generate_corpus(&profile, n)?;
    let text = to_corpus_text(&records, &profile);
    let path = config.resolved_corpus(out_dir);
    write_atomic(&path, text.as_bytes())?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

pub fn cmd_prepare(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let corpus_path = config.resolved_corpus(out_dir);
    config
        .ensure_input_files(&corpus_path)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let raw = load_corpus(&corpus_path, &config.ingest)?;
    let input_records = raw.len();
    let (clean, stats) = clean_corpus(&raw, &config.schema);
    let prep = config.effective_prep().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut token_lists = Vec::with_capacity(clean.len());
    let mut labels = Vec::with_capacity(clean.len());
    let mut dropped_no_tokens = 0usize;
    for record in &clean {
        let tokens = prepare_tokens(&record.narrative, &prep);
        if tokens.is_empty() {
            dropped_no_tokens += 1;
        } else {
            token_lists.push(tokens);
            labels.push(record.label as u32);
        }
    }
    let vocab = Vocabulary::build(&token_lists, &prep);
    let records: Vec<EncodedRecord> = token_lists
        .iter()
        .zip(&labels)
        .map(|(tokens, &label)| EncodedRecord {
            label,
            seq: encode_sequence(tokens, &vocab, &prep),
        })
        .collect();
    let dataset = Dataset {
        num_classes: config.schema.m(),
        max_len: prep.max_len,
        vocab_size: prep.vocab_size,
        vocab_digest: vocab.digest(),
        records,
    };

    write_atomic(&out_dir.join(names::VOCABULARY), vocab.to_text().as_bytes())?;
    let schema_text = toml::to_string(&config.schema).expect("schema serializes");
    write_atomic(&out_dir.join(names::SCHEMA), schema_text.as_bytes())?;
    save_dataset(&dataset, &out_dir.join(names::DATASET))?;
    let prepare_stats = PrepareStats {
        input_records,
        retained_records: stats.retained_count,
        dropped_empty_narrative: stats.dropped_empty_narrative,
        dropped_unmappable_label: stats.dropped_unmappable_label,
        dropped_no_tokens,
        encoded_records: dataset.records.len(),
        vocab_tokens: vocab.size(),
        vocab_digest: vocab.digest(),
    };
    let stats_text = toml::to_string(&prepare_stats).expect("stats serialize");
    write_atomic(&out_dir.join(names::PREPARE_STATS), stats_text.as_bytes())?;
    println!(
        "encoded {} of {} records ({} tokens in vocabulary) into {}",
        dataset.records.len(),
        input_records,
        vocab.size(),
        out_dir.join(names::DATASET).display()
    );
    Ok(())
}

fn load_prepared(out_dir: &Path) -> Result<(Dataset, LabelSchema), CliError> {
    let dataset = load_dataset(&out_dir.join(names::DATASET))?;
    let schema_text = read_text(&out_dir.join(names::SCHEMA))?;
    let schema: LabelSchema = toml::from_str(&schema_text)
        .map_err(|e| CliError::Runtime(format!("schema file: {e}")))?;
    schema
        .validate()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if schema.m() != dataset.num_classes {
        return Err(CliError::Runtime(format!(
            "schema lists {} classes but the dataset was encoded with {}",
            schema.m(),
            dataset.num_classes
        )));
    }
    Ok((dataset, schema))
}

fn train_one(
    config: &RunConfig,
    dataset: &Dataset,
    schema: &LabelSchema,
    arch: Architecture,
    out_dir: &Path,
) -> Result<ModelArtifact, CliError> {
    let spec = ModelSpec {
        architecture: arch,
        ..config.model.clone()
    };
    let split = split_dataset(dataset.records.len(), config.train.seed)?;
    let (params, history) = match config.train.precision {
        Precision::F32 => {
            let TrainOutcome { params, history, .. } =
                train_model::<f32>(&spec, dataset, &split.train, &split.val, &config.train)?;
            (params, history)
        }
        Precision::F64 => {
            let TrainOutcome { params, history, .. } =
                train_model::<f64>(&spec, dataset, &split.train, &split.val, &config.train)?;
            (params.cast::<f32>(), history)
        }
    };
    let artifact = ModelArtifact::new(
        spec,
        schema.clone(),
        dataset.vocab_digest.clone(),
        params,
    );
    let arch_name = arch.as_str();
    save_model(&artifact, &out_dir.join(names::model(arch_name)))?;
    write_atomic(
        &out_dir.join(names::history(arch_name)),
        history.to_tsv().as_bytes(),
    )?;
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "{arch_name}: {} epochs, final val_loss {:.4}, val_accuracy {:.4}",
        last.epoch, last.val_loss, last.val_accuracy
    );
    Ok(artifact)
}

pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let (dataset, schema) = load_prepared(out_dir)?;
    train_one(config, &dataset, &schema, config.model.architecture, out_dir)?;
    Ok(())
}

fn evaluate_artifact(
    config: &RunConfig,
    artifact: &ModelArtifact,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<EvalSummary, CliError> {
    if dataset.vocab_digest != artifact.vocab_digest {
        return Err(CliError::Runtime(
            ArtifactError::DigestMismatch {
                expected: artifact.vocab_digest.clone(),
                found: dataset.vocab_digest.clone(),
            }
            .to_string(),
        ));
    }
    let split = split_dataset(dataset.records.len(), config.train.seed)?;
    let mut y_true = Vec::with_capacity(split.test.len());
    let mut y_pred = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let r = &dataset.records[i];
        y_true.push(r.label as usize);
        y_pred.push(predict(&artifact.spec, &artifact.params, &r.seq.ids));
    }
    let cm = ConfusionMatrix::from_pairs(&y_true, &y_pred, &artifact.schema.classes)?;
    let summary = EvalSummary::compute(&cm)?;
    let report = render_report(&summary);

    let arch_name = artifact.spec.architecture.as_str();
    write_atomic(
        &out_dir.join(names::confusion(arch_name)),
        cm.to_delimited(',').as_bytes(),
    )?;
    export_summary(&summary, &report, &out_dir.join(names::summary(arch_name)))?;
    write_atomic(&out_dir.join(names::report(arch_name)), report.as_bytes())?;
    print!("{report}");
    Ok(summary)
}

pub fn cmd_evaluate(
    config: &RunConfig,
    out_dir: &Path,
    model_path: Option<&Path>,
) -> Result<(), CliError> {
    let default_path = out_dir.join(names::model(config.model.architecture.as_str()));
    let artifact = load_model(model_path.unwrap_or(&default_path))?;
    let (dataset, _) = load_prepared(out_dir)?;
    evaluate_artifact(config, &artifact, &dataset, out_dir)?;
    Ok(())
}

pub fn cmd_predict(
    config: &RunConfig,
    out_dir: &Path,
    model_path: Option<&Path>,
    texts: &[String],
) -> Result<(), CliError> {
    for text in texts {
        if text.trim().is_empty() {
            return Err(CliError::Usage("narrative text is empty".to_string()));
        }
    }
    let default_path = out_dir.join(names::model(config.model.architecture.as_str()));
    let artifact = load_model(model_path.unwrap_or(&default_path))?;
    let vocab = Vocabulary::from_text(&read_text(&out_dir.join(names::VOCABULARY))?)?;
    artifact.verify_vocabulary(&vocab)?;
    let mut prep = config.effective_prep().map_err(|e| CliError::Usage(e.to_string()))?;
    prep.max_len = artifact.spec.max_len;
    prep.vocab_size = artifact.spec.vocab_size;

    for text in texts {
        let tokens = prepare_tokens(text, &prep);
        if tokens.is_empty() {
            return Err(CliError::Usage(format!(
                "narrative {text:?} has no usable tokens after preprocessing"
            )));
        }
        let seq = encode_sequence(&tokens, &vocab, &prep);
        let cache = model_forward(&artifact.spec, &artifact.params, &seq.ids);
        let class = predict_class(cache.probs());
        let probs: Vec<String> = cache.probs().iter().map(|p| format!("{p:.6}")).collect();
        println!(
            "{}\t{}",
            artifact.schema.classes[class],
            probs.join(" ")
        );
    }
    Ok(())
}

pub fn cmd_compare(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let (dataset, schema) = load_prepared(out_dir)?;
    let mut rows = Vec::new();
    for arch in Architecture::ALL {
        let artifact = train_one(config, &dataset, &schema, arch, out_dir)?;
        let summary = evaluate_artifact(config, &artifact, &dataset, out_dir)?;
        rows.push((
            arch.as_str(),
            summary.weighted_precision,
            summary.weighted_recall,
            summary.weighted_f1,
            summary.accuracy,
        ));
    }

    let mut tsv = String::from("architecture\tprecision\trecall\tf1\taccuracy\n");
    for (name, p, r, f, a) in &rows {
        tsv.push_str(&format!("{name}\t{p}\t{r}\t{f}\t{a}\n"));
    }
    write_atomic(&out_dir.join(names::COMPARISON), tsv.as_bytes())?;

    println!("architecture  precision  recall  f1  accuracy");
    for (name, p, r, f, a) in &rows {
        println!(
            "{name}  {:.2}  {:.2}  {:.2}  {:.2}",
            round_half_up_2dp(*p),
            round_half_up_2dp(*r),
            round_half_up_2dp(*f),
            round_half_up_2dp(*a)
        );
    }
    Ok(())
}

/// Toy dimensions for the gradient diagnostic: small enough that central
/// differences over every parameter finish in well under a second.
pub fn gradcheck_spec(arch: Architecture) -> ModelSpec {
    ModelSpec {
        architecture: arch,
        vocab_size: 11,
        embed_dim: 4,
        hidden_dim: 3,
        kernel_width: 3,
        dense_dim: 4,
        num_classes: 3,
        max_len: 5,
    }
}

/// Diagnostic batch covering a full-length sequence and one with a pad tail.
pub fn gradcheck_batch() -> Vec<(Vec<u32>, usize)> {
    vec![(vec![2, 7, 10, 1, 4], 1), (vec![3, 3, 9, 0, 0], 2)]
}

/// Draws initial parameters and then nudges every value by a small random
/// offset. Training inits keep biases at exact zero, which can park ReLU
/// pre-activations and pool maxima exactly on a kink; at such points the
/// subgradient and a central difference legitimately disagree, so the check
/// must run at a generic point instead.
pub fn gradcheck_params(spec: &ModelSpec, seed: u64) -> ParamSet<f64> {
    let mut params: ParamSet<f64> = ParamSet::init(spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(17);
    for (_, tensor) in params.tensors_mut() {
        for v in tensor.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    params
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<(), CliError> {
    let batch = gradcheck_batch();
    let mut worst_overall = 0.0f64;
    let mut failed = false;
    for arch in Architecture::ALL {
        let spec = gradcheck_spec(arch);
        let params = gradcheck_params(&spec, config.train.seed);
        let report = grad_check(&spec, &params, &batch, DEFAULT_STEP);
        let ok = report.max_rel_error <= GRADCHECK_TOLERANCE;
        failed |= !ok;
        worst_overall = worst_overall.max(report.max_rel_error);
        println!(
            "{}\tmax_rel_error {:.3e}\tworst tensor {}\t{}",
            arch.as_str(),
            report.max_rel_error,
            report.worst_tensor,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed {
        return Err(CliError::Runtime(format!(
            "gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e} (worst {worst_overall:.3e})"
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common, records } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_synth(&config, &out_dir, records, common.seed)
        }
        Command::Prepare { common } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_prepare(&config, &out_dir)
        }
        Command::Train { common } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_train(&config, &out_dir)
        }
        Command::Evaluate { common, model } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_evaluate(&config, &out_dir, model.as_deref())
        }
        Command::Predict {
            common,
            model,
            text,
        } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_predict(&config, &out_dir, model.as_deref(), &text)
        }
        Command::Compare { common } => {
            let (config, out_dir) = effective_config(&common)?;
            cmd_compare(&config, &out_dir)
        }
        Command::Gradcheck { common } => {
            let (config, _) = effective_config(&common)?;
            cmd_gradcheck(&config)
        }
    }
}

/// Parse argv and dispatch; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
