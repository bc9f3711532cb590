//! `vdt`: corpus generation, prompt assembly, zero-shot evaluation and
//! attention-adapter training over precomputed embeddings.
//!
//! Every command writes one JSON result to stdout (or `--out`) and a short
//! human-readable summary to stderr. Failures print `{"error", "message"}` to
//! stdout and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use vdt_core::adapters::checkpoint::Checkpoint;
use vdt_core::evaluation::{attention_report, format_base_to_new_table};
use vdt_core::gradcheck::{run_gradcheck, GradCheckConfig};
use vdt_core::io::{read_json, write_json, ImageSet, LoadedDataset};
use vdt_core::vdt::{
    assemble_default_prompts, assemble_prompts, LlmClient, LlmEndpointConfig, PromptTemplates, VdtCorpus,
    VdtGenerator,
};
use vdt_core::{
    evaluate_base_to_new, mean_prototype, sample_few_shot, score_ensemble_eval, split_base_new, train_adapter,
    tune_beta, zero_shot_eval, BaseToNewResult, Error, LabeledFeatures, Result, SentenceBank, SplitManifest,
    TrainConfig, DEFAULT_TAU,
};

#[derive(Parser)]
#[command(name = "vdt", version, about = "Prompt ensembles and self-attention adapters over frozen embeddings")]
struct Cli {
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query an LLM for attributes and per-class sentences.
    GenVdt(GenVdtArgs),
    /// Turn a corpus (or bare class names) into classifier prompts.
    BuildPrompts(BuildPromptsArgs),
    /// Zero-shot accuracy of the prompt ensemble.
    Zeroshot(ZeroshotArgs),
    /// Train the attention adapter on few-shot base-class images.
    Train(TrainArgs),
    /// Base, new and harmonic-mean accuracy of a trained adapter.
    EvalBaseNew(EvalArgs),
    /// Rank attributes by the attention their sentences receive.
    AnalyzeAttention(AnalyzeArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Default,
    FgvcAircraft,
}

#[derive(clap::Args)]
struct GenVdtArgs {
    /// Class names: a JSON array or one name per line.
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    dataset_id: String,
    /// Endpoint settings as JSON; defaults to the public chat-completions API.
    #[arg(long)]
    endpoint: Option<PathBuf>,
    /// Prompt templates as JSON; overrides --preset.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// Reuse an attribute list (one per line) instead of requesting one.
    #[arg(long)]
    attributes: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    quarantine: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BuildPromptsArgs {
    /// Corpus JSON from gen-vdt.
    #[arg(long, conflicts_with = "classes", required_unless_present = "classes")]
    corpus: Option<PathBuf>,
    /// Class names for one template prompt per class (JSON array or lines).
    #[arg(long, requires = "dataset_id")]
    classes: Option<PathBuf>,
    #[arg(long)]
    dataset_id: Option<String>,
    /// Must contain `{classname}`, and `{sentence}` when a corpus is given.
    #[arg(long)]
    template: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Average normalized sentence embeddings into one prototype per class.
    Mean,
    /// Average per-sentence similarity scores.
    Score,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Base,
    New,
}

#[derive(clap::Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Seed for the base/new split when the manifest has none.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(clap::Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "mean")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "all")]
    classes: Subset,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TrainConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    /// Grid-search beta over the config's beta_grid.
    #[arg(long)]
    tune_beta: bool,
    /// Train on every class instead of the base split.
    #[arg(long)]
    all_classes: bool,
    /// Include wall-clock time in the result (makes it non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Residual ratio; defaults to the one stored in the checkpoint.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long, value_enum, default_value = "all")]
    classes: Subset,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    heads: usize,
}

/// JSON result plus the human summary for stderr.
struct Output {
    result: Value,
    summary: String,
    ok: bool,
}

impl Output {
    fn new<T: Serialize>(result: &T, summary: impl Into<String>) -> Result<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            summary: summary.into(),
            ok: true,
        })
    }
}

fn read_name_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let names: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
    };
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no names", path.display())));
    }
    Ok(names)
}

fn gen_vdt(args: GenVdtArgs) -> Result<Output> {
    let classes = read_name_list(&args.classes)?;
    let endpoint: LlmEndpointConfig = match &args.endpoint {
        Some(p) => read_json(p)?,
        None => LlmEndpointConfig::default(),
    };
    let templates = match (&args.templates, args.preset) {
        (Some(p), _) => read_json(p)?,
        (None, Preset::FgvcAircraft) => PromptTemplates::fgvc_aircraft(),
        (None, Preset::Default) => PromptTemplates::default(),
    };
    let attributes = args.attributes.as_deref().map(read_name_list).transpose()?;
    let mut generator = VdtGenerator::new(LlmClient::http(endpoint)?, templates);
    if let Some(dir) = args.cache {
        generator = generator.with_cache(dir);
    }
    if let Some(dir) = args.quarantine {
        generator = generator.with_quarantine(dir);
    }
    let outcome = generator.generate(&args.dataset_id, &classes, attributes)?;
    let summary = format!(
        "{} classes, {} sentences, {} from cache, {} quarantined{}",
        outcome.corpus.classes.len(),
        outcome.corpus.total_sentences(),
        outcome.cached.len(),
        outcome.quarantined.len(),
        if outcome.quarantined.is_empty() {
            String::new()
        } else {
            format!(": {}", outcome.quarantined.join(", "))
        }
    );
    Output::new(&outcome.corpus, summary)
}

fn build_prompts(args: BuildPromptsArgs) -> Result<Output> {
    let manifest = match (&args.corpus, &args.classes) {
        (Some(c), _) => assemble_prompts(&args.template, &VdtCorpus::load(c)?)?,
        (None, Some(list)) => assemble_default_prompts(
            &args.template,
            args.dataset_id.as_deref().unwrap_or_default(),
            &read_name_list(list)?,
        )?,
        (None, None) => unreachable!("clap requires one of --corpus and --classes"),
    };
    let summary = format!("{} classes, {} prompts", manifest.classes.len(), manifest.total_prompts());
    Output::new(&manifest, summary)
}

/// Manifest split, or a seeded one when the manifest has none.
fn split_for(ds: &LoadedDataset, seed: u64) -> Result<SplitManifest> {
    match ds.split()? {
        Some(s) => {
            s.validate(&ds.manifest.class_names)?;
            Ok(s)
        }
        None => split_base_new(&ds.manifest.class_names, &ds.manifest.dataset_id, seed),
    }
}

fn restrict(
    ds: &LoadedDataset,
    data: &DataArgs,
    subset: Subset,
    images: LabeledFeatures,
    bank: SentenceBank,
) -> Result<(LabeledFeatures, SentenceBank)> {
    let keep = match subset {
        Subset::All => return Ok((images, bank)),
        Subset::Base => split_for(ds, data.split_seed)?.base_classes,
        Subset::New => split_for(ds, data.split_seed)?.new_classes,
    };
    Ok((images.restrict_to_classes(&keep)?, bank.subset(&keep)?))
}

fn zeroshot(args: ZeroshotArgs) -> Result<Output> {
    let ds = LoadedDataset::open(&args.data.manifest)?;
    let (test, bank) = restrict(&ds, &args.data, args.classes, ds.images(ImageSet::Test)?, ds.bank()?)?;
    let (accuracy, mode) = match args.mode {
        Mode::Mean => (zero_shot_eval(&test, &mean_prototype(&bank)?, args.data.tau)?, "mean"),
        Mode::Score => (score_ensemble_eval(&test, &bank, args.data.tau)?, "score"),
    };
    let result = json!({
        "dataset_id": ds.manifest.dataset_id,
        "mode": mode,
        "tau": args.data.tau,
        "classes": bank.num_classes(),
        "images": test.len(),
        "accuracy": accuracy,
    });
    let summary = format!(
        "{} ({mode}): {:.2}% over {} images, {} classes",
        ds.manifest.dataset_id,
        accuracy * 100.0,
        test.len(),
        bank.num_classes()
    );
    Output::new(&result, summary)
}

fn train(args: TrainArgs) -> Result<Output> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.tau = args.data.tau;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.shots {
        cfg.shots = v;
    }
    cfg.validate()?;

    let ds = LoadedDataset::open(&args.data.manifest)?;
    let subset = if args.all_classes { Subset::All } else { Subset::Base };
    let (pool, bank) = restrict(&ds, &args.data, subset, ds.images(ImageSet::Train)?, ds.bank()?)?;
    let few_shot = sample_few_shot(&pool, cfg.shots, cfg.seed)?;

    let (params, report, candidates) = if args.tune_beta {
        let search = tune_beta(&cfg, &few_shot, &bank)?;
        (search.params, search.report, Some(search.candidates))
    } else {
        let (p, r) = train_adapter(&cfg, &few_shot, &bank)?;
        (p, r, None)
    };
    Checkpoint::attention(params, cfg.seed, report.final_beta).save(&args.checkpoint)?;

    let mut result = json!({
        "checkpoint": args.checkpoint,
        "classes": bank.class_names(),
        "train_rows": few_shot.len(),
        "beta": report.final_beta,
        "train_accuracy": report.train_accuracy,
        "loss_history": report.loss_history,
        "config": cfg,
    });
    if let Some(c) = candidates {
        result["beta_candidates"] = serde_json::to_value(c)?;
    }
    if args.timings {
        result["wall_clock"] = json!(report.wall_clock.as_secs_f64());
    }
    let summary = format!(
        "trained on {} rows of {} classes: beta {}, train accuracy {:.2}%, final loss {:.4}",
        few_shot.len(),
        bank.num_classes(),
        report.final_beta,
        report.train_accuracy * 100.0,
        report.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Output::new(&result, summary)
}

fn eval_base_new(args: EvalArgs) -> Result<Output> {
    let (params, stored_beta) = Checkpoint::load(&args.checkpoint)?.into_attention()?;
    let beta = args.beta.unwrap_or(stored_beta);
    let ds = LoadedDataset::open(&args.data.manifest)?;
    let split = split_for(&ds, args.data.split_seed)?;
    let (test, bank) = (ds.images(ImageSet::Test)?, ds.bank()?);
    let bank_base = bank.subset(&split.base_classes)?;
    let bank_new = bank.subset(&split.new_classes)?;
    let test_base = test.restrict_to_classes(&split.base_classes)?;
    let test_new = test.restrict_to_classes(&split.new_classes)?;
    let tau = args.data.tau;
    let adapted = evaluate_base_to_new(&params, beta, &bank_base, &bank_new, &test_base, &test_new, tau)?;
    let plain = BaseToNewResult::new(
        zero_shot_eval(&test_base, &mean_prototype(&bank_base)?, tau)?,
        zero_shot_eval(&test_new, &mean_prototype(&bank_new)?, tau)?,
    )?;
    let result = json!({
        "dataset_id": ds.manifest.dataset_id,
        "beta": beta,
        "tau": tau,
        "base_acc": adapted.base_acc,
        "new_acc": adapted.new_acc,
        "harmonic": adapted.harmonic,
        "zero_shot": plain,
    });
    let table = format_base_to_new_table(&[("zero-shot".into(), plain), ("adapter".into(), adapted)]);
    Output::new(&result, table.trim_end())
}

fn analyze_attention(args: AnalyzeArgs) -> Result<Output> {
    let (params, _) = Checkpoint::load(&args.checkpoint)?.into_attention()?;
    let ds = LoadedDataset::open(&args.data.manifest)?;
    let (_, bank) = restrict(&ds, &args.data, args.classes, ds.images(ImageSet::Test)?, ds.bank()?)?;
    let report = attention_report(&params, &bank, args.top)?;
    let table = report.to_table();
    Output::new(&report, table.trim_end())
}

fn gradcheck(args: GradcheckArgs) -> Result<Output> {
    let report = run_gradcheck(&GradCheckConfig {
        seed: args.seed,
        tau: args.tau,
        beta: args.beta,
        heads: args.heads,
        ..Default::default()
    })?;
    let mut summary = format!("{:<5} {:>10} {:>10}\n", "param", "max|grad|", "rel err");
    for t in &report.tensors {
        summary.push_str(&format!("{:<5} {:>10.3e} {:>10.3e}\n", t.name, t.max_abs_analytic, t.rel_err));
    }
    summary.push_str(&format!(
        "max rel err {:.3e}: {}",
        report.max_rel_err,
        if report.pass { "pass" } else { "FAIL" }
    ));
    let result = json!({
        "seed": report.seed,
        "max_rel_err": report.max_rel_err,
        "pass": report.pass,
        "loss": report.loss,
        "beta_rel_err": report.beta.rel_err,
        "tensors": report.tensors,
    });
    let mut out = Output::new(&result, summary)?;
    out.ok = report.pass;
    Ok(out)
}

fn run(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::GenVdt(a) => gen_vdt(a),
        Command::BuildPrompts(a) => build_prompts(a),
        Command::Zeroshot(a) => zeroshot(a),
        Command::Train(a) => train(a),
        Command::EvalBaseNew(a) => eval_base_new(a),
        Command::AnalyzeAttention(a) => analyze_attention(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = cli.out.clone();
    let result = run(cli).and_then(|o| {
        emit(&o.result, out.as_deref())?;
        eprintln!("{}", o.summary);
        Ok(o.ok)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let body = json!({"error": e.kind(), "message": e.to_string()});
            println!("{}", serde_json::to_string_pretty(&body).unwrap_or_default());
            ExitCode::FAILURE
        }
    }
}
