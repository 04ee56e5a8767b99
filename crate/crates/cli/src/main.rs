mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deep_dpp::data::{
    filter_by_size, load_item_features, read_raw_baskets, map_to_catalog, index_baskets, split, write_baskets,
    BasketFormat, SplitCounts, DEFAULT_HASH_WIDTH, DEFAULT_MAX_BASKET_SIZE,
};
use deep_dpp::eval::{auc, mpr, EvalConfig, EvalReport, TieRule};
use deep_dpp::model_file::{write_embeddings_csv, DataSettings, ModelFile};
use deep_dpp::net::Architecture;
use deep_dpp::synth::{generate_nonlinear_coocurrence, generate_planted_dpp};
use deep_dpp::training::{train, TrainingConfig};
use deep_dpp::{condition, next_item_marginals, Catalog, DppError, Subset};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "deep-dpp", version, about = "Train and evaluate deep determinantal point processes on basket data")]
#[command(args_override_self = true)]
struct Cli {
    /// key = value file of flag defaults for the subcommand; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a basket file.
    Train(TrainArgs),
    /// Score held-out baskets (MPR, AUC).
    Eval(EvalArgs),
    /// Rank the items most likely to complete a basket.
    Predict(PredictArgs),
    /// Write a synthetic dataset with its ground truth.
    Synth(SynthArgs),
    /// Write the embedding matrix as CSV.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Lines,
    Csv,
}

impl From<FormatArg> for BasketFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Lines => BasketFormat::Lines,
            FormatArg::Csv => BasketFormat::Csv,
        }
    }
}

fn resolve_format(explicit: Option<FormatArg>, path: &Path) -> BasketFormat {
    explicit.map(Into::into).unwrap_or_else(|| BasketFormat::infer(path))
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    baskets: PathBuf,
    /// Basket file layout; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Item metadata CSV with an item_id column.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HASH_WIDTH)]
    hash_width: usize,
    /// Hidden layer widths, e.g. 400,300,200. Empty trains the shallow model.
    #[arg(long, default_value = "")]
    hidden: String,
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Regularization weight; defaults to 1 for the shallow model and 0 otherwise.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Relative change in validation log-likelihood treated as converged.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 10)]
    check_period: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_BASKET_SIZE)]
    max_basket_size: usize,
    /// Held-out test baskets; defaults to 2000, shrunk for small datasets.
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    validation_count: Option<usize>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Training log CSV; defaults to the model path with a .log.csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Mpr,
    Auc,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Midrank,
    AtLeast,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// The basket file the model was trained on; its test split is rebuilt.
    #[arg(long, required_unless_present = "test")]
    baskets: Option<PathBuf>,
    /// Explicit test basket file, used as is.
    #[arg(long, conflicts_with = "baskets")]
    test: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "both")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "midrank")]
    tie_rule: TieArg,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    /// Reports are written to <out-prefix>_<metric>.json and .csv.
    #[arg(long, default_value = "eval")]
    out_prefix: String,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated item ids already in the basket.
    #[arg(long, allow_hyphen_values = true)]
    basket: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Baskets sampled exactly from a random low-rank DPP (n ≤ 15).
    Planted,
    /// Baskets drawn from attribute-parity pools.
    Xor,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// Rank of the planted ground truth.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 20000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth CSV; defaults to the basket path with a .truth.csv extension.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Destination CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn parse_hidden(widths: &str) -> Result<Vec<usize>> {
    widths.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().with_context(|| format!("invalid hidden layer width '{s}'")))
        .collect()
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    ModelFile::read(io::BufReader::new(file)).with_context(|| format!("reading model {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let format = resolve_format(args.format, &args.baskets);
    let file = File::open(&args.baskets).with_context(|| format!("opening {}", args.baskets.display()))?;
    let loaded = index_baskets(read_raw_baskets(file, format)?);
    let (baskets, dropped) = filter_by_size(loaded.baskets, args.max_basket_size);
    if dropped > 0 {
        warn!("dropped {dropped} baskets larger than {} items", args.max_basket_size);
    }
    let defaults = SplitCounts::defaults_for(baskets.len());
    let counts = SplitCounts {
        test: args.test_count.unwrap_or(defaults.test),
        validation: args.validation_count.unwrap_or(defaults.validation),
    };
    info!(
        "{} baskets over {} items; {} test, {} validation",
        baskets.len(),
        loaded.catalog.len(),
        counts.test,
        counts.validation
    );
    let mut data = split(baskets, loaded.catalog, counts, args.seed)?;

    let features = match &args.features {
        Some(path) => {
            let f = load_item_features(path, &data.catalog, args.hash_width)?;
            data = data.with_features(f.matrix.clone())?;
            Some(f)
        }
        None => None,
    };
    let meta_width = features.as_ref().map_or(0, |f| f.matrix.ncols());
    let arch = Architecture::new(data.catalog.len(), meta_width, parse_hidden(&args.hidden)?, args.k)?;

    let mut cfg = TrainingConfig::for_architecture(&arch);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.batch_size = args.batch_size;
    cfg.max_iterations = args.max_iter;
    cfg.convergence_rel_tol = args.tol;
    cfg.validation_check_period = args.check_period;
    cfg.seed = args.seed;
    cfg.worker_count = args.workers;
    cfg.adam.lr = args.lr;

    let model = train(&data, &arch, &cfg)?;
    let settings = DataSettings { format, max_basket_size: args.max_basket_size, split: counts, seed: args.seed };
    let file = ModelFile::new(
        data.catalog.clone(),
        &model.params,
        &model.embeddings,
        Some(cfg),
        Some(settings),
        features.as_ref().map(|f| (f.encoder.clone(), &f.matrix)),
    )?;
    let mut out = create(&args.out)?;
    file.write(&mut out)?;
    out.flush()?;

    let log_path = args.log.unwrap_or_else(|| sibling(&args.out, ".log.csv"));
    let mut log_out = create(&log_path)?;
    model.log.write_csv(&mut log_out)?;
    log_out.flush()?;
    info!("wrote {} and {}", args.out.display(), log_path.display());

    match model.log.final_val_loglik() {
        Some(ll) => println!(
            "final validation log-likelihood: {ll} ({} per basket)",
            ll / data.validation.len() as f64
        ),
        None => println!("final validation log-likelihood: n/a (no epochs run)"),
    }
    Ok(())
}

/// Test baskets indexed against the model's catalog.
fn eval_baskets(args: &EvalArgs, model: &ModelFile) -> Result<Vec<Subset>> {
    let (path, rebuild) = match (&args.test, &args.baskets) {
        (Some(test), _) => (test, false),
        (None, Some(all)) => (all, true),
        (None, None) => bail!("either --baskets or --test is required"),
    };
    let settings = model.data.as_ref().filter(|_| rebuild);
    let format = match (args.format, settings) {
        (Some(f), _) => f.into(),
        (None, Some(s)) => s.format,
        (None, None) => BasketFormat::infer(path),
    };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let raw = read_raw_baskets(file, format)?;
    let (baskets, unknown) = map_to_catalog(&raw, &model.catalog);
    if unknown > 0 {
        warn!("skipped {unknown} baskets containing items unknown to the model");
    }
    if !rebuild {
        return Ok(baskets);
    }
    let Some(settings) = settings else {
        warn!("model carries no split settings; evaluating every basket in {}", path.display());
        return Ok(baskets);
    };
    let (baskets, _) = filter_by_size(baskets, settings.max_basket_size);
    Ok(split(baskets, model.catalog.clone(), settings.split, settings.seed)?.test)
}

fn write_report(report: &EvalReport, prefix: &str) -> Result<()> {
    let json = PathBuf::from(format!("{prefix}_{}.json", report.metric));
    let csv = PathBuf::from(format!("{prefix}_{}.csv", report.metric));
    let mut out = create(&json)?;
    report.write_json(&mut out)?;
    out.flush()?;
    let mut out = create(&csv)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    println!(
        "{}: {:.4} [{:.4}, {:.4}] over {} baskets ({} skipped)",
        report.metric, report.estimate, report.ci_low, report.ci_high, report.count, report.skipped
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let v = model.embeddings()?;
    let baskets = eval_baskets(&args, &model)?;
    if baskets.is_empty() {
        bail!("no test baskets to evaluate");
    }
    let cfg = EvalConfig {
        seed: args.seed,
        tie_rule: match args.tie_rule {
            TieArg::Midrank => TieRule::Midrank,
            TieArg::AtLeast => TieRule::AtLeast,
        },
        bootstrap_resamples: args.resamples,
    };
    if matches!(args.metric, Metric::Mpr | Metric::Both) {
        write_report(&mpr(&v, &baskets, &cfg)?, &args.out_prefix)?;
    }
    if matches!(args.metric, Metric::Auc | Metric::Both) {
        write_report(&auc(&v, &baskets, &cfg)?, &args.out_prefix)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let ids: Vec<&str> = args.basket.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let unknown: Vec<&str> = ids.iter().copied().filter(|id| model.catalog.index_of(id).is_none()).collect();
    if !unknown.is_empty() {
        bail!("unknown item ids: {}", unknown.join(", "));
    }
    let mut indices: Vec<usize> = ids.iter().filter_map(|id| model.catalog.index_of(id)).collect();
    indices.sort_unstable();
    indices.dedup();
    let basket = Subset::new(indices)?;
    let v = model.embeddings()?;
    let conditioned = match condition(&v, &basket) {
        Err(DppError::DegenerateConditioning) => {
            bail!("the basket's embeddings are linearly dependent, so conditioning on it is undefined")
        }
        other => other?,
    };
    let marginals = next_item_marginals(&conditioned);
    let mut ranked: Vec<(usize, f64)> = marginals.candidates().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.is_empty() {
        info!("the basket already holds every item");
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (rank, (item, p)) in ranked.into_iter().take(args.top_k).enumerate() {
        writeln!(out, "{}\t{}\t{p:.6}", rank + 1, model.catalog.id(item))?;
    }
    Ok(())
}

fn synthetic_catalog(n: usize) -> Result<Catalog> {
    Ok(Catalog::from_ids((0..n).map(|i| format!("item{i}")))?)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let catalog = synthetic_catalog(args.n)?;
    let format = resolve_format(args.format, &args.out);
    let truth_path = args.truth.clone().unwrap_or_else(|| sibling(&args.out, ".truth.csv"));
    let baskets = match args.kind {
        SynthKind::Planted => {
            let data = generate_planted_dpp(args.n, args.k, args.count, args.seed)?;
            let mut out = create(&truth_path)?;
            write_embeddings_csv(&mut out, &catalog, &data.truth)?;
            out.flush()?;
            data.baskets
        }
        SynthKind::Xor => {
            let data = generate_nonlinear_coocurrence(args.n, args.count, args.seed)?;
            let mut out = create(&truth_path)?;
            writeln!(out, "item_id,a,b")?;
            for (i, (a, b)) in data.attributes.iter().enumerate() {
                writeln!(out, "{},{},{}", catalog.id(i), u8::from(*a), u8::from(*b))?;
            }
            out.flush()?;
            data.baskets
        }
    };
    let mut out = create(&args.out)?;
    write_baskets(&mut out, &baskets, &catalog, format)?;
    out.flush()?;
    info!("wrote {} baskets to {} and ground truth to {}", baskets.len(), args.out.display(), truth_path.display());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let v = model.embeddings()?;
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            write_embeddings_csv(&mut out, &model.catalog, &v)?;
            out.flush()?;
        }
        None => write_embeddings_csv(io::stdout().lock(), &model.catalog, &v)?,
    }
    Ok(())
}

fn run(args: Vec<OsString>) -> Result<()> {
    let cli = Cli::try_parse_from(config::expand(args)?).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
