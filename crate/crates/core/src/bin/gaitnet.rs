use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use gait_core::data::{
    load_sequence, materialize, random_identities, read_spec_file, split_subjects, Dataset, SubjectSplit, FRAME_SIZE,
};
use gait_core::eval::{
    build_cache, compare_pooling, cross_view_report, extend_cache, length_sweep, pooling_csv, sweep_csv, FeatureCache,
    TruncateSide, POOLING_FILE, SWEEP_FILE,
};
use gait_core::net::{forward_pair, load_checkpoint, params_hash, ModelParams, NetConfig};
use gait_core::train::{train_loop, PreparedSet, TrainConfig, TrainEvent, TrainState, BEST_CHECKPOINT};
use gait_core::{GaitError, PoolingMode};

const SPLIT_FILE: &str = "split.json";

#[derive(Parser, Debug)]
#[command(name = "gaitnet", version, about = "Cross-view gait recognition from silhouette sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic walkers into the dataset directory layout.
    Synth(SynthArgs),
    /// Train the similarity network on pairs drawn from a dataset.
    Train(TrainArgs),
    /// Embed every sequence and store the fused features.
    Extract(ExtractArgs),
    /// Print p_same for two sequence directories.
    Compare(CompareArgs),
    /// Cross-view Rank-1/2/5 and EER grids.
    Eval(EvalArgs),
    /// Mean Rank-1 and EER against sequence length.
    Sweep(SweepArgs),
    /// Train with max and with mean pooling and compare the results.
    ComparePooling(PoolingArgs),
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// Seed for every random substream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for embedding and scoring.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Pool with this mode instead of the one stored in the checkpoint.
    #[arg(long, value_enum)]
    pool: Option<PoolingMode>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Common {
    fn load_params(&self, path: &Path) -> CliResult<ModelParams<f32>> {
        let mut params = load_checkpoint(path)?;
        if let Some(mode) = self.pool {
            params.pooling = mode;
        }
        Ok(params)
    }
}

#[derive(Args, Debug, Serialize)]
struct Selection {
    /// Subject split written by `train`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Which part of the split to use.
    #[arg(long, value_enum, default_value_t = Part::Test, requires = "split")]
    part: Part,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Part {
    Train,
    Validation,
    Test,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Walker spec file (one JSON record per line); random walkers otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    /// Per-pixel flip probability.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with optional [train], [net] and [split] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the state saved in --out.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, visible_alias = "batch-size")]
    batch: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    val_pairs: Option<usize>,
    #[arg(long, value_enum)]
    pool: Option<PoolingMode>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    conv1: Option<usize>,
    #[arg(long)]
    conv2: Option<usize>,
    #[arg(long)]
    mcnn: Option<usize>,
    #[arg(long)]
    train_subjects: Option<usize>,
    #[arg(long)]
    val_subjects: Option<usize>,
    #[arg(long)]
    test_subjects: Option<usize>,
    /// Seed; when absent the config file or 0 is used.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Tiny,
    Paper,
}

#[derive(Args, Debug, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
    /// Add missing sequences to an existing cache instead of replacing it.
    #[arg(long)]
    append: bool,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    seq_a: PathBuf,
    seq_b: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long, required_unless_present = "cache")]
    data: Option<PathBuf>,
    /// Feature cache from `extract`, used instead of --data.
    #[arg(long, conflicts_with = "data")]
    cache: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    lengths: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SideArg::Probe)]
    truncate: SideArg,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SideArg {
    Probe,
    Both,
}

#[derive(Args, Debug, Serialize)]
struct PoolingArgs {
    #[command(flatten)]
    train: TrainArgs,
}

/// Optional tables of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    train: Option<TrainConfig>,
    net: Option<NetConfig>,
    split: Option<SplitCounts>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitCounts {
    train: Option<usize>,
    validation: Option<usize>,
    test: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(GaitError),
}

impl From<GaitError> for CliError {
    fn from(e: GaitError) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(GaitError::InvalidArgument(_)) => 1,
            CliError::Lib(GaitError::NonFinite(_)) => 3,
            CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn print_config(command: &str, value: serde_json::Value) {
    eprintln!("config {}", json!({ "command": command, "effective": value }));
}

fn init_threads(n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GaitError::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, text).map_err(|e| GaitError::Io { path: path.into(), source: e }.into())
}

fn select(dataset: Dataset, selection: &Selection) -> CliResult<Dataset> {
    let Some(path) = &selection.split else {
        return Ok(dataset);
    };
    let text = fs::read_to_string(path).map_err(|e| GaitError::Io { path: path.clone(), source: e })?;
    let split: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| GaitError::Data(format!("{}: {e}", path.display())))?;
    let key = match selection.part {
        Part::Train => "train",
        Part::Validation => "validation",
        Part::Test => "test",
    };
    let subjects: Vec<String> = serde_json::from_value(split[key].clone())
        .map_err(|e| GaitError::Data(format!("{}: '{key}' list: {e}", path.display())))?;
    if subjects.is_empty() {
        return Err(GaitError::Data(format!("{}: '{key}' selects no subjects", path.display())).into());
    }
    Ok(dataset.subset(&subjects)?)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    print_config("synth", json!(a));
    init_threads(a.threads)?;
    let records = match &a.spec {
        Some(p) => read_spec_file(p)?,
        None => random_identities(a.identities, a.frames, a.noise, a.seed),
    };
    if records.is_empty() {
        return Err(CliError::Usage("no identities to synthesize".into()));
    }
    let dataset = materialize(&records, &a.out)?;
    println!(
        "wrote {} subjects, {} sequences to {}",
        dataset.subjects().len(),
        dataset.len(),
        a.out.display()
    );
    Ok(())
}

struct ResolvedTrain {
    train: TrainConfig,
    net: NetConfig,
    split: SplitCounts,
}

fn resolve_train(a: &TrainArgs) -> CliResult<ResolvedTrain> {
    let file: FileConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| GaitError::Io { path: p.clone(), source: e })?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let mut train = file.train.unwrap_or_default();
    let mut net = file.net.unwrap_or_default();
    let mut split = file.split.unwrap_or_default();
    match a.preset {
        Some(Preset::Tiny) => net = NetConfig::tiny(),
        Some(Preset::Paper) => net = NetConfig::paper(),
        None => {}
    }
    macro_rules! over {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    over!(train.lr, a.lr);
    over!(train.momentum, a.momentum);
    over!(train.batch_size, a.batch);
    over!(train.max_iterations, a.max_iterations);
    over!(train.validate_every, a.validate_every);
    over!(train.val_pairs, a.val_pairs);
    over!(train.pooling, a.pool);
    over!(train.seed, a.seed);
    over!(net.input_size, a.input_size);
    over!(net.conv1_channels, a.conv1);
    over!(net.conv2_channels, a.conv2);
    over!(net.mcnn_channels, a.mcnn);
    if a.train_subjects.is_some() {
        split.train = a.train_subjects;
    }
    if a.val_subjects.is_some() {
        split.validation = a.val_subjects;
    }
    if a.test_subjects.is_some() {
        split.test = a.test_subjects;
    }
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    net.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(ResolvedTrain { train, net, split })
}

/// Unset counts default to a 60/20/20 split of the available subjects.
fn resolve_split(counts: SplitCounts, n: usize) -> CliResult<(usize, usize, usize)> {
    let fifth = (n as f64 * 0.2).round().max(1.0) as usize;
    let val = counts.validation.unwrap_or(fifth);
    let test = counts.test.unwrap_or(fifth);
    let train = counts.train.unwrap_or_else(|| n.saturating_sub(val + test));
    if train < 2 || val < 2 {
        return Err(CliError::Usage(format!(
            "need at least 2 training and 2 validation subjects, have {train} and {val} of {n}"
        )));
    }
    Ok((train, val, test))
}

fn prepare_training(a: &TrainArgs, r: &ResolvedTrain) -> CliResult<(PreparedSet, PreparedSet, Dataset, SubjectSplit)> {
    let dataset = Dataset::load(&a.data, FRAME_SIZE)?;
    let subjects = dataset.subjects();
    let (n_train, n_val, n_test) = resolve_split(r.split, subjects.len())?;
    let split = split_subjects(&subjects, n_train, n_val, n_test, r.train.seed)?;
    let train = PreparedSet::new(&dataset.subset(&split.train)?, r.net.input_size);
    let val = PreparedSet::new(&dataset.subset(&split.validation)?, r.net.input_size);
    let test = if split.test.is_empty() {
        Dataset::default()
    } else {
        dataset.subset(&split.test)?
    };
    Ok((train, val, test, split))
}

fn split_json(split: &SubjectSplit) -> String {
    serde_json::to_string_pretty(&json!({
        "train": split.train,
        "validation": split.validation,
        "test": split.test,
    }))
    .expect("string lists serialize")
        + "\n"
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let r = resolve_train(&a)?;
    print_config(
        "train",
        json!({ "args": a, "train": r.train, "net": r.net, "split": r.split }),
    );
    init_threads(a.threads)?;
    let (train, val, _, split) = prepare_training(&a, &r)?;
    fs::create_dir_all(&a.out).map_err(|e| GaitError::Io { path: a.out.clone(), source: e })?;
    write_text(&a.out.join(SPLIT_FILE), &split_json(&split))?;
    let state = if a.resume {
        let s = TrainState::resume(&a.out)?;
        if s.params.config != r.net || s.params.pooling != r.train.pooling {
            return Err(CliError::Usage("--resume: network settings differ from the saved run".into()));
        }
        s
    } else {
        TrainState::fresh(r.net, &r.train)?
    };
    let verbose = a.verbose;
    let outcome = train_loop(&train, &val, &r.train, state, Some(&a.out), |e| {
        let TrainEvent::Validation { iteration, precision, improved } = *e;
        if verbose > 0 {
            eprintln!("iteration {iteration}: val_precision {precision:.4}{}", if improved { " (best)" } else { "" });
        }
    })?;
    let (best_it, best) = outcome.log.best().unwrap_or((0, f64::NAN));
    let final_precision = outcome.log.validations.last().map_or(f64::NAN, |v| v.1);
    println!("final val_precision {final_precision:.4}");
    println!("best val_precision {best:.4} at iteration {best_it}");
    println!("checkpoint {}", a.out.join(BEST_CHECKPOINT).display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> CliResult<()> {
    print_config("extract", json!(a));
    init_threads(a.common.threads)?;
    let params = a.common.load_params(&a.checkpoint)?;
    let dataset = select(Dataset::load(&a.data, FRAME_SIZE)?, &a.selection)?;
    if dataset.is_empty() {
        return Err(GaitError::Data("no sequences selected".into()).into());
    }
    let cache = if a.append && a.out.exists() {
        let mut cache = FeatureCache::load(&a.out)?;
        let added = extend_cache(&mut cache, &dataset, &params)?;
        println!("added {added} entries");
        cache
    } else {
        build_cache(&dataset, &params)?
    };
    cache.save(&a.out)?;
    println!("{} entries in {}", cache.len(), a.out.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    print_config("compare", json!(a));
    init_threads(a.common.threads)?;
    let params = a.common.load_params(&a.checkpoint)?;
    let size = params.config.input_size;
    let sa = load_sequence(&a.seq_a)?.resized(size);
    let sb = load_sequence(&a.seq_b)?.resized(size);
    let score = forward_pair(&sa, &sb, &params, params.pooling)?;
    println!("{:.6}", score.p_same);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    print_config("eval", json!(a));
    init_threads(a.common.threads)?;
    let params = a.common.load_params(&a.checkpoint)?;
    let cache = match (&a.cache, &a.data) {
        (Some(c), _) => FeatureCache::load(c)?,
        (None, Some(d)) => build_cache(&select(Dataset::load(d, FRAME_SIZE)?, &a.selection)?, &params)?,
        (None, None) => return Err(CliError::Usage("one of --data or --cache is required".into())),
    };
    let report = cross_view_report(&cache, &params)?;
    report.write_csv(&a.out)?;
    print!("{}", report.summary());
    println!("checkpoint {}", params_hash(&params));
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    print_config("sweep", json!(a));
    init_threads(a.common.threads)?;
    if a.lengths.is_empty() {
        return Err(CliError::Usage("--lengths must list at least one length".into()));
    }
    let params = a.common.load_params(&a.checkpoint)?;
    let dataset = select(Dataset::load(&a.data, FRAME_SIZE)?, &a.selection)?;
    let side = match a.truncate {
        SideArg::Probe => TruncateSide::Probe,
        SideArg::Both => TruncateSide::Both,
    };
    let rows = length_sweep(&dataset, &params, &a.lengths, side)?;
    let text = sweep_csv(&rows);
    write_text(&a.out.join(SWEEP_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_compare_pooling(a: PoolingArgs) -> CliResult<()> {
    let a = a.train;
    let r = resolve_train(&a)?;
    print_config(
        "compare-pooling",
        json!({ "args": a, "train": r.train, "net": r.net, "split": r.split }),
    );
    init_threads(a.threads)?;
    let (train, val, test, split) = prepare_training(&a, &r)?;
    if test.is_empty() {
        return Err(CliError::Usage("compare-pooling needs test subjects".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| GaitError::Io { path: a.out.clone(), source: e })?;
    write_text(&a.out.join(SPLIT_FILE), &split_json(&split))?;
    let rows = compare_pooling(&train, &val, &test, r.net, &r.train, &[PoolingMode::Max, PoolingMode::Mean])?;
    let text = pooling_csv(&rows);
    write_text(&a.out.join(POOLING_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ComparePooling(a) => cmd_compare_pooling(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
