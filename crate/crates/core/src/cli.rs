//! Command-line front end. Summaries go to stdout, machine output to CSV
//! files under `--out`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::campaign::{export_results, run_campaign, tile_sweep, CampaignConfig, ModeKind};
use crate::dfo::bench::BenchFunction;
use crate::dfo::{minimize, write_trace_csv, MinimizeOptions, OptimizerKind};
use crate::error::{Error, Result};
use crate::models::{
    load_model, toy_linear_problem, toy_mlp_problem, LabeledImage, ModelOracle, RemoteModel, TrainConfig,
};
use crate::objectives::ProblemForm;
use crate::tensor::{ImageTensor, LossKind, Shape};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default side of the built-in models' square images.
pub const BUILTIN_SIDE: usize = 16;
pub const BUILTIN_MLP_CLASSES: usize = 4;
pub const BUILTIN_MLP_TRAIN_PER_CLASS: usize = 50;
pub const BUILTIN_BLOB_SEPARATION: f64 = 0.06;
pub const BUILTIN_LINEAR_MAX_MARGIN: f64 = 0.04;
const DEFAULT_IMAGE_COUNT: usize = 20;
const DATA_SEED_SALT: u64 = 0x5EED_DA7A;

const OPTIMIZERS: [&str; 6] = ["opo-cauchy", "opo-gauss", "cma", "cma-diag", "random", "de"];

#[derive(Debug, Parser)]
#[command(name = "dfo-attack", version, about = "Black-box tiled adversarial attacks", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attack a set of images and report success rate and query counts.
    Attack(AttackArgs),
    /// Single-shot random tiled noise success rates over ε and tile counts.
    Sweep(SweepArgs),
    /// Run an optimizer on a benchmark function.
    Bench(BenchArgs),
    /// Query a model server's metadata and one probe image.
    CheckServer(CheckServerArgs),
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// builtin:linear[:SIDE], builtin:mlp[:SIDE], file:PATH or http:HOST:PORT
    #[arg(long)]
    pub model: ModelSource,
    /// TOML file with campaign settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, value_parser = positive_f64)]
    pub eps: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub tiles: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: Option<u64>,
    #[arg(long, value_parser = PossibleValuesParser::new(OPTIMIZERS).map(|s| s.parse::<OptimizerKind>().expect("listed")))]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, value_parser = PossibleValuesParser::new(["continuous", "discrete"]).map(|s| parse_form(&s)))]
    pub form: Option<ProblemForm>,
    #[arg(long, value_parser = PossibleValuesParser::new(["untargeted", "targeted"]).map(|s| parse_mode(&s)))]
    pub mode: Option<ModeKind>,
    #[arg(long, value_parser = PossibleValuesParser::new(["ce", "cw"]).map(|s| parse_loss(&s)))]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    /// Number of images to attack.
    #[arg(long)]
    pub count: Option<usize>,
    /// CSV of images, one per row: label then C·H·W pixel values in [0,1].
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Record per-attack wall time in results.csv.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: ModelSource,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_parser = non_negative_f64, default_value = "0.01,0.03,0.05,0.1")]
    pub eps: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..), default_value = "1,2,4,8,16")]
    pub tiles: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "cma", value_parser = PossibleValuesParser::new(OPTIMIZERS).map(|s| s.parse::<OptimizerKind>().expect("listed")))]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value = "sphere", value_parser = PossibleValuesParser::new(["sphere", "ellipsoid", "rosenbrock", "rastrigin"]).map(|s| s.parse::<BenchFunction>().expect("listed")))]
    pub function: BenchFunction,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 3000, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckServerArgs {
    /// HOST:PORT, http:HOST:PORT or http://HOST:PORT
    pub endpoint: String,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be >= 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_form(s: &str) -> ProblemForm {
    if s == "discrete" {
        ProblemForm::Discrete
    } else {
        ProblemForm::Continuous
    }
}

fn parse_mode(s: &str) -> ModeKind {
    if s == "targeted" {
        ModeKind::Targeted
    } else {
        ModeKind::Untargeted
    }
}

fn parse_loss(s: &str) -> LossKind {
    if s == "cw" {
        LossKind::CarliniWagner
    } else {
        LossKind::CrossEntropy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    Linear,
    Mlp,
}

/// Where the classifier comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSource {
    Builtin { kind: BuiltinKind, side: usize },
    File(PathBuf),
    Http(String),
}

impl FromStr for ModelSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (scheme, rest) = s.split_once(':').ok_or_else(|| format!("model source {s:?} has no scheme"))?;
        match scheme {
            "builtin" => {
                let (name, side) = match rest.split_once(':') {
                    Some((name, side)) => {
                        let side: usize = side.parse().map_err(|_| format!("bad image side {side:?}"))?;
                        if side == 0 {
                            return Err("image side must be >= 1".into());
                        }
                        (name, side)
                    }
                    None => (rest, BUILTIN_SIDE),
                };
                let kind = match name {
                    "linear" => BuiltinKind::Linear,
                    "mlp" => BuiltinKind::Mlp,
                    other => return Err(format!("unknown builtin model {other:?}")),
                };
                Ok(ModelSource::Builtin { kind, side })
            }
            "file" if !rest.is_empty() => Ok(ModelSource::File(PathBuf::from(rest))),
            "http" if !rest.is_empty() => Ok(ModelSource::Http(s.to_string())),
            _ => Err(format!("unsupported model source {s:?}")),
        }
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::Builtin { kind: BuiltinKind::Linear, side } => write!(f, "builtin:linear:{side}"),
            ModelSource::Builtin { kind: BuiltinKind::Mlp, side } => write!(f, "builtin:mlp:{side}"),
            ModelSource::File(p) => write!(f, "file:{}", p.display()),
            ModelSource::Http(e) => write!(f, "{e}"),
        }
    }
}

/// A model plus the images to run it on.
pub struct Workload {
    pub model: Box<dyn ModelOracle>,
    pub images: Vec<LabeledImage>,
}

/// Builds the model and image set. Built-in sources generate their own
/// images from `seed`; file and http sources need an images CSV.
pub fn load_workload(
    source: &ModelSource,
    images: Option<&Path>,
    count: Option<usize>,
    seed: u64,
) -> Result<Workload> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DATA_SEED_SALT);
    let count = count.unwrap_or(DEFAULT_IMAGE_COUNT);
    let (model, generated): (Box<dyn ModelOracle>, Vec<LabeledImage>) = match source {
        ModelSource::Builtin { kind: BuiltinKind::Linear, side } => {
            let p = toy_linear_problem(Shape::new(1, *side, *side), count, BUILTIN_LINEAR_MAX_MARGIN, &mut rng)?;
            (Box::new(p.model), p.images)
        }
        ModelSource::Builtin { kind: BuiltinKind::Mlp, side } => {
            let per_class = count.div_ceil(BUILTIN_MLP_CLASSES);
            let p = toy_mlp_problem(
                Shape::new(3, *side, *side),
                BUILTIN_MLP_CLASSES,
                BUILTIN_MLP_TRAIN_PER_CLASS,
                per_class,
                BUILTIN_BLOB_SEPARATION,
                &TrainConfig::default(),
                &mut rng,
            )?;
            let mut test = p.test;
            test.truncate(count);
            (Box::new(p.model), test)
        }
        ModelSource::File(path) => (Box::new(load_model(path)?), Vec::new()),
        ModelSource::Http(endpoint) => (Box::new(RemoteModel::connect(endpoint)?), Vec::new()),
    };
    let images = match images {
        Some(path) => {
            let mut all = read_images_csv(path, model.input_shape())?;
            if all.is_empty() {
                return Err(Error::invalid(format!("{} holds no images", path.display())));
            }
            all.truncate(count);
            all
        }
        None if generated.is_empty() => {
            return Err(Error::invalid(format!("{source} needs --images")));
        }
        None => generated,
    };
    if let Some(bad) = images.iter().find(|s| s.label >= model.classes()) {
        return Err(Error::invalid(format!("label {} out of range", bad.label)));
    }
    Ok(Workload { model, images })
}

/// Reads headerless rows of `label,p_0,…,p_{n-1}`.
pub fn read_images_csv(path: &Path, shape: Shape) -> Result<Vec<LabeledImage>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv(e.to_string()))?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let bad = |what: &str| Error::Csv(format!("row {}: {what}", row + 1));
        let mut fields = record.iter();
        let label = fields
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or_else(|| bad("bad label"))?;
        let data = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad pixel value"))?;
        if data.len() != shape.len() {
            return Err(bad(&format!("expected {} pixels, got {}", shape.len(), data.len())));
        }
        out.push(LabeledImage { image: ImageTensor::new(shape, data)?, label });
    }
    Ok(out)
}

/// Campaign settings from defaults, then the config file, then flags.
pub fn attack_config(args: &AttackArgs) -> Result<CampaignConfig> {
    let (mut config, file_sets_limit) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            (CampaignConfig::from_toml(&text)?, table.contains_key("query_limit"))
        }
        None => (CampaignConfig::default(), false),
    };
    if let Some(v) = args.eps {
        config.epsilon = v;
    }
    if let Some(v) = args.tiles {
        config.n_tiles = v as usize;
    }
    if let Some(v) = args.optimizer {
        config.optimizer = v;
    }
    if let Some(v) = args.form {
        config.form = v;
    }
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.loss {
        config.loss = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.workers {
        config.workers = v as usize;
    }
    if args.timing {
        config.timing = true;
    }
    match args.budget {
        Some(v) => config.query_limit = v,
        None if !file_sets_limit => config.query_limit = config.mode.default_budget(),
        None => {}
    }
    config.validate()?;
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}

fn run_attack_command(args: &AttackArgs, out: &mut dyn Write) -> Result<()> {
    let config = attack_config(args)?;
    let workload = load_workload(&args.model, args.images.as_deref(), args.count, config.seed)?;
    let stats = run_campaign(&config, &workload.images, workload.model.as_ref())?;
    writeln!(out, "model: {}", args.model)?;
    writeln!(
        out,
        "optimizer: {}  eps: {}  tiles: {}  budget: {}",
        config.optimizer, config.epsilon, config.n_tiles, config.query_limit
    )?;
    writeln!(out, "images: {}  attacked: {}  successes: {}", stats.results.len(), stats.attacked(), stats.successes())?;
    writeln!(out, "success rate: {}", stats.success_rate.map(|r| format!("{:.2}%", 100.0 * r)).unwrap_or_else(|| "n/a".into()))?;
    writeln!(out, "average queries: {}", fmt_opt(stats.average_queries))?;
    writeln!(out, "median queries: {}", fmt_opt(stats.median_queries))?;
    let errors = stats.results.iter().filter(|r| r.error.is_some()).count();
    if errors > 0 {
        writeln!(out, "oracle errors: {errors}")?;
    }
    if let Some(dir) = &args.out {
        let files = export_results(&stats, dir)?;
        writeln!(out, "wrote {}", files.results.display())?;
    }
    Ok(())
}

fn run_sweep_command(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let workload = load_workload(&args.model, args.images.as_deref(), args.count, args.seed)?;
    let tiles: Vec<usize> = args.tiles.iter().map(|t| *t as usize).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let matrix = tile_sweep(workload.model.as_ref(), &workload.images, &args.eps, &tiles, &mut rng)?;
    writeln!(out, "images: {}  correctly classified: {}", workload.images.len(), matrix.attacked)?;
    write!(out, "{:>8}", "eps")?;
    for t in &tiles {
        write!(out, " {t:>6}")?;
    }
    writeln!(out)?;
    for (eps, row) in matrix.epsilons.iter().zip(&matrix.rates) {
        write!(out, "{eps:>8}")?;
        for r in row {
            write!(out, " {r:>6.3}")?;
        }
        writeln!(out)?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("sweep.csv");
        matrix.write_csv(fs::File::create(&path)?)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn run_bench_command(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let dim = args.dim as usize;
    let options = MinimizeOptions {
        initial_mean: Some(args.function.start(dim)),
        trace: true,
        ..MinimizeOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let f = args.function;
    let outcome = minimize(
        |x: &[f64]| Ok::<f64, Error>(f.evaluate(x)),
        args.optimizer,
        dim,
        args.budget,
        |_| false,
        &mut rng,
        &options,
    )?;
    writeln!(out, "optimizer: {}  function: {}  dimension: {dim}", args.optimizer, f.name())?;
    writeln!(out, "evaluations: {}", outcome.evaluations)?;
    writeln!(out, "best value: {:e}", outcome.best_value)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("trace.csv");
        write_trace_csv(&outcome.trace, fs::File::create(&path)?)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn run_check_server(args: &CheckServerArgs, out: &mut dyn Write) -> Result<()> {
    let model = RemoteModel::connect(&args.endpoint)?;
    let shape = model.input_shape();
    writeln!(out, "endpoint: {}", model.endpoint())?;
    writeln!(out, "shape: [{},{},{}]", shape.channels, shape.height, shape.width)?;
    writeln!(out, "classes: {}", model.classes())?;
    let probe = ImageTensor::filled(shape, 0.5)?;
    let logits = model.logits(&probe)?;
    writeln!(out, "probe prediction: {}", logits.argmax())?;
    Ok(())
}

/// Runs one parsed command.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Attack(a) => run_attack_command(a, out),
        Command::Sweep(a) => run_sweep_command(a, out),
        Command::Bench(a) => run_bench_command(a, out),
        Command::CheckServer(a) => run_check_server(a, out),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn main_with_args<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
