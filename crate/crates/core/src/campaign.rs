//! Attack campaigns over image sets: per-image attacks with exact query
//! accounting, aggregate statistics, the single-shot tile sweep, and CSV
//! export.

use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfo::{minimize, MinimizeOptions, OptimizerKind};
use crate::error::{Error, Result};
use crate::models::{LabeledImage, ModelOracle};
use crate::objectives::{AttackMode, AttackObjective, AttackSpec, DiscreteForm, ProblemForm, QueryCounter};
use crate::tensor::{ImageTensor, LossKind};
use crate::tiling::{random_signed_tiles, single_shot_tiled_attack, TileGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    #[default]
    Untargeted,
    Targeted,
}

impl ModeKind {
    /// Default query budget: 10,000 untargeted, 100,000 targeted.
    pub fn default_budget(self) -> u64 {
        match self {
            ModeKind::Untargeted => 10_000,
            ModeKind::Targeted => 100_000,
        }
    }
}

/// Campaign settings. Field names double as the keys of the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub optimizer: OptimizerKind,
    pub form: ProblemForm,
    pub mode: ModeKind,
    pub epsilon: f64,
    pub n_tiles: usize,
    pub query_limit: u64,
    /// Number of images taken from the front of the image set (0 = all).
    pub image_count: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub per_channel: bool,
    pub discrete_form: DiscreteForm,
    /// Start the optimizer at a random tiled sign pattern instead of zero.
    pub warm_start: bool,
    /// `|τ_i|` of the warm start (and `|a_i - b_i|` in the discrete form).
    pub warm_start_magnitude: f64,
    pub workers: usize,
    /// Record wall-clock time per attack. Off keeps outputs reproducible.
    pub timing: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::CmaFull,
            form: ProblemForm::Continuous,
            mode: ModeKind::Untargeted,
            epsilon: 0.05,
            n_tiles: 50,
            query_limit: ModeKind::Untargeted.default_budget(),
            image_count: 0,
            seed: 0,
            loss: LossKind::CrossEntropy,
            per_channel: true,
            discrete_form: DiscreteForm::TwoVariable,
            warm_start: true,
            warm_start_magnitude: 0.5,
            workers: 1,
            timing: false,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.query_limit == 0 {
            return Err(Error::Config("query_limit must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.n_tiles == 0 {
            return Err(Error::Config("n_tiles must be >= 1".into()));
        }
        if !(self.warm_start_magnitude > 0.0 && self.warm_start_magnitude.is_finite()) {
            return Err(Error::Config("warm_start_magnitude must be > 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn grid(&self, image: &ImageTensor) -> Result<TileGrid> {
        TileGrid::with_channels(image.shape(), self.n_tiles, self.per_channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub image_id: usize,
    pub initially_correct: bool,
    pub success: bool,
    pub queries_used: u64,
    /// Attack loss at the last query; `None` when nothing was queried.
    pub final_loss: Option<f64>,
    pub wall_ms: u64,
    /// Oracle or setup failure that aborted this image.
    pub error: Option<String>,
}

impl AttackResult {
    fn skipped(image_id: usize, initially_correct: bool, error: Option<String>) -> Self {
        Self {
            image_id,
            initially_correct,
            success: false,
            queries_used: 0,
            final_loss: None,
            wall_ms: 0,
            error,
        }
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-image seed derived from the campaign seed and the image id.
pub fn derive_seed(seed: u64, image_id: usize) -> u64 {
    mix64(seed ^ mix64(image_id as u64))
}

/// Initial search point: a random tiled sign pattern scaled into the
/// parameterisation, or zero when warm starts are off.
fn initial_point(config: &CampaignConfig, grid: &TileGrid, dimension: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if !config.warm_start {
        return vec![0.0; dimension];
    }
    let w = config.warm_start_magnitude;
    let signs = random_signed_tiles(grid, 1.0, rng);
    match (config.form, config.discrete_form) {
        (ProblemForm::Continuous, _) | (ProblemForm::Discrete, DiscreteForm::OneVariable) => {
            signs.iter().map(|s| s * w).collect()
        }
        (ProblemForm::Discrete, DiscreteForm::TwoVariable) => signs
            .iter()
            .map(|s| s * w / 2.0)
            .chain(signs.iter().map(|s| -s * w / 2.0))
            .collect(),
    }
}

/// Attacks one image. The clean classification check is not charged to the
/// query budget; misclassified images are skipped. Oracle failures end the
/// image with an error-marked result.
pub fn run_attack<M: ModelOracle + ?Sized>(
    config: &CampaignConfig,
    image_id: usize,
    spec: &AttackSpec,
    model: &M,
) -> AttackResult {
    let started = Instant::now();
    let clean = match model.logits(&spec.image) {
        Ok(l) => l,
        Err(e) => return AttackResult::skipped(image_id, false, Some(e.to_string())),
    };
    if clean.argmax() != spec.true_label {
        return AttackResult::skipped(image_id, false, None);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, image_id));
    let corner_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let counter = match QueryCounter::new(config.query_limit) {
        Ok(c) => c,
        Err(e) => return AttackResult::skipped(image_id, true, Some(e.to_string())),
    };
    let mut objective = AttackObjective::new(
        spec,
        model,
        counter,
        config.form,
        config.discrete_form,
        Box::new(corner_rng),
    );
    let dimension = objective.search_dimension();
    let options = MinimizeOptions {
        initial_mean: Some(initial_point(config, &spec.grid, dimension, &mut rng)),
        ..MinimizeOptions::default()
    };

    let hit = Cell::new(false);
    let outcome = minimize(
        |x: &[f64]| {
            let v = objective.evaluate(x);
            hit.set(objective.last_success());
            v
        },
        config.optimizer,
        dimension,
        config.query_limit,
        |_| hit.get(),
        &mut rng,
        &options,
    );
    let error = match outcome {
        Ok(o) => o.failure.map(|e| e.to_string()),
        Err(e) => Some(e.to_string()),
    };
    AttackResult {
        image_id,
        initially_correct: true,
        success: objective.succeeded(),
        queries_used: objective.queries_used(),
        final_loss: objective.last_loss(),
        wall_ms: if config.timing { started.elapsed().as_millis() as u64 } else { 0 },
        error,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignStats {
    pub results: Vec<AttackResult>,
    pub query_limit: u64,
    /// Successes over initially correct images; `None` when there are none.
    pub success_rate: Option<f64>,
    /// Mean queries over successful attacks.
    pub average_queries: Option<f64>,
    /// Median queries over successful attacks.
    pub median_queries: Option<f64>,
    /// Mean queries over all attacked images, failures included.
    pub average_queries_all: Option<f64>,
    pub median_queries_all: Option<f64>,
}

fn mean(values: &[u64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().map(|v| *v as f64).sum::<f64>() / values.len() as f64)
}

/// Median; the mean of the two middle values for even counts.
fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] as f64 + sorted[mid] as f64) / 2.0
    })
}

impl CampaignStats {
    pub fn from_results(mut results: Vec<AttackResult>, query_limit: u64) -> Self {
        results.sort_by_key(|r| r.image_id);
        let attacked: Vec<&AttackResult> = results.iter().filter(|r| r.initially_correct).collect();
        let successes: Vec<u64> = attacked.iter().filter(|r| r.success).map(|r| r.queries_used).collect();
        let all: Vec<u64> = attacked.iter().map(|r| r.queries_used).collect();
        let success_rate =
            (!attacked.is_empty()).then(|| successes.len() as f64 / attacked.len() as f64);
        Self {
            success_rate,
            average_queries: mean(&successes),
            median_queries: median(&successes),
            average_queries_all: mean(&all),
            median_queries_all: median(&all),
            query_limit,
            results,
        }
    }

    pub fn attacked(&self) -> usize {
        self.results.iter().filter(|r| r.initially_correct).count()
    }

    pub fn successes(&self) -> usize {
        self.results.iter().filter(|r| r.success).count()
    }

    pub fn total_queries(&self) -> u64 {
        self.results.iter().map(|r| r.queries_used).sum()
    }

    /// `(queries, cumulative success rate)` at every distinct query count of
    /// a success, closed by a point at the query limit.
    pub fn cumulative_curve(&self) -> Vec<(u64, f64)> {
        let attacked = self.attacked();
        if attacked == 0 {
            return Vec::new();
        }
        let mut counts: Vec<u64> =
            self.results.iter().filter(|r| r.success).map(|r| r.queries_used).collect();
        counts.sort_unstable();
        let mut curve = Vec::new();
        for (i, q) in counts.iter().enumerate() {
            if counts.get(i + 1) != Some(q) {
                curve.push((*q, (i + 1) as f64 / attacked as f64));
            }
        }
        if curve.last().map(|(q, _)| *q) != Some(self.query_limit) {
            curve.push((self.query_limit, counts.len() as f64 / attacked as f64));
        }
        curve
    }
}

/// Attacks every image (the first `config.image_count` when non-zero).
/// Targets for targeted campaigns are drawn up front from the campaign seed,
/// so the outcome does not depend on the worker count.
pub fn run_campaign<M: ModelOracle + ?Sized>(
    config: &CampaignConfig,
    images: &[LabeledImage],
    model: &M,
) -> Result<CampaignStats> {
    config.validate()?;
    let images = match config.image_count {
        0 => images,
        n => &images[..n.min(images.len())],
    };
    if images.is_empty() {
        return Err(Error::invalid("campaign needs at least one image"));
    }
    let classes = model.classes();
    let mut campaign_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut jobs = Vec::with_capacity(images.len());
    for (id, sample) in images.iter().enumerate() {
        let mode = match config.mode {
            ModeKind::Untargeted => AttackMode::Untargeted,
            ModeKind::Targeted => {
                let mut target = campaign_rng.random_range(0..classes - 1);
                if target >= sample.label {
                    target += 1;
                }
                AttackMode::Targeted { target }
            }
        };
        let spec = AttackSpec::new(
            sample.image.clone(),
            sample.label,
            mode,
            config.epsilon,
            config.loss,
            config.grid(&sample.image)?,
        )?;
        jobs.push((id, spec));
    }

    let run = |(id, spec): &(usize, AttackSpec)| run_attack(config, *id, spec, model);
    let results: Vec<AttackResult> = if config.workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    Ok(CampaignStats::from_results(results, config.query_limit))
}

/// Single-shot success rates, `rates[e][t]` for `epsilons[e]` and `tile_counts[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMatrix {
    pub epsilons: Vec<f64>,
    pub tile_counts: Vec<usize>,
    pub rates: Vec<Vec<f64>>,
    /// Images that passed the clean-classification filter.
    pub attacked: usize,
}

impl SweepMatrix {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,n_tiles,success_rate")?;
        for (e, row) in self.epsilons.iter().zip(&self.rates) {
            for (t, rate) in self.tile_counts.iter().zip(row) {
                writeln!(out, "{e},{t},{rate}")?;
            }
        }
        Ok(())
    }
}

/// One random tiled sign pattern per image and per `(ε, tile count)` cell.
/// Images the model misclassifies are dropped first (those checks are
/// one query per image).
pub fn tile_sweep<M, R>(
    model: &M,
    images: &[LabeledImage],
    epsilons: &[f64],
    tile_counts: &[usize],
    rng: &mut R,
) -> Result<SweepMatrix>
where
    M: ModelOracle + ?Sized,
    R: Rng + ?Sized,
{
    let mut correct = Vec::new();
    for sample in images {
        if model.predict(&sample.image)? == sample.label {
            correct.push(sample);
        }
    }
    let grids = tile_counts
        .iter()
        .map(|n| {
            let shape = correct.first().map(|s| s.image.shape()).unwrap_or(model.input_shape());
            TileGrid::new(shape, *n)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rates = Vec::with_capacity(epsilons.len());
    for eps in epsilons {
        let mut row = Vec::with_capacity(grids.len());
        for grid in &grids {
            let mut fooled = 0usize;
            for sample in &correct {
                if single_shot_tiled_attack(model, &sample.image, sample.label, *eps, grid, rng)?.success {
                    fooled += 1;
                }
            }
            row.push(if correct.is_empty() { 0.0 } else { fooled as f64 / correct.len() as f64 });
        }
        rates.push(row);
    }
    Ok(SweepMatrix {
        epsilons: epsilons.to_vec(),
        tile_counts: tile_counts.to_vec(),
        rates,
        attacked: correct.len(),
    })
}

pub const RESULTS_HEADER: &str = "image_id,initially_correct,success,queries,final_loss,wall_ms";
pub const CURVE_HEADER: &str = "queries,cumulative_success_rate";
pub const SUMMARY_HEADER: &str =
    "images,attacked,successes,success_rate,average_queries,median_queries,average_queries_all,median_queries_all,query_limit";

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    image_id: usize,
    initially_correct: bool,
    success: bool,
    queries: u64,
    final_loss: Option<f64>,
    wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv<W: Write>(results: &[AttackResult], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(RESULTS_HEADER.split(',')).map_err(csv_err)?;
    for r in results {
        writer
            .serialize(ResultRow {
                image_id: r.image_id,
                initially_correct: r.initially_correct,
                success: r.success,
                queries: r.queries_used,
                final_loss: r.final_loss,
                wall_ms: r.wall_ms,
            })
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_results_csv<R: std::io::Read>(input: R) -> Result<Vec<AttackResult>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Csv(format!("unexpected header {:?}", header.join(","))));
    }
    reader
        .deserialize::<ResultRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(AttackResult {
                image_id: row.image_id,
                initially_correct: row.initially_correct,
                success: row.success,
                queries_used: row.queries,
                final_loss: row.final_loss,
                wall_ms: row.wall_ms,
                error: None,
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

pub fn write_curve_csv<W: Write>(stats: &CampaignStats, mut out: W) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for (q, rate) in stats.cumulative_curve() {
        writeln!(out, "{q},{rate}")?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(stats: &CampaignStats, mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        stats.results.len(),
        stats.attacked(),
        stats.successes(),
        opt(stats.success_rate),
        opt(stats.average_queries),
        opt(stats.median_queries),
        opt(stats.average_queries_all),
        opt(stats.median_queries_all),
        stats.query_limit
    )?;
    Ok(())
}

/// Paths written by [`export_results`].
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub results: PathBuf,
    pub curve: PathBuf,
    pub summary: PathBuf,
}

/// Writes `results.csv`, `cumulative.csv` and `summary.csv` into `dir`.
pub fn export_results(stats: &CampaignStats, dir: impl AsRef<Path>) -> Result<ExportedFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = ExportedFiles {
        results: dir.join("results.csv"),
        curve: dir.join("cumulative.csv"),
        summary: dir.join("summary.csv"),
    };
    write_results_csv(&stats.results, fs::File::create(&files.results)?)?;
    write_curve_csv(stats, fs::File::create(&files.curve)?)?;
    write_summary_csv(stats, fs::File::create(&files.summary)?)?;
    Ok(files)
}
