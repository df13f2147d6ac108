//! `redress`: one binary for every workflow step.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use redress_core::checkpoint::Checkpoint;
use redress_core::evaluation::{
    constant_baseline, detector_data, parse_ratings_csv, ranking_stats, run_swap_protocol, Detector, DetectorConfig,
    RealTarget, SwapGenerator, SwapReport,
};
use redress_core::pipeline::{interpolation_walk, segmap_preview, tile, OneStepModel, Pipeline, Seeds, WalkMode};
use redress_core::pngio::{decode_labels, decode_rgb, encode_labels, encode_rgb};
use redress_core::synth::{generate_dataset, load_dataset};
use redress_core::training::{train_stage, Stage, TrainConfig, CONFIG_KEYS};
use redress_core::types::{argmax_labels, Attributes, ImageRGB, PersonRecord};

/// Environment variable naming the default data and checkpoint root.
pub const HOME_VAR: &str = "FASHION_SYNTH_HOME";

/// Root for defaults: `$FASHION_SYNTH_HOME`, else `./fashion-synth`.
pub fn home() -> PathBuf {
    std::env::var_os(HOME_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fashion-synth"))
}

fn default_data() -> PathBuf {
    home().join("data")
}

fn default_checkpoints() -> PathBuf {
    home().join("checkpoints")
}

#[derive(Parser, Debug)]
#[command(name = "redress", version, about = "Redress people in images from a sentence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic paper-doll dataset.
    SynthData(SynthArgs),
    /// Train one stage (or baseline) and write per-epoch checkpoints.
    Train(TrainArgs),
    /// Redress one photo: writes shape_map.png and image.png.
    Infer(InferArgs),
    /// Attribute-swap protocol or rating statistics.
    Eval(EvalArgs),
    /// Image grids: persons × captions, one wearer, or one text.
    Grid(GridArgs),
    /// Interpolation walk between two redressings.
    Interpolate(InterpolateArgs),
    /// HTTP service over trained checkpoints.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $FASHION_SYNTH_HOME/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
}

fn config_help() -> String {
    let mut s = String::from("Config file: flat `key = value` lines, `#` comments; flags override the file.\nKeys:\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<15} {d}\n"));
    }
    s
}

#[derive(Args, Debug)]
#[command(after_help = config_help())]
pub struct TrainArgs {
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Checkpoint directory [default: $FASHION_SYNTH_HOME/checkpoints].
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Second-stage checkpoint to pair with the shape stage.
    #[arg(long, value_enum, default_value_t = ImageStage::Image)]
    pub image_stage: ImageStage,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageStage {
    Image,
    NonComp,
}

impl ModelArgs {
    fn dir(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(default_checkpoints)
    }

    fn pipeline(&self) -> anyhow::Result<Pipeline> {
        let dir = self.dir();
        let second = match self.image_stage {
            ImageStage::Image => Stage::Image,
            ImageStage::NonComp => Stage::NonComp,
        };
        Ok(Pipeline::new(
            Checkpoint::load_stage(&dir.join("shape.ckpt"), Stage::Shape)?,
            Checkpoint::load_stage(&dir.join(format!("{second}.ckpt")), second)?,
        )?)
    }
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Palette PNG with label indices 0..=6.
    #[arg(long)]
    pub segmap: PathBuf,
    #[arg(long)]
    pub caption: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma list of set flags: female, long-hair, sunglasses, hat.
    #[arg(long, default_value = "")]
    pub attributes: String,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Swap,
    Rank,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TwoStage,
    NonComp,
    #[value(name = "one-step-8-7")]
    OneStep87,
    #[value(name = "one-step-8-4")]
    OneStep84,
    UpperBound,
    Constant,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Test dataset for the swap protocol.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset the attribute detector is trained on [default: $FASHION_SYNTH_HOME/data].
    #[arg(long)]
    pub detector_data: Option<PathBuf>,
    /// Load this detector instead of training one; written after training if absent.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub detector_epochs: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "two-stage,upper-bound,constant")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Ratings CSV (`item_id,method,rank`) for the rank protocol.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridMode {
    Matrix,
    SameWearer,
    SameText,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long, value_enum)]
    pub mode: GridMode,
    /// Source records [default: $FASHION_SYNTH_HOME/data].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of wearers (rows).
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    /// Number of captions (columns).
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    /// First record used as a wearer.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long, value_enum)]
    pub mode: CliWalkMode,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Record index of endpoint A.
    #[arg(long, default_value_t = 0)]
    pub from: usize,
    /// Record index of endpoint B.
    #[arg(long, default_value_t = 1)]
    pub to: usize,
    /// Caption of endpoint A [default: record A's own].
    #[arg(long)]
    pub caption_a: Option<String>,
    /// Caption of endpoint B [default: record B's own].
    #[arg(long)]
    pub caption_b: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Endpoint A uses this seed, endpoint B the next one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CliWalkMode {
    Shape,
    Texture,
    Both,
}

impl From<CliWalkMode> for WalkMode {
    fn from(m: CliWalkMode) -> Self {
        match m {
            CliWalkMode::Shape => WalkMode::Shape,
            CliWalkMode::Texture => WalkMode::Texture,
            CliWalkMode::Both => WalkMode::Both,
        }
    }
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Session store file [default: $FASHION_SYNTH_HOME/sessions.jsonl].
    #[arg(long)]
    pub store: Option<PathBuf>,
}

/// A command-line mistake found after parsing; exits 2 like a parse error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::SynthData(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Serve(a) => serve(a),
    }
}

#[cfg(feature = "serve")]
fn serve(a: ServeArgs) -> anyhow::Result<()> {
    redress_service::serve_blocking(redress_service::ServeOptions {
        port: a.port,
        checkpoints: a.checkpoints.unwrap_or_else(default_checkpoints),
        store: a.store.unwrap_or_else(|| home().join("sessions.jsonl")),
    })
}

#[cfg(not(feature = "serve"))]
fn serve(_: ServeArgs) -> anyhow::Result<()> {
    anyhow::bail!("built without the `serve` feature")
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let out = a.out.unwrap_or_else(default_data);
    let records = generate_dataset(a.count, a.seed, a.resolution, &out)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

/// Resolves file config, then flags, then the environment defaults.
pub fn train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_kv(&text)?;
    }
    let flags: [(&str, Option<String>); 9] = [
        ("stage", a.stage.clone()),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
        ("width", a.width.map(|v| v.to_string())),
        ("resolution", a.resolution.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("dataset", a.dataset.as_ref().map(|p| p.display().to_string())),
        ("checkpoint_dir", a.checkpoints.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(|e| UsageError(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
    }
    if a.stage.is_none() && !stage_in_file(a) {
        return Err(UsageError("no stage given: pass --stage or set `stage` in the config file".into()).into());
    }
    cfg.dataset.get_or_insert_with(default_data);
    cfg.checkpoint_dir.get_or_insert_with(default_checkpoints);
    cfg.validate()?;
    Ok(cfg)
}

fn stage_in_file(a: &TrainArgs) -> bool {
    a.config
        .as_ref()
        .and_then(|p| fs::read_to_string(p).ok())
        .is_some_and(|t| {
            t.lines()
                .any(|l| l.split('#').next().unwrap_or("").split_once('=').is_some_and(|(k, _)| k.trim() == "stage"))
        })
}

fn records_of(dir: &Path) -> anyhow::Result<Vec<PersonRecord>> {
    Ok(load_dataset(dir)?.into_iter().map(|(_, r)| r).collect())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = train_config(&a)?;
    let records = records_of(cfg.dataset.as_ref().unwrap())?;
    let out = train_stage(&cfg, &records)?;
    let dir = cfg.checkpoint_dir.as_ref().unwrap();
    println!(
        "{}: {} updates, final checkpoint {}",
        cfg.stage,
        out.steps.len(),
        dir.join(format!("{}.ckpt", cfg.stage)).display()
    );
    Ok(())
}

pub fn parse_attributes(list: &str) -> anyhow::Result<Attributes> {
    let mut a = Attributes::default();
    for flag in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match flag {
            "female" => a.gender = true,
            "long-hair" => a.long_hair = true,
            "sunglasses" => a.sunglasses = true,
            "hat" => a.hat = true,
            other => bail!("unknown attribute `{other}` (female, long-hair, sunglasses, hat)"),
        }
    }
    Ok(a)
}

fn write_png(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn infer(a: InferArgs) -> anyhow::Result<()> {
    let pipeline = a.model.pipeline()?;
    let image = decode_rgb(&fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?)?;
    let segmap = decode_labels(
        &fs::read(&a.segmap).with_context(|| format!("reading {}", a.segmap.display()))?,
        &a.segmap,
    )?;
    let source = PersonRecord::new(image, segmap, a.caption.clone(), parse_attributes(&a.attributes)?)?;
    let out = pipeline.infer(&source, &a.caption, Seeds::from_seed(a.seed))?;
    fs::create_dir_all(&a.out)?;
    write_png(&a.out.join("shape_map.png"), &encode_labels(&argmax_labels(&out.shape_map))?)?;
    write_png(&a.out.join("image.png"), &encode_rgb(&out.image)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn method_model(m: Method, dir: &Path) -> anyhow::Result<Option<Box<dyn SwapGenerator>>> {
    let load = |s: Stage| Checkpoint::load_stage(&dir.join(format!("{s}.ckpt")), s);
    Ok(match m {
        Method::TwoStage => Some(Box::new(Pipeline::new(load(Stage::Shape)?, load(Stage::Image)?)?)),
        Method::NonComp => Some(Box::new(Pipeline::new(load(Stage::Shape)?, load(Stage::NonComp)?)?)),
        Method::OneStep87 => Some(Box::new(OneStepModel::new(load(Stage::OneStep87)?)?)),
        Method::OneStep84 => Some(Box::new(OneStepModel::new(load(Stage::OneStep84)?)?)),
        Method::UpperBound => Some(Box::new(RealTarget)),
        Method::Constant => None,
    })
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out)?;
    let (json, table) = match a.protocol {
        Protocol::Swap => {
            let test = records_of(a.dataset.as_deref().ok_or_else(|| anyhow!("--dataset is required for the swap protocol"))?)?;
            let detector = match &a.detector {
                Some(p) if p.is_file() => Detector::load(p)?,
                _ => {
                    let train = records_of(&a.detector_data.clone().unwrap_or_else(default_data))?;
                    let (images, labels) = detector_data(&train)?;
                    let cfg = DetectorConfig {
                        epochs: a.detector_epochs,
                        seed: a.seed,
                        ..DetectorConfig::default()
                    };
                    let d = Detector::train(&images, &labels, &cfg)?;
                    if let Some(p) = &a.detector {
                        d.save(p, &cfg)?;
                    }
                    d
                }
            };
            let dir = a.checkpoints.clone().unwrap_or_else(default_checkpoints);
            let mut results = Vec::new();
            for &m in &a.methods {
                results.push(match method_model(m, &dir)? {
                    Some(model) => run_swap_protocol(model.as_ref(), &test, &detector, a.seed)?,
                    None => constant_baseline(&test, a.seed)?,
                });
            }
            let report = SwapReport::new(a.seed, test.len(), &results);
            (serde_json::to_string_pretty(&report)?, report.table())
        }
        Protocol::Rank => {
            let path = a.ratings.as_deref().ok_or_else(|| anyhow!("--ratings is required for the rank protocol"))?;
            let stats = ranking_stats(&parse_ratings_csv(&fs::read_to_string(path)?)?)?;
            (serde_json::to_string_pretty(&stats)?, stats.table())
        }
    };
    fs::write(a.out.join("report.json"), json + "\n")?;
    fs::write(a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn grid(a: GridArgs) -> anyhow::Result<()> {
    let pipeline = a.model.pipeline()?;
    let records = records_of(&a.dataset.clone().unwrap_or_else(default_data))?;
    let (rows, cols) = match a.mode {
        GridMode::Matrix => (a.rows, a.cols),
        GridMode::SameWearer => (1, a.cols),
        GridMode::SameText => (a.rows, 1),
    };
    let need = a.index + rows + cols;
    if records.len() < need {
        bail!("grid needs {need} records, dataset has {}", records.len());
    }
    let wearers = &records[a.index..a.index + rows];
    let texts = &records[a.index + rows..a.index + rows + cols];
    let mut grid_rows = Vec::new();
    for (r, w) in wearers.iter().enumerate() {
        let mut row: Vec<ImageRGB> = vec![w.image.clone()];
        for (c, t) in texts.iter().enumerate() {
            let seed = a.seed.wrapping_add((r * cols + c) as u64);
            row.push(pipeline.infer(w, &t.caption, Seeds::from_seed(seed))?.image);
        }
        grid_rows.push(row);
    }
    write_png(&a.out, &encode_rgb(&tile(&grid_rows)?)?)?;
    for (c, t) in texts.iter().enumerate() {
        println!("column {}: {}", c + 1, t.caption);
    }
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> anyhow::Result<()> {
    let pipeline = a.model.pipeline()?;
    let records = records_of(&a.dataset.clone().unwrap_or_else(default_data))?;
    let pick = |i: usize| records.get(i).ok_or_else(|| anyhow!("record {i} out of range ({} records)", records.len()));
    let (ra, rb) = (pick(a.from)?, pick(a.to)?);
    let ca = a.caption_a.clone().unwrap_or_else(|| ra.caption.clone());
    let cb = a.caption_b.clone().unwrap_or_else(|| rb.caption.clone());
    let ia = pipeline.inputs(ra, &ca, Seeds::from_seed(a.seed))?;
    let ib = pipeline.inputs(rb, &cb, Seeds::from_seed(a.seed.wrapping_add(1)))?;
    let frames = interpolation_walk(&pipeline, &ia, &ib, a.mode.into(), a.steps)?;
    let maps = frames.iter().map(|f| segmap_preview(&f.shape_map)).collect();
    let images = frames.into_iter().map(|f| f.image).collect();
    write_png(&a.out, &encode_rgb(&tile(&[maps, images])?)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
