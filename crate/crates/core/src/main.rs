use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use facedyn::dynpred::{
    self, data::SinusoidFamily, load_predictor, save_predictor, Supervision, TargetConditioning, TrainConfig,
    TrainMode, TrajectoryDataset, VertexSpace,
};
use facedyn::mmodel::{
    fit_landmarks, load_model, read_coeff_sequence, save_model, synth, write_coeff_sequence, FitOptions, MorphableModel,
};
use facedyn::pipeline::{self, LandmarkFile, RenderJob, RetargetMode, TargetPath};
use facedyn::spmap::RasterConfig;
use facedyn::{Error, Result};

const SEED_ENV: &str = "FACEDYN_SEED";

#[derive(Parser)]
#[command(name = "facedyn", version, about = "3D face model fitting, sparse texture priors and dynamics prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit coefficients to 68 landmarks.
    Fit(FitArgs),
    /// Transfer reference expression (and pose) onto the source face.
    Retarget(RetargetArgs),
    /// Free-running prediction of future frames from the source face.
    Predict(PredictArgs),
    /// Predict frames from the source towards a target.
    PredictToTarget(PredictTargetArgs),
    /// Render one sparse prior.
    RenderPrior(RenderPriorArgs),
    /// Train a dynamics predictor on coefficient sequences.
    #[command(name = "train-3ddp")]
    Train3ddp(TrainArgs),
    /// PSNR/SSIM/LRMS over two directories of same-named PNGs.
    Metrics(MetricsArgs),
    /// Write a synthetic model, source face and trajectories.
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
struct RasterArgs {
    /// Triangle interval n.
    #[arg(long, default_value_t = 1)]
    interval: usize,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 128)]
    height: u32,
    /// Nearest-neighbour instead of bilinear sampling.
    #[arg(long)]
    nearest: bool,
    /// Draw back-facing triangles too.
    #[arg(long)]
    no_cull: bool,
}

impl RasterArgs {
    fn config(&self) -> RasterConfig {
        RasterConfig {
            width: self.width,
            height: self.height,
            bilinear: !self.nearest,
            cull_backfaces: !self.no_cull,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source_image: PathBuf,
    /// JSON-lines file holding the source's coefficient vector.
    #[arg(long)]
    source_coeffs: PathBuf,
}

struct Source {
    model: MorphableModel,
    image: image::RgbImage,
    coeffs: facedyn::mmodel::CoeffVector,
}

impl SourceArgs {
    fn load(&self) -> Result<Source> {
        Ok(Source {
            model: load_model(&self.model)?,
            image: pipeline::load_rgb(&self.source_image)?,
            coeffs: pipeline::read_single_coeffs(&self.source_coeffs)?,
        })
    }
}

impl Source {
    fn job<'a>(&'a self, raster: &'a RasterConfig, interval: usize) -> RenderJob<'a> {
        RenderJob {
            model: &self.model,
            source_image: &self.image,
            source_coeffs: &self.coeffs,
            interval,
            raster,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Landmark JSON, `{"points": [[x, y], ...]}`.
    #[arg(long)]
    landmarks: PathBuf,
    /// Output JSON-lines file with the fitted coefficients.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetargetModeArg {
    Expr,
    Talk,
}

#[derive(Args)]
struct RetargetArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Reference coefficient sequence (JSON lines).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_enum)]
    mode: RetargetModeArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    raster: RasterArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    predictor: PathBuf,
    /// Number of predicted frames.
    #[arg(long, short = 'T', default_value_t = dynpred::DEFAULT_SEQ_LEN)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    raster: RasterArgs,
}

#[derive(Args)]
struct PredictTargetArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    target_coeffs: PathBuf,
    #[arg(long, required_unless_present = "interpolate", conflicts_with = "interpolate")]
    predictor: Option<PathBuf>,
    /// Straight-line baseline instead of a predictor.
    #[arg(long)]
    interpolate: bool,
    /// How the target enters the cell state; not stored in checkpoints.
    #[arg(long, value_enum, default_value_t = ConditioningArg::Replace)]
    conditioning: ConditioningArg,
    #[arg(long, short = 'T', default_value_t = dynpred::DEFAULT_SEQ_LEN)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    raster: RasterArgs,
}

#[derive(Args)]
struct RenderPriorArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Target coefficients; defaults to the source's.
    #[arg(long)]
    target_coeffs: Option<PathBuf>,
    #[arg(long)]
    out_prior: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    #[command(flatten)]
    raster: RasterArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainModeArg {
    Free,
    Target,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConditioningArg {
    Replace,
    Add,
}

impl From<ConditioningArg> for TargetConditioning {
    fn from(c: ConditioningArg) -> Self {
        match c {
            ConditioningArg::Replace => TargetConditioning::ReplaceCell,
            ConditioningArg::Add => TargetConditioning::AddToCell,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SupervisionArg {
    GroundTruth,
    Interpolation,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sequence files or directories of `*.jsonl` files.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum)]
    mode: TrainModeArg,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file for the per-epoch loss history.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    learn_rate: f64,
    #[arg(long, default_value_t = dynpred::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = dynpred::DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = dynpred::DEFAULT_LAMBDA1)]
    lambda1: f64,
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Leading inputs taken from ground truth; 1 means `d_0` only.
    #[arg(long, default_value_t = 1)]
    teacher_steps: usize,
    #[arg(long)]
    no_fixed_point: bool,
    #[arg(long, default_value_t = 1.0)]
    fixed_point_weight: f64,
    /// Compare camera-space vertices (pose applied) in the vertex loss.
    #[arg(long)]
    vertex_loss_with_pose: bool,
    #[arg(long, value_enum, default_value_t = ConditioningArg::Replace)]
    conditioning: ConditioningArg,
    #[arg(long, value_enum, default_value_t = SupervisionArg::GroundTruth)]
    supervision: SupervisionArg,
    /// Overridden by the FACEDYN_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Also compute LRMS from `<stem>.json` landmark files.
    #[arg(long)]
    landmarks: bool,
    /// Report LRMS in pixels instead of bounding-box-diagonal units.
    #[arg(long)]
    raw_lrms: bool,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    rows: usize,
    #[arg(long, default_value_t = 40)]
    cols: usize,
    /// Reference sequence length.
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Training clips.
    #[arg(long, default_value_t = 20)]
    clips: usize,
    /// Frames per training clip.
    #[arg(long, default_value_t = 25)]
    clip_len: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    /// Overridden by the FACEDYN_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(Error::InvalidInput(format!("{SEED_ENV}: {e}"))),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let observed = LandmarkFile::read(&a.landmarks)?.to_matrix();
    let opts = FitOptions {
        reg: a.reg,
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let fit = fit_landmarks(&model, &observed, &opts)?;
    write_coeff_sequence(&a.out, &[fit.coeffs])?;
    print_json(&FitReport {
        objective: fit.objective(),
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

fn cmd_retarget(a: &RetargetArgs) -> Result<()> {
    let src = a.source.load()?;
    let reference = read_coeff_sequence(&a.reference)?;
    let mode = match a.mode {
        RetargetModeArg::Expr => RetargetMode::Expression,
        RetargetModeArg::Talk => RetargetMode::Talking,
    };
    let raster = a.raster.config();
    let m = pipeline::run_retarget(&src.job(&raster, a.raster.interval), &reference, mode, &a.out)?;
    eprintln!("wrote {} frames to {}", m.frame_count, a.out.display());
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let src = a.source.load()?;
    let p = load_predictor(&a.predictor)?;
    let raster = a.raster.config();
    let m = pipeline::run_predict(&src.job(&raster, a.raster.interval), &p, a.frames, &a.out)?;
    eprintln!("wrote {} frames, smoothness {}", m.frame_count, m.smoothness.unwrap_or(0.0));
    Ok(())
}

fn cmd_predict_target(a: &PredictTargetArgs) -> Result<()> {
    let src = a.source.load()?;
    let target = pipeline::read_single_coeffs(&a.target_coeffs)?;
    let raster = a.raster.config();
    let job = src.job(&raster, a.raster.interval);
    let m = match &a.predictor {
        Some(path) if !a.interpolate => {
            let p = load_predictor(path)?.with_conditioning(a.conditioning.into());
            pipeline::run_predict_target(&job, &target, TargetPath::Predictor(&p), a.frames, &a.out)?
        }
        _ => pipeline::run_predict_target(&job, &target, TargetPath::Interpolate, a.frames, &a.out)?,
    };
    eprintln!("wrote {} frames, smoothness {}", m.frame_count, m.smoothness.unwrap_or(0.0));
    Ok(())
}

#[derive(Serialize)]
struct PriorReport {
    kept_triangles: usize,
    drawn_triangles: usize,
    touched_vertices: usize,
    total_vertices: usize,
    masked_pixels: usize,
    mapping_ms: f64,
}

fn cmd_render_prior(a: &RenderPriorArgs) -> Result<()> {
    let src = a.source.load()?;
    let target = match &a.target_coeffs {
        Some(p) => pipeline::read_single_coeffs(p)?,
        None => src.coeffs,
    };
    let raster = a.raster.config();
    let s = pipeline::render_prior(&src.job(&raster, a.raster.interval), &target, &a.out_prior, &a.out_mask)?;
    print_json(&PriorReport {
        kept_triangles: s.kept_triangles,
        drawn_triangles: s.drawn_triangles,
        touched_vertices: s.touched_vertices,
        total_vertices: s.total_vertices,
        masked_pixels: s.masked_pixels,
        mapping_ms: s.elapsed.as_secs_f64() * 1e3,
    })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    history: &'a [f64],
    steps: usize,
    initial_loss: f64,
    final_loss: f64,
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = TrajectoryDataset::from_files(&pipeline::expand_sequence_paths(&a.data)?)?;
    let cfg = TrainConfig {
        lambda1: a.lambda1,
        seq_len: a.seq_len,
        learn_rate: a.learn_rate,
        epochs: a.epochs,
        grad_clip: a.grad_clip,
        seed: resolve_seed(a.seed)?,
        fixed_point: !a.no_fixed_point,
        fixed_point_weight: a.fixed_point_weight,
        hidden: a.hidden,
        batch_size: a.batch_size,
        teacher_steps: a.teacher_steps,
        vertex_space: if a.vertex_loss_with_pose { VertexSpace::Camera } else { VertexSpace::Model },
        conditioning: a.conditioning.into(),
        supervision: match a.supervision {
            SupervisionArg::GroundTruth => Supervision::GroundTruth,
            SupervisionArg::Interpolation => Supervision::Interpolation,
        },
        ..Default::default()
    };
    let mode = match a.mode {
        TrainModeArg::Free => TrainMode::FreeRunning,
        TrainModeArg::Target => TrainMode::TargetDriven,
    };
    let (p, rep) = dynpred::train_predictor(&model, &data, &cfg, mode)?;
    save_predictor(&a.out, &p)?;
    let summary = TrainSummary {
        history: &rep.history,
        steps: rep.steps,
        initial_loss: rep.initial_loss,
        final_loss: rep.final_loss,
    };
    if let Some(h) = &a.history {
        fs::write(h, serde_json::to_vec_pretty(&summary)?)?;
    }
    eprintln!("{} steps, loss {} -> {}", rep.steps, rep.initial_loss, rep.final_loss);
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let rows = pipeline::evaluate_directories(&a.pred, &a.truth, a.landmarks, !a.raw_lrms)?;
    match &a.out {
        Some(p) => pipeline::write_metrics_csv(fs::File::create(p)?, &rows),
        None => pipeline::write_metrics_csv(std::io::stdout().lock(), &rows),
    }
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if a.frames < 1 || a.clip_len < 2 {
        return Err(Error::InvalidInput("need --frames >= 1 and --clip-len >= 2".into()));
    }
    let out: &Path = &a.out;
    fs::create_dir_all(out.join("train"))?;
    let spec = synth::SynthModelSpec::grid(a.rows, a.cols);
    let model = synth::synthetic_model(&spec, seed);
    save_model(&out.join("model.fmm"), &model)?;

    let source = synth::centred_coeffs(a.size);
    synth::texture_image(a.size, a.size, seed).save(out.join("source.png"))?;
    write_coeff_sequence(&out.join("source_coeffs.jsonl"), &[source])?;
    LandmarkFile::from_matrix(&model.landmarks_from_coeffs(&source)).write(&out.join("source_landmarks.json"))?;

    let mut rng = synth::rng(seed.wrapping_add(1));
    let donor = synth::random_coeffs(&mut rng, 0.5);
    write_coeff_sequence(&out.join("reference.jsonl"), &synth::reference_sequence(&donor, a.frames, seed))?;
    let mut target = synth::random_coeffs(&mut rng, 0.5);
    target.alpha_s = source.alpha_s;
    write_coeff_sequence(&out.join("target_coeffs.jsonl"), &[target])?;

    let data = SinusoidFamily::new(seed).dataset(a.clips, a.clip_len, seed.wrapping_add(2));
    for (i, s) in data.sequences.iter().enumerate() {
        write_coeff_sequence(&out.join("train").join(format!("clip_{i:03}.jsonl")), s)?;
    }
    eprintln!("wrote synthetic data to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Retarget(a) => cmd_retarget(a),
        Command::Predict(a) => cmd_predict(a),
        Command::PredictToTarget(a) => cmd_predict_target(a),
        Command::RenderPrior(a) => cmd_render_prior(a),
        Command::Train3ddp(a) => cmd_train(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
