//! The `vidgeo` command line. Exit codes: 0 success, 1 invalid input or
//! flags, 2 runtime or numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::verify::{run_suite, VerifyConfig};
use crate::attention::InferenceMode;
use crate::bench::{run_bench, write_bench_csv, BenchConfig};
use crate::error::Error;
use crate::geometry::{synth_scene, PinholeCamera, SceneData, SceneKind, SceneSpec, ValidMask};
use crate::io;
use crate::losses::{train_model, DataConfig, LossWeights, TrainOptions};
use crate::metrics::{
    evaluate_maps, write_reports, AlignMode, Alignment, EvalOptions, EvalTarget, MetricAccumulator,
};
use crate::model::{Model, ModelConfig};
use crate::refine::{
    corrupt_scene, refine_pipeline, CompletionModel, CorruptionConfig, IdentityTeacher, PoissonConfig,
    RefineConfig, SparseDepth, TeacherTrainConfig, ToyTeacher,
};
use crate::tensor::Tensor;

const AFTER_HELP: &str = "\
Files: tensors are VGEO files (see the io module docs). A sequence folder
holds per-frame files <prefix>_<frame:04>.vgeo with prefixes frame, depth,
points, normals and valid.

CSV outputs:
  bench.csv      mode,N,C,window,ms_per_frame,peak_cache_frames
  train_log.csv  step,total,points,normal,points_normal
  teacher_log.csv step,loss
  metrics.csv    rel,delta1,rel_p,delta_p_025,n_mean_deg,n_med_deg,delta_1125,valid_count
                 (one row per sequence, aggregate last)

Exit codes: 0 ok, 1 invalid input, 2 runtime or numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "vidgeo", version, about = "Chunked-attention video geometry toolkit", after_help = AFTER_HELP)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run per-frame stages in frame order on one thread.
    #[arg(long, global = true, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "vidgeo-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check chunked attention against the single masked pass.
    AttnVerify(AttnVerifyArgs),
    /// Time the inference modes and record KV-cache occupancy.
    Bench(BenchArgs),
    /// Render a synthetic sequence folder.
    Synth(SynthArgs),
    /// Train the toy geometry model and save a checkpoint.
    TrainToy(TrainArgs),
    /// Train the toy completion teacher on corrupted synthetic depth.
    TrainToyTeacher(TeacherArgs),
    /// Predict point maps, depth and normals for a sequence folder.
    Infer(InferArgs),
    /// Turn sparse depth and a monocular prior into dense pseudo-labels.
    Refine(RefineArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct AttnVerifyArgs {
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Negative control: corrupt the reference mask.
    #[arg(long, hide = true)]
    pub break_mask: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 16)]
    pub min_frames: usize,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub chunk_sizes: Vec<usize>,
    /// Cache window in frames; 0 keeps every frame.
    #[arg(long, default_value_t = 16)]
    pub window: usize,
    #[arg(long, default_value_t = 256)]
    pub max_offline_frames: usize,
    #[arg(long, default_value = "32x32", value_parser = parse_res)]
    pub res: (usize, usize),
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "plane")]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value = "32x32", value_parser = parse_res)]
    pub res: (usize, usize),
    /// Scene description file; overrides --scene, --frames and --res.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Also write raw/ (holes and outliers) and mono/ (distorted relative
    /// depth) for the refine command.
    #[arg(long)]
    pub corrupt: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Loss weights as points_normal,normal.
    #[arg(long, default_value = "0,1", value_parser = parse_weights)]
    pub weights: LossWeights,
    /// Sequences per step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Folder of synth sequences to train on (one sequence or a folder of
    /// them). Without it, plane and sphere sequences are rendered.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub sequences: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value = "32x32", value_parser = parse_res)]
    pub res: (usize, usize),
}

#[derive(Args, Debug)]
pub struct TeacherArgs {
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub sequences: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value = "32x32", value_parser = parse_res)]
    pub res: (usize, usize),
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = ["offline", "streaming", "chunked"], default_value = "offline")]
    pub mode: String,
    #[arg(long, default_value_t = 4)]
    pub chunk: usize,
    /// Cache window in frames for streaming and chunked modes.
    #[arg(long)]
    pub window: Option<usize>,
    /// Sequence folder with frame_NNNN.vgeo files.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Folder with depth_NNNN.vgeo and optionally valid_NNNN.vgeo.
    #[arg(long)]
    pub raw: PathBuf,
    /// Folder with depth_NNNN.vgeo relative depth.
    #[arg(long)]
    pub mono: PathBuf,
    /// Folder with frame_NNNN.vgeo; defaults to --raw.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.15)]
    pub tau: f64,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, value_parser = ["identity", "toy"], default_value = "identity")]
    pub teacher: String,
    /// Checkpoint written by train-toy-teacher; required for --teacher toy.
    #[arg(long)]
    pub teacher_checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_parser = ["scale-seq", "affine", "none"], default_value = "scale-seq")]
    pub align: String,
    #[arg(long)]
    pub max_depth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub crop: usize,
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    Ok((h, w))
}

fn parse_weights(s: &str) -> Result<LossWeights, String> {
    let (pn, n) = s.split_once(',').ok_or_else(|| format!("expected PN,N, got {s:?}"))?;
    let w = LossWeights {
        lambda_points_normal: pn.trim().parse().map_err(|e| format!("points_normal: {e}"))?,
        lambda_normal: n.trim().parse().map_err(|e| format!("normal: {e}"))?,
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Errors while reading inputs are the caller's fault.
trait InputResult<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T> InputResult<T> for crate::Result<T> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.to_string()))
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Invalid(msg.into()))
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout and stderr.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    crate::set_deterministic(cli.deterministic);
    match &cli.command {
        Command::AttnVerify(a) => attn_verify(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::TrainToy(a) => train_toy(cli, a),
        Command::TrainToyTeacher(a) => train_teacher(cli, a),
        Command::Infer(a) => infer(cli, a),
        Command::Refine(a) => refine(cli, a),
        Command::Eval(a) => eval(cli, a),
    }
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn attn_verify(cli: &Cli, a: &AttnVerifyArgs) -> Result<(), Failure> {
    if a.frames == 0 || a.trials == 0 || a.heads == 0 || !a.dim.is_multiple_of(a.heads) {
        return invalid("need positive frames, trials and heads, with dim divisible by heads");
    }
    let report = run_suite(&VerifyConfig {
        frames: a.frames,
        dim: a.dim,
        heads: a.heads,
        trials: a.trials,
        seed: cli.seed,
        break_mask: a.break_mask,
    })?;
    for p in &report.properties {
        println!(
            "{:<36} max deviation {:.3e} (tolerance {:.0e}) {}",
            p.name,
            p.max_deviation,
            p.tolerance,
            if p.passed() { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::Runtime("attention verification failed".into()))
    }
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<(), Failure> {
    let cfg = BenchConfig {
        max_frames: a.max_frames,
        min_frames: a.min_frames.min(a.max_frames),
        chunk_sizes: a.chunk_sizes.clone(),
        window: (a.window > 0).then_some(a.window),
        max_offline_frames: a.max_offline_frames,
        height: a.res.0,
        width: a.res.1,
        repeats: a.repeats,
        model: ModelConfig {
            seed: cli.seed,
            ..Default::default()
        },
        seed: cli.seed,
    };
    cfg.validate().input()?;
    let rows = run_bench(&cfg)?;
    create_out(&cli.out)?;
    write_bench_csv(&rows, fs::File::create(cli.out.join("bench.csv")).map_err(Error::from)?)?;
    write_bench_csv(&rows, std::io::stdout())?;
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), Failure> {
    let spec = match &a.spec {
        Some(path) => SceneSpec::parse(&fs::read_to_string(path).map_err(|e| {
            Failure::Invalid(format!("cannot read {}: {e}", path.display()))
        })?)
        .input()?,
        None => SceneSpec::new(a.scene, a.frames, a.res.0, a.res.1),
    };
    spec.validate().input()?;
    let scene = synth_scene(&spec, cli.seed)?;
    let corrupted = if a.corrupt {
        Some(corrupt_scene(&scene, &CorruptionConfig::default(), cli.seed)?)
    } else {
        None
    };
    io::write_scene(&cli.out, &spec, &scene)?;
    if let Some(c) = corrupted {
        let raw = cli.out.join("raw");
        let mono = cli.out.join("mono");
        create_out(&raw)?;
        create_out(&mono)?;
        io::write_frames(&raw, "depth", &c.raw.masked().into())?;
        io::write_frames(&raw, "valid", &c.raw.valid.clone().into())?;
        io::write_frames(&raw, "frame", &scene.frames.clone().into())?;
        io::write_frames(&mono, "depth", &c.mono.into())?;
    }
    println!("wrote {} frames of {} to {}", spec.frames, spec.kind, cli.out.display());
    Ok(())
}

/// Folders under `dir` holding `<prefix>_0000.vgeo`: `dir` itself, or its
/// sorted subfolders.
fn sequence_dirs(dir: &Path, prefix: &str) -> Result<Vec<(String, PathBuf)>, Failure> {
    if io::count_frames(dir, prefix) > 0 {
        return Ok(vec![(".".into(), dir.to_path_buf())]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", dir.display())))?;
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && io::count_frames(p, prefix) > 0)
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    if out.is_empty() {
        return invalid(format!("no {prefix}_0000.vgeo in {} or its subfolders", dir.display()));
    }
    Ok(out)
}

fn optional_frames(dir: &Path, prefix: &str) -> crate::Result<Option<Tensor>> {
    if io::count_frames(dir, prefix) == 0 {
        return Ok(None);
    }
    io::read_frames(dir, prefix).map(Some)
}

fn valid_or_positive(dir: &Path, depth: &Tensor) -> crate::Result<ValidMask> {
    if io::count_frames(dir, "valid") == 0 {
        return ValidMask::new(depth.dims().to_vec(), depth.data().iter().map(|&d| d > 0.0).collect());
    }
    let m = io::read_mask_frames(dir, "valid")?;
    if m.dims() != depth.dims() {
        return Err(Error::Shape(format!("valid {:?} vs depth {:?}", m.dims(), depth.dims())));
    }
    Ok(m)
}

fn load_training_scene(dir: &Path) -> crate::Result<SceneData> {
    let frames = io::read_frames(dir, "frame")?;
    let points = io::read_frames(dir, "points")?;
    let depth = io::read_frames(dir, "depth")?;
    let normals = io::read_frames(dir, "normals")?;
    let valid = valid_or_positive(dir, &depth)?;
    let [n, _, h, w] = crate::autograd::dims4(&frames)?;
    let camera = match fs::read_to_string(dir.join("scene.txt")) {
        Ok(text) => SceneSpec::parse(&text)?.camera(),
        Err(_) => PinholeCamera::centered(h, w),
    };
    if depth.dims() != [n, h, w] || points.dims() != [n, 3, h, w] || normals.dims() != [n, 3, h, w] {
        return Err(Error::Shape(format!("{}: maps do not match frames {:?}", dir.display(), frames.dims())));
    }
    Ok(SceneData {
        camera,
        poses: Vec::new(),
        frames,
        points,
        depth,
        normals,
        valid,
    })
}

fn train_toy(cli: &Cli, a: &TrainArgs) -> Result<(), Failure> {
    if !(a.lr > 0.0) {
        return invalid(format!("learning rate must be positive, got {}", a.lr));
    }
    let data = match &a.data {
        Some(dir) => sequence_dirs(dir, "frame")?
            .iter()
            .map(|(_, p)| load_training_scene(p))
            .collect::<crate::Result<Vec<_>>>()
            .input()?,
        None => DataConfig {
            sequences: a.sequences,
            frames: a.frames,
            height: a.res.0,
            width: a.res.1,
            seed: cli.seed,
            ..Default::default()
        }
        .generate()
        .input()?,
    };
    let mut model = Model::new(ModelConfig {
        seed: cli.seed,
        ..Default::default()
    })?;
    let log = train_model(
        &mut model,
        &data,
        &TrainOptions {
            steps: a.steps,
            lr: a.lr,
            weights: a.weights,
            batch: a.batch,
            seed: cli.seed,
        },
    )?;
    create_out(&cli.out)?;
    io::save_checkpoint(&cli.out.join("checkpoint"), &model)?;
    log.save(&cli.out.join("train_log.csv"))?;
    let smooth = log.smoothed_points(20);
    if let (Some(first), Some(last)) = (log.records.first(), smooth.last()) {
        println!("points loss {:.4} -> {:.4} (20-step mean)", first.points, last);
    }
    println!("checkpoint written to {}", cli.out.join("checkpoint").display());
    Ok(())
}

fn train_teacher(cli: &Cli, a: &TeacherArgs) -> Result<(), Failure> {
    if !(a.lr > 0.0) {
        return invalid(format!("learning rate must be positive, got {}", a.lr));
    }
    let cfg = TeacherTrainConfig {
        data: DataConfig {
            sequences: a.sequences,
            frames: a.frames,
            height: a.res.0,
            width: a.res.1,
            seed: cli.seed,
            ..Default::default()
        },
        steps: a.steps,
        lr: a.lr,
        seed: cli.seed,
        ..Default::default()
    };
    let mut teacher = ToyTeacher::new(ModelConfig {
        seed: cli.seed,
        ..Default::default()
    })?;
    let losses = teacher.train(&cfg)?;
    create_out(&cli.out)?;
    io::save_checkpoint(&cli.out.join("teacher"), teacher.model())?;
    let mut w = csv::Writer::from_path(cli.out.join("teacher_log.csv")).map_err(Error::from)?;
    w.write_record(["step", "loss"]).map_err(Error::from)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    if let (Some(a), Some(b)) = (losses.first(), losses.last()) {
        println!("teacher log-L1 {a:.5} -> {b:.5}");
    }
    Ok(())
}

fn infer(cli: &Cli, a: &InferArgs) -> Result<(), Failure> {
    let model = io::load_checkpoint(&a.checkpoint).input()?;
    let frames = io::read_frames(&a.input, "frame").input()?;
    let mode = match a.mode.as_str() {
        "offline" => InferenceMode::Offline,
        "streaming" => InferenceMode::Streaming,
        _ if a.chunk == 0 => return invalid("--chunk must be positive"),
        _ => InferenceMode::Chunked(a.chunk),
    };
    if a.window == Some(0) {
        return invalid("--window must be positive");
    }
    let (out, peak) = model.infer(&frames, mode, a.window)?;
    create_out(&cli.out)?;
    io::write_frames(&cli.out, "points", &out.points.into())?;
    io::write_frames(&cli.out, "depth", &out.depth.into())?;
    io::write_frames(&cli.out, "normals", &out.normals.into())?;
    println!(
        "{} frames, mode {mode}, peak cached frames {peak}, written to {}",
        frames.dims()[0],
        cli.out.display()
    );
    Ok(())
}

fn refine(cli: &Cli, a: &RefineArgs) -> Result<(), Failure> {
    let raw_depth = io::read_frames(&a.raw, "depth").input()?;
    let valid = valid_or_positive(&a.raw, &raw_depth).input()?;
    let raw = SparseDepth::new(raw_depth, valid).input()?;
    let mono = io::read_frames(&a.mono, "depth").input()?;
    if mono.dims() != raw.values.dims() {
        return invalid(format!("mono {:?} vs raw {:?}", mono.dims(), raw.values.dims()));
    }
    let (n, h, w) = raw.shape();
    let frame_dir = a.frames.as_deref().unwrap_or(&a.raw);
    let frames = optional_frames(frame_dir, "frame").input()?;
    let teacher: Box<dyn CompletionModel> = match a.teacher.as_str() {
        "identity" => Box::new(IdentityTeacher),
        _ => {
            let Some(dir) = &a.teacher_checkpoint else {
                return invalid("--teacher toy needs --teacher-checkpoint");
            };
            if frames.is_none() {
                return invalid(format!("--teacher toy needs frame_NNNN.vgeo in {}", frame_dir.display()));
            }
            Box::new(ToyTeacher::from_model(io::load_checkpoint(dir).input()?).input()?)
        }
    };
    let frames = frames.unwrap_or_else(|| Tensor::zeros([n, 3, h, w]));
    let config = RefineConfig {
        window: a.window,
        tau: a.tau,
        poisson: PoissonConfig {
            lambda: a.lambda,
            ..Default::default()
        },
    };
    if a.window < 3 || a.window.is_multiple_of(2) || !(a.tau > 0.0) || !(a.lambda > 0.0) {
        return invalid("need an odd window ≥ 3, tau > 0 and lambda > 0");
    }
    let out = refine_pipeline(&frames, &raw, &mono, &config, teacher.as_ref())?;
    create_out(&cli.out)?;
    io::write_frames(&cli.out, "depth", &out.pseudo_labels.into())?;
    io::write_frames(&cli.out, "prior", &out.priors.into())?;
    println!(
        "{n} frames refined: kept {} of {} sparse pixels, m = {:.4}",
        out.filtered.valid.count(),
        raw.valid.count(),
        out.state.m
    );
    Ok(())
}

fn load_target(dir: &Path) -> crate::Result<EvalTarget> {
    let depth = io::read_frames(dir, "depth")?;
    let valid = valid_or_positive(dir, &depth)?;
    Ok(EvalTarget {
        points: optional_frames(dir, "points")?,
        normals: optional_frames(dir, "normals")?,
        depth,
        valid,
    })
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), Failure> {
    let mode: AlignMode = a.align.parse().input()?;
    if matches!(a.max_depth, Some(m) if !(m > 0.0)) {
        return invalid("--max-depth must be positive");
    }
    let opts = EvalOptions {
        max_depth: a.max_depth,
        crop: a.crop,
    };
    let gt_seqs = sequence_dirs(&a.gt, "depth")?;
    let mut loaded = Vec::with_capacity(gt_seqs.len());
    for (name, gt_dir) in &gt_seqs {
        let pred_dir = if name == "." { a.pred.clone() } else { a.pred.join(name) };
        let target = load_target(gt_dir).input()?;
        let depth = io::read_frames(&pred_dir, "depth").input()?;
        let points = optional_frames(&pred_dir, "points").input()?;
        let normals = optional_frames(&pred_dir, "normals").input()?;
        if depth.dims() != target.depth.dims() {
            return invalid(format!("sequence {name}: pred {:?} vs gt {:?}", depth.dims(), target.depth.dims()));
        }
        loaded.push((target, depth, points, normals));
    }
    let mut reports = Vec::new();
    let mut pooled = MetricAccumulator::default();
    for (target, depth, points, normals) in &loaded {
        let (report, acc) = evaluate_maps(depth, points.as_ref(), normals.as_ref(), target, mode, &opts)?;
        pooled.merge(&acc);
        reports.push(report);
    }
    reports.push(pooled.report(Alignment::None));
    create_out(&cli.out)?;
    write_reports(&reports, fs::File::create(cli.out.join("metrics.csv")).map_err(Error::from)?)?;
    write_reports(&reports, std::io::stdout())?;
    Ok(())
}
