use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use halfpf::bench::{self, SweepConfig};
use halfpf::filter::{self, RunConfig};
use halfpf::model::{self, ModelParams, Video};
use halfpf::{io, Error, HalfKernel, PrecisionMode};

/// Particle-filter object tracking in f64, f32 and emulated binary16.
#[derive(Parser, Debug)]
#[command(name = "halfpf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic video of a moving disk plus its ground truth.
    Generate(GenerateArgs),
    /// Track the object in a video and write the estimated trajectory.
    Track(TrackArgs),
    /// Sweep precision, particle count and worker count.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Mean x displacement per frame, pixels.
    #[arg(long, default_value_t = 1.0)]
    drift_x: f64,
    /// Mean y displacement per frame, pixels.
    #[arg(long, default_value_t = 2.0)]
    drift_y: f64,
    /// Transition standard deviation along x, pixels.
    #[arg(long, default_value_t = 5.0)]
    std_x: f64,
    /// Transition standard deviation along y, pixels.
    #[arg(long, default_value_t = 2.0)]
    std_y: f64,
    /// Background intensity.
    #[arg(long, default_value_t = 100.0)]
    bg: f64,
    /// Object intensity.
    #[arg(long, default_value_t = 228.0)]
    fg: f64,
    /// Likelihood denominator scale (divided by scale times template size).
    #[arg(long, default_value_t = 50.0)]
    likelihood_scale: f64,
    /// Disk radius, pixels; also the likelihood template radius.
    #[arg(long, default_value_t = 5)]
    radius: u32,
    /// Gaussian pixel noise, intensity levels. Used by `generate` only.
    #[arg(long, default_value_t = 5.0)]
    noise: f64,
}

impl ModelArgs {
    fn params(&self) -> ModelParams {
        ModelParams {
            drift_x: self.drift_x,
            std_x: self.std_x,
            drift_y: self.drift_y,
            std_y: self.std_y,
            bg_mean: self.bg,
            fg_mean: self.fg,
            likelihood_scale: self.likelihood_scale,
            disk_radius: self.radius,
            noise_std: self.noise,
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output video container.
    output: PathBuf,
    /// Ground-truth CSV [default: <output stem>.truth.csv next to the video]
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Initial object center as X,Y [default: frame center]
    #[arg(long, value_parser = parse_point)]
    start: Option<(f64, f64)>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Video container to read.
    video: PathBuf,
    /// Ground-truth CSV [default: <video stem>.truth.csv if present]
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Initial particle position as X,Y [default: first truth row, else frame center]
    #[arg(long, value_parser = parse_point)]
    start: Option<(f64, f64)>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// binary16 kernel variant [default: naive for fp16, optimized for fp16-packed]
    #[arg(long, value_parser = parse_kernel)]
    half_kernel: Option<HalfKernel>,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Trajectory CSV [default: standard output]
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// One of fp64, fp32, fp16, fp16-packed.
    #[arg(long, default_value = "fp64", value_parser = parse_mode)]
    precision: PrecisionMode,
    #[arg(long, default_value_t = 128)]
    particles: usize,
    /// Worker threads inside each filter stage.
    #[arg(long, env = "PF_WORKERS", default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Bench CSV [default: standard output]
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "32768,65536")]
    particles: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "fp64,fp32,fp16,fp16-packed", value_parser = parse_mode)]
    precisions: Vec<PrecisionMode>,
    #[arg(
        long,
        env = "PF_WORKERS",
        value_delimiter = ',',
        default_value = "1,2,4,8"
    )]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// Run configurations concurrently; timing columns become unreliable.
    #[arg(long)]
    parallel_configs: bool,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

fn parse_mode(s: &str) -> Result<PrecisionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<HalfKernel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Degenerate { .. } => 4,
    }
}

fn sibling_truth(video: &Path) -> PathBuf {
    let stem = video.file_stem().unwrap_or_default().to_string_lossy();
    video.with_file_name(format!("{stem}.truth.csv"))
}

fn emit(output: Option<&Path>, text: &str) -> halfpf::Result<()> {
    match output {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(a: &GenerateArgs) -> halfpf::Result<()> {
    let start = a
        .start
        .unwrap_or((a.width as f64 / 2.0, a.height as f64 / 2.0));
    eprintln!("seed: {}", a.seed);
    let video = model::generate_video(
        &a.model.params(),
        a.frames,
        a.width,
        a.height,
        start,
        a.seed,
    )?;
    io::write_video(&a.output, &video.frames)?;
    let truth = a.truth.clone().unwrap_or_else(|| sibling_truth(&a.output));
    io::write_text(&truth, &io::truth_csv(&video.truth))
}

fn load(input: &InputArgs) -> halfpf::Result<(Video, (f64, f64))> {
    let truth = match &input.truth {
        Some(p) => Some(p.clone()),
        None => Some(sibling_truth(&input.video)).filter(|p| p.is_file()),
    };
    let video = io::load_video(&input.video, truth.as_deref())?;
    if video.is_empty() {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    let start = input
        .start
        .or_else(|| video.truth.first().copied())
        .unwrap_or((video.width() as f64 / 2.0, video.height() as f64 / 2.0));
    Ok((video, start))
}

fn track(a: &TrackArgs) -> halfpf::Result<()> {
    let (video, start) = load(&a.input)?;
    eprintln!("seed: {}", a.input.seed);
    let cfg = RunConfig {
        particles: a.particles,
        mode: a.precision,
        seed: a.input.seed,
        workers: a.workers,
        half_kernel: a.input.half_kernel,
        params: a.model.params(),
        start,
    };
    let out = filter::run(&video, &cfg)?;
    emit(a.output.as_deref(), &io::trajectory_csv(&out.trajectory))?;
    if !video.truth.is_empty() {
        let (rmse, mean, max) = bench::accuracy_metrics(&out.trajectory, &video.truth)?;
        eprintln!("error vs truth: rmse {rmse:.4}, mean {mean:.4}, max {max:.4} px");
    }
    Ok(())
}

fn run_bench(a: &BenchArgs) -> halfpf::Result<()> {
    let (video, start) = load(&a.input)?;
    eprintln!("seed: {}", a.input.seed);
    if a.particles.is_empty() || a.precisions.is_empty() || a.workers.is_empty() {
        return Err(Error::InvalidArgument("empty sweep list".into()));
    }
    if a.parallel_configs {
        eprintln!("note: configurations run concurrently; timing columns are unreliable");
    }
    let cfg = SweepConfig {
        particles: a.particles.clone(),
        modes: a.precisions.clone(),
        workers: a.workers.clone(),
        repeats: a.repeats,
        seed: a.input.seed,
        params: a.model.params(),
        start,
        half_kernel: a.input.half_kernel,
        parallel_configs: a.parallel_configs,
    };
    let records = bench::run_sweep(&video, &cfg);
    for r in &records {
        if let Some(e) = &r.error {
            eprintln!(
                "failed: {} K={} workers={} repeat={}: {e}",
                r.mode, r.particles, r.workers, r.repeat
            );
        }
    }
    emit(a.output.as_deref(), &bench::to_csv(&records))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Track(a) => track(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
