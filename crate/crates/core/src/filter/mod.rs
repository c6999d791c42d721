//! Precision-generic particle filter.
//!
//! [`run`] drives the per-frame loop over a video. The stage kernels are
//! exposed in [`stages`] so they can be exercised one at a time.

pub mod reduce;
pub mod stages;

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::halfnum::{Binary16, OpCounters, PackedPair};
use crate::model::{LikelihoodConsts, LikelihoodForm, ModelParams, PixelTemplate, Video};
use crate::precision::{HalfKernel, Lane, PrecisionMode};
use crate::rng::RngStream;

pub use stages::KernelPlan;

/// Largest supported particle count.
pub const MAX_PARTICLES: usize = 65536;

/// Structure-of-arrays particle state in lane type `P`.
///
/// Particle `k` lives in slot `k` for scalar lanes. For [`PackedPair`],
/// slot `j` holds particles `j` and `j + K/2`.
#[derive(Clone, Debug)]
pub struct ParticleSet<P: Lane> {
    count: usize,
    pub(crate) split: usize,
    pub xs: Vec<P>,
    pub ys: Vec<P>,
    pub loglik: Vec<P>,
    pub weights: Vec<P>,
    pub cdf: Vec<P>,
    /// Indexed by particle, not by slot.
    pub ancestors: Vec<usize>,
}

impl<P: Lane> ParticleSet<P> {
    /// All particles at `start`, uniform weights, identity ancestors.
    pub fn new(count: usize, start: (f64, f64), ctx: &mut OpCounters) -> Result<Self> {
        if !(2..=MAX_PARTICLES).contains(&count) {
            return Err(Error::InvalidArgument(format!(
                "particle count must be in 2..={MAX_PARTICLES}, got {count}"
            )));
        }
        if P::LANES == 2 && !count.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "packed mode needs an even particle count, got {count}"
            )));
        }
        let split = count.div_ceil(2);
        let slots = count / P::LANES;
        let x = P::splat(<P::Scalar as Lane>::narrow(start.0, ctx));
        let y = P::splat(<P::Scalar as Lane>::narrow(start.1, ctx));
        let w = P::splat(<P::Scalar as Lane>::narrow(1.0 / count as f64, ctx));
        Ok(ParticleSet {
            count,
            split,
            xs: vec![x; slots],
            ys: vec![y; slots],
            loglik: vec![P::zero(); slots],
            weights: vec![w; slots],
            cdf: vec![P::zero(); slots],
            ancestors: (0..count).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Number of storage slots.
    pub fn lanes(&self) -> usize {
        self.xs.len()
    }

    fn read_all(&self, data: &[P]) -> Vec<f64> {
        (0..self.count)
            .map(|k| stages::lane_get(data, k, self.split).read(0))
            .collect()
    }

    pub fn set_positions(&mut self, xs: &[f64], ys: &[f64], ctx: &mut OpCounters) {
        write_all(&mut self.xs, self.split, xs, ctx);
        write_all(&mut self.ys, self.split, ys, ctx);
    }

    pub fn set_loglik(&mut self, values: &[f64], ctx: &mut OpCounters) {
        write_all(&mut self.loglik, self.split, values, ctx);
    }

    pub fn set_weights(&mut self, values: &[f64], ctx: &mut OpCounters) {
        write_all(&mut self.weights, self.split, values, ctx);
    }

    pub fn set_ancestors(&mut self, ancestors: &[usize]) {
        assert_eq!(ancestors.len(), self.count);
        assert!(ancestors.iter().all(|&a| a < self.count));
        self.ancestors.copy_from_slice(ancestors);
    }

    /// Exact `f64` readback in particle order.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            xs: self.read_all(&self.xs),
            ys: self.read_all(&self.ys),
            loglik: self.read_all(&self.loglik),
            weights: self.read_all(&self.weights),
            cdf: self.read_all(&self.cdf),
            ancestors: self.ancestors.clone(),
        }
    }
}

fn write_all<P: Lane>(data: &mut [P], split: usize, values: &[f64], ctx: &mut OpCounters) {
    assert_eq!(
        values.len(),
        data.len() * P::LANES,
        "one value per particle"
    );
    for (j, slot) in data.iter_mut().enumerate() {
        *slot = P::narrow_with(ctx, |l| values[stages::particle_of::<P>(j, l, split)]);
    }
}

/// Particle state widened to `f64`, in particle order.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub loglik: Vec<f64>,
    pub weights: Vec<f64>,
    pub cdf: Vec<f64>,
    pub ancestors: Vec<usize>,
}

impl Snapshot {
    /// Bitwise equality, so that `-0.0 != 0.0` and NaNs compare by payload.
    pub fn bit_eq(&self, other: &Snapshot) -> bool {
        let eq = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        eq(&self.xs, &other.xs)
            && eq(&self.ys, &other.ys)
            && eq(&self.loglik, &other.loglik)
            && eq(&self.weights, &other.weights)
            && eq(&self.cdf, &other.cdf)
            && self.ancestors == other.ancestors
    }
}

/// Values fixed for the whole run, converted once to the lane type.
#[derive(Clone, Debug)]
pub struct RunConstants<P: Lane> {
    pub drift_x: P,
    pub drift_y: P,
    pub std_x: P,
    pub std_y: P,
    pub lik: LikelihoodConsts<P>,
    pub template: PixelTemplate,
    /// Pixel value `i` converted to the lane precision.
    pub intensity: Vec<P::Scalar>,
    /// `1/K`
    pub inv_k: P::Scalar,
    /// `k/K` per slot; filled only for [`KernelPlan::HalfOptimized`].
    pub grid: Vec<P>,
    pub plan: KernelPlan,
    pub form: LikelihoodForm,
}

impl<P: Lane> RunConstants<P> {
    pub fn new(params: &ModelParams, count: usize, plan: KernelPlan, ctx: &mut OpCounters) -> Self {
        let s = |x: f64, ctx: &mut OpCounters| P::splat(<P::Scalar as Lane>::narrow(x, ctx));
        let template = PixelTemplate::disk(params.disk_radius);
        let form = if P::HALF {
            LikelihoodForm::Stabilized
        } else {
            LikelihoodForm::Direct
        };
        let split = count.div_ceil(2);
        let grid = if plan == KernelPlan::HalfOptimized {
            (0..count / P::LANES)
                .map(|j| {
                    P::narrow_with(ctx, |l| {
                        stages::particle_of::<P>(j, l, split) as f64 / count as f64
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        RunConstants {
            drift_x: s(params.drift_x, ctx),
            drift_y: s(params.drift_y, ctx),
            std_x: s(params.std_x, ctx),
            std_y: s(params.std_y, ctx),
            lik: LikelihoodConsts::new(params, template.len(), ctx),
            intensity: (0..256)
                .map(|i| <P::Scalar as Lane>::narrow(f64::from(i), ctx))
                .collect(),
            template,
            inv_k: <P::Scalar as Lane>::narrow(1.0 / count as f64, ctx),
            grid,
            plan,
            form,
        }
    }
}

/// The six timed stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Propagate,
    Likelihood,
    Max,
    Weight,
    Normalize,
    Resample,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Propagate,
        Stage::Likelihood,
        Stage::Max,
        Stage::Weight,
        Stage::Normalize,
        Stage::Resample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Propagate => "propagate",
            Stage::Likelihood => "likelihood",
            Stage::Max => "max",
            Stage::Weight => "weight",
            Stage::Normalize => "normalize",
            Stage::Resample => "resample",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub particles: usize,
    pub mode: PrecisionMode,
    pub seed: u64,
    pub workers: usize,
    /// Overrides the mode's default binary16 kernel variant.
    pub half_kernel: Option<HalfKernel>,
    pub params: ModelParams,
    /// Initial position of every particle.
    pub start: (f64, f64),
}

impl RunConfig {
    pub fn new(particles: usize, mode: PrecisionMode, seed: u64, start: (f64, f64)) -> Self {
        RunConfig {
            particles,
            mode,
            seed,
            workers: 1,
            half_kernel: None,
            params: ModelParams::default(),
            start,
        }
    }

    pub fn plan(&self) -> KernelPlan {
        match self.mode {
            PrecisionMode::Fp64 => KernelPlan::Wide64,
            PrecisionMode::Fp32 => KernelPlan::Wide32,
            m => match self.half_kernel.unwrap_or(m.default_half_kernel()) {
                HalfKernel::Naive => KernelPlan::HalfNaive,
                HalfKernel::Optimized => KernelPlan::HalfOptimized,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Vec<(f64, f64)>,
    pub counters: OpCounters,
    /// Accumulated wall-clock per stage, indexed like [`Stage::ALL`].
    pub timings: [Duration; 6],
    pub total: Duration,
}

impl RunOutput {
    pub fn stage_time(&self, stage: Stage) -> Duration {
        self.timings[stage.index()]
    }
}

/// Emitted after each stage of each frame by [`run_observed`].
#[derive(Clone, Debug)]
pub struct StageEvent {
    pub frame: usize,
    pub stage: Stage,
    pub snapshot: Snapshot,
    /// Set after [`Stage::Max`] onwards.
    pub max: Option<f64>,
    /// Set after [`Stage::Weight`] onwards.
    pub sum: Option<f64>,
    /// Set on [`Stage::Resample`]: the estimate taken before resampling.
    pub estimate: Option<(f64, f64)>,
}

pub type Observer<'a> = &'a mut (dyn FnMut(&StageEvent) + Send);

/// Runs the filter over every frame of `video`.
pub fn run(video: &Video, cfg: &RunConfig) -> Result<RunOutput> {
    run_inner(video, cfg, None)
}

/// Like [`run`], reporting a snapshot after every stage.
pub fn run_observed(video: &Video, cfg: &RunConfig, observer: Observer<'_>) -> Result<RunOutput> {
    run_inner(video, cfg, Some(observer))
}

fn run_inner(video: &Video, cfg: &RunConfig, observer: Option<Observer<'_>>) -> Result<RunOutput> {
    cfg.params.validate()?;
    if cfg.workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cfg.mode {
        PrecisionMode::Fp64 => run_typed::<f64>(video, cfg, observer),
        PrecisionMode::Fp32 => run_typed::<f32>(video, cfg, observer),
        PrecisionMode::Fp16Scalar => run_typed::<Binary16>(video, cfg, observer),
        PrecisionMode::Fp16Packed => run_typed::<PackedPair>(video, cfg, observer),
    })
}

fn run_typed<P: Lane>(
    video: &Video,
    cfg: &RunConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<RunOutput> {
    let begin = Instant::now();
    let k = cfg.particles;
    let mut ctx = OpCounters::new();
    let mut set = ParticleSet::<P>::new(k, cfg.start, &mut ctx)?;
    let consts = RunConstants::<P>::new(&cfg.params, k, cfg.plan(), &mut ctx);
    let rng = RngStream::new(cfg.seed);
    let mut timings = [Duration::ZERO; 6];
    let mut trajectory = Vec::with_capacity(video.len());

    let mut emit = |frame: usize,
                    stage: Stage,
                    set: &ParticleSet<P>,
                    max: Option<f64>,
                    sum: Option<f64>,
                    estimate: Option<(f64, f64)>| {
        if let Some(obs) = observer.as_mut() {
            obs(&StageEvent {
                frame,
                stage,
                snapshot: set.snapshot(),
                max,
                sum,
                estimate,
            });
        }
    };

    for (f, frame) in video.frames.iter().enumerate() {
        let draws = rng.frame_draws(f, k);

        if f > 0 {
            let t = Instant::now();
            stages::propagate(&mut set, &draws.normals, &consts, &mut ctx);
            timings[Stage::Propagate.index()] += t.elapsed();
            emit(f, Stage::Propagate, &set, None, None, None);
        }

        let t = Instant::now();
        stages::compute_likelihoods(&mut set, frame, &consts, consts.form, &mut ctx);
        timings[Stage::Likelihood.index()] += t.elapsed();
        emit(f, Stage::Likelihood, &set, None, None, None);

        let t = Instant::now();
        let m = stages::max_loglik(&set, &mut ctx);
        timings[Stage::Max.index()] += t.elapsed();
        let mv = Some(m.read(0));
        emit(f, Stage::Max, &set, mv, None, None);

        let t = Instant::now();
        let sum = stages::weight_update(&mut set, m, &mut ctx);
        timings[Stage::Weight.index()] += t.elapsed();
        let sv = Some(sum.read(0));
        emit(f, Stage::Weight, &set, mv, sv, None);

        let t = Instant::now();
        stages::normalize_and_scan(&mut set, sum, consts.plan, &mut ctx).map_err(|e| match e {
            Error::Degenerate { detail, .. } => Error::Degenerate { frame: f, detail },
            other => other,
        })?;
        timings[Stage::Normalize.index()] += t.elapsed();
        emit(f, Stage::Normalize, &set, mv, sv, None);

        let est = stages::estimate(&set, &mut ctx);
        trajectory.push(est);

        let t = Instant::now();
        stages::systematic_resample(&mut set, draws.u, &consts, &mut ctx);
        timings[Stage::Resample.index()] += t.elapsed();
        emit(f, Stage::Resample, &set, mv, sv, Some(est));
    }

    Ok(RunOutput {
        trajectory,
        counters: ctx,
        timings,
        total: begin.elapsed(),
    })
}
