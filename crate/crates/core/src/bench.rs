//! Sweeps over precision, particle count and worker count.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{self, RunConfig, RunOutput, Stage};
use crate::halfnum::OpCounters;
use crate::model::{ModelParams, Video};
use crate::precision::{HalfKernel, PrecisionMode};
use crate::rng::derive_seed;

pub const CSV_HEADER: &str = "mode,K,workers,repeat,total_ms,t_propagate,t_likelihood,t_max,\
t_weight,t_normalize,t_resample,rmse,mean_err_fp64,widen,narrow,half_arith,wide_arith,special_fn";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub mode: PrecisionMode,
    pub particles: usize,
    pub workers: usize,
    pub repeat: usize,
    pub total_ms: f64,
    /// Indexed like [`Stage::ALL`].
    pub stage_ms: [f64; 6],
    pub rmse: f64,
    pub mean_err_fp64: f64,
    pub counters: OpCounters,
    /// Set when the configuration could not run; metrics are then NaN.
    pub error: Option<String>,
}

impl BenchRecord {
    fn from_output(
        mode: PrecisionMode,
        particles: usize,
        workers: usize,
        repeat: usize,
        out: &RunOutput,
        truth: &[(f64, f64)],
        reference: Option<&[(f64, f64)]>,
    ) -> Self {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let rmse = accuracy_metrics(&out.trajectory, truth).map_or(f64::NAN, |m| m.0);
        let mean_err_fp64 = match reference {
            Some(r) => accuracy_metrics(&out.trajectory, r).map_or(f64::NAN, |m| m.1),
            None => f64::NAN,
        };
        BenchRecord {
            mode,
            particles,
            workers,
            repeat,
            total_ms: ms(out.total),
            stage_ms: Stage::ALL.map(|s| ms(out.stage_time(s))),
            rmse,
            mean_err_fp64,
            counters: out.counters,
            error: None,
        }
    }

    fn failed(
        mode: PrecisionMode,
        particles: usize,
        workers: usize,
        repeat: usize,
        e: &Error,
    ) -> Self {
        BenchRecord {
            mode,
            particles,
            workers,
            repeat,
            total_ms: f64::NAN,
            stage_ms: [f64::NAN; 6],
            rmse: f64::NAN,
            mean_err_fp64: f64::NAN,
            counters: OpCounters::new(),
            error: Some(e.to_string()),
        }
    }

    pub fn csv_row(&self) -> String {
        let c = &self.counters;
        let mut s = format!(
            "{},{},{},{},{}",
            self.mode, self.particles, self.workers, self.repeat, self.total_ms
        );
        for t in self.stage_ms {
            write!(s, ",{t}").expect("write to string");
        }
        write!(
            s,
            ",{},{},{},{},{},{},{}",
            self.rmse,
            self.mean_err_fp64,
            c.widen_count,
            c.narrow_count,
            c.half_arith_count,
            c.wide_arith_count,
            c.special_fn_count
        )
        .expect("write to string");
        s
    }
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// `(rmse, mean, max)` of the per-frame Euclidean errors.
pub fn accuracy_metrics(traj: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if traj.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} frames, truth has {}",
            traj.len(),
            truth.len()
        )));
    }
    if traj.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let n = traj.len() as f64;
    let (mut sq, mut sum, mut max) = (0.0, 0.0, 0.0f64);
    for (a, b) in traj.iter().zip(truth) {
        let d = (a.0 - b.0).hypot(a.1 - b.1);
        sq += d * d;
        sum += d;
        max = max.max(d);
    }
    Ok(((sq / n).sqrt(), sum / n, max))
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub particles: Vec<usize>,
    pub modes: Vec<PrecisionMode>,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub params: ModelParams,
    pub start: (f64, f64),
    pub half_kernel: Option<HalfKernel>,
    /// Run configurations concurrently. Timings are then unreliable.
    pub parallel_configs: bool,
}

impl SweepConfig {
    pub fn new(start: (f64, f64)) -> Self {
        SweepConfig {
            particles: vec![32768, 65536],
            modes: PrecisionMode::ALL.to_vec(),
            workers: vec![1, 2, 4, 8],
            repeats: 100,
            seed: 42,
            params: ModelParams::default(),
            start,
            half_kernel: None,
            parallel_configs: false,
        }
    }
}

#[derive(Clone, Copy)]
struct Job {
    mode: PrecisionMode,
    particles: usize,
    workers: usize,
    repeat: usize,
}

/// Runs every configuration `repeats` times, ordered by particle count,
/// then mode, then workers, then repeat. Repeat `r` uses seed
/// `derive_seed(seed, r)` in every configuration, and its accuracy is also
/// compared with the single-worker `f64` run under that seed.
pub fn run_sweep(video: &Video, cfg: &SweepConfig) -> Vec<BenchRecord> {
    let mut jobs = Vec::new();
    for &particles in &cfg.particles {
        for &mode in &cfg.modes {
            for &workers in &cfg.workers {
                for repeat in 0..cfg.repeats {
                    jobs.push(Job {
                        mode,
                        particles,
                        workers,
                        repeat,
                    });
                }
            }
        }
    }

    let run_cfg = |mode, particles, workers, repeat: usize| RunConfig {
        particles,
        mode,
        seed: derive_seed(cfg.seed, repeat as u64),
        workers,
        half_kernel: cfg.half_kernel,
        params: cfg.params.clone(),
        start: cfg.start,
    };

    // f64 reference trajectories, one per (K, repeat).
    let mut keys: Vec<(usize, usize)> = jobs.iter().map(|j| (j.particles, j.repeat)).collect();
    keys.sort_unstable();
    keys.dedup();
    let reference_of = |&(k, r): &(usize, usize)| {
        let out = filter::run(video, &run_cfg(PrecisionMode::Fp64, k, 1, r)).ok();
        ((k, r), out.map(|o| o.trajectory))
    };
    let references: HashMap<(usize, usize), Option<Vec<(f64, f64)>>> = if cfg.parallel_configs {
        keys.par_iter().map(reference_of).collect()
    } else {
        keys.iter().map(reference_of).collect()
    };

    let one = |j: &Job| {
        let rc = run_cfg(j.mode, j.particles, j.workers, j.repeat);
        match filter::run(video, &rc) {
            Ok(out) => {
                let reference = references
                    .get(&(j.particles, j.repeat))
                    .and_then(|r| r.as_deref());
                BenchRecord::from_output(
                    j.mode,
                    j.particles,
                    j.workers,
                    j.repeat,
                    &out,
                    &video.truth,
                    reference,
                )
            }
            Err(e) => BenchRecord::failed(j.mode, j.particles, j.workers, j.repeat, &e),
        }
    };
    if cfg.parallel_configs {
        jobs.par_iter().map(one).collect()
    } else {
        jobs.iter().map(one).collect()
    }
}
