//! The six per-frame kernels plus the state estimate.
//!
//! Each kernel works lane by lane: one particle per lane in the scalar
//! modes, two in packed mode. Elementwise kernels fan out over the rayon
//! pool; every lane's result depends only on its inputs, and the counters
//! are integer sums, so neither depends on the worker count.

use rayon::prelude::*;

use super::reduce::{self, Reduction};
use super::{ParticleSet, RunConstants};
use crate::error::{Error, Result};
use crate::halfnum::{Binary16, OpCounters};
use crate::model::{accumulate_direct, accumulate_stabilized, pixel_center, Frame, LikelihoodForm};
use crate::precision::Lane;

const PAR_MIN_LEN: usize = 64;

/// How normalization and resampling sample points are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelPlan {
    /// `f64`: divide by the sum; points `(k + u) / K` in `f64`.
    Wide64,
    /// `f32`: same arithmetic in `f32`.
    Wide32,
    /// binary16, with the reciprocal and index arithmetic redone per
    /// particle in `f32` and converted back.
    HalfNaive,
    /// binary16, with the reciprocal, `u/K` and the `k/K` grid kept as
    /// binary16 constants.
    HalfOptimized,
}

fn merge_into(ctx: &mut OpCounters, c: OpCounters) {
    *ctx += c;
}

/// Moves every particle from its ancestor's position through the
/// transition model, using the given standard-normal draws.
pub fn propagate<P: Lane>(
    set: &mut ParticleSet<P>,
    normals: &[(f64, f64)],
    consts: &RunConstants<P>,
    ctx: &mut OpCounters,
) {
    assert_eq!(normals.len(), set.len());
    let old_x = set.xs.clone();
    let old_y = set.ys.clone();
    let split = set.split;
    let ancestors = &set.ancestors;
    let c = set
        .xs
        .par_iter_mut()
        .zip(set.ys.par_iter_mut())
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .fold(OpCounters::default, |mut c, (j, (x, y))| {
            let k = |l: usize| particle_of::<P>(j, l, split);
            let ax = P::from_lanes(|l| lane_get(&old_x, ancestors[k(l)], split));
            let ay = P::from_lanes(|l| lane_get(&old_y, ancestors[k(l)], split));
            let nx = P::narrow_with(&mut c, |l| normals[k(l)].0);
            let ny = P::narrow_with(&mut c, |l| normals[k(l)].1);
            let sx = consts.std_x.mul(nx, &mut c);
            let sy = consts.std_y.mul(ny, &mut c);
            *x = ax.add(consts.drift_x, &mut c).add(sx, &mut c);
            *y = ay.add(consts.drift_y, &mut c).add(sy, &mut c);
            c
        })
        .reduce(OpCounters::default, |a, b| a + b);
    merge_into(ctx, c);
}

/// Evaluates the log-likelihood of every particle on `frame`.
pub fn compute_likelihoods<P: Lane>(
    set: &mut ParticleSet<P>,
    frame: &Frame,
    consts: &RunConstants<P>,
    form: LikelihoodForm,
    ctx: &mut OpCounters,
) {
    let offsets = consts.template.offsets();
    let lut = &consts.intensity;
    let c = set
        .loglik
        .par_iter_mut()
        .zip(set.xs.par_iter().zip(set.ys.par_iter()))
        .with_min_len(PAR_MIN_LEN)
        .fold(OpCounters::default, |mut c, (out, (x, y))| {
            let mut cx = [0i64; 2];
            let mut cy = [0i64; 2];
            x.widen_each(&mut c, |l, v| cx[l] = pixel_center(v));
            y.widen_each(&mut c, |l, v| cy[l] = pixel_center(v));
            let pixels = offsets.iter().map(|&(dx, dy)| {
                P::from_lanes(|l| {
                    let i = frame.get_clamped(cx[l] + i64::from(dx), cy[l] + i64::from(dy));
                    lut[usize::from(i)]
                })
            });
            *out = match form {
                LikelihoodForm::Direct => accumulate_direct(pixels, &consts.lik, &mut c),
                LikelihoodForm::Stabilized => accumulate_stabilized(pixels, &consts.lik, &mut c),
            };
            c
        })
        .reduce(OpCounters::default, |a, b| a + b);
    merge_into(ctx, c);
}

/// Largest log-likelihood, by a fixed-shape tree.
pub fn max_loglik<P: Lane>(set: &ParticleSet<P>, ctx: &mut OpCounters) -> P::Scalar {
    reduce::reduce(&set.loglik, set.split, Reduction::Max, ctx)
}

/// `w <- w * exp(L - max)`; returns the sum of the new weights.
pub fn weight_update<P: Lane>(
    set: &mut ParticleSet<P>,
    max: P::Scalar,
    ctx: &mut OpCounters,
) -> P::Scalar {
    let m = P::splat(max);
    let c = set
        .weights
        .par_iter_mut()
        .zip(set.loglik.par_iter())
        .with_min_len(PAR_MIN_LEN)
        .fold(OpCounters::default, |mut c, (w, l)| {
            let e = l.sub(m, &mut c).exp(&mut c);
            *w = w.mul(e, &mut c);
            c
        })
        .reduce(OpCounters::default, |a, b| a + b);
    merge_into(ctx, c);
    reduce::reduce(&set.weights, set.split, Reduction::Sum, ctx)
}

/// Normalizes the weights by `sum` and fills the cumulative distribution.
pub fn normalize_and_scan<P: Lane>(
    set: &mut ParticleSet<P>,
    sum: P::Scalar,
    plan: KernelPlan,
    ctx: &mut OpCounters,
) -> Result<()> {
    let s = sum.read(0);
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::Degenerate {
            frame: 0,
            detail: format!("weight sum is {s}"),
        });
    }
    let c = match plan {
        KernelPlan::Wide64 | KernelPlan::Wide32 => {
            let d = P::splat(sum);
            set.weights
                .par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .fold(OpCounters::default, |mut c, w| {
                    *w = w.div(d, &mut c);
                    c
                })
                .reduce(OpCounters::default, |a, b| a + b)
        }
        KernelPlan::HalfOptimized => {
            let r = sum.recip(ctx);
            check_reciprocal(r.read(0), s)?;
            let r = P::splat(r);
            set.weights
                .par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .fold(OpCounters::default, |mut c, w| {
                    *w = w.mul(r, &mut c);
                    c
                })
                .reduce(OpCounters::default, |a, b| a + b)
        }
        KernelPlan::HalfNaive => {
            check_reciprocal(Binary16::from_f64(f64::from(1.0f32 / s as f32)).to_f64(), s)?;
            set.weights
                .par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .fold(OpCounters::default, |mut c, w| {
                    // Each particle widens the sum and takes its own
                    // reciprocal in f32.
                    c.widen_count += P::LANES as u64;
                    c.special_fn_count += P::LANES as u64;
                    let r = P::narrow_with(&mut c, |_| f64::from(1.0f32 / s as f32));
                    *w = w.mul(r, &mut c);
                    c
                })
                .reduce(OpCounters::default, |a, b| a + b)
        }
    };
    merge_into(ctx, c);
    set.cdf.copy_from_slice(&set.weights);
    reduce::inclusive_scan(&mut set.cdf, set.split, ctx);
    Ok(())
}

fn check_reciprocal(r: f64, sum: f64) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::Degenerate {
            frame: 0,
            detail: format!("reciprocal of weight sum {sum} is not representable"),
        })
    }
}

/// Weighted mean of the particle positions, accumulated in `f64`.
pub fn estimate<P: Lane>(set: &ParticleSet<P>, ctx: &mut OpCounters) -> (f64, f64) {
    let k = set.len();
    let widen_all = |data: &[P], ctx: &mut OpCounters| {
        let mut out = vec![0.0; k];
        for (j, v) in data.iter().enumerate() {
            v.widen_each(ctx, |l, x| out[particle_of::<P>(j, l, set.split)] = x);
        }
        out
    };
    let w = widen_all(&set.weights, ctx);
    let x = widen_all(&set.xs, ctx);
    let y = widen_all(&set.ys, ctx);
    let (mut ex, mut ey) = (0.0, 0.0);
    for i in 0..k {
        ex += w[i] * x[i];
        ey += w[i] * y[i];
    }
    ctx.count_wide(4 * k as u64);
    (ex, ey)
}

/// Systematic resampling against the current cumulative distribution.
///
/// Sample point `k` is `(k + u) / K`; its ancestor is the first index whose
/// cumulative weight reaches the point, or the last index if rounding left
/// the distribution short of it. Afterwards all weights are reset to `1/K`.
pub fn systematic_resample<P: Lane>(
    set: &mut ParticleSet<P>,
    u: f64,
    consts: &RunConstants<P>,
    ctx: &mut OpCounters,
) {
    let k_total = set.len();
    let split = set.split;
    let plan = consts.plan;
    let kf = k_total as f64;
    let base = match plan {
        KernelPlan::HalfOptimized => {
            let uh = <P::Scalar as Lane>::narrow(u, ctx);
            Some(P::splat(uh.mul(consts.inv_k, ctx)))
        }
        _ => None,
    };
    let cdf = &set.cdf;
    let grid = &consts.grid;

    let sample = |j: usize| {
        let mut c = OpCounters::new();
        let k = |l: usize| particle_of::<P>(j, l, split);
        let p = match plan {
            KernelPlan::Wide64 => {
                c.count_wide(2 * P::LANES as u64);
                P::narrow_with(&mut c, |l| (k(l) as f64 + u) / kf)
            }
            KernelPlan::Wide32 => {
                c.count_wide(2 * P::LANES as u64);
                P::narrow_with(&mut c, |l| {
                    f64::from((k(l) as f32 + u as f32) / k_total as f32)
                })
            }
            KernelPlan::HalfNaive => {
                let uh = P::narrow_with(&mut c, |_| u);
                c.count_special(P::LANES as u64);
                let inv = P::narrow_with(&mut c, |_| f64::from(1.0f32 / k_total as f32));
                let b = uh.mul(inv, &mut c);
                c.count_wide(P::LANES as u64);
                let g = P::narrow_with(&mut c, |l| f64::from(k(l) as f32 / k_total as f32));
                g.add(b, &mut c)
            }
            KernelPlan::HalfOptimized => grid[j].add(base.expect("base"), &mut c),
        };
        (lower_bound::<P>(cdf, split, k_total, p, &mut c), c)
    };
    // Small sets are not worth a trip through the pool.
    let lanes = set.lanes();
    let results: Vec<([usize; 2], OpCounters)> = if lanes <= PAR_MIN_LEN {
        (0..lanes).map(sample).collect()
    } else {
        (0..lanes)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(sample)
            .collect()
    };

    for (j, (anc, c)) in results.into_iter().enumerate() {
        for (l, &a) in anc.iter().enumerate().take(P::LANES) {
            set.ancestors[particle_of::<P>(j, l, split)] = a;
        }
        *ctx += c;
    }
    let w = P::splat(consts.inv_k);
    set.weights.iter_mut().for_each(|x| *x = w);
}

/// Branchless lower bound, all lanes in lockstep: the loop trip count
/// depends only on `n`.
fn lower_bound<P: Lane>(
    cdf: &[P],
    split: usize,
    n: usize,
    p: P,
    ctx: &mut OpCounters,
) -> [usize; 2] {
    let mut base = [0usize; 2];
    let mut size = n;
    while size > 1 {
        let half = size / 2;
        let probe = P::from_lanes(|l| lane_get(cdf, base[l] + half, split));
        let mask = probe.lt_mask(p, ctx);
        for (l, b) in base.iter_mut().enumerate().take(P::LANES) {
            if mask >> l & 1 == 1 {
                *b += half;
            }
        }
        size -= half;
    }
    let probe = P::from_lanes(|l| lane_get(cdf, base[l], split));
    let mask = probe.lt_mask(p, ctx);
    let mut out = [0usize; 2];
    for l in 0..P::LANES {
        let idx = base[l] + usize::from(mask >> l & 1 == 1);
        out[l] = idx.min(n - 1);
    }
    out
}

/// Particle index held by lane `l` of storage slot `j`.
#[inline]
pub(crate) fn particle_of<P: Lane>(j: usize, l: usize, split: usize) -> usize {
    j + l * split
}

/// Scalar value of particle `k` from lane storage.
#[inline]
pub(crate) fn lane_get<P: Lane>(data: &[P], k: usize, split: usize) -> P::Scalar {
    if P::LANES == 1 {
        data[k].lane(0)
    } else {
        data[k % split].lane(k / split)
    }
}
