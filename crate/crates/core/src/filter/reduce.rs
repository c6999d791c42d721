//! Fixed-order reductions and prefix sums.
//!
//! The evaluation order depends only on the particle count, never on the
//! number of workers, so results are reproducible bit for bit. Particles are
//! split into a lower and an upper half; in packed mode the two halves are the
//! two lanes of each pair, and in scalar modes the halves are processed one
//! after the other with exactly the same per-element operations. That is what
//! makes the packed and scalar binary16 paths agree bitwise.

use rayon::prelude::*;

use crate::halfnum::OpCounters;
use crate::precision::Lane;

/// Below this many elements a level of a reduction runs serially.
const PAR_LEVEL_MIN: usize = 4096;

/// Chunk length of the two-level prefix sum.
pub const SCAN_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Max,
}

impl Reduction {
    #[inline]
    fn combine<L: Lane>(self, a: L, b: L, ctx: &mut OpCounters) -> L {
        match self {
            Reduction::Sum => a.add(b, ctx),
            Reduction::Max => a.max(b, ctx),
        }
    }

    fn identity<L: Lane>(self) -> L {
        match self {
            Reduction::Sum => L::zero(),
            Reduction::Max => L::neg_infinity(),
        }
    }
}

/// Sequential-addressing tree: at stride `s`, `buf[i] = buf[i] op buf[i+s]`
/// for `i < s`, with `s` halving from `width/2` down to 1. `data` is padded
/// with the identity up to `width`, a power of two.
fn tree<L: Lane>(data: &[L], width: usize, r: Reduction, ctx: &mut OpCounters) -> L {
    debug_assert!(width.is_power_of_two() && data.len() <= width);
    let mut buf = Vec::with_capacity(width);
    buf.extend_from_slice(data);
    buf.resize(width, r.identity());
    let mut s = width / 2;
    while s >= 1 {
        let (left, right) = buf.split_at_mut(s);
        if s >= PAR_LEVEL_MIN {
            let c = left
                .par_iter_mut()
                .zip(right[..s].par_iter())
                .with_min_len(PAR_LEVEL_MIN / 2)
                .fold(OpCounters::default, |mut c, (a, b)| {
                    *a = r.combine(*a, *b, &mut c);
                    c
                })
                .reduce(OpCounters::default, |a, b| a + b);
            *ctx += c;
        } else {
            for (a, b) in left.iter_mut().zip(&right[..s]) {
                *a = r.combine(*a, *b, ctx);
            }
        }
        s /= 2;
    }
    buf[0]
}

/// Reduces lane storage to one scalar. `split` is the number of particles
/// in the lower half, which is also the number of packed lanes.
pub fn reduce<P: Lane>(data: &[P], split: usize, r: Reduction, ctx: &mut OpCounters) -> P::Scalar {
    let width = split.next_power_of_two();
    if P::LANES == 2 {
        let t = tree(data, width, r, ctx);
        r.combine(t.lane(0), t.lane(1), ctx)
    } else {
        let lo = tree(&data[..split], width, r, ctx).lane(0);
        let hi = tree(&data[split..], width, r, ctx).lane(0);
        r.combine(lo, hi, ctx)
    }
}

/// Sequential inclusive scan of each chunk; returns each chunk's total.
fn chunk_scans<P: Lane>(data: &mut [P], ctx: &mut OpCounters) -> Vec<P> {
    let parts: Vec<(P, OpCounters)> = data
        .par_chunks_mut(SCAN_CHUNK)
        .map(|chunk| {
            let mut c = OpCounters::new();
            for i in 1..chunk.len() {
                chunk[i] = chunk[i - 1].add(chunk[i], &mut c);
            }
            (chunk[chunk.len() - 1], c)
        })
        .collect();
    let mut totals = Vec::with_capacity(parts.len());
    for (t, c) in parts {
        totals.push(t);
        *ctx += c;
    }
    totals
}

fn add_offsets<P: Lane>(data: &mut [P], offsets: &[P], ctx: &mut OpCounters) {
    let c = data
        .par_chunks_mut(SCAN_CHUNK)
        .zip(offsets.par_iter())
        .fold(OpCounters::default, |mut c, (chunk, &off)| {
            for x in chunk.iter_mut() {
                *x = off.add(*x, &mut c);
            }
            c
        })
        .reduce(OpCounters::default, |a, b| a + b);
    *ctx += c;
}

/// Running offsets over chunk totals: lower half first, then upper half.
fn offset_chain<S: Lane>(lo: &[S], hi: &[S], ctx: &mut OpCounters) -> (Vec<S>, Vec<S>) {
    let mut running = S::zero();
    let mut chain = |totals: &[S], ctx: &mut OpCounters| {
        totals
            .iter()
            .map(|&t| {
                let off = running;
                running = running.add(t, ctx);
                off
            })
            .collect::<Vec<S>>()
    };
    let off_lo = chain(lo, ctx);
    let off_hi = chain(hi, ctx);
    (off_lo, off_hi)
}

/// In-place inclusive prefix sum in particle order.
///
/// Two levels: a sequential scan inside fixed-size chunks, then a running
/// sum over chunk totals added back to each chunk. For non-negative inputs
/// the result is non-decreasing even after rounding, because each chunk's
/// offset is computed from exactly the value its predecessor ends on.
pub fn inclusive_scan<P: Lane>(data: &mut [P], split: usize, ctx: &mut OpCounters) {
    if P::LANES == 2 {
        let totals = chunk_scans(data, ctx);
        let lo: Vec<P::Scalar> = totals.iter().map(|t| t.lane(0)).collect();
        let hi: Vec<P::Scalar> = totals.iter().map(|t| t.lane(1)).collect();
        let (off_lo, off_hi) = offset_chain(&lo, &hi, ctx);
        let offsets: Vec<P> = off_lo
            .iter()
            .zip(&off_hi)
            .map(|(&a, &b)| P::from_lanes(|l| if l == 0 { a } else { b }))
            .collect();
        add_offsets(data, &offsets, ctx);
    } else {
        let (lo_data, hi_data) = data.split_at_mut(split);
        let lo: Vec<P::Scalar> = chunk_scans(lo_data, ctx)
            .iter()
            .map(|t| t.lane(0))
            .collect();
        let hi: Vec<P::Scalar> = chunk_scans(hi_data, ctx)
            .iter()
            .map(|t| t.lane(0))
            .collect();
        let (off_lo, off_hi) = offset_chain(&lo, &hi, ctx);
        let off_lo: Vec<P> = off_lo.into_iter().map(P::splat).collect();
        let off_hi: Vec<P> = off_hi.into_iter().map(P::splat).collect();
        add_offsets(lo_data, &off_lo, ctx);
        add_offsets(hi_data, &off_hi, ctx);
    }
}
