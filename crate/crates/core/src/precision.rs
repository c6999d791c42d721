//! Precision modes and the lane abstraction the filter kernels are written
//! against.
//!
//! A [`Lane`] is the unit one "thread" of a kernel works on: a single `f64`,
//! `f32` or [`Binary16`] particle value, or a [`PackedPair`] holding two
//! particles. All arithmetic takes the run's [`OpCounters`] so the same
//! kernel code produces the instrumentation for every mode.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::halfnum::{Binary16, OpCounters, PackedOp, PackedPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrecisionMode {
    Fp64,
    Fp32,
    Fp16Scalar,
    Fp16Packed,
}

impl PrecisionMode {
    pub const ALL: [PrecisionMode; 4] = [
        PrecisionMode::Fp64,
        PrecisionMode::Fp32,
        PrecisionMode::Fp16Scalar,
        PrecisionMode::Fp16Packed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Fp64 => "fp64",
            PrecisionMode::Fp32 => "fp32",
            PrecisionMode::Fp16Scalar => "fp16",
            PrecisionMode::Fp16Packed => "fp16-packed",
        }
    }

    pub fn is_half(self) -> bool {
        matches!(self, PrecisionMode::Fp16Scalar | PrecisionMode::Fp16Packed)
    }

    /// The binary16 resampling kernel a mode uses unless told otherwise:
    /// the scalar port is the straightforward one, the packed port carries
    /// the saved-constant optimization.
    pub fn default_half_kernel(self) -> HalfKernel {
        match self {
            PrecisionMode::Fp16Packed => HalfKernel::Optimized,
            _ => HalfKernel::Naive,
        }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fp64" | "double" => Ok(PrecisionMode::Fp64),
            "fp32" | "float" => Ok(PrecisionMode::Fp32),
            "fp16" | "half" => Ok(PrecisionMode::Fp16Scalar),
            "fp16-packed" | "half2" => Ok(PrecisionMode::Fp16Packed),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision `{other}` (expected fp64, fp32, fp16 or fp16-packed)"
            ))),
        }
    }
}

/// How the binary16 modes build the normalization reciprocal and the
/// resampling sample points.
///
/// Both variants produce bit-identical values. `Naive` recomputes the
/// reciprocal of the weight sum, `1/K` and each `k/K` per particle in `f32`
/// and converts the results back to binary16; `Optimized` keeps them as
/// binary16 constants computed once per frame (or once per run for the
/// `k/K` grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HalfKernel {
    Naive,
    Optimized,
}

impl FromStr for HalfKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(HalfKernel::Naive),
            "optimized" | "opt" => Ok(HalfKernel::Optimized),
            other => Err(Error::InvalidArgument(format!(
                "unknown half kernel `{other}`"
            ))),
        }
    }
}

/// Numeric unit processed by one kernel invocation.
pub trait Lane: Copy + Send + Sync + Default + PartialEq + fmt::Debug + 'static {
    /// Type of one lane. Scalar lanes are their own scalar.
    type Scalar: Lane<Scalar = Self::Scalar>;

    /// Particles per lane.
    const LANES: usize;
    /// Whether values are stored as binary16 (and conversions are counted).
    const HALF: bool;

    /// Converts from `f64`, one value per lane. Counted for binary16.
    fn narrow_with(ctx: &mut OpCounters, f: impl FnMut(usize) -> f64) -> Self;
    /// Converts each lane to `f64`. Counted for binary16.
    fn widen_each(self, ctx: &mut OpCounters, f: impl FnMut(usize, f64));
    /// Uncounted exact readback, used for snapshots and tests.
    fn read(self, lane: usize) -> f64;

    fn lane(self, i: usize) -> Self::Scalar;
    fn from_lanes(f: impl FnMut(usize) -> Self::Scalar) -> Self;
    fn splat(s: Self::Scalar) -> Self;

    fn add(self, rhs: Self, ctx: &mut OpCounters) -> Self;
    fn sub(self, rhs: Self, ctx: &mut OpCounters) -> Self;
    fn mul(self, rhs: Self, ctx: &mut OpCounters) -> Self;
    fn div(self, rhs: Self, ctx: &mut OpCounters) -> Self;
    /// Lane-wise maximum; `self` wins ties.
    fn max(self, rhs: Self, ctx: &mut OpCounters) -> Self;
    fn exp(self, ctx: &mut OpCounters) -> Self;
    fn recip(self, ctx: &mut OpCounters) -> Self;
    /// Lane-wise `self < rhs` as a bit mask (bit `i` for lane `i`).
    fn lt_mask(self, rhs: Self, ctx: &mut OpCounters) -> u8;

    fn zero() -> Self;
    fn neg_infinity() -> Self;

    /// Convenience for single-lane types.
    fn narrow(x: f64, ctx: &mut OpCounters) -> Self {
        Self::narrow_with(ctx, |_| x)
    }

    fn is_finite_all(self) -> bool {
        (0..Self::LANES).all(|i| self.read(i).is_finite())
    }
}

impl Lane for f64 {
    type Scalar = f64;
    const LANES: usize = 1;
    const HALF: bool = false;

    #[inline]
    fn narrow_with(_: &mut OpCounters, mut f: impl FnMut(usize) -> f64) -> Self {
        f(0)
    }
    #[inline]
    fn widen_each(self, _: &mut OpCounters, mut f: impl FnMut(usize, f64)) {
        f(0, self)
    }
    #[inline]
    fn read(self, _: usize) -> f64 {
        self
    }
    #[inline]
    fn lane(self, _: usize) -> f64 {
        self
    }
    #[inline]
    fn from_lanes(mut f: impl FnMut(usize) -> f64) -> Self {
        f(0)
    }
    #[inline]
    fn splat(s: f64) -> Self {
        s
    }
    #[inline]
    fn add(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self + rhs
    }
    #[inline]
    fn sub(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self - rhs
    }
    #[inline]
    fn mul(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self * rhs
    }
    #[inline]
    fn div(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self / rhs
    }
    #[inline]
    fn max(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        if rhs > self {
            rhs
        } else {
            self
        }
    }
    #[inline]
    fn exp(self, ctx: &mut OpCounters) -> Self {
        ctx.special_fn_count += 1;
        f64::exp(self)
    }
    #[inline]
    fn recip(self, ctx: &mut OpCounters) -> Self {
        ctx.special_fn_count += 1;
        1.0 / self
    }
    #[inline]
    fn lt_mask(self, rhs: Self, ctx: &mut OpCounters) -> u8 {
        ctx.wide_arith_count += 1;
        u8::from(self < rhs)
    }
    fn zero() -> Self {
        0.0
    }
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
}

impl Lane for f32 {
    type Scalar = f32;
    const LANES: usize = 1;
    const HALF: bool = false;

    #[inline]
    fn narrow_with(_: &mut OpCounters, mut f: impl FnMut(usize) -> f64) -> Self {
        f(0) as f32
    }
    #[inline]
    fn widen_each(self, _: &mut OpCounters, mut f: impl FnMut(usize, f64)) {
        f(0, f64::from(self))
    }
    #[inline]
    fn read(self, _: usize) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn lane(self, _: usize) -> f32 {
        self
    }
    #[inline]
    fn from_lanes(mut f: impl FnMut(usize) -> f32) -> Self {
        f(0)
    }
    #[inline]
    fn splat(s: f32) -> Self {
        s
    }
    #[inline]
    fn add(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self + rhs
    }
    #[inline]
    fn sub(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self - rhs
    }
    #[inline]
    fn mul(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self * rhs
    }
    #[inline]
    fn div(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        self / rhs
    }
    #[inline]
    fn max(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.wide_arith_count += 1;
        if rhs > self {
            rhs
        } else {
            self
        }
    }
    #[inline]
    fn exp(self, ctx: &mut OpCounters) -> Self {
        ctx.special_fn_count += 1;
        f32::exp(self)
    }
    #[inline]
    fn recip(self, ctx: &mut OpCounters) -> Self {
        ctx.special_fn_count += 1;
        1.0 / self
    }
    #[inline]
    fn lt_mask(self, rhs: Self, ctx: &mut OpCounters) -> u8 {
        ctx.wide_arith_count += 1;
        u8::from(self < rhs)
    }
    fn zero() -> Self {
        0.0
    }
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
}

impl Lane for Binary16 {
    type Scalar = Binary16;
    const LANES: usize = 1;
    const HALF: bool = true;

    #[inline]
    fn narrow_with(ctx: &mut OpCounters, mut f: impl FnMut(usize) -> f64) -> Self {
        ctx.narrow(f(0))
    }
    #[inline]
    fn widen_each(self, ctx: &mut OpCounters, mut f: impl FnMut(usize, f64)) {
        f(0, ctx.widen(self))
    }
    #[inline]
    fn read(self, _: usize) -> f64 {
        self.to_f64()
    }
    #[inline]
    fn lane(self, _: usize) -> Binary16 {
        self
    }
    #[inline]
    fn from_lanes(mut f: impl FnMut(usize) -> Binary16) -> Self {
        f(0)
    }
    #[inline]
    fn splat(s: Binary16) -> Self {
        s
    }
    #[inline]
    fn add(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.add16(self, rhs)
    }
    #[inline]
    fn sub(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.sub16(self, rhs)
    }
    #[inline]
    fn mul(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.mul16(self, rhs)
    }
    #[inline]
    fn div(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.div16(self, rhs)
    }
    #[inline]
    fn max(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.max(self, rhs)
    }
    #[inline]
    fn exp(self, ctx: &mut OpCounters) -> Self {
        ctx.exp16(self)
    }
    #[inline]
    fn recip(self, ctx: &mut OpCounters) -> Self {
        ctx.recip16(self)
    }
    #[inline]
    fn lt_mask(self, rhs: Self, ctx: &mut OpCounters) -> u8 {
        u8::from(ctx.lt(self, rhs))
    }
    fn zero() -> Self {
        Binary16::ZERO
    }
    fn neg_infinity() -> Self {
        Binary16::NEG_INFINITY
    }
}

impl Lane for PackedPair {
    type Scalar = Binary16;
    const LANES: usize = 2;
    const HALF: bool = true;

    #[inline]
    fn narrow_with(ctx: &mut OpCounters, mut f: impl FnMut(usize) -> f64) -> Self {
        let lo = ctx.narrow(f(0));
        let hi = ctx.narrow(f(1));
        PackedPair::new(lo, hi)
    }
    #[inline]
    fn widen_each(self, ctx: &mut OpCounters, mut f: impl FnMut(usize, f64)) {
        f(0, ctx.widen(self.lo));
        f(1, ctx.widen(self.hi));
    }
    #[inline]
    fn read(self, lane: usize) -> f64 {
        self.lane(lane).to_f64()
    }
    #[inline]
    fn lane(self, i: usize) -> Binary16 {
        if i == 0 {
            self.lo
        } else {
            self.hi
        }
    }
    #[inline]
    fn from_lanes(mut f: impl FnMut(usize) -> Binary16) -> Self {
        let lo = f(0);
        PackedPair::new(lo, f(1))
    }
    #[inline]
    fn splat(s: Binary16) -> Self {
        PackedPair::splat(s)
    }
    #[inline]
    fn add(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.packed(PackedOp::Add, self, rhs)
    }
    #[inline]
    fn sub(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.packed(PackedOp::Sub, self, rhs)
    }
    #[inline]
    fn mul(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.packed(PackedOp::Mul, self, rhs)
    }
    #[inline]
    fn div(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.packed(PackedOp::Div, self, rhs)
    }
    #[inline]
    fn max(self, rhs: Self, ctx: &mut OpCounters) -> Self {
        ctx.packed_max(self, rhs)
    }
    #[inline]
    fn exp(self, ctx: &mut OpCounters) -> Self {
        ctx.packed_exp(self)
    }
    #[inline]
    fn recip(self, ctx: &mut OpCounters) -> Self {
        ctx.special_fn_count += 1;
        self.map(Binary16::recip)
    }
    #[inline]
    fn lt_mask(self, rhs: Self, ctx: &mut OpCounters) -> u8 {
        let (lo, hi) = ctx.packed_lt(self, rhs);
        u8::from(lo) | (u8::from(hi) << 1)
    }
    fn zero() -> Self {
        PackedPair::splat(Binary16::ZERO)
    }
    fn neg_infinity() -> Self {
        PackedPair::splat(Binary16::NEG_INFINITY)
    }
}
