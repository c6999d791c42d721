//! IEEE 754 binary16 arithmetic in software.
//!
//! Every operation widens its operands to `f64`, computes there, and rounds
//! once back to binary16 with round-to-nearest, ties-to-even. For `+ - * /`
//! and `sqrt` this is exactly the correctly rounded binary16 result: sums and
//! products of two binary16 values are exact in `f64`, and for quotients and
//! square roots the 53-bit intermediate is wide enough that the second
//! rounding cannot change the answer. Fused multiply-add goes through a
//! round-to-odd step so it, too, rounds only once.
//!
//! The bare type and its `std::ops` impls are uncounted. Arithmetic that
//! should show up in instrumentation goes through [`OpCounters`].

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;

/// A binary16 value stored as its raw bit pattern.
///
/// Equality is bitwise: `+0 != -0` and a NaN equals itself when the patterns
/// match. Use [`Binary16::to_f64`] for numeric comparisons.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Binary16(u16);

impl Binary16 {
    pub const ZERO: Binary16 = Binary16(0x0000);
    pub const NEG_ZERO: Binary16 = Binary16(0x8000);
    pub const ONE: Binary16 = Binary16(0x3C00);
    pub const MAX: Binary16 = Binary16(0x7BFF);
    pub const MIN_POSITIVE: Binary16 = Binary16(0x0400);
    pub const MIN_POSITIVE_SUBNORMAL: Binary16 = Binary16(0x0001);
    pub const INFINITY: Binary16 = Binary16(0x7C00);
    pub const NEG_INFINITY: Binary16 = Binary16(0xFC00);
    /// Canonical quiet NaN produced by every operation that yields NaN.
    pub const NAN: Binary16 = Binary16(0x7E00);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Binary16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds `x` to the nearest binary16, ties to even. Overflow saturates to
    /// a signed infinity and NaN maps to [`Binary16::NAN`].
    #[inline]
    pub fn from_f64(x: f64) -> Self {
        let bits = x.to_bits();
        let sign = ((bits >> 48) as u16) & SIGN_MASK;
        let exp = ((bits >> 52) & 0x7FF) as i32;
        let man = bits & 0x000F_FFFF_FFFF_FFFF;

        if exp == 0x7FF {
            return if man != 0 {
                Self::NAN
            } else {
                Binary16(sign | EXP_MASK)
            };
        }

        let e = exp - 1023;
        if e > 15 {
            return Binary16(sign | EXP_MASK);
        }

        if e >= -14 {
            // Normal range. Dropping 42 fraction bits; a carry out of the
            // fraction bumps the exponent, and out of the top exponent lands
            // exactly on the infinity pattern.
            let kept = (man >> 42) as u16;
            let rest = man & ((1u64 << 42) - 1);
            let halfway = 1u64 << 41;
            let mut h = (((e + 15) as u16) << 10) | kept;
            if rest > halfway || (rest == halfway && kept & 1 == 1) {
                h += 1;
            }
            return Binary16(sign | h);
        }

        if e < -25 {
            return Binary16(sign);
        }

        // Subnormal result: count units of 2^-24.
        let sig = (1u64 << 52) | man;
        let shift = (28 - e) as u32;
        let kept = (sig >> shift) as u16;
        let rest = sig & ((1u64 << shift) - 1);
        let halfway = 1u64 << (shift - 1);
        let mut h = kept;
        if rest > halfway || (rest == halfway && kept & 1 == 1) {
            h += 1;
        }
        Binary16(sign | h)
    }

    /// Exact widening to `f64`.
    #[inline]
    pub fn to_f64(self) -> f64 {
        // Placing the 15 magnitude bits at the top of an f32 yields the value
        // times 2^-112, subnormals included; the scale-up is exact.
        let abs = u32::from(self.0 & !SIGN_MASK);
        let sign = u32::from(self.0 & SIGN_MASK) << 16;
        let mag = if abs >= u32::from(EXP_MASK) {
            f32::from_bits(0x7F80_0000 | ((abs & u32::from(MAN_MASK)) << 13))
        } else {
            f32::from_bits(abs << 13) * f32::from_bits(0x7780_0000)
        };
        f64::from(f32::from_bits(mag.to_bits() | sign))
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    #[inline]
    fn lift(self, other: Binary16, f: impl FnOnce(f64, f64) -> f64) -> Binary16 {
        Binary16::from_f64(f(self.to_f64(), other.to_f64()))
    }

    /// `self * a + b` with a single rounding.
    pub fn mul_add(self, a: Binary16, b: Binary16) -> Binary16 {
        // The product of two 11-bit significands is exact in f64; only the
        // addition can round. Rounding that sum to odd keeps enough
        // information for the final rounding to binary16 to be correct.
        let p = self.to_f64() * a.to_f64();
        let c = b.to_f64();
        let s = p + c;
        if !s.is_finite() {
            return Binary16::from_f64(s);
        }
        let bb = s - p;
        let err = (p - (s - bb)) + (c - bb);
        let mut s_odd = s;
        if err != 0.0 && s.to_bits() & 1 == 0 {
            let bits = s.to_bits();
            s_odd = if (err > 0.0) == (s > 0.0) {
                f64::from_bits(bits + 1)
            } else {
                f64::from_bits(bits - 1)
            };
        }
        Binary16::from_f64(s_odd)
    }

    pub fn exp(self) -> Binary16 {
        Binary16::from_f64(self.to_f64().exp())
    }

    pub fn sqrt(self) -> Binary16 {
        Binary16::from_f64(self.to_f64().sqrt())
    }

    pub fn recip(self) -> Binary16 {
        Binary16::from_f64(1.0 / self.to_f64())
    }

    /// Larger of the two; `self` wins ties and NaN in `other` is ignored.
    pub fn max(self, other: Binary16) -> Binary16 {
        if other.to_f64() > self.to_f64() {
            other
        } else {
            self
        }
    }

    /// IEEE `<` (false whenever either side is NaN).
    pub fn lt(self, other: Binary16) -> bool {
        self.to_f64() < other.to_f64()
    }
}

impl fmt::Debug for Binary16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:04X})", self.to_f64(), self.0)
    }
}

impl fmt::Display for Binary16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

impl From<Binary16> for f64 {
    fn from(h: Binary16) -> f64 {
        h.to_f64()
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr for Binary16 {
            type Output = Binary16;
            #[inline]
            fn $method(self, rhs: Binary16) -> Binary16 {
                self.lift(rhs, |a, b| a $op b)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);
binop!(Div, div, /);

impl Neg for Binary16 {
    type Output = Binary16;
    fn neg(self) -> Binary16 {
        Binary16(self.0 ^ SIGN_MASK)
    }
}

/// Two binary16 lanes processed together, the analog of CUDA's `half2`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Debug)]
pub struct PackedPair {
    pub lo: Binary16,
    pub hi: Binary16,
}

impl PackedPair {
    #[inline]
    pub const fn new(lo: Binary16, hi: Binary16) -> Self {
        PackedPair { lo, hi }
    }

    #[inline]
    pub const fn splat(v: Binary16) -> Self {
        PackedPair { lo: v, hi: v }
    }

    #[inline]
    pub fn map(self, f: impl Fn(Binary16) -> Binary16) -> Self {
        PackedPair::new(f(self.lo), f(self.hi))
    }

    #[inline]
    pub fn zip(self, other: PackedPair, f: impl Fn(Binary16, Binary16) -> Binary16) -> Self {
        PackedPair::new(f(self.lo, other.lo), f(self.hi, other.hi))
    }
}

/// Operation applied lane-wise by [`OpCounters::packed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackedOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `a * b + addend`, fused.
    Fma(PackedPair),
}

impl PackedOp {
    pub fn apply(self, a: PackedPair, b: PackedPair) -> PackedPair {
        match self {
            PackedOp::Add => a.zip(b, |x, y| x + y),
            PackedOp::Sub => a.zip(b, |x, y| x - y),
            PackedOp::Mul => a.zip(b, |x, y| x * y),
            PackedOp::Div => a.zip(b, |x, y| x / y),
            PackedOp::Fma(c) => PackedPair::new(a.lo.mul_add(b.lo, c.lo), a.hi.mul_add(b.hi, c.hi)),
        }
    }
}

/// Per-run operation tallies.
///
/// A filter run owns one of these and threads it through every counted
/// operation. Parallel workers each fill their own and the results are
/// merged with `+=`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// binary16 -> wider conversions.
    pub widen_count: u64,
    /// wider -> binary16 conversions.
    pub narrow_count: u64,
    /// binary16 arithmetic instructions; a packed op counts once.
    pub half_arith_count: u64,
    /// f32/f64 arithmetic instructions.
    pub wide_arith_count: u64,
    /// exp, sqrt and reciprocal in any precision.
    pub special_fn_count: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn narrow(&mut self, x: f64) -> Binary16 {
        self.narrow_count += 1;
        Binary16::from_f64(x)
    }

    pub fn widen(&mut self, x: Binary16) -> f64 {
        self.widen_count += 1;
        x.to_f64()
    }

    pub fn add16(&mut self, a: Binary16, b: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a + b
    }

    pub fn sub16(&mut self, a: Binary16, b: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a - b
    }

    pub fn mul16(&mut self, a: Binary16, b: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a * b
    }

    pub fn div16(&mut self, a: Binary16, b: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a / b
    }

    pub fn fma(&mut self, a: Binary16, b: Binary16, c: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a.mul_add(b, c)
    }

    pub fn max(&mut self, a: Binary16, b: Binary16) -> Binary16 {
        self.half_arith_count += 1;
        a.max(b)
    }

    pub fn lt(&mut self, a: Binary16, b: Binary16) -> bool {
        self.half_arith_count += 1;
        a.lt(b)
    }

    pub fn exp16(&mut self, x: Binary16) -> Binary16 {
        self.special_fn_count += 1;
        x.exp()
    }

    pub fn sqrt16(&mut self, x: Binary16) -> Binary16 {
        self.special_fn_count += 1;
        x.sqrt()
    }

    pub fn recip16(&mut self, x: Binary16) -> Binary16 {
        self.special_fn_count += 1;
        x.recip()
    }

    /// One packed instruction: both lanes, one count.
    pub fn packed(&mut self, op: PackedOp, a: PackedPair, b: PackedPair) -> PackedPair {
        self.half_arith_count += 1;
        op.apply(a, b)
    }

    pub fn packed_max(&mut self, a: PackedPair, b: PackedPair) -> PackedPair {
        self.half_arith_count += 1;
        a.zip(b, Binary16::max)
    }

    /// Lane-wise `a < b`, returned as (lo, hi).
    pub fn packed_lt(&mut self, a: PackedPair, b: PackedPair) -> (bool, bool) {
        self.half_arith_count += 1;
        (a.lo.lt(b.lo), a.hi.lt(b.hi))
    }

    pub fn packed_exp(&mut self, a: PackedPair) -> PackedPair {
        self.special_fn_count += 1;
        a.map(Binary16::exp)
    }

    pub fn count_wide(&mut self, n: u64) {
        self.wide_arith_count += n;
    }

    pub fn count_special(&mut self, n: u64) {
        self.special_fn_count += n;
    }

    pub fn conversions(&self) -> u64 {
        self.widen_count + self.narrow_count
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, o: OpCounters) {
        self.widen_count += o.widen_count;
        self.narrow_count += o.narrow_count;
        self.half_arith_count += o.half_arith_count;
        self.wide_arith_count += o.wide_arith_count;
        self.special_fn_count += o.special_fn_count;
    }
}

impl Add for OpCounters {
    type Output = OpCounters;
    fn add(mut self, o: OpCounters) -> OpCounters {
        self += o;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64) -> Binary16 {
        Binary16::from_f64(x)
    }

    #[test]
    fn conversion_examples() {
        assert_eq!(h(1.0).to_bits(), 0x3C00);
        assert_eq!(h(65504.0), Binary16::MAX);
        assert_eq!(h(65519.99), Binary16::MAX);
        assert_eq!(h(65520.0), Binary16::INFINITY);
        assert_eq!(h(-65520.0), Binary16::NEG_INFINITY);
        assert_eq!(h(0.1).to_bits(), 0x2E66);
        assert_eq!(h(0.1).to_f64(), 0.0999755859375);
        assert!(h(f64::NAN).is_nan());
        assert_eq!(h(-0.0), Binary16::NEG_ZERO);
    }

    #[test]
    fn widening_examples() {
        assert_eq!(Binary16::from_bits(0x3C00).to_f64(), 1.0);
        assert_eq!(Binary16::from_bits(0x7C00).to_f64(), f64::INFINITY);
        assert_eq!(Binary16::from_bits(0x0001).to_f64(), 2f64.powi(-24));
        assert_eq!(
            Binary16::from_bits(0x03FF).to_f64(),
            1023.0 * 2f64.powi(-24)
        );
        assert_eq!(Binary16::MIN_POSITIVE.to_f64(), 2f64.powi(-14));
        assert!(Binary16::from_bits(0x7C01).to_f64().is_nan());
    }

    #[test]
    fn subnormal_rounding() {
        // 2^-25 is the tie between 0 and the smallest subnormal: even wins.
        assert_eq!(h(2f64.powi(-25)), Binary16::ZERO);
        assert_eq!(h(2f64.powi(-25) * 1.0001), Binary16::MIN_POSITIVE_SUBNORMAL);
        // 1.5 * 2^-24 ties to 2 * 2^-24.
        assert_eq!(h(1.5 * 2f64.powi(-24)).to_bits(), 0x0002);
        // Largest subnormal rounds up into the normal range.
        assert_eq!(h(1023.5 * 2f64.powi(-24)), Binary16::MIN_POSITIVE);
        assert_eq!(h(1e-300), Binary16::ZERO);
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(h(1.0) + h(1.0), h(2.0));
        assert_eq!(h(2048.0) + h(1.0), h(2048.0));
        assert_eq!(h(2048.0) + h(3.0), h(2052.0));
        assert_eq!(h(256.0) * h(256.0), Binary16::INFINITY);
        assert!((Binary16::INFINITY - Binary16::INFINITY).is_nan());
        assert_eq!(h(1.0) / h(0.0), Binary16::INFINITY);
    }

    #[test]
    fn special_functions() {
        assert_eq!(h(0.0).exp(), Binary16::ONE);
        assert_eq!(h(4.0).sqrt(), h(2.0));
        assert_eq!(h(12.0).exp(), Binary16::INFINITY);
        // ln(65504) ~ 11.0898; 11.0859375 is the binary16 just below.
        assert!(h(11.0859375).exp().is_finite());
        assert!(h(-1.0).sqrt().is_nan());
        assert_eq!(h(4.0).recip(), h(0.25));
    }

    #[test]
    fn counters_track_ops() {
        let mut c = OpCounters::new();
        let a = c.narrow(1.5);
        let b = c.narrow(2.5);
        let _ = c.add16(a, b);
        let _ = c.mul16(a, b);
        let p = PackedPair::new(a, b);
        let _ = c.packed(PackedOp::Add, p, p);
        let _ = c.exp16(a);
        let _ = c.widen(a);
        assert_eq!(c.narrow_count, 2);
        assert_eq!(c.half_arith_count, 3);
        assert_eq!(c.special_fn_count, 1);
        assert_eq!(c.widen_count, 1);

        let mut d = OpCounters::new();
        d.count_wide(4);
        d += c;
        assert_eq!(d.wide_arith_count, 4);
        assert_eq!(d.half_arith_count, 3);
        d.reset();
        assert_eq!(d, OpCounters::default());
    }

    #[test]
    fn packed_examples() {
        let mut c = OpCounters::new();
        let a = PackedPair::new(h(1.0), h(2.0));
        let b = PackedPair::new(h(3.0), h(4.0));
        assert_eq!(
            c.packed(PackedOp::Add, a, b),
            PackedPair::new(h(4.0), h(6.0))
        );
        let m = PackedPair::new(h(256.0), h(1.0));
        assert_eq!(
            c.packed(PackedOp::Mul, m, m),
            PackedPair::new(Binary16::INFINITY, h(1.0))
        );
        let f = c.packed(PackedOp::Fma(b), a, a);
        assert_eq!(f, PackedPair::new(h(4.0), h(8.0)));
        assert_eq!(c.half_arith_count, 3);
    }

    #[test]
    fn fma_rounds_once() {
        // 1 + 2^-11 is a tie at 1.0; the tiny addend must break it upward.
        let a = h(1.0 + 2f64.powi(-10));
        let b = h(1.0 + 2f64.powi(-10));
        // a*b = 1 + 2^-9 + 2^-20; adding -2^-9 leaves 1 + 2^-20 -> 1.0
        let c = h(-(2f64.powi(-9)));
        assert_eq!(a.mul_add(b, c), h(1.0));
        // A separately rounded mul + add loses the 2^-20 term entirely.
        let x = h(1.0);
        let y = h(1.0 + 2f64.powi(-10));
        let z = h(2f64.powi(-11) + 2f64.powi(-20));
        assert_eq!(x.mul_add(y, z).to_f64(), 1.0 + 2f64.powi(-9));
    }
}
