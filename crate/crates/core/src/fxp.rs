//! Signed fixed-point fractions and the widened saturating accumulator.
//!
//! A [`Fraction`] of width `n` holds a numerator `N` in `[-2^(n-1), 2^(n-1))`
//! and represents `N / 2^(n-1)`, a value in `[-1, 1)`. A [`WideValue`] keeps
//! the same scale but adds guard bits on the integer side, so it spans
//! `[-2^g, 2^g)` and saturates at its edges instead of wrapping.

use std::fmt;

/// Narrowest supported operand width (sign bit plus one fraction bit).
pub const MIN_BITS: u32 = 2;
/// Widest supported operand width.
pub const MAX_BITS: u32 = 16;
/// Accumulator guard bits: 8-bit operands get 11-bit intermediates.
pub const DEFAULT_GUARD_BITS: u32 = 3;
/// Guard bits are capped so `n + g` always fits an `i32` numerator.
pub const MAX_GUARD_BITS: u32 = 14;

fn check_bits(bits: u32) {
    assert!(
        (MIN_BITS..=MAX_BITS).contains(&bits),
        "operand width {bits} outside {MIN_BITS}..={MAX_BITS}"
    );
}

fn check_guard(guard: u32) {
    assert!(
        guard <= MAX_GUARD_BITS,
        "guard bits {guard} > {MAX_GUARD_BITS}"
    );
}

#[inline]
fn clamp_i64(v: i64, lo: i32, hi: i32) -> i32 {
    v.clamp(lo as i64, hi as i64) as i32
}

/// An `n`-bit signed fixed-point fraction.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: i32,
    bits: u32,
}

impl Fraction {
    /// Builds a fraction from its numerator, rejecting out-of-range values.
    pub fn new(numerator: i32, bits: u32) -> crate::Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(crate::Error::InvalidArgument(format!(
                "bit width {bits} outside {MIN_BITS}..={MAX_BITS}"
            )));
        }
        let f = Self::saturating(numerator as i64, bits);
        if f.num != numerator {
            return Err(crate::Error::InvalidArgument(format!(
                "numerator {numerator} does not fit {bits} bits"
            )));
        }
        Ok(f)
    }

    /// Builds a fraction, clamping the numerator into range.
    pub fn saturating(numerator: i64, bits: u32) -> Self {
        check_bits(bits);
        let half = 1i32 << (bits - 1);
        Self {
            num: clamp_i64(numerator, -half, half - 1),
            bits,
        }
    }

    pub fn zero(bits: u32) -> Self {
        Self::saturating(0, bits)
    }

    /// Largest representable value, `1 - 2^(1-n)`. Stands in for `+1`.
    pub fn max(bits: u32) -> Self {
        Self::saturating(i64::MAX, bits)
    }

    /// Exactly `-1`.
    pub fn min(bits: u32) -> Self {
        Self::saturating(i64::MIN, bits)
    }

    /// Rounds `x · 2^(bits-1)` to nearest (ties away from zero) and clamps.
    pub fn quantize(x: f64, bits: u32) -> Self {
        check_bits(bits);
        let scaled = (x * (1u64 << (bits - 1)) as f64).round();
        // NaN casts to 0; infinities saturate.
        Self::saturating(scaled as i64, bits)
    }

    #[inline]
    pub fn numerator(self) -> i32 {
        self.num
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    /// `2^(n-1)`, the denominator.
    #[inline]
    pub fn scale(self) -> i32 {
        1 << (self.bits - 1)
    }

    pub fn to_real(self) -> f64 {
        self.num as f64 / self.scale() as f64
    }

    /// Cycles the original multiplier runs when this is the `W` operand.
    #[inline]
    pub fn stream_length(self) -> u32 {
        self.num.unsigned_abs()
    }

    /// Two's-complement bit pattern in the low `n` bits.
    #[inline]
    pub fn raw_bits(self) -> u32 {
        (self.num as u32) & ((1u32 << self.bits) - 1)
    }

    /// Bit `x_k` of the two's-complement pattern, `k = n-1` being the sign.
    #[inline]
    pub fn bit(self, k: u32) -> bool {
        debug_assert!(k < self.bits);
        (self.raw_bits() >> k) & 1 == 1
    }

    #[inline]
    pub fn sign_bit(self) -> bool {
        self.num < 0
    }

    /// `-self`, or `None` for `-1` whose negation is unrepresentable.
    pub fn checked_neg(self) -> Option<Self> {
        Self::new(-self.num, self.bits).ok()
    }

    /// Same numerator at the same scale with `guard` extra integer bits.
    pub fn widen(self, guard: u32) -> WideValue {
        WideValue::saturating(self.num as i64, self.bits, guard)
    }

    /// Every value of width `bits`, in ascending order.
    pub fn all(bits: u32) -> impl Iterator<Item = Fraction> {
        check_bits(bits);
        let half = 1i32 << (bits - 1);
        (-half..half).map(move |n| Fraction { num: n, bits })
    }
}

impl fmt::Debug for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.scale())
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_real())
    }
}

/// A saturating accumulator value: scale `2^(n-1)`, width `n + g`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct WideValue {
    num: i32,
    frac_bits: u32,
    guard: u32,
}

impl WideValue {
    pub fn new(numerator: i32, frac_bits: u32, guard: u32) -> crate::Result<Self> {
        let v = Self::saturating(numerator as i64, frac_bits, guard);
        if v.num != numerator {
            return Err(crate::Error::InvalidArgument(format!(
                "numerator {numerator} does not fit {} bits",
                frac_bits + guard
            )));
        }
        Ok(v)
    }

    pub fn saturating(numerator: i64, frac_bits: u32, guard: u32) -> Self {
        check_bits(frac_bits);
        check_guard(guard);
        let half = 1i32 << (frac_bits + guard - 1);
        Self {
            num: clamp_i64(numerator, -half, half - 1),
            frac_bits,
            guard,
        }
    }

    pub fn zero(frac_bits: u32, guard: u32) -> Self {
        Self::saturating(0, frac_bits, guard)
    }

    pub fn max(frac_bits: u32, guard: u32) -> Self {
        Self::saturating(i64::MAX, frac_bits, guard)
    }

    pub fn min(frac_bits: u32, guard: u32) -> Self {
        Self::saturating(i64::MIN, frac_bits, guard)
    }

    /// Quantizes a real at the `2^(n-1)` scale, clamping to the wide range.
    pub fn quantize(x: f64, frac_bits: u32, guard: u32) -> Self {
        check_bits(frac_bits);
        let scaled = (x * (1u64 << (frac_bits - 1)) as f64).round();
        Self::saturating(scaled as i64, frac_bits, guard)
    }

    #[inline]
    pub fn numerator(self) -> i32 {
        self.num
    }

    /// The operand width `n` this accumulator is scaled for.
    #[inline]
    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    #[inline]
    pub fn guard(self) -> u32 {
        self.guard
    }

    /// Total width `n + g`.
    #[inline]
    pub fn bits(self) -> u32 {
        self.frac_bits + self.guard
    }

    pub fn to_real(self) -> f64 {
        self.num as f64 / (1i64 << (self.frac_bits - 1)) as f64
    }

    /// Clamped sum. Not associative once an intermediate saturates.
    pub fn sat_add(self, other: WideValue) -> WideValue {
        assert_eq!(
            (self.frac_bits, self.guard),
            (other.frac_bits, other.guard),
            "sat_add on mismatched widths"
        );
        Self::saturating(
            self.num as i64 + other.num as i64,
            self.frac_bits,
            self.guard,
        )
    }

    /// Adds a raw numerator at this scale, saturating.
    #[inline]
    pub fn sat_add_raw(self, delta: i64) -> WideValue {
        Self::saturating(self.num as i64 + delta, self.frac_bits, self.guard)
    }

    /// Clamps back to an `n`-bit fraction.
    pub fn narrow(self) -> Fraction {
        Fraction::saturating(self.num as i64, self.frac_bits)
    }
}

impl fmt::Debug for WideValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} (wide {}b)",
            self.num,
            1i64 << (self.frac_bits - 1),
            self.bits()
        )
    }
}
