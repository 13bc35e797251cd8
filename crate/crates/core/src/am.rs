//! Stream-based approximate multiplier.
//!
//! The multiplier computes `Z ≈ X·W` by walking a bit-stream derived from `X`
//! for `|N(W)|` cycles. At cycle `c` the FSM selects index
//! `i = trailing_zeros(c) + 1` and emits bit `x_{n-i}`, inverted when `i = 1`
//! (the sign bit). Each cycle an up-down counter moves by `+1` when
//! `bit XOR w_{n-1}` is one and by `-1` otherwise; the final count is the
//! product numerator.
//!
//! The accelerated form folds every sign-bit occurrence (the odd cycles)
//! into the counter's initial value and then runs only the even cycles,
//! halving the latency with an identical result.

use crate::fxp::{Fraction, MAX_BITS};
use crate::{Error, Result};

/// Index `i` the FSM selects at 1-based `cycle`.
#[inline]
pub fn selected_index(cycle: u64) -> u32 {
    debug_assert!(cycle > 0);
    cycle.trailing_zeros() + 1
}

fn check_widths(x: Fraction, w: Fraction) -> Result<()> {
    if x.bits() != w.bits() {
        return Err(Error::WidthMismatch {
            left: x.bits(),
            right: w.bits(),
        });
    }
    Ok(())
}

/// The stream word of `X`: its pattern with the sign bit inverted, so that
/// bit `n - i` is exactly what the FSM emits whenever it selects index `i`.
#[inline]
pub fn stream_word(x: Fraction) -> u32 {
    x.raw_bits() ^ (1 << (x.bits() - 1))
}

/// Stream bit emitted at `cycle` for pattern operand `x`.
pub fn stream_bit(x: Fraction, cycle: u64) -> Result<bool> {
    let n = x.bits();
    if cycle == 0 || cycle > 1u64 << (n - 1) {
        return Err(Error::CycleOutOfRange { cycle, bits: n });
    }
    let i = selected_index(cycle);
    Ok((stream_word(x) >> (n - i)) & 1 == 1)
}

/// Result of a run-to-completion multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmProduct {
    pub z: Fraction,
    pub cycles: u32,
}

/// Initial counter values produced by the preprocessing unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessResult {
    pub ud_init: i32,
    pub remaining_cycles: u32,
}

/// Absorbs the sign-bit occurrences of the stream (odd cycles) in one step.
///
/// For a stream of length `L` the sign bit appears `ceil(L/2)` times, all
/// with the same polarity, so the counter starts at `±ceil(L/2)` and the
/// remaining `floor(L/2)` even cycles are left to run.
pub fn preprocess(x: Fraction, w: Fraction) -> Result<PreprocessResult> {
    check_widths(x, w)?;
    let len = w.stream_length();
    let magnitude = len.div_ceil(2) as i32;
    let up = !x.sign_bit() ^ w.sign_bit();
    Ok(PreprocessResult {
        ud_init: if up { magnitude } else { -magnitude },
        remaining_cycles: len / 2,
    })
}

/// Per-cycle state of one multiplier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmState {
    bits: u32,
    word: u32,
    w_sign: bool,
    down_counter: u32,
    ud_counter: i32,
    ud_initial: i32,
    cycle: u64,
    // 1 for the original FSM, 2 when preprocessing removed the odd cycles.
    index_offset: u32,
}

impl AmState {
    /// Original multiplier, loaded and ready to step.
    pub fn new(x: Fraction, w: Fraction) -> Result<Self> {
        check_widths(x, w)?;
        Ok(Self {
            bits: x.bits(),
            word: stream_word(x),
            w_sign: w.sign_bit(),
            down_counter: w.stream_length(),
            ud_counter: 0,
            ud_initial: 0,
            cycle: 0,
            index_offset: 1,
        })
    }

    /// Accelerated multiplier after the (zero-cycle) preprocessing step.
    pub fn accelerated(x: Fraction, w: Fraction) -> Result<Self> {
        let pre = preprocess(x, w)?;
        Ok(Self {
            bits: x.bits(),
            word: stream_word(x),
            w_sign: w.sign_bit(),
            down_counter: pre.remaining_cycles,
            ud_counter: pre.ud_init,
            ud_initial: pre.ud_init,
            cycle: 0,
            index_offset: 2,
        })
    }

    pub fn is_done(&self) -> bool {
        self.down_counter == 0
    }

    pub fn down_counter(&self) -> u32 {
        self.down_counter
    }

    pub fn ud_counter(&self) -> i32 {
        self.ud_counter
    }

    pub fn cycles_elapsed(&self) -> u64 {
        self.cycle
    }

    /// Advances one clock. Returns `false` (and does nothing) once done.
    pub fn step(&mut self) -> bool {
        if self.down_counter == 0 {
            return false;
        }
        self.cycle += 1;
        let i = self.cycle.trailing_zeros() + self.index_offset;
        let bit = (self.word >> (self.bits - i)) & 1 == 1;
        self.ud_counter += if bit ^ self.w_sign { 1 } else { -1 };
        self.down_counter -= 1;
        debug_assert!((self.ud_counter - self.ud_initial).unsigned_abs() as u64 <= self.cycle);
        true
    }

    /// Counter value as an `n`-bit fraction (clamped).
    pub fn output(&self) -> Fraction {
        Fraction::saturating(self.ud_counter as i64, self.bits)
    }

    pub fn run(mut self) -> AmProduct {
        while self.step() {}
        AmProduct {
            z: self.output(),
            cycles: self.cycle as u32,
        }
    }
}

/// Original multiplier, stepped cycle by cycle to completion.
pub fn am_multiply(x: Fraction, w: Fraction) -> Result<AmProduct> {
    Ok(AmState::new(x, w)?.run())
}

/// Accelerated multiplier, stepped cycle by cycle to completion.
pub fn am_multiply_fast(x: Fraction, w: Fraction) -> Result<AmProduct> {
    Ok(AmState::accelerated(x, w)?.run())
}

/// How many times each stream index is selected in a stream of given length.
///
/// Index `i` first appears at cycle `2^(i-1)` and then every `2^i` cycles, so
/// within `L` cycles it appears `floor((L + 2^(i-1)) / 2^i)` times. This is
/// what lets a whole column of lanes be evaluated without stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamCounts {
    len: u32,
    bits: u32,
    /// `by_position[k]` counts selections of word bit `k` (index `n - k`).
    by_position: [u32; MAX_BITS as usize],
}

impl StreamCounts {
    pub fn new(len: u32, bits: u32) -> Self {
        let mut by_position = [0u32; MAX_BITS as usize];
        for i in 1..=bits {
            let k = (bits - i) as usize;
            by_position[k] = ((len as u64 + (1u64 << (i - 1))) >> i) as u32;
        }
        Self {
            len,
            bits,
            by_position,
        }
    }

    pub fn for_operand(w: Fraction) -> Self {
        Self::new(w.stream_length(), w.bits())
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Selections of word bit `k`.
    #[inline]
    pub fn at_position(&self, k: u32) -> u32 {
        self.by_position[k as usize]
    }

    /// Number of ones the stream of `word` contains.
    #[inline]
    pub fn ones(&self, word: u32) -> u32 {
        (0..self.bits)
            .map(|k| ((word >> k) & 1) * self.by_position[k as usize])
            .sum()
    }

    /// Final up-down count for `word` with the given `W` sign, unclamped.
    #[inline]
    pub fn count(&self, word: u32, w_sign: bool) -> i32 {
        let diff = 2 * self.ones(word) as i32 - self.len as i32;
        if w_sign {
            -diff
        } else {
            diff
        }
    }
}

/// Closed-form multiplier output, bit-identical to [`am_multiply`].
pub fn am_product(x: Fraction, w: Fraction) -> Fraction {
    debug_assert_eq!(x.bits(), w.bits());
    let counts = StreamCounts::for_operand(w);
    Fraction::saturating(counts.count(stream_word(x), w.sign_bit()) as i64, x.bits())
}

/// Exact fixed-point product truncated (toward −∞) to the `2^(n-1)` grid.
pub fn exact_product(x: Fraction, w: Fraction) -> Fraction {
    debug_assert_eq!(x.bits(), w.bits());
    let p = (x.numerator() as i64 * w.numerator() as i64) >> (x.bits() - 1);
    Fraction::saturating(p, x.bits())
}
