//! Compute units built from the approximate multiplier.
//!
//! * [`MvmUnit`]: one multiplier lane per output row, all lanes sharing one
//!   FSM and down-counter; consumes one column-scalar product at a time and
//!   accumulates into wide counters that are never reset between columns.
//! * [`EmaUnit`] / [`em_multiply`]: element-wise multiply(-and-add) on the
//!   accelerated multiplier.
//! * [`hsig`], [`htanh`], [`ternary_add`]: single-cycle combinational parts.

use crate::am::{self, StreamCounts};
use crate::fxp::{Fraction, WideValue, DEFAULT_GUARD_BITS};
use crate::{Error, Result};

/// Which multiplier backs the datapath. `Exact` swaps every stream
/// multiplier for a truncating fixed-point one; timing is unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Arithmetic {
    #[default]
    Approximate,
    Exact,
}

impl Arithmetic {
    /// Product as delivered by the original (non-preprocessed) multiplier.
    pub fn multiply(self, x: Fraction, w: Fraction) -> Fraction {
        match self {
            Arithmetic::Approximate => am::am_product(x, w),
            Arithmetic::Exact => am::exact_product(x, w),
        }
    }
}

/// Dense row-major matrix of `n`-bit fractions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FracMatrix {
    rows: usize,
    cols: usize,
    bits: u32,
    data: Vec<i32>,
}

impl FracMatrix {
    pub fn zeros(rows: usize, cols: usize, bits: u32) -> Self {
        Fraction::zero(bits); // validates width
        Self {
            rows,
            cols,
            bits,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<Fraction>], bits: u32) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols, bits);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {r} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v.bits() != bits {
                    return Err(Error::WidthMismatch {
                        left: v.bits(),
                        right: bits,
                    });
                }
                m.data[r * cols + c] = v.numerator();
            }
        }
        Ok(m)
    }

    /// Quantizes a real matrix; returns the matrix and how many entries had
    /// magnitude ≥ 1 (and were therefore clamped).
    pub fn quantize(rows: &[Vec<f64>], bits: u32) -> Result<(Self, usize)> {
        let mut clamped = 0;
        let q: Vec<Vec<Fraction>> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&x| {
                        if x.abs() >= 1.0 {
                            clamped += 1;
                        }
                        Fraction::quantize(x, bits)
                    })
                    .collect()
            })
            .collect();
        let mut m = Self::from_rows(&q, bits)?;
        if rows.is_empty() {
            m.cols = 0;
        }
        Ok((m, clamped))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> Fraction {
        Fraction::saturating(self.data[r * self.cols + c] as i64, self.bits)
    }

    pub fn set(&mut self, r: usize, c: usize, v: Fraction) {
        assert_eq!(v.bits(), self.bits);
        self.data[r * self.cols + c] = v.numerator();
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = Fraction> + '_ {
        self.data[r * self.cols..(r + 1) * self.cols]
            .iter()
            .map(move |&n| Fraction::saturating(n as i64, self.bits))
    }

    pub fn to_reals(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| self.row(r).map(Fraction::to_real).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct ActiveColumn {
    scalar: Fraction,
    cycle: u64,
}

/// Matrix-vector multiplier with a shared FSM and down-counter.
#[derive(Debug, Clone)]
pub struct MvmUnit {
    rows: usize,
    cols: usize,
    bits: u32,
    guard: u32,
    arithmetic: Arithmetic,
    // Column-major stream words and numerators.
    words: Vec<u32>,
    nums: Vec<i32>,
    acc: Vec<i32>,
    cursor: usize,
    active: Option<ActiveColumn>,
    shared_down_counter: u32,
    lane_counters: Vec<i32>,
    scratch: Vec<u32>,
    cycles_run: u64,
}

impl MvmUnit {
    pub fn new(matrix: &FracMatrix, guard: u32, arithmetic: Arithmetic) -> Self {
        let (rows, cols) = (matrix.rows(), matrix.cols());
        let mut words = Vec::with_capacity(rows * cols);
        let mut nums = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                let x = matrix.get(r, c);
                words.push(am::stream_word(x));
                nums.push(x.numerator());
            }
        }
        WideValue::zero(matrix.bits(), guard); // validates widths
        Self {
            rows,
            cols,
            bits: matrix.bits(),
            guard,
            arithmetic,
            words,
            nums,
            acc: vec![0; rows],
            cursor: 0,
            active: None,
            shared_down_counter: 0,
            lane_counters: vec![0; rows],
            scratch: vec![0; rows],
            cycles_run: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Index of the next column to consume; equals the number consumed.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn shared_down_counter(&self) -> u32 {
        self.shared_down_counter
    }

    /// Cycles spent in columns since construction.
    pub fn cycles_run(&self) -> u64 {
        self.cycles_run
    }

    pub fn accumulators(&self) -> Vec<WideValue> {
        self.acc
            .iter()
            .map(|&n| WideValue::saturating(n as i64, self.bits, self.guard))
            .collect()
    }

    fn check_scalar(&self, scalar: Fraction) -> Result<()> {
        if scalar.bits() != self.bits {
            return Err(Error::WidthMismatch {
                left: self.bits,
                right: scalar.bits(),
            });
        }
        if self.cursor >= self.cols || self.active.is_some() {
            return Err(Error::ColumnsExhausted { cols: self.cols });
        }
        Ok(())
    }

    fn commit(&mut self, column_values: impl Iterator<Item = i32>) {
        let lo = -(1i64 << (self.bits + self.guard - 1));
        let hi = -lo - 1;
        let zmax = (1i64 << (self.bits - 1)) - 1;
        for (acc, z) in self.acc.iter_mut().zip(column_values) {
            let z = (z as i64).min(zmax);
            *acc = (*acc as i64 + z).clamp(lo, hi) as i32;
        }
        self.cursor += 1;
    }

    /// Multiplies the next column by `scalar`, accumulating into every lane.
    /// Returns the column latency, `|N(scalar)|` cycles.
    pub fn run_column(&mut self, scalar: Fraction) -> Result<u32> {
        self.check_scalar(scalar)?;
        let len = scalar.stream_length();
        let base = self.cursor * self.rows;
        match self.arithmetic {
            Arithmetic::Approximate => {
                if len == 0 {
                    self.cursor += 1;
                    return Ok(0);
                }
                let counts = StreamCounts::for_operand(scalar);
                let words = &self.words[base..base + self.rows];
                let ones = &mut self.scratch;
                ones.iter_mut().for_each(|o| *o = 0);
                // Sums stay below 2^16, so wrapping ops are exact here and
                // keep the loop vectorizable when overflow checks are on.
                for k in 0..self.bits {
                    let weight = counts.at_position(k);
                    for (o, &wd) in ones.iter_mut().zip(words) {
                        *o = o.wrapping_add(((wd >> k) & 1).wrapping_mul(weight));
                    }
                }
                let sign = if scalar.sign_bit() { -1 } else { 1 };
                let ones = std::mem::take(&mut self.scratch);
                self.commit(ones.iter().map(|&o| sign * (2 * o as i32 - len as i32)));
                self.scratch = ones;
            }
            Arithmetic::Exact => {
                let shift = self.bits - 1;
                let w = scalar.numerator() as i64;
                let products: Vec<i32> = self.nums[base..base + self.rows]
                    .iter()
                    .map(|&x| ((x as i64 * w) >> shift) as i32)
                    .collect();
                self.commit(products.into_iter());
            }
        }
        self.cycles_run += len as u64;
        Ok(len)
    }

    /// Loads the next column into the shared FSM for cycle-by-cycle
    /// stepping with [`MvmUnit::tick`]. An empty stream completes at once.
    pub fn begin_column(&mut self, scalar: Fraction) -> Result<()> {
        self.check_scalar(scalar)?;
        self.shared_down_counter = scalar.stream_length();
        self.lane_counters.iter_mut().for_each(|c| *c = 0);
        self.active = Some(ActiveColumn { scalar, cycle: 0 });
        if self.shared_down_counter == 0 {
            self.finish_active();
        }
        Ok(())
    }

    /// Advances the in-flight column by one clock. Returns `true` on the
    /// cycle that completes it and `false` when nothing is in flight.
    pub fn tick(&mut self) -> bool {
        let Some(mut col) = self.active else {
            return false;
        };
        col.cycle += 1;
        let i = am::selected_index(col.cycle);
        let base = self.cursor * self.rows;
        for (r, ctr) in self.lane_counters.iter_mut().enumerate() {
            let bit = (self.words[base + r] >> (self.bits - i)) & 1 == 1;
            *ctr += if bit ^ col.scalar.sign_bit() { 1 } else { -1 };
        }
        self.shared_down_counter -= 1;
        self.cycles_run += 1;
        self.active = Some(col);
        if self.shared_down_counter == 0 {
            self.finish_active();
            return true;
        }
        false
    }

    fn finish_active(&mut self) {
        let col = self.active.take().expect("column in flight");
        let base = self.cursor * self.rows;
        let values: Vec<i32> = match self.arithmetic {
            Arithmetic::Approximate => self.lane_counters.clone(),
            Arithmetic::Exact => self.nums[base..base + self.rows]
                .iter()
                .map(|&x| am::exact_product(Fraction::saturating(x as i64, self.bits), col.scalar))
                .map(Fraction::numerator)
                .collect(),
        };
        self.commit(values.into_iter());
    }

    /// Snapshots the accumulators, zeroes them and rewinds the column cursor.
    pub fn latch_and_reset(&mut self) -> Vec<WideValue> {
        let out = self.accumulators();
        self.acc.iter_mut().for_each(|a| *a = 0);
        self.cursor = 0;
        self.active = None;
        self.shared_down_counter = 0;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmaPhase {
    Mult1,
    Mult2,
    Done,
}

/// Element-wise multiplier-and-adder: `C = i ⊙ Ĉ + f ⊙ C_prev` as two
/// accelerated multiplies sharing one accumulator.
#[derive(Debug, Clone)]
pub struct EmaUnit {
    acc: WideValue,
    phase: EmaPhase,
    arithmetic: Arithmetic,
}

impl EmaUnit {
    pub fn new(bits: u32, guard: u32, arithmetic: Arithmetic) -> Self {
        Self {
            acc: WideValue::zero(bits, guard),
            phase: EmaPhase::Mult1,
            arithmetic,
        }
    }

    pub fn phase(&self) -> EmaPhase {
        self.phase
    }

    fn multiply(&mut self, gate: Fraction, value: Fraction, next: EmaPhase) -> u32 {
        let z = self.arithmetic.multiply(value, gate);
        self.acc = self.acc.sat_add_raw(z.numerator() as i64);
        self.phase = next;
        gate.stream_length() / 2
    }

    /// `i ⊙ Ĉ`; the gate drives the stream length.
    pub fn mult1(&mut self, i_gate: Fraction, c_cand: Fraction) -> u32 {
        assert_eq!(self.phase, EmaPhase::Mult1, "EMA Mult1 out of order");
        self.multiply(i_gate, c_cand, EmaPhase::Mult2)
    }

    /// `+ f ⊙ C_prev`, accumulated without resetting.
    pub fn mult2(&mut self, f_gate: Fraction, c_prev: Fraction) -> u32 {
        assert_eq!(self.phase, EmaPhase::Mult2, "EMA Mult2 out of order");
        self.multiply(f_gate, c_prev, EmaPhase::Done)
    }

    pub fn result(&self) -> WideValue {
        self.acc
    }
}

/// One memory-state element and its latency
/// `floor(|N(i)|/2) + floor(|N(f)|/2)`.
pub fn ema_step_with(
    arithmetic: Arithmetic,
    guard: u32,
    i_gate: Fraction,
    c_cand: Fraction,
    f_gate: Fraction,
    c_prev: Fraction,
) -> (WideValue, u32) {
    let mut unit = EmaUnit::new(i_gate.bits(), guard, arithmetic);
    let cycles = unit.mult1(i_gate, c_cand) + unit.mult2(f_gate, c_prev);
    (unit.result(), cycles)
}

pub fn ema_step(
    i_gate: Fraction,
    c_cand: Fraction,
    f_gate: Fraction,
    c_prev: Fraction,
) -> (WideValue, u32) {
    ema_step_with(
        Arithmetic::Approximate,
        DEFAULT_GUARD_BITS,
        i_gate,
        c_cand,
        f_gate,
        c_prev,
    )
}

/// `h = o ⊙ tanh(C)` on the accelerated multiplier; latency `floor(|N(o)|/2)`.
pub fn em_multiply_with(
    arithmetic: Arithmetic,
    o_gate: Fraction,
    tanh_c: Fraction,
) -> (Fraction, u32) {
    (
        arithmetic.multiply(tanh_c, o_gate),
        o_gate.stream_length() / 2,
    )
}

pub fn em_multiply(o_gate: Fraction, tanh_c: Fraction) -> (Fraction, u32) {
    em_multiply_with(Arithmetic::Approximate, o_gate, tanh_c)
}

/// Hard sigmoid: `max` above 2, `0` at or below -2, `x/4 + 1/2` between.
/// The `/4` is an arithmetic shift of the wide numerator.
pub fn hsig(x: WideValue) -> Fraction {
    let n = x.frac_bits();
    let two = 1i64 << n;
    let num = x.numerator() as i64;
    if num > two {
        Fraction::max(n)
    } else if num <= -two {
        Fraction::zero(n)
    } else {
        Fraction::saturating((num >> 2) + (1i64 << (n - 2)), n)
    }
}

/// Hard tanh: `max` above 1, `-1` at or below -1, identity between.
pub fn htanh(x: WideValue) -> Fraction {
    let n = x.frac_bits();
    let one = 1i64 << (n - 1);
    let num = x.numerator() as i64;
    if num > one {
        Fraction::max(n)
    } else if num <= -one {
        Fraction::min(n)
    } else {
        x.narrow()
    }
}

/// Saturating `a + b + bias` in one cycle.
pub fn ternary_add(a: WideValue, b: WideValue, bias: WideValue) -> WideValue {
    assert!(
        a.bits() == b.bits() && b.bits() == bias.bits() && a.frac_bits() == bias.frac_bits(),
        "ternary_add on mismatched widths"
    );
    let sum = a.numerator() as i64 + b.numerator() as i64 + bias.numerator() as i64;
    WideValue::saturating(sum, a.frac_bits(), a.guard())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::am::am_multiply;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn f(num: i32, bits: u32) -> Fraction {
        Fraction::new(num, bits).unwrap()
    }

    fn wide(num: i32) -> WideValue {
        WideValue::new(num, 8, 3).unwrap()
    }

    fn matrix(rows: &[&[i32]], bits: u32) -> FracMatrix {
        let rows: Vec<Vec<Fraction>> = rows
            .iter()
            .map(|r| r.iter().map(|&n| f(n, bits)).collect())
            .collect();
        FracMatrix::from_rows(&rows, bits).unwrap()
    }

    // Row-wise saturating sum of original-multiplier products.
    fn oracle_mvm(m: &FracMatrix, y: &[Fraction], guard: u32) -> Vec<i32> {
        (0..m.rows())
            .map(|r| {
                y.iter()
                    .enumerate()
                    .fold(WideValue::zero(m.bits(), guard), |acc, (k, &yk)| {
                        let z = am_multiply(m.get(r, k), yk).unwrap().z;
                        acc.sat_add(z.widen(guard))
                    })
                    .numerator()
            })
            .collect()
    }

    #[test]
    fn mvm_two_by_two() {
        // [[1/2, 1/4], [-1/2, 1/4]] · [1/2, 1/2] at n = 4.
        let m = matrix(&[&[4, 2], &[-4, 2]], 4);
        let y = [f(4, 4), f(4, 4)];
        let mut u = MvmUnit::new(&m, 3, Arithmetic::Approximate);
        let cycles: u32 = y.iter().map(|&s| u.run_column(s).unwrap()).sum();
        let out = u.latch_and_reset();
        let nums: Vec<i32> = out.iter().map(|v| v.numerator()).collect();
        assert_eq!(nums, oracle_mvm(&m, &y, 3));
        // Exact products 3/8 and -1/8; the multiplier lands one ulp off each.
        assert_eq!(nums, [4, 0]);
        assert_eq!(cycles, 8);
        assert_eq!(u.accumulators(), vec![WideValue::zero(4, 3); 2]);
        assert_eq!(u.latch_and_reset(), vec![WideValue::zero(4, 3); 2]);
    }

    #[test]
    fn mvm_three_by_four_cycles_follow_scalars() {
        let m = matrix(&[&[1, 2, 3, 4], &[-1, -2, -3, -4], &[7, 0, -8, 5]], 4);
        let y = [f(3, 4), f(-8, 4), f(0, 4), f(5, 4)];
        let mut u = MvmUnit::new(&m, 3, Arithmetic::Approximate);
        let cycles: Vec<u32> = y.iter().map(|&s| u.run_column(s).unwrap()).collect();
        assert_eq!(cycles, [3, 8, 0, 5]);
        let nums: Vec<i32> = u.latch_and_reset().iter().map(|v| v.numerator()).collect();
        assert_eq!(nums, oracle_mvm(&m, &y, 3));
    }

    #[test]
    fn mvm_zero_scalar_costs_nothing() {
        let m = matrix(&[&[3], &[-2]], 4);
        let mut u = MvmUnit::new(&m, 3, Arithmetic::Approximate);
        assert_eq!(u.run_column(f(0, 4)).unwrap(), 0);
        assert_eq!(u.accumulators(), vec![WideValue::zero(4, 3); 2]);
        assert_eq!(u.cursor(), 1);
    }

    #[test]
    fn mvm_rejects_extra_column_and_bad_width() {
        let m = matrix(&[&[3]], 4);
        let mut u = MvmUnit::new(&m, 3, Arithmetic::Approximate);
        assert!(matches!(
            u.run_column(f(1, 5)),
            Err(Error::WidthMismatch { .. })
        ));
        u.run_column(f(1, 4)).unwrap();
        assert!(matches!(
            u.run_column(f(1, 4)),
            Err(Error::ColumnsExhausted { cols: 1 })
        ));
        assert!(u.begin_column(f(1, 4)).is_err());
        u.latch_and_reset();
        assert!(u.run_column(f(1, 4)).is_ok());
    }

    #[test]
    fn fresh_unit_latches_zero() {
        let mut u = MvmUnit::new(&FracMatrix::zeros(3, 2, 8), 3, Arithmetic::Approximate);
        assert_eq!(u.latch_and_reset(), vec![WideValue::zero(8, 3); 3]);
    }

    #[test]
    fn ticking_matches_run_column() {
        let mut rng = SplitMix64::seed_from_u64(11);
        for n in [4u32, 6, 8] {
            let half = 1i32 << (n - 1);
            for arith in [Arithmetic::Approximate, Arithmetic::Exact] {
                let rows: Vec<Vec<Fraction>> = (0..5)
                    .map(|_| (0..6).map(|_| f(rng.gen_range(-half..half), n)).collect())
                    .collect();
                let m = FracMatrix::from_rows(&rows, n).unwrap();
                let y: Vec<Fraction> = (0..6).map(|_| f(rng.gen_range(-half..half), n)).collect();
                let mut fast = MvmUnit::new(&m, 3, arith);
                let mut slow = MvmUnit::new(&m, 3, arith);
                for &s in &y {
                    let c = fast.run_column(s).unwrap();
                    slow.begin_column(s).unwrap();
                    let mut ticks = 0;
                    while slow.shared_down_counter() > 0 {
                        ticks += 1;
                        let done = slow.tick();
                        assert_eq!(done, slow.shared_down_counter() == 0);
                    }
                    assert!(!slow.tick());
                    assert_eq!(ticks, c);
                }
                assert_eq!(fast.cycles_run(), slow.cycles_run());
                assert_eq!(fast.latch_and_reset(), slow.latch_and_reset());
            }
        }
    }

    #[test]
    fn ema_examples() {
        let (c, cycles) = ema_step(f(6, 4), f(5, 4), f(0, 4), f(-3, 4));
        assert_eq!((c.numerator(), cycles), (4, 3));
        let (c, cycles) = ema_step(f(0, 4), f(5, 4), f(0, 4), f(5, 4));
        assert_eq!((c.numerator(), cycles), (0, 0));
        let (c, cycles) = ema_step(f(6, 4), f(5, 4), f(6, 4), f(5, 4));
        assert_eq!((c.numerator(), cycles), (8, 6));
        assert_eq!(c.narrow().numerator(), 7);
    }

    #[test]
    fn ema_phases_in_order() {
        let mut u = EmaUnit::new(4, 3, Arithmetic::Approximate);
        assert_eq!(u.phase(), EmaPhase::Mult1);
        u.mult1(f(6, 4), f(5, 4));
        assert_eq!(u.phase(), EmaPhase::Mult2);
        u.mult2(f(0, 4), f(5, 4));
        assert_eq!(u.phase(), EmaPhase::Done);
    }

    #[test]
    fn em_examples() {
        let (h, c) = em_multiply(f(6, 4), f(5, 4));
        assert_eq!((h.numerator(), c), (4, 3));
        let (h, c) = em_multiply(f(0, 4), f(5, 4));
        assert_eq!((h.numerator(), c), (0, 0));
        let (h, c) = em_multiply(f(1, 4), f(5, 4));
        let pre = am::preprocess(f(5, 4), f(1, 4)).unwrap();
        assert_eq!((h.numerator(), c), (pre.ud_init, 0));
    }

    #[test]
    fn ema_without_forget_is_a_single_multiply() {
        for n in [4u32, 5] {
            for i in Fraction::all(n) {
                for c in Fraction::all(n) {
                    let (ema, cyc) = ema_step(i, c, Fraction::zero(n), Fraction::max(n));
                    let (em, cyc_em) = em_multiply(i, c);
                    assert_eq!(ema.numerator(), em.numerator());
                    assert_eq!(cyc, cyc_em);
                }
            }
        }
    }

    #[test]
    fn hsig_examples() {
        let n = 8;
        assert_eq!(hsig(WideValue::zero(n, 3)).numerator(), 64);
        assert_eq!(hsig(WideValue::quantize(3.0, n, 3)), Fraction::max(n));
        assert_eq!(hsig(WideValue::quantize(-2.0, n, 3)), Fraction::zero(n));
        // x = 2 sits on the linear branch and lands on +1, clamped.
        assert_eq!(hsig(WideValue::quantize(2.0, n, 3)), Fraction::max(n));
        // -1 → 1/4; arithmetic shift truncates toward -inf: -1/128 → -1 >> 2 = -1.
        assert_eq!(hsig(WideValue::quantize(-1.0, n, 3)).numerator(), 32);
        assert_eq!(hsig(wide(-1)).numerator(), 63);
    }

    #[test]
    fn htanh_examples() {
        let n = 8;
        assert_eq!(htanh(WideValue::quantize(0.5, n, 3)).to_real(), 0.5);
        assert_eq!(htanh(WideValue::quantize(1.5, n, 3)), Fraction::max(n));
        assert_eq!(htanh(WideValue::quantize(-3.0, n, 3)), Fraction::min(n));
        assert_eq!(htanh(WideValue::quantize(1.0, n, 3)), Fraction::max(n));
    }

    #[test]
    fn activations_are_monotone_and_bounded() {
        for n in [4u32, 8] {
            for g in [2u32, 3] {
                let half = 1i32 << (n + g - 1);
                let mut prev_s = i32::MIN;
                let mut prev_t = i32::MIN;
                for num in -half..half {
                    let x = WideValue::new(num, n, g).unwrap();
                    let s = hsig(x).numerator();
                    let t = htanh(x).numerator();
                    assert!(s >= prev_s && t >= prev_t);
                    assert!(s >= 0);
                    prev_s = s;
                    prev_t = t;
                }
            }
            for v in Fraction::all(n) {
                assert_eq!(htanh(v.widen(3)), v);
            }
        }
    }

    #[test]
    fn ternary_add_examples() {
        assert_eq!(ternary_add(wide(1), wide(2), wide(3)).numerator(), 6);
        let max = WideValue::max(8, 3);
        assert_eq!(ternary_add(max, max, max), max);
        assert_eq!(ternary_add(wide(77), wide(-77), wide(0)).numerator(), 0);
    }

    proptest! {
        #[test]
        fn mvm_equals_rowwise_sum_of_products(seed in any::<u64>(), n in 2u32..=10, rows in 1usize..6, cols in 1usize..6) {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let half = 1i32 << (n - 1);
            let m: Vec<Vec<Fraction>> = (0..rows)
                .map(|_| (0..cols).map(|_| f(rng.gen_range(-half..half), n)).collect())
                .collect();
            let m = FracMatrix::from_rows(&m, n).unwrap();
            let y: Vec<Fraction> = (0..cols).map(|_| f(rng.gen_range(-half..half), n)).collect();
            let guard = rng.gen_range(0..=3);
            let mut u = MvmUnit::new(&m, guard, Arithmetic::Approximate);
            let total: u32 = y.iter().map(|&s| u.run_column(s).unwrap()).sum();
            prop_assert_eq!(total, y.iter().map(|s| s.stream_length()).sum::<u32>());
            let got: Vec<i32> = u.latch_and_reset().iter().map(|v| v.numerator()).collect();
            prop_assert_eq!(got, oracle_mvm(&m, &y, guard));
        }
    }
}
