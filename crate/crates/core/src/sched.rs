//! Layer controller: runs one LSTM layer over `T` time steps on the compute
//! units and records how many cycles each controller state takes.
//!
//! Two schedules share the same datapath code, so they produce identical
//! hidden and memory states and differ only in timing:
//!
//! * pipelined: the seven Top-C states. Per time step `t`,
//!   `CS1` finishes the last MVM column (the full MVM at `t = 1`), `CS2`
//!   activates element 1, `CS3` runs its EMA, then for `j = 1..N-1` a
//!   single-cycle `CS4` is followed by `CS5`, where the EM for `h_j` plus the
//!   partial MVM column `j` of step `t+1` run alongside the EMA for
//!   `C_{j+1}`. `CS6` and `CS7` finish element `N`.
//! * non-pipelined: the six stages execute strictly one after another.
//!
//! The model window counts the cycles of iterations `t = 2..=T`.

use std::fmt;
use std::io::Write;

use crate::fxp::{Fraction, WideValue};
use crate::perf::MagnitudeTrace;
use crate::units::{self, Arithmetic, EmaUnit, FracMatrix, MvmUnit};
use crate::{Error, Result};

/// LSTM gate; the array order everywhere is input, output, forget, cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Input,
    Output,
    Forget,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Output, Gate::Forget, Gate::Cell];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Suffix used in parameter names (`W_xi`, `b_o`, ...).
    pub fn suffix(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Output => 'o',
            Gate::Forget => 'f',
            Gate::Cell => 'c',
        }
    }
}

/// Quantized weights and biases of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    bits: u32,
    guard: u32,
    input_dim: usize,
    hidden_dim: usize,
    /// `W_x*`, each `N × M`, indexed by [`Gate::index`].
    pub w_x: [FracMatrix; 4],
    /// `W_h*`, each `N × N`.
    pub w_h: [FracMatrix; 4],
    /// `b_*`, each of length `N`.
    pub bias: [Vec<WideValue>; 4],
}

impl LayerParams {
    pub fn new(
        w_x: [FracMatrix; 4],
        w_h: [FracMatrix; 4],
        bias: [Vec<WideValue>; 4],
    ) -> Result<Self> {
        let bits = w_x[0].bits();
        let hidden_dim = w_x[0].rows();
        let input_dim = w_x[0].cols();
        let guard = bias[0]
            .first()
            .map_or(crate::fxp::DEFAULT_GUARD_BITS, |b| b.guard());
        if hidden_dim == 0 {
            return Err(Error::DimensionMismatch("hidden dimension is zero".into()));
        }
        for g in Gate::ALL {
            let (wx, wh, b) = (&w_x[g.index()], &w_h[g.index()], &bias[g.index()]);
            if (wx.rows(), wx.cols()) != (hidden_dim, input_dim) {
                return Err(Error::DimensionMismatch(format!(
                    "W_x{} is {}x{}, expected {hidden_dim}x{input_dim}",
                    g.suffix(),
                    wx.rows(),
                    wx.cols()
                )));
            }
            if (wh.rows(), wh.cols()) != (hidden_dim, hidden_dim) {
                return Err(Error::DimensionMismatch(format!(
                    "W_h{} is {}x{}, expected {hidden_dim}x{hidden_dim}",
                    g.suffix(),
                    wh.rows(),
                    wh.cols()
                )));
            }
            if b.len() != hidden_dim {
                return Err(Error::DimensionMismatch(format!(
                    "b_{} has length {}, expected {hidden_dim}",
                    g.suffix(),
                    b.len()
                )));
            }
            if wx.bits() != bits || wh.bits() != bits {
                return Err(Error::WidthMismatch {
                    left: bits,
                    right: wx.bits().max(wh.bits()),
                });
            }
            if b.iter()
                .any(|v| v.frac_bits() != bits || v.guard() != guard)
            {
                return Err(Error::DimensionMismatch(format!(
                    "b_{} is not scaled for {bits} bits with {guard} guard bits",
                    g.suffix()
                )));
            }
        }
        Ok(Self {
            bits,
            guard,
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            bias,
        })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, bits: u32, guard: u32) -> Self {
        let wx = FracMatrix::zeros(hidden_dim, input_dim, bits);
        let wh = FracMatrix::zeros(hidden_dim, hidden_dim, bits);
        let b = vec![WideValue::zero(bits, guard); hidden_dim];
        Self::new(
            std::array::from_fn(|_| wx.clone()),
            std::array::from_fn(|_| wh.clone()),
            std::array::from_fn(|_| b.clone()),
        )
        .expect("consistent zero layer")
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn guard(&self) -> u32 {
        self.guard
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// Hidden and memory state after time step `t` (`t = 0` is the initial state).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerState {
    pub h: Vec<Fraction>,
    pub c: Vec<Fraction>,
    pub t: usize,
}

impl LayerState {
    pub fn zeros(hidden_dim: usize, bits: u32) -> Self {
        Self {
            h: vec![Fraction::zero(bits); hidden_dim],
            c: vec![Fraction::zero(bits); hidden_dim],
            t: 0,
        }
    }
}

/// Controller state (pipelined) or pipeline stage (non-pipelined).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Cs1,
    Cs2,
    Cs3,
    Cs4,
    Cs5,
    Cs6,
    Cs7,
    Stage1,
    Stage2,
    Stage3,
    Stage4,
    Stage5,
    Stage6,
}

impl Phase {
    /// Phases whose duration is a single cycle by construction.
    pub fn is_single_cycle(self) -> bool {
        matches!(
            self,
            Phase::Cs2 | Phase::Cs4 | Phase::Cs6 | Phase::Stage2 | Phase::Stage4 | Phase::Stage5
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Cs1 => "CS1",
            Phase::Cs2 => "CS2",
            Phase::Cs3 => "CS3",
            Phase::Cs4 => "CS4",
            Phase::Cs5 => "CS5",
            Phase::Cs6 => "CS6",
            Phase::Cs7 => "CS7",
            Phase::Stage1 => "ST1",
            Phase::Stage2 => "ST2",
            Phase::Stage3 => "ST3",
            Phase::Stage4 => "ST4",
            Phase::Stage5 => "ST5",
            Phase::Stage6 => "ST6",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub phase: Phase,
    /// 1-based time step.
    pub t: u32,
    /// 1-based element index; 0 for whole-vector phases (CS1, stage 1).
    pub j: u32,
    pub cycles: u32,
}

/// Cycle durations per controller state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleTrace {
    pub records: Vec<TraceRecord>,
    pub total_cycles: u64,
    /// Cycles of iterations `t ≥ 2`.
    pub model_window_cycles: u64,
}

impl CycleTrace {
    fn push(&mut self, phase: Phase, t: usize, j: usize, cycles: u32) {
        self.records.push(TraceRecord {
            phase,
            t: t as u32,
            j: j as u32,
            cycles,
        });
        self.total_cycles += cycles as u64;
        if t >= 2 {
            self.model_window_cycles += cycles as u64;
        }
    }

    /// One `state,t,j,cycles` line per record, after a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "t", "j", "cycles"])?;
        for r in &self.records {
            w.write_record([
                r.phase.to_string(),
                r.t.to_string(),
                r.j.to_string(),
                r.cycles.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Pipelined,
    NonPipelined,
}

/// Cycles the MVM units spent on each input side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MvmCycles {
    pub x_side: u64,
    pub h_side: u64,
}

/// Everything a completed run produces.
#[derive(Debug, Clone)]
pub struct Run {
    /// States after steps `1..=T`.
    pub states: Vec<LayerState>,
    pub trace: CycleTrace,
    pub magnitudes: MagnitudeTrace,
    pub mvm_cycles: MvmCycles,
}

/// Per-step activated gate values for one element.
#[derive(Debug, Clone, Copy)]
struct InputGates {
    f: Fraction,
    c_cand: Fraction,
    i: Fraction,
}

/// Latched pre-activation buffers for one time step.
struct Preacts {
    pre: [Vec<WideValue>; 4],
}

impl Preacts {
    fn input_gates(&self, j: usize) -> InputGates {
        InputGates {
            f: units::hsig(self.pre[Gate::Forget.index()][j]),
            c_cand: units::htanh(self.pre[Gate::Cell.index()][j]),
            i: units::hsig(self.pre[Gate::Input.index()][j]),
        }
    }

    fn output_gate(&self, j: usize) -> Fraction {
        units::hsig(self.pre[Gate::Output.index()][j])
    }
}

/// A layer mapped onto eight MVM units plus the element-wise units.
#[derive(Debug, Clone)]
pub struct LayerSim {
    bits: u32,
    guard: u32,
    input_dim: usize,
    hidden_dim: usize,
    arithmetic: Arithmetic,
    bias: [Vec<WideValue>; 4],
    mvm_x: [MvmUnit; 4],
    mvm_h: [MvmUnit; 4],
}

impl LayerSim {
    pub fn new(params: &LayerParams, arithmetic: Arithmetic) -> Self {
        let guard = params.guard();
        Self {
            bits: params.bits(),
            guard,
            input_dim: params.input_dim(),
            hidden_dim: params.hidden_dim(),
            arithmetic,
            bias: params.bias.clone(),
            mvm_x: std::array::from_fn(|g| MvmUnit::new(&params.w_x[g], guard, arithmetic)),
            mvm_h: std::array::from_fn(|g| MvmUnit::new(&params.w_h[g], guard, arithmetic)),
        }
    }

    fn validate(&self, inputs: &[Vec<Fraction>], init: &LayerState) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::DimensionMismatch("no time steps".into()));
        }
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "input {} has length {}, expected {}",
                    t + 1,
                    x.len(),
                    self.input_dim
                )));
            }
            if let Some(v) = x.iter().find(|v| v.bits() != self.bits) {
                return Err(Error::WidthMismatch {
                    left: self.bits,
                    right: v.bits(),
                });
            }
        }
        if init.h.len() != self.hidden_dim || init.c.len() != self.hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "initial state has lengths ({}, {}), expected {}",
                init.h.len(),
                init.c.len(),
                self.hidden_dim
            )));
        }
        if let Some(v) = init.h.iter().chain(&init.c).find(|v| v.bits() != self.bits) {
            return Err(Error::WidthMismatch {
                left: self.bits,
                right: v.bits(),
            });
        }
        Ok(())
    }

    /// Feeds MVM column `k`: `x[k]` into the x-side units (if `k < M`) and
    /// `h[k]` into the h-side units (if `k < N`) in lockstep. Returns the
    /// lockstep latency, the longer of the two streams.
    fn consume_column(
        &mut self,
        k: usize,
        x: &[Fraction],
        h: &[Fraction],
        cyc: &mut MvmCycles,
    ) -> u32 {
        let mut cx = 0;
        if k < self.input_dim {
            for u in &mut self.mvm_x {
                cx = u.run_column(x[k]).expect("x-side column accounting");
            }
        }
        let mut ch = 0;
        if k < self.hidden_dim {
            for u in &mut self.mvm_h {
                ch = u.run_column(h[k]).expect("h-side column accounting");
            }
        }
        cyc.x_side += cx as u64;
        cyc.h_side += ch as u64;
        cx.max(ch)
    }

    fn latch(&mut self) -> Preacts {
        for u in self.mvm_x.iter().chain(&self.mvm_h) {
            assert_eq!(
                u.cursor(),
                u.cols(),
                "MVM latched before consuming every column"
            );
        }
        let pre = std::array::from_fn(|g| {
            let ax = self.mvm_x[g].latch_and_reset();
            let ah = self.mvm_h[g].latch_and_reset();
            ax.iter()
                .zip(&ah)
                .zip(&self.bias[g])
                .map(|((&a, &b), &bias)| units::ternary_add(a, b, bias))
                .collect()
        });
        Preacts { pre }
    }

    fn ema(&self, g: InputGates, c_prev: Fraction) -> (Fraction, u32) {
        let mut unit = EmaUnit::new(self.bits, self.guard, self.arithmetic);
        let cycles = unit.mult1(g.i, g.c_cand) + unit.mult2(g.f, c_prev);
        (unit.result().narrow(), cycles)
    }

    fn tanh_out(&self, c: Fraction) -> Fraction {
        units::htanh(c.widen(self.guard))
    }

    fn em(&self, o: Fraction, tanh_c: Fraction) -> (Fraction, u32) {
        units::em_multiply_with(self.arithmetic, o, tanh_c)
    }

    /// Runs `inputs.len()` time steps from `init`.
    pub fn run(
        &mut self,
        inputs: &[Vec<Fraction>],
        init: &LayerState,
        schedule: Schedule,
    ) -> Result<Run> {
        self.validate(inputs, init)?;
        for u in self.mvm_x.iter_mut().chain(self.mvm_h.iter_mut()) {
            u.latch_and_reset();
        }
        let steps = inputs.len();
        let mut mags = MagnitudeTrace::new(self.bits, steps, self.input_dim, self.hidden_dim);
        for (t, x) in inputs.iter().enumerate() {
            for (j, v) in x.iter().enumerate() {
                mags.set_mx(t + 1, j + 1, v.stream_length());
            }
        }
        for (j, v) in init.h.iter().enumerate() {
            mags.set_mh(0, j + 1, v.stream_length());
        }
        let mut out = Run {
            states: Vec::with_capacity(steps),
            trace: CycleTrace::default(),
            magnitudes: mags,
            mvm_cycles: MvmCycles::default(),
        };
        match schedule {
            Schedule::Pipelined => self.run_pipelined(inputs, init, &mut out),
            Schedule::NonPipelined => self.run_sequential(inputs, init, &mut out),
        }
        for (t, st) in out.states.iter().enumerate() {
            for (j, h) in st.h.iter().enumerate() {
                out.magnitudes.set_mh(t + 1, j + 1, h.stream_length());
            }
        }
        Ok(out)
    }

    fn run_pipelined(&mut self, inputs: &[Vec<Fraction>], init: &LayerState, out: &mut Run) {
        let (m, n, steps) = (self.input_dim, self.hidden_dim, inputs.len());
        let zero = Fraction::zero(self.bits);
        let mut prev = init.clone();
        for t in 1..=steps {
            let x = &inputs[t - 1];
            let mut h = vec![zero; n];
            let mut c = vec![zero; n];

            // CS1: the full MVM at t = 1, otherwise whatever the partial
            // columns of the previous iteration left over.
            let first = if t == 1 { 0 } else { n - 1 };
            let cs1: u32 = (first..m.max(n))
                .map(|k| self.consume_column(k, x, &prev.h, &mut out.mvm_cycles))
                .sum();
            out.trace.push(Phase::Cs1, t, 0, cs1);
            let pre = self.latch();

            let mut gates = pre.input_gates(0);
            out.trace.push(Phase::Cs2, t, 1, 1);
            let (c0, cs3) = self.ema(gates, prev.c[0]);
            c[0] = c0;
            out.trace.push(Phase::Cs3, t, 1, cs3);
            out.magnitudes.set_input_gates(t, 1, gates.i, gates.f);

            for j in 1..n {
                // CS4: element j+1 input gates, element j output gate and tanh.
                gates = pre.input_gates(j);
                let o = pre.output_gate(j - 1);
                let tanh_c = self.tanh_out(c[j - 1]);
                out.trace.push(Phase::Cs4, t, j, 1);

                // CS5 track A: EM for h_j, then partial column j of step t+1.
                let (hj, mut track_a) = self.em(o, tanh_c);
                h[j - 1] = hj;
                if t < steps {
                    track_a += self.consume_column(j - 1, &inputs[t], &h, &mut out.mvm_cycles);
                }
                // CS5 track B: EMA for C_{j+1}.
                let (cj, track_b) = self.ema(gates, prev.c[j]);
                c[j] = cj;
                out.trace.push(Phase::Cs5, t, j, track_a.max(track_b));
                out.magnitudes.set_input_gates(t, j + 1, gates.i, gates.f);
                out.magnitudes.set_mo(t, j, o.stream_length());
            }

            let o = pre.output_gate(n - 1);
            let tanh_c = self.tanh_out(c[n - 1]);
            out.trace.push(Phase::Cs6, t, n, 1);
            let (hn, cs7) = self.em(o, tanh_c);
            h[n - 1] = hn;
            out.trace.push(Phase::Cs7, t, n, cs7);
            out.magnitudes.set_mo(t, n, o.stream_length());

            prev = LayerState { h, c, t };
            out.states.push(prev.clone());
        }
    }

    fn run_sequential(&mut self, inputs: &[Vec<Fraction>], init: &LayerState, out: &mut Run) {
        let (m, n) = (self.input_dim, self.hidden_dim);
        let zero = Fraction::zero(self.bits);
        let mut prev = init.clone();
        for (t, x) in (1..).zip(inputs) {
            let stage1: u32 = (0..m.max(n))
                .map(|k| self.consume_column(k, x, &prev.h, &mut out.mvm_cycles))
                .sum();
            out.trace.push(Phase::Stage1, t, 0, stage1);
            let pre = self.latch();
            let mut h = vec![zero; n];
            let mut c = vec![zero; n];
            for j in 0..n {
                let gates = pre.input_gates(j);
                out.trace.push(Phase::Stage2, t, j + 1, 1);
                let (cj, stage3) = self.ema(gates, prev.c[j]);
                c[j] = cj;
                out.trace.push(Phase::Stage3, t, j + 1, stage3);
                let o = pre.output_gate(j);
                out.trace.push(Phase::Stage4, t, j + 1, 1);
                let tanh_c = self.tanh_out(cj);
                out.trace.push(Phase::Stage5, t, j + 1, 1);
                let (hj, stage6) = self.em(o, tanh_c);
                h[j] = hj;
                out.trace.push(Phase::Stage6, t, j + 1, stage6);
                out.magnitudes.set_input_gates(t, j + 1, gates.i, gates.f);
                out.magnitudes.set_mo(t, j + 1, o.stream_length());
            }
            prev = LayerState { h, c, t };
            out.states.push(prev.clone());
        }
    }
}

/// Runs a layer on the approximate datapath with the given schedule.
pub fn run_with(
    params: &LayerParams,
    inputs: &[Vec<Fraction>],
    init: &LayerState,
    schedule: Schedule,
    arithmetic: Arithmetic,
) -> Result<Run> {
    LayerSim::new(params, arithmetic).run(inputs, init, schedule)
}

pub fn run_pipelined(
    params: &LayerParams,
    inputs: &[Vec<Fraction>],
    init: &LayerState,
) -> Result<Run> {
    run_with(
        params,
        inputs,
        init,
        Schedule::Pipelined,
        Arithmetic::Approximate,
    )
}

pub fn run_nonpipelined(
    params: &LayerParams,
    inputs: &[Vec<Fraction>],
    init: &LayerState,
) -> Result<Run> {
    run_with(
        params,
        inputs,
        init,
        Schedule::NonPipelined,
        Arithmetic::Approximate,
    )
}

/// Operand magnitudes recorded during a run; the performance model's input.
pub fn gate_magnitude_trace(run: &Run) -> &MagnitudeTrace {
    &run.magnitudes
}
