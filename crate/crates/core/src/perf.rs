//! Analytic latency model of the layer controller.
//!
//! Both evaluators take the operand magnitudes recorded by a simulation
//! ([`MagnitudeTrace`]) and return the cycle count of the model window
//! (`t = 2..=T`). Every halved term is a per-operand floor, matching the
//! accelerated multiplier, and `CS1` at iteration `t` is charged for the
//! column it consumes: `max(|x_t^N|, |h_{t-1}^N|)`.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::fxp::{Fraction, DEFAULT_GUARD_BITS};
use crate::oracle::FloatLayer;
use crate::sched::{self, LayerState, Schedule};
use crate::units::Arithmetic;
use crate::{Error, Result};

/// `|N(·)|` of every multiplier operand that sets a latency, per `(t, j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagnitudeTrace {
    bits: u32,
    timesteps: usize,
    input_dim: usize,
    hidden: usize,
    mx: Vec<u32>,
    // Includes t = 0 (the initial hidden state).
    mh: Vec<u32>,
    mi: Vec<u32>,
    mf: Vec<u32>,
    mo: Vec<u32>,
}

impl MagnitudeTrace {
    /// All-zero trace for `T` steps, `M` inputs and `N` hidden nodes.
    pub fn new(bits: u32, timesteps: usize, input_dim: usize, hidden: usize) -> Self {
        Self {
            bits,
            timesteps,
            input_dim,
            hidden,
            mx: vec![0; timesteps * input_dim],
            mh: vec![0; (timesteps + 1) * hidden],
            mi: vec![0; timesteps * hidden],
            mf: vec![0; timesteps * hidden],
            mo: vec![0; timesteps * hidden],
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    #[inline]
    fn at(&self, t: usize, j: usize, width: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.timesteps && j >= 1 && j <= width);
        (t - 1) * width + (j - 1)
    }

    #[inline]
    fn at_h(&self, t: usize, j: usize) -> usize {
        debug_assert!(t <= self.timesteps && j >= 1 && j <= self.hidden);
        t * self.hidden + (j - 1)
    }

    /// `|x_t^j|`, `t` and `j` 1-based.
    pub fn mx(&self, t: usize, j: usize) -> u32 {
        self.mx[self.at(t, j, self.input_dim)]
    }

    /// `|h_t^j|`, defined from `t = 0`.
    pub fn mh(&self, t: usize, j: usize) -> u32 {
        self.mh[self.at_h(t, j)]
    }

    pub fn mi(&self, t: usize, j: usize) -> u32 {
        self.mi[self.at(t, j, self.hidden)]
    }

    pub fn mf(&self, t: usize, j: usize) -> u32 {
        self.mf[self.at(t, j, self.hidden)]
    }

    pub fn mo(&self, t: usize, j: usize) -> u32 {
        self.mo[self.at(t, j, self.hidden)]
    }

    pub fn set_mx(&mut self, t: usize, j: usize, v: u32) {
        let k = self.at(t, j, self.input_dim);
        self.mx[k] = v;
    }

    pub fn set_mh(&mut self, t: usize, j: usize, v: u32) {
        let k = self.at_h(t, j);
        self.mh[k] = v;
    }

    pub fn set_mi(&mut self, t: usize, j: usize, v: u32) {
        let k = self.at(t, j, self.hidden);
        self.mi[k] = v;
    }

    pub fn set_mf(&mut self, t: usize, j: usize, v: u32) {
        let k = self.at(t, j, self.hidden);
        self.mf[k] = v;
    }

    pub fn set_mo(&mut self, t: usize, j: usize, v: u32) {
        let k = self.at(t, j, self.hidden);
        self.mo[k] = v;
    }

    pub(crate) fn set_input_gates(&mut self, t: usize, j: usize, i: Fraction, f: Fraction) {
        self.set_mi(t, j, i.stream_length());
        self.set_mf(t, j, f.stream_length());
    }

    /// Largest recorded magnitude of any kind.
    pub fn max_entry(&self) -> u32 {
        [&self.mx, &self.mh, &self.mi, &self.mf, &self.mo]
            .iter()
            .flat_map(|v| v.iter().copied())
            .max()
            .unwrap_or(0)
    }

    fn check_square(&self) -> Result<bool> {
        if self.input_dim != self.hidden {
            return Err(Error::DimensionMismatch(format!(
                "latency model needs input_dim == hidden ({} != {})",
                self.input_dim, self.hidden
            )));
        }
        if self.timesteps < 2 {
            log::warn!("latency model window is empty for T = {}", self.timesteps);
            return Ok(false);
        }
        Ok(true)
    }
}

/// `CS5` duration: EM for `h_j` plus (except at `t = T`) partial MVM
/// column `j` of step `t+1`, in parallel with the EMA for `C_{j+1}`.
fn cs5(m: &MagnitudeTrace, j: usize, t: usize) -> u64 {
    let partial = if t != m.timesteps {
        m.mx(t + 1, j).max(m.mh(t, j))
    } else {
        0
    };
    let em_track = (m.mo(t, j) / 2 + partial) as u64;
    let ema_track = (m.mi(t, j + 1) / 2 + m.mf(t, j + 1) / 2) as u64;
    em_track.max(ema_track)
}

/// Pipelined total over the model window.
pub fn eval_pipelined(m: &MagnitudeTrace) -> Result<u64> {
    if !m.check_square()? {
        return Ok(0);
    }
    let (n, steps) = (m.hidden, m.timesteps);
    let mut total = 0u64;
    for t in 2..=steps {
        let cs1 = m.mx(t, n).max(m.mh(t - 1, n)) as u64;
        let cs3 = (m.mi(t, 1) / 2 + m.mf(t, 1) / 2) as u64;
        let cs7 = (m.mo(t, n) / 2) as u64;
        total += cs1 + cs3 + cs7;
        total += (1..n).map(|j| cs5(m, j, t)).sum::<u64>();
    }
    let (n, steps) = (n as u64, steps as u64);
    Ok(total + steps + n * (steps - 1) - 1)
}

/// Non-pipelined total over the model window.
pub fn eval_nonpipelined(m: &MagnitudeTrace) -> Result<u64> {
    if !m.check_square()? {
        return Ok(0);
    }
    let (n, steps) = (m.hidden, m.timesteps);
    let mut total = 0u64;
    for t in 2..=steps {
        for j in 1..=n {
            total += m.mx(t, j).max(m.mh(t - 1, j)) as u64;
            total += (m.mi(t, j) / 2 + m.mf(t, j) / 2 + m.mo(t, j) / 2) as u64;
        }
    }
    Ok(total + 3 * (n as u64) * (steps as u64 - 1))
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerfConfig {
    pub bits: u32,
    pub hidden: usize,
    pub timesteps: usize,
    pub seed: u64,
}

impl PerfConfig {
    /// Cartesian product in `bits`, `hidden`, `timesteps` order. Each point
    /// gets its own seed drawn from a generator seeded with `seed`.
    pub fn grid(bits: &[u32], hidden: &[usize], timesteps: &[usize], seed: u64) -> Vec<PerfConfig> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut out = Vec::new();
        for &b in bits {
            for &h in hidden {
                for &t in timesteps {
                    out.push(PerfConfig {
                        bits: b,
                        hidden: h,
                        timesteps: t,
                        seed: rng.next_u64(),
                    });
                }
            }
        }
        out
    }

    /// The 27 configurations: {8,12,16} bits × {64,128,256} nodes × {10,100,1000} steps.
    pub fn table3_grid(seed: u64) -> Vec<PerfConfig> {
        Self::grid(&[8, 12, 16], &[64, 128, 256], &[10, 100, 1000], seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub config: PerfConfig,
    pub model_pipelined: u64,
    pub model_nonpipelined: u64,
    pub sim_pipelined: u64,
    pub sim_nonpipelined: u64,
    pub speedup: f64,
}

impl SweepRow {
    /// Simulator and model agree for both schedules.
    pub fn cross_validated(&self) -> bool {
        self.sim_pipelined == self.model_pipelined
            && self.sim_nonpipelined == self.model_nonpipelined
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Random layer and inputs: weights and biases uniform in `[-1/√N, 1/√N]`,
/// inputs uniform over representable fractions.
pub fn random_instance(
    bits: u32,
    input_dim: usize,
    hidden: usize,
    timesteps: usize,
    rng: &mut impl Rng,
) -> (sched::LayerParams, Vec<Vec<Fraction>>) {
    let layer = FloatLayer::random(input_dim, hidden, rng);
    let (params, _) = layer.quantize(bits, DEFAULT_GUARD_BITS);
    let half = 1i32 << (bits - 1);
    let inputs = (0..timesteps)
        .map(|_| {
            (0..input_dim)
                .map(|_| Fraction::saturating(rng.gen_range(-half..half) as i64, bits))
                .collect()
        })
        .collect();
    (params, inputs)
}

/// [`random_instance`] drawn from a SplitMix64 stream seeded with `seed`.
pub fn seeded_instance(
    bits: u32,
    input_dim: usize,
    hidden: usize,
    timesteps: usize,
    seed: u64,
) -> (sched::LayerParams, Vec<Vec<Fraction>>) {
    random_instance(
        bits,
        input_dim,
        hidden,
        timesteps,
        &mut SplitMix64::seed_from_u64(seed),
    )
}

/// Simulates one configuration under both schedules and evaluates the model.
pub fn run_config(cfg: &PerfConfig) -> Result<SweepRow> {
    let (params, inputs) =
        seeded_instance(cfg.bits, cfg.hidden, cfg.hidden, cfg.timesteps, cfg.seed);
    let init = LayerState::zeros(cfg.hidden, cfg.bits);
    let mut sim = sched::LayerSim::new(&params, Arithmetic::Approximate);
    let piped = sim.run(&inputs, &init, Schedule::Pipelined)?;
    let seq = sim.run(&inputs, &init, Schedule::NonPipelined)?;
    let model_pipelined = eval_pipelined(&piped.magnitudes)?;
    let model_nonpipelined = eval_nonpipelined(&seq.magnitudes)?;
    Ok(SweepRow {
        config: *cfg,
        model_pipelined,
        model_nonpipelined,
        sim_pipelined: piped.trace.model_window_cycles,
        sim_nonpipelined: seq.trace.model_window_cycles,
        speedup: model_nonpipelined as f64 / model_pipelined as f64,
    })
}

/// Runs every configuration, in grid order.
pub fn sweep(grid: &[PerfConfig]) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|cfg| {
            let row = run_config(cfg)?;
            log::info!(
                "bits={} hidden={} T={} speedup={:.4}",
                cfg.bits,
                cfg.hidden,
                cfg.timesteps,
                row.speedup
            );
            Ok(row)
        })
        .collect()
}

pub fn summarize(rows: &[SweepRow]) -> SweepSummary {
    let speedups = rows.iter().map(|r| r.speedup);
    SweepSummary {
        mean: speedups.clone().sum::<f64>() / rows.len() as f64,
        min: speedups.clone().fold(f64::INFINITY, f64::min),
        max: speedups.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Comma-separated sweep table followed by a `mean,min,max` summary.
pub fn write_sweep_report<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record([
        "bits",
        "hidden",
        "timesteps",
        "seed",
        "model_pipelined",
        "model_nonpipelined",
        "sim_pipelined",
        "sim_nonpipelined",
        "speedup",
    ])?;
    for r in rows {
        w.write_record([
            r.config.bits.to_string(),
            r.config.hidden.to_string(),
            r.config.timesteps.to_string(),
            r.config.seed.to_string(),
            r.model_pipelined.to_string(),
            r.model_nonpipelined.to_string(),
            r.sim_pipelined.to_string(),
            r.sim_nonpipelined.to_string(),
            format!("{:.6}", r.speedup),
        ])?;
    }
    let s = summarize(rows);
    w.write_record(["mean", "min", "max"])?;
    w.write_record([
        format!("{:.6}", s.mean),
        format!("{:.6}", s.min),
        format!("{:.6}", s.max),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Magnitudes of the two-step, single-node worked case.
    fn tiny() -> MagnitudeTrace {
        let mut m = MagnitudeTrace::new(8, 2, 1, 1);
        m.set_mx(2, 1, 10);
        m.set_mh(1, 1, 6);
        m.set_mi(2, 1, 4);
        m.set_mf(2, 1, 8);
        m.set_mo(2, 1, 5);
        m
    }

    #[test]
    fn tiny_case() {
        assert_eq!(eval_pipelined(&tiny()).unwrap(), 20);
        assert_eq!(eval_nonpipelined(&tiny()).unwrap(), 21);
    }

    #[test]
    fn constants_only() {
        let m = MagnitudeTrace::new(8, 3, 2, 2);
        assert_eq!(eval_pipelined(&m).unwrap(), 6);
        assert_eq!(eval_nonpipelined(&m).unwrap(), 12);
        // Speedup of an all-zero trace: 3N(T-1) / (T + N(T-1) - 1).
        let (n, t) = (64u64, 100u64);
        let m = MagnitudeTrace::new(8, t as usize, n as usize, n as usize);
        let sp = eval_nonpipelined(&m).unwrap() as f64 / eval_pipelined(&m).unwrap() as f64;
        assert_eq!(sp, (3 * n * (t - 1)) as f64 / (t + n * (t - 1) - 1) as f64);
    }

    #[test]
    fn short_window_is_zero() {
        let m = MagnitudeTrace::new(8, 1, 3, 3);
        assert_eq!(eval_pipelined(&m).unwrap(), 0);
        assert_eq!(eval_nonpipelined(&m).unwrap(), 0);
    }

    #[test]
    fn non_square_is_rejected() {
        let m = MagnitudeTrace::new(8, 3, 2, 3);
        assert!(matches!(
            eval_pipelined(&m),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(eval_nonpipelined(&m).is_err());
    }

    #[test]
    fn last_step_has_no_partial_column() {
        // Only x_3 is nonzero; at t = T = 2 nothing may read it.
        let mut m = MagnitudeTrace::new(8, 2, 2, 2);
        let base = eval_pipelined(&m).unwrap();
        m.set_mx(2, 1, 9);
        // Column 1 of step 2 was consumed during step 1's CS5: outside the window.
        assert_eq!(eval_pipelined(&m).unwrap(), base);
        m.set_mx(2, 2, 9);
        assert_eq!(eval_pipelined(&m).unwrap(), base + 9);
    }

    #[test]
    fn grid_is_deterministic() {
        let a = PerfConfig::table3_grid(5);
        assert_eq!(a.len(), 27);
        assert_eq!(a, PerfConfig::table3_grid(5));
        assert_ne!(a[0].seed, PerfConfig::table3_grid(6)[0].seed);
    }

    #[test]
    fn evaluators_are_monotone() {
        let mut rng = SplitMix64::seed_from_u64(3);
        for _ in 0..50 {
            let (t, n) = (rng.gen_range(2..6), rng.gen_range(1..5));
            let mut m = MagnitudeTrace::new(8, t, n, n);
            for tt in 1..=t {
                for j in 1..=n {
                    m.set_mx(tt, j, rng.gen_range(0..=128));
                    m.set_mh(tt, j, rng.gen_range(0..=128));
                    m.set_mi(tt, j, rng.gen_range(0..=128));
                    m.set_mf(tt, j, rng.gen_range(0..=128));
                    m.set_mo(tt, j, rng.gen_range(0..=128));
                }
            }
            let (p, np) = (eval_pipelined(&m).unwrap(), eval_nonpipelined(&m).unwrap());
            let (tt, j) = (rng.gen_range(1..=t), rng.gen_range(1..=n));
            let mut bumped = m.clone();
            match rng.gen_range(0..5) {
                0 => bumped.set_mx(tt, j, m.mx(tt, j) + 3),
                1 => bumped.set_mh(tt, j, m.mh(tt, j) + 3),
                2 => bumped.set_mi(tt, j, m.mi(tt, j) + 3),
                3 => bumped.set_mf(tt, j, m.mf(tt, j) + 3),
                _ => bumped.set_mo(tt, j, m.mo(tt, j) + 3),
            }
            assert!(eval_pipelined(&bumped).unwrap() >= p);
            assert!(eval_nonpipelined(&bumped).unwrap() >= np);
        }
    }

    #[test]
    fn small_sweep_report() {
        let grid = PerfConfig::grid(&[8], &[4], &[3, 5], 1);
        let rows = sweep(&grid).unwrap();
        assert!(rows.iter().all(SweepRow::cross_validated));
        assert!(rows.iter().all(|r| r.speedup > 1.0));
        assert_eq!(rows, sweep(&grid).unwrap());
        let mut buf = Vec::new();
        write_sweep_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "bits,hidden,timesteps,seed,model_pipelined,model_nonpipelined,sim_pipelined,sim_nonpipelined,speedup"
        );
        assert_eq!(lines.len(), 1 + rows.len() + 2);
        assert_eq!(lines[3], "mean,min,max");
    }
}
