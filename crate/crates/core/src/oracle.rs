//! Reference models and error metrics.
//!
//! Nothing here shares code with the accelerator datapath except the
//! number types and the hard activations: the float model uses true
//! sigmoid/tanh, the exact fixed-point model is a plain loop with a
//! truncating multiplier.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::am;
use crate::fxp::{Fraction, WideValue, DEFAULT_GUARD_BITS};
use crate::sched::{Gate, LayerParams, LayerSim, LayerState, Schedule};
use crate::units::{self, Arithmetic, FracMatrix};
use crate::{Error, Result};

/// Real-valued layer with the same shapes and gate order as [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub input_dim: usize,
    pub hidden: usize,
    /// `N × M` per gate.
    pub w_x: [Vec<Vec<f64>>; 4],
    /// `N × N` per gate.
    pub w_h: [Vec<Vec<f64>>; 4],
    pub bias: [Vec<f64>; 4],
}

impl FloatLayer {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_x: std::array::from_fn(|_| vec![vec![0.0; input_dim]; hidden]),
            w_h: std::array::from_fn(|_| vec![vec![0.0; hidden]; hidden]),
            bias: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    /// Weights and biases uniform in `[-1/√N, 1/√N]`.
    pub fn random(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (hidden as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-a..=a)).collect())
                .collect()
        };
        let w_x = std::array::from_fn(|_| mat(hidden, input_dim));
        let w_h = std::array::from_fn(|_| mat(hidden, hidden));
        let bias = std::array::from_fn(|_| mat(1, hidden).remove(0));
        Self {
            input_dim,
            hidden,
            w_x,
            w_h,
            bias,
        }
    }

    /// Rounds to `bits`; returns the layer and how many weights were clamped.
    pub fn quantize(&self, bits: u32, guard: u32) -> (LayerParams, usize) {
        let mut clamped = 0;
        let mut q = |m: &Vec<Vec<f64>>| {
            let (fm, c) = FracMatrix::quantize(m, bits).expect("rectangular matrix");
            clamped += c;
            fm
        };
        let w_x = std::array::from_fn(|g| q(&self.w_x[g]));
        let w_h = std::array::from_fn(|g| q(&self.w_h[g]));
        let bias = std::array::from_fn(|g| {
            self.bias[g]
                .iter()
                .map(|&b| WideValue::quantize(b, bits, guard))
                .collect()
        });
        let params = LayerParams::new(w_x, w_h, bias).expect("shapes follow the float layer");
        (params, clamped)
    }

    /// The real values a quantized layer represents.
    pub fn from_params(p: &LayerParams) -> Self {
        Self {
            input_dim: p.input_dim(),
            hidden: p.hidden_dim(),
            w_x: std::array::from_fn(|g| p.w_x[g].to_reals()),
            w_h: std::array::from_fn(|g| p.w_h[g].to_reals()),
            bias: std::array::from_fn(|g| p.bias[g].iter().map(|b| b.to_real()).collect()),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Every intermediate of one float step, for invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatStep {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c_cand: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn float_lstm_step(layer: &FloatLayer, x: &[f64], h: &[f64], c: &[f64]) -> FloatStep {
    let pre = |g: Gate, r: usize| -> f64 {
        let k = g.index();
        let sx: f64 = layer.w_x[k][r].iter().zip(x).map(|(w, v)| w * v).sum();
        let sh: f64 = layer.w_h[k][r].iter().zip(h).map(|(w, v)| w * v).sum();
        sx + sh + layer.bias[k][r]
    };
    let n = layer.hidden;
    let i: Vec<f64> = (0..n).map(|r| sigmoid(pre(Gate::Input, r))).collect();
    let f: Vec<f64> = (0..n).map(|r| sigmoid(pre(Gate::Forget, r))).collect();
    let o: Vec<f64> = (0..n).map(|r| sigmoid(pre(Gate::Output, r))).collect();
    let c_cand: Vec<f64> = (0..n).map(|r| pre(Gate::Cell, r).tanh()).collect();
    let c_new: Vec<f64> = (0..n).map(|r| i[r] * c_cand[r] + f[r] * c[r]).collect();
    let h_new = (0..n).map(|r| o[r] * c_new[r].tanh()).collect();
    FloatStep {
        i,
        f,
        o,
        c_cand,
        c: c_new,
        h: h_new,
    }
}

/// Hidden and memory states after each step (`h[t-1]`, `c[t-1]` for step `t`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FloatStates {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Runs `inputs.len()` steps from zero state.
pub fn float_lstm_run(layer: &FloatLayer, inputs: &[Vec<f64>]) -> FloatStates {
    let mut h = vec![0.0; layer.hidden];
    let mut c = vec![0.0; layer.hidden];
    let mut out = FloatStates::default();
    for x in inputs {
        let s = float_lstm_step(layer, x, &h, &c);
        h = s.h;
        c = s.c;
        out.h.push(h.clone());
        out.c.push(c.clone());
    }
    out
}

fn exact_mul(a: Fraction, b: Fraction) -> i64 {
    let bits = a.bits();
    let p = (a.numerator() as i64 * b.numerator() as i64) >> (bits - 1);
    p.clamp(
        Fraction::min(bits).numerator() as i64,
        Fraction::max(bits).numerator() as i64,
    )
}

/// The accelerator datapath with every multiplier exact (truncating).
pub fn exact_fxp_lstm_run(
    p: &LayerParams,
    inputs: &[Vec<Fraction>],
    init: &LayerState,
) -> Vec<LayerState> {
    let (bits, guard) = (p.bits(), p.guard());
    let wide = |v: i64| WideValue::saturating(v, bits, guard);
    let mut h = init.h.clone();
    let mut c = init.c.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for (t, x) in (1..).zip(inputs) {
        let mut pre: [Vec<WideValue>; 4] = Default::default();
        for (g, pre_g) in pre.iter_mut().enumerate() {
            for r in 0..p.hidden_dim() {
                let mut ax = wide(0);
                for (k, &xk) in x.iter().enumerate() {
                    ax = wide(ax.numerator() as i64 + exact_mul(xk, p.w_x[g].get(r, k)));
                }
                let mut ah = wide(0);
                for (k, &hk) in h.iter().enumerate() {
                    ah = wide(ah.numerator() as i64 + exact_mul(hk, p.w_h[g].get(r, k)));
                }
                let sum =
                    ax.numerator() as i64 + ah.numerator() as i64 + p.bias[g][r].numerator() as i64;
                pre_g.push(wide(sum));
            }
        }
        let mut h_new = Vec::with_capacity(h.len());
        let mut c_new = Vec::with_capacity(c.len());
        for j in 0..p.hidden_dim() {
            let i = units::hsig(pre[Gate::Input.index()][j]);
            let f = units::hsig(pre[Gate::Forget.index()][j]);
            let o = units::hsig(pre[Gate::Output.index()][j]);
            let cc = units::htanh(pre[Gate::Cell.index()][j]);
            let acc = wide(exact_mul(cc, i));
            let acc = wide(acc.numerator() as i64 + exact_mul(c[j], f));
            let cj = acc.narrow();
            let tanh_c = units::htanh(cj.widen(guard));
            h_new.push(Fraction::saturating(exact_mul(tanh_c, o), bits));
            c_new.push(cj);
        }
        h = h_new;
        c = c_new;
        out.push(LayerState {
            h: h.clone(),
            c: c.clone(),
            t,
        });
    }
    out
}

/// Stated worst-case multiplier error `n / 2^(n+1)`.
pub fn am_error_bound(bits: u32) -> f64 {
    bits as f64 / 2f64.powi(bits as i32 + 1)
}

/// Result of enumerating every operand pair at one width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmScan {
    pub bits: u32,
    pub max_error: f64,
    pub worst: (Fraction, Fraction),
    pub pairs: u64,
}

/// Enumerates all `(X, W)` pairs, checking that the accelerated multiplier
/// matches the original in value and takes `floor(cycles/2)`.
pub fn exhaustive_am_scan(bits: u32) -> Result<AmScan> {
    if !(crate::fxp::MIN_BITS..=10).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "exhaustive check supports 2..=10 bits, got {bits}"
        )));
    }
    let mut scan = AmScan {
        bits,
        max_error: -1.0,
        worst: (Fraction::zero(bits), Fraction::zero(bits)),
        pairs: 0,
    };
    for x in Fraction::all(bits) {
        for w in Fraction::all(bits) {
            let slow = am::am_multiply(x, w)?;
            let fast = am::am_multiply_fast(x, w)?;
            if fast.z != slow.z || fast.cycles != slow.cycles / 2 {
                return Err(Error::FastMismatch {
                    bits,
                    x: x.numerator(),
                    w: w.numerator(),
                });
            }
            let err = (slow.z.to_real() - x.to_real() * w.to_real()).abs();
            if err > scan.max_error {
                scan.max_error = err;
                scan.worst = (x, w);
            }
            scan.pairs += 1;
        }
    }
    Ok(scan)
}

/// Maximum error over all pairs using the closed-form product only; reaches
/// wider operands than the stepped scan.
pub fn closed_form_am_scan(bits: u32) -> Result<AmScan> {
    if !(crate::fxp::MIN_BITS..=12).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "closed-form check supports 2..=12 bits, got {bits}"
        )));
    }
    let mut scan = AmScan {
        bits,
        max_error: -1.0,
        worst: (Fraction::zero(bits), Fraction::zero(bits)),
        pairs: 0,
    };
    for w in Fraction::all(bits) {
        for x in Fraction::all(bits) {
            let err = (am::am_product(x, w).to_real() - x.to_real() * w.to_real()).abs();
            if err > scan.max_error {
                scan.max_error = err;
                scan.worst = (x, w);
            }
            scan.pairs += 1;
        }
    }
    Ok(scan)
}

/// Fails with the worst pair when `scan` exceeds `n / 2^(n+1)`.
pub fn check_bound(scan: AmScan) -> Result<AmScan> {
    let bound = am_error_bound(scan.bits);
    if scan.max_error > bound {
        let (x, w) = scan.worst;
        return Err(Error::BoundViolation {
            bits: scan.bits,
            x: x.numerator(),
            w: w.numerator(),
            error: scan.max_error,
            bound,
        });
    }
    Ok(scan)
}

/// [`exhaustive_am_scan`] plus the hard bound `n / 2^(n+1)`.
pub fn exhaustive_am_check(bits: u32) -> Result<AmScan> {
    check_bound(exhaustive_am_scan(bits)?)
}

/// Per-step MSE with its least-squares trend over `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub mse: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub mean: f64,
}

impl ErrorReport {
    /// `|slope|·T ≤ mean`: no systematic growth across the run.
    pub fn is_flat(&self) -> bool {
        self.slope.abs() * self.mse.len() as f64 <= self.mean
    }
}

/// Ordinary least squares of `y` against `t = 1..=len`.
pub fn linear_fit(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.is_empty() {
        return (0.0, 0.0);
    }
    let t_mean = (n + 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &v) in y.iter().enumerate() {
        let dt = (k + 1) as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, y_mean - slope * t_mean)
}

pub fn mse_series(approx: &[Vec<f64>], exact: &[Vec<f64>]) -> Result<ErrorReport> {
    if approx.len() != exact.len() {
        return Err(Error::LengthMismatch {
            left: approx.len(),
            right: exact.len(),
        });
    }
    let mut mse = Vec::with_capacity(approx.len());
    for (a, e) in approx.iter().zip(exact) {
        if a.len() != e.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: e.len(),
            });
        }
        let s: f64 = a.iter().zip(e).map(|(p, q)| (p - q) * (p - q)).sum();
        mse.push(if a.is_empty() {
            0.0
        } else {
            s / a.len() as f64
        });
    }
    let (slope, intercept) = linear_fit(&mse);
    let mean = if mse.is_empty() {
        0.0
    } else {
        mse.iter().sum::<f64>() / mse.len() as f64
    };
    Ok(ErrorReport {
        mse,
        slope,
        intercept,
        mean,
    })
}

/// MSE of `h` and `C` against the float model for one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRun {
    pub bits: u32,
    pub h: ErrorReport,
    pub c: ErrorReport,
}

/// Runs the approximate layer and the float model side by side on the same
/// random layer (`hidden × hidden`) and inputs uniform in `[-1, 1)`.
pub fn drift_run(bits: u32, hidden: usize, timesteps: usize, seed: u64) -> Result<DriftRun> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let layer = FloatLayer::random(hidden, hidden, &mut rng);
    let real_inputs: Vec<Vec<f64>> = (0..timesteps)
        .map(|_| (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let (params, _) = layer.quantize(bits, DEFAULT_GUARD_BITS);
    let inputs: Vec<Vec<Fraction>> = real_inputs
        .iter()
        .map(|x| x.iter().map(|&v| Fraction::quantize(v, bits)).collect())
        .collect();
    let run = LayerSim::new(&params, Arithmetic::Approximate).run(
        &inputs,
        &LayerState::zeros(hidden, bits),
        Schedule::Pipelined,
    )?;
    let reals = |f: fn(&LayerState) -> &Vec<Fraction>| -> Vec<Vec<f64>> {
        run.states
            .iter()
            .map(|s| f(s).iter().map(|v| v.to_real()).collect())
            .collect()
    };
    let float = float_lstm_run(&layer, &real_inputs);
    Ok(DriftRun {
        bits,
        h: mse_series(&reals(|s| &s.h), &float.h)?,
        c: mse_series(&reals(|s| &s.c), &float.c)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Multiply,
    Mac,
    Layer,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Multiply => "multiply",
            Level::Mac => "mac",
            Level::Layer => "layer",
        }
    }
}

/// Mean and standard deviation of relative error at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelError {
    pub level: Level,
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

/// Length of the dot products at the MAC level.
pub const MAC_LENGTH: usize = 100;

/// Hidden size of the layer-level experiment.
pub const LAYER_HIDDEN: usize = 32;

fn rel_err(approx: f64, exact: f64, eps: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(eps)
}

#[derive(Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn finish(&self, level: Level) -> LevelError {
        let n = self.n.max(1) as f64;
        let mean = self.sum / n;
        LevelError {
            level,
            mean,
            std: (self.sum_sq / n - mean * mean).max(0.0).sqrt(),
            samples: self.n,
        }
    }
}

fn random_fraction(bits: u32, rng: &mut impl Rng) -> Fraction {
    let half = 1i32 << (bits - 1);
    Fraction::saturating(rng.gen_range(-half..half) as i64, bits)
}

/// Single products on operands uniform over the representable values,
/// against the full-precision product.
pub fn multiply_error(bits: u32, samples: usize, seed: u64) -> LevelError {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let eps = 2f64.powi(-(bits as i32 - 1));
    let mut m = Moments::default();
    for _ in 0..samples {
        let (x, w) = (
            random_fraction(bits, &mut rng),
            random_fraction(bits, &mut rng),
        );
        m.push(rel_err(
            am::am_product(x, w).to_real(),
            x.to_real() * w.to_real(),
            eps,
        ));
    }
    m.finish(Level::Multiply)
}

/// Dot products of length [`MAC_LENGTH`] accumulated without saturation,
/// against the full-precision dot product.
pub fn mac_error(bits: u32, samples: usize, seed: u64) -> LevelError {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let eps = 2f64.powi(-(bits as i32 - 1));
    let mut m = Moments::default();
    for _ in 0..samples {
        let (mut approx, mut exact) = (0i64, 0f64);
        for _ in 0..MAC_LENGTH {
            let (x, w) = (
                random_fraction(bits, &mut rng),
                random_fraction(bits, &mut rng),
            );
            approx += am::am_product(x, w).numerator() as i64;
            exact += x.to_real() * w.to_real();
        }
        let scale = 2f64.powi(bits as i32 - 1);
        m.push(rel_err(approx as f64 / scale, exact, eps));
    }
    m.finish(Level::Mac)
}

/// Hidden states of the approximate layer against the exact fixed-point
/// layer on the same random instance; `samples` counts `h` elements.
pub fn layer_error(bits: u32, samples: usize, seed: u64) -> Result<LevelError> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = LAYER_HIDDEN;
    let steps = samples.div_ceil(n).max(1);
    let (params, _) = FloatLayer::random(n, n, &mut rng).quantize(bits, DEFAULT_GUARD_BITS);
    let inputs: Vec<Vec<Fraction>> = (0..steps)
        .map(|_| (0..n).map(|_| random_fraction(bits, &mut rng)).collect())
        .collect();
    let init = LayerState::zeros(n, bits);
    let approx =
        LayerSim::new(&params, Arithmetic::Approximate).run(&inputs, &init, Schedule::Pipelined)?;
    let exact = exact_fxp_lstm_run(&params, &inputs, &init);
    let eps = 2f64.powi(-(bits as i32 - 1));
    let mut m = Moments::default();
    for (a, e) in approx.states.iter().zip(&exact) {
        for (p, q) in a.h.iter().zip(&e.h) {
            m.push(rel_err(p.to_real(), q.to_real(), eps));
        }
    }
    Ok(m.finish(Level::Layer))
}

/// Relative error at the multiply, MAC and layer levels.
pub fn relative_error_suite(bits: u32, samples: usize, seed: u64) -> Result<Vec<LevelError>> {
    Ok(vec![
        multiply_error(bits, samples, seed),
        mac_error(bits, samples, seed.wrapping_add(1)),
        layer_error(bits, samples, seed.wrapping_add(2))?,
    ])
}

/// `1 − mean relative error` of the MAC level.
pub fn mac_accuracy(bits: u32, samples: usize, seed: u64) -> f64 {
    1.0 - mac_error(bits, samples, seed).mean
}

pub fn write_mse_csv<W: Write>(run: &DriftRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mse_h", "mse_c"])?;
    for (t, (h, c)) in run.h.mse.iter().zip(&run.c.mse).enumerate() {
        w.write_record([(t + 1).to_string(), format!("{h:.6e}"), format!("{c:.6e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_suite_csv<W: Write>(levels: &[LevelError], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "mean_rel_err", "std_rel_err"])?;
    for l in levels {
        w.write_record([
            l.level.name().to_string(),
            format!("{:.6}", l.mean),
            format!("{:.6}", l.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
