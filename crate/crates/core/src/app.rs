//! Character-level language model on the accelerator datapath: stacked
//! LSTM layers followed by a real-valued FC layer and softmax.
//!
//! Weight files are line-oriented text:
//!
//! ```text
//! ELSAW 1
//! lstm 1 <input_dim> <hidden_dim>
//! W_xi <rows> <cols>        (then <rows> lines of <cols> reals)
//! W_hi ... W_xo W_ho W_xf W_hf W_xc W_hc
//! b_i <len>                 (then one line of <len> reals)
//! b_o b_f b_c
//! lstm 2 ...
//! fc <rows> <cols>
//! b_fc <len>
//! ```
//!
//! Vocabulary files hold one character per line; `\n`, `\t`, `\\` and `\s`
//! (space) are escaped. The line index is the class index.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::fxp::{Fraction, WideValue, DEFAULT_GUARD_BITS};
use crate::oracle::FloatLayer;
use crate::sched::{Gate, LayerParams, LayerSim, LayerState, MvmCycles, Schedule};
use crate::units::{Arithmetic, FracMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn new(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (k, &c) in chars.iter().enumerate() {
            if index.insert(c, k).is_some() {
                return Err(Error::Format {
                    line: k + 1,
                    message: format!("duplicate vocabulary entry {c:?}"),
                });
            }
        }
        if chars.is_empty() {
            return Err(Error::Format {
                line: 0,
                message: "empty vocabulary".into(),
            });
        }
        Ok(Self { chars, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut chars = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let c = match line {
                "\\n" => '\n',
                "\\t" => '\t',
                "\\\\" => '\\',
                "\\s" => ' ',
                _ => {
                    let mut it = line.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(Error::Format {
                                line: k + 1,
                                message: format!("expected one character, got {line:?}"),
                            })
                        }
                    }
                }
            };
            chars.push(c);
        }
        Self::new(chars)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`Vocab::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &c in &self.chars {
            match c {
                '\n' => s.push_str("\\n"),
                '\t' => s.push_str("\\t"),
                '\\' => s.push_str("\\\\"),
                ' ' => s.push_str("\\s"),
                _ => s.push(c),
            }
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(Error::UnknownChar(c))
    }

    pub fn char_at(&self, k: usize) -> char {
        self.chars[k]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index_of(c)).collect()
    }
}

/// Stacked LSTM layers plus a real FC layer of `V × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub vocab: Vocab,
    pub layers: Vec<LayerParams>,
    pub fc: Vec<Vec<f64>>,
    pub fc_bias: Vec<f64>,
    /// LSTM weights with magnitude ≥ 1 that were clamped on load.
    pub clamped_weights: usize,
}

impl NetworkSpec {
    pub fn new(
        vocab: Vocab,
        layers: Vec<LayerParams>,
        fc: Vec<Vec<f64>>,
        fc_bias: Vec<f64>,
    ) -> Result<Self> {
        let net = Self {
            vocab,
            layers,
            fc,
            fc_bias,
            clamped_weights: 0,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let v = self.vocab.len();
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("network has no LSTM layers".into()))?;
        if first.input_dim() != v {
            return Err(Error::DimensionMismatch(format!(
                "layer 1 input is {}, vocabulary has {v} entries",
                first.input_dim()
            )));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} input is {}, layer {} output is {}",
                    k + 2,
                    pair[1].input_dim(),
                    k + 1,
                    pair[0].hidden_dim()
                )));
            }
            if pair[1].bits() != pair[0].bits() {
                return Err(Error::WidthMismatch {
                    left: pair[0].bits(),
                    right: pair[1].bits(),
                });
            }
        }
        let n = self.hidden();
        if self.fc.len() != v || self.fc.iter().any(|r| r.len() != n) || self.fc_bias.len() != v {
            return Err(Error::DimensionMismatch(format!(
                "fc must be {v}x{n} with a bias of {v}"
            )));
        }
        Ok(())
    }

    pub fn bits(&self) -> u32 {
        self.layers[0].bits()
    }

    /// Width of the last LSTM layer.
    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_dim())
    }

    /// Two layers (`V → N → N`) with weights uniform in `[-1/√N, 1/√N]`
    /// and an FC layer uniform in `[-1, 1]`.
    pub fn random(vocab: Vocab, hidden: usize, bits: u32, seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let v = vocab.len();
        let l1 = FloatLayer::random(v, hidden, &mut rng)
            .quantize(bits, DEFAULT_GUARD_BITS)
            .0;
        let l2 = FloatLayer::random(hidden, hidden, &mut rng)
            .quantize(bits, DEFAULT_GUARD_BITS)
            .0;
        let fc = (0..v)
            .map(|_| (0..hidden).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let fc_bias = (0..v).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self::new(vocab, vec![l1, l2], fc, fc_bias).expect("random network dimensions chain")
    }
}

const MATRIX_ORDER: [(char, Gate); 8] = [
    ('x', Gate::Input),
    ('h', Gate::Input),
    ('x', Gate::Output),
    ('h', Gate::Output),
    ('x', Gate::Forget),
    ('h', Gate::Forget),
    ('x', Gate::Cell),
    ('h', Gate::Cell),
];

struct Lines<'a> {
    it: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(k, l)| (k + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self {
            it: it.peekable(),
            last: 0,
        }
    }

    fn err(line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.it.next() {
            Some((k, l)) => {
                self.last = k;
                Ok((k, l))
            }
            None => Err(Self::err(
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn peek_starts_with(&mut self, word: &str) -> bool {
        self.it
            .peek()
            .is_some_and(|(_, l)| l.split_whitespace().next() == Some(word))
    }

    /// A `<name> <dims...>` header.
    fn header(&mut self, name: &str, dims: usize) -> Result<(usize, Vec<usize>)> {
        let (k, l) = self.next(name)?;
        let mut toks = l.split_whitespace();
        if toks.next() != Some(name) {
            return Err(Self::err(k, format!("expected `{name}` header, got {l:?}")));
        }
        let vals = toks
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Self::err(k, format!("bad dimension {t:?} in `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != dims {
            return Err(Self::err(k, format!("`{name}` needs {dims} dimensions")));
        }
        Ok((k, vals))
    }

    fn reals(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (k, l) = self.next(name)?;
        let vals = l
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Self::err(k, format!("bad number {t:?} in `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(Self::err(
                k,
                format!("`{name}` row has {} values, expected {len}", vals.len()),
            ));
        }
        Ok(vals)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
        let (k, dims) = self.header(name, 2)?;
        if dims != [rows, cols] {
            return Err(Self::err(
                k,
                format!(
                    "`{name}` is {}x{}, expected {rows}x{cols}",
                    dims[0], dims[1]
                ),
            ));
        }
        (0..rows).map(|_| self.reals(name, cols)).collect()
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (k, dims) = self.header(name, 1)?;
        if dims[0] != len {
            return Err(Self::err(
                k,
                format!("`{name}` has length {}, expected {len}", dims[0]),
            ));
        }
        self.reals(name, len)
    }
}

/// Parsed weight file with LSTM weights quantized to `bits`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub layers: Vec<LayerParams>,
    pub fc: Vec<Vec<f64>>,
    pub fc_bias: Vec<f64>,
    pub clamped: usize,
}

pub fn parse_weights(text: &str, bits: u32) -> Result<WeightFile> {
    if !(crate::fxp::MIN_BITS..=crate::fxp::MAX_BITS).contains(&bits) {
        return Err(Error::InvalidArgument(format!("unsupported width {bits}")));
    }
    let mut lines = Lines::new(text);
    let (k, magic) = lines.next("header")?;
    match magic.split_whitespace().collect::<Vec<_>>()[..] {
        ["ELSAW", "1"] => {}
        ["ELSAW", v] => return Err(Error::Version(v.to_string())),
        _ => {
            return Err(Lines::err(
                k,
                format!("missing `ELSAW 1` header, got {magic:?}"),
            ))
        }
    }
    let mut layers = Vec::new();
    let mut clamped = 0;
    let mut prev_hidden = None;
    while lines.peek_starts_with("lstm") {
        let (k, dims) = lines.header("lstm", 3)?;
        let (index, m, n) = (dims[0], dims[1], dims[2]);
        if index != layers.len() + 1 {
            return Err(Lines::err(
                k,
                format!("expected lstm layer {}, got {index}", layers.len() + 1),
            ));
        }
        if prev_hidden.is_some_and(|p| p != m) {
            return Err(Lines::err(
                k,
                format!("layer {index} input {m} does not match previous output"),
            ));
        }
        if n == 0 || m == 0 {
            return Err(Lines::err(k, "layer dimensions must be positive"));
        }
        let mut w_x: [FracMatrix; 4] = std::array::from_fn(|_| FracMatrix::zeros(n, m, bits));
        let mut w_h: [FracMatrix; 4] = std::array::from_fn(|_| FracMatrix::zeros(n, n, bits));
        for (side, gate) in MATRIX_ORDER {
            let name = format!("W_{side}{}", gate.suffix());
            let cols = if side == 'x' { m } else { n };
            let (fm, c) = FracMatrix::quantize(&lines.matrix(&name, n, cols)?, bits)?;
            clamped += c;
            if side == 'x' {
                w_x[gate.index()] = fm;
            } else {
                w_h[gate.index()] = fm;
            }
        }
        let mut bias: [Vec<WideValue>; 4] = Default::default();
        for gate in Gate::ALL {
            let b = lines.vector(&format!("b_{}", gate.suffix()), n)?;
            bias[gate.index()] = b
                .iter()
                .map(|&v| WideValue::quantize(v, bits, DEFAULT_GUARD_BITS))
                .collect();
        }
        layers.push(LayerParams::new(w_x, w_h, bias)?);
        prev_hidden = Some(n);
    }
    let Some(n) = prev_hidden else {
        return Err(Lines::err(
            lines.last + 1,
            "expected at least one `lstm` layer",
        ));
    };
    let (k, dims) = lines.header("fc", 2)?;
    if dims[1] != n {
        return Err(Lines::err(
            k,
            format!("`fc` has {} columns, expected {n}", dims[1]),
        ));
    }
    let fc = (0..dims[0])
        .map(|_| lines.reals("fc", n))
        .collect::<Result<Vec<_>>>()?;
    let fc_bias = lines.vector("b_fc", dims[0])?;
    if let Ok((k, l)) = lines.next("") {
        return Err(Lines::err(k, format!("trailing content {l:?}")));
    }
    Ok(WeightFile {
        layers,
        fc,
        fc_bias,
        clamped,
    })
}

/// Serializes a network in the format [`parse_weights`] reads.
pub fn export_weights(net: &NetworkSpec) -> String {
    let mut s = String::from("ELSAW 1\n");
    let row = |s: &mut String, vals: &mut dyn Iterator<Item = f64>| {
        let parts: Vec<String> = vals.map(|v| v.to_string()).collect();
        s.push_str(&parts.join(" "));
        s.push('\n');
    };
    for (k, l) in net.layers.iter().enumerate() {
        let _ = writeln!(s, "lstm {} {} {}", k + 1, l.input_dim(), l.hidden_dim());
        for (side, gate) in MATRIX_ORDER {
            let m = if side == 'x' {
                &l.w_x[gate.index()]
            } else {
                &l.w_h[gate.index()]
            };
            let _ = writeln!(s, "W_{side}{} {} {}", gate.suffix(), m.rows(), m.cols());
            for r in 0..m.rows() {
                row(&mut s, &mut m.row(r).map(Fraction::to_real));
            }
        }
        for gate in Gate::ALL {
            let b = &l.bias[gate.index()];
            let _ = writeln!(s, "b_{} {}", gate.suffix(), b.len());
            row(&mut s, &mut b.iter().map(|v| v.to_real()));
        }
    }
    let _ = writeln!(s, "fc {} {}", net.fc.len(), net.hidden());
    for r in &net.fc {
        row(&mut s, &mut r.iter().copied());
    }
    let _ = writeln!(s, "b_fc {}", net.fc_bias.len());
    row(&mut s, &mut net.fc_bias.iter().copied());
    s
}

pub fn load_network(weights: &Path, vocab: &Path, bits: u32) -> Result<NetworkSpec> {
    let vocab = Vocab::load(vocab)?;
    let w = parse_weights(&std::fs::read_to_string(weights)?, bits)?;
    if w.clamped > 0 {
        log::warn!(
            "{} LSTM weights with magnitude >= 1 were clamped",
            w.clamped
        );
    }
    let mut net = NetworkSpec::new(vocab, w.layers, w.fc, w.fc_bias)?;
    net.clamped_weights = w.clamped;
    Ok(net)
}

/// Softmax with the maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mutable inference state: one simulator and one [`LayerState`] per layer.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    net: &'a NetworkSpec,
    sims: Vec<LayerSim>,
    pub states: Vec<LayerState>,
    /// MVM cycles of each layer in the most recent step.
    pub last_mvm_cycles: Vec<MvmCycles>,
}

impl<'a> Session<'a> {
    pub fn new(net: &'a NetworkSpec) -> Self {
        let bits = net.bits();
        Self {
            net,
            sims: net
                .layers
                .iter()
                .map(|l| LayerSim::new(l, Arithmetic::Approximate))
                .collect(),
            states: net
                .layers
                .iter()
                .map(|l| LayerState::zeros(l.hidden_dim(), bits))
                .collect(),
            last_mvm_cycles: vec![MvmCycles::default(); net.layers.len()],
        }
    }

    /// Feeds one character and returns the next-character logits.
    pub fn step(&mut self, index: usize) -> Result<Vec<f64>> {
        let (v, bits) = (self.net.vocab.len(), self.net.bits());
        if index >= v {
            return Err(Error::InvalidArgument(format!(
                "class {index} out of range for {v} entries"
            )));
        }
        let mut x = vec![Fraction::zero(bits); v];
        x[index] = Fraction::max(bits);
        for (k, sim) in self.sims.iter_mut().enumerate() {
            let run = sim.run(
                std::slice::from_ref(&x),
                &self.states[k],
                Schedule::Pipelined,
            )?;
            let mut st = run.states.into_iter().next().expect("one step");
            st.t = self.states[k].t + 1;
            x = st.h.clone();
            self.states[k] = st;
            self.last_mvm_cycles[k] = run.mvm_cycles;
        }
        let h: Vec<f64> = x.iter().map(|v| v.to_real()).collect();
        Ok(self
            .net
            .fc
            .iter()
            .zip(&self.net.fc_bias)
            .map(|(row, b)| row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }
}

/// One step from explicit states; returns the logits and the new states.
pub fn forward_step(
    net: &NetworkSpec,
    states: &[LayerState],
    index: usize,
) -> Result<(Vec<f64>, Vec<LayerState>)> {
    let mut s = Session::new(net);
    if states.len() != s.states.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} layer states for {} layers",
            states.len(),
            s.states.len()
        )));
    }
    s.states = states.to_vec();
    let logits = s.step(index)?;
    Ok((logits, s.states))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub prime: String,
    pub length: usize,
    pub top_k: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            prime: String::new(),
            length: 0,
            top_k: 1,
            seed: 0,
            temperature: 1.0,
        }
    }
}

/// Draws from `softmax(logits / temperature)` restricted to the `k` largest
/// logits (ties broken by lower index).
pub fn sample_top_k(logits: &[f64], k: usize, temperature: f64, rng: &mut impl Rng) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let scaled: Vec<f64> = order.iter().map(|&i| logits[i] / temperature).collect();
    let p = softmax(&scaled);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (&i, &pi) in order.iter().zip(&p) {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    *order.last().expect("k >= 1")
}

/// Feeds the prime, then samples `length` characters.
pub fn generate(net: &NetworkSpec, cfg: &GenerationConfig) -> Result<String> {
    let v = net.vocab.len();
    if cfg.top_k == 0 || cfg.top_k > v {
        return Err(Error::InvalidArgument(format!(
            "top-k must be in 1..={v}, got {}",
            cfg.top_k
        )));
    }
    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    let prime = net.vocab.encode(&cfg.prime)?;
    if cfg.length == 0 {
        return Ok(String::new());
    }
    if prime.is_empty() {
        return Err(Error::InvalidArgument(
            "generation needs a non-empty prime".into(),
        ));
    }
    let mut rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut session = Session::new(net);
    let mut logits = Vec::new();
    for &c in &prime {
        logits = session.step(c)?;
    }
    let mut out = String::with_capacity(cfg.length);
    for k in 0..cfg.length {
        let c = sample_top_k(&logits, cfg.top_k, cfg.temperature, &mut rng);
        out.push(net.vocab.char_at(c));
        if k + 1 < cfg.length {
            logits = session.step(c)?;
        }
    }
    Ok(out)
}

/// Fraction of positions whose true next character is among the `k` highest
/// logits (counting only strictly higher logits against it).
pub fn topk_accuracy(net: &NetworkSpec, corpus: &str, k: usize) -> Result<f64> {
    let v = net.vocab.len();
    if k == 0 || k > v {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={v}, got {k}"
        )));
    }
    let ids = net.vocab.encode(corpus)?;
    if ids.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let mut session = Session::new(net);
    let mut hits = 0usize;
    for pair in ids.windows(2) {
        let logits = session.step(pair[0])?;
        let target = logits[pair[1]];
        if logits.iter().filter(|&&l| l > target).count() < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / (ids.len() - 1) as f64)
}
