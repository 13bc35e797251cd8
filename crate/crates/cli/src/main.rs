use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elsa_core::app::{self, GenerationConfig};
use elsa_core::fxp::{Fraction, DEFAULT_GUARD_BITS};
use elsa_core::oracle;
use elsa_core::perf::{self, PerfConfig};
use elsa_core::sched::{LayerParams, LayerSim, LayerState, Schedule};
use elsa_core::units::Arithmetic;
use elsa_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "elsa",
    version,
    about = "Stream-multiplier LSTM accelerator model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate every operand pair and check the multiplier error bound.
    AmCheck {
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=12))]
        bits: u32,
        /// Closed-form products only (no stepped run, no fast/original comparison).
        #[arg(long)]
        fast: bool,
    },
    /// Run one layer through the scheduler and print cycle totals.
    Sim {
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..=16))]
        bits: u32,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        hidden: u64,
        /// Defaults to the hidden size.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        input_dim: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        timesteps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_pipeline: bool,
        /// Zero weights, biases and inputs.
        #[arg(long)]
        zero_weights: bool,
        /// Write the per-state cycle trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Pipelined vs non-pipelined speedup over a configuration grid.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "8,12,16",
              value_parser = clap::value_parser!(u32).range(2..=16))]
        bits: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256",
              value_parser = clap::value_parser!(u64).range(1..))]
        hidden: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000",
              value_parser = clap::value_parser!(u64).range(1..))]
        timesteps: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drift against the float model and relative error against exact arithmetic.
    Accuracy {
        #[arg(long, value_delimiter = ',', default_value = "5,6,8,12,16",
              value_parser = clap::value_parser!(u32).range(3..=16))]
        bits_list: Vec<u32>,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        timesteps: u64,
        #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
        hidden: u64,
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `mse_<bits>.csv` and `relerr_<bits>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate text with a trained character model.
    Generate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "")]
        prime: String,
        #[arg(long, default_value_t = 100)]
        length: usize,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        top_k: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..=16))]
        bits: u32,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_verification_failure() {
            Failure::Verification(e.to_string())
        } else if matches!(e, Error::InvalidArgument(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn am_check(out: &mut impl Write, bits: u32, fast: bool) -> Outcome {
    let scan = if fast {
        oracle::closed_form_am_scan(bits)?
    } else {
        if bits > 10 {
            return Err(Failure::Usage(
                "stepped check supports at most 10 bits; use --fast".into(),
            ));
        }
        oracle::exhaustive_am_scan(bits)?
    };
    let bound = oracle::am_error_bound(bits);
    let (x, w) = scan.worst;
    writeln!(
        out,
        "bits={bits} pairs={} max_error={} worst_x={}/{} worst_w={}/{} bound={bound}",
        scan.pairs,
        scan.max_error,
        x.numerator(),
        x.scale(),
        w.numerator(),
        w.scale()
    )?;
    oracle::check_bound(scan)?;
    writeln!(out, "max_error ≤ {bound}")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sim(
    out: &mut impl Write,
    bits: u32,
    hidden: usize,
    input_dim: usize,
    timesteps: usize,
    seed: u64,
    no_pipeline: bool,
    zero: bool,
    trace: Option<&Path>,
) -> Outcome {
    let (params, inputs) = if zero {
        (
            LayerParams::zeros(input_dim, hidden, bits, DEFAULT_GUARD_BITS),
            vec![vec![Fraction::zero(bits); input_dim]; timesteps],
        )
    } else {
        perf::seeded_instance(bits, input_dim, hidden, timesteps, seed)
    };
    let schedule = if no_pipeline {
        Schedule::NonPipelined
    } else {
        Schedule::Pipelined
    };
    let run = LayerSim::new(&params, Arithmetic::Approximate).run(
        &inputs,
        &LayerState::zeros(hidden, bits),
        schedule,
    )?;
    let name = if no_pipeline {
        "non-pipelined"
    } else {
        "pipelined"
    };
    writeln!(out, "schedule={name}")?;
    writeln!(out, "total_cycles={}", run.trace.total_cycles)?;
    writeln!(out, "model_window_cycles={}", run.trace.model_window_cycles)?;
    if let Some(path) = trace {
        run.trace.write_csv(create(path)?)?;
    }
    if input_dim == hidden {
        let model = if no_pipeline {
            perf::eval_nonpipelined(&run.magnitudes)?
        } else {
            perf::eval_pipelined(&run.magnitudes)?
        };
        writeln!(out, "model_cycles={model}")?;
        if model != run.trace.model_window_cycles {
            return Err(Failure::Verification(format!(
                "simulator {} != model {model}",
                run.trace.model_window_cycles
            )));
        }
    }
    Ok(())
}

fn sweep(
    out: &mut impl Write,
    bits: &[u32],
    hidden: &[usize],
    timesteps: &[usize],
    seed: u64,
    path: Option<&Path>,
) -> Outcome {
    let grid = PerfConfig::grid(bits, hidden, timesteps, seed);
    let rows = perf::sweep(&grid)?;
    match path {
        Some(p) => perf::write_sweep_report(&rows, create(p)?)?,
        None => perf::write_sweep_report(&rows, &mut *out)?,
    }
    let s = perf::summarize(&rows);
    if path.is_some() {
        writeln!(
            out,
            "configs={} mean={:.4} min={:.4} max={:.4}",
            rows.len(),
            s.mean,
            s.min,
            s.max
        )?;
    }
    if let Some(bad) = rows.iter().find(|r| !r.cross_validated()) {
        return Err(Failure::Verification(format!(
            "cross-validation mismatch at bits={} hidden={} timesteps={}",
            bad.config.bits, bad.config.hidden, bad.config.timesteps
        )));
    }
    Ok(())
}

fn accuracy(
    out: &mut impl Write,
    bits_list: &[u32],
    timesteps: usize,
    hidden: usize,
    samples: usize,
    seed: u64,
    dir: Option<&Path>,
) -> Outcome {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Failure::Data(format!("{}: {e}", d.display())))?;
    }
    writeln!(
        out,
        "bits,mean_mse_h,slope_h,flat_h,mean_mse_c,slope_c,multiply,mac,layer,mac_accuracy"
    )?;
    for &bits in bits_list {
        let drift = oracle::drift_run(bits, hidden, timesteps, seed)?;
        let suite = oracle::relative_error_suite(bits, samples, seed)?;
        if let Some(d) = dir {
            oracle::write_mse_csv(&drift, create(&d.join(format!("mse_{bits}.csv")))?)?;
            oracle::write_suite_csv(&suite, create(&d.join(format!("relerr_{bits}.csv")))?)?;
        }
        writeln!(
            out,
            "{bits},{:.6e},{:.6e},{},{:.6e},{:.6e},{:.6},{:.6},{:.6},{:.6}",
            drift.h.mean,
            drift.h.slope,
            drift.h.is_flat(),
            drift.c.mean,
            drift.c.slope,
            suite[0].mean,
            suite[1].mean,
            suite[2].mean,
            1.0 - suite[1].mean
        )?;
    }
    Ok(())
}

fn run(cli: Cli, out: &mut impl Write) -> Outcome {
    match cli.command {
        Command::AmCheck { bits, fast } => am_check(out, bits, fast),
        Command::Sim {
            bits,
            hidden,
            input_dim,
            timesteps,
            seed,
            no_pipeline,
            zero_weights,
            trace,
        } => sim(
            out,
            bits,
            hidden as usize,
            input_dim.unwrap_or(hidden) as usize,
            timesteps as usize,
            seed,
            no_pipeline,
            zero_weights,
            trace.as_deref(),
        ),
        Command::Sweep {
            bits,
            hidden,
            timesteps,
            seed,
            out: path,
        } => {
            let hidden: Vec<usize> = hidden.iter().map(|&h| h as usize).collect();
            let timesteps: Vec<usize> = timesteps.iter().map(|&t| t as usize).collect();
            sweep(out, &bits, &hidden, &timesteps, seed, path.as_deref())
        }
        Command::Accuracy {
            bits_list,
            timesteps,
            hidden,
            samples,
            seed,
            out: dir,
        } => accuracy(
            out,
            &bits_list,
            timesteps as usize,
            hidden as usize,
            samples as usize,
            seed,
            dir.as_deref(),
        ),
        Command::Generate {
            weights,
            vocab,
            prime,
            length,
            top_k,
            seed,
            temperature,
            bits,
        } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Failure::Usage(format!(
                    "--temperature must be positive, got {temperature}"
                )));
            }
            let net = app::load_network(&weights, &vocab, bits)?;
            let cfg = GenerationConfig {
                prime,
                length,
                top_k: top_k as usize,
                seed,
                temperature,
            };
            let text = app::generate(&net, &cfg)?;
            writeln!(out, "{}{text}", cfg.prime)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = run(cli, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}
