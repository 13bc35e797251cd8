#![allow(dead_code)]

use elsa_core::fxp::{Fraction, WideValue};
use elsa_core::perf::{self, MagnitudeTrace};
use elsa_core::sched::{Gate, LayerParams, LayerSim, LayerState, Run, Schedule};
use elsa_core::units::{Arithmetic, FracMatrix};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// A random square instance of the cross-validation family.
#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub bits: u32,
    pub hidden: usize,
    pub timesteps: usize,
    pub seed: u64,
}

/// `count` cases with bits in 4..=12, N in 1..=32, T in 2..=20.
pub fn random_cases(count: usize, seed: u64) -> Vec<Case> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count)
        .map(|_| Case {
            bits: rng.gen_range(4..=12),
            hidden: rng.gen_range(1..=32),
            timesteps: rng.gen_range(2..=20),
            seed: rng.gen(),
        })
        .collect()
}

pub fn run_case(c: &Case, schedule: Schedule) -> Run {
    let (params, inputs) = perf::seeded_instance(c.bits, c.hidden, c.hidden, c.timesteps, c.seed);
    LayerSim::new(&params, Arithmetic::Approximate)
        .run(&inputs, &LayerState::zeros(c.hidden, c.bits), schedule)
        .unwrap()
}

fn scalar(num: i32) -> FracMatrix {
    FracMatrix::from_rows(&[vec![Fraction::new(num, 8).unwrap()]], 8).unwrap()
}

/// Single-node, 8-bit layer with `x = [x1, x2]` and weights chosen so the
/// second step sees |x| = 10, |h_1| = 6, |i| = 4, |f| = 8, |o| = 5.
pub fn tiny_instance() -> (LayerParams, Vec<Vec<Fraction>>, Run) {
    let inputs = vec![
        vec![Fraction::new(127, 8).unwrap()],
        vec![Fraction::new(10, 8).unwrap()],
    ];
    let init = LayerState::zeros(1, 8);
    for b_i in -260..=-230 {
        for wx_o in 40..=127 {
            for b_o in -280..=-180 {
                let mut wx: [FracMatrix; 4] = std::array::from_fn(|_| scalar(0));
                wx[Gate::Input.index()] = scalar(127);
                wx[Gate::Output.index()] = scalar(wx_o);
                let wh: [FracMatrix; 4] = std::array::from_fn(|_| scalar(0));
                let mut b = [b_i, b_o, -224, 127];
                // Same order as `Gate::ALL`.
                let bias = std::array::from_fn(|g| {
                    vec![WideValue::new(std::mem::take(&mut b[g]), 8, 3).unwrap()]
                });
                let params = LayerParams::new(wx, wh, bias).unwrap();
                let run = LayerSim::new(&params, Arithmetic::Approximate)
                    .run(&inputs, &init, Schedule::Pipelined)
                    .unwrap();
                let m = &run.magnitudes;
                if (m.mx(2, 1), m.mh(1, 1), m.mi(2, 1), m.mf(2, 1), m.mo(2, 1)) == (10, 6, 4, 8, 5)
                {
                    return (params, inputs, run);
                }
            }
        }
    }
    panic!("no single-node instance reaches the target magnitudes");
}

/// The worked magnitudes written directly into a trace.
pub fn tiny_trace() -> MagnitudeTrace {
    let mut m = MagnitudeTrace::new(8, 2, 1, 1);
    m.set_mx(2, 1, 10);
    m.set_mh(1, 1, 6);
    m.set_mi(2, 1, 4);
    m.set_mf(2, 1, 8);
    m.set_mo(2, 1, 5);
    m
}
