mod common;

use common::{random_cases, run_case};
use elsa_core::fxp::Fraction;
use elsa_core::oracle::exact_fxp_lstm_run;
use elsa_core::perf;
use elsa_core::sched::{LayerSim, LayerState, Schedule};
use elsa_core::units::Arithmetic;
use proptest::prelude::*;

#[test]
fn schedules_agree_on_values() {
    for c in random_cases(30, 21) {
        let p = run_case(&c, Schedule::Pipelined);
        let s = run_case(&c, Schedule::NonPipelined);
        assert_eq!(p.states, s.states, "{c:?}");
        assert!(
            p.trace.total_cycles < s.trace.total_cycles || c.timesteps < 2,
            "{c:?}"
        );
    }
}

#[test]
fn exact_datapath_matches_reference() {
    for c in random_cases(20, 22) {
        let (params, inputs) =
            perf::seeded_instance(c.bits, c.hidden, c.hidden, c.timesteps, c.seed);
        let init = LayerState::zeros(c.hidden, c.bits);
        let mut sim = LayerSim::new(&params, Arithmetic::Exact);
        let reference = exact_fxp_lstm_run(&params, &inputs, &init);
        for schedule in [Schedule::Pipelined, Schedule::NonPipelined] {
            assert_eq!(
                sim.run(&inputs, &init, schedule).unwrap().states,
                reference,
                "{c:?}"
            );
        }
    }
}

#[test]
fn arithmetic_does_not_change_timing_model() {
    // Exact multipliers keep the stream-length latencies, so the model and
    // the simulator still agree on the exact datapath's magnitudes.
    for c in random_cases(10, 23) {
        let (params, inputs) =
            perf::seeded_instance(c.bits, c.hidden, c.hidden, c.timesteps, c.seed);
        let init = LayerState::zeros(c.hidden, c.bits);
        let run = LayerSim::new(&params, Arithmetic::Exact)
            .run(&inputs, &init, Schedule::Pipelined)
            .unwrap();
        assert_eq!(
            run.trace.model_window_cycles,
            perf::eval_pipelined(&run.magnitudes).unwrap()
        );
    }
}

#[test]
fn non_zero_initial_state() {
    let (params, inputs) = perf::seeded_instance(8, 6, 6, 5, 4);
    let init = LayerState {
        h: (0..6)
            .map(|k| Fraction::new(k * 20 - 50, 8).unwrap())
            .collect(),
        c: (0..6)
            .map(|k| Fraction::new(60 - k * 25, 8).unwrap())
            .collect(),
        t: 0,
    };
    let mut sim = LayerSim::new(&params, Arithmetic::Exact);
    let p = sim.run(&inputs, &init, Schedule::Pipelined).unwrap();
    let s = sim.run(&inputs, &init, Schedule::NonPipelined).unwrap();
    assert_eq!(p.states, s.states);
    assert_eq!(p.states, exact_fxp_lstm_run(&params, &inputs, &init));
    assert_eq!(
        p.trace.model_window_cycles,
        perf::eval_pipelined(&p.magnitudes).unwrap()
    );
    assert_eq!(
        s.trace.model_window_cycles,
        perf::eval_nonpipelined(&s.magnitudes).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn separation_and_cross_validation(bits in 3u32..=12, n in 1usize..=8, t in 1usize..=6, seed: u64) {
        let c = common::Case { bits, hidden: n, timesteps: t, seed };
        let p = run_case(&c, Schedule::Pipelined);
        let s = run_case(&c, Schedule::NonPipelined);
        prop_assert_eq!(&p.states, &s.states);
        prop_assert_eq!(p.trace.model_window_cycles, perf::eval_pipelined(&p.magnitudes).unwrap());
        prop_assert_eq!(s.trace.model_window_cycles, perf::eval_nonpipelined(&s.magnitudes).unwrap());
        prop_assert!(p.trace.model_window_cycles <= s.trace.model_window_cycles);
    }
}
