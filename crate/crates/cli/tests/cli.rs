use std::path::Path;
use std::process::{Command, Output};

use elsa_core::app::{self, NetworkSpec, Vocab};

fn elsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elsa"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&elsa(&[])), 1);
    assert_eq!(code(&elsa(&["bogus"])), 1);
    assert_eq!(
        code(&elsa(&[
            "sim",
            "--hidden",
            "2",
            "--timesteps",
            "2",
            "--frobnicate"
        ])),
        1
    );
    assert_eq!(code(&elsa(&["am-check", "--bits", "40"])), 1);
    assert_eq!(code(&elsa(&["am-check", "--bits", "11"])), 1);
    assert_eq!(code(&elsa(&["sweep", "--bits", "8,x"])), 1);
}

#[test]
fn help_exits_0() {
    for sub in ["am-check", "sim", "sweep", "accuracy", "generate"] {
        let o = elsa(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn am_check_reports_measured_maximum() {
    let o = elsa(&["am-check", "--bits", "4"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("max_error=0.21875"), "{}", stdout(&o));
    let fast = elsa(&["am-check", "--bits", "4", "--fast"]);
    assert_eq!(code(&fast), 3);
    assert!(stdout(&fast).contains("max_error=0.21875"));
}

#[test]
fn sim_zero_instance() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = elsa(&[
        "sim",
        "--bits",
        "8",
        "--hidden",
        "1",
        "--timesteps",
        "1",
        "--zero-weights",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    // CS2 + CS6, plus the EMA and EM at HSig(0) = 1/2.
    assert!(out.contains("total_cycles=98"), "{out}");
    assert!(out.contains("model_window_cycles=0"));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(
        csv,
        "state,t,j,cycles\nCS1,1,0,0\nCS2,1,1,1\nCS3,1,1,64\nCS6,1,1,1\nCS7,1,1,32\n"
    );
}

#[test]
fn sim_is_deterministic_and_cross_checked() {
    let args = [
        "sim",
        "--bits",
        "6",
        "--hidden",
        "5",
        "--timesteps",
        "8",
        "--seed",
        "4",
    ];
    let a = elsa(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, elsa(&args).stdout);
    assert!(stdout(&a).contains("model_cycles="));
    let np = elsa(&[&args[..], &["--no-pipeline"]].concat());
    assert_eq!(code(&np), 0);
    let ragged = elsa(&[
        "sim",
        "--hidden",
        "3",
        "--input-dim",
        "5",
        "--timesteps",
        "3",
    ]);
    assert_eq!(code(&ragged), 0);
    assert!(!stdout(&ragged).contains("model_cycles"));
}

#[test]
fn sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let p = path.to_str().unwrap();
    let args = [
        "sweep",
        "--bits",
        "8,12",
        "--hidden",
        "4",
        "--timesteps",
        "5,9",
        "--seed",
        "3",
        "--out",
        p,
    ];
    assert_eq!(code(&elsa(&args)), 0);
    let first = std::fs::read_to_string(&path).unwrap();
    assert_eq!(code(&elsa(&args)), 0);
    assert_eq!(first, std::fs::read_to_string(&path).unwrap());
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[0].starts_with("bits,hidden,timesteps,seed,"));
    assert_eq!(lines[5], "mean,min,max");
    // Without --out the report goes to stdout.
    let o = elsa(&args[..args.len() - 2]);
    assert_eq!(stdout(&o), first);
}

#[test]
fn accuracy_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("acc");
    let o = elsa(&[
        "accuracy",
        "--bits-list",
        "5,8",
        "--timesteps",
        "40",
        "--hidden",
        "6",
        "--samples",
        "500",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 3);
    let mse = std::fs::read_to_string(out.join("mse_8.csv")).unwrap();
    assert!(mse.starts_with("t,mse_h,mse_c\n"));
    assert_eq!(mse.lines().count(), 41);
    let rel = std::fs::read_to_string(out.join("relerr_5.csv")).unwrap();
    assert!(rel.starts_with("level,mean_rel_err,std_rel_err\nmultiply,"));
}

fn write_model(dir: &Path) -> (String, String) {
    let vocab = Vocab::new("abcd \n".chars().collect()).unwrap();
    let net = NetworkSpec::random(vocab, 6, 8, 9);
    let (w, v) = (dir.join("w.txt"), dir.join("v.txt"));
    std::fs::write(&w, app::export_weights(&net)).unwrap();
    std::fs::write(&v, net.vocab.to_text()).unwrap();
    (w.to_str().unwrap().into(), v.to_str().unwrap().into())
}

#[test]
fn generate_text() {
    let dir = tempfile::tempdir().unwrap();
    let (w, v) = write_model(dir.path());
    let args = [
        "generate",
        "--weights",
        &w,
        "--vocab",
        &v,
        "--prime",
        "ab",
        "--length",
        "30",
        "--top-k",
        "3",
        "--seed",
        "5",
    ];
    let o = elsa(&args);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("ab"));
    assert_eq!(text.chars().count(), 2 + 30 + 1);
    assert_eq!(elsa(&args).stdout, o.stdout);
}

#[test]
fn generate_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (w, v) = write_model(dir.path());
    let missing = dir.path().join("nope").to_str().unwrap().to_string();
    assert_eq!(
        code(&elsa(&[
            "generate",
            "--weights",
            &missing,
            "--vocab",
            &v,
            "--prime",
            "a"
        ])),
        2
    );
    assert_eq!(
        code(&elsa(&[
            "generate",
            "--weights",
            &w,
            "--vocab",
            &v,
            "--prime",
            "az"
        ])),
        2
    );
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "ELSAW 2\n").unwrap();
    assert_eq!(
        code(&elsa(&[
            "generate",
            "--weights",
            bad.to_str().unwrap(),
            "--vocab",
            &v,
            "--prime",
            "a"
        ])),
        2
    );
    assert_eq!(
        code(&elsa(&[
            "generate",
            "--weights",
            &w,
            "--vocab",
            &v,
            "--prime",
            "a",
            "--temperature",
            "0"
        ])),
        1
    );
    assert_eq!(
        code(&elsa(&[
            "generate",
            "--weights",
            &w,
            "--vocab",
            &v,
            "--prime",
            "a",
            "--top-k",
            "9"
        ])),
        1
    );
}
