use std::path::Path;
use std::process::Command;

use stagecp::synth::{generate, ScenarioKind, ScenarioSpec};
use stagecp::{
    AbstentionPolicy, PredictionInterval, ResidualComponents, Seed, StepRecord, TripletPoint, TwoStageModel,
    TwoStagePipeline,
};
use stagecp_harness::config::Schema;
use stagecp_harness::experiment::{run_experiment, sweep, SweepParam};
use stagecp_harness::io::{
    ingest_csv, read_results, write_precomputed_csv, write_raw_csv, write_results, Dataset, ResultRow,
};
use stagecp_harness::report::{emit_report, PlotKind};
use stagecp_harness::{ExperimentConfig, HarnessError, Method, Protocol};

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn raw_rows_keep_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    write(&path, "t,w_0,x_0,y\n5,1.0,3.0,12.0\n3,2.0,6.5,26.0\n9,-1,-3,-12.5\n");
    let Dataset::Raw(points) = ingest_csv(&path, Schema::Raw).unwrap() else { panic!("raw schema") };
    assert_eq!(points.len(), 3);
    assert_eq!(points.iter().map(|p| p.t.unwrap()).collect::<Vec<_>>(), vec![5, 3, 9]);
    assert_eq!(points[1], TripletPoint::scalar(2.0, 6.5, 26.0).at(3));
}

#[test]
fn missing_and_malformed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    write(&path, "t,w_0,x_0\n0,1,2\n");
    assert!(matches!(ingest_csv(&path, Schema::Raw), Err(HarnessError::Schema(c)) if c == "y"));
    write(&path, "t,y,mu2_x\n0,1,2\n");
    assert!(matches!(ingest_csv(&path, Schema::Precomputed), Err(HarnessError::Schema(c)) if c == "mu2_xhat"));
    write(&path, "t,w_0,x_0,y\n0,1,2,3\n1,1,oops,3\n");
    assert!(matches!(ingest_csv(&path, Schema::Raw), Err(HarnessError::Parse { line: 3, .. })));
    assert!(matches!(ingest_csv(&dir.path().join("absent.csv"), Schema::Raw), Err(HarnessError::Io { .. })));
}

#[test]
fn raw_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.csv");
    let pts = generate(&ScenarioSpec::new(ScenarioKind::GradualUp, 300, 50, Seed(3))).unwrap();
    write_raw_csv(&path, &pts).unwrap();
    assert_eq!(ingest_csv(&path, Schema::Raw).unwrap(), Dataset::Raw(pts));
}

#[test]
fn precomputed_export_reproduces_total_residual() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.csv");
    let pts = generate(&ScenarioSpec::new(ScenarioKind::IidLinear, 400, 0, Seed(8))).unwrap();
    let p = TwoStagePipeline::fit(&pts[..200]).unwrap();
    let scored = p.score_all(&pts[200..]).unwrap();
    write_precomputed_csv(&path, &scored).unwrap();
    let data = ingest_csv(&path, Schema::Precomputed).unwrap();
    let back = data.precomputed_scores().unwrap().unwrap();
    assert_eq!(back, scored);
    for s in &back {
        assert_eq!(ResidualComponents::from(s).r_total, (s.y - s.y_hat).abs());
    }
}

#[test]
fn results_round_trip_field_for_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let rec = StepRecord::basic(7, 1.5, PredictionInterval::symmetric(1.0, 0.75), 0.1);
    let rows = vec![ResultRow::from_record("SC", &rec, AbstentionPolicy::Reporting)];
    write_results(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), "t,method,lo,hi,covered,width,a,b,c,d,alpha_t,abstained");
    assert_eq!(read_results(&path).unwrap(), rows);

    let cfg = ExperimentConfig {
        protocol: Protocol::Online,
        methods: Method::ALL.to_vec(),
        n_train: 200,
        n_test: 150,
        k: 30,
        ..Default::default()
    };
    let (_, runs) = run_experiment(&cfg).unwrap();
    let rows = runs[0].result_rows(AbstentionPolicy::Reporting);
    write_results(&path, &rows).unwrap();
    assert_eq!(read_results(&path).unwrap(), rows);
}

#[test]
fn reports_cover_every_plot_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        scenario: "THREE_PHASE".into(),
        protocol: Protocol::Online,
        methods: vec![Method::Sr, Method::Aci],
        n_train: 300,
        n_test: 1000,
        ..Default::default()
    };
    let (_, runs) = run_experiment(&cfg).unwrap();
    let rows = runs[0].result_rows(AbstentionPolicy::Reporting);
    let paths = emit_report(dir.path(), &rows, &runs[0].diagnostics, 200).unwrap();
    assert_eq!(paths.len(), PlotKind::ALL.len());
    let first = std::fs::read(&paths[0]).unwrap();
    emit_report(dir.path(), &rows, &runs[0].diagnostics, 200).unwrap();
    assert_eq!(std::fs::read(&paths[0]).unwrap(), first);
    assert!(emit_report(dir.path(), &[], &[], 200).is_err());
}

#[test]
fn same_seed_gives_identical_summaries() {
    let cfg = ExperimentConfig { methods: vec![Method::Sr, Method::Sc, Method::Aci], n_test: 300, ..Default::default() };
    let (a, _) = run_experiment(&cfg).unwrap();
    let (b, _) = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.methods, b.methods);
}

#[test]
fn forced_abstention_reports_both_policies() {
    // a vanishing FWER budget accepts no candidate
    let cfg = ExperimentConfig { methods: vec![Method::Sr], delta: 1e-12, n_test: 400, ..Default::default() };
    let (s, _) = run_experiment(&cfg).unwrap();
    let sr = s.method(Method::Sr).unwrap();
    assert_eq!(sr.abstentions, 400);
    assert_eq!(sr.coverage_reporting.mean, 0.0);
    assert_eq!(sr.coverage_algorithmic.mean, 1.0);
    assert!(s.any_abstained_everywhere());
}

#[test]
fn degenerate_sweep_equals_a_run() {
    let cfg = ExperimentConfig { methods: vec![Method::Sr, Method::Sc], tau: 0.02, n_test: 300, repetitions: 3, ..Default::default() };
    let table = sweep(&cfg, SweepParam::Tau, &[0.02]).unwrap();
    assert_eq!(table.len(), 1);
    assert_eq!(table[0].1.to_csv(), run_experiment(&cfg).unwrap().0.to_csv());
    assert!(sweep(&cfg, SweepParam::Tau, &[]).is_err());
}

#[test]
fn short_windows_abstain() {
    let cfg = ExperimentConfig { protocol: Protocol::Online, methods: vec![Method::Sr], n_test: 300, ..Default::default() };
    let table = sweep(&cfg, SweepParam::K, &[10.0, 100.0]).unwrap();
    let at = |i: usize| table[i].1.method(Method::Sr).unwrap().clone();
    // misses push alpha_t up until a five-point window can pass, so a few
    // steps still emit
    assert!(at(0).abstentions as f64 >= 0.9 * at(0).steps as f64);
    assert!(at(1).abstentions < at(0).abstentions);
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_stagecp")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_exit_codes_and_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    assert_eq!(cli(&["run", "--alpha", "1.5", "--output", out]).0, 2);
    let cfg_path = dir.path().join("bad.toml");
    write(&cfg_path, "alpah = 0.1\n");
    assert_eq!(cli(&["run", "--config", cfg_path.to_str().unwrap()]).0, 2);
    assert_eq!(cli(&["run", "--input", dir.path().join("none.csv").to_str().unwrap(), "--output", out]).0, 3);

    let data = dir.path().join("data.csv");
    let (code, _) = cli(&["generate", "--scenario", "IID_LINEAR", "--n-test", "300", "--file", data.to_str().unwrap()]);
    assert_eq!(code, 0);
    let Dataset::Raw(points) = ingest_csv(&data, Schema::Raw).unwrap() else { panic!("raw") };
    assert_eq!(points.len(), 1000 + 500 + 200 + 300);

    let good = dir.path().join("good.toml");
    write(&good, "methods = [\"SR\", \"SC\"]\nalpha = 0.2\n");
    let run_dir = dir.path().join("run");
    let (code, stdout) = cli(&[
        "run",
        "--config",
        good.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--alpha",
        "0.1",
        "--output",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}");
    let echoed = ExperimentConfig::load(&run_dir.join("config.toml")).unwrap();
    assert_eq!((echoed.alpha, echoed.methods.clone()), (0.1, vec![Method::Sr, Method::Sc]));
    let rows = read_results(&run_dir.join("results_000.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 300);

    let plots = dir.path().join("plots");
    let (code, stdout) = cli(&[
        "report",
        "--results",
        run_dir.join("results_000.csv").to_str().unwrap(),
        "--diagnostics",
        run_dir.join("diagnostics_000.csv").to_str().unwrap(),
        "--output",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 5);

    let (code, stdout) =
        cli(&["sweep", "--methods", "SC", "--n-test", "200", "--param", "delta", "--values", "0.1,0.2", "--output", out]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 3);
    assert_eq!(cli(&["sweep", "--param", "alpha", "--values", "0.1", "--output", out]).0, 2);
}

#[test]
fn precomputed_input_runs_without_refitting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.csv");
    let pts = generate(&ScenarioSpec::new(ScenarioKind::Ar1Mixing, 1200, 0, Seed(4))).unwrap();
    let p = TwoStagePipeline::fit(&pts[..400]).unwrap();
    write_precomputed_csv(&path, &p.score_all(&pts[400..]).unwrap()).unwrap();
    let cfg = ExperimentConfig {
        input: Some(path),
        schema: Schema::Precomputed,
        protocol: Protocol::Online,
        methods: vec![Method::Sr, Method::Pid],
        ..Default::default()
    };
    let (s, runs) = run_experiment(&cfg).unwrap();
    assert_eq!(runs[0].records(Method::Pid).unwrap().len(), 800 - 100);
    assert!(s.method(Method::Sr).unwrap().coverage.mean > 0.5);
}

