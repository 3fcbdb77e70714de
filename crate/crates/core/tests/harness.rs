use std::path::Path;

use proptest::prelude::*;
use speclab::harness::{emit_report, render_report, run_batch, ExperimentConfig, ExperimentId, ReportFormat, ReportRow, CSV_HEADER};
use speclab::Error;

fn parse(text: &str) -> Vec<ExperimentConfig> {
    ExperimentConfig::parse_all(text, Path::new(".")).unwrap()
}

const SMALL_E1: &str = r#"
experiment = "E1"
p = [1.5, 3.0]
sizes = [16, 32]
trials = 4
seed = 9
grid = { dim = 1, n_points = 16, length = 8.0, boundary = "dirichlet" }
multiplier = { kind = "smoothed_indicator", r = 1.0 }
"#;

#[test]
fn constant_multiplier_has_norm_one() {
    let cfgs = parse(&SMALL_E1.replace(r#"kind = "smoothed_indicator", r = 1.0"#, r#"kind = "constant", value = 1.0"#));
    let rows = run_batch(&cfgs, 1).unwrap();
    for r in rows.iter().filter(|r| r.params.starts_with("N=")) {
        assert!((r.measured - 1.0).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn imaginary_power_at_zero_is_the_identity() {
    let cfgs = parse(
        r#"
experiment = "E2"
p = 3.0
y = [0.0]
a = [1.0]
trials = 4
grid = { dim = 1, n_points = 16, length = 8.0, boundary = "dirichlet" }
"#,
    );
    let rows = run_batch(&cfgs, 1).unwrap();
    let r = rows.iter().find(|r| r.params == "p=3;y=0").unwrap();
    assert!((r.measured - 1.0).abs() < 1e-9, "{r:?}");
}

#[test]
fn reports_are_deterministic_across_thread_counts() {
    let mut cfgs = parse(SMALL_E1);
    cfgs.extend(parse(SMALL_E1.replace("seed = 9", "seed = 10").as_str()));
    let one = render_report(&run_batch(&cfgs, 1).unwrap(), ReportFormat::Csv).unwrap();
    let again = render_report(&run_batch(&cfgs, 1).unwrap(), ReportFormat::Csv).unwrap();
    let four = render_report(&run_batch(&cfgs, 4).unwrap(), ReportFormat::Csv).unwrap();
    assert_eq!(one, again);
    assert_eq!(one, four);
}

#[test]
fn infeasible_configs_name_the_hypothesis() {
    let cases = [
        (SMALL_E1.replace("seed = 9", "seed = 9\nsigma = 0.4"), "σ > n/2"),
        (
            r#"
experiment = "E3"
p = 2.0
q = 1.5
sigma = 2.0
grid = { dim = 1, n_points = 16, length = 8.0, boundary = "dirichlet" }
"#
            .to_string(),
            "q > p·max",
        ),
        (
            r#"
experiment = "E4"
p = 2.0
theta = 0.25
grid = { dim = 3, n_points = 4, length = 4.0, boundary = "dirichlet" }
field = { potential = -1.0 }
"#
            .to_string(),
            "V ≥ 0",
        ),
        (
            r#"
experiment = "E6"
grid = { dim = 2, n_points = 8, length = 4.0, boundary = "dirichlet" }
"#
            .to_string(),
            "n ≥ 3",
        ),
        (
            r#"
experiment = "E7"
grid = { dim = 1, n_points = 48, length = 8.0, boundary = "dirichlet" }
"#
            .to_string(),
            "dyadic",
        ),
    ];
    for (text, needle) in cases {
        let cfgs = parse(&text);
        match run_batch(&cfgs, 1) {
            Err(Error::Hypothesis(msg)) => assert!(msg.contains(needle), "{msg} lacks {needle}"),
            other => panic!("expected a hypothesis error naming {needle}, got {other:?}"),
        }
    }
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::parse_all(&format!("{SMALL_E1}\nbogus = 1\n"), Path::new(".")).is_err());
}

#[test]
fn emit_report_contract() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    assert!(emit_report(&[], ReportFormat::Csv, &path).is_err());
    let row = ReportRow::new(ExperimentId::E5, "r=1;scale=2", 0.5, 2.0, true);
    emit_report(std::slice::from_ref(&row), ReportFormat::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, [CSV_HEADER, "E5,r=1;scale=2,0.5,2,0.25,true,0"]);
    assert!(emit_report(&[row], ReportFormat::Csv, &dir.path().join("missing/r.csv")).is_err());
}

fn row_strategy() -> impl Strategy<Value = ReportRow> {
    (0usize..8, "[a-z=;,0-9.]{0,20}", -1e6f64..1e6, 0f64..1e6, any::<bool>()).prop_map(|(e, params, m, p, pass)| {
        ReportRow::new(ExperimentId::ALL[e], params, m, p, pass)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_is_exact(rows in prop::collection::vec(row_strategy(), 1..6)) {
        let text = render_report(&rows, ReportFormat::Json).unwrap();
        let back: Vec<ReportRow> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn csv_has_one_line_per_row(rows in prop::collection::vec(row_strategy(), 1..6)) {
        let text = render_report(&rows, ReportFormat::Csv).unwrap();
        prop_assert_eq!(text.lines().count(), rows.len() + 1);
        prop_assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }
}
