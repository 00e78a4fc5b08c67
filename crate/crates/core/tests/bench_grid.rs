use lawful_core::bench::{append_rows, linear_fit, read_rows, run_grid, summarize_by_mode, ExperimentSpec};

const SPEC: &str = r#"
mode = "protocol1"
params = "test-512"
seed = 5
workers = 2
agencies = 2
weights = [0.5, 0.5]

[graph]
kind = "synthetic"
n = 400
avg_degree = 4.0

[grid]
x_count = 2
k = [1, 2]
d = [30]
"#;

#[test]
fn rows_match_runs_and_reruns_reproduce_output_sizes() {
    let spec = ExperimentSpec::from_toml(SPEC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let mut seen = 0;
    let rows = run_grid(&spec, |row| {
        seen += 1;
        append_rows(&csv, std::slice::from_ref(row)).unwrap();
    })
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(seen, 4);
    let back = read_rows(&[csv]).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(back.iter().map(|r| r.ciphertexts_out).collect::<Vec<_>>(), rows.iter().map(|r| r.ciphertexts_out).collect::<Vec<_>>());

    let again = run_grid(&spec, |_| {}).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.x, a.k, a.ciphertexts_out), (b.x, b.k, b.ciphertexts_out));
    }
    let sums = summarize_by_mode(&back).unwrap();
    assert_eq!(sums.len(), 1);
    assert_eq!(sums[0].runs, 4);
}

#[test]
fn zero_mode_grid_matches_crypto_sizes() {
    let crypto = run_grid(&ExperimentSpec::from_toml(SPEC).unwrap(), |_| {}).unwrap();
    let zero = run_grid(&ExperimentSpec::from_toml(&SPEC.replace("protocol1", "zero")).unwrap(), |_| {}).unwrap();
    for (c, z) in crypto.iter().zip(&zero) {
        assert_eq!(c.ciphertexts_out, z.ciphertexts_out);
        assert_eq!(z.mode, "zero");
    }
}

#[test]
fn fit_recovers_a_generated_line() {
    let xs: Vec<f64> = (1..=40).map(|i| (i * 250) as f64).collect();
    let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 0.0185 * x + 3.0 + if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
    let fit = linear_fit(&xs, &ys).unwrap();
    assert!((fit.slope - 0.0185).abs() / 0.0185 < 0.01, "{fit:?}");
    assert!(fit.r > 0.999);
}
