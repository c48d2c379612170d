use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"seed = 7
[model]
grid = "standard"
[sweep]
scenario = "vary-a"
a_values = [6, 8, 12]
d_values = [20]
"#;

fn distill(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_distill"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn read_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn unknown_config_key_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = distill(dir.path(), "[sweep]\nbogus = 1\n", &["sweep"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn invalid_value_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = distill(dir.path(), "[mc]\nsamples = 10\nper_row = false\nreference_n = 512\n", &["mc-band"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_ratio_is_k_over_k0() {
    let dir = tempfile::tempdir().unwrap();
    let out = distill(dir.path(), SMALL, &["sweep"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.starts_with("# seed = 7"));
    let rows = read_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    for row in rows {
        let num = |k: &str| row[k].parse::<f64>().unwrap();
        assert!((num("ratio") - num("K") / num("K0")).abs() <= 1e-12 * num("ratio"));
        assert!(row["error"].is_empty());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert!(distill(dir.path(), SMALL, &["sweep"]).status.success());
        assert!(distill(dir.path(), SMALL, &["k0"]).status.success());
    }
    for f in ["sweep.csv", "k0.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_budget_rows_fail_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}[camera]\nfocal_um = 150000\nlambda_um = 0.71\nem_gain = 100\nread_noise = 2\ndark_background = 0.05\nmax_leak = 0.03\nbudget = 0\nframes = 1\nartifact_period_px = 12\n");
    let out = distill(dir.path(), &config, &["end-to-end"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("end_to_end.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| !r["error"].is_empty() && r["K"].is_empty()));
}

#[test]
fn fit_round_trips_written_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = SMALL.replace("a_values = [6, 8, 12]", "a_values = [8]");
    assert!(distill(dir.path(), &config, &["frames"]).status.success());
    let frames = dir.path().join("frames");
    let near = frames.join("a8_d20_near-field_000.pgm");
    let far = frames.join("a8_d20_far-field_000.pgm");
    let out = distill(
        dir.path(),
        &config,
        &["fit", "--near", near.to_str().unwrap(), "--far", far.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("fit.csv"));
    let k: f64 = rows[0]["K"].parse().unwrap();
    assert!(k.is_finite() && k > 1.0);
    assert!(dir.path().join("fit_near.txt").exists() && dir.path().join("fit_far.txt").exists());
}
