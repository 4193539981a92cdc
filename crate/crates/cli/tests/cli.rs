use std::fs;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mortar-schwarz"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

const SMALL: &[&str] = &["--subdomains", "2", "--cells", "4", "--cells-alt", "6"];

#[test]
fn single_run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[SMALL, &["--out", out, "--fixed", "2"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains("kappa"));
    assert_eq!(lines.count(), 1);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert!(json.is_array());
}

#[test]
fn stdout_is_deterministic() {
    let a = run(&[SMALL, &["--seed", "7"]].concat());
    let b = run(&[SMALL, &["--seed", "7"]].concat());
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn toml_config_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "subdomains = [2, 2]\ncells = 4\ncells_alt = 6\ntype = \"I\"\n\n[policy]\nfixed = 1\n",
    )
    .unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "--cells-alt", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let row = rows.records().next().unwrap().unwrap();
    let get = |name: &str| &row[header.iter().position(|h| h == name).unwrap()];
    assert_eq!(get("cells_alt"), "8");
    assert_eq!(get("type"), "I");
}

#[test]
fn invalid_configuration_exits_with_two() {
    let o = run(&["--subdomains", "2", "--cells", "4", "--cells-alt", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "no_such_field = 1\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&[SMALL, &["--threshold", "-1"]].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn histogram_lists_every_subdomain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[SMALL, &["--histogram", "--out", out, "--threshold", "5"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(dir.path().join("histogram.json").exists());
}

#[test]
fn exports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.csv");
    let matrix = dir.path().join("a.mtx");
    let spectra = dir.path().join("spectra.csv");
    let o = run(&[
        SMALL,
        &[
            "--export-field",
            field.to_str().unwrap(),
            "--export-matrix",
            matrix.to_str().unwrap(),
            "--export-spectra",
            spectra.to_str().unwrap(),
        ],
    ]
    .concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in [&field, &matrix, &spectra] {
        assert!(fs::metadata(p).unwrap().len() > 0, "{}", p.display());
    }
}
