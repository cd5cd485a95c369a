use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn twistmc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twistmc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn cos_sin() -> String {
    config("cos_sin.json").to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let args = ["simulate", "--config", &cos_sin(), "--deterministic", "--seed", "9"];
    assert!(twistmc(&args, dirs[0].path()).status.success());
    assert!(twistmc(&args, dirs[1].path()).status.success());
    let mut seq = args.to_vec();
    seq.push("--sequential");
    assert!(twistmc(&seq, dirs[2].path()).status.success());
    for f in ["simulate.json", "histogram.csv", "moments.csv"] {
        let x = std::fs::read(dirs[0].path().join(f)).unwrap();
        assert!(x == std::fs::read(dirs[1].path().join(f)).unwrap(), "{f} differs between runs");
    }
    for f in ["histogram.csv", "moments.csv"] {
        let x = std::fs::read(dirs[0].path().join(f)).unwrap();
        assert!(x == std::fs::read(dirs[2].path().join(f)).unwrap(), "{f} depends on the schedule");
    }
    // The report names the execution mode; everything else matches.
    let (mut a, mut c) = (json(&dirs[0].path().join("simulate.json")), json(&dirs[2].path().join("simulate.json")));
    for v in [&mut a, &mut c] {
        v.as_object_mut().unwrap().values_mut().for_each(|x| {
            if let Some(o) = x.as_object_mut() {
                o.remove("execution");
            }
        });
        v.as_object_mut().unwrap().remove("execution");
    }
    assert_eq!(a, c);
}

#[test]
fn reeb_of_cos_sin_has_two_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let out = twistmc(&["reeb", "--config", &cos_sin(), "--p", "0", "--q", "1", "--grid", "256"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = json(&dir.path().join("reeb.json"));
    assert_eq!(g["vertices"].as_array().unwrap().len(), 2);
    assert_eq!(g["edges"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(dir.path().join("reeb.dot")).unwrap().starts_with("graph reeb"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // H4 fails for every two-symbol family of degree one.
    assert_eq!(twistmc(&["verify", "--config", &cos_sin()], dir.path()).status.code(), Some(1));
    assert_eq!(twistmc(&["measure", "--config", &cos_sin()], dir.path()).status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"model\": {\"epsilon\": 0.01, \"symbols\": [], \"colour\": 1}}").unwrap();
    let out = twistmc(&["simulate", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    assert_eq!(twistmc(&["simulate"], dir.path()).status.code(), Some(2));
    assert_eq!(twistmc(&["no-such-command"], dir.path()).status.code(), Some(2));
}

#[test]
fn area_preserving_prediction_has_zero_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out = twistmc(&["predict", "--config", &cos_sin(), "--grid", "101", "--deterministic"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("predict.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |h: &str| headers.iter().position(|x| x == h).unwrap();
    let (ci, bi, si) = (col("class"), col("b"), col("sigma2"));
    let mut ti = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[ci] == "TI" {
            ti += 1;
            assert!(rec[bi].parse::<f64>().unwrap().abs() <= 1e-9);
            assert!((rec[si].parse::<f64>().unwrap() - 0.25).abs() < 1e-12);
        }
    }
    assert!(ti > 10);
}

#[test]
fn charfn_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = twistmc(
        &["charfn", "--config", &cos_sin(), "--n", "1000", "--points", "11", "--seed", "3", "--deterministic"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("charfn.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
}
