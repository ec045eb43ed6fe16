use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn three_releases() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/three_releases")
}

fn srs_anon(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srs-anon"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn anonymize_baseline(input: &Path, history: &Path, output: &Path) -> Output {
    let taxonomy = three_releases().join("taxonomy");
    let theta = three_releases().join("theta.json");
    srs_anon(&[
        &"anonymize",
        &"--variant",
        &"baseline",
        &"--k",
        &"4",
        &"--theta",
        &theta,
        &"--taxonomy",
        &taxonomy,
        &"--history",
        &history,
        &input,
        &"-o",
        &output,
    ])
}

/// Rows of a published CSV grouped by gid, keeping the Disease cell.
fn groups(path: &Path) -> BTreeMap<String, Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let gid = header.iter().position(|h| *h == "gid").unwrap();
    let disease = header.iter().position(|h| *h == "Disease").unwrap();
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        out.entry(cells[gid].to_string()).or_default().push(cells[disease].to_string());
    }
    out
}

#[test]
fn anonymize_baseline_output_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let history = dir.path().join("hist");
    let out = dir.path().join("R_1.csv");
    let o = anonymize_baseline(&three_releases().join("D_1.csv"), &history, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("release 1"));

    let gs = groups(&out);
    assert_eq!(gs.values().map(Vec::len).sum::<usize>(), 8);
    for rows in gs.values() {
        assert!(rows.len() >= 4);
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for cell in rows {
            for v in cell.split(';') {
                *freq.entry(v).or_default() += 1;
            }
        }
        for (v, c) in freq {
            assert!(c as f64 / rows.len() as f64 <= 0.5, "{v} appears {c} times in {rows:?}");
        }
    }
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(history.join("R_1.csv")).unwrap());
    assert!(history.join("manifest.json").exists());
    assert!(history.join("taxonomy/schema.json").exists());
}

#[test]
fn dp_variant_without_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("R.csv");
    let taxonomy = three_releases().join("taxonomy");
    let theta = three_releases().join("theta.json");
    let history = dir.path().join("hist");
    let input = three_releases().join("D_1.csv");
    let o = srs_anon(&[
        &"anonymize",
        &"--variant",
        &"num",
        &"--k",
        &"4",
        &"--epsilon",
        &"1",
        &"--theta",
        &theta,
        &"--taxonomy",
        &taxonomy,
        &"--history",
        &history,
        &input,
        &"-o",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    assert!(!out.exists() && !history.exists());

    let o = srs_anon(&[&"anonymize", &"--variant", &"sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_anonymize_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "case_id,Gender,Age,Disease,Name\n1,Male,30,Flu,Bob\n").unwrap();
    let out = dir.path().join("R_1.csv");
    let history = dir.path().join("hist");
    let o = anonymize_baseline(&bad, &history, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    assert!(!history.join("manifest.json").exists());

    // Too few cases for one group of k.
    let small = dir.path().join("small.csv");
    std::fs::write(&small, "case_id,Gender,Age,Disease\n1,Male,30,Flu\n2,Male,31,HIV\n").unwrap();
    let o = anonymize_baseline(&small, &history, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn audit_lists_the_fixture_breaches() {
    let theta = three_releases().join("theta.json");
    let dir = three_releases();
    let o = srs_anon(&[&"audit", &"--k", &"4", &"--theta", &theta, &"--json", &dir]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mut breached: Vec<(u64, String)> = report["findings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["release"].as_u64().unwrap(), f["case_id"].as_str().unwrap().to_string()))
        .collect();
    breached.sort();
    breached.dedup();
    let want: Vec<(u64, String)> = [(2, "9"), (3, "12"), (3, "15"), (3, "16")]
        .into_iter()
        .map(|(r, c)| (r, c.to_string()))
        .collect();
    assert_eq!(breached, want);

    let text = srs_anon(&[&"audit", &"--k", &"4", &"--theta", &theta, &dir]);
    assert!(text.status.success());
    assert!(stdout(&text).contains("12"));
}

#[test]
fn audit_of_missing_history_fails() {
    let dir = tempfile::tempdir().unwrap();
    let theta = three_releases().join("theta.json");
    let taxonomy = three_releases().join("taxonomy");
    let d = dir.path();
    let o = srs_anon(&[&"audit", &"--k", &"4", &"--theta", &theta, &"--taxonomy", &taxonomy, &d]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn metrics_and_signal_report_on_a_release() {
    let taxonomy = three_releases().join("taxonomy");
    let original = three_releases().join("D_3.csv");
    let anonymized = three_releases().join("R_3.csv");
    let o = srs_anon(&[
        &"metrics",
        &"--original",
        &original,
        &"--anonymized",
        &anonymized,
        &"--taxonomy",
        &taxonomy,
        &"--json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["records"], 8);
    for key in ["nil", "rr", "ar_rev"] {
        assert!(m[key].as_f64().unwrap() >= 0.0);
    }

    let o = srs_anon(&[
        &"signal",
        &"--drug",
        &"Disease=Diabetes",
        &"--reaction",
        &"Disease=Flu",
        &"--original",
        &original,
        &"--anonymized",
        &anonymized,
        &"--taxonomy",
        &taxonomy,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("original") && s.contains("PRR=") && s.contains("bias"), "{s}");
}

#[test]
fn synth_writes_a_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    std::fs::write(&cfg, r#"{"releases": 2, "records_per_release": 50, "seed": 4}"#).unwrap();
    let out = dir.path().join("series");
    let o = srs_anon(&[&"synth", &"--config", &cfg, &"-o", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["D_1.csv", "D_2.csv", "background.json", "theta.json", "taxonomy/schema.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(out.join("D_1.csv")).unwrap().lines().count(), 51);

    std::fs::write(&cfg, r#"{"releases": 2, "bogus": 1}"#).unwrap();
    let o = srs_anon(&[&"synth", &"--config", &cfg, &"-o", &dir.path().join("x")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dp_runs_are_reproducible_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    std::fs::write(&cfg, r#"{"releases": 1, "records_per_release": 200, "seed": 2}"#).unwrap();
    let series = dir.path().join("series");
    assert!(srs_anon(&[&"synth", &"--config", &cfg, &"-o", &series]).status.success());
    let run = |name: &str| {
        let out = dir.path().join(format!("{name}.csv"));
        let history = dir.path().join(name);
        let (theta, taxonomy, input) = (series.join("theta.json"), series.join("taxonomy"), series.join("D_1.csv"));
        let o = srs_anon(&[
            &"anonymize",
            &"--variant",
            &"all",
            &"--k",
            &"5",
            &"--epsilon",
            &"0.5",
            &"--seed",
            &"17",
            &"--theta",
            &theta,
            &"--taxonomy",
            &taxonomy,
            &"--history",
            &history,
            &input,
            &"-o",
            &out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
