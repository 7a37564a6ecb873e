use std::path::Path;
use std::process::{Command, Output};

fn lesiontrack(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lesiontrack"))
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        panic!(
            "lesiontrack {args:?} failed\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn table1_fixture_reports_the_cohort_totals() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = lesiontrack(&["evaluate", "--table1-fixture", "--out", s(&report)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("failures 2/25"), "{stdout}");

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["total_unique"], 65);
    assert_eq!(json["total_true"], 62);
    assert_eq!(json["patients"].as_array().unwrap().len(), 25);
}

#[test]
fn study_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    lesiontrack(&["synth-study", "--seed", "3", "--out-dir", s(root)]);
    for f in [
        "annotations.csv",
        "truth.json",
        "volumes/P1/Screening/S1.hdr",
        "volumes/P1/Week 8/S2.raw",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }

    let tracks = root.join("tracks.json");
    let audit = root.join("audit.jsonl");
    lesiontrack(&[
        "track",
        "--annotations",
        s(&root.join("annotations.csv")),
        "--volumes",
        s(&root.join("volumes")),
        "--patient",
        "P1",
        "--out",
        s(&tracks),
        "--audit",
        s(&audit),
    ]);
    let audit_text = std::fs::read_to_string(&audit).unwrap();
    assert!(audit_text.lines().any(|l| l.contains("\"registration\"")));
    assert!(!audit_text.contains("\"unregistered\""));

    let out = lesiontrack(&[
        "evaluate",
        "--tracks",
        s(&tracks),
        "--truth",
        s(&root.join("truth.json")),
    ]);
    let report: serde_json::Value = {
        let text = String::from_utf8_lossy(&out.stdout);
        let end = text.find("\npatient").unwrap();
        serde_json::from_str(&text[..end]).unwrap()
    };
    assert_eq!(report["total_unique"], 4, "scores count target lesions only");
    assert_eq!(report["total_true"], 4);
    assert_eq!(report["total_missed"], 0);
    assert_eq!(report["total_false"], 0);

    let sheets = root.join("sheets");
    lesiontrack(&[
        "plot-tracks",
        "--tracks",
        s(&tracks),
        "--volumes",
        s(&root.join("volumes")),
        "--out-dir",
        s(&sheets),
    ]);
    let n = std::fs::read_dir(&sheets).unwrap().count();
    assert_eq!(n, 36, "one image per observation");
}

#[test]
fn match_merges_two_readers() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    std::fs::write(
        &csv,
        "patient_id,timepoint_id,series_id,reader_id,class,source_label,x_mm,y_mm,z_mm\n\
         P,Screening,S1,R1,target,T1,0,0,0\n\
         P,Screening,S1,R1,target,T2,100,0,0\n\
         P,Screening,S1,R2,target,T1,98,3,0\n\
         P,Screening,S1,R2,target,T2,2,-1,0\n",
    )
    .unwrap();
    let out_path = dir.path().join("tracks.json");
    lesiontrack(&[
        "match",
        "--annotations",
        s(&csv),
        "--patient",
        "P",
        "--timepoint",
        "Screening",
        "--series",
        "S1",
        "--out",
        s(&out_path),
    ]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let tracks = json["tracks"].as_array().unwrap();
    assert_eq!(tracks.len(), 2);
}

#[test]
fn synth_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"dims":[32,32,32],"spacing":[2,2,2],"body":{"semi_axes_mm":[25,20,15]},
            "lesions":[{"center":[8,4,0],"radius_mm":5,"class":"target"}],"rng_seed":1}"#,
    )
    .unwrap();
    let hdr = dir.path().join("vol/phantom.hdr");
    let csv = dir.path().join("truth.csv");
    lesiontrack(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-volume",
        s(&hdr),
        "--out-annotations",
        s(&csv),
    ]);
    assert!(std::fs::read_to_string(&csv).unwrap().contains("T1"));

    let markers = dir.path().join("markers.json");
    std::fs::write(&markers, r#"[{"position":[8,4,0],"label":"T1","class":"target"}]"#).unwrap();
    let png = dir.path().join("view.png");
    lesiontrack(&[
        "plot",
        "--volume",
        s(&hdr),
        "--focus",
        "8,4,0",
        "--markers",
        s(&markers),
        "--window",
        "-200,200",
        "--out",
        s(&png),
    ]);
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_lesiontrack"))
        .args([
            "track",
            "--annotations",
            "/nonexistent.csv",
            "--patient",
            "P",
            "--out",
            "/tmp/x.json",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
