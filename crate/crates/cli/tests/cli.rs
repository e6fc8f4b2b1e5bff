use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gscls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gscls"))
        .args(args)
        .env("GSCLS_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gscls(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: &str) {
    let out = gscls(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with(&format!("error[{code}]: ")), "{args:?}: {stderr}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--out", s(&out), "--objects-per-class", "6", "--anchors", "48", "--seed", seed, "--test-fraction", "0.34"]);
    out
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "a", "3");
    let b = synth(tmp.path(), "b", "3");
    let files = tree(&a);
    let plys = files.iter().filter(|(n, _)| n.ends_with(".ply")).count();
    assert_eq!(plys, 36);
    let classes = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(classes, 6);
    assert_eq!(files, tree(&b));
    assert_ne!(files, tree(&synth(tmp.path(), "c", "4")));
}

#[test]
fn inspect_reports_shape_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "data", "1");
    let flat = data.join("sphere_flat_opaque/0000.ply");
    let text = ok(&["inspect", s(&flat)]);
    assert!(text.contains("points            48"), "{text}");
    assert!(text.contains("sh degree         0"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["inspect", s(&flat), "--json"])).unwrap();
    assert_eq!(json["points"], 48);
    let flatness = json["median_flatness"].as_f64().unwrap();
    assert!((flatness - 15.0).abs() < 1e-3, "{flatness}");
    let wire: serde_json::Value =
        serde_json::from_str(&ok(&["inspect", s(&data.join("sphere_wire_opaque/0000.ply")), "--json"])).unwrap();
    assert!((wire["median_elongation"].as_f64().unwrap() - 15.0).abs() < 1e-3);

    let corrupt = tmp.path().join("corrupt.ply");
    let mut bytes = fs::read(&flat).unwrap();
    bytes[0] = b'x';
    fs::write(&corrupt, bytes).unwrap();
    fails_with(&["inspect", s(&corrupt)], "MalformedHeader");
    fails_with(&["inspect", s(&tmp.path().join("absent.ply"))], "MissingInput");
}

#[test]
fn train_eval_embed_plot_round() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = synth(t, "data", "2");
    let train = |mode: &str, out: &Path| {
        ok(&[
            "train", "--data", s(&data), "--out", s(out), "--mode", mode, "--points", "32", "--preset", "tiny",
            "--epochs", "1", "--batch", "8", "--seed", "5", "--quiet",
        ])
    };
    train("po", &t.join("po"));
    train("p", &t.join("p"));
    let log = fs::read_to_string(t.join("po/training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let ckpt = t.join("po/model.ckpt");

    fails_with(
        &["eval", "--data", s(&data), "--model", s(&ckpt), "--out", s(&t.join("bad")), "--mode", "posq"],
        "ModeMismatch",
    );
    assert!(!t.join("bad").exists());
    ok(&["eval", "--data", s(&data), "--model", s(&ckpt), "--out", s(&t.join("eval")), "--mode", "po"]);
    let first = tree(&t.join("eval"));
    ok(&["eval", "--data", s(&data), "--model", s(&ckpt), "--out", s(&t.join("eval"))]);
    assert_eq!(first, tree(&t.join("eval")), "eval reruns byte-identically");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(t.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "po");
    let counts: u64 = report["class_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert!(counts > 0);
    assert_eq!(report["num_items"].as_u64().unwrap(), counts);

    ok(&["eval", "--data", s(&data), "--model", s(&t.join("p/model.ckpt")), "--out", s(&t.join("eval_p"))]);
    let table = ok(&[
        "compare",
        s(&t.join("eval/report.json")),
        s(&t.join("eval_p/report.json")),
        "--out",
        s(&t.join("cmp")),
    ]);
    assert!(table.contains("po"));
    fails_with(&["compare", s(&t.join("eval/report.json")), "--out", s(&t.join("cmp2"))], "MissingBaseline");

    ok(&[
        "embed", "--data", s(&data), "--model", s(&ckpt), "--out", s(&t.join("emb")), "--perplexity", "3",
        "--iterations", "250",
    ]);
    let csv = fs::read_to_string(t.join("emb/embedding.csv")).unwrap();
    assert!(csv.starts_with("x,y,label,class\n"));
    assert_eq!(csv.lines().count() as u64, counts + 1);

    ok(&[
        "plot",
        "--embedding",
        s(&t.join("emb/embedding.csv")),
        "--report",
        s(&t.join("eval/report.json")),
        "--out",
        s(&t.join("plots")),
    ]);
    let heatmap = fs::read_to_string(t.join("plots/heatmap.svg")).unwrap();
    assert!(heatmap.starts_with("<svg") && heatmap.contains("sphere_wire_opaque"));
    assert!(fs::read_to_string(t.join("plots/scatter.svg")).unwrap().contains("<circle"));
    fails_with(&["plot", "--out", s(&t.join("plots2"))], "MissingInput");
}

#[test]
fn foreign_output_directories_are_left_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mine");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep").unwrap();
    fails_with(
        &["synth", "--out", s(&out), "--objects-per-class", "2", "--anchors", "16", "--test-fraction", "0.5"],
        "OutputExists",
    );
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_gscls"))
        .args(["inspect", "x.ply"])
        .env("GSCLS_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[InvalidArgument]"));
}
