use std::path::Path;
use std::process::{Command, Output};

const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

fn fg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filtergraft"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn selffer_spec(dir: &Path, extra: &str) -> String {
    let path = dir.join("selffer.toml");
    let text = format!(
        "kind = \"selffer\"\ntag = \"cli\"\nconfig = \"smoke\"\n\
         overrides = {{ epochs = 1, batch = 128, warmup_epochs = 0{extra} }}\n\
         [target]\narch = \"micro_convnext\"\ndataset = \"synth10\"\n"
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_backend_reports_and_passes() {
    let o = fg(&["verify-backend", "--cases", "4", "--seed", "3"]);
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("depthwise max |diff|") && s.trim_end().ends_with("PASS"), "{s}");
}

#[test]
fn run_extract_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (store, data, out) = (tmp.path().join("runs"), tmp.path().join("data"), tmp.path().join("out"));
    let spec = selffer_spec(tmp.path(), "");
    let dirs = ["--store", store.to_str().unwrap(), "--data", data.to_str().unwrap(), "--configs", CONFIGS];

    let wrong = fg(&[&["run", "matrix", "--spec", &spec][..], &dirs].concat());
    assert!(!wrong.status.success());

    let o = fg(&[&["run", "selffer", "--spec", &spec][..], &dirs].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("2 records, 2 trained now"));
    let again = fg(&[&["run", "selffer", "--spec", &spec][..], &dirs].concat());
    assert!(stdout(&again).contains("2 records, 0 trained now"));

    let records = std::fs::read_to_string(store.join("records.jsonl")).unwrap();
    let base: serde_json::Value = records
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["role"] == "base")
        .unwrap();
    let run_id = base["run_id"].as_str().unwrap();
    let ckpt = store.join(run_id).join("model.safetensors");
    let bank = tmp.path().join("bank.fgb");
    let o = fg(&["extract", "--checkpoint", ckpt.to_str().unwrap(), "--kind", "depthwise", "--out", bank.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("12 layers, "));
    assert!(bank.exists());

    let report = |kind: &str, extra: &[&str]| {
        let base = ["report", kind, "--store", store.to_str().unwrap(), "--tag", "cli", "--out", out.to_str().unwrap()];
        fg(&[&base[..], extra].concat())
    };
    let o = report("grid", &["--rows", "2", "--cols", "3"]);
    assert!(o.status.success(), "{o:?}");
    for sel in ["first", "middle", "last"] {
        assert!(out.join(format!("synth10_{run_id}_{sel}.png")).exists());
        assert!(out.join(format!("synth10_{run_id}_{sel}.json")).exists());
    }
    let o = report("cluster", &["--k", "4"]);
    assert!(o.status.success(), "{o:?}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("cli_clusters_k4.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["k"], 4);

    // a selffer tag is a one-cell matrix: just the diagonal
    let o = report("matrix", &[]);
    assert!(o.status.success(), "{o:?}");
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("cli_matrix.json")).unwrap()).unwrap();
    assert_eq!(table["rows"], serde_json::json!(["synth10"]));
    assert_ne!(table["cells"][0][0]["change"], "missing");
    // and has no depth curve
    assert!(!report("curve", &["--y", "retention"]).status.success());
}

#[test]
fn diverging_run_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = selffer_spec(tmp.path(), ", lr = 1e30, weight_decay = 0.0");
    let store = tmp.path().join("runs");
    let data = tmp.path().join("data");
    let o = fg(&["run", "selffer", "--spec", &spec, "--store", store.to_str().unwrap(), "--data", data.to_str().unwrap(), "--configs", CONFIGS]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("did not complete"));
}

#[test]
fn unknown_dataset_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fg(&["data", "fetch", "no_such_set", "--root", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let o = fg(&["data", "fetch", "synth10", "--root", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("synth10: 5000 train"));
}
