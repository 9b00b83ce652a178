use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[acquisition]
quantize = false
noise_sigma_v = 0.0

[experiment]
seed = 7
messages = 240
train_fraction = 0.25
k = 3

[forest]
n_trees = 10

[[ecus]]
id = 1
tap_m = 1.0
mids = [1]
canh_dom_v = 3.3
period_ms = 10
jitter_sigma_v = 0.0

[[ecus]]
id = 2
tap_m = 4.0
mids = [2]
canh_dom_v = 3.25
period_ms = 20
jitter_sigma_v = 0.0

[[ecus]]
id = 3
tap_m = 8.0
mids = [3]
canh_dom_v = 3.4
period_ms = 20
jitter_sigma_v = 0.0

[attack]
attacker_ecu = 2
mode = "mid-only"
victim_mids = [1, 3]
spoof_differential_v = [1.8, 1.9]
messages_per_victim = 20
periods_ms = [10]
"#;

fn twopoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twopoint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    cfg
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_is_deterministic_and_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&twopoint(&["simulate", "--config", arg(&cfg), "--out", arg(&a)]));
    ok(&twopoint(&["simulate", "--config", arg(&cfg), "--out", arg(&b)]));
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with("# config_hash=") && first.ends_with(" seed=7"), "{first}");
    assert_eq!(lines.next().unwrap().split(',').count(), 42);
    assert_eq!(lines.count(), 240);

    let c = dir.path().join("c.csv");
    ok(&twopoint(&["simulate", "--config", arg(&cfg), "--seed", "8", "--out", arg(&c)]));
    let other = fs::read_to_string(&c).unwrap();
    assert!(other.lines().next().unwrap().ends_with(" seed=8"));
    assert_ne!(other, text);
}

#[test]
fn zero_messages_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("empty.csv");
    ok(&twopoint(&["simulate", "--config", arg(&cfg), "--messages", "0", "--out", arg(&out)]));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn trace_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (ds, trace) = (dir.path().join("d.csv"), dir.path().join("trace.csv"));
    ok(&twopoint(&[
        "simulate", "--config", arg(&cfg), "--messages", "5", "--out", arg(&ds), "--trace", arg(&trace),
        "--trace-index", "2",
    ]));
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "time_s,v_spa_volts,v_spb_volts,bit_index,field_tag");
    assert!(lines.next().unwrap().ends_with(",0,sof"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let d = |n: &str| dir.path().join(n);
    ok(&twopoint(&["simulate", "--config", arg(&cfg), "--out", arg(&d("ds.csv"))]));
    ok(&twopoint(&[
        "evaluate", "--config", arg(&cfg), "--dataset", arg(&d("ds.csv")), "--mode", "split", "--out",
        arg(&d("split")),
    ]));
    ok(&twopoint(&[
        "evaluate", "--config", arg(&cfg), "--dataset", arg(&d("ds.csv")), "--kfold", "3", "--out",
        arg(&d("kfold")),
    ]));
    assert!(d("kfold/fold_03.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("split/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["outcome"]["aggregate"]["accuracy"], 1.0);
    assert_eq!(report["config"]["forest"]["n_trees"], 10);
    assert!(fs::read_to_string(d("split/confusion.csv")).unwrap().starts_with("# config_hash="));

    ok(&twopoint(&[
        "train", "--config", arg(&cfg), "--dataset", arg(&d("ds.csv")), "--out", arg(&d("model.json")),
    ]));
    ok(&twopoint(&[
        "attack", "--config", arg(&cfg), "--model", arg(&d("model.json")), "--dataset", arg(&d("ds.csv")),
        "--out", arg(&d("atk")),
    ]));
    let atk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("atk/attack_report.json")).unwrap()).unwrap();
    // Noise-free mid-only campaign: every injected frame is flagged.
    assert_eq!(atk["outcome"]["injected"], 40);
    assert_eq!(atk["outcome"]["campaign"]["alert_rate"], 1.0);
    assert_eq!(atk["outcome"]["benign_alert_rate"], 0.0);

    let summary = twopoint(&["report", arg(&d("split/report.json")), arg(&d("atk/attack_report.json"))]);
    ok(&summary);
    assert!(String::from_utf8_lossy(&summary.stdout).contains("PASS"));
    let gated = twopoint(&["report", "--gate", "1.5", arg(&d("split/report.json"))]);
    assert_eq!(gated.status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let missing = twopoint(&[
        "evaluate", "--config", arg(&cfg), "--dataset", arg(&dir.path().join("nope.csv")), "--out",
        arg(&dir.path().join("r")),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("period_ms = 20\njitter_sigma_v = 0.0\n\n[[ecus]]\nid = 3", "period_ms = 95\njitter_sigma_v = 0.0\n\n[[ecus]]\nid = 3")).unwrap();
    let out = twopoint(&["simulate", "--config", arg(&bad), "--out", arg(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 28") && err.contains("ecus[1].period_ms"), "{err}");

    let no_attack = dir.path().join("plain.toml");
    fs::write(&no_attack, SMALL.split("[attack]").next().unwrap()).unwrap();
    let out = twopoint(&[
        "attack", "--config", arg(&no_attack), "--model", arg(&dir.path().join("m.json")), "--out",
        arg(&dir.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = twopoint(&["simulate", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
}
