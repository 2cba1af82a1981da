use std::path::Path;
use std::process::{Command, Output};

fn nodec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const RUN: &str = r#"
[problem]
kind = "scalar_linear"
a = 1.0
b = 1.0
x0 = 0.0
target = 1.0

[network]
hidden = [6, 6]
activation = "elu"
init = { kind = "constant", value = 0.1 }

[training]
optimizer = "adam"
lr = 0.15
epochs = 200
seed = 3
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn oc_prints_time_dependent_energy() {
    let o = nodec(&["oc", "--scalar-linear", "a=1", "b=1", "x0=0", "xstar=1", "T=1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let line = text.lines().next().unwrap();
    let e: f64 = line.trim_start_matches("E* = ").parse().unwrap();
    assert!((e - 0.1565).abs() < 1e-4, "{line}");
}

#[test]
fn oc_rejects_bad_pairs() {
    assert_eq!(nodec(&["oc", "--scalar-linear", "a=1", "q=2"]).status.code(), Some(2));
    assert_eq!(nodec(&["oc"]).status.code(), Some(2));
}

#[test]
fn train_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", RUN);
    let out = dir.path().join("out");
    let o = nodec(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["history.csv", "best_theta.json", "manifest.json", "loss.svg", "energy.svg", "control.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 201);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["training"]["seed"], 3);
    assert_eq!(manifest["experiment"], "train");

    // rerunning from the manifest's config reproduces the history bit for bit
    let again = dir.path().join("again");
    let o2 = nodec(&["train", "--config", &cfg, "--out", again.to_str().unwrap()]);
    assert!(o2.status.success());
    assert_eq!(hist, std::fs::read_to_string(again.join("history.csv")).unwrap());
}

#[test]
fn missing_field_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &RUN.replace("epochs = 200\n", ""));
    let out = dir.path().join("out");
    let o = nodec(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &RUN.replace("seed = 3", "seed = 3\nlearning_rate = 1"));
    let out = dir.path().join("out");
    let o = nodec(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("learning_rate") && err.contains("line"), "{err}");
    assert!(!out.exists());
}

#[test]
fn divergence_exits_3_with_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let text = RUN.replace("optimizer = \"adam\"", "optimizer = \"sd\"").replace("lr = 0.15", "lr = 1e6");
    let cfg = write(dir.path(), "run.toml", &text);
    let out = dir.path().join("out");
    let o = nodec(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("history.csv").exists() && out.join("manifest.json").exists());
    assert!(!out.join("best_theta.json").exists());
}

#[test]
fn sweep_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/sweep_time_dependent.toml"))
        .unwrap()
        .replace("epochs = 500", "epochs = 20")
        .replace("layers = [1, 2, 3, 4, 5, 6, 7, 8, 9]", "layers = [1, 3]")
        .replace("max_neurons = [9, 18, 27, 36, 45, 54, 63, 72, 81, 90]", "max_neurons = [9, 18]");
    let cfg = write(dir.path(), "sweep.toml", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(nodec(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(nodec(&["sweep", "--config", &cfg, "--workers", "2", "--out", b.to_str().unwrap()]).status.success());
    let ga = std::fs::read_to_string(a.join("grid.csv")).unwrap();
    assert_eq!(ga.lines().count(), 5);
    assert_eq!(ga, std::fs::read_to_string(b.join("grid.csv")).unwrap());
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let out = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path).unwrap();
        let ok = if name.starts_with("train_") {
            toml::from_str::<nodec::cli::RunConfig>(&text).map(|c| c.resolve().is_ok()).unwrap_or(false)
        } else if name.starts_with("sweep_") {
            toml::from_str::<nodec::experiments::SweepConfig>(&text).is_ok()
        } else if name.starts_with("phase_") {
            toml::from_str::<nodec::experiments::PhaseConfig>(&text).is_ok()
        } else {
            toml::from_str::<toml::Table>(&text).is_ok()
        };
        assert!(ok, "{name}");
        seen += 1;
    }
    assert!(seen >= 10);
    let o = nodec(&["compare-protocols", "--config", &format!("{dir}/compare_protocols.toml"), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("vjp/epoch 1 "));
}
