use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const GENERATE: &str = r#"
[data.synthetic]
n_series = 4
length = 120
period = 6
graph_view = false
"#;

const CONFIG: &str = r#"
seed = 0
horizons = [1]

[data]
dir = "data"

[split]
test_len = 24

[model]
latent_dim = 4
hidden = 8
window = 6

[train]
epochs = 2
count_per_series = 10
validation_samples = 0

[metrics]
samples = 100
"#;

fn camul(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camul"))
        .args(args)
        .current_dir(cwd)
        .env("CAMUL_NUM_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn setup() -> TempDir {
    let root = TempDir::new().unwrap();
    fs::write(root.path().join("generate.toml"), GENERATE).unwrap();
    fs::write(root.path().join("config.toml"), CONFIG).unwrap();
    root
}

#[test]
fn full_pipeline_exits_zero() {
    let root = setup();
    let dir = root.path();
    for args in [
        &["generate", "--config", "generate.toml", "--out", "data"][..],
        &["train", "--config", "config.toml", "--out", "run"],
        &["evaluate", "--config", "config.toml", "--out", "run", "--samples", "50"],
        &["forecast", "--config", "config.toml", "--out", "run", "--series", "s01"],
        &["plot", "--out", "run"],
    ] {
        let out = camul(args, dir);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.join("run/h1/eval.json").exists());
    assert!(dir.join("run/h1/reliability.svg").exists());
    assert!(dir.join("run/h1/forecast_fan_s01.svg").exists());
}

#[test]
fn user_errors_exit_one() {
    let root = setup();
    let dir = root.path();
    assert_eq!(camul(&["generate", "--config", "generate.toml", "--out", "data"], dir).status.code(), Some(0));

    let again = camul(&["generate", "--config", "generate.toml", "--out", "data"], dir);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(
        camul(&["generate", "--config", "generate.toml", "--out", "data", "--force"], dir).status.code(),
        Some(0)
    );

    assert_eq!(camul(&["evaluate", "--config", "config.toml", "--out", "run"], dir).status.code(), Some(1));
    assert_eq!(camul(&["train", "--config", "missing.toml", "--out", "run"], dir).status.code(), Some(1));

    fs::write(dir.join("bad.toml"), "seed = 0\nbogus = 1\n[data]\ndir = \"data\"\n").unwrap();
    let bad = camul(&["train", "--config", "bad.toml", "--out", "run"], dir);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));

    assert_eq!(
        camul(&["train", "--config", "config.toml", "--out", "run", "--epochs", "0"], dir).status.code(),
        Some(0)
    );
    let unknown = camul(&["forecast", "--config", "config.toml", "--out", "run", "--series", "zz"], dir);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("zz"));
}

#[test]
fn empty_forecast_plot_warns_and_succeeds() {
    let root = setup();
    let dir = root.path();
    fs::write(dir.join("empty.json"), r#"{"kind":"forecast","horizon":1,"samples":10,"seed":0,"forecasts":[]}"#)
        .unwrap();
    let out = camul(&["plot", "--input", "empty.json"], dir);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to plot"));
    assert_eq!(fs::read_dir(dir).unwrap().count(), 3);
}
