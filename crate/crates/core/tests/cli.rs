use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn regcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regcl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const QUICK: &str = r#"
scenario = "dil"
seeds = [0]

[synth]
feature_dim = 60
experiences = 3
samples_per_experience = 120

[train]
epochs = 2
hidden = 16
"#;

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let cfg = write_config(dir.path(), &format!("{QUICK}\n[pct]\ngamma = 1.0\n"));
    let o = regcl(&["run", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));

    let cfg = write_config(dir.path(), &format!("{QUICK}\n[pct]\nalpha = -0.5\n"));
    let o = regcl(&["run", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pct.alpha"));

    let o = regcl(&["run", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let cfg = write_config(dir.path(), QUICK);
    let o = regcl(&["run", "--config", &cfg, "--seeds", "1,x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.txt");
    let cfg =
        write_config(dir.path(), &format!("{QUICK}\n[data]\nsource = \"file\"\npath = \"{}\"\n", missing.display()));
    let o = regcl(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1 t=0 3:1\n1 t=5 nonsense\n").unwrap();
    let cfg = write_config(dir.path(), &format!("{QUICK}\n[data]\nsource = \"file\"\npath = \"{}\"\n", bad.display()));
    let o = regcl(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn synth_writes_dataset_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = dir.path().join("data");
    let o = regcl(&["synth", "--scenario", "dil", "--out", out.to_str().unwrap(), "--config", &cfg, "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dataset.txt").exists());
    for k in 1..=3 {
        assert!(out.join(format!("exp_{k}_train.txt")).exists());
        assert!(out.join(format!("exp_{k}_test.txt")).exists());
    }
    let again = dir.path().join("data2");
    regcl(&["synth", "--scenario", "dil", "--out", again.to_str().unwrap(), "--config", &cfg, "--seed", "7"]);
    assert_eq!(fs::read(out.join("dataset.txt")).unwrap(), fs::read(again.join("dataset.txt")).unwrap());
}

#[test]
fn run_then_audit_flips_between_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = dir.path().join("out");
    let o = regcl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("nfr_mw"));
    assert!(out.join("report.csv").exists());

    let data = dir.path().join("data");
    let o = regcl(&["synth", "--scenario", "dil", "--out", data.to_str().unwrap(), "--config", &cfg, "--seed", "0"]);
    assert!(o.status.success());

    let seed = out.join("seed_0");
    for class in ["mw", "gw", "all"] {
        let o = regcl(&[
            "eval",
            "--old",
            seed.join("snapshot_2.bin").to_str().unwrap(),
            "--new",
            seed.join("snapshot_3.bin").to_str().unwrap(),
            "--test",
            data.join("exp_3_test.txt").to_str().unwrap(),
            "--class",
            class,
            "--filter",
            seed.join("filter.txt").to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = String::from_utf8_lossy(&o.stdout);
        assert!(line.starts_with("n="), "{line}");
        assert!(line.contains("nfr="));
    }

    let o = regcl(&[
        "eval",
        "--old",
        dir.path().join("nope.bin").to_str().unwrap(),
        "--new",
        seed.join("snapshot_3.bin").to_str().unwrap(),
        "--test",
        data.join("exp_3_test.txt").to_str().unwrap(),
        "--class",
        "all",
    ]);
    assert_eq!(code(&o), 3);
}
