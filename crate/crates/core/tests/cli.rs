use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tfa-lab"))
}

fn scratch(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("tfa-lab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn variation_oracle_exits_zero() {
    let out = scratch("oracle");
    let st = bin().args(["variation-oracle", "--max-len", "6", "--out"]).arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(out.join("variation-oracle.csv")).unwrap();
    assert!(csv.starts_with("experiment,metric,seed,max_len,value\nmeta,version="));
}

#[test]
fn missing_config_exits_two() {
    let st = bin().args(["--config", "/definitely/not/here.cfg", "trees"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("not found"));
}

#[test]
fn malformed_config_and_unknown_subcommand_are_rejected() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "[ergodic\nn = 3\n").unwrap();
    let st = bin().arg("--config").arg(&cfg).arg("ergodic").output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("usage"));
    let st = bin().arg("frobnicate").output().unwrap();
    assert!(!st.status.success());
}

fn run_growth(dir: &Path, threads: &str, cfg: &Path) -> Vec<u8> {
    let st = bin()
        .env("TFA_LAB_THREADS", threads)
        .args(["growth", "--seed", "17", "--out"])
        .arg(dir)
        .arg("--config")
        .arg(cfg)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stdout));
    std::fs::read(dir.join("growth.csv")).unwrap()
}

#[test]
fn output_is_independent_of_worker_count() {
    let dir = scratch("det");
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, "[growth]\nn = 256\nm_max = 3\ntrials = 3\nrate = 1\nstability = 1\n").unwrap();
    let a = run_growth(&dir.join("one"), "1", &cfg);
    let b = run_growth(&dir.join("four"), "4", &cfg);
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().contains("c0=12"));
}

#[test]
fn lacunarity_subcommand_passes() {
    let out = scratch("lac");
    let st = bin().args(["verify-lacunarity", "--out"]).arg(&out).output().unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("violations 0"));
}
