use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfbsde-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn mfbsde(args: &[&str], config: &str, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfbsde"))
        .args(args)
        .arg("--config")
        .arg(configs().join(config))
        .arg("--out")
        .arg(out)
        .env("MFBSDE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn solve_meanfield_exp() {
    let out = scratch("solve");
    let o = mfbsde(&["solve"], "meanfield_exp.json", &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("solution.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("t,state,u,mu"));
    for row in rows.take(3) {
        let u: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((u - 1f64.exp()).abs() < 1e-8, "{row}");
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"config_sha256\""));
    assert!(manifest.contains("\"subcommand\": \"solve\""));
    fs::remove_dir_all(out).unwrap();
}

#[test]
fn malformed_generator_exits_2() {
    let out = scratch("bad");
    let o = mfbsde(&["solve"], "bad_generator.json", &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("column 1") && err.contains("segment 1"), "{err}");
    let _ = fs::remove_dir_all(out);
}

#[test]
fn missing_config_exits_2() {
    let out = scratch("missing");
    let o = mfbsde(&["solve"], "does_not_exist.json", &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_ordered_pair_exits_0() {
    let out = scratch("compare");
    let o = mfbsde(&["compare", "--steps", "100"], "nonlinear.json", &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("compare.csv")).unwrap();
    let gap: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("min_gap,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap >= -1e-7);
    fs::remove_dir_all(out).unwrap();
}

#[test]
fn repeated_runs_are_byte_identical() {
    for cmd in ["picard", "verify", "oracle", "converge"] {
        let a = scratch(&format!("{cmd}-a"));
        let b = scratch(&format!("{cmd}-b"));
        let args = [cmd, "--seed", "11", "--steps", "100"];
        let oa = mfbsde(&args, "nonlinear.json", &a);
        let ob = mfbsde(&args, "nonlinear.json", &b);
        assert!(oa.status.success(), "{cmd}: {}", String::from_utf8_lossy(&oa.stderr));
        assert_eq!(oa.status.code(), ob.status.code());
        assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b), "{cmd}");
        fs::remove_dir_all(a).unwrap();
        fs::remove_dir_all(b).unwrap();
    }
}

#[test]
fn variant_flag_is_recorded() {
    let out = scratch("variant");
    let o = mfbsde(&["picard", "--variant", "y", "--steps", "50"], "nonlinear.json", &out);
    assert!(o.status.success());
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"variant\": \"y\""));
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("iter,u_gap,z_gap,ratio"));
    fs::remove_dir_all(out).unwrap();
}
