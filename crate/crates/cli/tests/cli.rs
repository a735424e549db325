use std::path::Path;
use std::process::{Command, Output};

use smlink::sim::read_csv_file;

fn smsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smsim"))
        .args(args)
        .env_remove("SMSIM_WORKERS")
        .output()
        .expect("running smsim")
}

fn ok(args: &[&str]) -> String {
    let out = smsim(args);
    assert!(
        out.status.success(),
        "smsim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32, tag: &str) {
    let out = smsim(args);
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(tag), "stderr: {stderr}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SIM: &[&str] = &[
    "simulate", "--scheme", "sm", "--nt", "4", "--nr", "4", "--mod-order", "4", "--snr", "0:3:9",
    "--seed", "7", "--min-errors", "200",
];

#[test]
fn simulate_writes_csv_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let mut args = SIM.to_vec();
    args.extend(["--with-bound", "--out", p(&a), "--workers", "1"]);
    ok(&args);
    let out = Command::new(env!("CARGO_BIN_EXE_smsim"))
        .args(SIM)
        .args(["--with-bound", "--out", p(&b)])
        .env("SMSIM_WORKERS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let curve = read_csv_file(&a).unwrap();
    assert_eq!(curve.points.len(), 4);
    assert_eq!(curve.bound.as_ref().unwrap().len(), 4);
    for (pt, bd) in curve.points.iter().zip(curve.bound.as_ref().unwrap()) {
        assert!(pt.errors >= 200 || pt.max_bits_hit);
        assert_eq!(pt.snr_db, bd.snr_db);
    }

    let stdout = ok(SIM);
    assert!(stdout.starts_with("# config_digest="));
    assert!(stdout.contains("snr_db,aber,bits,errors,bound"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
scheme = "sm"
nt = 2
nr = 2
mod_order = 2
snr_grid_db = [0.0, 5.0]
seed = 3

[channel]
kind = "expcorr"
beta_tx = 0.5
beta_rx = 0.8

[stop_rule]
min_bit_errors = 100
max_bits = 1000000
"#,
    )
    .unwrap();
    let base = ok(&["simulate", "--config", p(&cfg)]);
    let same = ok(&["simulate", "--config", p(&cfg)]);
    assert_eq!(base, same);
    let reseeded = ok(&["simulate", "--config", p(&cfg), "--seed", "4"]);
    assert_ne!(base.lines().next(), reseeded.lines().next());
    let regridded = ok(&["simulate", "--config", p(&cfg), "--snr", "0:1:3", "--channel", "iid"]);
    assert_eq!(regridded.lines().count(), 2 + 4);
    let bound = ok(&["bound", "--config", p(&cfg), "--pep", "chernoff"]);
    let row = bound.lines().nth(2).unwrap();
    assert!(row.starts_with("0,,,,"), "{row}");
}

#[test]
fn error_categories_map_to_exit_codes() {
    fails_with(&["simulate", "--nr", "4", "--snr", "0:1:2"], 2, "error[config]");
    fails_with(
        &["bound", "--scheme", "smx", "--nt", "2", "--nr", "2", "--mod-order", "4", "--snr", "0:1:2"],
        2,
        "error[config]",
    );
    fails_with(
        &["simulate", "--scheme", "smx", "--nt", "8", "--nr", "4", "--mod-order", "16", "--snr", "0:1:1"],
        5,
        "error[infeasible]",
    );
    fails_with(&["measurements", "fit", "/nonexistent/walk.smm"], 3, "error[io]");
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.smm");
    std::fs::write(&junk, b"not a measurement file at all, just text padding it out").unwrap();
    fails_with(&["measurements", "gof", p(&junk)], 4, "error[format]");
    fails_with(&["simulate", "--scheme", "sm", "--nt", "3", "--nr", "2", "--mod-order", "4", "--snr", "0:1:1"], 2, "Nt=3");
}

#[test]
fn measurement_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let walks: Vec<_> = (0..3).map(|i| dir.path().join(format!("walk{i}.smm"))).collect();
    for (i, w) in walks.iter().enumerate() {
        let channel = if i == 2 { "expcorr:0.3,0.3" } else { "iid" };
        let seed = i.to_string();
        let location = format!("walk{i}");
        ok(&[
            "fixtures", "generate", "--out", p(w), "--snapshots", "1024", "--channel", channel,
            "--seed", &seed, "--location", &location,
        ]);
    }
    let fit = ok(&["measurements", "fit", p(&walks[2])]);
    assert!(fit.starts_with("tx: r_c="));
    let gof = ok(&["measurements", "gof", p(&walks[0])]);
    assert!(gof.contains("rayleigh: "));
    let ranked = ok(&["measurements", "select", p(&walks[2]), p(&walks[0]), "--top", "1"]);
    assert_eq!(ranked.lines().count(), 1);
    assert!(ranked.contains("walk0.smm"), "{ranked}");

    let virt = dir.path().join("virtual.smm");
    let report = ok(&[
        "measurements", "virtual-array", p(&walks[0]), p(&walks[1]), p(&walks[2]), "--out", p(&virt),
    ]);
    assert_eq!(report.lines().count(), 3);
    let set = smlink::measurements::load_measurement_file(&virt, 1, Default::default()).unwrap();
    assert_eq!((set.len(), set.nr(), set.nt()), (3, 4, 256));

    let channel = format!("file:{}", p(&virt));
    let csv = ok(&[
        "simulate", "--scheme", "sm", "--nt", "64", "--nr", "4", "--mod-order", "4", "--snr", "10:2:12",
        "--channel", &channel, "--min-errors", "100",
    ]);
    assert_eq!(csv.lines().count(), 4);

    let exported = dir.path().join("walk.csv");
    ok(&["measurements", "export-csv", p(&walks[0]), "--out", p(&exported)]);
    let text = std::fs::read_to_string(&exported).unwrap();
    assert_eq!(text.lines().count(), 1 + 1024 * 16);
    let averaged = dir.path().join("avg.smm");
    ok(&["measurements", "average", p(&walks[0]), "--out", p(&averaged)]);
    let raw = smlink::measurements::RawMeasurementFile::read(&averaged).unwrap();
    assert_eq!(raw.num_snapshots, 256);

    fails_with(
        &["fixtures", "generate", "--out", p(&dir.path().join("x.smm")), "--channel", "file:foo"],
        2,
        "error[config]",
    );
}

#[test]
fn compare_reports_gaps_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "compare", "--nr", "2", "--snr", "0:4:20", "--min-errors", "150", "--pair", "sm:4:4/smx:2:4",
        "--target", "1e-2", "--out-dir", p(dir.path()),
    ]);
    assert!(out.starts_with("SM Nt=4 M=4 vs SMX Nt=2 M=4 at ABER 1e-2: gap "), "{out}");
    assert!(dir.path().join("sm_nt4_m4.csv").exists());
    assert!(dir.path().join("smx_nt2_m4.csv").exists());
    fails_with(&["compare", "--nr", "2", "--snr", "0:4:8", "--pair", "sm:4:4/smx:2:2"], 2, "bits per use");
}

#[test]
fn complexity_report() {
    let out = ok(&["complexity", "--nt", "4", "--nr", "4", "--bits", "4"]);
    assert_eq!(out, "c_sm=512\nc_smx=1280\nc_rel=60.000%\n");
}
