use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_countcluster");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("COUNTCLUSTER_OUT")
        .output()
        .expect("binary runs")
}

fn cli_in(dir: &Path, args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir)
        .args(args)
        .env_remove("COUNTCLUSTER_OUT");
    if let Some(p) = env_out {
        cmd.env("COUNTCLUSTER_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = cli(&["run", "--k", "4", "--seed", "0", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let counted: usize = line
        .trim()
        .strip_prefix("target=4 counted=")
        .unwrap_or_else(|| panic!("unexpected output {line:?}"))
        .parse()
        .unwrap();

    let traj = read(out.join("trajectory.jsonl"));
    let records: Vec<serde_json::Value> = traj
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 51);
    assert_eq!(records[0]["t"], 50);
    assert_eq!(records[50]["t"], 0);
    assert!(records
        .iter()
        .all(|r| r["latent_hash"].as_str().is_some_and(|h| h.len() == 16)));

    let pgm = read(out.join("final.pgm"));
    assert!(pgm.starts_with("P2\n64 64\n255\n"));
    let csv = read(out.join("final.csv"));
    assert_eq!(csv.lines().count(), 64);
    assert!(csv.lines().all(|l| l.split(',').count() == 64));

    let result: serde_json::Value = serde_json::from_str(&read(out.join("result.json"))).unwrap();
    assert_eq!(result["counted"], counted);
    assert_eq!(result["target_count"], 4);
    assert_eq!(result["guided"], true);
}

#[test]
fn run_is_reproducible_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = cli(&[
            "run",
            "--k",
            "3",
            "--seed",
            "11",
            "--size",
            "32",
            "--out",
            path(dir),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in ["result.json", "trajectory.jsonl", "final.csv", "final.pgm"] {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name}");
    }
}

#[test]
fn baseline_run_records_no_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "--baseline",
        "--k",
        "2",
        "--size",
        "32",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 0);
    let result: serde_json::Value =
        serde_json::from_str(&read(tmp.path().join("result.json"))).unwrap();
    assert_eq!(result["guided"], false);
    assert!(result["loss_final"].is_null());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--k", "0", "--out", out],
        vec!["run", "--k", "-1", "--out", out],
        vec!["run", "--tau", "1.5", "--out", out],
        vec!["run", "--bogus"],
        vec!["frobnicate"],
        vec!["benchmark", "--variants", "", "--out", out],
        vec!["benchmark", "--variants", "nope", "--out", out],
        vec!["benchmark", "--counts", "0..3", "--out", out],
        vec!["benchmark", "--counts", "5..2", "--out", out],
        vec!["benchmark", "--workers", "0", "--out", out],
        vec!["ablate", "--variants", "guided", "--out", out],
    ];
    for args in cases {
        let o = cli(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let o = cli(&["run", "--k", "0", "--out", out]);
    assert!(stderr(&o).contains("--k"), "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&cli(&["--help"])), 0);
    assert_eq!(code(&cli(&["run", "--help"])), 0);
    assert_eq!(code(&cli(&["--version"])), 0);
}

#[test]
fn benchmark_tables_are_worker_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("w1");
    let many = tmp.path().join("w8");
    let common = [
        "--variants",
        "guided,baseline",
        "--counts",
        "2..10",
        "--seeds",
        "0..9",
        "--size",
        "32",
    ];
    for (dir, w) in [(&one, "1"), (&many, "8")] {
        let mut args = vec!["benchmark", "--workers", w, "--out", path(dir)];
        args.extend(common);
        let o = cli(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let runs = read(one.join("runs.csv"));
    assert_eq!(runs, read(many.join("runs.csv")));
    assert_eq!(
        read(one.join("summary.csv")),
        read(many.join("summary.csv"))
    );

    let mut lines = runs.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,k,seed,counted,loss_final,relaxations_total,refine_iters_t50,refine_iters_t40,failed"
    );
    assert_eq!(lines.count(), 180);

    let summary = read(one.join("summary.csv"));
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,k,n,accuracy,mae,rmse,mean_relaxations,failure_rate"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 10);
    assert!(rows.iter().any(|r| r.starts_with("guided,ALL,")));
    assert!(rows.iter().any(|r| r.starts_with("baseline,ALL,")));
}

#[test]
fn benchmark_heatmaps_are_named_by_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&[
        "benchmark",
        "--variants",
        "baseline",
        "--counts",
        "3",
        "--seeds",
        "4..5",
        "--size",
        "32",
        "--heatmaps",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for seed in [4, 5] {
        let p = tmp
            .path()
            .join("heatmaps")
            .join(format!("baseline_3_{seed}.pgm"));
        assert!(read(p).starts_with("P2\n32 32\n255\n"));
    }
}

#[test]
fn ablate_reports_deltas_against_guided() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&[
        "ablate",
        "--counts",
        "2..3",
        "--seeds",
        "0..2",
        "--size",
        "32",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(tmp.path().join("ablation.csv"));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    for col in ["delta_accuracy", "delta_mae", "delta_rmse"] {
        assert!(headers.iter().any(|h| h == col), "{col}");
    }
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let variants: std::collections::BTreeSet<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(
        variants.into_iter().collect::<Vec<_>>(),
        ["guided", "k-scaling", "no-min-distance"]
    );
    for r in rows.iter().filter(|r| &r[0] == "guided") {
        let d: f64 = r[8].parse().unwrap();
        assert!(d == 0.0 || d.is_nan(), "{r:?}");
    }
    assert!(stdout(&o).contains("delta no-min-distance"));
}

fn write_map(dir: &Path, name: &str, rows: &[Vec<f64>]) -> std::path::PathBuf {
    let p = dir.join(name);
    let text: String = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    std::fs::write(&p, text).unwrap();
    p
}

fn two_blob_rows(side: usize) -> Vec<Vec<f64>> {
    let bump =
        |r: f64, c: f64, cr: f64, cc: f64| (-((r - cr).powi(2) + (c - cc).powi(2)) / 2.0).exp();
    (0..side)
        .map(|r| {
            (0..side)
                .map(|c| {
                    bump(r as f64, c as f64, 4.0, 4.0) + 0.8 * bump(r as f64, c as f64, 11.0, 12.0)
                })
                .collect()
        })
        .collect()
}

#[test]
fn inspect_dumps_clusters_and_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let map = write_map(tmp.path(), "m.csv", &two_blob_rows(16));
    let out = tmp.path().join("inspect");
    let o = cli(&["inspect", path(&map), "--k", "2", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let clusters: serde_json::Value =
        serde_json::from_str(&read(out.join("clusters.json"))).unwrap();
    assert_eq!(clusters["k"], 2);
    let centers = clusters["centers"].as_array().unwrap();
    assert_eq!(centers[0]["row"], 4);
    assert_eq!(centers[0]["col"], 4);
    assert_eq!(centers[1]["row"], 11);
    assert_eq!(centers[1]["col"], 12);

    let labels = read(out.join("labels.csv"));
    assert_eq!(labels.lines().count(), 16);
    let loss: serde_json::Value = serde_json::from_str(&read(out.join("loss.json"))).unwrap();
    assert!(loss["total"].as_f64().unwrap().is_finite());
    assert_eq!(loss["per_cluster_kl"].as_array().unwrap().len(), 2);
    for f in ["normalized.pgm", "target_0.pgm", "target_1.pgm"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn inspect_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let ragged = tmp.path().join("ragged.csv");
    std::fs::write(&ragged, "1,2,3\n4,5\n6,7,8\n").unwrap();
    let nonnum = tmp.path().join("nonnum.csv");
    std::fs::write(&nonnum, "1,x\n3,4\n").unwrap();
    let constant = write_map(tmp.path(), "flat.csv", &vec![vec![0.5; 8]; 8]);
    let tiny = write_map(tmp.path(), "tiny.csv", &two_blob_rows(4));

    let cases: [(&Path, &str, i32); 5] = [
        (&ragged, "2", 2),
        (&nonnum, "2", 2),
        (Path::new("/nonexistent/map.csv"), "2", 2),
        (&tiny, "20", 2),
        (&constant, "2", 3),
    ];
    for (map, k, expected) in cases {
        let o = cli(&["inspect", path(map), "--k", k, "--out", path(&out)]);
        assert_eq!(code(&o), expected, "{}: {}", map.display(), stderr(&o));
    }
}

#[test]
fn export_maps_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let o = cli(&[
        "run",
        "--k",
        "3",
        "--seed",
        "2",
        "--size",
        "32",
        "--out",
        path(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = cli(&["export-maps", path(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for t in [50, 40, 30, 20, 10, 0] {
        assert!(
            run.join("maps").join(format!("t{t:02}.pgm")).is_file(),
            "t{t}"
        );
    }
    assert_eq!(read(run.join("maps/t00.pgm")), read(run.join("final.pgm")));

    let custom = tmp.path().join("custom");
    let o = cli(&[
        "export-maps",
        path(&run),
        "--timesteps",
        "45..47",
        "--out",
        path(&custom),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&custom)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["t45.pgm", "t46.pgm", "t47.pgm"]);

    assert_eq!(
        code(&cli(&["export-maps", path(&run), "--timesteps", "51"])),
        2
    );
    assert_eq!(code(&cli(&["export-maps", path(tmp.path())])), 2);
}

#[test]
fn config_layers_resolve_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"k": 5, "seed": 3, "size": 32}"#).unwrap();

    let file_only = tmp.path().join("file");
    let o = cli(&["run", "--config", path(&cfg), "--out", path(&file_only)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("target=5 "));
    let r: serde_json::Value = serde_json::from_str(&read(file_only.join("result.json"))).unwrap();
    assert_eq!(r["seed"], 3);
    assert_eq!(r["map_size"], 32);

    let flag = tmp.path().join("flag");
    let o = cli(&[
        "run",
        "--config",
        path(&cfg),
        "--k",
        "4",
        "--out",
        path(&flag),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("target=4 "));
    let r: serde_json::Value = serde_json::from_str(&read(flag.join("result.json"))).unwrap();
    assert_eq!(r["seed"], 3);

    let defaults = tmp.path().join("defaults");
    let o = cli(&["run", "--out", path(&defaults)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("target=4 "));
    let r: serde_json::Value = serde_json::from_str(&read(defaults.join("result.json"))).unwrap();
    assert_eq!(r["map_size"], 64);
    assert_eq!(r["seed"], 0);
}

#[test]
fn config_rejects_unknown_and_malformed() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = tmp.path().join("u.json");
    std::fs::write(&unknown, r#"{"k": 3, "kk": 4}"#).unwrap();
    let o = cli(&["run", "--config", path(&unknown), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kk"), "{}", stderr(&o));

    let broken = tmp.path().join("b.json");
    std::fs::write(&broken, "{").unwrap();
    assert_eq!(
        code(&cli(&[
            "run",
            "--config",
            path(&broken),
            "--out",
            path(tmp.path())
        ])),
        2
    );
    let missing = tmp.path().join("missing.json");
    assert_eq!(
        code(&cli(&[
            "run",
            "--config",
            path(&missing),
            "--out",
            path(tmp.path())
        ])),
        2
    );
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from-env");
    let flag_dir = tmp.path().join("from-flag");
    let args = ["run", "--k", "2", "--size", "32"];

    let o = cli_in(tmp.path(), &args, Some(&env_dir));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env_dir.join("result.json").is_file());

    let mut with_flag = args.to_vec();
    with_flag.extend(["--out", path(&flag_dir)]);
    let o = cli_in(tmp.path(), &with_flag, Some(&env_dir));
    assert_eq!(code(&o), 0);
    assert!(flag_dir.join("result.json").is_file());

    let o = cli_in(tmp.path(), &args, None);
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("countcluster-out/result.json").is_file());
}

#[test]
fn runtime_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = cli(&[
        "run",
        "--k",
        "2",
        "--size",
        "32",
        "--out",
        path(&blocker.join("sub")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
