use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gwalk_core::{decompose, DiffusionOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn gwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwalk")).args(args).output().expect("failed to launch gwalk")
}

fn ok(args: &[&str]) {
    let out = gwalk(args);
    assert!(out.status.success(), "gwalk {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn circle_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let th: f64 = r.random_range(-PI..PI);
            (th.cos(), th.sin())
        })
        .collect()
}

/// Points on the circle with labels leaning towards 1 near angle 0.
fn write_dataset(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let pts = circle_points(n, seed);
    let mut r = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut points = String::from("x,y\n");
    let mut labels = String::new();
    for &(x, y) in &pts {
        points.push_str(&format!("{x},{y}\n"));
        let q = 0.5 + 0.45 * x;
        labels.push_str(if r.random::<f64>() < q { "1\n" } else { "0\n" });
    }
    let (p, z) = (dir.join("points.csv"), dir.join("labels.csv"));
    fs::write(&p, points).unwrap();
    fs::write(&z, labels).unwrap();
    (p, z)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn pairs(report: &Value) -> HashSet<(u64, u64)> {
    report["rejections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["i"].as_u64().unwrap(), r["t"].as_u64().unwrap()))
        .collect()
}

#[test]
fn operator_round_trips_through_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (points, _) = write_dataset(dir.path(), 80, 1);
    let bin = dir.path().join("g.bin");
    let json = dir.path().join("g.json");
    for out in [&bin, &json] {
        ok(&["build-graph", "--points", path(&points), "--gaussian", "0.05", "--out", path(out)]);
    }
    let a = DiffusionOperator::load(&bin).unwrap();
    let b = DiffusionOperator::load(&json).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.components(), b.components());
    let (sa, sb) = (decompose(&a).unwrap(), decompose(&b).unwrap());
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.values(), y.values());
    }
}

#[test]
fn malformed_kernel_exits_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let coo = dir.path().join("k.csv");
    fs::write(&coo, "i,j,value\n0,1,1.0\n1,0,1.0\n1,2,abc\n").unwrap();
    let out = gwalk(&["build-graph", "--coo", path(&coo), "--out", path(&dir.path().join("g.bin"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k.csv:4"), "{err}");
}

#[test]
fn missing_input_and_unscalable_kernel_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gwalk(&["build-graph", "--coo", "/nonexistent/k.csv", "--out", path(&dir.path().join("g"))]);
    assert_eq!(out.status.code(), Some(3));
    // A single one-way edge vanishes under geometric symmetrization.
    let coo = dir.path().join("k.csv");
    fs::write(&coo, "0,1,1\n").unwrap();
    let out = gwalk(&["build-graph", "--coo", path(&coo), "--out", path(&dir.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));
}

/// Components of the symmetric kNN graph by union-find over all pairs.
fn knn_components(pts: &[(f64, f64)], k: usize) -> usize {
    let n = pts.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &d[..k] {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a] = b;
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

#[test]
fn knn_graph_on_circle_is_connected() {
    let dir = tempfile::tempdir().unwrap();
    let (points, _) = write_dataset(dir.path(), 100, 7);
    let out = dir.path().join("g.bin");
    ok(&["build-graph", "--points", path(&points), "--knn", "5", "--out", path(&out)]);
    let op = DiffusionOperator::load(&out).unwrap();
    assert_eq!(knn_components(&circle_points(100, 7), 5), 1);
    assert_eq!(op.components().len(), 1);
    assert_eq!(op.n(), 100);
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    graph: PathBuf,
    labels: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (points, labels) = write_dataset(&root, 300, 3);
    let graph = root.join("g.bin");
    ok(&["build-graph", "--points", path(&points), "--gaussian", "0.03", "--out", path(&graph)]);
    Fixture { _dir: dir, root, graph, labels }
}

fn test_args<'a>(f: &'a Fixture, out: &'a Path, prior: &'a str) -> Vec<&'a str> {
    vec!["test", "--graph", path(&f.graph), "--labels", path(&f.labels), "--prior", prior, "--out", path(out)]
}

#[test]
fn unknown_prior_is_more_conservative() {
    let f = fixture();
    let (known, unknown) = (f.root.join("known.json"), f.root.join("unknown.json"));
    ok(&test_args(&f, &known, "0.5"));
    ok(&test_args(&f, &unknown, "unknown"));
    let (k, u) = (read_json(&known), read_json(&unknown));
    assert!(u["threshold"].as_f64().unwrap() > k["threshold"].as_f64().unwrap());
    assert_eq!(u["config"]["alpha_effective"].as_f64(), Some(0.025));
    assert!(u["p_used"].as_f64().unwrap() >= 0.5, "fixture should give an upper bound above 0.5");
    assert!(!pairs(&k).is_empty(), "{k}");
    // Compare at the same epsilon so the nets coincide.
    let eps = k["config"]["epsilon"].as_f64().unwrap().to_string();
    let mut args = test_args(&f, &unknown, "unknown");
    args.extend(["--epsilon", &eps]);
    ok(&args);
    let u = read_json(&unknown);
    assert_eq!(u["total_hypotheses"], k["total_hypotheses"]);
    assert!(pairs(&u).is_subset(&pairs(&k)));
}

#[test]
fn both_directions_write_two_reports() {
    let f = fixture();
    let out = f.root.join("report.json");
    let dumps = f.root.join("dist");
    let mut args = test_args(&f, &out, "0.5");
    args.extend(["--direction", "both", "--dump-distributions", path(&dumps), "--dump-top", "2"]);
    ok(&args);
    assert!(!out.exists());
    let g = read_json(&f.root.join("report.greater.json"));
    let l = read_json(&f.root.join("report.less.json"));
    assert_eq!(g["config"]["direction"], "greater");
    assert_eq!(l["config"]["direction"], "less");
    assert_eq!(g["threshold"], l["threshold"]);
    let files: Vec<String> = fs::read_dir(&dumps).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    let expect = g["rejections"].as_array().unwrap().len().min(2) + l["rejections"].as_array().unwrap().len().min(2);
    assert_eq!(files.len(), expect);
    for name in files {
        let text = fs::read_to_string(dumps.join(&name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node_id,probability"));
        let total: f64 = lines.map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{name}: mass {total}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let f = fixture();
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        let out = f.root.join(format!("r{}.json", outputs.len()));
        let mut args = test_args(&f, &out, "unknown");
        args.extend(["--threads", threads]);
        ok(&args);
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn label_count_mismatch_exits_with_4() {
    let f = fixture();
    let short = f.root.join("short.csv");
    fs::write(&short, "1\n0\n1\n").unwrap();
    let out = f.root.join("r.json");
    let res = gwalk(&["test", "--graph", path(&f.graph), "--labels", path(&short), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn scan_dump_covers_every_hypothesis() {
    let f = fixture();
    let (report, scan) = (f.root.join("r.json"), f.root.join("scan.csv"));
    ok(&test_args(&f, &report, "0.5"));
    ok(&["dump", "scan", "--graph", path(&f.graph), "--labels", path(&f.labels), "--prior", "0.5", "--out", path(&scan)]);
    let r = read_json(&report);
    let text = fs::read_to_string(&scan).unwrap();
    assert_eq!(text.lines().count() as u64 - 1, r["total_hypotheses"].as_u64().unwrap());
    let positive = text.lines().skip(1).filter(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() > 0.0).count();
    assert_eq!(positive as u64, r["total_rejections"].as_u64().unwrap());

    let first = &r["rejections"][0];
    let dist = f.root.join("w.csv");
    let t = first["t"].as_u64().unwrap().to_string();
    ok(&["dump", "distribution", "--graph", path(&f.graph), "--node", first["node_id"].as_str().unwrap(), "--t", &t, "--out", path(&dist)]);
    assert_eq!(fs::read_to_string(&dist).unwrap().lines().count(), 301);
}

#[test]
fn tune_eps_regenerates_reference_cells() {
    let out = gwalk(&["tune-eps", "--n", "1000,10000,1000000", "--alpha", "0.1,0.01,0.001", "--gap", "0.1,1e-6,1e-16"]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(&out.stdout[..]);
    let rows: Vec<(f64, f64, f64, f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 27);
    for (n, alpha, gap, eps, h) in [(1e3, 0.1, 0.1, 0.0083, 2.647), (1e6, 1e-3, 1e-16, 0.1097, 4.670), (1e4, 0.01, 1e-6, 0.0044, 3.898)] {
        let row = rows.iter().find(|r| r.0 == n && r.1 == alpha && r.2 == gap).unwrap();
        assert!((row.4 - h).abs() <= 0.005, "{row:?}");
        assert!((row.3 / eps - 1.0).abs() < 0.3, "{row:?}");
    }
}

#[test]
fn simulate_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    ok(&[
        "simulate", "circle", "--n", "120", "--b", "0,0.5", "--trials", "3", "--epsilon", "0.05", "--seed", "5",
        "--out", path(&grid),
    ]);
    let text = fs::read_to_string(&grid).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,b,omega,reject_rate,mean_tv_error,mean_best_statistic,gamma_theory"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1], rows[1][1]), (0.0, 0.5));
    assert!(rows.iter().all(|r| r[0] == 120.0 && (0.0..=1.0).contains(&r[3])));
}

#[test]
fn version_reports_build_hash() {
    let out = gwalk(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("gwalk ") && text.contains("(build "), "{text}");
}

#[test]
fn usage_errors_do_not_use_the_unscalable_code() {
    let out = gwalk(&["test", "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(1));
}
