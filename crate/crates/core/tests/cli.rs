use std::path::Path;
use std::process::{Command, Output};

use rotavg::solver::ResultFile;
use rotavg::viewgraph::ViewGraph;

fn rotavg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotavg"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: u64) -> std::path::PathBuf {
    let graph = dir.join("graph.json");
    let out = rotavg(&["synth", "--seed", &seed.to_string(), "--out", s(&graph)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    graph
}

#[test]
fn average_writes_a_valid_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synth(dir.path(), 3);
    let result = dir.path().join("r.json");
    let out = rotavg(&[
        "average",
        "--in",
        s(&graph),
        "--loss",
        "magsac",
        "--weighting",
        "cov_full",
        "--out",
        s(&result),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let file = ResultFile::load(&result).unwrap();
    let g = ViewGraph::load(&graph).unwrap();
    assert_eq!(file.rotations.len(), g.nodes().len());
    assert_eq!(file.edge_weights.len(), g.edges().len());
    assert!(file.final_cost.is_finite());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rotavg(&["--help"]).status.code(), Some(0));
    assert_eq!(rotavg(&["average", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        rotavg(&["synth", "--noise", "oops", "--out", "x.json"])
            .status
            .code(),
        Some(1)
    );
    let missing = dir.path().join("missing.json");
    let out = rotavg(&[
        "average",
        "--in",
        s(&missing),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_with_disjoint_ids_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synth(dir.path(), 1);
    let g = ViewGraph::load(&graph).unwrap();
    let result = dir.path().join("r.json");
    assert_eq!(
        rotavg(&["average", "--in", s(&graph), "--out", s(&result)])
            .status
            .code(),
        Some(0)
    );
    let mut file = ResultFile::load(&result).unwrap();
    let offset = g.node_ids().max().unwrap() + 1;
    for r in &mut file.rotations {
        r.id += offset;
    }
    file.save(&result).unwrap();
    let out = rotavg(&["evaluate", "--est", s(&result), "--gt", s(&graph)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no node id in common"), "{stderr}");
}

#[test]
fn report_ranks_magsac_with_full_covariance_first() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synth(dir.path(), 7);
    let mut results = Vec::new();
    for loss in ["soft_l1", "magsac"] {
        for weighting in ["none", "inlier_count", "cov_full"] {
            let path = dir.path().join(format!("{loss}_{weighting}.json"));
            let out = rotavg(&[
                "average",
                "--in",
                s(&graph),
                "--loss",
                loss,
                "--weighting",
                weighting,
                "--out",
                s(&path),
            ]);
            assert_eq!(out.status.code(), Some(0));
            results.push(path);
        }
    }
    let csv = dir.path().join("table.csv");
    let mut args = vec!["report", "--gt", s(&graph), "--csv", s(&csv)];
    args.extend(results.iter().map(|p| s(p)));
    let out = rotavg(&args);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{table}");

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "auc_5").unwrap();
    let best = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .max_by(|a, b| {
            a[col]
                .parse::<f64>()
                .unwrap()
                .total_cmp(&b[col].parse().unwrap())
        })
        .unwrap();
    assert_eq!((best[0], best[1]), ("magsac", "cov_full"), "{table}");
}

#[test]
fn repeated_runs_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synth(dir.path(), 5);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let args = [
            "average",
            "--in",
            s(&graph),
            "--out",
            s(out),
            "--threads",
            "1",
        ];
        assert_eq!(rotavg(&args).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
