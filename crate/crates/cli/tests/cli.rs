use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use caeigen::dense::{frank_eigenvalues, frank_matrix};
use caeigen::msgnet::Counters;
use caeigen::procgrid::GridShape;
use caeigen::report::{BenchReport, RunReport, HIT_CATEGORIES, TRD_CATEGORIES};
use caeigen::solver::{solve, SolveConfig};
use caeigen::trd::{ReduceImpl, TrdVariant};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caeigen")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_frank_verified() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let o = run(&["solve", "--n", "100", "--matrix", "frank", "--px", "2", "--py", "2", "--verify", "--report", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let rep: RunReport = read(&path);
    assert_eq!(rep.schema, "caeigen-run-report");
    assert_eq!(rep.version, 1);
    let acc = rep.accuracy.unwrap();
    assert!(acc.max_eval_err.unwrap() <= 1e-10 * frank_eigenvalues(100)[0]);
    let trd: Vec<_> = rep.trd.iter().map(|r| r.name.as_str()).collect();
    let hit: Vec<_> = rep.hit.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(trd, TRD_CATEGORIES);
    assert_eq!(hit, HIT_CATEGORIES);
}

#[test]
fn report_counters_equal_library_totals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let o = run(&["solve", "--n", "37", "--px", "2", "--py", "4", "--trd-pivot", "blocking", "--trd-reduce", "tree", "--report", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let rep: RunReport = read(&path);

    let mut c = SolveConfig::new(GridShape::new(2, 4).unwrap());
    c.trd = TrdVariant { reduce: ReduceImpl::BinaryTree, ..TrdVariant::reference() };
    let r = solve(&frank_matrix(37), &c).unwrap();
    let stats = r.stats();
    assert_eq!(rep.comm, stats);
    assert_eq!(rep.comm_total, stats.total().total());
    let sum = rep.trd.iter().chain(&rep.hit).fold(Counters::default(), |a, r| a + r.counters);
    assert_eq!(sum + rep.sept.counters + stats.replication.total(), rep.comm_total);
    assert_eq!(rep.comm_total.bytes, rep.comm_total.recv_bytes);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["solve", "--n", "0"])), 2);
    assert_eq!(code(&run(&["solve", "--matrix", "random"])), 2);
    assert_eq!(code(&run(&["solve", "--n", "5", "--hit-gather", "carrier-pigeon"])), 2);
    assert_eq!(code(&run(&["solve", "--n", "5", "--mblk", "0"])), 2);
    assert_eq!(code(&run(&["solve", "--n", "5", "--presend-frac", "1.5"])), 2);
    assert_eq!(code(&run(&["solve", "--matrix", "file", "--input", "/nonexistent/a.txt"])), 2);
    assert_eq!(code(&run(&["bench", "--n", "8", "--p", "4", "--shapes", "3x1"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn asymmetric_file_names_worst_pair() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    fs::write(&path, "3\n1 2 3\n2 1 0.5\n0 0.5 1\n").unwrap();
    let o = run(&["solve", "--matrix", "file", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("a[1][3]"), "{err}");
}

#[test]
fn file_matrix_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    fs::write(&path, frank_matrix(9).to_text()).unwrap();
    let o = run(&["solve", "--matrix", "file", "--input", path.to_str().unwrap(), "--px", "2", "--verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn bench_rows_per_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    let o = run(&["bench", "--n", "64", "--p", "4", "--report", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let b: BenchReport = read(&path);
    let shapes: Vec<_> = b.rows.iter().map(|r| (r.meta.p_x, r.meta.p_y)).collect();
    assert_eq!(shapes, vec![(1, 4), (2, 2), (4, 1)]);
    let piv: Vec<u64> = b.rows.iter().map(|r| r.trd[0].counters.messages).collect();
    assert!(piv[0] != piv[1] && piv[1] != piv[2], "{piv:?}");

    let again = dir.path().join("b2.json");
    run(&["bench", "--n", "64", "--p", "4", "--report", again.to_str().unwrap()]);
    let b2: BenchReport = read(&again);
    for (x, y) in b.rows.iter().zip(&b2.rows) {
        assert_eq!(x.comm, y.comm);
    }

    let one = dir.path().join("b1.json");
    assert_eq!(code(&run(&["bench", "--n", "20", "--p", "1", "--report", one.to_str().unwrap()])), 0);
    let b1: BenchReport = read(&one);
    assert_eq!(b1.rows.len(), 1);
    assert_eq!(b1.rows[0].comm_total.messages, 0);
    assert_eq!(b1.rows[0].comm_total.bytes, 0);
}

#[test]
fn tune_selects_largest_block() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("t1.json");
    let p2 = dir.path().join("t2.json");
    let args = |p: &Path| {
        let o = run(&["tune", "--n", "130", "--px", "2", "--py", "2", "--metric", "messages", "--report", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        o
    };
    let o = args(&p1);
    assert!(stdout(&o).contains("HIT evaluations: 17"));
    args(&p2);
    let t1 = read::<RunReport>(&p1).tuning.unwrap();
    let t2 = read::<RunReport>(&p2).tuning.unwrap();
    assert_eq!(t1, t2);
    assert_eq!(t1.best.hit.mblk, 128);
}

#[test]
fn tune_rejects_empty_candidates() {
    assert_eq!(code(&run(&["tune", "--n", "10", "--mblk-candidates", ""])), 2);
    assert_eq!(code(&run(&["tune", "--n", "10", "--gather-candidates", " , "])), 2);
}

#[test]
fn verify_bounds() {
    let o = run(&["verify", "--sizes", "100", "--px", "2", "--py", "2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("orth_err"));

    let o = run(&["verify", "--matrix", "diag", "--sizes", "12,5"]);
    assert_eq!(code(&o), 0);

    let o = run(&["verify", "--sizes", "30", "--perturb-eigenvalues", "1e-6"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.contains("max_eval_err") && l.contains("FAIL")), "{out}");
}
