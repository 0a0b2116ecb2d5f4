use std::fs;
use std::path::Path;

use caeigen::autotune::{solver_runner, tune, TuneSpace, TuneStep};
use caeigen::dense::{accuracy, frank_eigenvalues, frank_matrix, AccuracyReport, DenseMatrix};
use caeigen::procgrid::GridShape;
use caeigen::report::{BenchReport, BreakdownRow, RunReport};
use caeigen::solver::{solve, SolveConfig};
use caeigen::{Error, Result};
use serde::Serialize;

use crate::args::{
    parse_gather, parse_list, parse_shape, BenchArgs, MatrixArgs, MatrixKind, SolveArgs, TuneArgs, VariantArgs,
    VerifyArgs,
};

pub const EVAL_BOUND: f64 = 1e-10;
pub const ORTH_BOUND: f64 = 1e-9;
pub const RESIDUAL_BOUND: f64 = 1e-8;

pub struct Problem {
    pub a: DenseMatrix,
    pub label: String,
    pub exact: Option<Vec<f64>>,
}

pub fn build_problem(kind: MatrixKind, n: Option<usize>, input: Option<&Path>, seed: u64) -> Result<Problem> {
    let order = || match n {
        None => Err(Error::Usage("--n is required for this matrix kind".into())),
        Some(0) => Err(Error::Usage("--n must be at least 1".into())),
        Some(n) => Ok(n),
    };
    Ok(match kind {
        MatrixKind::Frank => {
            let n = order()?;
            Problem {
                a: frank_matrix(n),
                label: "frank".into(),
                exact: Some(frank_eigenvalues(n)),
            }
        }
        MatrixKind::Random => Problem {
            a: DenseMatrix::random_symmetric(order()?, seed),
            label: "random".into(),
            exact: None,
        },
        MatrixKind::Diag => {
            let n = order()?;
            let d: Vec<f64> = (0..n).map(|i| ((i as u64 + seed) % n as u64 + 1) as f64).collect();
            let mut exact = d.clone();
            exact.sort_by(|x, y| y.total_cmp(x));
            Problem {
                a: DenseMatrix::diagonal(&d),
                label: "diag".into(),
                exact: Some(exact),
            }
        }
        MatrixKind::File => {
            let path = input.ok_or_else(|| Error::Usage("--matrix file needs --input PATH".into()))?;
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            Problem {
                a: DenseMatrix::parse(&text)?,
                label: format!("file:{}", path.display()),
                exact: None,
            }
        }
    })
}

fn problem(m: &MatrixArgs) -> Result<Problem> {
    build_problem(m.matrix, m.n, m.input.as_deref(), m.seed)
}

fn config(shape: GridShape, v: &VariantArgs, p: &Problem) -> Result<SolveConfig> {
    Ok(SolveConfig {
        shape,
        trd: v.trd(p.a.order())?,
        hit: v.hit(),
        mems: v.mems(),
        verify: false,
        exact_eigenvalues: p.exact.clone(),
    })
}

fn write_report<T: Serialize>(path: Option<&Path>, report: &T) -> Result<()> {
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn print_rows(title: &str, rows: &[BreakdownRow]) {
    println!("{title:<14} {:>12} {:>8} {:>10} {:>12}", "time [s]", "calls", "messages", "bytes");
    for r in rows {
        let c = &r.counters;
        println!("  {:<12} {:>12.6} {:>8} {:>10} {:>12}", r.name, r.time, c.calls, c.messages, c.bytes);
    }
}

fn print_summary(rep: &RunReport) {
    let m = &rep.meta;
    println!(
        "n = {}  grid = {}x{} (P = {})  matrix = {}  trd = {:?}/{:?} presend {}  hit = {:?} mblk {}",
        m.n, m.p_x, m.p_y, m.p, m.matrix, m.trd.reduce, m.trd.pivot_send, m.trd.presend_limit, m.hit.gather, m.hit.mblk
    );
    print_rows("TRD", &rep.trd);
    println!("SEPT           {:>12.6} messages {}", rep.sept.time, rep.sept.counters.messages);
    print_rows("HIT", &rep.hit);
    println!("total messages {}  bytes {}", rep.comm_total.messages, rep.comm_total.bytes);
}

/// (name, value, bound) for every metric that applies.
pub fn metrics(acc: &AccuracyReport, a: &DenseMatrix, exact: Option<&[f64]>) -> Vec<(&'static str, f64, f64)> {
    let mut out = Vec::new();
    if let (Some(err), Some(exact)) = (acc.max_eval_err, exact) {
        let scale = exact.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        out.push(("max_eval_err", err, EVAL_BOUND * scale));
    }
    out.push(("orth_err", acc.orth_err, ORTH_BOUND));
    out.push(("max_residual", acc.max_residual, RESIDUAL_BOUND * a.norm_fro()));
    out
}

/// Prints each metric, returns false if any is out of bounds.
fn report_metrics(acc: &AccuracyReport, a: &DenseMatrix, exact: Option<&[f64]>) -> bool {
    let mut ok = true;
    for (name, value, bound) in metrics(acc, a, exact) {
        let pass = value <= bound;
        ok &= pass;
        println!("  {name:<13} {value:.3e}  bound {bound:.3e}  {}", if pass { "pass" } else { "FAIL" });
    }
    ok
}

pub fn cmd_solve(args: &SolveArgs) -> Result<bool> {
    let p = problem(&args.matrix)?;
    let mut c = config(args.grid.shape()?, &args.variant, &p)?;
    c.verify = args.verify;
    let r = solve(&p.a, &c)?;
    let seed = (args.matrix.matrix == MatrixKind::Random).then_some(args.matrix.seed);
    let rep = RunReport::from_result(&r, &c, &p.label, seed);
    write_report(args.report.as_deref(), &rep)?;
    print_summary(&rep);
    let mut ok = true;
    if let Some(acc) = &r.accuracy {
        println!("accuracy");
        ok = report_metrics(acc, &p.a, p.exact.as_deref());
    }
    Ok(ok)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<bool> {
    if args.p == 0 {
        return Err(Error::Usage("--p must be at least 1".into()));
    }
    let shapes = match &args.shapes {
        Some(text) => parse_list::<String>("shape", text)?
            .iter()
            .map(|s| parse_shape(s))
            .collect::<Result<Vec<_>>>()?,
        None => GridShape::factor_pairs(args.p),
    };
    if let Some(s) = shapes.iter().find(|s| s.p_total() != args.p) {
        return Err(Error::Usage(format!("shape {s} does not hold {} processes", args.p)));
    }
    let p = problem(&args.matrix)?;
    let seed = (args.matrix.matrix == MatrixKind::Random).then_some(args.matrix.seed);
    let mut rows = Vec::new();
    println!(
        "{:<7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>12}",
        "shape", "SendPiv", "Send yt", "Send xt", "MV Red", "TRD oth", "HIT piv", "messages", "bytes"
    );
    for shape in shapes {
        let c = config(shape, &args.variant, &p)?;
        let r = solve(&p.a, &c)?;
        let rep = RunReport::from_result(&r, &c, &p.label, seed);
        let m: Vec<u64> = rep.trd.iter().map(|row| row.counters.messages).collect();
        println!(
            "{:<7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>12}",
            shape.to_string(),
            m[0],
            m[1],
            m[2],
            m[3],
            m[6],
            rep.hit[0].counters.messages,
            rep.comm_total.messages,
            rep.comm_total.bytes
        );
        rows.push(rep);
    }
    write_report(args.report.as_deref(), &BenchReport::new(rows))?;
    Ok(true)
}

pub fn cmd_tune(args: &TuneArgs) -> Result<bool> {
    let mut space = TuneSpace::default();
    if let Some(text) = &args.mblk_candidates {
        space.mblk = parse_list("mblk", text)?;
    }
    if let Some(text) = &args.gather_candidates {
        space.hit_gather = parse_list::<String>("gather", text)?
            .iter()
            .map(|s| parse_gather(s))
            .collect::<Result<Vec<_>>>()?;
    }
    space.validate()?;
    let p = problem(&args.matrix)?;
    let base = config(args.grid.shape()?, &args.variant, &p)?;
    let result = tune(&space, args.metric.into(), solver_runner(&p.a, &base))?;

    let mut best = base.clone();
    best.trd = result.best.trd.variant(p.a.order())?;
    best.hit = result.best.hit;
    let r = solve(&p.a, &best)?;
    let seed = (args.matrix.matrix == MatrixKind::Random).then_some(args.matrix.seed);
    let rep = RunReport::from_result(&r, &best, &p.label, seed).with_tuning(result.clone());
    write_report(args.report.as_deref(), &rep)?;

    println!("metric {:?}", result.metric);
    for e in &result.trace {
        let step = match e.step {
            TuneStep::TrdReduce => "trd-reduce",
            TuneStep::TrdPivot => "trd-pivot",
            TuneStep::HitMblk => "hit-mblk",
            TuneStep::HitGather => "hit-gather",
        };
        println!("  {step:<11} {:<60} {}", e.config.to_string(), e.cost);
    }
    println!("HIT evaluations: {}", result.hit_evaluations().count());
    println!("best: {}", result.best);
    Ok(true)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let sizes: Vec<usize> = if args.matrix == MatrixKind::File {
        vec![0]
    } else {
        parse_list("size", &args.sizes)?
    };
    let shape = args.grid.shape()?;
    let mut ok = true;
    let mut rows = Vec::new();
    for n in sizes {
        let p = build_problem(args.matrix, Some(n), args.input.as_deref(), args.seed)?;
        let mut c = config(shape, &args.variant, &p)?;
        c.verify = true;
        let mut r = solve(&p.a, &c)?;
        if let Some(delta) = args.perturb {
            for l in &mut r.eigenvalues {
                *l += delta;
            }
            let x = r.gather_eigenvectors()?;
            r.accuracy = Some(accuracy(&p.a, &r.eigenvalues, &x, p.exact.as_deref())?);
        }
        let acc = r.accuracy.expect("verify requested");
        println!("{} n = {} on {shape}", p.label, p.a.order());
        ok &= report_metrics(&acc, &p.a, p.exact.as_deref());
        rows.push(RunReport::from_result(&r, &c, &p.label, None));
    }
    write_report(args.report.as_deref(), &BenchReport::new(rows))?;
    println!("{}", if ok { "verification passed" } else { "verification FAILED" });
    Ok(ok)
}
