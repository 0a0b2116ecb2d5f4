//! Machine-readable run reports.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::autotune::TuneResult;
use crate::dense::AccuracyReport;
use crate::hit::HitVariant;
use crate::msgnet::{Category, CommStats, Counters};
use crate::sept::MemsParams;
use crate::solver::{EigenResult, PhaseStats, SolveConfig};
use crate::trd::TrdVariant;

pub const SCHEMA: &str = "caeigen-run-report";
pub const SCHEMA_VERSION: u32 = 1;

pub const TRD_CATEGORIES: [&str; 7] = ["Send Piv", "Send yt", "Send xt", "MatVec Reduce", "Matvec", "Update", "Other"];
pub const HIT_CATEGORIES: [&str; 3] = ["Send Piv", "HIT Ker", "Other"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub p: usize,
    pub p_x: usize,
    pub p_y: usize,
    pub matrix: String,
    pub seed: Option<u64>,
    pub trd: TrdVariant,
    pub hit: HitVariant,
    pub mems: MemsParams,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// One named row of a phase breakdown. Time is the slowest rank's,
/// counters are summed over ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub name: String,
    pub time: f64,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeptSummary {
    pub time: f64,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: u32,
    pub meta: RunMeta,
    pub trd: Vec<BreakdownRow>,
    pub sept: SeptSummary,
    pub hit: Vec<BreakdownRow>,
    /// Summed over ranks, by phase.
    pub comm: PhaseStats,
    pub comm_total: Counters,
    pub eigenvalues: Vec<f64>,
    pub accuracy: Option<AccuracyReport>,
    pub tuning: Option<TuneResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub version: u32,
    /// One run per grid shape.
    pub rows: Vec<RunReport>,
}

impl BenchReport {
    pub fn new(rows: Vec<RunReport>) -> Self {
        BenchReport {
            schema: format!("{SCHEMA}-bench"),
            version: SCHEMA_VERSION,
            rows,
        }
    }
}

fn row(name: &str, time: f64, counters: Counters) -> BreakdownRow {
    BreakdownRow {
        name: name.to_string(),
        time,
        counters,
    }
}

fn rest(stats: &CommStats, named: &[Category]) -> Counters {
    Category::ALL
        .iter()
        .filter(|c| !named.contains(c))
        .map(|&c| stats.category(c))
        .fold(Counters::default(), |a, b| a + b)
}

fn trd_rows(r: &EigenResult, s: &CommStats) -> Vec<BreakdownRow> {
    let t = &r.trd_timings;
    let named = [Category::PivotTrd, Category::SendYt, Category::SendXt, Category::MatvecReduce];
    vec![
        row("Send Piv", t.send_piv, s.category(Category::PivotTrd)),
        row("Send yt", t.send_yt, s.category(Category::SendYt)),
        row("Send xt", t.send_xt, s.category(Category::SendXt)),
        row("MatVec Reduce", t.matvec_reduce, s.category(Category::MatvecReduce)),
        row("Matvec", t.matvec, Counters::default()),
        row("Update", t.update, Counters::default()),
        row("Other", t.other, rest(s, &named)),
    ]
}

fn hit_rows(r: &EigenResult, s: &CommStats) -> Vec<BreakdownRow> {
    let h = &r.hit_timings;
    vec![
        row("Send Piv", h.send_piv, s.category(Category::GatherHit)),
        row("HIT Ker", h.hit_ker, Counters::default()),
        row("Other", h.other, rest(s, &[Category::GatherHit])),
    ]
}

impl RunReport {
    pub fn from_result(r: &EigenResult, config: &SolveConfig, matrix: &str, seed: Option<u64>) -> Self {
        let comm = r.stats();
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunReport {
            schema: SCHEMA.to_string(),
            version: SCHEMA_VERSION,
            meta: RunMeta {
                n: r.n,
                p: r.shape.p_total(),
                p_x: r.shape.p_x,
                p_y: r.shape.p_y,
                matrix: matrix.to_string(),
                seed,
                trd: config.trd,
                hit: config.hit,
                mems: config.mems,
                timestamp,
            },
            trd: trd_rows(r, &comm.trd),
            sept: SeptSummary {
                time: r.sept_time,
                counters: comm.sept.total(),
            },
            hit: hit_rows(r, &comm.hit),
            comm_total: comm.total().total(),
            comm,
            eigenvalues: r.eigenvalues.clone(),
            accuracy: r.accuracy,
            tuning: None,
        }
    }

    pub fn with_tuning(mut self, t: TuneResult) -> Self {
        self.tuning = Some(t);
        self
    }

    pub fn row(&self, phase_rows: &[BreakdownRow], name: &str) -> Option<Counters> {
        phase_rows.iter().find(|r| r.name == name).map(|r| r.counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::frank_matrix;
    use crate::procgrid::GridShape;
    use crate::solver::solve;

    #[test]
    fn rows_account_for_every_message() {
        let a = frank_matrix(12);
        let config = SolveConfig::new(GridShape::new(2, 2).unwrap());
        let r = solve(&a, &config).unwrap();
        let rep = RunReport::from_result(&r, &config, "frank", None);
        let names: Vec<_> = rep.trd.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, TRD_CATEGORIES);
        let names: Vec<_> = rep.hit.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, HIT_CATEGORIES);

        let sum = |rows: &[BreakdownRow]| rows.iter().fold(Counters::default(), |a, r| a + r.counters);
        assert_eq!(sum(&rep.trd), rep.comm.trd.total());
        assert_eq!(sum(&rep.hit), rep.comm.hit.total());
        let all = sum(&rep.trd) + sum(&rep.hit) + rep.sept.counters + rep.comm.replication.total();
        assert_eq!(all, rep.comm_total);
        assert!(rep.row(&rep.trd, "Send Piv").unwrap().messages > 0);
    }
}
