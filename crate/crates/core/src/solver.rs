//! The full pipeline: distribute, tridiagonalize, solve the tridiagonal
//! problem, back-transform.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::{accuracy, AccuracyReport, DenseMatrix, TridiagonalMatrix};
use crate::error::{Error, Phase, Result};
use crate::gridcomm::GridComm;
use crate::hit::{hit_distributed, HitTimings, HitVariant};
use crate::msgnet::{spawn_spmd, Comm, CommStats};
use crate::procgrid::GridShape;
use crate::sept::{sept_local, MemsParams};
use crate::trd::{distribute_matrix, trd_distributed, TrdTimings, TrdVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub shape: GridShape,
    pub trd: TrdVariant,
    pub hit: HitVariant,
    pub mems: MemsParams,
    /// Gather `X` and compute the accuracy metrics after the solve.
    pub verify: bool,
    /// Known spectrum (descending) for the eigenvalue error metric.
    pub exact_eigenvalues: Option<Vec<f64>>,
}

impl SolveConfig {
    pub fn new(shape: GridShape) -> Self {
        SolveConfig {
            shape,
            trd: TrdVariant::reference(),
            hit: HitVariant::default(),
            mems: MemsParams::default(),
            verify: false,
            exact_eigenvalues: None,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.trd.validate(n)?;
        self.hit.validate()?;
        self.mems.validate()?;
        if let Some(e) = &self.exact_eigenvalues {
            if e.len() != n {
                return Err(Error::Config(format!("{} reference eigenvalues for order {n}", e.len())));
            }
        }
        Ok(())
    }
}

/// Counters of one rank (or summed over ranks) split by pipeline phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub trd: CommStats,
    /// Check that `T` is replicated bit for bit before the tridiagonal solve.
    pub replication: CommStats,
    pub sept: CommStats,
    pub hit: CommStats,
}

impl PhaseStats {
    pub fn total(&self) -> CommStats {
        CommStats::merged([&self.trd, &self.replication, &self.sept, &self.hit])
    }

    pub fn merged<'a>(all: impl IntoIterator<Item = &'a PhaseStats>) -> PhaseStats {
        let mut out = PhaseStats::default();
        for p in all {
            out.trd.merge(&p.trd);
            out.replication.merge(&p.replication);
            out.sept.merge(&p.sept);
            out.hit.merge(&p.hit);
        }
        out
    }
}

/// What one rank returns from an embedded solve.
#[derive(Debug, Clone)]
pub struct RankOutput {
    pub rank: usize,
    /// Full spectrum, descending (replicated).
    pub eigenvalues: Vec<f64>,
    pub t: TridiagonalMatrix,
    pub indices: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
    pub stats: PhaseStats,
    pub trd_timings: TrdTimings,
    pub sept_time: f64,
    pub hit_timings: HitTimings,
}

/// Eigenvector columns held by one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenShard {
    pub rank: usize,
    /// Global column indices (0-based).
    pub indices: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub n: usize,
    pub shape: GridShape,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub shards: Vec<EigenShard>,
    pub accuracy: Option<AccuracyReport>,
    /// Per-rank phase counters, indexed by rank.
    pub rank_stats: Vec<PhaseStats>,
    /// Per-category maximum over ranks.
    pub trd_timings: TrdTimings,
    pub sept_time: f64,
    pub hit_timings: HitTimings,
    pub t: TridiagonalMatrix,
}

impl EigenResult {
    pub fn stats(&self) -> PhaseStats {
        PhaseStats::merged(&self.rank_stats)
    }

    /// Assembles the dense eigenvector matrix from the shards.
    pub fn gather_eigenvectors(&self) -> Result<DenseMatrix> {
        gather_eigenvectors(self.n, &self.shards)
    }
}

pub fn gather_eigenvectors(n: usize, shards: &[EigenShard]) -> Result<DenseMatrix> {
    let mut cols: Vec<Option<Vec<f64>>> = vec![None; n];
    for s in shards {
        for (&j, c) in s.indices.iter().zip(&s.columns) {
            if j >= n || c.len() != n {
                return Err(Error::Dimension(format!("shard of rank {} holds column {j} of length {}", s.rank, c.len())));
            }
            cols[j] = Some(c.clone());
        }
    }
    let cols = cols
        .into_iter()
        .enumerate()
        .map(|(j, c)| c.ok_or_else(|| Error::Dimension(format!("no shard holds eigenvector column {}", j + 1))))
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_columns(&cols)
}

/// Every rank holds bit-identical `T`, or the run fails.
fn check_replication(world: &mut Comm, t: &TridiagonalMatrix) -> Result<()> {
    let h = t.bit_hash();
    let mine = [(h >> 32) as f64, (h & 0xffff_ffff) as f64];
    let root = world.bcast(0, &mine)?;
    let mismatch = if root[..] == mine[..] { 0.0 } else { 1.0 };
    let bad = world.allreduce_sum(&[mismatch])?[0];
    if bad != 0.0 {
        return Err(Error::Protocol(format!("tridiagonal matrix differs on {bad} ranks")));
    }
    Ok(())
}

/// Embedded mode: collective call made by every rank of `world`, each
/// passing the same `a`.
pub fn solve_rank(world: &mut Comm, a: &DenseMatrix, config: &SolveConfig) -> Result<RankOutput> {
    let n = a.order();
    config.validate(n).map_err(|e| e.in_phase(Phase::Distribute))?;
    let rank = world.rank();
    let p = config.shape.p_total();
    let mut gc = GridComm::new(world, config.shape).map_err(|e| e.in_phase(Phase::Distribute))?;
    let local = distribute_matrix(a, &gc.grid);

    let mark = gc.world.stats();
    let trd = trd_distributed(&mut gc, local, &config.trd).map_err(|e| e.in_phase(Phase::Trd))?;
    let after_trd = gc.world.stats();

    check_replication(gc.world, &trd.t).map_err(|e| e.in_phase(Phase::Sept))?;
    let before_sept = gc.world.stats();
    let clock = Instant::now();
    let pairs = sept_local(&trd.t, &config.mems, rank, p).map_err(|e| e.in_phase(Phase::Sept))?;
    let sept_time = clock.elapsed().as_secs_f64();
    let after_sept = gc.world.stats();

    let hit = hit_distributed(&mut gc, &trd.factors, &pairs, &config.hit).map_err(|e| e.in_phase(Phase::Hit))?;
    let end = gc.world.stats();

    Ok(RankOutput {
        rank,
        eigenvalues: pairs.all_values,
        t: trd.t,
        indices: hit.indices,
        columns: hit.columns,
        stats: PhaseStats {
            trd: after_trd.since(&mark),
            replication: before_sept.since(&after_trd),
            sept: after_sept.since(&before_sept),
            hit: end.since(&after_sept),
        },
        trd_timings: trd.timings,
        sept_time,
        hit_timings: hit.timings,
    })
}

fn max_trd(a: TrdTimings, b: &TrdTimings) -> TrdTimings {
    TrdTimings {
        send_piv: a.send_piv.max(b.send_piv),
        send_yt: a.send_yt.max(b.send_yt),
        send_xt: a.send_xt.max(b.send_xt),
        matvec_reduce: a.matvec_reduce.max(b.matvec_reduce),
        matvec: a.matvec.max(b.matvec),
        update: a.update.max(b.update),
        other: a.other.max(b.other),
    }
}

fn max_hit(a: HitTimings, b: &HitTimings) -> HitTimings {
    HitTimings {
        send_piv: a.send_piv.max(b.send_piv),
        hit_ker: a.hit_ker.max(b.hit_ker),
        other: a.other.max(b.other),
    }
}

/// Harness mode: spawns `P_x * P_y` processes and solves `a`.
pub fn solve(a: &DenseMatrix, config: &SolveConfig) -> Result<EigenResult> {
    let n = a.order();
    if n == 0 {
        return Err(Error::Usage("matrix order must be at least 1".into()).in_phase(Phase::Distribute));
    }
    a.check_symmetric().map_err(|e| e.in_phase(Phase::Distribute))?;
    config.validate(n).map_err(|e| e.in_phase(Phase::Distribute))?;

    let out = spawn_spmd(config.shape.p_total(), |w| solve_rank(w, a, config))?;
    let mut ranks = out.results;
    ranks.sort_by_key(|r| r.rank);
    let first = &ranks[0];
    let eigenvalues = first.eigenvalues.clone();
    let t = first.t.clone();
    let trd_timings = ranks.iter().map(|r| &r.trd_timings).fold(TrdTimings::default(), max_trd);
    let hit_timings = ranks.iter().map(|r| &r.hit_timings).fold(HitTimings::default(), max_hit);
    let sept_time = ranks.iter().map(|r| r.sept_time).fold(0.0, f64::max);
    let rank_stats = ranks.iter().map(|r| r.stats.clone()).collect();
    let shards: Vec<EigenShard> = ranks
        .into_iter()
        .map(|r| EigenShard {
            rank: r.rank,
            indices: r.indices,
            columns: r.columns,
        })
        .collect();

    let mut result = EigenResult {
        n,
        shape: config.shape,
        eigenvalues,
        shards,
        accuracy: None,
        rank_stats,
        trd_timings,
        sept_time,
        hit_timings,
        t,
    };
    if config.verify {
        let x = result.gather_eigenvectors().map_err(|e| e.in_phase(Phase::Verify))?;
        let report = accuracy(a, &result.eigenvalues, &x, config.exact_eigenvalues.as_deref())
            .map_err(|e| e.in_phase(Phase::Verify))?;
        result.accuracy = Some(report);
    }
    Ok(result)
}
