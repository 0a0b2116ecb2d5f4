//! Ad hoc search over the communication variants: a TRD sweep followed by
//! the three-step HIT recipe (blocking factor first, then implementation).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::hit::{Gather, HitVariant};
use crate::msgnet::CommStats;
use crate::procgrid::GridShape;
use crate::solver::{solve, SolveConfig};
use crate::trd::{PivotSend, ReduceImpl, TrdVariant};

pub const MBLK_CANDIDATES: [usize; 14] = [1, 2, 4, 8, 12, 16, 32, 48, 56, 64, 80, 96, 112, 128];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "frac")]
pub enum PivotChoice {
    Blocking,
    /// Pre-send for the first `floor(frac * (n - 2))` steps.
    Presend(f64),
}

impl fmt::Display for PivotChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PivotChoice::Blocking => f.write_str("blocking"),
            PivotChoice::Presend(x) => write!(f, "presend({x})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrdChoice {
    pub reduce: ReduceImpl,
    pub pivot: PivotChoice,
}

impl TrdChoice {
    pub fn variant(&self, n: usize) -> Result<TrdVariant> {
        match self.pivot {
            PivotChoice::Blocking => Ok(TrdVariant {
                pivot_send: PivotSend::Blocking,
                presend_limit: 0,
                reduce: self.reduce,
            }),
            PivotChoice::Presend(frac) => TrdVariant::presend(frac, n, self.reduce),
        }
    }
}

/// One point of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub trd: TrdChoice,
    pub hit: HitVariant,
}

impl fmt::Display for TuneConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reduce={:?} pivot={} gather={:?} mblk={}",
            self.trd.reduce, self.trd.pivot, self.hit.gather, self.hit.mblk
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSpace {
    pub trd_reduce: Vec<ReduceImpl>,
    pub trd_pivot: Vec<PivotChoice>,
    pub hit_gather: Vec<Gather>,
    pub mblk: Vec<usize>,
    /// Gather used while sweeping `mblk`.
    pub mblk_probe_gather: Gather,
}

impl Default for TuneSpace {
    fn default() -> Self {
        TuneSpace {
            trd_reduce: vec![ReduceImpl::BinaryTree, ReduceImpl::Allreduce],
            trd_pivot: vec![
                PivotChoice::Blocking,
                PivotChoice::Presend(0.0),
                PivotChoice::Presend(0.25),
                PivotChoice::Presend(0.5),
                PivotChoice::Presend(1.0),
            ],
            hit_gather: Gather::ALL.to_vec(),
            mblk: MBLK_CANDIDATES.to_vec(),
            // per-vector broadcast makes every mblk cost the same message count
            mblk_probe_gather: Gather::BlockBcast,
        }
    }
}

impl TuneSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("trd_reduce", self.trd_reduce.is_empty()),
            ("trd_pivot", self.trd_pivot.is_empty()),
            ("hit_gather", self.hit_gather.is_empty()),
            ("mblk", self.mblk.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Usage(format!("empty candidate list: {name}")));
        }
        if self.mblk.contains(&0) {
            return Err(Error::Usage("mblk candidate 0".into()));
        }
        for p in &self.trd_pivot {
            if let PivotChoice::Presend(f) = p {
                if !(0.0..=1.0).contains(f) {
                    return Err(Error::Usage(format!("presend fraction {f} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    WallTime,
    #[default]
    MessageCount,
    ByteVolume,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub wall_time: f64,
    pub messages: u64,
    pub bytes: u64,
}

impl PhaseCost {
    pub fn from_stats(stats: &CommStats, wall_time: f64) -> Self {
        let t = stats.total();
        PhaseCost {
            wall_time,
            messages: t.messages,
            bytes: t.bytes,
        }
    }

    pub fn value(&self, metric: CostMetric) -> f64 {
        match metric {
            CostMetric::WallTime => self.wall_time,
            CostMetric::MessageCount => self.messages as f64,
            CostMetric::ByteVolume => self.bytes as f64,
        }
    }
}

/// What a runner reports for one configuration. TRD steps are scored on
/// `trd`, HIT steps on `hit`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCost {
    pub trd: PhaseCost,
    pub hit: PhaseCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneStep {
    TrdReduce,
    TrdPivot,
    HitMblk,
    HitGather,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: TuneStep,
    pub config: TuneConfig,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub metric: CostMetric,
    pub best: TuneConfig,
    pub best_trd_cost: f64,
    pub best_hit_cost: f64,
    /// Every evaluation in the order performed.
    pub trace: Vec<Evaluation>,
}

impl TuneResult {
    pub fn hit_evaluations(&self) -> impl Iterator<Item = &Evaluation> {
        self.trace
            .iter()
            .filter(|e| matches!(e.step, TuneStep::HitMblk | TuneStep::HitGather))
    }
}

struct Search<'r, R> {
    runner: &'r mut R,
    metric: CostMetric,
    trace: Vec<Evaluation>,
}

impl<R: FnMut(&TuneConfig) -> Result<RunCost>> Search<'_, R> {
    /// First strictly smaller cost wins, so ties go to the earlier candidate.
    fn sweep<T: Copy>(
        &mut self,
        step: TuneStep,
        candidates: &[T],
        make: impl Fn(T) -> TuneConfig,
    ) -> Result<(T, f64)> {
        let mut best: Option<(T, f64)> = None;
        for &c in candidates {
            let config = make(c);
            let run = (self.runner)(&config).map_err(|e| Error::Tuning {
                config: config.to_string(),
                source: Box::new(e),
            })?;
            let phase = match step {
                TuneStep::TrdReduce | TuneStep::TrdPivot => run.trd,
                TuneStep::HitMblk | TuneStep::HitGather => run.hit,
            };
            let cost = phase.value(self.metric);
            self.trace.push(Evaluation { step, config, cost });
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        Ok(best.expect("candidate lists are validated non-empty"))
    }
}

pub fn tune<R>(space: &TuneSpace, metric: CostMetric, mut runner: R) -> Result<TuneResult>
where
    R: FnMut(&TuneConfig) -> Result<RunCost>,
{
    space.validate()?;
    let mut s = Search {
        runner: &mut runner,
        metric,
        trace: Vec::new(),
    };
    let probe_hit = HitVariant {
        gather: Gather::PerVectorBcast,
        mblk: space.mblk[0],
    };

    let pivot0 = space.trd_pivot[0];
    let (reduce, _) = s.sweep(TuneStep::TrdReduce, &space.trd_reduce, |reduce| TuneConfig {
        trd: TrdChoice { reduce, pivot: pivot0 },
        hit: probe_hit,
    })?;
    let (pivot, trd_cost) = s.sweep(TuneStep::TrdPivot, &space.trd_pivot, |pivot| TuneConfig {
        trd: TrdChoice { reduce, pivot },
        hit: probe_hit,
    })?;
    let trd = TrdChoice { reduce, pivot };

    let probe = space.mblk_probe_gather;
    let (mblk, _) = s.sweep(TuneStep::HitMblk, &space.mblk, |mblk| TuneConfig {
        trd,
        hit: HitVariant { gather: probe, mblk },
    })?;
    let (gather, hit_cost) = s.sweep(TuneStep::HitGather, &space.hit_gather, |gather| TuneConfig {
        trd,
        hit: HitVariant { gather, mblk },
    })?;

    Ok(TuneResult {
        metric,
        best: TuneConfig {
            trd,
            hit: HitVariant { gather, mblk },
        },
        best_trd_cost: trd_cost,
        best_hit_cost: hit_cost,
        trace: s.trace,
    })
}

/// Runner that solves `a` on `shape` with `base` settings and the candidate
/// variants, scoring each phase by its summed counters and slowest-rank time.
pub fn solver_runner<'a>(
    a: &'a DenseMatrix,
    base: &'a SolveConfig,
) -> impl FnMut(&TuneConfig) -> Result<RunCost> + 'a {
    move |c| {
        let mut config = base.clone();
        config.verify = false;
        config.trd = c.trd.variant(a.order())?;
        config.hit = c.hit;
        let r = solve(a, &config)?;
        let stats = r.stats();
        let t = &r.trd_timings;
        let h = &r.hit_timings;
        let trd_time = t.send_piv + t.send_yt + t.send_xt + t.matvec_reduce + t.matvec + t.update + t.other;
        Ok(RunCost {
            trd: PhaseCost::from_stats(&stats.trd, trd_time),
            hit: PhaseCost::from_stats(&stats.hit, h.send_piv + h.hit_ker + h.other),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTuning {
    pub shape: GridShape,
    pub result: TuneResult,
}

/// Outer loop over caller-supplied grid shapes. Picks the shape whose best
/// TRD plus HIT cost is smallest, earlier shapes winning ties.
pub fn tune_shapes(
    a: &DenseMatrix,
    base: &SolveConfig,
    shapes: &[GridShape],
    space: &TuneSpace,
    metric: CostMetric,
) -> Result<(usize, Vec<ShapeTuning>)> {
    if shapes.is_empty() {
        return Err(Error::Usage("empty grid shape list".into()));
    }
    let mut out = Vec::with_capacity(shapes.len());
    let mut best = (0, f64::INFINITY);
    for (i, &shape) in shapes.iter().enumerate() {
        let mut config = base.clone();
        config.shape = shape;
        let result = tune(space, metric, solver_runner(a, &config))?;
        let total = result.best_trd_cost + result.best_hit_cost;
        if total < best.1 {
            best = (i, total);
        }
        out.push(ShapeTuning { shape, result });
    }
    Ok((best.0, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::frank_matrix;

    fn hit_only(f: impl Fn(&HitVariant) -> f64) -> impl FnMut(&TuneConfig) -> Result<RunCost> {
        move |c| {
            Ok(RunCost {
                trd: PhaseCost::default(),
                hit: PhaseCost {
                    wall_time: f(&c.hit),
                    ..Default::default()
                },
            })
        }
    }

    #[test]
    fn convex_oracle_picks_sixteen() {
        let r = tune(
            &TuneSpace::default(),
            CostMetric::WallTime,
            hit_only(|h| (h.mblk as f64 - 16.0).abs()),
        )
        .unwrap();
        assert_eq!(r.best.hit.mblk, 16);
        assert_eq!(r.hit_evaluations().count(), 17);
        assert_eq!(r.trace.len(), 2 + 5 + 17);
    }

    #[test]
    fn ties_go_to_first_candidate() {
        let space = TuneSpace::default();
        let r = tune(&space, CostMetric::WallTime, hit_only(|_| 1.0)).unwrap();
        assert_eq!(r.best.trd.reduce, ReduceImpl::BinaryTree);
        assert_eq!(r.best.trd.pivot, PivotChoice::Blocking);
        assert_eq!(r.best.hit, HitVariant { gather: Gather::PerVectorBcast, mblk: 1 });
    }

    #[test]
    fn gather_counter_oracle() {
        // ceil((n - 2) / mblk) * P_x for blocked gathers, (n - 2) * P_x otherwise
        let (n, px) = (130usize, 2usize);
        let r = tune(&TuneSpace::default(), CostMetric::MessageCount, |c| {
            let per = match c.hit.gather {
                Gather::BlockBcast => (n - 2).div_ceil(c.hit.mblk),
                _ => n - 2,
            };
            Ok(RunCost {
                hit: PhaseCost { messages: (per * px) as u64, ..Default::default() },
                ..Default::default()
            })
        })
        .unwrap();
        assert_eq!(r.best.hit, HitVariant { gather: Gather::BlockBcast, mblk: 128 });
        let costs: Vec<f64> = r.trace.iter().filter(|e| e.step == TuneStep::HitMblk).map(|e| e.cost).collect();
        assert_eq!(costs[0], 256.0);
        assert_eq!(*costs.last().unwrap(), 2.0);
    }

    #[test]
    fn best_is_minimal_per_step() {
        let r = tune(&TuneSpace::default(), CostMetric::WallTime, hit_only(|h| {
            ((h.mblk * 7919) % 31) as f64 + h.gather as u8 as f64 * 0.5
        }))
        .unwrap();
        let step2 = r.trace.iter().filter(|e| e.step == TuneStep::HitMblk);
        let min = step2.map(|e| e.cost).fold(f64::INFINITY, f64::min);
        let chosen = r.trace.iter().find(|e| e.step == TuneStep::HitMblk && e.config.hit.mblk == r.best.hit.mblk);
        assert_eq!(chosen.unwrap().cost, min);
        assert!(r.hit_evaluations().filter(|e| e.step == TuneStep::HitGather).all(|e| e.cost >= r.best_hit_cost));
    }

    #[test]
    fn runner_error_names_config() {
        let err = tune(&TuneSpace::default(), CostMetric::MessageCount, |c| {
            if c.hit.mblk == 8 {
                Err(Error::Protocol("boom".into()))
            } else {
                Ok(RunCost::default())
            }
        })
        .unwrap_err();
        match &err {
            Error::Tuning { config, .. } => assert!(config.contains("mblk=8"), "{config}"),
            e => panic!("{e:?}"),
        }
        assert!(matches!(err.root(), Error::Protocol(_)));
    }

    #[test]
    fn empty_candidates_rejected() {
        let mut space = TuneSpace::default();
        space.hit_gather.clear();
        assert!(matches!(tune(&space, CostMetric::MessageCount, |_| Ok(RunCost::default())), Err(Error::Usage(_))));
    }

    #[test]
    fn real_solver_small() {
        let a = frank_matrix(20);
        let base = SolveConfig::new(GridShape::new(2, 2).unwrap());
        let space = TuneSpace {
            mblk: vec![1, 4, 32],
            ..TuneSpace::default()
        };
        let r1 = tune(&space, CostMetric::MessageCount, solver_runner(&a, &base)).unwrap();
        let r2 = tune(&space, CostMetric::MessageCount, solver_runner(&a, &base)).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.best.hit, HitVariant { gather: Gather::BlockBcast, mblk: 32 });
        assert_eq!(r1.best.trd.reduce, ReduceImpl::Allreduce);
    }

    #[test]
    fn shape_loop() {
        let a = frank_matrix(10);
        let base = SolveConfig::new(GridShape::new(1, 1).unwrap());
        let shapes = GridShape::factor_pairs(2);
        let space = TuneSpace { mblk: vec![1, 8], ..TuneSpace::default() };
        let (best, all) = tune_shapes(&a, &base, &shapes, &space, CostMetric::MessageCount).unwrap();
        assert_eq!(all.len(), 2);
        assert!(best < 2);
    }
}
