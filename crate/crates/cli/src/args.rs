use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use caeigen::autotune::CostMetric;
use caeigen::hit::{Gather, HitVariant};
use caeigen::procgrid::GridShape;
use caeigen::sept::MemsParams;
use caeigen::trd::{PivotSend, ReduceImpl, TrdVariant};
use caeigen::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "caeigen", version, about = "Distributed symmetric eigensolver on a simulated process grid")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one eigenproblem and optionally verify it.
    Solve(SolveArgs),
    /// Run the same problem on several grid shapes of P processes.
    Bench(BenchArgs),
    /// Search communication variants and blocking factors.
    Tune(TuneArgs),
    /// Check accuracy bounds over one or more sizes.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixKind {
    Frank,
    File,
    Random,
    /// Diagonal with entries 1..n in a seeded order.
    Diag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReduceArg {
    Tree,
    Allreduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PivotArg {
    Blocking,
    Nonblocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GatherArg {
    Bcast,
    Isend,
    BlockBcast,
}

impl From<GatherArg> for Gather {
    fn from(g: GatherArg) -> Gather {
        match g {
            GatherArg::Bcast => Gather::PerVectorBcast,
            GatherArg::Isend => Gather::NonBlockingSend,
            GatherArg::BlockBcast => Gather::BlockBcast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Messages,
    Bytes,
    Time,
}

impl From<MetricArg> for CostMetric {
    fn from(m: MetricArg) -> CostMetric {
        match m {
            MetricArg::Messages => CostMetric::MessageCount,
            MetricArg::Bytes => CostMetric::ByteVolume,
            MetricArg::Time => CostMetric::WallTime,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    /// Matrix order (ignored for --matrix file).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "frank")]
    pub matrix: MatrixKind,
    /// Matrix file: order on the first line, then one row per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct VariantArgs {
    #[arg(long = "trd-reduce", value_enum, default_value = "allreduce")]
    pub trd_reduce: ReduceArg,
    #[arg(long = "trd-pivot", value_enum, default_value = "nonblocking")]
    pub trd_pivot: PivotArg,
    /// Fraction of reduction steps that pre-send the next pivot column.
    #[arg(long = "presend-frac", default_value_t = 0.25)]
    pub presend_frac: f64,
    #[arg(long = "hit-gather", value_enum, default_value = "block-bcast")]
    pub hit_gather: GatherArg,
    #[arg(long, default_value_t = 128)]
    pub mblk: usize,
    #[arg(long, default_value_t = 2)]
    pub ml: usize,
    #[arg(long, default_value_t = 75)]
    pub el: usize,
    /// Absolute bisection tolerance (default scales with the matrix norm).
    #[arg(long)]
    pub tol: Option<f64>,
}

impl VariantArgs {
    pub fn trd(&self, n: usize) -> Result<TrdVariant> {
        let reduce = match self.trd_reduce {
            ReduceArg::Tree => ReduceImpl::BinaryTree,
            ReduceArg::Allreduce => ReduceImpl::Allreduce,
        };
        match self.trd_pivot {
            PivotArg::Blocking => Ok(TrdVariant {
                pivot_send: PivotSend::Blocking,
                presend_limit: 0,
                reduce,
            }),
            PivotArg::Nonblocking => TrdVariant::presend(self.presend_frac, n, reduce)
                .map_err(|e| Error::Usage(e.to_string())),
        }
    }

    pub fn hit(&self) -> HitVariant {
        HitVariant {
            gather: self.hit_gather.into(),
            mblk: self.mblk,
        }
    }

    pub fn mems(&self) -> MemsParams {
        MemsParams {
            ml: self.ml,
            el: self.el,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1)]
    pub px: usize,
    #[arg(long, default_value_t = 1)]
    pub py: usize,
}

impl GridArgs {
    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.px, self.py).map_err(|e| Error::Usage(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub matrix: MatrixArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Gather X and check the accuracy bounds; exit 1 if any is exceeded.
    #[arg(long)]
    pub verify: bool,
    /// Write the JSON run report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub matrix: MatrixArgs,
    /// Total process count; every factor pair is run unless --shapes is given.
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    /// Comma-separated shapes such as `1x4,2x2`.
    #[arg(long)]
    pub shapes: Option<String>,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub matrix: MatrixArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long, value_enum, default_value = "messages")]
    pub metric: MetricArg,
    /// Comma-separated blocking factors to search (default: the standard 14).
    #[arg(long = "mblk-candidates")]
    pub mblk_candidates: Option<String>,
    /// Comma-separated gather implementations to search.
    #[arg(long = "gather-candidates")]
    pub gather_candidates: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated matrix orders.
    #[arg(long, default_value = "100")]
    pub sizes: String,
    #[arg(long, value_enum, default_value = "frank")]
    pub matrix: MatrixKind,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Test hook: add this to every computed eigenvalue before checking.
    #[arg(long = "perturb-eigenvalues", hide = true)]
    pub perturb: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Usage(format!("empty {what} list")));
    }
    items
        .into_iter()
        .map(|s| s.parse().map_err(|_| Error::Usage(format!("bad {what} entry '{s}'"))))
        .collect()
}

pub fn parse_shape(text: &str) -> Result<GridShape> {
    let bad = || Error::Usage(format!("bad grid shape '{text}', expected PXxPY"));
    let (x, y) = text.split_once('x').ok_or_else(bad)?;
    let x = x.trim().parse().map_err(|_| bad())?;
    let y = y.trim().parse().map_err(|_| bad())?;
    GridShape::new(x, y).map_err(|e| Error::Usage(e.to_string()))
}

pub fn parse_gather(text: &str) -> Result<Gather> {
    GatherArg::from_str(text.trim(), true)
        .map(Gather::from)
        .map_err(|_| Error::Usage(format!("bad gather '{text}'")))
}
