//! Distributed Householder tridiagonalization on a cyclic-cyclic 2D layout.
//!
//! Each step `k` reduces column `k` (0-based):
//!
//! 1. the owner of column `k` sends its rows of the pivot column along the
//!    row communicator ("Send Piv");
//! 2. the column communicator sums the squared entries, giving every rank
//!    the reflector scalars;
//! 3. each diagonal holder broadcasts its slice of `v` down its column
//!    communicator so every rank has `v` on its columns Γ ("Send yt");
//! 4. local products `A[Π, Γ] v[Γ]` are reduced along rows ("MatVec Reduce");
//! 5. `y` is moved to column layout like `v` ("Send xt");
//! 6. `μ = τ yᵀv` is reduced over the column communicator;
//! 7. the trailing block receives the rank-2 update.
//!
//! Every dot product is accumulated with [`ExactSum`] and rounded once, so
//! `T` and the factors are bit-identical to [`crate::dense::trd_sequential`]
//! on every grid and for every variant.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::{canon, reflector_scalars, DenseMatrix, HouseholderFactorSet, TridiagonalMatrix};
use crate::error::{Error, Result};
use crate::exactsum::{ExactSum, LIMBS};
use crate::gridcomm::GridComm;
use crate::msgnet::{Category, Comm, PendingSend};
use crate::procgrid::ProcessGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotSend {
    Blocking,
    /// Update and post the next pivot column before the rest of the
    /// trailing update, for the first `presend_limit` steps.
    NonBlockingPresend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceImpl {
    Allreduce,
    BinaryTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrdVariant {
    pub pivot_send: PivotSend,
    /// `K_PrevSend`: steps `1..=presend_limit` (1-based) pre-send.
    pub presend_limit: usize,
    pub reduce: ReduceImpl,
}

impl Default for TrdVariant {
    fn default() -> Self {
        Self::reference()
    }
}

impl TrdVariant {
    /// Blocking pivot sends with the left-fold allreduce.
    pub fn reference() -> Self {
        TrdVariant {
            pivot_send: PivotSend::Blocking,
            presend_limit: 0,
            reduce: ReduceImpl::Allreduce,
        }
    }

    /// `K_PrevSend = floor(frac * (n - 2))`.
    pub fn presend_limit_for(frac: f64, n: usize) -> Result<usize> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Config(format!("presend fraction {frac} outside [0, 1]")));
        }
        Ok((frac * n.saturating_sub(2) as f64).floor() as usize)
    }

    pub fn presend(frac: f64, n: usize, reduce: ReduceImpl) -> Result<Self> {
        Ok(TrdVariant {
            pivot_send: PivotSend::NonBlockingPresend,
            presend_limit: Self::presend_limit_for(frac, n)?,
            reduce,
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.pivot_send == PivotSend::NonBlockingPresend && self.presend_limit > n.saturating_sub(2) {
            return Err(Error::Config(format!(
                "presend limit {} exceeds the {} reduction steps",
                self.presend_limit,
                n.saturating_sub(2)
            )));
        }
        Ok(())
    }

    /// Whether step `k` (0-based) posts the pivot column of step `k + 1`.
    fn presends_after(&self, k: usize, n: usize) -> bool {
        self.pivot_send == PivotSend::NonBlockingPresend
            && k < self.presend_limit
            && k + 1 < n.saturating_sub(2)
    }
}

/// The block `A[Π, Γ]` held by one rank, row-major, with 0-based global
/// row and column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub data: Vec<f64>,
}

impl LocalMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols.len() + c]
    }

    /// Reassembles the full matrix from every rank's block.
    pub fn assemble(parts: &[LocalMatrix]) -> Result<DenseMatrix> {
        let n = parts.first().map_or(0, |p| p.n);
        let mut m = DenseMatrix::zeros(n);
        let mut seen = vec![false; n * n];
        for p in parts {
            for (r, &i) in p.rows.iter().enumerate() {
                for (c, &j) in p.cols.iter().enumerate() {
                    m[(i, j)] = p.get(r, c);
                    seen[i * n + j] = true;
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dimension("blocks do not cover the matrix".into()));
        }
        Ok(m)
    }
}

/// Extracts `A[Π, Γ]` for `grid`. Purely local: every rank already holds `A`.
pub fn distribute_matrix(a: &DenseMatrix, grid: &ProcessGrid) -> LocalMatrix {
    let n = a.order();
    let rows: Vec<usize> = (grid.my_x..n).step_by(grid.p_x).collect();
    let cols: Vec<usize> = (grid.my_y..n).step_by(grid.p_y).collect();
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        data.extend(cols.iter().map(|&j| a[(i, j)]));
    }
    LocalMatrix { n, rows, cols, data }
}

/// Reflectors restricted to a rank's rows Π, replicated along grid rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFactors {
    pub n: usize,
    pub p_x: usize,
    pub my_x: usize,
    /// `τ_k`, replicated on every rank.
    pub tau: Vec<f64>,
    /// `v[k]` holds `v_k` at rows `i ∈ Π, i >= k + 1`, ascending.
    pub v: Vec<Vec<f64>>,
}

impl LocalFactors {
    /// Global rows (0-based) of the slice `v[k]`.
    pub fn slice_rows(&self, k: usize) -> impl Iterator<Item = usize> {
        slice_rows(self.n, self.p_x, self.my_x, k)
    }

    /// Reassembles the global factor set from one rank of each grid row.
    pub fn assemble(parts: &[&LocalFactors]) -> Result<HouseholderFactorSet> {
        let first = parts.first().ok_or_else(|| Error::Dimension("no factor slices".into()))?;
        let n = first.n;
        let mut f = HouseholderFactorSet::empty(n);
        for k in 0..first.tau.len() {
            let mut v = vec![f64::NAN; n - k - 1];
            for p in parts {
                for (i, &x) in p.slice_rows(k).zip(&p.v[k]) {
                    v[i - k - 1] = x;
                }
            }
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Dimension(format!("reflector {k} is missing rows")));
            }
            f.tau.push(first.tau[k]);
            f.v.push(v);
        }
        Ok(f)
    }
}

/// Rows `i >= k + 1` with `i mod p_x == x`.
pub(crate) fn slice_rows(n: usize, p_x: usize, x: usize, k: usize) -> impl Iterator<Item = usize> {
    let start = first_at_or_after(k + 1, p_x, x);
    (start..n).step_by(p_x)
}

fn first_at_or_after(lo: usize, stride: usize, offset: usize) -> usize {
    lo + (offset + stride - lo % stride) % stride
}

/// Wall-clock seconds per breakdown category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrdTimings {
    pub send_piv: f64,
    pub send_yt: f64,
    pub send_xt: f64,
    pub matvec_reduce: f64,
    pub matvec: f64,
    pub update: f64,
    pub other: f64,
}

#[derive(Debug, Clone)]
pub struct TrdOutput {
    pub t: TridiagonalMatrix,
    pub factors: LocalFactors,
    pub timings: TrdTimings,
}

fn lap(clock: &mut Instant, slot: &mut f64) {
    let now = Instant::now();
    *slot += (now - *clock).as_secs_f64();
    *clock = now;
}

/// Moves values held on rows Π into column layout Γ: within the column
/// communicator, each member owning some `i >= lo` with `i ∈ Γ` broadcasts
/// those entries.
fn rows_to_cols(col: &mut Comm, grid: &ProcessGrid, n: usize, lo: usize, full: &mut [f64]) -> Result<()> {
    for x in 0..grid.p_x {
        let idx: Vec<usize> = (first_at_or_after(lo, grid.p_x, x)..n)
            .step_by(grid.p_x)
            .filter(|i| i % grid.p_y == grid.my_y)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let payload: Vec<f64> = if x == grid.my_x {
            idx.iter().map(|&i| full[i]).collect()
        } else {
            Vec::new()
        };
        let got = col.bcast(x, &payload)?;
        if got.len() != idx.len() {
            return Err(Error::Protocol(format!(
                "column exchange expected {} entries, got {}",
                idx.len(),
                got.len()
            )));
        }
        for (&i, v) in idx.iter().zip(got) {
            full[i] = v;
        }
    }
    Ok(())
}

/// Collective over the grid. Returns the replicated `T`, this rank's
/// reflector slices and the per-category timings.
pub fn trd_distributed(gc: &mut GridComm, a: LocalMatrix, variant: &TrdVariant) -> Result<TrdOutput> {
    let grid = gc.grid;
    let n = a.n;
    let expect = distribute_matrix(&DenseMatrix::zeros(n), &grid);
    if n == 0 || a.rows != expect.rows || a.cols != expect.cols {
        return Err(Error::Protocol(format!(
            "local block does not match rank ({}, {}) of a {}x{} grid",
            grid.my_x, grid.my_y, grid.p_x, grid.p_y
        )));
    }
    variant.validate(n)?;

    let (px, py, my) = (grid.p_x, grid.p_y, grid.my_y);
    let LocalMatrix { rows, cols, mut data, .. } = a;
    let nc = cols.len();
    let first_row = |k: usize| rows.partition_point(|&i| i < k);
    let first_col = |k: usize| cols.partition_point(|&j| j < k);

    let steps = n.saturating_sub(2);
    let mut t = TrdTimings::default();
    let mut clock = Instant::now();
    let mut d = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n.saturating_sub(1));
    let mut factors = LocalFactors {
        n,
        p_x: px,
        my_x: grid.my_x,
        tau: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
    };
    let mut pending: Vec<PendingSend> = Vec::new();

    for k in 0..steps {
        // pivot column A[Π, k], rows >= k
        let r0 = first_row(k);
        let owner = k % py;
        let piv: Vec<f64> = {
            let _c = gc.row.category_scope(Category::PivotTrd);
            if my == owner {
                let lk = k / py;
                let column: Vec<f64> = (r0..rows.len()).map(|r| data[r * nc + lk]).collect();
                if k > 0 && variant.presends_after(k - 1, n) {
                    for h in pending.drain(..) {
                        gc.row.wait(h)?;
                    }
                } else {
                    for y in (0..py).filter(|&y| y != my) {
                        gc.row.send(y, k as u64, &column)?;
                    }
                }
                column
            } else {
                gc.row.recv(owner, k as u64)?
            }
        };
        lap(&mut clock, &mut t.send_piv);

        // reflector scalars
        let mut sumsq = ExactSum::new();
        let (mut nonzero, mut alpha, mut diag) = (0.0, 0.0, 0.0);
        for (&i, &x) in rows[r0..].iter().zip(&piv) {
            if i == k {
                diag = x;
            } else if i == k + 1 {
                alpha = x;
            } else {
                sumsq.add(x * x);
                if x != 0.0 {
                    nonzero += 1.0;
                }
            }
        }
        let mut payload = Vec::with_capacity(LIMBS + 3);
        sumsq.write_payload(&mut payload);
        payload.extend([nonzero, alpha, diag]);
        let red = gc.col.allreduce_sum(&payload)?;
        let sumsq = ExactSum::from_payload(&red[..LIMBS]);
        let (tau, beta, denom) = reflector_scalars(red[LIMBS + 1], &sumsq, red[LIMBS] > 0.0);
        d.push(canon(red[LIMBS + 2]));
        e.push(canon(beta));

        let r1 = first_row(k + 1);
        let c1 = first_col(k + 1);
        let v_pi: Vec<f64> = rows[r1..]
            .iter()
            .zip(&piv[r1 - r0..])
            .map(|(&i, &x)| {
                if i == k + 1 {
                    1.0
                } else if tau == 0.0 {
                    0.0
                } else {
                    x / denom
                }
            })
            .collect();
        factors.tau.push(tau);
        factors.v.push(v_pi.clone());
        lap(&mut clock, &mut t.other);

        let presend = variant.presends_after(k, n);
        let next_owner = (k + 1) % py == my;
        let post_next = |row: &mut Comm, data: &[f64], pending: &mut Vec<PendingSend>| -> Result<()> {
            let _c = row.category_scope(Category::PivotTrd);
            let lk = (k + 1) / py;
            let column: Vec<f64> = (r1..rows.len()).map(|r| data[r * nc + lk]).collect();
            for y in (0..py).filter(|&y| y != my) {
                pending.push(row.isend(y, (k + 1) as u64, &column)?);
            }
            Ok(())
        };

        if tau == 0.0 {
            if presend && next_owner {
                post_next(&mut gc.row, &data, &mut pending)?;
                lap(&mut clock, &mut t.send_piv);
            }
            continue;
        }

        let mut v = vec![0.0; n];
        for (&i, &x) in rows[r1..].iter().zip(&v_pi) {
            v[i] = x;
        }
        {
            let _c = gc.col.category_scope(Category::SendYt);
            rows_to_cols(&mut gc.col, &grid, n, k + 1, &mut v)?;
        }
        lap(&mut clock, &mut t.send_yt);

        let mut partial = Vec::with_capacity((rows.len() - r1) * LIMBS);
        for r in r1..rows.len() {
            let line = &data[r * nc..(r + 1) * nc];
            let s: ExactSum = (c1..nc).map(|c| line[c] * v[cols[c]]).collect();
            s.write_payload(&mut partial);
        }
        lap(&mut clock, &mut t.matvec);

        let summed = {
            let _c = gc.row.category_scope(Category::MatvecReduce);
            match variant.reduce {
                ReduceImpl::Allreduce => gc.row.allreduce_sum(&partial)?,
                ReduceImpl::BinaryTree => gc.row.reduce_binary_tree(&partial)?,
            }
        };
        lap(&mut clock, &mut t.matvec_reduce);

        let mut y = vec![0.0; n];
        for (&i, chunk) in rows[r1..].iter().zip(summed.chunks_exact(LIMBS)) {
            y[i] = tau * ExactSum::from_payload(chunk).round();
        }
        lap(&mut clock, &mut t.matvec);
        {
            let _c = gc.col.category_scope(Category::SendXt);
            rows_to_cols(&mut gc.col, &grid, n, k + 1, &mut y)?;
        }
        lap(&mut clock, &mut t.send_xt);

        let dot: ExactSum = rows[r1..].iter().map(|&i| y[i] * v[i]).collect();
        let mut payload = Vec::with_capacity(LIMBS);
        dot.write_payload(&mut payload);
        let mu = tau * ExactSum::from_payload(&gc.col.allreduce_sum(&payload)?).round();
        let h = 0.5 * mu;
        let mut w = vec![0.0; n];
        for &i in rows[r1..].iter().chain(&cols[c1..]) {
            w[i] = y[i] - h * v[i];
        }
        lap(&mut clock, &mut t.other);

        let update = |data: &mut [f64], c: usize| {
            let j = cols[c];
            for r in r1..rows.len() {
                let i = rows[r];
                let cell = &mut data[r * nc + c];
                *cell = (*cell - v[i] * w[j]) - w[i] * v[j];
            }
        };
        let mut skip = None;
        if presend && next_owner {
            let lk = (k + 1) / py;
            update(&mut data, lk);
            skip = Some(lk);
            lap(&mut clock, &mut t.update);
            post_next(&mut gc.row, &data, &mut pending)?;
            lap(&mut clock, &mut t.send_piv);
        }
        for c in (c1..nc).filter(|&c| Some(c) != skip) {
            update(&mut data, c);
        }
        lap(&mut clock, &mut t.update);
    }
    debug_assert!(pending.is_empty());

    // the last 2x2 block (or the single entry when n == 1)
    let tail: Vec<(usize, usize)> = if n >= 2 {
        vec![(n - 2, n - 2), (n - 1, n - 1), (n - 1, n - 2)]
    } else {
        vec![(0, 0)]
    };
    let placed: Vec<f64> = tail
        .iter()
        .map(|&(i, j)| {
            match (rows.binary_search(&i), cols.binary_search(&j)) {
                (Ok(r), Ok(c)) => data[r * nc + c],
                _ => 0.0,
            }
        })
        .collect();
    let got = gc.world.allreduce_sum(&placed)?;
    if n >= 2 {
        d.push(canon(got[0]));
        d.push(canon(got[1]));
        e.push(canon(got[2]));
    } else {
        d.push(canon(got[0]));
    }
    lap(&mut clock, &mut t.other);

    Ok(TrdOutput {
        t: TridiagonalMatrix::new(d, e)?,
        factors,
        timings: t,
    })
}
