//! Process grid and cyclic-cyclic index arithmetic.
//!
//! A run uses `P = P_x * P_y` logical processes arranged as a `P_x x P_y`
//! grid. Rank `r` sits at `(my_x, my_y) = (r mod P_x, r div P_x)`, i.e. the
//! grid is linearized column-major. Rows of `A` are dealt cyclically over the
//! `P_x` grid rows and columns over the `P_y` grid columns with blocking
//! factor 1. Columns of the eigenvector matrices use a 1D cyclic layout over
//! all `P` ranks.
//!
//! Indices are 1-based at this module's boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a process grid, independent of any particular rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub p_x: usize,
    pub p_y: usize,
}

impl GridShape {
    pub fn new(p_x: usize, p_y: usize) -> Result<Self> {
        if p_x == 0 || p_y == 0 {
            return Err(Error::Config(format!(
                "grid dimensions must be positive, got {p_x}x{p_y}"
            )));
        }
        Ok(GridShape { p_x, p_y })
    }

    pub fn p_total(&self) -> usize {
        self.p_x * self.p_y
    }

    /// All `(p_x, p_y)` factor pairs of `p`, ordered by increasing `p_x`.
    pub fn factor_pairs(p: usize) -> Vec<GridShape> {
        (1..=p)
            .filter(|d| p.is_multiple_of(*d))
            .map(|p_x| GridShape { p_x, p_y: p / p_x })
            .collect()
    }

    pub fn coords(&self, rank: usize) -> (usize, usize) {
        (rank % self.p_x, rank / self.p_x)
    }

    pub fn rank_of(&self, my_x: usize, my_y: usize) -> usize {
        my_x + my_y * self.p_x
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.p_x, self.p_y)
    }
}

/// One rank's view of the process grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessGrid {
    pub p_total: usize,
    pub p_x: usize,
    pub p_y: usize,
    pub my_x: usize,
    pub my_y: usize,
}

impl ProcessGrid {
    pub fn for_rank(shape: GridShape, rank: usize) -> Result<Self> {
        if rank >= shape.p_total() {
            return Err(Error::Usage(format!(
                "rank {rank} outside a {shape} grid"
            )));
        }
        let (my_x, my_y) = shape.coords(rank);
        Ok(ProcessGrid {
            p_total: shape.p_total(),
            p_x: shape.p_x,
            p_y: shape.p_y,
            my_x,
            my_y,
        })
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            p_x: self.p_x,
            p_y: self.p_y,
        }
    }

    pub fn rank(&self) -> usize {
        self.my_x + self.my_y * self.p_x
    }
}

/// Validates `p_x * p_y == p_total` and returns the grid descriptor of every
/// rank, indexed by rank.
pub fn build_grid(p_total: usize, p_x: usize, p_y: usize) -> Result<Vec<ProcessGrid>> {
    let shape = GridShape::new(p_x, p_y)?;
    if shape.p_total() != p_total {
        return Err(Error::Config(format!(
            "grid {p_x}x{p_y} holds {} processes, but {p_total} were requested",
            shape.p_total()
        )));
    }
    (0..p_total).map(|r| ProcessGrid::for_rank(shape, r)).collect()
}

/// Ordered set of global (1-based) indices `offset + 1 + t * stride`.
///
/// Elements are never physically deleted: retiring a prefix moves an
/// active-start cursor so the full set stays available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
    stride: usize,
    offset: usize,
    active_start: usize,
}

impl IndexSet {
    /// Cyclic set for coordinate `offset` out of `stride` owners over `1..=n`.
    ///
    /// The element count follows `last(a, b)`: `b + 1` when
    /// `a = offset + 1 + floor(n / stride) * stride <= n`, else `b`, where
    /// `b = floor(n / stride)`.
    pub fn cyclic(n: usize, stride: usize, offset: usize) -> Self {
        assert!(stride >= 1 && offset < stride, "bad cyclic origin");
        let base = n / stride;
        let a = offset + 1 + base * stride;
        let count = if a <= n { base + 1 } else { base };
        let indices = (0..count).map(|t| offset + 1 + t * stride).collect();
        IndexSet {
            indices,
            stride,
            offset,
            active_start: 0,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Number of elements, including retired ones.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Elements not yet retired.
    pub fn active(&self) -> &[usize] {
        &self.indices[self.active_start..]
    }

    /// Position in the full set of the first active element (0-based).
    pub fn active_start(&self) -> usize {
        self.active_start
    }

    pub fn contains(&self, idx: usize) -> bool {
        idx >= 1 && (idx - 1) % self.stride == self.offset && self.local_unchecked(idx) < self.len()
    }

    /// 1-based element at 1-based position `pos`.
    pub fn get(&self, pos: usize) -> Option<usize> {
        pos.checked_sub(1).and_then(|p| self.indices.get(p).copied())
    }

    fn local_unchecked(&self, idx: usize) -> usize {
        (idx - 1 - self.offset) / self.stride
    }

    /// 1-based position of `idx` in the set.
    pub fn global_to_local(&self, idx: usize) -> Result<usize> {
        if !self.contains(idx) {
            return Err(Error::Usage(format!(
                "index {idx} is not a member of the cyclic set (stride {}, offset {})",
                self.stride, self.offset
            )));
        }
        Ok(self.local_unchecked(idx) + 1)
    }

    /// Number of elements strictly below `idx`.
    pub fn count_below(&self, idx: usize) -> usize {
        if idx <= self.offset + 1 {
            0
        } else {
            ((idx - 2 - self.offset) / self.stride + 1).min(self.len())
        }
    }

    /// Retires every element `<= k`.
    pub fn retire_through(&mut self, k: usize) {
        self.active_start = self.active_start.max(self.count_below(k + 1));
    }

    /// Retires `k` if it is the first active element.
    pub fn remove(&mut self, k: usize) {
        if self.active().first() == Some(&k) {
            self.active_start += 1;
        }
    }
}

/// Rows owned by `grid` (Π).
pub fn owned_rows(grid: &ProcessGrid, n: usize) -> IndexSet {
    IndexSet::cyclic(n, grid.p_x, grid.my_x)
}

/// Columns owned by `grid` (Γ).
pub fn owned_cols(grid: &ProcessGrid, n: usize) -> IndexSet {
    IndexSet::cyclic(n, grid.p_y, grid.my_y)
}

/// Columns of V, X and Λ held by `rank` under the 1D cyclic layout.
pub fn owned_cols_1d(rank: usize, p_total: usize, n: usize) -> Result<IndexSet> {
    if rank >= p_total {
        return Err(Error::Usage(format!(
            "rank {rank} outside 0..{p_total}"
        )));
    }
    Ok(IndexSet::cyclic(n, p_total, rank))
}

/// Grid coordinates holding `a[i][j]`.
pub fn owner_of(i: usize, j: usize, n: usize, shape: GridShape) -> Result<(usize, usize)> {
    if i == 0 || j == 0 || i > n || j > n {
        return Err(Error::Usage(format!(
            "entry ({i}, {j}) outside a {n}x{n} matrix"
        )));
    }
    Ok(((i - 1) % shape.p_x, (j - 1) % shape.p_y))
}
