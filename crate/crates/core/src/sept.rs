//! Eigenpairs of the replicated tridiagonal matrix.
//!
//! Eigenvalues come from Sturm-count multi-section: each refinement sweep
//! evaluates `ml` interior points per bracket and works on up to `el`
//! eigenvalues at once, sharing counts between them. Eigenvectors come from
//! inverse iteration on an LU factorization of `T - λI` with partial
//! pivoting, orthogonalized against earlier vectors of the same cluster.
//!
//! Every rank computes the whole spectrum and the vectors of each cluster up
//! to its last owned index, without communication. Start vectors are seeded
//! by the global index, so a vector does not depend on which rank computes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::TridiagonalMatrix;
use crate::error::{Error, Result};
use crate::procgrid::owned_cols_1d;

/// Default relative tolerance: `tol = DEFAULT_TOL * ‖T‖_∞`.
pub const DEFAULT_TOL: f64 = 1e-13;
/// Eigenvalues closer than `CLUSTER_GAP * ‖T‖_1` share a cluster.
pub const CLUSTER_GAP: f64 = 1e-3;
const MAX_ITS: usize = 5;
const EXTRA: usize = 2;
const RETRIES: usize = 2;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemsParams {
    /// Section points per bracket per sweep.
    pub ml: usize,
    /// Eigenvalues refined together.
    pub el: usize,
    /// Absolute tolerance; `None` means `1e-13 * ‖T‖_∞`.
    pub tol: Option<f64>,
}

impl Default for MemsParams {
    fn default() -> Self {
        MemsParams {
            ml: 2,
            el: 75,
            tol: None,
        }
    }
}

impl MemsParams {
    pub fn validate(&self) -> Result<()> {
        if self.ml == 0 || self.el == 0 {
            return Err(Error::Config(format!(
                "multi-section needs ml >= 1 and el >= 1, got ml={} el={}",
                self.ml, self.el
            )));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tolerance {t} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, t: &TridiagonalMatrix) -> f64 {
        self.tol.unwrap_or(DEFAULT_TOL * t.norm_inf())
    }
}

fn pivmin(t: &TridiagonalMatrix) -> f64 {
    let emax = t.e.iter().map(|x| x * x).fold(1.0, f64::max);
    f64::MIN_POSITIVE * emax
}

/// Number of eigenvalues of `t` strictly below `sigma`.
pub fn sturm_count(t: &TridiagonalMatrix, sigma: f64) -> usize {
    sturm_count_with(t, sigma, pivmin(t))
}

fn sturm_count_with(t: &TridiagonalMatrix, sigma: f64, pivmin: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..t.d.len() {
        let off = if i == 0 { 0.0 } else { t.e[i - 1] * t.e[i - 1] / q };
        q = t.d[i] - sigma - off;
        if q.abs() < pivmin {
            q = if q < 0.0 { -pivmin } else { pivmin };
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Padded Gershgorin interval: no eigenvalue below `lo`, all below `hi`.
pub fn gershgorin(t: &TridiagonalMatrix) -> (f64, f64) {
    let n = t.order();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r = if i > 0 { t.e[i - 1].abs() } else { 0.0 } + if i + 1 < n { t.e[i].abs() } else { 0.0 };
        lo = lo.min(t.d[i] - r);
        hi = hi.max(t.d[i] + r);
    }
    let pad = 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) * n as f64 + 2.0 * pivmin(t);
    (lo - pad, hi + pad)
}

#[derive(Debug, Clone, Copy)]
struct Bracket {
    /// Ascending 0-based position of the eigenvalue.
    m: usize,
    lo: f64,
    hi: f64,
}

impl Bracket {
    fn done(&self, tol: f64) -> bool {
        let w = self.hi - self.lo;
        w <= tol || w <= 2.0 * f64::EPSILON * self.lo.abs().max(self.hi.abs())
    }

    fn learn(&mut self, sigma: f64, count: usize) {
        if count <= self.m {
            self.lo = self.lo.max(sigma);
        } else {
            self.hi = self.hi.min(sigma);
        }
    }
}

/// Eigenvalues with descending 1-based indices `first..=last`, in that order.
pub fn mems_eigenvalues(t: &TridiagonalMatrix, first: usize, last: usize, params: &MemsParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = t.order();
    if first == 0 || first > last || last > n {
        return Err(Error::Usage(format!("eigenvalue range {first}..={last} outside 1..={n}")));
    }
    if n == 1 {
        return Ok(vec![t.d[0]]);
    }
    let tol = params.tolerance(t);
    let piv = pivmin(t);
    let (glo, ghi) = gershgorin(t);
    let mut out = Vec::with_capacity(last - first + 1);
    let indices: Vec<usize> = (first..=last).collect();
    for batch in indices.chunks(params.el) {
        let mut brackets: Vec<Bracket> = batch
            .iter()
            .map(|&k| Bracket {
                m: n - k,
                lo: glo,
                hi: ghi,
            })
            .collect();
        for _ in 0..MAX_SWEEPS {
            let mut probes = Vec::new();
            for b in brackets.iter().filter(|b| !b.done(tol)) {
                let w = b.hi - b.lo;
                for s in 1..=params.ml {
                    let sigma = b.lo + w * (s as f64 / (params.ml + 1) as f64);
                    if sigma > b.lo && sigma < b.hi {
                        probes.push(sigma);
                    }
                }
            }
            if probes.is_empty() {
                break;
            }
            for sigma in probes {
                let c = sturm_count_with(t, sigma, piv);
                for b in brackets.iter_mut() {
                    b.learn(sigma, c);
                }
            }
        }
        out.extend(brackets.iter().map(|b| b.lo + 0.5 * (b.hi - b.lo)));
    }
    Ok(out)
}

/// `T - λI = P L U` for a tridiagonal `T`, partial pivoting by rows.
struct TridiagLu {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(t: &TridiagonalMatrix, lambda: f64) -> Self {
        let n = t.order();
        let mut a: Vec<f64> = t.d.iter().map(|x| x - lambda).collect();
        let mut b = t.e.clone();
        let mut c = t.e.clone();
        let mut d = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n];
        let mut scale1 = a[0].abs() + b.first().map_or(0.0, |x| x.abs());
        for k in 0..n.saturating_sub(1) {
            let scale2 = c[k].abs() + a[k + 1].abs() + if k + 2 < n { b[k + 1].abs() } else { 0.0 };
            let piv1 = if a[k] == 0.0 { 0.0 } else { a[k].abs() / scale1 };
            scale1 = scale2;
            if c[k] == 0.0 {
                continue;
            }
            let piv2 = c[k].abs() / scale2;
            if piv2 <= piv1 {
                c[k] /= a[k];
                a[k + 1] -= c[k] * b[k];
            } else {
                swapped[k] = true;
                let mult = a[k] / c[k];
                a[k] = c[k];
                let temp = a[k + 1];
                a[k + 1] = b[k] - mult * temp;
                if k + 2 < n {
                    d[k] = b[k + 1];
                    b[k + 1] = -mult * d[k];
                }
                b[k] = temp;
                c[k] = mult;
            }
        }
        TridiagLu { a, b, c, d, swapped }
    }

    /// Solves `(T - λI) x = y` in place, nudging tiny pivots away from zero.
    fn solve(&self, y: &mut [f64]) {
        let n = y.len();
        let eps = f64::EPSILON / 2.0;
        let sfmin = f64::MIN_POSITIVE;
        let bignum = 1.0 / sfmin;
        let mut tol = self.a[0].abs();
        if n > 1 {
            tol = tol.max(self.a[1].abs()).max(self.b[0].abs());
        }
        for k in 2..n {
            tol = tol.max(self.a[k].abs()).max(self.b[k - 1].abs()).max(self.d[k - 2].abs());
        }
        tol *= eps;
        if tol == 0.0 {
            tol = eps;
        }
        for k in 1..n {
            if !self.swapped[k - 1] {
                y[k] -= self.c[k - 1] * y[k - 1];
            } else {
                let temp = y[k - 1];
                y[k - 1] = y[k];
                y[k] = temp - self.c[k - 1] * y[k];
            }
        }
        for k in (0..n).rev() {
            let mut temp = y[k];
            if k + 1 < n {
                temp -= self.b[k] * y[k + 1];
            }
            if k + 2 < n {
                temp -= self.d[k] * y[k + 2];
            }
            let mut ak = self.a[k];
            let mut pert = if ak < 0.0 { -tol } else { tol };
            loop {
                let absak = ak.abs();
                if absak < 1.0 {
                    if absak < sfmin {
                        if absak == 0.0 || temp.abs() * sfmin > absak {
                            ak += pert;
                            pert *= 2.0;
                            continue;
                        }
                        temp *= bignum;
                        ak *= bignum;
                    } else if temp.abs() > absak * bignum {
                        ak += pert;
                        pert *= 2.0;
                        continue;
                    }
                }
                break;
            }
            y[k] = temp / ak;
        }
    }

    fn last_pivot(&self) -> f64 {
        *self.a.last().expect("non-empty")
    }
}

fn argmax_abs(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

/// Unit eigenvector for the (descending, 0-based) `index`-th eigenvalue
/// `lambda`, orthogonalized against `previous` (earlier members of its
/// cluster). The largest-magnitude entry is made positive.
pub fn inverse_iteration(t: &TridiagonalMatrix, lambda: f64, index: usize, previous: &[&[f64]]) -> Result<Vec<f64>> {
    let n = t.order();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let onenrm = t.norm_inf().max(f64::MIN_POSITIVE);
    let eps = f64::EPSILON;
    let dtpcrt = (0.1 / n as f64).sqrt();
    for attempt in 0..=RETRIES {
        let shift = lambda + attempt as f64 * 10.0 * eps * onenrm;
        let lu = TridiagLu::factor(t, shift);
        let mut rng = ChaCha8Rng::seed_from_u64(index as u64 ^ ((attempt as u64) << 48));
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut checks = 0;
        for _ in 0..MAX_ITS {
            let l1: f64 = x.iter().map(|v| v.abs()).sum();
            let scl = n as f64 * onenrm * eps.max(lu.last_pivot().abs()) / l1.max(f64::MIN_POSITIVE);
            x.iter_mut().for_each(|v| *v *= scl);
            lu.solve(&mut x);
            for z in previous {
                let dot: f64 = x.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
                for (xi, zi) in x.iter_mut().zip(z.iter()) {
                    *xi -= dot * zi;
                }
            }
            if !x.iter().all(|v| v.is_finite()) {
                break;
            }
            let nrm = x[argmax_abs(&x)].abs();
            if nrm < dtpcrt {
                continue;
            }
            checks += 1;
            if checks < EXTRA + 1 {
                continue;
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut scale = 1.0 / norm;
            if x[argmax_abs(&x)] < 0.0 {
                scale = -scale;
            }
            x.iter_mut().for_each(|v| *v *= scale);
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { index: index + 1 })
}

/// Eigenpairs held by one rank under the 1D column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairsLocal {
    pub n: usize,
    /// Full spectrum, descending.
    pub all_values: Vec<f64>,
    /// Owned global column indices (0-based), ascending.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Eigenvectors of `T` for `indices`.
    pub vectors: Vec<Vec<f64>>,
}

/// Splits descending eigenvalues into maximal runs with consecutive gaps
/// at most `gap`. Returns `(start, end)` half-open ranges.
pub fn clusters(values: &[f64], gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i - 1] - values[i]).abs() > gap {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Separates numerically equal eigenvalues so inverse iteration sees
/// distinct shifts, as consecutive descending values.
fn separate(values: &[f64]) -> Vec<f64> {
    let mut shifted = values.to_vec();
    for j in 1..shifted.len() {
        let pertol = 10.0 * (10.0 * f64::EPSILON * shifted[j].abs());
        if shifted[j - 1] - shifted[j] < pertol {
            shifted[j] = shifted[j - 1] - pertol;
        }
    }
    shifted
}

/// SEPT on one rank: the full spectrum plus eigenvectors for the columns
/// `owned_cols_1d(rank, p_total, n)`. Communication free.
pub fn sept_local(t: &TridiagonalMatrix, params: &MemsParams, rank: usize, p_total: usize) -> Result<EigenPairsLocal> {
    let n = t.order();
    let owned: Vec<usize> = owned_cols_1d(rank, p_total, n)?.as_slice().iter().map(|i| i - 1).collect();
    let all_values = mems_eigenvalues(t, 1, n, params)?;
    let shifts = separate(&all_values);
    let gap = CLUSTER_GAP * t.norm_inf();
    let mut vectors = Vec::with_capacity(owned.len());
    for (start, end) in clusters(&all_values, gap) {
        let Some(last) = owned.iter().copied().filter(|&j| j >= start && j < end).max() else {
            continue;
        };
        let mut cluster: Vec<Vec<f64>> = Vec::with_capacity(last + 1 - start);
        for (j, &shift) in shifts.iter().enumerate().take(last + 1).skip(start) {
            let prev: Vec<&[f64]> = cluster.iter().map(Vec::as_slice).collect();
            let x = inverse_iteration(t, shift, j, &prev)?;
            cluster.push(x);
        }
        for j in owned.iter().copied().filter(|&j| j >= start && j < end) {
            vectors.push((j, cluster[j - start].clone()));
        }
    }
    vectors.sort_by_key(|(j, _)| *j);
    Ok(EigenPairsLocal {
        n,
        values: owned.iter().map(|&j| all_values[j]).collect(),
        indices: owned,
        vectors: vectors.into_iter().map(|(_, v)| v).collect(),
        all_values,
    })
}
