use super::{canon, DenseMatrix, HouseholderFactorSet, TridiagonalMatrix};
use crate::error::{Error, Result};
use crate::exactsum::ExactSum;

/// `H = I - tau v vᵀ` with `v[0] = 1`, mapping `x` to `(beta, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflector {
    pub tau: f64,
    pub beta: f64,
    pub v: Vec<f64>,
}

/// Reflector scalars from the leading entry `alpha` and the exact sum of
/// squares of the trailing entries. Returns `(tau, beta, denom)`; trailing
/// entries are divided by `denom` to form `v`. All-zero trailing entries
/// (or a norm that underflows) give the identity, `tau = 0` and `beta = alpha`.
///
/// Shared by the sequential and distributed reductions so both produce the
/// same bits.
pub fn reflector_scalars(alpha: f64, trailing_sumsq: &ExactSum, trailing_nonzero: bool) -> (f64, f64, f64) {
    let alpha = canon(alpha);
    if !trailing_nonzero {
        return (0.0, alpha, 1.0);
    }
    let mut s = trailing_sumsq.clone();
    s.add(alpha * alpha);
    let norm = s.round().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return (0.0, alpha, 1.0);
    }
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    (tau, beta, alpha - beta)
}

pub fn householder_reflect(x: &[f64]) -> Reflector {
    assert!(!x.is_empty(), "reflector of an empty vector");
    let alpha = x[0];
    let tail = &x[1..];
    let sumsq: ExactSum = tail.iter().map(|t| t * t).collect();
    let nonzero = tail.iter().any(|&t| t != 0.0);
    let (tau, beta, denom) = reflector_scalars(alpha, &sumsq, nonzero);
    let mut v = Vec::with_capacity(x.len());
    v.push(1.0);
    if tau == 0.0 {
        v.resize(x.len(), 0.0);
    } else {
        v.extend(tail.iter().map(|t| t / denom));
    }
    Reflector { tau, beta, v }
}

/// Householder tridiagonalization `A = Q T Qᵀ`.
///
/// Step `k` reflects rows/columns `k+1..n` with `y = τ A v`, `μ = τ yᵀv`,
/// `w = y - (μ/2) v` and the rank-2 update `A -= v wᵀ + w vᵀ`. Dot products
/// are summed exactly and rounded once, so any distribution of the sums over
/// processes yields the same bits.
pub fn trd_sequential(a: &DenseMatrix) -> Result<(TridiagonalMatrix, HouseholderFactorSet)> {
    let n = a.order();
    if n == 0 {
        return Err(Error::Dimension("matrix order must be at least 1".into()));
    }
    a.check_symmetric()?;
    let mut a = a.clone();
    let mut d = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n - 1);
    let mut f = HouseholderFactorSet::empty(n);

    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let r = householder_reflect(&x);
        d.push(canon(a[(k, k)]));
        e.push(canon(r.beta));
        if r.tau != 0.0 {
            let m = n - k - 1;
            let at = |i: usize, j: usize| a[(k + 1 + i, k + 1 + j)];
            let y: Vec<f64> = (0..m)
                .map(|i| {
                    let s: ExactSum = (0..m).map(|j| at(i, j) * r.v[j]).collect();
                    r.tau * s.round()
                })
                .collect();
            let mu = r.tau * (0..m).map(|i| y[i] * r.v[i]).collect::<ExactSum>().round();
            let h = 0.5 * mu;
            let w: Vec<f64> = (0..m).map(|i| y[i] - h * r.v[i]).collect();
            for i in 0..m {
                for j in 0..m {
                    let cell = &mut a[(k + 1 + i, k + 1 + j)];
                    *cell = (*cell - r.v[i] * w[j]) - w[i] * r.v[j];
                }
            }
        }
        f.tau.push(r.tau);
        f.v.push(r.v);
    }
    if n >= 2 {
        d.push(canon(a[(n - 2, n - 2)]));
        d.push(canon(a[(n - 1, n - 1)]));
        e.push(canon(a[(n - 1, n - 2)]));
    } else {
        d.push(canon(a[(0, 0)]));
    }
    Ok((TridiagonalMatrix::new(d, e)?, f))
}

/// Overwrites each column `x` with `Q x`, applying reflectors from the last
/// to the first: `σ = τ vᵀ x_{k+1:n}`, `x_{k+1:n} -= σ v`.
pub fn apply_reflectors(f: &HouseholderFactorSet, cols: &mut [Vec<f64>]) -> Result<()> {
    if let Some(c) = cols.iter().find(|c| c.len() != f.n) {
        return Err(Error::Dimension(format!(
            "vector of length {} against reflectors of order {}",
            c.len(),
            f.n
        )));
    }
    for k in (0..f.len()).rev() {
        let tau = f.tau[k];
        if tau == 0.0 {
            continue;
        }
        for x in cols.iter_mut() {
            reflect_tail(tau, &f.v[k], &mut x[k + 1..]);
        }
    }
    Ok(())
}

/// `x -= (τ vᵀx) v` with a plain ascending dot product. The distributed
/// back-transformation calls this too, which keeps both bit-identical.
pub(crate) fn reflect_tail(tau: f64, v: &[f64], tail: &mut [f64]) {
    let dot: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
    let sigma = tau * dot;
    for (xi, vi) in tail.iter_mut().zip(v) {
        *xi -= sigma * vi;
    }
}

/// `X = Q V`, with `V` given by its columns.
pub fn hit_sequential(f: &HouseholderFactorSet, v: &DenseMatrix) -> Result<DenseMatrix> {
    if v.order() != f.n {
        return Err(Error::Dimension(format!(
            "eigenvector matrix of order {} against reflectors of order {}",
            v.order(),
            f.n
        )));
    }
    let mut cols = v.columns();
    apply_reflectors(f, &mut cols)?;
    DenseMatrix::from_columns(&cols)
}
