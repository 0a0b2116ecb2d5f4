//! Sequential reference kernels: matrix types, Householder tridiagonalization
//! and back-transformation, the Frank test matrix, and accuracy metrics.

mod accuracy;
mod householder;

use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use accuracy::{accuracy, AccuracyReport};
pub use householder::{
    apply_reflectors, hit_sequential, householder_reflect, reflector_scalars, trd_sequential,
    Reflector,
};
pub(crate) use householder::reflect_tail;

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYM_TOL: f64 = 1e-12;

/// Maps `-0.0` to `+0.0` and leaves every other value alone.
#[inline]
pub(crate) fn canon(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n}x{n} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Parse(format!(
                "entry ({}, {}) is not finite",
                pos / n + 1,
                pos % n + 1
            )));
        }
        Ok(DenseMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {} has {} entries, expected {n}",
                r + 1,
                rows[r].len()
            )));
        }
        Self::from_row_major(n, rows.concat())
    }

    /// Builds a matrix whose columns are `cols` (each of length `n`).
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let n = cols.len();
        let mut m = Self::zeros(n);
        for (j, c) in cols.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Dimension(format!(
                    "column {} has length {}, expected {n}",
                    j + 1,
                    c.len()
                )));
            }
            for (i, &x) in c.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        Ok(m)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.n, other.n
            )));
        }
        let n = self.n;
        let mut c = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    c.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(c)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Largest `|a_ij - a_ji|` together with its (0-based) position, `i < j`.
    pub fn max_asymmetry(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.n {
            for j in i + 1..self.n {
                let d = (self[(i, j)] - self[(j, i)]).abs();
                if d > worst.0 {
                    worst = (d, i, j);
                }
            }
        }
        worst
    }

    /// Accepts the matrix when `‖A - Aᵀ‖_∞`-style entry differences stay
    /// within `SYM_TOL * ‖A‖_∞`. The error names the worst pair (1-based).
    pub fn check_symmetric(&self) -> Result<()> {
        let tol = SYM_TOL * self.norm_inf();
        let (diff, i, j) = self.max_asymmetry();
        if diff > tol {
            return Err(Error::NotSymmetric {
                i: i + 1,
                j: j + 1,
                diff,
                tol,
            });
        }
        Ok(())
    }

    /// Parses `n` on the first line followed by `n` rows of `n`
    /// whitespace-separated values, and checks symmetry.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input, expected the order n".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("first line {header:?} is not a matrix order")))?;
        if n == 0 {
            return Err(Error::Parse("matrix order must be at least 1".into()));
        }
        let mut rows = Vec::with_capacity(n);
        for (lineno, line) in lines {
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("line {}: {tok:?} is not a number", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "line {}: expected {n} values, found {}",
                    lineno + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, found {}", rows.len())));
        }
        let m = Self::from_rows(&rows)?;
        m.check_symmetric()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Symmetric matrix with entries uniform in `[-1, 1)`, reproducible from `seed`.
    pub fn random_symmetric(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let x = rng.gen_range(-1.0..1.0);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Symmetric tridiagonal matrix: diagonal `d` (length n) and
/// off-diagonal `e` (length n - 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(d: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        if d.is_empty() || e.len() + 1 != d.len() {
            return Err(Error::Dimension(format!(
                "tridiagonal needs n >= 1 diagonal and n - 1 off-diagonal entries, got {} and {}",
                d.len(),
                e.len()
            )));
        }
        Ok(TridiagonalMatrix { d, e })
    }

    pub fn order(&self) -> usize {
        self.d.len()
    }

    /// Maximum absolute row sum (equal to the 1-norm by symmetry).
    pub fn norm_inf(&self) -> f64 {
        let n = self.d.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.e[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.e[i].abs() } else { 0.0 };
                left + self.d[i].abs() + right
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.order();
        let mut m = DenseMatrix::diagonal(&self.d);
        for i in 0..n - 1 {
            m[(i, i + 1)] = self.e[i];
            m[(i + 1, i)] = self.e[i];
        }
        m
    }

    /// `T x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.order();
        (0..n)
            .map(|i| {
                let mut s = self.d[i] * x[i];
                if i > 0 {
                    s += self.e[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.e[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Hash of the exact bit patterns, used to check replication across ranks.
    pub fn bit_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.d.len().hash(&mut h);
        for x in self.d.iter().chain(&self.e) {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn bits_eq(&self, other: &TridiagonalMatrix) -> bool {
        self.d.len() == other.d.len()
            && self
                .d
                .iter()
                .chain(&self.e)
                .zip(other.d.iter().chain(&other.e))
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest entrywise difference from `other`.
    pub fn max_abs_diff(&self, other: &TridiagonalMatrix) -> f64 {
        self.d
            .iter()
            .chain(&self.e)
            .zip(other.d.iter().chain(&other.e))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Householder factors of a tridiagonalization.
///
/// Reflector `k` (0-based, `k < n - 2`) is `I - tau[k] v vᵀ` acting on rows
/// `k+1 .. n`; `v[k]` holds those `n - k - 1` entries with a leading 1.
/// `tau[k] == 0` is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderFactorSet {
    pub n: usize,
    pub tau: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl HouseholderFactorSet {
    pub fn empty(n: usize) -> Self {
        HouseholderFactorSet {
            n,
            tau: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Explicit `Q = H_0 H_1 ... H_{n-3}`.
    pub fn to_q(&self) -> DenseMatrix {
        hit_sequential(self, &DenseMatrix::identity(self.n)).expect("square identity")
    }
}

/// Frank matrix `a_ij = n - max(i, j) + 1` (1-based indices).
pub fn frank_matrix(n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = (n - i.max(j)) as f64;
        }
    }
    m
}

/// Analytic eigenvalues of the Frank matrix, descending:
/// `λ_k = 1 / (2 (1 - cos((2k - 1) π / (2n + 1))))`.
pub fn frank_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let theta = (2 * k - 1) as f64 * std::f64::consts::PI / (2 * n + 1) as f64;
            // 1 - cos θ = 2 sin²(θ/2), without cancellation for small θ
            let s = (theta / 2.0).sin();
            1.0 / (4.0 * s * s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frank_small() {
        assert_eq!(frank_matrix(1).as_slice(), &[1.0]);
        let f = frank_matrix(3);
        assert_eq!(
            f,
            DenseMatrix::from_rows(&[vec![3., 2., 1.], vec![2., 2., 1.], vec![1., 1., 1.]]).unwrap()
        );
        assert_eq!(f.trace(), 6.0);
        for n in [1, 7, 40] {
            assert_eq!(frank_matrix(n).trace(), (n * (n + 1) / 2) as f64);
        }
    }

    #[test]
    fn frank_spectrum_closed_form() {
        // sin(π/6) is not exact in binary; the closed form lands within an ulp of 1
        assert!((frank_eigenvalues(1)[0] - 1.0).abs() <= 2.0 * f64::EPSILON);
        let l = frank_eigenvalues(3);
        for (got, want) in l.iter().zip([5.04892, 0.64310, 0.30798]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        for n in [3usize, 10, 100, 1000, 10_000] {
            let l = frank_eigenvalues(n);
            assert!(l.windows(2).all(|w| w[0] > w[1]));
            assert!(l.iter().all(|&x| x > 0.0));
            let trace = (n * (n + 1) / 2) as f64;
            let sum = crate::exactsum::exact_sum(l.iter().copied());
            assert!(((sum - trace) / trace).abs() < 1e-12, "n={n}: {sum} vs {trace}");
        }
    }

    #[test]
    fn frank_spectrum_against_cos_form() {
        // the sin² rewrite agrees with the literal cosine expression
        for n in [2usize, 9, 50] {
            for (k, &l) in frank_eigenvalues(n).iter().enumerate() {
                let c = ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * n + 1) as f64).cos();
                let lit = 1.0 / (2.0 * (1.0 - c));
                assert!(((l - lit) / l).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parse_round_trip_and_errors() {
        let a = DenseMatrix::random_symmetric(5, 3);
        assert_eq!(DenseMatrix::parse(&a.to_text()).unwrap(), a);

        let bad = "2\n1 2\n3 1\n";
        match DenseMatrix::parse(bad).unwrap_err() {
            Error::NotSymmetric { i, j, diff, .. } => {
                assert_eq!((i, j), (1, 2));
                assert_eq!(diff, 1.0);
            }
            e => panic!("{e:?}"),
        }
        assert!(matches!(DenseMatrix::parse("0\n"), Err(Error::Parse(_))));
        assert!(matches!(DenseMatrix::parse("2\n1 2\n2\n"), Err(Error::Parse(_))));
        assert!(matches!(DenseMatrix::parse("2\n1 x\n2 1\n"), Err(Error::Parse(_))));
        assert!(matches!(DenseMatrix::parse("2\n1 2\n"), Err(Error::Parse(_))));
        assert!(matches!(DenseMatrix::parse(""), Err(Error::Parse(_))));
        // tiny asymmetry inside tolerance is accepted
        assert!(DenseMatrix::parse("2\n1 0.5\n0.5000000000000001 1\n").is_ok());
    }

    #[test]
    fn random_is_symmetric_and_seeded() {
        let a = DenseMatrix::random_symmetric(6, 11);
        assert_eq!(a, a.transpose());
        assert_eq!(a, DenseMatrix::random_symmetric(6, 11));
        assert_ne!(a, DenseMatrix::random_symmetric(6, 12));
    }

    #[test]
    fn tridiagonal_helpers() {
        let t = TridiagonalMatrix::new(vec![1.0, -4.0, 2.0], vec![0.5, -1.0]).unwrap();
        assert_eq!(t.norm_inf(), 5.5);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(t.matvec(&x), t.to_dense().matvec(&x));
        assert!(TridiagonalMatrix::new(vec![], vec![]).is_err());
        assert!(TridiagonalMatrix::new(vec![1.0], vec![1.0]).is_err());
        let mut u = t.clone();
        assert_eq!(t.bit_hash(), u.bit_hash());
        u.e[0] = -0.0 + 0.5 + f64::EPSILON;
        assert_ne!(t.bit_hash(), u.bit_hash());
        assert!(!t.bits_eq(&u));
    }
}
