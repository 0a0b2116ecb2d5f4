use caeigen::dense::{frank_matrix, trd_sequential, DenseMatrix};
use caeigen::hit::{Gather, HitVariant};
use caeigen::msgnet::{Category, CommStats, Scope};
use caeigen::procgrid::GridShape;
use caeigen::solver::{solve, SolveConfig};
use caeigen::trd::{ReduceImpl, TrdVariant};
use proptest::prelude::*;

/// Cyclic Jacobi rotations; descending eigenvalues.
fn jacobi(a: &DenseMatrix) -> Vec<f64> {
    let n = a.order();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _ in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q] * m[p][q];
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                let (lo, hi) = m.split_at_mut(q);
                for (pk, qk) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (a, b) = (*pk, *qk);
                    *pk = c * a - s * b;
                    *qk = s * a + c * b;
                }
            }
        }
        if off == 0.0 {
            break;
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

fn all_shapes() -> Vec<GridShape> {
    [1, 2, 4, 8].into_iter().flat_map(GridShape::factor_pairs).collect()
}

#[test]
fn spectrum_matches_jacobi_on_every_shape() {
    for n in 1..=12 {
        let inputs = [DenseMatrix::random_symmetric(n, 77 + n as u64), frank_matrix(n)];
        for a in &inputs {
            let want = jacobi(a);
            let tol = 1e-11 * a.norm_inf();
            for s in all_shapes() {
                let r = solve(a, &SolveConfig::new(s)).unwrap();
                for (k, (g, w)) in r.eigenvalues.iter().zip(&want).enumerate() {
                    assert!((g - w).abs() <= tol, "n={n} {s} k={k}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn traffic_stays_in_its_communicators() {
    let a = DenseMatrix::random_symmetric(23, 4);
    for s in all_shapes() {
        let r = solve(&a, &SolveConfig::new(s)).unwrap();
        let st = r.stats();
        assert_eq!(st.sept.total(), Default::default());
        for (c, scope, v) in st.trd.iter() {
            if v.calls == 0 {
                continue;
            }
            match c {
                Category::PivotTrd | Category::MatvecReduce => assert_eq!(scope, Scope::Row, "{s} {c:?}"),
                Category::SendYt | Category::SendXt => assert_eq!(scope, Scope::Col, "{s} {c:?}"),
                // reflector norms and mu on columns, one world allreduce for the tail
                Category::Allreduce if scope == Scope::World => assert_eq!(v.calls, s.p_total() as u64, "{s}"),
                Category::Allreduce => assert_eq!(scope, Scope::Col, "{s}"),
                _ => panic!("{s}: unexpected TRD category {c:?}"),
            }
        }
        for (c, scope, v) in st.hit.iter() {
            if v.calls > 0 {
                assert_eq!((c, scope), (Category::GatherHit, Scope::Col), "{s}");
            }
        }
    }
}

#[test]
fn orthogonality_carries_through_back_transform() {
    let a = frank_matrix(60);
    let mut c = SolveConfig::new(GridShape::new(2, 4).unwrap());
    c.verify = true;
    let r = solve(&a, &c).unwrap();
    assert!(r.accuracy.unwrap().orth_err <= 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_choices_never_change_bits(
        n in 3usize..20,
        seed in any::<u64>(),
        shape_ix in 0usize..8,
        frac in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]),
        gather in prop::sample::select(Gather::ALL.to_vec()),
        mblk in 1usize..40,
    ) {
        let shapes = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (2, 4), (4, 2)];
        let (px, py) = shapes[shape_ix];
        let shape = GridShape::new(px, py).unwrap();
        let a = DenseMatrix::random_symmetric(n, seed);
        let reference = solve(&a, &SolveConfig::new(shape)).unwrap();
        let (t, _) = trd_sequential(&a).unwrap();
        prop_assert!(reference.t.bits_eq(&t));

        let mut c = SolveConfig::new(shape);
        c.trd = TrdVariant::presend(frac, n, ReduceImpl::BinaryTree).unwrap();
        c.hit = HitVariant { gather, mblk };
        let r = solve(&a, &c).unwrap();
        prop_assert!(r.t.bits_eq(&t));
        prop_assert_eq!(&r.shards, &reference.shards);

        let again = solve(&a, &c).unwrap();
        prop_assert_eq!(&again.rank_stats, &r.rank_stats);
        let gathered = CommStats::merged(r.rank_stats.iter().map(|s| &s.hit)).category(Category::GatherHit);
        let gathered_ref = reference.stats().hit.category(Category::GatherHit);
        prop_assert_eq!(gathered.bytes, gathered_ref.bytes);
    }
}
