use caeigen::procgrid::{build_grid, owned_cols, owned_cols_1d, owned_rows, owner_of, GridShape};
use proptest::prelude::*;

proptest! {
    #[test]
    fn owner_of_agrees_with_owned_sets(n in 1usize..80, px in 1usize..7, py in 1usize..7) {
        let grids = build_grid(px * py, px, py).unwrap();
        let shape = GridShape::new(px, py).unwrap();
        for g in &grids {
            let rows = owned_rows(g, n);
            let cols = owned_cols(g, n);
            for i in 1..=n {
                for j in 1..=n {
                    let mine = rows.contains(i) && cols.contains(j);
                    let owner = owner_of(i, j, n, shape).unwrap();
                    prop_assert_eq!(mine, owner == (g.my_x, g.my_y));
                }
            }
        }
    }

    #[test]
    fn every_rank_owns_a_balanced_share(n in 1usize..300, p in 1usize..40) {
        let sizes: Vec<usize> = (0..p).map(|r| owned_cols_1d(r, p, n).unwrap().len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        // earlier ranks never hold fewer columns
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn out_of_range_rank_and_index() {
    assert!(owned_cols_1d(4, 4, 10).is_err());
    let shape = GridShape::new(2, 2).unwrap();
    assert!(owner_of(0, 1, 5, shape).is_err());
    assert!(owner_of(1, 6, 5, shape).is_err());
    assert!(build_grid(6, 4, 2).is_err());
}
