mod common;

use common::{dense_ca, max_diff_sign_aligned, random_dense, sparse};
use nalgebra::DMatrix;
use proptest::prelude::*;
use sesmap_core::ca::{Anchor, CaError, CaModel, EntityKind, LabeledMatrix, ResidualOperator, SparseBinaryMatrix, SvdParams};

fn fit(dense: &[Vec<u8>], k: usize) -> CaModel {
    CaModel::fit(&LabeledMatrix::with_index_ids(sparse(dense)), k, &SvdParams::default()).unwrap()
}

#[test]
fn implicit_fit_matches_dense_svd() {
    for seed in 0..20u64 {
        let rows = 20 + (seed as usize * 97) % 481;
        let cols = 10 + (seed as usize * 37) % 91;
        let density = 0.02 + 0.01 * (seed % 7) as f64 + 4.0 / cols as f64;
        let d = random_dense(seed, rows, cols, density);
        let model = fit(&d, 3);
        let oracle = dense_ca(&d, 3);
        for (a, b) in model.singular_values.iter().zip(&oracle.singular_values) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
        }
        let dr = max_diff_sign_aligned(&oracle.row_std, &model.row_coords);
        assert!(dr < 1e-8, "seed {seed} rows {rows}x{cols}: {dr:e} sv {:?}", oracle.singular_values);
        assert!(max_diff_sign_aligned(&oracle.col_std, &model.col_coords) < 1e-8, "seed {seed} cols");
    }
}

#[test]
fn operator_matches_assembled_residuals() {
    let d = vec![
        vec![1, 0, 1, 0, 0],
        vec![0, 1, 1, 0, 1],
        vec![1, 1, 0, 0, 0],
        vec![0, 0, 0, 1, 1],
        vec![1, 0, 0, 1, 0],
        vec![0, 1, 0, 0, 1],
    ];
    let m = sparse(&d);
    let op = ResidualOperator::new(&m).unwrap();
    let oracle = dense_ca(&d, 1);
    let v = [0.3, -1.2, 0.7, 2.0, -0.4];
    let u = [1.0, -0.5, 0.25, 0.0, 3.0, -2.0];
    let sv = oracle.s.clone() * DMatrix::from_column_slice(5, 1, &v);
    let stu = oracle.s.transpose() * DMatrix::from_column_slice(6, 1, &u);
    for (a, b) in op.apply(&v).unwrap().iter().zip(sv.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in op.apply_transpose(&u).unwrap().iter().zip(stu.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    let frob2: f64 = oracle.s.iter().map(|x| x * x).sum();
    assert!((op.total_inertia() - frob2).abs() < 1e-14);
    // the trivial direction is annihilated
    let sqrt_c: Vec<f64> = oracle.c.iter().map(|c| c.sqrt()).collect();
    assert!(op.apply(&sqrt_c).unwrap().iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn transition_formula_holds_for_active_points() {
    let d = random_dense(99, 200, 50, 0.1);
    let m = sparse(&d);
    let model = fit(&d, 3);
    let rows: Vec<Vec<u32>> = (0..200).map(|i| m.row(i).to_vec()).collect();
    let cols: Vec<Vec<u32>> = (0..50).map(|j| m.col(j).to_vec()).collect();
    let pr = model.project_rows(&rows).unwrap();
    let pc = model.project_columns(&cols).unwrap();
    for k in 0..3 {
        let a = model.singular_values[k];
        for i in 0..200 {
            assert!((pr.coords[(i, k)] - a * model.row_coords[(i, k)]).abs() < 1e-10);
        }
        for j in 0..50 {
            assert!((pc.coords[(j, k)] - a * model.col_coords[(j, k)]).abs() < 1e-10);
        }
    }
}

#[test]
fn two_block_matrix_has_perfect_association() {
    let d = vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 1, 1]];
    let model = CaModel::fit(&LabeledMatrix::with_index_ids(sparse(&d)), 3, &SvdParams::default()).unwrap();
    assert_eq!(model.k_dims(), 1);
    assert!((model.singular_values[0] - 1.0).abs() < 1e-10);
    let g = model.row_coords.column(0);
    assert!(g[0] * g[2] < 0.0);
    assert!((g[0] - g[1]).abs() < 1e-12 && (g[2] - g[3]).abs() < 1e-12);
    assert!((g[0].abs() - 1.0).abs() < 1e-10);
}

#[test]
fn supplementary_row_matches_dense_profile_product() {
    let d = random_dense(5, 60, 15, 0.2);
    let model = fit(&d, 3);
    let oracle = dense_ca(&d, 3);
    // align the oracle's signs to the model's
    let mut gc = oracle.col_std.clone();
    for k in 0..3 {
        if gc.column(k).dot(&model.col_coords.column(k)) < 0.0 {
            gc.column_mut(k).neg_mut();
        }
    }
    let members = vec![0u32, 3, 4, 11];
    let mut profile = DMatrix::zeros(1, 15);
    for &j in &members {
        profile[(0, j as usize)] = 1.0 / members.len() as f64;
    }
    let expect = profile * gc;
    let got = model.project_rows(&[members]).unwrap();
    for k in 0..3 {
        assert!((got.coords[(0, k)] - expect[(0, k)]).abs() < 1e-9);
    }
}

#[test]
fn projection_drops_unknown_members() {
    let d = random_dense(6, 30, 8, 0.3);
    let model = fit(&d, 2);
    let p = model.project_rows(&[vec![0, 1, 99]]).unwrap();
    assert_eq!(p.dropped_members, 1);
    let q = model.project_rows(&[vec![0, 1]]).unwrap();
    assert_eq!(p.coords, q.coords);
    assert!(matches!(model.project_rows(&[vec![99]]), Err(CaError::EmptySupport { point: 0 })));
}

#[test]
fn duplicate_profiles_project_identically() {
    let d = random_dense(8, 80, 20, 0.15);
    let model = fit(&d, 3);
    let p = model.project_rows(&[vec![2, 7, 19], vec![2, 7, 19]]).unwrap();
    for k in 0..3 {
        assert_eq!(p.coords[(0, k)].to_bits(), p.coords[(1, k)].to_bits());
    }
}

#[test]
fn mass_weighted_moments_of_standard_coordinates() {
    let d = random_dense(12, 150, 40, 0.08);
    let model = fit(&d, 3);
    for k in 0..3 {
        let g = model.row_coords.column(k);
        let mean: f64 = g.iter().zip(&model.row_masses).map(|(x, r)| x * r).sum();
        let var: f64 = g.iter().zip(&model.row_masses).map(|(x, r)| x * x * r).sum();
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
    }
}

#[test]
fn save_load_round_trip_is_exact() {
    let d = random_dense(3, 40, 12, 0.2);
    let model = fit(&d, 3);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    model.save(&p).unwrap();
    assert!(dir.path().join("m.coords.bin").exists());
    let back = CaModel::load(&p).unwrap();
    assert_eq!(back, model);
}

#[test]
fn orient_flips_dimension_one_only() {
    let d = random_dense(4, 50, 10, 0.25);
    let model = fit(&d, 3);
    let g = model.col_coords[(0, 0)];
    let anchor = Anchor {
        kind: EntityKind::Brand,
        ids: vec!["c0".into()],
        positive: g < 0.0,
    };
    let o = model.orient(&anchor).unwrap();
    assert_eq!(o.col_coords[(0, 0)], -g);
    assert_eq!(o.orientation.signs, vec![-1, 1, 1]);
    assert_eq!(o.row_coords.column(1), model.row_coords.column(1));
    let again = o.orient(&anchor).unwrap();
    assert_eq!(again.col_coords, o.col_coords);
    let bad = Anchor {
        kind: EntityKind::User,
        ids: vec!["nobody".into()],
        positive: true,
    };
    assert!(matches!(model.orient(&bad), Err(CaError::UnknownAnchor(_))));
}

#[test]
fn precondition_errors() {
    let d = random_dense(1, 10, 4, 0.5);
    let lm = LabeledMatrix::with_index_ids(sparse(&d));
    assert!(matches!(
        CaModel::fit(&lm, 4, &SvdParams::default()),
        Err(CaError::InvalidRank { k: 4, max: 3 })
    ));
    let ones = vec![vec![1u8; 4]; 5];
    let lm = LabeledMatrix::with_index_ids(sparse(&ones));
    assert!(matches!(
        CaModel::fit(&lm, 2, &SvdParams::default()),
        Err(CaError::DegenerateMatrix { .. })
    ));
    let mut z = random_dense(2, 6, 4, 0.5);
    z[3] = vec![0; 4];
    let lm = LabeledMatrix::with_index_ids(SparseBinaryMatrix::from_dense(&z));
    assert!(matches!(
        CaModel::fit(&lm, 2, &SvdParams::default()),
        Err(CaError::ZeroMarginal { index: 3, .. })
    ));
}

#[test]
fn fit_is_identical_across_thread_counts() {
    let d = random_dense(21, 300, 60, 0.07);
    let lm = LabeledMatrix::with_index_ids(sparse(&d));
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| CaModel::fit(&lm, 3, &SvdParams::default()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a, b);
}

fn transpose(d: &[Vec<u8>]) -> Vec<Vec<u8>> {
    (0..d[0].len()).map(|j| d.iter().map(|r| r[j]).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transposing_swaps_row_and_column_roles(seed in any::<u64>(), rows in 8usize..40, cols in 6usize..20) {
        let d = random_dense(seed, rows, cols, 0.3);
        let lm = LabeledMatrix::with_index_ids(sparse(&d));
        let lt = LabeledMatrix::with_index_ids(sparse(&transpose(&d)));
        let (a, b) = match (CaModel::fit(&lm, 2, &SvdParams::default()), CaModel::fit(&lt, 2, &SvdParams::default())) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Ok(()),
        };
        prop_assume!(a.k_dims() == 2 && b.k_dims() == 2);
        // skip near-ties where the singular vectors are not determined
        prop_assume!((a.singular_values[0] - a.singular_values[1]).abs() > 1e-4);
        for k in 0..2 {
            prop_assert!((a.singular_values[k] - b.singular_values[k]).abs() < 1e-9);
        }
        let ok = a.singular_values[1] > 1e-6;
        if ok {
            prop_assert!(max_diff_sign_aligned(&a.row_coords, &b.col_coords) < 1e-6);
            prop_assert!(max_diff_sign_aligned(&a.col_coords, &b.row_coords) < 1e-6);
        }
    }

    #[test]
    fn singular_values_are_sorted_and_bounded(seed in any::<u64>()) {
        let d = random_dense(seed, 30, 12, 0.25);
        let lm = LabeledMatrix::with_index_ids(sparse(&d));
        if let Ok(m) = CaModel::fit(&lm, 3, &SvdParams::default()) {
            prop_assert!(m.singular_values.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(m.singular_values.iter().all(|&s| s > 0.0 && s <= 1.0 + 1e-12));
            let share: f64 = m.explained_inertia().iter().sum();
            prop_assert!(share <= 1.0 + 1e-12);
        }
    }
}
