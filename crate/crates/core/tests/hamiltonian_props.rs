mod common;

use perimesh::coordinates::{kinetic_metric, kinetic_metric_body, MassSet, PerimetricPoint};
use perimesh::eigensolver::{solve_block, EigenRequest};
use perimesh::hamiltonian::{basis_index, Hamiltonian, MeshGeometry, StateLabel, SymOperator};
use perimesh::laguerre_mesh::MeshSpec;
use proptest::prelude::*;
use std::sync::Arc;

fn labels() -> Vec<StateLabel> {
    vec![
        StateLabel::natural(0, 2),
        StateLabel::natural(1, 2),
        StateLabel::natural(2, 2),
        StateLabel::natural(3, 2),
        StateLabel::natural(4, 1),
        StateLabel { l: 2, parity: 1, exchange: -1, k_max: 2 },
    ]
}

fn dense_from_matvec(h: &Hamiltonian) -> Vec<Vec<f64>> {
    let n = h.dim();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut col = vec![0.0; n];
            h.apply(&e, &mut col);
            col
        })
        .collect()
}

#[test]
fn matrix_free_operator_is_symmetric() {
    let spec = MeshSpec::new(6, 4, 0.5, 1.0).unwrap();
    for label in labels() {
        let h = Hamiltonian::new(label, spec, MassSet::default()).unwrap();
        let cols = dense_from_matvec(&h);
        let scale = cols.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let n = h.dim();
        for i in 0..n {
            for j in 0..i {
                let d = (cols[j][i] - cols[i][j]).abs();
                assert!(d <= 1e-12 * scale, "{label:?} H[{i}][{j}] asymmetric by {d}");
            }
        }
    }
}

#[test]
fn matrix_free_operator_matches_assembled_matrix() {
    let spec = MeshSpec::new(5, 4, 0.6, 0.9).unwrap();
    for label in labels() {
        let h = Hamiltonian::new(label, spec, MassSet::default()).unwrap();
        let dense = h.assemble().unwrap().to_dense();
        let cols = dense_from_matvec(&h);
        let scale = cols.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                assert!((dense[(i, j)] - v).abs() <= 1e-12 * scale, "{label:?} ({i},{j})");
            }
        }
    }
}

#[test]
fn basis_sizes_depend_only_on_projection_parity() {
    let spec = MeshSpec::PRODUCTION;
    let sizes: Vec<usize> = basis_index(&StateLabel::natural(2, 2), &spec).unwrap().blocks.iter().map(|b| b.len()).collect();
    assert_eq!(sizes, vec![16400, 15600, 16400]);
    let odd: Vec<usize> = basis_index(&StateLabel::natural(3, 3), &spec).unwrap().blocks.iter().map(|b| b.len()).collect();
    assert_eq!(odd, vec![16400, 15600, 16400, 15600]);
}

#[test]
fn rejects_unnatural_parity_and_bad_projections() {
    let spec = MeshSpec::new(4, 4, 0.5, 1.0).unwrap();
    let m = MassSet::default();
    assert!(Hamiltonian::new(StateLabel { l: 2, parity: -1, exchange: 1, k_max: 2 }, spec, m).is_err());
    assert!(Hamiltonian::new(StateLabel { l: 1, parity: -1, exchange: -1, k_max: 2 }, spec, m).is_err());
    assert!(Hamiltonian::new(StateLabel { l: 2, parity: 1, exchange: 3, k_max: 2 }, spec, m).is_err());
}

#[test]
fn ground_energy_decreases_with_mesh_size() {
    let label = StateLabel::natural(0, 2);
    let mut prev = f64::INFINITY;
    for n in [10usize, 14, 18, 22] {
        let spec = MeshSpec::new(n, 10, 0.3, 0.8).unwrap();
        let geom = Arc::new(MeshGeometry::new(spec, MassSet::default()).unwrap());
        let e = solve_block(&label, &geom, &EigenRequest::new(1)).unwrap().values[0];
        assert!(e < prev, "N={n}: {e} not below {prev}");
        assert!(e > -0.5971390631234, "N={n}: {e} below the converged ground energy");
        prev = e;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kinetic_metric_routes_agree(x in 0.01f64..20.0, y in 0.01f64..20.0, z in 0.01f64..20.0) {
        let p = PerimetricPoint::new(x, y, z).unwrap();
        let m = MassSet::default();
        let a = kinetic_metric(&p, &m);
        let b = kinetic_metric_body(&p, &m);
        let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        for r in 0..3 {
            for c in 0..3 {
                prop_assert!((a[r][c] - b[r][c]).abs() <= 1e-12 * scale, "[{r}][{c}] {} vs {}", a[r][c], b[r][c]);
            }
        }
    }

    #[test]
    fn quadratic_form_matches_matrix_vector_product(seed in 0u64..1000, which in 0usize..6) {
        let spec = MeshSpec::new(6, 5, 0.4, 0.9).unwrap();
        let h = Hamiltonian::new(labels()[which], spec, MassSet::default()).unwrap();
        let x = common::pseudo_random(h.dim(), seed);
        let mut y = vec![0.0; x.len()];
        h.apply(&x, &mut y);
        let direct: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>() * 0.5;
        let q = h.quadratic_form(&x);
        prop_assert!((q - direct).abs() <= 1e-12 * scale, "{q} vs {direct}");
    }
}
