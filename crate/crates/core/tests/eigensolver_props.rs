mod common;

use perimesh::coordinates::MassSet;
use perimesh::eigensolver::{
    assign_vibrational, davidson, dissociated_fraction, lowest_eigenpairs, solve_block, DiagonalPreconditioner,
    EigenRequest, EigenResult, LevelSolver, MeshWavefunction, DISSOCIATION_RADIUS, WAVEFUNCTION_MAGIC,
};
use perimesh::hamiltonian::{basis_index, Hamiltonian, MeshGeometry, SparseSymMatrix, StateLabel};
use perimesh::laguerre_mesh::{laguerre_zeros, MeshSpec};
use perimesh::Error;
use proptest::prelude::*;
use std::sync::Arc;

fn small_geometry() -> Arc<MeshGeometry> {
    Arc::new(MeshGeometry::new(MeshSpec::new(10, 6, 0.35, 0.9).unwrap(), MassSet::default()).unwrap())
}

#[test]
fn davidson_matches_dense_diagonalization() {
    let geom = small_geometry();
    for label in [StateLabel::natural(0, 2), StateLabel::natural(2, 2), StateLabel::natural(3, 2)] {
        let dense = Hamiltonian::with_geometry(label, Arc::clone(&geom)).unwrap().assemble().unwrap();
        let want = lowest_eigenpairs(&dense, &EigenRequest::new(4)).unwrap();
        let got = solve_block(&label, &geom, &EigenRequest::new(4)).unwrap();
        for (g, w) in got.values.iter().zip(&want.values) {
            assert!((g - w).abs() < 1e-11, "L={} {g} vs {w}", label.l);
        }
        assert!(got.residuals.iter().all(|r| *r <= 1e-9));
    }
}

#[test]
fn reused_factorization_gives_the_same_levels() {
    let geom = small_geometry();
    let mut solver = LevelSolver::new(Arc::clone(&geom));
    let req = EigenRequest::new(3);
    solver.solve(&StateLabel::natural(4, 2), &req).unwrap();
    let reused = solver.solve(&StateLabel::natural(6, 2), &req).unwrap();
    let fresh = solve_block(&StateLabel::natural(6, 2), &geom, &req).unwrap();
    for (a, b) in reused.values.iter().zip(&fresh.values) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn rejects_bad_requests() {
    let geom = small_geometry();
    let label = StateLabel::natural(0, 2);
    assert!(solve_block(&label, &geom, &EigenRequest::new(0)).is_err());
    let bad_tol = EigenRequest { tol: -1.0, ..EigenRequest::new(1) };
    assert!(solve_block(&label, &geom, &bad_tol).is_err());
    let tiny = Arc::new(MeshGeometry::new(MeshSpec::new(2, 1, 0.5, 1.0).unwrap(), MassSet::default()).unwrap());
    assert!(matches!(solve_block(&label, &tiny, &EigenRequest::new(10)), Err(Error::TooManyStates { .. })));
}

fn sample_state() -> MeshWavefunction {
    let geom = small_geometry();
    let label = StateLabel::natural(2, 2);
    let res = solve_block(&label, &geom, &EigenRequest::new(2)).unwrap();
    assign_vibrational(&res, &label, &geom.spec, &geom.masses).remove(1)
}

#[test]
fn wavefunction_round_trips_through_disk() {
    let wf = sample_state();
    assert_eq!(wf.v, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    wf.save(&path).unwrap();
    let back = MeshWavefunction::load(&path).unwrap();
    assert_eq!(back, wf);
}

#[test]
fn corrupted_wavefunction_files_are_rejected() {
    let wf = sample_state();
    let mut bytes = Vec::new();
    wf.write_to(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], &WAVEFUNCTION_MAGIC);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(MeshWavefunction::read_from(&mut bad_magic.as_slice()), Err(Error::Format(_))));

    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(MeshWavefunction::read_from(&mut bad_version.as_slice()), Err(Error::Format(_))));

    let truncated = &bytes[..bytes.len() - 8];
    assert!(MeshWavefunction::read_from(&mut &truncated[..]).is_err());

    let mut wrong_len = wf.clone();
    wrong_len.coeffs.pop();
    let mut buf = Vec::new();
    wrong_len.write_to(&mut buf).unwrap();
    assert!(matches!(MeshWavefunction::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
}

#[test]
fn vibrational_indices_follow_energy() {
    let geom = small_geometry();
    let label = StateLabel::natural(0, 2);
    let res = solve_block(&label, &geom, &EigenRequest::new(4)).unwrap();
    let wfs = assign_vibrational(&res, &label, &geom.spec, &geom.masses);
    for (v, pair) in wfs.windows(2).enumerate() {
        assert_eq!(pair[0].v, v as u32);
        assert!(pair[0].energy < pair[1].energy);
    }
    let norm: f64 = wfs[0].coeffs.iter().map(|c| c * c).sum();
    assert!((norm - 1.0).abs() < 1e-12);
}

/// Unit vector on the first basis function whose internuclear distance is above or below the radius.
fn point_state(label: &StateLabel, spec: &MeshSpec, far: bool) -> Vec<f64> {
    let index = basis_index(label, spec).unwrap();
    let nodes = laguerre_zeros(spec.n_xy).unwrap();
    let mut x = vec![0.0; index.dim()];
    let b = &index.blocks[0];
    let t = b
        .triples
        .iter()
        .position(|&(i, j, _)| (0.5 * spec.h_xy * (nodes[i as usize] + nodes[j as usize]) > DISSOCIATION_RADIUS) == far)
        .unwrap();
    x[b.offset + t] = 1.0;
    x
}

#[test]
fn dissociated_fraction_measures_weight_at_large_separation() {
    let geom = small_geometry();
    let label = StateLabel::natural(2, 2);
    let near = point_state(&label, &geom.spec, false);
    let far = point_state(&label, &geom.spec, true);
    assert_eq!(dissociated_fraction(&label, &geom.spec, &near).unwrap(), 0.0);
    assert_eq!(dissociated_fraction(&label, &geom.spec, &far).unwrap(), 1.0);
    let mixed: Vec<f64> = near.iter().zip(&far).map(|(a, b)| a + 2.0 * b).collect();
    assert!((dissociated_fraction(&label, &geom.spec, &mixed).unwrap() - 0.8).abs() < 1e-15);
    assert!(dissociated_fraction(&label, &geom.spec, &near[1..]).is_err());
}

#[test]
fn continuum_states_above_threshold_are_not_numbered() {
    let geom = small_geometry();
    let label = StateLabel::natural(2, 2);
    let near = point_state(&label, &geom.spec, false);
    let far = point_state(&label, &geom.spec, true);
    let ed = geom.masses.dissociation_energy();
    let res = EigenResult {
        values: vec![ed - 0.01, ed - 0.005, ed + 0.001, ed + 0.002],
        vectors: vec![far.clone(), near.clone(), far, near],
        residuals: vec![0.0; 4],
        op_norm: 1.0,
        iterations: 0,
    };
    let wfs = assign_vibrational(&res, &label, &geom.spec, &geom.masses);
    let kept: Vec<(u32, f64, bool)> = wfs.iter().map(|w| (w.v, w.energy, w.quasibound)).collect();
    assert_eq!(kept, vec![(0, ed - 0.01, false), (1, ed - 0.005, false), (2, ed + 0.002, true)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn davidson_matches_dense_on_random_matrices(n in 40usize..160, seed in 0u64..10_000, nev in 1usize..5) {
        let r = common::pseudo_random(4 * n, seed);
        let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, i as f64 * 0.1 + r[i])).collect();
        for i in 1..n {
            entries.push((i, i - 1, r[n + i]));
            let j = (i * 7 + seed as usize) % i;
            if j + 1 < i {
                entries.push((i, j, 0.1 * r[2 * n + i]));
            }
        }
        let m = SparseSymMatrix::from_triplets(n, entries).unwrap();
        let want = lowest_eigenpairs(&m, &EigenRequest::new(nev)).unwrap();
        let mut diag = vec![0.0; n];
        for ((&a, &b), &v) in m.rows.iter().zip(&m.cols).zip(&m.values) {
            if a == b {
                diag[a as usize] = v;
            }
        }
        let got = davidson(&m, &DiagonalPreconditioner::new(&diag, want.values[0] - 1.0), &EigenRequest::new(nev), &[]).unwrap();
        for (g, w) in got.values.iter().zip(&want.values) {
            prop_assert!((g - w).abs() < 1e-11, "{g} vs {w}");
        }
    }
}
