//! Quick numerical identities, each reduced to a worst-case deviation and a tolerance.

use super::{element_triple_sum, euler_matrix_element, pseudo_random};
use perimesh::coordinates::{MassSet, PROTON_MASS};
use perimesh::eigensolver::{solve_block, EigenRequest, MeshWavefunction};
use perimesh::hamiltonian::{basis_index, Hamiltonian, MeshGeometry, StateLabel, SymOperator};
use perimesh::laguerre_mesh::{Mesh1D, MeshSpec};
use perimesh::transitions::{
    angular_factor, clebsch_gordan, oscillator_strength, perimetric_element, transition_probability, PhysicalConstants,
};
use std::sync::Arc;

/// Outcome of one identity check.
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Relative error of Gauss-Laguerre sums of `u^k e^{-u}` for `k < 2N`, `N <= 40`.
pub fn quadrature_exactness() -> Check {
    let mut worst = 0.0f64;
    for n in 1..=40 {
        let m = Mesh1D::new(n).unwrap();
        for k in 0..(2 * n as u32) {
            let q: f64 = m.nodes.iter().zip(&m.lambdas).map(|(&u, &l)| l * (-u).exp() * u.powi(k as i32)).sum();
            worst = worst.max((q / factorial(k) - 1.0).abs());
        }
    }
    Check { name: "quadrature exactness", worst, tol: 1e-11 }
}

/// Deviation of the Lagrange functions from orthonormality and from the cardinal property.
pub fn lagrange_identities() -> Check {
    let mut worst = 0.0f64;
    for n in [3usize, 8, 15, 24, 40] {
        let m = Mesh1D::new(n).unwrap();
        let fine = Mesh1D::new(2 * n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let s: f64 = fine.nodes.iter().zip(&fine.lambdas).map(|(&u, &l)| l * m.lagrange(i, u) * m.lagrange(j, u)).sum();
                worst = worst.max((s - if i == j { 1.0 } else { 0.0 }).abs());
                let card = m.lagrange(i, m.nodes[j]) * m.lambdas[j].sqrt();
                worst = worst.max((card - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    Check { name: "Lagrange orthonormality", worst, tol: 1e-13 }
}

/// Oscillator-strength reciprocity and the rate-oscillator-strength relation.
pub fn reciprocity() -> Check {
    let c = PhysicalConstants::default();
    let mut worst = 0.0f64;
    let r = pseudo_random(300, 5);
    for t in 0..100 {
        let s = 10f64.powf(6.0 * r[3 * t]);
        let e_i = -0.5 + 0.1 * r[3 * t + 1];
        let e_f = e_i - 0.05 * (r[3 * t + 2] + 0.5) - 1e-5;
        let l_i = (t % 40) as u32;
        let l_f = l_i + 2;
        let f_emit = oscillator_strength(s, e_i, e_f, l_i, &c);
        let f_abs = oscillator_strength(s, e_f, e_i, l_f, &c);
        let want = (2 * l_i + 1) as f64 / (2 * l_f + 1) as f64 * f_emit.abs();
        worst = worst.max((f_abs / want - 1.0).abs());
        let w = transition_probability(s, e_i, e_f, l_i, &c).unwrap();
        let from_f = 2.0 * c.alpha.powi(3) * (e_i - e_f).powi(2) * f_emit.abs() / c.atomic_time_s;
        worst = worst.max((w / from_f - 1.0).abs());
    }
    Check { name: "oscillator reciprocity and rate relation", worst, tol: 1e-12 }
}

/// Relative asymmetry of the matrix-free Hamiltonian on a six-point mesh.
pub fn hamiltonian_symmetry() -> Check {
    let spec = MeshSpec::new(6, 6, 0.5, 1.0).unwrap();
    let mut worst = 0.0f64;
    for label in [StateLabel::natural(0, 2), StateLabel::natural(1, 2), StateLabel::natural(2, 2), StateLabel::natural(3, 3)] {
        let h = Hamiltonian::new(label, spec, MassSet::default()).unwrap();
        let n = h.dim();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = vec![0.0; n];
                h.apply(&e, &mut col);
                col
            })
            .collect();
        let scale = cols.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((cols[j][i] - cols[i][j]).abs() / scale);
            }
        }
    }
    Check { name: "Hamiltonian symmetry", worst, tol: 1e-12 }
}

/// Largest rise of the ground energy along `N = 10, 14, 18, 22` at fixed scale factors.
pub fn variational_monotonicity() -> Check {
    let label = StateLabel::natural(0, 2);
    let mut energies = Vec::new();
    for n in [10usize, 14, 18, 22] {
        let spec = MeshSpec::new(n, 10, 0.3, 0.8).unwrap();
        let geom = Arc::new(MeshGeometry::new(spec, MassSet::default()).unwrap());
        energies.push(solve_block(&label, &geom, &EigenRequest::new(1)).unwrap().values[0]);
    }
    let worst = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Check { name: "variational monotonicity", worst, tol: 0.0 }
}

fn random_wf(label: StateLabel, spec: MeshSpec, seed: u64) -> MeshWavefunction {
    let dim = basis_index(&label, &spec).unwrap().dim();
    MeshWavefunction {
        spec,
        m_p: PROTON_MASS,
        label,
        v: 0,
        energy: -0.5,
        quasibound: false,
        near_degenerate: false,
        coeffs: pseudo_random(dim, seed),
    }
}

/// Perimetric matrix elements against the triple sum on a six-point mesh.
pub fn element_oracle() -> Check {
    let spec = MeshSpec::new(6, 6, 0.5, 1.0).unwrap();
    let mut worst = 0.0f64;
    for (li, lf) in [(0u32, 2u32), (2, 2), (3, 1), (4, 2), (2, 4), (3, 5)] {
        let a = random_wf(StateLabel::natural(li, 2), spec, 11 + li as u64);
        let b = random_wf(StateLabel::natural(lf, 2), spec, 97 + lf as u64);
        for k_i in 0..=a.label.k_max {
            for k_f in 0..=b.label.k_max {
                for kappa in 0..=2u32 {
                    if (k_i + k_f + kappa) % 2 != 0 {
                        continue;
                    }
                    let got = perimetric_element(&a, &b, k_i, k_f, kappa).unwrap();
                    let want = element_triple_sum(&a, &b, k_i, k_f, kappa);
                    worst = worst.max((got - want).abs() / want.abs().max(1.0));
                }
            }
        }
    }
    Check { name: "perimetric element vs triple sum", worst, tol: 1e-13 }
}

/// Angular factors against quadrature over the Euler angles.
pub fn angular_oracle() -> Check {
    let mut worst = 0.0f64;
    for l_i in 0u32..=5 {
        for l_f in [l_i.saturating_sub(2), l_i, l_i + 2] {
            if l_i + l_f < 2 {
                continue;
            }
            let (p_i, p_f) = (if l_i % 2 == 0 { 1 } else { -1 }, if l_f % 2 == 0 { 1 } else { -1 });
            for (m_i, mu) in [(0i32, 0i32), (1, 1), (1, -2)] {
                if m_i.unsigned_abs() > l_i || (m_i + mu).unsigned_abs() > l_f {
                    continue;
                }
                let cg_m = clebsch_gordan(l_i as i32, 2, l_f as i32, m_i, mu, m_i + mu).unwrap();
                let pre = cg_m * ((2 * l_i + 1) as f64 / (2 * l_f + 1) as f64).sqrt();
                for k_i in 0..=l_i.min(2) {
                    for k_f in 0..=l_f.min(2) {
                        for kappa in 0..=2u32 {
                            let want = euler_matrix_element(
                                l_i as i32, p_i, m_i, k_i as i32, l_f as i32, p_f, m_i + mu, k_f as i32, mu, kappa as i32,
                            );
                            let weight = if kappa == 0 { 2.0 } else { 1.0 };
                            let got = pre * weight * angular_factor(l_i, l_f, p_f, k_i, k_f, kappa).unwrap();
                            worst = worst.max((got - want).abs());
                        }
                    }
                }
            }
        }
    }
    Check { name: "angular factor vs Euler-angle quadrature", worst, tol: 1e-10 }
}

/// Every quick identity check.
pub fn all() -> Vec<Check> {
    vec![
        quadrature_exactness(),
        lagrange_identities(),
        reciprocity(),
        hamiltonian_symmetry(),
        variational_monotonicity(),
        element_oracle(),
        angular_oracle(),
    ]
}
