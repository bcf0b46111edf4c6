//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use perimesh::eigensolver::MeshWavefunction;
use perimesh::hamiltonian::basis_index;
use perimesh::laguerre_mesh::Mesh1D;

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let step = p1 / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x.push(t);
        w.push(2.0 / ((1.0 - t * t) * dp * dp));
    }
    (x, w)
}

fn fact(n: i32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Wigner small-d function `d^j_{m' m}(beta)` from the explicit sum.
pub fn wigner_d(j: i32, mp: i32, m: i32, beta: f64) -> f64 {
    if mp.abs() > j || m.abs() > j {
        return 0.0;
    }
    let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let pre = (fact(j + mp) * fact(j - mp) * fact(j + m) * fact(j - m)).sqrt();
    let mut sum = 0.0;
    for k in 0..=(2 * j) {
        let (a, b, d, e) = (j + m - k, k, mp - m + k, j - mp - k);
        if a < 0 || d < 0 || e < 0 {
            continue;
        }
        let sign = if (mp - m + k) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * c.powi(2 * j + m - mp - 2 * k) * s.powi(mp - m + 2 * k) / (fact(a) * fact(b) * fact(d) * fact(e));
    }
    pre * sum
}

type C64 = (f64, f64);

fn cmul(a: C64, b: C64) -> C64 {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Wigner function `D^j_{m' m}(alpha, beta, gamma) = e^{-i m' alpha} d(beta) e^{-i m gamma}`.
fn wigner_big_d(j: i32, mp: i32, m: i32, a: f64, b: f64, g: f64) -> C64 {
    let d = wigner_d(j, mp, m, b);
    let ph = -(mp as f64 * a + m as f64 * g);
    (d * ph.cos(), d * ph.sin())
}

/// Symmetrized normalized rotation function of angular momentum `l` and parity `parity`.
fn sym_d(l: i32, parity: i32, m: i32, k: i32, a: f64, b: f64, g: f64) -> C64 {
    let norm = ((2 * l + 1) as f64).sqrt() / (4.0 * std::f64::consts::PI) / if k == 0 { 2f64.sqrt() } else { 1.0 };
    let phase = parity as f64 * if (l + k) % 2 == 0 { 1.0 } else { -1.0 };
    let d1 = wigner_big_d(l, m, k, a, b, g);
    let d2 = wigner_big_d(l, m, -k, a, b, g);
    (norm * (d1.0 + phase * d2.0), norm * (d1.1 + phase * d2.1))
}

/// Matrix element `<D'_{M'K'} | D^2_{mu kappa} + (-1)^kappa D^2_{mu -kappa} | D_{MK}>` of
/// symmetrized rotation functions by quadrature over the three Euler angles.
#[allow(clippy::too_many_arguments)]
pub fn euler_matrix_element(
    l_i: i32,
    p_i: i32,
    m_i: i32,
    k_i: i32,
    l_f: i32,
    p_f: i32,
    m_f: i32,
    k_f: i32,
    mu: i32,
    kappa: i32,
) -> f64 {
    let n_ang = 16;
    let (xs, ws) = gauss_legendre(24);
    let two_pi = 2.0 * std::f64::consts::PI;
    let sk = if kappa % 2 == 0 { 1.0 } else { -1.0 };
    let mut total = (0.0, 0.0);
    for ia in 0..n_ang {
        let a = two_pi * ia as f64 / n_ang as f64;
        for ig in 0..n_ang {
            let g = two_pi * ig as f64 / n_ang as f64;
            for (x, w) in xs.iter().zip(&ws) {
                let b = x.acos();
                let bra = sym_d(l_f, p_f, m_f, k_f, a, b, g);
                let bra = (bra.0, -bra.1);
                let o1 = wigner_big_d(2, mu, kappa, a, b, g);
                let o2 = wigner_big_d(2, mu, -kappa, a, b, g);
                let op = (o1.0 + sk * o2.0, o1.1 + sk * o2.1);
                let ket = sym_d(l_i, p_i, m_i, k_i, a, b, g);
                let v = cmul(cmul(bra, op), ket);
                total.0 += w * v.0;
                total.1 += w * v.1;
            }
        }
    }
    let cell = (two_pi / n_ang as f64).powi(2);
    total.0 * cell
}

/// Quadrupole kernels written directly in perimetric coordinates.
pub fn kernel_direct(kappa: u32, x: f64, y: f64, z: f64, gamma: f64) -> f64 {
    let r = 0.5 * (x + y);
    let rho2 = x * y * z * (x + y + z) / ((x + y) * (x + y));
    let zeta = (x - y) * (2.0 * z + x + y) / (4.0 * (x + y));
    match kappa {
        0 => 0.5 * (r * r - gamma * (2.0 * zeta * zeta - rho2)),
        1 => -(1.5f64).sqrt() * gamma * zeta * rho2.sqrt(),
        _ => -(0.375f64).sqrt() * gamma * rho2,
    }
}

/// Perimetric matrix element as a triple sum over the symmetrized index range
/// `j <= i - delta` with `delta = max(delta_i, delta_f)`.
///
/// Valid when the exchange parity of the kernel, `(-1)^kappa`, equals the product of
/// the exchange parities of the two blocks.
pub fn element_triple_sum(wf_i: &MeshWavefunction, wf_f: &MeshWavefunction, k_i: u32, k_f: u32, kappa: u32) -> f64 {
    let spec = wf_i.spec;
    let bi = basis_index(&wf_i.label, &spec).unwrap();
    let bf = basis_index(&wf_f.label, &spec).unwrap();
    let (blk_i, blk_f) = (&bi.blocks[k_i as usize], &bf.blocks[k_f as usize]);
    let delta = blk_i.delta.max(blk_f.delta);
    let mxy = Mesh1D::new(spec.n_xy).unwrap();
    let mz = Mesh1D::new(spec.n_z).unwrap();
    let gamma = perimesh::coordinates::MassSet { m_p: wf_i.m_p }.gamma();
    let lookup = |blk: &perimesh::hamiltonian::KBlock, coeffs: &[f64], i: usize, j: usize, k: usize| -> f64 {
        blk.triples
            .iter()
            .position(|&t| t == (i as u16, j as u16, k as u16))
            .map(|p| coeffs[blk.offset + p])
            .unwrap_or(0.0)
    };
    let mut sum = 0.0;
    for i in 0..spec.n_xy {
        for j in 0..spec.n_xy {
            if j + delta > i {
                continue;
            }
            for k in 0..spec.n_z {
                let ci = lookup(blk_i, &wf_i.coeffs, i, j, k);
                let cf = lookup(blk_f, &wf_f.coeffs, i, j, k);
                let (x, y, z) = (spec.h_xy * mxy.nodes[i], spec.h_xy * mxy.nodes[j], spec.h_z * mz.nodes[k]);
                sum += ci * cf * kernel_direct(kappa, x, y, z, gamma);
            }
        }
    }
    sum
}

/// Deterministic pseudo-random numbers in `[-0.5, 0.5)`.
pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}
