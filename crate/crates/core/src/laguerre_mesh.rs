//! Lagrange-Laguerre mesh in one dimension and its tensor-product quadrature.
//!
//! The Lagrange function attached to node `u_i` is
//! `f_i(u) = (-1)^i u_i^{1/2} L_N(u) / (u - u_i) e^{-u/2}` (1-based `i`), which obeys
//! `f_i(u_j) = lambda_j^{-1/2} delta_ij` where `lambda_j` is the Gauss-Laguerre weight
//! multiplied by `e^{u_j}`.

use crate::error::{Error, Result};
use faer::{Mat, Side};
use twofloat::TwoFloat;

/// Largest supported number of nodes per axis.
pub const MAX_NODES: usize = 200;

/// Scale factors and node counts of the three perimetric axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshSpec {
    /// Nodes along x and along y.
    pub n_xy: usize,
    /// Nodes along z.
    pub n_z: usize,
    /// Scale factor along x and y.
    pub h_xy: f64,
    /// Scale factor along z.
    pub h_z: f64,
}

impl MeshSpec {
    /// Mesh used for every production run.
    pub const PRODUCTION: MeshSpec = MeshSpec { n_xy: 40, n_z: 20, h_xy: 0.14, h_z: 0.4 };

    /// Builds a spec after checking its domain.
    pub fn new(n_xy: usize, n_z: usize, h_xy: f64, h_z: f64) -> Result<Self> {
        let spec = MeshSpec { n_xy, n_z, h_xy, h_z };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks node counts and scale factors.
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n_xy", self.n_xy), ("n_z", self.n_z)] {
            if n == 0 || n > MAX_NODES {
                return Err(Error::InvalidArgument(format!("{name} = {n} must lie in 1..={MAX_NODES}")));
            }
        }
        for (name, h) in [("h_xy", self.h_xy), ("h_z", self.h_z)] {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} = {h} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Nodes, weights and derivative matrix of a one-dimensional Lagrange-Laguerre mesh.
#[derive(Clone, Debug)]
pub struct Mesh1D {
    /// Unscaled zeros `u_i` of `L_N`, ascending.
    pub nodes: Vec<f64>,
    /// Weights `lambda_i = w_i e^{u_i}` with `w_i` the Gauss-Laguerre weights.
    pub lambdas: Vec<f64>,
    /// Row-major `D[p][i] = lambda_p^{1/2} f_i'(u_p)` on the unscaled variable.
    pub deriv: Vec<f64>,
}

impl Mesh1D {
    /// Builds the mesh with `n` nodes.
    pub fn new(n: usize) -> Result<Self> {
        let nodes = laguerre_zeros(n)?;
        let lambdas = christoffel_weights(&nodes);
        let deriv = derivative_matrix(&nodes);
        Ok(Mesh1D { nodes, lambdas, deriv })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the mesh has no node.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Entry `D[p][i]` of the derivative matrix.
    #[inline]
    pub fn d(&self, p: usize, i: usize) -> f64 {
        self.deriv[p * self.nodes.len() + i]
    }

    /// Value of the Lagrange function `f_i` at `u`.
    pub fn lagrange(&self, i: usize, u: f64) -> f64 {
        lagrange_eval(&self.nodes, i, u)
    }
}

/// Laguerre polynomials `e^{-u/2} L_{n-1}(u)` and `e^{-u/2} L_n(u)` from the three-term recurrence.
fn scaled_laguerre_pair(n: usize, u: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = (-0.5 * u).exp();
    for k in 0..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - u) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Same pair as [`scaled_laguerre_pair`] with the recurrence carried in double-double
/// arithmetic, which keeps full double accuracy near the zeros of `L_n`.
fn scaled_laguerre_pair_dd(n: usize, u: f64) -> (f64, f64) {
    let mut prev = TwoFloat::from(0.0);
    let mut cur = TwoFloat::from((-0.5 * u).exp());
    for k in 0..n {
        let kf = k as f64;
        let a = TwoFloat::new_add(2.0 * kf + 1.0, -u);
        let next = (a * cur - prev * kf) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (f64::from(prev), f64::from(cur))
}

/// Zeros of the Laguerre polynomial `L_n`, ascending.
///
/// Eigenvalues of the symmetric Jacobi matrix give starting values which are then
/// polished by Newton steps on the recurrence.
pub fn laguerre_zeros(n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::InvalidArgument(format!("node count {n} must lie in 1..={MAX_NODES}")));
    }
    let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * i as f64 + 1.0
        } else if i == j + 1 || j == i + 1 {
            i.max(j) as f64
        } else {
            0.0
        }
    });
    let mut nodes = jacobi
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Factorization(format!("Jacobi matrix eigenvalues: {e:?}")))?;
    nodes.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    for u in nodes.iter_mut() {
        for _ in 0..6 {
            let (lm1, ln) = scaled_laguerre_pair_dd(n, *u);
            let dln = nf * (ln - lm1) / *u;
            if dln == 0.0 {
                break;
            }
            let next = *u - ln / dln;
            if next == *u {
                break;
            }
            *u = next;
        }
    }
    Ok(nodes)
}

/// Weights `lambda_i = e^{u_i} / (u_i [L_N'(u_i)]^2)` for the zeros of `L_N`.
pub fn christoffel_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let nf = n as f64;
    nodes
        .iter()
        .map(|&u| {
            let (lm1, _) = scaled_laguerre_pair_dd(n, u);
            u / (nf * nf * lm1 * lm1)
        })
        .collect()
}

/// Derivative matrix `D[p][i] = lambda_p^{1/2} f_i'(u_p)`, row-major.
pub fn derivative_matrix(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut d = vec![0.0; n * n];
    for p in 0..n {
        for i in 0..n {
            d[p * n + i] = if p == i {
                -0.5 / nodes[i]
            } else {
                let sign = if (p + i) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (nodes[i] / nodes[p]).sqrt() / (nodes[p] - nodes[i])
            };
        }
    }
    d
}

/// Lagrange-Laguerre function `f_i(u)` (0-based `i`) in product form.
///
/// Writing `L_N(u)/(u - u_i)` as a product over the other nodes avoids the removable
/// singularity at `u = u_i`.
pub fn lagrange_eval(nodes: &[f64], i: usize, u: f64) -> f64 {
    let n = nodes.len();
    let nf = n as f64;
    let damp = (-0.5 * u / nf).exp();
    let mut prod = damp / nf;
    let mut k = 1.0;
    for (j, &uj) in nodes.iter().enumerate() {
        if j == i {
            continue;
        }
        prod *= (uj - u) / k * damp;
        k += 1.0;
    }
    // L_N(u) / (u - u_i) = -prod_{j != i} (u_j - u) / N! when L_N(0) = 1.
    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
    sign * nodes[i].sqrt() * prod
}

/// Value of `e^{-u/2} L_N(u) / (u - u_i)` times `(-1)^{i+1} u_i^{1/2}` through the recurrence.
///
/// Independent of [`lagrange_eval`]; undefined at `u = u_i`.
pub fn lagrange_eval_recurrence(nodes: &[f64], i: usize, u: f64) -> f64 {
    let (_, ln) = scaled_laguerre_pair(nodes.len(), u);
    let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
    sign * nodes[i].sqrt() * ln / (u - nodes[i])
}

/// Gauss quadrature of `f` over the positive octant with the production weights.
///
/// Returns `h^2 h_z sum_ijk lambda_i lambda_j lambda_k f(h u_i, h u_j, h_z w_k)`.
pub fn quadrature_3d(spec: &MeshSpec, f: impl Fn(f64, f64, f64) -> f64) -> Result<f64> {
    spec.validate()?;
    let mxy = Mesh1D::new(spec.n_xy)?;
    let mz = Mesh1D::new(spec.n_z)?;
    Ok(quadrature_3d_with(&mxy, &mz, spec.h_xy, spec.h_z, f))
}

/// Same as [`quadrature_3d`] on prebuilt one-dimensional meshes.
pub fn quadrature_3d_with(
    mxy: &Mesh1D,
    mz: &Mesh1D,
    h_xy: f64,
    h_z: f64,
    f: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for (&ui, &li) in mxy.nodes.iter().zip(&mxy.lambdas) {
        for (&uj, &lj) in mxy.nodes.iter().zip(&mxy.lambdas) {
            for (&wk, &lk) in mz.nodes.iter().zip(&mz.lambdas) {
                total += li * lj * lk * f(h_xy * ui, h_xy * uj, h_z * wk);
            }
        }
    }
    total * h_xy * h_xy * h_z
}
