//! Hamiltonian of the three-body system in the Lagrange-mesh basis.
//!
//! The wave function of total angular momentum `L` is expanded as
//! `sum_K D_K(Omega) Phi_K(x, y, z)` over body-frame projections `K`. Each `Phi_K` lives on
//! the tensor mesh with regularization factor `R_K = 1` for `K = 0` and
//! `sqrt(x y z (x+y+z))` otherwise, and is symmetrized under the exchange `x <-> y`.
//!
//! Matrix elements come from the symmetric (first-derivative) form of the kinetic energy
//! evaluated with the Gauss-Laguerre rule. For `K >= 1` the regularization factor is moved
//! out of the derivatives analytically, leaving a smooth effective potential.
//! The operator is applied without storing the matrix: one-dimensional derivative matrices
//! act along each axis of the full grid and the result is projected on the symmetrized basis.

use crate::coordinates::{
    body_frame, coulomb_potential, kinetic_metric, lambda_field, regularization, volume_weight, MassSet,
    PerimetricPoint,
};
use crate::error::{Error, Result};
use crate::laguerre_mesh::{Mesh1D, MeshSpec};
use faer::Mat;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

/// Upper bound on the number of body-frame projections kept in any calculation.
pub const K_MAX_CAP: u32 = 8;

/// Symmetry block of a rovibrational state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateLabel {
    /// Total orbital angular momentum.
    pub l: u32,
    /// Parity, +1 or -1.
    pub parity: i32,
    /// Proton exchange symmetry, +1 or -1.
    pub exchange: i32,
    /// Largest body-frame projection kept in the expansion.
    pub k_max: u32,
}

impl StateLabel {
    /// Natural-parity gerade block, `parity = exchange = (-1)^L`, with `K_max = min(L, k_cap)`.
    pub fn natural(l: u32, k_cap: u32) -> Self {
        let sign = if l % 2 == 0 { 1 } else { -1 };
        StateLabel { l, parity: sign, exchange: sign, k_max: l.min(k_cap) }
    }

    /// Checks the domain of every field.
    pub fn validate(&self) -> Result<()> {
        if self.parity.abs() != 1 || self.exchange.abs() != 1 {
            return Err(Error::InvalidArgument(format!(
                "parity {} and exchange {} must be +1 or -1",
                self.parity, self.exchange
            )));
        }
        let natural = if self.l % 2 == 0 { 1 } else { -1 };
        if self.parity != natural {
            return Err(Error::InvalidArgument(format!(
                "only natural parity is supported, L = {} requires parity {natural}",
                self.l
            )));
        }
        if self.k_max > self.l || self.k_max > K_MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "k_max = {} must not exceed L = {} or {K_MAX_CAP}",
                self.k_max, self.l
            )));
        }
        Ok(())
    }

    /// Exchange sign of the component `Phi_K` under `x <-> y`.
    pub fn block_exchange(&self, k: u32) -> i32 {
        let sign = if k % 2 == 0 { 1 } else { -1 };
        self.parity * self.exchange * sign
    }

    /// 0 when `Phi_K` is symmetric under `x <-> y`, 1 when it is antisymmetric.
    pub fn delta(&self, k: u32) -> usize {
        usize::from(self.block_exchange(k) < 0)
    }
}

/// Mesh triples of one body-frame projection block.
#[derive(Clone, Debug)]
pub struct KBlock {
    /// Projection `K`.
    pub k: u32,
    /// 1 when the block is antisymmetric under exchange.
    pub delta: usize,
    /// Offset of the block in the global coefficient vector.
    pub offset: usize,
    /// Triples `(i, j, k)` with `i >= j + delta`, in lexicographic order.
    pub triples: Vec<(u16, u16, u16)>,
}

impl KBlock {
    /// Number of basis functions in the block.
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    /// True for an empty block.
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Enumeration of the symmetrized basis.
#[derive(Clone, Debug)]
pub struct BasisIndex {
    /// Blocks for `K = 0..=K_max`.
    pub blocks: Vec<KBlock>,
}

impl BasisIndex {
    /// Total number of basis functions.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }
}

/// Enumerates the symmetrized basis of a symmetry block.
pub fn basis_index(label: &StateLabel, spec: &MeshSpec) -> Result<BasisIndex> {
    label.validate()?;
    spec.validate()?;
    let mut blocks = Vec::new();
    let mut offset = 0;
    for k in 0..=label.k_max {
        let delta = label.delta(k);
        let mut triples = Vec::new();
        for i in 0..spec.n_xy {
            for j in 0..spec.n_xy {
                if j + delta > i {
                    continue;
                }
                for kz in 0..spec.n_z {
                    triples.push((i as u16, j as u16, kz as u16));
                }
            }
        }
        let len = triples.len();
        blocks.push(KBlock { k, delta, offset, triples });
        offset += len;
    }
    Ok(BasisIndex { blocks })
}

/// Spreads the symmetrized coefficients of one `K` block over the full tensor mesh,
/// overwriting `full`.
pub fn expand_component(label: &StateLabel, spec: &MeshSpec, block: &KBlock, coeffs: &[f64], full: &mut [f64]) {
    let sign = label.block_exchange(block.k) as f64;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let index = |i: usize, j: usize, k: usize| (i * spec.n_xy + j) * spec.n_z + k;
    full.iter_mut().for_each(|v| *v = 0.0);
    for (&(i, j, k), &c) in block.triples.iter().zip(coeffs) {
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i == j {
            full[index(i, i, k)] = c;
        } else {
            full[index(i, j, k)] = s * c;
            full[index(j, i, k)] = sign * s * c;
        }
    }
}

/// Symmetric linear operator acting on coefficient vectors.
pub trait SymOperator {
    /// Dimension of the space.
    fn dim(&self) -> usize;
    /// Computes `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Quadratic form `x^T A x`.
    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }
}

/// Lower triangle of a symmetric matrix in coordinate format.
#[derive(Clone, Debug, Default)]
pub struct SparseSymMatrix {
    /// Dimension.
    pub n: usize,
    /// Row indices (row >= col).
    pub rows: Vec<u32>,
    /// Column indices.
    pub cols: Vec<u32>,
    /// Values.
    pub values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds a matrix from lower-triangle triplets, summing duplicates.
    pub fn from_triplets(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut map: HashMap<(u32, u32), f64> = HashMap::new();
        for (r, c, v) in entries {
            if r >= n || c >= n {
                return Err(Error::InvalidArgument(format!("entry ({r}, {c}) outside dimension {n}")));
            }
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            *map.entry((r as u32, c as u32)).or_insert(0.0) += v;
        }
        let mut keys: Vec<_> = map.into_iter().collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        let mut m = SparseSymMatrix { n, ..Default::default() };
        for ((r, c), v) in keys {
            m.rows.push(r);
            m.cols.push(c);
            m.values.push(v);
        }
        Ok(m)
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Dense copy, both triangles filled.
    pub fn to_dense(&self) -> Mat<f64> {
        let mut a = Mat::<f64>::zeros(self.n, self.n);
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            a[(r as usize, c as usize)] = v;
            a[(c as usize, r as usize)] = v;
        }
        a
    }

    /// Writes `row col value` lines (0-based indices, 17 significant digits).
    pub fn dump(&self, out: &mut impl Write) -> Result<()> {
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            writeln!(out, "{r} {c} {v:.16e}")?;
        }
        Ok(())
    }
}

impl SymOperator for SparseSymMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            let (r, c) = (r as usize, c as usize);
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
    }
}

/// Per-point quantities of the full tensor mesh that do not depend on `L` or `K`.
#[derive(Debug)]
pub struct MeshGeometry {
    /// Node counts and scale factors.
    pub spec: MeshSpec,
    /// Particle masses.
    pub masses: MassSet,
    /// Mesh along x and y.
    pub mxy: Mesh1D,
    /// Mesh along z.
    pub mz: Mesh1D,
    /// `sqrt(h^2 h_z (x+y)(y+z)(z+x))` at each point.
    pub s0: Vec<f64>,
    /// Regularization factor at each point.
    pub reg: Vec<f64>,
    /// Proton-proton distance.
    pub r_pp: Vec<f64>,
    /// Electron distance from the axis.
    pub rho: Vec<f64>,
    /// Electron coordinate along the axis.
    pub zeta: Vec<f64>,
    /// Coulomb potential.
    pub coulomb: Vec<f64>,
    /// Kinetic metric entries `xx, yy, zz, xy, xz, yz`.
    pub metric: Vec<[f64; 6]>,
    /// Perimetric components of the in-plane rotation field.
    pub lambda: Vec<[f64; 3]>,
}

impl MeshGeometry {
    /// Evaluates every per-point quantity.
    pub fn new(spec: MeshSpec, masses: MassSet) -> Result<Self> {
        spec.validate()?;
        let mxy = Mesh1D::new(spec.n_xy)?;
        let mz = Mesh1D::new(spec.n_z)?;
        let npts = spec.n_xy * spec.n_xy * spec.n_z;
        let mut g = MeshGeometry {
            spec,
            masses,
            s0: Vec::with_capacity(npts),
            reg: Vec::with_capacity(npts),
            r_pp: Vec::with_capacity(npts),
            rho: Vec::with_capacity(npts),
            zeta: Vec::with_capacity(npts),
            coulomb: Vec::with_capacity(npts),
            metric: Vec::with_capacity(npts),
            lambda: Vec::with_capacity(npts),
            mxy,
            mz,
        };
        let hh = spec.h_xy * spec.h_xy * spec.h_z;
        for i in 0..spec.n_xy {
            for j in 0..spec.n_xy {
                for k in 0..spec.n_z {
                    let p = PerimetricPoint {
                        x: spec.h_xy * g.mxy.nodes[i],
                        y: spec.h_xy * g.mxy.nodes[j],
                        z: spec.h_z * g.mz.nodes[k],
                    };
                    let f = body_frame(&p);
                    let m = kinetic_metric(&p, &masses);
                    g.s0.push((hh * volume_weight(&p)).sqrt());
                    g.reg.push(regularization(&p));
                    g.r_pp.push(f.r_pp);
                    g.rho.push(f.rho);
                    g.zeta.push(f.zeta);
                    g.coulomb.push(coulomb_potential(&p));
                    g.metric.push([m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2]]);
                    g.lambda.push(lambda_field(&f));
                }
            }
        }
        Ok(g)
    }

    /// Number of points of the full tensor mesh.
    pub fn npts(&self) -> usize {
        self.s0.len()
    }

    /// Linear index of mesh point `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.spec.n_xy + j) * self.spec.n_z + k
    }

    /// Perimetric coordinates of mesh point `(i, j, k)`.
    pub fn point(&self, i: usize, j: usize, k: usize) -> PerimetricPoint {
        PerimetricPoint {
            x: self.spec.h_xy * self.mxy.nodes[i],
            y: self.spec.h_xy * self.mxy.nodes[j],
            z: self.spec.h_z * self.mz.nodes[k],
        }
    }

    /// `y += D x` along `axis`, scaled by `scale`.
    fn derivative(&self, axis: usize, scale: f64, x: &[f64], y: &mut [f64]) {
        let (n, nz) = (self.spec.n_xy, self.spec.n_z);
        match axis {
            0 => {
                let plane = n * nz;
                for p in 0..n {
                    let out = &mut y[p * plane..(p + 1) * plane];
                    for i in 0..n {
                        let d = scale * self.mxy.d(p, i);
                        let src = &x[i * plane..(i + 1) * plane];
                        out.iter_mut().zip(src).for_each(|(o, s)| *o += d * s);
                    }
                }
            }
            1 => {
                for i in 0..n {
                    let base = i * n * nz;
                    for q in 0..n {
                        for j in 0..n {
                            let d = scale * self.mxy.d(q, j);
                            for k in 0..nz {
                                y[base + q * nz + k] += d * x[base + j * nz + k];
                            }
                        }
                    }
                }
            }
            _ => {
                for line in 0..n * n {
                    let base = line * nz;
                    for r in 0..nz {
                        let mut s = 0.0;
                        for k in 0..nz {
                            s += self.mz.d(r, k) * x[base + k];
                        }
                        y[base + r] += scale * s;
                    }
                }
            }
        }
    }

    /// `y += D^T x` along `axis`, scaled by `scale`.
    fn derivative_t(&self, axis: usize, scale: f64, x: &[f64], y: &mut [f64]) {
        let (n, nz) = (self.spec.n_xy, self.spec.n_z);
        match axis {
            0 => {
                let plane = n * nz;
                for p in 0..n {
                    let src = &x[p * plane..(p + 1) * plane];
                    for i in 0..n {
                        let d = scale * self.mxy.d(p, i);
                        let out = &mut y[i * plane..(i + 1) * plane];
                        out.iter_mut().zip(src).for_each(|(o, s)| *o += d * s);
                    }
                }
            }
            1 => {
                for i in 0..n {
                    let base = i * n * nz;
                    for q in 0..n {
                        for j in 0..n {
                            let d = scale * self.mxy.d(q, j);
                            for k in 0..nz {
                                y[base + j * nz + k] += d * x[base + q * nz + k];
                            }
                        }
                    }
                }
            }
            _ => {
                for line in 0..n * n {
                    let base = line * nz;
                    for k in 0..nz {
                        let mut s = 0.0;
                        for r in 0..nz {
                            s += self.mz.d(r, k) * x[base + r];
                        }
                        y[base + k] += scale * s;
                    }
                }
            }
        }
    }

    fn axis_scale(&self, axis: usize) -> f64 {
        if axis == 2 {
            1.0 / self.spec.h_z
        } else {
            1.0 / self.spec.h_xy
        }
    }
}

/// Diagonal block data of one projection `K`.
#[derive(Debug)]
struct BlockOp {
    /// `1 / (s0 R_K)` at each point.
    inv_s: Vec<f64>,
    /// Metric weighted by `(s0 R_K)^2`.
    wmetric: Vec<[f64; 6]>,
    /// Effective potential.
    pot: Vec<f64>,
}

/// Coupling between projections `K` and `K + 1`.
#[derive(Debug)]
struct CouplingOp {
    /// Lower projection `K`.
    k: u32,
    /// `s0 c / R^2` at each point, with `c` the angular coefficient.
    pre: Vec<f64>,
}

/// Matrix-free Hamiltonian of one symmetry block on one mesh.
#[derive(Debug)]
pub struct Hamiltonian {
    /// Symmetry block.
    pub label: StateLabel,
    /// Shared mesh geometry.
    pub geom: Arc<MeshGeometry>,
    /// Symmetrized basis.
    pub basis: BasisIndex,
    blocks: Vec<BlockOp>,
    couplings: Vec<CouplingOp>,
}

/// Angular factor `sqrt(L(L+1) - K(K+1))`.
fn lambda_plus(l: u32, k: u32) -> f64 {
    let (l, k) = (l as f64, k as f64);
    (l * (l + 1.0) - k * (k + 1.0)).max(0.0).sqrt()
}

impl Hamiltonian {
    /// Builds the operator for `label` on a fresh geometry.
    pub fn new(label: StateLabel, spec: MeshSpec, masses: MassSet) -> Result<Self> {
        Self::with_geometry(label, Arc::new(MeshGeometry::new(spec, masses)?))
    }

    /// Builds the operator for `label` on a shared geometry.
    pub fn with_geometry(label: StateLabel, geom: Arc<MeshGeometry>) -> Result<Self> {
        let basis = basis_index(&label, &geom.spec)?;
        let masses = geom.masses;
        let mu_n = masses.mu_nuclear();
        let mu_e = masses.mu_electron();
        let ll = (label.l as f64) * (label.l as f64 + 1.0);
        let npts = geom.npts();
        let mut blocks = Vec::new();
        for k in 0..=label.k_max {
            let kf = k as f64;
            let mut inv_s = Vec::with_capacity(npts);
            let mut wmetric = Vec::with_capacity(npts);
            let mut pot = Vec::with_capacity(npts);
            for p in 0..npts {
                let reg = if k == 0 { 1.0 } else { geom.reg[p] };
                let s = geom.s0[p] * reg;
                let s2 = s * s;
                inv_s.push(1.0 / s);
                wmetric.push(geom.metric[p].map(|m| m * s2));
                let r2 = geom.r_pp[p] * geom.r_pp[p];
                let mut v = geom.coulomb[p] + ll / (2.0 * mu_n * r2);
                if k > 0 {
                    let rho2 = geom.rho[p] * geom.rho[p];
                    let zeta2 = geom.zeta[p] * geom.zeta[p];
                    v += -1.0 / (mu_n * r2)
                        + (kf * kf - 1.0) * (1.0 / (2.0 * mu_e * rho2) + (zeta2 / rho2 - 1.0) / (2.0 * mu_n * r2));
                }
                pot.push(v);
            }
            blocks.push(BlockOp { inv_s, wmetric, pot });
        }
        let mut couplings = Vec::new();
        for k in 0..label.k_max {
            let ck = if k == 0 { 2f64.sqrt() } else { 1.0 };
            let c = -ck * lambda_plus(label.l, k) / (2.0 * mu_n);
            let pre = (0..npts).map(|p| geom.s0[p] * c / (geom.r_pp[p] * geom.r_pp[p])).collect();
            couplings.push(CouplingOp { k, pre });
        }
        Ok(Hamiltonian { label, geom, basis, blocks, couplings })
    }

    /// Dimension of the symmetrized basis.
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Spreads the symmetrized coefficients of block `b` over the full tensor mesh.
    pub fn expand_block(&self, b: usize, coeffs: &[f64], full: &mut [f64]) {
        expand_component(&self.label, &self.geom.spec, &self.basis.blocks[b], coeffs, full);
    }

    /// Adjoint of [`Self::expand_block`]: accumulates into `coeffs`.
    fn restrict_block(&self, b: usize, full: &[f64], coeffs: &mut [f64]) {
        let block = &self.basis.blocks[b];
        let sign = self.label.block_exchange(block.k) as f64;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (&(i, j, k), c) in block.triples.iter().zip(coeffs.iter_mut()) {
            let (i, j, k) = (i as usize, j as usize, k as usize);
            if i == j {
                *c += full[self.geom.index(i, i, k)];
            } else {
                *c += s * (full[self.geom.index(i, j, k)] + sign * full[self.geom.index(j, i, k)]);
            }
        }
    }

    /// Full-mesh action of the diagonal block `b`, accumulated into `out`.
    fn apply_block_full(&self, b: usize, c: &[f64], out: &mut [f64]) {
        let g = &self.geom;
        let op = &self.blocks[b];
        let npts = g.npts();
        let u: Vec<f64> = c.iter().zip(&op.inv_s).map(|(a, s)| a * s).collect();
        let mut grad = [vec![0.0; npts], vec![0.0; npts], vec![0.0; npts]];
        for (axis, gr) in grad.iter_mut().enumerate() {
            g.derivative(axis, g.axis_scale(axis), &u, gr);
        }
        let mut flux = [vec![0.0; npts], vec![0.0; npts], vec![0.0; npts]];
        for p in 0..npts {
            let m = &op.wmetric[p];
            let (gx, gy, gz) = (grad[0][p], grad[1][p], grad[2][p]);
            flux[0][p] = m[0] * gx + m[3] * gy + m[4] * gz;
            flux[1][p] = m[3] * gx + m[1] * gy + m[5] * gz;
            flux[2][p] = m[4] * gx + m[5] * gy + m[2] * gz;
        }
        let mut acc = vec![0.0; npts];
        for (axis, fl) in flux.iter().enumerate() {
            g.derivative_t(axis, g.axis_scale(axis), fl, &mut acc);
        }
        for p in 0..npts {
            out[p] += acc[p] * op.inv_s[p] + op.pot[p] * c[p];
        }
    }

    /// Full-mesh action of the coupling between blocks `K` and `K + 1`.
    ///
    /// Adds the image of `c_hi` to `out_lo` and the image of `c_lo` to `out_hi`.
    fn apply_coupling_full(&self, ci: usize, c_lo: &[f64], c_hi: &[f64], out_lo: &mut [f64], out_hi: &mut [f64]) {
        let g = &self.geom;
        let cp = &self.couplings[ci];
        let hi = &self.blocks[ci + 1];
        let npts = g.npts();
        let kk = 2.0 * (cp.k as f64 + 2.0);
        // Derivative acts on the higher projection.
        let u: Vec<f64> = c_hi.iter().zip(&hi.inv_s).map(|(a, s)| a * s).collect();
        let mut lam = vec![0.0; npts];
        let mut tmp = vec![0.0; npts];
        for axis in 0..3 {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            g.derivative(axis, g.axis_scale(axis), &u, &mut tmp);
            for p in 0..npts {
                lam[p] += g.lambda[p][axis] * tmp[p];
            }
        }
        for p in 0..npts {
            out_lo[p] += cp.pre[p] * (g.reg[p] * lam[p] + kk * g.r_pp[p] * g.zeta[p] * u[p]);
        }
        // Transpose.
        let w: Vec<f64> = (0..npts).map(|p| cp.pre[p] * c_lo[p]).collect();
        let mut acc = vec![0.0; npts];
        for axis in 0..3 {
            for p in 0..npts {
                tmp[p] = g.lambda[p][axis] * g.reg[p] * w[p];
            }
            g.derivative_t(axis, g.axis_scale(axis), &tmp, &mut acc);
        }
        for p in 0..npts {
            out_hi[p] += hi.inv_s[p] * (acc[p] + kk * g.r_pp[p] * g.zeta[p] * w[p]);
        }
    }

    /// Applies the diagonal block `b` alone to symmetrized coefficients.
    pub fn apply_block(&self, b: usize, x: &[f64], y: &mut [f64]) {
        let npts = self.geom.npts();
        let mut full = vec![0.0; npts];
        let mut out = vec![0.0; npts];
        self.expand_block(b, x, &mut full);
        self.apply_block_full(b, &full, &mut out);
        y.iter_mut().for_each(|v| *v = 0.0);
        self.restrict_block(b, &out, y);
    }

    /// Diagonal of the matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for (b, block) in self.basis.blocks.iter().enumerate() {
            let local = &mut d[block.offset..block.offset + block.len()];
            self.for_each_sym_block_entry(b, |r, c, v| {
                if r == c {
                    local[r] += v;
                }
            });
        }
        d
    }

    /// Symmetrized entries `(row, col, value)` with `row >= col` of diagonal block `b`,
    /// computed from closed-form sums instead of the operator.
    pub fn block_entries(&self, b: usize) -> Vec<(usize, usize, f64)> {
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        self.for_each_sym_block_entry(b, |r, c, v| {
            *map.entry((r, c)).or_insert(0.0) += v;
        });
        let mut out: Vec<_> = map.into_iter().map(|((r, c), v)| (r, c, v)).collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    /// Dense lower triangle of diagonal block `b` shifted by `-shift`, in single precision.
    pub fn dense_block_f32(&self, b: usize, shift: f64) -> Mat<f32> {
        let n = self.basis.blocks[b].len();
        let mut a = Mat::<f32>::zeros(n, n);
        let mut diag = vec![0.0f64; n];
        self.for_each_sym_block_entry(b, |r, c, v| {
            if r == c {
                diag[r] += v;
            } else {
                a[(r, c)] += v as f32;
            }
        });
        for (r, d) in diag.iter().enumerate() {
            a[(r, r)] = (d - shift) as f32;
        }
        a
    }

    /// Maps a full-mesh point to its symmetrized index and coefficient within block `b`.
    fn sym_map(&self, b: usize) -> Vec<(u32, f64)> {
        let block = &self.basis.blocks[b];
        let g = &self.geom;
        let sign = self.label.block_exchange(block.k) as f64;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut map = vec![(u32::MAX, 0.0); g.npts()];
        for (a, &(i, j, k)) in block.triples.iter().enumerate() {
            let (i, j, k) = (i as usize, j as usize, k as usize);
            if i == j {
                map[g.index(i, i, k)] = (a as u32, 1.0);
            } else {
                map[g.index(i, j, k)] = (a as u32, s);
                map[g.index(j, i, k)] = (a as u32, sign * s);
            }
        }
        map
    }

    /// Visits symmetrized lower-triangle contributions of block `b` (duplicates possible).
    fn for_each_sym_block_entry(&self, b: usize, mut f: impl FnMut(usize, usize, f64)) {
        let map = self.sym_map(b);
        self.for_each_full_block_entry(b, |m, n, v| {
            let (ra, wa) = map[m];
            let (rb, wb) = map[n];
            if ra == u32::MAX || rb == u32::MAX || ra < rb {
                return;
            }
            f(ra as usize, rb as usize, wa * wb * v);
        });
    }

    /// Visits every structurally nonzero entry `(m, n, value)` of block `b` on the full mesh.
    fn for_each_full_block_entry(&self, b: usize, mut f: impl FnMut(usize, usize, f64)) {
        let g = &self.geom;
        let op = &self.blocks[b];
        let (n, nz) = (g.spec.n_xy, g.spec.n_z);
        let (hx, hz) = (g.spec.h_xy, g.spec.h_z);
        let dx = |p: usize, i: usize| g.mxy.d(p, i);
        let dz = |p: usize, i: usize| g.mz.d(p, i);
        let idx = |i: usize, j: usize, k: usize| g.index(i, j, k);
        let m = &op.wmetric;
        let inv = &op.inv_s;
        let cxx = 1.0 / (hx * hx);
        let czz = 1.0 / (hz * hz);
        let cxz = 1.0 / (hx * hz);
        let mut line = vec![0.0; n * n];
        let mut linez = vec![0.0; nz * nz];
        for i in 0..n {
            for j in 0..n {
                for k in 0..nz {
                    let a = idx(i, j, k);
                    f(a, a, op.pot[a]);
                }
            }
        }
        // xx: fixed (j, k).
        for j in 0..n {
            for k in 0..nz {
                line.iter_mut().for_each(|v| *v = 0.0);
                for p in 0..n {
                    let w = m[idx(p, j, k)][0];
                    for i in 0..n {
                        let di = dx(p, i) * w;
                        for i2 in 0..n {
                            line[i * n + i2] += di * dx(p, i2);
                        }
                    }
                }
                for i in 0..n {
                    for i2 in 0..n {
                        let (a, bb) = (idx(i, j, k), idx(i2, j, k));
                        f(a, bb, cxx * line[i * n + i2] * inv[a] * inv[bb]);
                    }
                }
            }
        }
        // yy: fixed (i, k).
        for i in 0..n {
            for k in 0..nz {
                line.iter_mut().for_each(|v| *v = 0.0);
                for q in 0..n {
                    let w = m[idx(i, q, k)][1];
                    for j in 0..n {
                        let dj = dx(q, j) * w;
                        for j2 in 0..n {
                            line[j * n + j2] += dj * dx(q, j2);
                        }
                    }
                }
                for j in 0..n {
                    for j2 in 0..n {
                        let (a, bb) = (idx(i, j, k), idx(i, j2, k));
                        f(a, bb, cxx * line[j * n + j2] * inv[a] * inv[bb]);
                    }
                }
            }
        }
        // zz: fixed (i, j).
        for i in 0..n {
            for j in 0..n {
                linez.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..nz {
                    let w = m[idx(i, j, r)][2];
                    for k in 0..nz {
                        let dk = dz(r, k) * w;
                        for k2 in 0..nz {
                            linez[k * nz + k2] += dk * dz(r, k2);
                        }
                    }
                }
                for k in 0..nz {
                    for k2 in 0..nz {
                        let (a, bb) = (idx(i, j, k), idx(i, j, k2));
                        f(a, bb, czz * linez[k * nz + k2] * inv[a] * inv[bb]);
                    }
                }
            }
        }
        // Mixed terms: P_xy couples (i,j,k) with (i2,j2,k), evaluated at (i2,j,k) and (i,j2,k).
        for k in 0..nz {
            for i in 0..n {
                for j in 0..n {
                    let a = idx(i, j, k);
                    for i2 in 0..n {
                        for j2 in 0..n {
                            let bb = idx(i2, j2, k);
                            let v = dx(i2, i) * dx(j, j2) * m[idx(i2, j, k)][3] + dx(j2, j) * dx(i, i2) * m[idx(i, j2, k)][3];
                            f(a, bb, cxx * v * inv[a] * inv[bb]);
                        }
                    }
                }
            }
        }
        // P_xz couples (i,j,k) with (i2,j,k2).
        for j in 0..n {
            for i in 0..n {
                for k in 0..nz {
                    let a = idx(i, j, k);
                    for i2 in 0..n {
                        for k2 in 0..nz {
                            let bb = idx(i2, j, k2);
                            let v = dx(i2, i) * dz(k, k2) * m[idx(i2, j, k)][4] + dz(k2, k) * dx(i, i2) * m[idx(i, j, k2)][4];
                            f(a, bb, cxz * v * inv[a] * inv[bb]);
                        }
                    }
                }
            }
        }
        // P_yz couples (i,j,k) with (i,j2,k2).
        for i in 0..n {
            for j in 0..n {
                for k in 0..nz {
                    let a = idx(i, j, k);
                    for j2 in 0..n {
                        for k2 in 0..nz {
                            let bb = idx(i, j2, k2);
                            let v = dx(j2, j) * dz(k, k2) * m[idx(i, j2, k)][5] + dz(k2, k) * dx(j, j2) * m[idx(i, j, k2)][5];
                            f(a, bb, cxz * v * inv[a] * inv[bb]);
                        }
                    }
                }
            }
        }
    }

    /// Visits entries `(m_lo, n_hi, value)` of the coupling between `K` and `K + 1` on the full mesh.
    fn for_each_full_coupling_entry(&self, ci: usize, mut f: impl FnMut(usize, usize, f64)) {
        let g = &self.geom;
        let cp = &self.couplings[ci];
        let hi = &self.blocks[ci + 1];
        let (n, nz) = (g.spec.n_xy, g.spec.n_z);
        let kk = 2.0 * (cp.k as f64 + 2.0);
        let sx = g.axis_scale(0);
        let sz = g.axis_scale(2);
        for i in 0..n {
            for j in 0..n {
                for k in 0..nz {
                    let a = g.index(i, j, k);
                    let pre = cp.pre[a];
                    let lam = g.lambda[a];
                    let reg = g.reg[a];
                    f(a, a, pre * kk * g.r_pp[a] * g.zeta[a] * hi.inv_s[a]);
                    for i2 in 0..n {
                        let bb = g.index(i2, j, k);
                        f(a, bb, pre * reg * lam[0] * sx * g.mxy.d(i, i2) * hi.inv_s[bb]);
                    }
                    for j2 in 0..n {
                        let bb = g.index(i, j2, k);
                        f(a, bb, pre * reg * lam[1] * sx * g.mxy.d(j, j2) * hi.inv_s[bb]);
                    }
                    for k2 in 0..nz {
                        let bb = g.index(i, j, k2);
                        f(a, bb, pre * reg * lam[2] * sz * g.mz.d(k, k2) * hi.inv_s[bb]);
                    }
                }
            }
        }
    }

    /// Explicit lower triangle of the whole matrix. Intended for small meshes.
    pub fn assemble(&self) -> Result<SparseSymMatrix> {
        let mut entries = Vec::new();
        for (b, block) in self.basis.blocks.iter().enumerate() {
            let off = block.offset;
            self.for_each_sym_block_entry(b, |r, c, v| entries.push((off + r, off + c, v)));
        }
        for ci in 0..self.couplings.len() {
            let map_lo = self.sym_map(ci);
            let map_hi = self.sym_map(ci + 1);
            let off_lo = self.basis.blocks[ci].offset;
            let off_hi = self.basis.blocks[ci + 1].offset;
            self.for_each_full_coupling_entry(ci, |m, n, v| {
                let (ra, wa) = map_lo[m];
                let (rb, wb) = map_hi[n];
                if ra == u32::MAX || rb == u32::MAX {
                    return;
                }
                entries.push((off_hi + rb as usize, off_lo + ra as usize, wa * wb * v));
            });
        }
        let full = SparseSymMatrix::from_triplets(self.dim(), entries)?;
        SparseSymMatrix::from_triplets(
            full.n,
            full.rows
                .iter()
                .zip(&full.cols)
                .zip(&full.values)
                .filter(|(_, v)| **v != 0.0)
                .map(|((&r, &c), &v)| (r as usize, c as usize, v)),
        )
    }
}

impl SymOperator for Hamiltonian {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let npts = self.geom.npts();
        let nb = self.basis.blocks.len();
        let mut full_in = vec![vec![0.0; npts]; nb];
        let mut full_out = vec![vec![0.0; npts]; nb];
        for (b, block) in self.basis.blocks.iter().enumerate() {
            self.expand_block(b, &x[block.offset..block.offset + block.len()], &mut full_in[b]);
            self.apply_block_full(b, &full_in[b], &mut full_out[b]);
        }
        for ci in 0..self.couplings.len() {
            let (lo_out, hi_out) = full_out.split_at_mut(ci + 1);
            self.apply_coupling_full(ci, &full_in[ci], &full_in[ci + 1], &mut lo_out[ci], &mut hi_out[0]);
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for (b, block) in self.basis.blocks.iter().enumerate() {
            self.restrict_block(b, &full_out[b], &mut y[block.offset..block.offset + block.len()]);
        }
    }

    /// Sum of local kinetic and potential densities plus the coupling terms.
    ///
    /// Avoids forming `A x`, whose entries cancel strongly for this stiff operator, and so
    /// keeps the rounding error near the machine precision of the energy itself.
    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let g = &self.geom;
        let npts = g.npts();
        let nb = self.basis.blocks.len();
        let mut full = vec![vec![0.0; npts]; nb];
        let mut total = 0.0;
        for (b, block) in self.basis.blocks.iter().enumerate() {
            self.expand_block(b, &x[block.offset..block.offset + block.len()], &mut full[b]);
            let op = &self.blocks[b];
            let u: Vec<f64> = full[b].iter().zip(&op.inv_s).map(|(a, s)| a * s).collect();
            let mut grad = [vec![0.0; npts], vec![0.0; npts], vec![0.0; npts]];
            for (axis, gr) in grad.iter_mut().enumerate() {
                g.derivative(axis, g.axis_scale(axis), &u, gr);
            }
            for p in 0..npts {
                let m = &op.wmetric[p];
                let (gx, gy, gz) = (grad[0][p], grad[1][p], grad[2][p]);
                let kinetic = m[0] * gx * gx
                    + m[1] * gy * gy
                    + m[2] * gz * gz
                    + 2.0 * (m[3] * gx * gy + m[4] * gx * gz + m[5] * gy * gz);
                total += kinetic + op.pot[p] * full[b][p] * full[b][p];
            }
        }
        for ci in 0..self.couplings.len() {
            let mut lo = vec![0.0; npts];
            let mut hi = vec![0.0; npts];
            let zero = vec![0.0; npts];
            self.apply_coupling_full(ci, &zero, &full[ci + 1], &mut lo, &mut hi);
            total += 2.0 * full[ci].iter().zip(&lo).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }
}

/// Builds the explicit matrix of `label` on `spec`.
pub fn assemble_hamiltonian(label: &StateLabel, spec: &MeshSpec, masses: &MassSet) -> Result<SparseSymMatrix> {
    Hamiltonian::new(*label, *spec, *masses)?.assemble()
}
