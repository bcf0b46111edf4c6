//! Lowest eigenpairs of the symmetric Hamiltonian and vibrational labelling.
//!
//! The solver is a block Davidson iteration with Rayleigh-Ritz extraction in double
//! precision. Its preconditioner approximates `(H - sigma)^{-1}` with a shift `sigma`
//! below the wanted levels: for the mesh Hamiltonian each diagonal `K` block is factorized
//! densely in single precision, so that every correction behaves like a shift-invert step.

use crate::coordinates::MassSet;
use crate::error::{Error, Result};
use crate::hamiltonian::{basis_index, Hamiltonian, MeshGeometry, SparseSymMatrix, StateLabel, SymOperator};
use crate::laguerre_mesh::{laguerre_zeros, MeshSpec};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Parameters of an eigenvalue computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenRequest {
    /// Number of lowest eigenpairs wanted.
    pub n_states: usize,
    /// Spectral shift below the wanted levels (hartree); estimated when absent.
    pub shift: Option<f64>,
    /// Residual tolerance relative to the operator norm.
    pub tol: f64,
    /// Maximum number of Davidson iterations.
    pub max_iter: usize,
}

impl Default for EigenRequest {
    fn default() -> Self {
        EigenRequest { n_states: 4, shift: None, tol: 1e-16, max_iter: 300 }
    }
}

impl EigenRequest {
    /// Request for `n_states` pairs with default tolerance and iteration cap.
    pub fn new(n_states: usize) -> Self {
        EigenRequest { n_states, ..Default::default() }
    }

    /// Checks the domain of every field.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::InvalidArgument("n_states must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Eigenpairs in ascending order of energy.
#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Eigenvalues (hartree).
    pub values: Vec<f64>,
    /// Normalized eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Residual norms `|H x - E x|`.
    pub residuals: Vec<f64>,
    /// Estimate of the operator norm used for the tolerance.
    pub op_norm: f64,
    /// Iterations performed.
    pub iterations: usize,
}

/// Approximate inverse used to build Davidson corrections.
pub trait Preconditioner {
    /// Overwrites each vector `r` with an approximation of `(H - sigma)^{-1} r`.
    fn apply(&self, rs: &mut [Vec<f64>]);
}

/// Inverse of the shifted diagonal.
#[derive(Clone, Debug)]
pub struct DiagonalPreconditioner {
    inv: Vec<f64>,
}

impl DiagonalPreconditioner {
    /// Builds `(diag - shift)^{-1}`, guarding small denominators.
    pub fn new(diag: &[f64], shift: f64) -> Self {
        let inv = diag
            .iter()
            .map(|d| {
                let v = d - shift;
                if v.abs() < 1e-8 {
                    1e8f64.copysign(v)
                } else {
                    1.0 / v
                }
            })
            .collect();
        DiagonalPreconditioner { inv }
    }
}

impl Preconditioner for DiagonalPreconditioner {
    fn apply(&self, rs: &mut [Vec<f64>]) {
        for r in rs.iter_mut() {
            r.iter_mut().zip(&self.inv).for_each(|(a, b)| *a *= b);
        }
    }
}

/// Single-precision Cholesky factors of the shifted diagonal `K` blocks.
pub struct BlockCholeskyPreconditioner {
    factors: Vec<(usize, Mat<f32>)>,
    shift: f64,
}

impl std::fmt::Debug for BlockCholeskyPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockCholeskyPreconditioner")
            .field("blocks", &self.factors.iter().map(|(o, m)| (*o, m.nrows())).collect::<Vec<_>>())
            .field("shift", &self.shift)
            .finish()
    }
}

impl BlockCholeskyPreconditioner {
    /// Factorizes every diagonal block of `h` shifted by `-shift`.
    ///
    /// Fails with [`Error::Factorization`] when a block is not positive definite,
    /// which means the shift is not below the block spectrum.
    pub fn new(h: &Hamiltonian, shift: f64) -> Result<Self> {
        let mut factors = Vec::new();
        for (b, block) in h.basis.blocks.iter().enumerate() {
            let mut a = h.dense_block_f32(b, shift);
            let n = a.nrows();
            let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f32>(n, Par::Seq, Default::default()));
            cholesky_in_place(a.as_mut(), Default::default(), Par::Seq, MemStack::new(&mut buf), Default::default())
                .map_err(|e| Error::Factorization(format!("block K={} at shift {shift}: {e:?}", block.k)))?;
            factors.push((block.offset, a));
        }
        Ok(BlockCholeskyPreconditioner { factors, shift })
    }

    /// Shift used for the factorization.
    pub fn shift(&self) -> f64 {
        self.shift
    }
}

impl Preconditioner for BlockCholeskyPreconditioner {
    fn apply(&self, rs: &mut [Vec<f64>]) {
        let m = rs.len();
        for (offset, l) in &self.factors {
            let n = l.nrows();
            let mut rhs = Mat::<f32>::from_fn(n, m, |i, j| rs[j][offset + i] as f32);
            solve_lower_triangular_in_place(l.as_ref(), rhs.as_mut(), Par::Seq);
            solve_upper_triangular_in_place(l.as_ref().transpose(), rhs.as_mut(), Par::Seq);
            for (j, r) in rs.iter_mut().enumerate() {
                for i in 0..n {
                    r[offset + i] = rhs[(i, j)] as f64;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Deterministic pseudo-random vector from a 64-bit linear congruential generator.
fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        })
        .collect()
}

/// Estimate of the largest eigenvalue magnitude by power iteration.
pub fn operator_norm(op: &impl SymOperator, iterations: usize) -> f64 {
    let n = op.dim();
    let mut x = start_vector(n, 7);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..iterations {
        op.apply(&x, &mut y);
        est = norm(&y);
        if est == 0.0 {
            return 0.0;
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / est;
        }
    }
    est
}

/// Orthogonalizes `t` against `basis` twice and normalizes it; returns false when it vanishes.
fn orthonormalize_against(basis: &[Vec<f64>], t: &mut [f64]) -> bool {
    let n0 = norm(t);
    if n0 == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, t);
            t.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
        }
    }
    let n1 = norm(t);
    if n1 <= 1e-10 * n0 {
        return false;
    }
    t.iter_mut().for_each(|a| *a /= n1);
    true
}

/// Residual level, in units of machine epsilon times the operator norm, below which a
/// stalled iteration is accepted.
pub const STAGNATION_FLOOR: f64 = 100.0;
/// Iterations without halving the largest residual after which the floor applies.
pub const STAGNATION_ITERATIONS: usize = 20;

/// Block Davidson iteration for the `req.n_states` lowest eigenpairs.
///
/// `start` optionally supplies initial vectors; missing ones are generated
/// deterministically and passed through the preconditioner.
pub fn davidson(
    op: &impl SymOperator,
    prec: &impl Preconditioner,
    req: &EigenRequest,
    start: &[Vec<f64>],
) -> Result<EigenResult> {
    req.validate()?;
    let n = op.dim();
    if req.n_states > n {
        return Err(Error::TooManyStates { requested: req.n_states, dimension: n });
    }
    let nwant = req.n_states;
    let block = (nwant + 4).min(n);
    let max_basis = (6 * block).max(48).min(n);
    let op_norm = operator_norm(op, 12).max(1.0);
    let tol_abs = req.tol * op_norm;
    let floor_abs = STAGNATION_FLOOR * f64::EPSILON * op_norm;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut fresh: Vec<Vec<f64>> = start.iter().take(block).cloned().collect();
    let mut seed = 11u64;
    let mut generated: Vec<Vec<f64>> = Vec::new();
    while fresh.len() + generated.len() < block {
        generated.push(start_vector(n, seed));
        seed += 1;
    }
    if !generated.is_empty() {
        prec.apply(&mut generated);
        fresh.extend(generated);
    }

    let mut theta: Vec<f64>;
    let mut ritz: Vec<Vec<f64>> = Vec::new();
    let mut residuals: Vec<f64> = vec![f64::INFINITY; nwant];
    let mut tmat = Mat::<f64>::zeros(0, 0);
    let mut iterations = 0;

    loop {
        // Expand the basis with the new directions.
        for mut t in fresh.drain(..) {
            if basis.len() >= n {
                break;
            }
            if orthonormalize_against(&basis, &mut t) {
                let mut at = vec![0.0; n];
                op.apply(&t, &mut at);
                basis.push(t);
                images.push(at);
            }
        }
        let m = basis.len();
        if m == 0 {
            return Err(Error::NotConverged { what: "Davidson", iterations, residual: f64::INFINITY });
        }
        // Projected matrix, updated for the new columns only.
        let old = tmat.nrows();
        let mut t_new = Mat::<f64>::zeros(m, m);
        for i in 0..old {
            for j in 0..old {
                t_new[(i, j)] = tmat[(i, j)];
            }
        }
        for j in old..m {
            for i in 0..=j {
                let v = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                t_new[(i, j)] = v;
                t_new[(j, i)] = v;
            }
        }
        tmat = t_new;
        let evd = tmat
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization(format!("projected eigenproblem: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();
        let nk = block.min(m);
        theta = (0..nk).map(|i| s[i]).collect();
        ritz.clear();
        let mut ritz_images = Vec::with_capacity(nk);
        let mut res_vecs = Vec::with_capacity(nk);
        let mut res_norms = Vec::with_capacity(nk);
        for i in 0..nk {
            let mut x = vec![0.0; n];
            let mut ax = vec![0.0; n];
            for j in 0..m {
                let c = u[(j, i)];
                x.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += c * b);
                ax.iter_mut().zip(&images[j]).for_each(|(a, b)| *a += c * b);
            }
            let r: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a - theta[i] * b).collect();
            res_norms.push(norm(&r));
            res_vecs.push(r);
            ritz.push(x);
            ritz_images.push(ax);
        }
        residuals = res_norms[..nwant.min(nk)].to_vec();
        let worst = residuals.iter().cloned().fold(0.0, f64::max);
        if worst < 0.5 * best {
            best = worst;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stagnated = since_best >= STAGNATION_ITERATIONS && worst <= floor_abs;
        let converged = nk >= nwant && (worst <= tol_abs || stagnated);
        log::debug!(
            "davidson it {iterations} basis {m} theta0 {:.15} max residual {:e}",
            theta[0],
            worst
        );
        if converged || m == n {
            break;
        }
        iterations += 1;
        if iterations > req.max_iter {
            return Err(Error::NotConverged {
                what: "Davidson",
                iterations: req.max_iter,
                residual: residuals.iter().cloned().fold(0.0, f64::max),
            });
        }
        // Corrections for unconverged Ritz pairs of the block.
        let mut corr: Vec<Vec<f64>> = Vec::new();
        for (i, r) in res_vecs.into_iter().enumerate() {
            if res_norms[i] > tol_abs {
                corr.push(r);
            }
        }
        prec.apply(&mut corr);
        if m + corr.len() > max_basis {
            basis = ritz.clone();
            images = ritz_images;
            // Re-orthonormalize the compressed basis to keep rounding errors in check.
            let mut q: Vec<Vec<f64>> = Vec::new();
            let mut qi: Vec<Vec<f64>> = Vec::new();
            for (mut v, _) in basis.drain(..).zip(images.drain(..)) {
                if orthonormalize_against(&q, &mut v) {
                    let mut av = vec![0.0; n];
                    op.apply(&v, &mut av);
                    q.push(v);
                    qi.push(av);
                }
            }
            basis = q;
            images = qi;
            let k = basis.len();
            tmat = Mat::<f64>::zeros(k, k);
            for j in 0..k {
                for i in 0..=j {
                    let v = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                    tmat[(i, j)] = v;
                    tmat[(j, i)] = v;
                }
            }
        }
        fresh = corr;
    }
    let values = ritz[..nwant].iter().map(|x| op.quadratic_form(x) / dot(x, x)).collect();
    Ok(EigenResult {
        values,
        vectors: ritz[..nwant].to_vec(),
        residuals,
        op_norm,
        iterations,
    })
}

/// Dense symmetric eigen-decomposition; only sensible for small problems.
fn dense_lowest(a: &Mat<f64>, nwant: usize) -> Result<EigenResult> {
    let n = a.nrows();
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("dense eigenproblem: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut residuals = Vec::new();
    for i in 0..nwant {
        let x: Vec<f64> = (0..n).map(|r| u[(r, i)]).collect();
        let mut r = vec![0.0; n];
        for row in 0..n {
            let mut acc = 0.0;
            for col in 0..n {
                acc += a[(row, col)] * x[col];
            }
            r[row] = acc - s[i] * x[row];
        }
        values.push(s[i]);
        residuals.push(norm(&r));
        vectors.push(x);
    }
    let op_norm = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
    Ok(EigenResult { values, vectors, residuals, op_norm, iterations: 0 })
}

/// Largest explicit matrix handled by dense diagonalization.
pub const DENSE_LIMIT: usize = 3000;

/// Lowest eigenpairs of an explicit sparse symmetric matrix.
///
/// Small matrices are diagonalized densely; larger ones use Davidson with a
/// diagonal preconditioner.
pub fn lowest_eigenpairs(h: &SparseSymMatrix, req: &EigenRequest) -> Result<EigenResult> {
    req.validate()?;
    if req.n_states > h.n {
        return Err(Error::TooManyStates { requested: req.n_states, dimension: h.n });
    }
    if h.n <= DENSE_LIMIT {
        return dense_lowest(&h.to_dense(), req.n_states);
    }
    let mut diag = vec![0.0; h.n];
    for ((&r, &c), &v) in h.rows.iter().zip(&h.cols).zip(&h.values) {
        if r == c {
            diag[r as usize] = v;
        }
    }
    let shift = req.shift.unwrap_or_else(|| diag.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0);
    davidson(h, &DiagonalPreconditioner::new(&diag, shift), req, &[])
}

/// Coarse mesh used to locate the bottom of a band before the production solve.
fn coarse_spec(spec: &MeshSpec) -> MeshSpec {
    let n = spec.n_xy.min(16);
    let nz = spec.n_z.min(10);
    MeshSpec {
        n_xy: n,
        n_z: nz,
        h_xy: spec.h_xy * spec.n_xy as f64 / n as f64,
        h_z: spec.h_z * spec.n_z as f64 / nz as f64,
    }
}

/// Rough lowest eigenvalue of `label`, from a dense solve of the `K = 0` block on a coarse mesh.
pub fn estimate_ground(label: &StateLabel, spec: &MeshSpec, masses: &MassSet) -> Result<f64> {
    let coarse = coarse_spec(spec);
    let mut l0 = *label;
    l0.k_max = 0;
    let h = Hamiltonian::new(l0, coarse, *masses)?;
    let m = h.assemble()?;
    let r = dense_lowest(&m.to_dense(), 1)?;
    Ok(r.values[0])
}

/// Solves one symmetry block on a mesh with the block-Cholesky preconditioned Davidson method.
///
/// When `req.shift` is absent the shift is placed below a coarse-mesh estimate of the
/// lowest level; a failed factorization lowers it and retries.
pub fn solve_block(label: &StateLabel, geom: &Arc<MeshGeometry>, req: &EigenRequest) -> Result<EigenResult> {
    solve_block_from(label, geom, req, &[])
}

/// Same as [`solve_block`] with optional starting vectors.
pub fn solve_block_from(
    label: &StateLabel,
    geom: &Arc<MeshGeometry>,
    req: &EigenRequest,
    start: &[Vec<f64>],
) -> Result<EigenResult> {
    let mut solver = LevelSolver::new(Arc::clone(geom));
    solver.reuse_window = 0;
    solver.solve_from(label, req, start)
}

/// Solves successive symmetry blocks on one mesh, reusing the block factorization
/// between nearby angular momenta.
///
/// The `K` block structure of natural-parity labels depends only on `K_max`, and the
/// diagonal blocks of neighbouring `L` differ by a smooth centrifugal term, so one
/// factorization remains an effective preconditioner over a window of `L` values.
pub struct LevelSolver {
    geom: Arc<MeshGeometry>,
    cached: Option<(StateLabel, BlockCholeskyPreconditioner)>,
    /// Largest `|L - L_factorized|` for which a factorization is reused.
    pub reuse_window: u32,
}

impl std::fmt::Debug for LevelSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevelSolver")
            .field("spec", &self.geom.spec)
            .field("cached", &self.cached.as_ref().map(|c| c.0))
            .field("reuse_window", &self.reuse_window)
            .finish()
    }
}

impl LevelSolver {
    /// Solver on a shared geometry with the default reuse window.
    pub fn new(geom: Arc<MeshGeometry>) -> Self {
        LevelSolver { geom, cached: None, reuse_window: 2 }
    }

    /// Geometry of the solver.
    pub fn geometry(&self) -> &Arc<MeshGeometry> {
        &self.geom
    }

    /// Lowest eigenpairs of `label`.
    pub fn solve(&mut self, label: &StateLabel, req: &EigenRequest) -> Result<EigenResult> {
        self.solve_from(label, req, &[])
    }

    /// Lowest eigenpairs of `label` from optional starting vectors.
    pub fn solve_from(&mut self, label: &StateLabel, req: &EigenRequest, start: &[Vec<f64>]) -> Result<EigenResult> {
        req.validate()?;
        let h = Hamiltonian::with_geometry(*label, Arc::clone(&self.geom))?;
        if req.n_states > h.dim() {
            return Err(Error::TooManyStates { requested: req.n_states, dimension: h.dim() });
        }
        let reusable = match &self.cached {
            Some((l, _)) => {
                req.shift.is_none()
                    && l.k_max == label.k_max
                    && l.parity * l.exchange == label.parity * label.exchange
                    && l.l.abs_diff(label.l) <= self.reuse_window
            }
            None => false,
        };
        if !reusable {
            self.cached = None;
            let mut shift = match req.shift {
                Some(s) => s,
                None => estimate_ground(label, &self.geom.spec, &self.geom.masses)? - SHIFT_MARGIN,
            };
            let mut attempts = 0;
            let prec = loop {
                match BlockCholeskyPreconditioner::new(&h, shift) {
                    Ok(p) => break p,
                    Err(e) if attempts < 4 => {
                        log::warn!("{e}; lowering the shift");
                        shift -= 0.02 * 2f64.powi(attempts);
                        attempts += 1;
                    }
                    Err(e) => return Err(e),
                }
            };
            self.cached = Some((*label, prec));
        }
        let prec = &self.cached.as_ref().expect("factorization present").1;
        davidson(&h, prec, req, start)
    }
}

/// Distance between the coarse estimate of the lowest level and the shift.
pub const SHIFT_MARGIN: f64 = 0.004;

/// A computed rovibrational state.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshWavefunction {
    /// Mesh of the expansion.
    pub spec: MeshSpec,
    /// Proton mass used.
    pub m_p: f64,
    /// Symmetry block.
    pub label: StateLabel,
    /// Vibrational index.
    pub v: u32,
    /// Energy (hartree).
    pub energy: f64,
    /// True when the level lies above the dissociation threshold.
    pub quasibound: bool,
    /// True when the level is degenerate with a neighbour within 1e-14 hartree.
    pub near_degenerate: bool,
    /// Coefficients on the symmetrized basis, blocks ordered by `K`.
    pub coeffs: Vec<f64>,
}

/// Leading bytes of a persisted wavefunction.
pub const WAVEFUNCTION_MAGIC: [u8; 4] = *b"PMWF";
/// Version of the persisted layout.
pub const WAVEFUNCTION_VERSION: u32 = 1;

impl MeshWavefunction {
    /// Writes the state in the versioned little-endian binary layout.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(&WAVEFUNCTION_MAGIC)?;
        out.write_all(&WAVEFUNCTION_VERSION.to_le_bytes())?;
        for v in [self.spec.n_xy as u32, self.spec.n_z as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in [self.spec.h_xy, self.spec.h_z, self.m_p] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.label.l.to_le_bytes())?;
        out.write_all(&self.label.parity.to_le_bytes())?;
        out.write_all(&self.label.exchange.to_le_bytes())?;
        out.write_all(&self.label.k_max.to_le_bytes())?;
        out.write_all(&self.v.to_le_bytes())?;
        out.write_all(&self.energy.to_le_bytes())?;
        out.write_all(&[u8::from(self.quasibound) | (u8::from(self.near_degenerate) << 1)])?;
        out.write_all(&(self.coeffs.len() as u64).to_le_bytes())?;
        for c in &self.coeffs {
            out.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a state written by [`Self::write_to`].
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != WAVEFUNCTION_MAGIC {
            return Err(Error::Format("not a wavefunction file".into()));
        }
        let version = read_u32(input)?;
        if version != WAVEFUNCTION_VERSION {
            return Err(Error::Format(format!("unsupported wavefunction version {version}")));
        }
        let n_xy = read_u32(input)? as usize;
        let n_z = read_u32(input)? as usize;
        let h_xy = read_f64(input)?;
        let h_z = read_f64(input)?;
        let m_p = read_f64(input)?;
        let spec = MeshSpec::new(n_xy, n_z, h_xy, h_z).map_err(|e| Error::Format(e.to_string()))?;
        let label = StateLabel {
            l: read_u32(input)?,
            parity: read_u32(input)? as i32,
            exchange: read_u32(input)? as i32,
            k_max: read_u32(input)?,
        };
        label.validate().map_err(|e| Error::Format(e.to_string()))?;
        let v = read_u32(input)?;
        let energy = read_f64(input)?;
        let mut flags = [0u8; 1];
        input.read_exact(&mut flags)?;
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let expected = basis_index(&label, &spec)?.dim();
        if len != expected {
            return Err(Error::Format(format!("{len} coefficients stored, basis has {expected}")));
        }
        let coeffs = (0..len).map(|_| read_f64(input)).collect::<Result<Vec<_>>>()?;
        Ok(MeshWavefunction {
            spec,
            m_p,
            label,
            v,
            energy,
            quasibound: flags[0] & 1 != 0,
            near_degenerate: flags[0] & 2 != 0,
            coeffs,
        })
    }

    /// Saves the state to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a state saved by [`Self::save`].
    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(input: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Attaches vibrational indices in order of increasing energy.
///
/// Levels above the dissociation threshold whose norm lies mostly beyond
/// [`DISSOCIATION_RADIUS`] are discretized atom-proton continuum and are dropped.
pub fn assign_vibrational(
    res: &EigenResult,
    label: &StateLabel,
    spec: &MeshSpec,
    masses: &MassSet,
) -> Vec<MeshWavefunction> {
    let mut order: Vec<usize> = (0..res.values.len()).collect();
    order.sort_by(|&a, &b| res.values[a].total_cmp(&res.values[b]).then(a.cmp(&b)));
    let ed = masses.dissociation_energy();
    order.retain(|&i| {
        res.values[i] <= ed || dissociated_fraction(label, spec, &res.vectors[i]).map_or(true, |f| f <= 0.5)
    });
    order
        .iter()
        .enumerate()
        .map(|(v, &i)| {
            let e = res.values[i];
            let near = order.iter().any(|&j| j != i && (res.values[j] - e).abs() < 1e-14);
            let nrm = norm(&res.vectors[i]);
            MeshWavefunction {
                spec: *spec,
                m_p: masses.m_p,
                label: *label,
                v: v as u32,
                energy: e,
                quasibound: e > ed,
                near_degenerate: near,
                coeffs: res.vectors[i].iter().map(|c| c / nrm).collect(),
            }
        })
        .collect()
}

/// Internuclear distance (bohr) beyond which a state counts as a dissociating pair.
pub const DISSOCIATION_RADIUS: f64 = 8.0;

/// Share of the norm of `coeffs` at internuclear distances beyond [`DISSOCIATION_RADIUS`].
pub fn dissociated_fraction(label: &StateLabel, spec: &MeshSpec, coeffs: &[f64]) -> Result<f64> {
    let index = basis_index(label, spec)?;
    if coeffs.len() != index.dim() {
        return Err(Error::MeshMismatch(format!("{} coefficients for a basis of {}", coeffs.len(), index.dim())));
    }
    let nodes = laguerre_zeros(spec.n_xy)?;
    let (mut far, mut total) = (0.0, 0.0);
    for b in &index.blocks {
        for (&(i, j, _), c) in b.triples.iter().zip(&coeffs[b.offset..]) {
            let r = 0.5 * spec.h_xy * (nodes[i as usize] + nodes[j as usize]);
            total += c * c;
            if r > DISSOCIATION_RADIUS {
                far += c * c;
            }
        }
    }
    Ok(far / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = SparseSymMatrix::from_triplets(2, [(0, 0, 2.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let r = lowest_eigenpairs(&m, &EigenRequest::new(2)).unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-14);
        assert!((r.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_requests() {
        let m = SparseSymMatrix::from_triplets(2, [(0, 0, 2.0)]).unwrap();
        assert!(lowest_eigenpairs(&m, &EigenRequest::new(3)).is_err());
        assert!(lowest_eigenpairs(&m, &EigenRequest { tol: 0.0, ..EigenRequest::new(1) }).is_err());
    }
}
