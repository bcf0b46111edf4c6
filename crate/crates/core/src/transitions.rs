//! Electric-quadrupole transitions between rovibrational states.
//!
//! The reduced strength is `S = (2 L_i + 1) |sum_{K_i K_f kappa} c A|^2` where `c` is an
//! angular factor and `A` a matrix element of the body-frame quadrupole kernel over the
//! internal coordinates, evaluated with the mesh quadrature.

use crate::coordinates::{body_frame, quad_kernel, MassSet};
use crate::eigensolver::MeshWavefunction;
use crate::error::{Error, Result};
use crate::hamiltonian::{basis_index, expand_component, StateLabel};
use crate::laguerre_mesh::{Mesh1D, MeshSpec};
use std::fmt;

/// Inverse fine-structure constant used by default (CODATA 2010).
pub const ALPHA_INVERSE: f64 = 137.035999074;
/// Bohr radius in metres used by default (CODATA 2010).
pub const BOHR_RADIUS_M: f64 = 0.52917721092e-10;
/// Speed of light in metres per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Constants converting atomic-unit rates to physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants {
    /// Fine-structure constant.
    pub alpha: f64,
    /// Atomic unit of time `a0 / (alpha c)` in seconds.
    pub atomic_time_s: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::from_alpha_inverse(ALPHA_INVERSE, BOHR_RADIUS_M)
    }
}

impl PhysicalConstants {
    /// Derives the unit of time from `1/alpha` and the Bohr radius in metres.
    pub fn from_alpha_inverse(alpha_inverse: f64, bohr_radius_m: f64) -> Self {
        PhysicalConstants {
            alpha: 1.0 / alpha_inverse,
            atomic_time_s: bohr_radius_m * alpha_inverse / SPEED_OF_LIGHT,
        }
    }

    /// Checks that both constants are positive and finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.atomic_time_s > 0.0 && self.atomic_time_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid physical constants {self:?}")));
        }
        Ok(())
    }
}

fn factorial(n: i32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Clebsch-Gordan coefficient `(j1 m1 j2 m2 | j3 m3)` for integer angular momenta,
/// with the Condon-Shortley phase.
///
/// Returns 0 when the triangle rule, the projection ranges or `m1 + m2 = m3` fail.
pub fn clebsch_gordan(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> Result<f64> {
    if j1 < 0 || j2 < 0 || j3 < 0 {
        return Err(Error::InvalidArgument(format!("negative angular momentum in ({j1} {j2} {j3})")));
    }
    if m1 + m2 != m3 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return Ok(0.0);
    }
    if j3 > j1 + j2 || j3 < (j1 - j2).abs() {
        return Ok(0.0);
    }
    let pre = ((2 * j3 + 1) as f64 * factorial(j3 + j1 - j2) * factorial(j3 - j1 + j2) * factorial(j1 + j2 - j3)
        / factorial(j1 + j2 + j3 + 1))
    .sqrt();
    let norm = (factorial(j3 + m3)
        * factorial(j3 - m3)
        * factorial(j1 - m1)
        * factorial(j1 + m1)
        * factorial(j2 - m2)
        * factorial(j2 + m2))
    .sqrt();
    let kmin = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let kmax = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let term = 1.0
            / (factorial(k)
                * factorial(j1 + j2 - j3 - k)
                * factorial(j1 - m1 - k)
                * factorial(j2 + m2 - k)
                * factorial(j3 - j2 + m1 + k)
                * factorial(j3 - j1 - m2 + k));
        sum += if k % 2 == 0 { term } else { -term };
    }
    Ok(pre * norm * sum)
}

/// Composition of the angular coefficients multiplying the perimetric matrix elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AngularScheme {
    /// Coefficients composed from the matrix elements of the symmetrized rotation functions.
    #[default]
    Generic,
    /// Coefficient pattern in which the `K_i = K_f = 1`, `kappa = 2` term is
    /// `-(L_i 2, 2 -1 | L_f 1)` instead of `-(L_i 2, 1 -2 | L_f -1)`.
    Printed,
}

fn check_angular(l_i: u32, l_f: u32, k_i: u32, k_f: u32, kappa: u32) -> Result<()> {
    if kappa > 2 {
        return Err(Error::InvalidArgument(format!("kappa = {kappa} not in 0..=2")));
    }
    if k_i > l_i || k_f > l_f {
        return Err(Error::InvalidArgument(format!("projection exceeds angular momentum: K_i={k_i} L_i={l_i} K_f={k_f} L_f={l_f}")));
    }
    Ok(())
}

/// Angular factor `c` with `S = (2 L_i + 1) |sum c A|^2` for the rank-2 operator.
///
/// It contains the normalizations of the symmetrized rotation functions and the
/// `(1 + delta_{kappa 0})^{-1}` weight; `parity_f` is the parity of the final state.
pub fn angular_factor(l_i: u32, l_f: u32, parity_f: i32, k_i: u32, k_f: u32, kappa: u32) -> Result<f64> {
    check_angular(l_i, l_f, k_i, k_f, kappa)?;
    let (li, lf, ki, kf, ka) = (l_i as i32, l_f as i32, k_i as i32, k_f as i32, kappa as i32);
    let cg = |m1: i32, m3: i32| clebsch_gordan(li, 2, lf, ki, m1, m3);
    let sk = if kappa % 2 == 0 { 1.0 } else { -1.0 };
    let phase = parity_f as f64 * if (l_f + k_f) % 2 == 0 { 1.0 } else { -1.0 };
    let brace = cg(ka, kf)? + sk * cg(-ka, kf)? + phase * (cg(ka, -kf)? + sk * cg(-ka, -kf)?);
    let dk = |k: u32| if k == 0 { 2.0f64 } else { 1.0 };
    Ok(brace / (dk(kappa) * (dk(k_i) * dk(k_f)).sqrt()))
}

/// Angular factor for natural-parity states following the printed coefficient pattern.
pub fn angular_factor_printed(l_i: u32, l_f: u32, k_i: u32, k_f: u32, kappa: u32) -> Result<f64> {
    check_angular(l_i, l_f, k_i, k_f, kappa)?;
    let (li, lf, ki, kf) = (l_i as i32, l_f as i32, k_i as i32, k_f as i32);
    let cg = |m1: i32, m2: i32, m3: i32| clebsch_gordan(li, 2, lf, m1, m2, m3);
    let root = |k: u32| if k == 0 { 2f64.sqrt() } else { 1.0 };
    Ok(match kappa {
        0 => cg(ki, 0, kf)?,
        1 => cg(ki, 1, kf)? * root(k_i) - cg(ki, -1, kf)? * root(k_f),
        _ => {
            let mut v = cg(ki, 2, kf)? * root(k_i) + cg(ki, -2, kf)? * root(k_f);
            if k_i == 1 && k_f == 1 {
                v -= cg(2, -1, 1)?;
            }
            v
        }
    })
}

/// Body-frame quadrupole kernels tabulated on the full tensor mesh.
#[derive(Clone, Debug)]
pub struct QuadrupoleGrid {
    /// Mesh of the tabulation.
    pub spec: MeshSpec,
    /// Masses of the tabulation.
    pub masses: MassSet,
    kernels: [Vec<f64>; 3],
}

impl QuadrupoleGrid {
    /// Tabulates the three kernels at every mesh point.
    pub fn new(spec: MeshSpec, masses: MassSet) -> Result<Self> {
        spec.validate()?;
        let mxy = Mesh1D::new(spec.n_xy)?;
        let mz = Mesh1D::new(spec.n_z)?;
        let gamma = masses.gamma();
        let npts = spec.n_xy * spec.n_xy * spec.n_z;
        let mut kernels = [Vec::with_capacity(npts), Vec::with_capacity(npts), Vec::with_capacity(npts)];
        for &ui in &mxy.nodes {
            for &uj in &mxy.nodes {
                for &wk in &mz.nodes {
                    let p = crate::coordinates::PerimetricPoint::new(spec.h_xy * ui, spec.h_xy * uj, spec.h_z * wk)?;
                    let f = body_frame(&p);
                    for (kappa, kern) in kernels.iter_mut().enumerate() {
                        kern.push(quad_kernel(kappa, &f, gamma)?);
                    }
                }
            }
        }
        Ok(QuadrupoleGrid { spec, masses, kernels })
    }

    /// Kernel of order `kappa` at every mesh point.
    pub fn kernel(&self, kappa: usize) -> &[f64] {
        &self.kernels[kappa]
    }

    fn check(&self, wf: &MeshWavefunction) -> Result<()> {
        if wf.spec != self.spec || wf.m_p != self.masses.m_p {
            return Err(Error::MeshMismatch(format!(
                "state on {:?} with m_p {} used with grid {:?} and m_p {}",
                wf.spec, wf.m_p, self.spec, self.masses.m_p
            )));
        }
        Ok(())
    }

    /// Components `Phi_K` of a state on the full mesh, one vector per `K`.
    pub fn components(&self, wf: &MeshWavefunction) -> Result<Vec<Vec<f64>>> {
        self.check(wf)?;
        let basis = basis_index(&wf.label, &wf.spec)?;
        if basis.dim() != wf.coeffs.len() {
            return Err(Error::MeshMismatch(format!(
                "state has {} coefficients but its basis has {}",
                wf.coeffs.len(),
                basis.dim()
            )));
        }
        let npts = self.kernels[0].len();
        Ok(basis
            .blocks
            .iter()
            .map(|b| {
                let mut full = vec![0.0; npts];
                expand_component(&wf.label, &wf.spec, b, &wf.coeffs[b.offset..b.offset + b.len()], &mut full);
                full
            })
            .collect())
    }

    /// Perimetric matrix element `A = <Phi_{K_f} | A_kappa | Phi_{K_i}>`.
    pub fn element(&self, wf_i: &MeshWavefunction, wf_f: &MeshWavefunction, k_i: u32, k_f: u32, kappa: u32) -> Result<f64> {
        if kappa > 2 {
            return Err(Error::InvalidArgument(format!("kappa = {kappa} not in 0..=2")));
        }
        let ci = self.components(wf_i)?;
        let cf = self.components(wf_f)?;
        let (a, b) = match (ci.get(k_i as usize), cf.get(k_f as usize)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidArgument(format!("projection pair ({k_i}, {k_f}) beyond K_max"))),
        };
        Ok(weighted_dot(a, b, &self.kernels[kappa as usize]))
    }

    /// Reduced strength of the rank-2 transition `wf_i -> wf_f`.
    pub fn strength(&self, wf_i: &MeshWavefunction, wf_f: &MeshWavefunction, opts: &StrengthOptions) -> Result<Strength> {
        if opts.kappa_max > 2 {
            return Err(Error::InvalidArgument(format!("kappa_max = {} not in 0..=2", opts.kappa_max)));
        }
        let (li, lf) = (&wf_i.label, &wf_f.label);
        let dl = li.l.abs_diff(lf.l);
        if !(dl == 0 || dl == 2) || li.l + lf.l < 2 || li.parity != lf.parity || li.exchange != lf.exchange {
            self.check(wf_i)?;
            self.check(wf_f)?;
            return Ok(Strength { s: 0.0, forbidden: true });
        }
        let ci = self.components(wf_i)?;
        let cf = self.components(wf_f)?;
        let cap = opts.k_max.unwrap_or(u32::MAX) as usize;
        let mut amp = 0.0;
        for (k_i, a) in ci.iter().enumerate().take(cap.saturating_add(1)) {
            for (k_f, b) in cf.iter().enumerate().take(cap.saturating_add(1)) {
                for kappa in 0..=opts.kappa_max {
                    let c = match opts.scheme {
                        AngularScheme::Generic => angular_factor(li.l, lf.l, lf.parity, k_i as u32, k_f as u32, kappa)?,
                        AngularScheme::Printed => angular_factor_printed(li.l, lf.l, k_i as u32, k_f as u32, kappa)?,
                    };
                    if c != 0.0 {
                        amp += c * weighted_dot(a, b, &self.kernels[kappa as usize]);
                    }
                }
            }
        }
        Ok(Strength { s: (2 * li.l + 1) as f64 * amp * amp, forbidden: false })
    }
}

fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), k)| x * y * k).sum()
}

/// Perimetric matrix element on a freshly tabulated grid.
pub fn perimetric_element(wf_i: &MeshWavefunction, wf_f: &MeshWavefunction, k_i: u32, k_f: u32, kappa: u32) -> Result<f64> {
    let grid = QuadrupoleGrid::new(wf_i.spec, MassSet::new(wf_i.m_p)?)?;
    grid.element(wf_i, wf_f, k_i, k_f, kappa)
}

/// Truncations applied to the strength sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrengthOptions {
    /// Highest kernel order kept.
    pub kappa_max: u32,
    /// Highest projection kept in both states; all available when absent.
    pub k_max: Option<u32>,
    /// Angular coefficient composition.
    pub scheme: AngularScheme,
}

impl Default for StrengthOptions {
    fn default() -> Self {
        StrengthOptions { kappa_max: 2, k_max: None, scheme: AngularScheme::Generic }
    }
}

/// Reduced strength of a transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Strength {
    /// `S` in atomic units.
    pub s: f64,
    /// True when angular momentum or symmetry selection rules forbid the transition.
    pub forbidden: bool,
}

/// Reduced strength with default options.
pub fn reduced_strength(wf_i: &MeshWavefunction, wf_f: &MeshWavefunction) -> Result<Strength> {
    let grid = QuadrupoleGrid::new(wf_i.spec, MassSet::new(wf_i.m_p)?)?;
    grid.strength(wf_i, wf_f, &StrengthOptions::default())
}

/// Rank-2 oscillator strength, negative when `e_f < e_i`.
pub fn oscillator_strength(s: f64, e_i: f64, e_f: f64, l_i: u32, consts: &PhysicalConstants) -> f64 {
    let a = consts.alpha;
    (e_f - e_i).powi(3) * a * a * s / (30.0 * (2 * l_i + 1) as f64)
}

/// Rank-2 transition probability per second for `e_f < e_i`.
pub fn transition_probability(s: f64, e_i: f64, e_f: f64, l_i: u32, consts: &PhysicalConstants) -> Result<f64> {
    if !(e_f < e_i) {
        return Err(Error::InvalidArgument(format!("final energy {e_f} is not below initial energy {e_i}")));
    }
    let a = consts.alpha;
    let w_au = a.powi(5) * (e_i - e_f).powi(5) * s / (15.0 * (2 * l_i + 1) as f64);
    Ok(w_au / consts.atomic_time_s)
}

/// Lifetime of a state, infinite when it has no decay channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lifetime {
    /// Finite lifetime in seconds.
    Finite(f64),
    /// No downward channel.
    Infinite,
}

impl Lifetime {
    /// Seconds, or positive infinity.
    pub fn seconds(&self) -> f64 {
        match self {
            Lifetime::Finite(t) => *t,
            Lifetime::Infinite => f64::INFINITY,
        }
    }

    /// True when the state cannot decay.
    pub fn is_infinite(&self) -> bool {
        matches!(self, Lifetime::Infinite)
    }
}

impl fmt::Display for Lifetime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lifetime::Finite(t) => write!(f, "{t:.6e}"),
            Lifetime::Infinite => write!(f, "inf"),
        }
    }
}

/// Inverse of the summed rates of all downward channels.
pub fn lifetime(rates: &[f64]) -> Lifetime {
    let total: f64 = rates.iter().sum();
    if total > 0.0 {
        Lifetime::Finite(1.0 / total)
    } else {
        Lifetime::Infinite
    }
}

/// One end of a transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelRef {
    /// Symmetry block.
    pub label: StateLabel,
    /// Vibrational index.
    pub v: u32,
    /// Energy (hartree).
    pub energy: f64,
}

impl From<&MeshWavefunction> for LevelRef {
    fn from(wf: &MeshWavefunction) -> Self {
        LevelRef { label: wf.label, v: wf.v, energy: wf.energy }
    }
}

/// Strength, oscillator strength and rate of one emission line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionRecord {
    /// Upper level.
    pub initial: LevelRef,
    /// Lower level.
    pub final_: LevelRef,
    /// Reduced strength (a.u.).
    pub s: f64,
    /// Oscillator strength, negative for emission.
    pub f: f64,
    /// Transition probability per second.
    pub w: f64,
    /// `E_i - E_f` (hartree).
    pub photon_energy: f64,
    /// True when the requested pair had to be reversed to point downwards.
    pub reversed: bool,
}

/// Builds the emission record of a pair, orienting it so that the final level is lower.
pub fn emission_record(
    grid: &QuadrupoleGrid,
    a: &MeshWavefunction,
    b: &MeshWavefunction,
    opts: &StrengthOptions,
    consts: &PhysicalConstants,
) -> Result<TransitionRecord> {
    let reversed = b.energy > a.energy;
    let (up, low) = if reversed { (b, a) } else { (a, b) };
    if up.energy == low.energy {
        return Err(Error::InvalidArgument("degenerate pair has no emission direction".into()));
    }
    let st = grid.strength(up, low, opts)?;
    let l_i = up.label.l;
    Ok(TransitionRecord {
        initial: up.into(),
        final_: low.into(),
        s: st.s,
        f: oscillator_strength(st.s, up.energy, low.energy, l_i, consts),
        w: transition_probability(st.s, up.energy, low.energy, l_i, consts)?,
        photon_energy: up.energy - low.energy,
        reversed,
    })
}
