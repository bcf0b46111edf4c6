//! Perimetric coordinates of the proton-proton-electron triangle and the
//! geometric kernels evaluated on them.
//!
//! With `R` the proton-proton distance and `r1`, `r2` the electron-proton distances,
//! `x = R - r2 + r1`, `y = R + r2 - r1`, `z = -R + r1 + r2`. The body frame puts proton 1
//! at `-R/2` and proton 2 at `+R/2` on its z axis, and the electron at cylindrical
//! coordinates `(rho, zeta)`.

use crate::error::{Error, Result};

/// Proton mass in electron masses used by default.
pub const PROTON_MASS: f64 = 1836.152701;

/// A point of the perimetric octant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerimetricPoint {
    /// `R - r2 + r1`.
    pub x: f64,
    /// `R + r2 - r1`.
    pub y: f64,
    /// `-R + r1 + r2`.
    pub z: f64,
}

impl PerimetricPoint {
    /// Builds a point, rejecting negative or non-finite coordinates.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if [x, y, z].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("perimetric point ({x}, {y}, {z}) outside the octant")));
        }
        Ok(PerimetricPoint { x, y, z })
    }

    /// The same configuration with the two protons exchanged.
    pub fn swapped(&self) -> Self {
        PerimetricPoint { x: self.y, y: self.x, z: self.z }
    }
}

/// Interparticle distances and electron cylindrical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyFrame {
    /// Proton-proton distance.
    pub r_pp: f64,
    /// Electron to proton 1 distance.
    pub r_e1: f64,
    /// Electron to proton 2 distance.
    pub r_e2: f64,
    /// Distance of the electron from the internuclear axis.
    pub rho: f64,
    /// Electron coordinate along the internuclear axis, measured from its midpoint towards proton 2.
    pub zeta: f64,
}

/// Particle masses and derived reduced masses (atomic units, electron mass 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassSet {
    /// Proton mass.
    pub m_p: f64,
}

impl Default for MassSet {
    fn default() -> Self {
        MassSet { m_p: PROTON_MASS }
    }
}

impl MassSet {
    /// Builds a mass set, rejecting non-positive masses.
    pub fn new(m_p: f64) -> Result<Self> {
        if !(m_p.is_finite() && m_p > 0.0) {
            return Err(Error::InvalidArgument(format!("proton mass {m_p} must be positive")));
        }
        Ok(MassSet { m_p })
    }

    /// Total mass `2 m_p + 1`.
    pub fn total(&self) -> f64 {
        2.0 * self.m_p + 1.0
    }

    /// Reduced mass of the proton pair, `m_p / 2`.
    pub fn mu_nuclear(&self) -> f64 {
        0.5 * self.m_p
    }

    /// Reduced mass of the electron relative to the proton pair, `2 m_p / M`.
    pub fn mu_electron(&self) -> f64 {
        2.0 * self.m_p / self.total()
    }

    /// Electron-proton reduced mass `m_p / (m_p + 1)`.
    pub fn mu_atom(&self) -> f64 {
        self.m_p / (self.m_p + 1.0)
    }

    /// Weight of the electron term in the quadrupole moment about the centre of mass, `1 - 2/M - 1/M^2`.
    pub fn gamma(&self) -> f64 {
        let m = self.total();
        1.0 - 2.0 / m - 1.0 / (m * m)
    }

    /// Ground-state energy of the hydrogen atom with a finite-mass proton, the dissociation threshold.
    pub fn dissociation_energy(&self) -> f64 {
        -0.5 * self.mu_atom()
    }
}

/// Distances and cylindrical electron coordinates of a perimetric point.
pub fn body_frame(p: &PerimetricPoint) -> BodyFrame {
    let (x, y, z) = (p.x, p.y, p.z);
    let s = x + y;
    BodyFrame {
        r_pp: 0.5 * s,
        r_e1: 0.5 * (x + z),
        r_e2: 0.5 * (y + z),
        rho: regularization(p) / s,
        zeta: (x - y) * (2.0 * z + s) / (4.0 * s),
    }
}

/// Coulomb potential `2/(x+y) - 2/(x+z) - 2/(y+z)`.
pub fn coulomb_potential(p: &PerimetricPoint) -> f64 {
    2.0 / (p.x + p.y) - 2.0 / (p.x + p.z) - 2.0 / (p.y + p.z)
}

/// Volume element `(x+y)(y+z)(z+x)`.
pub fn volume_weight(p: &PerimetricPoint) -> f64 {
    (p.x + p.y) * (p.y + p.z) * (p.z + p.x)
}

/// Regularization factor `sqrt(x y z (x+y+z))`, equal to `2 R rho`.
pub fn regularization(p: &PerimetricPoint) -> f64 {
    (p.x * p.y * p.z * (p.x + p.y + p.z)).max(0.0).sqrt()
}

/// Body-frame quadrupole kernel of order `kappa` in 0..=2.
pub fn quad_kernel(kappa: usize, frame: &BodyFrame, gamma: f64) -> Result<f64> {
    let BodyFrame { r_pp, rho, zeta, .. } = *frame;
    match kappa {
        0 => Ok(0.5 * (r_pp * r_pp - gamma * (2.0 * zeta * zeta - rho * rho))),
        1 => Ok(-(1.5f64).sqrt() * gamma * zeta * rho),
        2 => Ok(-(0.375f64).sqrt() * gamma * rho * rho),
        _ => Err(Error::InvalidArgument(format!("quadrupole kernel order {kappa} not in 0..=2"))),
    }
}

/// Components `(d/dR, d/dr1, d/dr2)` of a direction mapped to `(d/dx, d/dy, d/dz)`.
#[inline]
fn to_perimetric(d_r: f64, d_1: f64, d_2: f64) -> [f64; 3] {
    [d_r + d_1 - d_2, d_r - d_1 + d_2, -d_r + d_1 + d_2]
}

/// Kinetic metric `P` in perimetric coordinates.
///
/// For any function `phi` of the internal coordinates, `sum_ab P_ab d_a phi d_b phi` is the
/// kinetic energy density of `phi` at zero total angular momentum. Built from the
/// interparticle distances and the angles of the triangle.
pub fn kinetic_metric(p: &PerimetricPoint, masses: &MassSet) -> [[f64; 3]; 3] {
    let f = body_frame(p);
    let (r, r1, r2) = (f.r_pp, f.r_e1, f.r_e2);
    let inv_mp = 1.0 / masses.m_p;
    let cos_p1 = (r * r + r1 * r1 - r2 * r2) / (2.0 * r * r1);
    let cos_p2 = (r * r + r2 * r2 - r1 * r1) / (2.0 * r * r2);
    let cos_e = (r1 * r1 + r2 * r2 - r * r) / (2.0 * r1 * r2);
    let atom = 0.5 * (1.0 + inv_mp);
    let g = [
        [inv_mp, 0.5 * inv_mp * cos_p1, 0.5 * inv_mp * cos_p2],
        [0.5 * inv_mp * cos_p1, atom, 0.5 * cos_e],
        [0.5 * inv_mp * cos_p2, 0.5 * cos_e, atom],
    ];
    congruence(&g)
}

/// Kinetic metric from the body-frame vector fields `d/dR`, `d/drho`, `d/dzeta` and the
/// in-plane rotation `Lambda = zeta d/drho - rho d/dzeta`.
///
/// Mathematically identical to [`kinetic_metric`]; kept as an independent construction.
pub fn kinetic_metric_body(p: &PerimetricPoint, masses: &MassSet) -> [[f64; 3]; 3] {
    let f = body_frame(p);
    let (r, r1, r2, rho, zeta) = (f.r_pp, f.r_e1, f.r_e2, f.rho, f.zeta);
    let a1 = zeta + 0.5 * r;
    let a2 = zeta - 0.5 * r;
    let v_r = to_perimetric(1.0, a1 / (2.0 * r1), -a2 / (2.0 * r2));
    let v_rho = to_perimetric(0.0, rho / r1, rho / r2);
    let v_zeta = to_perimetric(0.0, a1 / r1, a2 / r2);
    let v_lam = lambda_field(&f);
    let wr = 0.5 / masses.mu_nuclear();
    let we = 0.5 / masses.mu_electron();
    let wl = wr / (r * r);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = wr * v_r[a] * v_r[b] + we * (v_rho[a] * v_rho[b] + v_zeta[a] * v_zeta[b]) + wl * v_lam[a] * v_lam[b];
        }
    }
    out
}

/// Perimetric components of `Lambda = zeta d/drho - rho d/dzeta`, which leaves `R` fixed.
pub fn lambda_field(f: &BodyFrame) -> [f64; 3] {
    let half = 0.5 * f.rho * f.r_pp;
    to_perimetric(0.0, -half / f.r_e1, half / f.r_e2)
}

/// Maps a metric written in `(R, r1, r2)` to perimetric coordinates.
fn congruence(g: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    // a[q][i] is the derivative of perimetric coordinate i with respect to distance q.
    let a = [[1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for q in 0..3 {
                for r in 0..3 {
                    s += a[q][i] * g[q][r] * a[r][j];
                }
            }
            out[i][j] = s;
        }
    }
    out
}
