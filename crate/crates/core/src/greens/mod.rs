//! Free-space and Bloch-periodic Green tensors, coupled electric + magnetic
//! dipole scattering by a periodic array of spheres, and the anti-Hermitian
//! part `𝒢_AH` that enters the spectral density.
//!
//! Normalization: a point dipole `p` produces `E = μ₀ω² G·p = k² G·(p/ε₀)`.
//! Internally fields and dipoles are carried as `e = E`, `h = Z₀H`,
//! `P = p/ε₀`, `M = Z₀m`, so that
//!
//! ```text
//! e = k² 𝒢 P + ik [∇g]× M
//! h = −ik [∇g]× P + k² 𝒢 M
//! ```
//!
//! and induced dipoles are `P = α_E e`, `M = α_M h`.

pub mod ewald;
mod free;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::linalg::{c, inverse_with_condition, CMat3, CMatrix, CVector, Vec2, Vec3, I};
use crate::material::{mie_dipole_polarizabilities, DipolePolarizability, MaterialModel};
use crate::units::wavenumber;

pub use ewald::{EwaldParams, LatticeSum, LatticeSummer};
pub use free::{
    free_space_green, free_space_green_at, imaginary_self_term, scalar_green, scalar_with_derivatives,
};

/// Condition number above which `α⁻¹ − S₆` is reported as near-singular.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e12;

/// A sphere inside the unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererSpec {
    pub position_nm: [f64; 3],
    pub radius_nm: f64,
    pub material: MaterialModel,
}

impl ScattererSpec {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position_nm)
    }
}

/// Lattice, scatterers and Ewald controls: everything that defines `𝒢`.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub lattice: LatticeSpec,
    pub scatterers: Vec<ScattererSpec>,
    pub ewald: EwaldParams,
}

impl Environment {
    pub fn new(lattice: LatticeSpec, scatterers: Vec<ScattererSpec>, ewald: EwaldParams) -> Result<Self> {
        ewald.validate()?;
        let spacing = lattice.min_spacing();
        for (i, s) in scatterers.iter().enumerate() {
            s.material.validate()?;
            if !(s.radius_nm > 0.0) {
                return Err(Error::Geometry(format!("scatterer {i}: radius must be positive")));
            }
            if 2.0 * s.radius_nm >= spacing {
                return Err(Error::Geometry(format!(
                    "scatterer {i}: diameter {} nm overlaps its periodic images (spacing {spacing} nm)",
                    2.0 * s.radius_nm
                )));
            }
        }
        for i in 0..scatterers.len() {
            for j in (i + 1)..scatterers.len() {
                let d = scatterers[i].position() - scatterers[j].position();
                let r0 = lattice.nearest_point(Vec2::new(d.x, d.y));
                let dist = Vec3::new(d.x - r0.x, d.y - r0.y, d.z).norm();
                if dist < scatterers[i].radius_nm + scatterers[j].radius_nm {
                    return Err(Error::Geometry(format!("scatterers {i} and {j} overlap")));
                }
            }
        }
        Ok(Environment {
            lattice,
            scatterers,
            ewald,
        })
    }

    /// Empty lattice: `𝒢` reduces to the free Bloch sum.
    pub fn vacuum(lattice: LatticeSpec) -> Self {
        Environment {
            lattice,
            scatterers: Vec::new(),
            ewald: EwaldParams::default(),
        }
    }

    /// Domain error when `r` lies inside any sphere or its periodic images.
    pub fn check_outside(&self, r: &Vec3) -> Result<()> {
        for (i, s) in self.scatterers.iter().enumerate() {
            let d = r - s.position();
            let r0 = self.lattice.nearest_point(Vec2::new(d.x, d.y));
            let dist = Vec3::new(d.x - r0.x, d.y - r0.y, d.z).norm();
            if dist < s.radius_nm {
                return Err(Error::Domain(format!(
                    "point ({:.3}, {:.3}, {:.3}) nm lies inside scatterer {i}",
                    r.x, r.y, r.z
                )));
            }
        }
        Ok(())
    }

    /// Solve the coupled-dipole problem at `(k∥, ω)`.
    pub fn response(&self, k_par: Vec2, omega: f64) -> Result<BlochResponse<'_>> {
        if !(omega > 0.0) {
            return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
        }
        let k = wavenumber(omega);
        let summer = LatticeSummer::new(&self.lattice, k_par, c(k), &self.ewald)?;
        let polarizabilities = self
            .scatterers
            .iter()
            .map(|s| mie_dipole_polarizabilities(s.radius_nm, &s.material, omega))
            .collect::<Result<Vec<_>>>()?;
        let n = 6 * self.scatterers.len();
        let (alpha_eff, condition) = if n == 0 {
            (CMatrix::zeros(0, 0), 1.0)
        } else {
            let s6 = interaction_matrix(&summer, &self.scatterers)?;
            let alpha = alpha_diagonal(&polarizabilities);
            let lhs = CMatrix::identity(n, n) - CMatrix::from_diagonal(&alpha) * &s6;
            let (inv, cond) = inverse_with_condition(&lhs)?;
            (inv * CMatrix::from_diagonal(&alpha), cond)
        };
        Ok(BlochResponse {
            env: self,
            k_par,
            omega,
            k,
            summer,
            polarizabilities,
            alpha_eff,
            condition,
        })
    }
}

fn alpha_diagonal(pols: &[DipolePolarizability]) -> CVector {
    let mut out = CVector::zeros(6 * pols.len());
    for (s, p) in pols.iter().enumerate() {
        for a in 0..3 {
            out[6 * s + a] = p.electric;
            out[6 * s + 3 + a] = p.magnetic;
        }
    }
    out
}

/// 6N×6N periodic interaction `S₆`: blocks `[[k²𝒢, ikC], [−ikC, k²𝒢]]` with
/// `C = [∇g_B]×` at `r_s − r_s′`.
///
/// On the diagonal the lattice sum runs over `R ≠ 0` only; the Mie
/// polarizabilities already carry the radiation reaction of a single sphere.
fn interaction_matrix(summer: &LatticeSummer, scatterers: &[ScattererSpec]) -> Result<CMatrix> {
    let n = scatterers.len();
    let k = summer.wavenumber();
    let k2 = k * k;
    let mut s6 = CMatrix::zeros(6 * n, 6 * n);
    for (i, si) in scatterers.iter().enumerate() {
        for (j, sj) in scatterers.iter().enumerate() {
            let rho = si.position() - sj.position();
            let sum = summer.sum(&rho, true)?;
            let mut green = sum.green;
            if i == j {
                green -= CMat3::identity() * (I * k / (6.0 * PI));
            }
            let curl = sum.curl();
            let ee = green * k2;
            let em = curl * (I * k);
            s6.fixed_view_mut::<3, 3>(6 * i, 6 * j).copy_from(&ee);
            s6.fixed_view_mut::<3, 3>(6 * i, 6 * j + 3).copy_from(&em);
            s6.fixed_view_mut::<3, 3>(6 * i + 3, 6 * j).copy_from(&(-em));
            s6.fixed_view_mut::<3, 3>(6 * i + 3, 6 * j + 3).copy_from(&ee);
        }
    }
    Ok(s6)
}

/// Solved coupled-dipole response of the array at one `(k∥, ω)`.
#[derive(Debug, Clone)]
pub struct BlochResponse<'a> {
    env: &'a Environment,
    pub k_par: Vec2,
    pub omega: f64,
    pub k: f64,
    summer: LatticeSummer,
    pub polarizabilities: Vec<DipolePolarizability>,
    /// `(α⁻¹ − S₆)⁻¹`, 6N×6N, ordered `(P_s, M_s)` per scatterer.
    pub alpha_eff: CMatrix,
    /// Frobenius condition number of `I − α S₆`.
    pub condition: f64,
}

impl<'a> BlochResponse<'a> {
    pub fn environment(&self) -> &Environment {
        self.env
    }

    pub fn summer(&self) -> &LatticeSummer {
        &self.summer
    }

    pub fn near_singular(&self) -> bool {
        self.condition > NEAR_SINGULAR_CONDITION
    }

    /// Free Bloch lattice sum; coincident sites use the regularized form.
    pub fn free_sum(&self, r: &Vec3, r_prime: &Vec3) -> Result<LatticeSum> {
        self.summer.sum(&(r - r_prime), true)
    }

    pub fn free_green(&self, r: &Vec3, r_prime: &Vec3) -> Result<CMat3> {
        Ok(self.free_sum(r, r_prime)?.green)
    }

    /// Fields `[e; h]` at every scatterer from a unit-normalized Bloch
    /// array of electric dipoles `P` at `r_prime`: a 6N×3 matrix.
    pub fn incident_from_dipole(&self, r_prime: &Vec3) -> Result<CMatrix> {
        let k = c(self.k);
        let n = self.env.scatterers.len();
        let mut out = CMatrix::zeros(6 * n, 3);
        for (s, sc) in self.env.scatterers.iter().enumerate() {
            let sum = self.summer.sum(&(sc.position() - r_prime), false)?;
            out.fixed_view_mut::<3, 3>(6 * s, 0).copy_from(&(sum.green * (k * k)));
            out.fixed_view_mut::<3, 3>(6 * s + 3, 0).copy_from(&(sum.curl() * (-I * k)));
        }
        Ok(out)
    }

    /// Electric field at `r` per unit induced dipole amplitude: a 3×6N
    /// matrix `[k²𝒢, ikC]` over scatterers.
    pub fn field_from_scatterers(&self, r: &Vec3) -> Result<CMatrix> {
        let k = c(self.k);
        let n = self.env.scatterers.len();
        let mut out = CMatrix::zeros(3, 6 * n);
        for (s, sc) in self.env.scatterers.iter().enumerate() {
            let sum = self.summer.sum(&(r - sc.position()), false)?;
            out.fixed_view_mut::<3, 3>(0, 6 * s).copy_from(&(sum.green * (k * k)));
            out.fixed_view_mut::<3, 3>(0, 6 * s + 3).copy_from(&(sum.curl() * (I * k)));
        }
        Ok(out)
    }

    /// Scattered part `𝒢_sc(k∥, r, r′)`.
    pub fn scattered_green(&self, r: &Vec3, r_prime: &Vec3) -> Result<CMat3> {
        if self.env.scatterers.is_empty() {
            return Ok(CMat3::zeros());
        }
        let row = self.field_from_scatterers(r)?;
        let col = self.incident_from_dipole(r_prime)?;
        let m = row * &self.alpha_eff * col / c(self.k * self.k);
        Ok(CMat3::from_fn(|i, j| m[(i, j)]))
    }

    /// `𝒢 = 𝒢₀ + 𝒢_sc`; coincident sites keep only the finite part of `𝒢₀`.
    pub fn total_green(&self, r: &Vec3, r_prime: &Vec3) -> Result<CMat3> {
        self.env.check_outside(r)?;
        self.env.check_outside(r_prime)?;
        Ok(self.free_green(r, r_prime)? + self.scattered_green(r, r_prime)?)
    }

    /// `[𝒢(r, r′) − 𝒢†(r′, r)]/(2i)`.
    pub fn anti_hermitian(&self, r: &Vec3, r_prime: &Vec3) -> Result<CMat3> {
        let g = self.total_green(r, r_prime)?;
        let gt = if r == r_prime { g } else { self.total_green(r_prime, r)? };
        Ok((g - gt.adjoint()) / Complex64::new(0.0, 2.0))
    }

    /// Induced dipoles `(P_s, M_s)` for incident fields `(e_s, h_s)` at the scatterers.
    pub fn induced_dipoles(&self, incident: &CVector) -> CVector {
        &self.alpha_eff * incident
    }
}

/// Bloch-periodic free Green tensor `Σ_R e^{ik∥·R} G₀(r, r′ + R, ω)`.
pub fn bloch_free_green(
    k_par: Vec2,
    r: &Vec3,
    r_prime: &Vec3,
    omega: f64,
    lattice: &LatticeSpec,
    ewald: &EwaldParams,
) -> Result<CMat3> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    bloch_free_green_complex(k_par, r, r_prime, c(omega), lattice, ewald)
}

/// As [`bloch_free_green`] at complex frequency (`Im ω ≥ 0`).
pub fn bloch_free_green_complex(
    k_par: Vec2,
    r: &Vec3,
    r_prime: &Vec3,
    omega: Complex64,
    lattice: &LatticeSpec,
    ewald: &EwaldParams,
) -> Result<CMat3> {
    let summer = LatticeSummer::new(lattice, k_par, omega / crate::units::HBAR_C_EV_NM, ewald)?;
    Ok(summer.sum(&(r - r_prime), false)?.green)
}

/// `Σ_{R≠0} e^{ik∥·R} G₀(site, site + R) + i Im G₀(site, site)`.
///
/// The sum does not depend on `site` for a lattice in the plane; the
/// argument is kept for symmetry with the other lattice sums.
pub fn regularized_site_sum(
    k_par: Vec2,
    omega: f64,
    lattice: &LatticeSpec,
    site: &Vec3,
    ewald: &EwaldParams,
) -> Result<CMat3> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    regularized_site_sum_complex(k_par, c(omega), lattice, site, ewald)
}

pub fn regularized_site_sum_complex(
    k_par: Vec2,
    omega: Complex64,
    lattice: &LatticeSpec,
    site: &Vec3,
    ewald: &EwaldParams,
) -> Result<CMat3> {
    let summer = LatticeSummer::new(lattice, k_par, omega / crate::units::HBAR_C_EV_NM, ewald)?;
    let _ = site;
    Ok(summer.sum(&Vec3::zeros(), true)?.green)
}

/// Effective polarizability with its condition number.
#[derive(Debug, Clone)]
pub struct EffectivePolarizability {
    pub matrix: CMatrix,
    pub condition: f64,
}

impl EffectivePolarizability {
    pub fn near_singular(&self) -> bool {
        self.condition > NEAR_SINGULAR_CONDITION
    }
}

/// `α_eff = (α⁻¹ − S₆)⁻¹` for the scatterers in one unit cell.
pub fn effective_polarizability(
    k_par: Vec2,
    omega: f64,
    scatterers: &[ScattererSpec],
    lattice: &LatticeSpec,
    ewald: &EwaldParams,
) -> Result<EffectivePolarizability> {
    let env = Environment::new(*lattice, scatterers.to_vec(), *ewald)?;
    let resp = env.response(k_par, omega)?;
    Ok(EffectivePolarizability {
        matrix: resp.alpha_eff,
        condition: resp.condition,
    })
}

/// Total Bloch Green tensor `𝒢₀ + 𝒢_sc`.
pub fn bloch_total_green(
    k_par: Vec2,
    r: &Vec3,
    r_prime: &Vec3,
    omega: f64,
    env: &Environment,
) -> Result<CMat3> {
    env.response(k_par, omega)?.total_green(r, r_prime)
}

/// Anti-Hermitian part `𝒢_AH(k∥, r, r′, ω)`.
pub fn anti_hermitian_part(
    k_par: Vec2,
    r: &Vec3,
    r_prime: &Vec3,
    omega: f64,
    env: &Environment,
) -> Result<CMat3> {
    env.response(k_par, omega)?.anti_hermitian(r, r_prime)
}
