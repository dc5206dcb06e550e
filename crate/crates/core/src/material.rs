//! Dispersive sphere materials and their dipole-order Mie polarizabilities.
//!
//! Polarizabilities follow the convention `p = ε₀ α E` (electric) and
//! `Z₀ m = α_M Z₀ H` (magnetic), so both carry units of volume (nm³). With
//! this choice the radiative reaction of a lossless sphere reads
//! `Im(−1/α) = k³/(6π)`, matching `Im G₀(r, r) = k/(6π)` once lattice
//! couplings are multiplied by `k²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, I};
use crate::units::wavenumber;

/// Homogeneous, isotropic, non-magnetic sphere material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialModel {
    /// `ε(ω) = ε∞ − ω_p²/(ω² + iγω)`.
    Drude {
        eps_inf: f64,
        plasma_energy_ev: f64,
        damping_ev: f64,
    },
    /// `ε = n²`, frequency independent.
    ConstantIndex { refractive_index: f64 },
}

impl MaterialModel {
    /// Quasistatic sphere resonance (`Re ε = −2`) of the default silver model.
    pub const SILVER_RESONANCE_EV: f64 = 3.5;
    pub const SILVER_EPS_INF: f64 = 4.0;
    pub const SILVER_DAMPING_EV: f64 = 0.05;

    /// Drude silver calibrated so that `Re ε(3.5 eV) = −2`.
    pub fn silver() -> Self {
        Self::drude_with_resonance(
            Self::SILVER_EPS_INF,
            Self::SILVER_DAMPING_EV,
            Self::SILVER_RESONANCE_EV,
        )
    }

    /// Drude model whose quasistatic sphere resonance sits at `resonance_ev`.
    ///
    /// `Re ε(ω) = ε∞ − ω_p²/(ω² + γ²)`, so `Re ε = −2` fixes
    /// `ω_p² = (ε∞ + 2)(ω² + γ²)`.
    pub fn drude_with_resonance(eps_inf: f64, damping_ev: f64, resonance_ev: f64) -> Self {
        let plasma = ((eps_inf + 2.0) * (resonance_ev * resonance_ev + damping_ev * damping_ev)).sqrt();
        MaterialModel::Drude {
            eps_inf,
            plasma_energy_ev: plasma,
            damping_ev,
        }
    }

    pub fn silicon() -> Self {
        MaterialModel::ConstantIndex {
            refractive_index: 3.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaterialModel::Drude {
                eps_inf,
                plasma_energy_ev,
                damping_ev,
            } => {
                if !(plasma_energy_ev > 0.0) {
                    return Err(Error::Config("drude plasma energy must be positive".into()));
                }
                if !(damping_ev >= 0.0) {
                    return Err(Error::Config("drude damping must be non-negative".into()));
                }
                if !eps_inf.is_finite() {
                    return Err(Error::Config("eps_inf must be finite".into()));
                }
            }
            MaterialModel::ConstantIndex { refractive_index } => {
                if !(refractive_index > 0.0) {
                    return Err(Error::Config("refractive index must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// True when `Im ε = 0` at every frequency.
    pub fn is_lossless(&self) -> bool {
        match *self {
            MaterialModel::Drude { damping_ev, .. } => damping_ev == 0.0,
            MaterialModel::ConstantIndex { .. } => true,
        }
    }
}

/// Relative permittivity at photon energy `omega` (eV).
pub fn permittivity(material: &MaterialModel, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    Ok(match *material {
        MaterialModel::Drude {
            eps_inf,
            plasma_energy_ev,
            damping_ev,
        } => {
            c(eps_inf)
                - c(plasma_energy_ev * plasma_energy_ev) / Complex64::new(omega * omega, damping_ev * omega)
        }
        MaterialModel::ConstantIndex { refractive_index } => c(refractive_index * refractive_index),
    })
}

/// Electric and magnetic dipole polarizabilities of a sphere (nm³).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipolePolarizability {
    pub electric: Complex64,
    pub magnetic: Complex64,
}

/// First-order Riccati–Bessel function `ψ₁(z) = z j₁(z)` and its derivative.
fn riccati_psi1(z: Complex64) -> (Complex64, Complex64) {
    if z.norm() < 0.1 {
        let z2 = z * z;
        // ψ₁ = z²/3 − z⁴/30 + z⁶/840 − z⁸/45360
        let psi = z2 * (c(1.0 / 3.0) + z2 * (c(-1.0 / 30.0) + z2 * (c(1.0 / 840.0) - z2 / 45360.0)));
        let dpsi = z * (c(2.0 / 3.0) + z2 * (c(-4.0 / 30.0) + z2 * (c(6.0 / 840.0) - z2 * 8.0 / 45360.0)));
        return (psi, dpsi);
    }
    let (s, co) = (z.sin(), z.cos());
    let psi = s / z - co;
    let dpsi = co / z - s / (z * z) + s;
    (psi, dpsi)
}

/// Outgoing Riccati–Hankel function `ξ₁(x) = x h₁⁽¹⁾(x)` and derivative, real `x`.
fn riccati_xi1(x: f64) -> (Complex64, Complex64) {
    let e = Complex64::from_polar(1.0, x);
    let xi = e * (c(-1.0) - I / x);
    let dxi = e * (-I + c(1.0 / x) + I / (x * x));
    (xi, dxi)
}

/// Dipole Mie coefficients `(a₁, b₁)` for size parameter `x` and relative index `m`.
fn mie_dipole_coefficients(x: f64, m: Complex64) -> (Complex64, Complex64) {
    let mx = m * x;
    let (psi_x, dpsi_x) = riccati_psi1(c(x));
    let (psi_mx, dpsi_mx) = riccati_psi1(mx);
    let (xi_x, dxi_x) = riccati_xi1(x);
    let a1 = (m * psi_mx * dpsi_x - psi_x * dpsi_mx) / (m * psi_mx * dxi_x - xi_x * dpsi_mx);
    let b1 = (psi_mx * dpsi_x - m * psi_x * dpsi_mx) / (psi_mx * dxi_x - m * xi_x * dpsi_mx);
    (a1, b1)
}

/// Dipole-order Mie polarizabilities `α_E = 6πi a₁/k³`, `α_M = 6πi b₁/k³`.
pub fn mie_dipole_polarizabilities(
    radius: f64,
    material: &MaterialModel,
    omega: f64,
) -> Result<DipolePolarizability> {
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("sphere radius must be positive, got {radius}")));
    }
    let eps = permittivity(material, omega)?;
    let k = wavenumber(omega);
    let x = k * radius;
    let m = eps.sqrt();
    let (a1, b1) = mie_dipole_coefficients(x, m);
    let pref = Complex64::new(0.0, 6.0 * PI / (k * k * k));
    Ok(DipolePolarizability {
        electric: pref * a1,
        magnetic: pref * b1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::HBAR_C_EV_NM;

    #[test]
    fn drude_zero_crossing_without_damping() {
        let mat = MaterialModel::Drude {
            eps_inf: 4.0,
            plasma_energy_ev: 9.0,
            damping_ev: 0.0,
        };
        let eps = permittivity(&mat, 9.0 / 2.0).unwrap();
        assert!(eps.norm() < 1e-12);
    }

    #[test]
    fn constant_index_permittivity() {
        let eps = permittivity(&MaterialModel::silicon(), 1.3).unwrap();
        assert_eq!(eps, c(12.25));
    }

    #[test]
    fn silver_calibration_places_resonance_at_3_5_ev() {
        let silver = MaterialModel::silver();
        // scan for Re ε = −2 crossing
        let mut crossing = None;
        let mut prev = permittivity(&silver, 3.0).unwrap().re + 2.0;
        for i in 1..=2000 {
            let w = 3.0 + i as f64 * 1e-3;
            let cur = permittivity(&silver, w).unwrap().re + 2.0;
            if prev < 0.0 && cur >= 0.0 {
                crossing = Some(w);
                break;
            }
            prev = cur;
        }
        let w = crossing.expect("no resonance crossing");
        assert!((w - 3.5).abs() < 0.05, "{w}");
    }

    #[test]
    fn non_positive_inputs_are_domain_errors() {
        assert!(matches!(permittivity(&MaterialModel::silver(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(
            mie_dipole_polarizabilities(-1.0, &MaterialModel::silver(), 2.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mie_dipole_polarizabilities(10.0, &MaterialModel::silver(), -2.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn clausius_mossotti_limit() {
        // kR = 0.02 for a lossless sphere with ε = 12.25
        let mat = MaterialModel::silicon();
        let radius = 50.0;
        let omega = 0.02 * HBAR_C_EV_NM / radius;
        let alpha = mie_dipole_polarizabilities(radius, &mat, omega).unwrap();
        let eps = 12.25;
        let volume = 4.0 * PI * radius.powi(3) / 3.0;
        let quasistatic = 3.0 * volume * (eps - 1.0) / (eps + 2.0);
        assert!((alpha.electric.re - quasistatic).abs() / quasistatic < 0.01);
    }

    #[test]
    fn optical_theorem_for_lossless_sphere() {
        let mat = MaterialModel::silicon();
        for i in 0..100 {
            let omega = 0.5 + 2.5 * i as f64 / 99.0;
            let k = wavenumber(omega);
            let alpha = mie_dipole_polarizabilities(100.0, &mat, omega).unwrap();
            let target = k.powi(3) / (6.0 * PI);
            for a in [alpha.electric, alpha.magnetic] {
                let lhs = (-1.0 / a).im;
                assert!((lhs - target).abs() / target < 1e-10, "ω={omega}: {lhs} vs {target}");
            }
        }
    }

    #[test]
    fn lossy_sphere_extinction_exceeds_scattering() {
        let mat = MaterialModel::silver();
        for i in 0..100 {
            let omega = 1.0 + 3.0 * i as f64 / 99.0;
            let k = wavenumber(omega);
            let alpha = mie_dipole_polarizabilities(50.0, &mat, omega).unwrap();
            let target = k.powi(3) / (6.0 * PI);
            assert!((-1.0 / alpha.electric).im - target >= -1e-12 * target);
            assert!((-1.0 / alpha.magnetic).im - target >= -1e-12 * target);
        }
    }

    #[test]
    fn silicon_magnetic_dipole_resonance_window() {
        let mat = MaterialModel::silicon();
        let samples: Vec<(f64, f64)> = (0..=300)
            .map(|i| {
                let w = 1.4 + 0.7 * i as f64 / 300.0;
                (w, mie_dipole_polarizabilities(100.0, &mat, w).unwrap().magnetic.norm())
            })
            .collect();
        let local_max = samples
            .windows(3)
            .filter(|s| s[1].1 > s[0].1 && s[1].1 > s[2].1)
            .map(|s| s[1].0)
            .collect::<Vec<_>>();
        assert!(local_max.iter().any(|w| (1.6..=1.9).contains(w)), "{local_max:?}");
    }

    #[test]
    fn passivity_of_permittivity() {
        for mat in [MaterialModel::silver(), MaterialModel::silicon()] {
            for i in 1..200 {
                let eps = permittivity(&mat, i as f64 * 0.05).unwrap();
                assert!(eps.im >= 0.0);
            }
        }
    }
}
