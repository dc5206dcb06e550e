//! Free-space scalar and dyadic Green functions.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat3, CVec3, Vec3, I};
use crate::units::wavenumber;

/// Scalar Helmholtz Green function `e^{ikr}/(4πr)`.
#[inline]
pub fn scalar_green(r: f64, k: Complex64) -> Complex64 {
    (I * k * r).exp() / (4.0 * PI * r)
}

/// Scalar Green function with its gradient and Hessian at separation `rho`.
pub fn scalar_with_derivatives(rho: &Vec3, k: Complex64) -> (Complex64, CVec3, CMat3) {
    let r = rho.norm();
    let g = scalar_green(r, k);
    // g' = g (ik − 1/r), g'' = g ((ik − 1/r)² + 1/r²)
    let d1 = g * (I * k - 1.0 / r);
    let d2 = g * ((I * k - 1.0 / r) * (I * k - 1.0 / r) + c(1.0 / (r * r)));
    let n = rho / r;
    let grad = n.map(c) * d1;
    let nn = n * n.transpose();
    let hess = nn.map(c) * d2 + (Matrix3::identity() - nn).map(c) * (d1 / r);
    (g, grad, hess)
}

/// Dyadic Green tensor `(I + ∇∇/k²) e^{ikρ}/(4πρ)` for separation `rho`
/// and a possibly complex wavenumber.
pub fn free_space_green_at(rho: &Vec3, k: Complex64) -> CMat3 {
    let r = rho.norm();
    let kr = k * r;
    let g = scalar_green(r, k);
    let inv = c(1.0) / kr;
    let a = c(1.0) + I * inv - inv * inv;
    let b = c(-1.0) - 3.0 * I * inv + 3.0 * inv * inv;
    let n = rho / r;
    let nn = (n * n.transpose()).map(c);
    (CMat3::identity() * a + nn * b) * g
}

/// Free-space dyadic Green tensor `G₀(r, r′, ω)` in nm⁻¹.
///
/// Normalized so that a point dipole `p` at `r′` produces `E(r) = μ₀ω² G₀·p`.
pub fn free_space_green(r: &Vec3, r_prime: &Vec3, omega: f64) -> Result<CMat3> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    let rho = r - r_prime;
    if rho.norm() == 0.0 {
        return Err(Error::Singular("free-space Green tensor at coincident points".into()));
    }
    Ok(free_space_green_at(&rho, c(wavenumber(omega))))
}

/// `Im G₀(r, r, ω) = k/(6π) I`, the finite part of the coincidence limit.
pub fn imaginary_self_term(omega: f64) -> Matrix3<f64> {
    Matrix3::identity() * (wavenumber(omega) / (6.0 * PI))
}
