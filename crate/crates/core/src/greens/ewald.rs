//! Ewald summation of the Bloch-periodic Helmholtz Green function
//! `g_B(ρ) = Σ_R e^{ik∥·R} e^{ik|ρ−R|}/(4π|ρ−R|)` for a 2D lattice of point
//! sources in the `z = 0` plane, together with its gradient and Hessian.
//!
//! The sum is split with parameter `E` into a spatial part of
//! erfc-damped images and a spectral part over diffraction orders
//! `β = k∥ + G` with `γ = √(β² − k²)`:
//!
//! ```text
//! spatial:  u(r)/(8πr),  u = e^{ikr} erfc(rE + ik/2E) + e^{−ikr} erfc(rE − ik/2E)
//! spectral: e^{iβ·ρ∥}/(4Aγ) · [e^{γ|z|} erfc(γ/2E + |z|E) + e^{−γ|z|} erfc(γ/2E − |z|E)]
//! ```
//!
//! Both families are evaluated through the Faddeeva function so that the
//! large exponentials cancel analytically.

use std::f64::consts::PI;

use errorfunctions::{erf_with_relerror, erfc_with_relerror, w_with_relerror};
use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{lattice_points_in_radius, points_near, reciprocal_basis, LatticeSpec};
use crate::linalg::{c, cross_matrix, CMat3, CVec3, Vec2, Vec3, I};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Margin (in e-folds) added to `ln(1/tolerance)` for automatic cutoffs.
const CUTOFF_MARGIN: f64 = 3.0;

/// Ewald summation controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EwaldParams {
    /// Splitting parameter `E` in nm⁻¹. Automatic when unset.
    pub splitting: Option<f64>,
    /// Spatial cutoff in units of the shortest lattice vector. Automatic when unset.
    pub real_cutoff: Option<u32>,
    /// Spectral cutoff in units of the shortest reciprocal vector. Automatic when unset.
    pub reciprocal_cutoff: Option<u32>,
    /// Target truncation error relative to unit-magnitude terms.
    pub tolerance: f64,
    /// Take dyadic derivatives by central differences (step `1e-4·a`).
    /// Debug cross-check only.
    pub finite_difference: bool,
}

impl Default for EwaldParams {
    fn default() -> Self {
        EwaldParams {
            splitting: None,
            real_cutoff: None,
            reciprocal_cutoff: None,
            tolerance: 1e-12,
            finite_difference: false,
        }
    }
}

impl EwaldParams {
    pub fn with_splitting(splitting: f64) -> Self {
        EwaldParams {
            splitting: Some(splitting),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.splitting {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("ewald splitting must be positive, got {e}")));
            }
        }
        if self.real_cutoff == Some(0) || self.reciprocal_cutoff == Some(0) {
            return Err(Error::Config("ewald cutoffs must be at least one shell".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "ewald tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// Splitting actually used for a lattice and wavenumber.
    pub fn resolved_splitting(&self, lattice: &LatticeSpec, k: Complex64) -> f64 {
        self.splitting
            .unwrap_or_else(|| (PI / lattice.cell_area()).sqrt().max(k.norm() / 5.0))
    }
}

/// Dyadic lattice sum `𝒢 = g_B I + ∇∇g_B/k²` and the gradient `∇g_B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSum {
    pub green: CMat3,
    pub grad: CVec3,
}

impl LatticeSum {
    /// `[∇g_B]×`, the curl kernel coupling electric and magnetic dipoles.
    pub fn curl(&self) -> CMat3 {
        cross_matrix(&self.grad)
    }
}

#[derive(Debug, Clone, Copy)]
struct Order {
    beta: Vec2,
    gamma: Complex64,
    pref: Complex64,
}

/// Precomputed Ewald plan for one `(lattice, k∥, k)`.
#[derive(Debug, Clone)]
pub struct LatticeSummer {
    lattice: LatticeSpec,
    k_par: Vec2,
    k: Complex64,
    splitting: f64,
    orders: Vec<Order>,
    images: Vec<Vec2>,
    min_spacing: f64,
    finite_difference: bool,
}

impl LatticeSummer {
    pub fn new(lattice: &LatticeSpec, k_par: Vec2, k: Complex64, params: &EwaldParams) -> Result<Self> {
        params.validate()?;
        if !(k.re > 0.0) || !k.im.is_finite() || k.im < 0.0 {
            return Err(Error::Domain(format!("wavenumber must have Re k > 0 and Im k ≥ 0, got {k}")));
        }
        let e = params.resolved_splitting(lattice, k);
        let b2 = (k / (2.0 * e)).powi(2);
        let log_tol = (1.0 / params.tolerance).ln() + CUTOFF_MARGIN;
        let min_spacing = lattice.min_spacing();
        let (b1, b2v) = reciprocal_basis(lattice);
        let recip_min = LatticeSpec { a1: b1, a2: b2v }.min_spacing();

        let r_max = match params.real_cutoff {
            Some(n) => {
                let r = n as f64 * min_spacing;
                let tail = (-(r * e).powi(2) + b2.re).exp();
                if tail > params.tolerance {
                    return Err(Error::Convergence {
                        tail,
                        tolerance: params.tolerance,
                    });
                }
                r
            }
            None => (log_tol + b2.re.max(0.0)).sqrt() / e,
        };
        let beta_max = match params.reciprocal_cutoff {
            Some(n) => {
                let bm = n as f64 * recip_min;
                let tail = (-(bm * bm - (k * k).re) / (4.0 * e * e)).exp();
                if tail > params.tolerance {
                    return Err(Error::Convergence {
                        tail,
                        tolerance: params.tolerance,
                    });
                }
                bm
            }
            None => (4.0 * e * e * log_tol + (k * k).re.max(0.0)).sqrt(),
        };

        let area = lattice.cell_area();
        let k2 = k * k;
        let mut orders = Vec::new();
        for (_, _, g) in points_near((b1, b2v), -k_par, beta_max) {
            let beta = k_par + g;
            let kz = (k2 - c(beta.norm_squared())).sqrt();
            let gamma = -I * kz;
            if gamma.norm() < 1e-6 * k.norm() {
                return Err(Error::Singular(format!(
                    "Rayleigh anomaly: diffraction order β = ({:.6e}, {:.6e}) nm⁻¹ is grazing",
                    beta.x, beta.y
                )));
            }
            orders.push(Order {
                beta,
                gamma,
                pref: c(1.0) / (4.0 * area * gamma),
            });
        }

        // reduced in-plane separations lie inside the Wigner-Seitz cell
        let cell_reach = 0.5 * (lattice.a1.norm() + lattice.a2.norm());
        let images = lattice_points_in_radius(lattice, r_max + cell_reach);

        Ok(LatticeSummer {
            lattice: *lattice,
            k_par,
            k,
            splitting: e,
            orders,
            images,
            min_spacing,
            finite_difference: params.finite_difference,
        })
    }

    pub fn splitting(&self) -> f64 {
        self.splitting
    }

    pub fn wavenumber(&self) -> Complex64 {
        self.k
    }

    pub fn term_counts(&self) -> (usize, usize) {
        (self.images.len(), self.orders.len())
    }

    /// Reduction of `rho∥` to the nearest lattice vector and its Bloch phase `e^{ik∥·R₀}`.
    fn reduce(&self, rho: &Vec3) -> (Vec3, Complex64) {
        let p = Vec2::new(rho.x, rho.y);
        let r0 = self.lattice.nearest_point(p);
        let reduced = Vec3::new(p.x - r0.x, p.y - r0.y, rho.z);
        (reduced, Complex64::from_polar(1.0, self.k_par.dot(&r0)))
    }

    /// True when `rho` coincides with a lattice vector.
    pub fn is_self_site(&self, rho: &Vec3) -> bool {
        self.reduce(rho).0.norm() < 1e-9 * self.min_spacing
    }

    /// Lattice sum at separation `rho = r − r′`.
    ///
    /// When `rho` is a lattice vector the sum is only defined with
    /// `allow_self`, in which case the singular image is replaced by the
    /// finite part `i k/(6π) I` of the free-space coincidence limit:
    /// the result is `Σ_{R ≠ R₀} e^{ik∥·R} G₀(R₀ − R) + i k/(6π) I`, up to the
    /// Bloch phase of `R₀`.
    pub fn sum(&self, rho: &Vec3, allow_self: bool) -> Result<LatticeSum> {
        let (red, phase) = self.reduce(rho);
        if red.norm() < 1e-9 * self.min_spacing {
            if !allow_self {
                return Err(Error::Singular(
                    "lattice sum evaluated on a lattice site; use the regularized site sum".into(),
                ));
            }
            let (g, grad, hess) = self.scalar_terms(&Vec3::zeros(), true);
            let k = self.k;
            let green = CMat3::identity() * (g + self.self_correction()) + hess / (k * k);
            return Ok(LatticeSum {
                green: green * phase,
                grad: grad * phase,
            });
        }
        let (g, grad, hess) = if self.finite_difference {
            self.finite_difference_terms(&red)
        } else {
            self.scalar_terms(&red, false)
        };
        let green = CMat3::identity() * g + hess / (self.k * self.k);
        Ok(LatticeSum {
            green: green * phase,
            grad: grad * phase,
        })
    }

    /// Isotropic dyadic correction at the origin: the smooth remainder of the
    /// removed spatial image plus the radiative `ik/(6π)`.
    fn self_correction(&self) -> Complex64 {
        let k = self.k;
        let e = self.splitting;
        let b = k / (2.0 * e);
        let c0 = (b * b).exp() * (2.0 * e / SQRT_PI);
        let erf_ib = erf_with_relerror(I * b, 0.0);
        (c0 * (c(e * e) / (k * k) - 1.0) - I * k * erf_ib) / (6.0 * PI)
    }

    /// Scalar sum, gradient and Hessian at a reduced separation.
    fn scalar_terms(&self, rho: &Vec3, skip_origin: bool) -> (Complex64, CVec3, CMat3) {
        let mut g = Complex64::new(0.0, 0.0);
        let mut grad = CVec3::zeros();
        let mut hess = CMat3::zeros();
        let rho_par = Vec2::new(rho.x, rho.y);
        let z = rho.z;
        let az = z.abs();
        let sz = if z < 0.0 { -1.0 } else { 1.0 };
        let e = self.splitting;

        for o in &self.orders {
            let (v, dv, d2v) = spectral_profile(o.gamma, az, e);
            let base = o.pref * Complex64::from_polar(1.0, o.beta.dot(&rho_par));
            let ib = CVec3::new(I * o.beta.x, I * o.beta.y, c(0.0));
            let t = base * v;
            let tz = base * dv * sz;
            g += t;
            grad += CVec3::new(ib.x * t, ib.y * t, tz);
            hess[(0, 0)] += ib.x * ib.x * t;
            hess[(0, 1)] += ib.x * ib.y * t;
            hess[(1, 1)] += ib.y * ib.y * t;
            hess[(0, 2)] += ib.x * tz;
            hess[(1, 2)] += ib.y * tz;
            hess[(2, 2)] += base * d2v;
        }
        hess[(1, 0)] = hess[(0, 1)];
        hess[(2, 0)] = hess[(0, 2)];
        hess[(2, 1)] = hess[(1, 2)];

        for r_lat in &self.images {
            if skip_origin && r_lat.norm() == 0.0 {
                continue;
            }
            let d = Vec3::new(rho.x - r_lat.x, rho.y - r_lat.y, z);
            let (f, df, d2f) = spatial_term(&d, self.k, e);
            let ph = Complex64::from_polar(1.0, self.k_par.dot(r_lat));
            g += f * ph;
            grad += df * ph;
            hess += d2f * ph;
        }
        (g, grad, hess)
    }

    fn scalar_value(&self, rho: &Vec3) -> Complex64 {
        let rho_par = Vec2::new(rho.x, rho.y);
        let az = rho.z.abs();
        let mut g = Complex64::new(0.0, 0.0);
        for o in &self.orders {
            let (v, _, _) = spectral_profile(o.gamma, az, self.splitting);
            g += o.pref * Complex64::from_polar(1.0, o.beta.dot(&rho_par)) * v;
        }
        for r_lat in &self.images {
            let d = Vec3::new(rho.x - r_lat.x, rho.y - r_lat.y, rho.z);
            let (f, _, _) = spatial_term(&d, self.k, self.splitting);
            g += f * Complex64::from_polar(1.0, self.k_par.dot(r_lat));
        }
        g
    }

    fn finite_difference_terms(&self, rho: &Vec3) -> (Complex64, CVec3, CMat3) {
        let h = 1e-4 * self.min_spacing;
        let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
        let f = |p: Vec3| self.scalar_value(&p);
        let g0 = f(*rho);
        let mut grad = CVec3::zeros();
        let mut hess = CMat3::zeros();
        for i in 0..3 {
            let (p, m) = (f(rho + axes[i] * h), f(rho - axes[i] * h));
            grad[i] = (p - m) / (2.0 * h);
            hess[(i, i)] = (p - 2.0 * g0 + m) / (h * h);
            for j in (i + 1)..3 {
                let v = (f(rho + (axes[i] + axes[j]) * h) - f(rho + (axes[i] - axes[j]) * h)
                    - f(rho + (axes[j] - axes[i]) * h)
                    + f(rho - (axes[i] + axes[j]) * h))
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        (g0, grad, hess)
    }
}

#[inline]
fn faddeeva(z: Complex64) -> Complex64 {
    w_with_relerror(z, 0.0)
}

/// Vertical profile `v(|z|)` of one diffraction order and its first two
/// derivatives with respect to `|z|`.
fn spectral_profile(gamma: Complex64, az: f64, e: f64) -> (Complex64, Complex64, Complex64) {
    let p = -(gamma * gamma) / (4.0 * e * e) - az * az * e * e;
    let ep = p.exp();
    let z1 = gamma / (2.0 * e) + az * e;
    let t1 = ep * faddeeva(I * z1);
    let z2 = gamma / (2.0 * e) - az * e;
    let t2 = if z2.re < 0.0 {
        (-gamma * az).exp() * erfc_with_relerror(z2, 0.0)
    } else {
        ep * faddeeva(I * z2)
    };
    let v = t1 + t2;
    let dv = gamma * (t1 - t2);
    let d2v = gamma * gamma * v - gamma * ep * (4.0 * e / SQRT_PI);
    (v, dv, d2v)
}

/// One erfc-damped image `u(r)/(8πr)` with gradient and Hessian.
fn spatial_term(d: &Vec3, k: Complex64, e: f64) -> (Complex64, CVec3, CMat3) {
    let r = d.norm();
    let b = k / (2.0 * e);
    let eq = (b * b - c(r * r * e * e)).exp();
    let wp = faddeeva(Complex64::new(-b.re, r * e - b.im));
    let wm = faddeeva(Complex64::new(b.re, r * e + b.im));
    let u = eq * (wp + wm);
    let du = I * k * eq * (wp - wm) - eq * (4.0 * e / SQRT_PI);
    let d2u = -(k * k) * u + eq * (8.0 * e * e * e * r / SQRT_PI);
    let s = 1.0 / (8.0 * PI);
    let f = u * (s / r);
    let f1 = (du / r - u / (r * r)) * s;
    let f2 = (d2u / r - du * (2.0 / (r * r)) + u * (2.0 / (r * r * r))) * s;
    let n = d / r;
    let nn = n * n.transpose();
    let grad = n.map(c) * f1;
    let hess = nn.map(c) * f2 + (Matrix3::identity() - nn).map(c) * (f1 / r);
    (f, grad, hess)
}
