//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use num_complex::Complex64;

pub type C = Complex64;
pub type M3 = Matrix3<C>;
pub type V3 = Vector3<C>;

pub const HBAR_C: f64 = 197.3269804;

pub fn rel(a: &M3, b: &M3) -> f64 {
    (a - b).norm() / b.norm()
}

/// Free dyadic Green tensor written out component by component.
pub fn dyadic_g0(d: &Vector3<f64>, k: C) -> M3 {
    let r = d.norm();
    let g = (C::i() * k * r).exp() / (4.0 * PI * r);
    let x = C::i() * k * r;
    // G = g/(k²r²) [ (k²r² + ikr − 1) δ_ij + (3 − 3ikr − k²r²) n_i n_j ]
    let kr2 = (k * r) * (k * r);
    let a = (kr2 + x - 1.0) / kr2;
    let b = (C::new(3.0, 0.0) - 3.0 * x - kr2) / kr2;
    let mut out = M3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            out[(i, j)] = g * (a * delta + b * d[i] * d[j] / (r * r));
        }
    }
    out
}

/// ∇ e^{ikr}/(4πr).
pub fn grad_g0(d: &Vector3<f64>, k: C) -> V3 {
    let r = d.norm();
    let g = (C::i() * k * r).exp() / (4.0 * PI * r);
    let f = g * (C::i() * k - 1.0 / r) / r;
    V3::new(f * d.x, f * d.y, f * d.z)
}

/// Damping that pushes the truncation tail of a radius-`r_max` direct sum
/// below e^{-25}.
pub fn oracle_damping(k_re: f64, r_max: f64) -> f64 {
    (25.0 / (k_re * r_max)).max(1e-3)
}

/// Brute-force `Σ_R e^{ik∥·R} (G₀, ∇g)(ρ − R)` over `|R| ≤ r_max`.
pub fn direct_bloch_sum(
    a1: Vector2<f64>,
    a2: Vector2<f64>,
    k_par: Vector2<f64>,
    rho: Vector3<f64>,
    k: C,
    r_max: f64,
    skip_origin: bool,
) -> (M3, V3) {
    let n1 = (r_max / a1.norm()).ceil() as i64 * 2 + 2;
    let n2 = (r_max / a2.norm()).ceil() as i64 * 2 + 2;
    let mut green = M3::zeros();
    let mut grad = V3::zeros();
    for i in -n1..=n1 {
        for j in -n2..=n2 {
            let r = a1 * i as f64 + a2 * j as f64;
            if r.norm() > r_max {
                continue;
            }
            if skip_origin && i == 0 && j == 0 {
                continue;
            }
            let d = Vector3::new(rho.x - r.x, rho.y - r.y, rho.z);
            let ph = C::from_polar(1.0, k_par.dot(&r));
            green += dyadic_g0(&d, k) * ph;
            grad += grad_g0(&d, k) * ph;
        }
    }
    (green, grad)
}

/// Gauss–Legendre nodes and weights on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w));
    }
    out
}

/// Brillouin-zone average `(1/V_B) ∫ f(q) d²q` of a function that vanishes
/// outside the light disk `|q| < k` and carries a `1/k_z` edge singularity,
/// with `q = k sin θ (cos φ, sin φ)` so the integrand is smooth.
pub fn light_disk_average<F: FnMut(Vector2<f64>) -> f64>(k: f64, cell_area: f64, n: usize, mut f: F) -> f64 {
    let thetas = gauss_legendre(n, 0.0, PI / 2.0);
    let phis = gauss_legendre(2 * n, 0.0, 2.0 * PI);
    let mut acc = 0.0;
    for &(t, wt) in &thetas {
        for &(p, wp) in &phis {
            let q = Vector2::new(p.cos(), p.sin()) * (k * t.sin());
            acc += wt * wp * f(q) * k * k * t.sin() * t.cos();
        }
    }
    acc * cell_area / (4.0 * PI * PI)
}

pub mod scenes {
    use metaqed_core::greens::{Environment, EwaldParams, ScattererSpec};
    use metaqed_core::lattice::LatticeSpec;
    use metaqed_core::material::MaterialModel;
    use metaqed_core::spectral::EmitterSpec;

    /// Silver spheres, a = 600 nm, R = 50 nm; emitter 10 nm above the sphere.
    pub fn silver_array() -> (Environment, EmitterSpec) {
        let env = Environment::new(
            LatticeSpec::square(600.0),
            vec![ScattererSpec {
                position_nm: [0.0, 0.0, 0.0],
                radius_nm: 50.0,
                material: MaterialModel::silver(),
            }],
            EwaldParams::default(),
        )
        .unwrap();
        let e = EmitterSpec {
            position_nm: [0.0, 0.0, 60.0],
            dipole_debye: 10.0,
            orientation: [0.0, 0.0, 1.0],
            transition_ev: 2.0,
        };
        (env, e)
    }

    /// Silicon spheres, a = 400 nm, R = 100 nm, n = 3.5; emitter beside the sphere.
    pub fn silicon_array() -> (Environment, EmitterSpec) {
        let env = Environment::new(
            LatticeSpec::square(400.0),
            vec![ScattererSpec {
                position_nm: [0.0, 0.0, 0.0],
                radius_nm: 100.0,
                material: MaterialModel::silicon(),
            }],
            EwaldParams::default(),
        )
        .unwrap();
        let e = EmitterSpec {
            position_nm: [0.0, 105.0, 0.0],
            dipole_debye: 10.0,
            orientation: [1.0, 0.0, 0.0],
            transition_ev: 1.749,
        };
        (env, e)
    }
}

/// Indices of interior local maxima of `v`.
pub fn local_maxima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1)).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).collect()
}
