//! Reciprocal-space spectral density `J(k∥, ω)` of a periodic emitter array
//! and the zeroth-order plane-wave transmission of the metasurface.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{BlochResponse, Environment};
use crate::lattice::KSample;
use crate::linalg::{c, hermitian_eigenvalues, hermitize, CMat3, CMatrix, CVec3, CVector, Vec2, Vec3, I};
use crate::units::{wavenumber, DEBYE_E_NM, SPECTRAL_DENSITY_PREFACTOR};

/// A two-level emitter in the unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub position_nm: [f64; 3],
    pub dipole_debye: f64,
    /// Unit dipole orientation.
    pub orientation: [f64; 3],
    pub transition_ev: f64,
}

impl EmitterSpec {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position_nm)
    }

    pub fn orientation(&self) -> Vec3 {
        Vec3::from(self.orientation)
    }

    /// Dipole moment in e·nm.
    pub fn dipole_e_nm(&self) -> f64 {
        self.dipole_debye * DEBYE_E_NM
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.orientation().norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("emitter orientation must be a unit vector, |n| = {n}")));
        }
        if !(self.dipole_debye > 0.0) {
            return Err(Error::Config("emitter dipole moment must be positive".into()));
        }
        if !(self.transition_ev > 0.0) {
            return Err(Error::Config("emitter transition energy must be positive".into()));
        }
        Ok(())
    }
}

/// Hermitian `N_E × N_E` spectral density at one `(k∥, ω)`, in eV.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensitySample {
    pub k_par: Vec2,
    pub omega: f64,
    pub j: CMatrix,
}

impl SpectralDensitySample {
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.j)
    }

    /// Trace of `J`, the quantity used for peak finding.
    pub fn trace(&self) -> f64 {
        self.j.diagonal().iter().map(|z| z.re).sum()
    }
}

/// Total Green tensors between every pair of emitter positions, sharing the
/// scatterer projections.
fn green_matrix(resp: &BlochResponse<'_>, points: &[Vec3]) -> Result<Vec<Vec<CMat3>>> {
    let env = resp.environment();
    for p in points {
        env.check_outside(p)?;
    }
    let k2 = c(resp.k * resp.k);
    let scattering = !env.scatterers.is_empty();
    let (rows, cols) = if scattering {
        let rows = points
            .iter()
            .map(|p| resp.field_from_scatterers(p).map(|r| r * &resp.alpha_eff))
            .collect::<Result<Vec<_>>>()?;
        let cols = points
            .iter()
            .map(|p| resp.incident_from_dipole(p))
            .collect::<Result<Vec<_>>>()?;
        (rows, cols)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut out = Vec::with_capacity(points.len());
    for (a, pa) in points.iter().enumerate() {
        let mut row = Vec::with_capacity(points.len());
        for (b, pb) in points.iter().enumerate() {
            let mut g = resp.free_green(pa, pb)?;
            if scattering {
                let m = &rows[a] * &cols[b] / k2;
                g += CMat3::from_fn(|i, j| m[(i, j)]);
            }
            row.push(g);
        }
        out.push(row);
    }
    Ok(out)
}

/// `J` from a solved response; emitters must lie outside the scatterers.
pub fn spectral_density_from_response(
    resp: &BlochResponse<'_>,
    emitters: &[EmitterSpec],
) -> Result<SpectralDensitySample> {
    let n = emitters.len();
    let points: Vec<Vec3> = emitters.iter().map(|e| e.position()).collect();
    let greens = green_matrix(resp, &points)?;
    let pref = SPECTRAL_DENSITY_PREFACTOR * resp.omega * resp.omega;
    let mut j = CMatrix::zeros(n, n);
    for a in 0..n {
        let na = emitters[a].orientation().map(c);
        for b in 0..n {
            let nb = emitters[b].orientation().map(c);
            let ah = (greens[a][b] - greens[b][a].adjoint()) / Complex64::new(0.0, 2.0);
            let proj = (na.transpose() * ah * nb)[(0, 0)];
            let dr = points[a] - points[b];
            let phase = Complex64::from_polar(1.0, -resp.k_par.dot(&Vec2::new(dr.x, dr.y)));
            j[(a, b)] = proj * phase * (pref * emitters[a].dipole_e_nm() * emitters[b].dipole_e_nm());
        }
    }
    Ok(SpectralDensitySample {
        k_par: resp.k_par,
        omega: resp.omega,
        j: hermitize(&j),
    })
}

/// Reciprocal-space spectral density `J_{hh′}(k∥, ω)` in eV.
pub fn spectral_density(
    k_par: Vec2,
    omega: f64,
    emitters: &[EmitterSpec],
    env: &Environment,
) -> Result<SpectralDensitySample> {
    for e in emitters {
        e.validate()?;
    }
    let resp = env.response(k_par, omega)?;
    spectral_density_from_response(&resp, emitters)
}

/// One cell of a band scan. Failed cells keep their error instead of `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub k_index: usize,
    pub omega_index: usize,
    pub k_par: Vec2,
    pub arclength: f64,
    pub omega: f64,
    pub result: std::result::Result<CMatrix, Error>,
}

impl ScanCell {
    pub fn is_poisoned(&self) -> bool {
        self.result.is_err()
    }
}

/// Evaluate one `(k, ω)` cell, capturing failures.
pub fn evaluate_cell(
    k_index: usize,
    sample: &KSample,
    omega_index: usize,
    omega: f64,
    emitters: &[EmitterSpec],
    env: &Environment,
) -> ScanCell {
    let result = spectral_density(sample.k, omega, emitters, env).map(|s| s.j);
    ScanCell {
        k_index,
        omega_index,
        k_par: sample.k,
        arclength: sample.arclength,
        omega,
        result,
    }
}

/// Full rectangular table over path samples × frequencies, k-major order.
pub fn band_scan(
    path: &[KSample],
    omega_grid: &[f64],
    emitters: &[EmitterSpec],
    env: &Environment,
) -> Result<Vec<ScanCell>> {
    if path.is_empty() || omega_grid.is_empty() {
        return Err(Error::Config("band scan needs a non-empty path and frequency grid".into()));
    }
    for e in emitters {
        e.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..path.len())
        .flat_map(|ki| (0..omega_grid.len()).map(move |wi| (ki, wi)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(ki, wi)| evaluate_cell(ki, &path[ki], wi, omega_grid[wi], emitters, env))
        .collect())
}

/// Spectral samples concentrated around the strongest peak of `tr J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceWindow {
    pub center: f64,
    pub fwhm: f64,
    pub samples: Vec<(f64, CMatrix)>,
}

/// Locate the strongest peak of `tr J(k∥, ω)` in `[lo, hi]`, resolve its
/// half-maximum width by bisection and sample `n_points` frequencies over
/// `center ± half_width·fwhm`. Handles resonances far narrower than any
/// practical uniform grid.
pub fn resonance_samples(
    k_par: Vec2,
    emitters: &[EmitterSpec],
    env: &Environment,
    range: (f64, f64),
    n_points: usize,
    half_width: f64,
) -> Result<ResonanceWindow> {
    let (lo, hi) = range;
    if !(hi > lo) || n_points < 2 || !(half_width > 0.0) {
        return Err(Error::Config("resonance window needs lo < hi, ≥ 2 points and a positive width".into()));
    }
    let tr = |w: f64| spectral_density(k_par, w, emitters, env).map(|s| s.trace());
    let n_search = 401;
    let mut h = (hi - lo) / (n_search - 1) as f64;
    let mut center = lo;
    let mut peak = f64::NEG_INFINITY;
    for i in 0..n_search {
        let w = lo + h * i as f64;
        let v = tr(w)?;
        if v > peak {
            peak = v;
            center = w;
        }
    }
    // zoom until the grid resolves the peak, then two more passes
    let mut extra = 2;
    for _ in 0..60 {
        let mut best = (center, peak);
        let mut neighbours = [f64::INFINITY; 2];
        for i in -10i32..=10 {
            let w = center + h * i as f64 / 5.0;
            if w < lo || w > hi || i == 0 {
                continue;
            }
            let v = tr(w)?;
            if i == -5 {
                neighbours[0] = v;
            } else if i == 5 {
                neighbours[1] = v;
            }
            if v > best.1 {
                best = (w, v);
            }
        }
        center = best.0;
        peak = best.1;
        h /= 5.0;
        let resolved = neighbours.iter().all(|&v| v >= 0.8 * peak);
        if resolved {
            if extra == 0 {
                break;
            }
            extra -= 1;
        }
        if h < 1e-14 * center.abs() {
            break;
        }
    }
    let half = 0.5 * peak;
    let edge = |dir: f64| -> Result<f64> {
        let mut step = h.max(1e-12 * center.abs());
        let limit = if dir > 0.0 { hi - center } else { center - lo };
        while step < limit && tr(center + dir * step)? > half {
            step *= 2.0;
        }
        if step >= limit {
            return Ok(limit);
        }
        let (mut a, mut b) = (step / 2.0, step);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if tr(center + dir * m)? > half {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-6 * b {
                break;
            }
        }
        Ok(0.5 * (a + b))
    };
    let fwhm = edge(1.0)? + edge(-1.0)?;
    let span = half_width * fwhm;
    let samples = (0..n_points)
        .map(|i| {
            let w = center - span + 2.0 * span * i as f64 / (n_points - 1) as f64;
            spectral_density(k_par, w, emitters, env).map(|s| (w, s.j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResonanceWindow { center, fwhm, samples })
}

/// Zeroth-order transmission and reflection of a unit plane wave.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    /// Co-polarized transmission amplitude.
    pub t: Complex64,
    /// Reflection amplitude projected on the mirrored polarization.
    pub r: Complex64,
    /// Full transmitted field vector.
    pub t_vec: CVec3,
    /// Full reflected field vector.
    pub r_vec: CVec3,
}

impl Transmission {
    /// `|t|² + |r|²` summed over both outgoing polarizations.
    pub fn total_power(&self) -> f64 {
        self.t_vec.norm_squared() + self.r_vec.norm_squared()
    }
}

/// Unit polarization transverse to the incident wavevector: `s` (`in_plane
/// = true`, perpendicular to the plane of incidence) or `p`.
pub fn incident_polarization(k_par: Vec2, omega: f64, s_wave: bool) -> Result<CVec3> {
    let k = wavenumber(omega);
    let kp = k_par.norm();
    if kp >= k {
        return Err(Error::Domain("incidence is evanescent".into()));
    }
    let kz = (k * k - kp * kp).sqrt();
    let dir = if kp > 0.0 { k_par / kp } else { Vec2::new(1.0, 0.0) };
    let kvec = Vec3::new(k_par.x, k_par.y, kz) / k;
    let s = Vec3::new(-dir.y, dir.x, 0.0);
    let v = if s_wave { s } else { s.cross(&kvec) };
    Ok(v.normalize().map(c))
}

/// Plane-wave transmission through the array for incidence from `z < 0`.
pub fn plane_wave_transmission(
    omega: f64,
    k_par: Vec2,
    polarization: &CVec3,
    env: &Environment,
) -> Result<Transmission> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    let k = wavenumber(omega);
    let kp2 = k_par.norm_squared();
    if kp2 >= k * k {
        return Err(Error::Domain(format!(
            "evanescent incidence: |k∥| = {:.6e} ≥ k = {:.6e} nm⁻¹",
            kp2.sqrt(),
            k
        )));
    }
    let kz = (k * k - kp2).sqrt();
    let kvec = Vec3::new(k_par.x, k_par.y, kz);
    let khat = (kvec / k).map(c);
    if (khat.transpose() * polarization)[(0, 0)].norm() > 1e-9 * polarization.norm() {
        return Err(Error::Domain("polarization must be transverse to the incident wavevector".into()));
    }
    let pol = polarization / c(polarization.norm());
    let resp = env.response(k_par, omega)?;
    let ns = env.scatterers.len();
    let mut incident = CVector::zeros(6 * ns);
    let hpol = khat.cross(&pol);
    for (s, sc) in env.scatterers.iter().enumerate() {
        let ph = Complex64::from_polar(1.0, kvec.dot(&sc.position()));
        for a in 0..3 {
            incident[6 * s + a] = pol[a] * ph;
            incident[6 * s + 3 + a] = hpol[a] * ph;
        }
    }
    let dip = resp.induced_dipoles(&incident);
    let area = env.lattice.cell_area();
    let kr_vec = Vec3::new(k_par.x, k_par.y, -kz);
    let kr_hat = (kr_vec / k).map(c);
    let pref = I * (k * k) / (2.0 * area * kz);
    let mut t_vec = pol;
    let mut r_vec = CVec3::zeros();
    for (s, sc) in env.scatterers.iter().enumerate() {
        let p = CVec3::new(dip[6 * s], dip[6 * s + 1], dip[6 * s + 2]);
        let m = CVec3::new(dip[6 * s + 3], dip[6 * s + 4], dip[6 * s + 5]);
        let rs = sc.position();
        let radiated = |dir: &CVec3| -> CVec3 {
            let dd = dir * dir.transpose();
            (CMat3::identity() - dd) * p - dir.cross(&m)
        };
        t_vec += radiated(&khat) * (pref * Complex64::from_polar(1.0, -kvec.dot(&rs)));
        r_vec += radiated(&kr_hat) * (pref * Complex64::from_polar(1.0, -kr_vec.dot(&rs)));
    }
    let mirror = CVec3::new(pol.x, pol.y, -pol.z);
    Ok(Transmission {
        t: pol.dotc(&t_vec),
        r: mirror.dotc(&r_vec),
        t_vec,
        r_vec,
    })
}
