//! Driven linear dynamics of the emitter array coupled to the few-mode
//! metasurface: laser fields at the emitters, coherent steady states, local
//! fields and polariton dispersions.
//!
//! Driven quantities live in the frame rotating at `ω_L`; dispersions are in
//! the lab frame (`ω_L = 0`).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewmode::FewModeModel;
use crate::greens::Environment;
use crate::linalg::{c, complex_eigen, CMatrix, CVec3, CVector, Vec2, Vec3, I};
use crate::spectral::EmitterSpec;
use crate::units::wavenumber;

/// Plane-wave laser incident from `z < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub omega_l_ev: f64,
    /// In-plane wavevector, nm⁻¹.
    pub k_l: [f64; 2],
    /// Incident amplitude, V/nm.
    pub e_in_v_per_nm: f64,
    /// Unit polarization, transverse to the incident wavevector.
    pub polarization: [f64; 3],
}

impl DriveSpec {
    pub fn k_l(&self) -> Vec2 {
        Vec2::new(self.k_l[0], self.k_l[1])
    }

    /// Full incident wavevector `(k_L, k_z)`.
    pub fn wavevector(&self) -> Result<Vec3> {
        self.validate()?;
        let k = wavenumber(self.omega_l_ev);
        let kl = self.k_l();
        Ok(Vec3::new(kl.x, kl.y, (k * k - kl.norm_squared()).sqrt()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_l_ev > 0.0) {
            return Err(Error::Domain(format!("laser frequency must be positive, got {}", self.omega_l_ev)));
        }
        let k = wavenumber(self.omega_l_ev);
        let kl = self.k_l().norm();
        if kl >= k {
            return Err(Error::Domain(format!(
                "evanescent drive: |k_L| = {kl:.6e} nm⁻¹ exceeds ω_L/ħc = {k:.6e} nm⁻¹"
            )));
        }
        let p = Vec3::from(self.polarization);
        if (p.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("drive polarization must be a unit vector, |p| = {}", p.norm())));
        }
        let kz = (k * k - kl * kl).sqrt();
        let khat = Vec3::new(self.k_l[0], self.k_l[1], kz) / k;
        if p.dot(&khat).abs() > 1e-9 {
            return Err(Error::Config("drive polarization must be transverse to the incident wavevector".into()));
        }
        if !(self.e_in_v_per_nm >= 0.0) {
            return Err(Error::Config("drive amplitude must be non-negative".into()));
        }
        Ok(())
    }

    /// Bare Rabi scale `d·E_in` (eV) of an emitter.
    pub fn free_rabi(&self, emitter: &EmitterSpec) -> f64 {
        emitter.dipole_e_nm() * self.e_in_v_per_nm
    }
}

/// Laser field at each emitter with the Bloch phase `e^{−ik_L·r₀}` removed:
/// incident plane wave plus the field of the driven dipole lattice (V/nm).
pub fn driven_field_at_emitter(drive: &DriveSpec, emitters: &[EmitterSpec], env: &Environment) -> Result<Vec<CVec3>> {
    let kvec = drive.wavevector()?;
    for e in emitters {
        env.check_outside(&e.position())?;
    }
    let pol = Vec3::from(drive.polarization).map(c) * c(drive.e_in_v_per_nm);
    let k = kvec.norm();
    let hpol = (kvec / k).map(c).cross(&pol);
    let dipoles = if env.scatterers.is_empty() {
        None
    } else {
        let resp = env.response(drive.k_l(), drive.omega_l_ev)?;
        let mut incident = CVector::zeros(6 * env.scatterers.len());
        for (s, sc) in env.scatterers.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, kvec.dot(&sc.position()));
            for a in 0..3 {
                incident[6 * s + a] = pol[a] * ph;
                incident[6 * s + 3 + a] = hpol[a] * ph;
            }
        }
        let p = resp.induced_dipoles(&incident);
        Some((resp, p))
    };
    emitters
        .iter()
        .map(|e| {
            let r = e.position();
            let mut field = pol * Complex64::from_polar(1.0, kvec.dot(&r));
            if let Some((resp, p)) = &dipoles {
                let row = resp.field_from_scatterers(&r)?;
                let scattered = row * p;
                field += CVec3::new(scattered[0], scattered[1], scattered[2]);
            }
            let bloch = Complex64::from_polar(1.0, -drive.k_l().dot(&Vec2::new(r.x, r.y)));
            Ok(field * bloch)
        })
        .collect()
}

/// Rabi frequencies `Ω_h = d_h n_h·Ẽ_h` (eV).
pub fn rabi_frequencies(drive: &DriveSpec, emitters: &[EmitterSpec], env: &Environment) -> Result<CVector> {
    let fields = driven_field_at_emitter(drive, emitters, env)?;
    Ok(CVector::from_iterator(
        emitters.len(),
        emitters.iter().zip(&fields).map(|(e, f)| {
            let n = e.orientation().map(c);
            n.dot(f) * e.dipole_e_nm()
        }),
    ))
}

fn check_dimensions(model: &FewModeModel, emitters: &[EmitterSpec]) -> Result<()> {
    if model.n_emitters() != emitters.len() {
        return Err(Error::Config(format!(
            "model couples {} emitters but {} are configured",
            model.n_emitters(),
            emitters.len()
        )));
    }
    Ok(())
}

/// `[[h̃, g*], [gᵀ, ω_E − ω_L − iγ_nr/2]]` with `h̃ = ω − ω_L − iκ/2`.
pub fn effective_hamiltonian(
    model: &FewModeModel,
    emitters: &[EmitterSpec],
    omega_l: f64,
    gamma_nr: f64,
) -> Result<CMatrix> {
    check_dimensions(model, emitters)?;
    let nm = model.n_modes();
    let ne = emitters.len();
    let mut h = CMatrix::zeros(nm + ne, nm + ne);
    let ht = model.h_tilde();
    h.view_mut((0, 0), (nm, nm)).copy_from(&ht);
    for i in 0..nm {
        h[(i, i)] -= c(omega_l);
        for e in 0..ne {
            h[(i, nm + e)] = model.g[(i, e)].conj();
            h[(nm + e, i)] = model.g[(i, e)];
        }
    }
    for (e, em) in emitters.iter().enumerate() {
        h[(nm + e, nm + e)] = c(em.transition_ev - omega_l) - I * (0.5 * gamma_nr);
    }
    Ok(h)
}

/// Coherent amplitudes of the driven linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentState {
    /// Mode amplitudes `a_i`.
    pub modes: CVector,
    /// Emitter amplitudes `b_h`.
    pub emitters: CVector,
    /// Field seen by each emitter, `Ω_h + Σ_i g_ih a_i` (eV).
    pub e_loc: CVector,
    /// Frobenius condition number of `H_eff`.
    pub condition: f64,
}

/// Condition number beyond which `H_eff` counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

/// Solve `H_eff·𝒜 = −Ω` where `Ω` drives the emitter components only.
pub fn solve_linear(h_eff: &CMatrix, n_modes: usize, rabi: &CVector) -> Result<(CVector, f64)> {
    let n = h_eff.nrows();
    if n != n_modes + rabi.len() {
        return Err(Error::Config("drive vector does not match the Hamiltonian".into()));
    }
    let mut rhs = CVector::zeros(n);
    for (e, w) in rabi.iter().enumerate() {
        rhs[n_modes + e] = -w;
    }
    let inv = h_eff
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("effective Hamiltonian is not invertible".into()))?;
    let cond = h_eff.norm() * inv.norm();
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::Singular(format!(
            "effective Hamiltonian is singular (condition {cond:.3e}); add γ_nr > 0 or detune the drive"
        )));
    }
    let mut x = &inv * &rhs;
    // one step of iterative refinement
    let r = &rhs - h_eff * &x;
    x += &inv * r;
    Ok((x, cond))
}

pub fn coherent_steady_state(
    model: &FewModeModel,
    emitters: &[EmitterSpec],
    omega_l: f64,
    rabi: &CVector,
    gamma_nr: f64,
) -> Result<CoherentState> {
    let h = effective_hamiltonian(model, emitters, omega_l, gamma_nr)?;
    let nm = model.n_modes();
    let (x, condition) = solve_linear(&h, nm, rabi)?;
    let modes = x.rows(0, nm).into_owned();
    let amps = x.rows(nm, emitters.len()).into_owned();
    let e_loc = rabi + model.g.transpose() * &modes;
    Ok(CoherentState {
        modes,
        emitters: amps,
        e_loc,
        condition,
    })
}

/// One `(k_L, ω_L)` cell of a local-field map.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFieldCell {
    pub k_index: usize,
    pub omega_index: usize,
    pub omega_l: f64,
    /// `|E_loc,h| / |Ω_free,h|` per emitter.
    pub result: std::result::Result<Vec<f64>, Error>,
}

/// `|E_loc|/|Ω_free|` over models along a path × laser frequencies. `rabi`
/// supplies the structure-enhanced drive at `(k_index, ω_L)`; `free_rabi`
/// holds `d_h E_in` per emitter.
pub fn local_field_map<F>(
    models: &[std::result::Result<FewModeModel, Error>],
    emitters: &[EmitterSpec],
    omega_grid: &[f64],
    rabi: F,
    free_rabi: &[f64],
    gamma_nr: f64,
) -> Vec<LocalFieldCell>
where
    F: Fn(usize, f64) -> Result<CVector> + Sync,
{
    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|k| (0..omega_grid.len()).map(move |w| (k, w)))
        .collect();
    cells
        .par_iter()
        .map(|&(ki, wi)| {
            let omega_l = omega_grid[wi];
            let result = (|| {
                let model = models[ki].as_ref().map_err(Clone::clone)?;
                let drive = rabi(ki, omega_l)?;
                let state = coherent_steady_state(model, emitters, omega_l, &drive, gamma_nr)?;
                Ok(state
                    .e_loc
                    .iter()
                    .zip(free_rabi)
                    .map(|(e, f)| e.norm() / f.abs())
                    .collect())
            })();
            LocalFieldCell {
                k_index: ki,
                omega_index: wi,
                omega_l,
                result,
            }
        })
        .collect()
}

/// Lab-frame polariton branches at one momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct PolaritonBranches {
    pub k_par: Vec2,
    /// Branch eigenvalues; `Re` is the energy, `−2 Im` the linewidth.
    pub eigenvalues: Vec<Complex64>,
    /// Photonic weight `Σ_i |v_i|² / |v|²` of each branch.
    pub photon_fraction: Vec<f64>,
    eigenvectors: Vec<CVector>,
}

impl PolaritonBranches {
    pub fn energies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.re).collect()
    }

    pub fn linewidths(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| -2.0 * l.im).collect()
    }
}

fn branches_at(model: &FewModeModel, emitters: &[EmitterSpec], gamma_nr: f64) -> Result<PolaritonBranches> {
    let h = effective_hamiltonian(model, emitters, 0.0, gamma_nr)?;
    let nm = model.n_modes();
    let mut eig = complex_eigen(&h);
    eig.sort_by(|a, b| a.0.re.partial_cmp(&b.0.re).unwrap());
    let photon_fraction = eig
        .iter()
        .map(|(_, v)| v.rows(0, nm).norm_squared() / v.norm_squared())
        .collect();
    Ok(PolaritonBranches {
        k_par: model.k_par,
        eigenvalues: eig.iter().map(|e| e.0).collect(),
        photon_fraction,
        eigenvectors: eig.into_iter().map(|e| e.1).collect(),
    })
}

/// Reorder `next` so that branch `m` has the largest eigenvector overlap with
/// branch `m` of `prev`; ties go to the smaller energy jump.
fn connect(prev: &PolaritonBranches, next: PolaritonBranches) -> PolaritonBranches {
    let n = prev.eigenvalues.len();
    if next.eigenvalues.len() != n {
        return next;
    }
    let mut pairs: Vec<(f64, f64, usize, usize)> = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let ov = prev.eigenvectors[a].dotc(&next.eigenvectors[b]).norm();
            let jump = (prev.eigenvalues[a] - next.eigenvalues[b]).norm();
            pairs.push((ov, jump, a, b));
        }
    }
    pairs.sort_by(|x, y| {
        let ov = y.0 - x.0;
        if ov.abs() > 1e-9 {
            ov.partial_cmp(&0.0).unwrap()
        } else {
            x.1.partial_cmp(&y.1).unwrap()
        }
    });
    let mut assign = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, _, a, b) in pairs {
        if assign[a] == usize::MAX && !used[b] {
            assign[a] = b;
            used[b] = true;
        }
    }
    PolaritonBranches {
        k_par: next.k_par,
        eigenvalues: assign.iter().map(|&b| next.eigenvalues[b]).collect(),
        photon_fraction: assign.iter().map(|&b| next.photon_fraction[b]).collect(),
        eigenvectors: assign.iter().map(|&b| next.eigenvectors[b].clone()).collect(),
    }
}

/// Branches of `H_eff(ω_L = 0)` along a path, sorted by energy at the first
/// point and connected by eigenvector overlap thereafter.
pub fn polariton_dispersion(
    models: &[FewModeModel],
    emitters: &[EmitterSpec],
    gamma_nr: f64,
) -> Result<Vec<PolaritonBranches>> {
    let mut out: Vec<PolaritonBranches> = Vec::with_capacity(models.len());
    for m in models {
        let b = branches_at(m, emitters, gamma_nr)?;
        let b = match out.last() {
            Some(prev) => connect(prev, b),
            None => b,
        };
        out.push(b);
    }
    Ok(out)
}
