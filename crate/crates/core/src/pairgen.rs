//! Entangled photon-pair generation from the emitters' saturation
//! nonlinearity.
//!
//! A laser at `(k_L, ω_L)` displaces the modes and emitters coherently. The
//! Holstein–Primakoff resummation `σ ≈ (1 − b†b)b` then couples fluctuations
//! at `k∥` and `k̄∥ = 2k_L − k∥` through squeezing vertices; the two-photon
//! rate follows from the Lindblad steady state in a truncated Fock space.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{coherent_steady_state, CoherentState};
use crate::error::{Error, Result};
use crate::fewmode::FewModeModel;
use crate::linalg::{c, hermitize, CMatrix, CVector, Vec2, I};
use crate::spectral::EmitterSpec;
use crate::units;

/// Number states of `n_modes` bosons with at most `max_total` quanta in all.
#[derive(Debug, Clone)]
pub struct FockSpace {
    n_modes: usize,
    max_total: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl FockSpace {
    pub fn new(n_modes: usize, max_total: usize) -> Self {
        let mut states = Vec::new();
        let mut cur = vec![0u8; n_modes];
        fill(&mut states, &mut cur, 0, max_total);
        // vacuum first, then by total excitation number
        states.sort_by_key(|s| s.iter().map(|&n| n as usize).sum::<usize>());
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        FockSpace {
            n_modes,
            max_total,
            states,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    /// Apply a product of ladder operators, rightmost first. `(mode, true)` is
    /// a creator. Returns the target index and amplitude, or `None` when the
    /// result vanishes or leaves the truncated space.
    pub fn apply(&self, ops: &[(usize, bool)], from: usize) -> Option<(usize, f64)> {
        let mut s = self.states[from].clone();
        let mut amp = 1.0;
        for &(m, create) in ops.iter().rev() {
            if create {
                s[m] += 1;
                amp *= (s[m] as f64).sqrt();
            } else {
                if s[m] == 0 {
                    return None;
                }
                amp *= (s[m] as f64).sqrt();
                s[m] -= 1;
            }
        }
        self.index.get(&s).map(|&i| (i, amp))
    }

    /// Matrix of a ladder-operator product in this space.
    pub fn operator(&self, ops: &[(usize, bool)]) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for s in 0..self.dim() {
            if let Some((t, a)) = self.apply(ops, s) {
                m[(t, s)] += c(a);
            }
        }
        m
    }
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, mode: usize, left: usize) {
    if mode == cur.len() {
        out.push(cur.clone());
        return;
    }
    for n in 0..=left {
        cur[mode] = n as u8;
        fill(out, cur, mode + 1, left - n);
    }
    cur[mode] = 0;
}

/// Bosonic system with a Hamiltonian at most quadratic in the ladder
/// operators,
///
/// `H = Σ_ij hop_ij c†_i c_j + Σ_ij (pair_ij c†_i c†_j + h.c.) + Σ_i (drive_i c†_i + h.c.)`,
///
/// and independent losses `decay_i 𝒟[c_i]`.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    /// Hermitian.
    pub hop: CMatrix,
    pub pair: CMatrix,
    pub drive: CVector,
    pub decay: Vec<f64>,
}

impl QuadraticSystem {
    pub fn new(n: usize) -> Self {
        QuadraticSystem {
            hop: CMatrix::zeros(n, n),
            pair: CMatrix::zeros(n, n),
            drive: CVector::zeros(n),
            decay: vec![0.0; n],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.decay.len()
    }

    pub fn hamiltonian(&self, space: &FockSpace) -> CMatrix {
        let n = self.n_modes();
        let d = space.dim();
        let mut h = CMatrix::zeros(d, d);
        let mut add = |ops: &[(usize, bool)], coef: Complex64| {
            if coef == c(0.0) {
                return;
            }
            for s in 0..d {
                if let Some((t, a)) = space.apply(ops, s) {
                    h[(t, s)] += coef * a;
                }
            }
        };
        for i in 0..n {
            for j in 0..n {
                add(&[(i, true), (j, false)], self.hop[(i, j)]);
                add(&[(i, true), (j, true)], self.pair[(i, j)]);
                add(&[(j, false), (i, false)], self.pair[(i, j)].conj());
            }
            add(&[(i, true)], self.drive[i]);
            add(&[(i, false)], self.drive[i].conj());
        }
        h
    }

    /// Lindblad superoperator acting on row-major `vec(ρ)`.
    pub fn liouvillian(&self, space: &FockSpace) -> CMatrix {
        let d = space.dim();
        let id = CMatrix::identity(d, d);
        let h = self.hamiltonian(space);
        let mut l = (h.kronecker(&id) - id.kronecker(&h.transpose())) * (-I);
        for (m, &rate) in self.decay.iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            let a = space.operator(&[(m, false)]);
            let n = a.adjoint() * &a;
            l += (a.kronecker(&a.conjugate()) - (n.kronecker(&id) + id.kronecker(&n.transpose())) * c(0.5)) * c(rate);
        }
        l
    }
}

/// Largest Hilbert-space dimension accepted by the dense Liouvillian solver.
pub const DEFAULT_MAX_DIMENSION: usize = 48;

/// Steady-state density matrix in a truncated Fock space.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub space: FockSpace,
    pub rho: CMatrix,
    /// `Σ |L[ρ]|` over all entries.
    pub residual: f64,
}

impl SteadyState {
    /// `tr(ρ O)` for a ladder-operator product.
    pub fn expect(&self, ops: &[(usize, bool)]) -> Complex64 {
        let mut sum = c(0.0);
        for t in 0..self.space.dim() {
            if let Some((s, a)) = self.space.apply(ops, t) {
                sum += self.rho[(t, s)] * a;
            }
        }
        sum
    }

    pub fn mean(&self, mode: usize) -> Complex64 {
        self.expect(&[(mode, false)])
    }

    pub fn population(&self, mode: usize) -> f64 {
        self.expect(&[(mode, true), (mode, false)]).re
    }
}

/// Null space of the Liouvillian with unit trace.
pub fn steady_state(system: &QuadraticSystem, max_total: usize, max_dimension: usize) -> Result<SteadyState> {
    let space = FockSpace::new(system.n_modes(), max_total);
    let d = space.dim();
    if d > max_dimension {
        return Err(Error::Config(format!(
            "truncated Fock space has dimension {d}, above the limit {max_dimension}"
        )));
    }
    let l = system.liouvillian(&space);
    // replace the ρ_00 equation by tr ρ = 1
    let mut a = l.clone();
    a.row_mut(0).fill(c(0.0));
    for i in 0..d {
        a[(0, i * d + i)] = c(1.0);
    }
    let mut rhs = CVector::zeros(d * d);
    rhs[0] = c(1.0);
    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = u.diagonal().iter().map(|x| x.norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-13 * max) {
        return Err(Error::Degenerate(
            "Liouvillian null space is not one-dimensional; set a nonradiative emitter rate γ_nr > 0".into(),
        ));
    }
    let mut x = lu.solve(&rhs).ok_or_else(|| Error::Degenerate("Liouvillian solve failed".into()))?;
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let rho = hermitize(&DMatrix::from_row_slice(d, d, x.as_slice()));
    let flat = CVector::from_column_slice(rho.transpose().as_slice());
    let residual = (&l * flat).iter().map(|z| z.norm()).sum::<f64>();
    let scale = l.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Degenerate(format!("steady-state residual {residual:.3e} too large")));
    }
    Ok(SteadyState { space, rho, residual })
}

/// Coefficients of the nonlinear fluctuation Hamiltonian at one `(k∥, k̄∥)`
/// pair, each multiplying the operator product named in the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertices {
    /// `a†_{k,i} b†_{k̄,h}`, `N_M(k) × N_E`.
    pub photon_pair_k: CMatrix,
    /// `a†_{k̄,i} b†_{k,h}`, `N_M(k̄) × N_E`.
    pub photon_pair_bar: CMatrix,
    /// `b†_{k,h} b†_{k̄,h}`.
    pub emitter_pair: CVector,
    /// `a†_{k,i} b_{k,h}`.
    pub exchange_k: CMatrix,
    /// `a†_{k̄,i} b_{k̄,h}`.
    pub exchange_bar: CMatrix,
    /// Real shift of `b†_{q,h} b_{q,h}` for both `q`.
    pub emitter_shift: Vec<f64>,
}

/// Expand `σ ≈ (1 − b†b)b` around the coherent amplitudes `δ_h = b_{k_L,h}`
/// and keep terms quadratic in the fluctuations at `k∥` and `k̄∥`.
///
/// `σ_k ⊃ −2|δ|² b_k − δ² b†_{k̄}` and
/// `σ_{k_L} ⊃ −δ* Σ_k b_k b_{k̄} − 2δ Σ_k b†_k b_k`; inserting these into
/// `g σ† a + E σ† + h.c.` gives the squeezing terms `−g* δ² a†_k b†_{k̄}`,
/// `−2 E_loc δ b†_k b†_{k̄}` and the exchange terms `−2 g* |δ|² a†_k b_k`,
/// `−4 Re(E_loc δ*) b†b`.
pub fn holstein_primakoff_vertices(g_k: &CMatrix, g_bar: &CMatrix, coherent: &CoherentState) -> Vertices {
    let ne = coherent.emitters.len();
    let d = &coherent.emitters;
    let e = &coherent.e_loc;
    let pair = |g: &CMatrix| CMatrix::from_fn(g.nrows(), ne, |i, h| -g[(i, h)].conj() * d[h] * d[h]);
    let exchange = |g: &CMatrix| CMatrix::from_fn(g.nrows(), ne, |i, h| -2.0 * g[(i, h)].conj() * d[h].norm_sqr());
    Vertices {
        photon_pair_k: pair(g_k),
        photon_pair_bar: pair(g_bar),
        emitter_pair: CVector::from_fn(ne, |h, _| -2.0 * e[h] * d[h]),
        exchange_k: exchange(g_k),
        exchange_bar: exchange(g_bar),
        emitter_shift: (0..ne).map(|h| -4.0 * (e[h] * d[h].conj()).re).collect(),
    }
}

/// Options shared by every cell of a pair computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairOptions {
    /// Maximum total number of excitations.
    pub truncation: usize,
    pub include_beam_splitter: bool,
    /// Nonradiative emitter decay rate, eV.
    pub gamma_nr: f64,
    pub max_dimension: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            truncation: 2,
            include_beam_splitter: true,
            gamma_nr: 0.0,
            max_dimension: DEFAULT_MAX_DIMENSION,
        }
    }
}

/// Fluctuation modes at `k∥` and `k̄∥` under the laser displacement.
#[derive(Debug, Clone)]
pub struct PairProblem {
    pub k_par: Vec2,
    pub k_bar: Vec2,
    pub model_k: FewModeModel,
    pub model_bar: FewModeModel,
    pub transition_ev: Vec<f64>,
    pub coherent: CoherentState,
    pub omega_l: f64,
    pub options: PairOptions,
}

impl PairProblem {
    pub fn new(
        k_l: Vec2,
        model_k: FewModeModel,
        model_bar: FewModeModel,
        emitters: &[EmitterSpec],
        coherent: CoherentState,
        omega_l: f64,
        options: PairOptions,
    ) -> Result<Self> {
        if options.truncation < 2 {
            return Err(Error::Config("pair truncation must allow at least two excitations".into()));
        }
        let ne = emitters.len();
        if model_k.n_emitters() != ne || model_bar.n_emitters() != ne || coherent.emitters.len() != ne {
            return Err(Error::Config("models, emitters and coherent state disagree on N_E".into()));
        }
        let k_par = model_k.k_par;
        let k_bar = 2.0 * k_l - k_par;
        let tol = 1e-9 * (k_bar.norm() + k_l.norm()).max(1e-12);
        if (model_bar.k_par - k_bar).norm() > tol {
            return Err(Error::Config(format!(
                "partner model sits at {:?}, expected 2k_L − k∥ = {:?}",
                model_bar.k_par, k_bar
            )));
        }
        Ok(PairProblem {
            k_par,
            k_bar,
            model_k,
            model_bar,
            transition_ev: emitters.iter().map(|e| e.transition_ev).collect(),
            coherent,
            omega_l,
            options,
        })
    }

    pub fn vertices(&self) -> Vertices {
        holstein_primakoff_vertices(&self.model_k.g, &self.model_bar.g, &self.coherent)
    }

    /// Mode order: `a_k`, `a_k̄`, `b_k`, `b_k̄`.
    fn layout(&self) -> (usize, usize, usize) {
        (self.model_k.n_modes(), self.model_bar.n_modes(), self.transition_ev.len())
    }

    pub fn system(&self) -> QuadraticSystem {
        let (n1, n2, ne) = self.layout();
        let (b1, b2) = (n1 + n2, n1 + n2 + ne);
        let mut s = QuadraticSystem::new(n1 + n2 + 2 * ne);
        for (model, a0, b0) in [(&self.model_k, 0, b1), (&self.model_bar, n1, b2)] {
            let n = model.n_modes();
            for i in 0..n {
                for j in 0..n {
                    s.hop[(a0 + i, a0 + j)] = c(model.omega[(i, j)]);
                }
                s.hop[(a0 + i, a0 + i)] -= c(self.omega_l);
                s.decay[a0 + i] = model.kappa[i];
                for h in 0..ne {
                    s.hop[(b0 + h, a0 + i)] = model.g[(i, h)];
                    s.hop[(a0 + i, b0 + h)] = model.g[(i, h)].conj();
                }
            }
            for h in 0..ne {
                s.hop[(b0 + h, b0 + h)] = c(self.transition_ev[h] - self.omega_l);
                s.decay[b0 + h] = self.options.gamma_nr;
            }
        }
        let v = self.vertices();
        for h in 0..ne {
            for i in 0..n1 {
                s.pair[(i, b2 + h)] = v.photon_pair_k[(i, h)];
            }
            for i in 0..n2 {
                s.pair[(n1 + i, b1 + h)] = v.photon_pair_bar[(i, h)];
            }
            s.pair[(b1 + h, b2 + h)] = v.emitter_pair[h];
        }
        if self.options.include_beam_splitter {
            for (x, a0, b0) in [(&v.exchange_k, 0, b1), (&v.exchange_bar, n1, b2)] {
                for i in 0..x.nrows() {
                    for h in 0..ne {
                        s.hop[(a0 + i, b0 + h)] += x[(i, h)];
                        s.hop[(b0 + h, a0 + i)] += x[(i, h)].conj();
                    }
                }
            }
            for h in 0..ne {
                s.hop[(b1 + h, b1 + h)] += c(v.emitter_shift[h]);
                s.hop[(b2 + h, b2 + h)] += c(v.emitter_shift[h]);
            }
        }
        s
    }

    pub fn steady_state(&self) -> Result<SteadyState> {
        steady_state(&self.system(), self.options.truncation, self.options.max_dimension)
    }
}

/// Two-photon emission rates at one `(ω_L, k∥)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRates {
    /// Total rate γ, eV.
    pub gamma: f64,
    /// `(κ_i + κ̄_j)⟨a†_i ā†_j a_i ā_j⟩` per mode pair, eV.
    pub gamma_pairs: Vec<Vec<f64>>,
    /// Momentum-space volume `V_d`, nm⁻².
    pub v_d: f64,
    /// `Γ = V_d γ/(4π²)`, pairs per s per cm².
    pub gamma_density_cm2_s: f64,
    /// `Γ/Φ_in²` in cm²·fs.
    pub gamma_over_flux2_cm2_fs: f64,
    /// `Γ/Φ_in` at the configured field.
    pub gamma_over_flux: f64,
}

/// γ from a solved steady state, then Γ and flux diagnostics for the
/// incident field `e_in` (V/nm).
pub fn two_photon_rate(problem: &PairProblem, v_d: f64, e_in_v_per_nm: f64) -> Result<PairRates> {
    let ss = problem.steady_state()?;
    let (n1, n2, _) = problem.layout();
    let mut gamma_pairs = vec![vec![0.0; n2]; n1];
    let mut gamma = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let corr = ss.expect(&[(i, true), (n1 + j, true), (i, false), (n1 + j, false)]).re;
            let r = (problem.model_k.kappa[i] + problem.model_bar.kappa[j]) * corr;
            gamma_pairs[i][j] = r;
            gamma += r;
        }
    }
    let gamma_density_cm2_s = units::rate_per_second(gamma) * v_d / (4.0 * PI * PI) * 1e14;
    let flux = units::photon_flux_per_cm2_s(e_in_v_per_nm, problem.omega_l);
    Ok(PairRates {
        gamma,
        gamma_pairs,
        v_d,
        gamma_density_cm2_s,
        gamma_over_flux2_cm2_fs: gamma_density_cm2_s / (flux * flux) * 1e15,
        gamma_over_flux: gamma_density_cm2_s / flux,
    })
}

/// One `(ω_L, k∥)` cell of a pair-rate map.
#[derive(Debug, Clone)]
pub struct PairCell {
    pub omega_index: usize,
    pub k_index: usize,
    pub omega_l: f64,
    pub k_par: Vec2,
    /// `k∥ = k_L`, excluded from the map.
    pub masked: bool,
    pub result: std::result::Result<PairRates, Error>,
}

impl PairCell {
    pub fn is_poisoned(&self) -> bool {
        !self.masked && self.result.is_err()
    }
}

/// Index of the grid point matching `target`, if any.
fn find_k(grid: &[Vec2], target: Vec2) -> Option<usize> {
    let spacing = grid
        .windows(2)
        .map(|w| (w[1] - w[0]).norm())
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let tol = if spacing.is_finite() { 1e-6 * spacing } else { 1e-12 };
    grid.iter().position(|k| (k - target).norm() <= tol)
}

/// Inputs of a pair-rate map: models at every grid momentum and at `k_L`.
pub struct PairScan<'a> {
    pub k_l: Vec2,
    pub k_grid: &'a [Vec2],
    pub models: &'a [std::result::Result<FewModeModel, Error>],
    pub model_kl: &'a FewModeModel,
    pub emitters: &'a [EmitterSpec],
    pub options: PairOptions,
    pub v_d: f64,
    pub e_in_v_per_nm: f64,
}

/// Rate map over `omega_grid × k_grid`, ω-major. `rabi(ω_L)` gives the
/// structure-enhanced drive of the emitters at `k_L`.
pub fn pair_scan<F>(scan: &PairScan, omega_grid: &[f64], rabi: F) -> Vec<PairCell>
where
    F: Fn(f64) -> Result<CVector> + Sync,
{
    let coherent: Vec<Result<CoherentState>> = omega_grid
        .par_iter()
        .map(|&w| {
            let drive = rabi(w)?;
            coherent_steady_state(scan.model_kl, scan.emitters, w, &drive, scan.options.gamma_nr)
        })
        .collect();
    let nk = scan.k_grid.len();
    let kl_index = find_k(scan.k_grid, scan.k_l);
    (0..omega_grid.len() * nk)
        .into_par_iter()
        .map(|cell| {
            let (wi, ki) = (cell / nk, cell % nk);
            let k_par = scan.k_grid[ki];
            let masked = kl_index == Some(ki);
            let result = if masked {
                Err(Error::Domain("k∥ = k_L coincides with the coherent drive".into()))
            } else {
                (|| {
                    let state = coherent[wi].as_ref().map_err(Clone::clone)?;
                    let model = scan.models[ki].as_ref().map_err(Clone::clone)?;
                    let bar = find_k(scan.k_grid, 2.0 * scan.k_l - k_par)
                        .ok_or_else(|| Error::Config("2k_L − k∥ is not on the momentum grid".into()))?;
                    let model_bar = scan.models[bar].as_ref().map_err(Clone::clone)?;
                    let problem = PairProblem::new(
                        scan.k_l,
                        model.clone(),
                        model_bar.clone(),
                        scan.emitters,
                        state.clone(),
                        omega_grid[wi],
                        scan.options.clone(),
                    )?;
                    two_photon_rate(&problem, scan.v_d, scan.e_in_v_per_nm)
                })()
            };
            PairCell {
                omega_index: wi,
                k_index: ki,
                omega_l: omega_grid[wi],
                k_par,
                masked,
                result,
            }
        })
        .collect()
}

/// Half sums `(ω_m(k∥) + ω_n(k̄∥))/2` of branch energies; a pair is energy
/// matched where one of them equals `ω_L`.
pub fn pair_resonances(branches_k: &[f64], branches_bar: &[f64]) -> Vec<f64> {
    branches_k
        .iter()
        .flat_map(|a| branches_bar.iter().map(move |b| 0.5 * (a + b)))
        .collect()
}
