//! Few-mode representation of the metasurface: coupled lossy bosonic modes
//! whose model spectral density reproduces `J(k∥, ω)`.

mod fit;

pub use fit::{
    fit_along_path, fit_few_mode, select_mode_count, FitOptions, FitReport, ModeCount, PathFit, PathSamples,
};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{anti_hermitian_part, c, complex_eigenvalues, hermitize, CMatrix, Vec2, I};

/// Lower bound on mode decay rates (eV); keeps `H̃` strictly decaying at a
/// bound state in the continuum.
pub const KAPPA_FLOOR: f64 = 1e-9;

/// Mode frequencies and couplings `ω_ij`, decay rates `κ_i` and light–matter
/// couplings `g_ih` at one in-plane momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct FewModeModel {
    pub k_par: Vec2,
    /// Real symmetric `N_M × N_M`, eV.
    pub omega: DMatrix<f64>,
    /// Per-mode decay rates, eV.
    pub kappa: Vec<f64>,
    /// `N_M × N_E`, eV.
    pub g: CMatrix,
}

impl FewModeModel {
    pub fn new(k_par: Vec2, omega: DMatrix<f64>, kappa: Vec<f64>, g: CMatrix) -> Result<Self> {
        let n = omega.nrows();
        if n == 0 || omega.ncols() != n || kappa.len() != n || g.nrows() != n || g.ncols() == 0 {
            return Err(Error::Config(format!(
                "inconsistent few-mode dimensions: ω {}×{}, κ {}, g {}×{}",
                omega.nrows(),
                omega.ncols(),
                kappa.len(),
                g.nrows(),
                g.ncols()
            )));
        }
        let scale = omega.norm().max(1.0);
        if (&omega - omega.transpose()).norm() > 1e-12 * scale {
            return Err(Error::Config("mode matrix must be symmetric".into()));
        }
        if let Some(k) = kappa.iter().find(|&&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::Config(format!("mode decay rates must be positive, got {k}")));
        }
        Ok(FewModeModel { k_par, omega, kappa, g })
    }

    /// Single mode coupled to `N_E` emitters.
    pub fn single(k_par: Vec2, omega0: f64, kappa: f64, g: &[Complex64]) -> Result<Self> {
        Self::new(
            k_par,
            DMatrix::from_element(1, 1, omega0),
            vec![kappa],
            CMatrix::from_row_slice(1, g.len(), g),
        )
    }

    pub fn n_modes(&self) -> usize {
        self.kappa.len()
    }

    pub fn n_emitters(&self) -> usize {
        self.g.ncols()
    }

    /// `H̃_ij = ω_ij − iκ_i δ_ij / 2`.
    pub fn h_tilde(&self) -> CMatrix {
        let mut h = self.omega.map(c);
        for (i, k) in self.kappa.iter().enumerate() {
            h[(i, i)] -= I * (0.5 * k);
        }
        h
    }

    /// Complex mode frequencies, eigenvalues of `H̃`.
    pub fn complex_frequencies(&self) -> Vec<Complex64> {
        let mut ev = complex_eigenvalues(&self.h_tilde());
        ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        ev
    }

    /// Model spectral density at real `ω`.
    pub fn spectral_density(&self, omega: f64) -> CMatrix {
        model_spectral_density(self, omega)
    }

    /// Same physics after the real orthogonal mode rotation `O`.
    pub fn rotated(&self, o: &DMatrix<f64>) -> Result<Self> {
        let kappa_diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.kappa.clone()));
        let rk = o * kappa_diag * o.transpose();
        let off = rk.norm() - rk.diagonal().norm();
        if off > 1e-12 * rk.norm() {
            return Err(Error::Config("rotation must preserve the diagonal decay matrix".into()));
        }
        Self::new(
            self.k_par,
            o * &self.omega * o.transpose(),
            rk.diagonal().iter().copied().collect(),
            o.map(c) * &self.g,
        )
    }
}

/// `J_mod,hh′(ω) = (1/π) Σ_ij g_ih Im[(H̃ − ω)⁻¹]_ij g*_jh′` with
/// `Im M = (M − M†)/(2i)`.
pub fn model_spectral_density(model: &FewModeModel, omega: f64) -> CMatrix {
    let n = model.n_modes();
    let shifted = model.h_tilde() - CMatrix::identity(n, n) * c(omega);
    let r = shifted.try_inverse().expect("H̃ − ω is invertible for κ > 0");
    let a = anti_hermitian_part(&r);
    hermitize(&(model.g.transpose() * a * model.g.conjugate() / c(std::f64::consts::PI)))
}

/// JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub k_par: [f64; 2],
    pub omega_matrix: Vec<Vec<f64>>,
    pub kappa: Vec<f64>,
    /// `[re, im]` pairs, row per mode.
    pub g: Vec<Vec<[f64; 2]>>,
    pub residual: f64,
    pub converged: bool,
}

impl ModelRecord {
    pub fn new(model: &FewModeModel, report: &FitReport) -> Self {
        let n = model.n_modes();
        ModelRecord {
            k_par: [model.k_par.x, model.k_par.y],
            omega_matrix: (0..n).map(|i| (0..n).map(|j| model.omega[(i, j)]).collect()).collect(),
            kappa: model.kappa.clone(),
            g: (0..n)
                .map(|i| (0..model.n_emitters()).map(|h| [model.g[(i, h)].re, model.g[(i, h)].im]).collect())
                .collect(),
            residual: report.residual,
            converged: report.converged,
        }
    }

    pub fn to_model(&self) -> Result<FewModeModel> {
        let n = self.kappa.len();
        let ne = self.g.first().map_or(0, |r| r.len());
        if self.omega_matrix.len() != n || self.omega_matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Config("omega_matrix must be N_M × N_M".into()));
        }
        if self.g.len() != n || self.g.iter().any(|r| r.len() != ne) {
            return Err(Error::Config("g must be N_M × N_E".into()));
        }
        FewModeModel::new(
            Vec2::new(self.k_par[0], self.k_par[1]),
            DMatrix::from_fn(n, n, |i, j| self.omega_matrix[i][j]),
            self.kappa.clone(),
            CMatrix::from_fn(n, ne, |i, h| Complex64::new(self.g[i][h][0], self.g[i][h][1])),
        )
    }
}
