//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type CVec3 = Vector3<Complex64>;
pub type CMat3 = Matrix3<Complex64>;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn to_complex3(v: &Vec3) -> CVec3 {
    v.map(c)
}

/// Antisymmetric matrix `[v]×` with `[v]× w = v × w`.
pub fn cross_matrix(v: &CVec3) -> CMat3 {
    let z = Complex64::new(0.0, 0.0);
    CMat3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// `(M − M†)/(2i)`.
pub fn anti_hermitian_part(m: &CMatrix) -> CMatrix {
    (m - m.adjoint()) / Complex64::new(0.0, 2.0)
}

/// `(M + M†)/2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Inverse with a Frobenius-norm condition estimate `‖M‖·‖M⁻¹‖`.
pub fn inverse_with_condition(m: &CMatrix) -> Result<(CMatrix, f64)> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is not invertible".into()))?;
    let cond = m.norm() * inv.norm();
    if !cond.is_finite() {
        return Err(Error::Singular("matrix inverse is not finite".into()));
    }
    Ok((inv, cond))
}

/// Eigenvalues of a general complex matrix from its Schur form.
pub fn complex_eigenvalues(m: &CMatrix) -> Vec<Complex64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (_, t) = nalgebra::linalg::Schur::new(m.clone()).unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Right eigenvector for an (approximate) eigenvalue by inverse iteration.
pub fn eigenvector_for(m: &CMatrix, lambda: Complex64) -> CVector {
    let n = m.nrows();
    let scale = m.norm().max(1e-300);
    let shift = lambda + Complex64::new(1e-10, 1e-10) * scale;
    let shifted = m - CMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = CVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    for _ in 0..4 {
        match lu.solve(&v) {
            Some(next) => {
                let norm = next.norm();
                if norm == 0.0 || !norm.is_finite() {
                    break;
                }
                v = next / c(norm);
            }
            None => break,
        }
    }
    let norm = v.norm();
    v / c(norm)
}

/// Full eigen-decomposition (values and unit right eigenvectors).
pub fn complex_eigen(m: &CMatrix) -> Vec<(Complex64, CVector)> {
    complex_eigenvalues(m)
        .into_iter()
        .map(|l| (l, eigenvector_for(m, l)))
        .collect()
}
