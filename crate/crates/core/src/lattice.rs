//! Two-dimensional Bravais lattices in the `z = 0` plane.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Primitive vectors (nm) of a 2D Bravais lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub a1: Vec2,
    pub a2: Vec2,
}

impl LatticeSpec {
    pub fn new(a1: [f64; 2], a2: [f64; 2]) -> Result<Self> {
        let lattice = LatticeSpec {
            a1: Vec2::new(a1[0], a1[1]),
            a2: Vec2::new(a2[0], a2[1]),
        };
        let area = lattice.cell_area();
        let scale = lattice.a1.norm() * lattice.a2.norm();
        if !(area > 1e-12 * scale) || !area.is_finite() {
            return Err(Error::Geometry(format!(
                "degenerate lattice vectors {a1:?}, {a2:?}"
            )));
        }
        Ok(lattice)
    }

    pub fn square(a: f64) -> Self {
        LatticeSpec {
            a1: Vec2::new(a, 0.0),
            a2: Vec2::new(0.0, a),
        }
    }

    /// Unit-cell area `|a1 × a2|` (nm²).
    pub fn cell_area(&self) -> f64 {
        (self.a1.x * self.a2.y - self.a1.y * self.a2.x).abs()
    }

    /// Brillouin-zone area `(2π)²/A` (nm⁻²).
    pub fn brillouin_zone_area(&self) -> f64 {
        4.0 * PI * PI / self.cell_area()
    }

    /// Shortest non-zero lattice vector length.
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in -2i32..=2 {
            for j in -2i32..=2 {
                if i == 0 && j == 0 {
                    continue;
                }
                best = best.min(self.point(i, j).norm());
            }
        }
        best
    }

    #[inline]
    pub fn point(&self, i: i32, j: i32) -> Vec2 {
        self.a1 * i as f64 + self.a2 * j as f64
    }

    /// Lattice vector closest to the in-plane point `p`.
    pub fn nearest_point(&self, p: Vec2) -> Vec2 {
        let (b1, b2) = reciprocal_basis(self);
        let f1 = (p.dot(&b1) / (2.0 * PI)).round() as i32;
        let f2 = (p.dot(&b2) / (2.0 * PI)).round() as i32;
        let mut best = self.point(f1, f2);
        for di in -1..=1 {
            for dj in -1..=1 {
                let cand = self.point(f1 + di, f2 + dj);
                if (p - cand).norm_squared() < (p - best).norm_squared() {
                    best = cand;
                }
            }
        }
        best
    }

    /// Absolute wavevector (nm⁻¹) from fractional reciprocal coordinates.
    pub fn reciprocal_point(&self, frac: [f64; 2]) -> Vec2 {
        let (b1, b2) = reciprocal_basis(self);
        b1 * frac[0] + b2 * frac[1]
    }
}

/// Reciprocal basis with `aᵢ·bⱼ = 2π δᵢⱼ`.
pub fn reciprocal_basis(lattice: &LatticeSpec) -> (Vec2, Vec2) {
    let det = lattice.a1.x * lattice.a2.y - lattice.a1.y * lattice.a2.x;
    let f = 2.0 * PI / det;
    let b1 = Vec2::new(lattice.a2.y, -lattice.a2.x) * f;
    let b2 = Vec2::new(-lattice.a1.y, lattice.a1.x) * f;
    (b1, b2)
}

/// Points `n1 b1 + n2 b2` of a lattice given by its basis within `radius` of `center`.
pub(crate) fn points_near(
    basis: (Vec2, Vec2),
    center: Vec2,
    radius: f64,
) -> Vec<(i32, i32, Vec2)> {
    let (u, v) = basis;
    // dual vectors bound the integer ranges
    let det = u.x * v.y - u.y * v.x;
    let du = Vec2::new(v.y, -v.x) / det;
    let dv = Vec2::new(-u.y, u.x) / det;
    let cu = center.dot(&du);
    let cv = center.dot(&dv);
    let ru = radius * du.norm();
    let rv = radius * dv.norm();
    let (i_lo, i_hi) = ((cu - ru).floor() as i32 - 1, (cu + ru).ceil() as i32 + 1);
    let (j_lo, j_hi) = ((cv - rv).floor() as i32 - 1, (cv + rv).ceil() as i32 + 1);
    let mut out = Vec::new();
    for i in i_lo..=i_hi {
        for j in j_lo..=j_hi {
            let p = u * i as f64 + v * j as f64;
            if (p - center).norm() <= radius {
                out.push((i, j, p));
            }
        }
    }
    out
}

/// All lattice vectors with `|R| ≤ radius`, origin included.
pub fn lattice_points_in_radius(lattice: &LatticeSpec, radius: f64) -> Vec<Vec2> {
    let tol = 1e-9 * lattice.min_spacing();
    points_near((lattice.a1, lattice.a2), Vec2::zeros(), radius.max(0.0) + tol)
        .into_iter()
        .map(|(_, _, p)| p)
        .collect()
}

/// A piecewise-linear path through the Brillouin zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPath {
    /// Segment endpoints in fractional reciprocal coordinates.
    pub segments: Vec<([f64; 2], [f64; 2])>,
    pub samples_per_segment: usize,
}

impl KPath {
    /// Path through consecutive points.
    pub fn through(points: &[[f64; 2]], samples_per_segment: usize) -> Self {
        let segments = points.windows(2).map(|w| (w[0], w[1])).collect();
        KPath {
            segments,
            samples_per_segment,
        }
    }

    /// Fractional coordinates of a named high-symmetry point of the square lattice.
    pub fn named_point(name: &str) -> Option<[f64; 2]> {
        match name.to_ascii_uppercase().as_str() {
            "G" | "GAMMA" | "Γ" => Some([0.0, 0.0]),
            "X" => Some([0.5, 0.0]),
            "Y" => Some([0.0, 0.5]),
            "M" => Some([0.5, 0.5]),
            _ => None,
        }
    }
}

/// A sampled wavevector together with its arc length along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSample {
    pub k: Vec2,
    pub arclength: f64,
}

/// Samples along the path, endpoints included, shared joints emitted once.
pub fn bz_path(lattice: &LatticeSpec, path: &KPath) -> Result<Vec<KSample>> {
    if path.segments.is_empty() {
        return Err(Error::Config("k-path has no segments".into()));
    }
    if path.samples_per_segment == 0 {
        return Err(Error::Config("k-path needs at least one sample per segment".into()));
    }
    let mut out: Vec<KSample> = Vec::new();
    let mut arclength = 0.0;
    for (start, end) in &path.segments {
        let ks = lattice.reciprocal_point(*start);
        let ke = lattice.reciprocal_point(*end);
        let n = path.samples_per_segment;
        for i in 0..n {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let k = ks + (ke - ks) * t;
            if let Some(last) = out.last() {
                if i == 0 && (last.k - k).norm() <= 1e-14 * (1.0 + k.norm()) && (ke - ks).norm() > 0.0 {
                    continue;
                }
            }
            let s = arclength + (ke - ks).norm() * t;
            out.push(KSample { k, arclength: s });
        }
        arclength += (ke - ks).norm();
    }
    Ok(out)
}
