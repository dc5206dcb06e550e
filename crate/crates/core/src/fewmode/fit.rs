//! Levenberg–Marquardt fitting of few-mode models to sampled spectral
//! densities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FewModeModel, KAPPA_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{anti_hermitian_part, c, CMatrix, Vec2, I};

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Target relative misfit `Σ‖J_mod − J‖² / Σ‖J‖²`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Number of starting points; the first is the peak-based guess.
    pub starts: usize,
    pub seed: u64,
    /// Extra starting point, e.g. the fit at the previous momentum.
    pub initial: Option<FewModeModel>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            starts: 8,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Relative misfit `Σ‖J_mod − J‖² / Σ‖J‖²`.
    pub residual: f64,
    /// `max_ω ‖J_mod − J‖ / max_ω ‖J‖`.
    pub max_error: f64,
    pub n_modes: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Parameter vector layout: `ω_ii`, `ω_ij (i < j)`, `ln(κ_i − κ_floor)`,
/// then `g` as (re, im) pairs with `Im g_00` dropped to fix the global phase.
#[derive(Debug, Clone, Copy)]
struct Layout {
    nm: usize,
    ne: usize,
}

impl Layout {
    fn n_off(&self) -> usize {
        self.nm * (self.nm - 1) / 2
    }

    fn len(&self) -> usize {
        2 * self.nm + self.n_off() + 2 * self.nm * self.ne - 1
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nm).flat_map(move |i| (i + 1..self.nm).map(move |j| (i, j)))
    }

    fn g_offset(&self) -> usize {
        2 * self.nm + self.n_off()
    }

    /// (mode, emitter, imaginary?) for every g parameter.
    fn g_params(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::with_capacity(2 * self.nm * self.ne);
        for i in 0..self.nm {
            for h in 0..self.ne {
                out.push((i, h, false));
                if i != 0 || h != 0 {
                    out.push((i, h, true));
                }
            }
        }
        out
    }

    fn pack(&self, model: &FewModeModel) -> DVector<f64> {
        let mut p = DVector::zeros(self.len());
        for i in 0..self.nm {
            p[i] = model.omega[(i, i)];
            p[self.nm + self.n_off() + i] = (model.kappa[i] - KAPPA_FLOOR).max(1e-300).ln();
        }
        for (n, (i, j)) in self.pairs().enumerate() {
            p[self.nm + n] = model.omega[(i, j)];
        }
        let g00 = model.g[(0, 0)];
        let gauge = if g00.norm() > 0.0 { g00.conj() / g00.norm() } else { c(1.0) };
        let off = self.g_offset();
        for (n, (i, h, im)) in self.g_params().into_iter().enumerate() {
            let v = model.g[(i, h)] * gauge;
            p[off + n] = if im { v.im } else { v.re };
        }
        p
    }

    fn unpack(&self, p: &DVector<f64>, k_par: Vec2) -> FewModeModel {
        let mut omega = DMatrix::zeros(self.nm, self.nm);
        let mut kappa = vec![0.0; self.nm];
        for i in 0..self.nm {
            omega[(i, i)] = p[i];
            kappa[i] = KAPPA_FLOOR + p[self.nm + self.n_off() + i].exp();
        }
        for (n, (i, j)) in self.pairs().enumerate() {
            omega[(i, j)] = p[self.nm + n];
            omega[(j, i)] = p[self.nm + n];
        }
        let mut g = CMatrix::zeros(self.nm, self.ne);
        let off = self.g_offset();
        for (n, (i, h, im)) in self.g_params().into_iter().enumerate() {
            if im {
                g[(i, h)].im = p[off + n];
            } else {
                g[(i, h)].re = p[off + n];
            }
        }
        FewModeModel { k_par, omega, kappa, g }
    }
}

struct Problem<'a> {
    layout: Layout,
    samples: &'a [(f64, CMatrix)],
    norm: f64,
    k_par: Vec2,
}

impl Problem<'_> {
    fn n_residuals(&self) -> usize {
        self.samples.len() * self.layout.ne * self.layout.ne * 2
    }

    /// Residual vector and optionally its Jacobian.
    fn evaluate(&self, p: &DVector<f64>, jacobian: bool) -> Option<(DVector<f64>, Option<DMatrix<f64>>)> {
        let Layout { nm, ne } = self.layout;
        let model = self.layout.unpack(p, self.k_par);
        let h = model.h_tilde();
        let g = &model.g;
        let gt = g.transpose();
        let gc = g.conjugate();
        let mut r = DVector::zeros(self.n_residuals());
        let mut jac = jacobian.then(|| DMatrix::zeros(self.n_residuals(), self.layout.len()));
        let inv_pi = 1.0 / PI;
        // derivative directions of H̃ for the mode parameters
        let mut h_dirs: Vec<(usize, CMatrix)> = Vec::new();
        if jacobian {
            for i in 0..nm {
                let mut d = CMatrix::zeros(nm, nm);
                d[(i, i)] = c(1.0);
                h_dirs.push((i, d));
                let mut d = CMatrix::zeros(nm, nm);
                d[(i, i)] = -I * (0.5 * (model.kappa[i] - KAPPA_FLOOR));
                h_dirs.push((nm + self.layout.n_off() + i, d));
            }
            for (n, (i, j)) in self.layout.pairs().enumerate() {
                let mut d = CMatrix::zeros(nm, nm);
                d[(i, j)] = c(1.0);
                d[(j, i)] = c(1.0);
                h_dirs.push((nm + n, d));
            }
        }
        let g_params = self.layout.g_params();
        for (s, (omega, target)) in self.samples.iter().enumerate() {
            let shifted = &h - CMatrix::identity(nm, nm) * c(*omega);
            let res = shifted.try_inverse()?;
            let a = anti_hermitian_part(&res);
            let jm = &gt * &a * &gc * c(inv_pi);
            let base = s * ne * ne * 2;
            for x in 0..ne {
                for y in 0..ne {
                    let d = (jm[(x, y)] - target[(x, y)]) / self.norm;
                    if !d.re.is_finite() || !d.im.is_finite() {
                        return None;
                    }
                    r[base + 2 * (x * ne + y)] = d.re;
                    r[base + 2 * (x * ne + y) + 1] = d.im;
                }
            }
            if let Some(jac) = jac.as_mut() {
                let mut put = |col: usize, dj: &CMatrix| {
                    for x in 0..ne {
                        for y in 0..ne {
                            let v = dj[(x, y)] * (inv_pi / self.norm);
                            jac[(base + 2 * (x * ne + y), col)] = v.re;
                            jac[(base + 2 * (x * ne + y) + 1, col)] = v.im;
                        }
                    }
                };
                for (col, d) in &h_dirs {
                    let dr = -(&res * d * &res);
                    let da = anti_hermitian_part(&dr);
                    put(*col, &(&gt * da * &gc));
                }
                let ag = &a * &gc;
                let gta = &gt * &a;
                let off = self.layout.g_offset();
                for (n, &(i, h_idx, im)) in g_params.iter().enumerate() {
                    let sdir = if im { I } else { c(1.0) };
                    let mut dj = CMatrix::zeros(ne, ne);
                    for y in 0..ne {
                        dj[(h_idx, y)] += sdir * ag[(i, y)];
                    }
                    for x in 0..ne {
                        dj[(x, h_idx)] += sdir.conj() * gta[(x, i)];
                    }
                    put(off + n, &dj);
                }
            }
        }
        Some((r, jac))
    }

    /// Monotone Levenberg–Marquardt with Marquardt diagonal scaling.
    fn solve(&self, mut p: DVector<f64>, max_iterations: usize) -> Option<(DVector<f64>, f64, usize, Vec<f64>)> {
        let (mut r, mut jac) = self.evaluate(&p, true)?;
        let mut cost = r.norm_squared();
        let mut history = vec![cost];
        let mut lambda = 1e-3;
        let mut iterations = 0;
        while iterations < max_iterations && cost > 1e-30 {
            iterations += 1;
            let jm = jac.take().expect("jacobian requested");
            let jtj = jm.transpose() * &jm;
            let grad = jm.transpose() * &r;
            let dmax = jtj.diagonal().max().max(1e-300);
            let mut accepted = None;
            while lambda < 1e20 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-14 * dmax);
                }
                let step = match a.cholesky() {
                    Some(ch) => -ch.solve(&grad),
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                };
                let trial = &p + &step;
                match self.evaluate(&trial, false) {
                    Some((rt, _)) if rt.norm_squared() < cost => {
                        accepted = Some((trial, rt));
                        break;
                    }
                    _ => lambda *= 4.0,
                }
            }
            let Some((trial, rt)) = accepted else { break };
            let new_cost = rt.norm_squared();
            let gain = cost - new_cost;
            p = trial;
            cost = new_cost;
            history.push(cost);
            lambda = (lambda / 3.0).max(1e-15);
            let (rn, jn) = self.evaluate(&p, true)?;
            r = rn;
            jac = jn;
            if gain <= 1e-15 * cost {
                break;
            }
        }
        Some((p, cost, iterations, history))
    }
}

fn validate_samples(samples: &[(f64, CMatrix)]) -> Result<usize> {
    let Some((_, first)) = samples.first() else {
        return Err(Error::Config("no spectral samples to fit".into()));
    };
    let ne = first.nrows();
    if ne == 0 || samples.iter().any(|(w, j)| j.nrows() != ne || j.ncols() != ne || !w.is_finite()) {
        return Err(Error::Config("spectral samples must be square matrices of one size".into()));
    }
    let mut omegas: Vec<f64> = samples.iter().map(|s| s.0).collect();
    omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    omegas.dedup();
    if omegas.len() != samples.len() {
        return Err(Error::Config("frequency grid has repeated points".into()));
    }
    Ok(ne)
}

/// Peak-based starting model: prominent peaks of `tr J` give `ω_ii`, their
/// half-maximum widths `κ_i` and their heights `|g_ih|`.
fn peak_guess(samples: &[(f64, CMatrix)], nm: usize, k_par: Vec2) -> FewModeModel {
    let ne = samples[0].1.nrows();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.partial_cmp(&samples[b].0).unwrap());
    let w: Vec<f64> = order.iter().map(|&i| samples[i].0).collect();
    let tr: Vec<f64> = order.iter().map(|&i| samples[i].1.diagonal().iter().map(|z| z.re).sum()).collect();
    let n = w.len();
    let span = w[n - 1] - w[0];

    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || tr[i] > tr[i - 1];
        let right_ok = i == n - 1 || tr[i] >= tr[i + 1];
        if !(left_ok && right_ok) || (i == 0 || i == n - 1) && n > 2 {
            continue;
        }
        let mut lmin = tr[i];
        for j in (0..i).rev() {
            if tr[j] > tr[i] {
                break;
            }
            lmin = lmin.min(tr[j]);
        }
        let mut rmin = tr[i];
        for &v in &tr[i + 1..] {
            if v > tr[i] {
                break;
            }
            rmin = rmin.min(v);
        }
        peaks.push((i, tr[i] - lmin.max(rmin)));
    }
    if peaks.is_empty() {
        let imax = (0..n).max_by(|&a, &b| tr[a].partial_cmp(&tr[b]).unwrap()).unwrap();
        peaks.push((imax, tr[imax]));
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let width = |i: usize| -> f64 {
        let half = 0.5 * tr[i];
        let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut prev = i;
            for j in range {
                if tr[j] < half {
                    let t = (tr[prev] - half) / (tr[prev] - tr[j]);
                    return Some(w[prev] + t * (w[j] - w[prev]));
                }
                prev = j;
            }
            None
        };
        let right = cross(&mut (i + 1..n));
        let left = cross(&mut (0..i).rev());
        let fw = match (left, right) {
            (Some(l), Some(r)) => r - l,
            (Some(l), None) => 2.0 * (w[i] - l),
            (None, Some(r)) => 2.0 * (r - w[i]),
            (None, None) => span / 4.0,
        };
        fw.max(span / (4.0 * n as f64)).max(2.0 * KAPPA_FLOOR)
    };

    let mut modes: Vec<(f64, f64, usize)> = peaks.iter().take(nm).map(|&(i, _)| (w[i], width(i), i)).collect();
    let (w0, k0, i0) = modes[0];
    let mut extra = 0;
    while modes.len() < nm {
        extra += 1;
        let sign = if extra % 2 == 1 { 1.0 } else { -1.0 };
        let shift = k0 * (0.5 + (extra / 2) as f64);
        modes.push((w0 + sign * shift, k0, i0));
    }
    modes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut omega = DMatrix::zeros(nm, nm);
    let mut kappa = vec![0.0; nm];
    let mut g = CMatrix::zeros(nm, ne);
    for (m, &(wm, km, idx)) in modes.iter().enumerate() {
        omega[(m, m)] = wm;
        kappa[m] = km;
        let j = &samples[order[idx]].1;
        for h in 0..ne {
            let mag = (PI * km * j[(h, h)].re.max(0.0) / 2.0).sqrt();
            let phase = if h == 0 || j[(0, h)].norm() == 0.0 { c(1.0) } else { j[(0, h)].conj() / j[(0, h)].norm() };
            g[(m, h)] = phase * mag;
        }
    }
    FewModeModel { k_par, omega, kappa, g }
}

fn perturbed(base: &FewModeModel, rng: &mut ChaCha8Rng) -> FewModeModel {
    let mut m = base.clone();
    let nm = m.n_modes();
    let mean_kappa = m.kappa.iter().sum::<f64>() / nm as f64;
    for i in 0..nm {
        m.omega[(i, i)] += base.kappa[i] * rng.random_range(-0.5..0.5);
        m.kappa[i] = (base.kappa[i] * rng.random_range(-0.7f64..0.7).exp()).max(2.0 * KAPPA_FLOOR);
        let phase = if i == 0 { c(1.0) } else { Complex64::from_polar(1.0, rng.random_range(-PI..PI)) };
        let scale = rng.random_range(-0.5f64..0.5).exp();
        for h in 0..m.n_emitters() {
            m.g[(i, h)] *= phase * scale;
        }
        for j in i + 1..nm {
            let v = mean_kappa * rng.random_range(-0.3..0.3);
            m.omega[(i, j)] = v;
            m.omega[(j, i)] = v;
        }
    }
    m
}

/// Least-squares fit of an `n_modes` model to `(ω, J(ω))` samples.
pub fn fit_few_mode(
    k_par: Vec2,
    samples: &[(f64, CMatrix)],
    n_modes: usize,
    options: &FitOptions,
) -> Result<(FewModeModel, FitReport)> {
    if n_modes == 0 {
        return Err(Error::Config("at least one mode is required".into()));
    }
    let ne = validate_samples(samples)?;
    let layout = Layout { nm: n_modes, ne };
    if samples.len() < 4 * layout.len() {
        return Err(Error::Config(format!(
            "{} samples cannot constrain {} parameters (need ≥ {})",
            samples.len(),
            layout.len(),
            4 * layout.len()
        )));
    }
    let norm = samples.iter().map(|s| s.1.norm_squared()).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Config("spectral samples are identically zero".into()));
    }
    let problem = Problem { layout, samples, norm, k_par };

    let base = peak_guess(samples, n_modes, k_par);
    let mut starts: Vec<FewModeModel> = Vec::new();
    if let Some(init) = &options.initial {
        if init.n_modes() == n_modes && init.n_emitters() == ne {
            let mut init = init.clone();
            init.k_par = k_par;
            starts.push(init);
        }
    }
    starts.push(base.clone());
    for s in 1..options.starts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(s as u64));
        starts.push(perturbed(&base, &mut rng));
    }

    let results: Vec<Option<(DVector<f64>, f64, usize)>> = starts
        .par_iter()
        .map(|m| problem.solve(layout.pack(m), options.max_iterations).map(|(p, cost, it, _)| (p, cost, it)))
        .collect();
    let (p, cost, iterations) = results
        .into_iter()
        .flatten()
        .filter(|r| r.1.is_finite())
        .fold(None::<(DVector<f64>, f64, usize)>, |best, r| match best {
            Some(b) if b.1 <= r.1 => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Fit("every start produced a non-finite model".into()))?;

    let mut model = layout.unpack(&p, k_par);
    // canonical mode order
    let mut idx: Vec<usize> = (0..n_modes).collect();
    idx.sort_by(|&a, &b| model.omega[(a, a)].partial_cmp(&model.omega[(b, b)]).unwrap());
    model = FewModeModel {
        k_par,
        omega: DMatrix::from_fn(n_modes, n_modes, |i, j| model.omega[(idx[i], idx[j])]),
        kappa: idx.iter().map(|&i| model.kappa[i]).collect(),
        g: CMatrix::from_fn(n_modes, ne, |i, h| model.g[(idx[i], h)]),
    };

    let jmax = samples.iter().map(|s| s.1.norm()).fold(0.0, f64::max);
    let max_error = samples
        .iter()
        .map(|(w, j)| (model.spectral_density(*w) - j).norm())
        .fold(0.0, f64::max)
        / jmax;
    let report = FitReport {
        residual: cost,
        max_error,
        n_modes,
        iterations,
        converged: cost <= options.tolerance,
    };
    Ok((model, report))
}

/// Smallest mode count whose fit reaches the tolerance; otherwise the best
/// fit found, flagged as not converged.
pub fn select_mode_count(
    k_par: Vec2,
    samples: &[(f64, CMatrix)],
    max_modes: usize,
    options: &FitOptions,
) -> Result<(FewModeModel, FitReport)> {
    if max_modes == 0 {
        return Err(Error::Config("max_modes must be at least 1".into()));
    }
    let mut best: Option<(FewModeModel, FitReport)> = None;
    for n in 1..=max_modes {
        let fit = match fit_few_mode(k_par, samples, n, options) {
            Ok(f) => f,
            Err(e) if best.is_none() => return Err(e),
            Err(_) => break,
        };
        if fit.1.converged {
            return Ok(fit);
        }
        if best.as_ref().is_none_or(|b| fit.1.residual < b.1.residual) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one fit attempted"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeCount {
    Fixed(usize),
    Auto { max_modes: usize },
}

/// Spectral samples at one point of a momentum path.
#[derive(Debug, Clone)]
pub struct PathSamples {
    pub k_index: usize,
    pub k_par: Vec2,
    pub arclength: f64,
    pub samples: Vec<(f64, CMatrix)>,
}

#[derive(Debug, Clone)]
pub struct PathFit {
    pub k_index: usize,
    pub k_par: Vec2,
    pub arclength: f64,
    pub result: std::result::Result<(FewModeModel, FitReport), Error>,
}

/// Fit every path point in order, optionally seeding each fit with the
/// previous successful model. Failures are kept per point.
pub fn fit_along_path(
    table: &[PathSamples],
    count: ModeCount,
    continuation: bool,
    options: &FitOptions,
) -> Vec<PathFit> {
    let mut previous: Option<FewModeModel> = None;
    let mut out = Vec::with_capacity(table.len());
    for row in table {
        let mut opts = options.clone();
        if continuation {
            opts.initial = previous.clone();
        }
        let result = match count {
            ModeCount::Fixed(n) => fit_few_mode(row.k_par, &row.samples, n, &opts),
            ModeCount::Auto { max_modes } => select_mode_count(row.k_par, &row.samples, max_modes, &opts),
        };
        if let Ok((m, _)) = &result {
            previous = Some(m.clone());
        }
        out.push(PathFit {
            k_index: row.k_index,
            k_par: row.k_par,
            arclength: row.arclength,
            result,
        });
    }
    out
}
