//! Subcommand workflows. Each builds its grids, runs the model fits it
//! needs, then streams one table through [`RunDir`].

use std::f64::consts::PI;
use std::time::Instant;

use metaqed_core::dynamics::{local_field_map, polariton_dispersion, rabi_frequencies, DriveSpec};
use metaqed_core::fewmode::{fit_few_mode, select_mode_count, FewModeModel, FitReport, ModeCount, ModelRecord};
use metaqed_core::lattice::KSample;
use metaqed_core::linalg::{CMatrix, Vec2};
use metaqed_core::pairgen::{pair_resonances, pair_scan, PairScan};
use metaqed_core::spectral::{
    evaluate_cell, incident_polarization, plane_wave_transmission, resonance_samples, spectral_density, EmitterSpec,
};
use metaqed_core::Error as CoreError;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{EmitterMode, FitConfig, Resolved, RunConfig, Sampling};
use crate::error::{CliError, Result};
use crate::output::{RunDir, TableSummary, Timing};

/// What a finished workflow reports back for the manifest.
#[derive(Default)]
pub struct Outcome {
    pub outputs: Vec<TableSummary>,
    pub extra_files: Vec<String>,
    pub timings: Vec<Timing>,
    pub warnings: Vec<String>,
    pub derived: serde_json::Map<String, serde_json::Value>,
}

impl Outcome {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self);
        self.timings.push(Timing {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }
}

pub struct Job<'a> {
    pub cfg: &'a RunConfig,
    pub res: &'a Resolved,
    pub run: &'a mut RunDir,
    pub resume: bool,
}

/// Shortest round-trip form; exponent notation outside `[1e-4, 1e15)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn nan() -> String {
    "NaN".into()
}

fn code(e: &CoreError) -> String {
    e.code().to_string()
}

fn k_columns(k: &Vec2, arclength: f64) -> Vec<String> {
    vec![num(k.x), num(k.y), num(arclength)]
}

// ---------------------------------------------------------------- fits

type FitResult = std::result::Result<(FewModeModel, FitReport), CoreError>;

fn fit_samples(res: &Resolved, fit: &FitConfig, k: Vec2) -> metaqed_core::Result<Vec<(f64, CMatrix)>> {
    match fit.sampling {
        Sampling::Resonance => resonance_samples(
            k,
            &res.emitters,
            &res.env,
            (fit.omega_min_ev, fit.omega_max_ev),
            fit.points,
            fit.half_width_fwhm,
        )
        .map(|w| w.samples),
        Sampling::Uniform => {
            let n = fit.points.max(2);
            (0..n)
                .map(|i| {
                    let w = fit.omega_min_ev + (fit.omega_max_ev - fit.omega_min_ev) * i as f64 / (n - 1) as f64;
                    spectral_density(k, w, &res.emitters, &res.env).map(|s| (w, s.j))
                })
                .collect()
        }
    }
}

fn fit_one(k: Vec2, samples: &[(f64, CMatrix)], count: ModeCount, cfg: &FitConfig, seed: u64, initial: Option<FewModeModel>) -> FitResult {
    let mut opts = cfg.options(seed);
    opts.initial = initial;
    match count {
        ModeCount::Fixed(n) => fit_few_mode(k, samples, n, &opts),
        ModeCount::Auto { max_modes } => select_mode_count(k, samples, max_modes, &opts),
    }
}

fn validate_fit(fit: &FitConfig) -> Result<ModeCount> {
    if !(fit.omega_min_ev > 0.0) || !(fit.omega_max_ev > fit.omega_min_ev) {
        return Err(CliError::Config("fit: need 0 < omega_min_ev < omega_max_ev".into()));
    }
    if fit.points < 2 {
        return Err(CliError::Config("fit: at least 2 sample points are required".into()));
    }
    fit.mode_count()
}

/// Fits at every momentum, chained through the previous model when
/// continuation is on, otherwise independent and parallel.
fn fit_all(res: &Resolved, fit: &FitConfig, seed: u64, ks: &[Vec2]) -> Result<Vec<FitResult>> {
    let count = validate_fit(fit)?;
    let samples: Vec<_> = ks.par_iter().map(|&k| fit_samples(res, fit, k)).collect();
    if fit.continuation {
        let mut prev: Option<FewModeModel> = None;
        let mut out = Vec::with_capacity(ks.len());
        for (k, s) in ks.iter().zip(&samples) {
            let r = s
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|s| fit_one(*k, s, count, fit, seed, prev.clone()));
            if let Ok((m, _)) = &r {
                prev = Some(m.clone());
            }
            out.push(r);
        }
        Ok(out)
    } else {
        Ok(ks
            .par_iter()
            .zip(samples.par_iter())
            .map(|(k, s)| s.as_ref().map_err(Clone::clone).and_then(|s| fit_one(*k, s, count, fit, seed, None)))
            .collect())
    }
}

fn fit_warnings(fits: &[FitResult], out: &mut Outcome) {
    let failed = fits.iter().filter(|f| f.is_err()).count();
    let loose = fits.iter().filter(|f| matches!(f, Ok((_, r)) if !r.converged)).count();
    if failed > 0 {
        out.warnings.push(format!("{failed} of {} fits failed", fits.len()));
    }
    if loose > 0 {
        out.warnings.push(format!("{loose} of {} fits did not reach the tolerance", fits.len()));
    }
}

fn gamma_nr_warning(gamma_nr: f64, out: &mut Outcome) {
    if gamma_nr != 0.0 {
        out.warnings.push(format!("nonradiative emitter decay γ_nr = {gamma_nr} eV is active"));
    }
}

/// Energies, widths and photon fractions of the branches at one momentum.
type Branches = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Branch energies, widths and photon fractions along `fits`, connected
/// over runs of successful fits with equal mode count.
fn branches_along(
    fits: &[FitResult],
    emitters: &[EmitterSpec],
    gamma_nr: f64,
) -> Vec<std::result::Result<Branches, CoreError>> {
    let mut out: Vec<_> = fits.iter().map(|f| f.as_ref().map(|_| Default::default()).map_err(Clone::clone)).collect();
    let mut i = 0;
    while i < fits.len() {
        let Ok((m0, _)) = &fits[i] else {
            i += 1;
            continue;
        };
        let mut j = i;
        let mut run = Vec::new();
        while j < fits.len() {
            match &fits[j] {
                Ok((m, _)) if m.n_modes() == m0.n_modes() => run.push(m.clone()),
                _ => break,
            }
            j += 1;
        }
        match polariton_dispersion(&run, emitters, gamma_nr) {
            Ok(b) => {
                for (off, br) in b.into_iter().enumerate() {
                    out[i + off] = Ok((br.energies(), br.linewidths(), br.photon_fraction.clone()));
                }
            }
            Err(e) => {
                for slot in &mut out[i..j] {
                    *slot = Err(e.clone());
                }
            }
        }
        i = j;
    }
    out
}

fn padded(values: &[f64], width: usize) -> Vec<String> {
    (0..width).map(|i| values.get(i).map_or_else(nan, |v| num(*v))).collect()
}

fn scan_path(cfg: &RunConfig, res: &Resolved) -> Result<Vec<KSample>> {
    cfg.scan()?.k_samples(&res.env.lattice, res.a)
}

// ---------------------------------------------------------------- spectral density

pub fn spectral_density_cmd(job: Job, out: &mut Outcome) -> Result<()> {
    let scan = job.cfg.scan()?;
    let path = scan_path(job.cfg, job.res)?;
    let omegas = scan.omega_grid()?;
    let res = job.res;
    let variants: Vec<(String, Vec<EmitterSpec>)> = match scan.emitter_mode {
        EmitterMode::Array => vec![("all".into(), res.emitters.clone())],
        EmitterMode::Each => res.labels.iter().cloned().zip(res.emitters.iter().map(|e| vec![*e])).collect(),
    };
    let ne = variants[0].1.len();
    let mut header: Vec<String> = ["variant", "k_index", "kx_invnm", "ky_invnm", "arclength_invnm", "omega_ev"]
        .map(String::from)
        .to_vec();
    for h in 0..ne {
        for g in 0..ne {
            header.push(format!("J_{h}_{g}_re"));
            header.push(format!("J_{h}_{g}_im"));
        }
    }
    if scan.transmission {
        header.push("transmission".into());
    }
    header.push("error_code".into());
    out.derived.insert("k_points".into(), json!(path.len()));
    out.derived.insert("omega_points".into(), json!(omegas.len()));
    out.derived.insert("variants".into(), json!(variants.iter().map(|v| &v.0).collect::<Vec<_>>()));

    let nk = path.len();
    let transmission = scan.transmission;
    let summary = out.time("scan", |_| {
        job.run.table("spectral_density.csv", &header, variants.len() * nk, omegas.len(), job.resume, |chunk| {
            let (vi, ki) = (chunk / nk, chunk % nk);
            let (label, ems) = &variants[vi];
            let sample = &path[ki];
            Ok(omegas
                .par_iter()
                .enumerate()
                .map(|(wi, &w)| {
                    let cell = evaluate_cell(ki, sample, wi, w, ems, &res.env);
                    let mut row = vec![label.clone(), ki.to_string()];
                    row.extend(k_columns(&sample.k, sample.arclength));
                    row.push(num(w));
                    match &cell.result {
                        Ok(j) => {
                            for v in j.transpose().iter() {
                                row.push(num(v.re));
                                row.push(num(v.im));
                            }
                        }
                        Err(_) => row.extend((0..2 * ne * ne).map(|_| nan())),
                    }
                    if transmission {
                        let t = incident_polarization(sample.k, w, true)
                            .and_then(|p| plane_wave_transmission(w, sample.k, &p, &res.env));
                        row.push(t.map_or_else(|_| nan(), |t| num(t.t.norm_sqr())));
                    }
                    row.push(cell.result.as_ref().map_or_else(code, |_| "0".into()));
                    row
                })
                .collect())
        })
    })?;
    out.outputs.push(summary);
    Ok(())
}

// ---------------------------------------------------------------- fit

pub fn fit_cmd(job: Job, out: &mut Outcome) -> Result<()> {
    let fit = job.cfg.fit()?;
    let count = validate_fit(fit)?;
    let path = scan_path(job.cfg, job.res)?;
    let res = job.res;
    let seed = job.cfg.seed;
    let nm = fit.max_mode_count();
    let ne = res.emitters.len();
    let mut header: Vec<String> = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm", "n_modes"]
        .map(String::from)
        .to_vec();
    for i in 0..nm {
        for j in 0..nm {
            header.push(format!("omega_{i}_{j}_ev"));
        }
    }
    header.extend((0..nm).map(|i| format!("kappa_{i}_ev")));
    for i in 0..nm {
        for h in 0..ne {
            header.push(format!("g_{i}_{h}_re_ev"));
            header.push(format!("g_{i}_{h}_im_ev"));
            header.push(format!("g_{i}_{h}_abs_ev"));
        }
    }
    header.extend(["residual", "max_error", "converged", "error_code"].map(String::from));
    out.derived.insert("k_points".into(), json!(path.len()));

    // Continuation needs the previous model; after a resume the chain up
    // to the first missing point is recomputed, which is deterministic.
    let mut prev: Option<(usize, Option<FewModeModel>)> = None;
    let chain_to = |ki: usize, prev: &mut Option<(usize, Option<FewModeModel>)>| -> FitResult {
        let k = path[ki].k;
        let initial = if fit.continuation {
            if ki > 0 && prev.as_ref().is_none_or(|(i, _)| *i + 1 != ki) {
                let mut seedm: Option<FewModeModel> = None;
                for kj in 0..ki {
                    let r = fit_samples(res, fit, path[kj].k)
                        .and_then(|s| fit_one(path[kj].k, &s, count, fit, seed, seedm.clone()));
                    if let Ok((m, _)) = r {
                        seedm = Some(m);
                    }
                }
                *prev = Some((ki - 1, seedm));
            }
            prev.as_ref().and_then(|(_, m)| m.clone())
        } else {
            None
        };
        let r = fit_samples(res, fit, k).and_then(|s| fit_one(k, &s, count, fit, seed, initial));
        let keep = match (&r, prev.take()) {
            (Ok((m, _)), _) => Some(m.clone()),
            (Err(_), Some((_, m))) => m,
            (Err(_), None) => None,
        };
        *prev = Some((ki, keep));
        r
    };
    let summary = out.time("fit", |_| {
        job.run.table("fit_summary.csv", &header, path.len(), 1, job.resume, |ki| {
            let r = chain_to(ki, &mut prev);
            let s = &path[ki];
            let mut row = vec![ki.to_string()];
            row.extend(k_columns(&s.k, s.arclength));
            match &r {
                Ok((m, rep)) => {
                    let n = m.n_modes();
                    row.push(n.to_string());
                    for i in 0..nm {
                        for j in 0..nm {
                            row.push(if i < n && j < n { num(m.omega[(i, j)]) } else { nan() });
                        }
                    }
                    row.extend(padded(&m.kappa, nm));
                    for i in 0..nm {
                        for h in 0..ne {
                            if i < n {
                                let g = m.g[(i, h)];
                                row.extend([num(g.re), num(g.im), num(g.norm())]);
                            } else {
                                row.extend([nan(), nan(), nan()]);
                            }
                        }
                    }
                    row.extend([num(rep.residual), num(rep.max_error), (rep.converged as u8).to_string(), "0".into()]);
                }
                Err(e) => {
                    row.push("0".into());
                    row.extend((0..nm * nm + nm + 3 * nm * ne + 3).map(|_| nan()));
                    row.push(code(e));
                }
            }
            Ok(vec![row])
        })
    })?;

    // Model files rebuilt from the table; floats round-trip exactly.
    let records = read_models(&job.run.path("fit_summary.csv"), nm, ne)?;
    let loose = records.iter().filter(|r| matches!(r, Some(m) if !m.converged)).count();
    let failed = records.iter().filter(|r| r.is_none()).count();
    if failed > 0 {
        out.warnings.push(format!("{failed} of {} fits failed", records.len()));
    }
    if loose > 0 {
        out.warnings.push(format!("{loose} of {} fits did not reach the tolerance", records.len()));
    }
    let models_path = job.run.path("fit_models.json");
    crate::output::write_atomic(&models_path, &serde_json::to_vec_pretty(&records)?)?;
    out.extra_files.push("fit_models.json".into());
    out.outputs.push(summary);
    Ok(())
}

fn read_models(path: &std::path::Path, nm: usize, ne: usize) -> Result<Vec<Option<ModelRecord>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let get = |name: &str| -> f64 { col(name).and_then(|c| rec.get(c)).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN) };
        if rec.get(col("error_code").unwrap_or(0)) != Some("0") {
            out.push(None);
            continue;
        }
        let n = get("n_modes") as usize;
        let n = n.min(nm);
        out.push(Some(ModelRecord {
            k_par: [get("kx_invnm"), get("ky_invnm")],
            omega_matrix: (0..n).map(|i| (0..n).map(|j| get(&format!("omega_{i}_{j}_ev"))).collect()).collect(),
            kappa: (0..n).map(|i| get(&format!("kappa_{i}_ev"))).collect(),
            g: (0..n)
                .map(|i| (0..ne).map(|h| [get(&format!("g_{i}_{h}_re_ev")), get(&format!("g_{i}_{h}_im_ev"))]).collect())
                .collect(),
            residual: get("residual"),
            converged: get("converged") == 1.0,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------- dispersion

fn path_fits(job: &Job, out: &mut Outcome) -> Result<(Vec<KSample>, Vec<FitResult>)> {
    let fit = job.cfg.fit()?;
    let path = scan_path(job.cfg, job.res)?;
    let ks: Vec<Vec2> = path.iter().map(|s| s.k).collect();
    let fits = out.time("fit", |_| fit_all(job.res, fit, job.cfg.seed, &ks))?;
    fit_warnings(&fits, out);
    Ok((path, fits))
}

fn branch_header(prefix: &str, n: usize, fields: &[&str]) -> Vec<String> {
    (0..n)
        .flat_map(|m| fields.iter().map(move |f| format!("{prefix}{m}_{f}")))
        .collect()
}

pub fn dispersion_cmd(job: Job, out: &mut Outcome) -> Result<()> {
    let gamma_nr = job.cfg.drive.as_ref().map_or(0.0, |d| d.gamma_nr_ev);
    gamma_nr_warning(gamma_nr, out);
    let (path, fits) = path_fits(&job, out)?;
    let nb = job.cfg.fit()?.max_mode_count() + job.res.emitters.len();
    let branches = branches_along(&fits, &job.res.emitters, gamma_nr);
    let mut header: Vec<String> = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm"].map(String::from).to_vec();
    header.extend(branch_header("branch_", nb, &["energy_ev", "width_ev", "photon_fraction"]));
    header.push("error_code".into());
    out.derived.insert("k_points".into(), json!(path.len()));
    let summary = job.run.table("dispersion.csv", &header, path.len(), 1, job.resume, |ki| {
        let s = &path[ki];
        let mut row = vec![ki.to_string()];
        row.extend(k_columns(&s.k, s.arclength));
        match &branches[ki] {
            Ok((e, w, p)) => {
                for m in 0..nb {
                    row.extend([e, w, p].map(|v| v.get(m).map_or_else(nan, |x| num(*x))));
                }
                row.push("0".into());
            }
            Err(err) => {
                row.extend((0..3 * nb).map(|_| nan()));
                row.push(code(err));
            }
        }
        Ok(vec![row])
    })?;
    out.outputs.push(summary);
    Ok(())
}

// ---------------------------------------------------------------- local field

pub fn local_field_cmd(job: Job, out: &mut Outcome) -> Result<()> {
    let drive = job.cfg.drive()?;
    let omegas = drive.omega_grid()?;
    let e_in = drive.e_in()?;
    gamma_nr_warning(drive.gamma_nr_ev, out);
    let (path, fits) = path_fits(&job, out)?;
    let res = job.res;
    let ne = res.emitters.len();
    let nb = job.cfg.fit()?.max_mode_count() + ne;
    let branches = branches_along(&fits, &res.emitters, drive.gamma_nr_ev);
    let models: Vec<std::result::Result<FewModeModel, CoreError>> =
        fits.iter().map(|f| f.as_ref().map(|(m, _)| m.clone()).map_err(Clone::clone)).collect();
    let free: Vec<f64> = res
        .emitters
        .iter()
        .map(|e| e.dipole_e_nm() * e_in)
        .collect();
    let mut header: Vec<String> = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm", "omega_l_ev"]
        .map(String::from)
        .to_vec();
    header.extend((0..ne).map(|h| format!("e_loc_ratio_{h}")));
    header.extend((0..nb).map(|m| format!("branch_{m}_energy_ev")));
    header.push("error_code".into());
    out.derived.insert("k_points".into(), json!(path.len()));
    out.derived.insert("omega_points".into(), json!(omegas.len()));
    out.derived.insert("e_in_v_per_nm".into(), json!(e_in));

    let summary = out.time("scan", |_| {
        job.run.table("local_field.csv", &header, path.len(), omegas.len(), job.resume, |ki| {
            let s = &path[ki];
            let overlay = match &branches[ki] {
                Ok((e, _, _)) => padded(e, nb),
                Err(_) => padded(&[], nb),
            };
            let cells = local_field_map(
                &models[ki..=ki],
                &res.emitters,
                &omegas,
                |_, w| {
                    let d = DriveSpec {
                        omega_l_ev: w,
                        k_l: [s.k.x, s.k.y],
                        e_in_v_per_nm: e_in,
                        polarization: drive.polarization,
                    };
                    rabi_frequencies(&d, &res.emitters, &res.env)
                },
                &free,
                drive.gamma_nr_ev,
            );
            Ok(cells
                .iter()
                .map(|c| {
                    let mut row = vec![ki.to_string()];
                    row.extend(k_columns(&s.k, s.arclength));
                    row.push(num(c.omega_l));
                    match &c.result {
                        Ok(r) => row.extend(r.iter().map(|v| num(*v))),
                        Err(_) => row.extend((0..ne).map(|_| nan())),
                    }
                    row.extend(overlay.iter().cloned());
                    row.push(c.result.as_ref().map_or_else(code, |_| "0".into()));
                    row
                })
                .collect())
        })
    })?;
    out.outputs.push(summary);
    Ok(())
}

// ---------------------------------------------------------------- pair generation

pub fn pairgen_cmd(job: Job, out: &mut Outcome) -> Result<()> {
    let pg = job.cfg.pairgen()?;
    pg.validate()?;
    let drive = job.cfg.drive()?;
    let fit = job.cfg.fit()?;
    let e_in = drive.e_in()?;
    gamma_nr_warning(drive.gamma_nr_ev, out);
    let res = job.res;
    let a = res.a;
    let k_l = pg.k_l(a)?;
    let dir = pg.direction()?;
    let grid = pg.k_grid(a)?;
    let center = pg.k_points_each_side;
    let fits = out.time("fit", |_| fit_all(res, fit, job.cfg.seed, &grid))?;
    fit_warnings(&fits, out);
    let models: Vec<std::result::Result<FewModeModel, CoreError>> =
        fits.iter().map(|f| f.as_ref().map(|(m, _)| m.clone()).map_err(Clone::clone)).collect();
    let model_kl = models[center]
        .clone()
        .map_err(|e| CliError::Config(format!("pairgen: fit at k_L failed: {e}")))?;
    let branch_kl = polariton_dispersion(std::slice::from_ref(&model_kl), &res.emitters, drive.gamma_nr_ev)?
        .remove(0)
        .energies();
    let omegas = match drive.polariton_margin_ev {
        Some(m) if drive.omega_min_ev.is_none() && drive.omega_max_ev.is_none() => {
            if !(m > 0.0) || drive.omega_points == 0 {
                return Err(CliError::Config("drive: polariton_margin_ev > 0 and omega_points ≥ 1 required".into()));
            }
            let lo = branch_kl.iter().cloned().fold(f64::INFINITY, f64::min) - m;
            let hi = branch_kl.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + m;
            let n = drive.omega_points;
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        }
        Some(_) => {
            return Err(CliError::Config(
                "drive: polariton_margin_ev replaces omega_min_ev/omega_max_ev; set one or the other".into(),
            ))
        }
        None => drive.omega_grid()?,
    };
    let nb = fit.max_mode_count() + res.emitters.len();
    let branches: Vec<Vec<f64>> = branches_along(&fits, &res.emitters, drive.gamma_nr_ev)
        .into_iter()
        .map(|b| b.map(|(e, _, _)| e).unwrap_or_default())
        .collect();
    let v_d = pg.vd_fraction * res.env.lattice.brillouin_zone_area();

    let mut header: Vec<String> = [
        "omega_index",
        "k_index",
        "omega_l_ev",
        "kx_invnm",
        "ky_invnm",
        "k_pi_over_a",
        "gamma_ev",
        "gamma_density_cm2_s",
        "gamma_over_flux2_cm2_fs",
        "gamma_over_flux",
        "mask",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..nb).map(|m| format!("kl_branch_{m}_ev")));
    for m in 0..nb {
        for n in 0..nb {
            header.push(format!("pair_{m}_{n}_ev"));
        }
    }
    header.push("error_code".into());

    out.derived.insert("k_l_invnm".into(), json!([k_l.x, k_l.y]));
    out.derived.insert("k_points".into(), json!(grid.len()));
    out.derived.insert("omega_points".into(), json!(omegas.len()));
    out.derived.insert("omega_min_ev".into(), json!(omegas[0]));
    out.derived.insert("omega_max_ev".into(), json!(omegas[omegas.len() - 1]));
    out.derived.insert("v_d_invnm2".into(), json!(v_d));
    out.derived.insert("v_b_invnm2".into(), json!(res.env.lattice.brillouin_zone_area()));
    out.derived.insert("e_in_v_per_nm".into(), json!(e_in));
    out.derived.insert("polaritons_at_k_l_ev".into(), json!(branch_kl));

    let scan = PairScan {
        k_l,
        k_grid: &grid,
        models: &models,
        model_kl: &model_kl,
        emitters: &res.emitters,
        options: pg.options(drive.gamma_nr_ev),
        v_d,
        e_in_v_per_nm: e_in,
    };
    let nk = grid.len();
    let kl_overlay = padded(&branch_kl, nb);
    let rabi = |w: f64| {
        let d = DriveSpec {
            omega_l_ev: w,
            k_l: [k_l.x, k_l.y],
            e_in_v_per_nm: e_in,
            polarization: drive.polarization,
        };
        rabi_frequencies(&d, &res.emitters, &res.env)
    };
    let summary = out.time("scan", |_| {
        job.run.table("pair_rates.csv", &header, omegas.len(), nk, job.resume, |wi| {
            let cells = pair_scan(&scan, &omegas[wi..=wi], rabi);
            Ok(cells
                .iter()
                .map(|c| {
                    let ki = c.k_index;
                    let mut row = vec![wi.to_string(), ki.to_string(), num(omegas[wi])];
                    row.extend([num(c.k_par.x), num(c.k_par.y), num(c.k_par.dot(&dir) * a / PI)]);
                    match &c.result {
                        Ok(r) => row.extend(
                            [r.gamma, r.gamma_density_cm2_s, r.gamma_over_flux2_cm2_fs, r.gamma_over_flux].map(num),
                        ),
                        Err(_) => row.extend((0..4).map(|_| nan())),
                    }
                    row.push((c.masked as u8).to_string());
                    row.extend(kl_overlay.iter().cloned());
                    let bar = nk - 1 - ki;
                    row.extend(padded(&pair_resonances(&branches[ki], &branches[bar]), nb * nb));
                    let err = match &c.result {
                        Err(e) if !c.masked => code(e),
                        _ => "0".into(),
                    };
                    row.push(err);
                    row
                })
                .collect())
        })
    })?;
    if let Some(p) = pair_peak(&job.run.path("pair_rates.csv"))? {
        out.derived.insert("peak".into(), p);
    }
    out.outputs.push(summary);
    Ok(())
}

/// Largest `Γ/Φ²` in a finished pair table with its cell and `Γ/Φ`.
fn pair_peak(path: &std::path::Path) -> Result<Option<serde_json::Value>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).expect("pair table column");
    let (cw, ck, cg, cf) = (col("omega_l_ev"), col("k_pi_over_a"), col("gamma_over_flux2_cm2_fs"), col("gamma_over_flux"));
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for rec in reader.records() {
        let rec = rec?;
        let v = |c: usize| rec.get(c).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
        let g = v(cg);
        if g.is_finite() && best.is_none_or(|b| g > b.0) {
            best = Some((g, v(cf), v(cw), v(ck)));
        }
    }
    Ok(best.map(|(g, f, w, k)| {
        json!({"gamma_over_flux2_cm2_fs": g, "gamma_over_flux": f, "omega_l_ev": w, "k_pi_over_a": k})
    }))
}
