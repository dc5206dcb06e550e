//! Run configuration: a TOML file with unit-suffixed keys.
//!
//! Momenta given "in units of π/a" use `a = |a1|`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use metaqed_core::fewmode::{FitOptions, ModeCount};
use metaqed_core::greens::{Environment, EwaldParams, ScattererSpec};
use metaqed_core::lattice::{bz_path, KPath, KSample, LatticeSpec};
use metaqed_core::linalg::Vec2;
use metaqed_core::material::MaterialModel;
use metaqed_core::pairgen::{PairOptions, DEFAULT_MAX_DIMENSION};
use metaqed_core::spectral::EmitterSpec;
use metaqed_core::units;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for randomized fit restarts.
    #[serde(default)]
    pub seed: u64,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub material: BTreeMap<String, MaterialConfig>,
    #[serde(default)]
    pub scatterers: Vec<ScattererConfig>,
    pub emitters: Vec<EmitterConfig>,
    #[serde(default)]
    pub ewald: EwaldConfig,
    pub scan: Option<ScanConfig>,
    pub fit: Option<FitConfig>,
    pub drive: Option<DriveConfig>,
    pub pairgen: Option<PairgenConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub a1_nm: [f64; 2],
    pub a2_nm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialConfig {
    /// Give either the plasma energy or the quasistatic sphere resonance.
    Drude {
        eps_inf: f64,
        damping_ev: f64,
        plasma_energy_ev: Option<f64>,
        resonance_ev: Option<f64>,
    },
    ConstantIndex { refractive_index: f64 },
}

impl MaterialConfig {
    pub fn resolve(&self, name: &str) -> Result<MaterialModel> {
        let model = match *self {
            MaterialConfig::Drude {
                eps_inf,
                damping_ev,
                plasma_energy_ev,
                resonance_ev,
            } => match (plasma_energy_ev, resonance_ev) {
                (Some(p), None) => MaterialModel::Drude {
                    eps_inf,
                    plasma_energy_ev: p,
                    damping_ev,
                },
                (None, Some(r)) => MaterialModel::drude_with_resonance(eps_inf, damping_ev, r),
                _ => {
                    return Err(CliError::Config(format!(
                        "material.{name}: set exactly one of plasma_energy_ev and resonance_ev"
                    )))
                }
            },
            MaterialConfig::ConstantIndex { refractive_index } => MaterialModel::ConstantIndex { refractive_index },
        };
        model
            .validate()
            .map_err(|e| CliError::Config(format!("material.{name}: {e}")))?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererConfig {
    #[serde(default)]
    pub position_nm: [f64; 3],
    pub radius_nm: f64,
    /// Key into `[material]`.
    pub material: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub label: Option<String>,
    pub position_nm: [f64; 3],
    pub dipole_debye: f64,
    pub orientation: [f64; 3],
    pub transition_ev: f64,
}

impl EmitterConfig {
    pub fn spec(&self) -> EmitterSpec {
        EmitterSpec {
            position_nm: self.position_nm,
            dipole_debye: self.dipole_debye,
            orientation: self.orientation,
            transition_ev: self.transition_ev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwaldConfig {
    pub splitting_invnm: Option<f64>,
    /// In shortest lattice vectors.
    pub real_cutoff: Option<u32>,
    /// In shortest reciprocal vectors.
    pub reciprocal_cutoff: Option<u32>,
    pub tolerance: f64,
    pub finite_difference: bool,
}

impl Default for EwaldConfig {
    fn default() -> Self {
        let p = EwaldParams::default();
        EwaldConfig {
            splitting_invnm: p.splitting,
            real_cutoff: p.real_cutoff,
            reciprocal_cutoff: p.reciprocal_cutoff,
            tolerance: p.tolerance,
            finite_difference: p.finite_difference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitterMode {
    /// All emitters share one unit cell; `J` is `N_E × N_E`.
    Array,
    /// One single-emitter scan per configured emitter.
    Each,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Named high-symmetry points (`G`, `X`, `Y`, `M`).
    pub path: Option<Vec<String>>,
    pub samples_per_segment: Option<usize>,
    /// Straight line instead of a named path.
    pub k_start_pi_over_a: Option<[f64; 2]>,
    pub k_stop_pi_over_a: Option<[f64; 2]>,
    pub k_points: Option<usize>,
    pub omega_min_ev: f64,
    pub omega_max_ev: f64,
    pub omega_points: usize,
    #[serde(default = "default_emitter_mode")]
    pub emitter_mode: EmitterMode,
    /// Add the s-polarized zeroth-order `|t|²` column.
    #[serde(default)]
    pub transmission: bool,
}

fn default_emitter_mode() -> EmitterMode {
    EmitterMode::Array
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Uniform grid over the window.
    Uniform,
    /// Dense samples around the strongest peak in the window.
    Resonance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub sampling: Sampling,
    pub omega_min_ev: f64,
    pub omega_max_ev: f64,
    pub points: usize,
    /// Resonance sampling half width in FWHM.
    #[serde(default = "default_half_width")]
    pub half_width_fwhm: f64,
    /// Fixed mode count; mutually exclusive with `max_modes`.
    pub modes: Option<usize>,
    pub max_modes: Option<usize>,
    #[serde(default = "default_fit_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Seed each fit with the previous point's model.
    #[serde(default)]
    pub continuation: bool,
    /// Labels of the emitters to model; all when unset.
    pub emitters: Option<Vec<String>>,
}

fn default_half_width() -> f64 {
    10.0
}
fn default_fit_tolerance() -> f64 {
    FitOptions::default().tolerance
}
fn default_max_iterations() -> usize {
    FitOptions::default().max_iterations
}
fn default_starts() -> usize {
    FitOptions::default().starts
}

impl FitConfig {
    pub fn mode_count(&self) -> Result<ModeCount> {
        match (self.modes, self.max_modes) {
            (Some(n), None) if n > 0 => Ok(ModeCount::Fixed(n)),
            (None, Some(n)) if n > 0 => Ok(ModeCount::Auto { max_modes: n }),
            (None, None) => Ok(ModeCount::Fixed(1)),
            _ => Err(CliError::Config(
                "fit: set one positive value of either modes or max_modes".into(),
            )),
        }
    }

    pub fn max_mode_count(&self) -> usize {
        match self.mode_count() {
            Ok(ModeCount::Fixed(n)) | Ok(ModeCount::Auto { max_modes: n }) => n,
            Err(_) => 1,
        }
    }

    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            starts: self.starts,
            seed,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub omega_min_ev: Option<f64>,
    pub omega_max_ev: Option<f64>,
    pub omega_points: usize,
    /// Pair maps only: span `[ω_LP − margin, ω_UP + margin]` at `k_L`
    /// instead of a fixed window.
    pub polariton_margin_ev: Option<f64>,
    pub e_in_v_per_nm: Option<f64>,
    pub power_w_per_cm2: Option<f64>,
    pub polarization: [f64; 3],
    #[serde(default)]
    pub gamma_nr_ev: f64,
}

impl DriveConfig {
    /// Incident field amplitude, V/nm.
    pub fn e_in(&self) -> Result<f64> {
        let e = match (self.e_in_v_per_nm, self.power_w_per_cm2) {
            (Some(e), None) => e,
            (None, Some(p)) if p >= 0.0 => units::field_from_power_density(p),
            _ => {
                return Err(CliError::Config(
                    "drive: set exactly one of e_in_v_per_nm and a non-negative power_w_per_cm2".into(),
                ))
            }
        };
        if !(e > 0.0) || !e.is_finite() {
            return Err(CliError::Config(format!("drive: incident field must be positive, got {e}")));
        }
        Ok(e)
    }

    /// Fixed frequency window, if configured.
    pub fn omega_grid(&self) -> Result<Vec<f64>> {
        match (self.omega_min_ev, self.omega_max_ev) {
            (Some(lo), Some(hi)) => linspace("drive", lo, hi, self.omega_points),
            _ => Err(CliError::Config("drive: omega_min_ev and omega_max_ev are required".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairgenConfig {
    /// `|k_L|` along `direction`.
    pub k_l_pi_over_a: f64,
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    pub k_step_pi_over_a: f64,
    /// Grid points on each side of `k_L`.
    pub k_points_each_side: usize,
    /// `V_d / V_B`.
    pub vd_fraction: f64,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_true")]
    pub include_beam_splitter: bool,
    #[serde(default = "default_max_dimension")]
    pub max_dimension: usize,
}

fn default_direction() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_truncation() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_max_dimension() -> usize {
    DEFAULT_MAX_DIMENSION
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Default output directory; `--out-dir` wins.
    pub dir: Option<String>,
}

fn linspace(section: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(CliError::Config(format!("{section}: the frequency grid is empty")));
    }
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(CliError::Config(format!(
            "{section}: need 0 < omega_min_ev ≤ omega_max_ev, got [{lo}, {hi}]"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Parse a TOML document, apply `key=value` overrides and deserialize,
/// reporting the dotted path of any schema violation.
pub fn load(path: &Path, overrides: &[String]) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let config = parse(&text, overrides)?;
    Ok((config, text))
}

pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Schema(e.to_string()))?;
    let mut value = toml::Value::Table(doc);
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema(format!("at `{path}`: {}", e.into_inner().message()))
    })
}

fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Schema(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Schema(format!("override key `{key}` is malformed")));
    }
    set_path(doc, &parts, parse_value(raw.trim()))
        .map_err(|m| CliError::Schema(format!("override `{key}`: {m}")))
}

/// Dotted path into nested tables; numeric segments index arrays.
fn set_path(node: &mut toml::Value, parts: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    let (head, rest) = parts.split_first().expect("non-empty path");
    let child = match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value);
                return Ok(());
            }
            t.entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        }
        toml::Value::Array(items) => {
            let idx: usize = head.parse().map_err(|_| format!("`{head}` indexes a list"))?;
            let len = items.len();
            let item = items.get_mut(idx).ok_or_else(|| format!("index {idx} out of range (len {len})"))?;
            if rest.is_empty() {
                *item = value;
                return Ok(());
            }
            item
        }
        _ => return Err(format!("`{head}` is below a scalar")),
    };
    set_path(child, rest, value)
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Validated physical inputs derived from a [`RunConfig`].
#[derive(Clone)]
pub struct Resolved {
    pub env: Environment,
    pub emitters: Vec<EmitterSpec>,
    pub labels: Vec<String>,
    pub materials: BTreeMap<String, MaterialModel>,
    /// `|a1|`, nm.
    pub a: f64,
}

impl Resolved {
    /// Keep only the emitters named in `labels`, in the given order.
    pub fn select(&self, labels: Option<&[String]>) -> Result<Resolved> {
        let Some(labels) = labels else {
            return Ok(self.clone());
        };
        if labels.is_empty() {
            return Err(CliError::Config("fit.emitters must not be empty".into()));
        }
        let mut out = self.clone();
        out.emitters.clear();
        out.labels.clear();
        for l in labels {
            let i = self
                .labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| CliError::Config(format!("fit.emitters: unknown emitter label `{l}`")))?;
            out.emitters.push(self.emitters[i]);
            out.labels.push(l.clone());
        }
        Ok(out)
    }
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved> {
        let lattice = LatticeSpec::new(self.lattice.a1_nm, self.lattice.a2_nm)?;
        let mut materials = BTreeMap::new();
        for (name, m) in &self.material {
            materials.insert(name.clone(), m.resolve(name)?);
        }
        let mut scatterers = Vec::with_capacity(self.scatterers.len());
        for (i, s) in self.scatterers.iter().enumerate() {
            let material = *materials.get(&s.material).ok_or_else(|| {
                CliError::Config(format!("scatterers.{i}: unknown material `{}`", s.material))
            })?;
            scatterers.push(ScattererSpec {
                position_nm: s.position_nm,
                radius_nm: s.radius_nm,
                material,
            });
        }
        let ewald = EwaldParams {
            splitting: self.ewald.splitting_invnm,
            real_cutoff: self.ewald.real_cutoff,
            reciprocal_cutoff: self.ewald.reciprocal_cutoff,
            tolerance: self.ewald.tolerance,
            finite_difference: self.ewald.finite_difference,
        };
        let env = Environment::new(lattice, scatterers, ewald)?;
        if self.emitters.is_empty() {
            return Err(CliError::Config("at least one [[emitters]] entry is required".into()));
        }
        let mut emitters = Vec::with_capacity(self.emitters.len());
        let mut labels = Vec::with_capacity(self.emitters.len());
        for (i, e) in self.emitters.iter().enumerate() {
            let spec = e.spec();
            spec.validate().map_err(|err| CliError::Config(format!("emitters.{i}: {err}")))?;
            env.check_outside(&spec.position())
                .map_err(|err| CliError::Config(format!("emitters.{i}: {err}")))?;
            emitters.push(spec);
            labels.push(e.label.clone().unwrap_or_else(|| format!("E{i}")));
        }
        let a = lattice.a1.norm();
        Ok(Resolved {
            env,
            emitters,
            labels,
            materials,
            a,
        })
    }

    pub fn scan(&self) -> Result<&ScanConfig> {
        self.scan.as_ref().ok_or_else(|| CliError::Config("missing [scan] section".into()))
    }

    pub fn fit(&self) -> Result<&FitConfig> {
        self.fit.as_ref().ok_or_else(|| CliError::Config("missing [fit] section".into()))
    }

    pub fn drive(&self) -> Result<&DriveConfig> {
        self.drive.as_ref().ok_or_else(|| CliError::Config("missing [drive] section".into()))
    }

    pub fn pairgen(&self) -> Result<&PairgenConfig> {
        self.pairgen.as_ref().ok_or_else(|| CliError::Config("missing [pairgen] section".into()))
    }
}

impl ScanConfig {
    pub fn omega_grid(&self) -> Result<Vec<f64>> {
        linspace("scan", self.omega_min_ev, self.omega_max_ev, self.omega_points)
    }

    pub fn k_samples(&self, lattice: &LatticeSpec, a: f64) -> Result<Vec<KSample>> {
        match (&self.path, self.k_start_pi_over_a, self.k_stop_pi_over_a) {
            (Some(names), None, None) => {
                if self.k_points.is_some() {
                    return Err(CliError::Config("scan: k_points applies to straight lines only".into()));
                }
                let n = self.samples_per_segment.unwrap_or(0);
                if names.len() < 2 || n == 0 {
                    return Err(CliError::Config(
                        "scan: a path needs ≥ 2 points and samples_per_segment ≥ 1".into(),
                    ));
                }
                let points = names
                    .iter()
                    .map(|s| {
                        KPath::named_point(s)
                            .ok_or_else(|| CliError::Config(format!("scan: unknown high-symmetry point `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(bz_path(lattice, &KPath::through(&points, n))?)
            }
            (None, Some(start), Some(stop)) => {
                if self.samples_per_segment.is_some() {
                    return Err(CliError::Config("scan: samples_per_segment applies to named paths only".into()));
                }
                let n = self.k_points.unwrap_or(0);
                if n == 0 {
                    return Err(CliError::Config("scan: the momentum grid is empty".into()));
                }
                let s = Vec2::new(start[0], start[1]) * PI / a;
                let e = Vec2::new(stop[0], stop[1]) * PI / a;
                Ok((0..n)
                    .map(|i| {
                        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                        let k = s + (e - s) * t;
                        KSample {
                            k,
                            arclength: (k - s).norm(),
                        }
                    })
                    .collect())
            }
            _ => Err(CliError::Config(
                "scan: give either `path` or both `k_start_pi_over_a` and `k_stop_pi_over_a`".into(),
            )),
        }
    }
}

impl PairgenConfig {
    pub fn direction(&self) -> Result<Vec2> {
        let d = Vec2::new(self.direction[0], self.direction[1]);
        if (d.norm() - 1.0).abs() > 1e-12 {
            return Err(CliError::Config("pairgen: direction must be a unit vector".into()));
        }
        Ok(d)
    }

    pub fn k_l(&self, a: f64) -> Result<Vec2> {
        Ok(self.direction()? * self.k_l_pi_over_a * PI / a)
    }

    /// `k_L + j·step·direction`, `j = −n..=n`; mirror partners share the grid.
    pub fn k_grid(&self, a: f64) -> Result<Vec<Vec2>> {
        if !(self.k_step_pi_over_a > 0.0) {
            return Err(CliError::Config("pairgen: k_step_pi_over_a must be positive".into()));
        }
        if self.k_points_each_side == 0 {
            return Err(CliError::Config("pairgen: the momentum grid is empty".into()));
        }
        let dir = self.direction()?;
        let k_l = self.k_l(a)?;
        let step = self.k_step_pi_over_a * PI / a;
        let n = self.k_points_each_side as i64;
        Ok((-n..=n).map(|j| k_l + dir * (step * j as f64)).collect())
    }

    pub fn options(&self, gamma_nr: f64) -> PairOptions {
        PairOptions {
            truncation: self.truncation,
            include_beam_splitter: self.include_beam_splitter,
            gamma_nr,
            max_dimension: self.max_dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vd_fraction > 0.0) || self.vd_fraction > 1.0 {
            return Err(CliError::Config("pairgen: vd_fraction must lie in (0, 1]".into()));
        }
        if self.truncation < 2 {
            return Err(CliError::Config("pairgen: truncation must be ≥ 2".into()));
        }
        Ok(())
    }
}
