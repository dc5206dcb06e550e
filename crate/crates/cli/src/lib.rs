//! `metaqed` command-line driver: config parsing, run directories and the
//! scan/fit/pair-generation workflows.
//!
//! Exit codes: 0 success, 2 finished with poisoned cells, 1 fatal error.

// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{Job, Outcome};
use config::RunConfig;
use error::{CliError, Result};
use output::{content_hash, Manifest, RunDir, Start};

#[derive(Debug, Parser)]
#[command(name = "metaqed", version, about = "Spectral densities, few-mode fits and pair-generation maps of emitter-array metasurfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(value_name = "CONFIG")]
    pub config_path: Option<PathBuf>,
    #[arg(long = "config", value_name = "CONFIG", conflicts_with = "config_path")]
    pub config_flag: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue an interrupted run in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Set a config key, e.g. `--override drive.gamma_nr_ev=1e-6`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Stop after writing this many table chunks, as if interrupted.
    #[arg(long, hide = true)]
    pub stop_after_chunks: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Spectral density J(k, ω) along the scan path.
    SpectralDensity(Common),
    /// Few-mode fits at each scan momentum.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Seed each fit with the model at the previous path point.
        #[arg(long)]
        along_path: bool,
    },
    /// Polariton branches of the fitted models along the scan path.
    Dispersion(Common),
    /// Local field |E_loc|/|Ω_free| under plane-wave driving.
    LocalField(Common),
    /// Two-photon emission rate map around a laser momentum.
    Pairgen {
        #[command(flatten)]
        common: Common,
        /// Laser momentum in units of π/a.
        #[arg(long = "kL")]
        k_l: Option<f64>,
        /// Momentum-space collection window V_d/V_B.
        #[arg(long = "Vd-fraction")]
        vd_fraction: Option<f64>,
        /// Incident field amplitude, V/nm.
        #[arg(long = "Ein")]
        e_in: Option<f64>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::SpectralDensity(c) | Command::Dispersion(c) | Command::LocalField(c) => c,
            Command::Fit { common, .. } | Command::Pairgen { common, .. } => common,
        }
    }

    pub fn stem(&self) -> &'static str {
        match self {
            Command::SpectralDensity(_) => "spectral_density",
            Command::Fit { .. } => "fit",
            Command::Dispersion(_) => "dispersion",
            Command::LocalField(_) => "local_field",
            Command::Pairgen { .. } => "pairgen",
        }
    }
}

/// Apply subcommand flags on top of file and `--override` values.
fn apply_flags(cmd: &Command, cfg: &mut RunConfig) -> Result<()> {
    if let Some(seed) = cmd.common().seed {
        cfg.seed = seed;
    }
    match cmd {
        Command::Fit { along_path: true, .. } => {
            let fit = cfg.fit.as_mut().ok_or_else(|| CliError::Config("missing [fit] section".into()))?;
            fit.continuation = true;
        }
        Command::Pairgen {
            k_l, vd_fraction, e_in, ..
        } => {
            if k_l.is_some() || vd_fraction.is_some() {
                let pg = cfg
                    .pairgen
                    .as_mut()
                    .ok_or_else(|| CliError::Config("missing [pairgen] section".into()))?;
                if let Some(k) = k_l {
                    pg.k_l_pi_over_a = *k;
                }
                if let Some(v) = vd_fraction {
                    pg.vd_fraction = *v;
                }
            }
            if let Some(e) = e_in {
                let d = cfg.drive.as_mut().ok_or_else(|| CliError::Config("missing [drive] section".into()))?;
                d.e_in_v_per_nm = Some(*e);
                d.power_w_per_cm2 = None;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Check every grid and section a subcommand needs before touching disk.
fn preflight(cmd: &Command, cfg: &RunConfig, res: &config::Resolved) -> Result<()> {
    let path = || cfg.scan()?.k_samples(&res.env.lattice, res.a);
    let fit = || -> Result<()> {
        let f = cfg.fit()?;
        f.mode_count()?;
        if f.points < 2 || !(f.omega_max_ev > f.omega_min_ev) || !(f.omega_min_ev > 0.0) {
            return Err(CliError::Config("fit: need ≥ 2 points and 0 < omega_min_ev < omega_max_ev".into()));
        }
        Ok(())
    };
    match cmd {
        Command::SpectralDensity(_) => {
            path()?;
            cfg.scan()?.omega_grid()?;
        }
        Command::Fit { .. } | Command::Dispersion(_) => {
            path()?;
            fit()?;
        }
        Command::LocalField(_) => {
            path()?;
            fit()?;
            let d = cfg.drive()?;
            d.omega_grid()?;
            d.e_in()?;
        }
        Command::Pairgen { .. } => {
            fit()?;
            let pg = cfg.pairgen()?;
            pg.validate()?;
            pg.k_grid(res.a)?;
            let d = cfg.drive()?;
            d.e_in()?;
            if d.polariton_margin_ev.is_none() {
                d.omega_grid()?;
            } else if d.omega_points == 0 {
                return Err(CliError::Config("drive: the frequency grid is empty".into()));
            }
        }
    }
    Ok(())
}

/// Hash of everything that determines the CSV bodies.
pub fn config_hash(stem: &str, cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output.dir = None;
    let body = serde_json::to_vec(&json!({ "subcommand": stem, "config": c }))?;
    Ok(content_hash(&body))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Run one subcommand; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let cmd = cli.command;
    let common = cmd.common().clone();
    let config_path = common
        .config_path
        .clone()
        .or(common.config_flag.clone())
        .ok_or_else(|| CliError::Config("no config file given (positional or --config)".into()))?;
    let (mut cfg, raw) = config::load(&config_path, &common.overrides)?;
    apply_flags(&cmd, &mut cfg)?;
    let mut res = cfg.resolve()?;
    if !matches!(cmd, Command::SpectralDensity(_)) {
        if let Some(fit) = &cfg.fit {
            res = res.select(fit.emitters.as_deref())?;
        }
    }
    preflight(&cmd, &cfg, &res)?;

    if let Some(n) = common.threads {
        // Ignore a pool that is already set (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("metaqed-out"));
    let stem = cmd.stem();
    let hash = config_hash(stem, &cfg)?;
    let mut run = RunDir::new(out_dir, stem, hash.clone(), common.stop_after_chunks);
    let started = unix_now();
    let resumed = match run.start(common.resume)? {
        Start::Complete(code) => {
            eprintln!("{stem}: run in {} is already complete", run.dir.display());
            return Ok(code);
        }
        Start::Continue => true,
        Start::Fresh => false,
    };

    let mut outcome = Outcome::default();
    let job = Job {
        cfg: &cfg,
        res: &res,
        run: &mut run,
        resume: resumed,
    };
    match &cmd {
        Command::SpectralDensity(_) => commands::spectral_density_cmd(job, &mut outcome)?,
        Command::Fit { .. } => commands::fit_cmd(job, &mut outcome)?,
        Command::Dispersion(_) => commands::dispersion_cmd(job, &mut outcome)?,
        Command::LocalField(_) => commands::local_field_cmd(job, &mut outcome)?,
        Command::Pairgen { .. } => commands::pairgen_cmd(job, &mut outcome)?,
    }

    let poisoned: usize = outcome.outputs.iter().map(|o| o.poisoned).sum();
    if poisoned > 0 {
        outcome.warnings.push(format!("{poisoned} poisoned cells (NaN with non-zero error_code)"));
    }
    let exit_code = if poisoned > 0 { 2 } else { 0 };
    let mut derived = outcome.derived;
    derived.insert(
        "materials".into(),
        serde_json::to_value(&res.materials)?,
    );
    derived.insert("lattice_constant_nm".into(), json!(res.a));
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: stem.into(),
        config_path: config_path.display().to_string(),
        config_hash: hash,
        config_file_hash: content_hash(raw.as_bytes()),
        overrides: common.overrides.clone(),
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        resolved_config: serde_json::to_value(&cfg)?,
        derived: serde_json::Value::Object(derived),
        constants: metaqed_core::units::constants_table()
            .into_iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect(),
        timings: outcome.timings,
        warnings: outcome.warnings,
        outputs: outcome.outputs,
        extra_files: outcome.extra_files,
        resumed,
        status: "complete".into(),
        exit_code,
        started_unix: started,
        finished_unix: unix_now(),
    };
    run.finish(&manifest)?;
    Ok(exit_code)
}
