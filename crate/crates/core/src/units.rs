//! Physical constants in the internal unit system (eV, nm, e, ħ = 1).

use std::f64::consts::PI;

/// ħc in eV·nm.
pub const HBAR_C_EV_NM: f64 = 197.326_980_4;

/// ħ in eV·s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;

/// e²/(4πε₀) in eV·nm.
pub const COULOMB_EV_NM: f64 = 1.439_964_548;

/// One Debye in e·nm.
pub const DEBYE_E_NM: f64 = 0.020_819_4;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Vacuum permittivity in F/m.
pub const EPSILON0_SI: f64 = 8.854_187_812_8e-12;

/// Elementary charge in C (also J per eV).
pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;

/// Folded prefactor turning `ω² d² n·Im𝒢·n` into an energy:
/// `J[eV] = SPECTRAL_DENSITY_PREFACTOR · ω[eV]² · d[e·nm]² · 𝒢[nm⁻¹]`.
///
/// Equals `μ₀/(πħ)` with `e²/ε₀ = 4π · COULOMB_EV_NM` and `μ₀ = 1/(ε₀c²)`.
pub const SPECTRAL_DENSITY_PREFACTOR: f64 = 4.0 * COULOMB_EV_NM / (HBAR_C_EV_NM * HBAR_C_EV_NM);

/// Vacuum wavenumber in nm⁻¹ for a photon energy in eV.
#[inline]
pub fn wavenumber(omega_ev: f64) -> f64 {
    omega_ev / HBAR_C_EV_NM
}

/// Free-space spontaneous emission rate `ω³d²/(3πε₀ħc³)` in eV.
pub fn free_space_decay_rate(omega_ev: f64, dipole_debye: f64) -> f64 {
    let d = dipole_debye * DEBYE_E_NM;
    let e2_over_eps0 = 4.0 * PI * COULOMB_EV_NM;
    omega_ev.powi(3) * d * d * e2_over_eps0 / (3.0 * PI * HBAR_C_EV_NM.powi(3))
}

/// Photon-number flux density (photons per cm² per s) of a plane wave with
/// field amplitude `e_in` (V/nm) at photon energy `omega_ev`.
pub fn photon_flux_per_cm2_s(e_in_v_per_nm: f64, omega_ev: f64) -> f64 {
    let e_si = e_in_v_per_nm * 1e9;
    let intensity_w_m2 = 0.5 * SPEED_OF_LIGHT_M_S * EPSILON0_SI * e_si * e_si;
    let photon_j = omega_ev * ELEMENTARY_CHARGE_C;
    intensity_w_m2 / photon_j * 1e-4
}

/// Field amplitude (V/nm) of a plane wave carrying `power_w_cm2`.
pub fn field_from_power_density(power_w_cm2: f64) -> f64 {
    let intensity_w_m2 = power_w_cm2 * 1e4;
    (2.0 * intensity_w_m2 / (SPEED_OF_LIGHT_M_S * EPSILON0_SI)).sqrt() * 1e-9
}

/// Rate in eV converted to s⁻¹.
#[inline]
pub fn rate_per_second(rate_ev: f64) -> f64 {
    rate_ev / HBAR_EV_S
}

/// All constants, keyed by name, for run manifests.
pub fn constants_table() -> Vec<(&'static str, f64)> {
    vec![
        ("hbar_c_ev_nm", HBAR_C_EV_NM),
        ("hbar_ev_s", HBAR_EV_S),
        ("coulomb_ev_nm", COULOMB_EV_NM),
        ("debye_e_nm", DEBYE_E_NM),
        ("speed_of_light_m_s", SPEED_OF_LIGHT_M_S),
        ("epsilon0_si", EPSILON0_SI),
        ("spectral_density_prefactor", SPECTRAL_DENSITY_PREFACTOR),
    ]
}
