//! Three-qubit NV model: electron spin, host ¹⁴N and a proximal ¹³C.
//!
//! Basis ordering is electron ⊗ nitrogen ⊗ carbon, index `4e + 2n + c`.
//! Electron `|0⟩` is m_s = 0 and `|1⟩` is m_s = −1; nuclear index 0 is `|↑⟩`
//! (m_I = +½) and 1 is `|↓⟩` (m_I = −½).
//!
//! Units: times in ns, couplings in MHz (ordinary frequency), angles in rad.
//! The secular hyperfine Hamiltonian is diagonal, so evolution is a phase per
//! basis state. The weakly coupled spin bath is not simulated microscopically;
//! it enters as a multiplicative dephasing envelope on the electron coherences.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{evolve_diagonal, partial_trace, ComplexMatrix, DensityMatrix, PureState, C64};

/// MHz × ns → rad.
pub const MHZ_NS_TO_RAD: f64 = 2.0 * PI * 1e-3;

const ELECTRON_SZ: [f64; 2] = [0.0, -1.0];
const NUCLEAR_IZ: [f64; 2] = [0.5, -0.5];

/// Hyperfine couplings and channel preparation angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// ¹⁴N parallel hyperfine coupling (MHz).
    pub a_n_par: f64,
    /// ¹³C parallel hyperfine coupling (MHz).
    pub a_c_par: f64,
    /// Nitrogen channel opening angle.
    pub phi1: f64,
    /// Nitrogen pulse-delay phase.
    pub varphi1: f64,
    /// Carbon channel opening angle.
    pub phi2: f64,
    /// Carbon pulse-delay phase.
    pub varphi2: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { a_n_par: -2.16, a_c_par: 12.8, phi1: 0.0, varphi1: 0.0, phi2: 0.0, varphi2: 0.0 }
    }
}

impl SystemConfig {
    pub fn with_angles(phi1: f64, phi2: f64) -> Self {
        Self { phi1, phi2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("a_n_par", self.a_n_par)?;
        check_finite("a_c_par", self.a_c_par)?;
        check_polar("phi1", self.phi1)?;
        check_polar("phi2", self.phi2)?;
        check_azimuth("varphi1", self.varphi1)?;
        check_azimuth("varphi2", self.varphi2)?;
        Ok(())
    }
}

/// Parameters of the fitted spin-bath QFI envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// Dephasing time (ns).
    pub t2_star: f64,
    /// Stretch exponent.
    pub alpha: f64,
    /// Tilt of the weakly coupled ¹³C.
    pub phi0: f64,
    /// Weakly coupled ¹³C hyperfine coupling (MHz).
    pub a_c0: f64,
    /// Phase offset of the weak-coupling oscillation.
    pub varphi0: f64,
    pub enabled: bool,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            t2_star: 1026.0,
            alpha: 0.89,
            phi0: 0.37 * PI,
            a_c0: 0.4,
            varphi0: 0.21 * PI,
            enabled: true,
        }
    }
}

impl BathConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2_star > 0.0 && self.t2_star.is_finite()) {
            return Err(invalid("t2_star", format!("must be > 0, got {}", self.t2_star)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(invalid("alpha", format!("must lie in (0, 2], got {}", self.alpha)));
        }
        check_polar("phi0", self.phi0)?;
        check_finite("a_c0", self.a_c0)?;
        check_finite("varphi0", self.varphi0)?;
        Ok(())
    }
}

/// Uniform time grid `t_start, t_start + dt, …` up to `t_end` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

/// 0–600 ns at 2 ns, the sampling used for figure datasets.
impl Default for TimeGrid {
    fn default() -> Self {
        Self { t_start: 0.0, t_end: 600.0, dt: 2.0 }
    }
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        let g = Self { t_start, t_end, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_end > self.t_start) {
            return Err(invalid("t_end", format!("must exceed t_start = {}", self.t_start)));
        }
        if self.t_start < 0.0 {
            return Err(invalid("t_start", format!("must be >= 0, got {}", self.t_start)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t_start + k as f64 * self.dt).collect()
    }
}

/// Which open system is simulated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Experiment {
    /// Electron qubit alone; nitrogen and carbon act as channels.
    #[default]
    ElectronQubit,
    /// Electron–carbon Bell pair; nitrogen acts as a channel.
    ElectronCarbonPair,
}

impl Experiment {
    /// Subsystems kept by the partial trace (electron first).
    fn kept(self) -> &'static [usize] {
        match self {
            Experiment::ElectronQubit => &[0],
            Experiment::ElectronCarbonPair => &[0, 2],
        }
    }

    pub fn open_dim(self) -> usize {
        1 << self.kept().len()
    }
}

impl TryFrom<u8> for Experiment {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Experiment::ElectronQubit),
            2 => Ok(Experiment::ElectronCarbonPair),
            other => Err(format!("experiment must be 1 or 2, got {other}")),
        }
    }
}

impl From<Experiment> for u8 {
    fn from(e: Experiment) -> u8 {
        match e {
            Experiment::ElectronQubit => 1,
            Experiment::ElectronCarbonPair => 2,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {v}")))
    }
}

fn check_polar(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=PI + 1e-12).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in [0, pi], got {v}")))
    }
}

fn check_azimuth(name: &'static str, v: f64) -> Result<()> {
    if (0.0..2.0 * PI).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in [0, 2pi), got {v}")))
    }
}

fn basis_index(e: usize, n: usize, c: usize) -> usize {
    4 * e + 2 * n + c
}

/// Diagonal of the hyperfine Hamiltonian in rad/ns.
pub fn hamiltonian_diagonal(cfg: &SystemConfig) -> [f64; 8] {
    let mut diag = [0.0; 8];
    for e in 0..2 {
        for n in 0..2 {
            for c in 0..2 {
                let s = ELECTRON_SZ[e];
                diag[basis_index(e, n, c)] =
                    MHZ_NS_TO_RAD * (cfg.a_n_par * s * NUCLEAR_IZ[n] + cfg.a_c_par * s * NUCLEAR_IZ[c]);
            }
        }
    }
    diag
}

/// Secular hyperfine Hamiltonian `A_n S_z I_z^n + A_c S_z I_z^c` (rad/ns), 8×8 diagonal.
pub fn build_hamiltonian(cfg: &SystemConfig) -> ComplexMatrix {
    ComplexMatrix::from_diag(&hamiltonian_diagonal(cfg))
}

/// `cos(φ/2)|↑⟩ + sin(φ/2)|↓⟩`.
pub fn nuclear_state(phi: f64) -> [f64; 2] {
    [(phi / 2.0).cos(), (phi / 2.0).sin()]
}

/// `|+⟩_e ⊗ |ψ(φ1)⟩_n ⊗ |ψ(φ2)⟩_c`, with the pulse-delay phases imprinted as a
/// conditional phase `exp(i m_I ϕ)` on the `|1⟩_e` branch.
pub fn prepare_experiment1(cfg: &SystemConfig) -> PureState {
    let nn = nuclear_state(cfg.phi1);
    let nc = nuclear_state(cfg.phi2);
    let mut amps = vec![C64::new(0.0, 0.0); 8];
    for e in 0..2 {
        for n in 0..2 {
            for c in 0..2 {
                let mag = FRAC_1_SQRT_2 * nn[n] * nc[c];
                let phase = if e == 1 {
                    NUCLEAR_IZ[n] * cfg.varphi1 + NUCLEAR_IZ[c] * cfg.varphi2
                } else {
                    0.0
                };
                amps[basis_index(e, n, c)] = C64::from_polar(mag, phase);
            }
        }
    }
    PureState::normalized(amps).expect("product of normalized factors")
}

/// `(|0⟩_e|↑⟩_c + |1⟩_e|↓⟩_c)/√2 ⊗ |ψ(φ1)⟩_n`.
///
/// The Bell pair joins the +1 and −1 eigenspaces of `(σ_z^e + σ_z^c)/2`.
pub fn prepare_experiment2(cfg: &SystemConfig) -> PureState {
    let nn = nuclear_state(cfg.phi1);
    let mut amps = vec![C64::new(0.0, 0.0); 8];
    for n in 0..2 {
        amps[basis_index(0, n, 0)] = C64::new(FRAC_1_SQRT_2 * nn[n], 0.0);
        amps[basis_index(1, n, 1)] = C64::from_polar(FRAC_1_SQRT_2 * nn[n], NUCLEAR_IZ[n] * cfg.varphi1);
    }
    PureState::normalized(amps).expect("product of normalized factors")
}

pub fn prepare(cfg: &SystemConfig, experiment: Experiment) -> PureState {
    match experiment {
        Experiment::ElectronQubit => prepare_experiment1(cfg),
        Experiment::ElectronCarbonPair => prepare_experiment2(cfg),
    }
}

/// Fitted bath QFI envelope
/// `exp[-(t/T₂*)^α] · [1 − sin²φ₀ sin²(π A_c0 t + ϕ₀/2)]`.
pub fn bath_envelope(t: f64, bath: &BathConfig) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if !bath.enabled {
        return Ok(1.0);
    }
    let decay = (-(t / bath.t2_star).powf(bath.alpha)).exp();
    let osc = (PI * bath.a_c0 * 1e-3 * t + bath.varphi0 / 2.0).sin().powi(2);
    Ok(decay * (1.0 - bath.phi0.sin().powi(2) * osc))
}

/// Multiplies every element whose electron indices differ by `factor`.
///
/// The electron is the leading tensor factor of `rho`.
pub fn dephase_electron(rho: &DensityMatrix, factor: f64) -> DensityMatrix {
    let mut m = rho.matrix().clone();
    let half = m.rows() / 2;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if (i / half) != (j / half) {
                m[(i, j)] *= factor;
            }
        }
    }
    DensityMatrix::from_matrix_unchecked(m)
}

/// Reduced open-system state at one time.
pub fn reduced_state(
    initial: &PureState,
    diag: &[f64; 8],
    bath: &BathConfig,
    t: f64,
    experiment: Experiment,
) -> Result<DensityMatrix> {
    let phases: Vec<f64> = diag.iter().map(|h| h * t).collect();
    let psi = evolve_diagonal(initial, &phases)?;
    let reduced = partial_trace(&psi.to_density(), &[2, 2, 2], experiment.kept())?;
    let envelope = bath_envelope(t, bath)?;
    Ok(dephase_electron(&reduced, envelope.sqrt()))
}

/// Reduced open-system states over the grid: exact evolution, partial trace,
/// then bath dephasing by `√Q_R(t)` on electron coherences.
pub fn reduced_system_trace(
    cfg: &SystemConfig,
    bath: &BathConfig,
    grid: &TimeGrid,
    experiment: Experiment,
) -> Result<Vec<DensityMatrix>> {
    cfg.validate()?;
    bath.validate()?;
    grid.validate()?;
    let initial = prepare(cfg, experiment);
    let diag = hamiltonian_diagonal(cfg);
    grid.points()
        .into_iter()
        .map(|t| reduced_state(&initial, &diag, bath, t, experiment))
        .collect()
}
