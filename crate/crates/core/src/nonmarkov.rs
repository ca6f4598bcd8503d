//! QFI flows, channel subflows, the inward-subflow non-Markovianity measure,
//! time-local dephasing rates and a master-equation propagator to cross-check
//! them against the exact reduced dynamics.
//!
//! Channel traces follow the convention
//! `Q_R = Q(t; 0, 0)`, `Q_nR = Q(t; φ1, 0)`, `Q_cR = Q(t; 0, φ2)`, so the full
//! QFI is reconstructed as `Q = Q_nR Q_cR / Q_R` and each subflow is
//! `I_i = Q ∂_t ln Q_i`, written without logarithms so that it stays finite at
//! dephasing nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, pauli, ComplexMatrix, DensityMatrix};
use crate::nv_model::{reduced_system_trace, BathConfig, Experiment, SystemConfig, TimeGrid};
use crate::qfi::open_system_qfi;

/// Channel factors below this are treated as dephasing nodes.
pub const NODE_TOL: f64 = 1e-9;
/// Default long-time horizon in units of T₂*.
pub const LONG_TIME_HORIZON_T2: f64 = 8.0;
/// Grid step for long-time measures (ns).
pub const LONG_TIME_DT: f64 = 0.1;
/// RK4 is stable for |λ dt| up to ~2.78; we stay below this.
pub const RK4_STABILITY: f64 = 2.5;

const GRID_TOL: f64 = 1e-9;

/// QFI sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub label: String,
}

impl QfiTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), found: values.len() });
        }
        if times.len() < 2 {
            return Err(Error::TooFewPoints { needed: 2, found: times.len() });
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > GRID_TOL * dt.max(1.0)) {
            return Err(Error::MisalignedGrids);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter { name: "values", reason: format!("non-finite sample {v}") });
        }
        Ok(Self { times, values, label: label.into() })
    }

    pub fn from_grid(grid: &TimeGrid, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(grid.points(), values, label)
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn aligned_with(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= GRID_TOL * a.abs().max(1.0))
    }

    pub fn with_values(&self, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(self.times.clone(), values, label)
    }
}

/// First derivative on a uniform grid: central differences inside,
/// second-order one-sided stencils at the two ends.
pub fn differentiate(trace: &QfiTrace) -> Result<Vec<f64>> {
    let y = &trace.values;
    let n = y.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, found: n });
    }
    let h = trace.dt();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    for k in 1..n - 1 {
        d[k] = (y[k + 1] - y[k - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    Ok(d)
}

/// Adjacent-average smoothing with an odd window; the window shrinks
/// symmetrically near the ends so every output stays centred.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 {
        return Err(Error::EvenWindow(window));
    }
    let n = values.len();
    let half = window / 2;
    Ok((0..n)
        .map(|k| {
            let h = half.min(k).min(n - 1 - k);
            let slice = &values[k - h..=k + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Total QFI flow and its per-channel subflows (1/ns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSet {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    pub sub_n: Vec<f64>,
    pub sub_c: Vec<f64>,
    pub sub_r: Vec<f64>,
    /// Allowed `max |total − Σ subflows|` from finite differencing.
    pub tolerance: f64,
}

impl FlowSet {
    pub fn subflow_sum(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.sub_n[k] + self.sub_c[k] + self.sub_r[k]).collect()
    }

    /// `max_t |total − (I_n + I_c + I_R)|`.
    pub fn residual(&self) -> f64 {
        self.total
            .iter()
            .zip(self.subflow_sum())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_consistent(&self) -> bool {
        self.residual() <= self.tolerance
    }

    fn channels(&self) -> [&[f64]; 3] {
        [&self.sub_n, &self.sub_c, &self.sub_r]
    }
}

fn check_aligned(traces: &[&QfiTrace]) -> Result<()> {
    let first = traces[0];
    if traces.iter().all(|t| first.aligned_with(t)) {
        Ok(())
    } else {
        Err(Error::MisalignedGrids)
    }
}

fn require_positive(trace: &QfiTrace, name: &'static str) -> Result<()> {
    if trace.values.iter().all(|&v| v.abs() == 0.0) {
        return Err(Error::AllZeroTrace(trace.label.clone()));
    }
    match trace.values.iter().position(|&v| v <= 0.0) {
        Some(k) => Err(Error::InvalidParameter {
            name,
            reason: format!("must be > 0 everywhere, got {} at t = {} ns", trace.values[k], trace.times[k]),
        }),
        None => Ok(()),
    }
}

/// Bound on the third derivative estimated by finite differences.
fn third_derivative_bound(y: &[f64], h: f64) -> f64 {
    y.windows(4)
        .map(|w| (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]).abs() / h.powi(3))
        .fold(0.0, f64::max)
}

/// Subflows from the three channel traces.
pub fn subflows(q_r: &QfiTrace, q_nr: &QfiTrace, q_cr: &QfiTrace) -> Result<FlowSet> {
    check_aligned(&[q_r, q_nr, q_cr])?;
    require_positive(q_r, "q_r")?;
    let dr = differentiate(q_r)?;
    let dn = differentiate(q_nr)?;
    let dc = differentiate(q_cr)?;
    let n = q_r.len();
    let (r, qn, qc) = (&q_r.values, &q_nr.values, &q_cr.values);

    let mut sub_n = Vec::with_capacity(n);
    let mut sub_c = Vec::with_capacity(n);
    let mut sub_r = Vec::with_capacity(n);
    for k in 0..n {
        sub_n.push((dn[k] - qn[k] * dr[k] / r[k]) * qc[k] / r[k]);
        sub_c.push((dc[k] - qc[k] * dr[k] / r[k]) * qn[k] / r[k]);
        sub_r.push(qc[k] * qn[k] * dr[k] / (r[k] * r[k]));
    }

    let full: Vec<f64> = (0..n).map(|k| qn[k] * qc[k] / r[k]).collect();
    let full = q_r.with_values(full, "reconstructed")?;
    let total = differentiate(&full)?;

    let h = q_r.dt();
    let bound = [r, qn, qc, &full.values]
        .iter()
        .map(|y| third_derivative_bound(y, h))
        .fold(0.0, f64::max);
    let scale = total.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tolerance = 10.0 * h * h * bound + 1e-12 * scale.max(1.0);

    Ok(FlowSet { times: q_r.times.clone(), total, sub_n, sub_c, sub_r, tolerance })
}

/// Cumulative trapezoid integral of `max(y, 0)`.
pub fn cumulative_positive_integral(times: &[f64], y: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(y.len());
    out.push(0.0);
    for k in 1..y.len() {
        acc += 0.5 * (y[k - 1].max(0.0) + y[k].max(0.0)) * (times[k] - times[k - 1]);
        out.push(acc);
    }
    out
}

/// `N(t_k)` on every grid point: the summed integrals of inward subflows.
pub fn measure_series(flows: &FlowSet) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = flows
        .channels()
        .iter()
        .map(|c| cumulative_positive_integral(&flows.times, c))
        .collect();
    (0..flows.times.len()).map(|k| parts.iter().map(|p| p[k]).sum()).collect()
}

/// Integral of the positive part of the total flow, on every grid point.
pub fn total_flow_measure_series(flows: &FlowSet) -> Vec<f64> {
    cumulative_positive_integral(&flows.times, &flows.total)
}

fn interpolate_cumulative(times: &[f64], cum: &[f64], t: f64) -> Result<f64> {
    let (start, end) = (times[0], times[times.len() - 1]);
    let slack = GRID_TOL * end.abs().max(1.0);
    if t < start - slack || t > end + slack {
        return Err(Error::OutOfRange { t, start, end });
    }
    let h = times[1] - times[0];
    let pos = ((t - start) / h).clamp(0.0, (times.len() - 1) as f64);
    let k = pos.floor() as usize;
    if k + 1 >= times.len() {
        return Ok(cum[times.len() - 1]);
    }
    let frac = pos - k as f64;
    Ok(cum[k] + frac * (cum[k + 1] - cum[k]))
}

/// Non-Markovianity measure `N(t) = Σ_i ∫₀ᵗ (|I_i| + I_i)/2 dτ`.
///
/// Between grid points the cumulative integral is interpolated linearly.
pub fn measure_n(flows: &FlowSet, t: f64) -> Result<f64> {
    interpolate_cumulative(&flows.times, &measure_series(flows), t)
}

/// Same integral taken over the total flow instead of the subflows.
pub fn measure_from_total(flows: &FlowSet, t: f64) -> Result<f64> {
    interpolate_cumulative(&flows.times, &total_flow_measure_series(flows), t)
}

/// The QFI of the open system and the three channel traces it decomposes into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTraces {
    pub q: QfiTrace,
    pub q_r: QfiTrace,
    pub q_nr: QfiTrace,
    pub q_cr: QfiTrace,
}

impl ChannelTraces {
    pub fn flows(&self) -> Result<FlowSet> {
        subflows(&self.q_r, &self.q_nr, &self.q_cr)
    }

    pub fn rates(&self) -> Result<RateSet> {
        extract_rates(&self.q_r, &self.q_nr, &self.q_cr)
    }
}

/// Channel configurations `(φ1, 0)`, `(0, φ2)` and `(0, 0)` derived from `cfg`.
pub fn channel_configs(cfg: &SystemConfig) -> [SystemConfig; 3] {
    let bath_only = SystemConfig { phi1: 0.0, phi2: 0.0, varphi1: 0.0, varphi2: 0.0, ..*cfg };
    let n_open = SystemConfig { phi2: 0.0, varphi2: 0.0, ..*cfg };
    let c_open = SystemConfig { phi1: 0.0, varphi1: 0.0, ..*cfg };
    [bath_only, n_open, c_open]
}

/// QFI of the open system from the exact reduced states.
pub fn qfi_trace(
    cfg: &SystemConfig,
    bath: &BathConfig,
    grid: &TimeGrid,
    experiment: Experiment,
    label: &str,
) -> Result<QfiTrace> {
    let values = reduced_system_trace(cfg, bath, grid, experiment)?
        .iter()
        .map(|rho| open_system_qfi(rho, experiment))
        .collect::<Result<Vec<f64>>>()?;
    QfiTrace::from_grid(grid, values, label)
}

/// Simulates the full QFI and the three channel traces.
///
/// In the two-qubit experiment the carbon belongs to the open system, so
/// `Q_cR` coincides with `Q_R`.
pub fn simulate_channel_traces(
    cfg: &SystemConfig,
    bath: &BathConfig,
    grid: &TimeGrid,
    experiment: Experiment,
) -> Result<ChannelTraces> {
    let [bath_only, n_open, c_open] = channel_configs(cfg);
    let q = qfi_trace(cfg, bath, grid, experiment, "q")?;
    let q_r = qfi_trace(&bath_only, bath, grid, experiment, "q_r")?;
    let q_nr = qfi_trace(&n_open, bath, grid, experiment, "q_nr")?;
    let q_cr = match experiment {
        Experiment::ElectronQubit => qfi_trace(&c_open, bath, grid, experiment, "q_cr")?,
        Experiment::ElectronCarbonPair => QfiTrace { label: "q_cr".into(), ..q_r.clone() },
    };
    Ok(ChannelTraces { q, q_r, q_nr, q_cr })
}

/// Long-time measure `N(t → ∞)`, evaluated at `horizon` (ns) on a 0.1 ns grid
/// for the electron-qubit experiment. `None` uses `8 T₂*`.
pub fn long_time_measure(cfg: &SystemConfig, bath: &BathConfig, horizon: Option<f64>) -> Result<f64> {
    let horizon = horizon.unwrap_or(LONG_TIME_HORIZON_T2 * bath.t2_star);
    let grid = TimeGrid::new(0.0, horizon, LONG_TIME_DT)?;
    let traces = simulate_channel_traces(cfg, bath, &grid, Experiment::ElectronQubit)?;
    let flows = traces.flows()?;
    Ok(*measure_series(&flows).last().expect("grid is nonempty"))
}

/// Time-dependent dephasing rates `γ_i = −½ ∂_t ln Q_i` (1/ns).
///
/// Samples where a channel factor is within [`NODE_TOL`] of zero are NaN and
/// listed in `masked`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub times: Vec<f64>,
    pub gamma_n: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub gamma_r: Vec<f64>,
    pub masked: Vec<usize>,
}

impl RateSet {
    /// Summed dephasing rate at sample `k`.
    pub fn total(&self, k: usize) -> f64 {
        self.gamma_n[k] + self.gamma_c[k] + self.gamma_r[k]
    }

    /// Constant rates on a grid, mostly for tests and calibration.
    pub fn constant(grid: &TimeGrid, gamma_n: f64, gamma_c: f64, gamma_r: f64) -> Self {
        let n = grid.len();
        Self {
            times: grid.points(),
            gamma_n: vec![gamma_n; n],
            gamma_c: vec![gamma_c; n],
            gamma_r: vec![gamma_r; n],
            masked: Vec::new(),
        }
    }
}

pub fn extract_rates(q_r: &QfiTrace, q_nr: &QfiTrace, q_cr: &QfiTrace) -> Result<RateSet> {
    check_aligned(&[q_r, q_nr, q_cr])?;
    for t in [q_r, q_nr, q_cr] {
        if t.values.iter().all(|&v| v == 0.0) {
            return Err(Error::AllZeroTrace(t.label.clone()));
        }
    }
    let dr = differentiate(q_r)?;
    let dn = differentiate(q_nr)?;
    let dc = differentiate(q_cr)?;
    let n = q_r.len();
    let mut rates = RateSet {
        times: q_r.times.clone(),
        gamma_n: vec![f64::NAN; n],
        gamma_c: vec![f64::NAN; n],
        gamma_r: vec![f64::NAN; n],
        masked: Vec::new(),
    };
    for k in 0..n {
        let r = q_r.values[k];
        let mut masked = false;
        if r < NODE_TOL {
            masked = true;
        } else {
            rates.gamma_r[k] = -0.5 * dr[k] / r;
            let (qn, qc) = (q_nr.values[k], q_cr.values[k]);
            if qn / r < NODE_TOL {
                masked = true;
            } else {
                rates.gamma_n[k] = -0.5 * (dn[k] / qn - dr[k] / r);
            }
            if qc / r < NODE_TOL {
                masked = true;
            } else {
                rates.gamma_c[k] = -0.5 * (dc[k] / qc - dr[k] / r);
            }
        }
        if masked {
            rates.masked.push(k);
        }
    }
    Ok(rates)
}

/// Removes the electron precession phase from a single-qubit state
/// (`ρ₀₁ → |ρ₀₁|`), i.e. moves it to the frame where the time-local
/// generator has no Hamiltonian part.
pub fn rotating_frame(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    let mut m = rho.matrix().clone();
    let c = m[(0, 1)].norm();
    m[(0, 1)] = c.into();
    m[(1, 0)] = c.into();
    DensityMatrix::new(m)
}

/// Integrates `∂ρ/∂t = Σ_j γ_j(t) (A ρ A† − ½{A†A, ρ})` with
/// `A = σ_z^e/√2 ⊗ I` (so coherences decay as `exp(−∫Σγ)`) by classical RK4.
///
/// Rates are taken at grid points and interpolated linearly at half steps.
/// The electron is the leading tensor factor of `rho0`.
pub fn lindblad_propagate(rates: &RateSet, rho0: &DensityMatrix, grid: &TimeGrid) -> Result<Vec<DensityMatrix>> {
    let times = grid.points();
    if times.len() != rates.times.len()
        || times.iter().zip(&rates.times).any(|(a, b)| (a - b).abs() > GRID_TOL * a.abs().max(1.0))
    {
        return Err(Error::MisalignedGrids);
    }
    let gamma: Vec<f64> = (0..times.len()).map(|k| rates.total(k)).collect();
    if let Some(k) = gamma.iter().position(|g| !g.is_finite()) {
        return Err(Error::MaskedRate(times[k]));
    }
    let max_rate = gamma.iter().map(|g| g.abs()).fold(0.0, f64::max);
    if max_rate > 0.0 {
        let bound = RK4_STABILITY / max_rate;
        if grid.dt > bound {
            return Err(Error::StepTooLarge { dt: grid.dt, bound });
        }
    }

    let d = rho0.dim();
    if d % 2 != 0 {
        return Err(Error::DimensionMismatch { expected: 2, found: d });
    }
    let z = kron(&pauli::z(), &ComplexMatrix::identity(d / 2));
    // Σ γ (AρA − ½{A†A, ρ}) with A = Z/√2 reduces to ½ Γ (ZρZ − ρ).
    let rhs = |g: f64, rho: &ComplexMatrix| -> ComplexMatrix {
        let zrz = &(&z * rho) * &z;
        (&zrz - rho).scale_re(0.5 * g)
    };

    let h = grid.dt;
    let mut rho = rho0.matrix().clone();
    let mut out = Vec::with_capacity(times.len());
    out.push(rho0.clone());
    for k in 0..times.len() - 1 {
        let (g0, g1) = (gamma[k], gamma[k + 1]);
        let gm = 0.5 * (g0 + g1);
        let k1 = rhs(g0, &rho);
        let k2 = rhs(gm, &(&rho + &k1.scale_re(h / 2.0)));
        let k3 = rhs(gm, &(&rho + &k2.scale_re(h / 2.0)));
        let k4 = rhs(g1, &(&rho + &k3.scale_re(h)));
        let incr = &(&k1 + &k2.scale_re(2.0)) + &(&k3.scale_re(2.0) + &k4);
        rho = &rho + &incr.scale_re(h / 6.0);
        out.push(DensityMatrix::new(rho.clone())?);
    }
    Ok(out)
}
