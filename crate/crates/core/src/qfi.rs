//! Quantum Fisher information for phase imprinting by collective σ_z generators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, kron, pauli, ComplexMatrix, DensityMatrix, HERMITIAN_TOL};
use crate::nv_model::{bath_envelope, BathConfig, Experiment, SystemConfig};

/// Pairs with `λi + λj` below this are skipped in the spectral sum.
pub const DEGENERATE_PAIR_TOL: f64 = 1e-12;

/// Two-qubit QFI above this certifies metrologically useful entanglement.
pub const ENTANGLEMENT_THRESHOLD: f64 = 2.0;

/// Hermitian generator of the phase imprint `exp(-iθO)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator(ComplexMatrix);

impl Generator {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let err = m.hermiticity_error();
        if err > HERMITIAN_TOL {
            return Err(Error::NotHermitian(err));
        }
        Ok(Self(m))
    }

    /// `σ_z / 2` on one qubit.
    pub fn spin_z() -> Self {
        Self(pauli::z().scale_re(0.5))
    }

    /// `Σ_k σ_z^(k) / 2` on `n` qubits.
    pub fn collective_z(n: usize) -> Self {
        let mut sum = ComplexMatrix::zeros(1 << n, 1 << n);
        for k in 0..n {
            let mut term = ComplexMatrix::identity(1);
            for j in 0..n {
                let f = if j == k { pauli::z() } else { ComplexMatrix::identity(2) };
                term = kron(&term, &f);
            }
            sum = &sum + &term;
        }
        Self(sum.scale_re(0.5))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    /// Upper bound `(λ_max − λ_min)²` on the QFI for this generator.
    pub fn qfi_bound(&self) -> f64 {
        let (v, _) = eigh(&self.0).expect("generator is Hermitian");
        let spread = v[v.len() - 1] - v[0];
        spread * spread
    }
}

/// Mixed-state QFI via the spectral decomposition of `rho`:
/// `Q = 2 Σ (λi − λj)² / (λi + λj) |⟨i|O|j⟩|²`.
pub fn qfi_general(rho: &DensityMatrix, gen: &Generator) -> Result<f64> {
    if rho.dim() != gen.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: gen.dim() });
    }
    let (vals, vecs) = eigh(rho.matrix())?;
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let o = vecs.adjoint().matmul(gen.matrix())?.matmul(&vecs)?;
    let n = vals.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = vals[i] + vals[j];
            if s < DEGENERATE_PAIR_TOL {
                continue;
            }
            let d = vals[i] - vals[j];
            q += 2.0 * d * d / s * o[(i, j)].norm_sqr();
        }
    }
    Ok(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochVector {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let b = Self { sx, sy, sz };
        if b.length_sqr() > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter {
                name: "bloch_vector",
                reason: format!("|r|^2 = {} exceeds 1", b.length_sqr()),
            });
        }
        Ok(b)
    }

    pub fn length_sqr(&self) -> f64 {
        self.sx * self.sx + self.sy * self.sy + self.sz * self.sz
    }

    /// `(I + r·σ) / 2`. Only a valid state when `|r| ≤ 1`.
    pub fn to_matrix(&self) -> ComplexMatrix {
        let m = &(&pauli::x().scale_re(self.sx) + &pauli::y().scale_re(self.sy)) + &pauli::z().scale_re(self.sz);
        (&ComplexMatrix::identity(2) + &m).scale_re(0.5)
    }
}

/// `s_α = Tr(ρ σ_α)`.
pub fn bloch_vector(rho: &DensityMatrix) -> Result<BlochVector> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    let m = rho.matrix();
    let off = m[(1, 0)];
    Ok(BlochVector {
        sx: 2.0 * off.re,
        sy: 2.0 * off.im,
        sz: (m[(0, 0)] - m[(1, 1)]).re,
    })
}

/// Single-qubit QFI for the generator σ_z/2: `r² − s_z²`.
pub fn qfi_bloch(b: &BlochVector) -> f64 {
    b.sx * b.sx + b.sy * b.sy
}

/// QFI of the electron under one dephasing channel:
/// `1 − sin²φ sin²(π a t + ϕ/2)` with `a` in MHz and `t` in ns.
pub fn qfi_channel_analytic(t: f64, phi: f64, varphi: f64, a: f64) -> f64 {
    1.0 - phi.sin().powi(2) * (std::f64::consts::PI * a * 1e-3 * t + varphi / 2.0).sin().powi(2)
}

/// `Q_n(t) · Q_c(t) · Q_R(t)`.
pub fn qfi_factorized(t: f64, cfg: &SystemConfig, bath: &BathConfig) -> Result<f64> {
    let qn = qfi_channel_analytic(t, cfg.phi1, cfg.varphi1, cfg.a_n_par);
    let qc = qfi_channel_analytic(t, cfg.phi2, cfg.varphi2, cfg.a_c_par);
    Ok(qn * qc * bath_envelope(t, bath)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitQfi {
    pub value: f64,
    /// `value > 2`: useful entanglement beyond the shot-noise limit.
    pub entangled: bool,
}

/// QFI of a two-qubit state for `(σ_z⊗I + I⊗σ_z)/2`.
pub fn qfi_two_qubit(rho: &DensityMatrix) -> Result<TwoQubitQfi> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: rho.dim() });
    }
    let value = qfi_general(rho, &Generator::collective_z(2))?;
    Ok(TwoQubitQfi { value, entangled: value > ENTANGLEMENT_THRESHOLD })
}

/// QFI of the open system of `experiment` with its collective generator.
pub fn open_system_qfi(rho: &DensityMatrix, experiment: Experiment) -> Result<f64> {
    match experiment {
        Experiment::ElectronQubit => Ok(qfi_bloch(&bloch_vector(rho)?)),
        Experiment::ElectronCarbonPair => Ok(qfi_two_qubit(rho)?.value),
    }
}
