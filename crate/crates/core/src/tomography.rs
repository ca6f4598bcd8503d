//! Photon-count emulation of NV state tomography and state reconstruction.
//!
//! Readout maps the population of `|0⟩` (bright, m_s = 0) linearly onto the
//! mean photon number per shot, `dark + (bright − dark)·p₀`. The three
//! single-qubit settings are:
//!
//! | record | pre-rotation           | p₀            |
//! |--------|------------------------|---------------|
//! | `L_z`  | none                   | (1 + s_z)/2   |
//! | `L_y`  | π/2 about x            | (1 + s_y)/2   |
//! | `L_x`  | π/2 about y            | (1 − s_x)/2   |
//!
//! which is what makes `s_x = −(2L_x − L₀ − L₁)/(L₀ − L₁)` carry the minus sign.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, kron, pauli, ComplexMatrix, DensityMatrix, C64};
use crate::qfi::BlochVector;

/// Repetitions per measurement setting.
pub const DEFAULT_SHOTS: u64 = 400_000;
/// Mean bright-state photons per shot (450 kcps over a 300 ns window).
pub const DEFAULT_BRIGHT_RATE: f64 = 0.135;
/// 30% readout contrast.
pub const DEFAULT_DARK_RATE: f64 = 0.7 * DEFAULT_BRIGHT_RATE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementModel {
    pub shots: u64,
    /// Photons per shot from `|0⟩`.
    pub bright_rate: f64,
    /// Photons per shot from `|1⟩`.
    pub dark_rate: f64,
    pub rng_seed: u64,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            bright_rate: DEFAULT_BRIGHT_RATE,
            dark_rate: DEFAULT_DARK_RATE,
            rng_seed: 0,
        }
    }
}

impl MeasurementModel {
    pub fn with_seed(rng_seed: u64) -> Self {
        Self { rng_seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::InvalidParameter { name: "shots", reason: "must be >= 1".into() });
        }
        if !(self.dark_rate >= 0.0 && self.bright_rate > self.dark_rate && self.bright_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "bright_rate",
                reason: format!("need bright_rate > dark_rate >= 0, got {} and {}", self.bright_rate, self.dark_rate),
            });
        }
        Ok(())
    }

    /// Mean counts over all shots for bright-state population `p0`.
    pub fn mean_counts(&self, p0: f64) -> f64 {
        self.shots as f64 * (self.dark_rate + (self.bright_rate - self.dark_rate) * p0.clamp(0.0, 1.0))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

/// Raw single-qubit tomography record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonCounts {
    pub l_x: f64,
    pub l_y: f64,
    pub l_z: f64,
    /// Bright reference (m_s = 0).
    pub l_0: f64,
    /// Dark reference (m_s = −1).
    pub l_1: f64,
}

/// `exp(−i π/4 σ)`: a π/2 pulse about the axis of `sigma`.
fn half_pi_pulse(sigma: &ComplexMatrix) -> ComplexMatrix {
    let c = std::f64::consts::FRAC_1_SQRT_2;
    &ComplexMatrix::identity(2).scale_re(c) - &sigma.scale(C64::new(0.0, c))
}

/// Bright-state populations `[p_x, p_y, p_z]` for the three settings.
fn readout_populations(rho: &DensityMatrix) -> Result<[f64; 3]> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    let p0 = |u: &ComplexMatrix| -> f64 {
        let rotated = &(u * rho.matrix()) * &u.adjoint();
        rotated[(0, 0)].re
    };
    Ok([
        p0(&half_pi_pulse(&pauli::y())),
        p0(&half_pi_pulse(&pauli::x())),
        rho.matrix()[(0, 0)].re,
    ])
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng)
}

/// Noise-free (infinite-repetition) counts.
pub fn expected_counts(rho: &DensityMatrix, model: &MeasurementModel) -> Result<PhotonCounts> {
    model.validate()?;
    let [px, py, pz] = readout_populations(rho)?;
    Ok(PhotonCounts {
        l_x: model.mean_counts(px),
        l_y: model.mean_counts(py),
        l_z: model.mean_counts(pz),
        l_0: model.mean_counts(1.0),
        l_1: model.mean_counts(0.0),
    })
}

/// Poisson-sampled counts using the supplied generator.
pub fn simulate_counts_with<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<PhotonCounts> {
    let mean = expected_counts(rho, model)?;
    Ok(PhotonCounts {
        l_x: poisson(mean.l_x, rng),
        l_y: poisson(mean.l_y, rng),
        l_z: poisson(mean.l_z, rng),
        l_0: poisson(mean.l_0, rng),
        l_1: poisson(mean.l_1, rng),
    })
}

/// Poisson-sampled counts seeded from `model.rng_seed`.
pub fn simulate_counts(rho: &DensityMatrix, model: &MeasurementModel) -> Result<PhotonCounts> {
    simulate_counts_with(rho, model, &mut model.rng())
}

fn contrast_estimate(l: f64, l_0: f64, l_1: f64) -> f64 {
    (2.0 * l - l_0 - l_1) / (l_0 - l_1)
}

/// Bloch vector from a count record. The estimate is not forced into the
/// unit ball.
pub fn bloch_from_counts(c: &PhotonCounts) -> Result<BlochVector> {
    if c.l_0 == c.l_1 {
        return Err(Error::DegenerateContrast(c.l_0));
    }
    Ok(BlochVector {
        sx: -contrast_estimate(c.l_x, c.l_0, c.l_1),
        sy: contrast_estimate(c.l_y, c.l_0, c.l_1),
        sz: contrast_estimate(c.l_z, c.l_0, c.l_1),
    })
}

/// Physical single-qubit state from a count record (MLE-projected).
pub fn single_qubit_reconstruction(c: &PhotonCounts) -> Result<DensityMatrix> {
    mle_project(&bloch_from_counts(c)?.to_matrix())
}

/// Nearest physical state by eigenvalue truncation: negative eigenvalues are
/// zeroed and their total redistributed evenly over the remaining positive
/// ones, repeated until none is negative.
pub fn mle_project(m: &ComplexMatrix) -> Result<DensityMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare(m.rows(), m.cols()));
    }
    let herr = m.hermiticity_error();
    if herr > 1e-9 * m.max_abs().max(1.0) {
        return Err(Error::NotHermitian(herr));
    }
    let tr = m.trace().re;
    if (tr - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidTrace(tr));
    }
    let sym = (m + &m.adjoint()).scale_re(0.5);
    let (vals, vecs) = eigh(&sym)?;
    let lam = truncate_spectrum(&vals);

    let n = lam.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for (k, &l) in lam.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs[(i, k)] * l;
            for j in 0..n {
                out[(i, j)] += vik * vecs[(j, k)].conj();
            }
        }
    }
    let out = (&out + &out.adjoint()).scale_re(0.5);
    DensityMatrix::new(out)
}

/// Eigenvalue truncation on a spectrum summing to one; order is preserved.
pub fn truncate_spectrum(vals: &[f64]) -> Vec<f64> {
    let mut lam = vals.to_vec();
    loop {
        let deficit: f64 = lam.iter().filter(|&&l| l < 0.0).sum();
        if deficit == 0.0 {
            break;
        }
        lam.iter_mut().filter(|l| **l < 0.0).for_each(|l| *l = 0.0);
        let positive = lam.iter().filter(|&&l| l > 0.0).count();
        if positive == 0 {
            break;
        }
        let share = deficit / positive as f64;
        lam.iter_mut().filter(|l| **l > 0.0).for_each(|l| *l += share);
    }
    lam
}

/// Labels of the 15 non-identity two-qubit Paulis, `(a, b)` with `a, b ∈ 0..4`.
pub fn pauli_pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).filter(|&p| p != (0, 0))
}

fn pauli_pair(a: usize, b: usize) -> ComplexMatrix {
    kron(&pauli::by_index(a), &pauli::by_index(b))
}

const PAULI_LABELS: [char; 4] = ['I', 'X', 'Y', 'Z'];

/// Counts for one two-qubit Pauli correlator `σ_a ⊗ σ_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorCounts {
    pub a: usize,
    pub b: usize,
    pub l: f64,
    pub l_0: f64,
    pub l_1: f64,
}

impl CorrelatorCounts {
    pub fn estimate(&self) -> Result<f64> {
        if self.l_0 == self.l_1 {
            return Err(Error::DegenerateContrast(self.l_0));
        }
        Ok(contrast_estimate(self.l, self.l_0, self.l_1))
    }
}

/// Raw two-qubit tomography record: one entry per non-identity Pauli pair.
///
/// Each correlator is read out as if its ±1 eigenspaces were mapped onto the
/// bright/dark states, with its own pair of reference counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitCounts {
    pub settings: Vec<CorrelatorCounts>,
}

fn two_qubit_counts(
    rho: &DensityMatrix,
    model: &MeasurementModel,
    mut sample: impl FnMut(f64) -> f64,
) -> Result<TwoQubitCounts> {
    model.validate()?;
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: rho.dim() });
    }
    let mut settings = Vec::with_capacity(15);
    for (a, b) in pauli_pairs() {
        let mean = rho.expectation(&pauli_pair(a, b))?.re;
        settings.push(CorrelatorCounts {
            a,
            b,
            l: sample(model.mean_counts((1.0 + mean) / 2.0)),
            l_0: sample(model.mean_counts(1.0)),
            l_1: sample(model.mean_counts(0.0)),
        });
    }
    Ok(TwoQubitCounts { settings })
}

pub fn expected_two_qubit_counts(rho: &DensityMatrix, model: &MeasurementModel) -> Result<TwoQubitCounts> {
    two_qubit_counts(rho, model, |mean| mean)
}

pub fn simulate_two_qubit_counts_with<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<TwoQubitCounts> {
    two_qubit_counts(rho, model, |mean| poisson(mean, rng))
}

/// Linear inversion `ρ = (I + Σ ⟨P⟩ P)/4` followed by [`mle_project`].
pub fn two_qubit_from_counts(counts: &TwoQubitCounts) -> Result<DensityMatrix> {
    let mut estimate = ComplexMatrix::identity(4);
    for s in &counts.settings {
        if s.a > 3 || s.b > 3 || (s.a, s.b) == (0, 0) {
            return Err(Error::InvalidParameter { name: "basis", reason: format!("bad Pauli pair ({}, {})", s.a, s.b) });
        }
        estimate = &estimate + &pauli_pair(s.a, s.b).scale_re(s.estimate()?);
    }
    mle_project(&estimate.scale_re(0.25))
}

/// Two-qubit tomography with the photon-count model applied to each of the
/// 15 Pauli correlators, followed by linear inversion and [`mle_project`].
pub fn two_qubit_tomography(rho: &DensityMatrix, model: &MeasurementModel) -> Result<DensityMatrix> {
    two_qubit_tomography_with(rho, model, &mut model.rng())
}

pub fn two_qubit_tomography_with<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<DensityMatrix> {
    two_qubit_from_counts(&simulate_two_qubit_counts_with(rho, model, rng)?)
}

/// Infinite-repetition limit of [`two_qubit_tomography`].
pub fn two_qubit_tomography_expected(rho: &DensityMatrix, model: &MeasurementModel) -> Result<DensityMatrix> {
    two_qubit_from_counts(&expected_two_qubit_counts(rho, model)?)
}

/// Readout setting of a count record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    X,
    Y,
    Z,
    Bright,
    Dark,
    /// Two-qubit correlator `σ_a ⊗ σ_b`.
    Correlator(usize, usize),
    CorrelatorBright(usize, usize),
    CorrelatorDark(usize, usize),
}

impl Basis {
    pub const SINGLE: [Basis; 5] = [Basis::X, Basis::Y, Basis::Z, Basis::Bright, Basis::Dark];
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pair = |a: usize, b: usize| format!("{}{}", PAULI_LABELS[a], PAULI_LABELS[b]);
        match *self {
            Basis::X => f.write_str("x"),
            Basis::Y => f.write_str("y"),
            Basis::Z => f.write_str("z"),
            Basis::Bright => f.write_str("ref0"),
            Basis::Dark => f.write_str("ref1"),
            Basis::Correlator(a, b) => f.write_str(&pair(a, b)),
            Basis::CorrelatorBright(a, b) => write!(f, "{}:ref0", pair(a, b)),
            Basis::CorrelatorDark(a, b) => write!(f, "{}:ref1", pair(a, b)),
        }
    }
}

fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let mut it = s.chars().map(|c| PAULI_LABELS.iter().position(|&p| p == c));
    match (it.next(), it.next(), it.next()) {
        (Some(Some(a)), Some(Some(b)), None) if (a, b) != (0, 0) => Some((a, b)),
        _ => None,
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Csv(format!("unknown basis `{s}`"));
        match s {
            "x" => Ok(Basis::X),
            "y" => Ok(Basis::Y),
            "z" => Ok(Basis::Z),
            "ref0" => Ok(Basis::Bright),
            "ref1" => Ok(Basis::Dark),
            _ => {
                let (pair, suffix) = s.split_once(':').map_or((s, None), |(p, r)| (p, Some(r)));
                let (a, b) = parse_pair(pair).ok_or_else(unknown)?;
                match suffix {
                    None => Ok(Basis::Correlator(a, b)),
                    Some("ref0") => Ok(Basis::CorrelatorBright(a, b)),
                    Some("ref1") => Ok(Basis::CorrelatorDark(a, b)),
                    Some(_) => Err(unknown()),
                }
            }
        }
    }
}

/// One row of an exported count record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountRecord {
    pub t_ns: f64,
    pub basis: Basis,
    pub counts: f64,
    pub shots: u64,
    pub seed: u64,
}

pub const COUNT_CSV_HEADER: &str = "t_ns,basis,counts,shots,seed";

fn single_count(rows: &[CountRecord], b: Basis) -> Result<f64> {
    let mut hits = rows.iter().filter(|r| r.basis == b);
    match (hits.next(), hits.next()) {
        (Some(r), None) => Ok(r.counts),
        (None, _) => Err(Error::Csv(format!("missing basis `{b}`"))),
        _ => Err(Error::Csv(format!("duplicate basis `{b}`"))),
    }
}

impl PhotonCounts {
    pub fn get(&self, basis: Basis) -> Option<f64> {
        match basis {
            Basis::X => Some(self.l_x),
            Basis::Y => Some(self.l_y),
            Basis::Z => Some(self.l_z),
            Basis::Bright => Some(self.l_0),
            Basis::Dark => Some(self.l_1),
            _ => None,
        }
    }

    pub fn to_records(&self, t_ns: f64, shots: u64, seed: u64) -> Vec<CountRecord> {
        Basis::SINGLE
            .iter()
            .map(|&basis| CountRecord { t_ns, basis, counts: self.l(basis), shots, seed })
            .collect()
    }

    fn l(&self, basis: Basis) -> f64 {
        self.get(basis).expect("single-qubit basis")
    }

    /// Reassembles a record from exactly one row per basis.
    pub fn from_records(rows: &[CountRecord]) -> Result<Self> {
        Ok(Self {
            l_x: single_count(rows, Basis::X)?,
            l_y: single_count(rows, Basis::Y)?,
            l_z: single_count(rows, Basis::Z)?,
            l_0: single_count(rows, Basis::Bright)?,
            l_1: single_count(rows, Basis::Dark)?,
        })
    }
}

impl TwoQubitCounts {
    pub fn to_records(&self, t_ns: f64, shots: u64, seed: u64) -> Vec<CountRecord> {
        let mut out = Vec::with_capacity(3 * self.settings.len());
        for s in &self.settings {
            for (basis, counts) in [
                (Basis::Correlator(s.a, s.b), s.l),
                (Basis::CorrelatorBright(s.a, s.b), s.l_0),
                (Basis::CorrelatorDark(s.a, s.b), s.l_1),
            ] {
                out.push(CountRecord { t_ns, basis, counts, shots, seed });
            }
        }
        out
    }

    pub fn from_records(rows: &[CountRecord]) -> Result<Self> {
        let settings = pauli_pairs()
            .map(|(a, b)| {
                Ok(CorrelatorCounts {
                    a,
                    b,
                    l: single_count(rows, Basis::Correlator(a, b))?,
                    l_0: single_count(rows, Basis::CorrelatorBright(a, b))?,
                    l_1: single_count(rows, Basis::CorrelatorDark(a, b))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { settings })
    }
}

pub fn write_count_records(records: &[CountRecord]) -> String {
    let mut s = String::from(COUNT_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!("{},{},{},{},{}\n", r.t_ns, r.basis, r.counts, r.shots, r.seed));
    }
    s
}

pub fn read_count_records(text: &str) -> Result<Vec<CountRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == COUNT_CSV_HEADER => {}
        Some((i, h)) => {
            return Err(Error::Csv(format!("line {}: expected header `{COUNT_CSV_HEADER}`, got `{h}`", i + 1)))
        }
        None => return Err(Error::Csv("empty count record".into())),
    }
    lines
        .map(|(i, line)| {
            let bad = |what: &str| Error::Csv(format!("line {}: {what}", i + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            Ok(CountRecord {
                t_ns: f[0].parse().map_err(|_| bad("bad t_ns"))?,
                basis: f[1].parse().map_err(|_| bad("bad basis"))?,
                counts: f[2].parse().map_err(|_| bad("bad counts"))?,
                shots: f[3].parse().map_err(|_| bad("bad shots"))?,
                seed: f[4].parse().map_err(|_| bad("bad seed"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::PureState;
    use crate::qfi::{bloch_vector, qfi_two_qubit};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn bell() -> DensityMatrix {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let z = C64::new(0.0, 0.0);
        PureState::new(vec![s, z, z, s]).unwrap().to_density()
    }

    #[test]
    fn ground_state_reads_bright() {
        let model = MeasurementModel::default();
        let c = expected_counts(&PureState::basis(2, 0).to_density(), &model).unwrap();
        assert_eq!(c.l_z, c.l_0);
        assert_eq!(bloch_from_counts(&c).unwrap().sz, 1.0);
    }

    #[test]
    fn mixed_state_reads_midpoint() {
        let c = expected_counts(&DensityMatrix::maximally_mixed(2), &MeasurementModel::default()).unwrap();
        assert!((c.l_z - (c.l_0 + c.l_1) / 2.0).abs() < 1e-9);
        assert!(bloch_from_counts(&c).unwrap().sz.abs() < 1e-12);
    }

    #[test]
    fn count_formulas_verbatim() {
        let c = PhotonCounts { l_x: 10.0, l_y: 50.0, l_z: 30.0, l_0: 50.0, l_1: 10.0 };
        let b = bloch_from_counts(&c).unwrap();
        assert_eq!((b.sx, b.sy, b.sz), (1.0, 1.0, 0.0));
        let flat = PhotonCounts { l_0: 7.0, l_1: 7.0, ..c };
        assert!(matches!(bloch_from_counts(&flat), Err(Error::DegenerateContrast(_))));
    }

    #[test]
    fn partially_polarized_roundtrip() {
        let rho = DensityMatrix::new(BlochVector { sx: 0.6, sy: 0.0, sz: 0.0 }.to_matrix()).unwrap();
        let b = bloch_from_counts(&expected_counts(&rho, &MeasurementModel::default()).unwrap()).unwrap();
        assert!((b.sx - 0.6).abs() < 1e-12 && b.sy.abs() < 1e-12 && b.sz.abs() < 1e-12);
    }

    #[test]
    fn plus_state_sx_within_three_sigma() {
        // σ(s_x) from Poisson propagation of s = (2L − L0 − L1)/(L0 − L1).
        let model = MeasurementModel::with_seed(5);
        let rho = PureState::new(vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]).unwrap().to_density();
        let mean = expected_counts(&rho, &model).unwrap();
        let d = mean.l_0 - mean.l_1;
        let s: f64 = 1.0;
        let var = (4.0 * mean.l_x + (1.0 - s).powi(2) * mean.l_0 + (1.0 + s).powi(2) * mean.l_1) / (d * d);
        let sigma = var.sqrt();

        let mut rng = model.rng();
        let samples: Vec<f64> = (0..400)
            .map(|_| bloch_from_counts(&simulate_counts_with(&rho, &model, &mut rng).unwrap()).unwrap().sx)
            .collect();
        let m = samples.iter().sum::<f64>() / samples.len() as f64;
        let sd = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.15, "MC sd {sd} vs propagated {sigma}");

        let one = bloch_from_counts(&simulate_counts(&rho, &model).unwrap()).unwrap();
        assert!((one.sx - 1.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn invalid_model_rejected() {
        let rho = DensityMatrix::maximally_mixed(2);
        let m = MeasurementModel { shots: 0, ..Default::default() };
        assert!(simulate_counts(&rho, &m).is_err());
        let m = MeasurementModel { dark_rate: 0.2, bright_rate: 0.1, ..Default::default() };
        assert!(simulate_counts(&rho, &m).is_err());
    }

    #[test]
    fn mle_examples() {
        let phys = bell();
        let p = mle_project(phys.matrix()).unwrap();
        assert!(p.matrix().max_abs_diff(phys.matrix()) < 1e-12);

        let p = mle_project(&ComplexMatrix::from_diag(&[1.2, -0.2])).unwrap();
        assert!(p.matrix().max_abs_diff(&ComplexMatrix::from_diag(&[1.0, 0.0])) < 1e-12);

        let p = mle_project(&ComplexMatrix::from_diag(&[0.7, 0.5, -0.1, -0.1])).unwrap();
        assert!(p.matrix().max_abs_diff(&ComplexMatrix::from_diag(&[0.6, 0.4, 0.0, 0.0])) < 1e-12);

        let skew = ComplexMatrix::from_vec(2, 2, vec![
            C64::new(0.5, 0.0), C64::new(0.3, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0),
        ]).unwrap();
        assert!(matches!(mle_project(&skew), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn truncation_needs_iteration() {
        // After the first pass 0.05 - 0.35/3 goes negative and must be zeroed too.
        let lam = truncate_spectrum(&[0.95, 0.35, 0.05, -0.35]);
        let sum: f64 = lam.iter().sum();
        assert!(lam.iter().all(|&l| l >= 0.0));
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(lam[2], 0.0);
        assert!((lam[0] - 0.8).abs() < 1e-12 && (lam[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bell_tomography_limits() {
        let model = MeasurementModel::default();
        let rec = two_qubit_tomography_expected(&bell(), &model).unwrap();
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let z = C64::new(0.0, 0.0);
        let psi = PureState::new(vec![s, z, z, s]).unwrap();
        assert!((rec.fidelity_pure(&psi).unwrap() - 1.0).abs() < 1e-12);

        let noisy = two_qubit_tomography(&bell(), &MeasurementModel::with_seed(9)).unwrap();
        let q = qfi_two_qubit(&noisy).unwrap().value;
        assert!((3.5..=4.0 + 1e-9).contains(&q), "{q}");

        let mixed = two_qubit_tomography(&DensityMatrix::maximally_mixed(4), &MeasurementModel::with_seed(9)).unwrap();
        assert!(qfi_two_qubit(&mixed).unwrap().value < 0.1);
    }

    #[test]
    fn count_records_roundtrip() {
        let c = PhotonCounts { l_x: 1.0, l_y: 2.0, l_z: 3.0, l_0: 4.0, l_1: 0.5 };
        let rows = c.to_records(12.5, 400_000, 7);
        let text = write_count_records(&rows);
        let back = read_count_records(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(PhotonCounts::from_records(&back).unwrap(), c);
        assert!(read_count_records("t,basis\n").is_err());
        assert!(PhotonCounts::from_records(&back[..4]).is_err());

        let two = expected_two_qubit_counts(&bell(), &MeasurementModel::default()).unwrap();
        let rows = two.to_records(0.0, 400_000, 3);
        assert_eq!(rows.len(), 45);
        let back = read_count_records(&write_count_records(&rows)).unwrap();
        assert_eq!(TwoQubitCounts::from_records(&back).unwrap(), two);
    }

    #[test]
    fn basis_labels_roundtrip() {
        for b in Basis::SINGLE.into_iter().chain(pauli_pairs().flat_map(|(a, b)| {
            [Basis::Correlator(a, b), Basis::CorrelatorBright(a, b), Basis::CorrelatorDark(a, b)]
        })) {
            assert_eq!(b.to_string().parse::<Basis>().unwrap(), b);
        }
        assert_eq!(Basis::Correlator(1, 3).to_string(), "XZ");
        for bad in ["II", "XQ", "XZ:ref2", "w", "XYZ"] {
            assert!(bad.parse::<Basis>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn noiseless_roundtrip_recovers_state(
            sx in -1.0f64..1.0, sy in -1.0f64..1.0, sz in -1.0f64..1.0, r in 0.0f64..=1.0
        ) {
            let n = (sx * sx + sy * sy + sz * sz).sqrt().max(1e-9);
            let b = BlochVector { sx: sx * r / n, sy: sy * r / n, sz: sz * r / n };
            let rho = DensityMatrix::new(b.to_matrix()).unwrap();
            let est = bloch_from_counts(&expected_counts(&rho, &MeasurementModel::default()).unwrap()).unwrap();
            let back = bloch_vector(&rho).unwrap();
            prop_assert!((est.sx - back.sx).abs() < 1e-12);
            prop_assert!((est.sy - back.sy).abs() < 1e-12);
            prop_assert!((est.sz - back.sz).abs() < 1e-12);
        }

        #[test]
        fn mle_output_is_physical_and_idempotent(
            diag in prop::collection::vec(-0.5f64..1.0, 4),
            re in prop::collection::vec(-0.3f64..0.3, 6),
            im in prop::collection::vec(-0.3f64..0.3, 6),
        ) {
            let mut m = ComplexMatrix::zeros(4, 4);
            let mut k = 0;
            for i in 0..4 {
                m[(i, i)] = C64::new(diag[i], 0.0);
                for j in i + 1..4 {
                    m[(i, j)] = C64::new(re[k], im[k]);
                    m[(j, i)] = C64::new(re[k], -im[k]);
                    k += 1;
                }
            }
            let tr = m.trace().re;
            // Shift to unit trace.
            let m = &m + &ComplexMatrix::identity(4).scale_re((1.0 - tr) / 4.0);
            let p = mle_project(&m).unwrap();
            let vals = p.eigenvalues();
            prop_assert!(vals[0] >= -1e-12);
            prop_assert!((p.matrix().trace().re - 1.0).abs() < 1e-12);
            let again = mle_project(p.matrix()).unwrap();
            prop_assert!(again.matrix().max_abs_diff(p.matrix()) < 1e-10);
            prop_assert!(qfi_two_qubit(&p).unwrap().value <= 4.0 + 1e-9);
        }
    }
}
