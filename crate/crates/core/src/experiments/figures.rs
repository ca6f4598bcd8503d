//! Datasets behind each published panel.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentSpec, Output, SweepTable};
use super::output::{Bundle, Dataset, Manifest};
use super::{grid_note, run_detailed, sweep, SweepSpec};
use crate::error::{Error, Result};
use crate::nonmarkov::{differentiate, measure_series, total_flow_measure_series, FlowSet, LONG_TIME_DT};
use crate::nv_model::{Experiment, SystemConfig};
use crate::tomography::MeasurementModel;

pub const FIGURE_IDS: [&str; 14] = ["3a", "3b", "3c", "3d", "3e", "3f", "3g", "3h", "3i", "3j", "3k", "4a", "4b", "4c"];

/// Smoothing window applied to noisy figure traces.
pub const NOISY_SMOOTHING: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Figure(usize);

impl Figure {
    pub fn id(self) -> &'static str {
        FIGURE_IDS[self.0]
    }

    pub fn all() -> impl Iterator<Item = Figure> {
        (0..FIGURE_IDS.len()).map(Figure)
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("fig").unwrap_or(&key);
        FIGURE_IDS
            .iter()
            .position(|id| *id == key)
            .map(Figure)
            .ok_or_else(|| Error::UnknownFigure { given: s.to_string(), valid: FIGURE_IDS.join(", ") })
    }
}

/// Independent seed for the `k`-th run of a figure.
fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + k);
    rng.next_u64()
}

struct Builder {
    seed: u64,
    noise: bool,
    specs: Vec<ExperimentSpec>,
}

impl Builder {
    fn spec(&mut self, experiment: Experiment, phi1: f64, phi2: f64, outputs: Vec<Output>) -> ExperimentSpec {
        let k = self.specs.len() as u64;
        let spec = ExperimentSpec {
            experiment,
            system: SystemConfig::with_angles(phi1, phi2),
            outputs,
            smoothing: if self.noise { NOISY_SMOOTHING } else { 1 },
            noise: self.noise.then(|| MeasurementModel::with_seed(sub_seed(self.seed, k))),
            ..Default::default()
        };
        self.specs.push(spec.clone());
        spec
    }

    /// QFI traces for several angle pairs, one column each.
    fn qfi_family(&mut self, experiment: Experiment, cases: &[(f64, f64, &str)]) -> Result<Dataset> {
        let mut ds: Option<Dataset> = None;
        for &(phi1, phi2, name) in cases {
            let spec = self.spec(experiment, phi1, phi2, vec![Output::Qfi]);
            let r = run_detailed(&spec, false)?;
            let d = ds.get_or_insert_with(|| Dataset::time_series(r.dataset.index.clone()));
            d.push(name, r.full.qfi.values)?;
        }
        Ok(ds.expect("at least one case"))
    }

    /// QFI and total flow for a single configuration.
    fn flow(&mut self, experiment: Experiment, phi1: f64, phi2: f64) -> Result<Dataset> {
        let spec = self.spec(experiment, phi1, phi2, vec![Output::Qfi]);
        let r = run_detailed(&spec, false)?;
        let mut ds = Dataset::time_series(r.dataset.index.clone());
        ds.push("flow", differentiate(&r.full.qfi)?)?;
        ds.push("qfi", r.full.qfi.values)?;
        Ok(ds)
    }
}

/// Builds the dataset for `figure` and the manifest describing it.
pub fn figure_bundle(figure: Figure, seed: u64, noise: bool) -> Result<Bundle> {
    let mut b = Builder { seed, noise, specs: Vec::new() };
    let (e1, e2) = (Experiment::ElectronQubit, Experiment::ElectronCarbonPair);
    let mut sweep_spec: Option<SweepSpec> = None;
    let mut notes = Vec::new();

    let ds = match figure.id() {
        "3a" => b.qfi_family(e1, &[(0.0, 0.0, "qfi_phi1_0"), (FRAC_PI_4, 0.0, "qfi_phi1_pi_4"), (FRAC_PI_2, 0.0, "qfi_phi1_pi_2")])?,
        "3b" => b.qfi_family(e1, &[(0.0, 0.0, "qfi_phi2_0"), (0.0, FRAC_PI_4, "qfi_phi2_pi_4"), (0.0, FRAC_PI_2, "qfi_phi2_pi_2")])?,
        "3c" => {
            let spec = b.spec(e1, FRAC_PI_2, FRAC_PI_2, vec![Output::Qfi, Output::Flows]);
            let r = run_detailed(&spec, false)?;
            let (q_r, q_nr, q_cr) = (r.q_r.expect("q_r"), r.q_nr.expect("q_nr"), r.q_cr.expect("q_cr"));
            let factorized = (0..q_r.len()).map(|k| q_nr.values[k] * q_cr.values[k] / q_r.values[k]).collect();
            let mut ds = Dataset::time_series(r.dataset.index.clone());
            ds.push("qfi", r.full.qfi.values)?;
            ds.push("qfi_factorized", factorized)?;
            ds
        }
        "3d" => b.flow(e1, 0.0, 0.0)?,
        "3e" => b.flow(e1, FRAC_PI_4, 0.0)?,
        "3f" => b.flow(e1, FRAC_PI_2, 0.0)?,
        "3g" => b.flow(e1, 0.0, FRAC_PI_4)?,
        "3h" => b.flow(e1, 0.0, FRAC_PI_2)?,
        "3i" => {
            let spec = b.spec(e1, FRAC_PI_2, FRAC_PI_2, vec![Output::Flows]);
            let r = run_detailed(&spec, false)?;
            let mut ds = Dataset::time_series(r.dataset.index.clone());
            for name in ["flow_total", "flow_n", "flow_c", "flow_r", "flow_sum"] {
                ds.push(name, r.dataset.column(name).expect("flow column").to_vec())?;
            }
            ds
        }
        "3j" => {
            let spec = b.spec(e1, FRAC_PI_2, FRAC_PI_2, vec![Output::Measure]);
            let r = run_detailed(&spec, false)?;
            let flows = r.flows.expect("flows");
            let total = FlowSet { total: differentiate(&r.full.qfi)?, ..flows.clone() };
            let mut ds = Dataset::time_series(r.dataset.index.clone());
            let from_sub = measure_series(&flows);
            let from_total = total_flow_measure_series(&total);
            if !noise && from_sub.iter().zip(&from_total).any(|(s, t)| s + 1e-12 < *t) {
                return Err(Error::Invariant("subflow measure fell below total-flow measure".into()));
            }
            ds.push("measure_subflows", from_sub)?;
            ds.push("measure_total", from_total)?;
            ds
        }
        "3k" => {
            let s = SweepSpec::new(SweepTable::default(), ExperimentSpec::default());
            if noise {
                notes.push("3k is computed from exact states; noise does not apply".to_string());
            }
            notes.push(format!("long-time measure on a {LONG_TIME_DT} ns grid"));
            let ds = sweep(&s)?;
            sweep_spec = Some(s);
            ds
        }
        "4a" => b.qfi_family(e2, &[(0.0, 0.0, "qfi_phi1_0"), (FRAC_PI_2, 0.0, "qfi_phi1_pi_2")])?,
        "4b" => b.flow(e2, 0.0, 0.0)?,
        "4c" => b.flow(e2, FRAC_PI_2, 0.0)?,
        other => unreachable!("figure {other} has no builder"),
    };

    let mut m = Manifest::new("reproduce", seed, noise);
    m.figure = Some(figure.id().to_string());
    if let Some(first) = b.specs.first() {
        notes.push(grid_note(first));
    }
    m.specs = b.specs;
    m.sweep = sweep_spec;
    m.notes = notes;
    let stem = format!("fig{}", figure.id());
    let mut bundle = Bundle::new(stem.clone(), m);
    bundle.add(format!("{stem}.csv"), ds.to_csv());
    Ok(bundle)
}

/// Looks up `figure` and builds its files; an unknown identifier is an error
/// listing the valid ones.
pub fn reproduce(figure: &str, seed: u64, noise: bool) -> Result<Bundle> {
    figure_bundle(figure.parse()?, seed, noise)
}
