//! Config-driven runs: exact or shot-noise-emulated QFI traces, flows,
//! measures, rates and reconstructed states, written as CSV plus a JSON
//! manifest.

pub mod config;
pub mod figures;
pub mod output;

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, parse_sweep_config, ConfigFile, ExperimentSpec, Output, SweepParameter, SweepSpec, SweepTable};
pub use figures::{reproduce, Figure, FIGURE_IDS};
pub use output::{format_value, write_atomic, Bundle, Dataset, Manifest};

use crate::error::{Error, Result};
use crate::linalg::DensityMatrix;
use crate::nonmarkov::{
    channel_configs, differentiate, extract_rates, long_time_measure, measure_series, smooth, subflows,
    total_flow_measure_series, FlowSet, QfiTrace,
};
use crate::nv_model::{reduced_system_trace, Experiment, SystemConfig};
use crate::qfi::open_system_qfi;
use crate::tomography::{
    simulate_counts_with, simulate_two_qubit_counts_with, single_qubit_reconstruction, two_qubit_from_counts,
    write_count_records, CountRecord, MeasurementModel,
};

/// Slack on QFI bounds and monotonicity checks.
const INVARIANT_TOL: f64 = 1e-9;

/// Largest QFI the open system can carry.
pub fn qfi_upper_bound(experiment: Experiment) -> f64 {
    match experiment {
        Experiment::ElectronQubit => 1.0,
        Experiment::ElectronCarbonPair => 4.0,
    }
}

/// One QFI trace together with the states it came from.
#[derive(Clone, Debug)]
pub struct MeasuredTrace {
    pub states: Vec<DensityMatrix>,
    pub qfi: QfiTrace,
    pub counts: Vec<CountRecord>,
}

/// Runs the exact dynamics for `cfg` and, with noise enabled, replaces each
/// state by its tomographic reconstruction drawn from RNG stream `stream`.
pub fn measure_trace(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    stream: u64,
    label: &str,
    keep_counts: bool,
) -> Result<MeasuredTrace> {
    let exact = reduced_system_trace(cfg, &spec.bath, &spec.grid, spec.experiment)?;
    let mut counts = Vec::new();
    let states = match &spec.noise {
        None => exact,
        Some(model) => {
            let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
            rng.set_stream(stream);
            let times = spec.grid.points();
            let mut out = Vec::with_capacity(exact.len());
            for (t, rho) in times.iter().zip(&exact) {
                let rec = match spec.experiment {
                    Experiment::ElectronQubit => {
                        let c = simulate_counts_with(rho, model, &mut rng)?;
                        if keep_counts {
                            counts.extend(c.to_records(*t, model.shots, model.rng_seed));
                        }
                        single_qubit_reconstruction(&c)?
                    }
                    Experiment::ElectronCarbonPair => {
                        let c = simulate_two_qubit_counts_with(rho, model, &mut rng)?;
                        if keep_counts {
                            counts.extend(c.to_records(*t, model.shots, model.rng_seed));
                        }
                        two_qubit_from_counts(&c)?
                    }
                };
                out.push(rec);
            }
            out
        }
    };
    let raw = states
        .iter()
        .map(|rho| open_system_qfi(rho, spec.experiment))
        .collect::<Result<Vec<f64>>>()?;
    let qfi = QfiTrace::from_grid(&spec.grid, smooth(&raw, spec.smoothing)?, label)?;
    Ok(MeasuredTrace { states, qfi, counts })
}

/// Everything a run computed, before column selection.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub dataset: Dataset,
    pub full: MeasuredTrace,
    pub q_r: Option<QfiTrace>,
    pub q_nr: Option<QfiTrace>,
    pub q_cr: Option<QfiTrace>,
    pub flows: Option<FlowSet>,
}

impl RunResult {
    pub fn counts(&self) -> &[CountRecord] {
        &self.full.counts
    }
}

/// Runs `spec` and returns the requested series.
pub fn run(spec: &ExperimentSpec) -> Result<Dataset> {
    Ok(run_detailed(spec, false)?.dataset)
}

/// Like [`run`], also keeping the channel traces and, if `keep_counts`, the
/// raw count records of the full trace.
pub fn run_detailed(spec: &ExperimentSpec, keep_counts: bool) -> Result<RunResult> {
    spec.validate()?;
    let full = measure_trace(spec, &spec.system, 0, "qfi", keep_counts)?;
    let mut result = RunResult {
        dataset: Dataset::time_series(spec.grid.points()),
        full,
        q_r: None,
        q_nr: None,
        q_cr: None,
        flows: None,
    };

    if spec.needs_channels() {
        let [bath_only, n_open, c_open] = channel_configs(&spec.system);
        let q_r = measure_trace(spec, &bath_only, 1, "q_r", false)?.qfi;
        let q_nr = measure_trace(spec, &n_open, 2, "q_nr", false)?.qfi;
        let q_cr = match spec.experiment {
            Experiment::ElectronQubit => measure_trace(spec, &c_open, 3, "q_cr", false)?.qfi,
            Experiment::ElectronCarbonPair => QfiTrace { label: "q_cr".into(), ..q_r.clone() },
        };
        result.flows = Some(subflows(&q_r, &q_nr, &q_cr)?);
        result.q_r = Some(q_r);
        result.q_nr = Some(q_nr);
        result.q_cr = Some(q_cr);
    }

    let mut seen = Vec::new();
    for &out in &spec.outputs {
        if seen.contains(&out) {
            continue;
        }
        seen.push(out);
        emit(spec, &mut result, out)?;
    }
    check_invariants(spec, &result)?;
    Ok(result)
}

fn emit(spec: &ExperimentSpec, r: &mut RunResult, out: Output) -> Result<()> {
    let ds = &mut r.dataset;
    match out {
        Output::Qfi => ds.push("qfi", r.full.qfi.values.clone())?,
        Output::Flows => {
            let flows = r.flows.as_ref().expect("channel traces computed");
            for t in [&r.q_r, &r.q_nr, &r.q_cr].into_iter().flatten() {
                ds.push(t.label.clone(), t.values.clone())?;
            }
            ds.push("flow_total", differentiate(&r.full.qfi)?)?;
            ds.push("flow_n", flows.sub_n.clone())?;
            ds.push("flow_c", flows.sub_c.clone())?;
            ds.push("flow_r", flows.sub_r.clone())?;
            ds.push("flow_sum", flows.subflow_sum())?;
        }
        Output::Measure => {
            let flows = r.flows.as_ref().expect("channel traces computed");
            ds.push("measure_n", measure_series(flows))?;
            let total = FlowSet { total: differentiate(&r.full.qfi)?, ..flows.clone() };
            ds.push("measure_total", total_flow_measure_series(&total))?;
        }
        Output::Rates => {
            let (q_r, q_nr, q_cr) = (r.q_r.as_ref(), r.q_nr.as_ref(), r.q_cr.as_ref());
            let rates = extract_rates(q_r.expect("q_r"), q_nr.expect("q_nr"), q_cr.expect("q_cr"))?;
            ds.push("gamma_n", rates.gamma_n)?;
            ds.push("gamma_c", rates.gamma_c)?;
            ds.push("gamma_r", rates.gamma_r)?;
        }
        Output::States => {
            let d = spec.experiment.open_dim();
            for i in 0..d {
                for j in i..d {
                    let entry = |rho: &DensityMatrix| rho.matrix()[(i, j)];
                    ds.push(format!("rho_{i}{j}_re"), r.full.states.iter().map(|s| entry(s).re).collect())?;
                    if i != j {
                        ds.push(format!("rho_{i}{j}_im"), r.full.states.iter().map(|s| entry(s).im).collect())?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn is_nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - INVARIANT_TOL * w[0].abs().max(1.0))
}

fn check_invariants(spec: &ExperimentSpec, r: &RunResult) -> Result<()> {
    let bound = qfi_upper_bound(spec.experiment);
    for t in [Some(&r.full.qfi), r.q_r.as_ref(), r.q_nr.as_ref(), r.q_cr.as_ref()].into_iter().flatten() {
        if let Some((k, v)) = t.values.iter().enumerate().find(|(_, v)| !(-INVARIANT_TOL..=bound + INVARIANT_TOL).contains(*v)) {
            return Err(Error::Invariant(format!(
                "{} = {v} at t = {} ns is outside [0, {bound}]",
                t.label, t.times[k]
            )));
        }
    }
    if let Some(flows) = &r.flows {
        if !flows.is_consistent() {
            return Err(Error::Invariant(format!(
                "flow-sum residual {:e} exceeds {:e}",
                flows.residual(),
                flows.tolerance
            )));
        }
        if spec.noise.is_none() {
            let total = differentiate(&r.full.qfi)?;
            let gap = total.iter().zip(flows.subflow_sum()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > flows.tolerance {
                return Err(Error::Invariant(format!("total flow differs from subflow sum by {gap:e}")));
            }
        }
    }
    for name in ["measure_n", "measure_total"] {
        if let Some(m) = r.dataset.column(name) {
            if !is_nondecreasing(m) {
                return Err(Error::Invariant(format!("{name} is not monotone")));
            }
        }
    }
    Ok(())
}

fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    if items.is_empty() {
        return Vec::new();
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<U>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

/// Long-time measure for every value of the swept angle. Points run in
/// parallel; the result does not depend on the thread count.
pub fn sweep(s: &SweepSpec) -> Result<Dataset> {
    s.validate()?;
    let measures = parallel_map(&s.values, |&v| {
        long_time_measure(&s.parameter.apply(&s.base.system, v), &s.base.bath, s.horizon_ns)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let sorted = s.values.windows(2).all(|w| w[1] >= w[0]);
    let in_half = s.values.iter().all(|&v| v <= std::f64::consts::FRAC_PI_2 + 1e-12);
    if s.parameter == SweepParameter::Phi2 && s.base.system.phi1 == 0.0 && sorted && in_half && !is_nondecreasing(&measures) {
        return Err(Error::Invariant("long-time measure is not monotone in phi2".into()));
    }
    let mut ds = Dataset::new(s.parameter.name(), s.values.clone());
    ds.push("measure_long_time", measures)?;
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Flows,
    Measure,
    Sweep,
    Tomo,
    Reproduce,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Flows => "flows",
            Command::Measure => "measure",
            Command::Sweep => "sweep",
            Command::Tomo => "tomo",
            Command::Reproduce => "reproduce",
        }
    }
}

/// Where the run parameters come from.
#[derive(Clone, Debug)]
pub enum Source {
    Defaults,
    Toml(String),
    Manifest(Manifest),
}

/// A fully described CLI invocation.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub source: Source,
    pub seed: Option<u64>,
    pub noise: bool,
    pub figure: Option<String>,
}

/// Adjusts a spec for the subcommand, seed and `--noise` flag. Applying it to
/// an already-adjusted spec changes nothing, which is what lets a manifest
/// replay reproduce its dataset.
pub fn prepare_spec(command: Command, mut spec: ExperimentSpec, seed: u64, noise: bool) -> ExperimentSpec {
    let ensure = |spec: &mut ExperimentSpec, o: Output| {
        if !spec.outputs.contains(&o) {
            spec.outputs.push(o);
        }
    };
    match command {
        Command::Flows => ensure(&mut spec, Output::Flows),
        Command::Measure => ensure(&mut spec, Output::Measure),
        Command::Tomo => {
            ensure(&mut spec, Output::Qfi);
            ensure(&mut spec, Output::States);
        }
        _ => {}
    }
    if (noise || command == Command::Tomo) && spec.noise.is_none() {
        spec.noise = Some(MeasurementModel::default());
    }
    if let Some(model) = spec.noise.as_mut() {
        model.rng_seed = seed;
    }
    spec
}

/// Runs an invocation and writes its files under `out`.
pub fn execute(inv: &Invocation, out: &Path) -> Result<Vec<PathBuf>> {
    let command = inv.command;
    let (spec, sweep_spec, seed, noise, figure) = match &inv.source {
        Source::Manifest(m) => {
            if m.command != command.name() {
                return Err(Error::Config(format!(
                    "manifest was written by `{}`, not `{}`",
                    m.command,
                    command.name()
                )));
            }
            let spec = m.specs.first().cloned();
            (spec, m.sweep.clone(), inv.seed.unwrap_or(m.seed), inv.noise || m.noise, inv.figure.clone().or(m.figure.clone()))
        }
        Source::Toml(text) => {
            let file = parse_config(text)?;
            let sweep = match command {
                Command::Sweep => Some(parse_sweep_config(text)?),
                _ => None,
            };
            (Some(file.spec), sweep, inv.seed.unwrap_or(0), inv.noise, inv.figure.clone())
        }
        Source::Defaults => (None, None, inv.seed.unwrap_or(0), inv.noise, inv.figure.clone()),
    };

    let bundle = match command {
        Command::Reproduce => {
            let fig = figure.ok_or_else(|| Error::UnknownFigure { given: String::new(), valid: FIGURE_IDS.join(", ") })?;
            reproduce(&fig, seed, noise)?
        }
        Command::Sweep => {
            let s = match sweep_spec {
                Some(s) => s,
                None => ConfigFile { spec: spec.unwrap_or_default(), sweep: None }.sweep_spec(),
            };
            if noise {
                return Err(Error::Config("sweep runs on exact states; --noise is not supported".into()));
            }
            let ds = sweep(&s)?;
            let mut m = Manifest::new(command.name(), seed, false);
            m.sweep = Some(s);
            m.notes.push(format!("long-time measure on a {} ns grid", crate::nonmarkov::LONG_TIME_DT));
            let mut b = Bundle::new("sweep", m);
            b.add("sweep.csv", ds.to_csv());
            b
        }
        _ => {
            let spec = prepare_spec(command, spec.unwrap_or_default(), seed, noise);
            let keep_counts = command == Command::Tomo;
            let r = run_detailed(&spec, keep_counts)?;
            let mut m = Manifest::new(command.name(), seed, spec.noise.is_some());
            m.notes.push(grid_note(&spec));
            m.specs.push(spec);
            let mut b = Bundle::new(command.name(), m);
            b.add(format!("{}.csv", command.name()), r.dataset.to_csv());
            if keep_counts {
                b.add("tomo_counts.csv", write_count_records(r.counts()));
            }
            b
        }
    };
    bundle.write(out)
}

pub(crate) fn grid_note(spec: &ExperimentSpec) -> String {
    format!(
        "grid {}..{} ns step {} ns ({} points); figure emulation assumes 2 ns sampling",
        spec.grid.t_start,
        spec.grid.t_end,
        spec.grid.dt,
        spec.grid.len()
    )
}
