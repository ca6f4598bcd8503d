//! Run configuration files.
//!
//! A config is a TOML file in which every key is optional:
//!
//! ```toml
//! experiment = 1          # 1: electron qubit, 2: electron–carbon Bell pair
//! smoothing = 1           # odd adjacent-average window applied to QFI traces
//! outputs = ["qfi", "flows", "measure"]
//!
//! [system]
//! phi1 = 1.5707963267948966
//! phi2 = 0.0
//!
//! [bath]
//! t2_star = 1026.0
//!
//! [grid]
//! t_end = 600.0
//! dt = 2.0
//!
//! [noise]                 # present => shot-noise emulation is on
//! shots = 400000
//!
//! [sweep]                 # only read by `sweep`
//! parameter = "phi2"
//! values = [0.0, 0.5, 1.0]
//! ```
//!
//! Parse and validation failures report the line of the offending key.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nv_model::{BathConfig, Experiment, SystemConfig, TimeGrid};
use crate::tomography::MeasurementModel;

/// Upper bound on grid points per trace.
pub const MAX_GRID_POINTS: usize = 2_000_000;

/// Number of φ₂ values in the default sweep.
pub const DEFAULT_SWEEP_POINTS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Qfi,
    Flows,
    Measure,
    Rates,
    States,
}

impl Output {
    fn needs_channels(self) -> bool {
        matches!(self, Output::Flows | Output::Measure | Output::Rates)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub smoothing: usize,
    pub outputs: Vec<Output>,
    pub system: SystemConfig,
    pub bath: BathConfig,
    pub grid: TimeGrid,
    /// Shot-noise emulation; `None` runs on the exact reduced states.
    pub noise: Option<MeasurementModel>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            experiment: Experiment::ElectronQubit,
            smoothing: 1,
            outputs: vec![Output::Qfi],
            system: SystemConfig::default(),
            bath: BathConfig::default(),
            grid: TimeGrid::default(),
            noise: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Phi1,
    Phi2,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Phi1 => "phi1",
            SweepParameter::Phi2 => "phi2",
        }
    }

    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        match self {
            SweepParameter::Phi1 => SystemConfig { phi1: value, ..*cfg },
            SweepParameter::Phi2 => SystemConfig { phi2: value, ..*cfg },
        }
    }
}

/// Contents of a `[sweep]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Integration horizon (ns); defaults to 8 T₂*.
    pub horizon_ns: Option<f64>,
}

impl Default for SweepTable {
    fn default() -> Self {
        Self { parameter: SweepParameter::Phi2, values: linspace(0.0, PI / 2.0, DEFAULT_SWEEP_POINTS), horizon_ns: None }
    }
}

/// Long-time measure as a function of one channel angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub horizon_ns: Option<f64>,
    pub base: ExperimentSpec,
}

impl SweepSpec {
    pub fn new(table: SweepTable, base: ExperimentSpec) -> Self {
        Self { parameter: table.parameter, values: table.values, horizon_ns: table.horizon_ns, base }
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|i| i.into_error(None))
    }

    fn check(&self) -> std::result::Result<(), Issue> {
        self.base.check()?;
        if self.values.is_empty() {
            return Err(Issue::new(Some("sweep"), "values", "must not be empty"));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=PI + 1e-12).contains(*v)) {
            return Err(Issue::new(Some("sweep"), "values", format!("must lie in [0, pi], got {v}")));
        }
        if let Some(h) = self.horizon_ns {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Issue::new(Some("sweep"), "horizon_ns", format!("must be > 0, got {h}")));
            }
        }
        if self.base.experiment != Experiment::ElectronQubit {
            return Err(Issue::new(None, "experiment", "the long-time measure is defined for experiment 1"));
        }
        if self.base.noise.is_some() {
            return Err(Issue::new(Some("noise"), "", "sweeps run on exact states; remove [noise] or --noise"));
        }
        Ok(())
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// A parsed config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub spec: ExperimentSpec,
    pub sweep: Option<SweepTable>,
}

impl ConfigFile {
    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec::new(self.sweep.clone().unwrap_or_default(), self.spec.clone())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: Option<Experiment>,
    #[serde(default)]
    smoothing: Option<usize>,
    #[serde(default)]
    outputs: Option<Vec<Output>>,
    #[serde(default)]
    system: Option<SystemConfig>,
    #[serde(default)]
    bath: Option<BathConfig>,
    #[serde(default)]
    grid: Option<TimeGrid>,
    #[serde(default)]
    noise: Option<MeasurementModel>,
    #[serde(default)]
    sweep: Option<SweepTable>,
}

/// Parses and validates a config file.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        Error::Config(with_line(line, e.message().trim()))
    })?;
    let d = ExperimentSpec::default();
    let spec = ExperimentSpec {
        experiment: raw.experiment.unwrap_or(d.experiment),
        smoothing: raw.smoothing.unwrap_or(d.smoothing),
        outputs: raw.outputs.unwrap_or(d.outputs),
        system: raw.system.unwrap_or(d.system),
        bath: raw.bath.unwrap_or(d.bath),
        grid: raw.grid.unwrap_or(d.grid),
        noise: raw.noise,
    };
    spec.check().map_err(|i| i.into_error(Some(text)))?;
    let file = ConfigFile { spec, sweep: raw.sweep };
    if let Some(table) = &file.sweep {
        if let Some(v) = table.values.iter().find(|v| !(0.0..=PI + 1e-12).contains(*v)) {
            let issue = Issue::new(Some("sweep"), "values", format!("must lie in [0, pi], got {v}"));
            return Err(issue.into_error(Some(text)));
        }
    }
    Ok(file)
}

/// Parses a config and runs the sweep-specific checks.
pub fn parse_sweep_config(text: &str) -> Result<SweepSpec> {
    let file = parse_config(text)?;
    let sweep = file.sweep_spec();
    sweep.check().map_err(|i| i.into_error(Some(text)))?;
    Ok(sweep)
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_config(text).map(|f| f.spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|i| i.into_error(None))
    }

    pub fn wants(&self, output: Output) -> bool {
        self.outputs.contains(&output)
    }

    pub(crate) fn needs_channels(&self) -> bool {
        self.outputs.iter().any(|o| o.needs_channels())
    }

    fn check(&self) -> std::result::Result<(), Issue> {
        let section = |table: &'static str| move |e: Error| Issue::from_error(Some(table), e);
        self.system.validate().map_err(section("system"))?;
        self.bath.validate().map_err(section("bath"))?;
        self.grid.validate().map_err(section("grid"))?;
        if let Some(noise) = &self.noise {
            noise.validate().map_err(section("noise"))?;
        }
        if self.outputs.is_empty() {
            return Err(Issue::new(None, "outputs", "must list at least one of qfi, flows, measure, rates, states"));
        }
        if self.smoothing == 0 || self.smoothing % 2 == 0 {
            return Err(Issue::new(None, "smoothing", format!("window must be odd and >= 1, got {}", self.smoothing)));
        }
        let n = self.grid.len();
        if n > MAX_GRID_POINTS {
            return Err(Issue::new(Some("grid"), "dt", format!("grid has {n} points, limit is {MAX_GRID_POINTS}")));
        }
        if self.needs_channels() && n < 3 {
            return Err(Issue::new(Some("grid"), "dt", format!("flows need at least 3 grid points, grid has {n}")));
        }
        if self.smoothing > n {
            return Err(Issue::new(None, "smoothing", format!("window {} exceeds the {n} grid points", self.smoothing)));
        }
        Ok(())
    }
}

/// A validation failure tied to a config key.
struct Issue {
    table: Option<&'static str>,
    key: String,
    message: String,
}

impl Issue {
    fn new(table: Option<&'static str>, key: &str, message: impl Into<String>) -> Self {
        Self { table, key: key.to_string(), message: message.into() }
    }

    fn from_error(table: Option<&'static str>, e: Error) -> Self {
        match e {
            Error::InvalidParameter { name, reason } => Self::new(table, name, reason),
            other => Self::new(table, "", other.to_string()),
        }
    }

    fn into_error(self, text: Option<&str>) -> Error {
        let line = text.and_then(|t| key_line(t, self.table, &self.key));
        let place = match (self.table, self.key.as_str()) {
            (Some(t), "") => format!("[{t}]"),
            (Some(t), k) => format!("{t}.{k}"),
            (None, k) => k.to_string(),
        };
        Error::Config(with_line(line, &format!("{place}: {}", self.message)))
    }
}

fn with_line(line: Option<usize>, msg: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {msg}"),
        None => msg.to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line where `key` is assigned inside `[table]` (or at top level).
/// An empty key finds the table header; a key that was left at its default
/// falls back to the header line.
fn key_line(text: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.split(']').next().unwrap_or("").trim().to_string();
            if Some(name.as_str()) == table {
                header = Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        if current.as_deref() != table || key.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if rest.starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    header
}
