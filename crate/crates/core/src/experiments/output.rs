//! Plot-ready datasets, CSV/JSON serialization and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentSpec, SweepSpec};
use crate::error::{Error, Result};

/// A table with one index column (`t_ns` for time series) and named series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub index_name: String,
    pub index: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Dataset {
    pub fn new(index_name: impl Into<String>, index: Vec<f64>) -> Self {
        Self { index_name: index_name.into(), index, columns: Vec::new() }
    }

    pub fn time_series(times: Vec<f64>) -> Self {
        Self::new("t_ns", times)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.index.len() {
            return Err(Error::DimensionMismatch { expected: self.index.len(), found: values.len() });
        }
        if name.contains(',') || self.column(&name).is_some() || name == self.index_name {
            return Err(Error::Csv(format!("bad or duplicate column name `{name}`")));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.index_name.clone();
        for (name, _) in &self.columns {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.index.len() {
            s.push_str(&format_value(self.index[k]));
            for (_, v) in &self.columns {
                s.push(',');
                s.push_str(&format_value(v[k]));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))?;
        let names: Vec<&str> = header.split(',').collect();
        let mut cols = vec![Vec::new(); names.len()];
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                return Err(Error::Csv(format!("line {}: expected {} fields", i + 2, names.len())));
            }
            for (c, f) in cols.iter_mut().zip(fields) {
                c.push(f.trim().parse::<f64>().map_err(|_| Error::Csv(format!("line {}: bad number `{f}`", i + 2)))?);
            }
        }
        let mut cols = cols.into_iter();
        let mut ds = Dataset::new(names[0], cols.next().unwrap_or_default());
        for (name, values) in names[1..].iter().zip(cols) {
            ds.push(*name, values)?;
        }
        Ok(ds)
    }
}

/// Nine significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Record of one invocation, sufficient to regenerate its files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    pub seed: u64,
    pub noise: bool,
    #[serde(default)]
    pub specs: Vec<ExperimentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub files: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, noise: bool) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            figure: None,
            seed,
            noise,
            specs: Vec::new(),
            sweep: None,
            files: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Files produced by one invocation, written together with their manifest.
pub struct Bundle {
    pub stem: String,
    pub files: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl Bundle {
    pub fn new(stem: impl Into<String>, manifest: Manifest) -> Self {
        Self { stem: stem.into(), files: Vec::new(), manifest }
    }

    pub fn add(&mut self, file_name: impl Into<String>, contents: String) {
        self.files.push((file_name.into(), contents));
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.stem)
    }

    /// Writes every file, then the manifest; returns the paths written.
    pub fn write(mut self, out: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        self.manifest.files = self.files.iter().map(|(n, _)| n.clone()).collect();
        for (name, contents) in &self.files {
            let p = out.join(name);
            write_atomic(&p, contents.as_bytes())?;
            paths.push(p);
        }
        let p = out.join(self.manifest_name());
        write_atomic(&p, self.manifest.to_json()?.as_bytes())?;
        paths.push(p);
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_value(1.0), "1.00000000e0");
        assert_eq!(format_value(-0.000123456789123), "-1.23456789e-4");
        assert_eq!(format_value(600.0), "6.00000000e2");
        let v = 0.123456789012345;
        let back: f64 = format_value(v).parse().unwrap();
        assert!((back - v).abs() <= 5e-10 * v);
    }

    #[test]
    fn csv_roundtrip() {
        let mut ds = Dataset::time_series(vec![0.0, 2.0, 4.0]);
        ds.push("qfi", vec![1.0, 0.5, 0.25]).unwrap();
        ds.push("flow", vec![-0.25, f64::NAN, 3e-7]).unwrap();
        let text = ds.to_csv();
        assert!(text.starts_with("t_ns,qfi,flow\n"));
        let back = Dataset::from_csv(&text).unwrap();
        assert_eq!(back.names(), vec!["qfi", "flow"]);
        assert_eq!(back.column("qfi").unwrap(), &[1.0, 0.5, 0.25]);
        assert!(back.column("flow").unwrap()[1].is_nan());
        assert!(ds.push("qfi", vec![0.0; 3]).is_err());
        assert!(ds.push("short", vec![0.0; 2]).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn manifest_roundtrip() {
        let mut m = Manifest::new("simulate", 7, true);
        m.specs.push(ExperimentSpec::default());
        let back = Manifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
