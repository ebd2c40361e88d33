//! Run manifests: the TOML configuration behind every CLI verb.
//!
//! A manifest names a scenario and spans a Cartesian grid over coupling,
//! collision duration, ancilla population and ancilla coherence. Nested
//! sections keep battery, ancilla, protocol and sweep settings apart;
//! every field has a default so a minimal manifest is a few lines. Parsed
//! manifests are re-serialized verbatim into the sweep index so outputs
//! are self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collision::{AncillaSpec, ProtocolConfig};
use crate::error::{Error, Result};
use crate::transmon::{Spectrum, TransmonSpec};

/// Battery section; mirrors [`TransmonSpec`] with the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransmonSection {
    pub ej_over_ec: f64,
    pub ng: f64,
    pub charge_cutoff: usize,
    pub battery_levels: usize,
}

impl Default for TransmonSection {
    fn default() -> Self {
        Self {
            ej_over_ec: 100.0,
            ng: 0.0,
            charge_cutoff: 35,
            battery_levels: 15,
        }
    }
}

/// Ancilla level spacing: locked to the battery's first gap, or a fixed
/// value in `E_C` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSetting {
    Explicit(f64),
    Named(String),
}

impl Default for DeltaSetting {
    fn default() -> Self {
        DeltaSetting::Named("resonant".to_string())
    }
}

impl DeltaSetting {
    /// Resolves the setting against a solved spectrum.
    pub fn resolve(&self, spectrum: &Spectrum) -> Result<f64> {
        match self {
            DeltaSetting::Explicit(v) => Ok(*v),
            DeltaSetting::Named(name) if name == "resonant" => Ok(spectrum.gap01()),
            DeltaSetting::Named(name) => Err(Error::Manifest(format!(
                "ancilla.delta must be \"resonant\" or a number in E_C units, got \"{name}\""
            ))),
        }
    }
}

/// Ancilla grid: population weights and coherence amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AncillaSection {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: DeltaSetting,
}

impl Default for AncillaSection {
    fn default() -> Self {
        Self {
            q: vec![0.5],
            c: vec![1.0],
            delta: DeltaSetting::default(),
        }
    }
}

/// Protocol grid: couplings (units of omega_p), durations (units of
/// tau_p = 1/omega_p), collision count and recording stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub g: Vec<f64>,
    pub tau: Vec<f64>,
    pub n_collisions: u64,
    pub record_every: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            g: vec![4e-3],
            tau: vec![1.0],
            n_collisions: 1500,
            record_every: 1,
        }
    }
}

/// Output and parallelism settings. `threads = 0` means all available
/// cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub output_dir: PathBuf,
    pub threads: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            threads: 0,
        }
    }
}

/// A validated sweep description: scenario name plus the four nested
/// sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunManifest {
    pub scenario: String,
    pub transmon: TransmonSection,
    pub ancilla: AncillaSection,
    pub protocol: ProtocolSection,
    pub sweep: SweepSection,
}

/// One cell of the manifest's Cartesian grid, in iteration order
/// g, tau, q, c (outermost to innermost).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub g: f64,
    pub tau: f64,
    pub q: f64,
    pub c: f64,
}

/// Parses and validates a manifest file.
pub fn parse_manifest(path: &Path) -> Result<RunManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text)
}

/// Parses and validates manifest text.
pub fn parse_manifest_str(text: &str) -> Result<RunManifest> {
    let manifest: RunManifest =
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

impl RunManifest {
    /// Checks grid and scalar ranges beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        if self.ancilla.q.is_empty()
            || self.ancilla.c.is_empty()
            || self.protocol.g.is_empty()
            || self.protocol.tau.is_empty()
        {
            return Err(Error::Manifest(
                "every grid (ancilla.q, ancilla.c, protocol.g, protocol.tau) must be non-empty"
                    .to_string(),
            ));
        }
        for &q in &self.ancilla.q {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Manifest(format!("ancilla.q entry {q} outside [0, 1]")));
            }
        }
        for &c in &self.ancilla.c {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Manifest(format!("ancilla.c entry {c} outside [0, 1]")));
            }
        }
        for &g in &self.protocol.g {
            if !(g.is_finite() && g > 0.0 && g < 1.0) {
                return Err(Error::Manifest(format!(
                    "protocol.g entry {g} outside (0, 1) omega_p units"
                )));
            }
        }
        for &tau in &self.protocol.tau {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::Manifest(format!(
                    "protocol.tau entry {tau} must be finite and positive"
                )));
            }
        }
        for (name, grid) in [
            ("ancilla.q", &self.ancilla.q),
            ("ancilla.c", &self.ancilla.c),
            ("protocol.g", &self.protocol.g),
            ("protocol.tau", &self.protocol.tau),
        ] {
            let mut bits: Vec<u64> = grid.iter().map(|v| v.to_bits()).collect();
            bits.sort_unstable();
            bits.dedup();
            // Duplicate grid entries would collide on output file names.
            if bits.len() != grid.len() {
                return Err(Error::Manifest(format!("{name} contains duplicate entries")));
            }
        }
        if self.protocol.n_collisions == 0 {
            return Err(Error::Manifest("protocol.n_collisions must be at least 1".into()));
        }
        if self.protocol.record_every == 0 {
            return Err(Error::Manifest("protocol.record_every must be at least 1".into()));
        }
        if let DeltaSetting::Named(name) = &self.ancilla.delta {
            if name != "resonant" {
                return Err(Error::Manifest(format!(
                    "ancilla.delta must be \"resonant\" or a number, got \"{name}\""
                )));
            }
        }
        if let DeltaSetting::Explicit(v) = self.ancilla.delta {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Manifest(format!(
                    "ancilla.delta must be finite and positive, got {v}"
                )));
            }
        }
        // Battery-shape errors surface with full context from the spec
        // constructor.
        self.transmon_spec()?;
        Ok(())
    }

    /// Size of the Cartesian grid.
    pub fn product_size(&self) -> usize {
        self.protocol.g.len() * self.protocol.tau.len() * self.ancilla.q.len() * self.ancilla.c.len()
    }

    /// The grid in deterministic iteration order (g, tau, q, c).
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let mut points = Vec::with_capacity(self.product_size());
        let mut index = 0;
        for &g in &self.protocol.g {
            for &tau in &self.protocol.tau {
                for &q in &self.ancilla.q {
                    for &c in &self.ancilla.c {
                        points.push(GridPoint { index, g, tau, q, c });
                        index += 1;
                    }
                }
            }
        }
        points
    }

    pub fn transmon_spec(&self) -> Result<TransmonSpec> {
        TransmonSpec::new(
            self.transmon.ej_over_ec,
            self.transmon.ng,
            self.transmon.charge_cutoff,
            self.transmon.battery_levels,
        )
    }

    /// Builds the protocol configuration for one grid point, resolving the
    /// ancilla spacing against the solved spectrum.
    pub fn protocol_config(&self, point: &GridPoint, spectrum: &Spectrum) -> Result<ProtocolConfig> {
        let delta = self.ancilla.delta.resolve(spectrum)?;
        let ancilla = AncillaSpec::new(delta, point.q, point.c)?;
        ProtocolConfig::new(
            spectrum.spec().clone(),
            ancilla,
            point.g,
            point.tau,
            self.protocol.n_collisions,
            self.protocol.record_every,
        )
    }

    /// Serializes back to TOML; `parse(to_toml(m)) == m`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Applies one `key=value` override with dotted keys, e.g.
    /// `protocol.n_collisions=5000` or `ancilla.q=0.1,0.5,0.9`. List fields
    /// take comma-separated values.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::BadOverride {
            key: assignment.to_string(),
            reason: "expected key=value".to_string(),
        })?;
        let bad = |reason: &str| Error::BadOverride {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "scenario" => self.scenario = value.to_string(),
            "transmon.ej_over_ec" => self.transmon.ej_over_ec = parse_scalar(key, value)?,
            "transmon.ng" => self.transmon.ng = parse_scalar(key, value)?,
            "transmon.charge_cutoff" => self.transmon.charge_cutoff = parse_scalar(key, value)?,
            "transmon.battery_levels" => self.transmon.battery_levels = parse_scalar(key, value)?,
            "ancilla.q" => self.ancilla.q = parse_list(key, value)?,
            "ancilla.c" => self.ancilla.c = parse_list(key, value)?,
            "ancilla.delta" => {
                self.ancilla.delta = if value == "resonant" {
                    DeltaSetting::Named(value.to_string())
                } else {
                    DeltaSetting::Explicit(parse_scalar(key, value)?)
                };
            }
            "protocol.g" => self.protocol.g = parse_list(key, value)?,
            "protocol.tau" => self.protocol.tau = parse_list(key, value)?,
            "protocol.n_collisions" => self.protocol.n_collisions = parse_scalar(key, value)?,
            "protocol.record_every" => self.protocol.record_every = parse_scalar(key, value)?,
            "sweep.output_dir" => self.sweep.output_dir = PathBuf::from(value),
            "sweep.threads" => self.sweep.threads = parse_scalar(key, value)?,
            _ => return Err(bad("unknown manifest key")),
        }
        self.validate()
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::BadOverride {
        key: key.to_string(),
        reason: format!("cannot parse \"{value}\""),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|item| parse_scalar(key, item))
        .collect()
}
