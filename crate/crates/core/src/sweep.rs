//! Grid execution and persistent output formats.
//!
//! A sweep runs one trajectory per manifest grid point on a bounded worker
//! pool (grid points are independent; each trajectory is inherently
//! sequential) and writes one CSV per point plus a JSON index describing
//! the whole run. Workers only compute; a single collector writes every
//! file in grid order, so outputs are byte-identical regardless of the
//! parallelism degree. Numeric CSV fields carry 12 significant digits with
//! `.` as the decimal separator and LF line endings.
//!
//! The fit pipeline replays a sweep's index, classifies each trajectory,
//! fits the matching model and aggregates scaling laws across the grid.
//! Law aggregation pools every qualifying point, so manifests meant for
//! law extraction should sweep a single collision duration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, AmplitudeMode, TrajectoryShape, RESIDUAL_LIMIT};
use crate::collision::{run_protocol_cached, ProtocolConfig, Trajectory, TrajectoryPoint};
use crate::error::{Error, Result};
use crate::manifest::{GridPoint, RunManifest};
use crate::qcore::PropagatorCache;
use crate::transmon::{solve_spectrum, Spectrum, TransmonSpec};

/// Deviation (in `E_f` units) above which a truncation change is flagged
/// as unconverged.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;

/// Relative bound-level shift allowed when the charge basis grows.
pub const SPECTRUM_SHIFT_THRESHOLD: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Numeric and CSV formats

/// Formats with 12 significant digits; the exact byte representation the
/// determinism invariant is stated over.
pub fn format_float(v: f64) -> String {
    format!("{v:.11e}")
}

/// Renders a trajectory as CSV: comment header with units and parameters,
/// then `n,E,delta_E,ergotropy,efficiency,purity` rows. Efficiency is empty
/// where the stored energy is too small to divide by.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let c = &traj.config;
    let mut out = String::with_capacity(64 * traj.points.len() + 256);
    out.push_str("# collisional charging trajectory\n");
    out.push_str(&format!(
        "# ej_over_ec={} ng={} charge_cutoff={} battery_levels={}\n",
        c.transmon.ej_over_ec, c.transmon.ng, c.transmon.charge_cutoff, c.transmon.battery_levels
    ));
    out.push_str(&format!(
        "# g={} tau={} q={} c={} delta={}\n",
        c.coupling_g, c.tau, c.ancilla.q, c.ancilla.c, c.ancilla.delta
    ));
    out.push_str(&format!(
        "# energies in units of E_f = {} E_C; n is the collision count\n",
        format_float(traj.e_f)
    ));
    out.push_str("n,E,delta_E,ergotropy,efficiency,purity\n");
    for p in &traj.points {
        let eff = p.efficiency.map(format_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.n,
            format_float(p.energy),
            format_float(p.stored_energy),
            format_float(p.ergotropy),
            eff,
            format_float(p.purity)
        ));
    }
    out
}

/// Reads a trajectory CSV produced by [`trajectory_csv`] back into points.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, reason: String| Error::CsvParse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut points = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.starts_with('#') || raw.is_empty() {
            continue;
        }
        if !saw_header {
            if raw != "n,E,delta_E,ergotropy,efficiency,purity" {
                return Err(parse_err(line_no, format!("unexpected header \"{raw}\"")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(line_no, format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad number \"{}\"", fields[idx])))
        };
        points.push(TrajectoryPoint {
            n: fields[0]
                .parse::<u64>()
                .map_err(|_| parse_err(line_no, format!("bad collision index \"{}\"", fields[0])))?,
            energy: num(1)?,
            stored_energy: num(2)?,
            ergotropy: num(3)?,
            efficiency: if fields[4].is_empty() { None } else { Some(num(4)?) },
            purity: num(5)?,
        });
    }
    if !saw_header {
        return Err(parse_err(1, "missing column header".to_string()));
    }
    Ok(points)
}

/// File name for one grid point, encoding every swept parameter.
pub fn trajectory_file_name(ej_over_ec: f64, point: &GridPoint) -> String {
    format!(
        "traj_r{}_g{}_tau{}_q{}_c{}.csv",
        ej_over_ec, point.g, point.tau, point.q, point.c
    )
}

// ---------------------------------------------------------------------------
// Sweep index

/// Solved-battery summary recorded in the index so outputs are
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub bound_count: usize,
    pub e_f: f64,
    pub gap01: f64,
    pub omega_p: f64,
    /// Levels relative to the ground state, `E_C` units.
    pub shifted_levels: Vec<f64>,
}

impl SpectrumSummary {
    pub fn from_spectrum(s: &Spectrum) -> Self {
        Self {
            bound_count: s.bound_count(),
            e_f: s.e_f(),
            gap01: s.gap01(),
            omega_p: s.spec().plasma_frequency(),
            shifted_levels: s.shifted_levels().iter().copied().collect(),
        }
    }
}

/// One grid point's outcome in the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: usize,
    pub g: f64,
    pub tau: f64,
    pub q: f64,
    pub c: f64,
    /// CSV file name relative to the index, present on success.
    pub file: Option<String>,
    /// Recorded rows (including n = 0) on success.
    pub rows: usize,
    /// "ok" or the failure message.
    pub status: String,
}

/// Machine-readable description of a finished sweep: the manifest with all
/// defaults applied, the solved battery, and one entry per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub scenario: String,
    pub manifest: RunManifest,
    pub spectrum: SpectrumSummary,
    pub points: Vec<IndexEntry>,
}

/// Reads a sweep index file.
pub fn read_index(path: &Path) -> Result<SweepIndex> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Sweep execution

/// Aggregate counters for a finished sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    /// Trajectory rows written, each one a validated battery state.
    pub rows_written: usize,
    pub wall_seconds: f64,
}

/// Result of [`run_sweep`]: where the outputs landed plus the summary and
/// any isolated per-point failures.
#[derive(Debug)]
pub struct SweepOutput {
    pub output_dir: PathBuf,
    pub index_path: PathBuf,
    pub summary: SweepSummary,
    pub failures: Vec<(usize, String)>,
}

/// Executes every grid point of the manifest and writes one trajectory CSV
/// per point plus `index.json`. Point failures are isolated: siblings still
/// run and the index records the failure message. The caller decides the
/// exit status from `failures`.
pub fn run_sweep(manifest: &RunManifest) -> Result<SweepOutput> {
    manifest.validate()?;
    let started = Instant::now();
    let spec = manifest.transmon_spec()?;
    let spectrum = Arc::new(solve_spectrum(&spec)?);
    let cache = PropagatorCache::new();

    let points = manifest.grid_points();
    let mut jobs = Vec::with_capacity(points.len());
    for point in &points {
        jobs.push((*point, manifest.protocol_config(point, &spectrum)));
    }

    let results = execute_jobs(&jobs, &spectrum, &cache, manifest.sweep.threads)?;

    let output_dir = manifest.sweep.output_dir.clone();
    std::fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;

    // Single collector: files written in grid order.
    let mut entries = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    let mut rows_written = 0usize;
    for (point, result) in points.iter().zip(results) {
        let entry = match result {
            Ok((csv, rows)) => {
                let name = trajectory_file_name(spec.ej_over_ec, point);
                let path = output_dir.join(&name);
                std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
                rows_written += rows;
                IndexEntry {
                    index: point.index,
                    g: point.g,
                    tau: point.tau,
                    q: point.q,
                    c: point.c,
                    file: Some(name),
                    rows,
                    status: "ok".to_string(),
                }
            }
            Err(e) => {
                failures.push((point.index, e.to_string()));
                IndexEntry {
                    index: point.index,
                    g: point.g,
                    tau: point.tau,
                    q: point.q,
                    c: point.c,
                    file: None,
                    rows: 0,
                    status: format!("failed: {e}"),
                }
            }
        };
        entries.push(entry);
    }

    let index = SweepIndex {
        scenario: manifest.scenario.clone(),
        manifest: manifest.clone(),
        spectrum: SpectrumSummary::from_spectrum(&spectrum),
        points: entries,
    };
    let index_path = output_dir.join("index.json");
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    std::fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))?;

    let summary = SweepSummary {
        total: points.len(),
        completed: points.len() - failures.len(),
        failed: failures.len(),
        rows_written,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(SweepOutput {
        output_dir,
        index_path,
        summary,
        failures,
    })
}

/// Runs the prepared jobs on a worker pool sized by `threads`
/// (0 = available cores). Workers only compute; results come back in job
/// order.
pub(crate) fn execute_jobs(
    jobs: &[(GridPoint, Result<ProtocolConfig>)],
    spectrum: &Arc<Spectrum>,
    cache: &PropagatorCache,
    threads: usize,
) -> Result<Vec<Result<(String, usize)>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(_, config)| match config {
                Ok(config) => {
                    let traj = run_protocol_cached(config, spectrum, cache)?;
                    let rows = traj.points.len();
                    Ok((trajectory_csv(&traj), rows))
                }
                Err(e) => Err(Error::Manifest(e.to_string())),
            })
            .collect()
    }))
}

// ---------------------------------------------------------------------------
// Fit pipeline

/// Per-trajectory fit outcome inside a [`FitDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub index: usize,
    pub g: f64,
    pub tau: f64,
    pub q: f64,
    pub c: f64,
    pub shape: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_rms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Fit results for a whole sweep: per-point fits plus law-keyed aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub scenario: String,
    pub points: Vec<PointFit>,
    /// Aggregated scaling laws keyed by law name ("frequency",
    /// "damping_exponent", "damping_shapes", "saturation_energy",
    /// "charging_rate").
    pub laws: BTreeMap<String, serde_json::Value>,
}

/// Classifies and fits every completed trajectory of a sweep, then
/// aggregates scaling laws across the grid where enough points qualify.
pub fn run_fit_pipeline(index_path: &Path) -> Result<FitDocument> {
    let index = read_index(index_path)?;
    let dir = index_path.parent().unwrap_or_else(|| Path::new("."));

    let mut fits = Vec::new();
    for entry in &index.points {
        let Some(file) = &entry.file else { continue };
        let path = dir.join(file);
        let points = read_trajectory_csv(&path)?;
        let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let es: Vec<f64> = points.iter().map(|p| p.stored_energy).collect();
        fits.push(fit_one(entry, &ns, &es));
    }

    let mut laws = BTreeMap::new();
    let oscillatory: Vec<&PointFit> = fits
        .iter()
        .filter(|f| f.shape == "oscillatory" && f.omega.is_some())
        .collect();
    let freq_points: Vec<(f64, f64, f64)> = oscillatory
        .iter()
        .map(|f| (f.g, f.q, f.omega.unwrap()))
        .collect();
    if let Ok(fit) = analysis::fit_frequency_scaling(&freq_points) {
        laws.insert("frequency".to_string(), serde_json::to_value(&fit)?);
    }
    let damping_points: Vec<(f64, f64, f64)> = oscillatory
        .iter()
        .filter(|f| f.gamma.is_some_and(|g| g > 0.0))
        .map(|f| (f.g, f.q, f.gamma.unwrap()))
        .collect();
    if let Ok(fit) = analysis::fit_damping_scaling(&damping_points) {
        laws.insert("damping_exponent".to_string(), serde_json::to_value(&fit.exponent)?);
        laws.insert("damping_shapes".to_string(), serde_json::to_value(&fit.shapes)?);
    }

    let saturating: Vec<&PointFit> = fits
        .iter()
        .filter(|f| f.shape == "saturating" && f.saturation_f.is_some())
        .collect();
    let energy_points: Vec<(f64, f64)> = saturating
        .iter()
        .map(|f| (f.q, f.saturation_f.unwrap()))
        .collect();
    if let Ok(fit) = analysis::fit_saturation_energy(&energy_points) {
        laws.insert("saturation_energy".to_string(), serde_json::to_value(&fit)?);
    }
    let rate_points: Vec<(f64, f64)> = saturating
        .iter()
        .filter(|f| f.saturation_rate.is_some_and(|r| r > 0.0))
        .map(|f| (f.g, f.saturation_rate.unwrap()))
        .collect();
    if let Ok(fit) = analysis::fit_charging_rate(&rate_points) {
        laws.insert("charging_rate".to_string(), serde_json::to_value(&fit)?);
    }

    Ok(FitDocument {
        scenario: index.scenario.clone(),
        points: fits,
        laws,
    })
}

fn fit_one(entry: &IndexEntry, ns: &[f64], es: &[f64]) -> PointFit {
    let mut fit = PointFit {
        index: entry.index,
        g: entry.g,
        tau: entry.tau,
        q: entry.q,
        c: entry.c,
        shape: "unknown".to_string(),
        omega: None,
        gamma: None,
        amplitude: None,
        saturation_f: None,
        saturation_rate: None,
        residual_rms: None,
        converged: None,
        error: None,
    };
    let shape = match analysis::classify_shape(ns, es) {
        Ok(report) => report.shape,
        Err(e) => {
            fit.error = Some(e.to_string());
            return fit;
        }
    };
    fit.shape = match shape {
        TrajectoryShape::Oscillatory => "oscillatory",
        TrajectoryShape::Saturating => "saturating",
        TrajectoryShape::Indeterminate => "indeterminate",
    }
    .to_string();
    match shape {
        TrajectoryShape::Oscillatory => {
            match analysis::fit_damped_cosine_series(ns, es, AmplitudeMode::FixedHalf) {
                Ok(r) => {
                    fit.omega = Some(r.omega);
                    fit.gamma = Some(r.gamma);
                    fit.amplitude = Some(r.amplitude_scale);
                    fit.residual_rms = Some(r.residual_rms);
                    fit.converged = Some(r.converged);
                }
                Err(e) => fit.error = Some(e.to_string()),
            }
        }
        TrajectoryShape::Saturating => match analysis::fit_saturation_series(ns, es) {
            Ok(r) => {
                fit.saturation_f = Some(r.f);
                fit.saturation_rate = Some(r.gamma);
                fit.residual_rms = Some(r.residual_rms);
                fit.converged = Some(r.converged);
            }
            Err(e) => fit.error = Some(e.to_string()),
        },
        TrajectoryShape::Indeterminate => {
            fit.error = Some(format!(
                "single extremum in the record: neither model applies (residual gate {RESIDUAL_LIMIT} E_f)"
            ));
        }
    }
    fit
}

/// Writes a fit document next to the index it came from.
pub fn write_fit_document(doc: &FitDocument, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Convergence report

/// One truncation comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub label: String,
    pub charge_cutoff: usize,
    pub battery_levels: usize,
    /// Max pointwise |delta E| difference against the base run, `E_f` units.
    pub max_deviation: f64,
    pub flagged: bool,
}

/// Truncation-sensitivity report around a manifest's first grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub base_charge_cutoff: usize,
    pub base_battery_levels: usize,
    pub threshold: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Max relative bound-level shift when the charge basis grows by 10.
    pub spectrum_shift: f64,
    pub spectrum_shift_ok: bool,
}

/// Max pointwise stored-energy deviation between two runs of the same
/// protocol at different truncations. Both configs must share the
/// collision count and recording stride.
pub fn trajectory_deviation(a: &ProtocolConfig, b: &ProtocolConfig) -> Result<f64> {
    if a.n_collisions != b.n_collisions || a.record_every != b.record_every {
        return Err(Error::shape(
            "trajectory deviation needs identical collision counts and recording strides",
        ));
    }
    let ta = crate::collision::run_protocol(a)?;
    let tb = crate::collision::run_protocol(b)?;
    let mut max = 0.0f64;
    for (pa, pb) in ta.points.iter().zip(&tb.points) {
        max = max.max((pa.stored_energy - pb.stored_energy).abs());
    }
    Ok(max)
}

/// Builds the truncation report: the battery-level and charge-cutoff
/// doublings of the manifest's first grid point, plus the bound-level shift
/// under a larger charge basis.
pub fn convergence_report(manifest: &RunManifest) -> Result<ConvergenceReport> {
    manifest.validate()?;
    let spec = manifest.transmon_spec()?;
    let spectrum = solve_spectrum(&spec)?;
    let point = manifest.grid_points()[0];
    let base = manifest.protocol_config(&point, &spectrum)?;

    let mut rows = Vec::new();
    let doubled_levels = (2 * spec.battery_levels).min(spec.charge_dim());
    for (label, cutoff, levels) in [
        (
            format!("battery_levels {} -> {}", spec.battery_levels, doubled_levels),
            spec.charge_cutoff,
            doubled_levels,
        ),
        (
            format!("charge_cutoff {} -> {}", spec.charge_cutoff, 2 * spec.charge_cutoff),
            2 * spec.charge_cutoff,
            spec.battery_levels,
        ),
    ] {
        let probe_spec = TransmonSpec::new(spec.ej_over_ec, spec.ng, cutoff, levels)?;
        let mut probe = base.clone();
        probe.transmon = probe_spec;
        let max_deviation = trajectory_deviation(&base, &probe)?;
        rows.push(ConvergenceRow {
            label,
            charge_cutoff: cutoff,
            battery_levels: levels,
            max_deviation,
            flagged: max_deviation > CONVERGENCE_THRESHOLD,
        });
    }

    let bigger = TransmonSpec::new(
        spec.ej_over_ec,
        spec.ng,
        spec.charge_cutoff + 10,
        spec.battery_levels,
    )?;
    let wider = solve_spectrum(&bigger)?;
    let mut spectrum_shift = 0.0f64;
    for m in 0..spectrum.bound_count() {
        let a = spectrum.level(m);
        let b = wider.level(m);
        spectrum_shift = spectrum_shift.max((a - b).abs() / a.abs().max(1e-300));
    }
    Ok(ConvergenceReport {
        base_charge_cutoff: spec.charge_cutoff,
        base_battery_levels: spec.battery_levels,
        threshold: CONVERGENCE_THRESHOLD,
        rows,
        spectrum_shift,
        spectrum_shift_ok: spectrum_shift <= SPECTRUM_SHIFT_THRESHOLD,
    })
}
