//! Trajectory fits and scaling laws.
//!
//! Charging records come in two phenomenological shapes. Coherent ancillas
//! produce a damped oscillation of the stored energy,
//!
//! ```text
//! dE(n) = (E_f/2) [1 - e^{-Gamma n} cos(Omega n)],
//! ```
//!
//! while incoherent ancillas produce a monotone saturation
//! `dE(n) = f [1 - e^{-gamma n}]`. This module classifies a record into one
//! of the two shapes, fits the matching model, and aggregates fitted
//! parameters across parameter grids into the scaling laws for the
//! oscillation frequency, the damping, the saturation energy and the
//! charging rate. All energies are in `E_f` units, abscissas are collision
//! counts, so every fitted parameter is per-collision and dimensionless.
//!
//! Fitting is derivative-free simplex descent from eight deterministic
//! starts seeded by shape heuristics (quarter-period zero crossing for the
//! frequency, extremum decay ratio for the damping), followed by a
//! finite-difference Newton polish. `converged` means the polish ended with
//! a normalized gradient norm below 1e-10 and a relative parameter step
//! below 1e-8; fits whose residual rms exceeds [`RESIDUAL_LIMIT`] are
//! refused outright rather than reported.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collision::Trajectory;
use crate::error::{Error, Result};

/// Fits with residual rms above this (in `E_f` units) are rejected: the
/// model does not describe the data and its parameters would be noise.
pub const RESIDUAL_LIMIT: f64 = 0.05;

/// Extrema count below this smoothing window (in collisions) is noise, not
/// oscillation.
pub const SMOOTHING_WINDOW: f64 = 50.0;

/// Minimum swing between successive extrema, as a fraction of the series
/// range, for the pair to count as an oscillation.
pub const PROMINENCE_FRACTION: f64 = 0.05;

const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Shape classification

/// Gross shape of a stored-energy record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryShape {
    /// At least two prominent extrema: fit the damped cosine.
    Oscillatory,
    /// No prominent extremum: fit the saturating exponential.
    Saturating,
    /// Exactly one prominent extremum (e.g. a record cut right after its
    /// first crest): neither model applies over this window.
    Indeterminate,
}

/// One detected extremum of the smoothed series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    /// Collision index of the extremum.
    pub n: f64,
    /// Smoothed series value there.
    pub value: f64,
    pub is_maximum: bool,
}

/// Shape classification together with the extrema that justify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub shape: TrajectoryShape,
    pub extrema: Vec<Extremum>,
}

/// Classifies a stored-energy series by smoothing it over
/// [`SMOOTHING_WINDOW`] collisions and counting extrema whose swing exceeds
/// [`PROMINENCE_FRACTION`] of the series range.
pub fn classify_shape(ns: &[f64], es: &[f64]) -> Result<ShapeReport> {
    check_series(ns, es)?;
    let smoothed = moving_average(es, smoothing_points(ns));
    let lo = smoothed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smoothed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = PROMINENCE_FRACTION * (hi - lo);
    let extrema = if threshold > 0.0 {
        zigzag_extrema(ns, &smoothed, threshold)
    } else {
        Vec::new()
    };
    let shape = match extrema.len() {
        0 => TrajectoryShape::Saturating,
        1 => TrajectoryShape::Indeterminate,
        _ => TrajectoryShape::Oscillatory,
    };
    Ok(ShapeReport { shape, extrema })
}

fn check_series(ns: &[f64], es: &[f64]) -> Result<()> {
    if ns.len() != es.len() {
        return Err(Error::shape(format!(
            "abscissa has {} points, series has {}",
            ns.len(),
            es.len()
        )));
    }
    if ns.len() < 8 {
        return Err(Error::TooFewPoints {
            need: 8,
            got: ns.len(),
        });
    }
    for i in 0..ns.len() {
        if !ns[i].is_finite() || !es[i].is_finite() {
            return Err(Error::param("series", format!("non-finite entry at {i}")));
        }
        if i > 0 && ns[i] <= ns[i - 1] {
            return Err(Error::param(
                "series",
                format!("collision indices must be strictly increasing at {i}"),
            ));
        }
    }
    Ok(())
}

/// Number of points covering [`SMOOTHING_WINDOW`] collisions at the median
/// recording stride.
fn smoothing_points(ns: &[f64]) -> usize {
    let mut gaps: Vec<f64> = ns.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let stride = gaps[gaps.len() / 2].max(1.0);
    ((SMOOTHING_WINDOW / stride).round() as usize).max(1)
}

fn moving_average(es: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let len = es.len();
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(len);
            es[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Turning points of the series with swing at least `threshold`, strictly
/// alternating between maxima and minima.
fn zigzag_extrema(ns: &[f64], s: &[f64], threshold: f64) -> Vec<Extremum> {
    let mut extrema = Vec::new();
    // direction: 0 undecided, +1 rising (tracking a max), -1 falling.
    let mut dir = 0i8;
    let (mut run_hi, mut run_hi_i) = (s[0], 0usize);
    let (mut run_lo, mut run_lo_i) = (s[0], 0usize);
    for i in 1..s.len() {
        if s[i] > run_hi {
            run_hi = s[i];
            run_hi_i = i;
        }
        if s[i] < run_lo {
            run_lo = s[i];
            run_lo_i = i;
        }
        match dir {
            0 => {
                if s[i] - run_lo >= threshold {
                    dir = 1;
                    run_hi = s[i];
                    run_hi_i = i;
                } else if run_hi - s[i] >= threshold {
                    dir = -1;
                    run_lo = s[i];
                    run_lo_i = i;
                }
            }
            1 => {
                if run_hi - s[i] >= threshold {
                    extrema.push(Extremum {
                        n: ns[run_hi_i],
                        value: run_hi,
                        is_maximum: true,
                    });
                    dir = -1;
                    run_lo = s[i];
                    run_lo_i = i;
                }
            }
            _ => {
                if s[i] - run_lo >= threshold {
                    extrema.push(Extremum {
                        n: ns[run_lo_i],
                        value: run_lo,
                        is_maximum: false,
                    });
                    dir = 1;
                    run_hi = s[i];
                    run_hi_i = i;
                }
            }
        }
    }
    extrema
}

// ---------------------------------------------------------------------------
// Damped-cosine fit

/// Whether the oscillation amplitude is pinned to the model's `E_f/2` or
/// fitted (useful for diagnosing truncation effects).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmplitudeMode {
    FixedHalf,
    Free,
}

/// Result of fitting `dE(n) = A [1 - e^{-Gamma n} cos(Omega n)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampedCosineFit {
    /// Per-collision angular frequency; positive.
    pub omega: f64,
    /// Per-collision damping; non-negative on converged fits.
    pub gamma: f64,
    /// Amplitude `A` in `E_f` units; 0.5 exactly under
    /// [`AmplitudeMode::FixedHalf`].
    pub amplitude_scale: f64,
    /// Root-mean-square residual in `E_f` units.
    pub residual_rms: f64,
    /// Polish ended below the gradient and step thresholds.
    pub converged: bool,
}

fn damped_cosine(n: f64, a: f64, omega: f64, gamma: f64) -> f64 {
    a * (1.0 - (-gamma * n).exp() * (omega * n).cos())
}

/// Fits the damped cosine over a window of recorded points (indices into
/// `traj.points`). The window must contain at least two prominent extrema.
pub fn fit_damped_cosine(
    traj: &Trajectory,
    window: Range<usize>,
    mode: AmplitudeMode,
) -> Result<DampedCosineFit> {
    if window.start >= window.end || window.end > traj.points.len() {
        return Err(Error::BadFitWindow {
            lo: window.start,
            hi: window.end,
            points: traj.points.len(),
        });
    }
    let ns: Vec<f64> = traj.points[window.clone()]
        .iter()
        .map(|p| p.n as f64)
        .collect();
    let es: Vec<f64> = traj.points[window]
        .iter()
        .map(|p| p.stored_energy)
        .collect();
    fit_damped_cosine_series(&ns, &es, mode)
}

/// Series-level damped-cosine fit; `es` in `E_f` units.
pub fn fit_damped_cosine_series(
    ns: &[f64],
    es: &[f64],
    mode: AmplitudeMode,
) -> Result<DampedCosineFit> {
    let report = classify_shape(ns, es)?;
    if report.shape != TrajectoryShape::Oscillatory {
        return Err(Error::NotOscillatory);
    }
    let a0 = 0.5;
    let omega0 = initial_omega(ns, es, a0, &report);
    let gamma0 = initial_gamma(a0, &report);

    let objective = |x: &[f64]| -> f64 {
        let (omega, gamma, a) = match mode {
            AmplitudeMode::FixedHalf => (x[0], x[1], 0.5),
            AmplitudeMode::Free => (x[0], x[1], x[2]),
        };
        mean_squared_error(ns, es, |n| damped_cosine(n, a, omega, gamma))
    };

    // Deterministic multi-start tweaks around the heuristic seed: the
    // frequency guess can be off by a factor of two when the first crossing
    // is distorted and the damping guess is crude.
    let tweaks: [(f64, f64); 8] = [
        (1.0, 1.0),
        (0.5, 1.0),
        (2.0, 1.0),
        (1.0, 0.2),
        (1.0, 5.0),
        (0.7, 0.7),
        (1.4, 2.0),
        (1.15, 0.5),
    ];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for (fo, fg) in tweaks {
        let start = match mode {
            AmplitudeMode::FixedHalf => vec![omega0 * fo, gamma0 * fg],
            AmplitudeMode::Free => vec![omega0 * fo, gamma0 * fg, a0],
        };
        let scale = match mode {
            AmplitudeMode::FixedHalf => vec![omega0, (gamma0).max(1e-5)],
            AmplitudeMode::Free => vec![omega0, (gamma0).max(1e-5), 0.25],
        };
        let candidate = minimize(&objective, &start, &scale);
        if best.as_ref().is_none_or(|b| candidate.1 < b.1) {
            best = Some(candidate);
        }
    }
    let (x, mse, converged) = best.expect("non-empty start list");

    let (mut omega, mut gamma, amplitude) = match mode {
        AmplitudeMode::FixedHalf => (x[0], x[1], 0.5),
        AmplitudeMode::Free => (x[0], x[1], x[2]),
    };
    // The model is even in omega; report the positive representative.
    omega = omega.abs();
    let converged = converged && gamma >= -1e-10;
    if gamma < 0.0 && gamma >= -1e-10 {
        gamma = 0.0;
    }
    let residual_rms = mse.sqrt();
    if residual_rms > RESIDUAL_LIMIT {
        return Err(Error::FitResidualTooLarge {
            rms: residual_rms,
            limit: RESIDUAL_LIMIT,
        });
    }
    Ok(DampedCosineFit {
        omega,
        gamma,
        amplitude_scale: amplitude,
        residual_rms,
        converged,
    })
}

/// Quarter-period estimate: the oscillation first crosses the midline `a0`
/// at `Omega n = pi/2`.
fn initial_omega(ns: &[f64], es: &[f64], a0: f64, report: &ShapeReport) -> f64 {
    for i in 1..es.len() {
        if es[i - 1] < a0 && es[i] >= a0 {
            // Linear interpolation inside the step.
            let frac = (a0 - es[i - 1]) / (es[i] - es[i - 1]);
            let n_cross = ns[i - 1] + frac * (ns[i] - ns[i - 1]);
            if n_cross > 0.0 {
                return std::f64::consts::FRAC_PI_2 / n_cross;
            }
        }
    }
    // Fallback: half period at the first maximum.
    let first_max = report
        .extrema
        .iter()
        .find(|e| e.is_maximum)
        .map_or(ns[ns.len() / 2], |e| e.n);
    std::f64::consts::PI / first_max.max(1.0)
}

/// Damping estimate from the decay of successive maxima deviations from the
/// midline.
fn initial_gamma(a0: f64, report: &ShapeReport) -> f64 {
    let maxima: Vec<&Extremum> = report.extrema.iter().filter(|e| e.is_maximum).collect();
    if maxima.len() >= 2 {
        let d1 = (maxima[0].value - a0).abs();
        let d2 = (maxima[1].value - a0).abs();
        if d1 > 0.0 && d2 > 0.0 && maxima[1].n > maxima[0].n {
            let g = (d1 / d2).ln() / (maxima[1].n - maxima[0].n);
            if g.is_finite() && g > 0.0 {
                return g.min(0.1);
            }
        }
    }
    1e-4
}

// ---------------------------------------------------------------------------
// Saturation fit

/// Result of fitting `dE(n) = f [1 - e^{-gamma n}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    /// Saturation energy in `E_f` units.
    pub f: f64,
    /// Per-collision charging rate (inverse charging time).
    pub gamma: f64,
    /// Root-mean-square residual in `E_f` units.
    pub residual_rms: f64,
    pub converged: bool,
}

fn saturating_exp(n: f64, f: f64, gamma: f64) -> f64 {
    f * (1.0 - (-gamma * n).exp())
}

/// Fits the monotone saturation model over all recorded points.
pub fn fit_saturation(traj: &Trajectory) -> Result<SaturationFit> {
    let ns = traj.collision_indices();
    let es = traj.stored_energies();
    fit_saturation_series(&ns, &es)
}

/// Series-level saturation fit; `es` in `E_f` units.
pub fn fit_saturation_series(ns: &[f64], es: &[f64]) -> Result<SaturationFit> {
    let report = classify_shape(ns, es)?;
    if report.shape != TrajectoryShape::Saturating {
        return Err(Error::NotSaturating);
    }
    let tail = (ns.len() / 10).max(3).min(ns.len());
    let f0 = es[ns.len() - tail..].iter().sum::<f64>() / tail as f64;
    let target = (1.0 - std::f64::consts::E.recip()) * f0;
    let gamma0 = ns
        .iter()
        .zip(es)
        .find(|&(_, &e)| e >= target)
        .map_or(3.0 / ns[ns.len() - 1], |(&n, _)| 1.0 / n.max(1.0));

    let objective =
        |x: &[f64]| -> f64 { mean_squared_error(ns, es, |n| saturating_exp(n, x[0], x[1])) };
    let tweaks: [(f64, f64); 8] = [
        (1.0, 1.0),
        (1.0, 0.3),
        (1.0, 3.0),
        (0.8, 1.0),
        (1.2, 1.0),
        (1.0, 0.1),
        (0.9, 2.0),
        (1.1, 0.5),
    ];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for (ff, fg) in tweaks {
        let start = vec![f0 * ff, gamma0 * fg];
        let scale = vec![f0.abs().max(0.05), gamma0.max(1e-6)];
        let candidate = minimize(&objective, &start, &scale);
        if best.as_ref().is_none_or(|b| candidate.1 < b.1) {
            best = Some(candidate);
        }
    }
    let (x, mse, converged) = best.expect("non-empty start list");
    Ok(SaturationFit {
        f: x[0],
        gamma: x[1],
        residual_rms: mse.sqrt(),
        converged,
    })
}

// ---------------------------------------------------------------------------
// Scaling laws

/// Which phenomenological law a [`ScalingFit`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingLaw {
    /// `Omega = Omega* (g/omega_p)^alpha [q(1-q)]^beta`.
    Frequency,
    /// Coupling exponent of `Gamma` at fixed q.
    DampingExponent,
    /// `Gamma / (g/omega_p)^2 = Gamma* (|q - 1/2|^delta + offset)` at one g.
    DampingShape,
    /// `f(q)/E_f = a (1-q) + b`.
    SaturationEnergy,
    /// `gamma = gamma* (g/omega_p)^beta`.
    ChargingRate,
}

/// A fitted scaling law: named parameters plus the covariance of the
/// underlying regression parameters (row-major, in the key order of
/// `parameter_order`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub law: ScalingLaw,
    pub params: BTreeMap<String, f64>,
    /// Names of the regression parameters the covariance rows refer to.
    pub parameter_order: Vec<String>,
    /// Covariance matrix of the regression parameters, row-major.
    pub covariance: Vec<Vec<f64>>,
}

impl ScalingFit {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }
}

/// Fits `Omega = Omega* (g/omega_p)^alpha [q(1-q)]^beta` by linear
/// regression in log space. Points are `(g_over_omega_p, q, omega)`; needs
/// at least 6 of them spanning 3 distinct couplings and 3 distinct
/// populations. The covariance refers to `(ln Omega*, alpha, beta)`.
pub fn fit_frequency_scaling(points: &[(f64, f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 6 {
        return Err(Error::TooFewPoints {
            need: 6,
            got: points.len(),
        });
    }
    for &(g, q, omega) in points {
        if !(g.is_finite() && g > 0.0) || !(omega.is_finite() && omega > 0.0) {
            return Err(Error::param("points", "couplings and frequencies must be positive"));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::param(
                "points",
                format!("q = {q} is outside (0, 1); the log design needs q(1-q) > 0"),
            ));
        }
    }
    require_distinct(points.iter().map(|p| p.0), 3, "couplings")?;
    require_distinct(points.iter().map(|p| p.1), 3, "populations")?;

    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|&(g, q, _)| vec![1.0, g.ln(), (q * (1.0 - q)).ln()])
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.2.ln()).collect();
    let (params, cov) = least_squares(&rows, &y, "frequency law over (ln g, ln q(1-q))")?;

    let mut map = BTreeMap::new();
    map.insert("omega_star".into(), params[0].exp());
    map.insert("alpha".into(), params[1]);
    map.insert("beta".into(), params[2]);
    Ok(ScalingFit {
        law: ScalingLaw::Frequency,
        params: map,
        parameter_order: vec!["ln_omega_star".into(), "alpha".into(), "beta".into()],
        covariance: cov,
    })
}

/// Two-stage damping law fit per the reference phenomenology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingScaling {
    /// Stage 1: pooled coupling exponent of `Gamma(g)` at fixed q
    /// (law [`ScalingLaw::DampingExponent`], parameter `beta`).
    pub exponent: ScalingFit,
    /// Stage 2: per-coupling shape over q with the coupling normalization
    /// pinned at exactly 2 (law [`ScalingLaw::DampingShape`], parameters
    /// `g`, `gamma_star`, `delta`, `offset`, `residual_rms`).
    pub shapes: Vec<ScalingFit>,
}

/// Fits the damping law in two stages. Points are
/// `(g_over_omega_p, q, gamma)`; needs at least 6 spanning 3 distinct
/// couplings and 3 distinct populations. Stage 1 regresses `ln Gamma` on
/// `ln g` within each q slice (slices need 2+ couplings) and pools the
/// slopes; stage 2 normalizes `Gamma` by `(g/omega_p)^2` and fits
/// `Gamma* (|q-1/2|^delta + offset)` within each coupling slice that has
/// 4+ distinct populations.
pub fn fit_damping_scaling(points: &[(f64, f64, f64)]) -> Result<DampingScaling> {
    if points.len() < 6 {
        return Err(Error::TooFewPoints {
            need: 6,
            got: points.len(),
        });
    }
    for &(g, q, gamma) in points {
        if !(g.is_finite() && g > 0.0) || !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("points", "couplings and dampings must be positive"));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::param("points", format!("q = {q} is outside [0, 1]")));
        }
    }
    require_distinct(points.iter().map(|p| p.0), 3, "couplings")?;
    require_distinct(points.iter().map(|p| p.1), 3, "populations")?;

    // Stage 1: slope of ln Gamma vs ln g per q slice.
    let mut slopes = Vec::new();
    for q in distinct_values(points.iter().map(|p| p.1)) {
        let slice: Vec<&(f64, f64, f64)> =
            points.iter().filter(|p| p.1.to_bits() == q.to_bits()).collect();
        if distinct_values(slice.iter().map(|p| p.0)).len() < 2 {
            continue;
        }
        let rows: Vec<Vec<f64>> = slice.iter().map(|p| vec![1.0, p.0.ln()]).collect();
        let y: Vec<f64> = slice.iter().map(|p| p.2.ln()).collect();
        let (params, _) = least_squares(&rows, &y, "damping exponent in a q slice")?;
        slopes.push(params[1]);
    }
    if slopes.is_empty() {
        return Err(Error::RankDeficient {
            context: "no q slice spans two couplings; cannot estimate the damping exponent".into(),
        });
    }
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let var_of_mean = if slopes.len() > 1 {
        slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
            / (slopes.len() as f64 * (slopes.len() - 1) as f64)
    } else {
        0.0
    };
    let exponent = ScalingFit {
        law: ScalingLaw::DampingExponent,
        params: BTreeMap::from([("beta".to_string(), mean)]),
        parameter_order: vec!["beta".into()],
        covariance: vec![vec![var_of_mean]],
    };

    // Stage 2: per-coupling shape over q, with the coupling dependence
    // divided out at exactly the square (the phenomenological exponent).
    let mut shapes = Vec::new();
    for g in distinct_values(points.iter().map(|p| p.0)) {
        let slice: Vec<&(f64, f64, f64)> =
            points.iter().filter(|p| p.0.to_bits() == g.to_bits()).collect();
        let us: Vec<f64> = slice.iter().map(|p| (p.1 - 0.5).abs()).collect();
        let ys: Vec<f64> = slice.iter().map(|p| p.2 / (g * g)).collect();
        if distinct_values(us.iter().copied()).len() < 4 {
            continue;
        }
        shapes.push(fit_damping_shape(g, &us, &ys)?);
    }
    Ok(DampingScaling { exponent, shapes })
}

/// Fits `y = gamma_star (u^delta + offset)` for one coupling slice.
fn fit_damping_shape(g: f64, us: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    let y_lo = us
        .iter()
        .zip(ys)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, &y)| y)
        .unwrap_or(0.0);
    let (u_hi, y_hi) = us
        .iter()
        .zip(ys)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .map(|(&u, &y)| (u, y))
        .unwrap_or((0.45, 1.0));

    let objective = |x: &[f64]| -> f64 {
        let (star, delta, offset) = (x[0], x[1], x[2]);
        let mut acc = 0.0;
        for (u, y) in us.iter().zip(ys) {
            let model = star * (u.powf(delta) + offset);
            if !model.is_finite() {
                return f64::INFINITY;
            }
            acc += (model - y).powi(2);
        }
        acc / us.len() as f64
    };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for delta0 in [1.0, 1.5, 1.84, 2.2, 3.0, 1.2, 2.6, 0.8] {
        let star0 = ((y_hi - y_lo) / u_hi.powf(delta0)).max(1e-6);
        let offset0 = (y_lo / star0).max(1e-4);
        let start = vec![star0, delta0, offset0];
        let scale = vec![star0, 1.0, offset0.max(0.01)];
        let candidate = minimize(&objective, &start, &scale);
        if best.as_ref().is_none_or(|b| candidate.1 < b.1) {
            best = Some(candidate);
        }
    }
    let (x, mse, _) = best.expect("non-empty start list");
    let cov = residual_covariance(&objective, &x, mse, us.len());

    let mut map = BTreeMap::new();
    map.insert("g".into(), g);
    map.insert("gamma_star".into(), x[0]);
    map.insert("delta".into(), x[1]);
    map.insert("offset".into(), x[2]);
    map.insert("residual_rms".into(), mse.sqrt());
    Ok(ScalingFit {
        law: ScalingLaw::DampingShape,
        params: map,
        parameter_order: vec!["gamma_star".into(), "delta".into(), "offset".into()],
        covariance: cov,
    })
}

/// Fits `f(q)/E_f = a (1-q) + b`. Points are `(q, f_over_ef)`; needs at
/// least 3 spanning 2 distinct populations.
pub fn fit_saturation_energy(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    for &(q, f) in points {
        if !(0.0..=1.0).contains(&q) || !f.is_finite() {
            return Err(Error::param("points", format!("bad point (q={q}, f={f})")));
        }
    }
    require_distinct(points.iter().map(|p| p.0), 2, "populations")?;
    let rows: Vec<Vec<f64>> = points.iter().map(|&(q, _)| vec![1.0 - q, 1.0]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (params, cov) = least_squares(&rows, &y, "saturation energy over (1-q)")?;
    let mut map = BTreeMap::new();
    map.insert("a".into(), params[0]);
    map.insert("b".into(), params[1]);
    Ok(ScalingFit {
        law: ScalingLaw::SaturationEnergy,
        params: map,
        parameter_order: vec!["a".into(), "b".into()],
        covariance: cov,
    })
}

/// Fits `gamma = gamma* (g/omega_p)^beta` in log space. Points are
/// `(g_over_omega_p, gamma)`; needs at least 3 spanning 2 distinct
/// couplings. The covariance refers to `(ln gamma*, beta)`.
pub fn fit_charging_rate(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    for &(g, gamma) in points {
        if !(g.is_finite() && g > 0.0) || !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("points", "couplings and rates must be positive"));
        }
    }
    require_distinct(points.iter().map(|p| p.0), 2, "couplings")?;
    let rows: Vec<Vec<f64>> = points.iter().map(|&(g, _)| vec![1.0, g.ln()]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (params, cov) = least_squares(&rows, &y, "charging rate over ln g")?;
    let mut map = BTreeMap::new();
    map.insert("gamma_star".into(), params[0].exp());
    map.insert("beta".into(), params[1]);
    Ok(ScalingFit {
        law: ScalingLaw::ChargingRate,
        params: map,
        parameter_order: vec!["ln_gamma_star".into(), "beta".into()],
        covariance: cov,
    })
}

// ---------------------------------------------------------------------------
// Feasibility

/// Coupling ratio achievable by capacitively bridging the battery and a
/// charger, at the working point `E_J = 100 E_C`:
/// `g/omega_p = (sqrt(2) n10 / 5) (c_bn / c_n)`.
///
/// All capacitances in the same unit (fF); `c_b` is accepted for interface
/// symmetry but cancels once `E_C` is tied to the shunt
/// (`E_C = e^2 / 2 C_B`), which is why it does not appear in the result.
pub fn feasibility_coupling(c_bn: f64, c_n: f64, c_b: f64, n10: f64) -> Result<f64> {
    check_capacitances(c_bn, c_n, c_b)?;
    if !(n10.is_finite() && n10 >= 0.0) {
        return Err(Error::param("n10", "charge matrix element must be finite and non-negative"));
    }
    Ok((2.0_f64.sqrt() * n10 / 5.0) * (c_bn / c_n))
}

/// General form of the coupling ratio for any `E_J/E_C`:
/// `g/omega_p = n10 sqrt(8 E_C / E_J) (c_bn / c_n)`, obtained from the
/// circuit expression `g/omega_p = 4 e^2 n10 c_bn / (c_b c_n sqrt(8 E_J E_C))`
/// with the charging energy tied to the shunt, `E_C = e^2 / (2 C_B)`.
pub fn feasibility_coupling_general(
    ej_over_ec: f64,
    n10: f64,
    c_bn: f64,
    c_n: f64,
) -> Result<f64> {
    if !(ej_over_ec.is_finite() && ej_over_ec > 0.0) {
        return Err(Error::param("ej_over_ec", "must be finite and positive"));
    }
    check_capacitances(c_bn, c_n, 1.0)?;
    if !(n10.is_finite() && n10 >= 0.0) {
        return Err(Error::param("n10", "charge matrix element must be finite and non-negative"));
    }
    Ok(n10 * (8.0 / ej_over_ec).sqrt() * (c_bn / c_n))
}

fn check_capacitances(c_bn: f64, c_n: f64, c_b: f64) -> Result<()> {
    if !(c_bn.is_finite() && c_bn >= 0.0) {
        return Err(Error::param("c_bn", "coupling capacitance must be finite and non-negative"));
    }
    if !(c_n.is_finite() && c_n > 0.0) {
        return Err(Error::param("c_n", "charger capacitance must be finite and positive"));
    }
    if !(c_b.is_finite() && c_b > 0.0) {
        return Err(Error::param("c_b", "shunt capacitance must be finite and positive"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Optimizer: simplex descent plus finite-difference Newton polish

fn mean_squared_error(ns: &[f64], es: &[f64], model: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for (&n, &e) in ns.iter().zip(es) {
        let r = model(n) - e;
        acc += r * r;
    }
    acc / ns.len() as f64
}

/// Simplex descent then Newton polish. Returns the best point, its
/// objective value, and whether the polish met the convergence thresholds.
fn minimize(f: &impl Fn(&[f64]) -> f64, start: &[f64], scale: &[f64]) -> (Vec<f64>, f64, bool) {
    let (mut x, _) = nelder_mead(f, start, scale, 600 * start.len());
    let (fval, converged) = newton_polish(f, &mut x, scale);
    (x, fval, converged)
}

fn nelder_mead(
    f: &impl Fn(&[f64]) -> f64,
    start: &[f64],
    scale: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let k = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..k {
        let mut v = start.to_vec();
        v[i] += 0.25 * scale[i].abs().max(1e-12);
        let fv = f(&v);
        simplex.push((v, fv));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[k].1 - simplex[0].1;
        if spread.abs() < 1e-15 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; k];
        for (v, _) in &simplex[..k] {
            for i in 0..k {
                centroid[i] += v[i] / k as f64;
            }
        }
        let worst = simplex[k].clone();
        let reflect: Vec<f64> = (0..k).map(|i| 2.0 * centroid[i] - worst.0[i]).collect();
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..k).map(|i| 3.0 * centroid[i] - 2.0 * worst.0[i]).collect();
            let f_expand = f(&expand);
            simplex[k] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[k - 1].1 {
            simplex[k] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> =
                (0..k).map(|i| 0.5 * (centroid[i] + worst.0[i])).collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[k] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for i in 0..k {
                        entry.0[i] = 0.5 * (entry.0[i] + best[i]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0.clone(), simplex[0].1)
}

/// Damped Newton refinement with finite-difference derivatives. Convergence
/// means the scale-normalized gradient norm fell below 1e-10 and the last
/// relative step below 1e-8.
fn newton_polish(
    f: &impl Fn(&[f64]) -> f64,
    x: &mut Vec<f64>,
    scale: &[f64],
) -> (f64, bool) {
    let k = x.len();
    let mut fx = f(x);
    let mut converged = false;
    for _ in 0..40 {
        let h: Vec<f64> = (0..k)
            .map(|i| (x[i].abs().max(scale[i].abs()).max(1e-12)) * 1e-6)
            .collect();
        let grad = fd_gradient(f, x, &h);
        let hess = fd_hessian(f, x, &h, fx);
        let grad_norm: f64 = grad
            .iter()
            .zip(scale)
            .map(|(g, s)| (g * s.abs().max(1e-12)).powi(2))
            .sum::<f64>()
            .sqrt()
            / (1.0 + fx.abs());

        let hess_m = DMatrix::from_fn(k, k, |i, j| hess[i][j]);
        let grad_v = DVector::from_column_slice(&grad);
        let step = hess_m
            .lu()
            .solve(&grad_v)
            .unwrap_or_else(|| grad_v.scale(1.0));

        // Backtracking on the Newton direction; fall back to leaving x.
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = (0..k).map(|i| x[i] - alpha * step[i]).collect();
            let ft = f(&trial);
            if ft < fx {
                let rel_step: f64 = (0..k)
                    .map(|i| ((trial[i] - x[i]) / x[i].abs().max(scale[i].abs()).max(1e-12)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                *x = trial;
                fx = ft;
                moved = true;
                if grad_norm < GRADIENT_TOL && rel_step < STEP_TOL {
                    converged = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // Stationary within line-search resolution.
            converged = grad_norm < GRADIENT_TOL;
            break;
        }
        if converged {
            break;
        }
    }
    (fx, converged)
}

fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Vec<f64> {
    let k = x.len();
    (0..k)
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += h[i];
            lo[i] -= h[i];
            (f(&hi) - f(&lo)) / (2.0 * h[i])
        })
        .collect()
}

fn fd_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: &[f64], fx: f64) -> Vec<Vec<f64>> {
    let k = x.len();
    let mut hess = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[i] += h[i];
        lo[i] -= h[i];
        hess[i][i] = (f(&hi) - 2.0 * fx + f(&lo)) / (h[i] * h[i]);
        for j in (i + 1)..k {
            let mut pp = x.to_vec();
            let mut pm = x.to_vec();
            let mut mp = x.to_vec();
            let mut mm = x.to_vec();
            pp[i] += h[i];
            pp[j] += h[j];
            pm[i] += h[i];
            pm[j] -= h[j];
            mp[i] -= h[i];
            mp[j] += h[j];
            mm[i] -= h[i];
            mm[j] -= h[j];
            let v = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Covariance at a nonlinear least-squares optimum from the
/// finite-difference normal equations: `sigma^2 (H/2)^{-1}` with `H` the
/// Hessian of the mean-squared error and `sigma^2` the residual variance.
fn residual_covariance(
    f: &impl Fn(&[f64]) -> f64,
    x: &[f64],
    mse: f64,
    n_points: usize,
) -> Vec<Vec<f64>> {
    let k = x.len();
    let h: Vec<f64> = x.iter().map(|xi| xi.abs().max(1e-8) * 1e-5).collect();
    let hess = fd_hessian(f, x, &h, f(x));
    let dof = n_points.saturating_sub(k).max(1) as f64;
    let sigma2 = mse * n_points as f64 / dof;
    let m = DMatrix::from_fn(k, k, |i, j| hess[i][j] * n_points as f64 / 2.0);
    match m.try_inverse() {
        Some(inv) => (0..k)
            .map(|i| (0..k).map(|j| inv[(i, j)] * sigma2).collect())
            .collect(),
        None => vec![vec![0.0; k]; k],
    }
}

// ---------------------------------------------------------------------------
// Linear algebra helpers

fn least_squares(
    rows: &[Vec<f64>],
    y: &[f64],
    context: &str,
) -> Result<(DVector<f64>, Vec<Vec<f64>>)> {
    let n = rows.len();
    let k = rows[0].len();
    let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);

    let svd = x.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > s_max * 1e-12) {
        return Err(Error::RankDeficient {
            context: context.to_string(),
        });
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let inv = xtx.try_inverse().ok_or_else(|| Error::RankDeficient {
        context: context.to_string(),
    })?;
    let params = &inv * xty;

    let mut sse = 0.0;
    for i in 0..n {
        let pred: f64 = (0..k).map(|j| x[(i, j)] * params[j]).sum();
        sse += (y[i] - pred).powi(2);
    }
    let dof = n.saturating_sub(k).max(1) as f64;
    let sigma2 = sse / dof;
    let cov: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| inv[(i, j)] * sigma2).collect())
        .collect();
    Ok((params, cov))
}

fn distinct_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut bits: Vec<u64> = values.map(f64::to_bits).collect();
    bits.sort_unstable();
    bits.dedup();
    let mut out: Vec<f64> = bits.into_iter().map(f64::from_bits).collect();
    out.sort_by(f64::total_cmp);
    out
}

fn require_distinct(
    values: impl Iterator<Item = f64>,
    need: usize,
    what: &str,
) -> Result<()> {
    let got = distinct_values(values).len();
    if got < need {
        return Err(Error::RankDeficient {
            context: format!("need at least {need} distinct {what}, got {got}"),
        });
    }
    Ok(())
}
