//! Acceptance checks for the simulator, one test per criterion. Every
//! clause prints a `[criterion N] ... PASS/FAIL` line before the final
//! assertion so a red test still reports the measured numbers (run with
//! `--nocapture` to see the lines on green runs too).
//!
//! All tolerances are pinned here, not derived at runtime. Trajectory runs
//! are memoized per parameter set and shared across tests; a request for a
//! shorter run is served as a prefix of the longest run recorded so far,
//! which is exact because the dynamics is deterministic.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use qbattery::analysis::{
    classify_shape, fit_charging_rate, fit_damped_cosine, fit_damped_cosine_series,
    fit_damping_scaling, fit_frequency_scaling, fit_saturation_energy, fit_saturation_series,
    AmplitudeMode, TrajectoryShape,
};
use qbattery::collision::{
    apply_channel, run_protocol_cached, window_propagator, AncillaSpec, ProtocolConfig,
    Trajectory, TrajectoryPoint,
};
use qbattery::manifest::parse_manifest_str;
use qbattery::observables::{ergotropy, stored_energy};
use qbattery::qcore::{
    eig_hermitian, hermiticity_violation, partial_trace_ancilla, unitarity_violation, C64, CMat,
    DensityMatrix, HermitianOperator, PropagatorCache,
};
use qbattery::sweep::{read_index, run_sweep};
use qbattery::transmon::{perturbative_level, solve_spectrum, Spectrum, TransmonSpec};

// ---------------------------------------------------------------------------
// Shared state and helpers

struct World {
    spectrum: Arc<Spectrum>,
    cache: PropagatorCache,
    /// Longest trajectory seen per (g, tau, q, c, record_every).
    trajs: Mutex<HashMap<(u64, u64, u64, u64, u64), Arc<Trajectory>>>,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| World {
        spectrum: Arc::new(solve_spectrum(&TransmonSpec::default_desk()).unwrap()),
        cache: PropagatorCache::new(),
        trajs: Mutex::new(HashMap::new()),
    })
}

/// Desk-scale charging run, memoized. Returns a trajectory with at least
/// `n` collisions; slice with [`rows_for`] before using it.
fn charge_run(g: f64, tau: f64, q: f64, c: f64, n: u64, every: u64) -> Arc<Trajectory> {
    let w = world();
    let key = (g.to_bits(), tau.to_bits(), q.to_bits(), c.to_bits(), every);
    if let Some(t) = w.trajs.lock().unwrap().get(&key) {
        if t.config.n_collisions >= n {
            return Arc::clone(t);
        }
    }
    let config = ProtocolConfig::new(
        w.spectrum.spec().clone(),
        AncillaSpec::resonant(&w.spectrum, q, c).unwrap(),
        g,
        tau,
        n,
        every,
    )
    .unwrap();
    let t = Arc::new(run_protocol_cached(&config, &w.spectrum, &w.cache).unwrap());
    w.trajs.lock().unwrap().insert(key, Arc::clone(&t));
    t
}

/// Recorded rows covering collisions `0..=n_max`.
fn rows_for(t: &Trajectory, n_max: u64) -> usize {
    (((n_max / t.config.record_every) as usize) + 1).min(t.points.len())
}

fn series_prefix(t: &Trajectory, n_max: u64) -> (Vec<f64>, Vec<f64>) {
    let rows = rows_for(t, n_max);
    let ns = t.points[..rows].iter().map(|p| p.n as f64).collect();
    let es = t.points[..rows].iter().map(|p| p.stored_energy).collect();
    (ns, es)
}

/// First recorded point at or above `floor` (in E_f units) that strictly
/// exceeds the following 40 recorded rows; `None` when no peak can be
/// confirmed inside `n_max`.
fn first_maximum(t: &Trajectory, n_max: u64, floor: f64) -> Option<&TrajectoryPoint> {
    const LOOKAHEAD: usize = 40;
    let rows = rows_for(t, n_max);
    let pts = &t.points[..rows];
    for i in 1..pts.len() {
        let v = pts[i].stored_energy;
        if v < floor {
            continue;
        }
        if i + LOOKAHEAD >= pts.len() {
            return None;
        }
        if pts[i + 1..=i + LOOKAHEAD].iter().all(|p| p.stored_energy < v) {
            return Some(&pts[i]);
        }
    }
    None
}

fn max_stored(t: &Trajectory, n_max: u64) -> f64 {
    let rows = rows_for(t, n_max);
    t.points[..rows]
        .iter()
        .map(|p| p.stored_energy)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest pointwise stored-energy difference over `0..=n_max`; both runs
/// must share the recording stride.
fn max_pointwise_diff(a: &Trajectory, b: &Trajectory, n_max: u64) -> f64 {
    assert_eq!(a.config.record_every, b.config.record_every);
    let rows = rows_for(a, n_max).min(rows_for(b, n_max));
    a.points[..rows]
        .iter()
        .zip(&b.points[..rows])
        .map(|(x, y)| (x.stored_energy - y.stored_energy).abs())
        .fold(0.0, f64::max)
}

struct Clauses {
    criterion: usize,
    failed: usize,
    total: usize,
}

impl Clauses {
    fn new(criterion: usize) -> Self {
        Self {
            criterion,
            failed: 0,
            total: 0,
        }
    }

    fn check(&mut self, label: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("[criterion {}] {label}: {verdict} ({detail})", self.criterion);
        self.total += 1;
        if !ok {
            self.failed += 1;
        }
    }

    fn assert_all(&self) {
        println!(
            "[criterion {}] {}/{} clauses passed",
            self.criterion,
            self.total - self.failed,
            self.total
        );
        assert!(
            self.failed == 0,
            "criterion {}: {} of {} clauses failed (see the printed clause lines)",
            self.criterion,
            self.failed,
            self.total
        );
    }
}

// ---------------------------------------------------------------------------
// 1. Spectrum

#[test]
fn criterion_1_spectrum() {
    let mut cl = Clauses::new(1);
    let started = Instant::now();
    let desk = TransmonSpec::default_desk();
    let spectrum = solve_spectrum(&desk).unwrap();

    cl.check(
        "bound-state count is 9",
        spectrum.bound_count() == 9,
        format!("found {}", spectrum.bound_count()),
    );

    // Charge dispersion: bound levels over a full offset-charge period.
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); 9];
    for k in 0..=10 {
        let ng = k as f64 / 10.0;
        let s = solve_spectrum(&TransmonSpec::new(100.0, ng, 35, 15).unwrap()).unwrap();
        for (m, acc) in per_level.iter_mut().enumerate() {
            acc.push(s.level(m));
        }
    }
    let mut worst = (0usize, 0.0f64);
    for (m, vals) in per_level.iter().enumerate() {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mid = vals.iter().sum::<f64>() / vals.len() as f64;
        let rel = (hi - lo) / mid.abs();
        if rel > worst.1 {
            worst = (m, rel);
        }
    }
    cl.check(
        "bound levels vary by at most 1e-4 relative over the offset-charge period",
        worst.1 <= 1e-4,
        format!("worst dispersion {:.4e} at m = {}", worst.1, worst.0),
    );

    let mut worst_pert = (0usize, 0.0f64);
    let mut detail = String::new();
    for m in 0..=5 {
        let diff = (spectrum.level(m) - perturbative_level(&desk, m)).abs();
        let _ = write!(detail, "m={m}: {diff:.3} ");
        if diff > worst_pert.1 {
            worst_pert = (m, diff);
        }
    }
    cl.check(
        "harmonic-ladder formula within 0.5 E_C for m <= 5",
        worst_pert.1 < 0.5,
        format!("|E_m - ladder| in E_C: {}", detail.trim_end()),
    );

    let elapsed = started.elapsed().as_secs_f64();
    cl.check(
        "spectral checks complete within 1 s",
        elapsed < 1.0,
        format!("{elapsed:.3} s"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 2. Coherent charging at the working point

#[test]
fn criterion_2_coherent_charging() {
    let mut cl = Clauses::new(2);
    let t = charge_run(4e-3, 1.0, 0.5, 1.0, freq_run_length(4e-3, 0.5), 1);
    let peak = first_maximum(&t, 1200, 0.3).expect("no first maximum confirmed by n = 1200");

    cl.check(
        "first maximum reaches 0.9 E_f",
        peak.stored_energy >= 0.9,
        format!("dE = {:.4} E_f at n = {}", peak.stored_energy, peak.n),
    );
    cl.check(
        "first maximum inside n in [300, 1200]",
        (300..=1200).contains(&peak.n),
        format!("n = {}", peak.n),
    );
    let eta = peak.efficiency.expect("efficiency defined at the first maximum");
    cl.check(
        "efficiency at the first maximum is at least 0.85",
        eta >= 0.85,
        format!("eta = {eta:.4}"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 3. Frequency law

const FREQ_GRID_G: [f64; 3] = [4e-3, 8e-3, 1e-2];
const FREQ_GRID_Q: [f64; 3] = [0.05, 0.25, 0.5];

/// About 1.7 periods of the expected oscillation, enough for the shape
/// classifier to confirm two extrema.
fn freq_run_length(g: f64, q: f64) -> u64 {
    let omega = 1.7 * g * (q * (1.0 - q)).sqrt();
    (1.7 * std::f64::consts::TAU / omega).ceil() as u64
}

fn freq_grid_trajectories() -> Vec<(f64, f64, Arc<Trajectory>)> {
    let mut out = Vec::new();
    for &g in &FREQ_GRID_G {
        for &q in &FREQ_GRID_Q {
            out.push((g, q, charge_run(g, 1.0, q, 1.0, freq_run_length(g, q), 1)));
        }
    }
    out
}

#[test]
fn criterion_3_frequency_law() {
    let mut cl = Clauses::new(3);
    let mut pts = Vec::new();
    for (g, q, t) in freq_grid_trajectories() {
        let fit = fit_damped_cosine_series(
            &t.collision_indices(),
            &t.stored_energies(),
            AmplitudeMode::FixedHalf,
        )
        .unwrap();
        println!(
            "[criterion 3] Omega(g = {g}, q = {q}) = {:.4e} (rms {:.4})",
            fit.omega, fit.residual_rms
        );
        pts.push((g, q, fit.omega));
    }
    let law = fit_frequency_scaling(&pts).unwrap();
    let alpha = law.param("alpha").unwrap();
    let beta = law.param("beta").unwrap();
    let star = law.param("omega_star").unwrap();
    cl.check(
        "coupling exponent alpha = 1.0 +/- 0.1",
        (alpha - 1.0).abs() <= 0.1,
        format!("alpha = {alpha:.4}"),
    );
    cl.check(
        "population exponent beta = 0.50 +/- 0.05",
        (beta - 0.5).abs() <= 0.05,
        format!("beta = {beta:.4}"),
    );
    cl.check(
        "prefactor Omega* = 1.7 +/- 0.2",
        (star - 1.7).abs() <= 0.2,
        format!("Omega* = {star:.4}"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 4. Damping law

/// (g, q, run length). Lengths target about 30% envelope decay under the
/// reference damping shape, capped to keep the suite in the minutes range;
/// shorter windows let the residual leak into the fitted rate.
const DAMPING_GRID: [(f64, f64, u64); 12] = [
    (4e-3, 0.05, 55_000),
    (4e-3, 0.25, 112_000),
    (4e-3, 0.5, 160_000),
    (5e-3, 0.05, 40_000),
    (5e-3, 0.15, 49_000),
    (5e-3, 0.25, 72_000),
    (5e-3, 0.35, 106_000),
    (5e-3, 0.45, 144_000),
    (5e-3, 0.5, 152_000),
    (1e-2, 0.05, 40_000),
    (1e-2, 0.25, 40_000),
    (1e-2, 0.5, 40_000),
];

#[test]
fn criterion_4_damping_law() {
    let mut cl = Clauses::new(4);
    let mut pts = Vec::new();
    for &(g, q, n) in &DAMPING_GRID {
        let t = charge_run(g, 1.0, q, 1.0, n, 1);
        let fit = fit_damped_cosine_series(
            &t.collision_indices(),
            &t.stored_energies(),
            AmplitudeMode::FixedHalf,
        )
        .unwrap();
        println!(
            "[criterion 4] Gamma(g = {g}, q = {q}) = {:.4e} over n = {n} (rms {:.4})",
            fit.gamma, fit.residual_rms
        );
        pts.push((g, q, fit.gamma));
    }
    let law = fit_damping_scaling(&pts).unwrap();
    let beta = law.exponent.param("beta").unwrap();
    cl.check(
        "coupling exponent 2.0 +/- 0.3",
        (beta - 2.0).abs() <= 0.3,
        format!("beta = {beta:.4}"),
    );
    let shape = law
        .shapes
        .iter()
        .find(|s| s.param("g") == Some(5e-3))
        .expect("population-shape fit at g = 5e-3");
    let star = shape.param("gamma_star").unwrap();
    let delta = shape.param("delta").unwrap();
    let offset = shape.param("offset").unwrap();
    cl.check(
        "shape prefactor within 25% of 1.32",
        (star / 1.32 - 1.0).abs() <= 0.25,
        format!("Gamma* = {star:.4}"),
    );
    cl.check(
        "shape exponent within 25% of 1.84",
        (delta / 1.84 - 1.0).abs() <= 0.25,
        format!("delta = {delta:.4}"),
    );
    cl.check(
        "shape offset within 25% of 0.070",
        (offset / 0.070 - 1.0).abs() <= 0.25,
        format!("offset = {offset:.4}"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 5. Population symmetry

#[test]
fn criterion_5_population_symmetry() {
    let mut cl = Clauses::new(5);
    // One expected-frequency period per pair, matching the couplings the
    // symmetry claim covers.
    for (g, n) in [(4e-3, 2140u64), (1e-2, 860u64)] {
        let a = charge_run(g, 1.0, 0.25, 1.0, n, 1);
        let b = charge_run(g, 1.0, 0.75, 1.0, n, 1);
        let diff = max_pointwise_diff(&a, &b, n);
        cl.check(
            &format!("q <-> 1-q pointwise within 1e-2 E_f at tau = tau_p, g = {g}"),
            diff <= 1e-2,
            format!("max |dE(q) - dE(1-q)| = {diff:.3e} E_f over n <= {n}"),
        );
    }
    let a = charge_run(5e-2, 2.83, 0.25, 1.0, 175, 1);
    let b = charge_run(5e-2, 2.83, 0.75, 1.0, 175, 1);
    let diff = max_pointwise_diff(&a, &b, 175);
    cl.check(
        "symmetry exceeds 5e-2 E_f at tau = 2.83 tau_p, g = 5e-2",
        diff > 5e-2,
        format!("max |dE(q) - dE(1-q)| = {diff:.3e} E_f"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 6. Incoherent charging

const SATURATION_Q: [f64; 7] = [0.05, 0.25, 0.35, 0.5, 0.65, 0.8, 0.95];

#[test]
fn criterion_6_incoherent_charging() {
    let mut cl = Clauses::new(6);

    // Saturation energies over q at fixed coupling. 250k collisions put
    // every run deep into saturation (rate times length >= 4).
    let mut fq = Vec::new();
    let mut all_saturating = true;
    let mut rate_mid = None;
    let mut final_eta = None;
    for &q in &SATURATION_Q {
        let t = charge_run(1e-2, 1.0, q, 0.0, 250_000, 50);
        let (ns, es) = series_prefix(&t, 250_000);
        let report = classify_shape(&ns, &es).unwrap();
        if report.shape != TrajectoryShape::Saturating {
            all_saturating = false;
            println!("[criterion 6] q = {q}: unexpected shape {:?}", report.shape);
        }
        let fit = fit_saturation_series(&ns, &es).unwrap();
        println!(
            "[criterion 6] f({q}) = {:.4} E_f, rate {:.3e} (rms {:.4})",
            fit.f, fit.gamma, fit.residual_rms
        );
        fq.push((q, fit.f));
        if q == 0.25 {
            rate_mid = Some(fit.gamma);
        }
        if q == 0.5 {
            final_eta = t.points.last().unwrap().efficiency;
        }
    }
    cl.check(
        "no oscillation detected in any incoherent run",
        all_saturating,
        format!("{} runs classified", SATURATION_Q.len()),
    );

    let law = fit_saturation_energy(&fq).unwrap();
    let a = law.param("a").unwrap();
    let b = law.param("b").unwrap();
    cl.check(
        "saturation slope a = 0.21 +/- 0.05",
        (a - 0.21).abs() <= 0.05,
        format!("a = {a:.4}"),
    );
    cl.check(
        "saturation intercept b = 0.43 +/- 0.05",
        (b - 0.43).abs() <= 0.05,
        format!("b = {b:.4}"),
    );

    // Charging-rate scaling with coupling at q = 0.25; the g = 1e-2 point
    // reuses the saturation grid above.
    let mut rate_pts = Vec::new();
    for (g, n) in [(6e-3, 280_000u64), (2e-2, 40_000u64)] {
        let t = charge_run(g, 1.0, 0.25, 0.0, n, 50);
        let (ns, es) = series_prefix(&t, n);
        let fit = fit_saturation_series(&ns, &es).unwrap();
        println!(
            "[criterion 6] rate(g = {g}) = {:.3e} (rms {:.4})",
            fit.gamma, fit.residual_rms
        );
        rate_pts.push((g, fit.gamma));
    }
    rate_pts.push((1e-2, rate_mid.unwrap()));
    let rate_law = fit_charging_rate(&rate_pts).unwrap();
    let rate_beta = rate_law.param("beta").unwrap();
    cl.check(
        "charging-rate coupling exponent 2.0 +/- 0.3",
        (rate_beta - 2.0).abs() <= 0.3,
        format!("beta = {rate_beta:.4}"),
    );

    let eta = final_eta.expect("efficiency defined after 250k collisions");
    cl.check(
        "long-time efficiency at most 0.55",
        eta <= 0.55,
        format!("eta = {eta:.4} at n = 250000, q = 0.5"),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 7. Collision-duration regimes

#[test]
fn criterion_7_duration_regimes() {
    let mut cl = Clauses::new(7);
    let base = charge_run(4e-3, 1.0, 0.5, 1.0, freq_run_length(4e-3, 0.5), 1);
    let base_rows = rows_for(&base, 2800);
    let base_fit = fit_damped_cosine(&base, 0..base_rows, AmplitudeMode::FixedHalf).unwrap();
    let base_peak = first_maximum(&base, 2800, 0.3).expect("baseline first maximum");

    // Slightly below twice the plasma period: still oscillating, faster.
    let t = charge_run(4e-3, 1.98, 0.5, 1.0, 2800, 1);
    let (ns, es) = series_prefix(&t, 2800);
    let shape = classify_shape(&ns, &es).unwrap().shape;
    cl.check(
        "tau = 1.98 tau_p still oscillates",
        shape == TrajectoryShape::Oscillatory,
        format!("shape {shape:?}"),
    );
    let fit = fit_damped_cosine_series(&ns, &es, AmplitudeMode::FixedHalf).unwrap();
    let ratio = fit.omega / base_fit.omega;
    cl.check(
        "tau = 1.98 tau_p oscillates modestly faster than tau = tau_p",
        ratio > 1.02 && ratio < 1.5,
        format!("Omega ratio = {ratio:.4}"),
    );

    // Trapping window: stored energy overshoots the bound-well capacity.
    let t = charge_run(1e-2, 2.83, 0.5, 1.0, 500, 1);
    let peak = max_stored(&t, 500);
    cl.check(
        "tau = 2.83 tau_p exceeds E_f",
        peak > 1.0,
        format!("max dE = {peak:.4} E_f"),
    );

    // Short windows only slow the approach to the first maximum.
    let t = charge_run(4e-3, 0.3, 0.5, 1.0, 3500, 1);
    let peak03 = first_maximum(&t, 3500, 0.3).expect("first maximum at tau = 0.3 tau_p");
    cl.check(
        "tau = 0.3 tau_p reaches its first maximum later than tau = tau_p",
        peak03.n > base_peak.n,
        format!("n = {} vs {}", peak03.n, base_peak.n),
    );

    // Partial ancilla coherence: slower oscillation, same first peak height.
    let t = charge_run(4e-3, 1.0, 0.5, 0.9, 2800, 1);
    let (ns, es) = series_prefix(&t, 2800);
    let fit_c = fit_damped_cosine_series(&ns, &es, AmplitudeMode::FixedHalf).unwrap();
    let ratio_c = fit_c.omega / base_fit.omega;
    cl.check(
        "c = 0.9 lowers the fitted frequency",
        ratio_c < 0.98 && ratio_c > 0.8,
        format!("Omega ratio = {ratio_c:.4}"),
    );
    let peak_c = first_maximum(&t, 2800, 0.3).expect("first maximum at c = 0.9");
    let rel = (peak_c.stored_energy / base_peak.stored_energy - 1.0).abs();
    cl.check(
        "c = 0.9 keeps the first maximum within 5%",
        rel <= 0.05,
        format!(
            "dE = {:.4} vs {:.4} E_f ({:.2}%)",
            peak_c.stored_energy,
            base_peak.stored_energy,
            100.0 * rel
        ),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// 8. Property spot checks

/// Splitmix-style generator so the oracle cases are deterministic without
/// pulling a seeded RNG into the acceptance target.
struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        // Upper 53 bits, mapped to [-1, 1).
        ((self.0 >> 11) as f64 / (1u64 << 52) as f64) - 1.0
    }
}

fn random_state(rng: &mut Lcg, dim: usize) -> CMat {
    let a = CMat::from_fn(dim, dim, |_, _| C64::new(rng.next_f64(), rng.next_f64()));
    let rho = &a * a.adjoint();
    let tr: C64 = rho.trace();
    rho.scale(1.0 / tr.re)
}

/// Minimum of `sum_k pops[perm[k]] levels[k]` over all permutations.
fn brute_force_passive(pops: &[f64], levels: &[f64]) -> f64 {
    fn recurse(pops: &[f64], levels: &[f64], used: &mut [bool], k: usize, acc: f64) -> f64 {
        if k == levels.len() {
            return acc;
        }
        let mut best = f64::INFINITY;
        for i in 0..pops.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            best = best.min(recurse(pops, levels, used, k + 1, acc + pops[i] * levels[k]));
            used[i] = false;
        }
        best
    }
    recurse(pops, levels, &mut vec![false; pops.len()], 0, 0.0)
}

#[test]
fn criterion_8_property_suites() {
    let mut cl = Clauses::new(8);
    let mut rng = Lcg(0x9E3779B97F4A7C15);

    // Complete positivity and trace preservation of one collision, checked
    // through the Choi matrix of the map on a truncated battery.
    let small = solve_spectrum(&TransmonSpec::new(100.0, 0.0, 35, 4).unwrap()).unwrap();
    let anc = AncillaSpec::resonant(&small, 0.3, 0.7).unwrap();
    let w = window_propagator(&small, &anc, 5e-3, 1.0).unwrap();
    cl.check(
        "window propagator is unitary",
        unitarity_violation(w.matrix()) < 1e-10,
        format!("violation {:.2e}", unitarity_violation(w.matrix())),
    );
    let eta = anc.state();
    let d = 4usize;
    let mut choi = CMat::zeros(d * d, d * d);
    let mut trace_dev = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let mut x = CMat::zeros(d, d);
            x[(i, j)] = C64::new(1.0, 0.0);
            let img = apply_channel(&x, &w, &eta).unwrap();
            let expected = if i == j { 1.0 } else { 0.0 };
            trace_dev = trace_dev.max((img.trace() - C64::new(expected, 0.0)).norm());
            for r in 0..d {
                for c in 0..d {
                    choi[(i * d + r, j * d + c)] = img[(r, c)];
                }
            }
        }
    }
    cl.check(
        "collision map preserves the trace",
        trace_dev < 1e-10,
        format!("max deviation {trace_dev:.2e}"),
    );
    let herm = hermiticity_violation(&choi);
    let sym = HermitianOperator::new((choi.clone() + choi.adjoint()).scale(0.5)).unwrap();
    let min_eig = eig_hermitian(&sym)
        .values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    cl.check(
        "collision map is completely positive",
        herm < 1e-12 && min_eig > -1e-10,
        format!("Choi hermiticity {herm:.2e}, smallest eigenvalue {min_eig:.2e}"),
    );

    // Partial trace against the index-contraction oracle.
    let mut pt_worst = 0.0f64;
    for db in [2usize, 3, 5] {
        let da = 2usize;
        let joint = random_state(&mut rng, db * da);
        let reduced = partial_trace_ancilla(&joint, db, da).unwrap();
        for i in 0..db {
            for j in 0..db {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..da {
                    acc += joint[(i * da + a, j * da + a)];
                }
                pt_worst = pt_worst.max((reduced[(i, j)] - acc).norm());
            }
        }
    }
    cl.check(
        "partial trace matches the contraction oracle",
        pt_worst <= 1e-10,
        format!("max deviation {pt_worst:.2e}"),
    );

    // Ergotropy against the brute-force passive energy, and invariance
    // under rotations generated by the battery Hamiltonian.
    let mut erg_worst = 0.0f64;
    let mut rot_worst = 0.0f64;
    for dim in 2..=5 {
        let s = solve_spectrum(&TransmonSpec::new(100.0, 0.0, 35, dim).unwrap()).unwrap();
        let levels: Vec<f64> = s.shifted_levels().iter().copied().collect();
        for _ in 0..3 {
            let rho = DensityMatrix::new(random_state(&mut rng, dim)).unwrap();
            let res = ergotropy(&rho, &s).unwrap();
            let pops: Vec<f64> = rho.eig().values.iter().copied().collect();
            let passive = brute_force_passive(&pops, &levels);
            let w_brute = stored_energy(&rho, &s) - passive;
            erg_worst = erg_worst
                .max((res.passive_energy - passive).abs())
                .max((res.ergotropy - w_brute.max(0.0)).abs());

            for t in [0.7, 3.1] {
                let u = CMat::from_fn(dim, dim, |r, c| {
                    if r == c {
                        C64::from_polar(1.0, -levels[r] * t)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                });
                let rotated =
                    DensityMatrix::new(&u * rho.matrix() * u.adjoint()).unwrap();
                let res_rot = ergotropy(&rotated, &s).unwrap();
                rot_worst = rot_worst.max((res_rot.ergotropy - res.ergotropy).abs());
            }
        }
    }
    cl.check(
        "ergotropy matches the brute-force oracle (d <= 5)",
        erg_worst <= 1e-10,
        format!("max deviation {erg_worst:.2e}"),
    );
    cl.check(
        "ergotropy is invariant under free rotation",
        rot_worst <= 1e-9,
        format!("max deviation {rot_worst:.2e}"),
    );

    // Sweep determinism across thread counts, byte for byte.
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
scenario = "acceptance determinism"

[transmon]
battery_levels = 8

[ancilla]
q = [0.3, 0.6]

[protocol]
g = [4e-3, 8e-3]
n_collisions = 300
record_every = 10

[sweep]
output_dir = "{}"
threads = 1
"#,
        dir1.path().display()
    );
    let m1 = parse_manifest_str(&text).unwrap();
    let mut m2 = m1.clone();
    m2.apply_override(&format!("sweep.output_dir={}", dir2.path().display()))
        .unwrap();
    m2.apply_override("sweep.threads=2").unwrap();
    let o1 = run_sweep(&m1).unwrap();
    let o2 = run_sweep(&m2).unwrap();
    assert_eq!(o1.summary.failed, 0);
    assert_eq!(o2.summary.failed, 0);
    let idx1 = read_index(&o1.index_path).unwrap();
    let idx2 = read_index(&o2.index_path).unwrap();
    let mut identical = !idx1.points.is_empty();
    for (e1, e2) in idx1.points.iter().zip(&idx2.points) {
        let f1 = e1.file.as_ref().unwrap();
        let f2 = e2.file.as_ref().unwrap();
        identical &= f1 == f2;
        identical &= std::fs::read(dir1.path().join(f1)).unwrap()
            == std::fs::read(dir2.path().join(f2)).unwrap();
    }
    cl.check(
        "sweep output is byte-identical across thread counts",
        identical,
        format!("{} trajectory files compared", idx1.points.len()),
    );
    cl.assert_all();
}

// ---------------------------------------------------------------------------
// Fit-stability invariant shared with the frequency-law grid

#[test]
fn fit_window_stability_invariant() {
    let mut full = Vec::new();
    let mut shifted = Vec::new();
    for (g, q, t) in freq_grid_trajectories() {
        let rows = t.points.len();
        let f = fit_damped_cosine(&t, 0..rows, AmplitudeMode::FixedHalf).unwrap();
        let s = fit_damped_cosine(&t, rows / 10..rows, AmplitudeMode::FixedHalf).unwrap();
        full.push((g, q, f.omega));
        shifted.push((g, q, s.omega));
    }
    let a = fit_frequency_scaling(&full).unwrap();
    let b = fit_frequency_scaling(&shifted).unwrap();
    let d_alpha = (a.param("alpha").unwrap() - b.param("alpha").unwrap()).abs();
    let d_beta = (a.param("beta").unwrap() - b.param("beta").unwrap()).abs();
    println!(
        "[invariant] frequency-law exponents under a 10% window shift: d_alpha = {d_alpha:.4}, d_beta = {d_beta:.4}"
    );
    assert!(
        d_alpha <= 0.05 && d_beta <= 0.05,
        "exponents moved by more than 0.05 under a 10% fit-window shift"
    );
}
