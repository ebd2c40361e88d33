//! Command-line front end: manifest-driven runs, sweeps, fits, convergence
//! reports and plot-script emission.
//!
//! Every verb takes a manifest path plus `key=value` overrides. Two
//! environment variables apply last: `QBATTERY_OUTPUT_ROOT` replaces the
//! manifest's output directory and `QBATTERY_THREADS` the parallelism
//! degree.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qbattery::manifest::{parse_manifest, RunManifest};
use qbattery::transmon::solve_spectrum;
use qbattery::{plots, sweep, Error, Result};

pub const OUTPUT_ROOT_ENV: &str = "QBATTERY_OUTPUT_ROOT";
pub const THREADS_ENV: &str = "QBATTERY_THREADS";

#[derive(Parser)]
#[command(
    name = "qbattery",
    version,
    about = "Collisional charging simulator for a multilevel transmon battery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Manifest path (TOML).
    manifest: PathBuf,
    /// Overrides of the form key=value, e.g. protocol.n_collisions=5000
    /// or ancilla.q=0.1,0.5,0.9
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the battery spectrum and print the level table.
    Spectrum(CommonArgs),
    /// Run a single trajectory; the manifest grid must have exactly one
    /// point.
    Run(CommonArgs),
    /// Execute the manifest grid: one trajectory CSV per point plus an
    /// index.
    Sweep(CommonArgs),
    /// Fit a finished sweep's trajectories and aggregate scaling laws.
    Fit(CommonArgs),
    /// Probe truncation sensitivity around the manifest's first grid
    /// point.
    Converge(CommonArgs),
    /// Emit plotting scripts for a finished sweep.
    Plots(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_manifest(args: &CommonArgs) -> Result<RunManifest> {
    let mut manifest = parse_manifest(&args.manifest)?;
    for assignment in &args.overrides {
        manifest.apply_override(assignment)?;
    }
    if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        manifest.sweep.output_dir = PathBuf::from(root);
    }
    if let Ok(threads) = std::env::var(THREADS_ENV) {
        manifest.sweep.threads = threads.parse().map_err(|_| Error::BadOverride {
            key: THREADS_ENV.to_string(),
            reason: format!("cannot parse \"{threads}\" as a thread count"),
        })?;
    }
    Ok(manifest)
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Spectrum(args) => cmd_spectrum(&load_manifest(&args)?),
        Command::Run(args) => cmd_run(&load_manifest(&args)?),
        Command::Sweep(args) => cmd_sweep(&load_manifest(&args)?),
        Command::Fit(args) => cmd_fit(&load_manifest(&args)?),
        Command::Converge(args) => cmd_converge(&load_manifest(&args)?),
        Command::Plots(args) => cmd_plots(&load_manifest(&args)?),
    }
}

fn cmd_spectrum(manifest: &RunManifest) -> Result<ExitCode> {
    let spec = manifest.transmon_spec()?;
    let spectrum = solve_spectrum(&spec)?;
    println!(
        "battery: ej_over_ec={} ng={} charge_cutoff={} levels={}",
        spec.ej_over_ec, spec.ng, spec.charge_cutoff, spec.battery_levels
    );
    println!(
        "omega_p = {:.6} E_C, gap01 = {:.6} E_C, E_f = {:.6} E_C, bound states = {}",
        spec.plasma_frequency(),
        spectrum.gap01(),
        spectrum.e_f(),
        spectrum.bound_count()
    );
    println!("{:>3} {:>18} {:>18} {:>6}", "m", "E (E_C)", "E - E_0 (E_C)", "bound");
    for m in 0..spec.battery_levels {
        println!(
            "{:>3} {:>18.10} {:>18.10} {:>6}",
            m,
            spectrum.level(m),
            spectrum.shifted_level(m),
            if m < spectrum.bound_count() { "yes" } else { "no" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(manifest: &RunManifest) -> Result<ExitCode> {
    let size = manifest.product_size();
    if size != 1 {
        return Err(Error::Manifest(format!(
            "run expects exactly one grid point, this manifest has {size}; use sweep"
        )));
    }
    println!("grid: 1 point");
    let out = sweep::run_sweep(manifest)?;
    report_sweep(&out);
    let index = sweep::read_index(&out.index_path)?;
    if let Some(file) = index.points[0].file.as_ref() {
        let points = sweep::read_trajectory_csv(&out.output_dir.join(file))?;
        if let Some(last) = points.last() {
            println!(
                "final state at n={}: delta_E={:.6} E_f, ergotropy={:.6} E_f, efficiency={}",
                last.n,
                last.stored_energy,
                last.ergotropy,
                last.efficiency
                    .map_or("n/a".to_string(), |v| format!("{v:.6}"))
            );
        }
    }
    exit_for(&out)
}

fn cmd_sweep(manifest: &RunManifest) -> Result<ExitCode> {
    // Grid size goes out before any execution starts.
    println!("grid: {} points", manifest.product_size());
    let out = sweep::run_sweep(manifest)?;
    report_sweep(&out);
    exit_for(&out)
}

fn report_sweep(out: &sweep::SweepOutput) {
    let s = &out.summary;
    println!(
        "completed {}/{} points ({} rows) in {:.2} s -> {}",
        s.completed,
        s.total,
        s.rows_written,
        s.wall_seconds,
        out.index_path.display()
    );
    for (index, message) in &out.failures {
        eprintln!("point {index} failed: {message}");
    }
}

fn exit_for(out: &sweep::SweepOutput) -> Result<ExitCode> {
    if out.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_fit(manifest: &RunManifest) -> Result<ExitCode> {
    let index_path = manifest.sweep.output_dir.join("index.json");
    let doc = sweep::run_fit_pipeline(&index_path)?;
    let fits_path = manifest.sweep.output_dir.join("fits.json");
    sweep::write_fit_document(&doc, &fits_path)?;
    println!("fitted {} trajectories -> {}", doc.points.len(), fits_path.display());
    for point in &doc.points {
        let outcome = match (&point.error, point.omega, point.saturation_f) {
            (Some(e), _, _) => format!("error: {e}"),
            (None, Some(omega), _) => format!(
                "Omega={:.6e} Gamma={:.3e}",
                omega,
                point.gamma.unwrap_or(f64::NAN)
            ),
            (None, None, Some(f)) => format!(
                "f={:.4} gamma={:.3e}",
                f,
                point.saturation_rate.unwrap_or(f64::NAN)
            ),
            _ => "no fit".to_string(),
        };
        println!(
            "  g={} tau={} q={} c={} [{}] {}",
            point.g, point.tau, point.q, point.c, point.shape, outcome
        );
    }
    if doc.laws.is_empty() {
        println!("no pooled law had enough qualifying points");
    } else {
        for name in doc.laws.keys() {
            println!("law fitted: {name}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_converge(manifest: &RunManifest) -> Result<ExitCode> {
    let report = sweep::convergence_report(manifest)?;
    println!(
        "base truncation: charge_cutoff={} battery_levels={} (threshold {} E_f)",
        report.base_charge_cutoff, report.base_battery_levels, report.threshold
    );
    for row in &report.rows {
        println!(
            "  {:<32} max |dE| deviation = {:.3e} E_f{}",
            row.label,
            row.max_deviation,
            if row.flagged { "  ** above threshold" } else { "" }
        );
    }
    println!(
        "bound-level shift under a charge basis +10: {:.3e} relative{}",
        report.spectrum_shift,
        if report.spectrum_shift_ok { "" } else { "  ** above threshold" }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_plots(manifest: &RunManifest) -> Result<ExitCode> {
    let index_path = manifest.sweep.output_dir.join("index.json");
    let scripts = plots::emit_plot_scripts(&index_path)?;
    for script in &scripts {
        println!("wrote {}", script.display());
    }
    Ok(ExitCode::SUCCESS)
}
