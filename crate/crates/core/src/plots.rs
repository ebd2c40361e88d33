//! Plot-script emission for sweep outputs.
//!
//! Nothing is plotted in-process. Instead, self-contained matplotlib
//! scripts are written next to the sweep's index; they read only the CSVs
//! the sweep emitted, so a results directory can be copied elsewhere and
//! still plot. A trajectory script (stored energy and extraction
//! efficiency panels) is always produced for non-empty indexes; a
//! population heat map is added for every (g, tau, c) slice that sweeps
//! five or more populations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sweep::{read_index, IndexEntry, SweepIndex};

/// Minimum distinct populations in a slice before a heat map makes sense.
const HEATMAP_MIN_POPULATIONS: usize = 5;

/// Emits plotting scripts for a sweep index, returning the script paths.
/// An index with no completed points emits nothing (a warning goes to
/// stderr); a completed point whose CSV has since vanished is an error.
pub fn emit_plot_scripts(index_path: &Path) -> Result<Vec<PathBuf>> {
    let index = read_index(index_path)?;
    let dir = index_path.parent().unwrap_or_else(|| Path::new("."));

    let completed: Vec<&IndexEntry> =
        index.points.iter().filter(|p| p.file.is_some()).collect();
    if completed.is_empty() {
        eprintln!(
            "warning: index {} has no completed trajectories; nothing to plot",
            index_path.display()
        );
        return Ok(Vec::new());
    }
    for entry in &completed {
        let file = entry.file.as_ref().expect("filtered on file presence");
        let csv = dir.join(file);
        if !csv.exists() {
            return Err(Error::MissingFile(csv));
        }
    }

    let mut scripts = Vec::new();
    let traj_script = dir.join("plot_trajectories.py");
    std::fs::write(&traj_script, trajectory_script(&completed))
        .map_err(|e| Error::io(&traj_script, e))?;
    scripts.push(traj_script);

    for (slice_name, entries) in heatmap_slices(&index) {
        let path = dir.join(format!("plot_heatmap_{slice_name}.py"));
        std::fs::write(&path, heatmap_script(&entries)).map_err(|e| Error::io(&path, e))?;
        scripts.push(path);
    }
    Ok(scripts)
}

fn python_header() -> &'static str {
    "#!/usr/bin/env python3\n\
     # Generated alongside the sweep outputs; reads only the CSVs listed below.\n\
     import csv\n\
     import matplotlib\n\
     matplotlib.use(\"Agg\")\n\
     import matplotlib.pyplot as plt\n\n\
     def read_trajectory(path):\n\
     \x20   rows = []\n\
     \x20   with open(path, newline=\"\") as fh:\n\
     \x20       for row in csv.DictReader(r for r in fh if not r.startswith(\"#\")):\n\
     \x20           rows.append({\n\
     \x20               \"n\": int(row[\"n\"]),\n\
     \x20               \"delta_e\": float(row[\"delta_E\"]),\n\
     \x20               \"efficiency\": float(row[\"efficiency\"]) if row[\"efficiency\"] else None,\n\
     \x20           })\n\
     \x20   return rows\n\n"
}

fn python_file_list(entries: &[&IndexEntry]) -> String {
    let mut out = String::from("FILES = [\n");
    for entry in entries {
        let file = entry.file.as_ref().expect("completed entry");
        out.push_str(&format!(
            "    (\"{}\", {{\"g\": {}, \"tau\": {}, \"q\": {}, \"c\": {}}}),\n",
            file, entry.g, entry.tau, entry.q, entry.c
        ));
    }
    out.push_str("]\n\n");
    out
}

fn trajectory_script(entries: &[&IndexEntry]) -> String {
    let mut out = String::from(python_header());
    out.push_str(&python_file_list(entries));
    out.push_str(
        "fig, (ax_e, ax_eta) = plt.subplots(2, 1, sharex=True, figsize=(7, 7))\n\
         for name, params in FILES:\n\
         \x20   rows = read_trajectory(name)\n\
         \x20   label = \"g={g} tau={tau} q={q} c={c}\".format(**params)\n\
         \x20   ax_e.plot([r[\"n\"] for r in rows], [r[\"delta_e\"] for r in rows], label=label)\n\
         \x20   known = [r for r in rows if r[\"efficiency\"] is not None]\n\
         \x20   ax_eta.plot([r[\"n\"] for r in known], [r[\"efficiency\"] for r in known], label=label)\n\
         ax_e.set_ylabel(\"stored energy / E_f\")\n\
         ax_eta.set_ylabel(\"extraction efficiency\")\n\
         ax_eta.set_xlabel(\"collision n\")\n\
         ax_e.legend(fontsize=7)\n\
         fig.tight_layout()\n\
         fig.savefig(\"trajectories.png\", dpi=160)\n\
         print(\"wrote trajectories.png\")\n",
    );
    out
}

/// Groups completed entries into (g, tau, c) slices that sweep enough
/// populations for a heat map, keyed by a file-name-safe slice label.
fn heatmap_slices(index: &SweepIndex) -> BTreeMap<String, Vec<&IndexEntry>> {
    let mut slices: BTreeMap<String, Vec<&IndexEntry>> = BTreeMap::new();
    for entry in index.points.iter().filter(|p| p.file.is_some()) {
        let key = format!("g{}_tau{}_c{}", entry.g, entry.tau, entry.c);
        slices.entry(key).or_default().push(entry);
    }
    slices.retain(|_, entries| {
        let mut qs: Vec<u64> = entries.iter().map(|e| e.q.to_bits()).collect();
        qs.sort_unstable();
        qs.dedup();
        qs.len() >= HEATMAP_MIN_POPULATIONS
    });
    for entries in slices.values_mut() {
        entries.sort_by(|a, b| a.q.total_cmp(&b.q));
    }
    slices
}

fn heatmap_script(entries: &[&IndexEntry]) -> String {
    let mut out = String::from(python_header());
    out.push_str(&python_file_list(entries));
    out.push_str(
        "qs = [params[\"q\"] for _, params in FILES]\n\
         grid = []\n\
         ns = None\n\
         for name, _ in FILES:\n\
         \x20   rows = read_trajectory(name)\n\
         \x20   if ns is None:\n\
         \x20       ns = [r[\"n\"] for r in rows]\n\
         \x20   grid.append([r[\"delta_e\"] for r in rows])\n\
         fig, ax = plt.subplots(figsize=(7, 5))\n\
         im = ax.imshow(\n\
         \x20   grid,\n\
         \x20   aspect=\"auto\",\n\
         \x20   origin=\"lower\",\n\
         \x20   extent=(ns[0], ns[-1], qs[0], qs[-1]),\n\
         \x20   cmap=\"viridis\",\n\
         )\n\
         ax.set_xlabel(\"collision n\")\n\
         ax.set_ylabel(\"ancilla ground population q\")\n\
         fig.colorbar(im, ax=ax, label=\"stored energy / E_f\")\n\
         g = FILES[0][1][\"g\"]\n\
         tau = FILES[0][1][\"tau\"]\n\
         c = FILES[0][1][\"c\"]\n\
         name = \"heatmap_g{}_tau{}_c{}.png\".format(g, tau, c)\n\
         fig.tight_layout()\n\
         fig.savefig(name, dpi=160)\n\
         print(\"wrote \" + name)\n",
    );
    out
}
