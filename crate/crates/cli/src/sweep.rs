//! One sub-run per axis value, executed by a small worker pool and
//! aggregated in value order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rhfs_core::container::load_orbitals;
use rhfs_core::hs_distance_squared;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{float, write_json, write_text};
use crate::run::{run, RunStatus, Versions};
use crate::scenario::{Axis, Scenario};

/// Worker count from `RHFS_WORKERS`, defaulting to the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("RHFS_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubRun {
    pub index: usize,
    pub value: f64,
    pub dir: String,
    pub status: RunStatus,
    pub config_hash: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub template_hash: String,
    pub versions: Versions,
    pub status: RunStatus,
    pub runs: Vec<SubRun>,
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(CliError::Sweep("empty values list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Sweep("values must be finite".into()));
    }
    let up = values.windows(2).all(|w| w[1] > w[0]);
    let down = values.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        return Err(CliError::Sweep("values must be strictly monotone".into()));
    }
    Ok(())
}

fn sub_run(template: &Scenario, axis: Axis, index: usize, value: f64, out: &Path) -> SubRun {
    let rel = format!("{axis}_{index:03}");
    let mut row = SubRun {
        index,
        value,
        dir: rel.clone(),
        status: RunStatus::Aborted,
        config_hash: None,
        metrics: BTreeMap::new(),
        error: None,
    };
    let scenario = match template.with_axis(axis, value) {
        Ok(mut s) => {
            s.name = format!("{}_{rel}", template.name);
            s
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.config_hash = Some(scenario.config_hash());
    match run(&scenario, &out.join(&rel)) {
        Ok(outcome) => {
            row.status = outcome.status;
            row.metrics = outcome.manifest.metrics;
            row.error = outcome.manifest.error;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Successive differences `tr|ω_i − ω_{i+1}|²` of the final states, their
/// ratios, and the implied order `ln(ratio) / (2 ln(dt_i/dt_{i+1}))`.
fn convergence_columns(rows: &mut [SubRun], out: &Path) -> Result<()> {
    let mut finals = Vec::with_capacity(rows.len());
    for row in rows.iter() {
        finals.push(match row.status {
            RunStatus::Aborted => None,
            _ => Some(load_orbitals(&out.join(&row.dir).join("final.rhfs"))?),
        });
    }
    let mut diffs = vec![None; rows.len()];
    for i in 0..rows.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (&finals[i], &finals[i + 1]) {
            diffs[i] = Some(hs_distance_squared(a, b)?);
        }
    }
    for i in 0..rows.len() {
        if let Some(d) = diffs[i] {
            rows[i].metrics.insert("hs_to_next".into(), d);
        }
        if let (Some(a), Some(Some(b))) = (diffs[i], diffs.get(i + 1)) {
            let ratio = a / b;
            let refine = rows[i].value / rows[i + 1].value;
            rows[i].metrics.insert("ratio_to_next".into(), ratio);
            rows[i].metrics.insert("observed_order".into(), ratio.ln() / (2.0 * refine.ln()));
        }
    }
    Ok(())
}

/// Aggregated table: `index,value,status` then every metric column in
/// name order; missing entries are `NaN`.
pub fn table(runs: &[SubRun], axis: Axis) -> String {
    let keys: BTreeSet<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut out = format!("index,{axis},status");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in runs {
        out.push_str(&format!("{},{},{}", r.index, float(r.value), r.status.exit_code()));
        for k in &keys {
            out.push(',');
            out.push_str(&float(r.metrics.get(*k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

pub fn sweep(template: &Scenario, axis: Axis, values: &[f64], out: &Path, workers: usize) -> Result<SweepManifest> {
    check_values(values)?;
    template.validate()?;
    std::fs::create_dir_all(out).map_err(crate::error::io(out))?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SubRun>>> = Mutex::new(vec![None; values.len()]);
    let workers = workers.clamp(1, values.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= values.len() {
                    break;
                }
                let row = sub_run(template, axis, i, values[i], out);
                slots.lock().expect("no worker panicked holding the lock")[i] = Some(row);
            });
        }
    });
    let mut runs: Vec<SubRun> = slots
        .into_inner()
        .expect("no worker panicked holding the lock")
        .into_iter()
        .map(|r| r.expect("every index was claimed"))
        .collect();
    if axis == Axis::Dt {
        convergence_columns(&mut runs, out)?;
    }
    let status = runs.iter().map(|r| r.status).max().unwrap_or(RunStatus::Ok);
    let manifest = SweepManifest {
        name: template.name.clone(),
        axis,
        values: values.to_vec(),
        template_hash: template.config_hash(),
        versions: Versions::current(),
        status,
        runs,
    };
    write_text(&out.join("sweep.csv"), &table(&manifest.runs, axis))?;
    write_json(&out.join("sweep_manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn default_sweep_dir(template: &Scenario, axis: Axis) -> PathBuf {
    PathBuf::from("runs").join(format!("{}_sweep_{axis}", template.name))
}
