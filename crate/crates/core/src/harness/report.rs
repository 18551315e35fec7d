use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::planner::EpisodeRecord;

use super::config::ExperimentConfig;
use super::pipeline::{EpochStats, HorizonStats, PlanningRun};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn mode_name(guided: bool) -> &'static str {
    if guided {
        "guided"
    } else {
        "unguided"
    }
}

/// Writes serialisable rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON document per line, no header.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    write_csv(path, curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub object: String,
    pub mode: String,
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

pub fn dynamics_rows(object: &str, guided: bool, stats: &[HorizonStats]) -> Vec<DynamicsRow> {
    stats
        .iter()
        .map(|s| DynamicsRow {
            object: object.to_string(),
            mode: mode_name(guided).to_string(),
            horizon: s.horizon,
            mean: s.mean,
            std: s.std,
            episodes: s.episodes,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: usize,
    pub step: usize,
    pub chamfer: f64,
    pub wall_ms: f64,
}

/// Per-step log: step 0 is the starting distance, step `k` follows the
/// `k`-th executed action.
pub fn step_rows(records: &[EpisodeRecord]) -> Vec<StepRow> {
    let mut rows = Vec::new();
    for (episode, r) in records.iter().enumerate() {
        rows.push(StepRow {
            episode,
            step: 0,
            chamfer: r.initial_chamfer,
            wall_ms: 0.0,
        });
        for (k, (&chamfer, &wall_ms)) in r.chamfer.iter().zip(&r.wall_ms).enumerate() {
            rows.push(StepRow {
                episode,
                step: k + 1,
                chamfer,
                wall_ms,
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningSummaryRow {
    pub object: String,
    pub mode: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_final_chamfer: f64,
    pub median_final_chamfer: f64,
    pub mean_steps_to_solve: Option<f64>,
    /// Against the other mode's final chamfers; positive when this mode ends
    /// closer to the goal.
    pub cliffs_delta: Option<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn planning_summary_row(object: &str, run: &PlanningRun, cliffs_delta: Option<f64>) -> PlanningSummaryRow {
    let finals = run.final_chamfers();
    let steps = run.steps_to_solve();
    PlanningSummaryRow {
        object: object.to_string(),
        mode: mode_name(run.guided).to_string(),
        episodes: run.records.len(),
        successes: run.successes(),
        success_rate: run.success_rate(),
        mean_final_chamfer: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
        median_final_chamfer: median(&finals),
        mean_steps_to_solve: (!steps.is_empty()).then(|| steps.iter().sum::<usize>() as f64 / steps.len() as f64),
        cliffs_delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub mode: String,
    /// `inf` for the unbounded threshold.
    pub threshold: f64,
    pub success_rate: f64,
}

/// Success rate at each configured threshold plus an unbounded one.
pub fn success_curve_rows(run: &PlanningRun, thresholds: &[f64]) -> Vec<CurveRow> {
    let mut ts = thresholds.to_vec();
    ts.push(f64::INFINITY);
    run.success_curve(&ts)
        .into_iter()
        .map(|(threshold, success_rate)| CurveRow {
            mode: mode_name(run.guided).to_string(),
            threshold,
            success_rate,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsRow {
    pub mode: String,
    pub episode: usize,
    pub success: bool,
    pub steps: usize,
    pub final_chamfer: f64,
}

pub fn steps_rows(run: &PlanningRun) -> Vec<StepsRow> {
    run.records
        .iter()
        .enumerate()
        .map(|(episode, r)| StepsRow {
            mode: mode_name(run.guided).to_string(),
            episode,
            success: r.success,
            steps: r.steps,
            final_chamfer: r.final_chamfer(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub data_size: usize,
    pub mode: String,
    pub final_train_loss: f64,
    pub dynamics_horizon: usize,
    pub dynamics_mean: f64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_final_chamfer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Enough to rerun a command and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub object: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `manifest.json` into `out_dir`, hashing each output.
pub fn write_manifest(out_dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: &[PathBuf]) -> Result<PathBuf> {
    let mut files = Vec::with_capacity(outputs.len());
    for p in outputs {
        let rel = p.strip_prefix(out_dir).unwrap_or(p);
        files.push(OutputFile {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_file(p)?,
        });
    }
    let m = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        object: cfg.object.name().to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        outputs: files,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}
