//! The steps behind each command. Every step reads and writes under one
//! output directory and returns the files it wrote.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::egnn::{load_checkpoint, save_checkpoint, EgnnParams};
use crate::error::{Error, Result};
use crate::planner::cliffs_delta;
use crate::worlds::{generate_dataset_with, read_jsonl, write_jsonl, DatasetHeader, InteractionSequence};

use super::config::{seeds, ExperimentConfig};
use super::pipeline::{eval_data, eval_dynamics, eval_planning, planning_tasks, train_on, training_data, PlanningRun, TrainOutcome};
use super::report::{
    dynamics_rows, mode_name, planning_summary_row, step_rows, steps_rows, success_curve_rows, write_csv, write_json_lines, write_loss_curve,
    SweepRow,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const DYNAMICS_FILE: &str = "dynamics.csv";
pub const PLANNING_SUMMARY_FILE: &str = "planning_summary.csv";
pub const SUCCESS_CURVE_FILE: &str = "success_curve.csv";
pub const STEPS_TO_SOLVE_FILE: &str = "steps_to_solve.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn planning_steps_file(guided: bool) -> String {
    format!("planning_steps_{}.csv", mode_name(guided))
}

pub fn episodes_file(guided: bool) -> String {
    format!("episodes_{}.jsonl", mode_name(guided))
}

fn prepare(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    Ok(())
}

/// Generates the training sequences and writes them as JSON lines.
pub fn gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<InteractionSequence>, Vec<PathBuf>)> {
    cfg.validate()?;
    prepare(out_dir)?;
    let data = training_data(cfg, cfg.data_size())?;
    let path = out_dir.join(DATASET_FILE);
    write_jsonl(BufWriter::new(File::create(&path)?), &DatasetHeader::new(&cfg.world_spec(), data.len()), &data)?;
    let unconverged = data.iter().filter(|s| !s.tracking_converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} of {} sequences did not finish tracking", data.len());
    }
    Ok((data, vec![path]))
}

/// Reuses the dataset in `out_dir` when it matches the configuration, and
/// generates it otherwise.
fn dataset_for(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<InteractionSequence>, Vec<PathBuf>)> {
    let path = out_dir.join(DATASET_FILE);
    if path.exists() {
        let (header, data): (DatasetHeader, Vec<InteractionSequence>) = read_jsonl(BufReader::new(File::open(&path)?))?;
        if header.spec == cfg.world_spec() && data.len() == cfg.data_size() {
            log::info!("using {} sequences from {}", data.len(), path.display());
            return Ok((data, vec![]));
        }
        log::info!("{} does not match the configuration; regenerating", path.display());
    }
    gen_data(cfg, out_dir)
}

pub fn train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(TrainOutcome, Vec<PathBuf>)> {
    cfg.validate()?;
    prepare(out_dir)?;
    let (data, mut files) = dataset_for(cfg, out_dir)?;
    let outcome = train_on(&data, cfg)?;
    let model = out_dir.join(MODEL_FILE);
    save_checkpoint(&model, &outcome.params)?;
    let curve = out_dir.join(LOSS_CURVE_FILE);
    write_loss_curve(&curve, &outcome.curve)?;
    files.extend([model, curve]);
    Ok((outcome, files))
}

/// The checkpoint written by [`train`].
pub fn load_model(out_dir: &Path) -> Result<EgnnParams> {
    let path = out_dir.join(MODEL_FILE);
    if !path.exists() {
        return Err(Error::Io(format!("no model at {}; run `train` first", path.display())));
    }
    load_checkpoint(&path)
}

pub fn eval_dynamics_to(cfg: &ExperimentConfig, model: &EgnnParams, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let episodes = eval_data(cfg)?;
    let mut rows = Vec::new();
    for guided in cfg.modes() {
        let stats = eval_dynamics(model, &episodes, &cfg.horizons, guided, cfg)?;
        for s in &stats {
            log::info!("{} {}: H={} CD+S {:.3} ± {:.3}", cfg.object, mode_name(guided), s.horizon, s.mean, s.std);
        }
        rows.extend(dynamics_rows(cfg.object.name(), guided, &stats));
    }
    let path = out_dir.join(DYNAMICS_FILE);
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

pub fn plan_to(cfg: &ExperimentConfig, model: &EgnnParams, out_dir: &Path) -> Result<(Vec<PlanningRun>, Vec<PathBuf>)> {
    let tasks = planning_tasks(cfg)?;
    let mut runs = Vec::new();
    let mut files = Vec::new();
    for guided in cfg.modes() {
        let run = eval_planning(model, &tasks, guided, cfg)?;
        log::info!("{} {}: {}/{} episodes solved", cfg.object, mode_name(guided), run.successes(), run.records.len());
        let steps = out_dir.join(planning_steps_file(guided));
        write_csv(&steps, &step_rows(&run.records))?;
        let episodes = out_dir.join(episodes_file(guided));
        write_json_lines(&episodes, &run.records)?;
        files.extend([steps, episodes]);
        runs.push(run);
    }

    let mut summary = Vec::new();
    let mut curve = Vec::new();
    let mut solve = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let delta = match runs.iter().enumerate().find(|(j, _)| *j != k) {
            Some((_, other)) => Some(cliffs_delta(&run.final_chamfers(), &other.final_chamfers())?),
            None => None,
        };
        summary.push(planning_summary_row(cfg.object.name(), run, delta));
        curve.extend(success_curve_rows(run, &cfg.planning.curve_thresholds));
        solve.extend(steps_rows(run));
    }
    let summary_path = out_dir.join(PLANNING_SUMMARY_FILE);
    write_csv(&summary_path, &summary)?;
    let curve_path = out_dir.join(SUCCESS_CURVE_FILE);
    write_csv(&curve_path, &curve)?;
    let solve_path = out_dir.join(STEPS_TO_SOLVE_FILE);
    write_csv(&solve_path, &solve)?;
    files.extend([summary_path, curve_path, solve_path]);
    Ok((runs, files))
}

/// Trains on nested prefixes of one dataset and records how dynamics error
/// and planning success change with the number of interactions.
pub fn sweep_to(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let largest = cfg.dataset_sizes.iter().copied().max().ok_or_else(|| Error::InvalidInput("no sweep sizes".into()))?;
    let data = generate_dataset_with(&cfg.world_spec(), largest, cfg.sub_seed(seeds::SWEEP), &cfg.learner())?;
    let episodes = eval_data(cfg)?;
    let tasks = planning_tasks(cfg)?;
    let horizon = *cfg.horizons.last().expect("validated horizons");
    let mut rows = Vec::new();
    for &size in &cfg.dataset_sizes {
        let outcome = train_on(&data[..size], cfg)?;
        let final_train_loss = outcome.curve.last().map_or(outcome.initial_loss, |c| c.train_loss);
        for guided in cfg.modes() {
            let dynamics = eval_dynamics(&outcome.params, &episodes, &[horizon], guided, cfg)?;
            let run = eval_planning(&outcome.params, &tasks, guided, cfg)?;
            let finals = run.final_chamfers();
            log::info!("sweep size {size} {}: {}/{} solved", mode_name(guided), run.successes(), run.records.len());
            rows.push(SweepRow {
                data_size: size,
                mode: mode_name(guided).to_string(),
                final_train_loss,
                dynamics_horizon: horizon,
                dynamics_mean: dynamics[0].mean,
                episodes: run.records.len(),
                successes: run.successes(),
                success_rate: run.success_rate(),
                mean_final_chamfer: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
            });
        }
    }
    let path = out_dir.join(SWEEP_FILE);
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

/// Data, training, dynamics table, planning evaluation and, when enabled,
/// the dataset-size sweep.
pub fn reproduce(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    prepare(out_dir)?;
    let (_, mut files) = gen_data(cfg, out_dir)?;
    let (outcome, train_files) = train(cfg, out_dir)?;
    files.extend(train_files);
    files.extend(eval_dynamics_to(cfg, &outcome.params, out_dir)?);
    files.extend(plan_to(cfg, &outcome.params, out_dir)?.1);
    if cfg.sweep {
        files.extend(sweep_to(cfg, out_dir)?);
    }
    Ok(files)
}
