use std::path::Path;

use guided_dynamics::egnn::EgnnParams;
use guided_dynamics::harness::config::ExperimentConfig;
use guided_dynamics::harness::pipeline::{eval_data, eval_dynamics, eval_planning, planning_tasks, train, train_on, training_data};
use guided_dynamics::worlds::ObjectKind;

fn desk() -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json")).unwrap()
}

fn tiny() -> ExperimentConfig {
    let mut cfg = desk();
    cfg.data_size = Some(3);
    cfg.eval_episodes = 2;
    cfg.horizons = vec![1];
    cfg.model.n_layers = 2;
    cfg.model.hidden_dim = 8;
    cfg.training.epochs = 3;
    cfg.training.batch_size = 2;
    cfg.cem.n_samples = 8;
    cfg.cem.n_iters = 2;
    cfg.cem.horizon = 1;
    cfg.planning.goals = 1;
    cfg.planning.repeats = 1;
    cfg.planning.max_steps = 2;
    cfg
}

#[test]
fn zero_epochs_keeps_the_initial_network() {
    let mut cfg = tiny();
    cfg.training.epochs = 0;
    let (out, _) = train(&cfg).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(out.best_epoch, None);
    let again = train(&cfg).unwrap().0;
    assert_eq!(out.params, again.params);
}

#[test]
fn same_seed_same_checkpoint() {
    let cfg = tiny();
    let data = training_data(&cfg, 3).unwrap();
    let a = train_on(&data, &cfg).unwrap();
    let b = train_on(&data, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.params).unwrap(), serde_json::to_string(&b.params).unwrap());
    assert_eq!(a.curve, b.curve);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(train_on(&data, &other).unwrap().params, a.params);
}

#[test]
fn one_goal_one_repeat_gives_one_episode() {
    let cfg = tiny();
    let model = train(&cfg).unwrap().0.params;
    let tasks = planning_tasks(&cfg).unwrap();
    assert_eq!(tasks.len(), 1);
    let run = eval_planning(&model, &tasks, true, &cfg).unwrap();
    assert_eq!(run.records.len(), 1);
    assert!(run.records[0].steps <= cfg.planning.max_steps);
    assert_eq!(run.success_curve(&[f64::INFINITY]), vec![(f64::INFINITY, 1.0)]);
}

#[test]
fn every_object_runs_end_to_end() {
    for kind in ObjectKind::ALL {
        let mut cfg = tiny();
        cfg.object = kind;
        let model = train(&cfg).unwrap().0.params;
        let stats = eval_dynamics(&model, &eval_data(&cfg).unwrap(), &cfg.horizons, true, &cfg).unwrap();
        assert!(stats[0].mean.is_finite() && stats[0].mean >= 0.0, "{kind}: {stats:?}");
    }
}

#[test]
fn desk_training_cuts_loss_tenfold_and_beats_the_untrained_network() {
    let mut cfg = desk();
    cfg.data_size = Some(20);
    let (out, _) = train(&cfg).unwrap();
    let last = out.curve.last().unwrap().train_loss;
    assert!(last <= 0.1 * out.initial_loss, "{:.3e} -> {last:.3e}", out.initial_loss);

    let episodes = eval_data(&cfg).unwrap();
    let untrained = EgnnParams::zeros(cfg.model, out.params.coord_scale);
    let trained = eval_dynamics(&out.params, &episodes, &[1], false, &cfg).unwrap()[0].mean;
    let baseline = eval_dynamics(&untrained, &episodes, &[1], false, &cfg).unwrap()[0].mean;
    assert!(trained < baseline, "trained {trained:.3} vs untrained {baseline:.3}");
}
