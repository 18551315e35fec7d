use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::egnn::EgnnConfig;
use crate::error::{Error, Result};
use crate::guidance::{ConvergenceSpec, Controller};
use crate::planner::CemConfig;
use crate::worlds::{AgentMode, LearnerModel, ObjectKind, WorldSpec};

/// Physical setup of the ground-truth world; the object kind and seed come
/// from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSettings {
    pub particle_count: usize,
    /// `None` uses the object's own mode.
    pub agent_mode: Option<AgentMode>,
    pub effector_radius: f64,
    pub dt: f64,
    pub settle_time: f64,
    pub push_length: (f64, f64),
    pub action_duration: f64,
}

impl Default for WorldSettings {
    fn default() -> Self {
        let s = WorldSpec::new(ObjectKind::Tblock, 0);
        WorldSettings {
            particle_count: s.particle_count,
            agent_mode: None,
            effector_radius: s.effector_radius,
            dt: s.dt,
            settle_time: s.settle_time,
            push_length: s.push_length,
            action_duration: s.action_duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub shape_weight: f64,
    pub val_fraction: f64,
    /// Rescale the gradient when its global norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 500,
            lr: 1e-3,
            batch_size: 8,
            shape_weight: 1.0,
            val_fraction: 0.1,
            grad_clip: None,
        }
    }
}

/// Controller settings for building training targets and for guided
/// prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub tracking: Controller,
    pub prediction: Controller,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        let l = LearnerModel::for_kind(ObjectKind::Tblock);
        GuidanceConfig {
            tracking: l.tracking,
            prediction: l.guidance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningConfig {
    pub goals: usize,
    pub repeats: usize,
    pub max_steps: usize,
    /// Goal translation length range.
    pub goal_shift: (f64, f64),
    pub goal_max_turn_deg: f64,
    pub success_threshold: f64,
    /// Guidance convergence while planning; tracking keeps its own.
    pub convergence: ConvergenceSpec,
    /// Planning time per step in the step log; off keeps outputs reproducible.
    pub record_wall_time: bool,
    /// Finite thresholds for the success-rate curve; an unbounded one is
    /// always appended.
    pub curve_thresholds: Vec<f64>,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            goals: 10,
            repeats: 10,
            max_steps: 30,
            goal_shift: (0.15, 0.35),
            goal_max_turn_deg: 20.0,
            success_threshold: 0.1,
            convergence: ConvergenceSpec {
                tol: 1e-3,
                max_iters: 300,
                integral_clamp: None,
            },
            record_wall_time: false,
            curve_thresholds: vec![0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3],
        }
    }
}

/// Everything a run needs. Loaded from JSON; missing fields take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub object: ObjectKind,
    pub seed: u64,
    pub world: WorldSettings,
    /// Training sequences; `None` uses the per-object default.
    pub data_size: Option<usize>,
    /// Sizes for the data-fidelity sweep.
    pub dataset_sizes: Vec<usize>,
    pub eval_episodes: usize,
    pub horizons: Vec<usize>,
    pub model: EgnnConfig,
    pub training: TrainingConfig,
    pub guidance: GuidanceConfig,
    pub cem: CemConfig,
    pub planning: PlanningConfig,
    /// `None` evaluates both guided and unguided prediction.
    pub guided: Option<bool>,
    /// Whether `reproduce` also runs the dataset-size sweep.
    pub sweep: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            object: ObjectKind::Tblock,
            seed: 0,
            world: WorldSettings::default(),
            data_size: None,
            dataset_sizes: vec![10, 20, 40, 100],
            eval_episodes: 20,
            horizons: vec![1, 2, 4],
            model: EgnnConfig::default(),
            training: TrainingConfig::default(),
            guidance: GuidanceConfig::default(),
            cem: CemConfig::default(),
            planning: PlanningConfig::default(),
            guided: None,
            sweep: true,
        }
    }
}

/// Training sequences per object when the config does not say.
pub fn default_data_size(kind: ObjectKind) -> usize {
    match kind {
        ObjectKind::Tblock => 10,
        ObjectKind::StiffRope => 20,
        ObjectKind::BendyRope => 40,
        ObjectKind::Cloth => 20,
    }
}

/// Fixed offsets from the run seed for each consumer of randomness.
pub mod seeds {
    pub const OBJECT: u64 = 0;
    pub const TRAIN_DATA: u64 = 1;
    pub const EVAL_DATA: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const PLANNING: u64 = 4;
    pub const SWEEP: u64 = 5;
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.data_size == Some(0) || self.eval_episodes == 0 {
            return bad("dataset sizes must be at least 1");
        }
        if self.dataset_sizes.contains(&0) {
            return bad("sweep sizes must be at least 1");
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be positive and strictly ascending");
        }
        if self.model.n_layers == 0 || self.model.hidden_dim == 0 {
            return bad("model needs at least one layer and hidden unit");
        }
        if self.training.batch_size == 0 || !(self.training.lr > 0.0) || !(0.0..1.0).contains(&self.training.val_fraction) {
            return bad("invalid training settings");
        }
        if self.planning.goals == 0 || self.planning.repeats == 0 || self.planning.max_steps == 0 {
            return bad("planning counts must be at least 1");
        }
        self.guidance.tracking.validate()?;
        self.guidance.prediction.validate()?;
        self.planning.convergence.validate()?;
        self.cem.validate()?;
        self.world_spec().validate()
    }

    pub fn data_size(&self) -> usize {
        self.data_size.unwrap_or_else(|| default_data_size(self.object))
    }

    pub fn sub_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn world_spec(&self) -> WorldSpec {
        let w = &self.world;
        WorldSpec {
            object_kind: self.object,
            particle_count: w.particle_count,
            agent_mode: w.agent_mode.unwrap_or_else(|| self.object.default_agent_mode()),
            seed: self.sub_seed(seeds::OBJECT),
            effector_radius: w.effector_radius,
            dt: w.dt,
            settle_time: w.settle_time,
            push_length: w.push_length,
            action_duration: w.action_duration,
        }
    }

    /// The learner model for this object with the configured guidance.
    pub fn learner(&self) -> LearnerModel {
        LearnerModel {
            tracking: self.guidance.tracking,
            guidance: self.guidance.prediction,
            ..LearnerModel::for_kind(self.object)
        }
    }

    /// Learner used while planning: same model, planning convergence budget.
    pub fn planning_learner(&self) -> LearnerModel {
        let mut l = self.learner();
        l.guidance.convergence = self.planning.convergence;
        l
    }

    pub fn modes(&self) -> Vec<bool> {
        match self.guided {
            Some(g) => vec![g],
            None => vec![true, false],
        }
    }

    /// Canonical JSON used for hashing and the manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"object":"cloth","training":{"epochs":3}}"#).unwrap();
        assert_eq!(c.object, ObjectKind::Cloth);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.lr, 1e-3);
        assert_eq!(c.data_size(), 20);
    }

    #[test]
    fn rejects_bad_values() {
        let c = ExperimentConfig {
            horizons: vec![4, 2],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            data_size: Some(0),
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
    }
}
