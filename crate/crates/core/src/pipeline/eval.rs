use std::collections::BTreeMap;
use std::sync::Arc;

use super::model::PoseModel;
use super::scene::SyntheticScene;
use super::shapes::Polycube;
use super::train::{stream_scene, EVAL_DOMAIN};
use crate::error::{Error, Result};
use crate::repr::Rotation;
use crate::steering::Pose;

/// ADD succeeds when the mean vertex displacement is below this fraction
/// of the shape diameter.
pub const ADD_THRESHOLD: f64 = 0.1;

/// Mean errors over an evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub scenes: usize,
    /// Mean geodesic rotation error in degrees.
    pub rotation_error_deg: f64,
    /// Mean translation error in world units.
    pub translation_error: f64,
    /// Mean translation error divided by the shape diameter.
    pub translation_error_rel: f64,
    /// Fraction of scenes passing ADD.
    pub add_accuracy: f64,
}

impl Metrics {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "scenes={}\nrotation_error_deg={:.6}\ntranslation_error={:.6}\ntranslation_error_rel={:.6}\nadd_accuracy={:.6}\n",
            self.scenes, self.rotation_error_deg, self.translation_error, self.translation_error_rel, self.add_accuracy
        )
    }
}

/// Errors of one estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation: f64,
    pub diameter: f64,
    /// Mean distance between model vertices under the two poses.
    pub add: f64,
}

pub fn pose_error(shape: &Polycube, estimate: &Pose, truth: &Pose) -> PoseError {
    let vertices = shape.vertices();
    let add = vertices.iter().map(|v| (estimate.apply(v) - truth.apply(v)).norm()).sum::<f64>() / vertices.len() as f64;
    PoseError {
        rotation_deg: estimate.rotation.angle_to(&truth.rotation).to_degrees(),
        translation: (estimate.translation - truth.translation).norm(),
        diameter: shape.diameter(),
        add,
    }
}

/// Anything that maps a scene to a pose.
pub trait PoseEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, scene: &SyntheticScene, refine_iters: usize) -> Result<Pose>;
}

/// The trained model.
pub struct ModelEstimator(pub Arc<PoseModel>);

impl PoseEstimator for ModelEstimator {
    fn name(&self) -> &str {
        "model"
    }

    fn estimate(&self, scene: &SyntheticScene, refine_iters: usize) -> Result<Pose> {
        self.0.predict_pose(&scene.cloud, refine_iters)
    }
}

/// Returns the ground truth.
pub struct OracleEstimator;

impl PoseEstimator for OracleEstimator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, scene: &SyntheticScene, _refine_iters: usize) -> Result<Pose> {
        Ok(scene.pose)
    }
}

/// Identity rotation at the cloud centroid.
pub struct IdentityEstimator;

impl PoseEstimator for IdentityEstimator {
    fn name(&self) -> &str {
        "identity"
    }

    fn estimate(&self, scene: &SyntheticScene, _refine_iters: usize) -> Result<Pose> {
        let c = scene.cloud.centroid().ok_or(Error::EmptyCloud)?;
        Ok(Pose::new(Rotation::identity(), c))
    }
}

/// Builds an estimator, given the trained model if one is loaded.
pub type EstimatorFactory = fn(Option<Arc<PoseModel>>) -> Result<Box<dyn PoseEstimator>>;

#[derive(Clone)]
pub struct EstimatorRegistry {
    factories: BTreeMap<String, EstimatorFactory>,
}

impl Default for EstimatorRegistry {
    /// `model`, `oracle` and `identity`.
    fn default() -> Self {
        let mut r = EstimatorRegistry {
            factories: BTreeMap::new(),
        };
        r.register("model", |m| {
            let m = m.ok_or_else(|| Error::InvalidArgument("the model estimator needs a checkpoint".into()))?;
            Ok(Box::new(ModelEstimator(m)))
        });
        r.register("oracle", |_| Ok(Box::new(OracleEstimator)));
        r.register("identity", |_| Ok(Box::new(IdentityEstimator)));
        r
    }
}

impl EstimatorRegistry {
    pub fn register(&mut self, name: &str, factory: EstimatorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, model: Option<Arc<PoseModel>>) -> Result<Box<dyn PoseEstimator>> {
        let f = self.factories.get(name).ok_or_else(|| Error::Unknown {
            what: "estimator",
            name: name.to_string(),
        })?;
        f(model)
    }
}

/// Settings of an evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub num_scenes: usize,
    pub seed: u64,
    pub num_points: usize,
    pub noise_sigma: f64,
}

/// The evaluation scenes for `settings`.
pub fn eval_scenes(settings: &EvalSettings) -> Result<Vec<SyntheticScene>> {
    (0..settings.num_scenes as u64)
        .map(|i| stream_scene(settings.seed, EVAL_DOMAIN, i, settings.num_points, settings.noise_sigma))
        .collect()
}

/// Per-scene errors of `estimator` on `scenes`.
pub fn scene_errors(estimator: &dyn PoseEstimator, scenes: &[SyntheticScene], refine_iters: usize) -> Result<Vec<PoseError>> {
    scenes
        .iter()
        .map(|s| {
            let est = estimator.estimate(s, refine_iters)?;
            Ok(pose_error(&Polycube::by_id(s.shape_id)?, &est, &s.pose))
        })
        .collect()
}

pub fn summarize(errors: &[PoseError]) -> Metrics {
    let n = errors.len().max(1) as f64;
    Metrics {
        scenes: errors.len(),
        rotation_error_deg: errors.iter().map(|e| e.rotation_deg).sum::<f64>() / n,
        translation_error: errors.iter().map(|e| e.translation).sum::<f64>() / n,
        translation_error_rel: errors.iter().map(|e| e.translation / e.diameter).sum::<f64>() / n,
        add_accuracy: errors.iter().filter(|e| e.add < ADD_THRESHOLD * e.diameter).count() as f64 / n,
    }
}

pub fn evaluate(estimator: &dyn PoseEstimator, settings: &EvalSettings, refine_iters: usize) -> Result<Metrics> {
    Ok(summarize(&scene_errors(estimator, &eval_scenes(settings)?, refine_iters)?))
}
