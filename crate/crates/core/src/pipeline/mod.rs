//! Two-stage pose estimation on synthetic polycube scenes.

pub mod checkpoint;
pub mod eval;
pub mod head;
pub mod model;
pub mod scene;
pub mod shapes;
pub mod train;

pub use checkpoint::{Checkpoint, NamedTensor, SSCK_MAGIC, SSCK_VERSION};
pub use eval::{
    eval_scenes, evaluate, pose_error, scene_errors, summarize, EstimatorFactory, EstimatorRegistry, EvalSettings,
    IdentityEstimator, Metrics, ModelEstimator, OracleEstimator, PoseError, PoseEstimator, ADD_THRESHOLD,
};
pub use head::PointHead;
pub use model::{ModelConfig, PoseModel, SceneLoss, StageHeads, DEFAULT_BACKBONE};
pub use scene::{gen_scene, gen_scene_with_pose, SyntheticScene};
pub use shapes::{num_shapes, shape_names, Polycube};
pub use train::{mix_seed, stream_scene, train, Adam, TrainConfig, TrainReport, EVAL_DOMAIN, TRAIN_DOMAIN};
