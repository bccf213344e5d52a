use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssconv::pipeline::*;
use ssconv::repr::{octahedral_group, Rotation};
use ssconv::steering::Pose;
use ssconv::tensor::PointCloud;

const SMALL: &str = "conv in=[0x4] out=[0x3,1x2] mode=submanifold\nnorm\nact\ntap\npool factor=2\nconv out=[0x3,1x1] mode=general\nnorm\nact\ntap";

fn small_config(grid: u32) -> ModelConfig {
    ModelConfig {
        grid,
        hidden: 4,
        backbone: SMALL.to_string(),
    }
}

fn jittered(model: &mut PoseModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = model.params().iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
    model.set_params(&p).unwrap();
}

fn rotated_cloud(cloud: &PointCloud, r: &Rotation) -> PointCloud {
    PointCloud::new(cloud.points.iter().map(|p| r.apply(p)).collect(), cloud.attributes.clone()).unwrap()
}

#[test]
fn untrained_model_predicts_identity_at_centroid() {
    let model = PoseModel::new(small_config(10), 0).unwrap();
    let scene = gen_scene(4, 1, 64, 0.0).unwrap();
    let centroid = scene.cloud.centroid().unwrap();
    for refine in 0..3 {
        let pose = model.predict_pose(&scene.cloud, refine).unwrap();
        assert!(pose.rotation.angle_to(&Rotation::identity()) < 1e-12);
        assert!((pose.translation - centroid).norm() < 1e-12);
    }
}

#[test]
fn oracle_has_zero_error_identity_baseline_does_not() {
    let reg = EstimatorRegistry::default();
    let settings = EvalSettings {
        num_scenes: 6,
        seed: 1,
        num_points: 64,
        noise_sigma: 0.01,
    };
    let oracle = evaluate(reg.build("oracle", None).unwrap().as_ref(), &settings, 0).unwrap();
    assert!(oracle.rotation_error_deg < 1e-6 && oracle.translation_error < 1e-12);
    assert_eq!(oracle.add_accuracy, 1.0);
    let identity = evaluate(reg.build("identity", None).unwrap().as_ref(), &settings, 0).unwrap();
    assert!(identity.rotation_error_deg > 20.0);
    assert!(reg.build("model", None).is_err());
}

/// Central differences of one loss component against the analytic
/// gradient. Stage two sees the stage-one pose as a constant, so each
/// block is checked against the loss it actually feeds.
#[test]
fn parameter_gradients_match_finite_differences() {
    let mut model = PoseModel::new(small_config(8), 3).unwrap();
    jittered(&mut model, 9, 0.3);
    let scene = gen_scene(11, 0, 40, 0.0).unwrap();
    let (_, grad, _, _) = model.loss_and_grad(&scene.cloud, &scene.pose).unwrap();
    let base = model.params();
    let blocks = model.param_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut start = 0;
    let h = 1e-6;
    for (name, len) in blocks {
        let second_stage = !(name == "backbone" || name.starts_with("stage1"));
        for _ in 0..len.min(6) {
            let i = start + rng.random_range(0..len);
            let mut eval = |d: f64| {
                let mut p = base.clone();
                p[i] += d;
                model.set_params(&p).unwrap();
                let l = model.loss_and_grad(&scene.cloud, &scene.pose).unwrap().0;
                if second_stage {
                    l.stage2
                } else {
                    l.stage1
                }
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "{name}[{}]: fd {fd} analytic {}", i - start, grad[i]);
        }
        start += len;
    }
}

#[test]
fn stage_one_is_equivariant_to_lattice_rotations() {
    // grid 10 puts the input center on the pooled lattice for factor 2
    let mut model = PoseModel::new(small_config(10), 5).unwrap();
    jittered(&mut model, 1, 0.5);
    let scene = gen_scene(7, 2, 128, 0.0).unwrap();
    let base = model.stage1(&scene.cloud, ssconv::layers::Mode::Eval).unwrap().pose;
    for r in octahedral_group() {
        let moved = model.stage1(&rotated_cloud(&scene.cloud, &r), ssconv::layers::Mode::Eval).unwrap().pose;
        let want = Pose::new(r * base.rotation, r.apply(&base.translation));
        assert!((moved.rotation.matrix() - want.rotation.matrix()).abs().max() < 1e-9);
        assert!((moved.translation - want.translation).norm() < 1e-9);
    }
}

fn tiny_train(iters: usize) -> TrainConfig {
    TrainConfig {
        grid: 8,
        iters,
        batch: 2,
        num_points: 48,
        hidden: 4,
        seed: 13,
        ..Default::default()
    }
}

#[test]
fn zero_iterations_reproduce_initialization() {
    let cfg = tiny_train(0);
    let (model, report) = train(&cfg, small_config(8), |_, _| {}).unwrap();
    assert!(report.losses.is_empty());
    let fresh = PoseModel::new(small_config(8), cfg.seed).unwrap();
    assert_eq!(Checkpoint::from_model(&model).to_bytes(), Checkpoint::from_model(&fresh).to_bytes());
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_train(3);
    let a = train(&cfg, small_config(8), |_, _| {}).unwrap();
    let b = train(&cfg, small_config(8), |_, _| {}).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(Checkpoint::from_model(&a.0).to_bytes(), Checkpoint::from_model(&b.0).to_bytes());
}

#[test]
fn loss_decreases_on_a_fixed_scene_stream() {
    let cfg = TrainConfig {
        iters: 40,
        lr: 0.01,
        ..tiny_train(0)
    };
    let (_, report) = train(&cfg, small_config(8), |_, _| {}).unwrap();
    let mean = |r: &[SceneLoss]| r.iter().map(|l| l.stage1 + l.stage2).sum::<f64>() / r.len() as f64;
    let first = mean(&report.losses[..10]);
    let last = mean(&report.losses[30..]);
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut model = PoseModel::new(small_config(8), 2).unwrap();
    jittered(&mut model, 4, 0.2);
    let bytes = Checkpoint::from_model(&model).to_bytes();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap().into_model(None).unwrap();
    let scene = gen_scene(1, 0, 64, 0.01).unwrap();
    let a = model.predict_pose(&scene.cloud, 1).unwrap();
    let b = back.predict_pose(&scene.cloud, 1).unwrap();
    assert_eq!(a.rotation.matrix(), b.rotation.matrix());
    assert_eq!(a.translation, b.translation);
    let other = ModelConfig { hidden: 5, ..small_config(8) };
    let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap().into_model(Some(&other));
    assert!(err.is_err());
}
