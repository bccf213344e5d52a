use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::shapes::Polycube;
use crate::error::{Error, Result};
use crate::repr::Rotation;
use crate::steering::Pose;
use crate::tensor::PointCloud;

/// Half side of the box from which scene translations are drawn.
pub const TRANSLATION_RANGE: f64 = 1.0;
pub const MIN_POINTS: usize = 32;

/// A colored cloud of one posed shape.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub shape_id: usize,
    pub pose: Pose,
    pub noise_sigma: f64,
    pub cloud: PointCloud,
}

/// Scene with a pose drawn uniformly: rotation over SO(3), translation in
/// a box.
pub fn gen_scene(seed: u64, shape_id: usize, num_points: usize, noise_sigma: f64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = Rotation::random(&mut rng);
    let t = Vector3::from_fn(|_, _| rng.random_range(-TRANSLATION_RANGE..TRANSLATION_RANGE));
    gen_scene_with_pose(seed, shape_id, Pose::new(rotation, t), num_points, noise_sigma)
}

/// Scene with a given pose. Surface samples depend only on `seed`, so the
/// same seed yields the same canonical points under any pose.
pub fn gen_scene_with_pose(seed: u64, shape_id: usize, pose: Pose, num_points: usize, noise_sigma: f64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    sample_scene(&mut rng, shape_id, pose, num_points, noise_sigma)
}

fn sample_scene(rng: &mut ChaCha8Rng, shape_id: usize, pose: Pose, num_points: usize, noise_sigma: f64) -> Result<SyntheticScene> {
    if num_points < MIN_POINTS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_POINTS} points, got {num_points}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid noise sigma {noise_sigma}")));
    }
    let shape = Polycube::by_id(shape_id)?;
    let noise = Normal::new(0.0, noise_sigma).expect("valid sigma");
    let mut points = Vec::with_capacity(num_points);
    let mut attributes = Array2::zeros((num_points, 3));
    for i in 0..num_points {
        let (p, color) = shape.sample_surface(rng);
        let jitter = if noise_sigma > 0.0 {
            Vector3::from_fn(|_, _| noise.sample(rng))
        } else {
            Vector3::zeros()
        };
        points.push(pose.apply(&p) + jitter);
        for (c, v) in color.iter().enumerate() {
            attributes[[i, c]] = *v;
        }
    }
    Ok(SyntheticScene {
        shape_id,
        pose,
        noise_sigma,
        cloud: PointCloud::new(points, attributes)?,
    })
}
