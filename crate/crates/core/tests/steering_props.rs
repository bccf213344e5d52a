mod common;

use nalgebra::Vector3;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use ssconv::layers::Mode;
use ssconv::repr::{field_repr, octahedral_group, FieldType, RigidMotion, Rotation};
use ssconv::steering::{
    compose_pose, enrichment_network, steer_sites, steer_tensor, steer_tensor_backward, steer_tensor_with,
    tensor_to_point, Pose, TensorToPoint,
};
use ssconv::tensor::{Grid, SparseTensor};

fn field() -> FieldType {
    FieldType::new(vec![0, 1, 2])
}

#[test]
fn octahedral_steering_is_lossless() {
    let mut rng = common::rng(31);
    let t = common::random_tensor(&mut rng, &field(), 6, 0.3);
    for r in octahedral_group() {
        let shift = Vector3::new(2.0, -1.0, 3.0) * t.voxel_size();
        let g = RigidMotion::new(r, shift);
        let s = steer_tensor(&t, &g, None).unwrap();
        assert_eq!(s.num_sites(), t.num_sites());
        let rho = field_repr(&field(), &r).unwrap();
        for (row, &site) in t.sites().iter().enumerate() {
            let moved = g.apply(&t.grid().center_of(site));
            let out_row = s.row_of(t.grid().cell_of(&moved)).expect("site survives");
            let want = rho.dot(&t.features().row(row));
            let err = (&s.features().row(out_row) - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-12, "feature error {err:e}");
        }
    }
}

#[test]
fn lattice_steering_composes_exactly() {
    let mut rng = common::rng(32);
    let t = common::random_tensor(&mut rng, &field(), 5, 0.4);
    let group = octahedral_group();
    for i in 0..24 {
        let g1 = RigidMotion::new(group[i], Vector3::new(1.0, 0.0, -2.0));
        let g2 = RigidMotion::new(group[(i * 7 + 3) % 24], Vector3::new(0.0, 3.0, 1.0));
        let twice = steer_tensor(&steer_tensor(&t, &g1, None).unwrap(), &g2, None).unwrap();
        let once = steer_tensor(&t, &g2.compose(&g1), None).unwrap();
        common::assert_tensors_close(&twice, &once, 1e-12);
    }
}

#[test]
fn generic_steering_composition_error_is_bounded() {
    let mut rng = common::rng(33);
    let t = common::random_tensor(&mut rng, &FieldType::scalars(1), 8, 1.0);
    let g1 = RigidMotion::from_rotation(Rotation::about_z(0.3));
    let g2 = RigidMotion::from_rotation(Rotation::about_axis(Vector3::new(1.0, 1.0, 0.0), 0.4));
    let twice = steer_tensor(&steer_tensor(&t, &g1, None).unwrap(), &g2, None).unwrap();
    let once = steer_tensor(&t, &g2.compose(&g1), None).unwrap();
    // re-voxelization can drop or merge a minority of sites
    let common_sites = once.sites().iter().filter(|s| twice.row_of(**s).is_some()).count();
    assert!(common_sites as f64 > 0.6 * once.num_sites() as f64);
}

/// Brute-force trilinear formula over the 8 surrounding lattice points.
fn trilinear_oracle(t: &SparseTensor, q: &Vector3<f64>) -> Vec<f64> {
    let u = t.grid().lattice_coord(q);
    let mut out = vec![0.0; t.field_type().dim()];
    let (x0, y0, z0) = (u.x.floor(), u.y.floor(), u.z.floor());
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                let (x, y, z) = (x0 + dx as f64, y0 + dy as f64, z0 + dz as f64);
                let w = (1.0 - (u.x - x).abs()) * (1.0 - (u.y - y).abs()) * (1.0 - (u.z - z).abs());
                if let Some(f) = t.lookup(ssconv::tensor::Site::new(x as i32, y as i32, z as i32)) {
                    for (o, v) in out.iter_mut().zip(f) {
                        *o += w * v;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn trilinear_sampling_matches_direct_formula() {
    let mut rng = common::rng(34);
    let dense = common::random_tensor(&mut rng, &field(), 5, 1.0);
    let sparse = common::random_tensor(&mut rng, &FieldType::scalars(2), 5, 0.3);
    let queries: Vec<Vector3<f64>> = (0..200)
        .map(|_| Vector3::new(rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5)))
        .collect();
    let f = tensor_to_point(&[&dense, &sparse], &queries).unwrap();
    for (i, q) in queries.iter().enumerate() {
        let mut want = trilinear_oracle(&dense, q);
        want.extend(trilinear_oracle(&sparse, q));
        for (a, b) in f.row(i).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn sampling_gradient_is_the_adjoint() {
    let mut rng = common::rng(35);
    let a = common::random_tensor(&mut rng, &field(), 4, 0.5);
    let queries: Vec<Vector3<f64>> = (0..30)
        .map(|_| Vector3::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)))
        .collect();
    let sampler = TensorToPoint::new(&[&a], &queries).unwrap();
    let y = Array2::from_shape_fn((30, field().dim()), |_| rng.random_range(-1.0..1.0));
    let lhs = (&sampler.apply(&[&a]).unwrap() * &y).sum();
    let g = sampler.backward(y.view()).unwrap();
    let rhs = (&g[0] * a.features()).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn steering_gradients_match_finite_differences() {
    let f = FieldType::new(vec![0, 0, 1]);
    let mut rng = common::rng(36);
    let t = common::random_sites(&mut rng, &f, 4, 10);
    let net = enrichment_network(&f, 3).unwrap();
    let g = RigidMotion::new(Rotation::about_axis(Vector3::new(0.2, 1.0, 0.4), 0.7), Vector3::new(0.3, -0.2, 0.1));
    let loss_w = {
        let s = steer_tensor_with(&t, &g, t.grid(), Some(&net), Mode::Train).unwrap();
        Array2::from_shape_fn(s.output.features().dim(), |_| rng.random_range(-1.0..1.0))
    };
    let loss = |x: &SparseTensor| {
        let s = steer_tensor_with(x, &g, t.grid(), Some(&net), Mode::Train).unwrap();
        (&loss_w * s.output.features()).sum()
    };
    let s = steer_tensor_with(&t, &g, t.grid(), Some(&net), Mode::Train).unwrap();
    let (grad, params) = steer_tensor_backward(&s, Some(&net), loss_w.view()).unwrap();
    assert_eq!(params.len(), net.num_params());
    let h = 1e-5;
    for r in 0..t.num_sites() {
        for c in 0..f.dim() {
            let mut x = t.features().clone();
            x[[r, c]] += h;
            let up = loss(&t.with_features(x.clone(), f.clone()).unwrap());
            x[[r, c]] -= 2.0 * h;
            let down = loss(&t.with_features(x, f.clone()).unwrap());
            let numeric = (up - down) / (2.0 * h);
            assert!(common::relative_error(grad[[r, c]], numeric) < 1e-4, "({r},{c}) {} vs {numeric}", grad[[r, c]]);
        }
    }
}

#[test]
fn enrichment_input_check_and_grid_placement() {
    let mut rng = common::rng(37);
    let t = common::random_tensor(&mut rng, &field(), 4, 0.5);
    let target = Grid {
        voxel_size: 1.0,
        origin: [-10.0; 3],
        extent: [4; 3],
    };
    let s = steer_sites(&t, &RigidMotion::identity(), &target).unwrap().0;
    assert_eq!(s.grid(), &target);
    assert!(s.sites().iter().all(|site| site.0.iter().all(|&v| v >= 10)));
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, prop::array::uniform3(-5.0..5.0f64)).prop_map(|(a, b, c, t)| {
        let r = Rotation::from_euler_zyz(a * std::f64::consts::TAU, b * std::f64::consts::PI, c * std::f64::consts::TAU);
        Pose::new(r, Vector3::from(t))
    })
}

proptest! {
    #[test]
    fn composition_is_associative(p in arb_pose(), q in arb_pose(), r in arb_pose()) {
        let left = compose_pose(&compose_pose(&p, &q), &r);
        let right = compose_pose(&p, &compose_pose(&q, &r));
        prop_assert!((left.rotation.matrix() - right.rotation.matrix()).amax() < 1e-12);
        prop_assert!((left.translation - right.translation).amax() < 1e-12);
        prop_assert!(left.rotation.orthogonality_error() < 1e-12);
    }

    #[test]
    fn sampling_is_linear_in_features(seed in 0u64..500, a in -2.0..2.0f64) {
        let mut rng = common::rng(seed);
        let t = common::random_tensor(&mut rng, &FieldType::new(vec![0, 1]), 4, 0.5);
        let q: Vec<Vector3<f64>> = (0..8).map(|_| Vector3::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))).collect();
        let scaled = t.with_features(t.features() * a, t.field_type().clone()).unwrap();
        let diff = tensor_to_point(&[&scaled], &q).unwrap() - tensor_to_point(&[&t], &q).unwrap() * a;
        prop_assert!(diff.iter().all(|v| v.abs() < 1e-12));
    }
}
