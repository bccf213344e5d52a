mod common;

use nalgebra::DMatrix;
use ndarray::Axis;
use proptest::prelude::*;
use rand::Rng;

use ssconv::kernel::{build_basis, param_count, BasisSpec, SteerableKernel};
use ssconv::repr::{field_repr, octahedral_group, rotate_lattice, FieldType, Rotation};
use ssconv::tensor::{kernel_offsets, offset_index};

fn max_violation(kern: &SteerableKernel, r: &Rotation) -> f64 {
    let mats = kern.materialize();
    let rho_out = field_repr(kern.field_out(), r).unwrap();
    let rho_in = field_repr(kern.field_in(), r).unwrap();
    let size = kern.size();
    let mut worst = 0.0f64;
    for (o, d) in kernel_offsets(size).iter().enumerate() {
        let ro = offset_index(size, rotate_lattice(r, *d)).unwrap();
        let lhs = mats.index_axis(Axis(0), ro);
        let rhs = rho_out.dot(&mats.index_axis(Axis(0), o)).dot(&rho_in.t());
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[test]
fn octahedral_steerability_single_pairs() {
    for size in [3, 5] {
        for k in 0..=2 {
            for l in 0..=2 {
                let kern = SteerableKernel::new(FieldType::new(vec![l]), FieldType::new(vec![k]), BasisSpec::with_size(size))
                    .unwrap()
                    .initialized(7 + k as u64 * 3 + l as u64);
                for r in octahedral_group() {
                    let v = max_violation(&kern, &r);
                    assert!(v < 1e-9, "k={k} l={l} size={size}: {v:e}");
                }
            }
        }
    }
}

#[test]
fn octahedral_steerability_mixed_fields() {
    let kern = SteerableKernel::new(FieldType::new(vec![0, 1, 2, 1]), FieldType::new(vec![2, 0, 1]), BasisSpec::default())
        .unwrap()
        .initialized(99);
    for r in octahedral_group() {
        assert!(max_violation(&kern, &r) < 1e-9);
    }
}

#[test]
fn continuous_steerability() {
    let mut rng = common::rng(5);
    let kern = SteerableKernel::new(FieldType::new(vec![0, 1, 2]), FieldType::new(vec![1, 2, 0]), BasisSpec::default())
        .unwrap()
        .initialized(3);
    for _ in 0..40 {
        let r = Rotation::random(&mut rng);
        let x = nalgebra::Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let rx = r.apply(&x);
        let lhs = kern.evaluate_at([rx.x, rx.y, rx.z]).unwrap();
        let rho_out = field_repr(kern.field_out(), &r).unwrap();
        let rho_in = field_repr(kern.field_in(), &r).unwrap();
        let rhs = rho_out.dot(&kern.evaluate_at([x.x, x.y, x.z]).unwrap()).dot(&rho_in.t());
        assert!(common::max_abs_diff(&lhs, &rhs) < 1e-9);
    }
}

#[test]
fn continuous_matches_grid_samples() {
    let kern = SteerableKernel::new(FieldType::new(vec![1, 0]), FieldType::new(vec![2, 1]), BasisSpec::default())
        .unwrap()
        .initialized(4);
    let mats = kern.materialize();
    for (o, d) in kernel_offsets(3).iter().enumerate() {
        let cont = kern.evaluate_at([d[0] as f64, d[1] as f64, d[2] as f64]).unwrap();
        assert!(common::max_abs_diff(&cont, &mats.index_axis(Axis(0), o).to_owned()) < 1e-13);
    }
}

#[test]
fn basis_functions_are_independent() {
    for k in 0..=3 {
        for l in 0..=3 {
            let b = build_basis(k, l, &BasisSpec::default()).unwrap();
            let v = b.values();
            let m = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[[i, j]]);
            let sv = m.svd(false, false).singular_values;
            let max = sv.max();
            let rank = sv.iter().filter(|&&s| s > 1e-9 * max).count();
            assert_eq!(rank, b.num_functions(), "k={k} l={l}");
        }
    }
}

fn field_strategy() -> impl Strategy<Value = FieldType> {
    prop::collection::vec(0u32..=3, 1..5).prop_map(FieldType::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn param_count_matches_storage(fin in field_strategy(), fout in field_strategy(), m in 1usize..4) {
        let spec = BasisSpec { centers: (0..m).map(|c| c as f64).collect(), ..Default::default() };
        let kern = SteerableKernel::new(fin.clone(), fout.clone(), spec).unwrap();
        prop_assert_eq!(kern.num_params(), param_count(&fin, &fout, m));
    }

    #[test]
    fn materialize_is_linear(seed_a in any::<u64>(), seed_b in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let base = SteerableKernel::new(FieldType::new(vec![0, 1]), FieldType::new(vec![1, 2]), BasisSpec::default()).unwrap();
        let ka = base.clone().initialized(seed_a);
        let kb = base.clone().initialized(seed_b);
        let mut mix = base.clone();
        let w = ka.weights() * a + kb.weights() * b;
        mix.set_weights(w.as_slice().unwrap()).unwrap();
        let lhs = mix.materialize();
        let rhs = ka.materialize() * a + kb.materialize() * b;
        let err = lhs.iter().zip(rhs.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(err < 1e-12);
    }
}
