use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssconv::diagnostics::{bench, check_equivariance, random_input, rotation_centers};
use ssconv::layers::Network;

const NET: &str = "conv in=[0x2,1x1] out=[0x4,1x2] mode=submanifold\nnorm\nact\npool factor=2\nconv out=[0x3,1x1] mode=general\nnorm\nact";

fn inputs(net: &Network, n: usize) -> Vec<ssconv::tensor::SparseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n).map(|_| random_input(&mut rng, net.field_in(), 8, 0.2)).collect()
}

#[test]
fn centers_follow_pool_factor() {
    assert_eq!(rotation_centers(1, 8), ([4.0; 3], [4.0; 3]));
    let (c_in, c_out) = rotation_centers(2, 8);
    assert_eq!((c_in[0] - 0.5) / 2.0, c_out[0]);
}

#[test]
fn steerable_network_passes_broken_one_fails() {
    let mut net = Network::from_config(NET, None, 1).unwrap();
    let xs = inputs(&net, 2);
    let ok = check_equivariance(&net, &xs, 3, 0).unwrap();
    assert_eq!(ok.rotations, 24);
    assert!(ok.octahedral_max < 1e-9, "{}", ok.octahedral_max);
    assert_eq!(ok.continuous.len(), 6);
    assert!(ok.continuous.iter().all(|e| e.is_finite()));
    net.break_equivariance(7, 0.5);
    let bad = check_equivariance(&net, &xs, 0, 0).unwrap();
    assert!(bad.octahedral_max > 1e-3, "{}", bad.octahedral_max);
}

#[test]
fn empty_inputs_report_zero() {
    let net = Network::from_config(NET, None, 1).unwrap();
    let r = check_equivariance(&net, &[], 2, 0).unwrap();
    assert_eq!(r.octahedral_max, 0.0);
    assert_eq!(r.continuous_mean(), 0.0);
}

#[test]
fn bench_paths_agree_and_count_macs() {
    let net = Network::from_config(NET, None, 1).unwrap();
    let r = bench(&net, 0.1, 10, 2, 1, 0).unwrap();
    assert!(r.max_deviation < 1e-10, "{}", r.max_deviation);
    assert!(r.macs_identity_holds());
    assert!(r.pairs > 0 && r.dense_cells > 0);
    assert!(bench(&net, 0.0, 10, 1, 1, 0).is_err());
}
