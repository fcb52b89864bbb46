//! Analytic gradients against central finite differences.

mod common;

use common::{gat_case, mlp_case, rng};
use rand::Rng;
use topoleak::attacks::infergat::{AttentionGraph, InferGatConfig};
use topoleak::nn::{self, Activation, MlpArchitecture};

#[test]
fn mlp_loss_gradient_matches_finite_differences() {
    let mut rng = rng(11);
    for case in 0..25 {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let sizes = vec![rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4), rng.random_range(2..4)];
        let arch = MlpArchitecture::new(sizes, act).unwrap();
        let worst = mlp_case(&mut rng, &arch, case);
        assert!(worst < 1e-4, "case {case}: relative error {worst}");
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = rng(5);
    for case in 0..10 {
        let arch = MlpArchitecture::new(vec![3, 5, 4, 3], Activation::Tanh).unwrap();
        let p = nn::init_params(&arch, case);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jac = nn::jacobian(&p, &x).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut up = x.clone();
            let mut down = x.clone();
            up[c] += h;
            down[c] -= h;
            let su = nn::softmax(&nn::forward(&p, &up).unwrap());
            let sd = nn::softmax(&nn::forward(&p, &down).unwrap());
            for out in 0..3 {
                let fd = (su[out] - sd[out]) / (2.0 * h);
                assert!((fd - jac[(out, c)]).abs() < 1e-8, "case {case} ({out},{c}): {fd} vs {}", jac[(out, c)]);
            }
        }
    }
}

#[test]
fn infergat_gradient_matches_finite_differences() {
    let mut rng = rng(3);
    let cfg = InferGatConfig {
        embed_dim: 4,
        heads: 1,
        decoder_hidden: vec![6],
        attention: AttentionGraph::Complete,
        seed: 1,
        ..InferGatConfig::default()
    };
    let worst = gat_case(&mut rng, &cfg, 5);
    assert!(worst < 1e-3, "relative error {worst}");
}

#[test]
fn infergat_gradient_multi_head_and_knn() {
    let mut rng = rng(8);
    for (case, attention) in [AttentionGraph::Complete, AttentionGraph::Knn { k: 2 }].into_iter().enumerate() {
        let cfg = InferGatConfig {
            embed_dim: 3,
            heads: 2,
            decoder_hidden: vec![5, 4],
            attention,
            seed: case as u64,
            ..InferGatConfig::default()
        };
        let worst = gat_case(&mut rng, &cfg, 6);
        assert!(worst < 1e-3, "{attention:?}: relative error {worst}");
    }
}
