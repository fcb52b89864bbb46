//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoleak::attacks::infergat::{InferGatConfig, InferGatModel};
use topoleak::data::Dataset;
use topoleak::matrix::Matrix;
use topoleak::metrics::FeatureMatrix;
use topoleak::nn::{self, MlpArchitecture, ModelParams};
use topoleak::topology::AdjacencyMatrix;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, d: usize, k: usize, m: usize) -> Dataset {
    let features = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..m).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    Dataset::new(d, k, features, labels).unwrap()
}

/// Largest relative error over all coordinates, central differences with step `h`.
pub fn fd_check(params: &[f64], grad: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = loss(&p);
        p[k] = orig - h;
        let down = loss(&p);
        p[k] = orig;
        let fd = (up - down) / (2.0 * h);
        // Near-zero derivatives are compared absolutely.
        let err = if fd.abs().max(grad[k].abs()) < 1e-7 { (fd - grad[k]).abs() } else { rel_err(fd, grad[k]) };
        worst = worst.max(err);
    }
    worst
}

/// Worst finite-difference error of the MLP loss gradient at jittered
/// random parameters.
pub fn mlp_case(rng: &mut ChaCha8Rng, arch: &MlpArchitecture, seed: u64) -> f64 {
    let d = arch.layer_sizes()[0];
    let k = *arch.layer_sizes().last().unwrap();
    // Zero biases put dead relu units exactly on the kink; jitter them off it.
    let mut p = nn::init_params(arch, seed);
    for v in p.flat_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    let data = random_dataset(rng, d, k, 6);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, grad) = nn::loss_and_grad(&p, &data, &idx).unwrap();
    fd_check(p.flat(), &grad, 1e-6, |flat| {
        let q = ModelParams::new(arch.clone(), flat.to_vec()).unwrap();
        nn::loss_and_grad(&q, &data, &idx).unwrap().0
    })
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize) -> FeatureMatrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = rng.random_range(0.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    FeatureMatrix::new(m, vec![]).unwrap()
}

/// Worst finite-difference error of the INFERGAT loss gradient.
pub fn gat_case(rng: &mut ChaCha8Rng, cfg: &InferGatConfig, n: usize) -> f64 {
    let x = random_features(rng, n);
    let mut model = InferGatModel::init(n, cfg).unwrap();
    // Move away from the initial point so every block carries gradient.
    for v in model.params_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let (_, grad) = model.loss_and_grad(&x).unwrap();
    let params = model.params().to_vec();
    fd_check(&params, &grad, 1e-6, |flat| {
        let mut m = model.clone();
        m.params_mut().copy_from_slice(flat);
        m.loss(&x).unwrap()
    })
}

/// Features at 0.9 on edges and 0.1 elsewhere, each jittered by up to ±0.02.
pub fn planted(rng: &mut TestRng, truth: &AdjacencyMatrix) -> FeatureMatrix {
    let n = truth.n_nodes();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let base = if truth.get(i, j) { 0.9 } else { 0.1 };
            let v = base + rng.random_range(-0.02..0.02);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    FeatureMatrix::new(m, vec![]).unwrap()
}
