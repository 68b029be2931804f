mod common;

use common::{gaussian_velocity, plain_fm_loss};
use flowlab::autodiff::Graph;
use flowlab::model::{Architecture, VelocityField};
use flowlab::rng::{normal_tensor, stream, Purpose};
use flowlab::training::{fm_loss, Weighting};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// The conditional mean is the L2 projection, so the residual
/// `(x0 − ε) − v*(x_τ)` must be uncorrelated with any function of `x_τ`.
#[test]
fn gaussian_velocity_residual_is_orthogonal() {
    let mean = [1.5, -0.5];
    let std = 0.4;
    let mut rng = stream(1, Purpose::Reference, 0);
    for &tau in &[0.1, 0.5, 0.9] {
        let n = 400_000;
        let mut moments = [0.0f64; 6];
        for _ in 0..n {
            let mut x = [0.0; 2];
            let mut target = [0.0; 2];
            for d in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x0 = mean[d] + std * z;
                let e: f64 = StandardNormal.sample(&mut rng);
                x[d] = tau * x0 + (1.0 - tau) * e;
                target[d] = x0 - e;
            }
            let v = gaussian_velocity(&x, tau, &mean, std);
            for d in 0..2 {
                let res = target[d] - v[d];
                moments[3 * d] += res;
                moments[3 * d + 1] += res * x[0];
                moments[3 * d + 2] += res * x[1];
            }
        }
        for m in moments {
            let m = m / n as f64;
            assert!(m.abs() < 0.01, "tau {tau}: residual moment {m}");
        }
    }
}

#[test]
fn gaussian_velocity_limits() {
    // τ → 0: x_τ = ε, the best guess of x0 − ε is μ − x
    let v = gaussian_velocity(&[0.3, -0.2], 0.0, &[1.0, 2.0], 0.5);
    assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] - 2.2).abs() < 1e-15);
    // point-mass data: the field is (μ − x)/(1 − τ)
    let (x, tau) = ([0.25, 0.5], 0.6);
    let v = gaussian_velocity(&x, tau, &[1.0, 1.0], 0.0);
    for d in 0..2 {
        assert!((v[d] - (1.0 - x[d]) / (1.0 - tau)).abs() < 1e-12);
    }
}

#[test]
fn graph_loss_matches_plain_loss() {
    let arch = Architecture {
        hidden: vec![12, 7],
        time_embed_dim: 6,
        num_classes: Some(4),
        ..Architecture::default()
    };
    let m = VelocityField::init(arch, &mut stream(3, Purpose::Init, 0)).unwrap();
    let mut rng = stream(3, Purpose::TrainTime, 0);
    let x0 = normal_tensor(&mut rng, 9, 2, 1.0);
    let noise = normal_tensor(&mut rng, 9, 2, 1.0);
    let taus: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..0.99)).collect();
    let cond: Vec<usize> = (0..9).map(|i| i % 4).collect();
    let table = Weighting::Table(vec![0.5, 2.0, 1.0]);
    let weights: Vec<f64> = taus.iter().map(|&t| table.weight(t)).collect();

    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let loss = fm_loss(&mut g, &bound, &x0, &noise, &taus, Some(&cond), &table).unwrap();
    let plain = plain_fm_loss(&m, &x0, &noise, &taus, Some(&cond), &weights);
    assert!((g.value(loss).item() - plain).abs() < 1e-12 * plain.max(1.0));
}
