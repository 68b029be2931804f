//! Oracles shared by the integration tests. Nothing here goes through the
//! autodiff graph or the training code.

#![allow(dead_code)]

use flowlab::lora::{effective_weights, LoraAdapter};
use flowlab::model::VelocityField;
use flowlab::training::interpolate;
use flowlab::Tensor;

/// Optimal velocity for `x0 ~ N(μ, σ²I)`, `ε ~ N(0, I)`, `x_τ = τ·x0 + (1−τ)·ε`.
///
/// `(x0 − ε, x_τ)` is jointly Gaussian with `Var x_τ = s² = τ²σ² + (1−τ)²`,
/// `Cov(x0, x_τ) = τσ²` and `Cov(ε, x_τ) = 1−τ`, so
/// `E[x0 − ε | x_τ = x] = μ + (τσ² − (1−τ)) / s² · (x − τμ)`.
pub fn gaussian_velocity(x: &[f64], tau: f64, mean: &[f64], std: f64) -> Vec<f64> {
    let var = std * std;
    let s2 = tau * tau * var + (1.0 - tau) * (1.0 - tau);
    let gain = (tau * var - (1.0 - tau)) / s2;
    x.iter().zip(mean).map(|(xi, mi)| mi + gain * (xi - tau * mi)).collect()
}

/// Flow-matching loss from the plain forward pass:
/// `mean_i w_i·‖v(x_τ,i) − (x0_i − ε_i)‖²`.
pub fn plain_fm_loss(
    model: &VelocityField,
    x0: &Tensor,
    noise: &Tensor,
    taus: &[f64],
    cond: Option<&[usize]>,
    weights: &[f64],
) -> f64 {
    let x_tau = interpolate(x0, noise, taus).unwrap();
    let v = model.forward_at(&x_tau, taus, cond).unwrap();
    let mut total = 0.0;
    for (r, w) in weights.iter().enumerate().take(x0.rows()) {
        let mut sq = 0.0;
        for c in 0..x0.cols() {
            let d = v.get(r, c) - (x0.get(r, c) - noise.get(r, c));
            sq += d * d;
        }
        total += w * sq;
    }
    total / x0.rows() as f64
}

/// Same loss for a base model carrying an adapter.
pub fn plain_adapted_loss(
    base: &VelocityField,
    adapter: &LoraAdapter,
    x0: &Tensor,
    noise: &Tensor,
    taus: &[f64],
    weights: &[f64],
) -> f64 {
    plain_fm_loss(
        &effective_weights(base, adapter).unwrap(),
        x0,
        noise,
        taus,
        None,
        weights,
    )
}

/// Fourth-order central difference of `f` in every entry of `t`:
/// `(−f(+2h) + 8f(+h) − 8f(−h) + f(−2h)) / 12h`.
pub fn central_diff(t: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let (r, c) = (i / t.cols(), i % t.cols());
            let mut at = |k: f64| {
                let mut moved = t.clone();
                moved.set(r, c, t.get(r, c) + k * h);
                f(&moved)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between graph gradients and central differences
/// of the plain loss, over every parameter of a random small conditional MLP.
pub fn model_gradient_check(seed: u64, h: f64, floor: f64) -> f64 {
    use flowlab::autodiff::Graph;
    use flowlab::model::Architecture;
    use flowlab::rng::{normal_tensor, stream, Purpose};
    use flowlab::training::{fm_loss, Weighting};
    use rand::Rng;

    let mut rng = stream(seed, Purpose::Init, 9);
    let arch = Architecture {
        hidden: vec![rng.random_range(3..9), rng.random_range(3..9)],
        time_embed_dim: 2 * rng.random_range(1..4),
        num_classes: Some(3),
        ..Architecture::default()
    };
    let mut model = VelocityField::init(arch, &mut rng).unwrap();
    // biases start at zero; move them off it so their gradients are generic
    for p in model.params_mut() {
        *p = p.add(&normal_tensor(&mut rng, p.rows(), p.cols(), 0.1)).unwrap();
    }
    let n = 5;
    let x0 = normal_tensor(&mut rng, n, 2, 1.0);
    let noise = normal_tensor(&mut rng, n, 2, 1.0);
    let taus: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let cond: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let table = Weighting::Table(vec![1.0, 0.25, 2.0]);
    let weights: Vec<f64> = taus.iter().map(|&t| table.weight(t)).collect();

    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let loss = fm_loss(&mut g, &bound, &x0, &noise, &taus, Some(&cond), &table).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = bound.param_vars().iter().map(|&v| g.grad(v).clone()).collect();

    let mut worst = 0.0f64;
    let originals: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    for (p, orig) in originals.iter().enumerate() {
        let numeric = central_diff(orig, h, |t| {
            let mut m = model.clone();
            *m.params_mut()[p] = t.clone();
            plain_fm_loss(&m, &x0, &noise, &taus, Some(&cond), &weights)
        });
        for (a, num) in analytic[p].data().iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *num, floor));
        }
    }
    worst
}

/// The same check for adapter parameters on a frozen base.
pub fn adapter_gradient_check(seed: u64, h: f64, floor: f64) -> f64 {
    use flowlab::lora::{LoraInit, LoraSpec};
    use flowlab::model::Architecture;
    use flowlab::rng::{normal_tensor, stream, Purpose};
    use flowlab::schedule::{partition, PartitionMode, TimeGrid};
    use flowlab::training::{adapter_grads, Phase, Weighting};
    use rand::Rng;

    let mut rng = stream(seed, Purpose::Init, 10);
    let arch = Architecture {
        hidden: vec![6, 5],
        time_embed_dim: 4,
        ..Architecture::default()
    };
    let base = VelocityField::init(arch, &mut rng).unwrap();
    let spec = LoraSpec {
        rank: rng.random_range(1..4),
        alpha: 3.0,
        init: LoraInit::GaussianBoth,
        init_std: 0.3,
    };
    let adapter = LoraAdapter::init(&base, &spec, &mut rng).unwrap();
    let grid = TimeGrid::uniform(10).unwrap();
    let part = partition(&grid, PartitionMode::IndexFraction(0.4)).unwrap();
    let n = 4;
    let x0 = normal_tensor(&mut rng, n, 2, 1.0);
    let noise = normal_tensor(&mut rng, n, 2, 1.0);
    let taus: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let (_, analytic) = adapter_grads(
        &base,
        &adapter,
        Phase::Full,
        &part,
        &x0,
        &noise,
        &taus,
        None,
        &Weighting::default(),
    )
    .unwrap();
    let ones = vec![1.0; n];

    let mut worst = 0.0f64;
    let originals: Vec<Tensor> = adapter.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    for (p, orig) in originals.iter().enumerate() {
        let numeric = central_diff(orig, h, |t| {
            let mut a = adapter.clone();
            *a.params_mut()[p] = t.clone();
            plain_adapted_loss(&base, &a, &x0, &noise, &taus, &ones)
        });
        for (a, num) in analytic[p].data().iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *num, floor));
        }
    }
    worst
}
