//! Two-sample metrics for 2-D point clouds.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Mean squared Euclidean distance between paired rows.
pub fn endpoint_mse(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::Contract(format!(
            "endpoint batches differ: {:?} vs {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    if student.rows() == 0 {
        return Err(Error::Contract("endpoint batches are empty".into()));
    }
    let total: f64 = student
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / student.rows() as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cross(x: &Tensor, y: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..x.rows() {
        let xi = x.row(i);
        let mut row = 0.0;
        for j in 0..y.rows() {
            row += dist(xi, y.row(j));
        }
        total += row;
    }
    total / (x.rows() * y.rows()) as f64
}

/// `2·E‖x−y‖ − E‖x−x′‖ − E‖y−y′‖` from exact pairwise sums (V-statistic).
pub fn energy_distance(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::Contract(format!(
            "energy distance needs at least two points per set, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.cols() != y.cols() {
        return Err(Error::dim("energy_distance", x.shape(), y.shape()));
    }
    let ed = 2.0 * mean_cross(x, y) - mean_cross(x, x) - mean_cross(y, y);
    Ok(ed.max(0.0))
}

/// Squared 1-D Wasserstein-2 distance between two empirical distributions,
/// integrating the difference of quantile functions exactly. Sorts in place.
fn w2_squared_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n as f64;
    }
    // merge breakpoints i/n and j/m without floating division drift
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let total = (n * m) as u128;
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += d * d * (next - prev) as f64;
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc / total as f64
}

/// Mean over `n_proj` random unit directions of the squared 1-D W2 distance
/// between the projected samples.
pub fn sliced_w2(x: &Tensor, y: &Tensor, n_proj: usize, seed: u64) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Contract("sliced W2 needs non-empty inputs".into()));
    }
    if n_proj == 0 {
        return Err(Error::Contract("sliced W2 needs at least one projection".into()));
    }
    if x.cols() != y.cols() {
        return Err(Error::dim("sliced_w2", x.shape(), y.shape()));
    }
    let d = x.cols();
    let mut rng = stream(seed, Purpose::Projection, 0);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let dir = loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|a| a / norm).collect::<Vec<_>>();
            }
        };
        let project = |t: &Tensor| -> Vec<f64> {
            (0..t.rows())
                .map(|r| t.row(r).iter().zip(&dir).map(|(a, b)| a * b).sum())
                .collect()
        };
        total += w2_squared_1d(&mut project(x), &mut project(y));
    }
    Ok(total / n_proj as f64)
}
