//! Synthetic 2-D distributions and the few-sample training subsets.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, LabRng, Purpose};
use crate::tensor::Tensor;

pub const EIGHT_GAUSSIANS_RADIUS: f64 = 2.0;
pub const EIGHT_GAUSSIANS_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    EightGaussians,
    TwoMoons,
    Checkerboard,
    Gaussian { mean: [f64; 2], std: f64 },
}

impl DatasetKind {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetKind::EightGaussians => 8,
            DatasetKind::TwoMoons => 2,
            DatasetKind::Checkerboard => 8,
            DatasetKind::Gaussian { .. } => 1,
        }
    }

    /// Standard normal "data", used as a no-signal control.
    pub fn noise() -> Self {
        DatasetKind::Gaussian {
            mean: [0.0, 0.0],
            std: 1.0,
        }
    }

    pub fn eight_gaussian_centers() -> [[f64; 2]; 8] {
        std::array::from_fn(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [EIGHT_GAUSSIANS_RADIUS * a.cos(), EIGHT_GAUSSIANS_RADIUS * a.sin()]
        })
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    /// `eight_gaussians`, `two_moons`, `checkerboard`, `noise` or `gaussian:MX,MY,STD`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eight_gaussians" => Ok(DatasetKind::EightGaussians),
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "checkerboard" => Ok(DatasetKind::Checkerboard),
            "noise" => Ok(DatasetKind::noise()),
            other => {
                let bad = || Error::Config(format!("unknown dataset '{other}'"));
                let params = other.strip_prefix("gaussian:").ok_or_else(bad)?;
                let v: Vec<f64> = params
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match v[..] {
                    [mx, my, std] if std > 0.0 => Ok(DatasetKind::Gaussian { mean: [mx, my], std }),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset2D {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub seed: u64,
}

fn normal(rng: &mut LabRng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw(kind: &DatasetKind, rng: &mut LabRng) -> ([f64; 2], usize) {
    match *kind {
        DatasetKind::EightGaussians => {
            let k = rng.random_range(0..8usize);
            let c = DatasetKind::eight_gaussian_centers()[k];
            let x = c[0] + EIGHT_GAUSSIANS_STD * normal(rng);
            let y = c[1] + EIGHT_GAUSSIANS_STD * normal(rng);
            ([x, y], k)
        }
        DatasetKind::TwoMoons => {
            let moon = rng.random_range(0..2usize);
            let t = rng.random_range(0.0..PI);
            let (x, y) = if moon == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx = 0.05 * normal(rng);
            let ny = 0.05 * normal(rng);
            // centred and scaled to roughly unit spread
            ([2.0 * (x + nx - 0.5), 2.0 * (y + ny - 0.25)], moon)
        }
        DatasetKind::Checkerboard => {
            // 4x4 board on [-2, 2)²; occupied cells have even row + col
            let x = rng.random_range(-2.0..2.0f64);
            let col = ((x.floor() as i64) + 2).clamp(0, 3) as usize;
            let row = col % 2 + 2 * rng.random_range(0..2usize);
            let y = row as f64 - 2.0 + rng.random_range(0.0..1.0f64);
            ([x, y], (row * 4 + col) / 2)
        }
        DatasetKind::Gaussian { mean, std } => ([mean[0] + std * normal(rng), mean[1] + std * normal(rng)], 0),
    }
}

impl Dataset2D {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// `n` draws from the start of the data stream, with class labels.
    pub fn sample_labeled(&self, n: usize) -> Result<(Tensor, Vec<usize>)> {
        self.sampler(Purpose::Data, 0).next_batch(n)
    }

    pub fn sample(&self, n: usize) -> Result<Tensor> {
        Ok(self.sample_labeled(n)?.0)
    }

    /// An independent stream of draws for `purpose`.
    pub fn sampler(&self, purpose: Purpose, index: u32) -> Sampler {
        Sampler {
            kind: self.kind,
            rng: stream(self.seed, purpose, index),
        }
    }
}

/// Sequential draws; consecutive batches continue the same stream.
pub struct Sampler {
    kind: DatasetKind,
    rng: LabRng,
}

impl Sampler {
    pub fn next_batch(&mut self, n: usize) -> Result<(Tensor, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Contract("cannot sample zero points".into()));
        }
        let mut data = Vec::with_capacity(2 * n);
        let mut classes = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, c) = draw(&self.kind, &mut self.rng);
            data.extend_from_slice(&p);
            classes.push(c);
        }
        Ok((Tensor::new(n, 2, data)?, classes))
    }
}

/// A fixed training subset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    pub samples: Tensor,
    pub classes: Vec<usize>,
}

impl TrainSet {
    /// The first `k` draws of the dataset's stream, so larger subsets extend smaller ones.
    pub fn subset(ds: &Dataset2D, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Contract("a training subset needs at least one sample".into()));
        }
        let (samples, classes) = ds.sample_labeled(k)?;
        Ok(Self { samples, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,class")?;
        for (r, c) in self.classes.iter().enumerate() {
            let row = self.samples.row(r);
            writeln!(w, "{:?},{:?},{c}", row[0], row[1])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "x,y,class" => {}
            _ => return Err(Error::Config("training set CSV must start with 'x,y,class'".into())),
        }
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("training set CSV line {}: '{line}'", n + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad());
            }
            data.push(fields[0].trim().parse::<f64>().map_err(|_| bad())?);
            data.push(fields[1].trim().parse::<f64>().map_err(|_| bad())?);
            classes.push(fields[2].trim().parse::<usize>().map_err(|_| bad())?);
        }
        if classes.is_empty() {
            return Err(Error::Config("training set CSV has no rows".into()));
        }
        Ok(Self {
            samples: Tensor::new(classes.len(), 2, data)?,
            classes,
        })
    }
}
