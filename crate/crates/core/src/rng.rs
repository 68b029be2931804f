//! Seed-addressed random streams.
//!
//! Every consumer of randomness asks for `(seed, purpose, index)`. Streams are
//! ChaCha12 keyed by the seed with the purpose/index packed into the 64-bit
//! stream id, so drawing more from one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type LabRng = ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Data = 1,
    Init = 2,
    TrainNoise = 3,
    TrainTime = 4,
    EvalNoise = 5,
    Reference = 6,
    Projection = 7,
    Shuffle = 8,
}

pub fn stream(seed: u64, purpose: Purpose, index: u32) -> LabRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}

pub fn normal_tensor(rng: &mut LabRng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_vec_unchecked(rows, cols, data)
}
