//! Fixtures shared by the benchmarks.

use monocnn_core::model::arch::{mono_tiny, std_tiny, FgfTemplate};
use monocnn_core::rng::Xoshiro256StarStar;
use monocnn_core::{build, ModelState, Tensor};

pub const INPUT: [usize; 3] = [1, 28, 28];

pub fn normals(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal() as f32).collect()).expect("shape matches length")
}

pub fn mono(seed: u64) -> ModelState {
    let mut s = build(&mono_tiny(INPUT, 10, &FgfTemplate::default(), seed), seed).expect("reference model builds");
    s.init_head(seed);
    s
}

pub fn standard(seed: u64) -> ModelState {
    let mut s = build(&std_tiny(INPUT, 10), seed).expect("reference model builds");
    s.init_head(seed);
    s
}

/// A batch of `n` MNIST-shaped inputs.
pub fn batch(n: usize, seed: u64) -> Tensor<f32> {
    normals(&[n, INPUT[0], INPUT[1], INPUT[2]], seed)
}
