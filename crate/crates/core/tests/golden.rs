//! Golden values produced by `tests/oracles/prng.py`, an independent
//! Python implementation of the documented PRNG.

// Values are pasted verbatim from the oracle output.
#![allow(clippy::excessive_precision)]

use monocnn_core::data::{corrupt, CorruptionKind, CorruptionSpec};
use monocnn_core::rng::Xoshiro256StarStar;
use monocnn_core::transport::SimulatedChannel;
use monocnn_core::{sample_betas, FgfConfig, FgfKind, Tensor};

#[test]
fn xoshiro_stream_seed_0() {
    let mut r = Xoshiro256StarStar::seed_from_u64(0);
    let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
    assert_eq!(got, [0x99ec5f36cb75f2b4, 0xbf6e1f784956452a, 0x1a5f849d4933e6e0]);
}

#[test]
fn betas_seed_42() {
    let cfg = FgfConfig::new(FgfKind::Monomial, 1.0, 7.0, 42, 4);
    let expected = [1.5031778812408447f32, 3.273881435394287, 5.080260276794434, 6.548157691955566];
    assert_eq!(sample_betas(&cfg), expected);
}

#[test]
fn channel_seed_7_half_loss() {
    let mut ch = SimulatedChannel::new(0.5, 7).unwrap();
    let delivered = (0..1000).filter(|_| ch.transmit(b"x").is_delivered()).count();
    assert_eq!(delivered, 516);
    assert_eq!(ch.delivered, 516);
    assert_eq!(ch.sent, 1000);
}

#[test]
fn gaussian_noise_deltas() {
    let expected = [
        -8.07642936706543e-05f32,
        -0.0069422125816345215,
        -0.009486854076385498,
        -0.1818099021911621,
        -0.06542173027992249,
        0.19995033740997314,
    ];
    let images = Tensor::full(&[1, 1, 4, 4], 0.5f32);
    let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 9).unwrap();
    let out = corrupt(&images, &spec);
    for (i, &e) in expected.iter().enumerate() {
        let d = out.data()[i] - 0.5;
        assert!((d - e).abs() < 1e-6, "pixel {i}: {d} vs {e}");
    }
}
