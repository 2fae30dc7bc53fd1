mod common;

use adjscc::codec::ArchSpec;
use common::chain_gradient_error;

#[test]
fn noiseless_chain_gradients_tiny_adaptive() {
    for seed in 1..=3 {
        let arch = ArchSpec::preset("tiny", 2, true).unwrap();
        let (worst, checked, at) = chain_gradient_error(arch, 8, seed, 24);
        assert!(checked > 1000);
        assert!(worst < 1e-3, "seed {seed}: worst relative error {worst} at {at}");
    }
}

#[test]
fn noiseless_chain_gradients_tiny_baseline() {
    let arch = ArchSpec::preset("tiny", 4, false).unwrap();
    let (worst, _, at) = chain_gradient_error(arch, 8, 4, 24);
    assert!(worst < 1e-3, "worst relative error {worst} at {at}");
}

#[test]
fn noiseless_chain_gradients_every_entry_narrow() {
    let arch = ArchSpec::five_module("narrow", 6, 2, true, 5);
    let (worst, checked, at) = chain_gradient_error(arch, 16, 5, usize::MAX);
    assert!(checked > 5000);
    assert!(worst < 1e-3, "worst relative error {worst} at {at}");
}
