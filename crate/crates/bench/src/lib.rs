//! Shared fixtures for the criterion benchmarks.

use dpleak::data::{synth_dataset, Dataset, SynthKind};
use dpleak::{Activation, MlpSpec, Network};

/// The desk-scale digits dataset used by the experiment grid.
pub fn digits(n: usize) -> Dataset {
    synth_dataset(SynthKind::Digits8x8, n, 1).expect("synthetic digits")
}

/// A network shaped like the desk-scale discriminator.
pub fn discriminator_like() -> Network {
    let spec = MlpSpec::uniform(vec![74, 64, 64, 1], Activation::Tanh).expect("valid spec");
    Network::init(spec, 3)
}
