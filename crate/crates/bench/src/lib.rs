//! Fixtures shared by the criterion benches.

use anchormech::evaluation::synth_instance;
use anchormech::{Instance, SynthSpec};

/// The default desk-scale instance used across benches.
pub fn fixture(seed: u64) -> Instance {
    synth_instance(&SynthSpec::default(), seed).expect("default synthetic instance")
}
