//! Shared fixtures for the criterion benches.

use dsre_core::environment::{EnvironmentSpec, RescalePolicy, TorusEnvironment};
use dsre_core::stream::FieldLaw;

/// The non-reversible benchmark environment used across the benches.
pub fn benchmark_env(n: usize, seed: u64) -> TorusEnvironment {
    TorusEnvironment::generate(&EnvironmentSpec {
        d: 2,
        n,
        seed,
        s: FieldLaw::Constant { value: 1.0 },
        h: FieldLaw::IidUniform { lo: -1.0, hi: 1.0 },
        rescale: RescalePolicy::ShrinkH { margin: 0.1 },
        eps: 1.0,
    })
    .expect("benchmark spec is valid")
}
