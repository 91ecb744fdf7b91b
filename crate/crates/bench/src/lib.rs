//! Benchmark fixtures shared by the criterion targets.

use gemd::scqp::uniform_start;
use gemd::{InstanceSpec, ScqpInstance, SimplexVector};

/// A default-conditioned instance with `K = n/10`.
pub fn instance(n: usize) -> ScqpInstance {
    InstanceSpec {
        n,
        k: (n / 10).max(1),
        seed: 7,
        ..Default::default()
    }
    .build()
    .expect("benchmark instance")
}

/// Uniform start and its clean gradient.
pub fn start(inst: &ScqpInstance) -> (SimplexVector, Vec<f64>) {
    let w = uniform_start(inst);
    let g = inst.gradient(w.as_slice()).expect("gradient");
    (w, g)
}
