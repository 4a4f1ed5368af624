//! Curbside stop-position control on a signalized road segment.
//!
//! Traffic is simulated with a Lax-Hopf solver for the kinematic wave model;
//! vehicles stopping at the curb become temporary bottlenecks. Stop positions
//! are optimized over a rolling horizon, either directly against the
//! simulation or against a trained surrogate of the objective.

pub mod ctm;
pub mod error;
pub mod evaluation;
pub mod fd;
pub mod hybrid;
pub mod io;
pub mod laxhopf;
pub mod mpc;
pub mod optimizer;
pub mod presets;
pub mod problem;
pub mod sampling;
pub mod scenario;
pub mod surrogates;

pub use error::{Error, Result};
pub use fd::FundamentalDiagram;
pub use hybrid::{simulate, SimOutput};
pub use laxhopf::{solve, ConditionSet, CountSurface, Grid, ValueCondition};
pub use problem::{evaluate, ControlSolution};

pub use scenario::{Scenario, Signal, StopVehicle, Weights};

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Uniform index in `0..n`, drawn as `u64` so the stream is the same on
/// 32-bit targets (wasm) as on 64-bit ones.
pub(crate) fn index<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

/// Order-preserving map that runs in parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
