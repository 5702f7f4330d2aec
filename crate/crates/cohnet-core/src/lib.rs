//! Physics-aware forest-height estimation toolkit: InSAR coherence
//! estimation, RVoG modeling and inversion, a neural surrogate of the
//! physical inversion, and end-to-end training of an optimized volume
//! decorrelation network through the frozen surrogate, validated on a
//! built-in synthetic scene simulator.

pub mod coherence;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod rvog;
pub mod sim;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};

/// Initialize the global worker pool from the COHNET_THREADS environment
/// variable (0 or unset = automatic). Safe to call more than once.
pub fn init_threads() {
    if let Ok(v) = std::env::var("COHNET_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
