//! Numerical laboratory for lightlike geodesics on Lorentzian manifolds with
//! timelike boundary: null bicharacteristic flow, lens relations, light-ray
//! transforms, geometric-optics amplitudes, Dirichlet-to-Neumann symbol
//! synthesis and the recovery pipelines built on top of them.

pub mod boundary_frame;
pub mod dn_synth;
pub mod error;
pub mod fields;
pub mod gauge;
pub mod geo_optics;
pub mod geometry;
pub mod lens;
pub mod minkowski_demo;
pub mod null_flow;
pub mod ode;
pub mod output;
pub mod quad;
pub mod ray_transforms;
pub mod recovery;
pub mod registry;
pub mod scenario;
pub mod selftest;
pub mod tol;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Version string embedded in every artifact.
pub const TOOL_VERSION: &str = concat!("lightray ", env!("CARGO_PKG_VERSION"));

/// Sizes the global worker pool; `0` keeps the default.
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(format!("--threads: {e}")))
}
