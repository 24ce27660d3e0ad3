//! Geodesic tomography of symmetric 2-tensor fields on simple Riemannian disks.

pub mod boundary;
pub mod cli;
pub mod config;
pub mod decomp;
pub mod error;
pub mod gauge;
pub mod geodesic;
pub mod hyperdual;
pub mod inversion;
pub mod linalg;
pub mod metric;
pub mod norms;
pub mod sheet;
pub mod simplicity;
pub mod synth;
pub mod tensorfield;
pub mod xray;

pub use error::{Error, Result};
pub use metric::{Domain, MetricSpec, Point, DIM};
