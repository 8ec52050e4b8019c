//! Stochastic Lagrangian machinery for incompressible flow on the flat torus
//! and the unit sphere: explicit vector-field families, verification of the
//! structural conditions behind the Lie-derivative decomposition of the Hodge
//! Laplacian, Stratonovich flow integration with exact discrete Jacobian
//! transport, divergence-free Fourier analysis on T², and Monte Carlo
//! velocity reconstruction through the weak pairing formula.

pub mod error;
pub mod families;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use families::{FamilySpec, FieldFamily, SkewMatrix};
pub use geometry::{AnalyticVectorField, Manifold, Point, TangentVector};
pub use quad::Quadrature;
