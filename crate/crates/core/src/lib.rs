//! Numerical approximation of vectorial absolute minimisers of the supremal
//! functional `E_inf(u, O) = ||Du||_{L^inf(O)}`.
//!
//! The vectorial `p`-Laplace system is discretised with continuous P1
//! elements and solved by damped Newton along an increasing ladder of
//! exponents. Solved fields are then analysed through the concentration
//! measures `sigma_p^O` with density `|DU|^{p-2}` on a subregion `O`.

pub mod boundary_data;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod measures;
pub mod mesh;
pub mod solver;
pub mod sparse;

pub use boundary_data::{catalog_lookup, BoundaryDatum};
pub use error::{Error, Result};
pub use fem::{FEField, PContext};
pub use mesh::{build_annulus_mesh, build_square_mesh, resolve_subdomain, Mesh, RegionSpec, Subdomain};
pub use solver::{solve_p_laplace, solve_watching, ContinuationPlan, NewtonOptions, SolveReport};
