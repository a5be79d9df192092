//! Dynamic optimal transport on the unit square with a preferential path.
//!
//! Mass moves through the bulk at unit cost and along a polyline curve at a
//! cost scaled by `alpha1`, and can switch between the two at a cost scaled
//! by `alpha2`. [`transport`] solves the problem for a fixed curve with an
//! augmented Lagrangian iteration on space-time prisms, [`pathopt`] moves
//! the curve to lower the transport cost plus the [`curvereg`] penalty, and
//! [`oracle`] provides exact static costs for comparison.
//!
//! ```
//! use prefpath::geometry::{Point, Polyline};
//! use prefpath::transport::{solve_fixed_curve, AlgConfig, Bump, DataSpec, EndpointSpec};
//!
//! let curve = Polyline::new(vec![Point::new(0.2, 0.5), Point::new(0.8, 0.5)])?;
//! let data = DataSpec {
//!     initial: EndpointSpec::joint(vec![Bump::new(0.25, 0.5, 0.1)]),
//!     terminal: EndpointSpec::joint(vec![Bump::new(0.75, 0.5, 0.1)]),
//! };
//! let config = AlgConfig { max_iter: 50, ..AlgConfig::new(0.1, 0.1) };
//! let solution = solve_fixed_curve(&curve, 0.2, 4, &data, &config)?;
//! assert!(solution.report.action > 0.0);
//! # Ok::<(), prefpath::Error>(())
//! ```

pub mod curvereg;
pub mod dualproj;
pub mod error;
pub mod femspace;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod pathopt;
pub mod transport;

pub use error::{Error, ErrorClass, Result};
