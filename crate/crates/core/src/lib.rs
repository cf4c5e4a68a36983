//! Design-based estimation of finite-population totals with auxiliary
//! information: Horvitz-Thompson totals, GREG calibration, and the
//! minimum-variance regression estimator with plug-in covariance estimates.
//!
//! ```
//! use recal::{design::{Design, DesignSpec}, estimators, population::Population};
//!
//! let pop = Population::from_columns(
//!     &[2.0, 4.0, 6.0, 8.0],
//!     &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
//! )?;
//! let design = Design::new(DesignSpec::Srswor { n: 2 }, &pop)?;
//! let sample = recal::design::Sample::new(vec![0, 3]);
//! let est = estimators::greg_estimate(&sample, &design, &pop, None, pop.t_x())?;
//! assert!((est - 20.0).abs() < 1e-12);
//! # Ok::<(), recal::Error>(())
//! ```

pub mod covariance;
pub mod design;
pub mod error;
pub mod estimators;
pub mod montecarlo;
pub mod numeric;
pub mod population;

pub use error::{Error, Result};
