//! Conformal calibration of certified lower/upper bounds on optimization
//! objectives, with an economic-dispatch benchmark to exercise it.

// `!(a >= b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod dataset;
pub mod dispatch;
pub mod error;
pub mod eval;
pub mod interval;
pub mod methods;
pub mod ncp;
pub mod pipeline;
pub mod proxies;
pub mod quantile;

pub use error::{Error, Result};
pub use interval::{strengthen, BoundedSample, Bounds, Interval};
pub use methods::{fit_method, method_predict, FittedMethod, MethodConfig, MethodKind};
pub use ncp::{calibrate, selection_coverage_bound, CalibratedModel, NestedFamily};
pub use quantile::empirical_quantile;
