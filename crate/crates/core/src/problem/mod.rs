//! Control-problem description and assumption probes.

pub mod levy;
pub mod model;
pub mod spec;
pub mod validate;

pub use levy::{aggregate_v, levy_integral, Atom, JumpWeight, LevyMeasure};
pub use model::{
    BsJumpParams, Coefficients, Family, FnCoefficients, Lq1dParams, TrigParams, ZeroParams,
};
pub use spec::{ProblemSpec, ProblemSpecBuilder};
pub use validate::{validate_assumptions, AssumptionCheck, ValidationConfig, ValidationReport};
