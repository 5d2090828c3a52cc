use alloc::string::String;

/// Errors surfaced by quadrature, family, and update operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Requested a 1D rule or sparse-grid level outside the embedded tables.
    #[error("unsupported quadrature level {level} for dimension {dim}")]
    UnsupportedLevel { level: u32, dim: usize },

    /// A node coordinate sits too close to the boundary of (-1, 1) for the
    /// inverse error function to be representable.
    #[error("node {index} has coordinate {value} too close to +/-1 for erfinv")]
    TransformOverflow { index: usize, value: f64 },

    /// The integrand returned NaN or +/-inf at a quadrature node.
    #[error("integrand is not finite at node {index}")]
    NonFiniteIntegrand { index: usize },

    /// Every quadrature exponent underflowed, or the signed quadrature sum of
    /// a positive quantity came out nonpositive.
    #[error("degenerate density: {context}")]
    DegenerateDensity { context: String },

    /// A matrix required to be symmetric positive definite was not.
    #[error("matrix is not positive definite ({context})")]
    NotSpd { context: String },

    /// First/second moments do not define a positive definite covariance.
    #[error("moment vector does not yield a positive definite covariance")]
    MomentDegeneracy,

    /// The likelihood carries no mass where the prior does; the evidence
    /// underflowed to zero.
    #[error("measurement inconsistent with prior: evidence underflowed")]
    MeasurementInconsistency,

    /// The measurement function is singular at the evaluation point.
    #[error("measurement function singular at the requested point")]
    SingularMeasurement,

    /// The densities inside a divergence are numerically disjoint.
    #[error("divergence overflow: densities are numerically disjoint")]
    DivergenceOverflow,

    /// A conjugate update produced natural parameters with no normalizable
    /// density.
    #[error("conjugate update leaves the natural parameter space: {context}")]
    InvalidPosterior { context: String },

    /// Particle importance weights all underflowed.
    #[error("all particle weights underflowed")]
    DegenerateParticles,

    /// Two density grids with different regions or resolutions were combined.
    #[error("density grids have mismatched region or resolution")]
    GridMismatch,

    /// The integration region misses a non-negligible part of the density.
    #[error("region too small: boundary ring holds {boundary_mass:.3e} of the mass")]
    RegionTooSmall { boundary_mass: f64 },

    /// The innovation covariance of a sigma-point update was singular.
    #[error("baseline update failed: {context}")]
    BaselineFailure { context: String },

    /// The adaptive step-size controller stalled or exhausted its budget.
    #[error("ode solver failure: {context}")]
    SolverFailure { context: String },

    /// Generic precondition violation on user-supplied arguments.
    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },
}

impl Error {
    pub(crate) fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context: context.into(),
        }
    }
}
