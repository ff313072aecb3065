use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("density has non-positive mass ({0})")]
    NonPositiveMass(f64),

    #[error(
        "density is not bounded below on the interior of its support (min {min}, floor {floor})"
    )]
    NotBoundedBelow { min: f64, floor: f64 },

    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),

    #[error("infeasible: h = {h} <= mass that must cross = {omega_mass}")]
    Infeasible { h: f64, omega_mass: f64 },

    #[error("mass crosses the toll in both directions")]
    BidirectionalCrossing,

    #[error("flux denominator vanishes at x = {0} (toll not decreasing)")]
    DegenerateDenominator(f64),

    #[error("toll time reaches 1 at x = {0}; transport cannot finish in time")]
    TollOverrun(f64),

    #[error("velocity left its admissible range at x = {x} (v = {v})")]
    BlowUp { x: f64, v: f64 },

    #[error("integration reached the toll point (x = {0})")]
    SingularToll(f64),

    #[error("saturated curve does not resolve its departure points before x = {0}")]
    NoDeparture(f64),

    #[error("interval cap of {0} reached and all flux-bound reductions exhausted")]
    CapExceeded(usize),

    #[error("discrete problem infeasible: (n - 1) m / h = {0} >= 1")]
    InfeasibleDiscrete(f64),

    #[error("radial profile integrates to {0}, expected 1")]
    NotNormalized(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
