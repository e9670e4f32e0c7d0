use thiserror::Error;

/// Errors raised by the observer, the simulator and the run orchestration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Horizontal speed too small for the course angle to be defined.
    #[error("degenerate course: horizontal speed {horizontal_speed} m/s is below the floor")]
    DegenerateCourse { horizontal_speed: f64 },

    /// The non-ballistic manoeuvre condition does not hold.
    #[error("degenerate manoeuvre: roll denominator {denominator} does not exceed the floor")]
    ManoeuvreDegenerate { denominator: f64 },

    /// Lateral-acceleration roll with a vanishing vertical component.
    #[error("degenerate accelerometer reading: a_z = 0")]
    DegenerateAcceleration,

    #[error("underdetermined fit: window length {n} < 3")]
    Underdetermined { n: usize },

    #[error("ill-conditioned least-squares design")]
    IllConditioned,

    #[error("insufficient data: have {have} samples, need {need}")]
    InsufficientData { have: usize, need: usize },

    /// A matrix that must be symmetric positive definite is not.
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    /// Integration step too large to preserve positive definiteness.
    #[error("step size {dt} s too large: information matrix lost positive definiteness")]
    StepSize { dt: f64 },

    #[error("zero quaternion has no attitude")]
    ZeroQuaternion,

    #[error("value {value} outside the admissible range {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("track geometry: {0}")]
    Geometry(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
