use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("obstacles {first} and {second} overlap (center distance {distance:.6} <= {limit:.6})")]
    Overlap {
        first: usize,
        second: usize,
        distance: f64,
        limit: f64,
    },

    #[error("obstacle {index} (radius {radius}) reaches the opposite wall (height {height})")]
    WallOverlap { index: usize, radius: f64, height: f64 },

    #[error("obstacle {index} extends outside the channel: {detail}")]
    OutOfDomain { index: usize, detail: String },

    #[error("mesh quality: minimum angle {min_angle_deg:.3} deg below {limit_deg} deg")]
    MeshQuality { min_angle_deg: f64, limit_deg: f64 },

    #[error("triangulation failed: {0}")]
    Triangulation(String),

    #[error("mesh file format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("singular saddle-point system: {0}")]
    SingularSystem(String),

    #[error("linear solve failed: {message} (relative residual {residual:.3e})")]
    LinearSolve { message: String, residual: f64 },

    #[error("mesh mismatch: field built for mesh {expected}, got mesh {found}")]
    MeshMismatch { expected: String, found: String },

    #[error("Picard iteration did not converge after {iterations} iterations (last update {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("stage {stage}: admissible set is empty (threshold {threshold:.6e}, best J {best:.6e}); increase gamma or the sample count")]
    EmptyAdmissible {
        stage: usize,
        threshold: f64,
        best: f64,
    },

    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: String, command: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Overlap { .. }
            | Error::WallOverlap { .. }
            | Error::OutOfDomain { .. }
            | Error::MeshQuality { .. }
            | Error::Triangulation(_)
            | Error::Format { .. } => 3,
            Error::SingularSystem(_)
            | Error::LinearSolve { .. }
            | Error::MeshMismatch { .. }
            | Error::NonConvergence { .. } => 4,
            Error::GridMismatch(_) | Error::EmptyAdmissible { .. } => 5,
            Error::MissingArtifact { .. } | Error::Io(_) => 6,
        }
    }
}
