use thiserror::Error;

/// Errors produced anywhere in the simulator, optimizers and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("route infeasible: {0}")]
    RouteInfeasible(String),
    #[error("no adversary route passes within {radius} m of the ego route")]
    ProximityUnmet { radius: f64 },
    #[error("schema violation at {path}: {msg}")]
    SchemaViolation { path: String, msg: String },
    #[error("invalid value for {field}: {msg}")]
    InvalidValue { field: &'static str, msg: String },
    #[error("cost requires at least one adversary")]
    NoAdversaries,
    #[error("rollout was not recorded; gradient tape missing")]
    TapeMissing,
    #[error("ego agent does not expose a differentiable policy")]
    NotDifferentiableEgo,
    #[error("route exhausted")]
    RouteExhausted,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("method {method} is incompatible with this ego agent")]
    MethodIncompatible { method: String },
    #[error("degenerate map geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient routes: {0}")]
    InsufficientRoutes(String),
    #[error("need at least {needed} scenarios, got {got}")]
    TooFewScenarios { needed: usize, got: usize },
    #[error("point ({0}, {1}) is outside the map grid")]
    OutOfExtent(f64, f64),
    #[error("unknown map id {0}")]
    UnknownMap(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
