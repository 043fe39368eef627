use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown class `{0}` referenced by prior rule")]
    UnknownClass(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("domain {0} has no valid patch center")]
    EmptyDomain(u8),
    #[error("undeclared local domain {0}")]
    UndeclaredDomain(String),
    #[error("training diverged at step {step}: {what} non-finite for {consecutive} consecutive steps")]
    Diverged { step: usize, what: &'static str, consecutive: usize },
    #[error("input {height}x{width} smaller than generator minimum {min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tile plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("overlap {overlap} must be smaller than tile size {size}")]
    BadOverlap { overlap: usize, size: usize },
    #[error("interpolation requested but the bundle has no mask VAE")]
    MissingVae,
    #[error("empty input set: {0}")]
    EmptySet(&'static str),
    #[error("no backend registered for metric `{0}`")]
    BackendMissing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint archive: {0}")]
    Archive(String),
    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] localdom_nn::NnError),
}
