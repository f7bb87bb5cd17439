use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embed: empty sequence")]
    EmptySequence,

    #[error("embed: degenerate embedding (no n-gram mass survives hashing)")]
    DegenerateEmbedding,

    #[error("embed: dimension mismatch ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cluster: K > n (K = {k}, n = {n})")]
    TooManyClusters { k: usize, n: usize },

    #[error("cluster: K must be at least 1")]
    ZeroClusters,

    #[error("cluster: degenerate centroid for cluster {cluster} (members cancel out)")]
    DegenerateCentroid { cluster: usize },

    #[error("cluster: invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("lm: out of vocabulary symbol {symbol:?}")]
    OutOfVocabulary { symbol: char },

    #[error("lm: diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("lm: document {index} too short ({len} symbols, need more than {need})")]
    DocumentTooShort { index: usize, len: usize, need: usize },

    #[error("lm: shape mismatch for {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },

    #[error("router: tau too large for K (tau = {tau}, K = {k})")]
    TauTooLarge { tau: f64, k: usize },

    #[error("router: expert count {n} out of range 1..={k}")]
    ExpertCountOutOfRange { n: usize, k: usize },

    #[error("router: no uncertainty reduction among candidate experts")]
    NoUncertaintyReduction,

    #[error("merge: missing adapter for expert {0}")]
    MissingAdapter(usize),

    #[error("store: corrupt adapter: {0}")]
    CorruptAdapter(String),

    #[error("store: base fingerprint mismatch in {path}")]
    FingerprintMismatch { path: PathBuf },

    #[error("store: missing adapter file for expert {id} ({path})")]
    MissingAdapterFile { id: usize, path: PathBuf },

    #[error("store: malformed catalog: {0}")]
    Catalog(String),

    #[error("eval: cluster {cluster} too small for holdout split ({size} documents)")]
    ClusterTooSmall { cluster: usize, size: usize },

    #[error("eval: proposition precondition violated (D' shares no document with the nearest-neighbour set)")]
    PropositionPrecondition,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
