use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("stage `{stage}` needs {path}, which does not exist; run `{producer}` first")]
    MissingArtifact { stage: String, path: PathBuf, producer: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] pnoc_core::Error),
}

impl Error {
    /// Process exit status: 2 configuration, 3 input data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Parse { .. } => 3,
            Error::Stage { source, .. } => match source.as_ref() {
                Error::Config(_) => 2,
                Error::Data { .. } | Error::Parse { .. } => 3,
                _ => 4,
            },
            Error::MissingArtifact { .. } | Error::Io { .. } | Error::Core(_) => 4,
        }
    }

    pub fn data(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Data { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Stage { .. } | Error::MissingArtifact { .. }) => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}
