use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("network is disjoint: {unrouted} node(s) have no route to the sink")]
    Disjoint { unrouted: usize },
    #[error("fixture `{name}` failed:\n{diff}")]
    Fixture { name: String, diff: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
