use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("data error at record {index}: {msg}")]
    Data { index: usize, msg: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Parses TOML into `T`; failures become config errors naming the offending key.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let field = match msg.split('`').nth(1) {
            Some(f) => f.to_string(),
            None => e.span().and_then(|r| key_at(text, r.start)).unwrap_or_else(|| "config".into()),
        };
        Error::Config { field, msg }
    })
}

/// Key of the `key = value` line containing byte offset `pos`.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let start = text.get(..pos)?.rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    Some(key.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    struct Demo {
        lr: f64,
        epochs: usize,
    }

    fn field_of(text: &str) -> String {
        match parse_toml::<Demo>(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn names_unknown_missing_and_mistyped_fields() {
        assert_eq!(field_of("lr = 0.1\nepochs = 3\nbogus = 1\n"), "bogus");
        assert_eq!(field_of("lr = 0.1\n"), "epochs");
        assert_eq!(field_of("lr = 0.1\nepochs = \"x\"\n"), "epochs");
    }
}
