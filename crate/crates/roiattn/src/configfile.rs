//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are exactly [`roiattn_core::config::KEYS`].

use std::path::{Path, PathBuf};

use roiattn_core::config::{DetectionConfig, KEYS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line_no}: {msg}\n  | {line}")]
    Line {
        origin: String,
        line_no: usize,
        line: String,
        msg: String,
    },
    #[error("{origin}: {msg}")]
    Invalid { origin: String, msg: String },
}

/// Applies every assignment in `text` on top of `cfg`. `origin` names the
/// source in error messages.
pub fn apply_text(cfg: &mut DetectionConfig, text: &str, origin: &str) -> Result<(), ConfigFileError> {
    let mut seen: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |msg: String| ConfigFileError::Line {
            origin: origin.to_string(),
            line_no: i + 1,
            line: raw.to_string(),
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail("expected `key = value`".to_string()))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(fail(format!("unknown key {key:?}")));
        }
        if seen.contains(&key) {
            return Err(fail(format!("duplicate key {key:?}")));
        }
        seen.push(key);
        cfg.set(key, value.trim()).map_err(|e| fail(e.to_string()))?;
    }
    Ok(())
}

/// Parses a whole file over the defaults; does not validate.
pub fn parse(text: &str, origin: &str) -> Result<DetectionConfig, ConfigFileError> {
    let mut cfg = DetectionConfig::default();
    apply_text(&mut cfg, text, origin)?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<DetectionConfig, ConfigFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, &path.display().to_string())
}

pub fn validate(cfg: &DetectionConfig, origin: &str) -> Result<(), ConfigFileError> {
    cfg.validate().map_err(|e| ConfigFileError::Invalid {
        origin: origin.to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_canonical_text() {
        let mut cfg = DetectionConfig::default();
        cfg.d = 40;
        cfg.lr_decay_epochs = vec![3, 5];
        cfg.use_pos_encoding = false;
        let back = parse(&cfg.to_text(), "t").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = parse("# header\n\n d = 20  # memory\ndepth=3\n", "t").unwrap();
        assert_eq!((cfg.d, cfg.depth), (20, 3));
    }

    #[test]
    fn error_quotes_line() {
        let err = parse("d = 10\nbogus = 1\n", "f.cfg").unwrap_err().to_string();
        assert!(err.contains("f.cfg:2"), "{err}");
        assert!(err.contains("bogus = 1"), "{err}");
        let err = parse("d = ten\n", "f.cfg").unwrap_err().to_string();
        assert!(err.contains("d = ten"), "{err}");
        let err = parse("just words\n", "f.cfg").unwrap_err().to_string();
        assert!(err.contains("just words"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse("d = 10\nd = 20\n", "t").is_err());
    }
}
