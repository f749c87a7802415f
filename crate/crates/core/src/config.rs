//! Flat `key = value` configuration text with `#` comments.

use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_flat(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", i + 1), format!("expected `key = value`, found `{line}`"))
        })?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::config(format!("line {}", i + 1), format!("bad key `{key}`")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::config(
                key,
                format!("set twice (lines {} and {})", prev.line, i + 1),
            ));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {expected}, got `{value}`")))
}

/// Hex SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Comma-separated `f64` list written with round-trip precision.
pub fn format_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_floats(key: &str, text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|v| parse_value(key, v.trim(), "a number"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let e = parse_flat("# header\n\nbatch_size = 256  # desk\nmethod=euler\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].key.as_str(), e[0].value.as_str(), e[0].line), ("batch_size", "256", 3));
        assert_eq!(e[1].value, "euler");
    }

    #[test]
    fn diagnostics_name_the_key_or_line() {
        let err = parse_flat("a = 1\nnonsense\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_flat("a = 1\na = 2\n").unwrap_err().to_string();
        assert!(err.contains("`a`"), "{err}");
        let err = parse_value::<usize>("batch_size", "-3", "a positive integer").unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
    }

    #[test]
    fn float_lists_round_trip() {
        let v = [0.1, -2.5e-300, 1.0 / 3.0, 63.0];
        assert_eq!(parse_floats("k", &format_floats(&v)).unwrap(), v);
        assert_eq!(hash_text("abc").len(), 64);
    }
}
