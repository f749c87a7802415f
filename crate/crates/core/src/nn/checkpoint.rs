//! Plain-text checkpoint format.
//!
//! ```text
//! sdegan-checkpoint
//! format_version = 1
//! config_hash = 3f9a...
//! meta <key> = <value>
//! param <dotted.name> <d0,d1,...>
//! <row-major values, 17 significant digits, space separated>
//! ```
//!
//! Values are written with `{:.16e}`, which round-trips every `f64`
//! exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "sdegan-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub params: Vec<NamedParam>,
}

fn bad(field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.into(),
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            ..Default::default()
        }
    }

    pub fn param(&self, name: &str) -> Result<&NamedParam> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| bad(name, "missing parameter"))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("meta {key}"), "missing"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "format_version = {}", self.version).unwrap();
        writeln!(s, "config_hash = {}", self.config_hash).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} = {v}").unwrap();
        }
        for p in &self.params {
            let dims: Vec<String> = p.shape.iter().map(usize::to_string).collect();
            writeln!(s, "param {} {}", p.name, dims.join(",")).unwrap();
            let vals: Vec<String> = p.values.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("header", format!("first line must be `{MAGIC}`")));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(key, "missing"))?;
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(key, format!("malformed line `{line}`")))?;
            if k != key {
                return Err(bad(key, format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.to_string())
        };
        let version: u32 = header("format_version")?
            .parse()
            .map_err(|_| bad("format_version", "not an integer"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(
                "format_version",
                format!("unsupported version {version}"),
            ));
        }
        let config_hash = header("config_hash")?;
        let mut ck = Checkpoint::new(config_hash);
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once(" = ")
                    .ok_or_else(|| bad("meta", format!("malformed line `{line}`")))?;
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                let mut parts = rest.split(' ');
                let name = parts.next().unwrap_or_default().to_string();
                let dims = parts.next().ok_or_else(|| bad(&name, "missing shape"))?;
                let shape = if dims.is_empty() {
                    Vec::new()
                } else {
                    dims.split(',')
                        .map(|d| d.parse::<usize>().map_err(|_| bad(&name, "bad shape")))
                        .collect::<Result<Vec<_>>>()?
                };
                let body = lines.next().ok_or_else(|| bad(&name, "missing values"))?;
                let values = if body.is_empty() {
                    Vec::new()
                } else {
                    body.split(' ')
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|_| bad(&name, format!("bad value `{v}`")))
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                if values.len() != shape.iter().product::<usize>() {
                    return Err(bad(
                        &name,
                        format!("shape {shape:?} but {} values", values.len()),
                    ));
                }
                ck.params.push(NamedParam {
                    name,
                    shape,
                    values,
                });
            } else {
                return Err(bad("body", format!("unrecognised line `{line}`")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 1..20)) {
            let values: Vec<f64> = bits
                .iter()
                .map(|b| f64::from_bits(*b))
                .filter(|v| !v.is_nan())
                .collect();
            let mut ck = Checkpoint::new("abc123");
            ck.meta.insert("norm.mean".into(), "0.5".into());
            ck.params.push(NamedParam { name: "gen.beta".into(), shape: vec![values.len()], values: values.clone() });
            let back = Checkpoint::parse(&ck.to_text()).unwrap();
            prop_assert_eq!(back.params[0].values.len(), values.len());
            for (a, b) in back.params[0].values.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn corrupt_files_name_the_field() {
        let mut ck = Checkpoint::new("h");
        ck.params.push(NamedParam {
            name: "disc.m".into(),
            shape: vec![2],
            values: vec![1.0, 2.0],
        });
        let text = ck.to_text().replace("2.0000000000000000e0", "oops");
        match Checkpoint::parse(&text) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "disc.m"),
            other => panic!("{other:?}"),
        }
        assert!(Checkpoint::parse("nope").is_err());
        let short = ck.to_text().replace("param disc.m 2", "param disc.m 3");
        assert!(Checkpoint::parse(&short).is_err());
    }
}
