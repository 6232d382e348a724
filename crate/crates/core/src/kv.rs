//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored; keys are case-sensitive and may
//! use `-` or `_` interchangeably (normalised to `_`).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap(BTreeMap<String, String>);

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::Value {
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Fail on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), KvError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(KvError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

/// Overwrite `slot` when `key` is present.
pub fn set<T: FromStr>(map: &KvMap, key: &str, slot: &mut T) -> Result<(), KvError> {
    if let Some(v) = map.get(key)? {
        *slot = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let m = KvMap::parse("# channel\nsi-window = 80 # ms\n\nseed=7\n").unwrap();
        assert_eq!(m.get::<f64>("si_window").unwrap(), Some(80.0));
        assert_eq!(m.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(m.get::<u64>("missing").unwrap(), None);
    }

    #[test]
    fn errors() {
        assert!(matches!(KvMap::parse("novalue"), Err(KvError::Syntax { line: 1 })));
        let m = KvMap::parse("seed = x").unwrap();
        assert!(matches!(m.get::<u64>("seed"), Err(KvError::Value { .. })));
        assert!(matches!(m.reject_unknown(&["rate"]), Err(KvError::UnknownKey(_))));
    }
}
