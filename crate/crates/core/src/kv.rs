//! Line-oriented `key = value` documents.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! consumers take keys they know and must reject the rest via
//! [`KvDoc::finish`], so a misspelled hyperparameter is an error rather than a
//! silently ignored line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::ConfigKey {
                    key: trimmed.to_string(),
                    line,
                    detail: "expected `key = value`".into(),
                });
            };
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (v.trim().to_string(), line)).is_some() {
                return Err(Error::ConfigKey {
                    key,
                    line,
                    detail: "duplicate key".into(),
                });
            }
        }
        Ok(KvDoc { entries })
    }

    /// Removes and parses `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((value, line)) = self.entries.remove(key) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|e: T::Err| Error::ConfigKey {
            key: key.to_string(),
            line,
            detail: format!("cannot parse `{value}`: {e}"),
        })
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Removes every key starting with `prefix` and returns them as a new document.
    pub fn split_prefix(&mut self, prefix: &str) -> KvDoc {
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let mut out = KvDoc::default();
        for k in keys {
            let v = self.entries.remove(&k).expect("listed");
            out.entries.insert(k[prefix.len()..].to_string(), v);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            None => Ok(()),
            Some((key, (_, line))) => Err(Error::ConfigKey {
                key,
                line,
                detail: "unknown key".into(),
            }),
        }
    }
}

/// Accumulates `key = value` lines in insertion order.
#[derive(Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let mut d = KvDoc::parse("# comment\nlr = 0.5\n\nepochs=3\ntypo = 1\n").unwrap();
        assert_eq!(d.take::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(d.take_or::<usize>("epochs", 0).unwrap(), 3);
        assert_eq!(d.take::<usize>("missing").unwrap(), None);
        let err = d.finish().unwrap_err().to_string();
        assert!(err.contains("typo") && err.contains("line 5"), "{err}");
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let mut d = KvDoc::parse("\nbatch_size = four\n").unwrap();
        let err = d.take::<usize>("batch_size").unwrap_err().to_string();
        assert!(err.contains("batch_size") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert!(KvDoc::parse("a = 1\na = 2").is_err());
        assert!(KvDoc::parse("just words").is_err());
    }
}
