//! `key=value` text files: one pair per line, `#` starts a comment line,
//! blank lines ignored. Used for synthesis configs, device profiles, fit
//! sidecars, agreement reports and the CLI run config.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("line {line}: invalid value for `{key}`: `{value}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key/value pairs, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, Entry>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = KvMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(KvError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(KvError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            }
            if map.entries.contains_key(&key) {
                return Err(KvError::Duplicate { line, key });
            }
            map.entries.insert(
                key,
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|e| KvError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(
            key.into(),
            Entry {
                value: value.to_string(),
                line: 0,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Rejects any key not listed in `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self
            .entries
            .iter()
            .find(|(k, _)| !allowed.contains(&k.as_str()))
        {
            Some((key, e)) => Err(KvError::UnknownKey {
                line: e.line,
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| KvError::BadValue {
                line: e.line,
                key: key.to_string(),
                value: e.value.clone(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, KvError> {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| KvError::BadValue {
                    line: e.line,
                    key: key.to_string(),
                    value: e.value.clone(),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// Line number the key was read from (0 for programmatic entries).
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Copies every entry of `other` over `self`.
    pub fn merge_from(&mut self, other: &KvMap) {
        for (k, e) in &other.entries {
            self.entries.insert(k.clone(), e.clone());
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(&e.value);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let m = KvMap::parse("# header\n\nseed = 4\nnoise_v=0.05\n").unwrap();
        assert_eq!(m.require::<u64>("seed").unwrap(), 4);
        assert_eq!(m.require::<f64>("noise_v").unwrap(), 0.05);
        assert_eq!(m.line_of("noise_v"), 4);
    }

    #[test]
    fn rejects_bad_lines_and_unknown_keys() {
        assert!(matches!(
            KvMap::parse("a=1\nnonsense\n"),
            Err(KvError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            KvMap::parse("a=1\na=2\n"),
            Err(KvError::Duplicate { line: 2, .. })
        ));
        let m = KvMap::parse("a=1\nb=2\n").unwrap();
        assert!(matches!(
            m.ensure_known(&["a"]),
            Err(KvError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(m.get::<f64>("zz"), Ok(None)));
        let bad = KvMap::parse("x=abc").unwrap();
        assert!(matches!(bad.get::<f64>("x"), Err(KvError::BadValue { .. })));
    }

    #[test]
    fn lists_and_text_round_trip() {
        let m = KvMap::parse("t=1.63, 3.27,5.16\n").unwrap();
        assert_eq!(
            m.get_list::<f64>("t").unwrap().unwrap(),
            vec![1.63, 3.27, 5.16]
        );
        let again = KvMap::parse(&m.to_text()).unwrap();
        assert_eq!(again.raw("t"), m.raw("t"));
    }
}
