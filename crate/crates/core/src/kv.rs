//! Flat `key=value` text used for run configuration and checkpoint headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("missing key {0}")]
    Missing(String),
    #[error("key {key}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

/// Ordered map; rendering is sorted by key, so equal maps render to equal
/// bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap(BTreeMap<String, String>);

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blank lines and lines starting with `#` are skipped; keys and values
    /// are trimmed.
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::Value {
                key: key.into(),
                value: v.clone(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?.ok_or_else(|| KvError::Missing(key.into()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, KvError> {
        let Some(v) = self.0.get(key) else { return Ok(None) };
        v.split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|_| KvError::Value {
                key: key.into(),
                value: v.clone(),
            })
    }

    /// Entries of `other` replace entries here.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

pub fn join_list<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let m = KvMap::parse("# run\nb = 2\n\na=x=y\nlist=1, 2,3\n").unwrap();
        assert_eq!(m.get_str("a"), Some("x=y"));
        assert_eq!(m.require::<u32>("b").unwrap(), 2);
        assert_eq!(m.get_list::<usize>("list").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(KvMap::parse(&m.render()).unwrap(), m);
        assert_eq!(m.render(), "a=x=y\nb=2\nlist=1, 2,3\n");
    }

    #[test]
    fn errors() {
        assert_eq!(KvMap::parse("novalue").unwrap_err(), KvError::Syntax { line: 1 });
        let m = KvMap::parse("n=abc").unwrap();
        assert!(matches!(m.require::<f64>("n"), Err(KvError::Value { .. })));
        assert!(matches!(m.require::<f64>("q"), Err(KvError::Missing(_))));
    }

    #[test]
    fn float_display_round_trips() {
        let mut m = KvMap::new();
        m.set("x", 1.2e-6f64);
        m.set("y", 0.1f64 + 0.2);
        assert_eq!(m.require::<f64>("x").unwrap(), 1.2e-6);
        assert_eq!(m.require::<f64>("y").unwrap(), 0.1 + 0.2);
    }
}
