//! Plain-text `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are skipped. Keys may
//! appear once. Consumers take the keys they know and then call
//! [`KeyValues::finish`], which rejects anything left over.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line, value.to_string())) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                line,
                message: format!("{key}: cannot parse `{v}`: {e}"),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::invalid(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    item.trim().parse::<T>().map_err(|e| Error::Config {
                        line,
                        message: format!("{key}: cannot parse `{}`: {e}", item.trim()),
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Two comma-separated values.
    pub fn take_pair<T: FromStr + Copy>(&mut self, key: &str) -> Result<Option<(T, T)>>
    where
        T::Err: std::fmt::Display,
    {
        let line = self.entries.get(key).map(|(l, _)| *l);
        match self.take_list::<T>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(v) => Err(Error::Config {
                line: line.unwrap_or(0),
                message: format!("{key}: expected two values, found {}", v.len()),
            }),
        }
    }

    /// Fails on the first (by line) key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config {
                line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }
}
