use std::fmt;
use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};

/// Ordered `key: value` lines describing how an artifact was produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(": ")
                .or_else(|| line.strip_suffix(':').map(|k| (k, "")))
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected `key: value`".into() })?;
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Manifest::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_overwrites_in_place() {
        let mut m = Manifest::new();
        m.set("command", "train-teacher");
        m.set("seed", 3);
        m.set("status", "running");
        m.set("status", "done");
        let text = m.to_string();
        assert_eq!(text, "command: train-teacher\nseed: 3\nstatus: done\n");
        assert_eq!(Manifest::parse(&text).unwrap(), m);
        assert!(Manifest::parse("no separator").is_err());
    }
}
