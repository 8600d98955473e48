//! Flat `key=value` run manifests and configuration files.
//!
//! Lines are `key=value`; blank lines and lines starting with `#` are
//! ignored. Keys keep their file order, and a repeated key keeps its last
//! value.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const COMMAND_KEY: &str = "command";
pub const VERSION_KEY: &str = "tool_version";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    /// A manifest for `command`, stamped with the crate version.
    pub fn for_command(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set(VERSION_KEY, env!("CARGO_PKG_VERSION"));
        m.set(COMMAND_KEY, command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn command(&self) -> Option<&str> {
        self.get(COMMAND_KEY)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entries other than the command and version stamps.
    pub fn options(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter(|(k, _)| k != COMMAND_KEY && k != VERSION_KEY).map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = RunManifest::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(path, format!("line {}: expected key=value", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(path, format!("line {}: empty key", no + 1)));
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# metahsi run manifest\n");
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `<artifact>.manifest`, next to the artifact.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
