use std::fmt::Display;
use std::path::Path;

use crate::error::{DldaError, Result};

/// Plain-text run log. Contents are deterministic for a given config and
/// seed; wall-clock data goes to the manifest instead.
#[derive(Debug, Default, Clone)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(&mut self, msg: impl Display) {
        let s = msg.to_string();
        log::debug!("{s}");
        self.lines.push(s);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn extend(&mut self, other: RunLog) {
        self.lines.extend(other.lines);
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| DldaError::io(path, e))
    }
}
