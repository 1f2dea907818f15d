//! Time-stamped command trace for debugging and replay.
//!
//! One command per line: `<t_s> <command> <target> <duration_s>`. The
//! target field uses `/`-separated values so each line splits into exactly
//! four whitespace fields.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::Real;

#[derive(Debug, Default)]
pub struct CommandTrace {
    buffer: String,
    enabled: bool,
}

impl CommandTrace {
    pub fn new(enabled: bool) -> Self {
        Self {
            buffer: String::new(),
            enabled,
        }
    }

    pub fn record(&mut self, t_s: Real, command: &str, target: &str, duration_s: Real) {
        if !self.enabled {
            return;
        }
        let _ = writeln!(self.buffer, "{t_s} {command} {target} {duration_s}");
    }

    pub fn contents(&self) -> &str {
        &self.buffer
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, &self.buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_when_enabled() {
        let mut trace = CommandTrace::new(true);
        trace.record(1.5, "move_axes", "10/20/30", 0.6);
        trace.record(2.1, "tilt", "40", 0.4);
        let lines: Vec<&str> = trace.contents().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "1.5 move_axes 10/20/30 0.6");
        assert_eq!(lines[0].split_whitespace().count(), 4);
    }

    #[test]
    fn silent_when_disabled() {
        let mut trace = CommandTrace::new(false);
        trace.record(0.0, "move_axes", "0/0/0", 0.0);
        assert!(trace.contents().is_empty());
    }
}
