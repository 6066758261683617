use std::process::{Command, Stdio};
use std::time::Instant;

use serde::Serialize;

use super::unix_millis;

/// What happened when an authorized command ran.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExecutionRecord {
    pub timestamp: u64,
    pub command_name: String,
    /// `None` if the process could not be spawned or died from a signal.
    pub exit_code: Option<i32>,
    pub duration_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs `command` with `sh -c` and waits for it. Output is discarded.
pub fn execute_command(command_name: &str, command: &str) -> ExecutionRecord {
    let start = Instant::now();
    let status = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status();
    let duration_ms = start.elapsed().as_millis() as u64;
    let (exit_code, error) = match status {
        Ok(s) => (s.code(), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ExecutionRecord { timestamp: unix_millis(), command_name: command_name.to_string(), exit_code, duration_ms, error }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_recorded() {
        assert_eq!(execute_command("t", "true").exit_code, Some(0));
        assert_eq!(execute_command("e", "exit 3").exit_code, Some(3));
        let r = execute_command("missing", "definitely-not-a-command-xyz");
        assert_eq!(r.exit_code, Some(127));
        assert!(r.error.is_none());
    }
}
