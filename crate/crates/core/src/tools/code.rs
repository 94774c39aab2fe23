//! Local code interpreter: runs Python in an isolated subprocess.
//!
//! Isolation budget: wall-clock timeout enforced by the parent, an
//! address-space cap via rlimit, a scratch working directory, a near-empty
//! environment, and a deny-all policy shim over file, network, and process
//! primitives. Policy violations are reported as typed errors with the
//! diagnostic in stderr, never silently ignored. The shim is a training
//! guardrail, not a security boundary against a determined adversary.

use std::process::Stdio;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

use super::{ToolError, ToolResult};

const HARNESS: &str = include_str!("harness.py");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub timeout_ms: u64,
    pub memory_bytes: u64,
    /// Captured stdout/stderr cap, characters.
    pub output_cap: usize,
    /// Interpreter to launch; resolved via PATH when not absolute.
    pub python: String,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            timeout_ms: 10_000,
            memory_bytes: 256 * 1024 * 1024,
            output_cap: 1 << 20,
            python: "python3".to_string(),
        }
    }
}

#[derive(Deserialize)]
struct Envelope {
    status: String,
    violation: Option<String>,
    stdout: String,
    stderr: String,
    result: serde_json::Value,
}

/// Execute a Python script under the sandbox policy and return the
/// `{stdout, stderr, result}` observation, where `result` is the final value
/// of a variable named `result` if the script defined one.
pub async fn run_python(code: &str, limits: &SandboxLimits) -> Result<ToolResult, ToolError> {
    let started = std::time::Instant::now();
    let scratch = tempfile::tempdir().map_err(|e| ToolError::LaunchFailure(e.to_string()))?;
    let cfg = serde_json::json!({
        "memory_bytes": limits.memory_bytes,
        "output_cap": limits.output_cap,
    })
    .to_string();

    let mut child = Command::new(&limits.python)
        .arg("-I")
        .arg("-c")
        .arg(HARNESS)
        .arg(cfg)
        .current_dir(scratch.path())
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("PYTHONIOENCODING", "utf-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| ToolError::LaunchFailure(format!("spawn {}: {e}", limits.python)))?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    stdin
        .write_all(code.as_bytes())
        .await
        .map_err(|e| ToolError::LaunchFailure(format!("write code: {e}")))?;
    drop(stdin);

    let deadline = Duration::from_millis(limits.timeout_ms);
    let output = match tokio::time::timeout(deadline, child.wait_with_output()).await {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => return Err(ToolError::LaunchFailure(e.to_string())),
        Err(_) => {
            // wait_with_output consumed the handle; kill_on_drop reaps it.
            return Err(ToolError::SandboxTimeout(limits.timeout_ms));
        }
    };

    let stdout_text = String::from_utf8_lossy(&output.stdout);
    let envelope_line = stdout_text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| {
            ToolError::LaunchFailure(format!(
                "harness produced no envelope; stderr: {}",
                String::from_utf8_lossy(&output.stderr)
            ))
        })?;
    let envelope: Envelope = serde_json::from_str(envelope_line).map_err(|e| {
        ToolError::LaunchFailure(format!(
            "harness envelope unreadable ({e}); stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        ))
    })?;

    if envelope.status == "violation" {
        return Err(ToolError::SandboxViolation {
            detail: envelope.violation.unwrap_or_else(|| "policy violation".into()),
            stderr: envelope.stderr,
        });
    }

    Ok(ToolResult::structured(
        serde_json::json!({
            "stdout": envelope.stdout,
            "stderr": envelope.stderr,
            "result": envelope.result,
        }),
        started.elapsed().as_millis() as u64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> SandboxLimits {
        SandboxLimits { timeout_ms: 5_000, ..SandboxLimits::default() }
    }

    #[tokio::test]
    async fn product_example() {
        let r = run_python("a = 5\nb = 10\nresult = a * b\nprint(result)", &limits())
            .await
            .unwrap();
        let v = match r.payload {
            super::super::ToolPayload::Structured { value } => value,
            other => panic!("expected structured payload, got {other:?}"),
        };
        assert_eq!(v["stdout"], "50\n");
        assert_eq!(v["result"], 50);
        assert_eq!(v["stderr"], "");
    }

    #[tokio::test]
    async fn plain_print() {
        let r = run_python("print(6*7)", &limits()).await.unwrap();
        assert!(r.observation_text().contains("42\\n") || r.observation_text().contains("42"));
    }

    #[tokio::test]
    async fn user_exception_is_stderr_not_error() {
        let r = run_python("1/0", &limits()).await.unwrap();
        let text = r.observation_text();
        assert!(text.contains("ZeroDivisionError"));
    }

    #[tokio::test]
    async fn socket_attempt_is_violation() {
        let out = run_python("import socket\nsocket.socket()", &limits()).await;
        match out {
            Err(ToolError::SandboxViolation { detail, stderr }) => {
                assert!(detail.contains("network"));
                assert!(stderr.contains("SandboxViolation"));
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[tokio::test]
    async fn infinite_loop_times_out() {
        let fast = SandboxLimits { timeout_ms: 1_500, ..SandboxLimits::default() };
        let out = run_python("while True:\n    pass", &fast).await;
        assert!(matches!(out, Err(ToolError::SandboxTimeout(1_500))));
    }
}
