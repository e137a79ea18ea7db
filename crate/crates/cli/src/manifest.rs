//! One JSON line per invocation in `runs.log`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

pub const LOG_NAME: &str = "runs.log";

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Appends the manifest line; failures are reported but never change the exit code.
pub fn append(argv: &[String], config_hash: Option<String>, seed: Option<u64>, dir: Option<PathBuf>, outputs: &[PathBuf], status: &str) {
    let dir = dir.filter(|d| !d.as_os_str().is_empty()).unwrap_or_else(|| PathBuf::from("."));
    let line = json!({
        "argv": argv,
        "config_hash": config_hash,
        "seed": seed,
        "git_describe": git_describe(),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "status": status,
    });
    let mut text = line.to_string();
    text.push('\n');
    if let Err(e) = write_line(&dir.join(LOG_NAME), &text) {
        eprintln!("warning: could not append to {}: {e}", dir.join(LOG_NAME).display());
    }
}

fn write_line(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())
}
