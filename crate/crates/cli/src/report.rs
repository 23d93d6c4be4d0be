use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Ok,
    Failed,
}

/// What a command did: files it wrote, numbers it measured, how long it took.
#[derive(Debug, Serialize)]
pub struct CommandReport {
    pub command: String,
    pub status: Status,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_seconds: f64,
    /// Human-readable lines printed without `--json`.
    #[serde(skip)]
    pub lines: Vec<String>,
}

impl CommandReport {
    pub fn new(command: &str) -> Self {
        CommandReport {
            command: command.to_string(),
            status: Status::Ok,
            outputs: Vec::new(),
            metrics: None,
            error: None,
            elapsed_seconds: 0.0,
            lines: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn print(&self, json: bool) {
        if json {
            println!("{}", serde_json::to_string_pretty(self).expect("report serialises"));
            return;
        }
        for l in &self.lines {
            println!("{l}");
        }
        for p in &self.outputs {
            println!("wrote {}", p.display());
        }
        if let Some(e) = &self.error {
            eprintln!("error: {e}");
        }
        let status = match self.status {
            Status::Ok => "ok",
            Status::Failed => "FAILED",
        };
        println!("{}: {status} ({:.2}s)", self.command, self.elapsed_seconds);
    }
}
