//! Run manifests: line-oriented `key=value` text written next to outputs.
//!
//! Parameters are stored as `param.<flag>=<value>`, so replay rebuilds the
//! original command line and runs it again.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::failure::Failure;

pub struct Manifest {
    subcommand: &'static str,
    params: Vec<(&'static str, String)>,
    started: u64,
    outputs: Vec<PathBuf>,
}

/// Which parameter names an output location, so replay can redirect it.
pub const OUTPUT_PARAMS: [&str; 2] = ["out-dir", "out"];

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Manifest {
    pub fn start(subcommand: &'static str, params: Vec<(&'static str, String)>) -> Self {
        Self {
            subcommand,
            params,
            started: unix_now(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn render(&self, finished: u64) -> Result<String, Failure> {
        let mut text = String::new();
        text.push_str(&format!("subcommand={}\n", self.subcommand));
        text.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        for (key, value) in &self.params {
            if value.contains('\n') {
                return Err(Failure::Usage(format!(
                    "parameter {key} contains a newline"
                )));
            }
            text.push_str(&format!("param.{key}={value}\n"));
        }
        text.push_str(&format!("started_unix={}\n", self.started));
        text.push_str(&format!("finished_unix={finished}\n"));
        for out in &self.outputs {
            text.push_str(&format!("output={}\n", out.display()));
        }
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let text = self.render(unix_now())?;
        fs::write(path, text).map_err(|e| Failure::io(format!("writing {}", path.display()), e))
    }
}

/// Parses a manifest into its ordered entries.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, Failure> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    Failure::Usage(format!("manifest line {}: expected key=value", i + 1))
                })
        })
        .collect()
}

/// Command line equivalent to the run recorded in `path`, with the output
/// location optionally replaced.
pub fn replay_argv(path: &Path, out: Option<&Path>) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("reading {}", path.display()), e))?;
    let entries = parse(&text)?;
    let subcommand = entries
        .iter()
        .find(|(k, _)| k == "subcommand")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Failure::Usage("manifest has no subcommand".into()))?;
    let mut argv = vec!["inverse-mcmc".to_string(), subcommand];
    for (key, value) in &entries {
        if let Some(flag) = key.strip_prefix("param.") {
            let value = match out {
                Some(o) if OUTPUT_PARAMS.contains(&flag) => o.display().to_string(),
                _ => value.clone(),
            };
            argv.push(format!("--{flag}={value}"));
        }
    }
    Ok(argv)
}

/// Joins a list parameter the way clap's `,` delimiter reads it back.
pub fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
