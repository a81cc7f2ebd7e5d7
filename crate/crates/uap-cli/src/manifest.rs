//! Flat key=value provenance files written next to every output artifact.
//!
//! Layout: `subcommand`, `version`, one `arg.<flag>=<value>` line per
//! resolved parameter in declaration order, `duration_ms` last. An argv
//! can be rebuilt from the file to replay the run.

use std::fmt::Display;
use std::path::Path;

use anyhow::{bail, Context};

/// Flags that take no value; recorded as true/false.
const BOOL_KEYS: &[&str] = &["clamp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// (flag name without leading dashes, rendered value), in order.
    /// Repeatable flags appear once per occurrence.
    pub args: Vec<(String, String)>,
    pub duration_ms: u128,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: Vec::new(),
            duration_ms: 0,
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Display) {
        self.args.push((key.to_string(), value.to_string()));
    }

    pub fn flag(&mut self, key: &str, on: bool) {
        self.args.push((key.to_string(), on.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("subcommand={}\n", self.subcommand));
        out.push_str(&format!("version={}\n", self.version));
        for (k, v) in &self.args {
            out.push_str(&format!("arg.{k}={v}\n"));
        }
        out.push_str(&format!("duration_ms={}\n", self.duration_ms));
        out
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut subcommand = None;
        let mut version = None;
        let mut duration_ms = 0;
        let mut args = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let Some((key, value)) = line.split_once('=') else {
                bail!("manifest line {} has no '=': {line:?}", idx + 1);
            };
            match key {
                "subcommand" => subcommand = Some(value.to_string()),
                "version" => version = Some(value.to_string()),
                "duration_ms" => {
                    duration_ms = value
                        .parse()
                        .with_context(|| format!("bad duration {value:?}"))?
                }
                _ => match key.strip_prefix("arg.") {
                    Some(flag) => args.push((flag.to_string(), value.to_string())),
                    None => bail!("unknown manifest key {key:?}"),
                },
            }
        }
        Ok(Self {
            subcommand: subcommand.context("manifest missing subcommand")?,
            version: version.context("manifest missing version")?,
            args,
            duration_ms,
        })
    }

    /// Rebuilds the argument vector (without the program name).
    pub fn to_argv(&self) -> Vec<String> {
        let mut argv = vec![self.subcommand.clone()];
        for (k, v) in &self.args {
            if BOOL_KEYS.contains(&k.as_str()) {
                if v == "true" {
                    argv.push(format!("--{k}"));
                }
            } else {
                argv.push(format!("--{k}"));
                argv.push(v.clone());
            }
        }
        argv
    }
}
