//! Run configuration files and resolved-config sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use domlm::experiment::RunConfig;

use crate::commands::usage;
use crate::GlobalArgs;

/// Name of the resolved configuration written inside output directories.
pub const RESOLVED_FILE: &str = "config.toml";

pub fn parse(text: &str, origin: &Path) -> anyhow::Result<RunConfig> {
    toml::from_str(text).map_err(|e| usage(format!("invalid config {}: {e}", origin.display())))
}

pub fn read(path: &Path) -> anyhow::Result<RunConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text, path)
}

/// Configuration from `--config`, else from `fallback` when it exists, else
/// defaults; `--seed` is applied last.
pub fn resolve(g: &GlobalArgs, fallback: Option<&Path>) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&g.config, fallback) {
        (Some(p), _) => read(p)?,
        (None, Some(p)) if p.is_file() => read(p)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> anyhow::Result<String> {
    toml::to_string(cfg).context("serializing config")
}

/// Sidecar path for a file output: `out.config.toml`.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".config.toml");
    out.with_file_name(name)
}

pub fn write(cfg: &RunConfig, path: &Path) -> anyhow::Result<()> {
    fs::write(path, to_toml(cfg)?).with_context(|| format!("writing {}", path.display()))
}
