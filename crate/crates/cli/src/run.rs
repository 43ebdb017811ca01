//! Run-directory management.
//!
//! Every command writes into `<output root>/<experiment name>/<config sha>/`
//! so that sweeps over configs never collide and a directory's contents are
//! fully determined by the resolved config. Reruns are byte-identical except
//! for `run_meta.json`, the one file that carries a timestamp.

use std::path::{Path, PathBuf};

use serde::Serialize;
use unlearnable_core::config::ResolvedConfig;
use unlearnable_core::Result;

/// Environment variable naming the output root, between the `--output` flag
/// (stronger) and the config's `output` field (weaker).
pub const OUTPUT_ENV: &str = "UNLEARNABLE_OUT";

const DEFAULT_ROOT: &str = "runs";

/// A created run directory plus the resolved config that scopes it.
pub struct RunContext {
    pub resolved: ResolvedConfig,
    pub dir: PathBuf,
}

/// Resolve the output root: flag, then environment, then config, then
/// `runs/` next to the working directory.
pub fn output_root(flag: Option<&Path>, config: &ResolvedConfig) -> PathBuf {
    if let Some(path) = flag {
        return path.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUTPUT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    match &config.config.output {
        Some(out) => PathBuf::from(out),
        None => PathBuf::from(DEFAULT_ROOT),
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config_sha: &'a str,
    seed: u64,
    version: &'a str,
    /// Wall-clock creation time; deliberately quarantined in this file so
    /// every other artifact stays reproducible byte for byte.
    created_unix: u64,
}

impl RunContext {
    /// Create (or reuse) the run directory and write `resolved_config.json`
    /// plus `run_meta.json`.
    pub fn prepare(
        resolved: ResolvedConfig,
        output_flag: Option<&Path>,
        command: &str,
    ) -> Result<RunContext> {
        let root = output_root(output_flag, &resolved);
        let dir = root.join(&resolved.config.name).join(resolved.short_sha());
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("resolved_config.json"), resolved.to_pretty_json()?)?;
        let meta = RunMeta {
            command,
            config_sha: &resolved.sha,
            seed: resolved.config.seed,
            version: env!("CARGO_PKG_VERSION"),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        write_json(&dir.join("run_meta.json"), &meta)?;
        log::info!("run directory: {}", dir.display());
        Ok(RunContext { resolved, dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Pretty-printed JSON with a trailing newline, the shared artifact format.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

/// The command's machine-readable result, printed to stdout as one JSON
/// document.
pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    Ok(())
}
