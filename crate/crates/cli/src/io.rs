//! Filesystem helpers: input checks, refusal to overwrite, atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use supnotmiwae::data::{load_csv, CsvSchema, Dataset, Split};

use crate::CliError;

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!("input file {} does not exist", path.display())))
    }
}

/// Fails when any of `names` already exists under `dir`, unless forced.
pub fn refuse_existing(dir: &Path, names: &[&str], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    match names.iter().map(|n| dir.join(n)).find(|p| p.exists()) {
        Some(p) => Err(CliError::Runtime(anyhow!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn sibling(path: &Path, tag: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Writes through a temporary file renamed into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = sibling(path, "tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Builds a directory in a temporary sibling, then moves it to `out`.
/// An existing non-empty `out` is refused unless `force`.
pub fn create_dir_atomic(
    out: &Path,
    force: bool,
    fill: impl FnOnce(&Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let occupied = out.exists() && (out.is_file() || fs::read_dir(out)?.next().is_some());
    if occupied && !force {
        return Err(CliError::Runtime(anyhow!(
            "output {} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = sibling(out, "partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if out.is_dir() {
        fs::remove_dir_all(out)?;
    } else if out.exists() {
        fs::remove_file(out)?;
    }
    fs::rename(&tmp, out).with_context(|| format!("moving output into {}", out.display()))?;
    Ok(())
}

pub fn load_split(path: &Path, feature_names: Option<Vec<String>>, split: Split) -> Result<Dataset, CliError> {
    require_file(path)?;
    let schema = CsvSchema {
        feature_names,
        split: Some(split),
    };
    load_csv(path, &schema)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(CliError::Runtime)
}
