use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const HASH_LEN: usize = 16;

pub fn code_version() -> String {
    format!("vicntm {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// serde_json maps are ordered by key, so `to_string` is canonical.
pub fn canonical(v: &Value) -> String {
    serde_json::to_string(v).expect("JSON values always serialize")
}

/// Short hash naming a manifest's output directory.
pub fn manifest_hash(v: &Value) -> String {
    sha256_hex(canonical(v).as_bytes())[..HASH_LEN].to_string()
}

pub fn write_manifest(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Builds a finished directory atomically: `fill` writes into a sibling
/// staging directory, which is then renamed into place. An existing `dest`
/// is left untouched and reported as reused.
pub fn publish_dir(dest: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
    if dest.is_dir() {
        return Ok(false);
    }
    let parent = dest.parent().context("output directory has no parent")?;
    fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    let name = dest
        .file_name()
        .context("output directory has no name")?
        .to_string_lossy();
    let stage = parent.join(format!(
        ".{name}.tmp-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;
    if let Err(e) = fill(&stage) {
        let _ = fs::remove_dir_all(&stage);
        return Err(e);
    }
    match fs::rename(&stage, dest) {
        Ok(()) => Ok(true),
        // a concurrent writer published the same manifest first
        Err(_) if dest.is_dir() => {
            let _ = fs::remove_dir_all(&stage);
            Ok(false)
        }
        Err(e) => Err(e).with_context(|| format!("cannot publish {}", dest.display())),
    }
}

/// Replaces `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot replace {}", path.display()))
}
