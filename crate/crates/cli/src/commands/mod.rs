pub mod align;
pub mod checkgrad;
pub mod eval;
pub mod losses;
pub mod render;
pub mod selftest;
pub mod train;
pub mod weights;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Parse `HxW` (height x width).
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size '{s}' must look like 32x32"))?;
    Ok((
        h.trim().parse().with_context(|| format!("bad height in '{s}'"))?,
        w.trim().parse().with_context(|| format!("bad width in '{s}'"))?,
    ))
}

/// Map of file stem -> path for every file in `dir` with the extension.
pub fn stems_with_ext(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .with_context(|| format!("unreadable file name {}", path.display()))?
                .to_string();
            out.insert(stem, path);
        }
    }
    if out.is_empty() {
        bail!("no .{ext} files in {}", dir.display());
    }
    Ok(out)
}
