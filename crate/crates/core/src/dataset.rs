//! JSONL dataset files: one click sample per line.
//!
//! Each line is exactly
//! `{"click_id":int,"features":[int,...],"click_ts":int,"purchases":[{"ts":int,"price":float},...]}`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::{ClickSample, MAX_FIELDS};

/// Renders samples to the JSONL byte layout.
pub fn render_dataset(samples: &[ClickSample]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(samples.len() * 128);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_dataset(samples: &[ClickSample], path: impl AsRef<Path>) -> Result<()> {
    let bytes = render_dataset(samples)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ClickSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let sample: ClickSample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        check_structure(&sample).map_err(parse_err)?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Checks that do not depend on the attribution window.
fn check_structure(s: &ClickSample) -> std::result::Result<(), String> {
    if s.features.is_empty() || s.features.len() > MAX_FIELDS {
        return Err(format!("feature count {} outside 1..={MAX_FIELDS}", s.features.len()));
    }
    if s.purchases.is_empty() {
        return Err("sample has no purchases".into());
    }
    if s.purchases.windows(2).any(|w| w[1].ts < w[0].ts) {
        return Err("purchases are not sorted by timestamp".into());
    }
    if s.purchases[0].ts < s.click_ts {
        return Err("purchase precedes its click".into());
    }
    if let Some(p) = s.purchases.iter().find(|p| !(p.price.is_finite() && p.price > 0.0)) {
        return Err(format!("non-positive price {}", p.price));
    }
    Ok(())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
        f.sync_all().map_err(|e| Error::io(tmp, e))?;
    }
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}
