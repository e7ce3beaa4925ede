//! On-disk formats: newline-delimited JSON logs with a versioned header,
//! report files and the run manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header<M> {
    pub format: String,
    pub version: u32,
    pub meta: M,
}

/// Writes a header line followed by one JSON record per line.
pub fn write_ndjson<W: Write, M: Serialize, T: Serialize>(
    mut w: W,
    format: &str,
    meta: &M,
    records: impl IntoIterator<Item = T>,
) -> Result<()> {
    let header = Header { format: format.to_string(), version: FORMAT_VERSION, meta };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_ndjson`], rejecting other formats and
/// versions. Blank lines are ignored.
pub fn read_ndjson<R: BufRead, M: DeserializeOwned, T: DeserializeOwned>(r: R, format: &str) -> Result<(M, Vec<T>)> {
    let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
    let first = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
    let header: Header<M> = serde_json::from_str(&first)?;
    if header.format != format {
        return Err(Error::Format(format!("expected format {format:?}, found {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {} (expected {FORMAT_VERSION})", header.version)));
    }
    let records = lines.map(|l| Ok(serde_json::from_str(&l?)?)).collect::<Result<Vec<T>>>()?;
    Ok((header.meta, records))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config_digest: String,
    pub source_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: &str) -> Self {
        Self {
            format: "trackcast-manifest".into(),
            version: FORMAT_VERSION,
            command: command.into(),
            config_digest: config_digest.into(),
            source_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            seeds: BTreeMap::new(),
            wall_times: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.wall_times.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

/// Writes files into one directory and keeps the inventory for the
/// manifest.
pub struct OutputDir {
    root: PathBuf,
    outputs: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        std::fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputFile { path: name.into(), bytes: contents.len() as u64, sha256: sha256_hex(contents) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn outputs(&self) -> &[OutputFile] {
        &self.outputs
    }

    /// Writes `manifest.json` with the inventory of everything written so
    /// far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.outputs = self.outputs.clone();
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        let path = self.path("manifest.json");
        std::fs::write(&path, s)?;
        Ok(path)
    }
}
