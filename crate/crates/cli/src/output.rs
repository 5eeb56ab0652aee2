use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST: &str = "run_manifest.json";

/// An output directory whose files are written atomically.
pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes to a sibling temp file, syncs, then renames over `name`.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp-{}", std::process::id()));
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &target)
            .with_context(|| format!("cannot move {} into place", target.display()))?;
        self.written.push(name.to_string());
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> covadj::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// Runs `f` and records its wall-clock time under `label`.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings
            .insert(label.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn finish<S: Serialize>(mut self, command: &str, seed: u64, settings: &S) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: covadj::VERSION,
            command,
            seed,
            settings,
            outputs: self.written.clone(),
            timings_ms: self.timings.clone(),
            threads: rayon::current_num_threads(),
        };
        self.write_json(MANIFEST, &manifest)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    tool: &'a str,
    version: &'a str,
    core_version: &'a str,
    command: &'a str,
    seed: u64,
    settings: &'a S,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, f64>,
    threads: usize,
}
