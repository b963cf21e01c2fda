//! Output directory handling: the lock file, staged writes that only become
//! visible once a subcommand succeeds, and the provenance header.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::Failure;

pub const LOCK_FILE: &str = ".threadscope.lock";
pub const EMBEDDING_BIN: &str = "embedding.bin";
pub const EMBEDDING_TXT: &str = "embedding.txt";
pub const MODEL_BIN: &str = "model.bin";
pub const SELECTION_CSV: &str = "selection.csv";

const STAGE_SUFFIX: &str = ".partial";

/// Provenance recorded at the top of every text output.
#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash,
            seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} config={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// Exclusive claim on an output directory for the lifetime of the value.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new("io", format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure::new(
                "locked",
                format!(
                    "{} exists; another run is using this output directory (remove the file if it is stale)",
                    path.display()
                ),
            )
            .into()),
            Err(e) => Err(Failure::new("io", format!("cannot create {}: {e}", path.display())).into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Files written under temporary names and renamed into place by
/// [`Staging::commit`]. Dropping without committing deletes them.
pub struct Staging {
    dir: PathBuf,
    header: Header,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Staging {
    pub fn new(dir: &Path, header: Header) -> Self {
        Self {
            dir: dir.to_path_buf(),
            header,
            staged: Vec::new(),
        }
    }

    /// Stage `name` and hand its contents to `fill`.
    pub fn write_raw(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!("{name}{STAGE_SUFFIX}"));
        let file = File::create(&tmp)
            .map_err(|e| Failure::new("io", format!("cannot create {}: {e}", tmp.display())))?;
        self.staged.push((tmp.clone(), target));
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()
            .map_err(|e| Failure::new("io", format!("cannot write {}: {e}", tmp.display())))?;
        Ok(())
    }

    /// CSV or plain text, preceded by the `#` header line.
    pub fn write_text(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> anyhow::Result<()> {
        let line = self.header.comment_line();
        self.write_raw(name, |w| {
            writeln!(w, "{line}")?;
            fill(w)?;
            Ok(())
        })
        .with_context(|| format!("writing {name}"))
    }

    /// JSON object `{"header": ..., <key>: value}`.
    pub fn write_json<T: Serialize>(
        &mut self,
        name: &str,
        key: &str,
        value: &T,
    ) -> anyhow::Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("header".into(), serde_json::to_value(&self.header)?);
        obj.insert(key.into(), serde_json::to_value(value)?);
        self.write_raw(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &obj)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn commit(mut self) -> anyhow::Result<Vec<PathBuf>> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::with_capacity(staged.len());
        for (tmp, target) in staged {
            fs::rename(&tmp, &target).map_err(|e| {
                Failure::new(
                    "io",
                    format!("cannot move {} into place: {e}", target.display()),
                )
            })?;
            done.push(target);
        }
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}
