use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::RunRecord;

const RECORDS: &str = "records.jsonl";
const LOCK: &str = ".records.lock";

/// Append-only JSONL store of run records. Checkpoints live beside it in
/// `<dir>/<run_id>/`.
#[derive(Debug, Clone)]
pub struct ResultStore {
    dir: PathBuf,
}

struct Locked(File);

impl Drop for Locked {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl ResultStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS)
    }

    fn lock(&self) -> Result<Locked> {
        let path = self.dir.join(LOCK);
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.lock().map_err(|e| Error::io(&path, e))?;
        Ok(Locked(f))
    }

    /// Appends `record`; a second record with the same `config_digest` is rejected.
    pub fn append(&self, record: &RunRecord) -> Result<String> {
        record.validate()?;
        let _guard = self.lock()?;
        if let Some(prev) = self.records()?.into_iter().find(|r| r.config_digest == record.config_digest) {
            return Err(Error::DuplicateRun { run_id: prev.run_id });
        }
        let path = self.records_path();
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))?;
        Ok(record.run_id.clone())
    }

    /// Every record in append order.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let path = self.records_path();
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: RunRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(r);
        }
        Ok(out)
    }

    /// `config_digest → run_id`, rebuilt from the records.
    pub fn index(&self) -> Result<BTreeMap<String, String>> {
        Ok(self
            .records()?
            .into_iter()
            .map(|r| (r.config_digest, r.run_id))
            .collect())
    }

    pub fn find_digest(&self, config_digest: &str) -> Result<Option<RunRecord>> {
        Ok(self.records()?.into_iter().find(|r| r.config_digest == config_digest))
    }

    pub fn get(&self, run_id: &str) -> Result<Option<RunRecord>> {
        Ok(self.records()?.into_iter().find(|r| r.run_id == run_id))
    }

    pub fn by_tag(&self, tag: &str) -> Result<Vec<RunRecord>> {
        Ok(self.records()?.into_iter().filter(|r| r.tag == tag).collect())
    }
}
