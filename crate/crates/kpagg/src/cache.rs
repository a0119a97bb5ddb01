//! Append-only JSONL sample cache, one file per (corpus, variant, model).

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use kpagg_core::RawSample;
use log::warn;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub doc_id: String,
    pub prompt_hash: String,
    pub sample_index: usize,
}

impl CacheKey {
    pub fn of(sample: &RawSample) -> Self {
        CacheKey {
            doc_id: sample.doc_id.clone(),
            prompt_hash: sample.prompt_hash.clone(),
            sample_index: sample.sample_index,
        }
    }
}

struct Inner {
    entries: HashMap<CacheKey, RawSample>,
    file: File,
}

pub struct SampleCache {
    path: PathBuf,
    inner: Mutex<Inner>,
    corrupt_lines: usize,
}

/// Keeps path components filesystem-safe (model names often contain `/`).
fn component(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    match cleaned.trim_matches('.') {
        "" => "_".to_string(),
        _ => cleaned,
    }
}

pub fn cache_path(dir: &Path, corpus: &str, variant: &str, model: &str) -> PathBuf {
    dir.join(component(corpus))
        .join(component(variant))
        .join(format!("{}.jsonl", component(model)))
}

impl SampleCache {
    /// Opens (creating if needed) the cache file and loads every valid line.
    /// Later lines win over earlier ones with the same key.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut entries = HashMap::new();
        let mut corrupt_lines = 0;
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<RawSample>(&line) {
                    Ok(sample) if !sample.is_failed() => {
                        entries.insert(CacheKey::of(&sample), sample);
                    }
                    Ok(_) => {}
                    Err(e) => {
                        warn!("{}:{}: skipping corrupt cache line: {e}", path.display(), i + 1);
                        corrupt_lines += 1;
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        // a torn final line must not swallow the next record
        if fs::metadata(path)?.len() > 0 && !ends_with_newline(path)? {
            file.write_all(b"\n")?;
        }
        Ok(SampleCache {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { entries, file }),
            corrupt_lines,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<RawSample> {
        self.inner.lock().expect("cache lock").entries.get(key).cloned()
    }

    /// Appends and flushes one record. Failed samples are not stored so a
    /// later run retries them.
    pub fn put(&self, sample: &RawSample) -> io::Result<()> {
        if sample.is_failed() {
            return Ok(());
        }
        let mut line = serde_json::to_string(sample).map_err(io::Error::other)?;
        line.push('\n');
        let mut inner = self.inner.lock().expect("cache lock");
        inner.file.write_all(line.as_bytes())?;
        inner.file.flush()?;
        inner.entries.insert(CacheKey::of(sample), sample.clone());
        Ok(())
    }
}

fn ends_with_newline(path: &Path) -> io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    f.seek(SeekFrom::End(-1))?;
    let mut last = [0u8];
    f.read_exact(&mut last)?;
    Ok(last[0] == b'\n')
}
