//! JSON-lines video manifest: one `{"video_id", "frames", "label"}` object
//! per line. Frame paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinceError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub frames: Vec<String>,
    pub label: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoManifest {
    /// Directory frame paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<VideoRecord>,
}

impl VideoManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<VideoRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(VinceError::Config(format!(
                    "duplicate video_id {:?} in manifest",
                    r.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.records.iter().map(|r| r.frames.len()).sum()
    }

    pub fn frame_path(&self, record: &VideoRecord, frame: usize) -> PathBuf {
        self.root.join(&record.frames[frame])
    }

    /// Every record has exactly `t` frames.
    pub fn frames_per_video(&self) -> Option<usize> {
        let t = self.records.first()?.frames.len();
        self.records.iter().all(|r| r.frames.len() == t).then_some(t)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `dir/manifest.jsonl`; frame paths are stored as given.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(path)
    }

    /// Loads a manifest file (or `dir/manifest.jsonl`) and checks that every
    /// referenced frame exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file)?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: VideoRecord = serde_json::from_str(line).map_err(|e| {
                VinceError::format(&file, format!("line {}: {e}", lineno + 1))
            })?;
            records.push(rec);
        }
        let m = Self::new(root, records)?;
        for r in &m.records {
            for (i, _) in r.frames.iter().enumerate() {
                let p = m.frame_path(r, i);
                if !p.is_file() {
                    return Err(VinceError::format(
                        &file,
                        format!("video {} references missing frame {}", r.video_id, p.display()),
                    ));
                }
            }
        }
        Ok(m)
    }
}
