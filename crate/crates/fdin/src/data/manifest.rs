//! Dataset manifest: one tab-separated record per clip with
//! `(clip_id, frame_dir, mask_dir, frame_count, split)`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{load_clip, MaskSequence, VideoClip};
use crate::error::{FdinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = FdinError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(FdinError::Config(format!(
                "unknown split tag {other:?} (expected train/val/test)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub frame_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub frame_count: usize,
    pub split: Split,
}

impl ManifestRecord {
    /// Load the clip and masks, checking the recorded frame count against
    /// what is actually on disk.
    pub fn load(&self) -> Result<(VideoClip, MaskSequence)> {
        let (clip, masks) = load_clip(&self.frame_dir, &self.mask_dir)?;
        if clip.len() != self.frame_count {
            return Err(FdinError::CountMismatch {
                dir: format!("{} (manifest says {})", self.frame_dir.display(), self.frame_count),
                frames: clip.len(),
                masks: masks.len(),
            });
        }
        Ok((clip, masks))
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.clip_id,
                r.frame_dir.display(),
                r.mask_dir.display(),
                r.frame_count,
                r.split
            ));
        }
        std::fs::write(path, out)
            .map_err(|e| FdinError::io(format!("write manifest {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FdinError::io(format!("read manifest {}", path.display()), e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(FdinError::Config(format!(
                    "manifest {} line {}: expected 5 tab-separated fields, got {}",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )));
            }
            let frame_count: usize = fields[3].parse().map_err(|_| {
                FdinError::Config(format!(
                    "manifest {} line {}: bad frame count {:?}",
                    path.display(),
                    lineno + 1,
                    fields[3]
                ))
            })?;
            records.push(ManifestRecord {
                clip_id: fields[0].to_string(),
                frame_dir: PathBuf::from(fields[1]),
                mask_dir: PathBuf::from(fields[2]),
                frame_count,
                split: fields[4].parse()?,
            });
        }
        Ok(DatasetManifest { records })
    }
}
