use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::annotations::OrderedEntries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub score: f64,
}

/// Video-level classification results: per video, labels sorted by
/// descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassScores {
    videos: IndexMap<String, Vec<ClassScore>>,
}

impl ClassScores {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a video's scores. Entries are stably sorted by descending score;
    /// duplicate labels and scores outside `[0, 1]` are rejected.
    pub fn insert(&mut self, video_id: impl Into<String>, mut scores: Vec<ClassScore>) -> Result<()> {
        let video_id = video_id.into();
        for (i, s) in scores.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.score) {
                return Err(Error::InvalidArgument(format!(
                    "video {video_id}: score {} for {} outside [0, 1]",
                    s.score, s.label
                )));
            }
            if scores[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::InvalidArgument(format!(
                    "video {video_id}: duplicate label {}",
                    s.label
                )));
            }
        }
        scores.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.videos.insert(video_id, scores);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&[ClassScore]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ClassScore])> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let entries: OrderedEntries<Vec<ClassScore>> = serde_json::from_str(s)?;
        let mut out = Self::new();
        for (vid, scores) in entries.0 {
            if out.videos.contains_key(&vid) {
                return Err(Error::InvalidArgument(format!("duplicate video id {vid}")));
            }
            out.insert(vid, scores)?;
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.videos)?)
    }
}

pub fn load_class_scores(path: impl AsRef<Path>) -> Result<ClassScores> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassScores::from_json_str(&text)
}

pub fn save_class_scores(scores: &ClassScores, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scores.to_json_string()?).map_err(|e| Error::io(path, e))
}
