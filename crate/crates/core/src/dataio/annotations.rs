//! ActivityNet-style annotation files.
//!
//! The on-disk layout is a `"database"` object keyed by video id. Unknown
//! per-video fields (urls, resolutions, ...) are ignored on load so that
//! public annotation dumps can be read as they are.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Training,
    Validation,
    Testing,
}

/// One labelled action instance, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Instance {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub duration: f64,
    pub subset: Subset,
    pub instances: Vec<Instance>,
}

impl VideoAnnotation {
    /// Checks `duration > 0` and `0 <= start < end <= duration` for every instance.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidAnnotations(format!(
                "video {}: duration must be positive, got {}",
                self.video_id, self.duration
            )));
        }
        for (index, inst) in self.instances.iter().enumerate() {
            let reason = if !(inst.start.is_finite() && inst.end.is_finite()) {
                Some("non-finite boundary".to_string())
            } else if inst.start >= inst.end {
                Some(format!("start {} must be < end {}", inst.start, inst.end))
            } else if inst.start < 0.0 || inst.end > self.duration {
                Some(format!(
                    "segment [{}, {}] outside [0, {}]",
                    inst.start, inst.end, self.duration
                ))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::InvalidInstance {
                    video_id: self.video_id.clone(),
                    index,
                    reason,
                });
            }
        }
        Ok(())
    }
}

/// Videos in file order, keyed by unique id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    videos: IndexMap<String, VideoAnnotation>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_videos(videos: impl IntoIterator<Item = VideoAnnotation>) -> Result<Self> {
        let mut set = Self::new();
        for v in videos {
            set.insert(v)?;
        }
        Ok(set)
    }

    /// Validates and appends a video. Duplicate ids are rejected.
    pub fn insert(&mut self, video: VideoAnnotation) -> Result<()> {
        video.validate()?;
        if self.videos.contains_key(&video.video_id) {
            return Err(Error::InvalidAnnotations(format!(
                "duplicate video id {}",
                video.video_id
            )));
        }
        self.videos.insert(video.video_id.clone(), video);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoAnnotation> {
        self.videos.get(video_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VideoAnnotation> {
        self.videos.values()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = &VideoAnnotation> {
        self.iter().filter(move |v| v.subset == subset)
    }

    /// Keeps only the videos of one subset, preserving order.
    pub fn filter_subset(&self, subset: Subset) -> AnnotationSet {
        AnnotationSet {
            videos: self
                .videos
                .iter()
                .filter(|(_, v)| v.subset == subset)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn total_instances(&self) -> usize {
        self.iter().map(|v| v.instances.len()).sum()
    }

    /// Sorted, de-duplicated class names over all instances.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .iter()
            .flat_map(|v| v.instances.iter().map(|i| i.label.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: AnnotationFile = serde_json::from_str(s)?;
        let mut set = Self::new();
        for (video_id, raw) in file.database.0 {
            set.insert(VideoAnnotation {
                instances: raw
                    .annotations
                    .into_iter()
                    .map(|a| Instance::new(a.segment[0], a.segment[1], a.label))
                    .collect(),
                video_id,
                duration: raw.duration,
                subset: raw.subset,
            })?;
        }
        Ok(set)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let database: IndexMap<&str, RawVideoOut<'_>> = self
            .iter()
            .map(|v| {
                (
                    v.video_id.as_str(),
                    RawVideoOut {
                        duration: v.duration,
                        subset: v.subset,
                        annotations: v
                            .instances
                            .iter()
                            .map(|i| RawInstanceOut {
                                segment: [i.start, i.end],
                                label: &i.label,
                            })
                            .collect(),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&AnnotationFileOut { database })?)
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationSet::from_json_str(&text)
}

pub fn save_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_json_string()?).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct AnnotationFile {
    database: OrderedEntries<RawVideo>,
}

#[derive(Deserialize)]
struct RawVideo {
    duration: f64,
    subset: Subset,
    #[serde(default)]
    annotations: Vec<RawInstance>,
}

#[derive(Deserialize)]
struct RawInstance {
    segment: [f64; 2],
    label: String,
}

#[derive(Serialize)]
struct AnnotationFileOut<'a> {
    database: IndexMap<&'a str, RawVideoOut<'a>>,
}

#[derive(Serialize)]
struct RawVideoOut<'a> {
    duration: f64,
    subset: Subset,
    annotations: Vec<RawInstanceOut<'a>>,
}

#[derive(Serialize)]
struct RawInstanceOut<'a> {
    segment: [f64; 2],
    label: &'a str,
}

/// A JSON object read as an ordered list of entries, keeping duplicate keys
/// so that they can be reported instead of silently overwritten.
pub(crate) struct OrderedEntries<V>(pub(crate) Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for OrderedEntries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = OrderedEntries<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    entries.push((k, v));
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(std::marker::PhantomData))
    }
}
