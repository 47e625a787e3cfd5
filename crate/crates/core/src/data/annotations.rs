//! Dataset annotation file.
//!
//! ```json
//! {
//!   "classes": ["CliffDiving", "Diving"],
//!   "videos": {
//!     "video_001": {
//!       "duration_s": 31.2, "fps": 25.0, "snippet_frames": 16, "subset": "test",
//!       "labels": ["Diving"],
//!       "instances": [[3.1, 7.4, "Diving"]]
//!     }
//!   }
//! }
//! ```
//!
//! Class ids are positions in `classes`. `subset` and `instances` are optional.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionInstance, VideoLabel, DEFAULT_FPS, DEFAULT_SNIPPET_FRAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub classes: Vec<String>,
    pub videos: BTreeMap<String, VideoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub duration_s: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_snippet_frames")]
    pub snippet_frames: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<Vec<(f64, f64, String)>>,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

fn default_snippet_frames() -> u32 {
    DEFAULT_SNIPPET_FRAMES
}

/// Metadata and (optional) ground truth for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub snippet_frames: u32,
    pub subset: Option<String>,
    pub label: VideoLabel,
    pub instances: Option<Vec<ActionInstance>>,
}

impl VideoRecord {
    /// Seconds covered by one snippet.
    pub fn snippet_seconds(&self) -> f64 {
        f64::from(self.snippet_frames) / self.fps
    }
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("annotations serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Resolves class names and checks every entry.
    pub fn records(&self) -> Result<Vec<VideoRecord>> {
        let num_classes = self.classes.len();
        let resolve = |video_id: &str, name: &str| {
            self.class_id(name).ok_or_else(|| Error::Load {
                video_id: video_id.to_string(),
                reason: format!("unknown class name `{name}`"),
            })
        };
        self.videos
            .iter()
            .map(|(video_id, entry)| {
                let invalid = |reason: String| Error::Load { video_id: video_id.clone(), reason };
                if !(entry.duration_s > 0.0) {
                    return Err(invalid(format!("duration {} is not positive", entry.duration_s)));
                }
                if !(entry.fps > 0.0) || entry.snippet_frames == 0 {
                    return Err(invalid("fps and snippet_frames must be positive".into()));
                }
                let ids = entry
                    .labels
                    .iter()
                    .map(|n| resolve(video_id, n))
                    .collect::<Result<Vec<_>>>()?;
                let label = VideoLabel::new(ids, num_classes)?;
                let instances = match &entry.instances {
                    None => None,
                    Some(list) => Some(
                        list.iter()
                            .map(|(s, e, name)| {
                                let inst = ActionInstance::new(*s, *e, resolve(video_id, name)?, num_classes)
                                    .map_err(|err| invalid(err.to_string()))?;
                                if inst.end_s > entry.duration_s + 1e-6 {
                                    return Err(invalid(format!(
                                        "instance [{s}, {e}] exceeds duration {}",
                                        entry.duration_s
                                    )));
                                }
                                Ok(inst)
                            })
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };
                Ok(VideoRecord {
                    video_id: video_id.clone(),
                    duration_s: entry.duration_s,
                    fps: entry.fps,
                    snippet_frames: entry.snippet_frames,
                    subset: entry.subset.clone(),
                    label,
                    instances,
                })
            })
            .collect()
    }

    pub fn from_records(classes: Vec<String>, records: &[VideoRecord]) -> Self {
        let videos = records
            .iter()
            .map(|r| {
                let entry = VideoEntry {
                    duration_s: r.duration_s,
                    fps: r.fps,
                    snippet_frames: r.snippet_frames,
                    subset: r.subset.clone(),
                    labels: r.label.class_ids.iter().map(|&c| classes[c].clone()).collect(),
                    instances: r.instances.as_ref().map(|list| {
                        list.iter()
                            .map(|i| (i.start_s, i.end_s, classes[i.class_id].clone()))
                            .collect()
                    }),
                };
                (r.video_id.clone(), entry)
            })
            .collect();
        AnnotationFile { classes, videos }
    }
}
