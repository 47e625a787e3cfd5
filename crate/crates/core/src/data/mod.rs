//! Feature/annotation ingestion, resampling and synthetic data.

pub mod annotations;
pub mod features;
pub mod resample;
pub mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use annotations::{AnnotationFile, VideoEntry, VideoRecord};
pub use features::SnippetFeatureSequence;
pub use resample::{resample_to_t, GridMap, ResampleMode};
pub use synth::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

pub const ANNOTATION_FILE: &str = "annotations.json";
pub const FEATURE_DIR: &str = "features";

/// Immutable list of (features, record) pairs plus the class vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub videos: Vec<(SnippetFeatureSequence, VideoRecord)>,
}

pub fn feature_path(feature_dir: &Path, video_id: &str) -> PathBuf {
    feature_dir.join(format!("{video_id}.{}", features::FEATURE_EXTENSION))
}

/// Loads every annotated video. `expected_width` is the `2D` feature width; when
/// `None` all files must merely agree with each other.
pub fn load_dataset(feature_dir: &Path, annotation_file: &Path, expected_width: Option<usize>) -> Result<Dataset> {
    let file = AnnotationFile::load(annotation_file)?;
    let records = file.records()?;
    let videos = records
        .into_par_iter()
        .map(|record| {
            let path = feature_path(feature_dir, &record.video_id);
            if !path.exists() {
                return Err(Error::Load {
                    video_id: record.video_id.clone(),
                    reason: format!("missing feature file {}", path.display()),
                });
            }
            let seq = SnippetFeatureSequence::load(&record.video_id, &path)?;
            Ok((seq, record))
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = expected_width.or_else(|| videos.first().map(|(f, _)| f.width()));
    if let Some(width) = reference {
        if let Some((f, _)) = videos.iter().find(|(f, _)| f.width() != width) {
            return Err(Error::Load {
                video_id: f.video_id.clone(),
                reason: format!("feature dimension mismatch: file has {}, expected {width}", f.width()),
            });
        }
    }
    Ok(Dataset { classes: file.classes, videos })
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Feature width `2D`, if there is at least one video.
    pub fn width(&self) -> Option<usize> {
        self.videos.first().map(|(f, _)| f.width())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Videos whose record carries the given subset tag.
    pub fn subset(&self, name: &str) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            videos: self
                .videos
                .iter()
                .filter(|(_, r)| r.subset.as_deref() == Some(name))
                .cloned()
                .collect(),
        }
    }

    pub fn find(&self, video_id: &str) -> Option<&(SnippetFeatureSequence, VideoRecord)> {
        self.videos.iter().find(|(f, _)| f.video_id == video_id)
    }

    /// Writes `dir/features/<id>.acmf` files and `dir/annotations.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let feature_dir = dir.join(FEATURE_DIR);
        std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        for (seq, _) in &self.videos {
            seq.save(&feature_path(&feature_dir, &seq.video_id))?;
        }
        let records: Vec<VideoRecord> = self.videos.iter().map(|(_, r)| r.clone()).collect();
        AnnotationFile::from_records(self.classes.clone(), &records).save(&dir.join(ANNOTATION_FILE))
    }
}
