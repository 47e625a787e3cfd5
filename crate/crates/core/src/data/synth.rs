//! Seeded synthetic datasets with exact ground truth.
//!
//! Every class owns a random unit direction in feature space. Instance snippets sit at
//! `separation` along their class direction, context flanks around each instance at
//! `separation / 2`, background snippets at the origin, all plus isotropic Gaussian noise.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::annotations::VideoRecord;
use super::features::SnippetFeatureSequence;
use super::Dataset;
use crate::error::{ensure, Result};
use crate::types::{ActionInstance, VideoLabel, DEFAULT_FPS, DEFAULT_SNIPPET_FRAMES};

pub const TRAIN_SUBSET: &str = "train";
pub const TEST_SUBSET: &str = "test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub num_test_videos: usize,
    pub num_classes: usize,
    /// Per-stream width `D`; files hold `2D` columns.
    pub feature_dim: usize,
    pub native_len: [usize; 2],
    pub instances_per_video: [usize; 2],
    pub instance_len: [usize; 2],
    pub context_len: [usize; 2],
    pub max_classes_per_video: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    pub fps: f64,
    pub snippet_frames: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 60,
            num_test_videos: 20,
            num_classes: 5,
            feature_dim: 32,
            native_len: [60, 120],
            instances_per_video: [1, 3],
            instance_len: [6, 16],
            context_len: [3, 6],
            max_classes_per_video: 1,
            separation: 2.0,
            noise: 0.5,
            seed: 0,
            fps: DEFAULT_FPS,
            snippet_frames: DEFAULT_SNIPPET_FRAMES,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_videos + self.num_test_videos >= 1, Validation, "no videos requested");
        ensure!(self.num_classes >= 1 && self.feature_dim >= 1, Validation, "empty class or feature space");
        ensure!(self.separation > 0.0, Validation, "separation must be positive");
        ensure!(self.noise >= 0.0, Validation, "noise must be non-negative");
        ensure!(self.fps > 0.0 && self.snippet_frames > 0, Validation, "bad frame rate");
        for (name, [lo, hi]) in [
            ("native_len", self.native_len),
            ("instances_per_video", self.instances_per_video),
            ("instance_len", self.instance_len),
            ("context_len", self.context_len),
        ] {
            ensure!(lo <= hi, Validation, "{name} range is inverted");
        }
        ensure!(self.native_len[0] >= 1, Validation, "native_len must be >= 1");
        ensure!(self.instances_per_video[0] >= 1, Validation, "every video needs an instance");
        ensure!(self.instance_len[0] >= 1, Validation, "instances need at least one snippet");
        ensure!(self.max_classes_per_video >= 1, Validation, "max_classes_per_video must be >= 1");
        Ok(())
    }

    fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class_{c:02}")).collect()
    }
}

fn sample_range<R: Rng>(rng: &mut R, [lo, hi]: [usize; 2]) -> usize {
    rng.gen_range(lo..=hi)
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    context_left: usize,
    start: usize,
    end: usize,
    context_right: usize,
    class_id: usize,
}

/// Generates the full dataset (train videos first, then test videos).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = 2 * spec.feature_dim;
    let directions: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let snippet_seconds = f64::from(spec.snippet_frames) / spec.fps;
    let total = spec.num_videos + spec.num_test_videos;
    let mut videos = Vec::with_capacity(total);
    for index in 0..total {
        let subset = if index < spec.num_videos { TRAIN_SUBSET } else { TEST_SUBSET };
        let video_id = format!("video_{index:04}");

        let mut classes: Vec<usize> = (0..spec.num_classes).collect();
        classes.shuffle(&mut rng);
        let num_video_classes = rng.gen_range(1..=spec.max_classes_per_video.min(spec.num_classes));
        classes.truncate(num_video_classes);

        let count = sample_range(&mut rng, spec.instances_per_video).max(num_video_classes);
        let blocks: Vec<(usize, usize, usize, usize)> = (0..count)
            .map(|i| {
                let cls = if i < num_video_classes { classes[i] } else { classes[rng.gen_range(0..num_video_classes)] };
                (
                    sample_range(&mut rng, spec.context_len),
                    sample_range(&mut rng, spec.instance_len),
                    sample_range(&mut rng, spec.context_len),
                    cls,
                )
            })
            .collect();
        let needed: usize = blocks.iter().map(|(l, n, r, _)| l + n + r).sum();
        let native_len = sample_range(&mut rng, spec.native_len).max(needed);

        // Split the free snippets into count + 1 gaps.
        let free = native_len - needed;
        let mut cuts: Vec<usize> = (0..count).map(|_| rng.gen_range(0..=free)).collect();
        cuts.sort_unstable();
        let mut placements = Vec::with_capacity(count);
        let mut cursor = 0;
        let mut prev_cut = 0;
        for (&(cl, n, cr, class_id), &cut) in blocks.iter().zip(&cuts) {
            cursor += cut - prev_cut;
            prev_cut = cut;
            let start = cursor + cl;
            placements.push(Placement {
                context_left: cursor,
                start,
                end: start + n,
                context_right: start + n + cr,
                class_id,
            });
            cursor += cl + n + cr;
        }

        let mut features = Array2::<f32>::zeros((native_len, width));
        for (t, mut row) in features.outer_iter_mut().enumerate() {
            let mean = placements.iter().find_map(|p| {
                if (p.start..p.end).contains(&t) {
                    Some((p.class_id, spec.separation))
                } else if (p.context_left..p.context_right).contains(&t) {
                    Some((p.class_id, spec.separation / 2.0))
                } else {
                    None
                }
            });
            for (c, v) in row.iter_mut().enumerate() {
                let offset = mean.map_or(0.0, |(cls, scale)| scale * directions[cls][c]);
                let noise: f64 = if spec.noise > 0.0 { rng.sample::<f64, _>(StandardNormal) * spec.noise } else { 0.0 };
                *v = (offset + noise) as f32;
            }
        }

        let instances = placements
            .iter()
            .map(|p| {
                ActionInstance::new(
                    p.start as f64 * snippet_seconds,
                    p.end as f64 * snippet_seconds,
                    p.class_id,
                    spec.num_classes,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let record = VideoRecord {
            video_id: video_id.clone(),
            duration_s: native_len as f64 * snippet_seconds,
            fps: spec.fps,
            snippet_frames: spec.snippet_frames,
            subset: Some(subset.to_string()),
            label: VideoLabel::new(classes.iter().copied(), spec.num_classes)?,
            instances: Some(instances),
        };
        videos.push((SnippetFeatureSequence::new(video_id, features)?, record));
    }
    Ok(Dataset { classes: spec.class_names(), videos })
}
