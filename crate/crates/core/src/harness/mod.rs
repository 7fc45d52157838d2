//! Sequences, their file formats, synthetic scenes and the end-to-end
//! tracking run.

mod mot;
mod scene;

pub use mot::{format_detections, format_tracks, parse_mot_file, parse_mot_str, write_detections_file, write_mot_file};
pub use scene::{synthesize_scene, Occlusion, SceneConfig};

use crate::attention::PipelineWeights;
use crate::bbox::BBox;
use crate::error::Result;
use crate::metrics::FrameAnnotations;
use crate::scalar::Scalar;
use crate::tracker::{Detection, StepReport, Tracker, TrackerConfig};

/// Per-frame detections and ground truth. Index `k` is frame `k + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequence {
    pub detections: Vec<Vec<Detection>>,
    pub annotations: Vec<FrameAnnotations>,
}

impl Sequence {
    pub fn with_frames(frames: usize) -> Self {
        Sequence {
            detections: vec![Vec::new(); frames],
            annotations: (1..=frames).map(|f| FrameAnnotations::new(f, Vec::new())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Output of [`track_sequence`].
#[derive(Debug, Clone)]
pub struct TrackRun {
    pub tracks: Vec<FrameAnnotations>,
    /// `(frame, report)` for every processed frame.
    pub reports: Vec<(usize, StepReport)>,
}

/// Runs a fresh tracker over every `tau`-th frame starting at frame 1.
pub fn track_sequence<T: Scalar>(
    seq: &Sequence,
    weights: &PipelineWeights<T>,
    config: &TrackerConfig,
) -> Result<TrackRun> {
    weights.validate()?;
    let mut tracker = Tracker::new(config.clone())?;
    let mut run = TrackRun {
        tracks: Vec::new(),
        reports: Vec::new(),
    };
    for k in (0..seq.len()).step_by(config.tau) {
        let frame = k + 1;
        let report = tracker.step(&seq.detections[k], weights)?;
        let entries = report.tracks.iter().map(|t| (t.id, t.bbox)).collect();
        run.tracks.push(FrameAnnotations::new(frame, entries));
        run.reports.push((frame, report));
    }
    Ok(run)
}

/// Matches whose detection lies farther from its tracklet than the masking
/// threshold allows, as `(frame, detection)`. Empty for a correct tracker.
pub fn distance_mask_violations(seq: &Sequence, run: &TrackRun, alpha: f64) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for (frame, report) in &run.reports {
        let dets = &seq.detections[frame - 1];
        for m in &report.matches {
            let b: &BBox = &dets[m.detection].bbox;
            let nearest = report
                .key_boxes
                .iter()
                .map(|k| b.center_distance(k))
                .fold(f64::INFINITY, f64::min);
            if b.center_distance(&m.anchor) > nearest + alpha * b.w.min(b.h) {
                bad.push((*frame, m.detection));
            }
        }
    }
    bad
}
