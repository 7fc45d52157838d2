//! Online tracking loop built on the cross-attention association.
//!
//! Each step scores the frame's detections (queries) against the tracklet
//! pool (keys and values), masks geometrically implausible pairs, reads the
//! matching off the affinity matrix and updates the pool. A tracklet stores
//! the refined token of its last matched detection and that token is reused as
//! its key/value next time, so no previous-frame features are recomputed.
//! Unmatched tracklets survive for `rebirth_window` frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::extract_matching;
use crate::attention::{forward_tokens, PipelineWeights, TokenSet, DEFAULT_MAX_INSTANCES};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Appearance feature; a geometry embedding is used when absent.
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BBox) -> Self {
        Detection { bbox, feature: None }
    }

    pub fn with_feature(bbox: BBox, feature: Vec<f64>) -> Self {
        Detection {
            bbox,
            feature: Some(feature),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Frames an unmatched tracklet is kept for.
    pub rebirth_window: usize,
    /// Distance-mask slack as a fraction of the detection's shorter side.
    pub alpha: f64,
    pub match_threshold: f64,
    pub max_instances: usize,
    /// Minimum detection score for starting a new track.
    pub spawn_score: f64,
    /// Frame gap between associated frames.
    pub tau: usize,
    /// Pixels per token-grid cell.
    pub stride: f64,
    /// Normalizers for the geometry embedding.
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            rebirth_window: 30,
            alpha: 0.4,
            match_threshold: 0.3,
            max_instances: DEFAULT_MAX_INSTANCES,
            spawn_score: 0.4,
            tau: 1,
            stride: 4.0,
            image_width: 1920.0,
            image_height: 1080.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(0.0..1.0).contains(&self.match_threshold) {
            return bad("match_threshold must lie in [0, 1)");
        }
        if self.max_instances == 0 {
            return bad("max_instances must be positive");
        }
        if self.tau == 0 {
            return bad("tau must be at least 1");
        }
        if !(self.stride > 0.0) || !(self.image_width > 0.0) || !(self.image_height > 0.0) {
            return bad("stride and image size must be positive");
        }
        Ok(())
    }

    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: TrackerConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrackState {
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet<T> {
    pub id: u64,
    /// Refined token of the last matched detection.
    pub token: Vec<T>,
    pub bbox: BBox,
    /// Steps since the last match.
    pub age: usize,
    pub state: TrackState,
}

/// Stores the refined token of the matched detection and marks the tracklet
/// as freshly seen.
pub fn msm_update<T: Scalar>(tracklet: &Tracklet<T>, refined_row: &[T]) -> Result<Tracklet<T>> {
    if refined_row.len() != tracklet.token.len() {
        return Err(Error::shape(
            "msm_update",
            &[tracklet.token.len()],
            &[refined_row.len()],
        ));
    }
    Ok(Tracklet {
        token: refined_row.to_vec(),
        age: 0,
        state: TrackState::Active,
        ..tracklet.clone()
    })
}

/// `0` where instance `i` may match tracklet `j`, `-inf` otherwise.
///
/// Pair `(i, j)` is masked when its center distance exceeds
/// `min_j d(i, j) + alpha * min(w_i, h_i)`, so every instance keeps at least
/// its nearest tracklet.
pub fn distance_mask<T: Scalar>(boxes_t: &[BBox], boxes_pool: &[BBox], alpha: f64) -> Matrix<T> {
    let mut mask = Matrix::zeros(boxes_t.len(), boxes_pool.len());
    if boxes_pool.is_empty() {
        return mask;
    }
    for (i, b) in boxes_t.iter().enumerate() {
        let dists: Vec<f64> = boxes_pool.iter().map(|p| b.center_distance(p)).collect();
        let th = dists.iter().copied().fold(f64::INFINITY, f64::min) + alpha * b.w.min(b.h);
        for (j, &d) in dists.iter().enumerate() {
            if d > th {
                mask[(i, j)] = T::neg_infinity();
            }
        }
    }
    mask
}

/// Normalized `(cx, cy, w, h)` repeated to fill `dim` channels.
pub fn geometry_embedding(b: &BBox, dim: usize, image_width: f64, image_height: f64) -> Vec<f64> {
    let base = [
        b.cx / image_width,
        b.cy / image_height,
        b.w / image_width,
        b.h / image_height,
    ];
    (0..dim).map(|c| base[c % 4]).collect()
}

/// Token-grid cell of a box center.
fn token_cell(b: &BBox, stride: f64) -> (usize, usize) {
    let snap = |v: f64| {
        let c = (v / stride + 0.5).floor();
        if c > 0.0 {
            c as usize
        } else {
            0
        }
    };
    (snap(b.cx), snap(b.cy))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackOutput {
    /// Index into the step's detection list.
    pub detection: usize,
    pub id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub detection: usize,
    pub id: u64,
    /// Box the tracklet was matched from (its last-seen box).
    pub anchor: BBox,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepReport {
    /// One entry per detection that carries an identity after this step.
    /// Unmatched detections below `spawn_score` are dropped.
    pub tracks: Vec<TrackOutput>,
    pub matches: Vec<MatchRecord>,
    /// Anchor boxes of every tracklet offered as a key this step.
    pub key_boxes: Vec<BBox>,
}

/// Tracklet pool plus identity counter for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker<T> {
    config: TrackerConfig,
    pool: Vec<Tracklet<T>>,
    next_id: u64,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            pool: Vec::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn pool(&self) -> &[Tracklet<T>] {
        &self.pool
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn query_tokens(&self, detections: &[Detection], dim: usize) -> Result<TokenSet<T>> {
        let mut rows = Matrix::zeros(detections.len(), dim);
        let mut positions = Vec::with_capacity(detections.len());
        for (i, det) in detections.iter().enumerate() {
            let feat = match &det.feature {
                Some(f) if f.len() != dim => {
                    return Err(Error::shape("detection feature", &[dim], &[f.len()]));
                }
                Some(f) => f.clone(),
                None => geometry_embedding(&det.bbox, dim, self.config.image_width, self.config.image_height),
            };
            for (dst, v) in rows.row_mut(i).iter_mut().zip(feat) {
                *dst = T::of(v);
            }
            positions.push(token_cell(&det.bbox, self.config.stride));
        }
        TokenSet::new(rows, positions)
    }

    /// Pool indices offered as keys: the most recently seen tracklets, at most
    /// `max_instances` of them.
    fn key_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pool.len()).collect();
        idx.sort_by_key(|&k| (self.pool[k].age, self.pool[k].id));
        idx.truncate(self.config.max_instances);
        idx
    }

    pub fn step(&mut self, detections: &[Detection], weights: &PipelineWeights<T>) -> Result<StepReport> {
        let cfg = &self.config;
        if detections.len() > cfg.max_instances {
            return Err(Error::InstanceCap {
                count: detections.len(),
                cap: cfg.max_instances,
            });
        }
        let dim = weights.dim;
        let queries = self.query_tokens(detections, dim)?;
        let keys_idx = self.key_indices();
        let key_boxes: Vec<BBox> = keys_idx.iter().map(|&k| self.pool[k].bbox).collect();

        let mut det_id: Vec<Option<u64>> = vec![None; detections.len()];
        let mut matched_pool = vec![false; self.pool.len()];
        let mut matches = Vec::new();
        let refined;

        if detections.is_empty() || keys_idx.is_empty() {
            refined = queries.rows.clone();
        } else {
            let det_boxes: Vec<BBox> = detections.iter().map(|d| d.bbox).collect();
            let full_mask = distance_mask::<T>(&det_boxes, &key_boxes, cfg.alpha);
            // a tracklet masked against every detection cannot match; leave it
            // out rather than hand the cross-softmax an all -inf column
            let live: Vec<usize> = (0..keys_idx.len())
                .filter(|&c| full_mask.col(c).iter().any(|v| v.is_finite()))
                .collect();
            let mut key_rows = Matrix::zeros(live.len(), dim);
            for (r, &c) in live.iter().enumerate() {
                key_rows.row_mut(r).copy_from_slice(&self.pool[keys_idx[c]].token);
            }
            let key_pos = live.iter().map(|&c| token_cell(&key_boxes[c], cfg.stride)).collect();
            let keys = TokenSet::new(key_rows, key_pos)?;
            let mask = Matrix::from_fn(detections.len(), live.len(), |i, r| full_mask[(i, live[r])]);
            let assoc = forward_tokens(&queries, &keys, weights, Some(&mask))?;
            let matching = extract_matching(&assoc.affinity, T::of(cfg.match_threshold));
            for (i, r) in matching.pairs() {
                let k = keys_idx[live[r]];
                let old = &self.pool[k];
                matches.push(MatchRecord {
                    detection: i,
                    id: old.id,
                    anchor: old.bbox,
                });
                let mut updated = msm_update(old, assoc.refined.row(i))?;
                updated.bbox = detections[i].bbox;
                self.pool[k] = updated;
                matched_pool[k] = true;
                det_id[i] = Some(self.pool[k].id);
            }
            refined = assoc.refined;
        }

        for (t, matched) in self.pool.iter_mut().zip(&matched_pool) {
            if !matched {
                t.age += 1;
                t.state = TrackState::Lost;
            }
        }
        let window = cfg.rebirth_window;
        self.pool.retain(|t| t.age <= window);

        for (i, det) in detections.iter().enumerate() {
            if det_id[i].is_some() || det.bbox.score < cfg.spawn_score {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.pool.push(Tracklet {
                id,
                token: refined.row(i).to_vec(),
                bbox: det.bbox,
                age: 0,
                state: TrackState::Active,
            });
            det_id[i] = Some(id);
        }

        let tracks = det_id
            .iter()
            .enumerate()
            .filter_map(|(i, id)| {
                id.map(|id| TrackOutput {
                    detection: i,
                    id,
                    bbox: detections[i].bbox,
                })
            })
            .collect();
        Ok(StepReport {
            tracks,
            matches,
            key_boxes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG_INF: f64 = f64::NEG_INFINITY;

    fn feature(seed: usize, dim: usize) -> Vec<f64> {
        // distinct, roughly orthogonal unit-scale patterns
        (0..dim)
            .map(|c| ((seed * 7 + 3) as f64 * (c + 1) as f64 * 0.731).sin() * 1.5)
            .collect()
    }

    fn det(cx: f64, cy: f64, seed: usize) -> Detection {
        Detection::with_feature(BBox::new(cx, cy, 30.0, 60.0), feature(seed, 16))
    }

    fn tracker() -> (Tracker<f64>, PipelineWeights<f64>) {
        (
            Tracker::new(TrackerConfig::default()).unwrap(),
            PipelineWeights::association(16),
        )
    }

    #[test]
    fn mask_examples() {
        let inst = BBox::new(10.0, 10.0, 4.0, 6.0);
        let near = BBox::new(13.0, 10.0, 4.0, 4.0);
        let far = BBox::new(10.0, 22.0, 4.0, 4.0);
        let m = distance_mask::<f64>(&[inst], &[near, far], 0.4);
        assert_eq!(m.as_slice(), &[0.0, NEG_INF]);

        let m = distance_mask::<f64>(&[inst], &[far], 0.4);
        assert_eq!(m.as_slice(), &[0.0]);

        let tie = BBox::new(7.0, 10.0, 4.0, 4.0);
        let m = distance_mask::<f64>(&[inst], &[near, tie], 0.4);
        assert_eq!(m.as_slice(), &[0.0, 0.0]);

        assert!(distance_mask::<f64>(&[inst], &[], 0.4).is_empty());
    }

    #[test]
    fn cold_start_assigns_fresh_ids() {
        let (mut t, w) = tracker();
        let r = t
            .step(&[det(100.0, 100.0, 0), det(400.0, 100.0, 1), det(700.0, 300.0, 2)], &w)
            .unwrap();
        let ids: Vec<u64> = r.tracks.iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(t.pool().len(), 3);
        assert!(r.matches.is_empty());
    }

    #[test]
    fn identity_persists() {
        let (mut t, w) = tracker();
        let frame = [det(100.0, 100.0, 0), det(400.0, 100.0, 1)];
        let a = t.step(&frame, &w).unwrap();
        let b = t.step(&frame, &w).unwrap();
        assert_eq!(a.tracks, b.tracks);
        assert_eq!(b.matches.len(), 2);
        assert!(t.pool().iter().all(|tr| tr.age == 0 && tr.state == TrackState::Active));
    }

    #[test]
    fn identity_persists_when_order_and_position_change() {
        let (mut t, w) = tracker();
        t.step(&[det(100.0, 100.0, 0), det(400.0, 100.0, 1)], &w).unwrap();
        let r = t.step(&[det(405.0, 102.0, 1), det(103.0, 99.0, 0)], &w).unwrap();
        let ids: Vec<u64> = r.tracks.iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![1, 0]);
    }

    fn occlusion_run(gap: usize) -> (u64, u64) {
        let (mut t, w) = tracker();
        let first = t.step(&[det(300.0, 300.0, 4), det(1200.0, 600.0, 5)], &w).unwrap();
        let id = first.tracks[0].id;
        for _ in 0..gap {
            t.step(&[det(1200.0, 600.0, 5)], &w).unwrap();
        }
        let back = t.step(&[det(302.0, 301.0, 4), det(1200.0, 600.0, 5)], &w).unwrap();
        (id, back.tracks[0].id)
    }

    #[test]
    fn rebirth_boundary() {
        let (before, after) = occlusion_run(30);
        assert_eq!(before, after);
        let (before, after) = occlusion_run(31);
        assert_ne!(before, after);
        assert_eq!(after, 2);
    }

    #[test]
    fn pool_never_holds_expired_tracklets() {
        let (mut t, w) = tracker();
        t.step(&[det(100.0, 100.0, 0)], &w).unwrap();
        for k in 1..=31 {
            t.step(&[], &w).unwrap();
            let expected = usize::from(k <= 30);
            assert_eq!(t.pool().len(), expected);
            if let Some(tr) = t.pool().first() {
                assert_eq!(tr.age, k);
                assert_eq!(tr.state, TrackState::Lost);
            }
        }
    }

    #[test]
    fn msm_stores_refined_token_and_reuses_it_as_key() {
        let (mut t, w) = tracker();
        let frame = [det(100.0, 100.0, 0), det(400.0, 100.0, 1)];
        t.step(&frame, &w).unwrap();
        // second step: stored tokens are refined rows, not raw features
        t.step(&frame, &w).unwrap();
        let stored: Vec<Vec<f64>> = t.pool().iter().map(|tr| tr.token.clone()).collect();
        assert_ne!(stored[0], frame[0].feature.clone().unwrap());

        // recompute the second step by hand from the stored first-step tokens
        let (mut t2, _) = tracker();
        t2.step(&frame, &w).unwrap();
        let keys_before: Vec<Vec<f64>> = t2.pool().iter().map(|tr| tr.token.clone()).collect();
        let q = t2.query_tokens(&frame, 16).unwrap();
        let key_rows = Matrix::from_rows(&keys_before).unwrap();
        let keys = TokenSet::new(key_rows, q.positions.clone()).unwrap();
        let mask = distance_mask::<f64>(
            &frame.iter().map(|d| d.bbox).collect::<Vec<_>>(),
            &frame.iter().map(|d| d.bbox).collect::<Vec<_>>(),
            0.4,
        );
        let assoc = forward_tokens(&q, &keys, &w, Some(&mask)).unwrap();
        t2.step(&frame, &w).unwrap();
        for (k, tr) in t2.pool().iter().enumerate() {
            assert_eq!(tr.token.as_slice(), assoc.refined.row(k));
        }
    }

    #[test]
    fn msm_update_examples() {
        let tr = Tracklet {
            id: 3,
            token: vec![1.0, 2.0],
            bbox: BBox::new(1.0, 1.0, 1.0, 1.0),
            age: 4,
            state: TrackState::Lost,
        };
        let same = msm_update(&tr, &[1.0, 2.0]).unwrap();
        assert_eq!(
            same,
            Tracklet {
                age: 0,
                state: TrackState::Active,
                ..tr.clone()
            }
        );
        let new = msm_update(&tr, &[5.0, 6.0]).unwrap();
        assert_eq!(new.token, vec![5.0, 6.0]);
        assert!(msm_update(&tr, &[1.0]).is_err());
    }

    #[test]
    fn unmatched_tracklets_keep_their_token() {
        let (mut t, w) = tracker();
        t.step(&[det(100.0, 100.0, 0), det(900.0, 500.0, 1)], &w).unwrap();
        let before = t.pool()[1].token.clone();
        t.step(&[det(101.0, 100.0, 0)], &w).unwrap();
        assert_eq!(t.pool()[1].token, before);
        assert_eq!(t.pool()[1].age, 1);
    }

    #[test]
    fn spawn_threshold_and_instance_cap() {
        let (mut t, w) = tracker();
        let mut weak = det(100.0, 100.0, 0);
        weak.bbox.score = 0.1;
        let r = t.step(&[weak, det(500.0, 100.0, 1)], &w).unwrap();
        assert_eq!(r.tracks.len(), 1);
        assert_eq!(r.tracks[0].detection, 1);

        let cfg = TrackerConfig {
            max_instances: 1,
            ..Default::default()
        };
        let mut t = Tracker::<f64>::new(cfg).unwrap();
        assert!(matches!(
            t.step(&[det(1.0, 1.0, 0), det(2.0, 2.0, 1)], &w),
            Err(Error::InstanceCap { .. })
        ));
    }

    #[test]
    fn key_set_is_capped_to_most_recent() {
        let cfg = TrackerConfig {
            max_instances: 2,
            ..Default::default()
        };
        let mut t = Tracker::<f64>::new(cfg).unwrap();
        let w = PipelineWeights::association(16);
        t.step(&[det(100.0, 100.0, 0), det(500.0, 100.0, 1)], &w).unwrap();
        t.step(&[det(100.0, 100.0, 0)], &w).unwrap();
        t.step(&[det(100.0, 100.0, 0), det(900.0, 600.0, 2)], &w).unwrap();
        // pool: id0 (age 0), id1 (age 2), id2 (age 0); keys are ids 0 and 2
        let r = t.step(&[det(100.0, 100.0, 0)], &w).unwrap();
        assert_eq!(r.key_boxes.len(), 2);
        assert!(r.key_boxes.iter().all(|b| b.cx != 500.0));
    }

    #[test]
    fn bare_detections_use_geometry() {
        let (mut t, w) = tracker();
        let a = Detection::new(BBox::new(100.0, 100.0, 30.0, 60.0));
        let b = Detection::new(BBox::new(800.0, 400.0, 30.0, 60.0));
        t.step(&[a.clone(), b.clone()], &w).unwrap();
        let r = t.step(&[b, a], &w).unwrap();
        let ids: Vec<u64> = r.tracks.iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![1, 0]);
        let bad = Detection::with_feature(BBox::new(1.0, 1.0, 1.0, 1.0), vec![0.0; 3]);
        assert!(t.step(&[bad], &w).is_err());
    }

    #[test]
    fn config_validation_and_files() {
        assert!(TrackerConfig {
            alpha: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            match_threshold: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            tau: 0,
            ..Default::default()
        }
        .validate()
        .is_err());

        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "rebirth_window = 10\nalpha = 0.5\n").unwrap();
        let c = TrackerConfig::load(&toml_path).unwrap();
        assert_eq!((c.rebirth_window, c.alpha, c.max_instances), (10, 0.5, 300));

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"match_threshold": 0.5, "spawn_score": 0.2}"#).unwrap();
        let c = TrackerConfig::load(&json_path).unwrap();
        assert_eq!((c.match_threshold, c.spawn_score, c.tau), (0.5, 0.2, 1));

        std::fs::write(&toml_path, "bogus = 1\n").unwrap();
        assert!(TrackerConfig::load(&toml_path).is_err());
    }
}
