//! CLEAR MOT scoring (MOTA, ID switches) and identity F1.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Identified boxes of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub frame: usize,
    pub entries: Vec<(u64, BBox)>,
}

impl FrameAnnotations {
    pub fn new(frame: usize, entries: Vec<(u64, BBox)>) -> Self {
        FrameAnnotations { frame, entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mota: f64,
    pub idf1: f64,
    pub ids: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gt: usize,
    pub matches: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mota,idf1,ids,fp,fn,gt,matches";

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mota, self.idf1, self.ids, self.fp, self.fn_, self.gt, self.matches
        )
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let h = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn by_frame(frames: &[FrameAnnotations]) -> BTreeMap<usize, &[(u64, BBox)]> {
    frames.iter().map(|f| (f.frame, f.entries.as_slice())).collect()
}

/// Maximum-IoU matching restricted to pairs at or above `thr`.
fn match_frame(gt: &[&BBox], pred: &[&BBox], thr: f64) -> Vec<(usize, usize)> {
    if gt.is_empty() || pred.is_empty() {
        return Vec::new();
    }
    // a forbidden pair costs more than any set of allowed pairs can gain
    let forbid = -((gt.len().min(pred.len()) + 1) as f64);
    let scores = Matrix::from_fn(gt.len(), pred.len(), |i, j| {
        let v = iou(gt[i], pred[j]);
        if v >= thr {
            v
        } else {
            forbid
        }
    });
    hungarian(&scores, true)
        .pairs()
        .filter(|&(i, j)| scores[(i, j)] >= thr)
        .collect()
}

/// Scores `pred` against `gt`, frames paired by index.
///
/// Per frame, correspondences from earlier frames are kept while they still
/// overlap by `iou_thr`; the rest are matched by maximum total IoU. A ground
/// truth whose matched prediction id differs from its previous one counts as
/// an identity switch.
pub fn clear_mot(gt: &[FrameAnnotations], pred: &[FrameAnnotations], iou_thr: f64) -> Result<MetricsReport> {
    let gt_frames = by_frame(gt);
    let pred_frames = by_frame(pred);
    let total_gt: usize = gt.iter().map(|f| f.entries.len()).sum();
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let total_pred: usize = pred.iter().map(|f| f.entries.len()).sum();

    let mut frames: Vec<usize> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();

    let mut last: HashMap<u64, u64> = HashMap::new();
    let (mut fp, mut fn_, mut ids, mut matches) = (0usize, 0usize, 0usize, 0usize);
    let mut overlap: HashMap<(u64, u64), usize> = HashMap::new();

    for f in frames {
        let g = gt_frames.get(&f).copied().unwrap_or(&[]);
        let p = pred_frames.get(&f).copied().unwrap_or(&[]);

        for (gid, gb) in g {
            for (pid, pb) in p {
                if iou(gb, pb) >= iou_thr {
                    *overlap.entry((*gid, *pid)).or_default() += 1;
                }
            }
        }

        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut frame_pairs = Vec::new();

        // continuity
        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(&pid) = last.get(gid) else { continue };
            if let Some(pj) = p.iter().position(|(id, _)| *id == pid) {
                if !p_used[pj] && iou(gb, &p[pj].1) >= iou_thr {
                    g_used[gi] = true;
                    p_used[pj] = true;
                    frame_pairs.push((gi, pj));
                }
            }
        }

        let g_free: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let p_free: Vec<usize> = (0..p.len()).filter(|&j| !p_used[j]).collect();
        let gb: Vec<&BBox> = g_free.iter().map(|&i| &g[i].1).collect();
        let pb: Vec<&BBox> = p_free.iter().map(|&j| &p[j].1).collect();
        for (a, b) in match_frame(&gb, &pb, iou_thr) {
            let (gi, pj) = (g_free[a], p_free[b]);
            g_used[gi] = true;
            p_used[pj] = true;
            frame_pairs.push((gi, pj));
        }

        for (gi, pj) in frame_pairs {
            let (gid, pid) = (g[gi].0, p[pj].0);
            if let Some(&prev) = last.get(&gid) {
                if prev != pid {
                    ids += 1;
                }
            }
            last.insert(gid, pid);
            matches += 1;
        }
        fn_ += g_used.iter().filter(|u| !**u).count();
        fp += p_used.iter().filter(|u| !**u).count();
    }

    let idf1 = identity_f1(&overlap, total_gt, total_pred);
    Ok(MetricsReport {
        mota: 1.0 - (fn_ + fp + ids) as f64 / total_gt as f64,
        idf1,
        ids,
        fp,
        fn_,
        gt: total_gt,
        matches,
    })
}

/// `2·IDTP / (#gt + #pred)` with IDTP from the best one-to-one pairing of
/// ground-truth and predicted identities by co-detected frame count.
fn identity_f1(overlap: &HashMap<(u64, u64), usize>, total_gt: usize, total_pred: usize) -> f64 {
    let mut gids: Vec<u64> = overlap.keys().map(|k| k.0).collect();
    let mut pids: Vec<u64> = overlap.keys().map(|k| k.1).collect();
    gids.sort_unstable();
    gids.dedup();
    pids.sort_unstable();
    pids.dedup();
    let counts = Matrix::from_fn(gids.len(), pids.len(), |i, j| {
        overlap.get(&(gids[i], pids[j])).copied().unwrap_or(0) as f64
    });
    let idtp = hungarian(&counts, true).objective;
    if total_gt + total_pred == 0 {
        return 0.0;
    }
    2.0 * idtp / (total_gt + total_pred) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64) -> BBox {
        BBox::new(cx, cy, 10.0, 10.0)
    }

    fn two_tracks(frames: usize) -> Vec<FrameAnnotations> {
        (1..=frames)
            .map(|f| {
                let t = f as f64;
                FrameAnnotations::new(f, vec![(1, b(10.0 + t, 10.0)), (2, b(100.0 - t, 50.0))])
            })
            .collect()
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        // half overlap: 0.5 / (1 + 1 - 0.5)
        assert!((iou(&a, &BBox::new(1.0, 0.5, 1.0, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction() {
        let gt = two_tracks(10);
        let r = clear_mot(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.idf1, r.ids, r.fp, r.fn_, r.gt), (1.0, 1.0, 0, 0, 0, 20));
    }

    #[test]
    fn swap_halfway_counts_two_switches() {
        let gt = two_tracks(10);
        let pred: Vec<FrameAnnotations> = gt
            .iter()
            .map(|f| {
                let swap = f.frame > 5;
                FrameAnnotations::new(
                    f.frame,
                    f.entries
                        .iter()
                        .map(|&(id, bb)| (if swap { 3 - id } else { id }, bb))
                        .collect(),
                )
            })
            .collect();
        let r = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.ids, 2);
        assert!((r.mota - 0.9).abs() < 1e-15);
        // best identity pairing keeps 5 of 10 frames per track
        assert!((r.idf1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_miss() {
        let gt = two_tracks(10);
        let mut pred = gt.clone();
        pred[3].entries.remove(0);
        let r = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!((r.fn_, r.fp, r.ids), (1, 0, 0));
        assert!((r.mota - 0.95).abs() < 1e-15);
        assert!(r.idf1 < 1.0);
    }

    #[test]
    fn relabeling_and_removal() {
        let gt = two_tracks(6);
        let relabeled: Vec<FrameAnnotations> = gt
            .iter()
            .map(|f| FrameAnnotations::new(f.frame, f.entries.iter().map(|&(id, bb)| (id * 7 + 40, bb)).collect()))
            .collect();
        let base = clear_mot(&gt, &gt, 0.5).unwrap();
        let r = clear_mot(&gt, &relabeled, 0.5).unwrap();
        assert_eq!(r, base);

        let mut fewer = gt.clone();
        fewer[2].entries.pop();
        assert!(clear_mot(&gt, &fewer, 0.5).unwrap().mota < base.mota);
    }

    #[test]
    fn false_positives_and_extra_frames() {
        let gt = two_tracks(3);
        let mut pred = gt.clone();
        pred[0].entries.push((9, b(500.0, 500.0)));
        pred.push(FrameAnnotations::new(4, vec![(1, b(0.0, 0.0))]));
        let r = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(r.fp, 2);
        assert!((r.mota - (1.0 - 2.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn continuity_beats_better_overlap() {
        // frame 2: prediction 8 overlaps gt 1 more, but 7 kept matching
        let gt = vec![
            FrameAnnotations::new(1, vec![(1, b(0.0, 0.0))]),
            FrameAnnotations::new(2, vec![(1, b(0.0, 0.0))]),
        ];
        let pred = vec![
            FrameAnnotations::new(1, vec![(7, b(0.0, 0.0))]),
            FrameAnnotations::new(2, vec![(7, b(1.0, 0.0)), (8, b(0.0, 0.0))]),
        ];
        let r = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!((r.ids, r.fp), (0, 1));
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(matches!(clear_mot(&[], &[], 0.5), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn serializes() {
        let r = clear_mot(&two_tracks(2), &two_tracks(2), 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["mota"], 1.0);
        assert_eq!(v["fn"], 0);
        assert_eq!(r.to_csv_line(), "1,1,0,0,0,4,4");
    }
}
