//! MOTChallenge text files.
//!
//! Lines are `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`. The
//! trailing `conf,x,y,z` fields are optional. Any fields past the tenth are
//! read as an appearance feature for that detection.

use std::fmt::Write as _;
use std::path::Path;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::metrics::FrameAnnotations;
use crate::tracker::Detection;

use super::Sequence;

const STANDARD_FIELDS: usize = 10;

struct Row {
    frame: usize,
    id: i64,
    bbox: BBox,
    feature: Option<Vec<f64>>,
}

fn parse_line(line: &str, lineno: usize) -> Result<Row> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 6 {
        return Err(err(format!("expected at least 6 fields, found {}", fields.len())));
    }
    let num = |k: usize| -> Result<f64> {
        let v: f64 = fields[k]
            .parse()
            .map_err(|_| err(format!("field {} is not a number: {:?}", k + 1, fields[k])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(format!("field {} is not finite", k + 1)))
        }
    };
    let frame = num(0)?;
    if frame < 1.0 || frame.fract() != 0.0 {
        return Err(err(format!("frame must be a positive integer, got {}", fields[0])));
    }
    let id = num(1)?;
    if id.fract() != 0.0 {
        return Err(err(format!("id must be an integer, got {}", fields[1])));
    }
    let (w, h) = (num(4)?, num(5)?);
    if w <= 0.0 || h <= 0.0 {
        return Err(err("box width and height must be positive".into()));
    }
    let conf = if fields.len() > 6 { num(6)? } else { 1.0 };
    for k in 7..fields.len().min(STANDARD_FIELDS) {
        num(k)?;
    }
    let feature = if fields.len() > STANDARD_FIELDS {
        Some((STANDARD_FIELDS..fields.len()).map(num).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    Ok(Row {
        frame: frame as usize,
        id: id as i64,
        bbox: BBox::from_tlwh(num(2)?, num(3)?, w, h).with_score(conf),
        feature,
    })
}

pub fn parse_mot_str(text: &str) -> Result<Sequence> {
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_line(line, k + 1)?);
    }
    let frames = rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let mut seq = Sequence::with_frames(frames);
    for r in rows {
        let k = r.frame - 1;
        if r.id >= 0 {
            seq.annotations[k].entries.push((r.id as u64, r.bbox));
        }
        seq.detections[k].push(Detection {
            bbox: r.bbox,
            feature: r.feature,
        });
    }
    Ok(seq)
}

/// Every row becomes a detection; rows with a non-negative id are also
/// ground truth for their frame.
pub fn parse_mot_file(path: impl AsRef<Path>) -> Result<Sequence> {
    parse_mot_str(&std::fs::read_to_string(path)?)
}

fn push_box(out: &mut String, frame: usize, id: i64, b: &BBox, conf: f64) {
    let _ = write!(
        out,
        "{},{},{},{},{},{},{},-1,-1,-1",
        frame,
        id,
        b.left(),
        b.top(),
        b.w,
        b.h,
        conf
    );
}

/// One line per identified box with `conf = 1`.
pub fn format_tracks(frames: &[FrameAnnotations]) -> String {
    let mut out = String::new();
    for f in frames {
        for (id, b) in &f.entries {
            push_box(&mut out, f.frame, *id as i64, b, 1.0);
            out.push('\n');
        }
    }
    out
}

/// One line per detection with `id = -1`, the detection score as `conf` and
/// the feature, if any, appended.
pub fn format_detections(detections: &[Vec<Detection>]) -> String {
    let mut out = String::new();
    for (k, dets) in detections.iter().enumerate() {
        for d in dets {
            push_box(&mut out, k + 1, -1, &d.bbox, d.bbox.score);
            for v in d.feature.iter().flatten() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Writes the sequence's ground truth as tracked output.
pub fn write_mot_file(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, format_tracks(&seq.annotations).as_bytes())
}

pub fn write_detections_file(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, format_detections(&seq.detections).as_bytes())
}
