//! Seeded synthetic scenes: boxes moving at constant velocity, bouncing off
//! the image border, each carrying a fixed identity feature plus noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tracker::Detection;

use super::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    /// 1-based identity as written to the ground truth.
    pub id: u64,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_identities: usize,
    pub frames: usize,
    pub image_width: f64,
    pub image_height: f64,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Box width range; heights are twice the width.
    pub box_min: f64,
    pub box_max: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub occlusions: Vec<Occlusion>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_identities: 20,
            frames: 200,
            image_width: 1920.0,
            image_height: 1080.0,
            speed_min: 1.0,
            speed_max: 6.0,
            box_min: 30.0,
            box_max: 60.0,
            feature_dim: 32,
            feature_noise: 0.01,
            occlusions: Vec::new(),
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.feature_noise >= 0.0) {
            return bad("feature_noise must be non-negative");
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return bad("speed range must satisfy 0 <= speed_min <= speed_max");
        }
        if !(0.0 < self.box_min && self.box_min <= self.box_max) {
            return bad("box range must satisfy 0 < box_min <= box_max");
        }
        if self.image_width <= 2.0 * self.box_max || self.image_height <= 4.0 * self.box_max {
            return bad("image is too small for the box range");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self
            .occlusions
            .iter()
            .any(|o| o.id == 0 || o.id as usize > self.num_identities)
        {
            return bad("occlusion ids must lie in 1..=num_identities");
        }
        Ok(())
    }

    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: SceneConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Agent {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    w: f64,
    feature: Vec<f64>,
}

/// Reflects `p` moving at `v` back into `[lo, hi]`.
fn bounce(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    *p += *v;
    if *p < lo {
        *p = 2.0 * lo - *p;
        *v = -*v;
    } else if *p > hi {
        *p = 2.0 * hi - *p;
        *v = -*v;
    }
}

fn occluded(cfg: &SceneConfig, id: u64, frame: usize) -> bool {
    cfg.occlusions
        .iter()
        .any(|o| o.id == id && frame >= o.start && frame < o.start + o.duration)
}

/// Ground truth holds every identity in every frame; detections drop
/// occluded identities and a `dropout` fraction of the rest.
pub fn synthesize_scene(cfg: &SceneConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents: Vec<Agent> = (0..cfg.num_identities)
        .map(|_| {
            let w = rng.gen_range(cfg.box_min..=cfg.box_max);
            let speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            Agent {
                cx: rng.gen_range(w / 2.0..=cfg.image_width - w / 2.0),
                cy: rng.gen_range(w..=cfg.image_height - w),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                w,
                feature: (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            }
        })
        .collect();
    let noise = Normal::new(0.0, cfg.feature_noise).expect("validated noise");

    let mut seq = Sequence::with_frames(cfg.frames);
    for frame in 1..=cfg.frames {
        for (k, a) in agents.iter().enumerate() {
            let id = k as u64 + 1;
            let bbox = BBox::new(a.cx, a.cy, a.w, 2.0 * a.w);
            seq.annotations[frame - 1].entries.push((id, bbox));
            // draw unconditionally so the stream does not depend on occlusions
            let feature: Vec<f64> = a.feature.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let dropped = rng.gen::<f64>() < cfg.dropout;
            if !dropped && !occluded(cfg, id, frame) {
                seq.detections[frame - 1].push(Detection::with_feature(bbox, feature));
            }
        }
        for a in &mut agents {
            bounce(&mut a.cx, &mut a.vx, a.w / 2.0, cfg.image_width - a.w / 2.0);
            bounce(&mut a.cy, &mut a.vy, a.w, cfg.image_height - a.w);
        }
    }
    Ok(seq)
}
