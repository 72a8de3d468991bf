//! Synthetic scenes of star-shaped objects on a noisy background.
//!
//! Every object is star-shaped around its centre with a radial signed
//! distance `sd(p) = r(angle) - |p - centre|`, positive inside. A pixel
//! belongs to the object with the largest `sd >= 0`, so touching objects
//! split along the curve where their signed distances agree. Intensities use
//! a logistic edge profile centred on `sd = 0`, which keeps the mid-level
//! between object and background exactly on the true outline.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::raster::{ClassMask, Image, InstanceMask};
use crate::rng::Rng;

const BACKGROUND_LEVEL: f64 = 0.25;
/// Object intensity at full contrast, per object class.
const CLASS_LEVELS: [f64; 2] = [0.85, 0.62];
const PLACEMENT_ATTEMPTS: usize = 200;
/// Minimum gap between objects that are not meant to touch.
const CLEARANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipse,
    /// Smoothed random polygons: a radius perturbed by low harmonics.
    Blob,
    Mixed,
}

impl std::str::FromStr for ShapeFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ellipse" => Ok(ShapeFamily::Ellipse),
            "blob" => Ok(ShapeFamily::Blob),
            "mixed" => Ok(ShapeFamily::Mixed),
            other => Err(format!("expected ellipse, blob or mixed, got `{other}`")),
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::Blob => "blob",
            ShapeFamily::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// 1 or 2.
    pub object_classes: usize,
    pub shapes: ShapeFamily,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Interpolates object intensities between background (0) and full (1).
    pub contrast: f64,
    /// Amplitude of the band-limited texture inside class-1 objects.
    pub texture: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Amplitude of the smooth illumination gradient.
    pub illumination: f64,
    /// Per-image appearance spread: background offset, contrast gain and
    /// noise level are drawn around their nominal values. 0 disables it.
    pub appearance_jitter: f64,
    /// Width of the logistic edge profile in pixels.
    pub edge_softness: f64,
    /// Chance that a new object is placed against an existing one.
    pub touching_probability: f64,
    /// Chance that a touching pair has no visible interface.
    pub low_contrast_probability: f64,
    pub min_shrink: f64,
    pub max_shrink: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            min_instances: 4,
            max_instances: 7,
            object_classes: 2,
            shapes: ShapeFamily::Mixed,
            min_radius: 9.0,
            max_radius: 16.0,
            contrast: 1.0,
            texture: 0.12,
            noise: 0.04,
            illumination: 0.05,
            appearance_jitter: 0.4,
            edge_softness: 0.8,
            touching_probability: 0.35,
            low_contrast_probability: 0.5,
            min_shrink: 0.2,
            max_shrink: 0.35,
            seed: 42,
        }
    }
}

impl SceneConfig {
    /// A single object class, as in gland or fetal-head segmentation.
    pub fn one_class() -> Self {
        SceneConfig {
            object_classes: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::config(key, reason));
        if self.height < 16 || self.width < 16 {
            return bad("height", "scenes must be at least 16x16");
        }
        if self.min_instances < 1 || self.max_instances < self.min_instances {
            return bad("min_instances", "need 1 <= min_instances <= max_instances");
        }
        if !(1..=2).contains(&self.object_classes) {
            return bad("object_classes", "must be 1 or 2");
        }
        if !(self.min_radius >= 3.0 && self.max_radius >= self.min_radius) {
            return bad("min_radius", "need 3 <= min_radius <= max_radius");
        }
        if 2.0 * self.max_radius + 8.0 > self.height.min(self.width) as f64 {
            return bad("max_radius", "objects do not fit the image");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.contrast) && self.contrast > 0.0) {
            return bad("contrast", "must be in (0, 1]");
        }
        for (key, v) in [
            ("touching_probability", self.touching_probability),
            ("low_contrast_probability", self.low_contrast_probability),
        ] {
            if !unit(v) {
                return bad(key, "must be in [0, 1]");
            }
        }
        for (key, v) in [
            ("texture", self.texture),
            ("noise", self.noise),
            ("illumination", self.illumination),
            ("edge_softness", self.edge_softness),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, "must be finite and >= 0");
            }
        }
        if !(0.0..=0.5).contains(&self.appearance_jitter) {
            return bad("appearance_jitter", "must be in [0, 0.5]");
        }
        if !(self.min_shrink > 0.0 && self.min_shrink <= self.max_shrink && self.max_shrink < 1.0) {
            return bad("min_shrink", "need 0 < min_shrink <= max_shrink < 1");
        }
        Ok(())
    }

    /// Every field as `(key, value)` text, in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("min_instances", self.min_instances.to_string()),
            ("max_instances", self.max_instances.to_string()),
            ("object_classes", self.object_classes.to_string()),
            ("shapes", self.shapes.to_string()),
            ("min_radius", self.min_radius.to_string()),
            ("max_radius", self.max_radius.to_string()),
            ("contrast", self.contrast.to_string()),
            ("texture", self.texture.to_string()),
            ("noise", self.noise.to_string()),
            ("illumination", self.illumination.to_string()),
            ("appearance_jitter", self.appearance_jitter.to_string()),
            ("edge_softness", self.edge_softness.to_string()),
            ("touching_probability", self.touching_probability.to_string()),
            ("low_contrast_probability", self.low_contrast_probability.to_string()),
            ("min_shrink", self.min_shrink.to_string()),
            ("max_shrink", self.max_shrink.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from text. Returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "height" => self.height = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "min_instances" => self.min_instances = parse_value(key, value)?,
            "max_instances" => self.max_instances = parse_value(key, value)?,
            "object_classes" => self.object_classes = parse_value(key, value)?,
            "shapes" => self.shapes = parse_value(key, value)?,
            "min_radius" => self.min_radius = parse_value(key, value)?,
            "max_radius" => self.max_radius = parse_value(key, value)?,
            "contrast" => self.contrast = parse_value(key, value)?,
            "texture" => self.texture = parse_value(key, value)?,
            "noise" => self.noise = parse_value(key, value)?,
            "illumination" => self.illumination = parse_value(key, value)?,
            "appearance_jitter" => self.appearance_jitter = parse_value(key, value)?,
            "edge_softness" => self.edge_softness = parse_value(key, value)?,
            "touching_probability" => self.touching_probability = parse_value(key, value)?,
            "low_contrast_probability" => self.low_contrast_probability = parse_value(key, value)?,
            "min_shrink" => self.min_shrink = parse_value(key, value)?,
            "max_shrink" => self.max_shrink = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Object intensity of `class` at this contrast.
    pub fn class_level(&self, class: usize) -> f64 {
        BACKGROUND_LEVEL + self.contrast * (CLASS_LEVELS[class] - BACKGROUND_LEVEL)
    }

    pub fn background_level(&self) -> f64 {
        BACKGROUND_LEVEL
    }
}

/// Radial outline of a star-shaped object.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub centre: (f64, f64),
    kind: ShapeKind,
}

#[derive(Debug, Clone, PartialEq)]
enum ShapeKind {
    Ellipse { a: f64, b: f64, angle: f64 },
    Blob { radius: f64, harmonics: Vec<(f64, f64)> },
}

impl Shape {
    pub fn ellipse(centre: (f64, f64), a: f64, b: f64, angle: f64) -> Self {
        Shape {
            centre,
            kind: ShapeKind::Ellipse { a, b, angle },
        }
    }

    fn random(family: ShapeFamily, radius: f64, rng: &mut Rng) -> Self {
        let blob = match family {
            ShapeFamily::Ellipse => false,
            ShapeFamily::Blob => true,
            ShapeFamily::Mixed => rng.random_bool(0.5),
        };
        let kind = if blob {
            // amplitudes decay with the harmonic order so outlines stay smooth
            let harmonics = (2..=4)
                .map(|j| {
                    let amp = rng.random_range(0.0..0.18) / (j as f64 - 1.0);
                    (amp, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            ShapeKind::Blob { radius, harmonics }
        } else {
            let ratio = rng.random_range(0.65..1.0);
            ShapeKind::Ellipse {
                a: radius,
                b: radius * ratio,
                angle: rng.random_range(0.0..PI),
            }
        };
        Shape {
            centre: (0.0, 0.0),
            kind,
        }
    }

    /// Outline radius in direction `theta` (radians, from the +x axis).
    pub fn radius(&self, theta: f64) -> f64 {
        match &self.kind {
            ShapeKind::Ellipse { a, b, angle } => {
                let t = theta - angle;
                a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt()
            }
            ShapeKind::Blob { radius, harmonics } => {
                let wobble: f64 = harmonics
                    .iter()
                    .enumerate()
                    .map(|(i, (amp, phase))| amp * ((i as f64 + 2.0) * theta + phase).cos())
                    .sum();
                radius * (1.0 + wobble)
            }
        }
    }

    pub fn max_radius(&self) -> f64 {
        match &self.kind {
            ShapeKind::Ellipse { a, b, .. } => a.max(*b),
            ShapeKind::Blob { radius, harmonics } => {
                radius * (1.0 + harmonics.iter().map(|h| h.0).sum::<f64>())
            }
        }
    }

    /// Radial signed distance at pixel centre `(row, col)`, positive inside.
    pub fn signed_distance(&self, row: usize, col: usize) -> f64 {
        let dy = row as f64 - self.centre.0;
        let dx = col as f64 - self.centre.1;
        let r = (dx * dx + dy * dy).sqrt();
        self.radius(dy.atan2(dx)) - r
    }
}

/// Two objects placed against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Touch {
    pub a: usize,
    pub b: usize,
    /// No visible intensity dip along the shared interface.
    pub low_contrast: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    /// Object class, `0..object_classes`.
    pub class: u8,
    pub mask: InstanceMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    /// Classes `0..object_classes`, background last.
    pub gt: ClassMask,
    pub objects: Vec<SceneObject>,
    pub touches: Vec<Touch>,
}

impl Scene {
    pub fn instance_masks(&self) -> Vec<InstanceMask> {
        self.objects.iter().map(|o| o.mask.clone()).collect()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One box-blur pass of radius `radius` along rows, written transposed so
/// two calls blur both axes.
fn box_blur_transpose(src: &[f64], rows: usize, cols: usize, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(cols - 1);
            let sum: f64 = row[lo..=hi].iter().sum();
            out[c * rows + r] = sum / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Smooth zero-mean, unit-variance noise: white noise blurred by three box
/// passes along each axis.
fn band_limited_noise(h: usize, w: usize, radius: usize, rng: &mut Rng) -> Vec<f64> {
    let mut field: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    for _ in 0..3 {
        let t = box_blur_transpose(&field, h, w, radius);
        field = box_blur_transpose(&t, w, h, radius);
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    field.iter().map(|v| (v - mean) / std.max(1e-12)).collect()
}

struct Placer<'a> {
    cfg: &'a SceneConfig,
    /// Signed distance of every placed shape at every pixel.
    fields: Vec<Vec<f64>>,
}

impl Placer<'_> {
    fn field(&self, shape: &Shape) -> Vec<f64> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                out.push(shape.signed_distance(r, c));
            }
        }
        out
    }

    fn fits_frame(&self, shape: &Shape) -> bool {
        let m = shape.max_radius() + 2.0;
        let (cy, cx) = shape.centre;
        cy >= m && cx >= m && cy + m <= (self.cfg.height - 1) as f64 && cx + m <= (self.cfg.width - 1) as f64
    }

    /// No placed shape other than `partner` comes within the clearance.
    fn clear_of_others(&self, field: &[f64], partner: Option<usize>) -> bool {
        self.fields.iter().enumerate().all(|(j, other)| {
            Some(j) == partner
                || field
                    .iter()
                    .zip(other)
                    .all(|(&a, &b)| a < -CLEARANCE || b < -CLEARANCE || a + b < -CLEARANCE)
        })
    }
}

/// Renders one scene. Fails when the objects cannot be placed within the
/// retry budget.
pub fn generate_scene(cfg: &SceneConfig, rng: &mut Rng) -> Result<Scene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let target = rng.random_range(cfg.min_instances..=cfg.max_instances);
    let mut placer = Placer {
        cfg,
        fields: Vec::new(),
    };
    let mut shapes: Vec<(Shape, u8)> = Vec::new();
    let mut touches = Vec::new();
    let mut attempts = 0;
    while shapes.len() < target {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS * target {
            return Err(Error::Placement { attempts });
        }
        let radius = rng.random_range(cfg.min_radius..=cfg.max_radius);
        let mut shape = Shape::random(cfg.shapes, radius, rng);
        let class = rng.random_range(0..cfg.object_classes) as u8;
        let touch_with = (!shapes.is_empty() && rng.random_bool(cfg.touching_probability))
            .then(|| rng.random_range(0..shapes.len()));
        let low_contrast = rng.random_bool(cfg.low_contrast_probability);
        match touch_with {
            Some(j) => {
                let theta = rng.random_range(0.0..2.0 * PI);
                let other = &shapes[j].0;
                let reach = 0.85 * (other.radius(theta) + shape.radius(theta + PI));
                shape.centre = (
                    other.centre.0 + reach * theta.sin(),
                    other.centre.1 + reach * theta.cos(),
                );
            }
            None => {
                let m = shape.max_radius() + 2.0;
                shape.centre = (
                    rng.random_range(m..=(h - 1) as f64 - m),
                    rng.random_range(m..=(w - 1) as f64 - m),
                );
            }
        }
        if !placer.fits_frame(&shape) {
            continue;
        }
        let field = placer.field(&shape);
        if !placer.clear_of_others(&field, touch_with) {
            continue;
        }
        if let Some(j) = touch_with {
            touches.push(Touch {
                a: j,
                b: shapes.len(),
                low_contrast,
            });
        }
        placer.fields.push(field);
        shapes.push((shape, class));
    }

    // the two largest signed distances per pixel, ties to the lower index;
    // a pixel belongs to the first when it is nonnegative
    let fields = &placer.fields;
    let rank = |i: usize, skip: Option<usize>| {
        (0..shapes.len())
            .filter(|&k| Some(k) != skip)
            .max_by(|&a, &b| fields[a][i].total_cmp(&fields[b][i]).then(b.cmp(&a)))
    };
    let nearest: Vec<usize> = (0..h * w).map(|i| rank(i, None).expect("at least one object")).collect();
    let runner_up: Vec<Option<usize>> = (0..h * w).map(|i| rank(i, Some(nearest[i]))).collect();
    let owner: Vec<Option<usize>> = (0..h * w)
        .map(|i| (fields[nearest[i]][i] >= 0.0).then_some(nearest[i]))
        .collect();

    let bg_class = cfg.object_classes as u8;
    let labels: Vec<u8> = owner
        .iter()
        .map(|o| o.map_or(bg_class, |k| shapes[k].1))
        .collect();
    let gt = ClassMask::new(h, w, cfg.object_classes + 1, labels)?;
    let objects: Vec<SceneObject> = shapes
        .iter()
        .enumerate()
        .map(|(k, (shape, class))| SceneObject {
            shape: shape.clone(),
            class: *class,
            mask: InstanceMask::from_fn(h, w, |r, c| owner[r * w + c] == Some(k)),
        })
        .collect();

    // intensities
    let texture = if cfg.texture > 0.0 {
        band_limited_noise(h, w, 1, rng)
    } else {
        vec![0.0; h * w]
    };
    let tilt = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let softness = cfg.edge_softness.max(1e-6);
    let j = cfg.appearance_jitter;
    let (offset, gain, noise_gain) = if j > 0.0 {
        (
            rng.random_range(-0.5 * j..=0.5 * j),
            rng.random_range(1.0 - j..=1.0 + 0.5 * j),
            rng.random_range(1.0 - j..=1.0 + 2.0 * j),
        )
    } else {
        (0.0, 1.0, 1.0)
    };
    let bg = cfg.background_level() + offset;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let k = nearest[i];
            let s = fields[k][i];
            let class = shapes[k].1 as usize;
            let mut level = bg + gain * (cfg.class_level(class) - cfg.background_level());
            if class == 1 {
                level += cfg.texture * texture[i];
            }
            let mut inside = logistic(s / softness);
            if let Some(j) = runner_up[i] {
                let touch = touches
                    .iter()
                    .find(|t| (t.a == k && t.b == j) || (t.a == j && t.b == k));
                if touch.is_some_and(|t| !t.low_contrast) {
                    // a dark seam along the interface of a visible boundary
                    let gap = 0.5 * (s - fields[j][i]);
                    inside *= 1.0 - 0.8 * (-(gap / (1.2 * softness)).powi(2)).exp();
                }
            }
            let ramp = ((r as f64 / h as f64 - 0.5) * tilt.0 + (c as f64 / w as f64 - 0.5) * tilt.1) * cfg.illumination;
            let noise = if cfg.noise > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                cfg.noise * noise_gain * z
            } else {
                0.0
            };
            let v = bg + (level - bg) * inside + ramp + noise;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(Scene {
        image: Image::new(h, w, 1, data)?,
        gt,
        objects,
        touches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{connected_components, Connectivity};
    use crate::rng::seeded_rng;

    fn clean() -> SceneConfig {
        SceneConfig {
            noise: 0.0,
            texture: 0.0,
            illumination: 0.0,
            appearance_jitter: 0.0,
            contrast: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn mid_level_threshold_recovers_single_ellipse() {
        let cfg = SceneConfig {
            min_instances: 1,
            max_instances: 1,
            object_classes: 1,
            shapes: ShapeFamily::Ellipse,
            ..clean()
        };
        for seed in 0..5 {
            let scene = generate_scene(&cfg, &mut seeded_rng(seed)).unwrap();
            let mid = ((cfg.background_level() + cfg.class_level(0)) / 2.0) as f32;
            for (i, &v) in scene.image.data().iter().enumerate() {
                assert_eq!(v >= mid, scene.gt.labels()[i] == 0, "seed {seed} pixel {i}");
            }
        }
    }

    #[test]
    fn instance_count_follows_config() {
        let cfg = SceneConfig {
            min_instances: 3,
            max_instances: 3,
            ..Default::default()
        };
        for seed in 0..10 {
            let scene = generate_scene(&cfg, &mut seeded_rng(seed)).unwrap();
            assert_eq!(scene.objects.len(), 3);
        }
    }

    #[test]
    fn seeded_scenes_repeat() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, &mut seeded_rng(3)).unwrap();
        let b = generate_scene(&cfg, &mut seeded_rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objects_partition_the_ground_truth() {
        let cfg = SceneConfig {
            touching_probability: 0.8,
            ..Default::default()
        };
        for seed in 0..20 {
            let scene = generate_scene(&cfg, &mut seeded_rng(seed)).unwrap();
            let mut union = InstanceMask::empty(cfg.height, cfg.width);
            for (k, o) in scene.objects.iter().enumerate() {
                assert!(o.mask.count() > 50, "seed {seed} object {k} has {}", o.mask.count());
                assert_eq!(union.intersection_count(&o.mask), 0);
                union.union_with(&o.mask);
                assert!(o.mask.support().all(|i| scene.gt.labels()[i] == o.class));
                assert_eq!(connected_components(&o.mask, Connectivity::Four).count(), 1);
            }
            assert_eq!(union, scene.gt.foreground());
            for t in &scene.touches {
                let (a, b) = (&scene.objects[t.a].mask, &scene.objects[t.b].mask);
                let adjacent = a.support().any(|i| {
                    let (r, c) = (i / cfg.width, i % cfg.width);
                    [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dr, dc): &(isize, isize)| {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        b.get(rr as usize, cc as usize)
                    })
                });
                assert!(adjacent, "seed {seed}: touching pair is not adjacent");
            }
        }
    }
}
