//! Coarse annotations derived from ground-truth instances.

use std::f64::consts::PI;

use rand::Rng as _;

use super::scene::{SceneObject, Touch};
use crate::error::{Error, Result};
use crate::geometry::{connected_components, distance_transform, Connectivity};
use crate::raster::{ClassMask, InstanceMask};
use crate::rng::Rng;

/// Relative amplitude of the radial wobble applied to the erosion margin.
const WOBBLE: f64 = 0.35;
/// Stroke half-width of a separation scribble, in pixels.
const STROKE_RADIUS: f64 = 1.5;

/// Distance from every pixel of `mask` to the nearest pixel outside it,
/// with everything beyond the image border counted as outside.
fn inside_distance(mask: &InstanceMask) -> Vec<f64> {
    let (h, w) = mask.dims();
    let outside = InstanceMask::from_fn(h + 2, w + 2, |r, c| {
        r == 0 || c == 0 || r == h + 1 || c == w + 1 || !mask.get(r - 1, c - 1)
    });
    let d = distance_transform(&outside);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(d.get(r + 1, c + 1));
        }
    }
    out
}

/// A connected region strictly inside `instance` that avoids its boundary.
///
/// Pixels are kept where their distance to the outside exceeds a margin of
/// `shrink` times the largest such distance, modulated by a smooth random
/// function of the angle around the centroid. The margin never drops below
/// one pixel, so boundary pixels are always excluded. The largest
/// 4-connected piece is returned.
pub fn make_weak_label(instance: &InstanceMask, shrink: f64, rng: &mut Rng) -> Result<InstanceMask> {
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::config("shrink", "must be in (0, 1)"));
    }
    let wobble: Vec<(f64, f64)> = (1..=3)
        .map(|j| (rng.random_range(-WOBBLE..WOBBLE) / j as f64, rng.random_range(0.0..2.0 * PI)))
        .collect();
    let area = instance.count();
    if area == 0 {
        return Err(Error::InstanceTooSmall { area });
    }
    let (h, w) = instance.dims();
    let d = inside_distance(instance);
    let deepest = instance.support().map(|i| d[i]).fold(0.0, f64::max);
    let (mut cy, mut cx) = (0.0, 0.0);
    for i in instance.support() {
        cy += (i / w) as f64;
        cx += (i % w) as f64;
    }
    cy /= area as f64;
    cx /= area as f64;
    let margin = shrink * deepest;
    let kept = InstanceMask::from_fn(h, w, |r, c| {
        let i = r * w + c;
        if !instance.get(r, c) {
            return false;
        }
        let theta = (r as f64 - cy).atan2(c as f64 - cx);
        let factor: f64 = 1.0
            + wobble
                .iter()
                .enumerate()
                .map(|(j, (amp, phase))| amp * ((j + 1) as f64 * theta + phase).cos())
                .sum::<f64>();
        d[i] > (margin * factor).max(1.0)
    });
    let labeling = connected_components(&kept, Connectivity::Four);
    let largest = labeling
        .areas()
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id as u32);
    match largest {
        Some(id) => Ok(labeling.mask(id)),
        None => Err(Error::InstanceTooSmall { area }),
    }
}

/// Pixels of `a` with a 4-neighbour in `b`, and vice versa.
pub fn shared_interface(a: &InstanceMask, b: &InstanceMask) -> InstanceMask {
    let (h, w) = a.dims();
    let touches = |m: &InstanceMask, r: usize, c: usize| {
        (r > 0 && m.get(r - 1, c))
            || (r + 1 < h && m.get(r + 1, c))
            || (c > 0 && m.get(r, c - 1))
            || (c + 1 < w && m.get(r, c + 1))
    };
    InstanceMask::from_fn(h, w, |r, c| {
        (a.get(r, c) && touches(b, r, c)) || (b.get(r, c) && touches(a, r, c))
    })
}

/// Separation scribbles (class 0) along the interface of every touching
/// pair without a visible boundary; everything else is background (class 1).
/// Visible interfaces are left unmarked.
pub fn make_separation_scribbles(
    objects: &[SceneObject],
    touches: &[Touch],
    dims: (usize, usize),
) -> ClassMask {
    let (h, w) = dims;
    let mut stroke = InstanceMask::empty(h, w);
    for t in touches.iter().filter(|t| t.low_contrast) {
        let interface = shared_interface(&objects[t.a].mask, &objects[t.b].mask);
        if interface.is_empty() {
            continue;
        }
        let d = distance_transform(&interface);
        for (i, &v) in d.values().iter().enumerate() {
            if v <= STROKE_RADIUS {
                stroke.set_index(i, true);
            }
        }
    }
    let labels = stroke.bits().iter().map(|&s| if s { 0 } else { 1 }).collect();
    ClassMask::new(h, w, 2, labels).expect("binary labels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{generate_scene, SceneConfig};
    use crate::rng::seeded_rng;

    fn disk(n: usize, r: f64) -> InstanceMask {
        let c = (n as f64 - 1.0) / 2.0;
        InstanceMask::from_fn(n, n, |y, x| (y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= r * r)
    }

    #[test]
    fn tiny_shrink_keeps_the_interior() {
        let m = disk(21, 8.0);
        let weak = make_weak_label(&m, 1e-9, &mut seeded_rng(0)).unwrap();
        let interior = InstanceMask::from_fn(21, 21, |r, c| m.get(r, c) && !m.boundary().get(r, c));
        assert_eq!(weak, interior);
    }

    #[test]
    fn weak_labels_are_interior_and_connected() {
        let cfg = SceneConfig::default();
        let mut checked = 0;
        let mut rng = seeded_rng(5);
        for seed in 0..40 {
            let scene = generate_scene(&cfg, &mut seeded_rng(seed)).unwrap();
            for o in &scene.objects {
                let shrink = rng.random_range(cfg.min_shrink..=cfg.max_shrink);
                let weak = make_weak_label(&o.mask, shrink, &mut rng).unwrap();
                assert!(!weak.is_empty());
                assert!(weak.is_subset_of(&o.mask));
                assert_eq!(weak.intersection_count(&o.mask.boundary()), 0);
                assert_eq!(connected_components(&weak, Connectivity::Four).count(), 1);
                checked += 1;
            }
        }
        assert!(checked >= 200, "{checked}");
    }

    #[test]
    fn too_small_instance_is_reported() {
        let m = InstanceMask::from_fn(5, 5, |r, c| r == 2 && c < 3);
        assert!(matches!(
            make_weak_label(&m, 0.2, &mut seeded_rng(0)),
            Err(Error::InstanceTooSmall { area: 3 })
        ));
    }

    #[test]
    fn scribbles_follow_low_contrast_interfaces() {
        let cfg = SceneConfig {
            touching_probability: 0.9,
            low_contrast_probability: 1.0,
            ..Default::default()
        };
        let mut strokes_seen = 0;
        for seed in 0..10 {
            let scene = generate_scene(&cfg, &mut seeded_rng(seed)).unwrap();
            let dims = scene.gt.dims();
            let scribbles = make_separation_scribbles(&scene.objects, &scene.touches, dims);
            let mut all_interfaces = InstanceMask::empty(dims.0, dims.1);
            for t in &scene.touches {
                all_interfaces.union_with(&shared_interface(&scene.objects[t.a].mask, &scene.objects[t.b].mask));
            }
            let d = distance_transform(&all_interfaces);
            for i in scribbles.plane(0).support() {
                assert!(d.values()[i] <= 2.0);
                strokes_seen += 1;
            }
        }
        assert!(strokes_seen > 0);
    }

    #[test]
    fn one_pair_gives_one_stroke() {
        let cfg = SceneConfig {
            min_instances: 2,
            max_instances: 2,
            touching_probability: 1.0,
            low_contrast_probability: 1.0,
            ..Default::default()
        };
        let scene = generate_scene(&cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(scene.touches.len(), 1);
        let s = make_separation_scribbles(&scene.objects, &scene.touches, scene.gt.dims());
        assert_eq!(connected_components(&s.plane(0), Connectivity::Eight).count(), 1);
        let none = make_separation_scribbles(&scene.objects, &[], scene.gt.dims());
        assert!(none.plane(0).is_empty());
    }
}
