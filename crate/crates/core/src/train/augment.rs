//! Random training crops with flips, quarter-turn rotations and rescaling.
//!
//! A crop is produced in one pass: every output pixel is mapped back
//! through the rotation and flip into the crop window, then through the
//! scale into the source image. Images are sampled bilinearly (half-pixel
//! centres, edges clamped); labels take the nearest source pixel, so image
//! and label planes always undergo the same geometric transform.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::Tensor;
use crate::raster::{ClassMask, Image, LabelField};
use crate::rng::Rng;

pub const MIN_SCALE: f64 = 0.8;
pub const MAX_SCALE: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentations {
    pub flip: bool,
    pub rotate: bool,
    pub rescale: bool,
}

impl Default for Augmentations {
    fn default() -> Self {
        Augmentations {
            flip: true,
            rotate: true,
            rescale: true,
        }
    }
}

impl Augmentations {
    pub fn none() -> Self {
        Augmentations {
            flip: false,
            rotate: false,
            rescale: false,
        }
    }
}

/// Geometry of one crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub size: usize,
    /// Top-left corner in the rescaled image.
    pub origin: (usize, usize),
    pub scale: f64,
    /// Mirror columns after the crop.
    pub flip: bool,
    /// Counter-clockwise quarter turns after the flip.
    pub quarter_turns: u8,
}

impl CropTransform {
    pub fn identity(size: usize) -> Self {
        CropTransform {
            size,
            origin: (0, 0),
            scale: 1.0,
            flip: false,
            quarter_turns: 0,
        }
    }

    /// Position in the un-rotated, un-flipped crop window that lands on
    /// output pixel `(r, c)`.
    fn window_position(&self, r: usize, c: usize) -> (usize, usize) {
        let n = self.size - 1;
        // undo the rotation: one counter-clockwise turn maps (y, x) to (n - x, y)
        let (mut y, mut x) = (r, c);
        for _ in 0..self.quarter_turns % 4 {
            (y, x) = (x, n - y);
        }
        if self.flip {
            x = n - x;
        }
        (y, x)
    }

    /// Source coordinate (continuous, pixel centres at integers) of output
    /// pixel `(r, c)`.
    fn source(&self, r: usize, c: usize) -> (f64, f64) {
        let (y, x) = self.window_position(r, c);
        let sy = ((self.origin.0 + y) as f64 + 0.5) / self.scale - 0.5;
        let sx = ((self.origin.1 + x) as f64 + 0.5) / self.scale - 0.5;
        (sy, sx)
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        let (h, w, ch) = (image.height(), image.width(), image.channels());
        let n = self.size;
        let mut data = Vec::with_capacity(n * n * ch);
        for r in 0..n {
            for c in 0..n {
                let (sy, sx) = self.source(r, c);
                let sy = sy.clamp(0.0, (h - 1) as f64);
                let sx = sx.clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
                for k in 0..ch {
                    let top = image.get(y0, x0, k) * (1.0 - fx) + image.get(y0, x1, k) * fx;
                    let bottom = image.get(y1, x0, k) * (1.0 - fx) + image.get(y1, x1, k) * fx;
                    data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(n, n, ch, data).expect("interpolation stays in range")
    }

    pub fn apply_mask(&self, mask: &ClassMask) -> ClassMask {
        let (h, w) = mask.dims();
        let n = self.size;
        let mut labels = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let (sy, sx) = self.source(r, c);
                let y = (sy.round().max(0.0) as usize).min(h - 1);
                let x = (sx.round().max(0.0) as usize).min(w - 1);
                labels.push(mask.get(y, x));
            }
        }
        ClassMask::new(n, n, mask.classes(), labels).expect("labels copied from a valid mask")
    }

    pub fn apply_labels(&self, labels: &LabelField) -> LabelField {
        LabelField::new(labels.iter().map(|m| m.map(|m| self.apply_mask(m))).collect())
    }
}

/// Draws a crop transform for an `h x w` image.
pub fn random_transform(h: usize, w: usize, size: usize, aug: Augmentations, rng: &mut Rng) -> Result<CropTransform> {
    if size > h || size > w {
        return Err(Error::CropTooLarge {
            crop: size,
            height: h,
            width: w,
        });
    }
    let mut scale = 1.0;
    if aug.rescale && rng.random_bool(0.5) {
        scale = rng.random_range(MIN_SCALE..=MAX_SCALE);
        // keep the rescaled image at least as large as the crop
        let min_scale = size as f64 / h.min(w) as f64;
        scale = scale.max(min_scale);
    }
    let sh = ((h as f64 * scale).floor() as usize).max(size);
    let sw = ((w as f64 * scale).floor() as usize).max(size);
    let origin = (rng.random_range(0..=sh - size), rng.random_range(0..=sw - size));
    let flip = aug.flip && rng.random_bool(0.5);
    let quarter_turns = if aug.rotate && rng.random_bool(0.5) {
        rng.random_range(1..=3)
    } else {
        0
    };
    Ok(CropTransform {
        size,
        origin,
        scale,
        flip,
        quarter_turns,
    })
}

/// One training minibatch.
pub struct Batch {
    pub input: Tensor<f32>,
    pub labels: Vec<LabelField>,
}

/// Stream of augmented crops drawn uniformly from a fixed set of images.
pub struct CropSampler<'a> {
    sources: Vec<(&'a Image, &'a LabelField)>,
    size: usize,
    batch: usize,
    aug: Augmentations,
}

impl<'a> CropSampler<'a> {
    pub fn new(
        sources: Vec<(&'a Image, &'a LabelField)>,
        size: usize,
        batch: usize,
        aug: Augmentations,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Dataset("no labeled images to sample crops from".into()));
        }
        if batch == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if let Some((img, _)) = sources.iter().find(|(img, _)| size > img.height() || size > img.width()) {
            return Err(Error::CropTooLarge {
                crop: size,
                height: img.height(),
                width: img.width(),
            });
        }
        Ok(CropSampler {
            sources,
            size,
            batch,
            aug,
        })
    }

    pub fn next_batch(&self, rng: &mut Rng) -> Result<Batch> {
        let n = self.size;
        let mut data = Vec::with_capacity(self.batch * n * n);
        let mut labels = Vec::with_capacity(self.batch);
        let mut channels = 0;
        for _ in 0..self.batch {
            let (image, field) = self.sources[rng.random_range(0..self.sources.len())];
            let t = random_transform(image.height(), image.width(), n, self.aug, rng)?;
            let crop = t.apply_image(image);
            channels = crop.channels();
            for k in 0..channels {
                data.extend((0..n * n).map(|i| crop.data()[i * channels + k]));
            }
            labels.push(t.apply_labels(field));
        }
        Ok(Batch {
            input: Tensor::from_vec(self.batch, channels, n, n, data),
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn ramp(n: usize) -> Image {
        Image::new(n, n, 1, (0..n * n).map(|i| i as f32 / (n * n) as f32).collect()).unwrap()
    }

    #[test]
    fn identity_crop_is_verbatim() {
        let img = ramp(8);
        let mask = ClassMask::new(8, 8, 3, (0..64).map(|i| (i % 3) as u8).collect()).unwrap();
        let t = random_transform(8, 8, 8, Augmentations::none(), &mut seeded_rng(0)).unwrap();
        assert_eq!(t, CropTransform::identity(8));
        assert_eq!(t.apply_image(&img), img);
        assert_eq!(t.apply_mask(&mask), mask);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(6);
        let flip = CropTransform {
            flip: true,
            ..CropTransform::identity(6)
        };
        let once = flip.apply_image(&img);
        assert_ne!(once, img);
        assert_eq!(flip.apply_image(&once), img);
        assert_eq!(once.get(2, 0, 0), img.get(2, 5, 0));
    }

    #[test]
    fn four_quarter_turns_restore() {
        let img = ramp(5);
        let turn = CropTransform {
            quarter_turns: 1,
            ..CropTransform::identity(5)
        };
        let mut x = img.clone();
        for _ in 0..4 {
            x = turn.apply_image(&x);
        }
        assert_eq!(x, img);
        // counter-clockwise: the top-right corner moves to the top-left
        assert_eq!(turn.apply_image(&img).get(0, 0, 0), img.get(0, 4, 0));
    }

    #[test]
    fn image_and_labels_stay_aligned() {
        // checkerboard of 4x4 cells; intensity encodes the class
        let n = 32;
        let cls = |r: usize, c: usize| ((r / 4 + c / 4) % 2) as u8;
        let mask = ClassMask::new(n, n, 2, (0..n * n).map(|i| cls(i / n, i % n)).collect()).unwrap();
        let img = Image::new(n, n, 1, mask.labels().iter().map(|&l| l as f32).collect()).unwrap();
        let mut rng = seeded_rng(4);
        let aug = Augmentations {
            rescale: false,
            ..Default::default()
        };
        for _ in 0..50 {
            let t = random_transform(n, n, 16, aug, &mut rng).unwrap();
            let (ci, cm) = (t.apply_image(&img), t.apply_mask(&mask));
            for (i, &l) in cm.labels().iter().enumerate() {
                assert_eq!(ci.data()[i], l as f32);
            }
        }
    }

    #[test]
    fn rescaled_labels_track_image_interior() {
        let n = 32;
        let cls = |r: usize, c: usize| ((r / 8 + c / 8) % 2) as u8;
        let mask = ClassMask::new(n, n, 2, (0..n * n).map(|i| cls(i / n, i % n)).collect()).unwrap();
        let img = Image::new(n, n, 1, mask.labels().iter().map(|&l| l as f32).collect()).unwrap();
        let t = CropTransform {
            size: 24,
            origin: (3, 5),
            scale: 1.2,
            flip: true,
            quarter_turns: 3,
        };
        let (ci, cm) = (t.apply_image(&img), t.apply_mask(&mask));
        // where the image is not blended, it agrees with the label
        for (i, &l) in cm.labels().iter().enumerate() {
            let v = ci.data()[i];
            if v == 0.0 || v == 1.0 {
                assert_eq!(v, l as f32);
            }
        }
    }

    #[test]
    fn sampler_is_deterministic_and_checks_size() {
        let img = ramp(16);
        let field = LabelField::new(vec![Some(ClassMask::uniform(16, 16, 2, 1)), None]);
        let s = CropSampler::new(vec![(&img, &field)], 8, 3, Augmentations::default()).unwrap();
        let a = s.next_batch(&mut seeded_rng(1)).unwrap();
        let b = s.next_batch(&mut seeded_rng(1)).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.input.shape(), [3, 1, 8, 8]);
        assert!(a.labels.iter().all(|f| !f.is_present(1)));
        assert!(CropSampler::new(vec![(&img, &field)], 32, 1, Augmentations::default()).is_err());
    }
}
