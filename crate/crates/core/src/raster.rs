//! Pixel grids shared by every stage of the pipeline.
//!
//! All grids are row-major with the origin at the top-left pixel. In binary
//! tasks class `0` is the object and the last class index is background;
//! multi-class tasks list their object classes first and keep background last.

use crate::error::{Error, Result};

/// Grayscale or RGB image with intensities in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dataset(format!(
                "image buffer holds {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Dataset(format!("image value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }
}

/// Per-pixel class indices for one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMask {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if !(1..=256).contains(&classes) {
            return Err(Error::Dataset(format!("class count {classes} out of range")));
        }
        if labels.len() != height * width {
            return Err(Error::Dataset(format!(
                "mask holds {} labels, expected {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Dataset(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        Ok(ClassMask {
            height,
            width,
            classes,
            labels,
        })
    }

    /// A mask where every pixel has the same class.
    pub fn uniform(height: usize, width: usize, classes: usize, class: u8) -> Self {
        assert!((class as usize) < classes);
        ClassMask {
            height,
            width,
            classes,
            labels: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Index of the background class (the last one).
    pub fn background(&self) -> u8 {
        (self.classes - 1) as u8
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        assert!((class as usize) < self.classes);
        self.labels[row * self.width + col] = class;
    }

    /// Binary plane of one class.
    pub fn plane(&self, class: u8) -> InstanceMask {
        InstanceMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    /// Binary plane of every non-background pixel.
    pub fn foreground(&self) -> InstanceMask {
        let bg = self.background();
        InstanceMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l != bg).collect(),
        }
    }

    pub fn object_pixel_count(&self) -> usize {
        let bg = self.background();
        self.labels.iter().filter(|&&l| l != bg).count()
    }
}

/// One-hot expansion of a class mask: plane `c` is true exactly where the
/// label equals `c`.
pub fn one_hot(mask: &ClassMask) -> Vec<InstanceMask> {
    (0..mask.classes).map(|c| mask.plane(c as u8)).collect()
}

/// Inverse of [`one_hot`]: the index of the first true plane at each pixel.
pub fn argmax_planes(planes: &[InstanceMask]) -> Result<ClassMask> {
    let first = planes.first().ok_or(Error::EmptyMask)?;
    let (h, w) = first.dims();
    let mut labels = vec![0u8; h * w];
    for (c, plane) in planes.iter().enumerate().rev() {
        if plane.dims() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: plane.dims(),
            });
        }
        for (l, &b) in labels.iter_mut().zip(plane.bits()) {
            if b {
                *l = c as u8;
            }
        }
    }
    ClassMask::new(h, w, planes.len(), labels)
}

/// Labels of one image across all tasks; `None` means the image is not in
/// that task's labeled subset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    tasks: Vec<Option<ClassMask>>,
}

impl LabelField {
    pub fn new(tasks: Vec<Option<ClassMask>>) -> Self {
        LabelField { tasks }
    }

    pub fn absent(task_count: usize) -> Self {
        LabelField {
            tasks: vec![None; task_count],
        }
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Zero-based task slot.
    pub fn get(&self, task: usize) -> Option<&ClassMask> {
        self.tasks.get(task).and_then(|t| t.as_ref())
    }

    pub fn set(&mut self, task: usize, mask: Option<ClassMask>) {
        self.tasks[task] = mask;
    }

    pub fn is_present(&self, task: usize) -> bool {
        self.get(task).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&ClassMask>> {
        self.tasks.iter().map(|t| t.as_ref())
    }

    /// Checks that every present mask has the given spatial size.
    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        for m in self.tasks.iter().flatten() {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: m.dims(),
                });
            }
        }
        Ok(())
    }
}

/// Binary mask of a single region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Dataset(format!(
                "mask holds {} bits, expected {}x{}",
                bits.len(),
                height,
                width
            )));
        }
        Ok(InstanceMask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        InstanceMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        InstanceMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        InstanceMask {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Row-major indices of the true pixels.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> InstanceMask {
        InstanceMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersection_count(&self, other: &InstanceMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn is_subset_of(&self, other: &InstanceMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn union_with(&mut self, other: &InstanceMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Object pixels with at least one 4-neighbour outside the mask; the
    /// area beyond the image border counts as outside.
    pub fn boundary(&self) -> InstanceMask {
        let (h, w) = self.dims();
        InstanceMask::from_fn(h, w, |r, c| {
            if !self.get(r, c) {
                return false;
            }
            r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !self.get(r - 1, c)
                || !self.get(r + 1, c)
                || !self.get(r, c - 1)
                || !self.get(r, c + 1)
        })
    }

    pub(crate) fn check_same_dims(&self, other: &InstanceMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn one_hot_two_pixels() {
        let m = ClassMask::new(1, 2, 2, vec![0, 1]).unwrap();
        let planes = one_hot(&m);
        assert_eq!(planes[0].bits(), &[true, false]);
        assert_eq!(planes[1].bits(), &[false, true]);
    }

    #[test]
    fn one_hot_uniform() {
        let m = ClassMask::uniform(3, 4, 3, 0);
        let planes = one_hot(&m);
        assert!(planes[0].bits().iter().all(|&b| b));
        assert!(planes[1].is_empty() && planes[2].is_empty());
    }

    #[test]
    fn one_hot_matches_pixel_scan() {
        let mut rng = seeded_rng(3);
        let labels: Vec<u8> = (0..64).map(|_| rng.random_range(0..3)).collect();
        let m = ClassMask::new(8, 8, 3, labels.clone()).unwrap();
        let planes = one_hot(&m);
        for (i, &l) in labels.iter().enumerate() {
            let mut hits = 0;
            for (c, p) in planes.iter().enumerate() {
                assert_eq!(p.bits()[i], l as usize == c);
                hits += p.bits()[i] as usize;
            }
            assert_eq!(hits, 1);
        }
        assert_eq!(argmax_planes(&planes).unwrap(), m);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ClassMask::new(1, 2, 2, vec![0, 2]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn boundary_of_square() {
        let m = InstanceMask::from_fn(5, 5, |r, c| (1..4).contains(&r) && (1..4).contains(&c));
        let b = m.boundary();
        assert_eq!(b.count(), 8);
        assert!(!b.get(2, 2));
        let full = InstanceMask::full(3, 4).boundary();
        assert_eq!(full.count(), 10);
    }
}
