//! Exact Euclidean distance transform.
//!
//! Two separable passes: a column sweep producing the vertical distance to the
//! nearest source pixel, then a per-row lower envelope of the parabolas
//! `f(q) + (x - q)^2`. Envelope breakpoints are kept as exact rationals so the
//! squared distances are exact integers and the result equals a brute-force
//! nearest-pixel search bit for bit.

use crate::raster::InstanceMask;

/// Euclidean distance (pixel units) from every pixel to the nearest source
/// pixel. `f64::INFINITY` everywhere when the source set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Squared distances as exact integers; `None` marks "no source pixel".
pub fn squared_distance_transform(source: &InstanceMask) -> Vec<Option<u64>> {
    let (h, w) = source.dims();
    let mut vertical: Vec<Option<u64>> = vec![None; h * w];

    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if source.get(r, c) {
                last = Some(r);
            }
            vertical[r * w + c] = last.map(|l| (r - l) as u64);
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if source.get(r, c) {
                next = Some(r);
            }
            if let Some(n) = next {
                let down = (n - r) as u64;
                let slot = &mut vertical[r * w + c];
                *slot = Some(slot.map_or(down, |up| up.min(down)));
            }
        }
    }

    let mut out = vec![None; h * w];
    let mut f = vec![None; w];
    let mut envelope = Envelope::with_capacity(w);
    for r in 0..h {
        for c in 0..w {
            f[c] = vertical[r * w + c].map(|d| d * d);
        }
        envelope.lower(&f, &mut out[r * w..(r + 1) * w]);
    }
    out
}

pub fn distance_transform(source: &InstanceMask) -> DistanceField {
    let (height, width) = source.dims();
    let values = squared_distance_transform(source)
        .into_iter()
        .map(|d| d.map_or(f64::INFINITY, |d| (d as f64).sqrt()))
        .collect();
    DistanceField {
        height,
        width,
        values,
    }
}

/// Breakpoint between two envelope parabolas, `num / den` with `den > 0`.
#[derive(Clone, Copy, Debug)]
enum Breakpoint {
    NegInf,
    At { num: i128, den: i128 },
    PosInf,
}

impl Breakpoint {
    fn le(self, other: Breakpoint) -> bool {
        match (self, other) {
            (Breakpoint::NegInf, _) | (_, Breakpoint::PosInf) => true,
            (_, Breakpoint::NegInf) | (Breakpoint::PosInf, _) => false,
            (Breakpoint::At { num: a, den: b }, Breakpoint::At { num: c, den: d }) => a * d <= c * b,
        }
    }

    fn lt_int(self, x: i128) -> bool {
        match self {
            Breakpoint::NegInf => true,
            Breakpoint::PosInf => false,
            Breakpoint::At { num, den } => num < x * den,
        }
    }
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<Breakpoint>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn lower(&mut self, f: &[Option<u64>], out: &mut [Option<u64>]) {
        self.vertices.clear();
        self.bounds.clear();
        let height = |q: usize| f[q].unwrap() as i128 + (q as i128) * (q as i128);

        for q in (0..f.len()).filter(|&q| f[q].is_some()) {
            if self.vertices.is_empty() {
                self.vertices.push(q);
                self.bounds.push(Breakpoint::NegInf);
                continue;
            }
            let s = loop {
                let v = *self.vertices.last().unwrap();
                let s = Breakpoint::At {
                    num: height(q) - height(v),
                    den: 2 * (q as i128 - v as i128),
                };
                if s.le(*self.bounds.last().unwrap()) {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    break s;
                }
            };
            self.vertices.push(q);
            self.bounds.push(s);
        }

        if self.vertices.is_empty() {
            out.fill(None);
            return;
        }
        self.bounds.push(Breakpoint::PosInf);
        let mut k = 0;
        for (x, slot) in out.iter_mut().enumerate() {
            while self.bounds[k + 1].lt_int(x as i128) {
                k += 1;
            }
            let v = self.vertices[k];
            let dx = x as i128 - v as i128;
            *slot = Some((dx * dx) as u64 + f[v].unwrap());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn brute_force(source: &InstanceMask) -> Vec<f64> {
        let (h, w) = source.dims();
        let pts: Vec<(i64, i64)> = source
            .support()
            .map(|i| ((i / w) as i64, (i % w) as i64))
            .collect();
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                let best = pts
                    .iter()
                    .map(|&(y, x)| (((r - y).pow(2) + (c - x).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min);
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn collinear_row() {
        let m = InstanceMask::new(1, 3, vec![true, false, false]).unwrap();
        assert_eq!(distance_transform(&m).values(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn full_source_is_zero() {
        let m = InstanceMask::full(4, 5);
        assert!(distance_transform(&m).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_source_is_infinite() {
        let m = InstanceMask::empty(3, 3);
        assert!(distance_transform(&m).values().iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn diagonal_distance() {
        let m = InstanceMask::from_fn(4, 4, |r, c| r == 0 && c == 0);
        let d = distance_transform(&m);
        assert_eq!(d.get(3, 3), 18f64.sqrt());
        assert_eq!(d.get(3, 0), 3.0);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let h = rng.random_range(1..=32);
            let w = rng.random_range(1..=32);
            let density = rng.random_range(0.0..0.3);
            let bits = (0..h * w).map(|_| rng.random_bool(density)).collect();
            let m = InstanceMask::new(h, w, bits).unwrap();
            assert_eq!(distance_transform(&m).values(), brute_force(&m).as_slice());
        }
    }
}
