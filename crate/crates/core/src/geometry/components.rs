//! Connected-component labeling and the seed-aware splitting and pairing
//! used by the multi-object label update.

use crate::error::{Error, Result};
use crate::geometry::edt::squared_distance_transform;
use crate::raster::InstanceMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }

    /// Offsets of neighbours already visited in a raster scan.
    fn causal_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got `{other}`")),
        }
    }
}

/// Component id per pixel, `0` for background, ids `1..=count` assigned in
/// raster order of each component's first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    height: usize,
    width: usize,
    connectivity: Connectivity,
    ids: Vec<u32>,
    count: u32,
}

impl ComponentLabeling {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn mask(&self, id: u32) -> InstanceMask {
        InstanceMask::new(
            self.height,
            self.width,
            self.ids.iter().map(|&i| i == id).collect(),
        )
        .expect("labeling dims are consistent")
    }

    /// Pixel count per id; index 0 is background.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count as usize + 1];
        for &id in &self.ids {
            areas[id as usize] += 1;
        }
        areas
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling of pixels carrying a key; neighbours join
/// when their keys are equal. Key `None` is background.
fn label_by_key<K: PartialEq + Copy>(
    height: usize,
    width: usize,
    key: impl Fn(usize) -> Option<K>,
    connectivity: Connectivity,
) -> ComponentLabeling {
    let mut provisional = vec![0u32; height * width];
    let mut sets = DisjointSet::new();
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let Some(k) = key(i) else { continue };
            let mut current = 0u32;
            for &(dr, dc) in connectivity.causal_offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= width as isize {
                    continue;
                }
                let j = nr as usize * width + nc as usize;
                if provisional[j] == 0 || key(j) != Some(k) {
                    continue;
                }
                if current == 0 {
                    current = provisional[j];
                } else {
                    sets.union(current, provisional[j]);
                }
            }
            provisional[i] = if current == 0 { sets.make() } else { current };
        }
    }

    let mut remap = vec![0u32; sets.parent.len()];
    let mut count = 0;
    let ids = provisional
        .iter()
        .map(|&p| {
            if p == 0 {
                return 0;
            }
            let root = sets.find(p) as usize;
            if remap[root] == 0 {
                count += 1;
                remap[root] = count;
            }
            remap[root]
        })
        .collect();
    ComponentLabeling {
        height,
        width,
        connectivity,
        ids,
        count,
    }
}

pub fn connected_components(mask: &InstanceMask, connectivity: Connectivity) -> ComponentLabeling {
    let bits = mask.bits();
    label_by_key(
        mask.height(),
        mask.width(),
        |i| bits[i].then_some(()),
        connectivity,
    )
}

/// Labels pixels by equal nonzero values of `keys`, so adjacent regions with
/// different keys stay separate components.
pub fn components_by_key(
    height: usize,
    width: usize,
    keys: &[u32],
    connectivity: Connectivity,
) -> ComponentLabeling {
    label_by_key(
        height,
        width,
        |i| (keys[i] != 0).then_some(keys[i]),
        connectivity,
    )
}

pub(crate) fn check_disjoint(seeds: &[InstanceMask]) -> Result<()> {
    let Some(first) = seeds.first() else {
        return Ok(());
    };
    let (h, w) = first.dims();
    let mut owner = vec![false; h * w];
    for s in seeds {
        first.check_same_dims(s)?;
        for i in s.support() {
            if owner[i] {
                return Err(Error::OverlappingSeeds {
                    row: i / w,
                    col: i % w,
                });
            }
            owner[i] = true;
        }
    }
    Ok(())
}

/// Splits every component that overlaps more than one seed. Each pixel of
/// such a component goes to its nearest overlapped seed; pixels whose two
/// smallest seed distances are equal are removed. The pieces are relabeled
/// so that every output component intersects at most one seed.
pub fn split_components(
    components: &ComponentLabeling,
    seeds: &[InstanceMask],
) -> Result<ComponentLabeling> {
    check_disjoint(seeds)?;
    for s in seeds {
        if s.dims() != components.dims() {
            return Err(Error::DimensionMismatch {
                expected: components.dims(),
                actual: s.dims(),
            });
        }
    }
    let (h, w) = components.dims();
    let n = components.count() as usize;

    // seeds overlapped by each component
    let mut overlapped: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (si, s) in seeds.iter().enumerate() {
        for i in s.support() {
            let id = components.ids()[i] as usize;
            if id != 0 && overlapped[id].last() != Some(&si) {
                overlapped[id].push(si);
            }
        }
    }

    let mut needed: Vec<usize> = overlapped
        .iter()
        .filter(|o| o.len() > 1)
        .flatten()
        .copied()
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let mut seed_dist: Vec<Option<Vec<Option<u64>>>> = vec![None; seeds.len()];
    for &si in &needed {
        seed_dist[si] = Some(squared_distance_transform(&seeds[si]));
    }

    // key = component id * (seeds + 1) + (assigned seed + 1), 0 = removed/background
    let stride = seeds.len() as u32 + 1;
    let mut keys = vec![0u32; h * w];
    for (i, &id) in components.ids().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let over = &overlapped[id as usize];
        if over.len() <= 1 {
            keys[i] = id * stride;
            continue;
        }
        let mut best: Option<(u64, usize)> = None;
        let mut second: Option<u64> = None;
        for &si in over {
            let d = seed_dist[si].as_ref().unwrap()[i].expect("seed is nonempty");
            match best {
                Some((b, _)) if d >= b => {
                    if second.is_none_or(|s| d < s) {
                        second = Some(d);
                    }
                }
                _ => {
                    second = best.map(|(b, _)| b);
                    best = Some((d, si));
                }
            }
        }
        let (b, si) = best.unwrap();
        if second != Some(b) {
            keys[i] = id * stride + si as u32 + 1;
        }
    }
    Ok(components_by_key(h, w, &keys, components.connectivity()))
}

/// Result of matching seeds to predicted components.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pairing {
    /// `(seed index, component id)` pairs in seed order.
    pub pairs: Vec<(usize, u32)>,
    pub unpaired: Vec<usize>,
}

/// Pairs each seed with the component covering at least half of its pixels.
/// When two components both reach half coverage the larger overlap wins,
/// then the lower id.
pub fn pair_seeds(seeds: &[InstanceMask], components: &ComponentLabeling) -> Pairing {
    let mut pairing = Pairing::default();
    let mut overlap = vec![0usize; components.count() as usize + 1];
    for (si, seed) in seeds.iter().enumerate() {
        overlap.fill(0);
        let mut area = 0;
        for i in seed.support() {
            area += 1;
            overlap[components.ids()[i] as usize] += 1;
        }
        let best = overlap
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(_, &o)| o > 0 && 2 * o >= area)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((id, _)) => pairing.pairs.push((si, id as u32)),
            None => pairing.unpaired.push(si),
        }
    }
    pairing
}
