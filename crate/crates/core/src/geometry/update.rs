//! Multi-object, multi-class label update.
//!
//! 1. Seeds are the connected components of each object class of the current
//!    approximate label.
//! 2. The prediction is binarized (any object class is foreground) and its
//!    connected components are computed.
//! 3. Components overlapping several seeds are split between them.
//! 4. Seeds covered at least half by a component are grown toward it with
//!    the level-set rule; unpaired seeds stay as they are.
//!
//! Grown pixels take the class of their seed. Where grown regions of two
//! same-class seeds would touch, the pixel with the larger `(phi, seed id)`
//! key is dropped, so every seed stays a separate instance in the output.

use crate::error::{Error, Result};
use crate::geometry::components::{
    components_by_key, connected_components, pair_seeds, split_components, ComponentLabeling,
    Connectivity, Pairing,
};
use crate::geometry::levelset::{check_beta, level_set};
use crate::raster::{ClassMask, InstanceMask};

/// One connected region of a single object class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub mask: InstanceMask,
    pub class: u8,
}

/// Connected components of every object class, in raster order of their
/// first pixel.
pub fn extract_seeds(label: &ClassMask, connectivity: Connectivity) -> Vec<Seed> {
    let labeling = class_components(label, connectivity);
    let mut seeds: Vec<Option<Seed>> = vec![None; labeling.count() as usize];
    for (i, &id) in labeling.ids().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let slot = &mut seeds[id as usize - 1];
        let seed = slot.get_or_insert_with(|| Seed {
            mask: InstanceMask::empty(label.height(), label.width()),
            class: label.labels()[i],
        });
        seed.mask.set_index(i, true);
    }
    seeds.into_iter().map(|s| s.expect("ids are contiguous")).collect()
}

fn class_components(label: &ClassMask, connectivity: Connectivity) -> ComponentLabeling {
    let bg = label.background();
    let keys: Vec<u32> = label
        .labels()
        .iter()
        .map(|&l| if l == bg { 0 } else { l as u32 + 1 })
        .collect();
    components_by_key(label.height(), label.width(), &keys, connectivity)
}

/// Number of same-class connected regions.
pub fn count_instances(label: &ClassMask, connectivity: Connectivity) -> usize {
    class_components(label, connectivity).count() as usize
}

/// Diagnostics from one label update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateReport {
    pub seeds: usize,
    pub pairing: Pairing,
}

pub fn update_labels(
    seed_label: &ClassMask,
    prediction: &ClassMask,
    beta: f64,
    connectivity: Connectivity,
) -> Result<ClassMask> {
    update_labels_with_report(seed_label, prediction, beta, connectivity).map(|(m, _)| m)
}

#[derive(Clone, Copy)]
struct Claim {
    seed: usize,
    is_seed_pixel: bool,
    phi: f64,
}

impl Claim {
    fn precedes(&self, other: &Claim) -> bool {
        (!self.is_seed_pixel)
            .cmp(&!other.is_seed_pixel)
            .then(self.phi.total_cmp(&other.phi))
            .then(self.seed.cmp(&other.seed))
            .is_lt()
    }
}

pub fn update_labels_with_report(
    seed_label: &ClassMask,
    prediction: &ClassMask,
    beta: f64,
    connectivity: Connectivity,
) -> Result<(ClassMask, UpdateReport)> {
    if seed_label.dims() != prediction.dims() {
        return Err(Error::DimensionMismatch {
            expected: seed_label.dims(),
            actual: prediction.dims(),
        });
    }
    check_beta(beta)?;
    let (h, w) = seed_label.dims();

    let seeds = extract_seeds(seed_label, connectivity);
    let masks: Vec<InstanceMask> = seeds.iter().map(|s| s.mask.clone()).collect();
    let components = connected_components(&prediction.foreground(), connectivity);
    let split = split_components(&components, &masks)?;
    let pairing = pair_seeds(&masks, &split);

    let mut claims: Vec<Option<Claim>> = vec![None; h * w];
    for (si, seed) in seeds.iter().enumerate() {
        for i in seed.mask.support() {
            claims[i] = Some(Claim {
                seed: si,
                is_seed_pixel: true,
                phi: f64::NEG_INFINITY,
            });
        }
    }
    for &(si, cid) in &pairing.pairs {
        let seed = &seeds[si].mask;
        let phi = level_set(seed, &split.mask(cid), beta)?;
        let grown = component_containing(&phi.sublevel(), seed, connectivity);
        for i in grown.support() {
            let claim = Claim {
                seed: si,
                is_seed_pixel: false,
                phi: phi.values()[i],
            };
            match &claims[i] {
                Some(existing) if !claim.precedes(existing) => {}
                _ => claims[i] = Some(claim),
            }
        }
    }

    // drop pixels touching a stronger claim of another same-class seed
    let mut keep: Vec<bool> = claims.iter().map(Option::is_some).collect();
    for i in 0..h * w {
        let Some(claim) = claims[i] else { continue };
        if claim.is_seed_pixel {
            continue;
        }
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for &(dr, dc) in connectivity.offsets() {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            if let Some(other) = claims[nr as usize * w + nc as usize] {
                if other.seed != claim.seed
                    && seeds[other.seed].class == seeds[claim.seed].class
                    && other.precedes(&claim)
                {
                    keep[i] = false;
                    break;
                }
            }
        }
    }

    let mut regions: Vec<InstanceMask> = vec![InstanceMask::empty(h, w); seeds.len()];
    for (i, claim) in claims.iter().enumerate() {
        if let (Some(claim), true) = (claim, keep[i]) {
            regions[claim.seed].set_index(i, true);
        }
    }
    let bg = seed_label.background();
    let mut labels = vec![bg; h * w];
    for (seed, region) in seeds.iter().zip(&regions) {
        for i in component_containing(region, &seed.mask, connectivity).support() {
            labels[i] = seed.class;
        }
    }
    let out = ClassMask::new(h, w, seed_label.classes(), labels)?;
    Ok((
        out,
        UpdateReport {
            seeds: seeds.len(),
            pairing,
        },
    ))
}

/// Pixels of `region` connected to the (connected) `seed`.
fn component_containing(
    region: &InstanceMask,
    seed: &InstanceMask,
    connectivity: Connectivity,
) -> InstanceMask {
    let labeling = connected_components(region, connectivity);
    let mut wanted = vec![false; labeling.count() as usize + 1];
    for i in seed.support() {
        wanted[labeling.ids()[i] as usize] = true;
    }
    wanted[0] = false;
    InstanceMask::new(
        region.height(),
        region.width(),
        labeling.ids().iter().map(|&id| wanted[id as usize]).collect(),
    )
    .expect("dims are consistent")
}
