//! Distance transforms, level-set growth and the multi-object label update.

pub mod components;
pub mod edt;
pub mod levelset;
pub mod update;

pub use components::{
    connected_components, pair_seeds, split_components, ComponentLabeling, Connectivity, Pairing,
};
pub use edt::{distance_transform, DistanceField};
pub use levelset::{grow_region, level_set, LevelSetField};
pub use update::{count_instances, extract_seeds, update_labels, Seed};
