//! Image-space task planning for tabletop box packing.
//!
//! A scene is a layered top-view raster: a background with per-pixel
//! affordances (grasp / place-on / obstruct / hole), a box with named
//! compartments, and one layer per object. Actions (pick&place, rotate,
//! flip) are *imagined* by compositing the moved layers into a post-action
//! image, validated by counting obstruct-conflict pixels, and chained by a
//! depth-first search until no object remains outside the box. The winning
//! image sequence is then translated into a parameterized symbolic plan.
//!
//! Modules follow the pipeline:
//! - [`raster`], [`scene`]: rasters, layered scenes, compositing.
//! - [`scenegen`]: procedural scenes with ground truth and a feasibility
//!   certificate.
//! - [`perception`]: oracle perception, a seeded corruption model and
//!   dictionary-based object completion.
//! - [`imagination`], [`validation`]: action application and the
//!   conflict-area validity check.
//! - [`planner`]: greedy and exhaustive search plus the random baseline.
//! - [`symbolic`]: visual-plan to symbolic-plan translation and replay.
//! - [`ipm`]: inverse perspective mapping from tilted cameras to the
//!   canonical top view.
//! - [`eval`]: dataset-level experiments and reports.

pub mod eval;
pub mod imagination;
pub mod ipm;
pub mod manifest;
pub mod perception;
pub mod planner;
pub mod raster;
pub mod scene;
pub mod scenegen;
pub mod symbolic;
pub mod validation;
pub mod viz;

pub use raster::{Mask, Rgb};
pub use scene::{
    Affordance, AffordanceMap, BBox, ClassLabel, Compartment, Composite, ObjectId,
    ObjectInstance, PatchSet, Pose, PoseDictionary, Scene, SceneError,
};

/// SplitMix64 step; used to derive independent per-item seeds from a master
/// seed without constructing intermediate RNGs.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
