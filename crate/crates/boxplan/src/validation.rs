//! Validity checking of imagined actions: obstruct-conflict counting against
//! a threshold that scales with scene resolution, and the goal test.

use thiserror::Error;

use crate::raster::Mask;
use crate::scene::{Affordance, ObjectId, Scene, SceneError};

/// Pixel threshold at the 1024x768 reference resolution.
pub const REFERENCE_THRESHOLD: u32 = 30;
pub const REFERENCE_WIDTH: u32 = 1024;
pub const REFERENCE_HEIGHT: u32 = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidationResult {
    pub valid: bool,
    pub conflict_pixels: u32,
    pub threshold: u32,
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Conflict threshold scaled by pixel area relative to the reference
/// resolution: round(30 * W*H / (1024*768)). Equals 30 at reference size.
pub fn scaled_threshold(width: u32, height: u32) -> u32 {
    let area = width as f64 * height as f64;
    let reference = REFERENCE_WIDTH as f64 * REFERENCE_HEIGHT as f64;
    (REFERENCE_THRESHOLD as f64 * area / reference).round() as u32
}

/// Obstruct channel of the scene with the given subtree excluded, i.e. what
/// lies underneath the moved object. Topmost-wins across the remaining
/// layers, background first. The map does not depend on where the excluded
/// subtree sits, so a candidate sweep can compute it once per object.
pub fn obstruct_without(scene: &Scene, exclude: &[ObjectId]) -> Mask {
    let mut obstruct = scene.background_affordances[Affordance::Obstruct.channel()].clone();
    let mut order: Vec<&crate::scene::ObjectInstance> =
        scene.objects.iter().filter(|o| !exclude.contains(&o.id)).collect();
    order.sort_by_key(|o| (o.z, o.id));
    for obj in order {
        for (px, py) in obj.patch.mask.iter_set() {
            let x = obj.origin.0 as i64 + px as i64;
            let y = obj.origin.1 as i64 + py as i64;
            if x >= 0 && y >= 0 && (x as u32) < scene.width && (y as u32) < scene.height {
                obstruct.set(
                    x as u32,
                    y as u32,
                    obj.patch.affordance(Affordance::Obstruct).get(px, py),
                );
            }
        }
    }
    obstruct
}

/// Count of pixels where the moved object's footprint (with its containment
/// subtree) intersects the obstruct affordance of everything else. The moved
/// subtree's own obstruct contribution is excluded before intersecting by
/// recompositing the remaining layers; what the subtree covers in a
/// topmost-wins overlay cannot be recovered from the flattened map.
pub fn conflict_area(post_scene: &Scene, moved: ObjectId) -> Result<u32, ValidationError> {
    let subtree = post_scene.subtree(moved)?;
    let obstruct = obstruct_without(post_scene, &subtree);
    conflict_against(&obstruct, post_scene, moved)
}

/// Conflict count against a precomputed exclusion map (see
/// [`obstruct_without`]).
pub fn conflict_against(
    obstruct: &Mask,
    post_scene: &Scene,
    moved: ObjectId,
) -> Result<u32, ValidationError> {
    // Count over the union footprint so overlapping subtree members (a cup
    // and the apple inside it) do not double-count pixels.
    let (footprint, (ox, oy)) = post_scene.footprint_window(moved)?;
    let mut conflict = 0u32;
    for (px, py) in footprint.iter_set() {
        let x = ox as i64 + px as i64;
        let y = oy as i64 + py as i64;
        if obstruct.get_clipped(x, y) {
            conflict += 1;
        }
    }
    Ok(conflict)
}

/// Validate an imagined placement: valid iff the conflict area is strictly
/// below the threshold.
pub fn validate(
    post_scene: &Scene,
    moved: ObjectId,
    threshold: u32,
) -> Result<ValidationResult, ValidationError> {
    let conflict_pixels = conflict_area(post_scene, moved)?;
    Ok(ValidationResult { valid: conflict_pixels < threshold, conflict_pixels, threshold })
}

/// Goal condition: no objects remaining outside the box.
pub fn goal_reached(scene: &Scene) -> bool {
    scene.outside_box().is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use crate::scene::testutil::{empty_scene, simple_object, solid_patch};
    use crate::scene::ClassLabel;

    /// Independent per-pixel double loop: for every scene pixel decide
    /// footprint membership and topmost non-subtree obstruct by scanning all
    /// layers, without Scene::composite or Scene::footprint.
    pub(crate) fn conflict_bruteforce(scene: &Scene, moved: ObjectId) -> u32 {
        let subtree = scene.subtree(moved).unwrap();
        let mut n = 0;
        for y in 0..scene.height as i64 {
            for x in 0..scene.width as i64 {
                let mut in_footprint = false;
                for id in &subtree {
                    let o = scene.object(*id).unwrap();
                    if o.patch.mask.get_clipped(x - o.origin.0 as i64, y - o.origin.1 as i64) {
                        in_footprint = true;
                    }
                }
                if !in_footprint {
                    continue;
                }
                let mut obstruct = scene.background_affordances
                    [Affordance::Obstruct.channel()]
                .get(x as u32, y as u32);
                let mut top_z: Option<(u32, u32)> = None;
                for o in &scene.objects {
                    if subtree.contains(&o.id) {
                        continue;
                    }
                    let px = x - o.origin.0 as i64;
                    let py = y - o.origin.1 as i64;
                    if o.patch.mask.get_clipped(px, py) {
                        let key = (o.z, o.id.0);
                        if top_z.map(|t| key > t).unwrap_or(true) {
                            top_z = Some(key);
                            obstruct = o
                                .patch
                                .affordance(Affordance::Obstruct)
                                .get(px as u32, py as u32);
                        }
                    }
                }
                if obstruct {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn threshold_scaling() {
        assert_eq!(scaled_threshold(1024, 768), 30);
        assert_eq!(scaled_threshold(512, 384), 8);
        assert_eq!(scaled_threshold(256, 192), 2);
    }

    #[test]
    fn conflict_on_clean_placeon_is_zero() {
        let mut scene = empty_scene(64, 64);
        Arc::make_mut(&mut scene.background_affordances)[Affordance::PlaceOn.channel()] =
            crate::raster::Mask::filled(64, 64);
        let p = solid_patch(10, 10, [1, 1, 1], &[Affordance::Grasp]);
        scene.objects.push(simple_object(0, "o", ClassLabel::Apple, p, (10, 10), 0));
        assert_eq!(conflict_area(&scene, ObjectId(0)).unwrap(), 0);
    }

    #[test]
    fn conflict_counts_exact_overlap() {
        // 10x10 object centered over an 8x8 obstruct patch -> 64.
        let mut scene = empty_scene(64, 64);
        let obstruct = solid_patch(8, 8, [5, 5, 5], &[Affordance::Obstruct]);
        let moved = solid_patch(10, 10, [1, 1, 1], &[Affordance::Grasp]);
        scene.objects.push(simple_object(0, "wall", ClassLabel::Cuboid, obstruct, (21, 21), 0));
        scene.objects.push(simple_object(1, "obj", ClassLabel::Apple, moved, (20, 20), 1));
        assert_eq!(conflict_area(&scene, ObjectId(1)).unwrap(), 64);
        assert_eq!(conflict_bruteforce(&scene, ObjectId(1)), 64);
    }

    #[test]
    fn moved_objects_own_obstruct_excluded() {
        // A solid object carries obstruct itself; alone it conflicts with
        // nothing.
        let mut scene = empty_scene(32, 32);
        let p = solid_patch(8, 8, [1, 1, 1], &[Affordance::Grasp, Affordance::Obstruct]);
        scene.objects.push(simple_object(0, "o", ClassLabel::Cuboid, p, (10, 10), 0));
        assert_eq!(conflict_area(&scene, ObjectId(0)).unwrap(), 0);
    }

    #[test]
    fn validate_strict_inequality_at_boundary() {
        let mut scene = empty_scene(64, 64);
        // 29 conflicting pixels: a 29x1 obstruct strip fully under the object.
        let strip = solid_patch(29, 1, [5, 5, 5], &[Affordance::Obstruct]);
        let moved = solid_patch(40, 10, [1, 1, 1], &[Affordance::Grasp]);
        scene.objects.push(simple_object(0, "s", ClassLabel::Cuboid, strip, (12, 14), 0));
        scene.objects.push(simple_object(1, "m", ClassLabel::Plate, moved, (10, 10), 1));
        let r = validate(&scene, ObjectId(1), 30).unwrap();
        assert!(r.valid && r.conflict_pixels == 29);

        // One more pixel: exactly 30 is invalid ("less than 30" is strict).
        let mut scene30 = empty_scene(64, 64);
        let strip30 = solid_patch(30, 1, [5, 5, 5], &[Affordance::Obstruct]);
        let moved30 = solid_patch(40, 10, [1, 1, 1], &[Affordance::Grasp]);
        scene30.objects.push(simple_object(0, "s", ClassLabel::Cuboid, strip30, (12, 14), 0));
        scene30.objects.push(simple_object(1, "m", ClassLabel::Plate, moved30, (10, 10), 1));
        let r30 = validate(&scene30, ObjectId(1), 30).unwrap();
        assert!(!r30.valid && r30.conflict_pixels == 30);
    }

    #[test]
    fn validate_monotone_in_threshold() {
        let mut scene = empty_scene(64, 64);
        let strip = solid_patch(5, 1, [5, 5, 5], &[Affordance::Obstruct]);
        let moved = solid_patch(10, 10, [1, 1, 1], &[Affordance::Grasp]);
        scene.objects.push(simple_object(0, "s", ClassLabel::Cuboid, strip, (12, 14), 0));
        scene.objects.push(simple_object(1, "m", ClassLabel::Plate, moved, (10, 10), 1));
        let mut prev_valid = false;
        for t in 0..10 {
            let r = validate(&scene, ObjectId(1), t).unwrap();
            assert!(!prev_valid || r.valid, "validity lost as threshold grew");
            prev_valid = r.valid;
        }
    }

    #[test]
    fn goal_reached_matches_outside_box() {
        let mut scene = empty_scene(64, 64);
        scene.box_region = std::sync::Arc::new(crate::raster::Mask::from_fn(64, 64, |x, _| x >= 32));
        assert!(goal_reached(&scene));
        let p = solid_patch(6, 6, [1, 1, 1], &[]);
        scene.objects.push(simple_object(0, "a", ClassLabel::Apple, p, (4, 4), 0));
        assert!(!goal_reached(&scene));
    }

    #[test]
    fn conflict_invariant_under_scene_translation() {
        // Translate all layers by (7, 5); the count must not change.
        let mk = |dx: i32, dy: i32| {
            let mut scene = empty_scene(96, 96);
            let strip = solid_patch(9, 3, [5, 5, 5], &[Affordance::Obstruct]);
            let moved = solid_patch(12, 12, [1, 1, 1], &[Affordance::Grasp]);
            scene.objects.push(simple_object(
                0,
                "s",
                ClassLabel::Cuboid,
                strip,
                (20 + dx, 24 + dy),
                0,
            ));
            scene.objects.push(simple_object(
                1,
                "m",
                ClassLabel::Plate,
                moved,
                (18 + dx, 20 + dy),
                1,
            ));
            scene
        };
        let a = conflict_area(&mk(0, 0), ObjectId(1)).unwrap();
        let b = conflict_area(&mk(7, 5), ObjectId(1)).unwrap();
        assert_eq!(a, b);
    }
}
