//! Imagined action application: pick&place, rotate and flip produce a new
//! scene by cut-and-paste on the object layers, never by mutating the input.
//!
//! Rotations are re-derived from the canonical (0-degree) patch at the total
//! accumulated angle, so chains of rotations across search branches compose
//! bit-exactly with a single rotation by the summed angle.

use std::sync::Arc;

use thiserror::Error;

use crate::raster::{rotate_patch, ColorSampling, Rgb};
use crate::scene::{
    Affordance, AffordanceMap, Composite, ObjectId, ObjectInstance, PatchSet, Scene, SceneError,
};

/// Fraction of a placed footprint that a host's hole/place-on region must
/// cover before the placed object becomes its child and rides along with it.
pub const CONTAINMENT_MIN_FRACTION: f64 = 0.9;

/// One atomic imagined action. A planning step may chain up to three of
/// these (rotate, flip, then pick&place) into a single post-action image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    PickPlace {
        id: ObjectId,
        /// Pixel the object's bbox center is moved onto.
        target: (u32, u32),
        /// Name of the placement region (compartment or host object), kept
        /// for symbolic translation and tree dumps.
        region: String,
    },
    Rotate {
        id: ObjectId,
        /// Relative angle in degrees; a multiple of 15 in 15..=345.
        angle: u16,
    },
    Flip {
        id: ObjectId,
    },
}

impl Action {
    pub fn id(&self) -> ObjectId {
        match self {
            Action::PickPlace { id, .. } | Action::Rotate { id, .. } | Action::Flip { id } => *id,
        }
    }
}

#[derive(Debug, Error)]
pub enum ActionError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("object {0} has no visible grasp affordance")]
    NotGraspable(ObjectId),
    #[error("target pixel ({0}, {1}) carries neither place-on nor hole")]
    TargetNotPlaceable(u32, u32),
    #[error("target pixel ({0}, {1}) outside the scene")]
    TargetOutsideScene(u32, u32),
    #[error("moved subtree would leave the scene extent")]
    OutOfBounds,
    #[error("rotation angle {0} is not a multiple of 15 in 15..=345")]
    IllegalAngle(u16),
    #[error("no dictionary entry for {0:?} in {1:?} pose")]
    MissingPose(crate::scene::ClassLabel, crate::scene::Pose),
}

/// Derive the displayed patch for a pose/rotation: rotate the canonical
/// rasters by the total angle, nearest-neighbor for the binary channels and
/// bilinear for the appearance, masked to the rotated mask.
///
/// The planner sweeps the same canonical patch over many angles and regions,
/// so results are memoized per (canonical, angle). The cache keeps a strong
/// reference to each canonical, which keeps the pointer key stable.
pub fn derive_patch(canonical: &Arc<PatchSet>, rotation: u16) -> Arc<PatchSet> {
    let rotation = rotation % 360;
    if rotation == 0 {
        return canonical.clone();
    }
    thread_local! {
        static CACHE: std::cell::RefCell<
            std::collections::HashMap<(usize, u16), (Arc<PatchSet>, Arc<PatchSet>)>,
        > = std::cell::RefCell::new(std::collections::HashMap::new());
    }
    let key = (Arc::as_ptr(canonical) as usize, rotation);
    let hit = CACHE.with(|c| {
        c.borrow().get(&key).and_then(|(canon, derived)| {
            Arc::ptr_eq(canon, canonical).then(|| derived.clone())
        })
    });
    if let Some(found) = hit {
        return found;
    }
    let chans: Vec<&crate::raster::Mask> = canonical.affordances.iter().collect();
    let rotated = rotate_patch(
        &canonical.mask,
        &canonical.appearance,
        &chans,
        rotation,
        ColorSampling::Bilinear,
    );
    let affordances: [crate::raster::Mask; 4] = rotated
        .channels
        .try_into()
        .expect("four affordance channels in, four out");
    // Clip channels to the rotated mask so the subset invariant holds.
    let mut clipped = affordances;
    for ch in &mut clipped {
        *ch = ch.intersect(&rotated.mask);
    }
    let derived = Arc::new(
        PatchSet::new(rotated.mask, rotated.appearance, clipped)
            .expect("rotation preserves patch structure"),
    );
    CACHE.with(|c| {
        let mut map = c.borrow_mut();
        if map.len() >= 4096 {
            map.clear();
        }
        map.insert(key, (canonical.clone(), derived.clone()));
    });
    derived
}

/// Recolor a gray dictionary template with an instance tint.
pub fn tint_patch(template: &PatchSet, tint: [u8; 3]) -> PatchSet {
    let w = template.width();
    let h = template.height();
    let mut appearance = Rgb::new(w, h, [0, 0, 0]);
    for (x, y) in template.mask.iter_set() {
        let luma = template.appearance.get(x, y)[0] as u32;
        let px = [
            ((tint[0] as u32 * luma + 127) / 255) as u8,
            ((tint[1] as u32 * luma + 127) / 255) as u8,
            ((tint[2] as u32 * luma + 127) / 255) as u8,
        ];
        appearance.set(x, y, px);
    }
    PatchSet::new(template.mask.clone(), appearance, template.affordances.clone())
        .expect("tinting keeps structure")
}

/// Memoized tint of a shared dictionary template; the sweep flips the same
/// template once per candidate otherwise. The cache pins the template Arc so
/// the pointer key stays stable.
pub fn tint_patch_cached(template: &Arc<PatchSet>, tint: [u8; 3]) -> Arc<PatchSet> {
    thread_local! {
        static CACHE: std::cell::RefCell<
            std::collections::HashMap<(usize, [u8; 3]), (Arc<PatchSet>, Arc<PatchSet>)>,
        > = std::cell::RefCell::new(std::collections::HashMap::new());
    }
    let key = (Arc::as_ptr(template) as usize, tint);
    let hit = CACHE.with(|c| {
        c.borrow()
            .get(&key)
            .and_then(|(t, out)| Arc::ptr_eq(t, template).then(|| out.clone()))
    });
    if let Some(found) = hit {
        return found;
    }
    let out = Arc::new(tint_patch(template, tint));
    CACHE.with(|c| {
        let mut map = c.borrow_mut();
        if map.len() >= 1024 {
            map.clear();
        }
        map.insert(key, (template.clone(), out.clone()));
    });
    out
}

/// True if the object wins at least one grasp pixel in the overlay.
pub fn grasp_available(comp: &Composite, id: ObjectId) -> bool {
    let grasp = comp.affordances.channel(Affordance::Grasp);
    grasp.iter_set().any(|(x, y)| comp.owner(x, y) == Some(id))
}

/// True if the pixel carries place-on or hole in the overlay.
pub fn target_placeable(map: &AffordanceMap, x: u32, y: u32) -> bool {
    map.get(Affordance::PlaceOn, x, y) || map.get(Affordance::Hole, x, y)
}

/// Place a patch so its bbox center lands on the given doubled-coordinate
/// center ("take the center of the object's bounding box as the origin").
fn origin_for_center2(center2: (i64, i64), w: u32, h: u32) -> (i32, i32) {
    (
        ((center2.0 - w as i64).div_euclid(2)) as i32,
        ((center2.1 - h as i64).div_euclid(2)) as i32,
    )
}

fn in_bounds(scene: &Scene, obj: &ObjectInstance) -> bool {
    obj.origin.0 >= 0
        && obj.origin.1 >= 0
        && obj.origin.0 as i64 + obj.patch.width() as i64 <= scene.width as i64
        && obj.origin.1 as i64 + obj.patch.height() as i64 <= scene.height as i64
}

fn clamp_into_bounds(scene: &Scene, origin: (i32, i32), w: u32, h: u32) -> (i32, i32) {
    let x = origin.0.clamp(0, (scene.width.saturating_sub(w)) as i32);
    let y = origin.1.clamp(0, (scene.height.saturating_sub(h)) as i32);
    (x, y)
}

/// Reassign containment for a freshly moved root: it becomes the child of
/// the topmost non-subtree object whose hole/place-on region covers at least
/// [`CONTAINMENT_MIN_FRACTION`] of the moved footprint.
fn resolve_parent(scene: &Scene, moved: ObjectId) -> Result<Option<ObjectId>, SceneError> {
    let subtree = scene.subtree(moved)?;
    let (footprint, (fx, fy)) = scene.footprint_window(moved)?;
    let total = footprint.count();
    if total == 0 {
        return Ok(None);
    }
    let mut best: Option<(u32, ObjectId)> = None;
    for host in &scene.objects {
        if subtree.contains(&host.id) {
            continue;
        }
        let mut covered = 0u64;
        for (wx, wy) in footprint.iter_set() {
            let px = fx as i64 + wx as i64 - host.origin.0 as i64;
            let py = fy as i64 + wy as i64 - host.origin.1 as i64;
            if host.patch.affordance(Affordance::Hole).get_clipped(px, py)
                || host.patch.affordance(Affordance::PlaceOn).get_clipped(px, py)
            {
                covered += 1;
            }
        }
        if (covered as f64) >= CONTAINMENT_MIN_FRACTION * total as f64 {
            let key = (host.z, host.id);
            if best.map(|(z, id)| key > (z, id)).unwrap_or(true) {
                best = Some(key);
            }
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Lift the whole subtree to fresh z slots above everything else, keeping
/// its internal stacking order.
fn lift_subtree_z(scene: &mut Scene, subtree: &[ObjectId]) {
    let mut members: Vec<(u32, ObjectId)> = subtree
        .iter()
        .map(|id| (scene.object(*id).expect("subtree member").z, *id))
        .collect();
    members.sort();
    let mut next = scene
        .objects
        .iter()
        .filter(|o| !subtree.contains(&o.id))
        .map(|o| o.z + 1)
        .max()
        .unwrap_or(0);
    for (_, id) in members {
        scene.object_mut(id).expect("subtree member").z = next;
        next += 1;
    }
}

fn apply_pick_place(
    scene: &Scene,
    id: ObjectId,
    target: (u32, u32),
    clamp: bool,
) -> Result<Scene, ActionError> {
    let obj = scene.object(id)?;
    let bbox = obj.bbox();
    let (cx2, cy2) = bbox.center2();
    let target2 = (2 * target.0 as i64 + 1, 2 * target.1 as i64 + 1);
    let mut delta = (
        (target2.0 - cx2).div_euclid(2) as i32,
        (target2.1 - cy2).div_euclid(2) as i32,
    );
    let mut out = scene.clone();
    let subtree = out.subtree(id)?;
    if clamp {
        // Keep the root patch inside the extent; children follow the same
        // shifted delta.
        let want = (obj.origin.0 + delta.0, obj.origin.1 + delta.1);
        let got = clamp_into_bounds(scene, want, obj.patch.width(), obj.patch.height());
        delta = (delta.0 + got.0 - want.0, delta.1 + got.1 - want.1);
    }
    for member in &subtree {
        let m = out.object_mut(*member)?;
        m.origin = (m.origin.0 + delta.0, m.origin.1 + delta.1);
    }
    if !clamp {
        for member in &subtree {
            if !in_bounds(&out, out.object(*member)?) {
                return Err(ActionError::OutOfBounds);
            }
        }
    }
    // Detach, then re-attach under whatever now contains the footprint.
    out.object_mut(id)?.parent = None;
    let new_parent = resolve_parent(&out, id)?;
    out.object_mut(id)?.parent = new_parent;
    lift_subtree_z(&mut out, &subtree);
    Ok(out)
}

fn apply_rotate(scene: &Scene, id: ObjectId, angle: u16, clamp: bool) -> Result<Scene, ActionError> {
    if angle % 15 != 0 || angle == 0 || angle >= 360 {
        return Err(ActionError::IllegalAngle(angle));
    }
    let mut out = scene.clone();
    let subtree = out.subtree(id)?;
    let pivot2 = out.object(id)?.bbox().center2();
    let theta = (angle as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    for member in &subtree {
        let obj = out.object(*member)?;
        let new_rotation = (obj.rotation + angle) % 360;
        let new_patch = derive_patch(&obj.canonical, new_rotation);
        let c2 = obj.bbox().center2();
        let new_c2 = if *member == id {
            pivot2
        } else {
            // Children orbit the root's bbox center rigidly.
            let vx = (c2.0 - pivot2.0) as f64;
            let vy = (c2.1 - pivot2.1) as f64;
            (
                pivot2.0 + (cos * vx - sin * vy).round() as i64,
                pivot2.1 + (sin * vx + cos * vy).round() as i64,
            )
        };
        let mut origin = origin_for_center2(new_c2, new_patch.width(), new_patch.height());
        if clamp {
            origin = clamp_into_bounds(&out, origin, new_patch.width(), new_patch.height());
        }
        let m = out.object_mut(*member)?;
        m.rotation = new_rotation;
        m.patch = new_patch;
        m.origin = origin;
    }
    if !clamp {
        for member in &subtree {
            if !in_bounds(&out, out.object(*member)?) {
                return Err(ActionError::OutOfBounds);
            }
        }
    }
    Ok(out)
}

fn apply_flip(scene: &Scene, id: ObjectId, clamp: bool) -> Result<Scene, ActionError> {
    let obj = scene.object(id)?;
    let other = obj.pose.other();
    let template = scene
        .dictionary
        .get(obj.class, other)
        .ok_or(ActionError::MissingPose(obj.class, other))?;
    let canonical = match obj.tint {
        Some(tint) => tint_patch_cached(template, tint),
        None => template.clone(),
    };
    let new_patch = derive_patch(&canonical, obj.rotation);
    let c2 = obj.bbox().center2();
    let mut origin = origin_for_center2(c2, new_patch.width(), new_patch.height());
    if clamp {
        origin = clamp_into_bounds(scene, origin, new_patch.width(), new_patch.height());
    }
    let mut out = scene.clone();
    let m = out.object_mut(id)?;
    m.pose = other;
    m.canonical = canonical;
    m.patch = new_patch;
    m.origin = origin;
    if !clamp && !in_bounds(&out, out.object(id)?) {
        return Err(ActionError::OutOfBounds);
    }
    Ok(out)
}

/// Apply one action with full precondition checks against the given
/// pre-action overlay: the object must have a visible grasp affordance and a
/// pick&place target must carry place-on or hole.
pub fn apply_action(scene: &Scene, comp: &Composite, action: &Action) -> Result<Scene, ActionError> {
    let id = action.id();
    scene.object(id)?;
    if !grasp_available(comp, id) {
        return Err(ActionError::NotGraspable(id));
    }
    if let Action::PickPlace { target, .. } = action {
        if target.0 >= scene.width || target.1 >= scene.height {
            return Err(ActionError::TargetOutsideScene(target.0, target.1));
        }
        if !target_placeable(&comp.affordances, target.0, target.1) {
            return Err(ActionError::TargetNotPlaceable(target.0, target.1));
        }
    }
    apply_unchecked(scene, action, false)
}

/// Apply an action without affordance preconditions. With `clamp` the moved
/// patch is shifted back inside the scene instead of erroring; used when
/// replaying plans onto ground truth where an attempt must land somewhere.
pub fn apply_unchecked(scene: &Scene, action: &Action, clamp: bool) -> Result<Scene, ActionError> {
    match action {
        Action::PickPlace { id, target, .. } => apply_pick_place(scene, *id, *target, clamp),
        Action::Rotate { id, angle } => apply_rotate(scene, *id, *angle, clamp),
        Action::Flip { id } => apply_flip(scene, *id, clamp),
    }
}

/// Apply a rotate/flip/pick&place chain as one imagined maneuver. The grasp
/// and target preconditions are checked once against the pre-step overlay,
/// matching how a step is selected from it.
pub fn apply_step(
    scene: &Scene,
    comp: &Composite,
    actions: &[Action],
) -> Result<Scene, ActionError> {
    let mut cur = None;
    for action in actions {
        let id = action.id();
        if !grasp_available(comp, id) {
            return Err(ActionError::NotGraspable(id));
        }
        if let Action::PickPlace { target, .. } = action {
            if target.0 >= scene.width || target.1 >= scene.height {
                return Err(ActionError::TargetOutsideScene(target.0, target.1));
            }
            if !target_placeable(&comp.affordances, target.0, target.1) {
                return Err(ActionError::TargetNotPlaceable(target.0, target.1));
            }
        }
        let base = cur.as_ref().unwrap_or(scene);
        cur = Some(apply_unchecked(base, action, false)?);
    }
    Ok(cur.unwrap_or_else(|| scene.clone()))
}

/// Flatten a scene to the post-action image and affordance map, the input
/// for the next planning step.
pub fn render(scene: &Scene) -> Result<(Rgb, AffordanceMap), SceneError> {
    let comp = scene.composite()?;
    Ok((comp.image, comp.affordances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use crate::scene::testutil::{empty_scene, simple_object, solid_patch};
    use crate::scene::{ClassLabel, Pose};

    fn graspable_patch(w: u32, h: u32) -> Arc<PatchSet> {
        solid_patch(w, h, [50, 60, 70], &[Affordance::Grasp, Affordance::Obstruct])
    }

    fn scene_with_placeon() -> Scene {
        let mut scene = empty_scene(96, 96);
        Arc::make_mut(&mut scene.background_affordances)[Affordance::PlaceOn.channel()] = Mask::filled(96, 96);
        scene
    }

    #[test]
    fn pick_place_centers_on_target() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "o", ClassLabel::Apple, graspable_patch(9, 9), (2, 2), 0));
        let comp = scene.composite().unwrap();
        let action = Action::PickPlace { id: ObjectId(0), target: (50, 40), region: "t".into() };
        let out = apply_action(&scene, &comp, &action).unwrap();
        let bbox = out.object(ObjectId(0)).unwrap().bbox();
        assert_eq!(bbox.center(), (50, 40));
        // Input untouched.
        assert_eq!(scene.object(ObjectId(0)).unwrap().origin, (2, 2));
    }

    #[test]
    fn pick_place_carries_children() {
        let mut scene = scene_with_placeon();
        let cup = solid_patch(
            16,
            16,
            [1, 1, 1],
            &[Affordance::Grasp, Affordance::Hole, Affordance::PlaceOn],
        );
        scene.objects.push(simple_object(0, "cup", ClassLabel::Cup, cup, (10, 10), 0));
        let mut apple = simple_object(1, "apple", ClassLabel::Apple, graspable_patch(6, 6), (15, 15), 1);
        apple.parent = Some(ObjectId(0));
        scene.objects.push(apple);
        let comp = scene.composite().unwrap();
        let action = Action::PickPlace { id: ObjectId(0), target: (60, 60), region: "t".into() };
        let out = apply_action(&scene, &comp, &action).unwrap();
        let cup_delta = (
            out.object(ObjectId(0)).unwrap().origin.0 - 10,
            out.object(ObjectId(0)).unwrap().origin.1 - 10,
        );
        let apple_origin = out.object(ObjectId(1)).unwrap().origin;
        assert_eq!(apple_origin, (15 + cup_delta.0, 15 + cup_delta.1));
        assert_eq!(out.object(ObjectId(1)).unwrap().parent, Some(ObjectId(0)));
    }

    #[test]
    fn pick_place_assigns_containment_and_z() {
        let mut scene = scene_with_placeon();
        let can = solid_patch(
            20,
            20,
            [1, 1, 1],
            &[Affordance::Grasp, Affordance::Hole, Affordance::PlaceOn],
        );
        scene.objects.push(simple_object(0, "can", ClassLabel::Can, can, (40, 40), 0));
        scene.objects.push(simple_object(1, "apple", ClassLabel::Apple, graspable_patch(6, 6), (2, 2), 1));
        let comp = scene.composite().unwrap();
        let action = Action::PickPlace { id: ObjectId(1), target: (50, 50), region: "can".into() };
        let out = apply_action(&scene, &comp, &action).unwrap();
        let apple = out.object(ObjectId(1)).unwrap();
        assert_eq!(apple.parent, Some(ObjectId(0)));
        assert!(apple.z > out.object(ObjectId(0)).unwrap().z);
    }

    #[test]
    fn pick_place_rejects_bad_target_and_oob() {
        let mut scene = empty_scene(64, 64);
        Arc::make_mut(&mut scene.background_affordances)[Affordance::PlaceOn.channel()] =
            Mask::from_fn(64, 64, |x, _| x >= 32);
        scene.objects.push(simple_object(0, "o", ClassLabel::Apple, graspable_patch(9, 9), (2, 2), 0));
        let comp = scene.composite().unwrap();
        let bad = Action::PickPlace { id: ObjectId(0), target: (5, 5), region: "t".into() };
        assert!(matches!(
            apply_action(&scene, &comp, &bad),
            Err(ActionError::TargetNotPlaceable(5, 5))
        ));
        let oob = Action::PickPlace { id: ObjectId(0), target: (62, 32), region: "t".into() };
        assert!(matches!(apply_action(&scene, &comp, &oob), Err(ActionError::OutOfBounds)));
    }

    #[test]
    fn ungraspable_object_is_rejected() {
        let mut scene = scene_with_placeon();
        let no_grasp = solid_patch(8, 8, [1, 1, 1], &[Affordance::Obstruct]);
        scene.objects.push(simple_object(0, "o", ClassLabel::Cuboid, no_grasp, (2, 2), 0));
        let comp = scene.composite().unwrap();
        let action = Action::PickPlace { id: ObjectId(0), target: (40, 40), region: "t".into() };
        assert!(matches!(apply_action(&scene, &comp, &action), Err(ActionError::NotGraspable(_))));
    }

    #[test]
    fn buried_object_is_not_graspable() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "under", ClassLabel::Apple, graspable_patch(8, 8), (10, 10), 0));
        scene.objects.push(simple_object(1, "over", ClassLabel::Plate, graspable_patch(12, 12), (8, 8), 1));
        let comp = scene.composite().unwrap();
        assert!(!grasp_available(&comp, ObjectId(0)));
        assert!(grasp_available(&comp, ObjectId(1)));
    }

    #[test]
    fn rotate_rejects_identity_angles() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "o", ClassLabel::Cuboid, graspable_patch(12, 6), (20, 20), 0));
        let comp = scene.composite().unwrap();
        for bad in [0u16, 360, 7, 365] {
            let action = Action::Rotate { id: ObjectId(0), angle: bad };
            assert!(
                matches!(apply_action(&scene, &comp, &action), Err(ActionError::IllegalAngle(_))),
                "angle {bad} must be rejected"
            );
        }
    }

    #[test]
    fn rotate_90_swaps_bbox_and_preserves_count() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "o", ClassLabel::Cuboid, graspable_patch(12, 6), (20, 20), 0));
        let comp = scene.composite().unwrap();
        let action = Action::Rotate { id: ObjectId(0), angle: 90 };
        let out = apply_action(&scene, &comp, &action).unwrap();
        let obj = out.object(ObjectId(0)).unwrap();
        assert_eq!((obj.patch.width(), obj.patch.height()), (6, 12));
        assert_eq!(obj.patch.mask.count(), 72);
        // Rotation pivots on the bbox center.
        let before = scene.object(ObjectId(0)).unwrap().bbox().center2();
        assert_eq!(obj.bbox().center2(), before);
    }

    #[test]
    fn rotation_composition_equals_total() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "o", ClassLabel::Cuboid, graspable_patch(14, 8), (30, 30), 0));
        let comp = scene.composite().unwrap();
        let mut stepped = scene.clone();
        for _ in 0..6 {
            let c = stepped.composite().unwrap();
            stepped =
                apply_action(&stepped, &c, &Action::Rotate { id: ObjectId(0), angle: 15 }).unwrap();
        }
        let direct =
            apply_action(&scene, &comp, &Action::Rotate { id: ObjectId(0), angle: 90 }).unwrap();
        assert_eq!(
            stepped.object(ObjectId(0)).unwrap().patch.mask,
            direct.object(ObjectId(0)).unwrap().patch.mask
        );
        // 24 steps of 15 degrees come back to the canonical mask exactly.
        let mut full = scene.clone();
        for _ in 0..24 {
            let c = full.composite().unwrap();
            full = apply_action(&full, &c, &Action::Rotate { id: ObjectId(0), angle: 15 }).unwrap();
        }
        assert_eq!(
            full.object(ObjectId(0)).unwrap().patch.mask,
            scene.object(ObjectId(0)).unwrap().patch.mask
        );
    }

    #[test]
    fn flip_uses_dictionary_and_double_flip_restores() {
        let mut scene = scene_with_placeon();
        let horizontal = solid_patch(14, 8, [128, 128, 128], &[Affordance::Grasp, Affordance::Obstruct]);
        let vertical = solid_patch(8, 8, [128, 128, 128], &[Affordance::Grasp, Affordance::Obstruct]);
        Arc::make_mut(&mut scene.dictionary).insert(ClassLabel::Cuboid, Pose::Horizontal, horizontal.clone());
        Arc::make_mut(&mut scene.dictionary).insert(ClassLabel::Cuboid, Pose::Vertical, vertical.clone());
        let mut obj = simple_object(0, "blue_cuboid", ClassLabel::Cuboid, horizontal.clone(), (20, 20), 0);
        obj.tint = Some([0, 0, 255]);
        obj.canonical = Arc::new(tint_patch(&horizontal, [0, 0, 255]));
        obj.patch = obj.canonical.clone();
        scene.objects.push(obj);

        let comp = scene.composite().unwrap();
        let flipped = apply_action(&scene, &comp, &Action::Flip { id: ObjectId(0) }).unwrap();
        let f = flipped.object(ObjectId(0)).unwrap();
        assert_eq!(f.pose, Pose::Vertical);
        assert_eq!(f.patch.mask, vertical.mask);

        let comp2 = flipped.composite().unwrap();
        let back = apply_action(&flipped, &comp2, &Action::Flip { id: ObjectId(0) }).unwrap();
        let b = back.object(ObjectId(0)).unwrap();
        assert_eq!(b.pose, Pose::Horizontal);
        assert_eq!(b.patch.mask, horizontal.mask);
        assert_eq!(
            b.patch.appearance,
            scene.object(ObjectId(0)).unwrap().patch.appearance
        );
    }

    #[test]
    fn flip_without_entry_fails() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "apple", ClassLabel::Apple, graspable_patch(8, 8), (10, 10), 0));
        let comp = scene.composite().unwrap();
        assert!(matches!(
            apply_action(&scene, &comp, &Action::Flip { id: ObjectId(0) }),
            Err(ActionError::MissingPose(ClassLabel::Apple, Pose::Vertical))
        ));
    }

    #[test]
    fn render_changes_only_on_moved_footprints() {
        let mut scene = scene_with_placeon();
        scene.objects.push(simple_object(0, "o", ClassLabel::Apple, graspable_patch(9, 9), (4, 4), 0));
        let comp = scene.composite().unwrap();
        let (before, _) = render(&scene).unwrap();
        let action = Action::PickPlace { id: ObjectId(0), target: (60, 60), region: "t".into() };
        let out = apply_action(&scene, &comp, &action).unwrap();
        let (after, _) = render(&out).unwrap();
        let old_bbox = scene.object(ObjectId(0)).unwrap().bbox();
        let new_bbox = out.object(ObjectId(0)).unwrap().bbox();
        for y in 0..96 {
            for x in 0..96 {
                let changed = before.get(x, y) != after.get(x, y);
                if changed {
                    let inside = old_bbox.contains_point(x as i32, y as i32)
                        || new_bbox.contains_point(x as i32, y as i32);
                    assert!(inside, "pixel ({x},{y}) changed outside both footprints");
                }
            }
        }
    }
}
