//! Layered scene model: a background raster plus z-ordered object layers
//! with per-pixel affordance channels, a containment forest for stacking,
//! and the pose dictionary used to swap an object between its horizontal
//! and vertical appearance.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Mask, Rgb};

/// Per-pixel interaction label. Each variant maps to one channel of an
/// [`AffordanceMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Affordance {
    Grasp,
    PlaceOn,
    Obstruct,
    Hole,
}

impl Affordance {
    pub const ALL: [Affordance; 4] =
        [Affordance::Grasp, Affordance::PlaceOn, Affordance::Obstruct, Affordance::Hole];

    pub fn channel(self) -> usize {
        match self {
            Affordance::Grasp => 0,
            Affordance::PlaceOn => 1,
            Affordance::Obstruct => 2,
            Affordance::Hole => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Affordance::Grasp => "grasp",
            Affordance::PlaceOn => "place_on",
            Affordance::Obstruct => "obstruct",
            Affordance::Hole => "hole",
        }
    }
}

/// Object category. `Compartment` is reserved for placement regions inside
/// the box and is never assigned to a movable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Can,
    Cup,
    Plate,
    Bowl,
    Apple,
    Box,
    Cuboid,
    Compartment,
}

impl ClassLabel {
    pub const MOVABLE: [ClassLabel; 6] = [
        ClassLabel::Can,
        ClassLabel::Cup,
        ClassLabel::Plate,
        ClassLabel::Bowl,
        ClassLabel::Apple,
        ClassLabel::Cuboid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ClassLabel::Can => "can",
            ClassLabel::Cup => "cup",
            ClassLabel::Plate => "plate",
            ClassLabel::Bowl => "bowl",
            ClassLabel::Apple => "apple",
            ClassLabel::Box => "box",
            ClassLabel::Cuboid => "cuboid",
            ClassLabel::Compartment => "compartment",
        }
    }

    pub fn from_label(s: &str) -> Option<ClassLabel> {
        Some(match s {
            "can" => ClassLabel::Can,
            "cup" => ClassLabel::Cup,
            "plate" => ClassLabel::Plate,
            "bowl" => ClassLabel::Bowl,
            "apple" => ClassLabel::Apple,
            "box" => ClassLabel::Box,
            "cuboid" => ClassLabel::Cuboid,
            "compartment" => ClassLabel::Compartment,
            _ => return None,
        })
    }
}

/// Resting pose of an object in the top view. `Horizontal` is the base pose
/// every class has; some classes also have a `Vertical` (flipped) entry in
/// the pose dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pose {
    Horizontal,
    Vertical,
}

impl Pose {
    pub fn other(self) -> Pose {
        match self {
            Pose::Horizontal => Pose::Vertical,
            Pose::Vertical => Pose::Horizontal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pose::Horizontal => "horizontal",
            Pose::Vertical => "vertical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

impl std::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Axis-aligned pixel box; may extend outside the scene for intermediate
/// geometry, final placements are bounds-checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    /// Center in doubled pixel coordinates (exact integers).
    pub fn center2(&self) -> (i64, i64) {
        (2 * self.x as i64 + self.w as i64, 2 * self.y as i64 + self.h as i64)
    }

    /// Center rounded down to whole pixels.
    pub fn center(&self) -> (i32, i32) {
        let (cx2, cy2) = self.center2();
        ((cx2.div_euclid(2)) as i32, (cy2.div_euclid(2)) as i32)
    }

    pub fn max_side(&self) -> u32 {
        self.w.max(self.h)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.x + other.w as i32
            && other.x < self.x + self.w as i32
            && self.y < other.y + other.h as i32
            && other.y < self.y + self.h as i32
    }

    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w as i32 && y < self.y + self.h as i32
    }
}

/// Bbox-tight bundle of an object's rasters: binary mask, appearance and the
/// four affordance channels, all with identical dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSet {
    pub mask: Mask,
    pub appearance: Rgb,
    pub affordances: [Mask; 4],
}

impl PatchSet {
    pub fn new(mask: Mask, appearance: Rgb, affordances: [Mask; 4]) -> Result<Self, SceneError> {
        let dims = (mask.width(), mask.height());
        if mask.is_empty() {
            return Err(SceneError::EmptyMask);
        }
        if (appearance.width(), appearance.height()) != dims {
            return Err(SceneError::PatchDimensionMismatch);
        }
        for ch in &affordances {
            if (ch.width(), ch.height()) != dims {
                return Err(SceneError::PatchDimensionMismatch);
            }
            for (x, y) in ch.iter_set() {
                if !mask.get(x, y) {
                    return Err(SceneError::AffordanceOutsideMask);
                }
            }
        }
        if mask.tight_bbox() != Some((0, 0, dims.0, dims.1)) {
            return Err(SceneError::PatchNotTight);
        }
        Ok(PatchSet { mask, appearance, affordances })
    }

    pub fn width(&self) -> u32 {
        self.mask.width()
    }

    pub fn height(&self) -> u32 {
        self.mask.height()
    }

    pub fn affordance(&self, a: Affordance) -> &Mask {
        &self.affordances[a.channel()]
    }
}

/// One object layer. `canonical` is the rotation-0 patch for the current
/// pose; `patch` is `canonical` rotated by `rotation` degrees. Both are kept
/// so accumulated rotations are always re-derived from the canonical rasters
/// instead of resampling the previous frame.
#[derive(Clone, Debug)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub name: String,
    pub class: ClassLabel,
    pub pose: Pose,
    pub canonical: Arc<PatchSet>,
    pub rotation: u16,
    pub patch: Arc<PatchSet>,
    /// Scene coordinates of the top-left of `patch`.
    pub origin: (i32, i32),
    pub z: u32,
    pub parent: Option<ObjectId>,
    /// Base color of this instance when its appearance was produced by
    /// tinting a gray dictionary template; used to re-tint after a flip.
    pub tint: Option<[u8; 3]>,
}

impl ObjectInstance {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.origin.0, self.origin.1, self.patch.width(), self.patch.height())
    }
}

/// Named placement region inside the box. Compartments belong to the
/// background; they are not movable layers.
#[derive(Clone, Debug)]
pub struct Compartment {
    pub name: String,
    pub region: Mask,
    pub origin: (i32, i32),
}

impl Compartment {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.origin.0, self.origin.1, self.region.width(), self.region.height())
    }
}

/// Lookup from (class, pose) to the canonical bbox-tight patch used when an
/// object is flipped between poses. Appearance templates are stored gray;
/// instances carry their own tint.
#[derive(Clone, Debug, Default)]
pub struct PoseDictionary {
    entries: BTreeMap<(ClassLabel, Pose), Arc<PatchSet>>,
}

impl PoseDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: ClassLabel, pose: Pose, patch: Arc<PatchSet>) {
        self.entries.insert((class, pose), patch);
    }

    pub fn get(&self, class: ClassLabel, pose: Pose) -> Option<&Arc<PatchSet>> {
        self.entries.get(&(class, pose))
    }

    pub fn has_both_poses(&self, class: ClassLabel) -> bool {
        self.get(class, Pose::Horizontal).is_some() && self.get(class, Pose::Vertical).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ClassLabel, Pose), &Arc<PatchSet>)> {
        self.entries.iter()
    }

    /// Every class with a vertical entry must also have a horizontal one.
    pub fn validate(&self) -> Result<(), SceneError> {
        for ((class, pose), _) in self.entries.iter() {
            if *pose == Pose::Vertical && self.get(*class, Pose::Horizontal).is_none() {
                return Err(SceneError::DictionaryMissingHorizontal(*class));
            }
        }
        Ok(())
    }
}

/// A full layered scene: background rasters, the box region with its
/// compartments, and object layers. Scenes are immutable snapshots; all
/// operations return new scenes or rasters.
/// Scene clones happen per imagined action, so the static parts
/// (background rasters, box geometry, dictionary) are shared; only the
/// object layers are copied.
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background: Arc<Rgb>,
    /// Static background affordances: place-on for table and compartment
    /// floors, obstruct for box walls, hole for compartment interiors.
    pub background_affordances: Arc<[Mask; 4]>,
    /// Pixels inside the box's outer rim (walls included).
    pub box_region: Arc<Mask>,
    pub compartments: Arc<Vec<Compartment>>,
    pub objects: Vec<ObjectInstance>,
    pub dictionary: Arc<PoseDictionary>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object mask has no pixels")]
    EmptyMask,
    #[error("patch rasters disagree in size")]
    PatchDimensionMismatch,
    #[error("affordance pixels outside the object mask")]
    AffordanceOutsideMask,
    #[error("patch is not tight around its mask")]
    PatchNotTight,
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("duplicate object id {0}")]
    DuplicateId(ObjectId),
    #[error("overlapping siblings {0} and {1} share z = {2}; order is ambiguous")]
    AmbiguousZ(ObjectId, ObjectId, u32),
    #[error("object {0} has unknown parent {1}")]
    UnknownParent(ObjectId, ObjectId),
    #[error("containment cycle through object {0}")]
    ContainmentCycle(ObjectId),
    #[error("child {0} must sit above its parent in z")]
    ChildBelowParent(ObjectId),
    #[error("raster size does not match scene extent")]
    ExtentMismatch,
    #[error("compartment {0} leaves the box region")]
    CompartmentOutsideBox(String),
    #[error("dictionary has a vertical entry for {0:?} but no horizontal one")]
    DictionaryMissingHorizontal(ClassLabel),
}

/// Scene-sized stack of the four binary affordance channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffordanceMap {
    pub channels: [Mask; 4],
}

impl AffordanceMap {
    pub fn empty(width: u32, height: u32) -> Self {
        AffordanceMap {
            channels: [
                Mask::new(width, height),
                Mask::new(width, height),
                Mask::new(width, height),
                Mask::new(width, height),
            ],
        }
    }

    pub fn width(&self) -> u32 {
        self.channels[0].width()
    }

    pub fn height(&self) -> u32 {
        self.channels[0].height()
    }

    pub fn channel(&self, a: Affordance) -> &Mask {
        &self.channels[a.channel()]
    }

    pub fn get(&self, a: Affordance, x: u32, y: u32) -> bool {
        self.channels[a.channel()].get(x, y)
    }
}

/// Result of flattening a scene: the composited image, the topmost-wins
/// affordance overlay, and a per-pixel owner map (`None` = background).
#[derive(Clone, Debug)]
pub struct Composite {
    pub image: Rgb,
    pub affordances: AffordanceMap,
    owner: Vec<u32>,
    width: u32,
}

const OWNER_BACKGROUND: u32 = u32::MAX;

impl Composite {
    pub fn owner(&self, x: u32, y: u32) -> Option<ObjectId> {
        let v = self.owner[(y * self.width + x) as usize];
        (v != OWNER_BACKGROUND).then_some(ObjectId(v))
    }

    /// Visible pixels of one object (those it wins in the overlay).
    pub fn visible_mask_of(&self, id: ObjectId) -> Mask {
        let w = self.width;
        let h = self.image.height();
        Mask::from_fn(w, h, |x, y| self.owner[(y * w + x) as usize] == id.0)
    }
}

impl Scene {
    pub fn object(&self, id: ObjectId) -> Result<&ObjectInstance, SceneError> {
        self.objects.iter().find(|o| o.id == id).ok_or(SceneError::UnknownObject(id))
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Result<&mut ObjectInstance, SceneError> {
        self.objects.iter_mut().find(|o| o.id == id).ok_or(SceneError::UnknownObject(id))
    }

    pub fn children_of(&self, id: ObjectId) -> Vec<ObjectId> {
        self.objects.iter().filter(|o| o.parent == Some(id)).map(|o| o.id).collect()
    }

    /// The object plus all containment descendants, parents before children.
    pub fn subtree(&self, id: ObjectId) -> Result<Vec<ObjectId>, SceneError> {
        self.object(id)?;
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            let cur = out[i];
            out.extend(self.children_of(cur));
            i += 1;
        }
        Ok(out)
    }

    /// Root objects, i.e. objects without a parent.
    pub fn roots(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(|o| o.parent.is_none())
    }

    pub fn next_z(&self) -> u32 {
        self.objects.iter().map(|o| o.z + 1).max().unwrap_or(0)
    }

    pub fn next_id(&self) -> ObjectId {
        ObjectId(self.objects.iter().map(|o| o.id.0 + 1).max().unwrap_or(0))
    }

    /// Check all structural invariants.
    pub fn validate(&self) -> Result<(), SceneError> {
        let dims = (self.width, self.height);
        if (self.background.width(), self.background.height()) != dims
            || (self.box_region.width(), self.box_region.height()) != dims
        {
            return Err(SceneError::ExtentMismatch);
        }
        for ch in self.background_affordances.iter() {
            if (ch.width(), ch.height()) != dims {
                return Err(SceneError::ExtentMismatch);
            }
        }
        for c in self.compartments.iter() {
            for (x, y) in c.region.iter_set() {
                let sx = c.origin.0 as i64 + x as i64;
                let sy = c.origin.1 as i64 + y as i64;
                if !self.box_region.get_clipped(sx, sy) {
                    return Err(SceneError::CompartmentOutsideBox(c.name.clone()));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id) {
                return Err(SceneError::DuplicateId(o.id));
            }
        }
        for o in &self.objects {
            if let Some(p) = o.parent {
                let parent = self
                    .objects
                    .iter()
                    .find(|q| q.id == p)
                    .ok_or(SceneError::UnknownParent(o.id, p))?;
                if parent.z >= o.z {
                    return Err(SceneError::ChildBelowParent(o.id));
                }
            }
        }
        // Acyclicity of the containment forest.
        for o in &self.objects {
            let mut cur = o.parent;
            let mut hops = 0;
            while let Some(p) = cur {
                hops += 1;
                if hops > self.objects.len() {
                    return Err(SceneError::ContainmentCycle(o.id));
                }
                cur = self.object(p)?.parent;
            }
        }
        self.check_sibling_z()?;
        self.dictionary.validate()?;
        Ok(())
    }

    /// Siblings (same parent, including the root level) must not share a z
    /// when their masks overlap; the compositing order would be ambiguous.
    fn check_sibling_z(&self) -> Result<(), SceneError> {
        for (i, a) in self.objects.iter().enumerate() {
            for b in self.objects.iter().skip(i + 1) {
                if a.parent != b.parent || a.z != b.z {
                    continue;
                }
                if !a.bbox().intersects(&b.bbox()) {
                    continue;
                }
                if a.patch.mask.overlap_count(a.origin, &b.patch.mask, b.origin) > 0 {
                    return Err(SceneError::AmbiguousZ(a.id, b.id, a.z));
                }
            }
        }
        Ok(())
    }

    /// Flatten the scene: every pixel shows the topmost object covering it,
    /// else the background, and the affordance overlay follows the same
    /// topmost-wins rule. Deterministic for a fixed scene.
    pub fn composite(&self) -> Result<Composite, SceneError> {
        self.check_sibling_z()?;
        let mut image = (*self.background).clone();
        let mut affordances =
            AffordanceMap { channels: (*self.background_affordances).clone() };
        let mut owner = vec![OWNER_BACKGROUND; (self.width * self.height) as usize];
        let mut order: Vec<&ObjectInstance> = self.objects.iter().collect();
        order.sort_by_key(|o| (o.z, o.id));
        for obj in order {
            for (px, py) in obj.patch.mask.iter_set() {
                let x = obj.origin.0 as i64 + px as i64;
                let y = obj.origin.1 as i64 + py as i64;
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                let (x, y) = (x as u32, y as u32);
                image.set(x, y, obj.patch.appearance.get(px, py));
                owner[(y * self.width + x) as usize] = obj.id.0;
                for a in Affordance::ALL {
                    affordances.channels[a.channel()]
                        .set(x, y, obj.patch.affordance(a).get(px, py));
                }
            }
        }
        Ok(Composite { image, affordances, owner, width: self.width })
    }

    /// Union of the masks of `id` and all its containment descendants at
    /// their current positions, as a scene-sized mask.
    pub fn footprint(&self, id: ObjectId) -> Result<Mask, SceneError> {
        let mut out = Mask::new(self.width, self.height);
        for member in self.subtree(id)? {
            let obj = self.object(member)?;
            out.blit(&obj.patch.mask, obj.origin.0, obj.origin.1);
        }
        Ok(out)
    }

    /// Footprint union built only over the subtree's bounding window,
    /// returned with the window origin. Much cheaper than a scene-sized
    /// raster when called per candidate placement.
    pub fn footprint_window(&self, id: ObjectId) -> Result<(Mask, (i32, i32)), SceneError> {
        let members = self.subtree(id)?;
        let mut x0 = i32::MAX;
        let mut y0 = i32::MAX;
        let mut x1 = i32::MIN;
        let mut y1 = i32::MIN;
        for m in &members {
            let b = self.object(*m)?.bbox();
            x0 = x0.min(b.x);
            y0 = y0.min(b.y);
            x1 = x1.max(b.x + b.w as i32);
            y1 = y1.max(b.y + b.h as i32);
        }
        let mut out = Mask::new((x1 - x0).max(1) as u32, (y1 - y0).max(1) as u32);
        for m in &members {
            let obj = self.object(*m)?;
            out.blit(&obj.patch.mask, obj.origin.0 - x0, obj.origin.1 - y0);
        }
        Ok((out, (x0, y0)))
    }

    /// Ids of root objects whose footprint is not entirely inside the box
    /// region. Box-class objects are excluded. Sorted by id.
    pub fn outside_box(&self) -> Vec<ObjectId> {
        let mut out: Vec<ObjectId> = self
            .roots()
            .filter(|o| o.class != ClassLabel::Box)
            .filter(|o| {
                let fp = self.footprint(o.id).expect("root id exists");
                let spills = fp.iter_set().any(|(x, y)| !self.box_region.get(x, y));
                spills
            })
            .map(|o| o.id)
            .collect();
        out.sort();
        out
    }
}
