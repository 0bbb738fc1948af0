//! Procedural top-view scenes with full ground truth: a box with named
//! compartments, movable objects with per-class affordance rules, optional
//! initial stacks, and (optionally) a constructive feasibility certificate
//! mapping every outside object to a compartment it fits into.
//!
//! Object shapes are parametric primitives (discs, annuli, rounded
//! rectangles) rasterized at integer positions; appearance is a flat class
//! color over a seeded gray texture, so compositing is exercised while
//! appearance stays irrelevant to planning correctness.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagination::tint_patch;
use crate::raster::{Mask, Rgb};
use crate::scene::{
    Affordance, ClassLabel, Compartment, ObjectId, ObjectInstance, PatchSet, Pose,
    PoseDictionary, Scene, SceneError,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Inclusive range of movable root objects (stacked extras come on top).
    pub object_count: (u32, u32),
    /// Classes the generator may draw from.
    pub classes: Vec<ClassLabel>,
    /// Inclusive range of box compartments.
    pub compartment_count: (u32, u32),
    /// Construct scenes with a verified object-to-compartment packing.
    pub guarantee_feasible: bool,
    /// Inclusive range of roots that start already packed in the box.
    pub initial_in_box: (u32, u32),
    /// Probability that an outside container (cup/can/bowl/plate) starts
    /// with a small object stacked in or on it.
    pub stack_prob: f64,
    /// Probability that cuboids are sized so they only fit their compartment
    /// rotated by 90 degrees.
    pub rotation_demand: f64,
    /// Probability that cuboids are sized so only their vertical (flipped)
    /// pose fits a compartment.
    pub flip_demand: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            width: 1024,
            height: 768,
            object_count: (3, 5),
            classes: ClassLabel::MOVABLE.to_vec(),
            compartment_count: (4, 6),
            guarantee_feasible: true,
            initial_in_box: (0, 0),
            stack_prob: 0.0,
            rotation_demand: 0.0,
            flip_demand: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("could not place objects without overlap after {0} retries")]
    Infeasible(u32),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// One entry of the feasibility certificate: applying the rotation/flip and
/// placing the object at the compartment centroid passes validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertEntry {
    pub object: ObjectId,
    pub compartment: String,
    pub rotation: u16,
    pub flip: bool,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub scene: Scene,
    /// Present when the config guarantees feasibility.
    pub certificate: Option<Vec<CertEntry>>,
}

const COLOR_PALETTE: [(&str, [u8; 3]); 10] = [
    ("red", [200, 45, 45]),
    ("blue", [55, 85, 200]),
    ("yellow", [220, 200, 60]),
    ("green", [60, 160, 70]),
    ("black", [45, 45, 45]),
    ("white", [235, 235, 235]),
    ("orange", [230, 140, 45]),
    ("purple", [140, 65, 170]),
    ("cyan", [65, 185, 185]),
    ("pink", [225, 125, 160]),
];

fn disc_mask(d: u32) -> Mask {
    let r = (d as f64 - 1.0) / 2.0;
    let c = r;
    Mask::from_fn(d, d, |x, y| {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        dx * dx + dy * dy <= (r + 0.3) * (r + 0.3)
    })
}

fn rounded_rect_mask(w: u32, h: u32, radius: u32) -> Mask {
    let r = radius.min(w / 2).min(h / 2) as f64;
    Mask::from_fn(w, h, |x, y| {
        let dx = (r - 1.0 - x as f64).max(x as f64 - (w as f64 - r)).max(0.0);
        let dy = (r - 1.0 - y as f64).max(y as f64 - (h as f64 - r)).max(0.0);
        dx * dx + dy * dy <= r * r
    })
}

/// Gray template: base luma with mild seeded texture, stored as r=g=b.
fn gray_texture(mask: &Mask, rng: &mut ChaCha8Rng) -> Rgb {
    let mut out = Rgb::new(mask.width(), mask.height(), [0, 0, 0]);
    for (x, y) in mask.iter_set() {
        let luma = 235u8.saturating_sub(rng.random_range(0..40));
        out.set(x, y, [luma, luma, luma]);
    }
    out
}

fn empty_channels(w: u32, h: u32) -> [Mask; 4] {
    [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)]
}

/// Apple and solid cuboids: whole mask grasp + obstruct.
fn solid_template(mask: Mask, rng: &mut ChaCha8Rng) -> Arc<PatchSet> {
    let (w, h) = (mask.width(), mask.height());
    let appearance = gray_texture(&mask, rng);
    let mut ch = empty_channels(w, h);
    ch[Affordance::Grasp.channel()] = mask.clone();
    ch[Affordance::Obstruct.channel()] = mask.clone();
    Arc::new(PatchSet::new(mask, appearance, ch).expect("solid template"))
}

/// Cups, cans and bowls: rim annulus grasp + obstruct, interior hole +
/// place-on.
fn vessel_template(d: u32, wall: u32, rng: &mut ChaCha8Rng) -> Arc<PatchSet> {
    let mask = disc_mask(d);
    let inner_d = d.saturating_sub(2 * wall).max(3);
    let inner_disc = disc_mask(inner_d);
    let off = ((d - inner_d) / 2) as i32;
    let mut interior = Mask::new(d, d);
    interior.blit(&inner_disc, off, off);
    let interior = interior.intersect(&mask);
    let rim = Mask::from_fn(d, d, |x, y| mask.get(x, y) && !interior.get(x, y));
    let appearance = gray_texture(&mask, rng);
    let mut ch = empty_channels(d, d);
    ch[Affordance::Grasp.channel()] = rim.clone();
    ch[Affordance::Obstruct.channel()] = rim;
    ch[Affordance::Hole.channel()] = interior.clone();
    ch[Affordance::PlaceOn.channel()] = interior;
    Arc::new(PatchSet::new(mask, appearance, ch).expect("vessel template"))
}

/// Plates: rim grasp, surface place-on, no obstruct.
fn plate_template(d: u32, rim: u32, rng: &mut ChaCha8Rng) -> Arc<PatchSet> {
    let mask = disc_mask(d);
    let inner_d = d.saturating_sub(2 * rim).max(3);
    let inner_disc = disc_mask(inner_d);
    let off = ((d - inner_d) / 2) as i32;
    let mut surface = Mask::new(d, d);
    surface.blit(&inner_disc, off, off);
    let surface = surface.intersect(&mask);
    let rim_mask = Mask::from_fn(d, d, |x, y| mask.get(x, y) && !surface.get(x, y));
    let appearance = gray_texture(&mask, rng);
    let mut ch = empty_channels(d, d);
    ch[Affordance::Grasp.channel()] = rim_mask;
    ch[Affordance::PlaceOn.channel()] = surface;
    Arc::new(PatchSet::new(mask, appearance, ch).expect("plate template"))
}

/// Per-scene class dimensions, all derived from the compartment cell size so
/// feasible configs stay feasible by construction.
struct ClassDims {
    apple_d: u32,
    can_d: u32,
    can_wall: u32,
    cup_d: u32,
    cup_wall: u32,
    bowl_d: u32,
    bowl_wall: u32,
    plate_d: u32,
    plate_rim: u32,
    cuboid: (u32, u32),
    cuboid_vertical: u32,
    /// Rotation the cuboid needs to fit a cell (0 or 90).
    cuboid_rotation: u16,
    /// Whether only the vertical cuboid pose fits a cell.
    cuboid_flip: bool,
}

fn sample_dims(
    cell_w: u32,
    cell_h: u32,
    wants_rotation: bool,
    wants_flip: bool,
    rng: &mut ChaCha8Rng,
) -> ClassDims {
    let base = cell_w.min(cell_h);
    let frac = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> u32 {
        (base as f64 * rng.random_range(lo..hi)).round() as u32
    };
    // Clearance scales with the cell so placements keep a few pixels of
    // margin even under perception jitter.
    let clearance = (base / 5).max(4);
    let fit = base.saturating_sub(clearance);
    // Apples stay small enough to drop into cups and bowls.
    let apple_d = frac(rng, 0.26, 0.36).clamp(8, fit);
    let can_d = frac(rng, 0.62, 0.78).clamp(11, fit);
    let cup_d = frac(rng, 0.48, 0.62).clamp(10, fit);
    let bowl_d = frac(rng, 0.70, 0.86).clamp(12, fit);
    let plate_d = frac(rng, 0.74, 0.90).clamp(12, fit);

    // Cuboids may be sized to demand a rotation or a flip.
    let long_cell = cell_w.max(cell_h);
    let mut cuboid_rotation = 0u16;
    let mut cuboid_flip = false;
    let mut cw = frac(rng, 0.52, 0.68).clamp(10, fit);
    let mut chh = frac(rng, 0.34, 0.46).clamp(8, fit);
    if wants_rotation && cell_h >= cell_w + 8 {
        // Strictly wider than the cell but shorter than its height: the
        // cuboid only fits after a quarter turn.
        cw = rng.random_range((cell_w + 2)..=(cell_h - clearance));
        chh = (cell_w - clearance).min(cw - 2).max(8);
        cuboid_rotation = 90;
    } else if wants_flip {
        // Longer than both cell axes: only the standing pose fits.
        cw = long_cell + 4;
        chh = fit.min(cw - 2).max(8);
        cuboid_flip = true;
    }
    let cuboid_vertical = chh.clamp(8, fit);
    ClassDims {
        apple_d,
        can_d,
        can_wall: (can_d / 7).max(2),
        cup_d,
        cup_wall: (cup_d / 8).max(2),
        bowl_d,
        bowl_wall: (bowl_d / 5).max(3),
        plate_d,
        plate_rim: (plate_d / 8).max(2),
        cuboid: (cw, chh),
        cuboid_vertical,
        cuboid_rotation,
        cuboid_flip,
    }
}

fn build_dictionary(dims: &ClassDims, rng: &mut ChaCha8Rng) -> PoseDictionary {
    let mut dict = PoseDictionary::new();
    dict.insert(ClassLabel::Apple, Pose::Horizontal, solid_template(disc_mask(dims.apple_d), rng));
    dict.insert(ClassLabel::Can, Pose::Horizontal, vessel_template(dims.can_d, dims.can_wall, rng));
    // A can on its side is a solid rounded block in the top view.
    let lying = rounded_rect_mask((dims.can_d as f64 * 1.15) as u32, dims.can_d, dims.can_d / 4);
    dict.insert(ClassLabel::Can, Pose::Vertical, solid_template(lying, rng));
    dict.insert(ClassLabel::Cup, Pose::Horizontal, vessel_template(dims.cup_d, dims.cup_wall, rng));
    dict.insert(ClassLabel::Bowl, Pose::Horizontal, vessel_template(dims.bowl_d, dims.bowl_wall, rng));
    dict.insert(ClassLabel::Plate, Pose::Horizontal, plate_template(dims.plate_d, dims.plate_rim, rng));
    let (cw, ch) = dims.cuboid;
    dict.insert(
        ClassLabel::Cuboid,
        Pose::Horizontal,
        solid_template(rounded_rect_mask(cw, ch, 3), rng),
    );
    dict.insert(
        ClassLabel::Cuboid,
        Pose::Vertical,
        solid_template(rounded_rect_mask(dims.cuboid_vertical, dims.cuboid_vertical, 2), rng),
    );
    dict
}

struct BoxLayout {
    origin: (i32, i32),
    outer_w: u32,
    outer_h: u32,
    cells: Vec<(i32, i32, u32, u32)>, // scene coords of compartment interiors
}

fn build_box(
    cfg: &GenConfig,
    n_comp: u32,
    cell_w: u32,
    cell_h: u32,
    wall: u32,
    rng: &mut ChaCha8Rng,
) -> Result<BoxLayout, GenError> {
    let cols = (n_comp as f64).sqrt().ceil() as u32;
    let rows = n_comp.div_ceil(cols);
    let outer_w = cols * (cell_w + wall) + wall;
    let outer_h = rows * (cell_h + wall) + wall;
    let margin = (cfg.width.min(cfg.height) / 24).max(4);
    if outer_w + 2 * margin >= cfg.width || outer_h + 2 * margin >= cfg.height {
        return Err(GenError::InvalidConfig(format!(
            "box {outer_w}x{outer_h} does not fit a {}x{} scene",
            cfg.width, cfg.height
        )));
    }
    let ox = rng.random_range(margin..=(cfg.width - outer_w - margin)) as i32;
    let oy = rng.random_range(margin..=(cfg.height - outer_h - margin)) as i32;
    let mut cells = Vec::new();
    'grid: for r in 0..rows {
        for c in 0..cols {
            if cells.len() as u32 == n_comp {
                break 'grid;
            }
            let cx = ox + (wall + c * (cell_w + wall)) as i32;
            let cy = oy + (wall + r * (cell_h + wall)) as i32;
            cells.push((cx, cy, cell_w, cell_h));
        }
    }
    Ok(BoxLayout { origin: (ox, oy), outer_w, outer_h, cells })
}

fn paint_background(cfg: &GenConfig, layout: &BoxLayout, rng: &mut ChaCha8Rng) -> (Rgb, [Mask; 4], Mask) {
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Rgb::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let n = rng.random_range(0..12) as u8;
            image.set(x, y, [186 + n, 169 + n, 146 + n]);
        }
    }
    let box_region = Mask::from_fn(w, h, |x, y| {
        (x as i32) >= layout.origin.0
            && (y as i32) >= layout.origin.1
            && (x as i32) < layout.origin.0 + layout.outer_w as i32
            && (y as i32) < layout.origin.1 + layout.outer_h as i32
    });
    let mut compartment_union = Mask::new(w, h);
    for &(cx, cy, cw, ch) in &layout.cells {
        for y in 0..ch {
            for x in 0..cw {
                compartment_union.set((cx + x as i32) as u32, (cy + y as i32) as u32, true);
            }
        }
    }
    // Walls: box region minus compartment interiors.
    let walls = Mask::from_fn(w, h, |x, y| box_region.get(x, y) && !compartment_union.get(x, y));
    for (x, y) in walls.iter_set() {
        let n = rng.random_range(0..8) as u8;
        image.set(x, y, [104 + n, 90 + n, 74 + n]);
    }
    for (x, y) in compartment_union.iter_set() {
        let n = rng.random_range(0..8) as u8;
        image.set(x, y, [148 + n, 131 + n, 110 + n]);
    }
    let mut affordances = empty_channels(w, h);
    affordances[Affordance::PlaceOn.channel()] =
        Mask::from_fn(w, h, |x, y| !box_region.get(x, y) || compartment_union.get(x, y));
    affordances[Affordance::Obstruct.channel()] = walls;
    affordances[Affordance::Hole.channel()] = compartment_union;
    (image, affordances, box_region)
}

struct NamePool {
    used: Vec<String>,
}

impl NamePool {
    fn new() -> Self {
        NamePool { used: Vec::new() }
    }

    fn assign(&mut self, class: ClassLabel, rng: &mut ChaCha8Rng) -> (String, [u8; 3]) {
        let mut order: Vec<usize> = (0..COLOR_PALETTE.len()).collect();
        order.shuffle(rng);
        for idx in &order {
            let (color_name, color) = COLOR_PALETTE[*idx];
            let name = format!("{}_{}", color_name, class.label());
            if !self.used.contains(&name) {
                self.used.push(name.clone());
                return (name, color);
            }
        }
        // Palette exhausted for this class: number the duplicates.
        let (color_name, color) = COLOR_PALETTE[order[0]];
        for k in 2.. {
            let name = format!("{}_{}_{}", color_name, class.label(), k);
            if !self.used.contains(&name) {
                self.used.push(name.clone());
                return (name, color);
            }
        }
        unreachable!()
    }
}

fn template_for(dict: &PoseDictionary, class: ClassLabel, pose: Pose) -> Arc<PatchSet> {
    dict.get(class, pose).expect("generator classes are in the dictionary").clone()
}

/// Instantiate an object from the dictionary template with a tint.
fn make_instance(
    id: u32,
    name: String,
    class: ClassLabel,
    pose: Pose,
    tint: [u8; 3],
    dict: &PoseDictionary,
    rotation: u16,
    origin: (i32, i32),
    z: u32,
    parent: Option<ObjectId>,
) -> ObjectInstance {
    let canonical = Arc::new(tint_patch(&template_for(dict, class, pose), tint));
    let patch = crate::imagination::derive_patch(&canonical, rotation);
    ObjectInstance {
        id: ObjectId(id),
        name,
        class,
        pose,
        canonical,
        rotation,
        patch,
        origin,
        z,
        parent,
        tint: Some(tint),
    }
}

fn place_centered(patch_w: u32, patch_h: u32, center: (u32, u32)) -> (i32, i32) {
    (
        (2 * center.0 as i64 + 1 - patch_w as i64).div_euclid(2) as i32,
        (2 * center.1 as i64 + 1 - patch_h as i64).div_euclid(2) as i32,
    )
}

pub fn generate_scene(cfg: &GenConfig) -> Result<Generated, GenError> {
    if cfg.object_count.0 > cfg.object_count.1
        || cfg.compartment_count.0 > cfg.compartment_count.1
        || cfg.initial_in_box.0 > cfg.initial_in_box.1
        || cfg.compartment_count.0 < 1
        || cfg.classes.is_empty()
        || cfg.classes.iter().any(|c| !ClassLabel::MOVABLE.contains(c))
    {
        return Err(GenError::InvalidConfig("counts or classes out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_comp = rng.random_range(cfg.compartment_count.0..=cfg.compartment_count.1);
    let m = cfg.width.min(cfg.height);
    // A rotation demand needs tall cells so the cuboid's long side exceeds
    // the cell width but not its height.
    let wants_rotation = cfg.rotation_demand > 0.0 && rng.random_bool(cfg.rotation_demand);
    let wants_flip =
        !wants_rotation && cfg.flip_demand > 0.0 && rng.random_bool(cfg.flip_demand);
    let (cell_w, cell_h) = if wants_rotation {
        (
            ((m as f64) * rng.random_range(0.15..0.17)).round() as u32,
            ((m as f64) * rng.random_range(0.235..0.26)).round() as u32,
        )
    } else {
        (
            ((m as f64) * rng.random_range(0.17..0.215)).round() as u32,
            ((m as f64) * rng.random_range(0.17..0.215)).round() as u32,
        )
    };
    let wall = (m / 40).max(3);
    let layout = build_box(cfg, n_comp, cell_w, cell_h, wall, &mut rng)?;
    let (background, background_affordances, box_region) =
        paint_background(cfg, &layout, &mut rng);
    let compartments: Vec<Compartment> = layout
        .cells
        .iter()
        .enumerate()
        .map(|(i, &(cx, cy, cw, ch))| Compartment {
            name: format!("compartment_{}", i + 1),
            region: Mask::filled(cw, ch),
            origin: (cx, cy),
        })
        .collect();

    let dims = sample_dims(cell_w, cell_h, wants_rotation, wants_flip, &mut rng);
    let dict = build_dictionary(&dims, &mut rng);

    let mut scene = Scene {
        width: cfg.width,
        height: cfg.height,
        background: Arc::new(background),
        background_affordances: Arc::new(background_affordances),
        box_region: Arc::new(box_region),
        compartments: Arc::new(compartments),
        objects: Vec::new(),
        dictionary: Arc::new(dict),
    };

    // Roots cannot exceed available compartments when a packing must exist.
    let mut n_roots = rng.random_range(cfg.object_count.0..=cfg.object_count.1);
    if cfg.guarantee_feasible {
        n_roots = n_roots.min(n_comp);
    }
    // Initially packed roots always need distinct compartments.
    let n_in = rng
        .random_range(cfg.initial_in_box.0..=cfg.initial_in_box.1)
        .min(n_roots)
        .min(n_comp);

    let mut classes = Vec::new();
    for _ in 0..n_roots {
        classes.push(cfg.classes[rng.random_range(0..cfg.classes.len())]);
    }
    let mut comp_order: Vec<usize> = (0..scene.compartments.len()).collect();
    comp_order.shuffle(&mut rng);

    let mut names = NamePool::new();
    let mut next_id = 0u32;
    let mut next_z = 0u32;
    let mut certificate = Vec::new();

    // Everything starts horizontal; the certificate records the rotation or
    // flip needed to fit the assigned compartment.
    let cert_transform = |class: ClassLabel, dims: &ClassDims| -> (u16, bool) {
        if class == ClassLabel::Cuboid {
            if dims.cuboid_flip {
                (0, true)
            } else {
                (dims.cuboid_rotation, false)
            }
        } else {
            (0, false)
        }
    };

    // Initially packed roots go straight to their compartments with the
    // certificate transform already applied.
    for k in 0..n_in as usize {
        let class = classes[k];
        let comp_idx = comp_order[k];
        let comp = &scene.compartments[comp_idx];
        let center = comp.region.centroid().expect("compartment nonempty");
        let center = ((comp.origin.0 + center.0 as i32) as u32, (comp.origin.1 + center.1 as i32) as u32);
        let (name, tint) = names.assign(class, &mut rng);
        let (rotation, flip) = cert_transform(class, &dims);
        let pose = if flip { Pose::Vertical } else { Pose::Horizontal };
        let template = template_for(&scene.dictionary, class, pose);
        let rotated = crate::imagination::derive_patch(&template, rotation);
        let origin = place_centered(rotated.width(), rotated.height(), center);
        let obj = make_instance(
            next_id, name, class, pose, tint, &scene.dictionary, rotation, origin, next_z, None,
        );
        scene.objects.push(obj);
        next_id += 1;
        next_z += 1;
    }

    // Remaining roots are scattered on the table, non-overlapping and clear
    // of the box.
    let gap = 3i32;
    let mut placed_bboxes: Vec<crate::scene::BBox> = Vec::new();
    let box_bbox = crate::scene::BBox::new(
        layout.origin.0 - gap,
        layout.origin.1 - gap,
        layout.outer_w + 2 * gap as u32,
        layout.outer_h + 2 * gap as u32,
    );
    for k in n_in as usize..n_roots as usize {
        let class = classes[k];
        // Without a feasibility guarantee there may be more roots than
        // compartments; the wrapped assignment is then informational only.
        let comp_idx = comp_order[k % comp_order.len()];
        let (name, tint) = names.assign(class, &mut rng);
        let template = template_for(&scene.dictionary, class, Pose::Horizontal);
        let (pw, ph) = (template.width(), template.height());
        // Leave room for in-place rotation near the scene edge.
        let diag = (((pw * pw + ph * ph) as f64).sqrt().ceil()) as u32;
        let margin = (diag.saturating_sub(pw.min(ph)) / 2 + 3) as i32;
        let mut placed = false;
        const RETRIES: u32 = 400;
        for _ in 0..RETRIES {
            let x = rng.random_range(margin..(cfg.width as i32 - pw as i32 - margin).max(margin + 1));
            let y = rng.random_range(margin..(cfg.height as i32 - ph as i32 - margin).max(margin + 1));
            let bbox = crate::scene::BBox::new(x - gap, y - gap, pw + 2 * gap as u32, ph + 2 * gap as u32);
            if bbox.intersects(&box_bbox) || placed_bboxes.iter().any(|b| b.intersects(&bbox)) {
                continue;
            }
            placed_bboxes.push(bbox);
            let obj = make_instance(
                next_id,
                name.clone(),
                class,
                Pose::Horizontal,
                tint,
                &scene.dictionary,
                0,
                (x, y),
                next_z,
                None,
            );
            scene.objects.push(obj);
            let (rotation, flip) = cert_transform(class, &dims);
            certificate.push(CertEntry {
                object: ObjectId(next_id),
                compartment: scene.compartments[comp_idx].name.clone(),
                rotation,
                flip,
            });
            next_id += 1;
            next_z += 1;
            placed = true;
            break;
        }
        if !placed {
            return Err(GenError::Infeasible(RETRIES));
        }
    }

    // Optional initial stacks: drop a small object into/onto an outside
    // container. Children ride along, so the certificate is unaffected.
    let container_ids: Vec<ObjectId> = scene
        .objects
        .iter()
        .filter(|o| {
            o.parent.is_none()
                && matches!(
                    o.class,
                    ClassLabel::Cup | ClassLabel::Can | ClassLabel::Bowl | ClassLabel::Plate
                )
                && certificate.iter().any(|c| c.object == o.id)
        })
        .map(|o| o.id)
        .collect();
    for host_id in container_ids {
        if !rng.random_bool(cfg.stack_prob) {
            continue;
        }
        let host = scene.object(host_id)?.clone();
        let interior = {
            let mut hole = host.patch.affordance(Affordance::Hole).clone();
            hole.union_in_place(host.patch.affordance(Affordance::PlaceOn));
            hole
        };
        let Some((ix, iy, iw, ih)) = interior.tight_bbox() else { continue };
        let fit = iw.min(ih);
        if fit < dims.apple_d + 2 {
            continue;
        }
        let center = (
            (host.origin.0 + ix as i32 + iw as i32 / 2) as u32,
            (host.origin.1 + iy as i32 + ih as i32 / 2) as u32,
        );
        let (name, tint) = names.assign(ClassLabel::Apple, &mut rng);
        let template = template_for(&scene.dictionary, ClassLabel::Apple, Pose::Horizontal);
        let origin = place_centered(template.width(), template.height(), center);
        let mut child = make_instance(
            next_id,
            name,
            ClassLabel::Apple,
            Pose::Horizontal,
            tint,
            &scene.dictionary,
            0,
            origin,
            next_z,
            Some(host_id),
        );
        // Keep the child strictly inside the host footprint.
        child.origin = origin;
        scene.objects.push(child);
        next_id += 1;
        next_z += 1;
    }

    scene.validate()?;
    Ok(Generated {
        scene,
        certificate: cfg.guarantee_feasible.then_some(certificate),
    })
}

/// Dataset request: `n_scenes` scenes under a master seed, optionally
/// stratified over exact outside-object counts (= minimal plan lengths).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub gen: GenConfig,
    pub n_scenes: u32,
    /// (steps, count) pairs; their counts must sum to `n_scenes`.
    #[serde(default)]
    pub strata: Option<Vec<(u32, u32)>>,
}

/// Per-scene config pinned to an exact number of outside roots.
fn config_for_steps(base: &GenConfig, steps: u32, seed: u64) -> GenConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0xB0C5));
    let n_in = rng.random_range(base.initial_in_box.0..=base.initial_in_box.1);
    let n_in = n_in.min(base.compartment_count.0.saturating_sub(steps));
    cfg.object_count = (steps + n_in, steps + n_in);
    cfg.initial_in_box = (n_in, n_in);
    cfg.compartment_count = (
        base.compartment_count.0.max(steps + n_in),
        base.compartment_count.1.max(steps + n_in),
    );
    cfg
}

/// Generate one scene for the dataset, retrying with derived seeds when the
/// scatter step runs out of room.
fn generate_with_retries(cfg: &GenConfig) -> Result<Generated, GenError> {
    let mut last = None;
    for attempt in 0..20u64 {
        let mut c = cfg.clone();
        c.seed = if attempt == 0 { cfg.seed } else { crate::derive_seed(cfg.seed, attempt) };
        match generate_scene(&c) {
            Ok(g) => return Ok(g),
            Err(GenError::Infeasible(n)) => last = Some(GenError::Infeasible(n)),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(GenError::Infeasible(0)))
}

/// Load a dataset spec from a TOML file.
pub fn load_dataset_spec(path: &std::path::Path) -> Result<DatasetSpec, GenError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GenError::InvalidConfig(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| GenError::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Generate the dataset's scenes in memory, stratified if requested.
pub fn dataset_scenes(spec: &DatasetSpec) -> Result<Vec<Generated>, GenError> {
    let mut step_targets: Vec<Option<u32>> = Vec::new();
    match &spec.strata {
        Some(strata) => {
            for (steps, count) in strata {
                for _ in 0..*count {
                    step_targets.push(Some(*steps));
                }
            }
            // n_scenes wins over the strata sum: truncate or cycle.
            let want = spec.n_scenes as usize;
            if step_targets.len() > want {
                step_targets.truncate(want);
            } else if !step_targets.is_empty() && step_targets.len() < want {
                let base = step_targets.clone();
                let mut i = 0;
                while step_targets.len() < want {
                    step_targets.push(base[i % base.len()]);
                    i += 1;
                }
            }
        }
        None => step_targets.resize(spec.n_scenes as usize, None),
    }
    let mut out = Vec::new();
    for (k, target) in step_targets.iter().enumerate() {
        let seed = crate::derive_seed(spec.gen.seed, k as u64);
        let cfg = match target {
            Some(steps) => config_for_steps(&spec.gen, *steps, seed),
            None => GenConfig { seed, ..spec.gen.clone() },
        };
        out.push(generate_with_retries(&cfg)?);
    }
    Ok(out)
}

/// Write `n_scenes` scene manifests (and certificates) under `dir`, with
/// per-scene seeds derived from the master seed. Returns the index that was
/// also saved as `dataset.toml`.
pub fn generate_dataset(
    spec: &DatasetSpec,
    dir: &std::path::Path,
) -> Result<crate::manifest::DatasetIndex, crate::manifest::ManifestError> {
    use crate::manifest::{self, DatasetEntry, DatasetIndex};
    std::fs::create_dir_all(dir).map_err(|source| crate::manifest::ManifestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let scenes = dataset_scenes(spec)
        .map_err(|e| crate::manifest::ManifestError::Parse(e.to_string()))?;
    let mut entries = Vec::new();
    for (k, g) in scenes.iter().enumerate() {
        let seed = crate::derive_seed(spec.gen.seed, k as u64);
        let scene_dir = dir.join(format!("scene_{k:03}"));
        manifest::save_scene(&g.scene, &scene_dir)?;
        if let Some(cert) = &g.certificate {
            manifest::save_certificate(cert, &scene_dir.join(manifest::CERTIFICATE_FILE))?;
        }
        entries.push(DatasetEntry {
            dir: format!("scene_{k:03}"),
            seed,
            steps: g.scene.outside_box().len() as u32,
        });
    }
    let index = DatasetIndex { master_seed: spec.gen.seed, scenes: entries };
    manifest::save_dataset_index(&index, dir)?;
    Ok(index)
}
