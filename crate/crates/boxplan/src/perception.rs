//! The planner's view of a scene: a perfect oracle over ground truth, a
//! seeded corruption model emulating detector/segmentation errors, and
//! dictionary-based object completion (de-occlusion) with an ablation
//! toggle.
//!
//! Detections carry an amodal bbox estimate (the full object extent, as a
//! detector trained on whole-object boxes would produce) together with the
//! visible-pixel mask; completion restores the hidden part of the layer by
//! re-reading mask, appearance and affordances from the pose dictionary
//! entry scaled to that bbox. With completion disabled the occluded region
//! stays missing, and keeps missing after the occluder is imagined away.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{scale_mask, scale_rgb, Mask, Rgb};
use crate::scene::{
    Affordance, AffordanceMap, BBox, ClassLabel, Compartment, ObjectId, ObjectInstance,
    PatchSet, Pose, PoseDictionary, Scene, SceneError,
};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid corruption config: {0}")]
    InvalidConfig(String),
}

/// One detected entity: a movable object or a box compartment.
#[derive(Clone, Debug)]
pub struct Detection {
    pub name: String,
    pub class: ClassLabel,
    pub pose: Pose,
    pub confidence: f64,
    /// Estimated full (amodal) extent; also the canvas of the rasters below.
    pub bbox: BBox,
    /// Current instance mask on the bbox canvas. Visible pixels only until
    /// completion fills the occluded part.
    pub mask: Mask,
    /// The visible pixels as originally perceived (kept through completion).
    pub visible: Mask,
    pub appearance: Rgb,
    pub affordances: [Mask; 4],
    /// Estimated base color (dominant-color readout used to re-tint
    /// dictionary templates on flips and completion).
    pub tint: Option<[u8; 3]>,
    /// Whether occluded parts were filled in by completion.
    pub completed: bool,
    /// Ground-truth provenance, for scoring only.
    pub source: Option<ObjectId>,
}

impl Detection {
    pub fn is_compartment(&self) -> bool {
        self.class == ClassLabel::Compartment
    }

    fn mask_at(&self, x: i64, y: i64) -> bool {
        self.mask.get_clipped(x - self.bbox.x as i64, y - self.bbox.y as i64)
    }

    fn visible_at(&self, x: i64, y: i64) -> bool {
        self.visible.get_clipped(x - self.bbox.x as i64, y - self.bbox.y as i64)
    }
}

/// Everything perception hands to the planner.
#[derive(Clone, Debug)]
pub struct PerceptionReport {
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
    pub affordance_map: AffordanceMap,
    pub background: Arc<Rgb>,
    /// Owned: the corruption model jitters these channels.
    pub background_affordances: [Mask; 4],
    pub box_region: Arc<Mask>,
    pub dictionary: Arc<PoseDictionary>,
}

/// Knobs of the corruption model. Probabilities apply per detection,
/// independently; jitters are fractional morphology amounts in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub miss_prob: f64,
    pub split_prob: f64,
    pub misclass_prob: f64,
    pub boundary_jitter: f64,
    pub affordance_jitter: f64,
    pub rng_seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            miss_prob: 0.0,
            split_prob: 0.0,
            misclass_prob: 0.0,
            boundary_jitter: 0.0,
            affordance_jitter: 0.0,
            rng_seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn is_identity(&self) -> bool {
        self.miss_prob == 0.0
            && self.split_prob == 0.0
            && self.misclass_prob == 0.0
            && self.boundary_jitter == 0.0
            && self.affordance_jitter == 0.0
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        for (name, p) in [
            ("miss_prob", self.miss_prob),
            ("split_prob", self.split_prob),
            ("misclass_prob", self.misclass_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PerceptionError::InvalidConfig(format!("{name} = {p}")));
            }
        }
        if self.boundary_jitter < 0.0 || self.affordance_jitter < 0.0 {
            return Err(PerceptionError::InvalidConfig("negative jitter".into()));
        }
        Ok(())
    }
}

/// Rebuild the scene-level affordance overlay from background channels plus
/// object detections (compartment affordances are already part of the
/// background). Later detections win where masks overlap.
fn rebuild_affordance_map(
    width: u32,
    height: u32,
    background: &[Mask; 4],
    detections: &[Detection],
) -> AffordanceMap {
    let mut map = AffordanceMap { channels: background.clone() };
    for det in detections.iter().filter(|d| !d.is_compartment()) {
        for (px, py) in det.mask.iter_set() {
            let x = det.bbox.x as i64 + px as i64;
            let y = det.bbox.y as i64 + py as i64;
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                continue;
            }
            for a in Affordance::ALL {
                map.channels[a.channel()].set(
                    x as u32,
                    y as u32,
                    det.affordances[a.channel()].get(px, py),
                );
            }
        }
    }
    map
}

/// Perfect perception: one detection per visible object (root or stacked)
/// with its exact visible mask, affordances and pose from ground truth, plus
/// one detection per compartment; confidence 1.0 throughout. Bboxes are the
/// amodal (full-mask) bounds.
pub fn perceive_oracle(scene: &Scene) -> Result<PerceptionReport, PerceptionError> {
    let comp = scene.composite()?;
    let mut detections = Vec::new();
    let mut objects: Vec<&ObjectInstance> = scene.objects.iter().collect();
    objects.sort_by_key(|o| o.id);
    for obj in objects {
        let bbox = obj.bbox();
        let (w, h) = (bbox.w, bbox.h);
        let mut visible = Mask::new(w, h);
        for (px, py) in obj.patch.mask.iter_set() {
            let x = obj.origin.0 as i64 + px as i64;
            let y = obj.origin.1 as i64 + py as i64;
            if x >= 0
                && y >= 0
                && (x as u32) < scene.width
                && (y as u32) < scene.height
                && comp.owner(x as u32, y as u32) == Some(obj.id)
            {
                visible.set(px, py, true);
            }
        }
        if visible.is_empty() {
            continue; // fully occluded objects are undetectable
        }
        let mut appearance = Rgb::new(w, h, [0, 0, 0]);
        let mut affordances =
            [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
        for (px, py) in visible.iter_set() {
            appearance.set(px, py, obj.patch.appearance.get(px, py));
            for a in Affordance::ALL {
                affordances[a.channel()].set(px, py, obj.patch.affordance(a).get(px, py));
            }
        }
        detections.push(Detection {
            name: obj.name.clone(),
            class: obj.class,
            pose: obj.pose,
            confidence: 1.0,
            bbox,
            mask: visible.clone(),
            visible,
            appearance,
            affordances,
            tint: obj.tint,
            completed: false,
            source: Some(obj.id),
        });
    }
    for c in scene.compartments.iter() {
        let bbox = c.bbox();
        let mut affordances = [
            Mask::new(bbox.w, bbox.h),
            Mask::new(bbox.w, bbox.h),
            Mask::new(bbox.w, bbox.h),
            Mask::new(bbox.w, bbox.h),
        ];
        affordances[Affordance::PlaceOn.channel()] = c.region.clone();
        affordances[Affordance::Hole.channel()] = c.region.clone();
        detections.push(Detection {
            name: c.name.clone(),
            class: ClassLabel::Compartment,
            pose: Pose::Horizontal,
            confidence: 1.0,
            bbox,
            mask: c.region.clone(),
            visible: c.region.clone(),
            appearance: Rgb::new(bbox.w, bbox.h, [0, 0, 0]),
            affordances,
            tint: None,
            completed: false,
            source: None,
        });
    }
    Ok(PerceptionReport {
        width: scene.width,
        height: scene.height,
        affordance_map: comp.affordances,
        background: scene.background.clone(),
        background_affordances: (*scene.background_affordances).clone(),
        box_region: scene.box_region.clone(),
        dictionary: scene.dictionary.clone(),
        detections,
    })
}

/// Crop a detection's rasters to the tight bounds of its mask, adjusting the
/// bbox. Returns false when the mask is empty.
fn retighten(det: &mut Detection) -> bool {
    let Some((x0, y0, w, h)) = det.mask.tight_bbox() else { return false };
    if (x0, y0, w, h) == (0, 0, det.mask.width(), det.mask.height()) {
        return true;
    }
    det.bbox = BBox::new(det.bbox.x + x0 as i32, det.bbox.y + y0 as i32, w, h);
    det.mask = det.mask.crop(x0, y0, w, h);
    det.visible = det.visible.crop(x0, y0, w, h);
    det.appearance = det.appearance.crop(x0, y0, w, h);
    for ch in &mut det.affordances {
        *ch = ch.crop(x0, y0, w, h);
    }
    true
}

/// Grow a detection's canvas to hold a dilated mask.
fn grow_canvas(det: &mut Detection, pad: u32) {
    let (w, h) = (det.mask.width() + 2 * pad, det.mask.height() + 2 * pad);
    let mut mask = Mask::new(w, h);
    mask.blit(&det.mask, pad as i32, pad as i32);
    let mut visible = Mask::new(w, h);
    visible.blit(&det.visible, pad as i32, pad as i32);
    let mut appearance = Rgb::new(w, h, [0, 0, 0]);
    appearance.blit_masked(&det.appearance, &det.mask, pad as i32, pad as i32);
    let mut affordances = [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
    for (i, ch) in det.affordances.iter().enumerate() {
        affordances[i].blit(ch, pad as i32, pad as i32);
    }
    det.bbox = BBox::new(det.bbox.x - pad as i32, det.bbox.y - pad as i32, w, h);
    det.mask = mask;
    det.visible = visible;
    det.appearance = appearance;
    det.affordances = affordances;
}

/// Apply the corruption model. Deterministic in `cfg.rng_seed`; per
/// detection (compartments exempt): drop with `miss_prob`, bisect across the
/// bbox long axis with `split_prob`, resample the class with
/// `misclass_prob`, erode/dilate the mask by `boundary_jitter` and each
/// affordance channel by `affordance_jitter`. Background affordance channels
/// are jittered as well, and the scene-level map is rebuilt from the
/// corrupted parts.
pub fn corrupt(report: &PerceptionReport, cfg: &CorruptionConfig) -> Result<PerceptionReport, PerceptionError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = report.clone();
    let mut detections = Vec::new();
    for det in &out.detections {
        if det.is_compartment() {
            detections.push(det.clone());
            continue;
        }
        if cfg.miss_prob > 0.0 && rng.random_bool(cfg.miss_prob) {
            continue;
        }
        let mut parts = Vec::new();
        if cfg.split_prob > 0.0 && rng.random_bool(cfg.split_prob) {
            parts.extend(split_detection(det));
        }
        if parts.is_empty() {
            parts.push(det.clone());
        }
        for mut part in parts {
            if cfg.misclass_prob > 0.0 && rng.random_bool(cfg.misclass_prob) {
                let others: Vec<ClassLabel> = ClassLabel::MOVABLE
                    .iter()
                    .copied()
                    .filter(|c| *c != part.class)
                    .collect();
                part.class = others[rng.random_range(0..others.len())];
            }
            if cfg.boundary_jitter > 0.0 {
                let grow = rng.random_bool(0.5);
                if grow {
                    grow_canvas(&mut part, cfg.boundary_jitter.ceil() as u32 + 1);
                }
                part.mask = part.mask.morph_fractional(cfg.boundary_jitter, grow, &mut rng);
                part.visible = part.mask.clone();
                // Fill appearance for grown pixels from the nearest set ones
                // is overkill; a flat copy of the mean color is enough for
                // jittered edges.
                let mean = mean_color(&part.appearance, &part.mask);
                for (x, y) in part.mask.iter_set() {
                    if part.appearance.get(x, y) == [0, 0, 0] {
                        part.appearance.set(x, y, mean);
                    }
                }
                for ch in &mut part.affordances {
                    *ch = ch.intersect(&part.mask);
                }
                if !retighten(&mut part) {
                    continue; // jitter erased the detection
                }
            }
            if cfg.affordance_jitter > 0.0 {
                for ch in &mut part.affordances {
                    if ch.is_empty() {
                        continue;
                    }
                    let grow = rng.random_bool(0.5);
                    *ch = ch.morph_fractional(cfg.affordance_jitter, grow, &mut rng);
                }
            }
            detections.push(part);
        }
    }
    if cfg.affordance_jitter > 0.0 {
        for ch in &mut out.background_affordances {
            if ch.is_empty() {
                continue;
            }
            let grow = rng.random_bool(0.5);
            *ch = ch.morph_fractional(cfg.affordance_jitter, grow, &mut rng);
        }
    }
    out.detections = detections;
    out.affordance_map =
        rebuild_affordance_map(out.width, out.height, &out.background_affordances, &out.detections);
    Ok(out)
}

fn mean_color(appearance: &Rgb, mask: &Mask) -> [u8; 3] {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for (x, y) in mask.iter_set() {
        let px = appearance.get(x, y);
        if px != [0, 0, 0] {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return [127, 127, 127];
    }
    [(sum[0] / n) as u8, (sum[1] / n) as u8, (sum[2] / n) as u8]
}

/// Bisect a detection across its bbox long axis into two detections whose
/// mask union equals the original mask.
fn split_detection(det: &Detection) -> Vec<Detection> {
    let (w, h) = (det.mask.width(), det.mask.height());
    let vertical_cut = w >= h;
    let keep = |half: u32, x: u32, y: u32| {
        if vertical_cut {
            (half == 0) == (x < w / 2)
        } else {
            (half == 0) == (y < h / 2)
        }
    };
    let mut out = Vec::new();
    for half in 0..2u32 {
        let mut part = det.clone();
        part.name = format!("{}~{}", det.name, if half == 0 { "a" } else { "b" });
        part.confidence = 0.5;
        part.mask = Mask::from_fn(w, h, |x, y| det.mask.get(x, y) && keep(half, x, y));
        part.visible = part.mask.clone();
        for ch in &mut part.affordances {
            *ch = ch.intersect(&part.mask);
        }
        if retighten(&mut part) {
            out.push(part);
        }
    }
    if out.len() < 2 {
        // Degenerate geometry: fall back to the unsplit detection.
        return vec![det.clone()];
    }
    out
}

/// Restore the occluded part of each detection from the pose dictionary
/// entry for its (class, pose), scaled to the detection bbox. With `enabled`
/// false the report is returned unchanged (holes persist). Detections whose
/// (class, pose) is absent from the dictionary are left incomplete with
/// `completed == false`.
pub fn complete_objects(
    report: &PerceptionReport,
    enabled: bool,
    dict: &PoseDictionary,
) -> PerceptionReport {
    let mut out = report.clone();
    if !enabled {
        return out;
    }
    for det in &mut out.detections {
        if det.is_compartment() {
            continue;
        }
        let Some(entry) = dict.get(det.class, det.pose) else { continue };
        let (w, h) = (det.bbox.w, det.bbox.h);
        let registered = scale_mask(&entry.mask, w, h);
        if registered == det.mask {
            continue; // nothing occluded, nothing to restore
        }
        let mut new_mask = registered.clone();
        new_mask.union_in_place(&det.mask);
        let tint = det.tint.unwrap_or_else(|| mean_color(&det.appearance, &det.mask));
        let template_app = scale_rgb(&entry.appearance, w, h);
        let mut appearance = Rgb::new(w, h, [0, 0, 0]);
        for (x, y) in new_mask.iter_set() {
            if det.mask.get(x, y) {
                appearance.set(x, y, det.appearance.get(x, y));
            } else {
                let luma = template_app.get(x, y)[0] as u32;
                appearance.set(
                    x,
                    y,
                    [
                        ((tint[0] as u32 * luma + 127) / 255) as u8,
                        ((tint[1] as u32 * luma + 127) / 255) as u8,
                        ((tint[2] as u32 * luma + 127) / 255) as u8,
                    ],
                );
            }
        }
        // Affordances travel with the completed object: re-read all four
        // channels from the dictionary entry.
        let mut affordances = [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
        for a in Affordance::ALL {
            affordances[a.channel()] =
                scale_mask(entry.affordance(a), w, h).intersect(&new_mask);
        }
        det.visible = det.mask.clone();
        det.mask = new_mask;
        det.appearance = appearance;
        det.affordances = affordances;
        det.completed = true;
    }
    out.affordance_map =
        rebuild_affordance_map(out.width, out.height, &out.background_affordances, &out.detections);
    out
}

/// Perception quality against ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    /// Mean over affordance channels of |intersection| / |union| between the
    /// report map and the ground-truth composite map (empty unions skipped).
    pub affordance_miou: f64,
    /// Mean over ground-truth objects of the IoU with their best-matching
    /// detection (visible masks, each detection used once).
    pub instance_miou: f64,
    /// Fraction of ground-truth objects matched by a detection with IoU >=
    /// 0.5 and the correct class.
    pub detection_score: f64,
}

pub fn perception_quality(
    report: &PerceptionReport,
    ground_truth: &Scene,
) -> Result<Quality, PerceptionError> {
    let comp = ground_truth.composite()?;
    let mut iou_sum = 0.0;
    let mut iou_n = 0u32;
    for a in Affordance::ALL {
        if let Some(iou) =
            report.affordance_map.channel(a).iou(comp.affordances.channel(a))
        {
            iou_sum += iou;
            iou_n += 1;
        }
    }
    let affordance_miou = if iou_n == 0 { 1.0 } else { iou_sum / iou_n as f64 };

    // Greedy one-to-one matching by IoU between ground-truth visible masks
    // and detection visible masks.
    let gt_masks: Vec<(ObjectId, ClassLabel, Mask)> = ground_truth
        .objects
        .iter()
        .map(|o| (o.id, o.class, comp.visible_mask_of(o.id)))
        .filter(|(_, _, m)| !m.is_empty())
        .collect();
    let dets: Vec<&Detection> = report.detections.iter().filter(|d| !d.is_compartment()).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, (_, _, gmask)) in gt_masks.iter().enumerate() {
        for (di, det) in dets.iter().enumerate() {
            let mut inter = 0u64;
            for (px, py) in det.visible.iter_set() {
                let x = det.bbox.x as i64 + px as i64;
                let y = det.bbox.y as i64 + py as i64;
                if gmask.get_clipped(x, y) {
                    inter += 1;
                }
            }
            if inter == 0 {
                continue;
            }
            let union = gmask.count() + det.visible.count() - inter;
            pairs.push((inter as f64 / union as f64, gi, di));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gt_masks.len()];
    let mut det_used = vec![false; dets.len()];
    let mut matched: Vec<(usize, usize, f64)> = Vec::new();
    for (iou, gi, di) in pairs {
        if !gt_used[gi] && !det_used[di] {
            gt_used[gi] = true;
            det_used[di] = true;
            matched.push((gi, di, iou));
        }
    }
    let (instance_miou, detection_score) = if gt_masks.is_empty() {
        (1.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut correct = 0u32;
        for (gi, di, iou) in &matched {
            sum += iou;
            if *iou >= 0.5 && gt_masks[*gi].1 == dets[*di].class {
                correct += 1;
            }
        }
        (sum / gt_masks.len() as f64, correct as f64 / gt_masks.len() as f64)
    };
    Ok(Quality { affordance_miou, instance_miou, detection_score })
}

/// Link from a reconstructed object to the ground-truth object its detection
/// came from.
#[derive(Clone, Debug)]
pub struct DetectionBinding {
    pub object: ObjectId,
    pub source: Option<ObjectId>,
    pub name: String,
}

/// Rebuild a layered scene from a report: detections become object layers,
/// stacking (z) is inferred from who owns the visible pixels in overlap
/// regions, and containment follows the same >=90% footprint rule used when
/// placing objects.
pub fn scene_from_report(
    report: &PerceptionReport,
) -> Result<(Scene, Vec<DetectionBinding>), PerceptionError> {
    let dets: Vec<&Detection> = report
        .detections
        .iter()
        .filter(|d| !d.is_compartment() && !d.mask.is_empty())
        .collect();
    let n = dets.len();
    // Topological order from the pairwise occlusion relation: whoever owns
    // more visible pixels of an overlap sits on top.
    let mut above = vec![vec![false; n]; n]; // above[a][b]: a occludes b
    for i in 0..n {
        for j in (i + 1)..n {
            if !dets[i].bbox.intersects(&dets[j].bbox) {
                continue;
            }
            let mut vi = 0u64;
            let mut vj = 0u64;
            let x0 = dets[i].bbox.x.max(dets[j].bbox.x) as i64;
            let y0 = dets[i].bbox.y.max(dets[j].bbox.y) as i64;
            let x1 = (dets[i].bbox.x + dets[i].bbox.w as i32)
                .min(dets[j].bbox.x + dets[j].bbox.w as i32) as i64;
            let y1 = (dets[i].bbox.y + dets[i].bbox.h as i32)
                .min(dets[j].bbox.y + dets[j].bbox.h as i32) as i64;
            let mut overlap = false;
            for y in y0..y1 {
                for x in x0..x1 {
                    if dets[i].mask_at(x, y) && dets[j].mask_at(x, y) {
                        overlap = true;
                        vi += dets[i].visible_at(x, y) as u64;
                        vj += dets[j].visible_at(x, y) as u64;
                    }
                }
            }
            if overlap {
                if vi >= vj {
                    above[i][j] = true;
                } else {
                    above[j][i] = true;
                }
            }
        }
    }
    // Kahn's algorithm, lowest first; index order breaks ties and cycles.
    let mut z_of = vec![0u32; n];
    let mut placed = vec![false; n];
    for z in 0..n {
        let mut pick = None;
        for i in 0..n {
            if placed[i] {
                continue;
            }
            let blocked = (0..n).any(|j| !placed[j] && j != i && above[i][j]);
            if !blocked {
                pick = Some(i);
                break;
            }
        }
        let i = pick.unwrap_or_else(|| (0..n).find(|i| !placed[*i]).unwrap());
        placed[i] = true;
        z_of[i] = z as u32;
    }

    let mut objects: Vec<ObjectInstance> = Vec::new();
    let mut bindings = Vec::new();
    let mut used_names: Vec<String> = Vec::new();
    for (idx, det) in dets.iter().enumerate() {
        let Some((x0, y0, w, h)) = det.mask.tight_bbox() else { continue };
        let mask = det.mask.crop(x0, y0, w, h);
        let appearance = det.appearance.crop(x0, y0, w, h);
        let mut affordances = [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
        for a in Affordance::ALL {
            affordances[a.channel()] =
                det.affordances[a.channel()].crop(x0, y0, w, h).intersect(&mask);
        }
        let patch = Arc::new(PatchSet::new(mask, appearance, affordances)?);
        let mut name = det.name.clone();
        let mut k = 2;
        while used_names.contains(&name) {
            name = format!("{}_{k}", det.name);
            k += 1;
        }
        used_names.push(name.clone());
        let id = ObjectId(idx as u32);
        objects.push(ObjectInstance {
            id,
            name: name.clone(),
            class: det.class,
            pose: det.pose,
            canonical: patch.clone(),
            rotation: 0,
            patch,
            origin: (det.bbox.x + x0 as i32, det.bbox.y + y0 as i32),
            z: z_of[idx],
            parent: None,
            tint: det.tint,
        });
        bindings.push(DetectionBinding { object: id, source: det.source, name });
    }

    // Containment: a detection becomes the child of the topmost lower layer
    // whose hole/place-on region covers >=90% of its mask.
    let snapshot = objects.clone();
    for obj in objects.iter_mut() {
        let total = obj.patch.mask.count();
        if total == 0 {
            continue;
        }
        let mut best: Option<(u32, ObjectId)> = None;
        for host in &snapshot {
            if host.id == obj.id || host.z >= obj.z {
                continue;
            }
            let mut covered = 0u64;
            for (px, py) in obj.patch.mask.iter_set() {
                let x = obj.origin.0 as i64 + px as i64 - host.origin.0 as i64;
                let y = obj.origin.1 as i64 + py as i64 - host.origin.1 as i64;
                if host.patch.affordance(Affordance::Hole).get_clipped(x, y)
                    || host.patch.affordance(Affordance::PlaceOn).get_clipped(x, y)
                {
                    covered += 1;
                }
            }
            if covered as f64 >= crate::imagination::CONTAINMENT_MIN_FRACTION * total as f64 {
                let key = (host.z, host.id);
                if best.map(|b| key > b).unwrap_or(true) {
                    best = Some(key);
                }
            }
        }
        obj.parent = best.map(|(_, id)| id);
    }

    let compartments: Vec<Compartment> = report
        .detections
        .iter()
        .filter(|d| d.is_compartment())
        .map(|d| Compartment {
            name: d.name.clone(),
            region: d.mask.clone(),
            origin: (d.bbox.x, d.bbox.y),
        })
        .collect();

    let scene = Scene {
        width: report.width,
        height: report.height,
        background: report.background.clone(),
        background_affordances: Arc::new(report.background_affordances.clone()),
        box_region: report.box_region.clone(),
        compartments: Arc::new(compartments),
        objects,
        dictionary: report.dictionary.clone(),
    };
    Ok((scene, bindings))
}

/// Find an affordance jitter level whose mean mIoU over freshly generated
/// scenes lands near `target`. Monotone bisection; returns the jitter.
pub fn calibrate_affordance_jitter(
    gen: &crate::scenegen::GenConfig,
    target_miou: f64,
    n_scenes: u32,
) -> Result<f64, PerceptionError> {
    let measure = |jitter: f64| -> Result<f64, PerceptionError> {
        if jitter == 0.0 {
            return Ok(1.0);
        }
        let mut sum = 0.0;
        for k in 0..n_scenes {
            let cfg = crate::scenegen::GenConfig {
                seed: crate::derive_seed(gen.seed, 7_000 + k as u64),
                ..gen.clone()
            };
            let g = crate::scenegen::generate_scene(&cfg)
                .map_err(|e| PerceptionError::InvalidConfig(e.to_string()))?;
            let report = perceive_oracle(&g.scene)?;
            let corrupted = corrupt(
                &report,
                &CorruptionConfig {
                    affordance_jitter: jitter,
                    rng_seed: crate::derive_seed(gen.seed, 9_000 + k as u64),
                    ..CorruptionConfig::default()
                },
            )?;
            sum += perception_quality(&corrupted, &g.scene)?.affordance_miou;
        }
        Ok(sum / n_scenes as f64)
    };
    if target_miou >= 1.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 6.0f64;
    for _ in 0..12 {
        let mid = (lo + hi) / 2.0;
        if measure(mid)? > target_miou {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, GenConfig};

    fn gen_small(seed: u64) -> crate::scenegen::Generated {
        let cfg = GenConfig {
            seed,
            width: 224,
            height: 176,
            object_count: (3, 4),
            ..GenConfig::default()
        };
        generate_scene(&cfg).unwrap()
    }

    #[test]
    fn oracle_counts_objects_and_compartments() {
        let g = gen_small(11);
        let report = perceive_oracle(&g.scene).unwrap();
        let n_obj = report.detections.iter().filter(|d| !d.is_compartment()).count();
        let n_comp = report.detections.iter().filter(|d| d.is_compartment()).count();
        assert_eq!(n_obj, g.scene.objects.len());
        assert_eq!(n_comp, g.scene.compartments.len());
        assert!(report.detections.iter().all(|d| d.confidence == 1.0));
    }

    #[test]
    fn oracle_map_equals_composite_bit_exact() {
        let g = gen_small(12);
        let report = perceive_oracle(&g.scene).unwrap();
        let comp = g.scene.composite().unwrap();
        assert_eq!(report.affordance_map, comp.affordances);
    }

    #[test]
    fn empty_scene_yields_compartments_only() {
        let cfg = GenConfig {
            seed: 1,
            width: 224,
            height: 176,
            object_count: (0, 0),
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let report = perceive_oracle(&g.scene).unwrap();
        assert!(report.detections.iter().all(|d| d.is_compartment()));
    }

    #[test]
    fn identity_corruption_is_identity() {
        let g = gen_small(13);
        let report = perceive_oracle(&g.scene).unwrap();
        let out = corrupt(&report, &CorruptionConfig::default()).unwrap();
        assert_eq!(out.detections.len(), report.detections.len());
        for (a, b) in out.detections.iter().zip(&report.detections) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.class, b.class);
            assert_eq!(a.bbox, b.bbox);
        }
        assert_eq!(out.affordance_map, report.affordance_map);
    }

    #[test]
    fn forced_miss_drops_objects_keeps_compartments() {
        let g = gen_small(14);
        let report = perceive_oracle(&g.scene).unwrap();
        let out = corrupt(
            &report,
            &CorruptionConfig { miss_prob: 1.0, rng_seed: 5, ..CorruptionConfig::default() },
        )
        .unwrap();
        assert!(out.detections.iter().all(|d| d.is_compartment()));
        assert!(!out.detections.is_empty());
    }

    #[test]
    fn forced_split_partitions_masks() {
        let g = gen_small(15);
        let report = perceive_oracle(&g.scene).unwrap();
        let out = corrupt(
            &report,
            &CorruptionConfig { split_prob: 1.0, rng_seed: 6, ..CorruptionConfig::default() },
        )
        .unwrap();
        for det in report.detections.iter().filter(|d| !d.is_compartment()) {
            let halves: Vec<&Detection> = out
                .detections
                .iter()
                .filter(|d| d.source == det.source && !d.is_compartment())
                .collect();
            assert_eq!(halves.len(), 2, "expected two split halves for {}", det.name);
            // Union of the halves equals the original visible mask.
            let mut union = Mask::new(report.width, report.height);
            for h in &halves {
                union.blit(&h.mask, h.bbox.x, h.bbox.y);
            }
            let mut original = Mask::new(report.width, report.height);
            original.blit(&det.mask, det.bbox.x, det.bbox.y);
            assert_eq!(union, original);
        }
    }

    #[test]
    fn corruption_is_reproducible() {
        let g = gen_small(16);
        let report = perceive_oracle(&g.scene).unwrap();
        let cfg = CorruptionConfig {
            split_prob: 0.5,
            misclass_prob: 0.5,
            boundary_jitter: 1.5,
            affordance_jitter: 1.0,
            rng_seed: 99,
            ..CorruptionConfig::default()
        };
        let a = corrupt(&report, &cfg).unwrap();
        let b = corrupt(&report, &cfg).unwrap();
        assert_eq!(a.detections.len(), b.detections.len());
        for (x, y) in a.detections.iter().zip(&b.detections) {
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.class, y.class);
        }
        assert_eq!(a.affordance_map, b.affordance_map);
    }

    #[test]
    fn oracle_quality_is_perfect() {
        for seed in 20..24 {
            let g = gen_small(seed);
            let report = perceive_oracle(&g.scene).unwrap();
            let q = perception_quality(&report, &g.scene).unwrap();
            assert_eq!(q.affordance_miou, 1.0);
            assert_eq!(q.instance_miou, 1.0);
            assert_eq!(q.detection_score, 1.0);
        }
    }

    #[test]
    fn missing_everything_scores_zero_detection() {
        let g = gen_small(25);
        let report = perceive_oracle(&g.scene).unwrap();
        let out = corrupt(
            &report,
            &CorruptionConfig { miss_prob: 1.0, rng_seed: 1, ..CorruptionConfig::default() },
        )
        .unwrap();
        let q = perception_quality(&out, &g.scene).unwrap();
        assert_eq!(q.detection_score, 0.0);
        assert_eq!(q.instance_miou, 0.0);
    }

    #[test]
    fn quality_decreases_with_jitter() {
        let g = gen_small(26);
        let report = perceive_oracle(&g.scene).unwrap();
        let mut prev = 1.0f64;
        for jitter in [0.0, 1.0, 2.0, 4.0] {
            let out = corrupt(
                &report,
                &CorruptionConfig {
                    affordance_jitter: jitter,
                    boundary_jitter: 0.0,
                    rng_seed: 3,
                    ..CorruptionConfig::default()
                },
            )
            .unwrap();
            let q = perception_quality(&out, &g.scene).unwrap();
            assert!(
                q.affordance_miou <= prev + 1e-9,
                "mIoU rose from {prev} to {} at jitter {jitter}",
                q.affordance_miou
            );
            prev = q.affordance_miou;
        }
    }

    #[test]
    fn instance_miou_matches_bruteforce_for_jittered_disc() {
        // One apple, boundary jitter 2: the instance mIoU must equal the
        // plain set-operation count done here by hand.
        let cfg = GenConfig {
            seed: 27,
            width: 224,
            height: 176,
            object_count: (1, 1),
            classes: vec![ClassLabel::Apple],
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let report = perceive_oracle(&g.scene).unwrap();
        let corrupted = corrupt(
            &report,
            &CorruptionConfig { boundary_jitter: 2.0, rng_seed: 4, ..CorruptionConfig::default() },
        )
        .unwrap();
        let q = perception_quality(&corrupted, &g.scene).unwrap();
        // Brute force: place both masks on the scene canvas and count.
        let det = corrupted.detections.iter().find(|d| !d.is_compartment()).unwrap();
        let gt = &g.scene.objects[0];
        let mut det_full = Mask::new(g.scene.width, g.scene.height);
        det_full.blit(&det.visible, det.bbox.x, det.bbox.y);
        let mut gt_full = Mask::new(g.scene.width, g.scene.height);
        gt_full.blit(&gt.patch.mask, gt.origin.0, gt.origin.1);
        let expected = det_full.iou(&gt_full).unwrap();
        assert!((q.instance_miou - expected).abs() < 1e-12);
    }

    #[test]
    fn boundary_jitter_never_raises_affordance_miou() {
        // Statistical monotonicity harness over 100 scenes: the mean
        // affordance mIoU must not increase along jitter {0, 1, 2, 4}.
        let mut prev = f64::INFINITY;
        for jitter in [0.0, 1.0, 2.0, 4.0] {
            let mut sum = 0.0;
            for k in 0..100u64 {
                let cfg = GenConfig {
                    seed: 9_100 + k,
                    width: 160,
                    height: 128,
                    object_count: (2, 3),
                    compartment_count: (3, 4),
                    ..GenConfig::default()
                };
                let g = generate_scene(&cfg).unwrap();
                let report = perceive_oracle(&g.scene).unwrap();
                let corrupted = corrupt(
                    &report,
                    &CorruptionConfig {
                        boundary_jitter: jitter,
                        rng_seed: k,
                        ..CorruptionConfig::default()
                    },
                )
                .unwrap();
                sum += perception_quality(&corrupted, &g.scene).unwrap().affordance_miou;
            }
            let mean = sum / 100.0;
            assert!(
                mean <= prev + 1e-9,
                "mean affordance mIoU rose to {mean:.4} at boundary jitter {jitter}"
            );
            prev = mean;
        }
    }

    #[test]
    fn completion_identity_without_occlusion() {
        let cfg = GenConfig {
            seed: 31,
            width: 224,
            height: 176,
            object_count: (3, 3),
            stack_prob: 0.0,
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let report = perceive_oracle(&g.scene).unwrap();
        let enabled = complete_objects(&report, true, &report.dictionary.clone());
        let disabled = complete_objects(&report, false, &report.dictionary.clone());
        for (a, b) in enabled.detections.iter().zip(&disabled.detections) {
            assert_eq!(a.mask, b.mask);
            assert!(!a.completed && !b.completed);
        }
        assert_eq!(enabled.affordance_map, disabled.affordance_map);
    }

    #[test]
    fn completion_restores_occluded_masks_exactly() {
        let cfg = GenConfig {
            seed: 32,
            width: 224,
            height: 176,
            object_count: (3, 4),
            classes: vec![ClassLabel::Cup, ClassLabel::Bowl, ClassLabel::Can],
            stack_prob: 1.0,
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        assert!(
            g.scene.objects.iter().any(|o| o.parent.is_some()),
            "test scene needs a stack"
        );
        let report = perceive_oracle(&g.scene).unwrap();
        let completed = complete_objects(&report, true, &report.dictionary.clone());
        for det in completed.detections.iter().filter(|d| !d.is_compartment()) {
            let gt = g.scene.object(det.source.unwrap()).unwrap();
            assert_eq!(det.mask, gt.patch.mask, "completed mask differs for {}", det.name);
            assert_eq!((det.bbox.x, det.bbox.y), gt.origin);
            // Occluded hosts got filled and flagged.
            if det.visible.count() < det.mask.count() {
                assert!(det.completed);
            }
            // Output masks contain the visible pixels and stay inside truth.
            for (x, y) in det.visible.iter_set() {
                assert!(det.mask.get(x, y));
            }
        }
    }

    #[test]
    fn reconstruction_roundtrips_oracle_scene() {
        for seed in 40..44 {
            let g = gen_small(seed);
            let report = perceive_oracle(&g.scene).unwrap();
            let completed = complete_objects(&report, true, &report.dictionary.clone());
            let (scene, bindings) = scene_from_report(&completed).unwrap();
            scene.validate().unwrap();
            assert_eq!(scene.objects.len(), g.scene.objects.len());
            assert_eq!(bindings.len(), scene.objects.len());
            let a = scene.composite().unwrap();
            let b = g.scene.composite().unwrap();
            assert_eq!(a.image, b.image, "seed {seed}: reconstructed image differs");
            assert_eq!(a.affordances, b.affordances);
            assert_eq!(scene.outside_box(), g.scene.outside_box());
        }
    }

    #[test]
    fn reconstruction_recovers_stacking_links() {
        let cfg = GenConfig {
            seed: 45,
            width: 224,
            height: 176,
            object_count: (3, 3),
            classes: vec![ClassLabel::Cup, ClassLabel::Bowl, ClassLabel::Can],
            stack_prob: 1.0,
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let gt_stacks = g.scene.objects.iter().filter(|o| o.parent.is_some()).count();
        assert!(gt_stacks > 0);
        let report = perceive_oracle(&g.scene).unwrap();
        let completed = complete_objects(&report, true, &report.dictionary.clone());
        let (scene, bindings) = scene_from_report(&completed).unwrap();
        let rebuilt_stacks = scene.objects.iter().filter(|o| o.parent.is_some()).count();
        assert_eq!(rebuilt_stacks, gt_stacks, "containment links lost");
        // Parent-child pairs map to the same ground-truth pairs.
        for obj in scene.objects.iter().filter(|o| o.parent.is_some()) {
            let src_child = bindings.iter().find(|b| b.object == obj.id).unwrap().source.unwrap();
            let src_parent = bindings
                .iter()
                .find(|b| b.object == obj.parent.unwrap())
                .unwrap()
                .source
                .unwrap();
            let gt_child = g.scene.object(src_child).unwrap();
            assert_eq!(gt_child.parent, Some(src_parent));
        }
    }

    #[test]
    fn reconstruction_without_completion_loses_stacking() {
        let cfg = GenConfig {
            seed: 46,
            width: 224,
            height: 176,
            object_count: (3, 3),
            classes: vec![ClassLabel::Cup, ClassLabel::Bowl],
            stack_prob: 1.0,
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        assert!(g.scene.objects.iter().any(|o| o.parent.is_some()));
        let report = perceive_oracle(&g.scene).unwrap();
        let (scene, _) = scene_from_report(&report).unwrap();
        // The apple hides exactly the host pixels that would prove
        // containment; without completion the link cannot be inferred.
        assert_eq!(scene.objects.iter().filter(|o| o.parent.is_some()).count(), 0);
    }

    #[test]
    fn calibration_finds_monotone_levels() {
        let gen = GenConfig {
            seed: 50,
            width: 224,
            height: 176,
            object_count: (2, 3),
            ..GenConfig::default()
        };
        let j95 = calibrate_affordance_jitter(&gen, 0.95, 3).unwrap();
        let j85 = calibrate_affordance_jitter(&gen, 0.85, 3).unwrap();
        assert!(j95 > 0.0 && j85 > j95, "jitter must grow as target mIoU drops");
    }
}
