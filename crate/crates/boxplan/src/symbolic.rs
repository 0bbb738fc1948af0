//! Translation of a visual plan into a parameterized symbolic command
//! sequence, the replay of such sequences through the imagination machinery,
//! and a natural-language listing.
//!
//! Every symbolic parameter is read out of a plan image: bounding boxes come
//! from the referenced node's scene, rotation angles are the minimal signed
//! angle between the same object in two consecutive images. Replay resolves
//! the parameters against its own evolving scene and fails loudly when a
//! bounding box no longer matches, so corrupted parameters surface at the
//! offending step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagination::{apply_step, Action, ActionError};
use crate::planner::{candidate_regions, Plan};
use crate::scene::{BBox, ObjectId, Scene, SceneError};
use crate::validation::{scaled_threshold, validate, ValidationError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolicCommand {
    /// Grasp an object of `class`, parameterized by its bounding box in the
    /// referenced image.
    Grasp { class: String, object_name: String, image_ref: usize, bbox: BBox },
    /// Rotate by the signed angle (degrees, in (-180, 180]) between the two
    /// consecutive images.
    Rotate { object_name: String, angle_deg: i32 },
    /// Swap to the other stored pose.
    Flip { object_name: String },
    /// Place the grasped object at the region of `class`, parameterized by
    /// the region's bounding box in the referenced image.
    PlaceAt { class: String, region_name: String, image_ref: usize, bbox: BBox },
}

/// One bounding-box variable binding: the box of a named entity as read
/// from one plan image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub image_ref: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicPlan {
    pub commands: Vec<SymbolicCommand>,
    /// Number of images in the visual plan (image_1 .. image_n).
    pub image_count: usize,
    /// Bounding boxes of every object in every image, the variable
    /// assignment the commands' Bbox() references resolve against.
    pub bindings: Vec<Binding>,
}

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error("plan contains an unvalidated step (index {0})")]
    UnvalidatedStep(usize),
    #[error("object {0} missing from plan scene {1}")]
    MissingObject(ObjectId, usize),
    #[error("no placement region at target ({0}, {1}) in image {2}")]
    RegionNotFound(u32, u32, usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("step {step}: unresolvable name {name:?}")]
    Unresolvable { step: usize, name: String },
    #[error("step {step}: bounding box {got:?} does not match the scene ({want:?})")]
    BboxMismatch { step: usize, got: BBox, want: BBox },
    #[error("step {step}: no placement region with bbox {bbox:?}")]
    NoRegionMatch { step: usize, bbox: BBox },
    #[error("step {step}: malformed command sequence")]
    Malformed { step: usize },
    #[error("step {step}: rotation angle {angle} is not reachable")]
    BadAngle { step: usize, angle: i32 },
    #[error("step {step}: action failed: {source}")]
    Action {
        step: usize,
        #[source]
        source: ActionError,
    },
    #[error("step {step}: validation failed ({conflict} conflict px >= {threshold})")]
    StepInvalid { step: usize, conflict: u32, threshold: u32 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Minimal signed angle in (-180, 180] for a forward rotation in degrees.
fn minimal_signed(total: i32) -> i32 {
    let mut a = total.rem_euclid(360);
    if a > 180 {
        a -= 360;
    }
    a
}

/// Translate a visual plan into its symbolic command sequence. Plans with
/// failed validations are refused.
pub fn parse(plan: &Plan) -> Result<SymbolicPlan, SymbolicError> {
    for (i, step) in plan.steps.iter().enumerate() {
        if !step.validation.valid {
            return Err(SymbolicError::UnvalidatedStep(i));
        }
    }
    let mut bindings = Vec::new();
    for (k, scene) in plan.scenes.iter().enumerate() {
        for obj in &scene.objects {
            bindings.push(Binding { name: obj.name.clone(), image_ref: k + 1, bbox: obj.bbox() });
        }
    }
    let mut commands = Vec::new();
    for (k, step) in plan.steps.iter().enumerate() {
        let pre = &plan.scenes[k];
        let post = &plan.scenes[k + 1];
        let obj_pre = pre
            .object(step.object)
            .map_err(|_| SymbolicError::MissingObject(step.object, k))?;
        let obj_post = post
            .object(step.object)
            .map_err(|_| SymbolicError::MissingObject(step.object, k + 1))?;
        commands.push(SymbolicCommand::Grasp {
            class: obj_pre.class.label().to_string(),
            object_name: obj_pre.name.clone(),
            image_ref: k + 1,
            bbox: obj_pre.bbox(),
        });
        let delta = minimal_signed(obj_post.rotation as i32 - obj_pre.rotation as i32);
        if delta != 0 {
            commands
                .push(SymbolicCommand::Rotate { object_name: obj_pre.name.clone(), angle_deg: delta });
        }
        if obj_post.pose != obj_pre.pose {
            commands.push(SymbolicCommand::Flip { object_name: obj_pre.name.clone() });
        }
        // The placement region is read from the pre-action image: the
        // connected placement component containing the target pixel.
        let comp = pre.composite()?;
        let regions = candidate_regions(pre, &comp, true);
        let region = regions
            .iter()
            .find(|r| r.mask.get(step.target.0, step.target.1))
            .or_else(|| regions.iter().find(|r| r.name == step.region_name))
            .ok_or(SymbolicError::RegionNotFound(step.target.0, step.target.1, k + 1))?;
        let class = match region.host {
            Some(id) => pre.object(id)?.class.label().to_string(),
            None => "compartment".to_string(),
        };
        commands.push(SymbolicCommand::PlaceAt {
            class,
            region_name: region.name.clone(),
            image_ref: k + 1,
            bbox: region.bbox,
        });
    }
    Ok(SymbolicPlan { commands, image_count: plan.scenes.len(), bindings })
}

/// Replay a symbolic plan on a scene through the imagination module. Under
/// oracle perception the final composited image is bit-identical to the
/// visual plan's leaf image.
pub fn replay(initial: &Scene, splan: &SymbolicPlan) -> Result<Scene, ReplayError> {
    let threshold = scaled_threshold(initial.width, initial.height);
    let mut scene = initial.clone();
    let mut idx = 0usize;
    let mut step = 0usize;
    while idx < splan.commands.len() {
        let SymbolicCommand::Grasp { object_name, bbox, .. } = &splan.commands[idx] else {
            return Err(ReplayError::Malformed { step });
        };
        idx += 1;
        let obj = scene
            .objects
            .iter()
            .find(|o| &o.name == object_name)
            .ok_or_else(|| ReplayError::Unresolvable { step, name: object_name.clone() })?;
        let id = obj.id;
        if obj.bbox() != *bbox {
            return Err(ReplayError::BboxMismatch { step, got: *bbox, want: obj.bbox() });
        }
        let mut actions = Vec::new();
        loop {
            match splan.commands.get(idx) {
                Some(SymbolicCommand::Rotate { angle_deg, .. }) => {
                    let delta = angle_deg.rem_euclid(360);
                    if delta == 0 || delta % 15 != 0 {
                        return Err(ReplayError::BadAngle { step, angle: *angle_deg });
                    }
                    actions.push(Action::Rotate { id, angle: delta as u16 });
                    idx += 1;
                }
                Some(SymbolicCommand::Flip { .. }) => {
                    actions.push(Action::Flip { id });
                    idx += 1;
                }
                Some(SymbolicCommand::PlaceAt { region_name, bbox, .. }) => {
                    let comp = scene.composite()?;
                    let regions = candidate_regions(&scene, &comp, true);
                    let region = regions
                        .iter()
                        .find(|r| r.bbox == *bbox && &r.name == region_name)
                        .or_else(|| regions.iter().find(|r| r.bbox == *bbox))
                        .ok_or(ReplayError::NoRegionMatch { step, bbox: *bbox })?;
                    // The exact landing spot is the object's bbox center in
                    // the next image, read from the variable bindings; the
                    // region centroid is the fallback when a plan carries no
                    // bindings.
                    let target = splan
                        .bindings
                        .iter()
                        .find(|b| b.name == *object_name && b.image_ref == step + 2)
                        .map(|b| {
                            let (cx, cy) = b.bbox.center();
                            (cx.max(0) as u32, cy.max(0) as u32)
                        })
                        .unwrap_or(region.centroid);
                    actions.push(Action::PickPlace {
                        id,
                        target,
                        region: region.name.clone(),
                    });
                    idx += 1;
                    break;
                }
                _ => return Err(ReplayError::Malformed { step }),
            }
        }
        let comp = scene.composite()?;
        let post = apply_step(&scene, &comp, &actions)
            .map_err(|source| ReplayError::Action { step, source })?;
        let v = validate(&post, id, threshold)?;
        if !v.valid {
            return Err(ReplayError::StepInvalid {
                step,
                conflict: v.conflict_pixels,
                threshold: v.threshold,
            });
        }
        scene = post;
        step += 1;
    }
    Ok(scene)
}

fn bbox_center_and_diameter(bbox: &BBox) -> (i32, i32, u32) {
    let (cx, cy) = bbox.center();
    (cx, cy, bbox.max_side())
}

/// Human-readable listing, one line per command. An empty plan reads
/// "nothing needs to be done".
pub fn to_text(splan: &SymbolicPlan) -> String {
    if splan.commands.is_empty() {
        return "nothing needs to be done".to_string();
    }
    let mut lines = Vec::new();
    for cmd in &splan.commands {
        match cmd {
            SymbolicCommand::Grasp { class, bbox, .. } => {
                let (cx, cy, d) = bbox_center_and_diameter(bbox);
                lines.push(format!("pick an object with label {class} at ({cx},{cy}), diameter {d} px"));
            }
            SymbolicCommand::Rotate { object_name, angle_deg } => {
                lines.push(format!("rotate {object_name} by {angle_deg} degrees"));
            }
            SymbolicCommand::Flip { object_name } => {
                lines.push(format!("flip {object_name} vertically"));
            }
            SymbolicCommand::PlaceAt { class, bbox, .. } => {
                let (cx, cy, d) = bbox_center_and_diameter(bbox);
                lines.push(format!("place it on {class} at ({cx},{cy}), diameter {d} px"));
            }
        }
    }
    lines.join("\n")
}

/// Line-oriented serialization: a variable-assignment section binding every
/// referenced bounding box, the plan in function-call syntax, and the
/// natural-language listing.
pub fn to_listing(splan: &SymbolicPlan) -> String {
    let mut out = String::new();
    out.push_str("Variables:\n");
    out.push_str(&format!(
        "image_ref = {{{}}}\n",
        (1..=splan.image_count.max(1))
            .map(|i| format!("image_{i}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    for b in &splan.bindings {
        out.push_str(&format!(
            "bbox: {} @ image_{} = ({}, {}, {}, {})\n",
            b.name, b.image_ref, b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h
        ));
    }
    for cmd in &splan.commands {
        if let SymbolicCommand::PlaceAt { region_name, image_ref, bbox, .. } = cmd {
            out.push_str(&format!(
                "bbox: {region_name} @ image_{image_ref} [region] = ({}, {}, {}, {})\n",
                bbox.x, bbox.y, bbox.w, bbox.h
            ));
        }
    }
    out.push_str("\nPlan:\n");
    for cmd in &splan.commands {
        match cmd {
            SymbolicCommand::Grasp { class, object_name, image_ref, .. } => {
                out.push_str(&format!(
                    "Grasp(\"{class}\", Bbox(\"{object_name}\", \"image_{image_ref}\"))\n"
                ));
            }
            SymbolicCommand::Rotate { object_name, angle_deg } => {
                out.push_str(&format!("Rotate(\"{object_name}\", {angle_deg})\n"));
            }
            SymbolicCommand::Flip { object_name } => {
                out.push_str(&format!("Flip(\"{object_name}\")\n"));
            }
            SymbolicCommand::PlaceAt { class, region_name, image_ref, .. } => {
                out.push_str(&format!(
                    "Place_at(\"{class}\", Bbox(\"{region_name}\", \"image_{image_ref}\"))\n"
                ));
            }
        }
    }
    out.push_str("\nListing:\n");
    out.push_str(&to_text(splan));
    out.push('\n');
    out
}

#[derive(Debug, Error)]
pub enum ListingParseError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("unknown bbox binding for {0} in image_{1}")]
    UnknownBinding(String, usize),
}

/// Parse the serialization produced by [`to_listing`].
pub fn from_listing(text: &str) -> Result<SymbolicPlan, ListingParseError> {
    use std::collections::HashMap;
    let mut object_boxes: HashMap<(String, usize), BBox> = HashMap::new();
    let mut region_boxes: HashMap<(String, usize), BBox> = HashMap::new();
    let mut bindings = Vec::new();
    let mut commands = Vec::new();
    let mut image_count = 1usize;
    let mut section = "";
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = line.strip_suffix(':') {
            if ["Variables", "Plan", "Listing"].contains(&s) {
                section = s;
                continue;
            }
        }
        match section {
            "Variables" => {
                if let Some(rest) = line.strip_prefix("image_ref") {
                    image_count = rest.matches("image_").count().max(1);
                } else if let Some(rest) = line.strip_prefix("bbox:") {
                    let (lhs, rhs) = rest
                        .split_once('=')
                        .ok_or_else(|| ListingParseError::Line(ln + 1, "missing '='".into()))?;
                    let (name, img) = lhs
                        .split_once('@')
                        .ok_or_else(|| ListingParseError::Line(ln + 1, "missing '@'".into()))?;
                    let is_region = img.contains("[region]");
                    let image_ref: usize = img
                        .trim()
                        .trim_end_matches("[region]")
                        .trim()
                        .strip_prefix("image_")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| ListingParseError::Line(ln + 1, "bad image ref".into()))?;
                    let nums: Vec<i64> = rhs
                        .trim()
                        .trim_start_matches('(')
                        .trim_end_matches(')')
                        .split(',')
                        .filter_map(|v| v.trim().parse().ok())
                        .collect();
                    if nums.len() != 4 {
                        return Err(ListingParseError::Line(ln + 1, "expected 4 numbers".into()));
                    }
                    let bbox =
                        BBox::new(nums[0] as i32, nums[1] as i32, nums[2] as u32, nums[3] as u32);
                    let key = (name.trim().to_string(), image_ref);
                    if is_region {
                        region_boxes.insert(key, bbox);
                    } else {
                        bindings.push(Binding {
                            name: key.0.clone(),
                            image_ref,
                            bbox,
                        });
                        object_boxes.insert(key, bbox);
                    }
                }
            }
            "Plan" => {
                let cmd = parse_call(line)
                    .ok_or_else(|| ListingParseError::Line(ln + 1, "unparseable call".into()))?;
                commands.push(resolve_call(cmd, &object_boxes, &region_boxes)?);
            }
            _ => {}
        }
    }
    Ok(SymbolicPlan { commands, image_count, bindings })
}

enum RawCall {
    Grasp(String, String, usize),
    Rotate(String, i32),
    Flip(String),
    PlaceAt(String, String, usize),
}

fn parse_call(line: &str) -> Option<RawCall> {
    let strings: Vec<String> = line
        .split('"')
        .enumerate()
        .filter(|(i, _)| i % 2 == 1)
        .map(|(_, s)| s.to_string())
        .collect();
    let image_of = |s: &str| s.strip_prefix("image_").and_then(|v| v.parse::<usize>().ok());
    if line.starts_with("Grasp(") {
        let [class, name, img] = strings.as_slice() else { return None };
        Some(RawCall::Grasp(class.clone(), name.clone(), image_of(img)?))
    } else if line.starts_with("Rotate(") {
        let name = strings.first()?.clone();
        let angle = line.rsplit(',').next()?.trim().trim_end_matches(')').trim().parse().ok()?;
        Some(RawCall::Rotate(name, angle))
    } else if line.starts_with("Flip(") {
        Some(RawCall::Flip(strings.first()?.clone()))
    } else if line.starts_with("Place_at(") {
        let [class, name, img] = strings.as_slice() else { return None };
        Some(RawCall::PlaceAt(class.clone(), name.clone(), image_of(img)?))
    } else {
        None
    }
}

fn resolve_call(
    call: RawCall,
    object_boxes: &std::collections::HashMap<(String, usize), BBox>,
    region_boxes: &std::collections::HashMap<(String, usize), BBox>,
) -> Result<SymbolicCommand, ListingParseError> {
    Ok(match call {
        RawCall::Grasp(class, object_name, image_ref) => {
            let bbox = *object_boxes
                .get(&(object_name.clone(), image_ref))
                .ok_or_else(|| ListingParseError::UnknownBinding(object_name.clone(), image_ref))?;
            SymbolicCommand::Grasp { class, object_name, image_ref, bbox }
        }
        RawCall::Rotate(object_name, angle_deg) => {
            SymbolicCommand::Rotate { object_name, angle_deg }
        }
        RawCall::Flip(object_name) => SymbolicCommand::Flip { object_name },
        RawCall::PlaceAt(class, region_name, image_ref) => {
            let key = (region_name.clone(), image_ref);
            let bbox = *region_boxes
                .get(&key)
                .or_else(|| object_boxes.get(&key))
                .ok_or_else(|| ListingParseError::UnknownBinding(region_name.clone(), image_ref))?;
            SymbolicCommand::PlaceAt { class, region_name, image_ref, bbox }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagination::Action;
    use crate::perception::perceive_oracle;
    use crate::planner::{plan, PlannerConfig};
    use crate::scenegen::{generate_scene, GenConfig};

    fn planned(seed: u64, objects: (u32, u32), flip_demand: f64) -> (crate::scenegen::Generated, crate::planner::PlanOutcome) {
        let cfg = GenConfig {
            seed,
            width: 224,
            height: 176,
            object_count: objects,
            flip_demand,
            classes: if flip_demand > 0.0 {
                vec![crate::scene::ClassLabel::Cuboid]
            } else {
                GenConfig::default().classes
            },
            compartment_count: if flip_demand > 0.0 { (2, 3) } else { (4, 6) },
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let outcome = plan(
            &g.scene,
            |s| perceive_oracle(s),
            &PlannerConfig { rng_seed: seed, ..PlannerConfig::default() },
        )
        .unwrap();
        (g, outcome)
    }

    #[test]
    fn empty_plan_parses_to_empty_commands() {
        let (_, outcome) = {
            let cfg = GenConfig {
                seed: 1,
                width: 224,
                height: 176,
                object_count: (2, 2),
                initial_in_box: (2, 2),
                ..GenConfig::default()
            };
            let g = generate_scene(&cfg).unwrap();
            let o = plan(&g.scene, |s| perceive_oracle(s), &PlannerConfig::default()).unwrap();
            (g, o)
        };
        let splan = parse(&outcome.plan).unwrap();
        assert!(splan.commands.is_empty());
        assert_eq!(to_text(&splan), "nothing needs to be done");
    }

    #[test]
    fn command_count_matches_action_count() {
        let (_, outcome) = planned(7, (3, 4), 0.0);
        assert!(outcome.plan.complete);
        let splan = parse(&outcome.plan).unwrap();
        let picks = outcome.plan.steps.len();
        let rotates: usize = outcome
            .plan
            .steps
            .iter()
            .flat_map(|s| &s.actions)
            .filter(|a| matches!(a, Action::Rotate { .. }))
            .count();
        let flips: usize = outcome
            .plan
            .steps
            .iter()
            .flat_map(|s| &s.actions)
            .filter(|a| matches!(a, Action::Flip { .. }))
            .count();
        assert_eq!(splan.commands.len(), 2 * picks + rotates + flips);
        // Every grasp parameter traces back to the referenced plan image.
        for cmd in &splan.commands {
            if let SymbolicCommand::Grasp { object_name, image_ref, bbox, .. } = cmd {
                let scene = &outcome.plan.scenes[image_ref - 1];
                let obj = scene.objects.iter().find(|o| &o.name == object_name).unwrap();
                assert_eq!(obj.bbox(), *bbox);
            }
        }
        // Grasp opens and Place_at closes each block.
        let mut i = 0;
        for _ in 0..picks {
            assert!(matches!(splan.commands[i], SymbolicCommand::Grasp { .. }));
            i += 1;
            while matches!(
                splan.commands[i],
                SymbolicCommand::Rotate { .. } | SymbolicCommand::Flip { .. }
            ) {
                i += 1;
            }
            assert!(matches!(splan.commands[i], SymbolicCommand::PlaceAt { .. }));
            i += 1;
        }
    }

    #[test]
    fn parse_refuses_invalid_steps() {
        let g = generate_scene(&GenConfig {
            seed: 17,
            width: 224,
            height: 176,
            object_count: (3, 3),
            ..GenConfig::default()
        })
        .unwrap();
        let baseline =
            crate::planner::baseline_plan(&g.scene, &PlannerConfig { rng_seed: 3, ..Default::default() })
                .unwrap();
        if baseline.steps.iter().all(|s| s.validation.valid) {
            return; // lucky baseline; nothing to refuse
        }
        assert!(matches!(parse(&baseline), Err(SymbolicError::UnvalidatedStep(_))));
    }

    #[test]
    fn replay_reproduces_final_image_bit_exactly() {
        for seed in [201u64, 202, 203] {
            let (g, outcome) = planned(seed, (2, 4), 0.0);
            assert!(outcome.plan.complete);
            let splan = parse(&outcome.plan).unwrap();
            let replayed = replay(&g.scene, &splan).unwrap();
            let a = replayed.composite().unwrap();
            let b = outcome.plan.scenes.last().unwrap().composite().unwrap();
            assert_eq!(a.image, b.image, "seed {seed}: replay diverged");
            assert_eq!(a.affordances, b.affordances);
        }
    }

    #[test]
    fn flip_precedes_place_and_round_trips() {
        for seed in 0..40u64 {
            let (g, outcome) = planned(seed, (1, 1), 1.0);
            if !outcome.plan.complete
                || !outcome
                    .plan
                    .steps
                    .iter()
                    .flat_map(|s| &s.actions)
                    .any(|a| matches!(a, Action::Flip { .. }))
            {
                continue;
            }
            let splan = parse(&outcome.plan).unwrap();
            let flip_pos = splan
                .commands
                .iter()
                .position(|c| matches!(c, SymbolicCommand::Flip { .. }))
                .expect("flip command present");
            assert!(matches!(splan.commands[flip_pos + 1], SymbolicCommand::PlaceAt { .. }));
            let replayed = replay(&g.scene, &splan).unwrap();
            let a = replayed.composite().unwrap();
            let b = outcome.plan.scenes.last().unwrap().composite().unwrap();
            assert_eq!(a.image, b.image);
            return;
        }
        panic!("no flip plan found in 40 seeds");
    }

    #[test]
    fn corrupted_bbox_fails_at_offending_step() {
        let (g, outcome) = planned(205, (2, 3), 0.0);
        assert!(outcome.plan.complete && !outcome.plan.is_empty());
        let mut splan = parse(&outcome.plan).unwrap();
        // Corrupt the first grasp bbox.
        if let SymbolicCommand::Grasp { bbox, .. } = &mut splan.commands[0] {
            bbox.x += 3;
        }
        match replay(&g.scene, &splan) {
            Err(ReplayError::BboxMismatch { step: 0, .. }) => {}
            other => panic!("expected bbox mismatch at step 0, got {other:?}"),
        }
    }

    #[test]
    fn unresolvable_name_is_reported() {
        let (g, outcome) = planned(206, (2, 3), 0.0);
        let mut splan = parse(&outcome.plan).unwrap();
        if let SymbolicCommand::Grasp { object_name, .. } = &mut splan.commands[0] {
            *object_name = "phantom_thing".into();
        }
        assert!(matches!(
            replay(&g.scene, &splan),
            Err(ReplayError::Unresolvable { step: 0, .. })
        ));
    }

    #[test]
    fn text_format_matches_template() {
        let splan = SymbolicPlan {
            commands: vec![
                SymbolicCommand::Grasp {
                    class: "can".into(),
                    object_name: "black_can".into(),
                    image_ref: 1,
                    bbox: BBox::new(364, 257, 96, 96),
                },
                SymbolicCommand::Rotate { object_name: "black_can".into(), angle_deg: 60 },
                SymbolicCommand::PlaceAt {
                    class: "compartment".into(),
                    region_name: "compartment_4".into(),
                    image_ref: 1,
                    bbox: BBox::new(100, 80, 40, 44),
                },
            ],
            image_count: 2,
            bindings: Vec::new(),
        };
        let text = to_text(&splan);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "pick an object with label can at (412,305), diameter 96 px");
        assert_eq!(lines[1], "rotate black_can by 60 degrees");
        assert_eq!(lines[2], "place it on compartment at (120,102), diameter 44 px");
    }

    #[test]
    fn listing_round_trips() {
        let (_, outcome) = planned(207, (3, 4), 0.0);
        let splan = parse(&outcome.plan).unwrap();
        let text = to_listing(&splan);
        let parsed = from_listing(&text).unwrap();
        assert_eq!(parsed, splan);
        assert!(text.contains("Plan:"));
        assert!(text.contains("Grasp(\""));
    }
}
