//! Browser demo bindings: generate a scene, watch the planner imagine its
//! way to a packed box, and explore the inverse-perspective-mapping view
//! synthesis — all running client-side.
//!
//! Everything here is a thin shuttling layer over the `boxplan` crate so the
//! logic is fully exercised by native tests; wasm-bindgen only marshals
//! frames (RGBA byte buffers) and strings across the boundary.

use boxplan::imagination::render;
use boxplan::ipm::{remap_and_merge, render_plane_view, CameraModel, TopViewSpec};
use boxplan::perception::{complete_objects, corrupt, perceive_oracle, CorruptionConfig};
use boxplan::planner::{plan, PlannerConfig};
use boxplan::scenegen::{generate_scene, GenConfig};
use boxplan::symbolic;
use boxplan::viz::{overlay_affordances, plan_strip};
use boxplan::Rgb;
use wasm_bindgen::prelude::*;

const DEMO_WIDTH: u32 = 320;
const DEMO_HEIGHT: u32 = 240;

/// One RGBA image ready for `ImageData`.
#[wasm_bindgen]
pub struct Frame {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// RGBA bytes, row-major.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

fn to_frame(image: &Rgb) -> Frame {
    let mut rgba = Vec::with_capacity((image.width() * image.height() * 4) as usize);
    for chunk in image.raw().chunks_exact(3) {
        rgba.extend_from_slice(chunk);
        rgba.push(255);
    }
    Frame { width: image.width(), height: image.height(), rgba }
}

fn demo_config(seed: u32, objects: u32, stacks: bool) -> GenConfig {
    let objects = objects.clamp(0, 6);
    GenConfig {
        seed: seed as u64,
        width: DEMO_WIDTH,
        height: DEMO_HEIGHT,
        object_count: (objects, objects),
        compartment_count: (objects.max(3), (objects + 2).max(4)),
        stack_prob: if stacks { 0.6 } else { 0.0 },
        rotation_demand: 0.25,
        flip_demand: 0.15,
        ..GenConfig::default()
    }
}

fn build_scene(seed: u32, objects: u32, stacks: bool) -> Result<boxplan::Scene, String> {
    Ok(generate_scene(&demo_config(seed, objects, stacks))
        .map_err(|e| e.to_string())?
        .scene)
}

/// Generate a scene and return its composited image, optionally with the
/// affordance channels blended on top.
#[wasm_bindgen]
pub fn scene_frame(
    seed: u32,
    objects: u32,
    stacks: bool,
    show_affordances: bool,
) -> Result<Frame, JsError> {
    let scene = build_scene(seed, objects, stacks).map_err(|e| JsError::new(&e))?;
    let (image, map) = render(&scene).map_err(|e| JsError::new(&e.to_string()))?;
    let shown = if show_affordances { overlay_affordances(&image, &map, 0.45) } else { image };
    Ok(to_frame(&shown))
}

/// A finished planning run: per-step frames, captions, and the symbolic
/// plan in both function-call and natural-language form.
#[wasm_bindgen]
pub struct PlanDemo {
    frames: Vec<Frame>,
    captions: Vec<String>,
    symbolic: String,
    listing: String,
    complete: bool,
    strip: Frame,
}

#[wasm_bindgen]
impl PlanDemo {
    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, index: usize) -> Option<Frame> {
        self.frames
            .get(index)
            .map(|f| Frame { width: f.width, height: f.height, rgba: f.rgba.clone() })
    }

    pub fn caption(&self, index: usize) -> String {
        self.captions.get(index).cloned().unwrap_or_default()
    }

    #[wasm_bindgen(getter)]
    pub fn symbolic(&self) -> String {
        self.symbolic.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn listing(&self) -> String {
        self.listing.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn complete(&self) -> bool {
        self.complete
    }

    pub fn strip(&self) -> Frame {
        Frame { width: self.strip.width, height: self.strip.height, rgba: self.strip.rgba.clone() }
    }
}

/// Plan a generated scene. `corruption` (0..=100) jitters the perceived
/// masks and affordances; `completion` toggles dictionary-based object
/// completion.
#[wasm_bindgen]
pub fn plan_demo(
    seed: u32,
    objects: u32,
    stacks: bool,
    corruption: u32,
    completion: bool,
) -> Result<PlanDemo, JsError> {
    let scene = build_scene(seed, objects, stacks).map_err(|e| JsError::new(&e))?;
    let corruption_cfg = CorruptionConfig {
        boundary_jitter: corruption as f64 / 100.0,
        affordance_jitter: corruption as f64 / 50.0,
        rng_seed: boxplan::derive_seed(seed as u64, 0xDE),
        ..CorruptionConfig::default()
    };
    let outcome = plan(
        &scene,
        |s| {
            let report = perceive_oracle(s)?;
            let corrupted = corrupt(&report, &corruption_cfg)?;
            Ok(complete_objects(&corrupted, completion, &corrupted.dictionary.clone()))
        },
        &PlannerConfig { rng_seed: seed as u64, ..PlannerConfig::default() },
    )
    .map_err(|e| JsError::new(&e.to_string()))?;

    let mut frames = Vec::new();
    let mut captions = Vec::new();
    for (k, s) in outcome.plan.scenes.iter().enumerate() {
        let (image, _) = render(s).map_err(|e| JsError::new(&e.to_string()))?;
        frames.push(to_frame(&image));
        if k == 0 {
            captions.push("initial scene (as perceived)".to_string());
        } else {
            let step = &outcome.plan.steps[k - 1];
            captions.push(format!(
                "step {k}: {} -> {} (conflict {}/{})",
                step.object_name,
                step.region_name,
                step.validation.conflict_pixels,
                step.validation.threshold
            ));
        }
    }
    let (symbolic, listing) = match symbolic::parse(&outcome.plan) {
        Ok(splan) => (symbolic::to_listing(&splan), symbolic::to_text(&splan)),
        Err(e) => (format!("unavailable: {e}"), String::new()),
    };
    let strip = plan_strip(&outcome.plan).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(PlanDemo {
        frames,
        captions,
        symbolic,
        listing,
        complete: outcome.plan.complete,
        strip: to_frame(&strip),
    })
}

/// IPM demo: render the generated scene as the ground plane seen by tilted
/// cameras, then merge the views back into the canonical top view.
#[wasm_bindgen]
pub struct IpmDemo {
    camera_view: Frame,
    merged: Frame,
    coverage_pct: f64,
}

#[wasm_bindgen]
impl IpmDemo {
    pub fn camera_view(&self) -> Frame {
        Frame {
            width: self.camera_view.width,
            height: self.camera_view.height,
            rgba: self.camera_view.rgba.clone(),
        }
    }

    pub fn merged(&self) -> Frame {
        Frame { width: self.merged.width, height: self.merged.height, rgba: self.merged.rgba.clone() }
    }

    #[wasm_bindgen(getter)]
    pub fn coverage_pct(&self) -> f64 {
        self.coverage_pct
    }
}

#[wasm_bindgen]
pub fn ipm_demo(seed: u32, objects: u32, tilt_deg: u32, cameras: u32) -> Result<IpmDemo, JsError> {
    let scene = build_scene(seed, objects, false).map_err(|e| JsError::new(&e))?;
    let (plane, _) = render(&scene).map_err(|e| JsError::new(&e.to_string()))?;
    let spec = TopViewSpec { meters_per_pixel: 0.002, width: DEMO_WIDTH, height: DEMO_HEIGHT };
    let tilt = (tilt_deg.clamp(10, 80) as f64).to_radians();
    let radius = 0.55;
    let height = radius * tilt.tan();
    let n = cameras.clamp(1, 6);
    let mut views = Vec::new();
    for k in 0..n {
        let phi = k as f64 / n as f64 * std::f64::consts::TAU;
        let cam = CameraModel::look_at(
            [radius * phi.cos(), radius * phi.sin(), height],
            [0.0, 0.0, 0.0],
            330.0,
            330.0,
            320,
            240,
        );
        let view = render_plane_view(&plane, &spec, &cam).map_err(|e| JsError::new(&e.to_string()))?;
        views.push((view, cam));
    }
    let camera_view = to_frame(&views[0].0);
    let (merged, coverage) =
        remap_and_merge(&views, &spec).map_err(|e| JsError::new(&e.to_string()))?;
    let coverage_pct =
        100.0 * coverage.count() as f64 / (spec.width as f64 * spec.height as f64);
    Ok(IpmDemo { camera_view, merged: to_frame(&merged), coverage_pct })
}
