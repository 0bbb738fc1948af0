//! Drawing helpers for plan visualization: panel strips of the imagined
//! scenes with the manipulated object circled and the placement target
//! marked, plus an affordance overlay used by the interactive demo.

use crate::planner::Plan;
use crate::raster::Rgb;
use crate::scene::{Affordance, AffordanceMap, Scene, SceneError};

pub const CIRCLE_COLOR: [u8; 3] = [220, 30, 30];
pub const MARKER_COLOR: [u8; 3] = [30, 200, 60];

fn put(img: &mut Rgb, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.set(x as u32, y as u32, color);
    }
}

/// Circle outline via the midpoint algorithm, thickened inward.
pub fn draw_circle(img: &mut Rgb, cx: i32, cy: i32, radius: u32, color: [u8; 3], thickness: u32) {
    for t in 0..thickness {
        let r = radius.saturating_sub(t) as i64;
        if r == 0 {
            break;
        }
        let mut x = r;
        let mut y = 0i64;
        let mut err = 1 - r;
        while x >= y {
            for (dx, dy) in [
                (x, y),
                (y, x),
                (-y, x),
                (-x, y),
                (-x, -y),
                (-y, -x),
                (y, -x),
                (x, -y),
            ] {
                put(img, cx as i64 + dx, cy as i64 + dy, color);
            }
            y += 1;
            if err < 0 {
                err += 2 * y + 1;
            } else {
                x -= 1;
                err += 2 * (y - x) + 1;
            }
        }
    }
}

/// Downward-pointing marker (the "placed here" pointer).
pub fn draw_marker(img: &mut Rgb, cx: i32, cy: i32, size: u32, color: [u8; 3]) {
    let s = size as i64;
    for dy in 0..s {
        let half = (s - dy) / 2;
        for dx in -half..=half {
            put(img, cx as i64 + dx, cy as i64 - dy - 2, color);
        }
    }
}

/// Horizontal concatenation with a separator gutter.
pub fn hstack(panels: &[Rgb], gutter: u32, background: [u8; 3]) -> Rgb {
    assert!(!panels.is_empty());
    let h = panels.iter().map(Rgb::height).max().unwrap();
    let w: u32 =
        panels.iter().map(Rgb::width).sum::<u32>() + gutter * (panels.len() as u32 - 1);
    let mut out = Rgb::new(w, h, background);
    let mut x0 = 0u32;
    for p in panels {
        for y in 0..p.height() {
            for x in 0..p.width() {
                out.set(x0 + x, y, p.get(x, y));
            }
        }
        x0 += p.width() + gutter;
    }
    out
}

/// Render a plan as a horizontal strip: the first panel is the initial
/// scene, each following panel one imagined step. The manipulated object is
/// circled in the panel where it is about to move; the next panel marks
/// where it landed.
pub fn plan_strip(plan: &Plan) -> Result<Rgb, SceneError> {
    let mut panels = Vec::new();
    for (k, scene) in plan.scenes.iter().enumerate() {
        let comp = scene.composite()?;
        let mut panel = comp.image;
        if k < plan.steps.len() {
            let step = &plan.steps[k];
            if let Ok(obj) = scene.object(step.object) {
                let bbox = obj.bbox();
                let (cx, cy) = bbox.center();
                draw_circle(&mut panel, cx, cy, bbox.max_side() / 2 + 4, CIRCLE_COLOR, 2);
            }
        }
        if k > 0 {
            let step = &plan.steps[k - 1];
            draw_marker(&mut panel, step.target.0 as i32, step.target.1 as i32, 9, MARKER_COLOR);
        }
        panels.push(panel);
    }
    Ok(hstack(&panels, 4, [255, 255, 255]))
}

/// Blend affordance channels over an image: grasp green, place-on blue,
/// obstruct red, hole yellow.
pub fn overlay_affordances(image: &Rgb, map: &AffordanceMap, alpha: f64) -> Rgb {
    let colors: [(Affordance, [u8; 3]); 4] = [
        (Affordance::PlaceOn, [60, 90, 220]),
        (Affordance::Hole, [230, 210, 40]),
        (Affordance::Grasp, [40, 200, 70]),
        (Affordance::Obstruct, [230, 40, 40]),
    ];
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            for (aff, tint) in &colors {
                if map.get(*aff, x, y) {
                    let base = out.get(x, y);
                    let mut px = [0u8; 3];
                    for c in 0..3 {
                        px[c] = (base[c] as f64 * (1.0 - alpha) + tint[c] as f64 * alpha)
                            .round() as u8;
                    }
                    out.set(x, y, px);
                }
            }
        }
    }
    out
}

/// Render a scene to its composited image.
pub fn render_scene(scene: &Scene) -> Result<Rgb, SceneError> {
    Ok(scene.composite()?.image)
}
