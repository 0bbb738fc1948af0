//! Scene manifests on disk: a `scene.toml` key/value tree naming class,
//! name, pose, position, z and parent per object, next to PNG rasters
//! (binary masks as 8-bit {0,255}, appearance as RGB8). The loader rebuilds
//! the displayed patch from the canonical rasters and the stored rotation,
//! so a round-trip reproduces the scene bit-exactly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagination::derive_patch;
use crate::raster::{Mask, Rgb};
use crate::scene::{
    Affordance, ClassLabel, Compartment, ObjectId, ObjectInstance, PatchSet, Pose,
    PoseDictionary, Scene, SceneError,
};
use crate::scenegen::CertEntry;

pub const SCENE_FILE: &str = "scene.toml";
pub const CERTIFICATE_FILE: &str = "certificate.toml";
pub const DATASET_FILE: &str = "dataset.toml";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png error on {path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<(), ManifestError> {
    let mut img = image::GrayImage::new(mask.width(), mask.height());
    for (x, y) in mask.iter_set() {
        img.put_pixel(x, y, image::Luma([255]));
    }
    img.save(path).map_err(|source| ManifestError::Png { path: path.to_path_buf(), source })
}

pub fn load_mask_png(path: &Path) -> Result<Mask, ManifestError> {
    let img = image::open(path)
        .map_err(|source| ManifestError::Png { path: path.to_path_buf(), source })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y)[0] > 127))
}

pub fn save_rgb_png(rgb: &Rgb, path: &Path) -> Result<(), ManifestError> {
    let img = image::RgbImage::from_raw(rgb.width(), rgb.height(), rgb.raw().to_vec())
        .expect("raster buffer matches dimensions");
    img.save(path).map_err(|source| ManifestError::Png { path: path.to_path_buf(), source })
}

pub fn load_rgb_png(path: &Path) -> Result<Rgb, ManifestError> {
    let img = image::open(path)
        .map_err(|source| ManifestError::Png { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Rgb::from_raw(w, h, img.into_raw()))
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    scene: SceneHeader,
    #[serde(default)]
    compartment: Vec<CompartmentDoc>,
    #[serde(default)]
    object: Vec<ObjectDoc>,
    #[serde(default)]
    dictionary: Vec<DictDoc>,
}

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    width: u32,
    height: u32,
    background: String,
    box_region: String,
    background_affordances: AffordancePaths,
}

#[derive(Serialize, Deserialize, Default)]
struct AffordancePaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    grasp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    place_on: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    obstruct: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hole: Option<String>,
}

impl AffordancePaths {
    fn get(&self, a: Affordance) -> Option<&String> {
        match a {
            Affordance::Grasp => self.grasp.as_ref(),
            Affordance::PlaceOn => self.place_on.as_ref(),
            Affordance::Obstruct => self.obstruct.as_ref(),
            Affordance::Hole => self.hole.as_ref(),
        }
    }

    fn set(&mut self, a: Affordance, path: String) {
        match a {
            Affordance::Grasp => self.grasp = Some(path),
            Affordance::PlaceOn => self.place_on = Some(path),
            Affordance::Obstruct => self.obstruct = Some(path),
            Affordance::Hole => self.hole = Some(path),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CompartmentDoc {
    name: String,
    origin: [i32; 2],
    region: String,
}

#[derive(Serialize, Deserialize)]
struct ObjectDoc {
    id: u32,
    name: String,
    class: ClassLabel,
    pose: Pose,
    rotation: u16,
    origin: [i32; 2],
    z: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tint: Option<[u8; 3]>,
    mask: String,
    appearance: String,
    affordances: AffordancePaths,
}

#[derive(Serialize, Deserialize)]
struct DictDoc {
    class: ClassLabel,
    pose: Pose,
    mask: String,
    appearance: String,
    affordances: AffordancePaths,
}

fn save_patch(
    dir: &Path,
    stem: &str,
    patch: &PatchSet,
) -> Result<(String, String, AffordancePaths), ManifestError> {
    let mask_name = format!("{stem}_mask.png");
    let app_name = format!("{stem}_rgb.png");
    save_mask_png(&patch.mask, &dir.join(&mask_name))?;
    save_rgb_png(&patch.appearance, &dir.join(&app_name))?;
    let mut affordances = AffordancePaths::default();
    for a in Affordance::ALL {
        let ch = patch.affordance(a);
        if !ch.is_empty() {
            let name = format!("{stem}_{}.png", a.name());
            save_mask_png(ch, &dir.join(&name))?;
            affordances.set(a, name);
        }
    }
    Ok((mask_name, app_name, affordances))
}

fn load_patch(
    dir: &Path,
    mask: &str,
    appearance: &str,
    affordances: &AffordancePaths,
) -> Result<PatchSet, ManifestError> {
    let mask = load_mask_png(&dir.join(mask))?;
    let app = load_rgb_png(&dir.join(appearance))?;
    let (w, h) = (mask.width(), mask.height());
    let mut channels = [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
    for a in Affordance::ALL {
        if let Some(path) = affordances.get(a) {
            channels[a.channel()] = load_mask_png(&dir.join(path))?;
        }
    }
    Ok(PatchSet::new(mask, app, channels)?)
}

/// Write a scene (manifest plus rasters) into `dir`, creating it if needed.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<(), ManifestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_rgb_png(&scene.background, &dir.join("background.png"))?;
    save_mask_png(&scene.box_region, &dir.join("box_region.png"))?;
    let mut bg_aff = AffordancePaths::default();
    for a in Affordance::ALL {
        let ch = &scene.background_affordances[a.channel()];
        if !ch.is_empty() {
            let name = format!("bg_{}.png", a.name());
            save_mask_png(ch, &dir.join(&name))?;
            bg_aff.set(a, name);
        }
    }
    let mut compartments = Vec::new();
    for c in scene.compartments.iter() {
        let name = format!("{}.png", c.name);
        save_mask_png(&c.region, &dir.join(&name))?;
        compartments.push(CompartmentDoc {
            name: c.name.clone(),
            origin: [c.origin.0, c.origin.1],
            region: name,
        });
    }
    let mut objects = Vec::new();
    for o in &scene.objects {
        let (mask, appearance, affordances) =
            save_patch(dir, &format!("obj_{}", o.id.0), &o.canonical)?;
        objects.push(ObjectDoc {
            id: o.id.0,
            name: o.name.clone(),
            class: o.class,
            pose: o.pose,
            rotation: o.rotation,
            origin: [o.origin.0, o.origin.1],
            z: o.z,
            parent: o.parent.map(|p| p.0),
            tint: o.tint,
            mask,
            appearance,
            affordances,
        });
    }
    let mut dictionary = Vec::new();
    for ((class, pose), patch) in scene.dictionary.iter() {
        let stem = format!("dict_{}_{}", class.label(), pose.name());
        let (mask, appearance, affordances) = save_patch(dir, &stem, patch)?;
        dictionary.push(DictDoc { class: *class, pose: *pose, mask, appearance, affordances });
    }
    let doc = SceneDoc {
        scene: SceneHeader {
            width: scene.width,
            height: scene.height,
            background: "background.png".into(),
            box_region: "box_region.png".into(),
            background_affordances: bg_aff,
        },
        compartment: compartments,
        object: objects,
        dictionary,
    };
    let text = toml::to_string(&doc).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let path = dir.join(SCENE_FILE);
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

/// Load a scene from a directory containing `scene.toml`, or from the
/// manifest file itself.
pub fn load_scene(path: &Path) -> Result<Scene, ManifestError> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(SCENE_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    let doc: SceneDoc = toml::from_str(&text).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let background = load_rgb_png(&dir.join(&doc.scene.background))?;
    let box_region = load_mask_png(&dir.join(&doc.scene.box_region))?;
    let (w, h) = (doc.scene.width, doc.scene.height);
    let mut background_affordances = [Mask::new(w, h), Mask::new(w, h), Mask::new(w, h), Mask::new(w, h)];
    for a in Affordance::ALL {
        if let Some(p) = doc.scene.background_affordances.get(a) {
            background_affordances[a.channel()] = load_mask_png(&dir.join(p))?;
        }
    }
    let mut compartments = Vec::new();
    for c in &doc.compartment {
        compartments.push(Compartment {
            name: c.name.clone(),
            region: load_mask_png(&dir.join(&c.region))?,
            origin: (c.origin[0], c.origin[1]),
        });
    }
    let mut dictionary = PoseDictionary::new();
    for d in &doc.dictionary {
        let patch = load_patch(&dir, &d.mask, &d.appearance, &d.affordances)?;
        dictionary.insert(d.class, d.pose, Arc::new(patch));
    }
    let mut objects = Vec::new();
    for o in &doc.object {
        let canonical = Arc::new(load_patch(&dir, &o.mask, &o.appearance, &o.affordances)?);
        let patch = derive_patch(&canonical, o.rotation);
        objects.push(ObjectInstance {
            id: ObjectId(o.id),
            name: o.name.clone(),
            class: o.class,
            pose: o.pose,
            canonical,
            rotation: o.rotation,
            patch,
            origin: (o.origin[0], o.origin[1]),
            z: o.z,
            parent: o.parent.map(ObjectId),
            tint: o.tint,
        });
    }
    let scene = Scene {
        width: w,
        height: h,
        background: Arc::new(background),
        background_affordances: Arc::new(background_affordances),
        box_region: Arc::new(box_region),
        compartments: Arc::new(compartments),
        objects,
        dictionary: Arc::new(dictionary),
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Serialize, Deserialize)]
struct CertificateDoc {
    entry: Vec<CertDoc>,
}

#[derive(Serialize, Deserialize)]
struct CertDoc {
    object: u32,
    compartment: String,
    rotation: u16,
    flip: bool,
}

pub fn save_certificate(cert: &[CertEntry], path: &Path) -> Result<(), ManifestError> {
    let doc = CertificateDoc {
        entry: cert
            .iter()
            .map(|c| CertDoc {
                object: c.object.0,
                compartment: c.compartment.clone(),
                rotation: c.rotation,
                flip: c.flip,
            })
            .collect(),
    };
    let text = toml::to_string(&doc).map_err(|e| ManifestError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_certificate(path: &Path) -> Result<Vec<CertEntry>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: CertificateDoc =
        toml::from_str(&text).map_err(|e| ManifestError::Parse(e.to_string()))?;
    Ok(doc
        .entry
        .into_iter()
        .map(|c| CertEntry {
            object: ObjectId(c.object),
            compartment: c.compartment,
            rotation: c.rotation,
            flip: c.flip,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    width: u32,
    height: u32,
    detection: Vec<DetectionDoc>,
}

#[derive(Serialize, Deserialize)]
struct DetectionDoc {
    name: String,
    class: ClassLabel,
    pose: Pose,
    confidence: f64,
    bbox: [i32; 4],
    completed: bool,
    mask: String,
    appearance: String,
}

/// Dump a perception report for debugging: a `report.toml` plus per-detection
/// mask and appearance PNGs.
pub fn save_report(
    report: &crate::perception::PerceptionReport,
    dir: &Path,
) -> Result<(), ManifestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut detections = Vec::new();
    for (k, det) in report.detections.iter().enumerate() {
        let mask = format!("det_{k}_mask.png");
        let appearance = format!("det_{k}_rgb.png");
        save_mask_png(&det.mask, &dir.join(&mask))?;
        save_rgb_png(&det.appearance, &dir.join(&appearance))?;
        detections.push(DetectionDoc {
            name: det.name.clone(),
            class: det.class,
            pose: det.pose,
            confidence: det.confidence,
            bbox: [det.bbox.x, det.bbox.y, det.bbox.w as i32, det.bbox.h as i32],
            completed: det.completed,
            mask,
            appearance,
        });
    }
    let doc = ReportDoc { width: report.width, height: report.height, detection: detections };
    let text = toml::to_string(&doc).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let path = dir.join("report.toml");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    for a in Affordance::ALL {
        let ch = report.affordance_map.channel(a);
        if !ch.is_empty() {
            save_mask_png(ch, &dir.join(format!("map_{}.png", a.name())))?;
        }
    }
    Ok(())
}

/// Index of a generated dataset: per-scene directories with their seeds.
#[derive(Serialize, Deserialize)]
pub struct DatasetIndex {
    pub master_seed: u64,
    pub scenes: Vec<DatasetEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dir: String,
    pub seed: u64,
    /// Number of roots initially outside the box (the minimal plan length).
    pub steps: u32,
}

pub fn save_dataset_index(index: &DatasetIndex, dir: &Path) -> Result<(), ManifestError> {
    let text = toml::to_string(index).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let path = dir.join(DATASET_FILE);
    std::fs::write(&path, text).map_err(io_err(&path))
}

pub fn load_dataset_index(dir: &Path) -> Result<DatasetIndex, ManifestError> {
    let path = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    toml::from_str(&text).map_err(|e| ManifestError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, GenConfig};

    #[test]
    fn scene_roundtrip_is_bit_exact() {
        let cfg = GenConfig {
            seed: 99,
            width: 192,
            height: 160,
            object_count: (2, 3),
            stack_prob: 1.0,
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&g.scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();

        assert_eq!(loaded.objects.len(), g.scene.objects.len());
        let a = g.scene.composite().unwrap();
        let b = loaded.composite().unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.affordances, b.affordances);
        for (x, y) in [(0u32, 0u32), (100, 100), (191, 159)] {
            assert_eq!(a.owner(x, y), b.owner(x, y));
        }
        assert_eq!(loaded.outside_box(), g.scene.outside_box());
    }

    #[test]
    fn certificate_roundtrip() {
        let cert = vec![CertEntry {
            object: ObjectId(3),
            compartment: "compartment_2".into(),
            rotation: 90,
            flip: false,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CERTIFICATE_FILE);
        save_certificate(&cert, &path).unwrap();
        assert_eq!(load_certificate(&path).unwrap(), cert);
    }

    #[test]
    fn report_dump_writes_detections() {
        let cfg = GenConfig {
            seed: 13,
            width: 192,
            height: 160,
            object_count: (2, 2),
            ..GenConfig::default()
        };
        let g = generate_scene(&cfg).unwrap();
        let report = crate::perception::perceive_oracle(&g.scene).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_report(&report, dir.path()).unwrap();
        assert!(dir.path().join("report.toml").exists());
        assert!(dir.path().join("det_0_mask.png").exists());
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_scene(&dir.path().join("nope")),
            Err(ManifestError::Io { .. })
        ));
    }
}
