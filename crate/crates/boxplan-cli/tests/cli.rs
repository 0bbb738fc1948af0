//! End-to-end checks of the command-line interface: exit codes, output
//! layout and determinism of repeated runs.

use std::path::Path;
use std::process::Command;

fn boxplan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boxplan"))
}

fn write_gen_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("gen.toml");
    std::fs::write(
        &path,
        r#"
n_scenes = 2

[gen]
seed = 9
width = 224
height = 176
object_count = [2, 3]
"#,
    )
    .unwrap();
    path
}

fn dir_fingerprint(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            if e.path().is_dir() {
                stack.push(e.path());
            } else {
                let rel = e.path().strip_prefix(dir).unwrap().display().to_string();
                entries.push((rel, std::fs::read(e.path()).unwrap()));
            }
        }
    }
    entries.sort();
    entries
}

#[test]
fn generate_then_plan_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_gen_config(tmp.path());
    let data = tmp.path().join("data");
    let status = boxplan()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(data.join("scene_000/scene.toml").exists());
    assert!(data.join("dataset.toml").exists());

    for out in ["p1", "p2"] {
        let status = boxplan()
            .args(["plan", "--seed", "7", "--scene"])
            .arg(data.join("scene_000"))
            .arg("--out")
            .arg(tmp.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        dir_fingerprint(&tmp.path().join("p1")),
        dir_fingerprint(&tmp.path().join("p2")),
        "identical seeds must give identical outputs"
    );
    assert!(tmp.path().join("p1/plan_strip.png").exists());
    assert!(tmp.path().join("p1/plan_symbolic.txt").exists());
}

#[test]
fn packed_scene_prints_nothing_to_do() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("gen.toml");
    std::fs::write(
        &cfg_path,
        r#"
n_scenes = 1

[gen]
seed = 4
width = 224
height = 176
object_count = [2, 2]
initial_in_box = [2, 2]
"#,
    )
    .unwrap();
    let data = tmp.path().join("data");
    assert!(boxplan()
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let output = boxplan()
        .args(["plan", "--scene"])
        .arg(data.join("scene_000"))
        .arg("--out")
        .arg(tmp.path().join("plan"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("nothing needs to be done"), "stdout: {stdout}");
}

#[test]
fn tree_dump_has_nodes_and_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_gen_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(boxplan()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let out = tmp.path().join("tree");
    assert!(boxplan()
        .args(["tree", "--scene"])
        .arg(data.join("scene_001"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(out.join("node_0.png").exists());
    let text = std::fs::read_to_string(out.join("tree.txt")).unwrap();
    assert!(text.lines().next().unwrap().contains("node 0"));
}

#[test]
fn usage_errors_exit_2_and_domain_errors_exit_1() {
    let status = boxplan().args(["plan", "--bogus-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // Unknown scene path: domain error.
    let tmp = tempfile::tempdir().unwrap();
    let status = boxplan()
        .args(["plan", "--scene"])
        .arg(tmp.path().join("missing"))
        .arg("--out")
        .arg(tmp.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn evaluate_writes_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        r#"
repetitions = 1
master_seed = 11

[dataset]
n_scenes = 3
strata = [[1, 2], [2, 1]]

[dataset.gen]
seed = 0
width = 224
height = 176

[[methods]]
name = "greedy"
kind = { greedy = { completion = true } }

[[methods]]
name = "baseline"
kind = "baseline"

[[levels]]
name = "oracle"

[levels.cfg]
rng_seed = 0
"#,
    )
    .unwrap();
    let out = tmp.path().join("report");
    let output = boxplan()
        .args(["evaluate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("success by plan length"));
    assert!(report.contains("success by step index"));
    assert!(out.join("report.csv").exists());
    assert!(out.join("trends.txt").exists());
}

#[test]
fn ipm_merges_views() {
    use boxplan::ipm::{render_plane_view, CameraModel, TopViewSpec};
    use boxplan::manifest::save_rgb_png;
    use boxplan::Rgb;

    let tmp = tempfile::tempdir().unwrap();
    let spec = TopViewSpec { meters_per_pixel: 0.002, width: 160, height: 128 };
    let mut plane = Rgb::new(160, 128, [0, 0, 0]);
    for y in 0..128 {
        for x in 0..160 {
            let on = ((x / 16) + (y / 16)) % 2 == 0;
            plane.set(x, y, if on { [220, 220, 220] } else { [30, 30, 30] });
        }
    }
    let cams = [
        CameraModel::look_at([0.3, 0.0, 0.5], [0.0, 0.0, 0.0], 360.0, 360.0, 256, 192),
        CameraModel::look_at([-0.3, 0.0, 0.5], [0.0, 0.0, 0.0], 360.0, 360.0, 256, 192),
    ];
    let mut cal = String::from("[topview]\nmeters_per_pixel = 0.002\nwidth = 160\nheight = 128\n");
    for (i, cam) in cams.iter().enumerate() {
        let view = render_plane_view(&plane, &spec, cam).unwrap();
        save_rgb_png(&view, &tmp.path().join(format!("cam{i}.png"))).unwrap();
        cal.push_str(&format!(
            "\n[[camera]]\nimage = \"cam{i}.png\"\nfx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\nrotation = [[{}, {}, {}], [{}, {}, {}], [{}, {}, {}]]\ntranslation = [{}, {}, {}]\n",
            cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
            cam.rotation[0][0], cam.rotation[0][1], cam.rotation[0][2],
            cam.rotation[1][0], cam.rotation[1][1], cam.rotation[1][2],
            cam.rotation[2][0], cam.rotation[2][1], cam.rotation[2][2],
            cam.translation[0], cam.translation[1], cam.translation[2],
        ));
    }
    let cal_path = tmp.path().join("calibration.toml");
    std::fs::write(&cal_path, cal).unwrap();
    let out = tmp.path().join("ipm");
    let output = boxplan()
        .args(["ipm", "--calibration"])
        .arg(&cal_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("topview.png").exists());
    assert!(out.join("coverage.png").exists());
}
