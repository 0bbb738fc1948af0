//! Experiment harness: run planners over generated datasets and produce
//! success-by-plan-length and success-by-step tables, baseline comparison,
//! completion ablation, perception-quality correlation and a failure
//! taxonomy.
//!
//! Scoring replays every plan step onto the ground-truth scene: a step
//! succeeds iff the grasped entity matches a ground-truth object (class and
//! mask overlap) and the re-validated action passes on ground truth. A plan
//! succeeds iff it claimed completion, every step succeeded and the goal
//! holds in the final ground-truth scene. Plans that give up although an
//! exhaustive oracle can finish count one search-caused failure.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagination::{apply_unchecked, grasp_available, target_placeable, Action};
use crate::perception::{
    complete_objects, corrupt, perceive_oracle, perception_quality, CorruptionConfig,
    PerceptionError, Quality,
};
use crate::planner::{
    baseline_plan, plan, Plan, PlanError, PlanMode, PlannerConfig,
};
use crate::scene::{ObjectId, Scene, SceneError};
use crate::scenegen::{dataset_scenes, DatasetSpec, GenError, Generated};
use crate::validation::{goal_reached, scaled_threshold, validate, ValidationError};

/// Mask-overlap threshold for matching a plan entity to a ground-truth
/// object. Chosen so split halves (IoU about 0.5) fail and jittered but
/// correct detections pass.
pub const ENTITY_MATCH_IOU: f64 = 0.55;

/// Plan-length and step-index tables run from 0 (length) / 1 (step) up to
/// this bucket; longer values are clamped into the last bucket.
pub const MAX_BUCKET: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Greedy planner over perceived scenes, with or without completion.
    Greedy { completion: bool },
    /// Random placements without validity gating.
    Baseline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorruptionLevel {
    pub name: String,
    pub cfg: CorruptionConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<MethodSpec>,
    pub levels: Vec<CorruptionLevel>,
    pub repetitions: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Worker threads; 0 picks the available parallelism.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    /// Entity mismatch against ground truth (wrong or phantom detection).
    pub detection: u32,
    /// Entities matched but the action fails validation on ground truth.
    pub affordance: u32,
    /// Plans abandoned although exhaustive search over the same perceived
    /// input finds a packing: the greedy search itself fell short.
    pub search: u32,
}

impl FailureCounts {
    pub fn total(&self) -> u32 {
        self.detection + self.affordance + self.search
    }
}

/// What a prematurely abandoned plan is blamed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GiveUpCause {
    /// Exhaustive search over the same perceived input finds a packing: the
    /// greedy search itself fell short.
    Search,
    /// Even exhaustive search cannot pack the perceived scene although the
    /// ground truth is packable, and the detections were faithful: the
    /// affordance map blocked every action.
    Affordance,
    /// As above, but the detections themselves were wrong (missed, split or
    /// misclassified objects).
    Detection,
}

/// Score of one executed plan against ground truth.
#[derive(Clone, Debug)]
pub struct PlanScore {
    pub claimed_len: usize,
    pub claimed_complete: bool,
    /// (entity_ok, validity_ok) per step.
    pub steps: Vec<(bool, bool)>,
    pub plan_success: bool,
    pub give_up: Option<GiveUpCause>,
    /// Baseline on a fully packed scene: reported as not applicable.
    pub not_applicable: bool,
}

/// Per (method, level) result: raw per-repetition matrices so the report can
/// compute means and standard deviations in the published table shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodLevelResult {
    pub method: String,
    pub level: String,
    /// [repetition][plan-length bucket]
    pub cases: Vec<Vec<u32>>,
    pub plan_successes: Vec<Vec<u32>>,
    /// [repetition][step index - 1]
    pub step_attempts: Vec<Vec<u32>>,
    pub step_successes: Vec<Vec<u32>>,
    pub failures: FailureCounts,
    /// Plans abandoned before completion that were classified into the
    /// failure taxonomy (one synthetic failed step each).
    pub give_ups: u32,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct QualityMean {
    pub affordance_miou: f64,
    pub instance_miou: f64,
    pub detection_score: f64,
    pub samples: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub results: Vec<MethodLevelResult>,
    pub quality: Vec<(String, QualityMean)>,
    pub repetitions: u32,
    pub n_scenes: u32,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

impl MethodLevelResult {
    /// Overall success rate for one repetition, in percent.
    pub fn total_rate(&self, rep: usize) -> Option<f64> {
        let cases: u32 = self.cases[rep].iter().sum();
        let wins: u32 = self.plan_successes[rep].iter().sum();
        (cases > 0).then(|| 100.0 * wins as f64 / cases as f64)
    }

    /// Mean (SD) of the overall success rate across repetitions.
    pub fn total_rate_stats(&self) -> (f64, f64) {
        let rates: Vec<f64> = (0..self.cases.len()).filter_map(|r| self.total_rate(r)).collect();
        mean_sd(&rates)
    }

    /// Total success restricted to plans needing at least one step.
    pub fn total_rate_nonzero_steps(&self) -> (f64, f64) {
        let rates: Vec<f64> = (0..self.cases.len())
            .filter_map(|r| {
                let cases: u32 = self.cases[r].iter().skip(1).sum();
                let wins: u32 = self.plan_successes[r].iter().skip(1).sum();
                (cases > 0).then(|| 100.0 * wins as f64 / cases as f64)
            })
            .collect();
        mean_sd(&rates)
    }

    pub fn bucket_rate_stats(&self, bucket: usize) -> (f64, f64) {
        let rates: Vec<f64> = (0..self.cases.len())
            .filter_map(|r| {
                let c = self.cases[r][bucket];
                (c > 0).then(|| 100.0 * self.plan_successes[r][bucket] as f64 / c as f64)
            })
            .collect();
        mean_sd(&rates)
    }

    pub fn bucket_cases_stats(&self, bucket: usize) -> (f64, f64) {
        let counts: Vec<f64> = (0..self.cases.len()).map(|r| self.cases[r][bucket] as f64).collect();
        mean_sd(&counts)
    }

    pub fn step_rate_stats(&self, index: usize) -> (f64, f64) {
        let rates: Vec<f64> = (0..self.step_attempts.len())
            .filter_map(|r| {
                let c = self.step_attempts[r][index];
                (c > 0).then(|| 100.0 * self.step_successes[r][index] as f64 / c as f64)
            })
            .collect();
        mean_sd(&rates)
    }

    pub fn step_total_stats(&self) -> (f64, f64) {
        let rates: Vec<f64> = (0..self.step_attempts.len())
            .filter_map(|r| {
                let c: u32 = self.step_attempts[r].iter().sum();
                let s: u32 = self.step_successes[r].iter().sum();
                (c > 0).then(|| 100.0 * s as f64 / c as f64)
            })
            .collect();
        mean_sd(&rates)
    }
}

impl Report {
    pub fn result(&self, method: &str, level: &str) -> Option<&MethodLevelResult> {
        self.results.iter().find(|r| r.method == method && r.level == level)
    }

    /// Aligned plain-text tables in the published two-table shape.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("== success by plan length ==\n");
        let labels: Vec<String> = (0..=MAX_BUCKET)
            .map(|b| if b == MAX_BUCKET { format!("{b}+ steps") } else { format!("{b} step") })
            .chain(["total".to_string()])
            .collect();
        out.push_str(&format!("{:<38}", "method @ level"));
        for l in &labels {
            out.push_str(&format!("{l:>16}"));
        }
        out.push('\n');
        for r in &self.results {
            let is_baseline = r.method.contains("baseline");
            out.push_str(&format!("{:<38}", format!("{} @ {} cases", r.method, r.level)));
            for b in 0..=MAX_BUCKET {
                let (m, s) = r.bucket_cases_stats(b);
                out.push_str(&format!("{:>16}", format!("{m:.1} ({s:.2})")));
            }
            let all: Vec<f64> = (0..r.cases.len())
                .map(|rep| r.cases[rep].iter().sum::<u32>() as f64)
                .collect();
            let (tm, ts) = mean_sd(&all);
            out.push_str(&format!("{:>16}\n", format!("{tm:.1} ({ts:.2})")));
            out.push_str(&format!("{:<38}", format!("{} @ {} success", r.method, r.level)));
            for b in 0..=MAX_BUCKET {
                let (m, s) = r.bucket_rate_stats(b);
                let cell = if m.is_nan() || (b == 0 && is_baseline) {
                    "--".to_string()
                } else {
                    format!("{m:.2}% ({s:.2})")
                };
                out.push_str(&format!("{cell:>16}"));
            }
            let (tm, ts) = if is_baseline {
                r.total_rate_nonzero_steps()
            } else {
                r.total_rate_stats()
            };
            out.push_str(&format!("{:>16}\n", format!("{tm:.2}% ({ts:.2})")));
        }
        out.push_str("\n== success by step index ==\n");
        out.push_str(&format!("{:<38}", "method @ level"));
        for i in 1..=MAX_BUCKET {
            let l = if i == MAX_BUCKET { format!("step {i}+") } else { format!("step {i}") };
            out.push_str(&format!("{l:>16}"));
        }
        out.push_str(&format!("{:>16}\n", "total"));
        for r in &self.results {
            out.push_str(&format!("{:<38}", format!("{} @ {}", r.method, r.level)));
            for i in 0..MAX_BUCKET {
                let (m, s) = r.step_rate_stats(i);
                let cell = if m.is_nan() { "--".into() } else { format!("{m:.2}% ({s:.2})") };
                out.push_str(&format!("{cell:>16}"));
            }
            let (tm, ts) = r.step_total_stats();
            out.push_str(&format!("{:>16}\n", format!("{tm:.2}% ({ts:.2})")));
        }
        out.push_str("\n== perception quality by corruption level ==\n");
        for (level, q) in &self.quality {
            out.push_str(&format!(
                "{level:<16} affordance mIoU {:.4}  instance mIoU {:.4}  detection {:.4}  (n={})\n",
                q.affordance_miou, q.instance_miou, q.detection_score, q.samples
            ));
        }
        out.push_str("\n== failure taxonomy ==\n");
        for r in &self.results {
            out.push_str(&format!(
                "{:<38} detection {:>5}  affordance {:>5}  search {:>5}\n",
                format!("{} @ {}", r.method, r.level),
                r.failures.detection,
                r.failures.affordance,
                r.failures.search
            ));
        }
        out
    }

    /// Machine-readable rows: kind,method,level,bucket,mean,sd.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,method,level,bucket,mean,sd\n");
        for r in &self.results {
            for b in 0..=MAX_BUCKET {
                let (cm, cs) = r.bucket_cases_stats(b);
                out.push_str(&format!("cases,{},{},{b},{cm:.3},{cs:.3}\n", r.method, r.level));
                let (m, s) = r.bucket_rate_stats(b);
                if !m.is_nan() {
                    out.push_str(&format!("length_success,{},{},{b},{m:.3},{s:.3}\n", r.method, r.level));
                }
            }
            for i in 0..MAX_BUCKET {
                let (m, s) = r.step_rate_stats(i);
                if !m.is_nan() {
                    out.push_str(&format!(
                        "step_success,{},{},{},{m:.3},{s:.3}\n",
                        r.method,
                        r.level,
                        i + 1
                    ));
                }
            }
            let (tm, ts) = r.total_rate_stats();
            out.push_str(&format!("total_success,{},{},-,{tm:.3},{ts:.3}\n", r.method, r.level));
            out.push_str(&format!(
                "failures,{},{},-,{},{}\n",
                r.method,
                r.level,
                r.failures.total(),
                0
            ));
        }
        for (level, q) in &self.quality {
            out.push_str(&format!("affordance_miou,-,{level},-,{:.4},0\n", q.affordance_miou));
        }
        out
    }
}

/// Map a plan's entity onto a ground-truth object and judge the match:
/// same class and mask IoU above [`ENTITY_MATCH_IOU`] at current positions.
fn entity_matches(
    planner_scene: &Scene,
    planner_id: ObjectId,
    gt_scene: &Scene,
    gt_id: ObjectId,
) -> bool {
    let Ok(po) = planner_scene.object(planner_id) else { return false };
    let Ok(go) = gt_scene.object(gt_id) else { return false };
    if po.class != go.class {
        return false;
    }
    let inter = po.patch.mask.overlap_count(po.origin, &go.patch.mask, go.origin);
    let union = po.patch.mask.count() + go.patch.mask.count() - inter;
    union > 0 && (inter as f64 / union as f64) > ENTITY_MATCH_IOU
}

/// Replay one plan step's actions onto the ground-truth scene (clamped, no
/// gating) and judge its validity there.
fn replay_step_on_gt(
    gt: &Scene,
    src: ObjectId,
    actions: &[Action],
    threshold: u32,
) -> Result<(Scene, bool), EvalError> {
    let comp = gt.composite()?;
    let mut ok = grasp_available(&comp, src);
    let mut cur = gt.clone();
    for action in actions {
        let mapped = match action {
            Action::PickPlace { target, region, .. } => {
                if !target_placeable(&comp.affordances, target.0.min(gt.width - 1), target.1.min(gt.height - 1)) {
                    ok = false;
                }
                Action::PickPlace { id: src, target: *target, region: region.clone() }
            }
            Action::Rotate { angle, .. } => Action::Rotate { id: src, angle: *angle },
            Action::Flip { .. } => Action::Flip { id: src },
        };
        match apply_unchecked(&cur, &mapped, true) {
            Ok(next) => cur = next,
            Err(_) => {
                ok = false; // e.g. no stored pose to flip to
            }
        }
    }
    if ok {
        let v = validate(&cur, src, threshold)?;
        ok = v.valid;
    }
    Ok((cur, ok))
}

/// Score a greedy-planner outcome against ground truth. `probes` answers
/// the two completeness questions lazily: can the ground truth be packed at
/// all, and can the *perceived* scene be packed by exhaustive search.
fn score_plan(
    gt_scene: &Scene,
    outcome: &crate::planner::PlanOutcome,
    detections_faithful: bool,
    gt_packable: &mut dyn FnMut() -> Result<bool, EvalError>,
    report_packable: &mut dyn FnMut() -> Result<bool, EvalError>,
) -> Result<PlanScore, EvalError> {
    let threshold = scaled_threshold(gt_scene.width, gt_scene.height);
    let mut gt_cur = gt_scene.clone();
    let mut steps = Vec::new();
    for (i, step) in outcome.plan.steps.iter().enumerate() {
        let source = outcome
            .bindings
            .iter()
            .find(|b| b.object == step.object)
            .and_then(|b| b.source);
        let (entity_ok, validity_ok) = match source {
            Some(src) if gt_cur.object(src).is_ok() => {
                let entity_ok = entity_matches(&outcome.plan.scenes[i], step.object, &gt_cur, src);
                let (next, validity_ok) = replay_step_on_gt(&gt_cur, src, &step.actions, threshold)?;
                gt_cur = next;
                (entity_ok, validity_ok)
            }
            _ => (false, false),
        };
        steps.push((entity_ok, validity_ok));
    }
    let all_ok = steps.iter().all(|(e, v)| *e && *v);
    let plan_success = outcome.plan.complete && all_ok && goal_reached(&gt_cur);
    let give_up = if !outcome.plan.complete && gt_packable()? {
        Some(if report_packable()? {
            GiveUpCause::Search
        } else if detections_faithful {
            GiveUpCause::Affordance
        } else {
            GiveUpCause::Detection
        })
    } else {
        None
    };
    Ok(PlanScore {
        claimed_len: outcome.plan.len(),
        claimed_complete: outcome.plan.complete,
        steps,
        plan_success,
        give_up,
        not_applicable: false,
    })
}

fn score_baseline(gt_scene: &Scene, plan: &Plan) -> PlanScore {
    let not_applicable = plan.is_empty() && gt_scene.outside_box().is_empty();
    let steps: Vec<(bool, bool)> =
        plan.steps.iter().map(|s| (true, s.validation.valid)).collect();
    PlanScore {
        claimed_len: plan.len(),
        claimed_complete: plan.complete,
        steps,
        plan_success: plan.complete,
        give_up: None,
        not_applicable,
    }
}

/// All scores produced by one scene work unit, keyed by (method, level).
type SceneScores = Vec<((usize, usize), PlanScore)>;

fn run_scene(
    cfg: &ExperimentConfig,
    rep: u32,
    scene_idx: usize,
    generated: &Generated,
) -> Result<(SceneScores, Vec<Quality>), EvalError> {
    let gt = &generated.scene;
    let oracle = perceive_oracle(gt)?;
    let gt_objects = oracle.detections.iter().filter(|d| !d.is_compartment()).count();
    let mut scores = Vec::new();
    let mut qualities = Vec::new();
    // The ground-truth packability probe is shared across methods and levels.
    let mut gt_packable_cache: Option<bool> = None;
    for (li, level) in cfg.levels.iter().enumerate() {
        let corruption = CorruptionConfig {
            rng_seed: crate::derive_seed(
                cfg.master_seed,
                (rep as u64) << 40 | (scene_idx as u64) << 8 | li as u64,
            ),
            ..level.cfg.clone()
        };
        let corrupted = corrupt(&oracle, &corruption)?;
        let quality = perception_quality(&corrupted, gt)?;
        qualities.push(quality);
        // Detections count as faithful when every ground-truth object is
        // matched at the right class and nothing was split off.
        let n_detections =
            corrupted.detections.iter().filter(|d| !d.is_compartment()).count();
        let detections_faithful =
            quality.detection_score >= 1.0 && n_detections == gt_objects;
        for (mi, method) in cfg.methods.iter().enumerate() {
            let planner_cfg = PlannerConfig {
                rng_seed: crate::derive_seed(
                    cfg.master_seed,
                    0xF00D ^ ((rep as u64) << 40 | (scene_idx as u64) << 16 | (li as u64) << 8 | mi as u64),
                ),
                ..cfg.planner.clone()
            };
            let score = match method.kind {
                MethodKind::Baseline => {
                    let plan = baseline_plan(gt, &planner_cfg)?;
                    score_baseline(gt, &plan)
                }
                MethodKind::Greedy { completion } => {
                    let report = complete_objects(&corrupted, completion, &corrupted.dictionary);
                    let outcome = plan(gt, |_| Ok(report.clone()), &planner_cfg)?;
                    let gen_ref = generated;
                    let planner_base = cfg.planner.clone();
                    let master = cfg.master_seed;
                    let mut gt_packable = || -> Result<bool, EvalError> {
                        if let Some(v) = gt_packable_cache {
                            return Ok(v);
                        }
                        // A feasibility certificate answers without a search.
                        let v = if gen_ref.certificate.is_some() {
                            true
                        } else {
                            let ex_cfg = PlannerConfig {
                                mode: PlanMode::Exhaustive,
                                rng_seed: crate::derive_seed(master, 0xEE ^ scene_idx as u64),
                                ..planner_base.clone()
                            };
                            let ex = plan(&gen_ref.scene, |s| perceive_oracle(s), &ex_cfg)?;
                            ex.plan.complete
                        };
                        gt_packable_cache = Some(v);
                        Ok(v)
                    };
                    let report_probe = report.clone();
                    let mut report_packable = || -> Result<bool, EvalError> {
                        // A small budget suffices: corrupted inputs either
                        // pack quickly or are genuinely blocked.
                        let ex_cfg = PlannerConfig {
                            mode: PlanMode::Exhaustive,
                            rng_seed: crate::derive_seed(master, 0xE2 ^ scene_idx as u64),
                            max_expansions: 600,
                            keep_rejected: 0,
                            max_tree_nodes: 1,
                            ..planner_base.clone()
                        };
                        let ex = plan(gt, |_| Ok(report_probe.clone()), &ex_cfg)?;
                        Ok(ex.plan.complete)
                    };
                    score_plan(
                        gt,
                        &outcome,
                        detections_faithful,
                        &mut gt_packable,
                        &mut report_packable,
                    )?
                }
            };
            scores.push(((mi, li), score));
        }
    }
    Ok((scores, qualities))
}

/// Distribute scene work units over worker threads; results are merged in
/// scene order so the report is identical for any worker count.
fn run_units(
    cfg: &ExperimentConfig,
    units: Vec<(u32, usize, Generated)>,
) -> Result<Vec<(u32, usize, SceneScores, Vec<Quality>)>, EvalError> {
    let workers = if cfg.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cfg.workers
    };
    #[cfg(target_arch = "wasm32")]
    let workers = 1;
    if workers <= 1 || units.len() <= 1 {
        let mut out = Vec::new();
        for (rep, idx, g) in &units {
            let (scores, quality) = run_scene(cfg, *rep, *idx, g)?;
            out.push((*rep, *idx, scores, quality));
        }
        return Ok(out);
    }
    let chunks: Vec<Vec<(u32, usize, Generated)>> = {
        let mut cs: Vec<Vec<(u32, usize, Generated)>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, u) in units.into_iter().enumerate() {
            cs[i % workers].push(u);
        }
        cs
    };
    let mut collected: Vec<(u32, usize, SceneScores, Vec<Quality>)> = Vec::new();
    let results: Vec<Result<Vec<(u32, usize, SceneScores, Vec<Quality>)>, EvalError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        for (rep, idx, g) in &chunk {
                            let (scores, quality) = run_scene(cfg, *rep, *idx, g)?;
                            out.push((*rep, *idx, scores, quality));
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
    for r in results {
        collected.extend(r?);
    }
    collected.sort_by_key(|(rep, idx, _, _)| (*rep, *idx));
    Ok(collected)
}

/// Load an experiment config from a TOML file.
pub fn load_experiment_config(path: &std::path::Path) -> Result<ExperimentConfig, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::InvalidConfig(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| EvalError::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Run the experiment and aggregate the report. Individual scene failures
/// are recorded as failed plans rather than aborting the run.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, EvalError> {
    if cfg.repetitions < 1 || cfg.dataset.n_scenes < 1 {
        return Err(EvalError::InvalidConfig("repetitions and n_scenes must be >= 1".into()));
    }
    if cfg.methods.is_empty() || cfg.levels.is_empty() {
        return Err(EvalError::InvalidConfig("need at least one method and level".into()));
    }
    let mut units = Vec::new();
    for rep in 0..cfg.repetitions {
        let spec = DatasetSpec {
            gen: crate::scenegen::GenConfig {
                seed: crate::derive_seed(cfg.master_seed, 0xDA7A ^ rep as u64),
                ..cfg.dataset.gen.clone()
            },
            ..cfg.dataset.clone()
        };
        for (idx, g) in dataset_scenes(&spec)?.into_iter().enumerate() {
            units.push((rep, idx, g));
        }
    }
    let n_scenes = cfg.dataset.n_scenes;
    let outcomes = run_units(cfg, units)?;

    let reps = cfg.repetitions as usize;
    let mut results: Vec<MethodLevelResult> = Vec::new();
    for method in &cfg.methods {
        for level in &cfg.levels {
            results.push(MethodLevelResult {
                method: method.name.clone(),
                level: level.name.clone(),
                cases: vec![vec![0; MAX_BUCKET + 1]; reps],
                plan_successes: vec![vec![0; MAX_BUCKET + 1]; reps],
                step_attempts: vec![vec![0; MAX_BUCKET]; reps],
                step_successes: vec![vec![0; MAX_BUCKET]; reps],
                failures: FailureCounts::default(),
                give_ups: 0,
            });
        }
    }
    let mut quality_acc: HashMap<usize, QualityMean> = HashMap::new();
    let n_levels = cfg.levels.len();
    for (rep, _idx, scores, qualities) in outcomes {
        for (li, q) in qualities.iter().enumerate() {
            let acc = quality_acc.entry(li).or_default();
            acc.affordance_miou += q.affordance_miou;
            acc.instance_miou += q.instance_miou;
            acc.detection_score += q.detection_score;
            acc.samples += 1;
        }
        for ((mi, li), score) in scores {
            let row = &mut results[mi * n_levels + li];
            if score.not_applicable {
                continue;
            }
            let bucket = score.claimed_len.min(MAX_BUCKET);
            row.cases[rep as usize][bucket] += 1;
            if score.plan_success {
                row.plan_successes[rep as usize][bucket] += 1;
            }
            for (i, (entity_ok, validity_ok)) in score.steps.iter().enumerate() {
                let sb = i.min(MAX_BUCKET - 1);
                row.step_attempts[rep as usize][sb] += 1;
                if *entity_ok && *validity_ok {
                    row.step_successes[rep as usize][sb] += 1;
                } else if !*entity_ok {
                    row.failures.detection += 1;
                } else {
                    row.failures.affordance += 1;
                }
            }
            if let Some(cause) = score.give_up {
                row.give_ups += 1;
                match cause {
                    GiveUpCause::Search => row.failures.search += 1,
                    GiveUpCause::Affordance => row.failures.affordance += 1,
                    GiveUpCause::Detection => row.failures.detection += 1,
                }
            }
        }
    }
    let quality = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(li, level)| {
            let acc = quality_acc.get(&li).copied().unwrap_or_default();
            let n = acc.samples.max(1) as f64;
            (
                level.name.clone(),
                QualityMean {
                    affordance_miou: acc.affordance_miou / n,
                    instance_miou: acc.instance_miou / n,
                    detection_score: acc.detection_score / n,
                    samples: acc.samples,
                },
            )
        })
        .collect();
    Ok(Report { results, quality, repetitions: cfg.repetitions, n_scenes })
}

/// Failure-taxonomy counts of one (method, level) row; the counts partition
/// the failed steps (search failures contribute one synthetic step each).
pub fn classify_failures(report: &Report, method: &str, level: &str) -> Option<FailureCounts> {
    report.result(method, level).map(|r| r.failures)
}

#[derive(Clone, Debug)]
pub struct TrendCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct TrendSummary {
    pub checks: Vec<TrendCheck>,
}

impl TrendSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Monotonicity assertions over a finished report, returned as data: total
/// success non-increasing in corruption strength (levels in config order),
/// identity-corruption runs bounding corrupted ones, and the baseline below
/// every planner method on scenes needing at least one step.
pub fn trend_check(cfg: &ExperimentConfig, report: &Report) -> TrendSummary {
    let mut checks = Vec::new();
    let greedy_methods: Vec<&MethodSpec> =
        cfg.methods.iter().filter(|m| matches!(m.kind, MethodKind::Greedy { .. })).collect();
    for method in &greedy_methods {
        let mut prev: Option<(String, f64)> = None;
        let mut pass = true;
        let mut detail = String::new();
        for level in &cfg.levels {
            let Some(r) = report.result(&method.name, &level.name) else { continue };
            let (rate, _) = r.total_rate_stats();
            if let Some((pname, pv)) = &prev {
                if rate > pv + 1e-9 {
                    pass = false;
                    detail = format!("{} ({rate:.2}%) > {pname} ({pv:.2}%)", level.name);
                }
            }
            prev = Some((level.name.clone(), rate));
        }
        checks.push(TrendCheck {
            name: format!("total success non-increasing across levels [{}]", method.name),
            pass,
            detail,
        });
    }
    if let Some(identity) = cfg.levels.iter().find(|l| l.cfg.is_identity()) {
        for method in &greedy_methods {
            let Some(base) = report.result(&method.name, &identity.name) else { continue };
            let (oracle_rate, _) = base.total_rate_stats();
            let mut pass = true;
            let mut detail = String::new();
            for level in &cfg.levels {
                let Some(r) = report.result(&method.name, &level.name) else { continue };
                let (rate, _) = r.total_rate_stats();
                if rate > oracle_rate + 1e-9 {
                    pass = false;
                    detail = format!("{} ({rate:.2}%) beats oracle ({oracle_rate:.2}%)", level.name);
                }
            }
            checks.push(TrendCheck {
                name: format!("oracle level is the maximum [{}]", method.name),
                pass,
                detail,
            });
        }
    }
    let baselines: Vec<&MethodSpec> =
        cfg.methods.iter().filter(|m| m.kind == MethodKind::Baseline).collect();
    for baseline in &baselines {
        for method in &greedy_methods {
            for level in &cfg.levels {
                let (Some(b), Some(g)) = (
                    report.result(&baseline.name, &level.name),
                    report.result(&method.name, &level.name),
                ) else {
                    continue;
                };
                let (brate, _) = b.total_rate_nonzero_steps();
                let (grate, _) = g.total_rate_nonzero_steps();
                if brate.is_nan() || grate.is_nan() {
                    continue;
                }
                checks.push(TrendCheck {
                    name: format!(
                        "baseline <= {} at level {} (>=1 step scenes)",
                        method.name, level.name
                    ),
                    pass: brate <= grate + 1e-9,
                    detail: format!("baseline {brate:.2}% vs {grate:.2}%"),
                });
            }
        }
    }
    TrendSummary { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::GenConfig;

    fn small_experiment() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec {
                gen: GenConfig {
                    width: 224,
                    height: 176,
                    object_count: (1, 3),
                    ..GenConfig::default()
                },
                n_scenes: 6,
                strata: Some(vec![(0, 1), (1, 2), (2, 2), (3, 1)]),
            },
            methods: vec![
                MethodSpec { name: "greedy".into(), kind: MethodKind::Greedy { completion: true } },
                MethodSpec { name: "baseline".into(), kind: MethodKind::Baseline },
            ],
            levels: vec![
                CorruptionLevel { name: "oracle".into(), cfg: CorruptionConfig::default() },
                CorruptionLevel {
                    name: "mild".into(),
                    cfg: CorruptionConfig {
                        affordance_jitter: 0.8,
                        boundary_jitter: 0.4,
                        ..CorruptionConfig::default()
                    },
                },
            ],
            repetitions: 2,
            master_seed: 7,
            planner: PlannerConfig::default(),
            workers: 2,
        }
    }

    #[test]
    fn oracle_run_is_perfect_and_reproducible() {
        let cfg = small_experiment();
        let report = run(&cfg).unwrap();
        let greedy = report.result("greedy", "oracle").unwrap();
        let (rate, _) = greedy.total_rate_stats();
        assert_eq!(rate, 100.0, "oracle greedy must succeed everywhere");
        assert_eq!(greedy.failures, FailureCounts::default());
        // Bit-reproducible.
        let report2 = run(&cfg).unwrap();
        assert_eq!(report.to_csv(), report2.to_csv());
        // Worker count must not change results.
        let mut seq = cfg.clone();
        seq.workers = 1;
        let report3 = run(&seq).unwrap();
        assert_eq!(report.to_csv(), report3.to_csv());
    }

    #[test]
    fn case_counts_match_dataset() {
        let cfg = small_experiment();
        let report = run(&cfg).unwrap();
        let greedy = report.result("greedy", "oracle").unwrap();
        for rep in 0..cfg.repetitions as usize {
            let total: u32 = greedy.cases[rep].iter().sum();
            assert_eq!(total, cfg.dataset.n_scenes);
        }
        // Baseline skips fully packed scenes (not applicable).
        let baseline = report.result("baseline", "oracle").unwrap();
        for rep in 0..cfg.repetitions as usize {
            assert_eq!(baseline.cases[rep][0], 0);
        }
    }

    #[test]
    fn cross_table_consistency() {
        // A length-n plan succeeds iff all its n steps succeed: per rep the
        // success totals cannot exceed step-success-limited counts.
        let cfg = small_experiment();
        let report = run(&cfg).unwrap();
        for r in &report.results {
            for rep in 0..cfg.repetitions as usize {
                let plan_wins: u32 = r.plan_successes[rep].iter().skip(1).sum();
                let step_attempts: u32 = r.step_attempts[rep].iter().sum();
                let step_wins: u32 = r.step_successes[rep].iter().sum();
                assert!(step_wins <= step_attempts);
                // Each winning multi-step plan contributes at least one
                // winning step.
                assert!(plan_wins <= step_wins.max(1));
            }
        }
    }

    #[test]
    fn taxonomy_counts_partition_failed_steps() {
        let mut cfg = small_experiment();
        cfg.levels.push(CorruptionLevel {
            name: "split".into(),
            cfg: CorruptionConfig { split_prob: 1.0, ..CorruptionConfig::default() },
        });
        let report = run(&cfg).unwrap();
        for r in &report.results {
            let failed_steps: u32 = (0..cfg.repetitions as usize)
                .map(|rep| {
                    r.step_attempts[rep].iter().sum::<u32>()
                        - r.step_successes[rep].iter().sum::<u32>()
                })
                .sum();
            // Give-ups contribute one synthetic failed step each.
            assert_eq!(
                r.failures.total(),
                failed_steps + r.give_ups,
                "{} @ {}",
                r.method,
                r.level
            );
        }
    }

    #[test]
    fn trends_hold_on_small_run() {
        let cfg = small_experiment();
        let report = run(&cfg).unwrap();
        let summary = trend_check(&cfg, &report);
        for c in &summary.checks {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }
}
