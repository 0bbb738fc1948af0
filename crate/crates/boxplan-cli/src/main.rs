//! Command-line entry point: generate datasets, plan single scenes, dump
//! planning trees, extract symbolic plans, run experiments and perform
//! inverse perspective mapping.
//!
//! Exit codes: 0 success, 1 domain error (infeasible config, incomplete plan
//! under --require-complete), 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use boxplan::eval;
use boxplan::ipm;
use boxplan::manifest;
use boxplan::perception::{self, CorruptionConfig};
use boxplan::planner::{self, PlanMode, PlannerConfig};
use boxplan::scenegen::{self, DatasetSpec, GenConfig};
use boxplan::symbolic;
use boxplan::viz;
use boxplan::Scene;

#[derive(Parser)]
#[command(
    name = "boxplan",
    about = "Image-space task planner for tabletop box packing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of scene manifests with ground truth.
    Generate(GenerateArgs),
    /// Plan one scene and write the plan strip plus the symbolic listing.
    Plan(PlanArgs),
    /// Plan one scene and dump the full planning tree (node images + structure).
    Tree(PlanArgs),
    /// Plan one scene and write only the symbolic plan files.
    Symbolic(PlanArgs),
    /// Run an experiment config and write report tables.
    Evaluate(EvaluateArgs),
    /// Merge tilted camera views into the canonical top view.
    Ipm(IpmArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset spec (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the scene manifests.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenes override.
    #[arg(long)]
    scenes: Option<u32>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct PlanArgs {
    /// Scene manifest (directory or scene.toml path).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Planner seed; all randomness flows from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// greedy or exhaustive.
    #[arg(long, default_value = "greedy")]
    mode: String,
    /// Conflict threshold override in pixels.
    #[arg(long)]
    threshold: Option<u32>,
    /// Corruption level: erode/dilate jitter in pixels applied to perceived
    /// masks and affordances (0 = oracle perception).
    #[arg(long, default_value_t = 0.0)]
    corruption: f64,
    /// Disable dictionary-based object completion (ablation).
    #[arg(long)]
    no_completion: bool,
    /// Exit with an error when the plan does not reach the goal.
    #[arg(long)]
    require_complete: bool,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report files.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct IpmArgs {
    /// Calibration file naming the top view and the camera images.
    #[arg(long)]
    calibration: PathBuf,
    /// Output directory for the merged view and coverage mask.
    #[arg(long)]
    out: PathBuf,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Plan(args) => {
            cmd_plan(args, PlanOutputs { strip: true, symbolic: true, tree: false })
        }
        Command::Tree(args) => {
            cmd_plan(args, PlanOutputs { strip: false, symbolic: false, tree: true })
        }
        Command::Symbolic(args) => {
            cmd_plan(args, PlanOutputs { strip: false, symbolic: true, tree: false })
        }
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ipm(args) => cmd_ipm(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec: DatasetSpec = match &args.config {
        Some(path) => scenegen::load_dataset_spec(path)?,
        None => DatasetSpec { gen: GenConfig::default(), n_scenes: 10, strata: None },
    };
    if let Some(seed) = args.seed {
        spec.gen.seed = seed;
    }
    if let Some(n) = args.scenes {
        spec.n_scenes = n;
    }
    let index = scenegen::generate_dataset(&spec, &args.out)?;
    if args.verbose > 0 {
        for entry in &index.scenes {
            println!("{}  seed {}  {} steps", entry.dir, entry.seed, entry.steps);
        }
    }
    println!("wrote {} scenes to {}", index.scenes.len(), args.out.display());
    Ok(())
}

#[derive(Clone, Copy)]
struct PlanOutputs {
    strip: bool,
    symbolic: bool,
    tree: bool,
}

fn load_scene_arg(path: &Path) -> Result<Scene> {
    manifest::load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn cmd_plan(args: PlanArgs, outputs: PlanOutputs) -> Result<()> {
    let scene = load_scene_arg(&args.scene)?;
    let mode = match args.mode.as_str() {
        "greedy" => PlanMode::Greedy,
        "exhaustive" => PlanMode::Exhaustive,
        other => return Err(anyhow!("unknown mode {other:?} (greedy|exhaustive)")),
    };
    let cfg = PlannerConfig {
        rng_seed: args.seed,
        mode,
        threshold: args.threshold,
        ..PlannerConfig::default()
    };
    let corruption = CorruptionConfig {
        boundary_jitter: args.corruption / 2.0,
        affordance_jitter: args.corruption,
        rng_seed: boxplan::derive_seed(args.seed, 0xC0),
        ..CorruptionConfig::default()
    };
    let completion = !args.no_completion;
    let outcome = planner::plan(
        &scene,
        |s| {
            let report = perception::perceive_oracle(s)?;
            let corrupted = perception::corrupt(&report, &corruption)?;
            Ok(perception::complete_objects(&corrupted, completion, &corrupted.dictionary.clone()))
        },
        &cfg,
    )?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    if outputs.strip {
        let strip = viz::plan_strip(&outcome.plan)?;
        manifest::save_rgb_png(&strip, &args.out.join("plan_strip.png"))?;
    }
    if outputs.symbolic {
        let splan = symbolic::parse(&outcome.plan)?;
        std::fs::write(args.out.join("plan_symbolic.txt"), symbolic::to_listing(&splan))?;
        std::fs::write(args.out.join("plan_listing.txt"), symbolic::to_text(&splan) + "\n")?;
    }
    if outputs.tree {
        planner::dump_tree(&outcome.tree, &args.out)?;
    }
    if args.verbose > 0 {
        for (i, step) in outcome.plan.steps.iter().enumerate() {
            println!(
                "step {}: {} -> {} at ({}, {}), conflict {}/{}",
                i + 1,
                step.object_name,
                step.region_name,
                step.target.0,
                step.target.1,
                step.validation.conflict_pixels,
                step.validation.threshold
            );
        }
    }
    if outcome.plan.is_empty() && outcome.plan.complete {
        println!("nothing needs to be done");
    } else {
        println!(
            "plan: {} steps, {}",
            outcome.plan.len(),
            if outcome.plan.complete { "complete" } else { "incomplete" }
        );
    }
    if args.require_complete && !outcome.plan.complete {
        return Err(anyhow!("plan incomplete: objects remain outside the box"));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = eval::load_experiment_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let report = eval::run(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("report.txt"), report.to_text())?;
    std::fs::write(args.out.join("report.csv"), report.to_csv())?;
    let trends = eval::trend_check(&cfg, &report);
    let mut trend_text = String::new();
    for c in &trends.checks {
        trend_text.push_str(&format!(
            "{} {}{}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }
        ));
    }
    std::fs::write(args.out.join("trends.txt"), &trend_text)?;
    if args.verbose > 0 {
        print!("{}", report.to_text());
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_ipm(args: IpmArgs) -> Result<()> {
    let cal = ipm::load_calibration(&args.calibration)?;
    let base = args.calibration.parent().unwrap_or(Path::new("."));
    let mut views = Vec::new();
    for cam in &cal.camera {
        let image = manifest::load_rgb_png(&base.join(&cam.image))?;
        views.push((image, cam.model.clone()));
    }
    let (merged, coverage) = ipm::remap_and_merge(&views, &cal.topview)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    manifest::save_rgb_png(&merged, &args.out.join("topview.png"))?;
    manifest::save_mask_png(&coverage, &args.out.join("coverage.png"))?;
    println!(
        "merged {} views into {} ({} px covered)",
        views.len(),
        args.out.join("topview.png").display(),
        coverage.count()
    );
    Ok(())
}
