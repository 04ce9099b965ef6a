use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use dynotrack_core::config::PipelineConfig;
use dynotrack_core::evaluation::{
    build_mot_frames, clear_mot, cloud_accuracy_completeness, static_precision, MotReport,
};
use dynotrack_core::filtering::filter_cloud;
use dynotrack_core::io::{
    read_cloud, read_jsonl, write_cloud, write_json, write_jsonl, Dataset, GROUND_TRUTH_FILE, STATIC_REFERENCE_FILE,
};
use dynotrack_core::pipeline::{median, run_dataset, Pipeline, StageTiming, TrackRecord};
use dynotrack_core::simulator::scene::SceneSpec;
use dynotrack_core::simulator::{generate_dataset, render_frame, GroundTruthFrame};

use crate::{Cli, Command, PipelineArgs};

pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const TIMING_FILE: &str = "timing.csv";
pub const STATIC_CLOUD_FILE: &str = "static_cloud.dpc";
pub const REPORT_FILE: &str = "evaluation.json";

const DEFAULT_BENCH_SCENE: &str = include_str!("../../../scenes/dense-room.json");

pub fn dispatch(cli: Cli) -> Result<()> {
    let pool = match cli.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?,
        None => rayon::ThreadPoolBuilder::new().build()?,
    };
    pool.install(|| match cli.command {
        Command::Simulate { scene, out_dir, seed } => simulate(&scene, &out_dir, seed),
        Command::Run {
            dataset,
            out_dir,
            pipeline,
            export_grids,
        } => run(&dataset, &out_dir, &pipeline, export_grids),
        Command::Evaluate {
            tracks,
            ground_truth,
            config,
            static_cloud,
            reference,
            out,
        } => evaluate(&tracks, &ground_truth, config.as_deref(), static_cloud, reference, out),
        Command::Bench {
            scene,
            pipeline,
            frames,
            warmup,
            budget_ms,
        } => bench(scene.as_deref(), &pipeline, frames, warmup, budget_ms),
    })
}

fn load_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.voting.seed = seed;
    }
    if args.no_detector {
        config.use_detector = false;
    }
    Ok(config)
}

fn simulate(scene_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut scene = SceneSpec::load(scene_path)?;
    if let Some(seed) = seed {
        scene.seed = seed;
    }
    let summary = generate_dataset(&scene, out_dir)?;
    println!(
        "simulated '{}': {} frames, {} points -> {}",
        scene.name,
        summary.frames,
        summary.points,
        out_dir.display()
    );
    Ok(())
}

fn run(dataset_dir: &Path, out_dir: &Path, args: &PipelineArgs, export_grids: bool) -> Result<()> {
    let config = load_config(args)?;
    let dataset = Dataset::open(dataset_dir)?;
    if dataset.is_empty() {
        bail!("dataset {} has no frames", dataset_dir.display());
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let grid_dir = out_dir.join("grids");
    if export_grids {
        fs::create_dir_all(&grid_dir).with_context(|| format!("creating {}", grid_dir.display()))?;
    }

    let result = run_dataset(&dataset, &config, |pipeline, frame| {
        info!(
            "frame {}: {} tracks, {:.1} ms",
            frame.frame,
            frame.tracks.len(),
            frame.timing.total
        );
        if let (true, Some(grid)) = (export_grids, pipeline.grid()) {
            grid.export(&grid_dir, &format!("{:06}", frame.frame), frame.timestamp)?;
        }
        Ok(())
    })?;

    write_jsonl(&out_dir.join(TRACKS_FILE), &result.tracks)?;
    write_timing(&out_dir.join(TIMING_FILE), &result.timings)?;
    write_cloud(&out_dir.join(STATIC_CLOUD_FILE), &result.static_cloud)?;

    let ids: std::collections::BTreeSet<_> = result
        .tracks
        .iter()
        .filter(|t| t.class.is_dynamic_like())
        .map(|t| t.track_id)
        .collect();
    let totals: Vec<f64> = result.timings.iter().map(|t| t.total).collect();
    let mean_total = totals.iter().sum::<f64>() / totals.len() as f64;
    println!(
        "processed {} frames: {} track records, {} dynamic/person tracks, {} re-associations",
        result.timings.len(),
        result.tracks.len(),
        ids.len(),
        result.merges.len()
    );
    println!(
        "mean {:.1} ms per frame ({:.1} Hz), median {:.1} ms",
        mean_total,
        1000.0 / mean_total,
        median(&totals).unwrap_or(0.0)
    );
    Ok(())
}

fn write_timing(path: &Path, timings: &[StageTiming]) -> Result<()> {
    let mut s = String::from(StageTiming::CSV_HEADER);
    s.push('\n');
    for t in timings {
        s.push_str(&t.csv_row());
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct CloudSummary {
    accuracy_mean: f64,
    accuracy_max: f64,
    completeness_mean: f64,
    within_accuracy_limit: bool,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    mot: MotReport,
    static_points: usize,
    static_precision: Option<f64>,
    cloud: Option<CloudSummary>,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn evaluate(
    tracks_path: &Path,
    gt_path: &Path,
    config: Option<&Path>,
    static_cloud: Option<PathBuf>,
    reference: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let gt_file = if gt_path.is_dir() {
        gt_path.join(GROUND_TRUTH_FILE)
    } else {
        gt_path.to_path_buf()
    };
    let truth: Vec<GroundTruthFrame> = read_jsonl(&gt_file)?;
    let tracks: Vec<TrackRecord> = read_jsonl(tracks_path)?;
    let frames = build_mot_frames(&truth, &tracks, &config.mot)?;
    let mot = clear_mot(&frames, &config.mot);

    let static_path = static_cloud.unwrap_or_else(|| sibling(tracks_path, STATIC_CLOUD_FILE));
    let reference_path = reference.unwrap_or_else(|| sibling(&gt_file, STATIC_REFERENCE_FILE));
    let (static_points, precision, comparison) = if static_path.exists() && reference_path.exists() {
        let ms = read_cloud(&static_path)?;
        let ml = read_cloud(&reference_path)?;
        (
            ms.len(),
            static_precision(&ms, &ml, config.static_precision.error_threshold),
            cloud_accuracy_completeness(&ms, &ml),
        )
    } else {
        (0, None, None)
    };

    let out_dir = out.unwrap_or_else(|| tracks_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    if let Some(c) = &comparison {
        c.accuracy.write_csv(&out_dir.join("accuracy_histogram.csv"))?;
        c.completeness.write_csv(&out_dir.join("completeness_histogram.csv"))?;
    }
    let report = EvaluationReport {
        mot,
        static_points,
        static_precision: precision,
        cloud: comparison.map(|c| CloudSummary {
            accuracy_mean: c.accuracy.mean,
            accuracy_max: c.accuracy.max,
            completeness_mean: c.completeness.mean,
            within_accuracy_limit: c.within_accuracy_limit(config.static_precision.accuracy_limit),
        }),
    };
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    print_summary(&report);
    Ok(())
}

fn fmt_opt(v: Option<f64>, scale: f64, unit: &str) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{:.4}{unit}", v * scale))
}

fn print_summary(r: &EvaluationReport) {
    let m = &r.mot;
    println!("MOTA            {}", fmt_opt(m.mota, 1.0, ""));
    println!("MOTP            {}", fmt_opt(m.motp, 1.0, " m"));
    println!("fn rate         {}", fmt_opt(m.fn_rate, 1.0, ""));
    println!("fp rate         {}", fmt_opt(m.fp_rate, 1.0, ""));
    println!("mismatch rate   {}", fmt_opt(m.mismatch_rate, 1.0, ""));
    println!(
        "counts          gt {} matched {} fn {} fp {} mm {}",
        m.gt_count, m.matches, m.misses, m.false_positives, m.mismatches
    );
    println!(
        "static precision {} over {} points",
        fmt_opt(r.static_precision, 1.0, ""),
        r.static_points
    );
}

fn bench(scene_path: Option<&Path>, args: &PipelineArgs, frames: usize, warmup: usize, budget_ms: f64) -> Result<()> {
    if frames <= warmup {
        bail!("--frames ({frames}) must exceed --warmup ({warmup})");
    }
    let scene = match scene_path {
        Some(p) => SceneSpec::load(p)?,
        None => serde_json::from_str::<SceneSpec>(DEFAULT_BENCH_SCENE).context("built-in bench scene")?,
    };
    scene.validate()?;
    let config = load_config(args)?;
    let rendered: Vec<_> = (0..frames)
        .map(|k| render_frame(&scene, scene.frame_time(k), k).frame)
        .collect();
    let dense: Vec<f64> = rendered
        .iter()
        .map(|f| filter_cloud(&f.cloud, &f.pose, &config.filter).dense_camera.len() as f64)
        .collect();

    let mut pipeline = Pipeline::new(config, scene.camera)?;
    let mut timings = Vec::with_capacity(frames);
    for f in &rendered {
        timings.push(pipeline.process(f)?.timing);
    }
    let measured = &timings[warmup..];
    let med = |f: fn(&StageTiming) -> f64| median(&measured.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
    let core = med(StageTiming::core_ms);
    println!(
        "scene '{}': {} frames measured, median dense cloud {:.0} points",
        scene.name,
        measured.len(),
        median(&dense).unwrap_or(0.0)
    );
    println!("filtering       {:8.2} ms", med(|t| t.filtering));
    println!("clustering      {:8.2} ms", med(|t| t.clustering));
    println!("classification  {:8.2} ms", med(|t| t.classification));
    println!("fusion          {:8.2} ms", med(|t| t.fusion));
    println!("motion          {:8.2} ms", med(|t| t.motion));
    println!("grid            {:8.2} ms", med(|t| t.grid));
    println!("total           {:8.2} ms", med(|t| t.total));
    println!("core            {core:8.2} ms (budget {budget_ms} ms)");
    if core > budget_ms {
        bail!("median core processing time {core:.2} ms exceeds the {budget_ms} ms budget");
    }
    Ok(())
}
