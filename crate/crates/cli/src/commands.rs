use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use fluidrecon_core::correspondence::{
    default_steps, flow_points, geodesic_errors, nearest_match, MeshGeodesics,
};
use fluidrecon_core::evaluation::{
    chamfer_with, matching_curve, mesh_chamfer, uniform_thresholds, ChamferKind, MESH_CHAMFER_SAMPLES,
};
use fluidrecon_core::extraction::{marching_cubes, DEFAULT_RESOLUTION};
use fluidrecon_core::geometry::TimeMap;
use fluidrecon_core::io::{export_mesh, load_frames, read_mesh, MeshFormat};
use fluidrecon_core::scenes::{write_scene, SceneKind, SceneManifest, SceneSpec, MANIFEST_FILE};
use fluidrecon_core::trainer::{load_checkpoint, train_with, TrainOptions};
use fluidrecon_core::{Error, FrameSequence, LossReport, Result, TrainConfig, TriMesh};
use log::info;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{Cli, Command, GlobalArgs};

#[derive(Args, Debug)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub kind: SceneKind,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    /// Size parameter (sphere radius, box half-extent, capsule radius).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Motion parameter (linear or angular speed).
    #[arg(long)]
    pub speed: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Scene manifest, or a directory containing `manifest.toml`.
    #[arg(long, conflicts_with = "frames")]
    pub scene: Option<PathBuf>,
    /// Frame files in time order (PLY or OBJ with normals).
    #[arg(long, num_args = 1.., required_unless_present = "scene")]
    pub frames: Vec<PathBuf>,
    /// Comma-separated frame times; default `i / (n - 1)`.
    #[arg(long, value_delimiter = ',', requires = "frames")]
    pub times: Vec<f64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Obj,
    Ply,
}

impl From<FormatArg> for MeshFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Obj => MeshFormat::Obj,
            FormatArg::Ply => MeshFormat::Ply,
        }
    }
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Extraction time (repeatable); default every frame time.
    #[arg(long = "time")]
    pub times: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub res: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Obj)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Points to flow (mesh or cloud; vertices are used).
    #[arg(long)]
    pub source: PathBuf,
    /// Candidate target vertices.
    #[arg(long)]
    pub target: PathBuf,
    /// Default: first frame time of the checkpoint.
    #[arg(long)]
    pub t_start: Option<f64>,
    /// Default: last frame time of the checkpoint.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Euler steps; default 32 per frame interval.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Ground-truth matching CSV (`source_index,target_index,...`); with a
    /// triangulated target, adds geodesic errors and a matching curve.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Surface samples per mesh.
    #[arg(long, default_value_t = MESH_CHAMFER_SAMPLES)]
    pub samples: usize,
    /// Average squared instead of plain distances.
    #[arg(long)]
    pub squared: bool,
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    std::fs::create_dir_all(&g.out).map_err(|e| Error::io(&g.out, e))?;
    match &cli.command {
        Command::GenScene(a) => gen_scene(g, a),
        Command::Train(a) => train(g, a),
        Command::Reconstruct(a) => reconstruct(g, a),
        Command::Match(a) => match_points(g, a),
        Command::Eval(a) => eval(g, a),
    }
}

/// Config file (or defaults), then `--set` overrides, then `--seed`.
fn effective_config(g: &GlobalArgs) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for kv in &g.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not KEY=VALUE")))?;
        cfg.apply_override(key.trim(), value.trim())?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_scene(g: &GlobalArgs, a: &GenSceneArgs) -> Result<()> {
    let mut spec = SceneSpec::new(a.kind, a.frames, a.points, g.seed.unwrap_or(0));
    spec.radius = a.radius;
    spec.speed = a.speed;
    let manifest = write_scene(&spec, &g.out)?;
    let mut run = RunManifest::new("gen-scene");
    run.seed = Some(spec.seed);
    run.artifacts = manifest.frame_paths(&g.out);
    run.artifacts.push(g.out.join(MANIFEST_FILE));
    run.summary = json!({ "kind": a.kind.name(), "frames": manifest.frames.len(), "times": manifest.times });
    run.write(&g.out)?;
    info!("wrote {} frames of {} to {}", manifest.frames.len(), a.kind, g.out.display());
    Ok(())
}

fn load_sequence(a: &TrainArgs) -> Result<FrameSequence> {
    if let Some(scene) = &a.scene {
        let path = if scene.is_dir() { scene.join(MANIFEST_FILE) } else { scene.clone() };
        return SceneManifest::load(&path)?.load_frames(&path);
    }
    let map = if a.times.is_empty() {
        TimeMap::Linear
    } else {
        TimeMap::Explicit(a.times.clone())
    };
    load_frames(&a.frames, &map)
}

fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let cfg = effective_config(g)?;
    let frames = load_sequence(a)?;
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;

    let config_path = g.out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
    let history_path = g.out.join("loss_history.csv");
    let file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut csv = BufWriter::new(file);
    let mut write_row = |row: &str| -> std::io::Result<()> {
        writeln!(csv, "{row}")?;
        csv.flush()
    };
    write_row(LossReport::CSV_HEADER).map_err(|e| Error::io(&history_path, e))?;
    if let Some(state) = &resume {
        for r in &state.history {
            write_row(&r.csv_row()).map_err(|e| Error::io(&history_path, e))?;
        }
    }
    let mut csv_error = None;
    let mut on_epoch = |r: &LossReport| {
        if r.epoch % 10 == 0 {
            info!(
                "epoch {} phase {}: recon {:.4e} div {:.4e} advect {:.4e} ns {:.4e}",
                r.epoch, r.phase, r.recon, r.div, r.advect, r.ns
            );
        }
        if let Err(e) = write_row(&r.csv_row()) {
            csv_error.get_or_insert(e);
        }
    };
    let ckpt_dir = g.out.join("checkpoints");
    let outcome = train_with(
        &frames,
        &cfg,
        TrainOptions {
            checkpoint_dir: Some(ckpt_dir.clone()),
            resume,
            stop_after: None,
            on_epoch: Some(&mut on_epoch),
        },
    )?;
    if let Some(e) = csv_error {
        return Err(Error::io(&history_path, e));
    }

    let mut run = RunManifest::new("train");
    run.seed = Some(cfg.seed);
    run.config = Some(cfg.to_toml_string());
    run.artifacts = vec![config_path, history_path, ckpt_dir.join("final.ckpt")];
    run.phase_seconds = Some(outcome.phase_seconds);
    let last = outcome.history().last();
    run.summary = json!({
        "epochs": outcome.state.epoch,
        "frames": frames.len(),
        "final_total": last.map(|r| r.total),
        "final_recon": last.map(|r| r.recon),
    });
    run.write(&g.out)?;
    Ok(())
}

fn reconstruct(g: &GlobalArgs, a: &ReconstructArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let times = if a.times.is_empty() { state.times.clone() } else { a.times.clone() };
    let format = MeshFormat::from(a.format);
    let ext = match format {
        MeshFormat::Obj => "obj",
        MeshFormat::Ply => "ply",
    };
    let mut run = RunManifest::new("reconstruct");
    let mut meshes = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let mesh = marching_cubes(&state.f, t, a.res, &state.bbox)?;
        let path = g.out.join(format!("mesh_{k:03}.{ext}"));
        export_mesh(&mesh, &path, format)?;
        info!("t = {t}: {} vertices, {} triangles -> {}", mesh.vertices.len(), mesh.triangles.len(), path.display());
        meshes.push(json!({
            "time": t,
            "path": path,
            "vertices": mesh.vertices.len(),
            "triangles": mesh.triangles.len(),
            "components": mesh.connected_components(),
        }));
        run.artifacts.push(path);
    }
    run.config = Some(state.config.clone());
    run.summary = json!({ "resolution": a.res, "meshes": meshes });
    run.write(&g.out)?;
    Ok(())
}

fn read_points(path: &Path) -> Result<TriMesh> {
    let mesh = read_mesh(path)?;
    if mesh.vertices.is_empty() {
        return Err(Error::ingest(path, "file contains no vertices"));
    }
    Ok(mesh)
}

/// Target indices from a matching CSV with a header row.
fn read_truth(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let mut cols = line.split(',');
            let src = cols.next().and_then(|c| c.trim().parse::<usize>().ok());
            let dst = cols.next().and_then(|c| c.trim().parse::<usize>().ok());
            match (src, dst) {
                (Some(s), Some(d)) if s == i => Ok(d),
                _ => Err(Error::ingest(path, format!("row {} is not 'source_index,target_index' in order", i + 2))),
            }
        })
        .collect()
}

fn match_points(g: &GlobalArgs, a: &MatchArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let t_start = a.t_start.unwrap_or(state.times[0]);
    let t_end = a.t_end.unwrap_or(*state.times.last().unwrap());
    let steps = a.steps.unwrap_or_else(|| {
        let n = state.times.len();
        let gap = if n > 1 {
            (state.times[n - 1] - state.times[0]) / (n - 1) as f64
        } else {
            1.0
        };
        default_steps(((t_end - t_start).abs() / gap).round() as usize)
    });
    let source = read_points(&a.source)?;
    let target = read_points(&a.target)?;
    let flow = flow_points(&source.vertices, &state.v, t_start, t_end, steps)?;
    let matching = nearest_match(&flow.end_points, &target.vertices)?;

    let mut run = RunManifest::new("match");
    let csv_path = g.out.join("matching.csv");
    std::fs::write(&csv_path, matching.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    run.artifacts.push(csv_path);
    let mean_residual = matching.residuals.iter().sum::<f64>() / matching.len().max(1) as f64;
    let mut summary = json!({
        "points": matching.len(),
        "t_start": t_start,
        "t_end": t_end,
        "steps": steps,
        "mean_residual": mean_residual,
    });

    if let Some(truth_path) = &a.truth {
        let truth = read_truth(truth_path)?;
        if target.triangles.is_empty() {
            return Err(Error::Config("geodesic errors need a triangulated --target".into()));
        }
        let geo = MeshGeodesics::new(&target)?;
        let errors = geodesic_errors(&matching.targets, &truth, &geo)?;
        let curve = matching_curve(&errors.errors, &uniform_thresholds(100))?;
        let err_path = g.out.join("geodesic_errors.csv");
        let mut text = String::from("source_index,error\n");
        for (i, e) in errors.errors.iter().enumerate() {
            text.push_str(&format!("{i},{e:e}\n"));
        }
        std::fs::write(&err_path, text).map_err(|e| Error::io(&err_path, e))?;
        let curve_path = g.out.join("matching_curve.csv");
        std::fs::write(&curve_path, curve.to_csv()).map_err(|e| Error::io(&curve_path, e))?;
        run.artifacts.extend([err_path, curve_path]);
        summary["mean_geodesic_error"] = json!(errors.errors.iter().sum::<f64>() / errors.errors.len().max(1) as f64);
        summary["disconnected"] = json!(errors.n_disconnected);
        summary["fraction_below_0.1"] = json!(curve.fractions[10]);
    }
    println!("mean residual {mean_residual:?}");
    run.summary = summary;
    run.write(&g.out)?;
    Ok(())
}

fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let pred = read_points(&a.pred)?;
    let gt = read_points(&a.gt)?;
    let kind = if a.squared { ChamferKind::Squared } else { ChamferKind::Euclidean };
    let seed = g.seed.unwrap_or(0);
    let (value, mode) = if !pred.triangles.is_empty() && !gt.triangles.is_empty() {
        (mesh_chamfer(&pred, &gt, a.samples, seed, kind)?, "surface samples")
    } else {
        (chamfer_with(&pred.vertices, &gt.vertices, kind)?, "vertices")
    };
    println!("chamfer {value:?}");
    let mut run = RunManifest::new("eval");
    run.seed = Some(seed);
    run.summary = json!({ "chamfer": value, "squared": a.squared, "mode": mode, "samples": a.samples });
    run.write(&g.out)?;
    Ok(())
}
