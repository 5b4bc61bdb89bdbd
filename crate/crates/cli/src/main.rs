use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use layersplat::editing::{animate, attach_entity, color_by_name, edit_color, transfer_garment, ColorEdit, TransferConfig};
use layersplat::harness::{
    bench_render, bundle_frames, evaluate, gradcheck, layer_contact, make_scene, perturb_model, psnr, MetricsReport,
    Perturbation, SceneSpec,
};
use layersplat::io::{
    atomic_write, load_bundle, load_cameras, load_checkpoint, load_png, load_poses, load_template, save_bundle,
    save_checkpoint, save_png, Checkpoint, RunConfig,
};
use layersplat::losses::{ssim, SsimParams};
use layersplat::model::Model;
use layersplat::splatting::RenderSettings;
use layersplat::training::{TrainData, TrainState};

#[derive(Parser)]
#[command(name = "layersplat", version, about = "Layered articulated Gaussian avatars")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle and a recommended run.toml.
    MakeScene(MakeSceneArgs),
    /// Fit a layered model to a scene bundle.
    Train(TrainArgs),
    /// Render one frame of a checkpoint.
    Render(RenderArgs),
    /// Render a checkpoint over a pose sequence.
    Animate(AnimateArgs),
    /// Recolor one entity.
    EditColor(EditColorArgs),
    /// Move a garment onto another body.
    Transfer(TransferArgs),
    /// Compare predicted images against ground truth.
    Metrics(MetricsArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct MakeSceneArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    train_views: usize,
    #[arg(long, default_value_t = 6)]
    test_views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 100.0)]
    focal: f64,
    #[arg(long, default_value_t = 800)]
    body_gaussians: usize,
    #[arg(long, default_value_t = 600)]
    garment_gaussians: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Isolation,
    Joint,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML). Flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene bundle directory.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory for the loss log, checkpoints and metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    phase: PhaseArg,
    /// Start from this checkpoint.
    #[arg(long, conflicts_with = "from_gt")]
    init: Option<PathBuf>,
    /// Start from the bundle's ground-truth model.
    #[arg(long)]
    from_gt: bool,
    /// Add seeded noise to the starting model.
    #[arg(long)]
    perturb: Option<u64>,
    #[arg(long)]
    isolation_epochs: Option<usize>,
    #[arg(long)]
    joint_epochs: Option<usize>,
    /// Time a 540x540, 20k-Gaussian forward render and include it in the report.
    #[arg(long)]
    bench: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera file; `--frame` picks the line.
    #[arg(long)]
    camera: PathBuf,
    /// Pose file; a single pose is used for every frame.
    #[arg(long)]
    pose: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, value_parser = parse_unit_rgb, default_value = "0,0,0")]
    background: [f64; 3],
    /// Also write one opacity PNG per entity next to the output.
    #[arg(long)]
    alpha: bool,
}

#[derive(Args)]
struct AnimateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One camera, or one per pose.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Output directory for ####.png frames.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_unit_rgb, default_value = "0,0,0")]
    background: [f64; 3],
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("edit").required(true).args(["rgb", "name", "swap"]))]
struct EditColorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    entity: String,
    /// New color as 0-255 components.
    #[arg(long, value_parser = parse_byte_rgb)]
    rgb: Option<[f64; 3]>,
    /// New color by name (e.g. crimson).
    #[arg(long)]
    name: Option<String>,
    /// Exchange two channels, 0 = R, 1 = G, 2 = B.
    #[arg(long, value_parser = parse_swap)]
    swap: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Checkpoint holding the garment.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Body template the source checkpoint was fitted on.
    #[arg(long)]
    source_template: PathBuf,
    #[arg(long)]
    garment: String,
    /// Checkpoint of the body that receives the garment.
    #[arg(long)]
    target_body: PathBuf,
    #[arg(long)]
    target_template: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Predicted PNG, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth PNG, or a directory with the same file names.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
}

/// A failure and the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<layersplat::Error> for Failure {
    fn from(e: layersplat::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => Err(format!("expected three comma-separated numbers, got {}", v.len())),
    }
}

fn parse_byte_rgb(s: &str) -> Result<[f64; 3], String> {
    let c = parse_triple(s)?;
    if c.iter().any(|v| !(0.0..=255.0).contains(v)) {
        return Err("components must be within 0..=255".into());
    }
    Ok(c)
}

fn parse_unit_rgb(s: &str) -> Result<[f64; 3], String> {
    let c = parse_triple(s)?;
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err("components must be within 0..=1".into());
    }
    Ok(c)
}

fn parse_swap(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two channel indices like 0,2")?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| "bad channel")?, b.trim().parse().map_err(|_| "bad channel")?);
    if a > 2 || b > 2 {
        return Err("channels are 0, 1 or 2".into());
    }
    Ok((a, b))
}

/// Rejects a missing input path as a usage error naming its flag.
fn input(flag: &str, path: &Path) -> Result<(), Failure> {
    if !path.exists() {
        return Err(Failure::Usage(format!("{flag}: '{}' does not exist", path.display())));
    }
    Ok(())
}

fn load_model(flag: &str, path: &Path) -> Result<Model, Failure> {
    input(flag, path)?;
    Ok(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?.model)
}

fn write_model(path: &Path, model: Model) -> Outcome {
    save_checkpoint(path, &Checkpoint { model, iteration: 0 })?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn make_scene_cmd(a: MakeSceneArgs) -> Outcome {
    let mut spec = SceneSpec {
        seed: a.seed,
        train_views: a.train_views,
        test_views: a.test_views,
        width: a.width,
        height: a.height,
        focal: a.focal,
        body_gaussians: a.body_gaussians,
        ..Default::default()
    };
    spec.garments.iter_mut().for_each(|g| g.gaussians = a.garment_gaussians);
    let scene = make_scene(&spec)?;
    save_bundle(&a.out, &scene.to_bundle())?;
    let mut cfg = RunConfig { scene: Some(".".into()), out: Some("run".into()), ..Default::default() };
    cfg.train.isolation_epochs = 300;
    cfg.train.joint_epochs = 200;
    cfg.train.log_interval = 500;
    cfg.train.background = spec.background;
    cfg.save(&a.out.join("run.toml"))?;
    eprintln!("wrote scene with {} frames to {}", scene.train.len() + scene.test.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let started = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => {
            input("--config", p)?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = a.scene {
        cfg.scene = Some(s);
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    if let Some(i) = a.init {
        cfg.init_checkpoint = Some(i);
    }
    if let Some(n) = a.isolation_epochs {
        cfg.train.isolation_epochs = n;
    }
    if let Some(n) = a.joint_epochs {
        cfg.train.joint_epochs = n;
    }
    cfg.validate()?;
    let scene_dir = cfg.scene.clone().ok_or_else(|| Failure::Usage("--scene: no scene given here or in the config".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Failure::Usage("--out: no output directory given here or in the config".into()))?;
    input("--scene", &scene_dir)?;
    let bundle = load_bundle(&scene_dir)?;
    let (train, test) = bundle_frames(&bundle);
    if train.is_empty() {
        return Err(anyhow!("scene {} has no training frames", scene_dir.display()).into());
    }

    let mut model = match (&cfg.init_checkpoint, a.from_gt) {
        (Some(p), _) => load_model("--init", p)?,
        (None, true) => bundle.gt.clone().ok_or_else(|| anyhow!("scene has no gt.ckpt"))?,
        (None, false) => {
            let garments = if cfg.garments.is_empty() { &bundle.info.garments } else { &cfg.garments };
            Model::from_templates(&bundle.template, garments, &cfg.init)?
        }
    };
    if let Some(seed) = a.perturb {
        model = perturb_model(&model, &Perturbation::default(), seed);
    }
    if model.names() != bundle.info.entities {
        return Err(anyhow!("model entities {:?} do not match the scene's {:?}", model.names(), bundle.info.entities).into());
    }

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(&out.join("config.toml"))?;
    let settings = cfg.train.render.clone();
    let background = cfg.train.background;
    let mut state = TrainState::new(model, cfg.train.clone(), cfg.loss.clone())?.with_output(&out)?;
    let body = (&bundle.template.rest_vertices[..], &bundle.template.weights);
    let data = TrainData { frames: &train, body_surface: Some(body) };
    let mut final_loss = None;
    if a.phase != PhaseArg::Joint {
        final_loss = Some(state.run_isolation(&data)?.final_loss.total);
    }
    if a.phase != PhaseArg::Isolation {
        final_loss = Some(state.run_joint(&data)?.final_loss.total);
    }
    state.flush()?;
    state.save("final.ckpt")?;

    let model = &state.model;
    let contact = layer_contact(model, body, &train[0].pose, cfg.loss.collision_margin, cfg.loss.collision_radius)?;
    let report = MetricsReport {
        held_out: if test.is_empty() { None } else { Some(evaluate(model, &test, background, &settings)?) },
        train: Some(evaluate(model, &train, background, &settings)?),
        gaussians: model.entities.iter().map(|e| (e.name().to_string(), e.set.len())).collect::<BTreeMap<_, _>>(),
        iterations: state.iteration,
        final_loss,
        min_clearance: contact.min_clearance,
        render_bench: if a.bench { Some(bench_render(20_000, 540, 540, 8, 5, 0)?) } else { None },
        wall_seconds: started.elapsed().as_secs_f64(),
        available_threads: rayon::current_num_threads(),
    };
    let json = report.to_json();
    atomic_write(&out.join("metrics.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Outcome {
    input("--checkpoint", &a.checkpoint)?;
    input("--camera", &a.camera)?;
    input("--pose", &a.pose)?;
    let model = load_model("--checkpoint", &a.checkpoint)?;
    let cams = load_cameras(&a.camera)?;
    let poses = load_poses(&a.pose)?;
    let cam = cams.get(a.frame).ok_or_else(|| Failure::Usage(format!("--frame: {} is past the {} cameras", a.frame, cams.len())))?;
    let pose = match poses.len() {
        1 => &poses[0],
        _ => poses.get(a.frame).ok_or_else(|| Failure::Usage(format!("--frame: {} is past the {} poses", a.frame, poses.len())))?,
    };
    let out = model.render(pose, &cam.camera, a.background, &RenderSettings::default())?;
    save_png(&a.out, &out.color)?;
    if a.alpha {
        let stem = a.out.with_extension("");
        for (name, img) in model.names().iter().zip(&out.entity_alpha) {
            save_png(&PathBuf::from(format!("{}_{name}.png", stem.display())), img)?;
        }
    }
    Ok(())
}

fn animate_cmd(a: AnimateArgs) -> Outcome {
    input("--checkpoint", &a.checkpoint)?;
    input("--camera", &a.camera)?;
    input("--poses", &a.poses)?;
    let model = load_model("--checkpoint", &a.checkpoint)?;
    let cams: Vec<_> = load_cameras(&a.camera)?.into_iter().map(|c| c.camera).collect();
    let poses = load_poses(&a.poses)?;
    let frames = animate(&model, &poses, &cams, a.background, &RenderSettings::default())?;
    for (i, img) in frames.iter().enumerate() {
        save_png(&a.out.join(format!("{i:04}.png")), img)?;
    }
    eprintln!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn edit_color_cmd(a: EditColorArgs) -> Outcome {
    let model = load_model("--checkpoint", &a.checkpoint)?;
    let edit = match (a.rgb, a.name, a.swap) {
        (Some(c), _, _) => ColorEdit::Replace(c),
        (_, Some(n), _) => ColorEdit::Replace(color_by_name(&n).map_err(|e| Failure::Usage(format!("--name: {e}")))?),
        (_, _, Some((i, j))) => ColorEdit::Swap(i, j),
        _ => unreachable!("clap requires one edit"),
    };
    if model.index_of(&a.entity).is_err() {
        return Err(Failure::Usage(format!("--entity: no entity '{}' (have {:?})", a.entity, model.names())));
    }
    write_model(&a.out, edit_color(&model, &a.entity, &edit)?)
}

fn transfer_cmd(a: TransferArgs) -> Outcome {
    input("--checkpoint", &a.checkpoint)?;
    input("--source-template", &a.source_template)?;
    input("--target-body", &a.target_body)?;
    input("--target-template", &a.target_template)?;
    let source = load_model("--checkpoint", &a.checkpoint)?;
    let target = load_model("--target-body", &a.target_body)?;
    let src_t = load_template(&a.source_template)?;
    let tgt_t = load_template(&a.target_template)?;
    let g = source
        .index_of(&a.garment)
        .map_err(|_| Failure::Usage(format!("--garment: no entity '{}' in the source", a.garment)))?;
    if g == 0 {
        return Err(Failure::Usage("--garment: the first entity is the body".into()));
    }
    let mut cfg = TransferConfig::default();
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let (garment, report) = transfer_garment(&source.entities[g], &src_t.rest_vertices, &source.skeleton, &tgt_t, &cfg)?;
    write_model(&a.out, attach_entity(&target, garment)?)?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    Ok(())
}

fn png_pairs(pred: &Path, gt: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    if pred.is_file() {
        return Ok(vec![(pred.to_path_buf(), gt.to_path_buf())]);
    }
    let mut names: Vec<_> = std::fs::read_dir(pred)
        .with_context(|| format!("reading {}", pred.display()))?
        .filter_map(|e| e.ok().map(|e| e.file_name()))
        .filter(|n| n.to_string_lossy().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no PNG files in {}", pred.display());
    }
    Ok(names.into_iter().map(|n| (pred.join(&n), gt.join(&n))).collect())
}

fn metrics_cmd(a: MetricsArgs) -> Outcome {
    input("--pred", &a.pred)?;
    input("--gt", &a.gt)?;
    let pairs = png_pairs(&a.pred, &a.gt)?;
    let (mut p, mut s) = (0.0, 0.0);
    for (x, y) in &pairs {
        let (x, y) = (load_png(x, 3)?, load_png(y, 3)?);
        p += psnr(&x, &y)?;
        s += ssim(&x, &y, &SsimParams::default())?;
    }
    let n = pairs.len() as f64;
    let report = serde_json::json!({ "frames": pairs.len(), "psnr": p / n, "ssim": s / n });
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Outcome {
    let results = gradcheck::run(a.scenes, a.seed, a.h)?;
    for r in &results {
        println!(
            "{:<14} scenes {:>3}  max rel err {:.3e}  tol {:.0e}  {}",
            r.suite,
            r.scenes,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    if results.iter().any(|r| !r.passed) {
        return Err(anyhow!("gradient check failed").into());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::MakeScene(a) => make_scene_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Animate(a) => animate_cmd(a),
        Command::EditColor(a) => edit_color_cmd(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
