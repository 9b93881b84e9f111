use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cqfield::checkpoint::Checkpoint;
use cqfield::config::TrainConfig;
use cqfield::encoding::CoordMode;
use cqfield::field::GeometryKind;
use cqfield::golden;
use cqfield::grid::GridSpec;
use cqfield::manifest::RunManifest;
use cqfield::scene::{image_file_name, Dataset, RigSpec, SceneDef, Shape};
use cqfield::stats::{export_stats, ratios, StatsConfig, StatsRun};
use cqfield::surface::{chamfer, default_level, extract_mesh, sample_surface, TriMesh};
use cqfield::train::{train, write_train_log, Trainer};
use cqfield::Error;

const CHECKPOINT: &str = "checkpoint.bin";
const TRAIN_LOG: &str = "train_log.csv";
const STATS: &str = "stats.csv";
const MESH: &str = "mesh.obj";
const CHAMFER: &str = "chamfer.json";
const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "cqfield", version, about = "Neural implicit fields with quantized coordinates")]
struct Cli {
    /// Worker threads; 1 is the reference for bit-exact reruns.
    #[arg(long, global = true, env = "CQFIELD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Render a synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Train a field on a dataset.
    Train(TrainArgs),
    /// Count unique coordinates and multi-view consistency triggers.
    Stats(StatsArgs),
    /// Extract a mesh from a checkpoint with marching cubes.
    Extract(ExtractArgs),
    /// Chamfer distance between a mesh and the dataset's ground-truth surface.
    Eval(EvalArgs),
    /// Train and evaluate one model per grid resolution.
    AblateResolution(AblateArgs),
    /// Check output files against a run manifest.
    Verify(VerifyArgs),
    /// Run golden regression cases.
    Repro(ReproArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Sphere,
    Box,
    Torus,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    shape: ShapeArg,
    /// Scene JSON file; replaces --shape.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    res: u32,
    #[arg(long, default_value_t = 2.5)]
    radius: f64,
    #[arg(long, default_value_t = 25.0)]
    elevation: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    #[arg(long, default_value_t = 256)]
    grid_res: u64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    grid_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    grid_hi: f64,
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Clone, Default)]
struct Overrides {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<CoordMode>,
    #[arg(long)]
    grid_res: Option<u64>,
    #[arg(long)]
    compositing: Option<GeometryKind>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Monitored rays.
    #[arg(long, default_value_t = 1024)]
    monitor: usize,
    /// Monitored iterations.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 10)]
    row_every: usize,
    /// Continuous trigger distance as a fraction of the grid interval.
    #[arg(long, default_value_t = 1.0 / 16.0)]
    threshold_frac: f64,
    /// Train the field in lockstep with the monitored iterations.
    #[arg(long)]
    with_training: bool,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Marching-cubes cells per axis.
    #[arg(long, default_value_t = 128)]
    mc_res: usize,
    /// Level of the extracted set; 0.5 for occupancy by default.
    #[arg(long)]
    level: Option<f64>,
    /// How lattice points are fed to the network; defaults to the training mode.
    #[arg(long)]
    coord_mode: Option<CoordMode>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Points sampled on each surface.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated resolutions; `inf` trains in continuous mode.
    #[arg(long, default_value = "16,64,256,1024,inf")]
    resolutions: String,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value_t = 128)]
    mc_res: usize,
    #[arg(long, default_value_t = 100_000)]
    eval_samples: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Output directory holding manifest.json.
    dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReproArgs {
    #[arg(long, default_value = "golden/cases.json")]
    cases: PathBuf,
    /// Scratch directory for case outputs.
    #[arg(long)]
    work: PathBuf,
    /// Run only cases whose name contains this string.
    #[arg(long)]
    only: Option<String>,
}

/// Failure classes with their process exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::NonFinite(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    if a.views < 2 {
        return Err(usage(format!("--views must be at least 2, got {}", a.views)));
    }
    if a.res == 0 {
        return Err(usage("--res must be positive"));
    }
    if a.out.exists() {
        let non_empty = fs::read_dir(&a.out)
            .map_err(|e| Error::file(&a.out, e))?
            .next()
            .is_some();
        if non_empty && !a.force {
            return Err(Failure::Data(format!(
                "{}: directory is not empty (use --force)",
                a.out.display()
            )));
        }
    }
    let scene = match &a.scene {
        Some(p) => cqfield::io::read_json::<SceneDef>(p)?,
        None => SceneDef::with_shape(match a.shape {
            ShapeArg::Sphere => Shape::Sphere { radius: 0.5 },
            ShapeArg::Box => Shape::Box {
                half_extents: [0.4, 0.3, 0.35],
            },
            ShapeArg::Torus => Shape::Torus {
                major: 0.5,
                minor: 0.18,
            },
        }),
    };
    let grid = GridSpec::new(a.grid_lo, a.grid_hi, a.grid_res).map_err(|e| usage(e.to_string()))?;
    let rig = RigSpec {
        views: a.views,
        resolution: a.res,
        radius: a.radius,
        elevation_deg: a.elevation,
        fov_deg: a.fov,
    };
    let manifest = RunManifest::begin(argv(), None, None);
    let ds = Dataset::synthesize(scene, rig.build()?, grid)?;
    prepare_out(&a.out)?;
    ds.save(&a.out)?;
    let images: Vec<String> = (0..a.views).map(|n| format!("images/{}", image_file_name(n))).collect();
    let mut files = vec!["cameras.json", "scene.json", "grid.json"];
    files.extend(images.iter().map(String::as_str));
    manifest.finish(&a.out, &files)?;
    log::info!("wrote {} views to {}", a.views, a.out.display());
    Ok(())
}

/// Dataset defaults, then the config file, then flags.
fn resolve_config(ds: &Dataset, o: &Overrides) -> Result<(TrainConfig, Option<String>), Failure> {
    let mut cfg = TrainConfig {
        grid: ds.grid,
        background: ds.scene.background,
        ..TrainConfig::default()
    };
    let text = match &o.config {
        Some(p) => {
            let t = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            cfg.apply_text(&t).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Some(t)
        }
        None => None,
    };
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if let Some(r) = o.grid_res {
        cfg.grid.resolution = r;
    }
    if let Some(k) = o.compositing {
        cfg.compositing = k;
    }
    if let Some(v) = o.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = o.batch_rays {
        cfg.batch_rays = v;
    }
    if let Some(v) = o.samples {
        cfg.samples_per_ray = v;
    }
    if let Some(v) = o.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v).map_err(|e| usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, text))
}

fn echo_config(out: &Path, text: &Option<String>, files: &mut Vec<&'static str>) -> Result<(), Failure> {
    if let Some(t) = text {
        cqfield::io::write_atomic(&out.join(CONFIG_ECHO), t.as_bytes())?;
        files.push(CONFIG_ECHO);
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let ds = Dataset::load(&a.data)?;
    let (cfg, text) = resolve_config(&ds, &a.overrides)?;
    let manifest = RunManifest::begin(argv(), Some(cfg.seed), Some(cfg.to_text()));
    prepare_out(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT);
    let every = cfg.checkpoint_every;
    let outcome = train(&ds, &cfg, |it, params| {
        if every > 0 && it % every == 0 {
            Checkpoint {
                config: cfg.clone(),
                params: params.clone(),
            }
            .save(&ck_path)?;
        }
        Ok(())
    })?;
    Checkpoint {
        config: cfg.clone(),
        params: outcome.params.clone(),
    }
    .save(&ck_path)?;
    write_train_log(&a.out.join(TRAIN_LOG), &outcome.log)?;
    let mut files = vec![CHECKPOINT, TRAIN_LOG];
    echo_config(&a.out, &text, &mut files)?;
    manifest.finish(&a.out, &files)?;
    if let Some(r) = outcome.log.last() {
        println!(
            "iter {} loss {:.6} psnr {:.3} dB (view {}{})",
            r.iteration,
            r.loss,
            r.psnr,
            outcome.psnr_view,
            if outcome.held_out { ", held out" } else { "" }
        );
    }
    Ok(())
}

fn stats_cmd(a: StatsArgs) -> CmdResult {
    if a.monitor == 0 {
        return Err(usage("--monitor must be positive"));
    }
    if a.steps == 0 || a.row_every == 0 {
        return Err(usage("--steps and --row-every must be positive"));
    }
    if !(a.threshold_frac > 0.0) {
        return Err(usage("--threshold-frac must be positive"));
    }
    let ds = Dataset::load(&a.data)?;
    let (mut cfg, text) = resolve_config(&ds, &a.overrides)?;
    cfg.iterations = a.steps;
    let manifest = RunManifest::begin(argv(), Some(cfg.seed), Some(cfg.to_text()));
    prepare_out(&a.out)?;
    let stats_cfg = StatsConfig {
        iterations: a.steps,
        monitor_size: a.monitor,
        samples_per_ray: cfg.samples_per_ray,
        threshold_frac: a.threshold_frac,
        row_every: a.row_every,
        seed: cfg.seed,
    };
    let mut run = StatsRun::new(&ds, cfg.grid, stats_cfg)?;
    log::info!("{} of {} monitored rays hit the surface", run.hitting_rays(), a.monitor);
    let mut trainer = if a.with_training {
        Some(Trainer::new(&ds, &cfg)?)
    } else {
        None
    };
    let rows = run.run(|_| {
        if let Some(t) = trainer.as_mut() {
            t.step()?;
        }
        Ok(())
    })?;
    export_stats(&rows, &a.out.join(STATS))?;
    let mut files = vec![STATS, "ratios.json"];
    let last = rows.last().expect("at least one step");
    let r = ratios(last);
    cqfield::io::write_json(
        &a.out.join("ratios.json"),
        &serde_json::json!({
            "iteration": last.iteration,
            "unique_ratio": r.unique_ratio,
            "consistency_ratio": r.consistency_ratio,
        }),
    )?;
    if let Some(t) = trainer {
        let outcome = t.finish();
        Checkpoint {
            config: cfg.clone(),
            params: outcome.params,
        }
        .save(&a.out.join(CHECKPOINT))?;
        write_train_log(&a.out.join(TRAIN_LOG), &outcome.log)?;
        files.extend([CHECKPOINT, TRAIN_LOG]);
    }
    echo_config(&a.out, &text, &mut files)?;
    manifest.finish(&a.out, &files)?;
    println!(
        "iter {}: uniq_cont {} uniq_disc {} cons_cont {} cons_disc {} | unique ratio {:.3} consistency ratio {:.4}",
        last.iteration,
        last.unique_continuous,
        last.unique_discrete,
        last.consistency_continuous,
        last.consistency_discrete,
        r.unique_ratio,
        r.consistency_ratio
    );
    Ok(())
}

fn extract_cmd(a: ExtractArgs) -> CmdResult {
    if a.mc_res < 8 {
        return Err(usage(format!("--mc-res must be at least 8, got {}", a.mc_res)));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let kind = ck.params.architecture().geometry;
    let level = a.level.unwrap_or_else(|| default_level(kind));
    if kind == GeometryKind::Occupancy && !(level > 0.0 && level < 1.0) {
        return Err(usage(format!("--level must lie in (0, 1) for occupancy fields, got {level}")));
    }
    let mode = a.coord_mode.unwrap_or(ck.config.mode);
    let manifest = RunManifest::begin(argv(), Some(ck.config.seed), Some(ck.config.to_text()));
    prepare_out(&a.out)?;
    let mesh = extract_mesh(&ck.params, &ck.config.encoder()?, a.mc_res, level, mode)?;
    if mesh.is_empty() {
        eprintln!("warning: the field does not cross level {level}; mesh is empty");
    }
    mesh.save_obj(&a.out.join(MESH))?;
    manifest.finish(&a.out, &[MESH])?;
    println!(
        "{} vertices, {} triangles ({} lattice points per axis, {mode} coordinates)",
        mesh.vertices.len(),
        mesh.triangles.len(),
        a.mc_res + 1
    );
    Ok(())
}

fn eval_mesh(mesh: &TriMesh, ds: &Dataset, samples: usize, seed: u64) -> Result<cqfield::surface::ChamferReport, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = sample_surface(mesh, samples, &mut rng)?;
    let gt = ds.scene.sample_surface(samples, &mut rng);
    Ok(chamfer(&pred, &gt)?)
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let mesh = TriMesh::load_obj(&a.mesh)?;
    let ds = Dataset::load(&a.data)?;
    let manifest = RunManifest::begin(argv(), Some(a.seed), None);
    let report = eval_mesh(&mesh, &ds, a.samples, a.seed)?;
    prepare_out(&a.out)?;
    cqfield::io::write_json(&a.out.join(CHAMFER), &report)?;
    manifest.finish(&a.out, &[CHAMFER])?;
    println!(
        "accuracy {:.6} completeness {:.6} chamfer {:.6}",
        report.accuracy, report.completeness, report.chamfer
    );
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> CmdResult {
    let ds = Dataset::load(&a.data)?;
    let (base, text) = resolve_config(&ds, &a.overrides)?;
    let entries: Vec<(String, Option<u64>)> = a
        .resolutions
        .split(',')
        .map(|s| {
            let s = s.trim();
            if s == "inf" {
                Ok((s.to_string(), None))
            } else {
                s.parse::<u64>()
                    .map(|r| (s.to_string(), Some(r)))
                    .map_err(|_| usage(format!("--resolutions: cannot parse '{s}'")))
            }
        })
        .collect::<Result<_, _>>()?;
    if entries.is_empty() {
        return Err(usage("--resolutions is empty"));
    }
    let manifest = RunManifest::begin(argv(), Some(base.seed), Some(base.to_text()));
    prepare_out(&a.out)?;
    let mut csv = String::from("resolution,chamfer\n");
    for (label, res) in entries {
        let mut cfg = base.clone();
        match res {
            Some(r) => cfg.grid.resolution = r,
            None => cfg.mode = CoordMode::Continuous,
        }
        cfg.validate().map_err(|e| usage(format!("resolution {label}: {e}")))?;
        let outcome = train(&ds, &cfg, |_, _| Ok(()))?;
        let level = default_level(cfg.compositing);
        let mesh = extract_mesh(&outcome.params, &cfg.encoder()?, a.mc_res, level, cfg.mode)?;
        let value = if mesh.is_empty() {
            log::warn!("resolution {label}: empty mesh");
            f64::INFINITY
        } else {
            eval_mesh(&mesh, &ds, a.eval_samples, cfg.seed)?.chamfer
        };
        println!("resolution {label}: chamfer {value:.6}");
        csv.push_str(&format!("{label},{value}\n"));
    }
    cqfield::io::write_atomic(&a.out.join("ablation.csv"), csv.as_bytes())?;
    let mut files = vec!["ablation.csv"];
    echo_config(&a.out, &text, &mut files)?;
    manifest.finish(&a.out, &files)?;
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> CmdResult {
    let m = RunManifest::load(&a.dir)?;
    let bad = m.verify(&a.dir);
    for o in &m.outputs {
        let status = if bad.iter().any(|(f, _)| f == &o.file) { "MISMATCH" } else { "ok" };
        println!("{status:>8}  {}", o.file);
    }
    if bad.is_empty() {
        Ok(())
    } else {
        let detail: Vec<String> = bad.iter().map(|(f, why)| format!("{f}: {why}")).collect();
        Err(Failure::Data(format!("checksum verification failed: {}", detail.join("; "))))
    }
}

fn repro_cmd(a: ReproArgs) -> CmdResult {
    let cases = golden::load_cases(&a.cases)?;
    let bin = std::env::current_exe().map_err(|e| Failure::Data(e.to_string()))?;
    let cwd = std::env::current_dir().map_err(|e| Failure::Data(e.to_string()))?;
    let mut failed = 0;
    for case in cases
        .iter()
        .filter(|c| a.only.as_ref().is_none_or(|o| c.name.contains(o.as_str())))
    {
        let work = a.work.join(&case.name);
        let r = golden::run_case(case, &bin, &cwd, &work)?;
        println!(
            "{} {} (criterion {}, {:.1}s of {}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            case.criterion,
            r.seconds,
            case.runtime_bound_s
        );
        for d in &r.details {
            println!("    {d}");
        }
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        Err(Failure::Data(format!("{failed} golden case(s) failed")))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Cmd::Synth(a) => synth(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Stats(a) => stats_cmd(a),
        Cmd::Extract(a) => extract_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::AblateResolution(a) => ablate_cmd(a),
        Cmd::Verify(a) => verify_cmd(a),
        Cmd::Repro(a) => repro_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
