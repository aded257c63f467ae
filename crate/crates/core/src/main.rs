use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use orbitalsplat::config::{PipelineConfig, ENDPOINT_ENV};
use orbitalsplat::dataset::{
    assign_splits, chunk_manifests, load_views, model_id_of, render_dataset, view_file_name, CorpusEntry, CorpusIndex,
    DatasetManifest, FineTuningNotes, INDEX_FILE, MANIFEST_FILE,
};
use orbitalsplat::gaussians::{render, GaussianCloud};
use orbitalsplat::geometry::{generate_paper_views, CameraIntrinsics, CameraPose};
use orbitalsplat::guidance::client::{GuidanceClient, RemoteGuidance};
use orbitalsplat::guidance::{axis_view_names, view_name, GroundTruthGuidance, GuidanceError, GuidanceProvider};
use orbitalsplat::imageops::{alpha_matte, recenter_resize, resize_bilinear, ImageRGBA};
use orbitalsplat::meshextract::{extract_textured_mesh, orbit_bake_views, write_textured_mesh};
use orbitalsplat::metrics::evaluate_pairs;
use orbitalsplat::reconstruct::{optimize, trace_to_csv, ReconstructError, ReferencePose};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "orbitalsplat", version, about = "Orbit datasets, Gaussian-splat reconstruction, meshing and evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Render the 48-view orbit dataset for every .obj in a directory.
    Dataset {
        models: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        n_validation: Option<usize>,
        #[arg(long)]
        n_chunks: Option<usize>,
    },
    /// Reconstruct a Gaussian cloud from one image.
    Reconstruct {
        image: PathBuf,
        out_dir: PathBuf,
        /// `ground-truth <dataset dir>` or `remote <url>`.
        #[arg(long, num_args = 2, value_names = ["KIND", "SOURCE"], required = true)]
        guidance: Vec<String>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Dataset view (e.g. xy_02) whose pose is the reference camera.
        #[arg(long)]
        reference_view: Option<String>,
        /// Comma-separated view names withheld from ground-truth guidance, or `axis`.
        #[arg(long, value_delimiter = ',')]
        hold_out: Vec<String>,
    },
    /// Extract a textured mesh from a Gaussian cloud.
    Mesh {
        cloud: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        iso: Option<f64>,
        #[arg(long)]
        atlas_size: Option<u32>,
    },
    /// Render a cloud (.bin/.txt) or mesh (.obj) from a pose set.
    RenderViews {
        input: PathBuf,
        out_dir: PathBuf,
        /// `orbit` for the 48 orbit poses, or a dataset manifest to reuse its cameras and file names.
        #[arg(long, default_value = "orbit")]
        poses: String,
    },
    /// Score predicted images against same-named ground truth.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        /// Metrics service for LPIPS/CLIP; defaults to the config file, then $ORBITALSPLAT_ENDPOINT.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "evaluation")]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
    Unreachable(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Run(_) => EXIT_FAILURE,
            Failure::Unreachable(_) => EXIT_UNREACHABLE,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_millis().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => error!("invalid arguments: {m}"),
                Failure::Run(m) => error!("{m}"),
                Failure::Unreachable(m) => error!("guidance service unreachable: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

/// Defaults, then the config file, then global flags. The returned text is the
/// raw file content, if any.
fn load_config(global: &GlobalArgs) -> Result<(PipelineConfig, String), Failure> {
    let (mut cfg, text) = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            (PipelineConfig::from_toml(&text, path).map_err(|e| Failure::Usage(e.to_string()))?, text)
        }
        None => (PipelineConfig::default(), String::new()),
    };
    if cfg.service.base_url.is_empty() {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            cfg.service.base_url = url;
        }
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = jobs;
    }
    Ok((cfg.with_seed(), text))
}

fn finish_config(cfg: &PipelineConfig, out_dir: &Path) -> Result<(), Failure> {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.jobs > 0 {
        // a second call in the same process only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    cfg.write_resolved(out_dir).map_err(run_err)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (mut cfg, text) = load_config(&cli.global)?;
    match cli.command {
        Command::Dataset { models, out_dir, n_validation, n_chunks } => {
            if let Some(n) = n_validation {
                cfg.dataset.n_validation = n;
            }
            if let Some(n) = n_chunks {
                cfg.dataset.n_chunks = n;
            }
            finish_config(&cfg, &out_dir)?;
            cmd_dataset(&cfg, &models, &out_dir)
        }
        Command::Reconstruct { image, out_dir, guidance, iterations, reference_view, hold_out } => {
            let source = match guidance[0].as_str() {
                "ground-truth" => GuidanceSource::GroundTruth(PathBuf::from(&guidance[1])),
                "remote" => GuidanceSource::Remote(guidance[1].clone()),
                other => return Err(Failure::Usage(format!("unknown guidance kind '{other}' (ground-truth or remote)"))),
            };
            cfg.reconstruct.iterations = match iterations {
                Some(n) => n,
                None if PipelineConfig::file_sets_iterations(&text) => cfg.reconstruct.iterations,
                None if matches!(source, GuidanceSource::Remote(_)) => 500,
                None => 2000,
            };
            if let GuidanceSource::Remote(url) = &source {
                cfg.service.base_url = url.clone();
            }
            if !hold_out.is_empty() {
                cfg.hold_out =
                    hold_out.iter().flat_map(|h| if h == "axis" { axis_view_names() } else { vec![h.clone()] }).collect();
            }
            cmd_reconstruct(cfg, &image, &out_dir, source, reference_view.as_deref())
        }
        Command::Mesh { cloud, out_dir, grid, iso, atlas_size } => {
            if let Some(g) = grid {
                cfg.mesh.grid = g;
            }
            if let Some(i) = iso {
                cfg.mesh.iso = i;
            }
            if let Some(a) = atlas_size {
                cfg.mesh.atlas_size = a;
            }
            finish_config(&cfg, &out_dir)?;
            cmd_mesh(&cfg, &cloud, &out_dir)
        }
        Command::RenderViews { input, out_dir, poses } => {
            finish_config(&cfg, &out_dir)?;
            cmd_render_views(&cfg, &input, &out_dir, &poses)
        }
        Command::Evaluate { pred_dir, gt_dir, endpoint, out } => {
            if let Some(url) = endpoint {
                cfg.service.base_url = url;
            }
            finish_config(&cfg, &out)?;
            cmd_evaluate(&cfg, &pred_dir, &gt_dir, &out)
        }
    }
}

fn cmd_dataset(cfg: &PipelineConfig, models: &Path, out_dir: &Path) -> Result<(), Failure> {
    let mut files: Vec<PathBuf> = if models.is_dir() {
        std::fs::read_dir(models)
            .map_err(|e| Failure::Usage(format!("{}: {e}", models.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
            .collect()
    } else {
        vec![models.to_path_buf()]
    };
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .obj files in {}", models.display())));
    }
    if cfg.dataset.n_validation > 0 && cfg.dataset.n_validation >= files.len() {
        return Err(Failure::Usage(format!(
            "n_validation {} must be smaller than the number of models ({})",
            cfg.dataset.n_validation,
            files.len()
        )));
    }
    let intr = cfg.render.intrinsics().map_err(Failure::Usage)?;
    let mut manifests = Vec::new();
    let mut failed = 0;
    for model in &files {
        let id = model_id_of(model);
        match render_dataset(model, &out_dir.join(&id), cfg.render.radius, &intr, &cfg.render.settings) {
            Ok(m) => {
                println!("{id}: {} views", m.views.len());
                manifests.push(m);
            }
            Err(e) => {
                println!("{id}: FAILED: {e}");
                failed += 1;
            }
        }
    }
    let ids: Vec<String> = manifests.iter().map(|m| m.model_id.clone()).collect();
    let n_validation = cfg.dataset.n_validation.min(ids.len().saturating_sub(1));
    let splits = assign_splits(&ids, n_validation, cfg.seed).map_err(run_err)?;
    for m in &mut manifests {
        m.split = splits[&m.model_id];
    }
    let chunked = chunk_manifests(&manifests, cfg.dataset.n_chunks).map_err(run_err)?;
    let mut entries = Vec::new();
    for m in &chunked {
        let rel = format!("{}/{MANIFEST_FILE}", m.model_id);
        m.save(&out_dir.join(&rel)).map_err(run_err)?;
        entries.push(CorpusEntry { model_id: m.model_id.clone(), split: m.split, chunk_index: m.chunk_index, manifest: rel });
    }
    let index = CorpusIndex {
        n_chunks: cfg.dataset.n_chunks,
        seed: cfg.seed,
        fine_tuning: FineTuningNotes { chunks: cfg.dataset.n_chunks, ..FineTuningNotes::default() },
        models: entries,
    };
    index.save(&out_dir.join(INDEX_FILE)).map_err(run_err)?;
    println!("{} models rendered, {failed} failed", chunked.len());
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} model(s) failed")));
    }
    Ok(())
}

enum GuidanceSource {
    GroundTruth(PathBuf),
    Remote(String),
}

fn guidance_failure(e: GuidanceError) -> Failure {
    if e.is_unreachable() {
        Failure::Unreachable(e.to_string())
    } else {
        Failure::Run(e.to_string())
    }
}

fn cmd_reconstruct(
    mut cfg: PipelineConfig,
    image: &Path,
    out_dir: &Path,
    source: GuidanceSource,
    reference_view: Option<&str>,
) -> Result<(), Failure> {
    let input = ImageRGBA::load_png(image).map_err(|e| Failure::Usage(e.to_string()))?;
    let target = cfg.preprocess.target;
    let (mut provider, reference): (Box<dyn GuidanceProvider>, ImageRGBA) = match &source {
        GuidanceSource::GroundTruth(dir) => {
            let (manifest, root) = DatasetManifest::load_dir_or_file(dir).map_err(|e| Failure::Usage(e.to_string()))?;
            if let Some(name) = reference_view {
                let v = manifest
                    .views
                    .iter()
                    .find(|v| view_name(v) == name)
                    .ok_or_else(|| Failure::Usage(format!("view '{name}' is not in {}", dir.display())))?;
                let pose = v.pose();
                cfg.reconstruct.reference =
                    ReferencePose { position: pose.position.into(), up: pose.up().into(), fov_y_deg: v.fov_y_deg };
            }
            finish_config(&cfg, out_dir)?;
            let views = load_views(&manifest, &root).map_err(run_err)?;
            let pose = cfg.reconstruct.reference.pose().map_err(|e| Failure::Usage(e.to_string()))?;
            let gt = GroundTruthGuidance::new(views, pose, &cfg.hold_out).map_err(|e| Failure::Usage(e.to_string()))?;
            // resize only; dataset views share the reference framing
            let reference = if input.dims() == (target, target) { input } else { resize_bilinear(&input, target, target) };
            (Box::new(gt), reference)
        }
        GuidanceSource::Remote(_) => {
            if reference_view.is_some() || !cfg.hold_out.is_empty() {
                return Err(Failure::Usage("--reference-view and --hold-out need ground-truth guidance".into()));
            }
            finish_config(&cfg, out_dir)?;
            let client = GuidanceClient::new(cfg.service.clone());
            let health = client.health().map_err(guidance_failure)?;
            info!("guidance service {} ({})", health.status, health.model);
            let matted = alpha_matte(&input, cfg.preprocess.threshold).map_err(run_err)?;
            let reference = recenter_resize(&matted, target, cfg.preprocess.border_ratio).map_err(run_err)?;
            (Box::new(RemoteGuidance { client }), reference)
        }
    };
    reference.save_png(&out_dir.join("reference.png")).map_err(run_err)?;

    let intr = CameraIntrinsics::new(cfg.reconstruct.reference.fov_y_deg, reference.width, reference.height).map_err(run_err)?;
    let ref_pose = cfg.reconstruct.reference.pose().map_err(run_err)?;
    let snapshots = out_dir.join("snapshots");
    let interval = cfg.snapshot_interval;
    let mut snapshot_error = None;
    let mut observer = |it: usize, cloud: &GaussianCloud| {
        if interval > 0 && (it + 1) % interval == 0 && snapshot_error.is_none() {
            let path = snapshots.join(format!("iter_{:05}.png", it + 1));
            let res = std::fs::create_dir_all(&snapshots)
                .map_err(|e| e.to_string())
                .and_then(|_| straight_render(cloud, &intr, &ref_pose).save_png(&path).map_err(|e| e.to_string()));
            if let Err(e) = res {
                snapshot_error = Some(e);
            }
        }
        if (it + 1) % 100 == 0 {
            info!("iteration {} / {}: {} Gaussians", it + 1, cfg.reconstruct.iterations, cloud.len());
        }
    };
    let result = optimize(&reference, provider.as_mut(), &cfg.reconstruct, Some(&mut observer));
    if let Some(e) = snapshot_error {
        warn!("snapshots: {e}");
    }
    let rec = match result {
        Ok(r) => r,
        Err(ReconstructError::Guidance(e)) => return Err(guidance_failure(e)),
        Err(ReconstructError::NonFinite { iteration, loss_ref, loss_novel, n_gaussians, state }) => {
            let dump = out_dir.join("abort_state.bin");
            if let Err(e) = state.save(&dump) {
                warn!("could not write {}: {e}", dump.display());
            }
            return Err(Failure::Run(format!(
                "optimization aborted: non-finite loss at iteration {iteration} (ref {loss_ref}, novel {loss_novel}, \
                 {n_gaussians} Gaussians); state written to {}",
                dump.display()
            )));
        }
        Err(e) => return Err(run_err(e)),
    };
    rec.cloud.save(&out_dir.join("cloud.bin")).map_err(run_err)?;
    let trace = out_dir.join("loss_trace.csv");
    std::fs::write(&trace, trace_to_csv(&rec.trace)).map_err(|e| Failure::Run(format!("{}: {e}", trace.display())))?;
    straight_render(&rec.cloud, &intr, &ref_pose).save_png(&out_dir.join("final.png")).map_err(run_err)?;
    if let Some(last) = rec.trace.last() {
        println!(
            "{} iterations, {} Gaussians, final loss_ref {:.6} loss_novel {:.6}",
            rec.trace.len(),
            rec.cloud.len(),
            last.loss_ref,
            last.loss_novel
        );
    }
    Ok(())
}

/// Render with straight (un-premultiplied) alpha, suitable for PNG output.
fn straight_render(cloud: &GaussianCloud, intr: &CameraIntrinsics, pose: &CameraPose) -> ImageRGBA {
    let mut img = render(cloud, intr, pose, [0.0; 3]).color;
    for p in &mut img.pixels {
        if p[3] > 0.0 {
            for c in 0..3 {
                p[c] = (p[c] / p[3]).clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn load_cloud(path: &Path) -> Result<GaussianCloud, Failure> {
    GaussianCloud::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_mesh(cfg: &PipelineConfig, cloud_path: &Path, out_dir: &Path) -> Result<(), Failure> {
    let cloud = load_cloud(cloud_path)?;
    let m = &cfg.mesh;
    let views = orbit_bake_views(cfg.render.fov_y_deg, cfg.render.radius, m.bake_resolution).map_err(run_err)?;
    let baked = extract_textured_mesh(&cloud, m.grid, m.iso, &views, &m.bake_settings()).map_err(run_err)?;
    write_textured_mesh(&baked, out_dir, "mesh").map_err(run_err)?;
    println!("{} vertices, {} triangles", baked.mesh.vertices.len(), baked.mesh.triangles.len());
    Ok(())
}

fn cmd_render_views(cfg: &PipelineConfig, input: &Path, out_dir: &Path, poses: &str) -> Result<(), Failure> {
    let is_mesh = input.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj"));
    if poses == "orbit" {
        let intr = cfg.render.intrinsics().map_err(Failure::Usage)?;
        if is_mesh {
            let m = render_dataset(input, out_dir, cfg.render.radius, &intr, &cfg.render.settings).map_err(run_err)?;
            println!("{} views written", m.views.len());
            return Ok(());
        }
        let cloud = load_cloud(input)?;
        std::fs::create_dir_all(out_dir).map_err(run_err)?;
        let views = generate_paper_views(cfg.render.radius).map_err(run_err)?;
        for v in &views {
            straight_render(&cloud, &intr, &v.pose).save_png(&out_dir.join(view_file_name(v.plane, v.index))).map_err(run_err)?;
        }
        println!("{} views written", views.len());
        return Ok(());
    }
    let manifest = DatasetManifest::load(Path::new(poses)).map_err(|e| Failure::Usage(e.to_string()))?;
    if is_mesh {
        return Err(Failure::Usage("manifest poses are supported for clouds only; use --poses orbit for meshes".into()));
    }
    let cloud = load_cloud(input)?;
    std::fs::create_dir_all(out_dir).map_err(run_err)?;
    for v in &manifest.views {
        straight_render(&cloud, &v.intrinsics(), &v.pose()).save_png(&out_dir.join(&v.image_path)).map_err(run_err)?;
    }
    println!("{} views written", manifest.views.len());
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<(), Failure> {
    let client = if cfg.service.base_url.is_empty() {
        None
    } else {
        let client = GuidanceClient::new(cfg.service.clone());
        client.health().map_err(guidance_failure)?;
        Some(client)
    };
    let report = evaluate_pairs(pred_dir, gt_dir, client.as_ref(), &cfg.sha256()).map_err(|e| Failure::Usage(e.to_string()))?;
    report.write(out).map_err(run_err)?;
    print!("{}", report.summary());
    if !report.errors.is_empty() {
        return Err(Failure::Run(format!("{} pair(s) failed", report.errors.len())));
    }
    Ok(())
}
