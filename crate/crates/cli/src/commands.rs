//! Subcommand implementations. Each returns `Ok` for exit code 0 and a
//! [`CliError`] carrying the exit code otherwise.

use std::io::Write;
use std::path::{Path, PathBuf};

use gsreg_core::gradcheck::{self, GradcheckConfig};
use gsreg_core::mesh::io::{dump_grid, load_mesh, save_mesh, MeshFormat};
use gsreg_core::mesh::{
    chamfer_distance, marching_cubes, ChamferReport, GridSpec, Reference, ScalarGrid,
    MIN_RESOLUTION,
};
use gsreg_core::sdf::{checkpoint, SdfField};
use gsreg_core::trainer::{fit_with, summarize, write_metrics_csv, FitSummary};
use gsreg_core::{ply, rng_from_seed, Aabb, Error, GaussianScene, SdfNetwork, Vec3};
use serde::Serialize;
use serde_json::Value;

use crate::config::{resolve, thread_count, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::scene::generate_scene;

pub const SCENE_FILE: &str = "scene.ply";
pub const TARGETS_FILE: &str = "targets.ply";
pub const CHECKPOINT_FILE: &str = "network.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;
/// Noise-free surface points used for the summary's surface error.
const SURFACE_PROBES: usize = 1000;

/// Process environment consulted by the commands.
#[derive(Clone, Debug, Default)]
pub struct Env {
    pub seed: Option<String>,
    pub threads: Option<String>,
}

impl Env {
    pub fn from_process() -> Self {
        Self {
            seed: std::env::var(crate::config::SEED_ENV).ok(),
            threads: std::env::var(crate::config::THREADS_ENV).ok(),
        }
    }
}

fn config_error(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> gsreg_core::Result<()>,
) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::output(path, e))?;
    w.flush().map_err(|e| CliError::output(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
}

/// Sphere radius for the geometric network init: half the bounds radius.
pub fn init_radius(bounds: &Aabb) -> f64 {
    0.5 * bounds.half_extent()
}

pub fn init_network(cfg: &RunConfig, bounds: &Aabb) -> CliResult<SdfNetwork> {
    let mut rng = rng_from_seed(cfg.train.seed);
    SdfNetwork::init_geometric(cfg.network.clone(), bounds, init_radius(bounds), &mut rng)
        .map_err(config_error)
}

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, Value)>,
    pub out: PathBuf,
    pub init_needles: bool,
}

pub fn cmd_generate(args: &GenerateArgs, env: &Env) -> CliResult<()> {
    let mut cfg = resolve(args.config.as_deref(), env.seed.as_deref(), &args.overrides)?;
    cfg.scene.init_needles |= args.init_needles;
    let mut manifest = RunManifest::start("generate", cfg.to_flat(), cfg.scene.seed);
    let generated = generate_scene(&cfg.scene).map_err(config_error)?;
    create_dir(&args.out)?;
    let scene_path = args.out.join(SCENE_FILE);
    write_with(&scene_path, |w| ply::write_scene(w, &generated.scene))?;
    let targets_path = args.out.join(TARGETS_FILE);
    write_with(&targets_path, |w| ply::write_points(w, &generated.targets))?;
    manifest.output("scene", &scene_path);
    manifest.output("targets", &targets_path);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    let mean = generated.scene.mean_erank().map_err(config_error)?;
    println!(
        "generated {} Gaussians and {} target points on a {} (mean erank {mean:.4})",
        generated.scene.len(),
        generated.targets.len(),
        generated.shape.name()
    );
    manifest.finish(&args.out.join(MANIFEST_FILE))
}

#[derive(Clone, Debug, Default)]
pub struct FitArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, Value)>,
    pub out: PathBuf,
    pub dry_run: bool,
    pub init_needles: bool,
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub shape: String,
    #[serde(flatten)]
    pub fit: FitSummary,
    /// Mean `|f|` over noise-free points on the analytic surface.
    pub surface_mean_abs_sdf: f64,
}

pub fn cmd_fit(args: &FitArgs, env: &Env) -> CliResult<()> {
    let mut cfg = resolve(args.config.as_deref(), env.seed.as_deref(), &args.overrides)?;
    cfg.scene.init_needles |= args.init_needles;
    if let Some(k) = args.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    if args.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg.to_flat()).expect("config serializes")
        );
        return Ok(());
    }
    let mut manifest = RunManifest::start("fit", cfg.to_flat(), cfg.train.seed);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    let generated = generate_scene(&cfg.scene).map_err(config_error)?;
    let mut scene = generated.scene;
    let mut net = init_network(&cfg, &scene.bounds)?;
    create_dir(&args.out)?;

    let every = cfg.checkpoint_every;
    let snapshots = args.out.join("checkpoints");
    if every > 0 {
        create_dir(&snapshots)?;
    }
    let report = fit_with(
        &mut scene,
        &mut net,
        &generated.targets,
        &cfg.train,
        |state, scene, net| {
            if every > 0 && state.iteration % every == 0 {
                let it = state.iteration;
                checkpoint::save(net, &snapshots.join(format!("network_{it:06}.ckpt")))?;
                ply::save_scene(scene, &snapshots.join(format!("scene_{it:06}.ply")))?;
            }
            Ok(())
        },
    )
    .map_err(|e| match e {
        Error::NonFinite { .. } | Error::Computation(_) => CliError::Divergence(e.to_string()),
        Error::Io(_) => CliError::output(&snapshots, e),
        other => config_error(other),
    })?;

    let fit = summarize(&scene, &net, &generated.targets, &report, &cfg.train)
        .map_err(|e| CliError::Divergence(e.to_string()))?;
    let mut rng = rng_from_seed(cfg.scene.seed ^ 0x5a5a);
    let probes = generated.shape.sample_surface(SURFACE_PROBES, &mut rng);
    let surface = mean_abs(&net, &probes).map_err(|e| CliError::Divergence(e.to_string()))?;
    let summary = RunSummary {
        shape: generated.shape.name().into(),
        fit,
        surface_mean_abs_sdf: surface,
    };

    let paths = [
        ("scene", SCENE_FILE),
        ("checkpoint", CHECKPOINT_FILE),
        ("metrics", METRICS_FILE),
        ("summary", SUMMARY_FILE),
    ]
    .map(|(role, name)| (role, args.out.join(name)));
    write_with(&paths[0].1, |w| ply::write_scene(w, &scene))?;
    write_with(&paths[1].1, |w| checkpoint::write_checkpoint(&net, w))?;
    write_with(&paths[2].1, |w| write_metrics_csv(w, &report.history))?;
    write_json(&paths[3].1, &summary)?;
    for (role, path) in &paths {
        manifest.output(role, path);
    }
    if every > 0 {
        manifest.output("snapshots", &snapshots);
    }
    println!(
        "fit {} iterations: mean erank {:.4} (min {:.4}), eikonal residual {:.3e}, surface |f| {:.3e}",
        summary.fit.iterations,
        summary.fit.mean_erank,
        summary.fit.min_erank,
        summary.fit.eikonal_residual,
        summary.surface_mean_abs_sdf
    );
    manifest.finish(&args.out.join(MANIFEST_FILE))
}

#[derive(Clone, Debug)]
pub struct ExtractArgs {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub resolution: usize,
    pub dump_grid: Option<PathBuf>,
}

/// Manifest path stored beside a mesh file.
pub fn mesh_manifest_path(mesh: &Path) -> PathBuf {
    let mut name = mesh.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    mesh.with_file_name(name)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractStats {
    pub resolution: usize,
    pub cell_size: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub area: f64,
}

pub fn cmd_extract(args: &ExtractArgs, env: &Env) -> CliResult<ExtractStats> {
    if args.resolution < MIN_RESOLUTION {
        return Err(CliError::Config(format!(
            "--resolution must be at least {MIN_RESOLUTION}, got {}",
            args.resolution
        )));
    }
    MeshFormat::from_path(&args.out).map_err(config_error)?;
    let threads = thread_count(env.threads.as_deref())?;
    let net =
        checkpoint::load(&args.checkpoint).map_err(|e| CliError::corrupt(&args.checkpoint, e))?;
    let c = net.center();
    let bounds =
        Aabb::cube(c, net.half_extent()).map_err(|e| CliError::corrupt(&args.checkpoint, e))?;
    let spec = GridSpec::new(args.resolution, bounds).map_err(config_error)?;
    let grid = ScalarGrid::sample(&net, spec.clone(), threads)
        .map_err(|e| CliError::corrupt(&args.checkpoint, e))?;
    let mesh = marching_cubes(&grid, 0.0).map_err(config_error)?;

    // Carry the source run's configuration forward for later evaluation.
    let source = args.checkpoint.with_file_name(MANIFEST_FILE);
    let (config, seed) = if source.is_file() {
        let m = RunManifest::load(&source)?;
        (m.config, m.seed)
    } else {
        Default::default()
    };
    let mut manifest = RunManifest::start("extract", config, seed);
    manifest.input("checkpoint", &args.checkpoint);
    if source.is_file() {
        manifest.input("source_manifest", &source);
    }
    manifest
        .parameters
        .insert("resolution".into(), args.resolution.into());
    manifest.parameters.insert("iso".into(), 0.0.into());

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    if mesh.is_empty() {
        eprintln!(
            "warning: the field has no zero crossing inside the bounds; writing an empty mesh"
        );
    }
    save_mesh(&mesh, &args.out).map_err(|e| CliError::output(&args.out, e))?;
    manifest.output("mesh", &args.out);
    if let Some(raw) = &args.dump_grid {
        dump_grid(&grid, raw).map_err(|e| CliError::output(raw, e))?;
        manifest.output("grid", raw);
        manifest.output("grid_sidecar", &raw.with_extension("json"));
    }
    let stats = ExtractStats {
        resolution: args.resolution,
        cell_size: spec.max_cell_size(),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        area: mesh.area(),
    };
    println!(
        "extracted {} vertices, {} triangles at {}^3 (cell {:.4})",
        stats.vertices, stats.triangles, stats.resolution, stats.cell_size
    );
    manifest.finish(&mesh_manifest_path(&args.out))?;
    Ok(stats)
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub mesh: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, Value)>,
    pub scene: Option<PathBuf>,
    pub samples: usize,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErankStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub shape: String,
    pub samples: usize,
    pub chamfer: ChamferReport,
    pub root_mean_chamfer: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub mean_abs_sdf_at_vertices: f64,
    pub max_abs_sdf_at_vertices: f64,
    pub erank: Option<ErankStats>,
}

pub fn erank_stats(scene: &GaussianScene) -> gsreg_core::Result<ErankStats> {
    let e = scene.eranks()?;
    Ok(ErankStats {
        count: e.len(),
        mean: e.iter().sum::<f64>() / e.len() as f64,
        min: e.iter().copied().fold(f64::INFINITY, f64::min),
        max: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn cmd_eval(args: &EvalArgs, env: &Env) -> CliResult<EvalReport> {
    let cfg = resolve(args.config.as_deref(), env.seed.as_deref(), &args.overrides)?;
    if args.samples == 0 {
        return Err(CliError::Config("--samples must be at least 1".into()));
    }
    let mesh = load_mesh(&args.mesh).map_err(|e| CliError::corrupt(&args.mesh, e))?;
    if mesh.is_empty() {
        return Err(CliError::corrupt(&args.mesh, "mesh has no triangles"));
    }
    let side = mesh_manifest_path(&args.mesh);
    if side.is_file() {
        let recorded = RunManifest::shape_keys(&RunManifest::load(&side)?.config);
        let requested = RunManifest::shape_keys(&cfg.to_flat());
        if !recorded.is_empty() && recorded != requested {
            return Err(CliError::Mismatch(format!(
                "mesh was extracted from a {} run but the evaluation spec names {}",
                Value::from(recorded.into_iter().collect::<serde_json::Map<_, _>>()),
                Value::from(requested.into_iter().collect::<serde_json::Map<_, _>>())
            )));
        }
    }
    let shape = &cfg.scene.shape;
    let mut rng = rng_from_seed(cfg.scene.seed);
    let chamfer = chamfer_distance(&mesh, &Reference::Analytic(shape), args.samples, &mut rng)
        .map_err(|e| CliError::corrupt(&args.mesh, e))?;
    let abs: Vec<f64> = mesh.vertices.iter().map(|v| shape.sdf(v).abs()).collect();
    let erank = match &args.scene {
        Some(p) => {
            let scene = ply::load_scene(p).map_err(|e| CliError::corrupt(p, e))?;
            Some(erank_stats(&scene).map_err(|e| CliError::corrupt(p, e))?)
        }
        None => None,
    };
    let report = EvalReport {
        shape: shape.name().into(),
        samples: args.samples,
        root_mean_chamfer: chamfer.root_mean(),
        chamfer,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        mean_abs_sdf_at_vertices: abs.iter().sum::<f64>() / abs.len() as f64,
        max_abs_sdf_at_vertices: abs.iter().copied().fold(0.0, f64::max),
        erank,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    let out = args.out.clone().unwrap_or_else(|| {
        let mut name = args.mesh.file_name().unwrap_or_default().to_os_string();
        name.push(".eval.json");
        args.mesh.with_file_name(name)
    });
    std::fs::write(&out, text + "\n").map_err(|e| CliError::output(&out, e))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    pub config: GradcheckConfig,
    pub json: Option<PathBuf>,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let results = gradcheck::run_all(&args.config).map_err(config_error)?;
    println!(
        "{:<28} {:>9} {:>13} {:>10}  result",
        "check", "instances", "worst rel err", "tolerance"
    );
    for r in &results {
        println!(
            "{:<28} {:>9} {:>13.3e} {:>10.0e}  {}",
            r.name,
            r.instances,
            r.worst_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(p) = &args.json {
        write_json(p, &results)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::GradcheckFailed {
            failed,
            total: results.len(),
        });
    }
    Ok(())
}

/// Mean `|f|` of `field` at `points`.
pub fn mean_abs<F: SdfField>(field: &F, points: &[Vec3]) -> gsreg_core::Result<f64> {
    let mut sum = 0.0;
    for p in points {
        sum += field.value(p)?.abs();
    }
    Ok(sum / points.len() as f64)
}
