//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report prints under `cargo test`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gsreg_cli::commands::init_network;
use gsreg_cli::config::RunConfig;
use gsreg_cli::scene::{generate_scene, SceneSpec};
use gsreg_core::gaussian::effective_rank;
use gsreg_core::gradcheck::{run_all, GradcheckConfig};
use gsreg_core::mesh::{chamfer_distance, marching_cubes, GridSpec, Reference, ScalarGrid};
use gsreg_core::sdf::{checkpoint, NetworkConfig, SdfField};
use gsreg_core::trainer::{fit, mean_abs_sdf_at_means, MetricsRow};
use gsreg_core::{rng_from_seed, Aabb, LossWeights, Shape, TrainConfig, Vec3};
use rand::Rng as _;

const SPHERE_RADIUS: f64 = 0.5;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn golden_erank() -> Verdict {
    let text = include_str!("data/erank_golden.csv");
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        let got = effective_rank(&Vec3::new(v[0], v[1], v[2])).unwrap().erank;
        worst = worst.max((got - v[3]).abs());
        count += 1;
    }
    let iso = effective_rank(&Vec3::new(1.0, 1.0, 1.0)).unwrap().erank;
    let flat = effective_rank(&Vec3::new(1.0, 1.0, 1e-6)).unwrap().erank;
    let elapsed = start.elapsed();
    verdict(
        count == 1000 && worst <= 1e-9 && (iso - 3.0).abs() <= 1e-12 && (flat - 2.0).abs() <= 1e-4 && secs(elapsed) < 1.0,
        format!(
            "max |err| {worst:.2e} over {count} triples; (1,1,1) -> {iso:.12}; (1,1,1e-6) -> {flat:.8}; {:.3} s",
            secs(elapsed)
        ),
    )
}

fn gradient_oracles() -> Verdict {
    let start = Instant::now();
    let results = run_all(&GradcheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let enough = results.iter().all(|r| r.instances >= 100);
    let parts: Vec<String> = results
        .iter()
        .map(|r| format!("{} {:.1e}/{:.0e}", r.name, r.worst_rel_error, r.tolerance))
        .collect();
    verdict(
        enough && results.iter().all(|r| r.passed) && secs(elapsed) < 60.0,
        format!("{}; {:.1} s", parts.join(", "), secs(elapsed)),
    )
}

fn plane_fit(weights: Option<LossWeights>) -> (f64, f64, Vec<MetricsRow>, TrainConfig) {
    let mut cfg = RunConfig {
        scene: SceneSpec {
            init_needles: true,
            ..SceneSpec::plane()
        },
        network: NetworkConfig::desk(),
        ..RunConfig::default()
    };
    if let Some(w) = weights {
        cfg.train.weights = w;
    }
    let g = generate_scene(&cfg.scene).unwrap();
    let mut scene = g.scene;
    let mut net = init_network(&cfg, &scene.bounds).unwrap();
    let report = fit(&mut scene, &mut net, &g.targets, &cfg.train).unwrap();
    let e = scene.eranks().unwrap();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, min, report.history, cfg.train)
}

fn erank_efficacy(histories: &mut Vec<(Vec<MetricsRow>, TrainConfig)>) -> Verdict {
    let start = Instant::now();
    let initial = generate_scene(&SceneSpec {
        init_needles: true,
        ..SceneSpec::plane()
    })
    .unwrap()
    .scene
    .mean_erank()
    .unwrap();
    let (mean, min, history, cfg) = plane_fit(None);
    histories.push((history, cfg));
    let baseline_weights = TrainConfig::default().weights.attach_only();
    let (base_mean, _, history, cfg) = plane_fit(Some(baseline_weights));
    histories.push((history, cfg));
    let elapsed = start.elapsed();
    verdict(
        mean >= 1.9 && min >= 1.5 && base_mean < 1.5 && secs(elapsed) < 300.0,
        format!(
            "initial mean {initial:.4}; regularized mean {mean:.4}, min {min:.4}; attach-only mean {base_mean:.4}; {:.1} s",
            secs(elapsed)
        ),
    )
}

fn run_cli_fit(dir: &Path) -> Duration {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_gsreg"))
        .args([
            "fit",
            "--out",
            dir.to_str().unwrap(),
            "--network.hidden_layers=4",
            "--network.width=64",
            "--network.skip_at=2",
        ])
        .env_remove("GSREG_SEED")
        .status()
        .unwrap();
    assert!(status.success(), "sphere fit failed: {status}");
    start.elapsed()
}

struct SphereRun {
    net: gsreg_core::SdfNetwork,
    scene: gsreg_core::GaussianScene,
    warmup_alignment: f64,
    elapsed: Duration,
}

fn load_sphere_run(dir: &Path, elapsed: Duration) -> SphereRun {
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    SphereRun {
        net: checkpoint::load(&dir.join("network.ckpt")).unwrap(),
        scene: gsreg_core::ply::load_scene(&dir.join("scene.ply")).unwrap(),
        warmup_alignment: summary["warmup_alignment"].as_f64().unwrap(),
        elapsed,
    }
}

fn sdf_validity(run: &SphereRun) -> Verdict {
    let mut rng = rng_from_seed(404);
    let mut ball = Vec::with_capacity(10_000);
    while ball.len() < 10_000 {
        let p = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm() <= 1.0 {
            ball.push(p);
        }
    }
    let eik = ball
        .iter()
        .map(|p| (run.net.value_and_gradient(p).unwrap().gradient.norm() - 1.0).abs())
        .sum::<f64>()
        / ball.len() as f64;
    let surface = Shape::Sphere {
        radius: SPHERE_RADIUS,
    }
    .sample_surface(1000, &mut rng);
    let on_surface = surface
        .iter()
        .map(|p| run.net.value(p).unwrap().abs())
        .sum::<f64>()
        / 1000.0;
    verdict(
        eik <= 0.1 && on_surface <= 0.05 * SPHERE_RADIUS && secs(run.elapsed) < 300.0,
        format!(
            "unit-ball mean ||grad f|-1| {eik:.4} (<= 0.1); surface mean |f| {on_surface:.4} (<= {:.4}); fit {:.1} s",
            0.05 * SPHERE_RADIUS,
            secs(run.elapsed)
        ),
    )
}

fn consistency_alignment(run: &SphereRun) -> Verdict {
    let fin = mean_abs_sdf_at_means(&run.net, &run.scene).unwrap();
    verdict(
        fin <= 0.05 * SPHERE_RADIUS && fin < run.warmup_alignment,
        format!(
            "mean |f(mu)| {fin:.4} (<= {:.4}); end of warmup {:.4}",
            0.05 * SPHERE_RADIUS,
            run.warmup_alignment
        ),
    )
}

fn mesh_fidelity(run: &SphereRun) -> Verdict {
    let bounds = Aabb::cube(Vec3::zeros(), 1.0).unwrap();
    let spec = GridSpec::new(64, bounds).unwrap();
    let cell = spec.max_cell_size();
    let sphere = Shape::Sphere {
        radius: SPHERE_RADIUS,
    };

    let grid = ScalarGrid::sample(&run.net, spec.clone(), 1).unwrap();
    let mesh = marching_cubes(&grid, 0.0).unwrap();
    let rms = if mesh.is_empty() {
        f64::INFINITY
    } else {
        chamfer_distance(
            &mesh,
            &Reference::Analytic(&sphere),
            10_000,
            &mut rng_from_seed(6),
        )
        .unwrap()
        .root_mean()
    };

    let exact = marching_cubes(&ScalarGrid::sample(&sphere, spec, 1).unwrap(), 0.0).unwrap();
    let max_abs = exact
        .vertices
        .iter()
        .map(|v| sphere.sdf(v).abs())
        .fold(0.0, f64::max);
    verdict(
        !mesh.is_empty() && rms <= 3.0 * cell && max_abs < 2.0 * cell,
        format!(
            "fitted mesh {} triangles, root-mean chamfer {rms:.4} (<= {:.4}); analytic max vertex |f| {max_abs:.5} (< {:.4})",
            mesh.triangles.len(),
            3.0 * cell,
            2.0 * cell
        ),
    )
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let csv = same("metrics.csv");
    let ckpt = same("network.ckpt");
    let scene = same("scene.ply");
    verdict(
        csv && ckpt,
        format!("metrics.csv identical: {csv}; network.ckpt identical: {ckpt}; scene.ply identical: {scene}"),
    )
}

/// Parses a metrics CSV back into rows of `(iteration, parts, total)`.
fn csv_rows(path: &Path) -> Vec<(usize, [f64; 4], f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            let f = |i: usize| v[i].parse::<f64>().unwrap();
            (v[0].parse().unwrap(), [f(1), f(2), f(3), f(4)], f(5))
        })
        .collect()
}

fn loss_identity(histories: &[(Vec<MetricsRow>, TrainConfig)], sphere_csv: &Path) -> Verdict {
    let combine = |cfg: &TrainConfig, it: usize, p: [f64; 4]| {
        let w = cfg.weights_at(it);
        w.lambda_attach * p[0]
            + w.lambda_erank * p[1]
            + w.lambda_eikonal * p[2]
            + w.lambda_sdf_gauss * p[3]
    };
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    for (history, cfg) in histories {
        for r in history {
            let b = &r.breakdown;
            let expect = combine(
                cfg,
                r.iteration,
                [b.attach, b.erank, b.eikonal, b.sdf_gauss],
            );
            worst = worst.max((b.total - expect).abs());
            rows += 1;
        }
    }
    let sphere_cfg = TrainConfig::default();
    for (it, parts, total) in csv_rows(sphere_csv) {
        worst = worst.max((total - combine(&sphere_cfg, it, parts)).abs());
        rows += 1;
    }
    verdict(
        worst <= 1e-9 && rows > 0,
        format!("max |total - weighted sum| {worst:.2e} over {rows} logged iterations"),
    )
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (work.path().join("sphere_a"), work.path().join("sphere_b"));
    let mut lines: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!(
            "criterion {n} [{}] {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        lines.push((n, name, v));
    };

    report(1, "golden erank values", golden_erank());
    report(2, "gradient oracle suite", gradient_oracles());
    let mut histories = Vec::new();
    report(
        3,
        "erank regularizer efficacy",
        erank_efficacy(&mut histories),
    );

    let elapsed_a = run_cli_fit(&run_a);
    let run = load_sphere_run(&run_a, elapsed_a);
    report(4, "SDF validity", sdf_validity(&run));
    report(5, "consistency alignment", consistency_alignment(&run));
    report(6, "mesh fidelity", mesh_fidelity(&run));
    run_cli_fit(&run_b);
    report(7, "determinism", determinism(&run_a, &run_b));
    report(
        8,
        "loss-combination identity",
        loss_identity(&histories, &run_a.join("metrics.csv")),
    );

    let failed: Vec<usize> = lines
        .iter()
        .filter(|(_, _, v)| !v.passed)
        .map(|(n, _, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", lines.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
