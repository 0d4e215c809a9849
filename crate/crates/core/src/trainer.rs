//! Joint Adam optimization of the Gaussians and the SDF network.
//!
//! Iterations below `warmup_iters` optimize the attachment term alone; the
//! erank, Eikonal and consistency terms join afterwards. Optionally the
//! network keeps learning the Eikonal term during warmup, as an auxiliary
//! update that is not counted in the logged total.

use std::io::Write;
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::{erank_loss, SCALE_FLOOR};
use crate::losses::{
    eikonal_at, total_loss_with_aux, Gradients, LossBreakdown, LossConfig, LossWeights,
};
use crate::optim::{adam_update, AdamConfig, AdamMoments};
use crate::sdf::{SdfField, SdfNetwork};
use crate::{GaussianScene, Rng, Vec3};

pub const METRICS_HEADER: &str =
    "iteration,attach,erank,eikonal,sdf_gauss,total,mean_erank,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub lr_gaussians: f64,
    pub lr_network: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Train the network on the Eikonal term during warmup.
    pub network_warmup: bool,
    /// Fill `wall_ms` in the metrics; off by default so runs are byte-identical.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 2000,
            warmup_iters: 500,
            lr_gaussians: 1e-2,
            lr_network: 1e-3,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            network_warmup: true,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_iters > self.total_iters {
            return Err(domain(format!(
                "warmup_iters ({}) exceeds total_iters ({})",
                self.warmup_iters, self.total_iters
            )));
        }
        for (name, lr) in [
            ("lr_gaussians", self.lr_gaussians),
            ("lr_network", self.lr_network),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(domain(format!("{name} must be positive, got {lr}")));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(domain(
                "adam betas must lie in [0, 1) and epsilon must be positive",
            ));
        }
        if self.loss.eikonal_samples == 0 || self.loss.sdf_gauss_samples_per_gaussian == 0 {
            return Err(domain("per-term sample counts must be at least 1"));
        }
        if !(self.loss.sigma_expand > 0.0) || !(self.loss.erank_epsilon > 0.0) {
            return Err(domain("sigma_expand and erank_epsilon must be positive"));
        }
        self.weights.validate()
    }

    /// Weights in effect at `iteration`: attach only during warmup.
    pub fn weights_at(&self, iteration: usize) -> LossWeights {
        if iteration < self.warmup_iters {
            self.weights.attach_only()
        } else {
            self.weights
        }
    }
}

/// One logged iteration; losses are those of the state before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub breakdown: LossBreakdown,
    pub mean_erank: f64,
    pub wall_ms: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            b.attach,
            b.erank,
            b.eikonal,
            b.sdf_gauss,
            b.total,
            self.mean_erank,
            self.wall_ms
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Adam state per parameter group. A group's step counter only advances on
/// iterations where some active term touches it, so groups that join after
/// warmup start with a correct bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMoments {
    pub means: AdamMoments,
    pub scales: AdamMoments,
    pub rotations: AdamMoments,
    pub network: AdamMoments,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub iteration: usize,
    pub moments: GroupMoments,
    pub rng: Rng,
    pub history: Vec<MetricsRow>,
    started: Instant,
}

impl TrainState {
    pub fn new(scene: &GaussianScene, net: &SdfNetwork, cfg: &TrainConfig) -> Self {
        let n = scene.len();
        Self {
            iteration: 0,
            moments: GroupMoments {
                means: AdamMoments::zeros(3 * n),
                scales: AdamMoments::zeros(3 * n),
                rotations: AdamMoments::zeros(4 * n),
                network: AdamMoments::zeros(net.num_params()),
            },
            rng: crate::rng_from_seed(cfg.seed),
            history: Vec::new(),
            started: Instant::now(),
        }
    }
}

/// Flat (means, scales, rotations) parameter vectors.
fn flatten_scene(scene: &GaussianScene) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for g in &scene.gaussians {
        out[0].extend(g.mean.iter());
        out[1].extend(g.scales.iter());
        out[2].extend(g.rotation_wxyz());
    }
    out
}

fn flatten_grads(grads: &Gradients) -> [Vec<f64>; 3] {
    let s = &grads.scene;
    [
        s.means.iter().flat_map(|v| v.iter().copied()).collect(),
        s.scales.iter().flat_map(|v| v.iter().copied()).collect(),
        s.rotations.iter().flatten().copied().collect(),
    ]
}

/// Writes optimized values back, enforcing the post-step invariants:
/// scales floored, quaternions renormalized, means clamped to the bounds.
fn unflatten_scene(scene: &mut GaussianScene, flat: &[Vec<f64>; 3]) -> Result<()> {
    let bounds = scene.bounds;
    for (k, g) in scene.gaussians.iter_mut().enumerate() {
        let (m, s, r) = (&flat[0][3 * k..], &flat[1][3 * k..], &flat[2][4 * k..]);
        g.mean = bounds.clamp(&Vec3::new(m[0], m[1], m[2]));
        g.scales = Vec3::new(s[0], s[1], s[2]).map(|v| v.max(SCALE_FLOOR));
        let q = Quaternion::new(r[0], r[1], r[2], r[3]);
        let n = q.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Computation(format!(
                "rotation quaternion with norm {n}"
            )));
        }
        g.rotation = UnitQuaternion::from_quaternion(q);
    }
    Ok(())
}

/// Adam step on one group, skipped when no active term reached it.
fn update_group(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.iter().all(|g| *g == 0.0) {
        return Ok(());
    }
    adam_update(params, grads, moments, lr, cfg)
}

fn ensure_finite(values: &[f64], term: &'static str, iteration: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { term, iteration })
    }
}

/// One optimization step. Returns the breakdown of the pre-update state.
pub fn step(
    state: &mut TrainState,
    scene: &mut GaussianScene,
    net: &mut SdfNetwork,
    targets: &[Vec3],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let it = state.iteration;
    if it >= cfg.total_iters {
        return Err(domain(format!(
            "iteration {it} is past total_iters {}",
            cfg.total_iters
        )));
    }
    let weights = cfg.weights_at(it);
    let aux = if it < cfg.warmup_iters && cfg.network_warmup {
        cfg.weights.lambda_eikonal
    } else {
        0.0
    };
    let at_iteration = |e: Error| match e {
        Error::NonFinite { term, .. } => Error::NonFinite {
            term,
            iteration: it,
        },
        other => other,
    };
    let (breakdown, grads) = total_loss_with_aux(
        scene,
        net,
        targets,
        &weights,
        aux,
        &cfg.loss,
        &mut state.rng,
    )
    .map_err(at_iteration)?;
    let mean_erank = scene.mean_erank()?;

    let g_scene = flatten_grads(&grads);
    for g in &g_scene {
        ensure_finite(g, "gaussian gradient", it)?;
    }
    ensure_finite(&grads.network, "network gradient", it)?;

    let mut flat = flatten_scene(scene);
    let m = &mut state.moments;
    let lr = cfg.lr_gaussians;
    update_group(&mut flat[0], &g_scene[0], &mut m.means, lr, &cfg.adam)?;
    update_group(&mut flat[1], &g_scene[1], &mut m.scales, lr, &cfg.adam)?;
    update_group(&mut flat[2], &g_scene[2], &mut m.rotations, lr, &cfg.adam)?;
    for f in &flat {
        ensure_finite(f, "gaussian update", it)?;
    }
    unflatten_scene(scene, &flat)?;

    update_group(
        net.params_mut(),
        &grads.network,
        &mut m.network,
        cfg.lr_network,
        &cfg.adam,
    )?;
    ensure_finite(net.params(), "network update", it)?;

    let wall_ms = if cfg.record_wall_clock {
        state.started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    state.history.push(MetricsRow {
        iteration: it,
        breakdown,
        mean_erank,
        wall_ms,
    });
    state.iteration += 1;
    Ok(breakdown)
}

/// Mean `|f(mu_k)|` over the Gaussian means.
pub fn mean_abs_sdf_at_means<F: SdfField + ?Sized>(
    field: &F,
    scene: &GaussianScene,
) -> Result<f64> {
    let mut sum = 0.0;
    for g in &scene.gaussians {
        sum += field.value(&g.mean)?.abs();
    }
    Ok(sum / scene.len() as f64)
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub history: Vec<MetricsRow>,
    /// Mean `|f(mu_k)|` once warmup has finished (before the first
    /// regularized step).
    pub warmup_alignment: f64,
}

/// Runs `cfg.total_iters` steps in place.
pub fn fit(
    scene: &mut GaussianScene,
    net: &mut SdfNetwork,
    targets: &[Vec3],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    fit_with(scene, net, targets, cfg, |_, _, _| Ok(()))
}

/// [`fit`] with a hook called after every step, e.g. for periodic
/// checkpoints.
pub fn fit_with<H>(
    scene: &mut GaussianScene,
    net: &mut SdfNetwork,
    targets: &[Vec3],
    cfg: &TrainConfig,
    mut hook: H,
) -> Result<FitReport>
where
    H: FnMut(&TrainState, &GaussianScene, &SdfNetwork) -> Result<()>,
{
    cfg.validate()?;
    net.validate()?;
    if targets.is_empty() {
        return Err(domain("fit needs at least one target point"));
    }
    let mut state = TrainState::new(scene, net, cfg);
    let mut warmup_alignment = None;
    while state.iteration < cfg.total_iters {
        if state.iteration == cfg.warmup_iters {
            warmup_alignment = Some(mean_abs_sdf_at_means(net, scene)?);
        }
        step(&mut state, scene, net, targets, cfg)?;
        hook(&state, scene, net)?;
    }
    let warmup_alignment = match warmup_alignment {
        Some(v) => v,
        None => mean_abs_sdf_at_means(net, scene)?,
    };
    Ok(FitReport {
        history: state.history,
        warmup_alignment,
    })
}

/// End-state statistics written to the run summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub mean_erank: f64,
    pub min_erank: f64,
    pub max_erank: f64,
    pub erank_loss: f64,
    /// Mean `(|grad f| - 1)^2` on uniform points over the bounds.
    pub eikonal_residual: f64,
    pub attach_loss: f64,
    pub mean_abs_sdf_at_means: f64,
    pub warmup_alignment: f64,
    pub final_total: Option<f64>,
}

pub fn summarize(
    scene: &GaussianScene,
    net: &SdfNetwork,
    targets: &[Vec3],
    report: &FitReport,
    cfg: &TrainConfig,
) -> Result<FitSummary> {
    let eranks = scene.eranks()?;
    let mut rng = crate::rng_from_seed(cfg.seed ^ 0x5eed_5eed);
    let probe: Vec<Vec3> = (0..1024)
        .map(|_| scene.bounds.sample_uniform(&mut rng))
        .collect();
    Ok(FitSummary {
        iterations: report.history.len(),
        mean_erank: eranks.iter().sum::<f64>() / eranks.len() as f64,
        min_erank: eranks.iter().copied().fold(f64::INFINITY, f64::min),
        max_erank: eranks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        erank_loss: erank_loss(scene, cfg.loss.erank_epsilon)?.0,
        eikonal_residual: eikonal_at(net, &probe)?.0,
        attach_loss: crate::losses::attach_loss(scene, targets)?.0,
        mean_abs_sdf_at_means: mean_abs_sdf_at_means(net, scene)?,
        warmup_alignment: report.warmup_alignment,
        final_total: report.history.last().map(|r| r.breakdown.total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::NetworkConfig;
    use crate::{Aabb, Gaussian};

    fn bounds() -> Aabb {
        Aabb::cube(Vec3::zeros(), 1.0).unwrap()
    }

    fn tiny_net() -> SdfNetwork {
        let cfg = NetworkConfig {
            hidden_layers: 2,
            width: 16,
            skip_at: Some(1),
            ..NetworkConfig::desk()
        };
        let mut rng = crate::rng_from_seed(0);
        SdfNetwork::init_geometric(cfg, &bounds(), 0.5, &mut rng).unwrap()
    }

    fn small_problem(seed: u64) -> (GaussianScene, Vec<Vec3>) {
        let mut rng = crate::rng_from_seed(seed);
        let shape = crate::Shape::Sphere { radius: 0.5 };
        let targets = shape.sample_surface(40, &mut rng);
        let gs = targets
            .iter()
            .take(10)
            .map(|t| {
                Gaussian::new(
                    *t * 0.9,
                    Vec3::new(0.05, 0.01, 0.01),
                    [1.0, 0.0, 0.0, 0.0],
                    1.0,
                )
                .unwrap()
            })
            .collect();
        (GaussianScene::new(gs, bounds(), seed).unwrap(), targets)
    }

    fn short_cfg() -> TrainConfig {
        TrainConfig {
            total_iters: 30,
            warmup_iters: 10,
            loss: LossConfig {
                eikonal_samples: 32,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn attach_only_quadratic_converges() {
        let g = Gaussian::axis_aligned(Vec3::new(0.3, -0.2, 0.1), Vec3::repeat(0.05)).unwrap();
        let mut scene = GaussianScene::new(vec![g], bounds(), 0).unwrap();
        let target = Vec3::new(-0.1, 0.2, 0.0);
        let mut net = tiny_net();
        let cfg = TrainConfig {
            total_iters: 100,
            warmup_iters: 0,
            weights: LossWeights {
                lambda_erank: 0.0,
                lambda_eikonal: 0.0,
                lambda_sdf_gauss: 0.0,
                lambda_attach: 1.0,
            },
            ..short_cfg()
        };
        let net_before = net.params().to_vec();
        let mut state = TrainState::new(&scene, &net, &cfg);
        let mut last = (scene.gaussians[0].mean - target).norm();
        let start = last;
        for _ in 0..100 {
            step(&mut state, &mut scene, &mut net, &[target], &cfg).unwrap();
            let d = (scene.gaussians[0].mean - target).norm();
            // Momentum overshoots once within a few lr-sized steps of the
            // target; the approach itself must be strictly monotone.
            if last > 10.0 * cfg.lr_gaussians {
                assert!(d < last, "{last} -> {d}");
            }
            last = d;
        }
        assert!(last < 0.02 * start, "{start} -> {last}");
        assert_eq!(net.params(), &net_before[..]);
    }

    #[test]
    fn warmup_gates_regularizers() {
        let (mut scene, targets) = small_problem(1);
        let mut net = tiny_net();
        let cfg = short_cfg();
        let mut state = TrainState::new(&scene, &net, &cfg);
        for it in 0..cfg.total_iters {
            let b = step(&mut state, &mut scene, &mut net, &targets, &cfg).unwrap();
            if it < cfg.warmup_iters {
                assert_eq!(b.weights, cfg.weights.attach_only());
                assert_eq!(b.total, b.attach);
            } else {
                assert_eq!(b.weights, cfg.weights);
            }
            assert!((b.total - b.recombine()).abs() <= 1e-9);
        }
        assert!(step(&mut state, &mut scene, &mut net, &targets, &cfg).is_err());
    }

    #[test]
    fn network_warmup_flag_controls_network_updates() {
        let (scene0, targets) = small_problem(2);
        for flag in [false, true] {
            let mut scene = scene0.clone();
            let mut net = tiny_net();
            let before = net.params().to_vec();
            let cfg = TrainConfig {
                total_iters: 5,
                warmup_iters: 5,
                network_warmup: flag,
                ..short_cfg()
            };
            fit(&mut scene, &mut net, &targets, &cfg).unwrap();
            assert_eq!(net.params() != &before[..], flag);
        }
    }

    #[test]
    fn post_step_invariants_hold() {
        let (mut scene, targets) = small_problem(3);
        let mut net = tiny_net();
        let cfg = TrainConfig {
            lr_gaussians: 0.2,
            ..short_cfg()
        };
        let mut state = TrainState::new(&scene, &net, &cfg);
        for _ in 0..cfg.total_iters {
            step(&mut state, &mut scene, &mut net, &targets, &cfg).unwrap();
            for g in &scene.gaussians {
                assert!(g.scales.iter().all(|s| *s >= SCALE_FLOOR));
                assert!((g.rotation.quaternion().norm() - 1.0).abs() < 1e-6);
                assert!(scene.bounds.contains(&g.mean));
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (scene0, targets) = small_problem(4);
        let run = || {
            let mut scene = scene0.clone();
            let mut net = tiny_net();
            let report = fit(&mut scene, &mut net, &targets, &short_cfg()).unwrap();
            (scene, net.params().to_vec(), report.history)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn groups_joining_after_warmup_take_lr_sized_first_steps() {
        let (mut scene, targets) = small_problem(8);
        let mut net = tiny_net();
        let cfg = short_cfg();
        let mut state = TrainState::new(&scene, &net, &cfg);
        for _ in 0..cfg.warmup_iters {
            step(&mut state, &mut scene, &mut net, &targets, &cfg).unwrap();
        }
        assert_eq!(state.moments.means.steps, cfg.warmup_iters as u64);
        assert_eq!(state.moments.scales.steps, 0);
        let before = scene.clone();
        step(&mut state, &mut scene, &mut net, &targets, &cfg).unwrap();
        assert_eq!(state.moments.scales.steps, 1);
        for (a, b) in before.gaussians.iter().zip(&scene.gaussians) {
            for d in 0..3 {
                let moved = (a.scales[d] - b.scales[d]).abs();
                assert!(moved <= cfg.lr_gaussians * (1.0 + 1e-9), "{moved}");
            }
        }
    }

    #[test]
    fn zero_iteration_fit_is_identity() {
        let (mut scene, targets) = small_problem(5);
        let mut net = tiny_net();
        let (s0, p0) = (scene.clone(), net.params().to_vec());
        let cfg = TrainConfig {
            total_iters: 0,
            warmup_iters: 0,
            ..short_cfg()
        };
        let report = fit(&mut scene, &mut net, &targets, &cfg).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(scene, s0);
        assert_eq!(net.params(), &p0[..]);
    }

    #[test]
    fn divergence_names_term_and_iteration() {
        let (mut scene, targets) = small_problem(6);
        let mut net = tiny_net();
        let cfg = short_cfg();
        let mut state = TrainState::new(&scene, &net, &cfg);
        for _ in 0..3 {
            step(&mut state, &mut scene, &mut net, &targets, &cfg).unwrap();
        }
        net.params_mut()[0] = f64::NAN;
        match step(&mut state, &mut scene, &mut net, &targets, &cfg) {
            Err(Error::NonFinite { term, iteration }) => {
                assert_eq!(iteration, 3);
                assert_eq!(term, "eikonal");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            warmup_iters: 10,
            total_iters: 5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_network: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn metrics_csv_has_one_row_per_step() {
        let (mut scene, targets) = small_problem(7);
        let mut net = tiny_net();
        let report = fit(&mut scene, &mut net, &targets, &short_cfg()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &report.history).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 31);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].ends_with(",0"));
    }
}
