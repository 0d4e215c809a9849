//! Finite-difference verification of every analytic gradient.
//!
//! Each check builds random small instances, evaluates the analytic
//! gradient, and compares it against central differences of the loss value
//! alone. The error of one instance is `|a - n| / max(|a|, |n|)` over the
//! whole gradient vector; a check passes when its worst instance is within
//! tolerance.

use rand::Rng as _;
use serde::Serialize;

use crate::gaussian::{erank_loss, random_rotation, Aabb, Gaussian};
use crate::losses::{attach_loss, consistency_draws, eikonal_at, sdf_gauss_at, ConsistencyDraw};
use crate::sdf::{EncodingConfig, NetworkConfig, SdfNetwork, Upstream};
use crate::{GaussianScene, Result, Rng, Vec3};

pub const ERANK_TOLERANCE: f64 = 1e-4;
pub const ATTACH_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub gaussians: usize,
    pub targets: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            hidden_layers: 2,
            width: 16,
            gaussians: 5,
            targets: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
    pub step: f64,
    pub passed: bool,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den < 1e-300 {
        0.0
    } else {
        diff / den
    }
}

fn central<F: FnMut(f64) -> Result<f64>>(mut f: F, h: f64) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

fn unit_bounds() -> Aabb {
    Aabb::cube(Vec3::zeros(), 1.0).expect("valid cube")
}

/// Scales whose pairwise ratios stay away from ties so the smallest-scale
/// selection is stable under the finite-difference step.
fn separated_scales(rng: &mut Rng) -> Vec3 {
    loop {
        let s = Vec3::from_fn(|_, _| 0.01 + rng.random::<f64>());
        let gaps = [(s.x - s.y).abs(), (s.y - s.z).abs(), (s.x - s.z).abs()];
        if gaps.iter().all(|g| *g > 1e-2) {
            return s;
        }
    }
}

fn random_scene(n: usize, rng: &mut Rng) -> Result<GaussianScene> {
    let b = unit_bounds();
    let gs = (0..n)
        .map(|_| {
            Gaussian::new(
                b.sample_uniform(rng) * 0.7,
                Vec3::from_fn(|_, _| 0.03 + 0.1 * rng.random::<f64>()),
                random_rotation(rng),
                1.0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianScene::new(gs, b, 0)
}

fn small_network(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<SdfNetwork> {
    let net_cfg = NetworkConfig {
        encoding: EncodingConfig {
            num_bands: 3,
            include_raw: true,
        },
        hidden_layers: cfg.hidden_layers,
        width: cfg.width,
        skip_at: (cfg.hidden_layers >= 2).then_some(cfg.hidden_layers / 2),
        beta: 100.0,
    };
    SdfNetwork::init_random(net_cfg, &unit_bounds(), rng)
}

fn param_fd<F: Fn(&SdfNetwork) -> Result<f64>>(
    net: &SdfNetwork,
    loss: F,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let orig = net.params()[i];
            let d = central(
                |dh| {
                    probe.params_mut()[i] = orig + dh;
                    loss(&probe)
                },
                h,
            );
            probe.params_mut()[i] = orig;
            d
        })
        .collect()
}

fn finish(name: &'static str, errs: &[f64], tolerance: f64, step: f64) -> CheckResult {
    let worst = errs.iter().copied().fold(0.0, f64::max);
    CheckResult {
        name,
        instances: errs.len(),
        worst_rel_error: worst,
        tolerance,
        step,
        passed: errs.iter().all(|e| e.is_finite()) && worst <= tolerance,
    }
}

pub fn check_erank(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-5;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let b = unit_bounds();
        let gs = (0..cfg.gaussians)
            .map(|_| {
                Gaussian::new(
                    b.sample_uniform(rng) * 0.5,
                    separated_scales(rng),
                    random_rotation(rng),
                    1.0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = GaussianScene::new(gs, b, 0)?;
        let (_, g) = erank_loss(&scene, 1e-8)?;
        let analytic: Vec<f64> = g.iter().flat_map(|v| v.iter().copied()).collect();
        let mut numeric = Vec::new();
        for k in 0..scene.len() {
            for d in 0..3 {
                let mut probe = scene.clone();
                numeric.push(central(
                    |dh| {
                        probe.gaussians[k].scales[d] = scene.gaussians[k].scales[d] + dh;
                        erank_loss(&probe, 1e-8).map(|r| r.0)
                    },
                    h,
                )?);
            }
        }
        errs.push(rel_err(&analytic, &numeric));
    }
    Ok(finish("erank_loss / scales", &errs, ERANK_TOLERANCE, h))
}

pub fn check_attach(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-6;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let scene = random_scene(cfg.gaussians, rng)?;
        let targets: Vec<Vec3> = (0..cfg.targets)
            .map(|_| unit_bounds().sample_uniform(rng) * 0.7)
            .collect();
        let (_, g) = attach_loss(&scene, &targets)?;
        let analytic: Vec<f64> = g.means.iter().flat_map(|v| v.iter().copied()).collect();
        let mut numeric = Vec::new();
        for k in 0..scene.len() {
            for d in 0..3 {
                let mut probe = scene.clone();
                numeric.push(central(
                    |dh| {
                        probe.gaussians[k].mean[d] = scene.gaussians[k].mean[d] + dh;
                        attach_loss(&probe, &targets).map(|r| r.0)
                    },
                    h,
                )?);
            }
        }
        errs.push(rel_err(&analytic, &numeric));
    }
    Ok(finish("attach_loss / means", &errs, ATTACH_TOLERANCE, h))
}

pub fn check_eikonal_params(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-5;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let net = small_network(cfg, rng)?;
        let pts: Vec<Vec3> = (0..4).map(|_| unit_bounds().sample_uniform(rng)).collect();
        let (_, g) = eikonal_at(&net, &pts)?;
        let fd = param_fd(&net, |n| eikonal_at(n, &pts).map(|r| r.0), h)?;
        errs.push(rel_err(&g, &fd));
    }
    Ok(finish(
        "eikonal_loss / network params",
        &errs,
        NETWORK_TOLERANCE,
        h,
    ))
}

fn redraw(scene: &GaussianScene, draws: &[ConsistencyDraw]) -> Vec<ConsistencyDraw> {
    draws
        .iter()
        .map(|d| ConsistencyDraw {
            point: scene.gaussians[d.gaussian].point_at(&d.z),
            ..*d
        })
        .collect()
}

pub fn check_sdf_gauss_params(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-5;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let net = small_network(cfg, rng)?;
        let scene = random_scene(3, rng)?;
        let draws = consistency_draws(&scene, 2, rng)?;
        let (_, g) = sdf_gauss_at(&net, &scene, &draws, false)?;
        let fd = param_fd(
            &net,
            |n| sdf_gauss_at(n, &scene, &draws, false).map(|r| r.0),
            h,
        )?;
        errs.push(rel_err(&g.network, &fd));
    }
    Ok(finish(
        "sdf_gauss_loss / network params",
        &errs,
        NETWORK_TOLERANCE,
        h,
    ))
}

pub fn check_sdf_gauss_gaussians(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-6;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let net = small_network(cfg, rng)?;
        let scene = random_scene(3, rng)?;
        let draws = consistency_draws(&scene, 2, rng)?;
        let (_, g) = sdf_gauss_at(&net, &scene, &draws, true)?;
        let loss = |s: &GaussianScene| sdf_gauss_at(&net, s, &redraw(s, &draws), true).map(|r| r.0);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..scene.len() {
            for d in 0..3 {
                let mut probe = scene.clone();
                analytic.push(g.scene.means[k][d]);
                numeric.push(central(
                    |dh| {
                        probe.gaussians[k].mean[d] = scene.gaussians[k].mean[d] + dh;
                        loss(&probe)
                    },
                    h,
                )?);
                let mut probe = scene.clone();
                analytic.push(g.scene.scales[k][d]);
                numeric.push(central(
                    |dh| {
                        probe.gaussians[k].scales[d] = scene.gaussians[k].scales[d] + dh;
                        loss(&probe)
                    },
                    h,
                )?);
            }
            let base = scene.gaussians[k].rotation.quaternion().coords;
            // nalgebra stores (i, j, k, w).
            for (slot, coord) in [(0usize, 3usize), (1, 0), (2, 1), (3, 2)] {
                let mut probe = scene.clone();
                analytic.push(g.scene.rotations[k][slot]);
                numeric.push(central(
                    |dh| {
                        let mut c = base;
                        c[coord] += dh;
                        probe.gaussians[k].rotation = nalgebra::UnitQuaternion::from_quaternion(
                            nalgebra::Quaternion::from(c),
                        );
                        loss(&probe)
                    },
                    h,
                )?);
            }
        }
        errs.push(rel_err(&analytic, &numeric));
    }
    Ok(finish(
        "sdf_gauss_loss / Gaussian means, scales, rotations",
        &errs,
        NETWORK_TOLERANCE,
        h,
    ))
}

pub fn check_network_input(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-4;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let net = small_network(cfg, rng)?;
        let x = unit_bounds().sample_uniform(rng);
        let e = net.forward_with_input_gradient(&x)?;
        let mut numeric = Vec::new();
        for d in 0..3 {
            numeric.push(central(
                |dh| {
                    let mut p = x;
                    p[d] += dh;
                    net.forward(&p)
                },
                h,
            )?);
        }
        errs.push(rel_err(e.gradient.as_slice(), &numeric));
    }
    Ok(finish(
        "network / input gradient",
        &errs,
        NETWORK_TOLERANCE,
        h,
    ))
}

pub fn check_network_value_params(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let h = 1e-5;
    let mut errs = Vec::new();
    for _ in 0..cfg.instances {
        let net = small_network(cfg, rng)?;
        let x = unit_bounds().sample_uniform(rng);
        let f = net.forward(&x)?;
        let g = net.backward(
            &[x],
            &[Upstream {
                value: 2.0 * f,
                gradient: Vec3::zeros(),
            }],
        )?;
        let fd = param_fd(&net, |n| n.forward(&x).map(|v| v * v), h)?;
        errs.push(rel_err(&g, &fd));
    }
    Ok(finish(
        "network / params of f(x)^2",
        &errs,
        NETWORK_TOLERANCE,
        h,
    ))
}

/// Runs every check with independent RNG streams derived from `cfg.seed`.
pub fn run_all(cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    type Check = fn(&GradcheckConfig, &mut Rng) -> Result<CheckResult>;
    let checks: [Check; 7] = [
        check_erank,
        check_attach,
        check_eikonal_params,
        check_sdf_gauss_params,
        check_sdf_gauss_gaussians,
        check_network_input,
        check_network_value_params,
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, check)| {
            let mut rng = crate::rng_from_seed(cfg.seed.wrapping_mul(31).wrapping_add(i as u64));
            check(cfg, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_on_a_few_instances() {
        let cfg = GradcheckConfig {
            instances: 5,
            ..GradcheckConfig::default()
        };
        for r in run_all(&cfg).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(rel_err(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
        assert!((rel_err(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
