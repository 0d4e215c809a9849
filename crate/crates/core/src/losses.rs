//! Loss terms and their combination.
//!
//! `total = l_attach * attach + l_erank * erank + l_eikonal * eikonal
//!        + l_sdf_gauss * sdf_gauss`
//!
//! `attach` is a symmetric chamfer term between Gaussian means and target
//! surface points. It anchors the scene in place of an image-space
//! reconstruction loss.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::{erank_loss, rotate_vjp, standard_normal3, DEFAULT_ERANK_EPSILON};
use crate::sdf::{Evaluator, SdfField, SdfNetwork, Upstream};
use crate::spatial::PointIndex;
use crate::{GaussianScene, Rng, Vec3};

/// Share of Eikonal samples drawn uniformly over the scene bounds.
pub const EIKONAL_UNIFORM_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_erank: f64,
    pub lambda_eikonal: f64,
    pub lambda_sdf_gauss: f64,
    pub lambda_attach: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_erank: 0.1,
            lambda_eikonal: 0.1,
            lambda_sdf_gauss: 1.0,
            lambda_attach: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_erank", self.lambda_erank),
            ("lambda_eikonal", self.lambda_eikonal),
            ("lambda_sdf_gauss", self.lambda_sdf_gauss),
            ("lambda_attach", self.lambda_attach),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Only the attachment term stays on.
    pub fn attach_only(&self) -> Self {
        Self {
            lambda_erank: 0.0,
            lambda_eikonal: 0.0,
            lambda_sdf_gauss: 0.0,
            ..*self
        }
    }
}

/// Sampling settings shared by the stochastic terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub eikonal_samples: usize,
    /// Covariance inflation for Eikonal samples around Gaussians.
    pub sigma_expand: f64,
    pub sdf_gauss_samples_per_gaussian: usize,
    pub erank_epsilon: f64,
    /// Let the consistency term move Gaussian means, scales and rotations.
    pub sdf_gauss_to_gaussians: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eikonal_samples: 256,
            sigma_expand: 3.0,
            sdf_gauss_samples_per_gaussian: 1,
            erank_epsilon: DEFAULT_ERANK_EPSILON,
            sdf_gauss_to_gaussians: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub eikonal: usize,
    pub sdf_gauss: usize,
    pub attach_targets: usize,
}

/// Per-term values of one evaluation plus the weights that combined them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub attach: f64,
    pub erank: f64,
    pub eikonal: f64,
    pub sdf_gauss: f64,
    /// Weights actually applied (after any warmup gating).
    pub weights: LossWeights,
    pub counts: SampleCounts,
}

impl LossBreakdown {
    /// The weighted sum recomputed from the parts.
    pub fn recombine(&self) -> f64 {
        let w = &self.weights;
        w.lambda_attach * self.attach
            + w.lambda_erank * self.erank
            + w.lambda_eikonal * self.eikonal
            + w.lambda_sdf_gauss * self.sdf_gauss
    }
}

/// Gradients for every Gaussian parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub means: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    /// With respect to `(w, x, y, z)`, tangent to the unit sphere.
    pub rotations: Vec<[f64; 4]>,
}

impl SceneGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![Vec3::zeros(); n],
            scales: vec![Vec3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
        }
    }

    pub fn add_scaled(&mut self, other: &SceneGrads, w: f64) {
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += b * w;
        }
        for (a, b) in self.scales.iter_mut().zip(&other.scales) {
            *a += b * w;
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            for k in 0..4 {
                a[k] += w * b[k];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub scene: SceneGrads,
    pub network: Vec<f64>,
}

impl Gradients {
    pub fn zeros(scene: &GaussianScene, net: &SdfNetwork) -> Self {
        Self {
            scene: SceneGrads::zeros(scene.len()),
            network: vec![0.0; net.num_params()],
        }
    }
}

fn require_scene(scene: &GaussianScene, what: &str) -> Result<()> {
    if scene.is_empty() {
        Err(domain(format!("{what} needs a non-empty scene")))
    } else {
        Ok(())
    }
}

/// Eikonal sample points: 90% around randomly chosen Gaussians with their
/// spread multiplied by `sigma_expand`, then 10% uniform over the bounds.
pub fn eikonal_samples(
    scene: &GaussianScene,
    count: usize,
    sigma_expand: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec3>> {
    require_scene(scene, "eikonal sampling")?;
    if count == 0 {
        return Err(domain("eikonal sample count must be at least 1"));
    }
    let n_uniform = (count as f64 * EIKONAL_UNIFORM_FRACTION).floor() as usize;
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count - n_uniform {
        let g = &scene.gaussians[rng.random_range(0..scene.len())];
        let z = standard_normal3(rng) * sigma_expand;
        pts.push(g.point_at(&z));
    }
    for _ in 0..n_uniform {
        pts.push(scene.bounds.sample_uniform(rng));
    }
    Ok(pts)
}

/// Mean of `(|grad f| - 1)^2` over `points`.
pub fn eikonal_value<F: SdfField + ?Sized>(field: &F, points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(domain("eikonal residual needs at least one point"));
    }
    let mut sum = 0.0;
    for x in points {
        let g = field.value_and_gradient(x)?.gradient;
        sum += (g.norm() - 1.0).powi(2);
    }
    Ok(sum / points.len() as f64)
}

/// Eikonal residual at fixed points with its network parameter gradient.
pub fn eikonal_at(net: &SdfNetwork, points: &[Vec3]) -> Result<(f64, Vec<f64>)> {
    if points.is_empty() {
        return Err(domain("eikonal residual needs at least one point"));
    }
    let n = points.len() as f64;
    let mut grads = vec![0.0; net.num_params()];
    let mut ev = Evaluator::new(net);
    let mut sum = 0.0;
    for x in points {
        let g = ev.eval(x, true)?.gradient;
        let norm = g.norm();
        sum += (norm - 1.0).powi(2);
        if norm > 0.0 {
            let up = Upstream {
                value: 0.0,
                gradient: g * (2.0 * (norm - 1.0) / (n * norm)),
            };
            ev.accumulate(&up, &mut grads)?;
        }
    }
    Ok((sum / n, grads))
}

pub fn eikonal_loss(
    net: &SdfNetwork,
    scene: &GaussianScene,
    count: usize,
    sigma_expand: f64,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let pts = eikonal_samples(scene, count, sigma_expand, rng)?;
    eikonal_at(net, &pts)
}

/// One reparameterized draw `point = mean + R diag(scales) z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyDraw {
    pub gaussian: usize,
    pub z: Vec3,
    pub point: Vec3,
}

/// `per_gaussian` draws from every Gaussian, in scene order.
pub fn consistency_draws(
    scene: &GaussianScene,
    per_gaussian: usize,
    rng: &mut Rng,
) -> Result<Vec<ConsistencyDraw>> {
    require_scene(scene, "SDF-Gaussian sampling")?;
    if per_gaussian == 0 {
        return Err(domain("samples per Gaussian must be at least 1"));
    }
    let mut draws = Vec::with_capacity(scene.len() * per_gaussian);
    for (k, g) in scene.gaussians.iter().enumerate() {
        for _ in 0..per_gaussian {
            let z = standard_normal3(rng);
            draws.push(ConsistencyDraw {
                gaussian: k,
                z,
                point: g.point_at(&z),
            });
        }
    }
    Ok(draws)
}

/// Mean of `f(x)^2` over the draws.
pub fn sdf_gauss_value<F: SdfField + ?Sized>(field: &F, draws: &[ConsistencyDraw]) -> Result<f64> {
    if draws.is_empty() {
        return Err(domain("SDF-Gaussian loss needs at least one draw"));
    }
    let mut sum = 0.0;
    for d in draws {
        sum += field.value(&d.point)?.powi(2);
    }
    Ok(sum / draws.len() as f64)
}

/// Consistency loss at fixed draws, with gradients for the network and,
/// when `to_gaussians` is set, for the Gaussians through the draws.
pub fn sdf_gauss_at(
    net: &SdfNetwork,
    scene: &GaussianScene,
    draws: &[ConsistencyDraw],
    to_gaussians: bool,
) -> Result<(f64, Gradients)> {
    if draws.is_empty() {
        return Err(domain("SDF-Gaussian loss needs at least one draw"));
    }
    let m = draws.len() as f64;
    let mut grads = Gradients::zeros(scene, net);
    let mut ev = Evaluator::new(net);
    let rotations: Vec<_> = scene
        .gaussians
        .iter()
        .map(|g| g.rotation_matrix())
        .collect();
    let mut sum = 0.0;
    for d in draws {
        let e = ev.eval(&d.point, to_gaussians)?;
        sum += e.value * e.value;
        let up = 2.0 * e.value / m;
        ev.accumulate(
            &Upstream {
                value: up,
                gradient: Vec3::zeros(),
            },
            &mut grads.network,
        )?;
        if to_gaussians {
            let g = &scene.gaussians[d.gaussian];
            let xbar = e.gradient * up;
            grads.scene.means[d.gaussian] += xbar;
            let local = rotations[d.gaussian].transpose() * xbar;
            grads.scene.scales[d.gaussian] += local.component_mul(&d.z);
            let v = g.scales.component_mul(&d.z);
            let qbar = rotate_vjp(&g.rotation, &v, &xbar);
            let acc = &mut grads.scene.rotations[d.gaussian];
            for k in 0..4 {
                acc[k] += qbar[k];
            }
        }
    }
    Ok((sum / m, grads))
}

pub fn sdf_gauss_loss(
    net: &SdfNetwork,
    scene: &GaussianScene,
    samples_per_gaussian: usize,
    to_gaussians: bool,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let draws = consistency_draws(scene, samples_per_gaussian, rng)?;
    sdf_gauss_at(net, scene, &draws, to_gaussians)
}

/// Symmetric chamfer term between Gaussian means and target points, with
/// its gradient for the means.
pub fn attach_loss(scene: &GaussianScene, targets: &[Vec3]) -> Result<(f64, SceneGrads)> {
    require_scene(scene, "attach loss")?;
    if targets.is_empty() {
        return Err(domain("attach loss needs at least one target point"));
    }
    let means = scene.means();
    let n = means.len() as f64;
    let m = targets.len() as f64;
    let mut grads = SceneGrads::zeros(means.len());

    let mean_index = PointIndex::new(&means);
    let mut to_means = 0.0;
    for t in targets {
        let (k, d2) = mean_index.nearest(t);
        to_means += d2;
        grads.means[k] += (means[k] - t) * (2.0 / m);
    }
    let target_index = PointIndex::new(targets);
    let mut to_targets = 0.0;
    for (k, mu) in means.iter().enumerate() {
        let (j, d2) = target_index.nearest(mu);
        to_targets += d2;
        grads.means[k] += (mu - targets[j]) * (2.0 / n);
    }
    Ok((to_means / m + to_targets / n, grads))
}

fn tag(term: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Computation(_) => Error::NonFinite { term, iteration: 0 },
        other => other,
    }
}

fn check_finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, iteration: 0 })
    }
}

/// Every term, combined with `weights`, plus the combined gradient.
///
/// All four terms are always evaluated so their values can be logged; terms
/// whose weight is zero contribute no gradient. Random draws happen in a
/// fixed order (Eikonal samples, then consistency draws).
pub fn total_loss(
    scene: &GaussianScene,
    net: &SdfNetwork,
    targets: &[Vec3],
    weights: &LossWeights,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Gradients)> {
    total_loss_with_aux(scene, net, targets, weights, 0.0, cfg, rng)
}

/// [`total_loss`] plus an Eikonal gradient of weight `aux_eikonal` on the
/// network only. The auxiliary term is not part of `total`; the trainer uses
/// it to shape the field while the regularizers are still gated off.
pub fn total_loss_with_aux(
    scene: &GaussianScene,
    net: &SdfNetwork,
    targets: &[Vec3],
    weights: &LossWeights,
    aux_eikonal: f64,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Gradients)> {
    weights.validate()?;
    if !(aux_eikonal >= 0.0 && aux_eikonal.is_finite()) {
        return Err(domain(format!(
            "auxiliary Eikonal weight must be >= 0, got {aux_eikonal}"
        )));
    }
    let mut grads = Gradients::zeros(scene, net);

    let (attach, g_attach) = attach_loss(scene, targets)?;
    let attach = check_finite("attach", attach)?;
    if weights.lambda_attach > 0.0 {
        grads.scene.add_scaled(&g_attach, weights.lambda_attach);
    }

    let (erank, g_erank) = erank_loss(scene, cfg.erank_epsilon)?;
    let erank = check_finite("erank", erank)?;
    if weights.lambda_erank > 0.0 {
        for (a, b) in grads.scene.scales.iter_mut().zip(&g_erank) {
            *a += b * weights.lambda_erank;
        }
    }

    let eik_pts = eikonal_samples(scene, cfg.eikonal_samples, cfg.sigma_expand, rng)?;
    let (eikonal, g_eik) = eikonal_at(net, &eik_pts).map_err(tag("eikonal"))?;
    let eikonal = check_finite("eikonal", eikonal)?;
    let w_eik = weights.lambda_eikonal + aux_eikonal;
    if w_eik > 0.0 {
        for (a, b) in grads.network.iter_mut().zip(&g_eik) {
            *a += w_eik * b;
        }
    }

    let draws = consistency_draws(scene, cfg.sdf_gauss_samples_per_gaussian, rng)?;
    let (sdf_gauss, g_sdf) = sdf_gauss_at(
        net,
        scene,
        &draws,
        cfg.sdf_gauss_to_gaussians && weights.lambda_sdf_gauss > 0.0,
    )
    .map_err(tag("sdf_gauss"))?;
    let sdf_gauss = check_finite("sdf_gauss", sdf_gauss)?;
    if weights.lambda_sdf_gauss > 0.0 {
        grads
            .scene
            .add_scaled(&g_sdf.scene, weights.lambda_sdf_gauss);
        for (a, b) in grads.network.iter_mut().zip(&g_sdf.network) {
            *a += weights.lambda_sdf_gauss * b;
        }
    }

    let mut breakdown = LossBreakdown {
        total: 0.0,
        attach,
        erank,
        eikonal,
        sdf_gauss,
        weights: *weights,
        counts: SampleCounts {
            eikonal: eik_pts.len(),
            sdf_gauss: draws.len(),
            attach_targets: targets.len(),
        },
    };
    breakdown.total = check_finite("total", breakdown.recombine())?;
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Aabb, Gaussian};
    use crate::sdf::NetworkConfig;
    use crate::shapes::{ScaledField, Shape};

    fn bounds() -> Aabb {
        Aabb::cube(Vec3::zeros(), 1.0).unwrap()
    }

    fn plane_z() -> Shape {
        Shape::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
            half_size: 1.0,
        }
    }

    /// Linear network computing `w . x`.
    fn linear_net(w: Vec3) -> SdfNetwork {
        let cfg = NetworkConfig {
            hidden_layers: 0,
            skip_at: None,
            ..NetworkConfig::desk()
        };
        let mut net = SdfNetwork::zeros(cfg, &bounds()).unwrap();
        net.layer_mut(0).0[..3].copy_from_slice(w.as_slice());
        net
    }

    fn scene_of(gs: Vec<Gaussian>) -> GaussianScene {
        GaussianScene::new(gs, bounds(), 0).unwrap()
    }

    fn random_scene(n: usize, rng: &mut Rng) -> GaussianScene {
        let gs = (0..n)
            .map(|_| {
                let q = standard_normal3(rng);
                let w: f64 = rng.random::<f64>() + 0.1;
                let norm = (w * w + q.norm_squared()).sqrt();
                Gaussian::new(
                    bounds().sample_uniform(rng) * 0.8,
                    Vec3::from_fn(|_, _| 0.02 + 0.1 * rng.random::<f64>()),
                    [w / norm, q.x / norm, q.y / norm, q.z / norm],
                    1.0,
                )
                .unwrap()
            })
            .collect();
        scene_of(gs)
    }

    #[test]
    fn eikonal_of_plane_and_doubled_plane() {
        let mut rng = crate::rng_from_seed(1);
        let scene = random_scene(10, &mut rng);
        let pts = eikonal_samples(&scene, 200, 3.0, &mut rng).unwrap();
        assert_eq!(pts.len(), 200);
        let (v, _) = eikonal_at(&linear_net(Vec3::x()), &pts).unwrap();
        assert!(v.abs() < 1e-24);
        let (v, _) = eikonal_at(&linear_net(Vec3::x() * 2.0), &pts).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eikonal_of_sphere_distance() {
        let mut rng = crate::rng_from_seed(2);
        let scene = random_scene(10, &mut rng);
        let pts: Vec<Vec3> = eikonal_samples(&scene, 500, 3.0, &mut rng)
            .unwrap()
            .into_iter()
            .filter(|p| p.norm() > 1e-3)
            .collect();
        let sphere = Shape::Sphere { radius: 0.5 };
        assert!(eikonal_value(&sphere, &pts).unwrap() < 1e-10);
        let doubled = ScaledField {
            inner: sphere,
            factor: 2.0,
        };
        assert!((eikonal_value(&doubled, &pts).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eikonal_sampling_rejects_empty_requests() {
        let mut rng = crate::rng_from_seed(3);
        let scene = random_scene(2, &mut rng);
        assert!(eikonal_samples(&scene, 0, 3.0, &mut rng).is_err());
        let pts = eikonal_samples(&scene, 20, 3.0, &mut rng).unwrap();
        // Last 10% uniform, all within bounds.
        assert!(pts[18..].iter().all(|p| scene.bounds.contains(p)));
    }

    #[test]
    fn sdf_gauss_vanishes_on_the_surface() {
        let mut rng = crate::rng_from_seed(4);
        let gs = (0..5)
            .map(|i| {
                Gaussian::axis_aligned(Vec3::new(0.1 * i as f64, -0.2, 0.0), Vec3::repeat(1e-9))
                    .unwrap()
            })
            .collect();
        let scene = scene_of(gs);
        let draws = consistency_draws(&scene, 4, &mut rng).unwrap();
        assert!(sdf_gauss_value(&plane_z(), &draws).unwrap() < 1e-16);
    }

    #[test]
    fn sdf_gauss_plane_expectation() {
        // E[x3^2] = mu3^2 + s3^2 = 1e-4 for mu3 = 0, s3 = 0.01.
        let mut rng = crate::rng_from_seed(5);
        let g = Gaussian::axis_aligned(Vec3::zeros(), Vec3::new(0.2, 0.3, 0.01)).unwrap();
        let scene = scene_of(vec![g]);
        let n = 20_000;
        let draws = consistency_draws(&scene, n, &mut rng).unwrap();
        let vals: Vec<f64> = draws.iter().map(|d| d.point.z.powi(2)).collect();
        let mean = sdf_gauss_value(&plane_z(), &draws).unwrap();
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1e-4).abs() < 3.0 * se, "{mean} vs 1e-4 (se {se})");
    }

    #[test]
    fn sdf_gauss_offset_plane() {
        let mut rng = crate::rng_from_seed(6);
        let g = Gaussian::axis_aligned(Vec3::new(0.0, 0.0, 0.5), Vec3::repeat(1e-9)).unwrap();
        let scene = scene_of(vec![g]);
        let (v, _) = sdf_gauss_loss(&linear_net(Vec3::z()), &scene, 8, true, &mut rng).unwrap();
        // Draws sit within a few 1e-9 of the mean, so f^2 = 0.25 + O(1e-9).
        assert!((v - 0.25).abs() < 1e-8, "{v}");
    }

    #[test]
    fn sdf_gauss_step_moves_means_toward_plane() {
        let mut rng = crate::rng_from_seed(7);
        let scene = random_scene(6, &mut rng);
        let net = linear_net(Vec3::z());
        let draws = consistency_draws(&scene, 3, &mut rng).unwrap();
        let (before, g) = sdf_gauss_at(&net, &scene, &draws, true).unwrap();
        let mut moved = scene.clone();
        for (gauss, dm) in moved.gaussians.iter_mut().zip(&g.scene.means) {
            gauss.mean -= dm * 0.05;
        }
        let redrawn: Vec<_> = draws
            .iter()
            .map(|d| ConsistencyDraw {
                point: moved.gaussians[d.gaussian].point_at(&d.z),
                ..*d
            })
            .collect();
        let (after, _) = sdf_gauss_at(&net, &moved, &redrawn, true).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn attach_zero_on_targets_and_two_d_squared() {
        let pts = vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.0, 0.2)];
        let scene = scene_of(
            pts.iter()
                .map(|p| Gaussian::axis_aligned(*p, Vec3::repeat(0.1)).unwrap())
                .collect(),
        );
        assert_eq!(attach_loss(&scene, &pts).unwrap().0, 0.0);

        let scene = scene_of(vec![Gaussian::axis_aligned(
            Vec3::zeros(),
            Vec3::repeat(0.1),
        )
        .unwrap()]);
        let d = 0.3;
        let (v, _) = attach_loss(&scene, &[Vec3::new(0.0, d, 0.0)]).unwrap();
        assert!((v - 2.0 * d * d).abs() < 1e-15);
        assert!(attach_loss(&scene, &[]).is_err());
    }

    #[test]
    fn attach_gradient_matches_finite_differences() {
        let mut rng = crate::rng_from_seed(8);
        for _ in 0..20 {
            let scene = random_scene(5, &mut rng);
            let targets: Vec<Vec3> = (0..20)
                .map(|_| bounds().sample_uniform(&mut rng) * 0.8)
                .collect();
            let (_, g) = attach_loss(&scene, &targets).unwrap();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..5 {
                for d in 0..3 {
                    let mut p = scene.clone();
                    let mut m = scene.clone();
                    p.gaussians[k].mean[d] += h;
                    m.gaussians[k].mean[d] -= h;
                    let fd = (attach_loss(&p, &targets).unwrap().0
                        - attach_loss(&m, &targets).unwrap().0)
                        / (2.0 * h);
                    num += (fd - g.means[k][d]).powi(2);
                    den += fd * fd;
                }
            }
            assert!(num.sqrt() / den.sqrt() < 1e-4);
        }
    }

    #[test]
    fn total_reduces_to_attach_with_zero_weights() {
        let mut rng = crate::rng_from_seed(9);
        let scene = random_scene(8, &mut rng);
        let targets: Vec<Vec3> = (0..30)
            .map(|_| bounds().sample_uniform(&mut rng) * 0.5)
            .collect();
        let net =
            SdfNetwork::init_geometric(NetworkConfig::desk(), &bounds(), 0.5, &mut rng).unwrap();
        let w = LossWeights::default().attach_only();
        let (b, g) =
            total_loss(&scene, &net, &targets, &w, &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(b.total, b.attach);
        assert!(g.network.iter().all(|v| *v == 0.0));
        assert!(g.scene.scales.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn total_is_linear_in_terms_and_reproducible() {
        let mut rng = crate::rng_from_seed(10);
        let scene = random_scene(8, &mut rng);
        let targets: Vec<Vec3> = (0..30)
            .map(|_| bounds().sample_uniform(&mut rng) * 0.5)
            .collect();
        let net =
            SdfNetwork::init_geometric(NetworkConfig::desk(), &bounds(), 0.5, &mut rng).unwrap();
        let ones = LossWeights {
            lambda_erank: 1.0,
            lambda_eikonal: 1.0,
            lambda_sdf_gauss: 1.0,
            lambda_attach: 1.0,
        };
        let cfg = LossConfig::default();
        let (a, ga) = total_loss(
            &scene,
            &net,
            &targets,
            &ones,
            &cfg,
            &mut crate::rng_from_seed(3),
        )
        .unwrap();
        assert!((a.total - (a.attach + a.erank + a.eikonal + a.sdf_gauss)).abs() < 1e-12);
        let (b, gb) = total_loss(
            &scene,
            &net,
            &targets,
            &ones,
            &cfg,
            &mut crate::rng_from_seed(3),
        )
        .unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(ga, gb);
        assert!(a.attach >= 0.0 && a.erank >= 0.0 && a.eikonal >= 0.0 && a.sdf_gauss >= 0.0);
    }
}
