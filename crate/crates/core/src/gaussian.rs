//! Gaussian primitives and the effective-rank shape measure.
//!
//! The effective rank of a Gaussian is the exponential of the Shannon
//! entropy of its normalized squared scales. It is a smooth count of how
//! many axes carry significant extent: ~1 for needles, ~2 for disks and
//! 3 for isotropic blobs.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::{Mat3, Rng, Vec3};

/// Lower clamp applied to normalized squared scales before taking logs.
pub const Q_CLAMP: f64 = 1e-12;
/// Default stabilizer inside the erank log penalty.
pub const DEFAULT_ERANK_EPSILON: f64 = 1e-8;
/// Scales are clamped to this floor after every optimizer step.
pub const SCALE_FLOOR: f64 = 1e-6;

const QUAT_NORM_TOL: f64 = 1e-6;

/// Axis-aligned box in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr", into = "AabbRepr")]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Serialize, Deserialize)]
struct AabbRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl From<Aabb> for AabbRepr {
    fn from(b: Aabb) -> Self {
        Self {
            min: b.min.into(),
            max: b.max.into(),
        }
    }
}

impl TryFrom<AabbRepr> for Aabb {
    type Error = crate::Error;

    fn try_from(r: AabbRepr) -> Result<Self> {
        Aabb::new(Vec3::from(r.min), Vec3::from(r.max))
    }
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.iter().chain(max.iter()).all(|v| v.is_finite())) {
            return Err(domain("bounds must be finite"));
        }
        if (0..3).any(|i| min[i] >= max[i]) {
            return Err(domain(format!(
                "bounds min {:?} must be strictly below max {:?}",
                min.as_slice(),
                max.as_slice()
            )));
        }
        Ok(Self { min, max })
    }

    /// Cube of half-width `half` around `center`.
    pub fn cube(center: Vec3, half: f64) -> Result<Self> {
        Self::new(center - Vec3::repeat(half), center + Vec3::repeat(half))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Half of the largest side length.
    pub fn half_extent(&self) -> f64 {
        self.extent().max() * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec3 {
        Vec3::from_fn(|i, _| self.min[i] + rng.random::<f64>() * (self.max[i] - self.min[i]))
    }
}

/// One anisotropic 3D Gaussian primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Per-axis standard deviations, stored directly (not as logs).
    pub scales: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// Carried for file compatibility; no loss reads it.
    pub opacity: f64,
}

impl Gaussian {
    /// Builds a Gaussian from a `(w, x, y, z)` quaternion that must already
    /// be unit length within 1e-6.
    pub fn new(mean: Vec3, scales: Vec3, rotation_wxyz: [f64; 4], opacity: f64) -> Result<Self> {
        let [w, x, y, z] = rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !q.coords.iter().all(|c| c.is_finite()) || (q.norm() - 1.0).abs() > QUAT_NORM_TOL {
            return Err(domain(format!(
                "rotation quaternion {rotation_wxyz:?} is not unit length"
            )));
        }
        let g = Self {
            mean,
            scales,
            rotation: UnitQuaternion::new_normalize(q),
            opacity,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn axis_aligned(mean: Vec3, scales: Vec3) -> Result<Self> {
        Self::new(mean, scales, [1.0, 0.0, 0.0, 0.0], 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(domain("Gaussian mean must be finite"));
        }
        check_scales(&self.scales)?;
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(domain(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        Ok(())
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn rotation_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn covariance(&self) -> Mat3 {
        covariance(self)
    }

    /// Maps a standard-normal draw `z` to `mean + R diag(scales) z`.
    pub fn point_at(&self, z: &Vec3) -> Vec3 {
        self.mean + self.rotation_matrix() * self.scales.component_mul(z)
    }

    pub fn erank(&self) -> Result<ErankTerms> {
        effective_rank(&self.scales)
    }
}

/// Ordered Gaussians plus the region they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub bounds: Aabb,
    pub seed: u64,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, bounds: Aabb, seed: u64) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(domain("scene must contain at least one Gaussian"));
        }
        for (i, g) in gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| domain(format!("Gaussian {i}: {e}")))?;
            if !bounds.contains(&g.mean) {
                return Err(domain(format!(
                    "Gaussian {i} mean {:?} lies outside the scene bounds",
                    g.mean.as_slice()
                )));
            }
        }
        Ok(Self {
            gaussians,
            bounds,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn means(&self) -> Vec<Vec3> {
        self.gaussians.iter().map(|g| g.mean).collect()
    }

    /// Per-Gaussian effective ranks in scene order.
    pub fn eranks(&self) -> Result<Vec<f64>> {
        self.gaussians
            .iter()
            .map(|g| g.erank().map(|t| t.erank))
            .collect()
    }

    pub fn mean_erank(&self) -> Result<f64> {
        let e = self.eranks()?;
        Ok(e.iter().sum::<f64>() / e.len() as f64)
    }
}

/// Intermediate quantities of the effective-rank computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErankTerms {
    /// Normalized squared scales; sums to one.
    pub q: Vec3,
    /// Shannon entropy of `q` in nats.
    pub entropy: f64,
    /// `exp(entropy)`, in `[1, 3]`.
    pub erank: f64,
}

fn check_scales(scales: &Vec3) -> Result<()> {
    if scales.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(domain(format!(
            "scales must be finite and strictly positive, got {:?}",
            scales.as_slice()
        )))
    }
}

/// `q_i = s_i^2 / sum_j s_j^2`.
pub fn normalized_squared_scales(scales: &Vec3) -> Result<Vec3> {
    check_scales(scales)?;
    let sq = scales.component_mul(scales);
    Ok(sq / sq.sum())
}

pub fn effective_rank(scales: &Vec3) -> Result<ErankTerms> {
    let q = normalized_squared_scales(scales)?;
    let entropy = -q
        .iter()
        .map(|&qi| qi * qi.clamp(Q_CLAMP, 1.0).ln())
        .sum::<f64>();
    Ok(ErankTerms {
        q,
        entropy,
        erank: entropy.exp(),
    })
}

/// Effective rank and its gradient with respect to the raw scales.
pub fn effective_rank_with_grad(scales: &Vec3) -> Result<(ErankTerms, Vec3)> {
    let terms = effective_rank(scales)?;
    let q = terms.q;
    let sum_sq = scales.norm_squared();
    // dH/dq_i, honoring the clamp.
    let dh_dq = q.map(|qi| {
        if qi >= Q_CLAMP {
            -(qi.ln() + 1.0)
        } else {
            -Q_CLAMP.ln()
        }
    });
    let mixed = dh_dq.dot(&q);
    let dh_ds = Vec3::from_fn(|j, _| 2.0 * scales[j] / sum_sq * (dh_dq[j] - mixed));
    Ok((terms, dh_ds * terms.erank))
}

/// Index of the smallest scale; ties go to the lowest index.
pub fn smallest_scale_index(scales: &Vec3) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if scales[i] < scales[best] {
            best = i;
        }
    }
    best
}

/// `max(-ln(erank - 1 + eps), 0) + s_min`.
pub fn erank_penalty(gaussian: &Gaussian, epsilon: f64) -> Result<f64> {
    erank_penalty_with_grad(&gaussian.scales, epsilon).map(|(p, _)| p)
}

/// Penalty value and its gradient with respect to the three raw scales.
pub fn erank_penalty_with_grad(scales: &Vec3, epsilon: f64) -> Result<(f64, Vec3)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(domain(format!(
            "erank epsilon must be positive, got {epsilon}"
        )));
    }
    let (terms, derank) = effective_rank_with_grad(scales)?;
    let shifted = terms.erank - 1.0 + epsilon;
    let log_term = -shifted.ln();
    let k = smallest_scale_index(scales);

    let mut grad = Vec3::zeros();
    grad[k] = 1.0;
    let mut value = scales[k];
    if log_term > 0.0 {
        value += log_term;
        grad -= derank / shifted;
    }
    Ok((value, grad))
}

/// Mean erank penalty over the scene and per-Gaussian scale gradients.
pub fn erank_loss(scene: &GaussianScene, epsilon: f64) -> Result<(f64, Vec<Vec3>)> {
    if scene.is_empty() {
        return Err(domain("erank loss needs a non-empty scene"));
    }
    let n = scene.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scene.len());
    for g in &scene.gaussians {
        let (p, dp) = erank_penalty_with_grad(&g.scales, epsilon)?;
        total += p;
        grads.push(dp / n);
    }
    Ok((total / n, grads))
}

/// `R diag(s^2) R^T`.
pub fn covariance(gaussian: &Gaussian) -> Mat3 {
    let r = gaussian.rotation_matrix();
    let d = Mat3::from_diagonal(&gaussian.scales.component_mul(&gaussian.scales));
    let c = r * d * r.transpose();
    // Symmetrize away round-off.
    (c + c.transpose()) * 0.5
}

pub fn standard_normal3(rng: &mut Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Uniformly distributed rotation as a (w, x, y, z) unit quaternion.
pub fn random_rotation(rng: &mut Rng) -> [f64; 4] {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let v = standard_normal3(rng);
        let n = (w * w + v.norm_squared()).sqrt();
        if n > 1e-12 {
            return [w / n, v.x / n, v.y / n, v.z / n];
        }
    }
}

/// Draws `count` points from the Gaussian's normal distribution.
pub fn sample_from_gaussian(gaussian: &Gaussian, count: usize, rng: &mut Rng) -> Vec<Vec3> {
    let r = gaussian.rotation_matrix();
    (0..count)
        .map(|_| {
            let z = standard_normal3(rng);
            gaussian.mean + r * gaussian.scales.component_mul(&z)
        })
        .collect()
}

/// Gradient of `upstream . (R(q) v)` with respect to the quaternion
/// coordinates `(w, x, y, z)`, projected onto the tangent space of the unit
/// sphere so it is the gradient through renormalization.
pub fn rotate_vjp(rotation: &UnitQuaternion<f64>, v: &Vec3, upstream: &Vec3) -> [f64; 4] {
    let q = rotation.quaternion();
    let w = q.w;
    let r = Vec3::new(q.i, q.j, q.k);
    // R v = v (1 - 2|r|^2) + 2w (r x v) + 2 r (r . v)
    let gw = 2.0 * upstream.dot(&r.cross(v));
    let gr = -4.0 * r * upstream.dot(v)
        + 2.0 * w * v.cross(upstream)
        + 2.0 * upstream * r.dot(v)
        + 2.0 * v * upstream.dot(&r);
    let g = [gw, gr.x, gr.y, gr.z];
    let qv = [w, r.x, r.y, r.z];
    let radial: f64 = g.iter().zip(qv.iter()).map(|(a, b)| a * b).sum();
    [
        g[0] - radial * qv[0],
        g[1] - radial * qv[1],
        g[2] - radial * qv[2],
        g[3] - radial * qv[3],
    ]
}
