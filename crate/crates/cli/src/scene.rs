//! Synthetic scenes: Gaussians scattered around an analytic surface.

use gsreg_core::gaussian::{random_rotation, standard_normal3};
use gsreg_core::{rng_from_seed, Aabb, Gaussian, GaussianScene, Result, Shape, Vec3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Scale ratios for `init_needles`: one long axis, two short ones.
pub const NEEDLE_RATIOS: [f64; 3] = [1.0, 0.1, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub shape: Shape,
    pub num_gaussians: usize,
    pub num_target_points: usize,
    /// Standard deviation of the noise added to target points.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Half width of the cubic scene bounds around the origin.
    pub bounds_half: f64,
    /// Largest initial scale of every Gaussian.
    pub init_scale: f64,
    /// Standard deviation of the offset between a Gaussian and its target.
    pub init_jitter: f64,
    pub init_needles: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Sphere { radius: 0.5 },
            num_gaussians: 200,
            num_target_points: 1000,
            noise_sigma: 0.0,
            seed: 0,
            bounds_half: 1.0,
            init_scale: 0.03,
            init_jitter: 0.02,
            init_needles: false,
        }
    }
}

impl SceneSpec {
    pub fn sphere() -> Self {
        Self::default()
    }

    pub fn plane() -> Self {
        Self {
            shape: Shape::Plane {
                normal: [0.0, 0.0, 1.0],
                offset: 0.0,
                half_size: 0.8,
            },
            ..Self::default()
        }
    }

    pub fn torus() -> Self {
        Self {
            shape: Shape::Torus {
                major: 0.5,
                minor: 0.2,
            },
            ..Self::default()
        }
    }

    pub fn bounds(&self) -> Result<Aabb> {
        Aabb::cube(Vec3::zeros(), self.bounds_half)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let bad = |m: String| Err(gsreg_core::Error::Domain(m));
        if self.num_gaussians == 0 {
            return bad("num_gaussians must be at least 1".into());
        }
        if self.num_target_points == 0 {
            return bad("num_target_points must be at least 1".into());
        }
        for (name, v) in [
            ("bounds_half", self.bounds_half),
            ("init_scale", self.init_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("init_jitter", self.init_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

pub struct GeneratedScene {
    pub scene: GaussianScene,
    pub targets: Vec<Vec3>,
    pub shape: Shape,
}

/// Builds the scene, the noisy target points and the analytic reference.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let bounds = spec.bounds()?;
    let mut rng = rng_from_seed(spec.seed);
    let targets: Vec<Vec3> = spec
        .shape
        .sample_surface(spec.num_target_points, &mut rng)
        .into_iter()
        .map(|p| {
            if spec.noise_sigma > 0.0 {
                bounds.clamp(&(p + standard_normal3(&mut rng) * spec.noise_sigma))
            } else {
                p
            }
        })
        .collect();
    let ratios = if spec.init_needles {
        Vec3::from(NEEDLE_RATIOS)
    } else {
        Vec3::repeat(1.0)
    };
    let gaussians = (0..spec.num_gaussians)
        .map(|_| {
            let anchor = targets[rng.random_range(0..targets.len())];
            let mean = bounds.clamp(&(anchor + standard_normal3(&mut rng) * spec.init_jitter));
            let rotation = if spec.init_needles {
                random_rotation(&mut rng)
            } else {
                [1.0, 0.0, 0.0, 0.0]
            };
            Gaussian::new(mean, ratios * spec.init_scale, rotation, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedScene {
        scene: GaussianScene::new(gaussians, bounds, spec.seed)?,
        targets,
        shape: spec.shape.clone(),
    })
}
