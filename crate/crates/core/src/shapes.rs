//! Analytic reference surfaces with exact signed distances.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gaussian::standard_normal3;
use crate::sdf::{SdfEval, SdfField};
use crate::{Rng, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Sphere of `radius` centered at the origin.
    Sphere { radius: f64 },
    /// Plane `normal . x = offset`; surface samples cover the square of
    /// half-width `half_size` around the point closest to the origin.
    Plane {
        normal: [f64; 3],
        offset: f64,
        half_size: f64,
    },
    /// Torus around the z axis.
    Torus { major: f64, minor: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Plane { .. } => "plane",
            Shape::Torus { .. } => "torus",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(domain(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Shape::Sphere { radius } => positive("sphere radius", *radius),
            Shape::Plane {
                normal,
                offset,
                half_size,
            } => {
                let n = Vec3::from(*normal);
                if !(n.norm() > 0.0 && n.norm().is_finite()) || !offset.is_finite() {
                    return Err(domain("plane normal must be non-zero and finite"));
                }
                positive("plane half_size", *half_size)
            }
            Shape::Torus { major, minor } => {
                positive("torus major radius", *major)?;
                positive("torus minor radius", *minor)?;
                if minor >= major {
                    return Err(domain("torus minor radius must be below the major radius"));
                }
                Ok(())
            }
        }
    }

    fn unit_normal(normal: &[f64; 3]) -> Vec3 {
        Vec3::from(*normal).normalize()
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        match self {
            Shape::Sphere { radius } => x.norm() - radius,
            Shape::Plane { normal, offset, .. } => Self::unit_normal(normal).dot(x) - offset,
            Shape::Torus { major, minor } => {
                let ring = (x.x * x.x + x.y * x.y).sqrt() - major;
                (ring * ring + x.z * x.z).sqrt() - minor
            }
        }
    }

    /// Spatial gradient; zero where the field is not differentiable.
    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match self {
            Shape::Sphere { .. } => {
                let n = x.norm();
                if n > 0.0 {
                    x / n
                } else {
                    Vec3::zeros()
                }
            }
            Shape::Plane { normal, .. } => Self::unit_normal(normal),
            Shape::Torus { major, .. } => {
                let rho = (x.x * x.x + x.y * x.y).sqrt();
                if rho == 0.0 {
                    return Vec3::zeros();
                }
                let ring = rho - major;
                let d = (ring * ring + x.z * x.z).sqrt();
                if d == 0.0 {
                    return Vec3::zeros();
                }
                Vec3::new(ring * x.x / (rho * d), ring * x.y / (rho * d), x.z / d)
            }
        }
    }

    /// Area-uniform points exactly on the surface.
    pub fn sample_surface(&self, count: usize, rng: &mut Rng) -> Vec<Vec3> {
        match self {
            Shape::Sphere { radius } => (0..count)
                .map(|_| loop {
                    let v = standard_normal3(rng);
                    let n = v.norm();
                    if n > 1e-12 {
                        break v * (radius / n);
                    }
                })
                .collect(),
            Shape::Plane {
                normal,
                offset,
                half_size,
            } => {
                let n = Self::unit_normal(normal);
                let (u, v) = tangent_basis(&n);
                let origin = n * *offset;
                (0..count)
                    .map(|_| {
                        let a = (2.0 * rng.random::<f64>() - 1.0) * half_size;
                        let b = (2.0 * rng.random::<f64>() - 1.0) * half_size;
                        origin + u * a + v * b
                    })
                    .collect()
            }
            Shape::Torus { major, minor } => (0..count)
                .map(|_| {
                    // Tube angle accepted with density proportional to the
                    // local circumference.
                    let phi = loop {
                        let phi = rng.random::<f64>() * std::f64::consts::TAU;
                        let w = (major + minor * phi.cos()) / (major + minor);
                        if rng.random::<f64>() <= w {
                            break phi;
                        }
                    };
                    let theta = rng.random::<f64>() * std::f64::consts::TAU;
                    let rho = major + minor * phi.cos();
                    Vec3::new(rho * theta.cos(), rho * theta.sin(), minor * phi.sin())
                })
                .collect(),
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, x: &Vec3) -> Vec3 {
        self.gradient(x)
    }
}

/// Two unit vectors completing `n` to an orthonormal frame.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

impl SdfField for Shape {
    fn value(&self, x: &Vec3) -> Result<f64> {
        Ok(self.sdf(x))
    }

    fn value_and_gradient(&self, x: &Vec3) -> Result<SdfEval> {
        Ok(SdfEval {
            value: self.sdf(x),
            gradient: self.gradient(x),
        })
    }
}

/// `factor * inner(x)`; handy for fields with a known Eikonal defect.
pub struct ScaledField<F> {
    pub inner: F,
    pub factor: f64,
}

impl<F: SdfField> SdfField for ScaledField<F> {
    fn value(&self, x: &Vec3) -> Result<f64> {
        Ok(self.factor * self.inner.value(x)?)
    }

    fn value_and_gradient(&self, x: &Vec3) -> Result<SdfEval> {
        let e = self.inner.value_and_gradient(x)?;
        Ok(SdfEval {
            value: self.factor * e.value,
            gradient: e.gradient * self.factor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes() -> Vec<Shape> {
        vec![
            Shape::Sphere { radius: 0.5 },
            Shape::Plane {
                normal: [0.2, -0.3, 1.0],
                offset: 0.1,
                half_size: 0.8,
            },
            Shape::Torus {
                major: 0.6,
                minor: 0.2,
            },
        ]
    }

    #[test]
    fn samples_lie_on_surface() {
        let mut rng = crate::rng_from_seed(1);
        for s in shapes() {
            for p in s.sample_surface(1000, &mut rng) {
                assert!(s.sdf(&p).abs() < 1e-9, "{} {p:?}", s.name());
            }
        }
    }

    #[test]
    fn gradients_are_unit_and_match_differences() {
        let mut rng = crate::rng_from_seed(2);
        let b = crate::Aabb::cube(Vec3::zeros(), 1.0).unwrap();
        for s in shapes() {
            for _ in 0..100 {
                let x = b.sample_uniform(&mut rng);
                let g = s.gradient(&x);
                assert!((g.norm() - 1.0).abs() < 1e-12);
                let h = 1e-6;
                for d in 0..3 {
                    let (mut p, mut m) = (x, x);
                    p[d] += h;
                    m[d] -= h;
                    let fd = (s.sdf(&p) - s.sdf(&m)) / (2.0 * h);
                    assert!((fd - g[d]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Shape::Sphere { radius: 0.0 }.validate().is_err());
        assert!(Shape::Torus {
            major: 0.2,
            minor: 0.3
        }
        .validate()
        .is_err());
        assert!(Shape::Plane {
            normal: [0.0; 3],
            offset: 0.0,
            half_size: 1.0
        }
        .validate()
        .is_err());
    }
}
