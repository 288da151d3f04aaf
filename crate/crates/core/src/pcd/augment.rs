use std::f64::consts::TAU;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Random rotation about the coordinate axes. For each enabled axis an angle
/// is drawn uniformly from `[angle_min, angle_max]`; rotations are composed
/// x first, then y, then z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationSpec {
    pub axes: [bool; 3],
    pub angle_min: f64,
    pub angle_max: f64,
}

impl RotationSpec {
    pub const NONE: RotationSpec = RotationSpec {
        axes: [false; 3],
        angle_min: 0.0,
        angle_max: 0.0,
    };

    /// Exactly `angle` radians about one axis (0 = x, 1 = y, 2 = z).
    pub fn fixed(axis: usize, angle: f64) -> Self {
        let mut axes = [false; 3];
        axes[axis] = true;
        Self {
            axes,
            angle_min: angle,
            angle_max: angle,
        }
    }

    pub fn uniform(axes: [bool; 3], max_angle: f64) -> Self {
        Self {
            axes,
            angle_min: 0.0,
            angle_max: max_angle,
        }
    }
}

/// Translation, then per-coordinate Gaussian jitter, then rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub translation: Point3,
    pub jitter_sigma: f64,
    pub rotation: RotationSpec,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            translation: Point3::ORIGIN,
            jitter_sigma: 0.0,
            rotation: RotationSpec::NONE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.translation.is_finite() {
            return Err(Error::Argument("translation must be finite".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "jitter sigma must be finite and >= 0, got {}",
                self.jitter_sigma
            )));
        }
        let r = &self.rotation;
        let in_range = |a: f64| (0.0..=TAU).contains(&a);
        if !(in_range(r.angle_min) && in_range(r.angle_max) && r.angle_min <= r.angle_max) {
            return Err(Error::Argument(format!(
                "rotation range [{}, {}] must lie within [0, 2pi]",
                r.angle_min, r.angle_max
            )));
        }
        Ok(())
    }
}

pub fn augment(cloud: &PointCloud, spec: &AugmentSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);

    // Angles are drawn before the jitter so they do not depend on cloud size.
    let mut angles = [None; 3];
    for (axis, slot) in angles.iter_mut().enumerate() {
        if spec.rotation.axes[axis] {
            let (lo, hi) = (spec.rotation.angle_min, spec.rotation.angle_max);
            *slot = Some(if lo == hi { lo } else { rng.range(lo, hi) });
        }
    }

    let mut pts: Vec<Point3> = cloud.points().iter().map(|p| *p + spec.translation).collect();
    if spec.jitter_sigma > 0.0 {
        for p in &mut pts {
            p.x += spec.jitter_sigma * rng.normal();
            p.y += spec.jitter_sigma * rng.normal();
            p.z += spec.jitter_sigma * rng.normal();
        }
    }
    for (axis, angle) in angles.iter().enumerate() {
        if let Some(theta) = angle {
            let (s, c) = theta.sin_cos();
            for p in &mut pts {
                *p = rotate(*p, axis, s, c);
            }
        }
    }
    cloud.map_points(pts)
}

fn rotate(p: Point3, axis: usize, s: f64, c: f64) -> Point3 {
    match axis {
        0 => Point3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z),
        1 => Point3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z),
        _ => Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_spec() {
        let c = PointCloud::new(vec![Point3::new(0.3, -1.0, 2.0), Point3::new(5.0, 6.0, 7.0)]).unwrap();
        assert_eq!(augment(&c, &AugmentSpec::identity(4)).unwrap(), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let spec = AugmentSpec {
            rotation: RotationSpec::fixed(2, FRAC_PI_2),
            ..AugmentSpec::identity(0)
        };
        let p = augment(&c, &spec).unwrap().points()[0];
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let c = PointCloud::new(vec![Point3::ORIGIN]).unwrap();
        let mut spec = AugmentSpec::identity(0);
        spec.jitter_sigma = -1.0;
        assert!(augment(&c, &spec).is_err());
        let spec = AugmentSpec {
            rotation: RotationSpec::uniform([true, false, false], 7.0),
            ..AugmentSpec::identity(0)
        };
        assert!(augment(&c, &spec).is_err());
    }

    #[test]
    fn jitter_is_seeded() {
        let c = PointCloud::new(vec![Point3::ORIGIN; 10]).unwrap();
        let spec = AugmentSpec {
            jitter_sigma: 0.1,
            ..AugmentSpec::identity(77)
        };
        let a = augment(&c, &spec).unwrap();
        assert_eq!(a, augment(&c, &spec).unwrap());
        assert_ne!(a, c);
        assert_eq!(a.len(), c.len());
    }

    proptest! {
        #[test]
        fn rotation_preserves_pairwise_distances(
            coords in prop::collection::vec(-5.0f64..5.0, 3..60),
            axes in prop::array::uniform3(any::<bool>()),
            hi in 0.0f64..TAU,
            seed in any::<u64>(),
        ) {
            let pts: Vec<Point3> = coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
            let cloud = PointCloud::new(pts).unwrap();
            let spec = AugmentSpec { rotation: RotationSpec::uniform(axes, hi), ..AugmentSpec::identity(seed) };
            let out = augment(&cloud, &spec).unwrap();
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let before = cloud.points()[i].dist_sq(&cloud.points()[j]).sqrt();
                    let after = out.points()[i].dist_sq(&out.points()[j]).sqrt();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }
    }
}
