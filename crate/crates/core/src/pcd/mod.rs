//! Point cloud representation, file formats, and geometric operations.

mod augment;
mod io;
mod kdtree;

pub use augment::{augment, AugmentSpec, RotationSpec};
pub use io::{read_point_cloud, write_point_cloud, Format};
pub use kdtree::KdTree;

use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist_sq(&self, other: &Point3) -> f64 {
        let d = *self - *other;
        d.dot(&d)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Which process produced a cloud. Known indices are dense `0..K`; every
/// source outside the training set collapses into `Unknown`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SourceLabel {
    Known { index: usize, name: String },
    Unknown,
}

impl SourceLabel {
    pub fn known(index: usize, name: impl Into<String>) -> Self {
        SourceLabel::Known {
            index,
            name: name.into(),
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            SourceLabel::Known { index, .. } => Some(*index),
            SourceLabel::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, SourceLabel::Unknown)
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceLabel::Known { name, .. } => f.write_str(name),
            SourceLabel::Unknown => f.write_str("unknown"),
        }
    }
}

/// A nonempty, finite point sequence with optional provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub source_label: Option<SourceLabel>,
    pub shape_tag: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            source_label: None,
            shape_tag: None,
        })
    }

    pub fn with_label(mut self, label: SourceLabel) -> Self {
        self.source_label = Some(label);
        self
    }

    pub fn with_shape(mut self, shape: impl Into<String>) -> Self {
        self.shape_tag = Some(shape.into());
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: construction rejects empty clouds.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// A cloud with the same metadata and different points.
    pub fn map_points(&self, points: Vec<Point3>) -> Result<Self> {
        let mut out = PointCloud::new(points)?;
        out.source_label = self.source_label.clone();
        out.shape_tag = self.shape_tag.clone();
        Ok(out)
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or_else(|| {
                Error::Argument(format!("index {i} out of range for {} points", self.len()))
            })?;
            pts.push(*p);
        }
        self.map_points(pts)
    }

    pub fn centroid(&self) -> Point3 {
        let sum = self
            .points
            .iter()
            .fold(Point3::ORIGIN, |acc, p| acc + *p);
        sum * (1.0 / self.len() as f64)
    }

    /// Largest distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.points
            .iter()
            .map(|p| p.dist_sq(&c))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Centers on the centroid and scales the farthest point to unit distance.
    /// A cloud with zero radius is only centered.
    pub fn normalize_unit_sphere(&self) -> Self {
        let c = self.centroid();
        let r = self.radius();
        let s = if r > 0.0 { 1.0 / r } else { 1.0 };
        let pts = self.points.iter().map(|p| (*p - c) * s).collect();
        PointCloud {
            points: pts,
            source_label: self.source_label.clone(),
            shape_tag: self.shape_tag.clone(),
        }
    }
}

/// Seeded uniform subsample without replacement. Clouds with at most
/// `target` points are returned unchanged.
pub fn downsample(cloud: &PointCloud, target: usize, seed: u64) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::Argument("downsample target must be at least 1".into()));
    }
    if target >= cloud.len() {
        return Ok(cloud.clone());
    }
    let mut rng = SeededRng::new(seed);
    let idx = rng.sample_indices(cloud.len(), target);
    cloud.select(&idx)
}

/// Mean squared nearest-neighbor distance from `a` to `b` plus the same from
/// `b` to `a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("chamfer distance of an empty cloud".into()));
    }
    let tree_a = KdTree::build(a.points());
    let tree_b = KdTree::build(b.points());
    Ok(one_sided(a.points(), &tree_b) + one_sided(b.points(), &tree_a))
}

fn one_sided(from: &[Point3], to: &KdTree) -> f64 {
    let total: f64 = from.iter().map(|p| to.nearest(p).1).sum();
    total / from.len() as f64
}
