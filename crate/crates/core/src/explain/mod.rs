//! Critical points, depth images and per-source fingerprints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnet::{encode, Model};
use crate::pcd::{chamfer_distance, Point3, PointCloud};
use crate::rng::SeededRng;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_MEMBERS: usize = 100;

/// Indices of the points that win at least one pooled channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriticalPointSet {
    pub indices: Vec<usize>,
}

pub fn critical_points(model: &Model, cloud: &PointCloud) -> Result<CriticalPointSet> {
    let trace = encode(model, cloud)?;
    let mut indices = trace.argmax;
    indices.sort_unstable();
    indices.dedup();
    Ok(CriticalPointSet { indices })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Plane {
    #[default]
    Xy,
    Xz,
    Yz,
}

impl Plane {
    /// (horizontal, vertical, depth) axes.
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Xy => (0, 1, 2),
            Plane::Xz => (0, 2, 1),
            Plane::Yz => (1, 2, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Xz => "xz",
            Plane::Yz => "yz",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "xz" => Ok(Plane::Xz),
            "yz" => Ok(Plane::Yz),
            other => Err(Error::Argument(format!("unknown plane '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bounds {
    /// The bounding box of the projected points.
    Auto,
    /// The square [-1, 1]^2; points outside are dropped. Callers normalize
    /// clouds to the unit sphere first.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the top (largest vertical coordinate).
    pub cells: Vec<f64>,
    pub plane: Plane,
    /// `[u_min, u_max, v_min, v_max]`.
    pub bounds: [f64; 4],
}

/// Value given to the shallowest occupied cell so that it stays visible
/// after 8-bit quantization.
const OCCUPIED_FLOOR: f64 = 1.0 / 255.0;

/// Orthographic projection keeping, per cell, the largest out-of-plane
/// coordinate. Occupied cells are min-max scaled into
/// `[OCCUPIED_FLOOR, 1]`; empty cells are 0.
pub fn depth_project(points: &[Point3], plane: Plane, width: usize, height: usize, bounds: Bounds) -> Result<DepthImage> {
    if points.is_empty() {
        return Err(Error::Argument("cannot project an empty point set".into()));
    }
    if width < 2 || height < 2 {
        return Err(Error::Argument(format!("resolution {width}x{height} is below 2x2")));
    }
    let (ua, va, da) = plane.axes();
    let b = match bounds {
        Bounds::Fixed => [-1.0, 1.0, -1.0, 1.0],
        Bounds::Auto => {
            let fold = |axis: usize| {
                points
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.coord(axis)), hi.max(p.coord(axis))))
            };
            let ((u0, u1), (v0, v1)) = (fold(ua), fold(va));
            if u1 - u0 <= 0.0 || v1 - v0 <= 0.0 {
                return Err(Error::Argument("projected points have zero extent".into()));
            }
            [u0, u1, v0, v1]
        }
    };
    let mut depth = vec![f64::NEG_INFINITY; width * height];
    let mut hits = 0;
    for p in points {
        if let Some(cell) = cell_of(p.coord(ua), p.coord(va), &b, width, height) {
            depth[cell] = depth[cell].max(p.coord(da));
            hits += 1;
        }
    }
    if hits == 0 {
        log::warn!("no point falls inside the projection bounds; image is empty");
    }
    let occupied = depth.iter().copied().filter(|d| d.is_finite());
    let (lo, hi) = occupied.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let cells = depth
        .iter()
        .map(|&d| match d {
            d if !d.is_finite() => 0.0,
            _ if hi == lo => 1.0,
            d => OCCUPIED_FLOOR + (1.0 - OCCUPIED_FLOOR) * (d - lo) / (hi - lo),
        })
        .collect();
    Ok(DepthImage { width, height, cells, plane, bounds: b })
}

fn cell_of(u: f64, v: f64, b: &[f64; 4], width: usize, height: usize) -> Option<usize> {
    let [u0, u1, v0, v1] = *b;
    if !(u0..=u1).contains(&u) || !(v0..=v1).contains(&v) {
        return None;
    }
    let col = (((u - u0) / (u1 - u0) * width as f64).floor() as usize).min(width - 1);
    let row = (((v1 - v) / (v1 - v0) * height as f64).floor() as usize).min(height - 1);
    Some(row * width + col)
}

impl DepthImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.width + col]
    }

    /// Plain ASCII PGM with maxval 255.
    pub fn to_pgm(&self) -> String {
        grid_to_pgm(&self.cells, self.width, self.height)
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(&self.cells, self.width)
    }
}

fn grid_to_pgm(cells: &[f64], width: usize, height: usize) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in cells.chunks_exact(width) {
        let line: Vec<String> = row.iter().map(|c| ((255.0 * c).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn grid_to_csv(cells: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in cells.chunks_exact(width) {
        for (i, c) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{c}");
        }
        out.push('\n');
    }
    out
}

/// Cellwise mean of the depth images of one source's critical points.
#[derive(Clone, Debug, PartialEq)]
pub struct Fingerprint {
    pub source: String,
    pub members: usize,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<f64>,
}

impl Fingerprint {
    pub fn from_images(source: impl Into<String>, images: &[DepthImage]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Argument("no depth images to stack".into()))?;
        if images.iter().any(|im| im.width != first.width || im.height != first.height) {
            return Err(Error::Argument("depth images differ in resolution".into()));
        }
        let mut cells = vec![0.0; first.cells.len()];
        for im in images {
            for (a, c) in cells.iter_mut().zip(&im.cells) {
                *a += c;
            }
        }
        cells.iter_mut().for_each(|a| *a /= images.len() as f64);
        Ok(Self { source: source.into(), members: images.len(), width: first.width, height: first.height, cells })
    }

    pub fn to_pgm(&self) -> String {
        grid_to_pgm(&self.cells, self.width, self.height)
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(&self.cells, self.width)
    }

    pub fn mean_abs_diff(&self, other: &Fingerprint) -> Result<f64> {
        if self.cells.len() != other.cells.len() {
            return Err(Error::Argument("fingerprints differ in resolution".into()));
        }
        Ok(self.cells.iter().zip(&other.cells).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.cells.len() as f64)
    }
}

/// Depth image of a cloud's critical points, after normalizing the whole
/// cloud to the unit sphere so images of different clouds align.
pub fn critical_depth_image(model: &Model, cloud: &PointCloud, plane: Plane, resolution: (usize, usize)) -> Result<DepthImage> {
    let crit = critical_points(model, cloud)?;
    let normalized = cloud.normalize_unit_sphere();
    let pts: Vec<Point3> = crit.indices.iter().map(|&i| normalized.points()[i]).collect();
    depth_project(&pts, plane, resolution.0, resolution.1, Bounds::Fixed)
}

/// Stacks the critical-point depth images of `m` clouds drawn without
/// replacement from `clouds`.
pub fn build_fingerprint(
    model: &Model,
    clouds: &[&PointCloud],
    source: &str,
    m: usize,
    resolution: (usize, usize),
    seed: u64,
) -> Result<Fingerprint> {
    if m == 0 || clouds.len() < m {
        return Err(Error::Argument(format!(
            "fingerprint of '{source}' needs {m} clouds, {} available",
            clouds.len()
        )));
    }
    let picks = SeededRng::new(seed).sample_indices(clouds.len(), m);
    let images: Vec<DepthImage> = picks
        .par_iter()
        .map(|&i| critical_depth_image(model, clouds[i], Plane::Xy, resolution))
        .collect::<Result<_>>()?;
    Fingerprint::from_images(source, &images)
}

/// Index and Chamfer distance of the candidate closest to `query`; ties go
/// to the first.
pub fn match_similar(query: &PointCloud, candidates: &[&PointCloud]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to match against".into()));
    }
    let dists: Vec<f64> = candidates.par_iter().map(|c| chamfer_distance(query, c)).collect::<Result<_>>()?;
    let mut best = (0, dists[0]);
    for (i, &d) in dists.iter().enumerate().skip(1) {
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{encode_points, init_model, Architecture};

    fn random_cloud(rng: &mut SeededRng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Point3::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))).collect())
            .unwrap()
    }

    fn small_model(seed: u64) -> Model {
        let arch = Architecture { encoder: vec![3, 16, 24], classifier: Some(vec![24, 8, 3]), projection: None };
        init_model(&arch, seed).unwrap()
    }

    #[test]
    fn dominant_point_is_the_only_critical_point() {
        // Identity encoder with positive weights: the point with the largest
        // coordinates wins every channel.
        let arch = Architecture { encoder: vec![3, 3], classifier: Some(vec![3, 2]), projection: None };
        let mut model = init_model(&arch, 0).unwrap();
        let w = &mut model.encoder.layers[0].weight;
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let cloud = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(-1.0, 0.0, 0.5),
            Point3::new(2.0, 3.0, 4.0),
            Point3::new(1.0, 1.0, 1.0),
        ])
        .unwrap();
        assert_eq!(critical_points(&model, &cloud).unwrap().indices, vec![2]);
    }

    #[test]
    fn critical_subset_reproduces_global_feature() {
        let mut rng = SeededRng::new(6);
        for seed in 0..5 {
            let model = small_model(seed);
            let cloud = random_cloud(&mut rng, 50);
            let crit = critical_points(&model, &cloud).unwrap();
            assert!(!crit.indices.is_empty() && crit.indices.len() <= 24);
            let sub: Vec<Point3> = crit.indices.iter().map(|&i| cloud.points()[i]).collect();
            let full = encode(&model, &cloud).unwrap().global;
            assert_eq!(encode_points(&model, &sub).unwrap().global, full);
        }
    }

    #[test]
    fn single_point_lands_in_centre() {
        let im = depth_project(&[Point3::ORIGIN], Plane::Xy, 3, 3, Bounds::Fixed).unwrap();
        let nonzero: Vec<usize> = (0..9).filter(|&i| im.cells[i] != 0.0).collect();
        assert_eq!(nonzero, vec![4]);
    }

    #[test]
    fn out_of_bounds_gives_empty_image() {
        let pts = [Point3::new(3.0, 3.0, 0.0), Point3::new(-2.0, 5.0, 1.0)];
        let im = depth_project(&pts, Plane::Xy, 4, 4, Bounds::Fixed).unwrap();
        assert!(im.cells.iter().all(|&c| c == 0.0));
        assert!(depth_project(&pts, Plane::Xy, 1, 4, Bounds::Fixed).is_err());
        assert!(depth_project(&[Point3::ORIGIN, Point3::new(0.0, 1.0, 0.0)], Plane::Xy, 4, 4, Bounds::Auto).is_err());
    }

    #[test]
    fn cells_match_brute_force_scan() {
        let mut rng = SeededRng::new(12);
        let cloud = random_cloud(&mut rng, 300);
        for plane in [Plane::Xy, Plane::Xz, Plane::Yz] {
            let (w, h) = (7, 5);
            let im = depth_project(cloud.points(), plane, w, h, Bounds::Auto).unwrap();
            let (ua, va, da) = plane.axes();
            let [u0, u1, v0, v1] = im.bounds;
            let mut raw = vec![None::<f64>; w * h];
            for row in 0..h {
                for col in 0..w {
                    for p in cloud.points() {
                        let (u, v) = (p.coord(ua), p.coord(va));
                        let c = (((u - u0) / (u1 - u0) * w as f64) as usize).min(w - 1);
                        let r = (((v1 - v) / (v1 - v0) * h as f64) as usize).min(h - 1);
                        if (r, c) == (row, col) {
                            let d = p.coord(da);
                            raw[row * w + col] = Some(raw[row * w + col].map_or(d, |m: f64| m.max(d)));
                        }
                    }
                }
            }
            let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            for (cell, r) in im.cells.iter().zip(&raw) {
                let want = r.map_or(0.0, |d| OCCUPIED_FLOOR + (1.0 - OCCUPIED_FLOOR) * (d - lo) / (hi - lo));
                assert!((cell - want).abs() < 1e-12);
                assert!((0.0..=1.0).contains(cell));
            }
        }
    }

    #[test]
    fn fixed_bounds_are_translation_covariant() {
        let mut rng = SeededRng::new(4);
        let (w, h) = (16, 16);
        let cell = 2.0 / w as f64;
        // keep points away from cell borders and inside after the shift
        let pts: Vec<Point3> = (0..40)
            .map(|_| {
                let col = rng.below(10) as f64;
                let row = rng.below(10) as f64;
                Point3::new(-1.0 + (col + 0.5) * cell, -1.0 + (row + 0.5) * cell, rng.range(-1.0, 1.0))
            })
            .collect();
        let (dc, dr) = (3usize, 2usize);
        let shifted: Vec<Point3> = pts.iter().map(|p| *p + Point3::new(dc as f64 * cell, dr as f64 * cell, 0.0)).collect();
        let a = depth_project(&pts, Plane::Xy, w, h, Bounds::Fixed).unwrap();
        let b = depth_project(&shifted, Plane::Xy, w, h, Bounds::Fixed).unwrap();
        for row in 0..h {
            for col in 0..w {
                let v = a.get(row, col);
                if v != 0.0 {
                    // +v moves toward the top row
                    assert_eq!(b.get(row - dr, col + dc), v);
                }
            }
        }
        assert_eq!(a.cells.iter().filter(|&&c| c != 0.0).count(), b.cells.iter().filter(|&&c| c != 0.0).count());
    }

    #[test]
    fn fingerprint_is_cellwise_mean() {
        let mk = |cells: Vec<f64>| DepthImage { width: 2, height: 2, cells, plane: Plane::Xy, bounds: [-1.0, 1.0, -1.0, 1.0] };
        let a = mk(vec![0.0, 1.0, 0.5, 0.25]);
        let b = mk(vec![1.0, 1.0, 0.0, 0.75]);
        let f = Fingerprint::from_images("s", &[a.clone(), b]).unwrap();
        assert_eq!(f.cells, vec![0.5, 1.0, 0.25, 0.5]);
        assert_eq!(f.members, 2);
        assert_eq!(Fingerprint::from_images("s", &[a.clone()]).unwrap().cells, a.cells);
    }

    #[test]
    fn fingerprint_is_deterministic_and_exact() {
        let mut rng = SeededRng::new(9);
        let model = small_model(1);
        let clouds: Vec<PointCloud> = (0..12).map(|_| random_cloud(&mut rng, 40)).collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let f = build_fingerprint(&model, &refs, "s", 5, (8, 8), 3).unwrap();
        assert_eq!(f, build_fingerprint(&model, &refs, "s", 5, (8, 8), 3).unwrap());
        let picks = SeededRng::new(3).sample_indices(12, 5);
        let images: Vec<DepthImage> =
            picks.iter().map(|&i| critical_depth_image(&model, refs[i], Plane::Xy, (8, 8)).unwrap()).collect();
        for k in 0..64 {
            let mean = images.iter().map(|im| im.cells[k]).sum::<f64>() / 5.0;
            assert!((f.cells[k] - mean).abs() < 1e-12);
        }
        assert!(build_fingerprint(&model, &refs, "s", 13, (8, 8), 3).is_err());
    }

    #[test]
    fn pgm_layout() {
        let im = DepthImage { width: 2, height: 2, cells: vec![0.0, 1.0, 0.5, 0.2], plane: Plane::Xy, bounds: [0.0; 4] };
        assert_eq!(im.to_pgm(), "P2\n2 2\n255\n0 255\n128 51\n");
    }

    #[test]
    fn match_examples() {
        let mut rng = SeededRng::new(2);
        let clouds: Vec<PointCloud> = (0..10).map(|_| random_cloud(&mut rng, 30)).collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        assert_eq!(match_similar(&clouds[4], &refs).unwrap(), (4, 0.0));
        assert_eq!(match_similar(&clouds[4], &refs[..1]).unwrap().0, 0);
        let q = random_cloud(&mut rng, 30);
        let (best, d) = match_similar(&q, &refs).unwrap();
        let scan: Vec<f64> = refs.iter().map(|c| chamfer_distance(&q, c).unwrap()).collect();
        let min = scan.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(d, min);
        assert_eq!(best, scan.iter().position(|&x| x == min).unwrap());
        assert!(match_similar(&q, &[]).is_err());
    }
}
