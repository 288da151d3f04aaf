//! Analytic shape families built from boxes, cylinders and cones.
//!
//! Each family draws its proportions from the instance RNG, so every seed
//! gives a different member of the family. Surfaces are sampled uniformly by
//! area.

use std::f64::consts::TAU;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pcd::Point3;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Airplane,
    Car,
    Chair,
    Bench,
    Cabinet,
    Lamp,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Airplane,
        Shape::Car,
        Shape::Chair,
        Shape::Bench,
        Shape::Cabinet,
        Shape::Lamp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Airplane => "airplane",
            Shape::Car => "car",
            Shape::Chair => "chair",
            Shape::Bench => "bench",
            Shape::Cabinet => "cabinet",
            Shape::Lamp => "lamp",
        }
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown shape '{s}'")))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug)]
enum Primitive {
    /// Box surface: center and half extents.
    Cuboid { c: Point3, h: [f64; 3] },
    /// Open cylinder along `axis`.
    Cylinder { c: Point3, axis: usize, radius: f64, half_len: f64 },
    /// Open cone frustum along `axis` from radius `r0` at `c - half_len` to `r1`.
    Frustum { c: Point3, axis: usize, r0: f64, r1: f64, half_len: f64 },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Primitive::Cylinder { radius, half_len, .. } => TAU * radius * 2.0 * half_len,
            Primitive::Frustum { r0, r1, half_len, .. } => {
                let slant = ((r1 - r0).powi(2) + (2.0 * half_len).powi(2)).sqrt();
                std::f64::consts::PI * (r0 + r1) * slant
            }
        }
    }

    fn sample(&self, rng: &mut SeededRng) -> Point3 {
        match *self {
            Primitive::Cuboid { c, h } => {
                // faces: pairs orthogonal to x, y, z with areas 4*h1*h2 etc.
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut u = rng.uniform() * total;
                let mut axis = 2;
                for (a, &ar) in areas.iter().enumerate() {
                    if u < ar {
                        axis = a;
                        break;
                    }
                    u -= ar;
                }
                let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                for (k, slot) in p.iter_mut().enumerate() {
                    *slot = if k == axis { side * h[k] } else { rng.range(-h[k], h[k]) };
                }
                c + Point3::from(p)
            }
            Primitive::Cylinder { c, axis, radius, half_len } => {
                let t = rng.range(-half_len, half_len);
                let phi = rng.range(0.0, TAU);
                c + along(axis, t, radius * phi.cos(), radius * phi.sin())
            }
            Primitive::Frustum { c, axis, r0, r1, half_len } => {
                // area density grows linearly with radius: invert the CDF
                let u = rng.uniform();
                let s = if (r1 - r0).abs() < 1e-12 {
                    u
                } else {
                    ((r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt() - r0) / (r1 - r0)
                };
                let r = r0 + s * (r1 - r0);
                let t = -half_len + s * 2.0 * half_len;
                let phi = rng.range(0.0, TAU);
                c + along(axis, t, r * phi.cos(), r * phi.sin())
            }
        }
    }
}

/// Point with coordinate `t` on `axis` and `(a, b)` on the other two axes.
fn along(axis: usize, t: f64, a: f64, b: f64) -> Point3 {
    match axis {
        0 => Point3::new(t, a, b),
        1 => Point3::new(a, t, b),
        _ => Point3::new(a, b, t),
    }
}

fn cuboid(cx: f64, cy: f64, cz: f64, hx: f64, hy: f64, hz: f64) -> Primitive {
    Primitive::Cuboid { c: Point3::new(cx, cy, cz), h: [hx, hy, hz] }
}

fn instance(shape: Shape, rng: &mut SeededRng) -> Vec<Primitive> {
    let mut r = |lo: f64, hi: f64| rng.range(lo, hi);
    match shape {
        Shape::Airplane => {
            let len = r(1.6, 2.0);
            let rad = r(0.09, 0.13);
            let span = r(1.3, 1.8);
            let chord = r(0.28, 0.4);
            let wing_x = r(-0.1, 0.15);
            let tail_span = r(0.4, 0.6);
            let fin_h = r(0.2, 0.32);
            vec![
                Primitive::Cylinder { c: Point3::ORIGIN, axis: 0, radius: rad, half_len: len / 2.0 },
                Primitive::Frustum {
                    c: Point3::new(len / 2.0 + 0.1, 0.0, 0.0),
                    axis: 0,
                    r0: rad,
                    r1: 0.02,
                    half_len: 0.1,
                },
                cuboid(wing_x, 0.0, 0.0, chord / 2.0, 0.015, span / 2.0),
                cuboid(-len / 2.0 + 0.1, 0.0, 0.0, 0.09, 0.012, tail_span / 2.0),
                cuboid(-len / 2.0 + 0.1, rad + fin_h / 2.0, 0.0, 0.1, fin_h / 2.0, 0.012),
            ]
        }
        Shape::Car => {
            let l = r(1.7, 2.1);
            let w = r(0.75, 0.9);
            let h = r(0.3, 0.4);
            let cab_l = r(0.8, 1.1);
            let cab_h = r(0.22, 0.3);
            let wheel = r(0.15, 0.19);
            let mut parts = vec![
                cuboid(0.0, 0.0, 0.0, l / 2.0, h / 2.0, w / 2.0),
                cuboid(r(-0.2, 0.1), h / 2.0 + cab_h / 2.0, 0.0, cab_l / 2.0, cab_h / 2.0, w / 2.0 - 0.05),
            ];
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    parts.push(Primitive::Cylinder {
                        c: Point3::new(sx * (l / 2.0 - 0.3), -h / 2.0, sz * (w / 2.0 + 0.02)),
                        axis: 2,
                        radius: wheel,
                        half_len: 0.06,
                    });
                }
            }
            parts
        }
        Shape::Chair => {
            let sw = r(0.8, 1.0);
            let sd = r(0.8, 1.0);
            let leg = r(0.8, 1.0);
            let back = r(0.8, 1.1);
            let t = r(0.04, 0.07);
            let mut parts = vec![
                cuboid(0.0, 0.0, 0.0, sw / 2.0, t, sd / 2.0),
                cuboid(0.0, back / 2.0, -sd / 2.0, sw / 2.0, back / 2.0, t),
            ];
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    parts.push(cuboid(sx * (sw / 2.0 - t), -leg / 2.0, sz * (sd / 2.0 - t), t, leg / 2.0, t));
                }
            }
            parts
        }
        Shape::Bench => {
            let l = r(1.8, 2.2);
            let d = r(0.45, 0.6);
            let leg = r(0.45, 0.6);
            let back = r(0.3, 0.45);
            vec![
                cuboid(0.0, 0.0, 0.0, l / 2.0, 0.04, d / 2.0),
                cuboid(0.0, 0.1 + back / 2.0, -d / 2.0, l / 2.0, back / 2.0, 0.03),
                cuboid(-l / 2.0 + 0.1, -leg / 2.0, 0.0, 0.04, leg / 2.0, d / 2.0),
                cuboid(l / 2.0 - 0.1, -leg / 2.0, 0.0, 0.04, leg / 2.0, d / 2.0),
            ]
        }
        Shape::Cabinet => {
            let w = r(0.9, 1.2);
            let h = r(1.4, 1.9);
            let d = r(0.5, 0.7);
            vec![
                cuboid(0.0, 0.0, 0.0, w / 2.0, h / 2.0, d / 2.0),
                cuboid(0.0, h / 2.0 + 0.02, 0.0, w / 2.0 + 0.04, 0.02, d / 2.0 + 0.04),
            ]
        }
        Shape::Lamp => {
            let pole = r(1.2, 1.6);
            let base = r(0.25, 0.35);
            let shade_top = r(0.12, 0.2);
            let shade_bot = r(0.3, 0.42);
            let shade_h = r(0.3, 0.45);
            vec![
                Primitive::Cylinder { c: Point3::new(0.0, -pole / 2.0, 0.0), axis: 1, radius: base, half_len: 0.03 },
                Primitive::Cylinder { c: Point3::ORIGIN, axis: 1, radius: 0.03, half_len: pole / 2.0 },
                Primitive::Frustum {
                    c: Point3::new(0.0, pole / 2.0, 0.0),
                    axis: 1,
                    r0: shade_bot,
                    r1: shade_top,
                    half_len: shade_h / 2.0,
                },
            ]
        }
    }
}

/// `n` points on the surface of a random member of `shape`, normalized to
/// the unit sphere. Instance proportions come from `instance_rng`, surface
/// positions from `surface_rng`.
pub fn sample_surface(shape: Shape, n: usize, instance_rng: &mut SeededRng, surface_rng: &mut SeededRng) -> Vec<Point3> {
    let parts = instance(shape, instance_rng);
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    let mut pts: Vec<Point3> = (0..n)
        .map(|_| {
            let mut u = surface_rng.uniform() * total;
            let mut chosen = parts.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    chosen = i;
                    break;
                }
                u -= a;
            }
            parts[chosen].sample(surface_rng)
        })
        .collect();
    normalize(&mut pts);
    pts
}

fn normalize(pts: &mut [Point3]) {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point3::ORIGIN, |a, p| a + *p) * (1.0 / n);
    let r = pts.iter().map(|p| p.dist_sq(&c)).fold(0.0, f64::max).sqrt();
    let s = if r > 0.0 { 1.0 / r } else { 1.0 };
    for p in pts.iter_mut() {
        *p = (*p - c) * s;
    }
}
