//! Procedural object classes.
//!
//! A class is fully determined by its seed: outline, aspect ratio, texture and
//! colours. Instances differ only in size, position and rotation, and textures
//! are defined in object-local coordinates so they scale and rotate with the
//! instance.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Polygon { vertices: u32 },
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Stripes { period: f64 },
    Checker { period: f64 },
    Dots { period: f64 },
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_seed: u64,
    pub shape: ShapeKind,
    /// Minor/major axis ratio in `(0, 1]`.
    pub aspect: f64,
    pub texture: Texture,
    pub base_color: [f64; 3],
    pub accent_color: [f64; 3],
    /// Multiplier on the scene's nominal size for this class.
    pub size_bias: f64,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl ClassSpec {
    pub fn from_seed(class_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed);
        let shape = if rng.gen_bool(0.3) {
            ShapeKind::Ellipse
        } else {
            ShapeKind::Polygon {
                vertices: rng.gen_range(3..=8),
            }
        };
        let aspect = rng.gen_range(0.45..=1.0);
        let texture = match rng.gen_range(0..5) {
            0 => Texture::Solid,
            1 => Texture::Stripes {
                period: rng.gen_range(0.45..0.9),
            },
            2 => Texture::Checker {
                period: rng.gen_range(0.5..0.9),
            },
            3 => Texture::Dots {
                period: rng.gen_range(0.6..1.0),
            },
            _ => Texture::Ring,
        };
        let hue = rng.gen_range(0.0..1.0);
        let base_color = hsv_to_rgb(hue, rng.gen_range(0.45..1.0), rng.gen_range(0.55..1.0));
        let accent_color = hsv_to_rgb(
            hue + rng.gen_range(0.25..0.75),
            rng.gen_range(0.3..1.0),
            rng.gen_range(0.2..0.9),
        );
        Self {
            class_seed,
            shape,
            aspect,
            texture,
            base_color,
            accent_color,
            size_bias: rng.gen_range(0.8..1.25),
        }
    }

    /// Whether the local point lies inside the outline. `(u, v)` are in units
    /// of the instance radius, already rotated into the object frame.
    pub fn contains_local(&self, u: f64, v: f64) -> bool {
        let v = v / self.aspect;
        let r = u.hypot(v);
        if r > 1.0 {
            return false;
        }
        match self.shape {
            ShapeKind::Ellipse => true,
            ShapeKind::Polygon { vertices } => {
                let sector = 2.0 * PI / vertices as f64;
                let t = v.atan2(u).rem_euclid(sector) - sector / 2.0;
                r <= (PI / vertices as f64).cos() / t.cos()
            }
        }
    }

    /// Surface colour at a local point inside the outline.
    pub fn color_at(&self, u: f64, v: f64) -> [f64; 3] {
        let accent = match self.texture {
            Texture::Solid => false,
            Texture::Stripes { period } => ((u / period).floor() as i64).rem_euclid(2) == 0,
            Texture::Checker { period } => {
                ((u / period).floor() as i64 + (v / period).floor() as i64).rem_euclid(2) == 0
            }
            Texture::Dots { period } => {
                let du = (u / period).rem_euclid(1.0) - 0.5;
                let dv = (v / period).rem_euclid(1.0) - 0.5;
                du.hypot(dv) < 0.28
            }
            Texture::Ring => (0.4..0.7).contains(&u.hypot(v / self.aspect)),
        };
        let c = if accent { self.accent_color } else { self.base_color };
        // Mild radial shading.
        let shade = 1.0 - 0.25 * (u * u + v * v).min(1.0);
        [c[0] * shade, c[1] * shade, c[2] * shade]
    }
}

/// A pixel covered by an instance, with its local coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Covered {
    pub x: isize,
    pub y: isize,
    pub u: f64,
    pub v: f64,
}

/// Every integer pixel (in an unbounded grid) whose centre lies inside the
/// instance outline.
pub(crate) fn rasterize(spec: &ClassSpec, cx: f64, cy: f64, size: f64, rotation: f64) -> Vec<Covered> {
    let radius = size / 2.0;
    let (sin, cos) = rotation.sin_cos();
    let x0 = (cx - radius - 1.0).floor() as isize;
    let x1 = (cx + radius + 1.0).ceil() as isize;
    let y0 = (cy - radius - 1.0).floor() as isize;
    let y1 = (cy + radius + 1.0).ceil() as isize;
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = (dx * cos + dy * sin) / radius;
            let v = (-dx * sin + dy * cos) / radius;
            if spec.contains_local(u, v) {
                out.push(Covered { x, y, u, v });
            }
        }
    }
    out
}
