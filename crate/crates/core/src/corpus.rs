//! Seeded procedural grayscale images for fixtures and benchmarks.
//!
//! Each image is a tilted gradient background overlaid with a few rectangles and
//! disks, each filled with a flat level, stripes, a checkerboard or noise.

use std::f32::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::GrayImage;
use crate::rng::split_rng;

const STREAM_CORPUS: u64 = 21;

#[derive(Debug, Clone, Copy)]
enum Fill {
    Flat(f32),
    Stripes {
        level: f32,
        amp: f32,
        period: f32,
        angle: f32,
    },
    Checker {
        level: f32,
        amp: f32,
        cell: usize,
    },
    Noise {
        level: f32,
        amp: f32,
    },
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect {
        top: f32,
        left: f32,
        bottom: f32,
        right: f32,
    },
    Disk {
        cy: f32,
        cx: f32,
        r: f32,
    },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Rect {
                top,
                left,
                bottom,
                right,
            } => y >= top && y < bottom && x >= left && x < right,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
        }
    }
}

fn random_fill(rng: &mut impl Rng) -> Fill {
    let level = rng.random_range(0.1..0.9);
    let amp = rng.random_range(0.05..0.4);
    match rng.random_range(0..4) {
        0 => Fill::Flat(level),
        1 => Fill::Stripes {
            level,
            amp,
            period: rng.random_range(2.0..12.0),
            angle: rng.random_range(0.0..PI),
        },
        2 => Fill::Checker {
            level,
            amp,
            cell: rng.random_range(1..5),
        },
        _ => Fill::Noise { level, amp },
    }
}

fn shade(fill: Fill, y: usize, x: usize, rng: &mut impl Rng) -> f32 {
    match fill {
        Fill::Flat(level) => level,
        Fill::Stripes {
            level,
            amp,
            period,
            angle,
        } => {
            let t = x as f32 * angle.cos() + y as f32 * angle.sin();
            level + amp * (2.0 * PI * t / period).sin()
        }
        Fill::Checker { level, amp, cell } => {
            if (y / cell + x / cell).is_multiple_of(2) {
                level + amp
            } else {
                level - amp
            }
        }
        Fill::Noise { level, amp } => level + amp * rng.random_range(-1.0..1.0),
    }
}

/// Image `index` of the corpus identified by `seed`, `size × size` pixels.
pub fn synthetic_image(seed: u64, index: u64, size: usize) -> Result<GrayImage> {
    if size == 0 {
        return Err(Error::Argument("image size must be positive".into()));
    }
    let mut rng = split_rng(seed, &[STREAM_CORPUS, index]);
    let s = size as f32;
    let base = rng.random_range(0.2..0.8);
    let slope = rng.random_range(-0.4..0.4);
    let tilt = rng.random_range(0.0..2.0 * PI);
    let shapes: Vec<(Shape, Fill)> = (0..rng.random_range(2..6))
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                let (a, b) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let (c, d) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                Shape::Rect {
                    top: a.min(c),
                    bottom: a.max(c) + 4.0,
                    left: b.min(d),
                    right: b.max(d) + 4.0,
                }
            } else {
                Shape::Disk {
                    cy: rng.random_range(0.0..s),
                    cx: rng.random_range(0.0..s),
                    r: rng.random_range(s / 10.0..s / 2.5),
                }
            };
            (shape, random_fill(&mut rng))
        })
        .collect();
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f32, x as f32);
            let t = (fx * tilt.cos() + fy * tilt.sin()) / s;
            let mut v = base + slope * t;
            // Later shapes are drawn on top.
            if let Some((_, fill)) = shapes.iter().rev().find(|(sh, _)| sh.contains(fy, fx)) {
                v = shade(*fill, y, x, &mut rng);
            }
            v += rng.random_range(-0.01..0.01);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    GrayImage::new(size, size, data)
}

/// The first `count` images of the corpus identified by `seed`.
pub fn synthetic_corpus(seed: u64, count: usize, size: usize) -> Result<Vec<GrayImage>> {
    (0..count as u64).map(|i| synthetic_image(seed, i, size)).collect()
}
