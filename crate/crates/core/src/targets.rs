//! Procedural target images.
//!
//! Each target isolates a shape that a sum of positive Gaussians covers
//! poorly: a ring with a hole, a crescent, a high-frequency checkerboard and
//! thin dark strokes on a light ground. Edges are antialiased by 4x4
//! supersampling. The seed perturbs palettes and stroke layouts only.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::image::Image;

const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Ring,
    Moon,
    Checker,
    TextLike,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [Self::Ring, Self::Moon, Self::Checker, Self::TextLike];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Moon => "moon",
            Self::Checker => "checker",
            Self::TextLike => "text-like",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown target {s:?} (expected ring, moon, checker or text-like)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Checkerboard cell edge in pixels.
    pub cell: usize,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, width: usize, height: usize) -> Self {
        Self {
            kind,
            width,
            height,
            seed: 0,
            cell: 8,
        }
    }
}

pub const RING_BACKGROUND: [f64; 3] = [0.06, 0.05, 0.10];
const RING_FOREGROUND: [f64; 3] = [0.95, 0.80, 0.35];

/// Inner and outer ring radii as fractions of the smaller image side.
pub const RING_RADII: (f64, f64) = (0.18, 0.36);

pub fn generate(spec: &TargetSpec) -> Result<Image, Error> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    if spec.cell == 0 {
        return Err(Error::invalid("checker cell must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let side = w.min(h);
    let (cx, cy) = (w / 2.0, h / 2.0);

    Ok(match spec.kind {
        TargetKind::Ring => {
            let fg = jitter(&mut rng, RING_FOREGROUND);
            let (r_in, r_out) = (RING_RADII.0 * side, RING_RADII.1 * side);
            supersampled(spec, RING_BACKGROUND, fg, |x, y| {
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                r >= r_in && r <= r_out
            })
        }
        TargetKind::Moon => {
            let fg = jitter(&mut rng, [0.90, 0.90, 0.80]);
            let r = 0.38 * side;
            let shift = (0.28 + 0.06 * rng.random::<f64>()) * side;
            supersampled(spec, [0.04, 0.06, 0.15], fg, |x, y| {
                let inside = (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
                let cut = (x - cx - shift).powi(2) + (y - cy + 0.25 * shift).powi(2) <= r * r;
                inside && !cut
            })
        }
        TargetKind::Checker => {
            let a = jitter(&mut rng, [0.92, 0.25, 0.20]);
            let b = jitter(&mut rng, [0.10, 0.30, 0.85]);
            Image::from_fn(spec.width, spec.height, |x, y| {
                if (x / spec.cell + y / spec.cell).is_multiple_of(2) {
                    a
                } else {
                    b
                }
            })
        }
        TargetKind::TextLike => {
            // a few glyph-like polylines of ~1.5 px width
            let mut segments = Vec::new();
            let glyphs = 3;
            for g in 0..glyphs {
                let gx0 = w * (0.12 + 0.28 * g as f64);
                let gw = w * 0.2;
                let mut p = (gx0 + gw * rng.random::<f64>(), h * (0.25 + 0.5 * rng.random::<f64>()));
                for _ in 0..4 {
                    let q = (gx0 + gw * rng.random::<f64>(), h * (0.2 + 0.6 * rng.random::<f64>()));
                    segments.push((p, q));
                    p = q;
                }
            }
            let half_width = 0.75;
            supersampled(spec, [0.92, 0.90, 0.85], [0.08, 0.07, 0.10], |x, y| {
                segments
                    .iter()
                    .any(|&(p, q)| segment_distance((x, y), p, q) <= half_width)
            })
        }
    })
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3]) -> [f64; 3] {
    base.map(|c| (c + 0.05 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
}

fn supersampled(spec: &TargetSpec, bg: [f64; 3], fg: [f64; 3], inside: impl Fn(f64, f64) -> bool) -> Image {
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    Image::from_fn(spec.width, spec.height, |x, y| {
        let mut hits = 0usize;
        for j in 0..SUPERSAMPLE {
            for i in 0..SUPERSAMPLE {
                let sx = x as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64;
                let sy = y as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64;
                if inside(sx, sy) {
                    hits += 1;
                }
            }
        }
        let t = hits as f64 / n;
        [0, 1, 2].map(|k| bg[k] + t * (fg[k] - bg[k]))
    })
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}
