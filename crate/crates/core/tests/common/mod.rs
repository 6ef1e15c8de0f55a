//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the closed forms under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use negsplat::distribution::{DiffGaussian, GaussianParams};
use negsplat::render::{ClampMode, ParamGradients, RenderOptions, Renderer};
use negsplat::splat::{Splat2D, SplatModel};
use negsplat::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Gaussian densities written out by hand (dimension 1 and 2).

pub fn log_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean).powi(2) / var - 0.5 * (2.0 * PI * var).ln()
}

/// `cov = [a, b, c]` is the matrix `[[a, b], [b, c]]`.
pub fn log_normal_2d(x: [f64; 2], mean: [f64; 2], cov: [f64; 3]) -> f64 {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -0.5 * q - (2.0 * PI).ln() - 0.5 * det.ln()
}

/// Minimizes `f` over a box by repeated grid search, shrinking the box
/// around the best node each round.
pub fn grid_minimize_1d(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let n = 2001;
    let mut best = (f64::INFINITY, lo);
    for _ in 0..8 {
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = f(x);
            if v < best.0 {
                best = (v, x);
            }
        }
        let span = (hi - lo) / 50.0;
        lo = best.1 - span;
        hi = best.1 + span;
    }
    best
}

pub fn grid_minimize_2d(f: impl Fn([f64; 2]) -> f64, center: [f64; 2], radius: f64) -> (f64, [f64; 2]) {
    let n = 201;
    let mut c = center;
    let mut r = radius;
    let mut best = (f64::INFINITY, c);
    for _ in 0..10 {
        for i in 0..n {
            for j in 0..n {
                let x = [
                    c[0] - r + 2.0 * r * i as f64 / (n - 1) as f64,
                    c[1] - r + 2.0 * r * j as f64 / (n - 1) as f64,
                ];
                let v = f(x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        c = best.1;
        r /= 10.0;
    }
    best
}

// ---------------------------------------------------------------------------
// Random Gaussian pairs.

/// Symmetric 2x2 matrix `R diag(a, b) R^T` stored as `[xx, xy, yy]`.
pub fn rotated(theta: f64, a: f64, b: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [c * c * a + s * s * b, c * s * (a - b), s * s * a + c * c * b]
}

pub fn add(p: [f64; 3], q: [f64; 3]) -> [f64; 3] {
    [p[0] + q[0], p[1] + q[1], p[2] + q[2]]
}

pub fn params_2d(mean: [f64; 2], cov: [f64; 3]) -> GaussianParams {
    GaussianParams::from_slices(&mean, &[&[cov[0], cov[1]], &[cov[1], cov[2]]]).unwrap()
}

/// A pair with `S0 - S1` positive definite, either in 1D or in 2D.
#[derive(Clone, Debug)]
pub enum Instance {
    One {
        m0: f64,
        v0: f64,
        m1: f64,
        v1: f64,
    },
    Two {
        m0: [f64; 2],
        s0: [f64; 3],
        m1: [f64; 2],
        s1: [f64; 3],
    },
}

impl Instance {
    pub fn random(rng: &mut impl Rng, two_d: bool) -> Self {
        if two_d {
            let s1 = rotated(
                rng.random_range(0.0..3.2),
                rng.random_range(0.2..2.0),
                rng.random_range(0.2..2.0),
            );
            let gap = rotated(
                rng.random_range(0.0..3.2),
                rng.random_range(0.3..2.0),
                rng.random_range(0.3..2.0),
            );
            Instance::Two {
                m0: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                s0: add(s1, gap),
                m1: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                s1,
            }
        } else {
            let v1 = rng.random_range(0.2..2.0);
            Instance::One {
                m0: rng.random_range(-2.0..2.0),
                v0: v1 + rng.random_range(0.3..2.0),
                m1: rng.random_range(-2.0..2.0),
                v1,
            }
        }
    }

    pub fn params(&self) -> (GaussianParams, GaussianParams) {
        match *self {
            Instance::One { m0, v0, m1, v1 } => (
                GaussianParams::univariate(m0, v0).unwrap(),
                GaussianParams::univariate(m1, v1).unwrap(),
            ),
            Instance::Two { m0, s0, m1, s1 } => (params_2d(m0, s0), params_2d(m1, s1)),
        }
    }

    /// Infimum of `f0 / f1` by brute-force grid search on the hand-written
    /// log densities.
    pub fn grid_c(&self) -> f64 {
        match *self {
            Instance::One { m0, v0, m1, v1 } => {
                let f = |x| log_normal_1d(x, m0, v0) - log_normal_1d(x, m1, v1);
                grid_minimize_1d(f, -100.0, 100.0).0.exp()
            }
            Instance::Two { m0, s0, m1, s1 } => {
                let f = |x| log_normal_2d(x, m0, s0) - log_normal_2d(x, m1, s1);
                grid_minimize_2d(f, [0.0, 0.0], 100.0).0.exp()
            }
        }
    }

    pub fn box_bounds(&self, sigmas: f64) -> Vec<(f64, f64)> {
        match *self {
            Instance::One { m0, v0, .. } => vec![(m0 - sigmas * v0.sqrt(), m0 + sigmas * v0.sqrt())],
            Instance::Two { m0, s0, .. } => {
                let r = sigmas * s0[0].max(s0[2]).sqrt();
                vec![(m0[0] - r, m0[0] + r), (m0[1] - r, m0[1] + r)]
            }
        }
    }
}

pub fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100).map(|i| Instance::random(&mut rng, i % 2 == 1)).collect()
}

/// Random diagonal pair with some free coordinates (h = 1, equal means).
pub struct Diagonal {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub s0: Vec<f64>,
    pub h: Vec<f64>,
}

impl Diagonal {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=4);
        let mut d = Diagonal {
            m0: Vec::new(),
            m1: Vec::new(),
            s0: Vec::new(),
            h: Vec::new(),
        };
        for _ in 0..n {
            let m0 = rng.random_range(-2.0..2.0);
            let free = rng.random_bool(0.3);
            d.m0.push(m0);
            d.m1.push(if free { m0 } else { rng.random_range(-2.0..2.0) });
            d.s0.push(rng.random_range(0.3..3.0));
            d.h.push(if free { 1.0 } else { rng.random_range(0.05..0.9) });
        }
        d
    }

    pub fn params(&self) -> (GaussianParams, GaussianParams) {
        let n = self.m0.len();
        let diag = |v: Vec<f64>| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { v[i] } else { 0.0 }).collect())
                .collect()
        };
        let c0 = diag(self.s0.clone());
        let c1 = diag(self.s0.iter().zip(&self.h).map(|(s, h)| s * h).collect());
        let r0: Vec<&[f64]> = c0.iter().map(Vec::as_slice).collect();
        let r1: Vec<&[f64]> = c1.iter().map(Vec::as_slice).collect();
        (
            GaussianParams::from_slices(&self.m0, &r0).unwrap(),
            GaussianParams::from_slices(&self.m1, &r1).unwrap(),
        )
    }
}

/// Ring-shaped density: both components centered, the subtracted one narrower.
pub fn donut() -> DiffGaussian {
    let g0 = params_2d([0.0, 0.0], [1.0, 0.0, 1.0]);
    let g1 = params_2d([0.0, 0.0], [0.25, 0.0, 0.25]);
    DiffGaussian::with_max_c(g0, g1).unwrap()
}

// ---------------------------------------------------------------------------
// Statistics.

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS test at the 1% level.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Inverse-CDF samples of a 1D density given on a fine grid over `[lo, hi]`.
pub fn inverse_cdf_samples(pdf: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize, seed: u64) -> Vec<f64> {
    let cells = 200_000;
    let dx = (hi - lo) / cells as f64;
    let mut cdf = Vec::with_capacity(cells + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 0..cells {
        acc += pdf(lo + (i as f64 + 0.5) * dx) * dx;
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c < u).clamp(1, cells);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
            lo + (k as f64 - 1.0 + t) * dx
        })
        .collect()
}

/// Mass of a 2D density inside the disc of radius `r` at the origin, by
/// midpoint rule on polar cells.
pub fn disc_mass(pdf: impl Fn([f64; 2]) -> f64, r: f64) -> f64 {
    let (nr, nt) = (400, 400);
    let (dr, dt) = (r / nr as f64, 2.0 * PI / nt as f64);
    let mut m = 0.0;
    for i in 0..nr {
        let rho = (i as f64 + 0.5) * dr;
        for j in 0..nt {
            let t = (j as f64 + 0.5) * dt;
            m += pdf([rho * t.cos(), rho * t.sin()]) * rho * dr * dt;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check of the renderer.

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_MIN_GRADIENT: f64 = 1e-6;

pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose stencil crossed the cutoff or the early-out.
    pub skipped: usize,
    pub worst_relative: f64,
    pub worst_at: String,
}

pub fn random_scene(seed: u64, n: usize, size: usize) -> SplatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SplatModel::new([rng.random(), rng.random(), rng.random()]);
    let s = size as f64;
    for _ in 0..n {
        let splat = Splat2D {
            position: [rng.random_range(0.0..s), rng.random_range(0.0..s)],
            log_scales: [rng.random_range(0.5..2.5), rng.random_range(0.5..2.5)],
            rotation: rng.random_range(-3.0..3.0),
            opacity_logit: rng.random_range(-2.0..2.0),
            color: [rng.random(), rng.random(), rng.random()],
            depth: rng.random(),
        };
        model.push(splat, rng.random_bool(0.4));
    }
    model
}

pub fn random_weights(seed: u64, size: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    Image::from_fn(size, size, |_, _| {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]
    })
}

const PARAM_NAMES: [&str; 9] = [
    "position.x",
    "position.y",
    "log_scale.0",
    "log_scale.1",
    "rotation",
    "opacity_logit",
    "color.r",
    "color.g",
    "color.b",
];

fn param_mut(s: &mut Splat2D, k: usize) -> &mut f64 {
    match k {
        0 => &mut s.position[0],
        1 => &mut s.position[1],
        2 => &mut s.log_scales[0],
        3 => &mut s.log_scales[1],
        4 => &mut s.rotation,
        5 => &mut s.opacity_logit,
        c => &mut s.color[c - 6],
    }
}

fn param_grad(g: &ParamGradients, i: usize, k: usize) -> f64 {
    let s = &g.splats[i];
    match k {
        0 => s.position[0],
        1 => s.position[1],
        2 => s.log_scales[0],
        3 => s.log_scales[1],
        4 => s.rotation,
        5 => s.opacity_logit,
        c => s.color[c - 6],
    }
}

/// Compares the analytic gradient of `<weights, render>` with central
/// differences for every parameter of every splat. Without clamping the
/// only non-smooth points are the cutoff and the early-out; a stencil
/// touching either changes the contribution count and is skipped.
pub fn check_gradients(model: &SplatModel, weights: &Image) -> GradCheck {
    let (w, h) = (weights.width(), weights.height());
    let renderer = Renderer::new(RenderOptions {
        clamp_mode: ClampMode::None,
        ..RenderOptions::default()
    });
    let objective = |m: &SplatModel| {
        let f = renderer.render(m, w, h).unwrap();
        let v: f64 = f.output.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        (v, f.contributions)
    };
    let frame = renderer.render(model, w, h).unwrap();
    let grads = renderer.backward(model, &frame, weights).unwrap();

    let mut report = GradCheck {
        checked: 0,
        skipped: 0,
        worst_relative: 0.0,
        worst_at: String::new(),
    };
    for i in 0..model.len() {
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let analytic = param_grad(&grads, i, k);
            let mut plus = model.clone();
            *param_mut(&mut plus.splats_mut()[i], k) += FD_STEP;
            let mut minus = model.clone();
            *param_mut(&mut minus.splats_mut()[i], k) -= FD_STEP;
            let (fp, cp) = objective(&plus);
            let (fm, cm) = objective(&minus);
            if cp != frame.contributions || cm != frame.contributions {
                report.skipped += 1;
                continue;
            }
            if analytic.abs() <= FD_MIN_GRADIENT {
                continue;
            }
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
            report.checked += 1;
            if rel > report.worst_relative {
                report.worst_relative = rel;
                report.worst_at = format!("splat {i} {}: analytic {analytic:e}, fd {fd:e}", name);
            }
        }
    }
    report
}
