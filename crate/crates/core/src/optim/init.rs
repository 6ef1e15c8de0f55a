use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FitConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{logit, Splat2D, SplatModel};

pub const INITIAL_OPACITY: f64 = 0.1;
pub const NEGATIVE_INIT_COLOR: f64 = 0.1;

/// Seeded starting model for `target`.
///
/// Positions are uniform over the frame. `round(neg_fraction * n)` splats,
/// picked at random, are negative and start with color 0.1; the rest take
/// the target color under their center. All splats are isotropic with the
/// mean nearest-neighbour distance as scale and share opacity 0.1. Depth
/// keys are uniform in `[0, 1]`.
pub fn init_model(target: &Image, cfg: &FitConfig) -> Result<SplatModel> {
    if target.is_empty() {
        return Err(Error::invalid("target image is empty"));
    }
    if !(0.0..=1.0).contains(&cfg.neg_fraction) {
        return Err(Error::invalid(format!(
            "neg_fraction {} outside [0, 1]",
            cfg.neg_fraction
        )));
    }
    let n = cfg.n_splats_init;
    let (w, h) = (target.width(), target.height());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64])
        .collect();
    let n_neg = (cfg.neg_fraction * n as f64).round() as usize;
    let mut negative = vec![false; n];
    for i in index::sample(&mut rng, n, n_neg) {
        negative[i] = true;
    }
    let depths: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    let scale = match mean_nearest_distance(&positions) {
        Some(d) if d > 0.0 => d,
        _ => 0.5 * ((w * h) as f64).sqrt(),
    };
    let mut model = SplatModel::default();
    for i in 0..n {
        let [x, y] = positions[i];
        let color = if negative[i] {
            [NEGATIVE_INIT_COLOR; 3]
        } else {
            target.pixel((x as usize).min(w - 1), (y as usize).min(h - 1))
        };
        model.push(
            Splat2D {
                position: positions[i],
                log_scales: [scale.ln(); 2],
                rotation: 0.0,
                opacity_logit: logit(INITIAL_OPACITY),
                color,
                depth: depths[i],
            },
            negative[i],
        );
    }
    Ok(model)
}

fn mean_nearest_distance(points: &[[f64; 2]]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Some(total / points.len() as f64)
}
