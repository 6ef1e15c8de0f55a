use rand::Rng;
use rand_distr::StandardNormal;

use crate::splat::{logistic, SplatModel};

/// Where a row of the densified model came from, as an index into the model
/// before the call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Cloned(usize),
}

/// Percentile of the positional-gradient accumulator above which a splat is
/// cloned.
pub const CLONE_PERCENTILE: f64 = 0.9;

/// Prunes transparent splats, then clones those with a large accumulated
/// positional gradient.
///
/// `grad_accum[i]` is the summed norm of splat `i`'s position gradient since
/// the last call. A splat is cloned when its value is positive and strictly
/// above the 90th percentile over the surviving splats. Clones are appended
/// in parent order, copy the parent (mask bit included) and are offset by a
/// normal jitter with standard deviation a quarter of the parent's scale
/// along each principal axis. Cloning stops once the model holds `max_len`
/// splats.
pub fn densify_prune<R: Rng>(
    model: &mut SplatModel,
    grad_accum: &[f64],
    prune_threshold: f64,
    max_len: usize,
    rng: &mut R,
) -> Vec<Origin> {
    assert_eq!(grad_accum.len(), model.len(), "one accumulator per splat");

    let mut kept = Vec::with_capacity(model.len());
    model.retain(|i, s| {
        let keep = logistic(s.opacity_logit) >= prune_threshold;
        if keep {
            kept.push(i);
        }
        keep
    });
    let mut origins: Vec<Origin> = kept.iter().map(|&i| Origin::Kept(i)).collect();

    let accum: Vec<f64> = kept.iter().map(|&i| grad_accum[i]).collect();
    let Some(threshold) = percentile(&accum, CLONE_PERCENTILE) else {
        return origins;
    };

    let parents: Vec<usize> = (0..accum.len())
        .filter(|&j| accum[j] > threshold && accum[j] > 0.0)
        .collect();
    for j in parents {
        if model.len() >= max_len {
            break;
        }
        let mut clone = model.splats()[j];
        let [s0, s1] = clone.scales();
        let (e0, e1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let (l0, l1) = (0.25 * s0 * e0, 0.25 * s1 * e1);
        let (sin, cos) = clone.rotation.sin_cos();
        clone.position[0] += cos * l0 - sin * l1;
        clone.position[1] += sin * l0 + cos * l1;
        let negative = model.is_negative(j);
        model.push(clone, negative);
        origins.push(Origin::Cloned(kept[j]));
    }
    origins
}

/// Linear-interpolated percentile, `None` for an empty slice.
fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}
