use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::ssim_with_grad;

/// `(1 - lambda) * L1 + lambda * (1 - SSIM)` and its gradient with respect
/// to every value of `render`.
///
/// With `lambda == 0` the SSIM term is skipped, so images smaller than the
/// SSIM window are accepted.
pub fn loss(render: &Image, target: &Image, lambda: f64) -> Result<(f64, Image)> {
    render.check_shape(target)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("loss weight {lambda} outside [0, 1]")));
    }
    let n = render.data().len().max(1) as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = render
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            // subgradient 0 at equality
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda) * sign / n
        })
        .collect();
    l1 /= n;

    let mut value = (1.0 - lambda) * l1;
    if lambda > 0.0 {
        let (s, ds) = ssim_with_grad(render, target)?;
        value += lambda * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(ds.data()) {
            *g -= lambda * d;
        }
    }
    Ok((value, Image::from_raw(render.width(), render.height(), grad)?))
}
