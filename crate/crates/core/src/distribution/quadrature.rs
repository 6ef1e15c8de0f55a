use rayon::prelude::*;

use super::DiffGaussian;
use crate::error::{Error, Result};

/// Midpoint-rule integral of the Diff-Gaussian density over an axis-aligned
/// box with `resolution` cells per axis. Supports dimensions 1 to 3.
pub fn integrate_grid(d: &DiffGaussian, bounds: &[(f64, f64)], resolution: usize) -> Result<f64> {
    let dim = d.dim();
    if dim > 3 {
        return Err(Error::invalid(format!("grid quadrature supports dim <= 3, got {dim}")));
    }
    if bounds.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bounds.len(),
        });
    }
    if resolution < 2 {
        return Err(Error::invalid(format!("resolution {resolution} < 2")));
    }
    if bounds
        .iter()
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
    {
        return Err(Error::invalid("each bound must satisfy lo < hi"));
    }

    let steps: Vec<f64> = bounds.iter().map(|&(lo, hi)| (hi - lo) / resolution as f64).collect();
    let mid = |axis: usize, i: usize| bounds[axis].0 + (i as f64 + 0.5) * steps[axis];
    let cell: f64 = steps.iter().product();

    // Outer axis in parallel; per-slab sums are reduced in index order.
    let slabs: Vec<f64> = (0..resolution)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; dim];
            let mut scratch = Vec::with_capacity(dim);
            x[0] = mid(0, i);
            match dim {
                1 => d.pdf_unchecked(&x, &mut scratch),
                2 => (0..resolution)
                    .map(|j| {
                        x[1] = mid(1, j);
                        d.pdf_unchecked(&x, &mut scratch)
                    })
                    .sum(),
                _ => {
                    let mut s = 0.0;
                    for j in 0..resolution {
                        x[1] = mid(1, j);
                        for k in 0..resolution {
                            x[2] = mid(2, k);
                            s += d.pdf_unchecked(&x, &mut scratch);
                        }
                    }
                    s
                }
            }
        })
        .collect();
    Ok(slabs.iter().sum::<f64>() * cell)
}
