use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{validate, DiffGaussian};
use crate::error::{Error, Result};

/// Rejection sampler with proposal `f0`.
///
/// A proposal `x ~ f0` is accepted with probability `1 - c f1(x) / f0(x)`,
/// which equals `(1 - c) f_c(x) / f0(x)`; the envelope `f_c <= f0 / (1 - c)`
/// follows from the definition, so the long-run acceptance rate is `1 - c`.
pub struct RejectionSampler<'a> {
    density: &'a DiffGaussian,
    chol: DMatrix<f64>,
    scratch: Vec<f64>,
}

impl<'a> RejectionSampler<'a> {
    pub fn new(density: &'a DiffGaussian) -> Result<Self> {
        let report = validate(density);
        if !report.valid {
            return Err(Error::invalid(format!(
                "balance coefficient {} exceeds the admissible maximum {}",
                density.c(),
                report.c_max
            )));
        }
        Ok(Self {
            density,
            chol: density.g0.cholesky_l(),
            scratch: Vec::with_capacity(density.dim()),
        })
    }

    /// Draws one proposal and returns it with the accept decision.
    pub fn propose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (DVector<f64>, bool) {
        let n = self.density.dim();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = self.density.g0.mean() + &self.chol * z;
        let u: f64 = rng.random();
        let c = self.density.c();
        if c == 0.0 {
            return (x, true);
        }
        let lf0 = self.density.g0.log_pdf_unchecked(x.as_slice(), &mut self.scratch);
        let lf1 = self.density.g1.log_pdf_unchecked(x.as_slice(), &mut self.scratch);
        let accept_prob = 1.0 - c * (lf1 - lf0).exp();
        (x, u < accept_prob)
    }
}

/// Exactly `n` samples from a validated Diff-Gaussian; deterministic per seed.
pub fn sample(d: &DiffGaussian, seed: u64, n: usize) -> Result<Vec<DVector<f64>>> {
    let mut sampler = RejectionSampler::new(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (x, accepted) = sampler.propose(&mut rng);
        if accepted {
            out.push(x);
        }
    }
    Ok(out)
}

/// Number of accepted draws among `proposals` proposals.
pub fn acceptance_count(d: &DiffGaussian, seed: u64, proposals: usize) -> Result<usize> {
    let mut sampler = RejectionSampler::new(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..proposals).filter(|_| sampler.propose(&mut rng).1).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::GaussianParams;

    fn centered(c: f64) -> DiffGaussian {
        DiffGaussian::new(
            GaussianParams::univariate(0.0, 1.0).unwrap(),
            GaussianParams::univariate(0.0, 0.25).unwrap(),
            c,
        )
        .unwrap()
    }

    #[test]
    fn zero_c_accepts_everything() {
        let d = centered(0.0);
        assert_eq!(acceptance_count(&d, 3, 1000).unwrap(), 1000);
        let xs = sample(&d, 3, 20_000).unwrap();
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn acceptance_rate_is_one_minus_c() {
        let d = centered(0.5);
        let n = 100_000;
        let k = acceptance_count(&d, 11, n).unwrap() as f64;
        let p = 0.5;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((k / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn deterministic_per_seed_and_exact_count() {
        let d = centered(0.5);
        let a = sample(&d, 42, 257).unwrap();
        let b = sample(&d, 42, 257).unwrap();
        assert_eq!(a.len(), 257);
        assert_eq!(a, b);
        assert_ne!(a, sample(&d, 43, 257).unwrap());
        assert!(sample(&d, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn invalid_density_is_rejected() {
        assert!(sample(&centered(0.6), 0, 10).is_err());
    }
}
