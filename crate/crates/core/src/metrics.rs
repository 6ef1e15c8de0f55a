//! PSNR and windowed SSIM.
//!
//! SSIM uses an 11x11 Gaussian window with sigma 1.5, `C1 = (0.01 L)^2`,
//! `C2 = (0.03 L)^2` with `L = 1`, evaluated at every position where the
//! window fits entirely inside the image ("valid" windows), and averaged over
//! positions and channels.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Serde adapter for decibel values: JSON has no infinity, so `+inf` (the
/// PSNR of identical images) is written as the string `"inf"`.
pub mod decibels {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            v => s.serialize_f64(v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(deserialize_with = "super::deserialize")] f64);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricResult {
    /// `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10 log10(max_val^2 / MSE)`, or `+inf` when the images are identical.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

pub fn evaluate(a: &Image, b: &Image) -> Result<MetricResult> {
    Ok(MetricResult {
        psnr_db: psnr(a, b, 1.0)?,
        ssim: ssim(a, b)?,
    })
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
fn window_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Single-channel plane stored row-major.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, k: usize, f: impl Fn(f64) -> f64) -> Self {
        Plane {
            w: img.width(),
            h: img.height(),
            v: img.data().iter().skip(k).step_by(3).map(|&x| f(x)).collect(),
        }
    }

    fn product(a: &Image, b: &Image, k: usize) -> Self {
        Plane {
            w: a.width(),
            h: a.height(),
            v: a.data()
                .iter()
                .skip(k)
                .step_by(3)
                .zip(b.data().iter().skip(k).step_by(3))
                .map(|(x, y)| x * y)
                .collect(),
        }
    }

    /// Valid-mode separable filtering: output is `(w - 10) x (h - 10)`.
    fn filter_valid(&self, taps: &[f64; SSIM_WINDOW]) -> Plane {
        let ow = self.w + 1 - SSIM_WINDOW;
        let oh = self.h + 1 - SSIM_WINDOW;
        let mut horiz = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            let dst = &mut horiz[y * ow..(y + 1) * ow];
            for (i, t) in taps.iter().enumerate() {
                for (d, v) in dst.iter_mut().zip(&row[i..i + ow]) {
                    *d += t * v;
                }
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (j, t) in taps.iter().enumerate() {
                let src = &horiz[(y + j) * ow..(y + j + 1) * ow];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    /// Adjoint of [`Plane::filter_valid`]: scatters a `(w - 10) x (h - 10)`
    /// map back onto a `w x h` plane.
    fn scatter_full(&self, taps: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let sw = self.w;
        let mut vert = vec![0.0; sw * h];
        for y in 0..self.h {
            let src = &self.v[y * sw..(y + 1) * sw];
            for (j, t) in taps.iter().enumerate() {
                let dst = &mut vert[(y + j) * sw..(y + j + 1) * sw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let src = &vert[y * sw..(y + 1) * sw];
            for (i, t) in taps.iter().enumerate() {
                let dst = &mut out[y * w + i..y * w + i + sw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        Plane { w, h, v: out }
    }
}

fn check_ssim_shapes(a: &Image, b: &Image) -> Result<()> {
    a.check_shape(b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_impl(a, b, false).map(|(v, _)| v)
}

/// SSIM and its gradient with respect to every value of `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    ssim_impl(a, b, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_ssim_shapes(a, b)?;
    let taps = window_taps();
    let (w, h) = (a.width(), a.height());
    let windows = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let norm = (3 * windows) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));

    for k in 0..3 {
        let mu_a = Plane::channel(a, k, |x| x).filter_valid(&taps);
        let mu_b = Plane::channel(b, k, |x| x).filter_valid(&taps);
        let e_aa = Plane::channel(a, k, |x| x * x).filter_valid(&taps);
        let e_bb = Plane::channel(b, k, |x| x * x).filter_valid(&taps);
        let e_ab = Plane::product(a, b, k).filter_valid(&taps);

        let n = mu_a.v.len();
        let mut d_mu = vec![0.0; n];
        let mut d_aa = vec![0.0; n];
        let mut d_ab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
            let var_a = e_aa.v[i] - ma * ma;
            let var_b = e_bb.v[i] - mb * mb;
            let cov = e_ab.v[i] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = var_a + var_b + SSIM_C2;
            let den = b1 * b2;
            total += a1 * a2 / den;
            if want_grad {
                // S as a function of (mu_a, E[a^2], E[ab])
                d_mu[i] =
                    (2.0 * mb * a2 - 2.0 * mb * a1) / den - a1 * a2 * (2.0 * ma * b2 - 2.0 * ma * b1) / (den * den);
                d_aa[i] = -a1 * a2 / (b1 * b2 * b2);
                d_ab[i] = 2.0 * a1 / den;
            }
        }

        if let Some(g) = grad.as_mut() {
            let scatter = |v: Vec<f64>| {
                Plane {
                    w: mu_a.w,
                    h: mu_a.h,
                    v,
                }
                .scatter_full(&taps, w, h)
            };
            let s_mu = scatter(d_mu);
            let s_aa = scatter(d_aa);
            let s_ab = scatter(d_ab);
            let data = g.data_mut();
            for p in 0..w * h {
                let av = a.data()[p * 3 + k];
                let bv = b.data()[p * 3 + k];
                data[p * 3 + k] = (s_mu.v[p] + 2.0 * av * s_aa.v[p] + bv * s_ab.v[p]) / norm;
            }
        }
    }
    Ok((total / norm, grad))
}
