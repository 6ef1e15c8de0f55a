//! Fitting a splat model to a single target image.
//!
//! The loop is init, then per iteration render, loss, backward and an Adam
//! step, with densify/prune every `densify_interval` iterations. Everything
//! is seeded, so a config reproduces its report bit for bit.

mod ablate;
mod adam;
mod densify;
mod init;
mod loss;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablate::{ablate, AblationCell, AblationRow, AblationTable, DEFAULT_FRACTIONS};
pub use adam::{AdamState, LearningRates, BETA1, BETA2, EPSILON, PARAMS_PER_SPLAT};
pub use densify::{densify_prune, Origin, CLONE_PERCENTILE};
pub use init::{init_model, INITIAL_OPACITY, NEGATIVE_INIT_COLOR};
pub use loss::loss;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, SSIM_WINDOW};
use crate::render::{RenderOptions, Renderer};
use crate::splat::SplatModel;

/// PSNR is recorded in the trace every this many iterations.
pub const PSNR_EVERY: usize = 100;

/// The model may never grow past this multiple of `n_splats_init`.
pub const MAX_GROWTH: usize = 4;

/// Stream offset separating densification jitter from initialization.
const DENSIFY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    /// Weight of the SSIM term in the loss.
    pub lambda: f64,
    pub densify_interval: usize,
    pub prune_opacity_threshold: f64,
    pub neg_fraction: f64,
    pub n_splats_init: usize,
    pub seed: u64,
    /// Fixed background color behind all splats.
    pub background: [f64; 3],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rates: LearningRates {
                position: 0.05,
                log_scales: 0.01,
                rotation: 0.01,
                opacity_logit: 0.05,
                color: 0.01,
            },
            lambda: 0.2,
            densify_interval: 100,
            prune_opacity_threshold: 0.005,
            neg_fraction: 0.2,
            n_splats_init: 64,
            seed: 0,
            background: [0.0; 3],
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_splats_init == 0 {
            return fail("n_splats_init must be at least 1".into());
        }
        if self.densify_interval == 0 {
            return fail("densify_interval must be at least 1".into());
        }
        if !self.learning_rates.all_positive() {
            return fail(format!("learning rates must be positive: {:?}", self.learning_rates));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.prune_opacity_threshold > 0.0 && self.prune_opacity_threshold < 1.0) {
            return fail(format!(
                "prune threshold {} outside (0, 1)",
                self.prune_opacity_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return fail(format!("neg_fraction {} outside [0, 1]", self.neg_fraction));
        }
        if !self.background.iter().all(|c| c.is_finite()) {
            return fail("background must be finite".into());
        }
        Ok(())
    }

    pub fn max_splats(&self) -> usize {
        MAX_GROWTH * self.n_splats_init
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    /// PSNR of the quantized render, present every [`PSNR_EVERY`] iterations.
    #[serde(skip_serializing_if = "Option::is_none", default, with = "metrics::decibels::option")]
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config: FitConfig,
    pub trace: Vec<IterRecord>,
    /// PSNR of the quantized final render against the target.
    #[serde(with = "metrics::decibels")]
    pub psnr_db: f64,
    /// `None` when the frame is smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub positive: usize,
    pub negative: usize,
    /// Not serialized, so reports of identical runs compare equal as text.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl FitReport {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }

    /// Pretty JSON, one trace record per line.
    pub fn to_json(&self) -> Result<String> {
        let mut out = serde_json::to_string_pretty(&ReportHead {
            config: &self.config,
            psnr_db: self.psnr_db,
            ssim: self.ssim,
            positive: self.positive,
            negative: self.negative,
            total: self.total(),
        })
        .map_err(|e| Error::Numeric(e.to_string()))?;
        // reopen the object: drop the closing brace and the newline before it
        out.truncate(out.trim_end().len() - 1);
        out.truncate(out.trim_end().len());
        out.push_str(",\n  \"trace\": [");
        for (i, r) in self.trace.iter().enumerate() {
            out.push_str(if i == 0 { "\n    " } else { ",\n    " });
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Numeric(e.to_string()))?);
        }
        out.push_str(if self.trace.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
        Ok(out)
    }
}

#[derive(Serialize)]
struct ReportHead<'a> {
    config: &'a FitConfig,
    #[serde(with = "metrics::decibels")]
    psnr_db: f64,
    ssim: Option<f64>,
    positive: usize,
    negative: usize,
    total: usize,
}

/// PSNR and SSIM of the 8-bit quantized render, as a saved PPM would give.
pub fn final_metrics(render: &Image, target: &Image) -> Result<(f64, Option<f64>)> {
    let q = render.quantized();
    let psnr = metrics::psnr(&q, target, 1.0)?;
    let ssim = if q.width() >= SSIM_WINDOW && q.height() >= SSIM_WINDOW {
        Some(metrics::ssim(&q, target)?)
    } else {
        None
    };
    Ok((psnr, ssim))
}

pub fn fit(target: &Image, cfg: &FitConfig) -> Result<(SplatModel, FitReport)> {
    fit_with_hook(target, cfg, |_, _| Ok(()))
}

/// [`fit`] that calls `hook(completed_iterations, &model)` after every
/// iteration; an error from the hook aborts the fit.
pub fn fit_with_hook(
    target: &Image,
    cfg: &FitConfig,
    mut hook: impl FnMut(usize, &SplatModel) -> Result<()>,
) -> Result<(SplatModel, FitReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let (w, h) = (target.width(), target.height());
    let renderer = Renderer::new(RenderOptions::default());

    let mut model = init_model(target, cfg)?;
    model.background = cfg.background;
    let mut adam = AdamState::new(model.len());
    let mut accum = vec![0.0; model.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DENSIFY_STREAM);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let frame = renderer.render_for_backward(&model, w, h)?;
        let (value, frame_grad) = loss(&frame.output, target, cfg.lambda)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        let psnr = if iter % PSNR_EVERY == 0 {
            Some(metrics::psnr(&frame.output.quantized(), target, 1.0)?)
        } else {
            None
        };
        trace.push(IterRecord {
            iter,
            loss: value,
            psnr,
        });

        let grads = renderer.backward(&model, &frame, &frame_grad)?;
        adam.step(&mut model, &grads, &cfg.learning_rates)?;
        if !model.is_finite() {
            return Err(Error::Numeric(format!("parameters overflowed at iteration {iter}")));
        }
        for (a, g) in accum.iter_mut().zip(&grads.splats) {
            *a += g.position[0].hypot(g.position[1]);
        }

        let done = iter + 1;
        if done % cfg.densify_interval == 0 && done < cfg.iterations {
            let origins = densify_prune(
                &mut model,
                &accum,
                cfg.prune_opacity_threshold,
                cfg.max_splats(),
                &mut rng,
            );
            adam.remap(&origins);
            accum = vec![0.0; model.len()];
        }
        hook(done, &model)?;
    }

    let frame = renderer.render(&model, w, h)?;
    let (psnr_db, ssim) = final_metrics(&frame.output, target)?;
    let (positive, negative) = model.counts();
    let report = FitReport {
        config: cfg.clone(),
        trace,
        psnr_db,
        ssim,
        positive,
        negative,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FitConfig {
        FitConfig {
            iterations: 30,
            n_splats_init: 8,
            densify_interval: 10,
            ..FitConfig::default()
        }
    }

    fn gradient_target() -> Image {
        Image::from_fn(16, 16, |x, y| [x as f64 / 16.0, 0.5, y as f64 / 16.0])
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let cfg = FitConfig {
            iterations: 0,
            ..small_cfg()
        };
        let t = gradient_target();
        let (model, report) = fit(&t, &cfg).unwrap();
        assert!(report.trace.is_empty());
        assert_eq!(model, init_model(&t, &cfg).unwrap());
        assert_eq!(report.total(), model.len());
    }

    #[test]
    fn reports_are_deterministic() {
        let t = gradient_target();
        let (ma, a) = fit(&t, &small_cfg()).unwrap();
        let (mb, b) = fit(&t, &small_cfg()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.trace.len(), 30);
        assert!(a.trace[0].psnr.is_some() && a.trace[1].psnr.is_none());
    }

    #[test]
    fn counts_and_budget() {
        let t = gradient_target();
        let cfg = small_cfg();
        let mut sizes = Vec::new();
        let mut negatives = Vec::new();
        let (model, report) = fit_with_hook(&t, &cfg, |done, m| {
            sizes.push(m.len());
            negatives.push((done, m.counts().1));
            Ok(())
        })
        .unwrap();
        assert!(sizes.iter().all(|&n| n <= cfg.max_splats()));
        assert_eq!(report.positive + report.negative, model.len());
        // the negative count only moves on densify iterations
        for pair in negatives.windows(2) {
            let ((_, before), (done, after)) = (pair[0], pair[1]);
            if done % cfg.densify_interval != 0 {
                assert_eq!(before, after, "iteration {done}");
            }
        }
    }

    #[test]
    fn json_is_parseable() {
        let (_, report) = fit(&gradient_target(), &small_cfg()).unwrap();
        let text = report.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["trace"].as_array().unwrap().len(), 30);
        assert_eq!(v["config"]["n_splats_init"], 8);
        assert_eq!(text.lines().filter(|l| l.contains("\"iter\"")).count(), 30);
        let cfg = FitConfig {
            iterations: 0,
            ..small_cfg()
        };
        let (_, empty) = fit(&gradient_target(), &cfg).unwrap();
        serde_json::from_str::<serde_json::Value>(&empty.to_json().unwrap()).unwrap();
    }

    #[test]
    fn invalid_configs() {
        let t = gradient_target();
        let bad = [
            FitConfig {
                neg_fraction: 1.5,
                ..small_cfg()
            },
            FitConfig {
                n_splats_init: 0,
                ..small_cfg()
            },
            FitConfig {
                densify_interval: 0,
                ..small_cfg()
            },
            FitConfig {
                lambda: -0.1,
                ..small_cfg()
            },
            FitConfig {
                prune_opacity_threshold: 0.0,
                ..small_cfg()
            },
        ];
        for cfg in bad {
            assert!(matches!(fit(&t, &cfg), Err(Error::InvalidArgument(_))), "{cfg:?}");
        }
        let mut cfg = small_cfg();
        cfg.learning_rates.color = 0.0;
        assert!(fit(&t, &cfg).is_err());
    }

    #[test]
    fn hook_error_aborts() {
        let res = fit_with_hook(&gradient_target(), &small_cfg(), |done, _| {
            if done == 5 {
                Err(Error::Validation("stop".into()))
            } else {
                Ok(())
            }
        });
        assert!(matches!(res, Err(Error::Validation(_))));
    }

    #[test]
    fn overflowing_parameters_are_a_numeric_failure() {
        let mut cfg = small_cfg();
        cfg.learning_rates.color = 1e308;
        assert!(matches!(fit(&gradient_target(), &cfg), Err(Error::Numeric(_))));
    }
}
