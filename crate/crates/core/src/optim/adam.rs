use serde::{Deserialize, Serialize};

use super::densify::Origin;
use crate::error::{Error, Result};
use crate::render::{ParamGradients, SplatGrad};
use crate::splat::SplatModel;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Parameters per splat: position (2), log scales (2), rotation, opacity
/// logit, color (3).
pub const PARAMS_PER_SPLAT: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub log_scales: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl LearningRates {
    fn per_param(&self) -> [f64; PARAMS_PER_SPLAT] {
        [
            self.position,
            self.position,
            self.log_scales,
            self.log_scales,
            self.rotation,
            self.opacity_logit,
            self.color,
            self.color,
            self.color,
        ]
    }

    pub fn all_positive(&self) -> bool {
        self.per_param().iter().all(|&r| r > 0.0 && r.is_finite())
    }
}

fn flatten(g: &SplatGrad) -> [f64; PARAMS_PER_SPLAT] {
    [
        g.position[0],
        g.position[1],
        g.log_scales[0],
        g.log_scales[1],
        g.rotation,
        g.opacity_logit,
        g.color[0],
        g.color[1],
        g.color[2],
    ]
}

/// First and second moments for every splat parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<[f64; PARAMS_PER_SPLAT]>,
    pub v: Vec<[f64; PARAMS_PER_SPLAT]>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![[0.0; PARAMS_PER_SPLAT]; n],
            v: vec![[0.0; PARAMS_PER_SPLAT]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Follows a densify/prune rewrite: kept rows move with their splat,
    /// clones start from zero moments.
    pub fn remap(&mut self, origins: &[Origin]) {
        let zero = [0.0; PARAMS_PER_SPLAT];
        let (m, v) = origins
            .iter()
            .map(|o| match *o {
                Origin::Kept(i) => (self.m[i], self.v[i]),
                Origin::Cloned(_) => (zero, zero),
            })
            .unzip();
        self.m = m;
        self.v = v;
    }

    /// One Adam update of every splat parameter; depth and the sign mask are
    /// never touched. Colors are projected back onto `>= 0` afterwards.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, model: &mut SplatModel, grads: &ParamGradients, rates: &LearningRates) -> Result<()> {
        if grads.len() != model.len() || self.len() != model.len() {
            return Err(Error::DimensionMismatch {
                expected: model.len(),
                got: if grads.len() != model.len() {
                    grads.len()
                } else {
                    self.len()
                },
            });
        }
        if let Some((index, field)) = grads
            .splats
            .iter()
            .enumerate()
            .find_map(|(i, g)| g.first_non_finite().map(|f| (i, f)))
        {
            return Err(Error::NonFiniteGradient { index, field });
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - BETA1.powi(t);
        let bias2 = 1.0 - BETA2.powi(t);
        let lr = rates.per_param();

        for (i, splat) in model.splats_mut().iter_mut().enumerate() {
            let g = flatten(&grads.splats[i]);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut delta = [0.0; PARAMS_PER_SPLAT];
            for k in 0..PARAMS_PER_SPLAT {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                delta[k] = lr[k] * m_hat / (v_hat.sqrt() + EPSILON);
            }
            splat.position[0] -= delta[0];
            splat.position[1] -= delta[1];
            splat.log_scales[0] -= delta[2];
            splat.log_scales[1] -= delta[3];
            splat.rotation -= delta[4];
            splat.opacity_logit -= delta[5];
            for k in 0..3 {
                splat.color[k] = (splat.color[k] - delta[6 + k]).max(0.0);
            }
        }
        Ok(())
    }
}
