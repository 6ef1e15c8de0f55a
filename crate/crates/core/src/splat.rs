//! Renderable scene: 2D splats plus a sign mask.
//!
//! Colors are stored as nonnegative magnitudes; the mask decides whether a
//! splat adds or subtracts light. The mask is fixed per splat and only changes
//! when splats are added or removed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix2;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    /// Center in pixel units; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub position: [f64; 2],
    /// Natural log of the two standard deviations along the local axes.
    pub log_scales: [f64; 2],
    /// Counter-clockwise rotation of the local axes, radians.
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: [f64; 3],
    /// Compositing key; smaller is nearer.
    pub depth: f64,
}

impl Splat2D {
    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.log_scales)
            .chain(&self.color)
            .chain([&self.rotation, &self.opacity_logit, &self.depth])
            .all(|v| v.is_finite())
    }

    pub fn opacity(&self) -> f64 {
        logistic(self.opacity_logit)
    }

    pub fn scales(&self) -> [f64; 2] {
        self.log_scales.map(f64::exp)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `R S S^T R^T` with `S = diag(exp(log_scales))` and `R` the rotation.
pub fn build_covariance(s: &Splat2D) -> Result<Matrix2<f64>> {
    if !s.is_finite() {
        return Err(Error::invalid("splat has non-finite fields"));
    }
    let (sin, cos) = s.rotation.sin_cos();
    let [v0, v1] = s.log_scales.map(|l| (2.0 * l).exp());
    let xx = cos * cos * v0 + sin * sin * v1;
    let yy = sin * sin * v0 + cos * cos * v1;
    let xy = sin * cos * (v0 - v1);
    Ok(Matrix2::new(xx, xy, xy, yy))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatModel {
    splats: Vec<Splat2D>,
    sign_mask: Vec<bool>,
    pub background: [f64; 3],
}

impl Default for SplatModel {
    fn default() -> Self {
        Self::new([0.0; 3])
    }
}

impl SplatModel {
    pub fn new(background: [f64; 3]) -> Self {
        Self {
            splats: Vec::new(),
            sign_mask: Vec::new(),
            background,
        }
    }

    pub fn from_parts(splats: Vec<Splat2D>, sign_mask: Vec<bool>, background: [f64; 3]) -> Result<Self> {
        if splats.len() != sign_mask.len() {
            return Err(Error::Validation(format!(
                "{} splats but {} mask entries",
                splats.len(),
                sign_mask.len()
            )));
        }
        Ok(Self {
            splats,
            sign_mask,
            background,
        })
    }

    pub fn push(&mut self, splat: Splat2D, negative: bool) {
        self.splats.push(splat);
        self.sign_mask.push(negative);
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    #[inline]
    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    /// Mutable access to splat parameters; the mask stays untouched.
    #[inline]
    pub fn splats_mut(&mut self) -> &mut [Splat2D] {
        &mut self.splats
    }

    #[inline]
    pub fn sign_mask(&self) -> &[bool] {
        &self.sign_mask
    }

    #[inline]
    pub fn is_negative(&self, i: usize) -> bool {
        self.sign_mask[i]
    }

    /// `(positive, negative)` splat counts.
    pub fn counts(&self) -> (usize, usize) {
        let neg = self.sign_mask.iter().filter(|&&n| n).count();
        (self.len() - neg, neg)
    }

    /// Keeps the splats for which `keep(index, splat)` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, &Splat2D) -> bool) {
        let mut i = 0;
        let mut mask = self.sign_mask.iter();
        let mut new_mask = Vec::with_capacity(self.len());
        self.splats.retain(|s| {
            let negative = *mask.next().expect("mask length matches splats");
            let k = keep(i, s);
            i += 1;
            if k {
                new_mask.push(negative);
            }
            k
        });
        self.sign_mask = new_mask;
    }

    pub fn is_finite(&self) -> bool {
        self.splats.iter().all(Splat2D::is_finite) && self.background.iter().all(|v| v.is_finite())
    }

    pub fn signed_color(&self, i: usize) -> Result<[f64; 3]> {
        let s = self
            .splats
            .get(i)
            .ok_or_else(|| Error::invalid(format!("splat index {i} out of range (len {})", self.len())))?;
        Ok(if self.sign_mask[i] {
            s.color.map(|c| -c)
        } else {
            s.color
        })
    }

    /// Serialized checkpoint text, one splat per line.
    pub fn to_checkpoint_string(&self) -> Result<String> {
        if !self.is_finite() {
            return Err(Error::invalid("cannot checkpoint a model with non-finite values"));
        }
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"version\": {CHECKPOINT_VERSION},");
        let _ = writeln!(out, "  \"background\": {},", num_list(&self.background));
        if self.splats.is_empty() {
            out.push_str("  \"splats\": []\n}\n");
            return Ok(out);
        }
        out.push_str("  \"splats\": [\n");
        for (i, (s, neg)) in self.splats.iter().zip(&self.sign_mask).enumerate() {
            let _ = write!(
                out,
                "    {{\"pos\": {}, \"log_scales\": {}, \"rotation\": {}, \"opacity_logit\": {}, \"color\": {}, \"depth\": {}, \"negative\": {}}}",
                num_list(&s.position),
                num_list(&s.log_scales),
                num(s.rotation),
                num(s.opacity_logit),
                num_list(&s.color),
                num(s.depth),
                neg
            );
            out.push_str(if i + 1 < self.len() { ",\n" } else { "\n" });
        }
        out.push_str("  ]\n}\n");
        Ok(out)
    }

    pub fn from_checkpoint_str(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: CheckpointDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                path: origin.to_string(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "{origin}: unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                doc.version
            )));
        }
        if let Some(mask) = &doc.mask {
            if mask.len() != doc.splats.len() {
                return Err(Error::Validation(format!(
                    "{origin}: mask has {} entries for {} splats",
                    mask.len(),
                    doc.splats.len()
                )));
            }
        }
        let mut model = SplatModel::new(doc.background);
        for (i, rec) in doc.splats.into_iter().enumerate() {
            let negative = match (&doc.mask, rec.negative) {
                (Some(mask), _) => mask[i],
                (None, Some(n)) => n,
                (None, None) => {
                    return Err(Error::Validation(format!(
                        "{origin}: splats[{i}] has no \"negative\" flag"
                    )))
                }
            };
            let splat = Splat2D {
                position: rec.pos,
                log_scales: rec.log_scales,
                rotation: rec.rotation,
                opacity_logit: rec.opacity_logit,
                color: rec.color,
                depth: rec.depth,
            };
            if splat.color.iter().any(|&c| c < 0.0) {
                return Err(Error::Validation(format!(
                    "{origin}: splats[{i}].color has a negative component; sign belongs in \"negative\""
                )));
            }
            model.push(splat, negative);
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, &path.display().to_string())
    }
}

/// 17 significant digits, which round-trips every finite `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn num_list(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|&v| num(v)).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    version: u32,
    background: [f64; 3],
    splats: Vec<SplatRecord>,
    /// Alternative to per-splat flags: a separate mask array.
    #[serde(default)]
    mask: Option<Vec<bool>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplatRecord {
    pos: [f64; 2],
    log_scales: [f64; 2],
    rotation: f64,
    opacity_logit: f64,
    color: [f64; 3],
    depth: f64,
    #[serde(default)]
    negative: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn splat(log_scales: [f64; 2], rotation: f64) -> Splat2D {
        Splat2D {
            position: [0.0, 0.0],
            log_scales,
            rotation,
            opacity_logit: 0.0,
            color: [0.5, 0.2, 0.1],
            depth: 0.0,
        }
    }

    #[test]
    fn unit_covariance() {
        let c = build_covariance(&splat([0.0, 0.0], 0.0)).unwrap();
        assert_eq!(c, Matrix2::identity());
    }

    #[test]
    fn rotated_axis_aligned_covariance() {
        let c = build_covariance(&splat([2f64.ln(), 0.0], FRAC_PI_2)).unwrap();
        // R diag(4, 1) R^T with R = [[0, -1], [1, 0]] is diag(1, 4)
        let r = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        let explicit = r * Matrix2::new(4.0, 0.0, 0.0, 1.0) * r.transpose();
        assert!((c - explicit).abs().max() < 1e-14);
        assert!((c - Matrix2::new(1.0, 0.0, 0.0, 4.0)).abs().max() < 1e-14);
    }

    #[test]
    fn covariance_is_pi_periodic() {
        let a = build_covariance(&splat([0.3, -0.7], 0.4)).unwrap();
        let b = build_covariance(&splat([0.3, -0.7], 0.4 + PI)).unwrap();
        assert!((a - b).abs().max() < 1e-14);
    }

    #[test]
    fn non_finite_covariance_input() {
        assert!(build_covariance(&splat([f64::NAN, 0.0], 0.0)).is_err());
    }

    #[test]
    fn signed_colors() {
        let mut m = SplatModel::default();
        m.push(splat([0.0; 2], 0.0), false);
        m.push(splat([0.0; 2], 0.0), true);
        let mut black = splat([0.0; 2], 0.0);
        black.color = [0.0; 3];
        m.push(black, true);
        assert_eq!(m.signed_color(0).unwrap(), [0.5, 0.2, 0.1]);
        assert_eq!(m.signed_color(1).unwrap(), [-0.5, -0.2, -0.1]);
        let zero = m.signed_color(2).unwrap();
        assert!(zero.iter().all(|&c| c == 0.0));
        assert!(m.signed_color(3).is_err());
        assert_eq!(m.counts(), (1, 2));
    }

    #[test]
    fn retain_keeps_mask_aligned() {
        let mut m = SplatModel::default();
        for i in 0..6 {
            let mut s = splat([0.0; 2], 0.0);
            s.depth = i as f64;
            m.push(s, i % 2 == 1);
        }
        m.retain(|i, _| i % 3 != 0);
        let depths: Vec<f64> = m.splats().iter().map(|s| s.depth).collect();
        assert_eq!(depths, vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(m.sign_mask(), &[true, false, false, true]);
    }

    #[test]
    fn from_parts_rejects_length_mismatch() {
        assert!(matches!(
            SplatModel::from_parts(vec![splat([0.0; 2], 0.0)], vec![], [0.0; 3]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn checkpoint_rejects_mask_mismatch() {
        let text = r#"{"version": 1, "background": [0, 0, 0], "mask": [true],
            "splats": [{"pos": [0, 0], "log_scales": [0, 0], "rotation": 0,
                        "opacity_logit": 0, "color": [0, 0, 0], "depth": 0},
                       {"pos": [0, 0], "log_scales": [0, 0], "rotation": 0,
                        "opacity_logit": 0, "color": [0, 0, 0], "depth": 0}]}"#;
        assert!(matches!(
            SplatModel::from_checkpoint_str(text, "t"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn checkpoint_parse_error_names_line_and_field() {
        let mut m = SplatModel::default();
        m.push(splat([0.0; 2], 0.0), false);
        m.push(splat([0.0; 2], 0.0), true);
        let text = m.to_checkpoint_string().unwrap().replace(
            "\"rotation\": 0.0000000000000000e0, \"opacity_logit\": 0.0000000000000000e0, \"color\": [5",
            "\"rotation\": \"x\", \"opacity_logit\": 0.0000000000000000e0, \"color\": [5",
        );
        match SplatModel::from_checkpoint_str(&text, "ckpt.json") {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(field, "splats[0].rotation");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_model_checkpoint() {
        let m = SplatModel::new([0.2, 0.3, 0.4]);
        let back = SplatModel::from_checkpoint_str(&m.to_checkpoint_string().unwrap(), "t").unwrap();
        assert_eq!(back, m);
        assert!(back.is_empty());
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = SplatModel::new([0.1, 0.2, 0.3]);
        for i in 0..100 {
            let t = i as f64;
            m.push(
                Splat2D {
                    position: [t * 0.37, (t * 1.3).sin() * 1e5],
                    log_scales: [-(t / 7.0), t.sqrt()],
                    rotation: t * 0.1 - 3.0,
                    opacity_logit: 1.0 / (t + 0.3),
                    color: [t / 99.0, 1e-300 * t, 0.1],
                    depth: (t * 0.61803).fract(),
                },
                i % 5 == 0,
            );
        }
        m.save_checkpoint(&path).unwrap();
        assert_eq!(SplatModel::load_checkpoint(&path).unwrap(), m);
        assert!(matches!(
            SplatModel::load_checkpoint(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    fn any_splat() -> impl Strategy<Value = Splat2D> {
        let f = || prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO;
        ([f(), f()], [f(), f()], f(), f(), [f(), f(), f()], f()).prop_map(
            |(position, log_scales, rotation, opacity_logit, color, depth)| Splat2D {
                position,
                log_scales,
                rotation,
                opacity_logit,
                color: color.map(f64::abs),
                depth,
            },
        )
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            splats in prop::collection::vec((any_splat(), any::<bool>()), 0..20),
            bg in [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64],
        ) {
            let mut m = SplatModel::new(bg);
            for (s, n) in splats {
                m.push(s, n);
            }
            let back = SplatModel::from_checkpoint_str(&m.to_checkpoint_string().unwrap(), "p").unwrap();
            prop_assert_eq!(back.len(), m.len());
            for (a, b) in back.splats().iter().zip(m.splats()) {
                let bits = |s: &Splat2D| {
                    let mut v: Vec<u64> = s.position.iter().chain(&s.log_scales).chain(&s.color)
                        .map(|x| x.to_bits()).collect();
                    v.extend([s.rotation, s.opacity_logit, s.depth].map(f64::to_bits));
                    v
                };
                prop_assert_eq!(bits(a), bits(b));
            }
            prop_assert_eq!(back.sign_mask(), m.sign_mask());
            prop_assert_eq!(back.background.map(f64::to_bits), m.background.map(f64::to_bits));
        }

        #[test]
        fn covariance_is_spd(
            a in -4.0..4.0f64, b in -4.0..4.0f64, r in -10.0..10.0f64,
        ) {
            let c = build_covariance(&splat([a, b], r)).unwrap();
            let tr = c[(0, 0)] + c[(1, 1)];
            let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
            let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
            let max_eig = tr / 2.0 + disc;
            prop_assert!(max_eig > 0.0);
            prop_assert!(det / max_eig > 0.0);
            prop_assert_eq!(c[(0, 1)], c[(1, 0)]);
            let expected_det = (2.0 * (a + b)).exp();
            let magnitude = c[(0, 0)] * c[(1, 1)] + c[(0, 1)] * c[(0, 1)];
            prop_assert!((det - expected_det).abs() <= 1e-12 * magnitude);
        }
    }
}
