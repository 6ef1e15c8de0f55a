//! Tile-based alpha compositing of signed splats and its exact gradient.
//!
//! Each pixel composites the splats that reach it in ascending
//! `(depth, insertion index)` order:
//!
//! ```text
//! c_x = sum_i color_i * a_i * prod_{j<i} (1 - a_j)  +  background * prod_i (1 - a_i)
//! a_i = logistic(opacity_logit_i) * exp(-q_i / 2),   q_i = d^T Sigma_i^-1 d
//! ```
//!
//! Negative splats enter with negated color but attenuate transmittance like
//! any other splat. Responses beyond Mahalanobis distance 3 are exactly zero,
//! and a pixel stops accumulating once its transmittance falls below 1e-4.
//! Tiles only schedule work: every pixel walks the same globally sorted list,
//! so the output is bitwise independent of the tile size.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{build_covariance, logistic, Splat2D, SplatModel};

/// Responses beyond this Mahalanobis distance are treated as zero.
pub const CUTOFF_MAHALANOBIS: f64 = 3.0;
const CUTOFF_Q: f64 = CUTOFF_MAHALANOBIS * CUTOFF_MAHALANOBIS;
/// A pixel stops compositing once its transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Keeps responses strictly below one.
const MAX_RESPONSE: f64 = 1.0 - f64::EPSILON;
pub const DEFAULT_TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClampMode {
    #[default]
    ClampToUnit,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOptions {
    pub tile_size: usize,
    pub clamp_mode: ClampMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            clamp_mode: ClampMode::ClampToUnit,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderFrame {
    /// Composited color before clamping.
    pub raw: Image,
    /// `raw` after the clamp mode is applied.
    pub output: Image,
    pub clamp_mode: ClampMode,
    /// Number of (pixel, splat) pairs that were composited.
    pub contributions: u64,
    /// Number of channel values changed by clamping.
    pub clamped_channels: u64,
    pub(crate) cache: Option<Arc<ForwardCache>>,
}

impl RenderFrame {
    pub fn width(&self) -> usize {
        self.output.width()
    }

    pub fn height(&self) -> usize {
        self.output.height()
    }
}

/// Gradient of a scalar loss with respect to one splat's unconstrained
/// parameters. Color is the stored (unsigned) magnitude. Depth has none.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub position: [f64; 2],
    pub log_scales: [f64; 2],
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.position[k] += o.position[k];
            self.log_scales[k] += o.log_scales[k];
        }
        self.rotation += o.rotation;
        self.opacity_logit += o.opacity_logit;
        for k in 0..3 {
            self.color[k] += o.color[k];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.position.iter().all(|v| v.is_finite()) {
            Some("position")
        } else if !self.log_scales.iter().all(|v| v.is_finite()) {
            Some("log_scales")
        } else if !self.rotation.is_finite() {
            Some("rotation")
        } else if !self.opacity_logit.is_finite() {
            Some("opacity_logit")
        } else if !self.color.iter().all(|v| v.is_finite()) {
            Some("color")
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGradients {
    pub splats: Vec<SplatGrad>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            splats: vec![SplatGrad::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }
}

/// Per-render precomputation for one splat.
#[derive(Clone, Copy, Debug)]
struct Prepared {
    index: usize,
    px: f64,
    py: f64,
    cos: f64,
    sin: f64,
    inv_var0: f64,
    inv_var1: f64,
    opacity: f64,
    sign: f64,
    color: [f64; 3],
    // inclusive pixel-index bounding box, already clipped to the frame
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Intermediate values of one response evaluation.
#[derive(Clone, Copy, Debug)]
struct Response {
    alpha: f64,
    u0: f64,
    u1: f64,
    capped: bool,
}

impl Prepared {
    fn new(index: usize, s: &Splat2D, negative: bool) -> Self {
        let (sin, cos) = s.rotation.sin_cos();
        Prepared {
            index,
            px: s.position[0],
            py: s.position[1],
            cos,
            sin,
            inv_var0: (-2.0 * s.log_scales[0]).exp(),
            inv_var1: (-2.0 * s.log_scales[1]).exp(),
            opacity: logistic(s.opacity_logit),
            sign: if negative { -1.0 } else { 1.0 },
            color: s.color,
            x0: 0,
            x1: 0,
            y0: 0,
            y1: 0,
        }
    }

    /// Separating-axis test between the splat's oriented cutoff box (half
    /// extents `half` along its principal axes) and a tile's pixel area.
    /// Never rejects a tile holding a pixel center inside the cutoff.
    fn box_meets_tile(&self, half: [f64; 2], (x0, x1, y0, y1): (usize, usize, usize, usize)) -> bool {
        let (hx, hy) = (0.5 * (x1 - x0) as f64, 0.5 * (y1 - y0) as f64);
        let dx = self.px - (x0 as f64 + hx);
        let dy = self.py - (y0 as f64 + hy);
        let (c, s) = (self.cos.abs(), self.sin.abs());
        // slack absorbs rounding in the projections
        let slack = 1e-6;
        dx.abs() <= hx + half[0] * c + half[1] * s + slack
            && dy.abs() <= hy + half[0] * s + half[1] * c + slack
            && (self.cos * dx + self.sin * dy).abs() <= half[0] + hx * c + hy * s + slack
            && (-self.sin * dx + self.cos * dy).abs() <= half[1] + hx * s + hy * c + slack
    }

    #[inline]
    fn covers(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    #[inline]
    fn response(&self, x: f64, y: f64) -> Option<Response> {
        let dx = x - self.px;
        let dy = y - self.py;
        let u0 = self.cos * dx + self.sin * dy;
        let u1 = -self.sin * dx + self.cos * dy;
        let q = u0 * u0 * self.inv_var0 + u1 * u1 * self.inv_var1;
        // NaN falls outside as well
        if q.is_nan() || q > CUTOFF_Q {
            return None;
        }
        let a = self.opacity * (-0.5 * q).exp();
        let capped = a > MAX_RESPONSE;
        Some(Response {
            alpha: if capped { MAX_RESPONSE } else { a },
            u0,
            u1,
            capped,
        })
    }
}

/// Opacity-weighted Gaussian response of one splat at a point in pixel
/// coordinates, in `[0, 1)`. Zero beyond the cutoff distance.
pub fn pixel_response(s: &Splat2D, pixel: [f64; 2]) -> f64 {
    Prepared::new(0, s, false)
        .response(pixel[0], pixel[1])
        .map_or(0.0, |r| r.alpha)
}

/// Renders with [`RenderOptions::default`].
pub fn render(model: &SplatModel, width: usize, height: usize) -> Result<RenderFrame> {
    Renderer::default().render(model, width, height)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Renderer {
    pub options: RenderOptions,
}

#[derive(Debug)]
struct TileLayout {
    tile: usize,
    tiles_x: usize,
    tiles_y: usize,
    width: usize,
    height: usize,
}

impl TileLayout {
    fn bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile;
        let y0 = ty * self.tile;
        (
            x0,
            (x0 + self.tile).min(self.width),
            y0,
            (y0 + self.tile).min(self.height),
        )
    }
}

#[derive(Debug)]
struct Binned {
    prepared: Vec<Prepared>,
    /// Per tile, indices into `prepared` in compositing order.
    tiles: Vec<Vec<u32>>,
    layout: TileLayout,
}

impl Renderer {
    pub fn new(options: RenderOptions) -> Self {
        Self { options }
    }

    pub fn with_tile_size(tile_size: usize) -> Self {
        Self {
            options: RenderOptions {
                tile_size,
                ..RenderOptions::default()
            },
        }
    }

    fn bin(&self, model: &SplatModel, width: usize, height: usize) -> Result<Binned> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame size {width}x{height} is empty")));
        }
        if self.options.tile_size == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        if !model.is_finite() {
            return Err(Error::invalid("model has non-finite parameters"));
        }
        let splats = model.splats();
        let mut order: Vec<usize> = (0..splats.len()).collect();
        order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));

        let tile = self.options.tile_size;
        let layout = TileLayout {
            tile,
            tiles_x: width.div_ceil(tile),
            tiles_y: height.div_ceil(tile),
            width,
            height,
        };
        let mut tiles = vec![Vec::new(); layout.tiles_x * layout.tiles_y];
        let mut prepared = Vec::with_capacity(splats.len());
        for &i in &order {
            let s = &splats[i];
            let cov = build_covariance(s)?;
            // 3-sigma ellipse extents plus a pixel of slack; the exact cutoff is
            // applied per pixel.
            let rx = CUTOFF_MAHALANOBIS * cov[(0, 0)].sqrt() + 1.0;
            let ry = CUTOFF_MAHALANOBIS * cov[(1, 1)].sqrt() + 1.0;
            // pixel x covers center x + 0.5
            let lo_x = (s.position[0] - rx - 0.5).ceil();
            let hi_x = (s.position[0] + rx - 0.5).floor();
            let lo_y = (s.position[1] - ry - 0.5).ceil();
            let hi_y = (s.position[1] + ry - 0.5).floor();
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > (width - 1) as f64 || lo_y > (height - 1) as f64 {
                continue;
            }
            let mut p = Prepared::new(i, s, model.is_negative(i));
            p.x0 = lo_x.max(0.0) as usize;
            p.x1 = hi_x.min((width - 1) as f64) as usize;
            p.y0 = lo_y.max(0.0) as usize;
            p.y1 = hi_y.min((height - 1) as f64) as usize;
            let slot = prepared.len() as u32;
            let half = [
                CUTOFF_MAHALANOBIS * s.log_scales[0].exp(),
                CUTOFF_MAHALANOBIS * s.log_scales[1].exp(),
            ];
            for ty in p.y0 / tile..=p.y1 / tile {
                for tx in p.x0 / tile..=p.x1 / tile {
                    let t = ty * layout.tiles_x + tx;
                    if p.box_meets_tile(half, layout.bounds(t)) {
                        tiles[t].push(slot);
                    }
                }
            }
            prepared.push(p);
        }
        Ok(Binned {
            prepared,
            tiles,
            layout,
        })
    }

    /// Per-pixel list of composited splats for one tile, front to back.
    fn tile_hits(binned: &Binned, t: usize) -> TileHits {
        let (x0, x1, y0, y1) = binned.layout.bounds(t);
        let list = &binned.tiles[t];
        let mut offsets = Vec::with_capacity((x1 - x0) * (y1 - y0) + 1);
        let mut hits = Vec::new();
        let mut end_trans = Vec::with_capacity((x1 - x0) * (y1 - y0));
        offsets.push(0);
        for y in y0..y1 {
            for x in x0..x1 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut trans = 1.0;
                for (pos, &slot) in list.iter().enumerate() {
                    let p = &binned.prepared[slot as usize];
                    if !p.covers(x, y) {
                        continue;
                    }
                    let Some(response) = p.response(cx, cy) else { continue };
                    hits.push(Hit {
                        pos: pos as u32,
                        response,
                        trans,
                    });
                    trans *= 1.0 - response.alpha;
                    if trans < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                offsets.push(hits.len() as u32);
                end_trans.push(trans);
            }
        }
        TileHits {
            offsets,
            hits,
            end_trans,
        }
    }

    pub fn render(&self, model: &SplatModel, width: usize, height: usize) -> Result<RenderFrame> {
        self.render_impl(model, width, height, false)
    }

    /// Like [`Renderer::render`], but the frame also keeps every per-pixel
    /// splat response so that a following [`Renderer::backward`] on the same
    /// model does not evaluate them again. Costs memory proportional to the
    /// number of composited (pixel, splat) pairs.
    pub fn render_for_backward(&self, model: &SplatModel, width: usize, height: usize) -> Result<RenderFrame> {
        self.render_impl(model, width, height, true)
    }

    fn render_impl(&self, model: &SplatModel, width: usize, height: usize, keep: bool) -> Result<RenderFrame> {
        let binned = self.bin(model, width, height)?;
        let bg = model.background;
        let layout = &binned.layout;

        let tiles: Vec<TileHits> = (0..binned.tiles.len())
            .into_par_iter()
            .map(|t| Self::tile_hits(&binned, t))
            .collect();

        let mut raw = Image::new(width, height);
        let mut contributions = 0;
        for (t, th) in tiles.iter().enumerate() {
            contributions += th.hits.len() as u64;
            let (x0, x1, y0, y1) = layout.bounds(t);
            let list = &binned.tiles[t];
            let mut pixel = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut acc = [0.0; 3];
                    for h in th.pixel(pixel) {
                        let p = &binned.prepared[list[h.pos as usize] as usize];
                        let w = p.sign * h.response.alpha * h.trans;
                        for (a, c) in acc.iter_mut().zip(p.color) {
                            *a += c * w;
                        }
                    }
                    let trans = th.end_trans[pixel];
                    let dst = (y * width + x) * 3;
                    for k in 0..3 {
                        raw.data_mut()[dst + k] = acc[k] + bg[k] * trans;
                    }
                    pixel += 1;
                }
            }
        }

        let mut output = raw.clone();
        let mut clamped_channels = 0;
        if self.options.clamp_mode == ClampMode::ClampToUnit {
            for v in output.data_mut() {
                let c = v.clamp(0.0, 1.0);
                if c != *v {
                    clamped_channels += 1;
                }
                *v = c;
            }
        }
        let cache = keep.then(|| {
            Arc::new(ForwardCache {
                model: model.clone(),
                tile_size: self.options.tile_size,
                binned,
                tiles,
            })
        });
        Ok(RenderFrame {
            raw,
            output,
            clamp_mode: self.options.clamp_mode,
            contributions,
            clamped_channels,
            cache,
        })
    }

    /// Exact gradient of `sum_pixels <frame_grad, output>` with respect to
    /// every splat parameter except depth.
    ///
    /// `frame` must come from rendering the same model; its raw values decide
    /// where the clamp blocks the gradient. Responses kept by
    /// [`Renderer::render_for_backward`] are reused, otherwise they are
    /// recomputed. Each pixel's hits are then traversed back to front.
    pub fn backward(&self, model: &SplatModel, frame: &RenderFrame, frame_grad: &Image) -> Result<ParamGradients> {
        let (width, height) = (frame.width(), frame.height());
        if !frame_grad.same_shape(&frame.output) {
            return Err(Error::invalid(format!(
                "frame gradient is {}x{}, frame is {width}x{height}",
                frame_grad.width(),
                frame_grad.height()
            )));
        }
        let cached = frame
            .cache
            .as_deref()
            .filter(|c| c.tile_size == self.options.tile_size && c.model == *model);
        let fresh;
        let (binned, tiles): (&Binned, Option<&[TileHits]>) = match cached {
            Some(c) => (&c.binned, Some(&c.tiles)),
            None => {
                fresh = self.bin(model, width, height)?;
                (&fresh, None)
            }
        };
        let bg = model.background;
        let layout = &binned.layout;
        let clamp = frame.clamp_mode == ClampMode::ClampToUnit;

        let partials: Vec<Vec<SplatGrad>> = (0..binned.tiles.len())
            .into_par_iter()
            .map(|t| {
                let computed;
                let th = match tiles {
                    Some(all) => &all[t],
                    None => {
                        computed = Self::tile_hits(binned, t);
                        &computed
                    }
                };
                let (x0, x1, y0, y1) = layout.bounds(t);
                let list = &binned.tiles[t];
                let mut local = vec![SplatGrad::default(); list.len()];
                let mut pixel = 0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let hits = th.pixel(pixel);
                        pixel += 1;
                        let pix = (y * width + x) * 3;
                        let mut g = [0.0; 3];
                        for (k, gk) in g.iter_mut().enumerate() {
                            let raw = frame.raw.data()[pix + k];
                            let blocked = clamp && !(0.0..=1.0).contains(&raw);
                            *gk = if blocked { 0.0 } else { frame_grad.data()[pix + k] };
                        }
                        if g == [0.0; 3] {
                            continue;
                        }

                        // color composited behind the current splat
                        let mut behind = bg;
                        for h in hits.iter().rev() {
                            let p = &binned.prepared[list[h.pos as usize] as usize];
                            let r = &h.response;
                            let (a, t_before) = (r.alpha, h.trans);
                            let mut d_alpha = 0.0;
                            let out = &mut local[h.pos as usize];
                            for k in 0..3 {
                                let signed = p.sign * p.color[k];
                                out.color[k] += g[k] * p.sign * a * t_before;
                                d_alpha += g[k] * t_before * (signed - behind[k]);
                                behind[k] = signed * a + (1.0 - a) * behind[k];
                            }
                            if r.capped {
                                continue;
                            }
                            out.opacity_logit += d_alpha * a * (1.0 - p.opacity);
                            // a = opacity * exp(-q/2)
                            let d_q = -0.5 * a * d_alpha;
                            let w0 = r.u0 * p.inv_var0;
                            let w1 = r.u1 * p.inv_var1;
                            out.log_scales[0] += d_q * (-2.0 * r.u0 * w0);
                            out.log_scales[1] += d_q * (-2.0 * r.u1 * w1);
                            out.rotation += d_q * 2.0 * r.u0 * r.u1 * (p.inv_var0 - p.inv_var1);
                            out.position[0] += d_q * (-2.0) * (p.cos * w0 - p.sin * w1);
                            out.position[1] += d_q * (-2.0) * (p.sin * w0 + p.cos * w1);
                        }
                    }
                }
                local
            })
            .collect();

        let mut grads = ParamGradients::zeros(model.len());
        for (t, local) in partials.iter().enumerate() {
            for (pos, g) in local.iter().enumerate() {
                let idx = binned.prepared[binned.tiles[t][pos] as usize].index;
                grads.splats[idx].add(g);
            }
        }
        Ok(grads)
    }
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    /// Position in the tile's splat list.
    pos: u32,
    response: Response,
    /// Transmittance in front of this splat.
    trans: f64,
}

#[derive(Debug)]
struct TileHits {
    /// `hits[offsets[p]..offsets[p + 1]]` belong to the tile's `p`-th pixel
    /// in row-major order.
    offsets: Vec<u32>,
    hits: Vec<Hit>,
    /// Transmittance left for the background, per pixel.
    end_trans: Vec<f64>,
}

impl TileHits {
    fn pixel(&self, p: usize) -> &[Hit] {
        &self.hits[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }
}

/// Forward state kept by [`Renderer::render_for_backward`].
#[derive(Debug)]
pub(crate) struct ForwardCache {
    model: SplatModel,
    tile_size: usize,
    binned: Binned,
    tiles: Vec<TileHits>,
}
