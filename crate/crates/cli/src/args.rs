use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use negsplat::optim::{FitConfig, LearningRates};
use negsplat::targets::TargetKind;

#[derive(Debug, Parser)]
#[command(
    name = "negsplat",
    version,
    about = "Signed Gaussian splatting and Diff-Gaussian densities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a splat model to a PPM/PGM target image.
    Fit {
        target: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Output directory for checkpoints, report and render.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep the negative fraction over several seeds and tabulate metrics.
    Ablate {
        target: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Comma-separated negative fractions.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0,0.1,0.2,0.3,0.5", value_parser = parse_fraction)]
        fractions: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a Diff-Gaussian density as a grayscale image normalized to its peak.
    Density {
        #[command(flatten)]
        spec: DiffArgs,
        #[arg(long, default_value = "128x128", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value = "density.pgm")]
        out: PathBuf,
    },
    /// Draw samples from a Diff-Gaussian by rejection.
    Sample {
        #[command(flatten)]
        spec: DiffArgs,
        #[arg(long, short = 'n', default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Size of the scatter raster.
        #[arg(long, default_value = "128x128", value_parser = parse_size)]
        size: (usize, usize),
        /// Output directory for samples.txt and scatter.pgm.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a saved checkpoint.
    Render {
        checkpoint: PathBuf,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
    },
    /// Write a procedural target image.
    Targets {
        #[arg(value_parser = parse_target)]
        name: TargetKind,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkerboard cell size in pixels.
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        cell: u64,
        /// Defaults to `<name>.ppm`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = FitConfig::default().iterations)]
    pub iters: usize,
    #[arg(long, default_value_t = FitConfig::default().n_splats_init, value_parser = parse_count)]
    pub splats: usize,
    #[arg(long, default_value_t = FitConfig::default().neg_fraction, value_parser = parse_fraction)]
    pub neg_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = FitConfig::default().lambda, value_parser = parse_fraction)]
    pub lambda: f64,
    #[arg(long, default_value_t = FitConfig::default().prune_opacity_threshold, value_parser = parse_open_unit)]
    pub prune_threshold: f64,
    #[arg(long, default_value_t = FitConfig::default().densify_interval, value_parser = parse_count)]
    pub densify_interval: usize,
    #[arg(long, default_value_t = FitConfig::default().learning_rates.position, value_parser = parse_rate)]
    pub lr_position: f64,
    #[arg(long, default_value_t = FitConfig::default().learning_rates.log_scales, value_parser = parse_rate)]
    pub lr_scale: f64,
    #[arg(long, default_value_t = FitConfig::default().learning_rates.rotation, value_parser = parse_rate)]
    pub lr_rotation: f64,
    #[arg(long, default_value_t = FitConfig::default().learning_rates.opacity_logit, value_parser = parse_rate)]
    pub lr_opacity: f64,
    #[arg(long, default_value_t = FitConfig::default().learning_rates.color, value_parser = parse_rate)]
    pub lr_color: f64,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iters,
            learning_rates: LearningRates {
                position: self.lr_position,
                log_scales: self.lr_scale,
                rotation: self.lr_rotation,
                opacity_logit: self.lr_opacity,
                color: self.lr_color,
            },
            lambda: self.lambda,
            densify_interval: self.densify_interval,
            prune_opacity_threshold: self.prune_threshold,
            neg_fraction: self.neg_fraction,
            n_splats_init: self.splats,
            seed: self.seed,
            background: [0.0; 3],
        }
    }
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Mean of the positive component, comma-separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub m0: Vector,
    /// Mean of the subtracted component.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub m1: Vector,
    /// Covariance rows separated by ';', entries by ','.
    #[arg(long, value_parser = parse_matrix, allow_hyphen_values = true)]
    pub cov0: Matrix,
    #[arg(long, value_parser = parse_matrix, allow_hyphen_values = true)]
    pub cov1: Matrix,
    /// Weight of the subtracted component, or `max` for the largest
    /// admissible value.
    #[arg(long, default_value = "max", value_parser = parse_weight)]
    pub c: Weight,
    /// Half-width of the plotted region in units of the positive component's
    /// largest standard deviation.
    #[arg(long, default_value_t = 4.0, value_parser = parse_rate)]
    pub extent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix(pub Vec<Vec<f64>>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    Max,
    Value(f64),
}

fn parse_weight(s: &str) -> Result<Weight, String> {
    if s == "max" {
        return Ok(Weight::Max);
    }
    parse_finite(s).map(Weight::Value)
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{s:?}: {e}")),
    }
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

fn parse_vector(s: &str) -> Result<Vector, String> {
    s.split(',').map(parse_finite).collect::<Result<_, _>>().map(Vector)
}

fn parse_matrix(s: &str) -> Result<Matrix, String> {
    s.split(';')
        .map(|row| parse_vector(row).map(|v| v.0))
        .collect::<Result<_, _>>()
        .map(Matrix)
}

fn parse_target(s: &str) -> Result<TargetKind, String> {
    s.parse().map_err(|e: negsplat::Error| e.to_string())
}
