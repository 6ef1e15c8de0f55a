mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use negsplat::distribution::{self, DiffGaussian, GaussianParams};
use negsplat::optim::{self, FitConfig};
use negsplat::render::Renderer;
use negsplat::splat::SplatModel;
use negsplat::targets::{self, TargetSpec};
use negsplat::{Error, Image};
use serde_json::json;

use args::{Cli, Command, DiffArgs, Weight};

/// Checkpoints are written every this many iterations during `fit`.
const CHECKPOINT_EVERY: usize = 1000;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::Numeric(_) => {
                Failure::Numeric(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Fit { target, fit, out } => cmd_fit(&target, &fit.config(), &out),
        Command::Ablate {
            target,
            fit,
            fractions,
            seeds,
            out,
        } => cmd_ablate(&target, &fit.config(), &fractions, &seeds, &out),
        Command::Density { spec, size, out } => cmd_density(&spec, size, &out),
        Command::Sample {
            spec,
            n,
            seed,
            size,
            out,
        } => cmd_sample(&spec, n, seed, size, &out),
        Command::Render { checkpoint, size, out } => cmd_render(&checkpoint, size, &out),
        Command::Targets {
            name,
            size,
            seed,
            cell,
            out,
        } => {
            let out = out.unwrap_or_else(|| format!("{name}.ppm").into());
            let spec = TargetSpec {
                kind: name,
                width: size.0,
                height: size.1,
                seed,
                cell: cell as usize,
            };
            echo(
                "targets",
                &json!({"name": name.name(), "size": [size.0, size.1], "seed": seed, "cell": cell, "out": out}),
            );
            targets::generate(&spec)?.write_ppm(&out)?;
            Ok(())
        }
    }
}

fn echo(command: &str, config: &serde_json::Value) {
    println!("{command} config: {config}");
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_fit(target: &Path, cfg: &FitConfig, out: &Path) -> CmdResult {
    let config = serde_json::to_value(cfg).map_err(|e| Failure::Numeric(e.to_string()))?;
    echo("fit", &json!({"target": target, "out": out, "fit": config}));
    let image = Image::read_ppm(target)?;
    create_dir(out)?;
    write_text(
        &out.join("config.json"),
        &serde_json::to_string_pretty(&config).unwrap(),
    )?;

    let (model, report) = optim::fit_with_hook(&image, cfg, |done, model| {
        if done % CHECKPOINT_EVERY == 0 {
            model.save_checkpoint(out.join(format!("checkpoint_{done:05}.json")))?;
        }
        Ok(())
    })?;
    model.save_checkpoint(out.join("checkpoint.json"))?;
    write_text(&out.join("report.json"), &report.to_json()?)?;
    let frame = Renderer::default().render(&model, image.width(), image.height())?;
    frame.output.write_ppm(out.join("render.ppm"))?;

    let ssim = report.ssim.map_or_else(|| "-".into(), |s| format!("{s:.4}"));
    println!(
        "psnr_db {:.3}  ssim {ssim}  positive {}  negative {}  seconds {:.1}",
        report.psnr_db, report.positive, report.negative, report.wall_seconds
    );
    Ok(())
}

fn cmd_ablate(target: &Path, base: &FitConfig, fractions: &[f64], seeds: &[u64], out: &Path) -> CmdResult {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Failure::Usage("fraction and seed lists must be non-empty".into()));
    }
    let config = serde_json::to_value(base).map_err(|e| Failure::Numeric(e.to_string()))?;
    echo(
        "ablate",
        &json!({"target": target, "out": out, "fractions": fractions, "seeds": seeds, "fit": config}),
    );
    let image = Image::read_ppm(target)?;
    create_dir(out)?;
    let table = optim::ablate(&image, base, fractions, seeds)?;
    let text = table.to_text();
    write_text(&out.join("ablation.json"), &table.to_json()?)?;
    write_text(&out.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn gaussian(mean: &[f64], cov: &[Vec<f64>], name: &str) -> Result<GaussianParams, Failure> {
    let rows: Vec<&[f64]> = cov.iter().map(Vec::as_slice).collect();
    GaussianParams::from_slices(mean, &rows).map_err(|e| Failure::Input(format!("{name}: {e}")))
}

/// Builds the density, rejecting weights above the admissible maximum.
fn diff_gaussian(spec: &DiffArgs) -> Result<DiffGaussian, Failure> {
    let g0 = gaussian(&spec.m0.0, &spec.cov0.0, "component 0")?;
    let g1 = gaussian(&spec.m1.0, &spec.cov1.0, "component 1")?;
    if g0.dim() != g1.dim() {
        return Err(Failure::Input(format!(
            "components have dimensions {} and {}",
            g0.dim(),
            g1.dim()
        )));
    }
    let c_max = distribution::max_admissible_c(&g0, &g1)?;
    let c = match spec.c {
        // identical components admit any c below one; keep the positive one
        Weight::Max if c_max >= 1.0 => 0.0,
        Weight::Max => c_max,
        Weight::Value(c) if !(0.0..1.0).contains(&c) || c > c_max + 1e-12 => {
            return Err(Failure::Input(format!("c = {c} is not admissible (c_max = {c_max})")));
        }
        Weight::Value(c) => c,
    };
    println!("c = {c}  c_max = {c_max}");
    Ok(DiffGaussian::new(g0, g1, c)?)
}

fn echo_spec(command: &str, spec: &DiffArgs, extra: serde_json::Value) {
    let c = match spec.c {
        Weight::Max => json!("max"),
        Weight::Value(v) => json!(v),
    };
    echo(
        command,
        &json!({"m0": spec.m0.0, "m1": spec.m1.0, "cov0": spec.cov0.0, "cov1": spec.cov1.0, "c": c, "extent": spec.extent, "options": extra}),
    );
}

/// Plot window: the positive mean plus or minus `extent` times its largest
/// standard deviation, per axis.
fn window(d: &DiffGaussian, extent: f64) -> Vec<(f64, f64)> {
    let cov = d.g0.covariance();
    let sigma = (0..d.dim()).map(|i| cov[(i, i)]).fold(0.0, f64::max).sqrt();
    d.g0.mean()
        .iter()
        .map(|&m| (m - extent * sigma, m + extent * sigma))
        .collect()
}

fn cmd_density(spec: &DiffArgs, (w, h): (usize, usize), out: &Path) -> CmdResult {
    echo_spec("density", spec, json!({"size": [w, h], "out": out}));
    let d = diff_gaussian(spec)?;
    let bounds = window(&d, spec.extent);
    let lerp = |(lo, hi): (f64, f64), i: usize, n: usize| lo + (hi - lo) * (i as f64 + 0.5) / n as f64;

    let image = match d.dim() {
        1 => {
            // filled function plot, one column per sample
            let values: Vec<f64> = (0..w)
                .map(|i| d.pdf(&[lerp(bounds[0], i, w)]))
                .collect::<Result<_, _>>()?;
            let peak = values.iter().cloned().fold(0.0, f64::max);
            Image::from_fn(w, h, |x, y| {
                let level = if peak > 0.0 { values[x] / peak } else { 0.0 };
                let height = (h - y) as f64 / h as f64;
                [if height <= level { 1.0 } else { 0.0 }; 3]
            })
        }
        2 => {
            let mut values = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    // row 0 is the top of the plot
                    let p = [lerp(bounds[0], x, w), lerp(bounds[1], h - 1 - y, h)];
                    values[y * w + x] = d.pdf(&p)?;
                }
            }
            let peak = values.iter().cloned().fold(0.0, f64::max);
            Image::from_fn(w, h, |x, y| {
                [if peak > 0.0 { values[y * w + x] / peak } else { 0.0 }; 3]
            })
        }
        n => {
            return Err(Failure::Input(format!(
                "density plots support 1 or 2 dimensions, got {n}"
            )))
        }
    };
    image.write_pgm(out)?;
    Ok(())
}

fn cmd_sample(spec: &DiffArgs, n: usize, seed: u64, (w, h): (usize, usize), out: &Path) -> CmdResult {
    echo_spec(
        "sample",
        spec,
        json!({"n": n, "seed": seed, "size": [w, h], "out": out}),
    );
    let d = diff_gaussian(spec)?;
    let points = distribution::sample(&d, seed, n)?;
    create_dir(out)?;

    let mut text = String::new();
    for p in &points {
        let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        text.push_str(&coords.join(" "));
        text.push('\n');
    }
    write_text(&out.join("samples.txt"), &text)?;

    // 2D points are binned directly; 1D points become a histogram
    let bounds = window(&d, spec.extent);
    let bin = |v: f64, (lo, hi): (f64, f64), n: usize| {
        let t = (v - lo) / (hi - lo);
        (0.0..1.0).contains(&t).then_some((t * n as f64) as usize)
    };
    let mut counts = vec![0usize; w * h];
    match d.dim() {
        1 => {
            let mut hist = vec![0usize; w];
            for p in &points {
                if let Some(x) = bin(p[0], bounds[0], w) {
                    hist[x] += 1;
                }
            }
            let peak = hist.iter().copied().max().unwrap_or(0).max(1);
            for (x, &c) in hist.iter().enumerate() {
                let filled = c * h / peak;
                for y in h - filled..h {
                    counts[y * w + x] = 1;
                }
            }
        }
        2 => {
            for p in &points {
                if let (Some(x), Some(y)) = (bin(p[0], bounds[0], w), bin(p[1], bounds[1], h)) {
                    counts[(h - 1 - y) * w + x] += 1;
                }
            }
        }
        _ => {}
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    Image::from_fn(w, h, |x, y| [counts[y * w + x] as f64 / peak; 3]).write_pgm(out.join("scatter.pgm"))?;
    println!("{} samples written", points.len());
    Ok(())
}

fn cmd_render(checkpoint: &Path, (w, h): (usize, usize), out: &Path) -> CmdResult {
    echo("render", &json!({"checkpoint": checkpoint, "size": [w, h], "out": out}));
    let model = SplatModel::load_checkpoint(checkpoint)?;
    Renderer::default().render(&model, w, h)?.output.write_ppm(out)?;
    Ok(())
}
