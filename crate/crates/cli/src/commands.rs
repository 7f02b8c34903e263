use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;
use slicesplat::data::{
    load_dataset, load_volume, make_axial_stack, make_phantom, make_random_sweep, save_dataset, save_volume, split_dataset,
    volume_paths,
};
use slicesplat::metrics::{evaluate_slices, evaluate_views, EvalReport, PlaneFamily, SliceStats};
use slicesplat::rasterizer::RenderOptions;
use slicesplat::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainContext, ViewDefaults};
use slicesplat::{render_slice, ExecMode, ProbePose, SliceDataset, SliceImage, SliceSpec};

use crate::args::{Command, EvalArgs, PhantomArgs, PoseArgs, RenderArgs, TrainArgs};
use crate::image::{encode_f32, encode_pgm};

pub fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Phantom(a) => cmd_phantom(&a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => cmd_train(&a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => cmd_eval(&a),
        Command::Render(a) => cmd_render(&a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => crate::server::cmd_serve(&a).map(|_| ExitCode::SUCCESS),
    }
}

pub fn cmd_phantom(a: &PhantomArgs) -> anyhow::Result<()> {
    let vol = make_phantom(a.kind, a.dims, a.spacing, a.seed)?;
    save_volume(&vol, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    let (lo, hi) = vol.world_bounds();
    let (raw, json) = volume_paths(&a.output);
    println!(
        "{}",
        json!({
            "raw": raw,
            "header": json,
            "dims": vol.dims,
            "spacing_mm": vol.spacing,
            "world_bounds_mm": [lo, hi],
        })
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::preset(&a.preset)?;
    cfg.seed = a.seed;
    if let Some(n) = a.n_gaussians {
        cfg.n_gaussians = n;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(p) = a.p_mass {
        cfg.p_mass = p;
    }
    if let Some(lr) = a.lr {
        cfg.lr_general = lr;
    }
    if let Some(w) = a.ssim_weight {
        cfg.ssim_loss_weight = w;
    }
    if let Some(l) = a.loss {
        cfg.loss = l.into();
    }
    if let Some(m) = a.exec_mode {
        cfg.exec_mode = m.into();
    }
    cfg.time_budget_s = a.time_budget_mins.map(|m| m * 60.0);
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the training set from the flags; returns it with the scene box of
/// the volume when one is used.
fn build_dataset(a: &TrainArgs) -> anyhow::Result<(SliceDataset, Option<slicesplat::trainer::Bounds>)> {
    let (ds, bounds) = if let Some(dir) = &a.dataset {
        (load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?, None)
    } else {
        let base = a.volume.as_ref().expect("clap enforces volume or dataset");
        let vol = load_volume(base).with_context(|| format!("loading volume {}", base.display()))?;
        let ds = match a.sweep {
            Some(n) => make_random_sweep(&vol, n, a.max_tilt_deg, a.seed)?,
            None => make_axial_stack(&vol, a.n_slices.unwrap_or(vol.depth()), a.perturb_deg, a.seed)?,
        };
        (ds, Some(vol.world_bounds()))
    };
    let ds = match a.train_fraction {
        Some(f) => split_dataset(&ds, f, a.seed)?,
        None => ds,
    };
    if let Some(dir) = &a.save_dataset {
        save_dataset(&ds, dir)?;
    }
    Ok((ds, bounds))
}

fn default_log_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.jsonl");
    output.with_file_name(name)
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = train_config(a)?;
    let (ds, bounds) = build_dataset(a)?;
    let first = ds.slices.first().context("dataset is empty")?;
    let view = ViewDefaults {
        width: first.width,
        height: first.height,
        spacing: first.spacing,
    };
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.output));
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating log {}", log_path.display()))?;
    let mut snapshot = a.output.clone().into_os_string();
    snapshot.push(".nan-snapshot.json");
    let ctx = TrainContext {
        bounds,
        snapshot_path: Some(PathBuf::from(snapshot)),
    };
    let mut write_err = None;
    let outcome = train(&ds, &cfg, &ctx, |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
        if !a.quiet {
            eprintln!("{line}");
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing training log");
    }
    let ckpt = outcome.checkpoint(&cfg, view);
    save_checkpoint(&ckpt, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    if !a.quiet {
        eprintln!(
            "wrote {} ({} Gaussians, {} iterations, {:.1} s)",
            a.output.display(),
            ckpt.cloud.len(),
            outcome.iterations,
            outcome.wall_ms as f64 / 1000.0
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub views: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<SliceStats>,
}

impl EvalOutput {
    /// Every mean SSIM in the report, views first.
    pub fn ssim_means(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(v) = &self.views {
            out.push(v.mean_ssim(&PlaneFamily::ALL));
        }
        if let Some(h) = &self.held_out {
            out.push(h.ssim_mean);
        }
        out
    }
}

pub fn run_eval(a: &EvalArgs) -> anyhow::Result<EvalOutput> {
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let opts = render_options(&ckpt);
    let views = match &a.volume {
        Some(path) => {
            let vol = load_volume(path).with_context(|| format!("loading volume {}", path.display()))?;
            Some(evaluate_views(&ckpt.cloud, &vol, a.n_per_axis, &opts)?)
        }
        None => None,
    };
    let held_out = match &a.dataset {
        Some(dir) => {
            let ds = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
            let test = ds.test();
            if test.is_empty() {
                bail!("dataset {} has no held-out slices", dir.display());
            }
            Some(evaluate_slices(&ckpt.cloud, &test, &opts)?)
        }
        None => None,
    };
    Ok(EvalOutput { views, held_out })
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let report = run_eval(a)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &a.output {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(min) = a.min_ssim {
        if let Some(low) = report.ssim_means().into_iter().find(|&m| m < min) {
            eprintln!("mean SSIM {low:.4} is below --min-ssim {min}");
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Options every render of a checkpoint uses, so that the CLI and the server
/// produce identical bytes.
pub fn render_options(ckpt: &Checkpoint) -> RenderOptions {
    RenderOptions::new(ckpt.meta.config.p_mass, ExecMode::Deterministic)
}

pub fn render_view(ckpt: &Checkpoint, spec: &SliceSpec) -> anyhow::Result<SliceImage> {
    Ok(render_slice(&ckpt.cloud, spec, &render_options(ckpt))?)
}

/// Parses `--matrix`: 9 row-major rotation entries then 3 translation entries.
pub fn parse_matrix(s: &str) -> anyhow::Result<ProbePose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad matrix entry '{p}'")))
        .collect::<anyhow::Result<_>>()?;
    let raw: [f64; 12] = v
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("matrix needs 12 numbers, got {}", v.len()))?;
    Ok(ProbePose::from_row_major(&raw)?)
}

pub fn pose_from_args(p: &PoseArgs) -> anyhow::Result<ProbePose> {
    if let Some(m) = &p.matrix {
        return parse_matrix(m);
    }
    let vals = [p.rx, p.ry, p.rz, p.tx, p.ty, p.tz];
    if vals.iter().any(|v| !v.is_finite()) {
        bail!("pose values must be finite");
    }
    Ok(ProbePose::from_euler_zyx_deg(p.rx, p.ry, p.rz, [p.tx, p.ty, p.tz]))
}

/// Largest slice edge accepted from clients.
pub const MAX_EDGE: usize = 4096;

pub fn view_spec(ckpt: &Checkpoint, pose: ProbePose, w: Option<usize>, h: Option<usize>, spacing: Option<f64>) -> anyhow::Result<SliceSpec> {
    let d = &ckpt.meta.default_view;
    let (w, h) = (w.unwrap_or(d.width), h.unwrap_or(d.height));
    if w > MAX_EDGE || h > MAX_EDGE {
        bail!("slice dimensions {w}×{h} exceed the {MAX_EDGE} pixel limit");
    }
    Ok(SliceSpec::new(w, h, spacing.unwrap_or(d.spacing), pose)?)
}

pub fn cmd_render(a: &RenderArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let spec = view_spec(&ckpt, pose_from_args(&a.pose)?, a.width, a.height, a.spacing)?;
    let img = render_view(&ckpt, &spec)?;
    fs::write(&a.output, encode_pgm(&img)).with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(raw) = &a.raw {
        fs::write(raw, encode_f32(&img)).with_context(|| format!("writing {}", raw.display()))?;
    }
    Ok(())
}
