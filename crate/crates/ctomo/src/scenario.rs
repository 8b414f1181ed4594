//! Pipeline orchestration behind the CLI: named stages that read and write
//! a fixed set of artifacts in an output directory, plus a manifest with
//! SHA-256 digests of everything the run produced.
//!
//! Artifact names are fixed so stages compose across invocations:
//! `projections.*` and `truth.*` from simulate, `rdm_projections.*` from
//! project, `<alg>_volume.*` from reconstruct, `<alg>_{profile,mtf,asf}.csv`
//! from metrics, `<name>_slice.pgm` from export, and `manifest.toml`.

use crate::config::{Algorithm, ConfigError, ScenarioConfig};
use crate::geometry::CArmGeometry;
use crate::io::{
    export_slice_pgm, read_phantom, read_stack, read_volume, write_asf_csv, write_mtf_csv,
    write_profile_csv, write_stack, write_volume, Manifest,
};
use crate::metrics::{asf, line_profile, mtf, Roi};
use crate::phantom::{forward_project_analytic, to_intensity, voxelize, EllipsoidPhantom};
use crate::projector::{forward_project_rdm, log_normalize};
use crate::recon::{bp_reconstruct, fbp_reconstruct, mlem_reconstruct, sart_reconstruct};
use crate::stack::{Domain, ProjectionStack};
use crate::volume::{VolumeGeometry, VoxelVolume};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Project,
    Reconstruct,
    Metrics,
    Export,
    All,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Overrides the config's noise seed.
    pub seed: Option<u64>,
    /// Overrides the config's view count, keeping the angular span.
    pub views: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read config: {0}")]
    ConfigIo(String),
    #[error("stage {stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
}

fn stage_err<E: Display>(stage: &'static str) -> impl Fn(E) -> ScenarioError {
    move |e| ScenarioError::Stage { stage, msg: e.to_string() }
}

struct Ctx {
    cfg: ScenarioConfig,
    config_text: String,
    config_dir: PathBuf,
    out_dir: PathBuf,
    geom: CArmGeometry,
    grid: VolumeGeometry,
    seed: u64,
    /// Artifact names (relative to `out_dir`) written by this invocation.
    written: Vec<String>,
}

impl Ctx {
    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn note_pair(&mut self, base: &str) {
        self.written.push(format!("{base}.meta"));
        self.written.push(format!("{base}.raw"));
    }

    fn phantom(&self, stage: &'static str) -> Result<EllipsoidPhantom, ScenarioError> {
        read_phantom(&self.config_dir.join(&self.cfg.phantom.file)).map_err(stage_err(stage))
    }
}

/// Execute one stage (or all of them) of the scenario described by the
/// config file, writing artifacts and a manifest into `out_dir`. Reruns
/// with the same config and seed reproduce every payload bitwise.
pub fn run_scenario(
    config_path: &Path,
    out_dir: &Path,
    stage: Stage,
    opts: &RunOptions,
) -> Result<(), ScenarioError> {
    let config_text = fs::read_to_string(config_path)
        .map_err(|e| ScenarioError::ConfigIo(format!("{}: {e}", config_path.display())))?;
    let cfg = ScenarioConfig::from_str(&config_text)?;
    let geom = match opts.views {
        Some(n) => cfg.carm_geometry_with_views(n)?,
        None => cfg.carm_geometry()?,
    };
    let grid = cfg.grid()?;
    let seed = opts.seed.unwrap_or(cfg.phantom.seed);
    fs::create_dir_all(out_dir).map_err(stage_err("setup"))?;
    let mut ctx = Ctx {
        cfg,
        config_text,
        config_dir: config_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        geom,
        grid,
        seed,
        written: Vec::new(),
    };
    match stage {
        Stage::Simulate => simulate(&mut ctx)?,
        Stage::Project => project(&mut ctx)?,
        Stage::Reconstruct => reconstruct(&mut ctx)?,
        Stage::Metrics => metrics_stage(&mut ctx)?,
        Stage::Export => export(&mut ctx)?,
        Stage::All => {
            simulate(&mut ctx)?;
            project(&mut ctx)?;
            reconstruct(&mut ctx)?;
            metrics_stage(&mut ctx)?;
            export(&mut ctx)?;
        }
    }
    write_manifest(&mut ctx)
}

/// Analytic forward projection of the phantom (plus optional photon
/// statistics) and the voxelized ground-truth volume.
fn simulate(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let ph = ctx.phantom("simulate")?;
    let li = forward_project_analytic(&ph, &ctx.geom);
    let stack = match ctx.cfg.phantom.i0 {
        Some(i0) => {
            let seed = ctx.cfg.phantom.noise.then_some(ctx.seed);
            to_intensity(&li, i0, seed).map_err(stage_err("simulate"))?
        }
        None => li,
    };
    write_stack(&stack, &ctx.artifact("projections")).map_err(stage_err("simulate"))?;
    ctx.note_pair("projections");
    let truth = voxelize(&ph, ctx.grid, ctx.cfg.phantom.supersample);
    write_volume(&truth, &ctx.artifact("truth")).map_err(stage_err("simulate"))?;
    ctx.note_pair("truth");
    Ok(())
}

/// Ray-driven forward projection of the ground truth, for cross-checks
/// against the analytic projections.
fn project(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let truth = read_volume(&ctx.artifact("truth")).map_err(stage_err("project"))?;
    let rdm = forward_project_rdm(&truth, &ctx.geom);
    write_stack(&rdm, &ctx.artifact("rdm_projections")).map_err(stage_err("project"))?;
    ctx.note_pair("rdm_projections");
    Ok(())
}

fn reconstruct(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let stack = read_stack(&ctx.artifact("projections")).map_err(stage_err("reconstruct"))?;
    let algorithms = ctx.cfg.recon.algorithms.clone();
    // BP, FBP, and SART consume line integrals; normalize intensity data
    // once. MLEM consumes the raw counts.
    let needs_li =
        algorithms.iter().any(|a| *a != Algorithm::Mlem) && stack.domain == Domain::Intensity;
    let normalized;
    let li: &ProjectionStack = if needs_li {
        normalized = log_normalize(&stack).map_err(stage_err("reconstruct"))?;
        &normalized
    } else {
        &stack
    };
    for alg in algorithms {
        let vol = match alg {
            Algorithm::Bp => bp_reconstruct(li, &ctx.grid),
            Algorithm::Fbp => fbp_reconstruct(li, &ctx.grid, &ctx.cfg.fbp_config()?),
            Algorithm::Sart => sart_reconstruct(li, &ctx.grid, &ctx.cfg.sart_config()?, None),
            Algorithm::Mlem => {
                let Some(i0) = stack.i0 else {
                    return Err(ScenarioError::Stage {
                        stage: "reconstruct",
                        msg: "mlem needs intensity projections with i0".into(),
                    });
                };
                let mcfg = ctx.cfg.mlem_config(i0)?;
                mlem_reconstruct(&stack, &ctx.grid, &mcfg, ctx.cfg.recon.mlem.initial_mu)
            }
        }
        .map_err(|e| ScenarioError::Stage {
            stage: "reconstruct",
            msg: format!("{}: {e}", alg.name()),
        })?;
        let base = format!("{}_volume", alg.name());
        write_volume(&vol, &ctx.artifact(&base)).map_err(stage_err("reconstruct"))?;
        ctx.note_pair(&base);
    }
    Ok(())
}

/// Index of the grid sample nearest a coordinate along one axis.
fn nearest(coord: f64, origin: f64, spacing: f64, n: usize) -> usize {
    ((coord - origin) / spacing).round().clamp(0.0, (n - 1) as f64) as usize
}

/// The metric target: the center of the first shape in the phantom file.
fn object_center_indices(vol: &VoxelVolume, ph: &EllipsoidPhantom) -> (usize, usize, usize) {
    let c = ph.ellipsoids[0].center;
    let g = &vol.geom;
    (
        nearest(c.x, g.origin.x, g.spacing, g.nx),
        nearest(c.y, g.origin.y, g.spacing, g.ny),
        nearest(c.z, g.origin.z, g.spacing, g.nz),
    )
}

fn metrics_stage(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let m = ctx.cfg.metrics.clone();
    if !(m.profile || m.mtf || m.asf) {
        return Ok(());
    }
    let ph = ctx.phantom("metrics")?;
    let center = ph.ellipsoids[0].center;
    for alg in ctx.cfg.recon.algorithms.clone() {
        let name = alg.name();
        let vol = read_volume(&ctx.artifact(&format!("{name}_volume"))).map_err(stage_err("metrics"))?;
        let with_alg = |e: &dyn Display| ScenarioError::Stage {
            stage: "metrics",
            msg: format!("{name}: {e}"),
        };
        let (ix, _, iz) = object_center_indices(&vol, &ph);
        if m.profile || m.mtf {
            let profile = line_profile(&vol, ix, iz).map_err(|e| with_alg(&e))?;
            if m.profile {
                let file = format!("{name}_profile.csv");
                write_profile_csv(&profile, &ctx.artifact(&file)).map_err(stage_err("metrics"))?;
                ctx.written.push(file);
            }
            if m.mtf {
                let curve = mtf(&profile).map_err(|e| with_alg(&e))?;
                let file = format!("{name}_mtf.csv");
                write_mtf_csv(&curve, &ctx.artifact(&file)).map_err(stage_err("metrics"))?;
                ctx.written.push(file);
            }
        }
        if m.asf {
            let feature = Roi::at_mm(&vol.geom, center.y, center.z, m.feature_half);
            let bg =
                Roi::at_mm(&vol.geom, center.y + m.bg_offset_mm, center.z, m.bg_half);
            let curve = asf(&vol, ix, feature, bg).map_err(|e| with_alg(&e))?;
            let file = format!("{name}_asf.csv");
            write_asf_csv(&curve, &ctx.artifact(&file)).map_err(stage_err("metrics"))?;
            ctx.written.push(file);
        }
    }
    Ok(())
}

/// Full-range window over a volume, widened when the data is constant.
fn window_of(vol: &VoxelVolume) -> (f64, f64) {
    let lo = vol.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vol.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo < hi {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn export(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let ph = ctx.phantom("export")?;
    let mut targets = vec![("truth".to_string(), "truth_slice.pgm".to_string())];
    for alg in &ctx.cfg.recon.algorithms {
        targets.push((
            format!("{}_volume", alg.name()),
            format!("{}_slice.pgm", alg.name()),
        ));
    }
    for (base, out_name) in targets {
        let vol = read_volume(&ctx.artifact(&base)).map_err(stage_err("export"))?;
        let (ix, _, _) = object_center_indices(&vol, &ph);
        export_slice_pgm(&vol, ix, window_of(&vol), &ctx.artifact(&out_name))
            .map_err(stage_err("export"))?;
        ctx.written.push(out_name);
    }
    Ok(())
}

fn write_manifest(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let mut manifest = Manifest::new(&ctx.config_text, ctx.seed);
    for name in &ctx.written {
        let bytes = fs::read(ctx.artifact(name)).map_err(stage_err("manifest"))?;
        manifest.insert_file(name, &bytes);
    }
    fs::write(ctx.artifact("manifest.toml"), manifest.to_toml_string()).map_err(stage_err("manifest"))?;
    Ok(())
}
