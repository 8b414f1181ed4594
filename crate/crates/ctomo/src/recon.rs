//! The four reconstruction algorithms: BP, FBP, SART, and transmission MLEM.
//!
//! BP and FBP backproject with the pixel-driven model and average per voxel
//! over the views whose projection of that voxel landed on the detector.
//! SART and MLEM iterate with the matched ray-driven pair (W, Wᵀ). All four
//! are deterministic and bitwise thread-count invariant; the iteration
//! loops themselves are sequential by nature, parallelism lives inside each
//! update.

use crate::projector::{
    backproject_pdm_counted, forward_view_rdm, forward_view_with_lengths, gather_view_rdm,
    log_normalize, ViewGather,
};
use crate::stack::{Domain, ProjectionStack};
use crate::volume::{VolumeGeometry, VoxelVolume};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("projection stack has no views")]
    EmptyStack,
    #[error("stack domain mismatch: expected {expected}")]
    DomainMismatch { expected: &'static str },
    #[error("MLEM initial value must be strictly positive, got {0}")]
    NonPositiveInitial(f64),
    #[error("initial volume shape does not match the reconstruction grid")]
    GridMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Frequency window applied on top of the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterWindow {
    RampOnly,
    RampHann,
}

/// FBP filtering options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbpConfig {
    pub window: FilterWindow,
    /// Cutoff as a fraction of the Nyquist frequency, in (0, 1].
    pub cutoff: f64,
    /// Cone-beam cosine pre-weight. Off by default: over a ±20° arc with a
    /// small cone angle the correction is below one percent.
    pub cosine_weight: bool,
}

impl Default for FbpConfig {
    fn default() -> Self {
        Self { window: FilterWindow::RampHann, cutoff: 1.0, cosine_weight: false }
    }
}

impl FbpConfig {
    pub(crate) fn validate(&self) -> Result<(), ReconError> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(ReconError::InvalidConfig(format!(
                "cutoff must be in (0, 1], got {}",
                self.cutoff
            )));
        }
        Ok(())
    }
}

/// SART options. `lambda0 = 0` is allowed and makes every sweep a no-op,
/// which is occasionally useful as a pipeline identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SartConfig {
    pub iterations: usize,
    pub lambda0: f64,
    /// Multiplicative relaxation decay per iteration: λ_t = lambda0·decay^t.
    pub decay: f64,
    pub nonneg: bool,
}

impl Default for SartConfig {
    fn default() -> Self {
        Self { iterations: 10, lambda0: 1.0, decay: 0.8, nonneg: true }
    }
}

impl SartConfig {
    pub(crate) fn validate(&self) -> Result<(), ReconError> {
        if self.iterations == 0 {
            return Err(ReconError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.lambda0) || !self.lambda0.is_finite() {
            return Err(ReconError::InvalidConfig(format!(
                "lambda0 must be in [0, 2], got {}",
                self.lambda0
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ReconError::InvalidConfig(format!(
                "decay must be in (0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// Transmission MLEM options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlemConfig {
    pub iterations: usize,
    /// Incident photon count per pixel (the flat field of the model).
    pub i0: f64,
    /// Lower clamp applied to the volume after every iteration.
    pub floor: f64,
}

impl MlemConfig {
    pub fn new(i0: f64) -> Self {
        Self { iterations: 20, i0, floor: 0.0 }
    }

    pub(crate) fn validate(&self) -> Result<(), ReconError> {
        if self.iterations == 0 {
            return Err(ReconError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.i0 > 0.0) || !self.i0.is_finite() {
            return Err(ReconError::InvalidConfig(format!("i0 must be > 0, got {}", self.i0)));
        }
        if !(self.floor >= 0.0) {
            return Err(ReconError::InvalidConfig(format!(
                "floor must be >= 0, got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Average the PDM backprojection per voxel over the views that saw it.
fn pdm_average(stack: &ProjectionStack, grid: &VolumeGeometry) -> VoxelVolume {
    let views: Vec<usize> = (0..stack.geom.n_views()).collect();
    let (mut vol, counts) = backproject_pdm_counted(stack, grid, &views);
    vol.data.par_iter_mut().zip(counts.par_iter()).for_each(|(v, &c)| {
        if c > 0 {
            *v /= c as f64;
        }
    });
    vol
}

/// Unfiltered backprojection: per voxel, the mean of the projected values
/// over all views whose projection fell inside the detector.
pub fn bp_reconstruct(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
) -> Result<VoxelVolume, ReconError> {
    if stack.data.is_empty() {
        return Err(ReconError::EmptyStack);
    }
    if stack.domain != Domain::LineIntegral {
        return Err(ReconError::DomainMismatch { expected: "line_integral" });
    }
    Ok(pdm_average(stack, grid))
}

/// Frequency response of the reconstruction filter on the zero-padded FFT
/// grid (length = next power of two ≥ 2·nu). Frequencies are in cycles per
/// sample; the application step divides by the pixel pitch to express the
/// ramp in mm⁻¹.
pub fn build_filter(nu: usize, cfg: &FbpConfig) -> Result<Vec<f64>, ReconError> {
    cfg.validate()?;
    if nu < 2 {
        return Err(ReconError::InvalidConfig(format!("nu must be >= 2, got {nu}")));
    }
    let m = (2 * nu).next_power_of_two();
    let fc = cfg.cutoff * 0.5;
    let mut h = vec![0.0; m];
    for (k, hk) in h.iter_mut().enumerate() {
        let f = k.min(m - k) as f64 / m as f64;
        if f <= fc {
            *hk = match cfg.window {
                FilterWindow::RampOnly => f,
                FilterWindow::RampHann => {
                    f * 0.5 * (1.0 + (std::f64::consts::PI * f / fc).cos())
                }
            };
        }
    }
    Ok(h)
}

/// Filter every detector row (fixed v, running u) of every view through the
/// padded-FFT ramp; output stays in line-integral geometry but carries
/// filtered values in mm⁻¹-weighted units.
fn filter_stack(stack: &ProjectionStack, cfg: &FbpConfig) -> Result<ProjectionStack, ReconError> {
    let nu = stack.geom.nu;
    let h = build_filter(nu, cfg)?;
    let m = h.len();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);
    // fft(ifft(x)) scales by m; fold that into the ramp's mm⁻¹ conversion.
    let scale = 1.0 / (m as f64 * stack.geom.pitch);

    let mut out = stack.clone();
    out.data.par_chunks_mut(nu).for_each_init(
        || (vec![Complex::default(); m], vec![Complex::default(); fft.get_inplace_scratch_len()]),
        |(buf, scratch), row| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < nu { Complex::new(row[i], 0.0) } else { Complex::default() };
            }
            fft.process_with_scratch(buf, scratch);
            for (b, &hk) in buf.iter_mut().zip(&h) {
                *b *= hk;
            }
            ifft.process_with_scratch(buf, scratch);
            for (i, r) in row.iter_mut().enumerate() {
                *r = buf[i].re * scale;
            }
        },
    );
    Ok(out)
}

/// Filtered backprojection: log-normalize intensities if needed, ramp
/// filter each row along u in the frequency domain, then backproject
/// pixel-driven and average as in [`bp_reconstruct`].
pub fn fbp_reconstruct(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
    cfg: &FbpConfig,
) -> Result<VoxelVolume, ReconError> {
    cfg.validate()?;
    if stack.data.is_empty() {
        return Err(ReconError::EmptyStack);
    }
    let normalized;
    let li = match stack.domain {
        Domain::LineIntegral => stack,
        Domain::Intensity => {
            normalized = log_normalize(stack)
                .expect("intensity stacks always carry i0");
            &normalized
        }
    };
    let weighted;
    let li = if cfg.cosine_weight {
        weighted = cosine_weight(li);
        &weighted
    } else {
        li
    };
    let filtered = filter_stack(li, cfg)?;
    Ok(pdm_average(&filtered, grid))
}

/// Flat-detector cone-beam pre-weight: SID / √(SID² + u² + v²) per pixel.
fn cosine_weight(stack: &ProjectionStack) -> ProjectionStack {
    let geom = &stack.geom;
    let sid = geom.sid();
    let (nu, nv) = (geom.nu, geom.nv);
    let mut out = stack.clone();
    out.data.par_chunks_mut(nu).enumerate().for_each(|(row_idx, row)| {
        let iv = row_idx % nv;
        let v = geom.pixel_v(iv);
        for (iu, px) in row.iter_mut().enumerate() {
            let u = geom.pixel_u(iu);
            *px *= sid / (sid * sid + u * u + v * v).sqrt();
        }
    });
    out
}

/// One full SART sweep over all views at a fixed relaxation value,
/// updating `mu` in place. Buffers are caller-provided so iterations reuse
/// allocations.
pub(crate) struct SartWorkspace<'a> {
    pub gathers: Vec<ViewGather<'a>>,
    proj: Vec<f64>,
    lens: Vec<f64>,
    resid: Vec<f64>,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl<'a> SartWorkspace<'a> {
    pub fn new(stack: &'a ProjectionStack, grid: &VolumeGeometry) -> Self {
        let geom = &stack.geom;
        let n = geom.nu * geom.nv;
        let gathers =
            geom.angles.iter().map(|&b| ViewGather::new(geom, grid, b)).collect();
        Self {
            gathers,
            proj: vec![0.0; n],
            lens: vec![0.0; n],
            resid: vec![0.0; n],
            num: vec![0.0; grid.len()],
            den: vec![0.0; grid.len()],
        }
    }
}

pub(crate) fn sart_sweep(
    mu: &mut VoxelVolume,
    stack: &ProjectionStack,
    ws: &mut SartWorkspace,
    lambda: f64,
    nonneg: bool,
) {
    let geom = &stack.geom;
    let n = geom.nu * geom.nv;
    for (view, &beta) in geom.angles.iter().enumerate() {
        forward_view_with_lengths(mu, geom, beta, &mut ws.proj, &mut ws.lens);
        let measured = &stack.data[view * n..(view + 1) * n];
        // Length-normalized residual per ray; zero-length rays are skipped.
        ws.resid
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, r)| {
                *r = if ws.lens[i] > 0.0 {
                    (measured[i] - ws.proj[i]) / ws.lens[i]
                } else {
                    0.0
                };
            });
        ws.num.iter_mut().for_each(|v| *v = 0.0);
        ws.den.iter_mut().for_each(|v| *v = 0.0);
        gather_view_rdm(&ws.gathers[view], &ws.resid, None, &mut ws.num, &mut ws.den);
        mu.data
            .par_iter_mut()
            .zip(ws.num.par_iter().zip(ws.den.par_iter()))
            .for_each(|(m, (&num, &den))| {
                if den > 0.0 {
                    *m += lambda * num / den;
                }
                if nonneg && *m < 0.0 {
                    *m = 0.0;
                }
            });
    }
}

/// Simultaneous algebraic reconstruction: per view, backproject the
/// ray-length-normalized residual with the ray-driven weights, normalize
/// per voxel by the view's total weight, relax by λ_t, and add.
pub fn sart_reconstruct(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
    cfg: &SartConfig,
    initial: Option<&VoxelVolume>,
) -> Result<VoxelVolume, ReconError> {
    cfg.validate()?;
    if stack.data.is_empty() {
        return Err(ReconError::EmptyStack);
    }
    if stack.domain != Domain::LineIntegral {
        return Err(ReconError::DomainMismatch { expected: "line_integral" });
    }
    let mut mu = match initial {
        Some(v) => {
            if v.geom != *grid {
                return Err(ReconError::GridMismatch);
            }
            v.clone()
        }
        None => VoxelVolume::zeros(*grid),
    };
    let mut ws = SartWorkspace::new(stack, grid);
    for t in 0..cfg.iterations {
        let lambda = cfg.lambda0 * cfg.decay.powi(t as i32);
        sart_sweep(&mut mu, stack, &mut ws, lambda, cfg.nonneg);
    }
    Ok(mu)
}

/// Log-length guard for rays with zero traversal, keeping the update's
/// denominator finite as specified for the degenerate case.
const MLEM_ZERO_PATH: f64 = 1e-12;

pub(crate) struct MlemWorkspace<'a> {
    pub gathers: Vec<ViewGather<'a>>,
    proj: Vec<f64>,
    diff: Vec<f64>,
    dweight: Vec<f64>,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl<'a> MlemWorkspace<'a> {
    pub fn new(stack: &'a ProjectionStack, grid: &VolumeGeometry) -> Self {
        let geom = &stack.geom;
        let total = geom.n_views() * geom.nu * geom.nv;
        let gathers =
            geom.angles.iter().map(|&b| ViewGather::new(geom, grid, b)).collect();
        Self {
            gathers,
            proj: vec![0.0; total],
            diff: vec![0.0; total],
            dweight: vec![0.0; total],
            num: vec![0.0; grid.len()],
            den: vec![0.0; grid.len()],
        }
    }
}

/// One MLEM iteration over all rays, updating `mu` in place.
pub(crate) fn mlem_iteration(
    mu: &mut VoxelVolume,
    stack: &ProjectionStack,
    ws: &mut MlemWorkspace,
    i0: f64,
    floor: f64,
) {
    let geom = &stack.geom;
    let n = geom.nu * geom.nv;
    for (view, &beta) in geom.angles.iter().enumerate() {
        forward_view_rdm(mu, geom, beta, &mut ws.proj[view * n..(view + 1) * n]);
    }
    // Per ray: predicted counts ŷ = i0·e^(−l), numerator term ŷ − O, and
    // denominator term l·ŷ (with the zero-path guard on l).
    ws.diff
        .par_iter_mut()
        .zip(ws.dweight.par_iter_mut())
        .zip(ws.proj.par_iter().zip(stack.data.par_iter()))
        .for_each(|((d, dw), (&l, &observed))| {
            let predicted = i0 * (-l).exp();
            *d = predicted - observed;
            let tau = if l == 0.0 { MLEM_ZERO_PATH } else { l };
            *dw = tau * predicted;
        });
    ws.num.iter_mut().for_each(|v| *v = 0.0);
    ws.den.iter_mut().for_each(|v| *v = 0.0);
    for view in 0..geom.n_views() {
        let r = view * n..(view + 1) * n;
        gather_view_rdm(
            &ws.gathers[view],
            &ws.diff[r.clone()],
            Some(&ws.dweight[r]),
            &mut ws.num,
            &mut ws.den,
        );
    }
    mu.data
        .par_iter_mut()
        .zip(ws.num.par_iter().zip(ws.den.par_iter()))
        .for_each(|(m, (&num, &den))| {
            if den != 0.0 {
                *m += *m * num / den;
            }
            if *m < floor {
                *m = floor;
            }
        });
}

/// Convex transmission MLEM: multiplicative update that ascends the Poisson
/// log-likelihood of the detected counts. The initial volume is uniform and
/// must be strictly positive (the update is multiplicative, so zeros stay
/// zero forever).
pub fn mlem_reconstruct(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
    cfg: &MlemConfig,
    initial_mu: f64,
) -> Result<VoxelVolume, ReconError> {
    cfg.validate()?;
    if stack.data.is_empty() {
        return Err(ReconError::EmptyStack);
    }
    if stack.domain != Domain::Intensity {
        return Err(ReconError::DomainMismatch { expected: "intensity" });
    }
    if !(initial_mu > 0.0) || !initial_mu.is_finite() {
        return Err(ReconError::NonPositiveInitial(initial_mu));
    }
    let mut mu = VoxelVolume::filled(*grid, initial_mu);
    let mut ws = MlemWorkspace::new(stack, grid);
    for _ in 0..cfg.iterations {
        mlem_iteration(&mut mu, stack, &mut ws, cfg.i0, cfg.floor);
    }
    Ok(mu)
}
