//! Forward and backprojection operators.
//!
//! Two system models coexist on purpose:
//!
//! * **RDM** (ray-driven): each detector ray is traced through the voxel
//!   grid (Siddon-style parametric traversal) and the exact intersection
//!   length with every voxel becomes a system-matrix weight `w_ij`. SART
//!   and MLEM use this matched pair of forward projection and its adjoint.
//! * **PDM** (pixel-driven): each voxel center is projected onto the
//!   detector and the projection value is bilinearly interpolated there.
//!   BP and FBP backproject with this model.
//!
//! Parallel loops always partition *output* elements (pixels for forward,
//! voxels for backprojection) and keep a fixed summation order within each
//! element, so every operator here is bitwise reproducible at any worker
//! count. The RDM adjoint is therefore written as a gather: for a voxel,
//! enumerate the rays whose segment can cross its box (via the projected
//! corner bounds) and recompute each intersection length by clipping the
//! segment against the box, which reproduces the traversal weights to
//! roundoff.

use crate::geometry::{
    detector_point, project_to_detector, source_position, CArmGeometry, DetectorCoord, Point3,
};
use crate::stack::{Domain, ProjectionStack};
use crate::volume::{VolumeGeometry, VoxelVolume};
use rayon::prelude::*;
use thiserror::Error;

/// Crossings closer than this fraction of the segment length merge into one
/// boundary, preventing zero-length duplicate entries at voxel corners.
const MERGE_REL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectorError {
    #[error("operation requires an intensity stack with i0 present")]
    NotIntensity,
}

/// One system-matrix row: sparse (voxel index, intersection length in mm).
#[derive(Debug, Clone, PartialEq)]
pub struct RayWeights {
    pub entries: Vec<(usize, f64)>,
}

impl RayWeights {
    /// Total intersection length, equal to the ray's chord through the grid
    /// bounding box.
    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }
}

/// Clip segment `src + t·(dst − src)`, t ∈ [0, 1], against an axis-aligned
/// box. Returns the overlapping parameter interval, empty when it misses.
#[inline]
fn clip_segment_to_box(src: Point3, d: Point3, lo: Point3, hi: Point3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, dd, l, h) in [
        (src.x, d.x, lo.x, hi.x),
        (src.y, d.y, lo.y, hi.y),
        (src.z, d.z, lo.z, hi.z),
    ] {
        if dd == 0.0 {
            if p < l || p > h {
                return None;
            }
        } else {
            let inv = 1.0 / dd;
            let (ta, tb) = ((l - p) * inv, (h - p) * inv);
            let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t1 <= t0 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Walk the segment `src → dst` through the grid and emit
/// `(flat voxel index, intersection length mm)` per traversed voxel, in
/// traversal order. Weights are positive and sum to the box chord length.
pub(crate) fn trace_ray(
    grid: &VolumeGeometry,
    src: Point3,
    dst: Point3,
    mut emit: impl FnMut(usize, f64),
) {
    let d = dst.sub(src);
    let len = d.norm();
    if len == 0.0 {
        return;
    }
    let lo = grid.box_min();
    let hi = grid.box_max();
    let Some((t_in, t_out)) = clip_segment_to_box(src, d, lo, hi) else {
        return;
    };
    let eps_t = MERGE_REL; // in segment-parameter units; eps_t·len ≈ 1e-12·SID mm

    // Per-axis plane crossings form arithmetic sequences
    // t(k) = t_base + k·dt with k the plane index; multiplication (not
    // accumulation) keeps them drift-free.
    struct Axis {
        t_base: f64,
        dt: f64,
        k: i64,
        step: i64,
        k_max: i64,
        t_next: f64,
    }
    impl Axis {
        fn advance(&mut self) {
            self.k += self.step;
            self.t_next = if self.k < 0 || self.k > self.k_max {
                f64::INFINITY
            } else {
                self.t_base + self.k as f64 * self.dt
            };
        }
    }
    let spacing = grid.spacing;
    let inv_s = 1.0 / spacing;
    let mk_axis = |p: f64, dd: f64, lo_ax: f64, n: usize| -> Axis {
        if dd == 0.0 {
            return Axis { t_base: 0.0, dt: 0.0, k: 0, step: 1, k_max: -1, t_next: f64::INFINITY };
        }
        let inv_d = 1.0 / dd;
        let t_base = (lo_ax - p) * inv_d;
        let dt = spacing * inv_d;
        // Position at entry, in plane-index units.
        let kf = (p + t_in * dd - lo_ax) * inv_s;
        let (k, step) = if dd > 0.0 {
            (kf.floor() as i64 + 1, 1i64)
        } else {
            (kf.ceil() as i64 - 1, -1i64)
        };
        let k_max = n as i64;
        let t_next = if (0..=k_max).contains(&k) {
            t_base + k as f64 * dt
        } else {
            f64::INFINITY
        };
        let mut ax = Axis { t_base, dt, k, step, k_max, t_next };
        // Merge any crossing that coincides with the entry point.
        while ax.t_next <= t_in + eps_t {
            ax.advance();
        }
        ax
    };
    let mut axes = [
        mk_axis(src.x, d.x, lo.x, grid.nx),
        mk_axis(src.y, d.y, lo.y, grid.ny),
        mk_axis(src.z, d.z, lo.z, grid.nz),
    ];

    let (nx, ny, nz) = (grid.nx as i64, grid.ny as i64, grid.nz as i64);
    let mut t_cur = t_in;
    while t_cur < t_out - eps_t {
        let mut tm = t_out;
        for ax in &axes {
            if ax.t_next < tm {
                tm = ax.t_next;
            }
        }
        // Merge all crossings within eps of the interval end.
        for ax in &mut axes {
            while ax.t_next <= tm + eps_t {
                ax.advance();
            }
        }
        let tm = tm.min(t_out);
        let t_mid = 0.5 * (t_cur + tm);
        let ix = (((src.x + t_mid * d.x - lo.x) * inv_s).floor() as i64).clamp(0, nx - 1);
        let iy = (((src.y + t_mid * d.y - lo.y) * inv_s).floor() as i64).clamp(0, ny - 1);
        let iz = (((src.z + t_mid * d.z - lo.z) * inv_s).floor() as i64).clamp(0, nz - 1);
        let w = (tm - t_cur) * len;
        if w > 0.0 {
            emit(grid.index(ix as usize, iy as usize, iz as usize), w);
        }
        t_cur = tm;
    }
}

/// System-matrix row for the ray from the view's source through the center
/// of detector pixel (iu, iv). Empty when the ray misses the grid.
pub fn siddon_weights(
    geom: &CArmGeometry,
    beta_deg: f64,
    iu: usize,
    iv: usize,
    grid: &VolumeGeometry,
) -> RayWeights {
    let src = source_position(geom, beta_deg);
    let uv = DetectorCoord::new(geom.pixel_u(iu), geom.pixel_v(iv));
    let dst = detector_point(geom, uv, beta_deg);
    let mut entries = Vec::new();
    trace_ray(grid, src, dst, |j, w| entries.push((j, w)));
    RayWeights { entries }
}

/// RDM forward projection of one view into a preallocated pixel buffer
/// (nv rows of nu), one ray per pixel center.
pub(crate) fn forward_view_rdm(
    vol: &VoxelVolume,
    geom: &CArmGeometry,
    beta_deg: f64,
    out: &mut [f64],
) {
    let src = source_position(geom, beta_deg);
    let nu = geom.nu;
    out.par_chunks_mut(nu).enumerate().for_each(|(iv, row)| {
        let v = geom.pixel_v(iv);
        for (iu, px) in row.iter_mut().enumerate() {
            let dst = detector_point(geom, DetectorCoord::new(geom.pixel_u(iu), v), beta_deg);
            let mut acc = 0.0;
            trace_ray(&vol.geom, src, dst, |j, w| acc += w * vol.data[j]);
            *px = acc;
        }
    });
}

/// RDM forward projection of one view together with the per-ray total
/// intersection length Σ_j w_ij, from a single traversal per ray.
pub(crate) fn forward_view_with_lengths(
    vol: &VoxelVolume,
    geom: &CArmGeometry,
    beta_deg: f64,
    out_proj: &mut [f64],
    out_len: &mut [f64],
) {
    let src = source_position(geom, beta_deg);
    let nu = geom.nu;
    out_proj
        .par_chunks_mut(nu)
        .zip(out_len.par_chunks_mut(nu))
        .enumerate()
        .for_each(|(iv, (prow, lrow))| {
            let v = geom.pixel_v(iv);
            for iu in 0..nu {
                let dst = detector_point(geom, DetectorCoord::new(geom.pixel_u(iu), v), beta_deg);
                let mut acc = 0.0;
                let mut len = 0.0;
                trace_ray(&vol.geom, src, dst, |j, w| {
                    acc += w * vol.data[j];
                    len += w;
                });
                prow[iu] = acc;
                lrow[iu] = len;
            }
        });
}

/// RDM forward projection of all views: per pixel, Σ_j w_ij·μ_j.
pub fn forward_project_rdm(vol: &VoxelVolume, geom: &CArmGeometry) -> ProjectionStack {
    let mut stack = ProjectionStack::zeros(geom.clone(), Domain::LineIntegral, None)
        .expect("zero stack construction cannot fail");
    let n = geom.nu * geom.nv;
    for (view, beta) in geom.angles.clone().iter().enumerate() {
        forward_view_rdm(vol, geom, *beta, &mut stack.data[view * n..(view + 1) * n]);
    }
    stack
}

/// Per-view gather machinery for the RDM adjoint: precomputed rotation of
/// one view, used to enumerate candidate rays per voxel.
pub(crate) struct ViewGather<'a> {
    geom: &'a CArmGeometry,
    grid: VolumeGeometry,
    src: Point3,
    dst_cache: Vec<Point3>,
    sin_b: f64,
    cos_b: f64,
    /// Rotated in-plane corner offsets of a voxel box (4 xy-corner pairs).
    corner_x: [f64; 4],
    corner_y: [f64; 4],
}

impl<'a> ViewGather<'a> {
    pub fn new(geom: &'a CArmGeometry, grid: &VolumeGeometry, beta_deg: f64) -> Self {
        let b = beta_deg.to_radians();
        let (sin_b, cos_b) = (b.sin(), b.cos());
        let h = grid.spacing / 2.0;
        let mut corner_x = [0.0; 4];
        let mut corner_y = [0.0; 4];
        for (k, (sx, sy)) in [(-h, -h), (-h, h), (h, -h), (h, h)].into_iter().enumerate() {
            corner_x[k] = sx * cos_b - sy * sin_b;
            corner_y[k] = sx * sin_b + sy * cos_b;
        }
        // Detector pixel positions are shared by every voxel of the view.
        let mut dst_cache = Vec::with_capacity(geom.nu * geom.nv);
        for iv in 0..geom.nv {
            let v = geom.pixel_v(iv);
            for iu in 0..geom.nu {
                dst_cache.push(detector_point(
                    geom,
                    DetectorCoord::new(geom.pixel_u(iu), v),
                    beta_deg,
                ));
            }
        }
        Self {
            geom,
            grid: *grid,
            src: source_position(geom, beta_deg),
            dst_cache,
            sin_b,
            cos_b,
            corner_x,
            corner_y,
        }
    }

    /// Visit every ray of this view whose weight on voxel (ix, iy, iz) is
    /// positive, as `(ray index within view, w_ij)`. Ray order is fixed
    /// (v-major, then u), keeping accumulation deterministic.
    #[inline]
    pub fn for_each_ray(&self, ix: usize, iy: usize, iz: usize, mut f: impl FnMut(usize, f64)) {
        let geom = self.geom;
        let grid = &self.grid;
        let c = grid.voxel_center(ix, iy, iz);
        let h = grid.spacing / 2.0;
        // Rotate the voxel center into the view frame (source at (d,0,0)).
        let xc = self.cos_b * c.x - self.sin_b * c.y;
        let yc = self.sin_b * c.x + self.cos_b * c.y;
        let d2 = 2.0 * geom.d;
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        for k in 0..4 {
            let x = xc + self.corner_x[k];
            let y = yc + self.corner_y[k];
            let denom = geom.d - x;
            if denom <= 1e-9 * geom.d {
                // Box reaches the source plane; no detector footprint.
                return;
            }
            let t = d2 / denom;
            let u = t * y;
            u_min = u_min.min(u);
            u_max = u_max.max(u);
            v_min = v_min.min(t * (c.z - h)).min(t * (c.z + h));
            v_max = v_max.max(t * (c.z - h)).max(t * (c.z + h));
        }
        // Pixel index bounds of the footprint, with a roundoff guard.
        let margin = 1e-9;
        let cu = (geom.nu as f64 - 1.0) / 2.0;
        let cv = (geom.nv as f64 - 1.0) / 2.0;
        let iu0 = (((u_min - margin) / geom.pitch + cu).ceil().max(0.0)) as usize;
        let iu1 = ((u_max + margin) / geom.pitch + cu).floor();
        let iv0 = (((v_min - margin) / geom.pitch + cv).ceil().max(0.0)) as usize;
        let iv1 = ((v_max + margin) / geom.pitch + cv).floor();
        if iu1 < 0.0 || iv1 < 0.0 {
            return;
        }
        let iu1 = (iu1 as usize).min(geom.nu - 1);
        let iv1 = (iv1 as usize).min(geom.nv - 1);

        let lo = Point3::new(
            grid.box_min().x + ix as f64 * grid.spacing,
            grid.box_min().y + iy as f64 * grid.spacing,
            grid.box_min().z + iz as f64 * grid.spacing,
        );
        let hi = Point3::new(lo.x + grid.spacing, lo.y + grid.spacing, lo.z + grid.spacing);
        for iv in iv0..=iv1 {
            for iu in iu0..=iu1 {
                let ray = iv * geom.nu + iu;
                let dst = self.dst_cache[ray];
                let d = dst.sub(self.src);
                if let Some((t0, t1)) = clip_segment_to_box(self.src, d, lo, hi) {
                    let w = (t1 - t0) * d.norm();
                    if w > MERGE_REL * d.norm() {
                        f(ray, w);
                    }
                }
            }
        }
    }
}

/// RDM adjoint of one view, accumulated into per-voxel buffers:
/// `acc_a[j] += Σ_i w_ij·a_i` and, when `b` is given,
/// `acc_b[j] += Σ_i w_ij·b_i`; with `b = None`, `acc_b[j] += Σ_i w_ij`.
pub(crate) fn gather_view_rdm(
    gather: &ViewGather,
    a: &[f64],
    b: Option<&[f64]>,
    acc_a: &mut [f64],
    acc_b: &mut [f64],
) {
    let grid = gather.grid;
    let (ny, nz) = (grid.ny, grid.nz);
    acc_a
        .par_chunks_mut(nz)
        .zip(acc_b.par_chunks_mut(nz))
        .enumerate()
        .for_each(|(row_idx, (row_a, row_b))| {
            let ix = row_idx / ny;
            let iy = row_idx % ny;
            for iz in 0..nz {
                let mut sa = 0.0;
                let mut sb = 0.0;
                gather.for_each_ray(ix, iy, iz, |ray, w| {
                    sa += w * a[ray];
                    sb += w * b.map_or(1.0, |b| b[ray]);
                });
                row_a[iz] += sa;
                row_b[iz] += sb;
            }
        });
}

/// RDM backprojection (the adjoint Wᵀ of [`forward_project_rdm`]): per
/// voxel, Σ_i w_ij·y_i over all rays of all views.
pub fn backproject_rdm(stack: &ProjectionStack, grid: &VolumeGeometry) -> VoxelVolume {
    let mut out = VoxelVolume::zeros(*grid);
    let mut scratch = vec![0.0; grid.len()];
    let n = stack.geom.nu * stack.geom.nv;
    for (view, beta) in stack.geom.angles.clone().iter().enumerate() {
        let gather = ViewGather::new(&stack.geom, grid, *beta);
        let a = &stack.data[view * n..(view + 1) * n];
        gather_view_rdm(&gather, a, Some(a), &mut out.data, &mut scratch);
    }
    out
}

/// PDM backprojection of the selected views, plus the per-voxel count of
/// views whose projection landed inside the detector.
pub fn backproject_pdm_counted(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
    views: &[usize],
) -> (VoxelVolume, Vec<u32>) {
    let geom = &stack.geom;
    let (nu, nv) = (geom.nu, geom.nv);
    let (ny, nz) = (grid.ny, grid.nz);
    let mut out = VoxelVolume::zeros(*grid);
    let mut counts = vec![0u32; grid.len()];
    let n = nu * nv;
    out.data
        .par_chunks_mut(nz)
        .zip(counts.par_chunks_mut(nz))
        .enumerate()
        .for_each(|(row_idx, (row, crow))| {
            let ix = row_idx / ny;
            let iy = row_idx % ny;
            for iz in 0..nz {
                let p = grid.voxel_center(ix, iy, iz);
                let mut acc = 0.0;
                let mut cnt = 0u32;
                for &view in views {
                    let beta = geom.angles[view];
                    let Ok(uv) = project_to_detector(geom, p, beta) else {
                        continue;
                    };
                    let (fu, fv) = geom.detector_index(uv);
                    if !(0.0..=(nu - 1) as f64).contains(&fu)
                        || !(0.0..=(nv - 1) as f64).contains(&fv)
                    {
                        continue;
                    }
                    let iu0 = (fu.floor() as usize).min(nu - 2);
                    let iv0 = (fv.floor() as usize).min(nv - 2);
                    let du = fu - iu0 as f64;
                    let dv = fv - iv0 as f64;
                    let base = view * n + iv0 * nu + iu0;
                    let p00 = stack.data[base];
                    let p01 = stack.data[base + 1];
                    let p10 = stack.data[base + nu];
                    let p11 = stack.data[base + nu + 1];
                    acc += (1.0 - dv) * ((1.0 - du) * p00 + du * p01)
                        + dv * ((1.0 - du) * p10 + du * p11);
                    cnt += 1;
                }
                row[iz] = acc;
                crow[iz] = cnt;
            }
        });
    (out, counts)
}

/// PDM backprojection summed over the selected views (not yet averaged).
pub fn backproject_pdm(
    stack: &ProjectionStack,
    grid: &VolumeGeometry,
    views: &[usize],
) -> VoxelVolume {
    backproject_pdm_counted(stack, grid, views).0
}

/// Flat-field log normalization: `A = ln(i0 / max(I, 1))`, clamped to ≥ 0.
/// The one-photon clamp keeps zero-count pixels finite; noise can push I
/// above i0, which would give a negative integral, hence the lower clamp.
pub fn log_normalize(stack: &ProjectionStack) -> Result<ProjectionStack, ProjectorError> {
    let (Domain::Intensity, Some(i0)) = (stack.domain, stack.i0) else {
        return Err(ProjectorError::NotIntensity);
    };
    let mut data = vec![0.0; stack.data.len()];
    data.par_iter_mut().zip(stack.data.par_iter()).for_each(|(a, &i)| {
        *a = (i0 / i.max(1.0)).ln().max(0.0);
    });
    Ok(ProjectionStack::from_data(stack.geom.clone(), Domain::LineIntegral, None, data)
        .expect("dimensions preserved"))
}
