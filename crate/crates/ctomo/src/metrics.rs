//! Image-quality figures of merit computed on reconstructed volumes:
//! line profiles, FWHM, MTF, and the artifact spread function (ASF).
//!
//! Profiles run along y (the detector u direction at the central view),
//! which is where the ramp filter acts and where edge enhancement and
//! undershoot show up. Depth planes are fixed-x slices; ASF offsets are
//! signed distances along x from the focus plane.

use crate::volume::{VolumeGeometry, VoxelVolume};
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),
    #[error("profile too short: need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("profile has no peak above background")]
    NoPeak,
    #[error("profile carries no net signal above background")]
    ZeroSignal,
    #[error("focus-plane contrast is below 1e-12")]
    DegenerateContrast,
}

/// A 1D slice of voxel values at uniform spacing. `center_index` marks the
/// sample aligned with the object center and anchors position axes:
/// position(i) = (i − center_index)·spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile1D {
    pub values: Vec<f64>,
    pub spacing: f64,
    pub center_index: usize,
}

impl Profile1D {
    pub fn new(
        values: Vec<f64>,
        spacing: f64,
        center_index: usize,
    ) -> Result<Self, MetricsError> {
        if values.len() < 3 {
            return Err(MetricsError::TooShort { min: 3, got: values.len() });
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(MetricsError::InvalidSpacing(spacing));
        }
        if center_index >= values.len() {
            return Err(MetricsError::OutOfBounds(format!(
                "center_index {center_index} in a profile of {} samples",
                values.len()
            )));
        }
        Ok(Self { values, spacing, center_index })
    }

    /// Signed position of sample `i` in mm relative to the center sample.
    pub fn position(&self, i: usize) -> f64 {
        (i as f64 - self.center_index as f64) * self.spacing
    }
}

/// Normalized magnitude spectrum; `values[0]` is 1 by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MtfCurve {
    /// Spatial frequency per bin, mm⁻¹.
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
}

/// Artifact spread: per depth plane, feature contrast relative to the
/// focus plane. `values` at offset 0 is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AsfCurve {
    /// Signed plane offsets from the focus plane, mm.
    pub plane_offsets: Vec<f64>,
    pub values: Vec<f64>,
}

/// Square region on a fixed-x plane: (2·half+1)² voxels around (iy, iz).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub iy: usize,
    pub iz: usize,
    pub half: usize,
}

impl Roi {
    pub fn new(iy: usize, iz: usize, half: usize) -> Self {
        Self { iy, iz, half }
    }

    /// ROI centered on the voxel nearest the physical point (y, z) in mm.
    pub fn at_mm(grid: &VolumeGeometry, y_mm: f64, z_mm: f64, half: usize) -> Self {
        let pick = |coord: f64, origin: f64, n: usize| -> usize {
            let i = ((coord - origin) / grid.spacing).round();
            i.clamp(0.0, (n - 1) as f64) as usize
        };
        Self {
            iy: pick(y_mm, grid.origin.y, grid.ny),
            iz: pick(z_mm, grid.origin.z, grid.nz),
            half,
        }
    }

    fn check(&self, grid: &VolumeGeometry, what: &str) -> Result<(), MetricsError> {
        if self.iy < self.half
            || self.iy + self.half >= grid.ny
            || self.iz < self.half
            || self.iz + self.half >= grid.nz
        {
            return Err(MetricsError::OutOfBounds(format!(
                "{what} ROI ({}, {}) half {} exceeds a {}x{} plane",
                self.iy, self.iz, self.half, grid.ny, grid.nz
            )));
        }
        Ok(())
    }

    fn mean(&self, vol: &VoxelVolume, ix: usize) -> f64 {
        let mut sum = 0.0;
        for iy in self.iy - self.half..=self.iy + self.half {
            for iz in self.iz - self.half..=self.iz + self.half {
                sum += vol.get(ix, iy, iz);
            }
        }
        let side = 2 * self.half + 1;
        sum / (side * side) as f64
    }
}

/// Copy the row of voxels along y at fixed depth slice `ix` and height
/// `iz`, without resampling. The center index is the sample nearest the
/// grid's y = 0 plane, where the bundled scenarios place the object.
pub fn line_profile(
    vol: &VoxelVolume,
    ix: usize,
    iz: usize,
) -> Result<Profile1D, MetricsError> {
    let g = &vol.geom;
    if ix >= g.nx || iz >= g.nz {
        return Err(MetricsError::OutOfBounds(format!(
            "slice ({ix}, {iz}) in a {}x{}x{} volume",
            g.nx, g.ny, g.nz
        )));
    }
    let values: Vec<f64> = (0..g.ny).map(|iy| vol.get(ix, iy, iz)).collect();
    let center = (-g.origin.y / g.spacing).round().clamp(0.0, (g.ny - 1) as f64) as usize;
    Profile1D::new(values, g.spacing, center)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Background level: median of the outer 20% of samples (10% per edge,
/// at least one sample each). Robust to filter over/undershoot lobes.
fn background(values: &[f64]) -> f64 {
    let n = values.len();
    let k = (n.div_ceil(10)).max(1);
    if 2 * k >= n {
        let mut all = values.to_vec();
        return median(&mut all);
    }
    let mut outer: Vec<f64> = values[..k].to_vec();
    outer.extend_from_slice(&values[n - k..]);
    median(&mut outer)
}

/// Walking outward from `peak`, locate the sub-sample position where the
/// profile crosses `level`, or the boundary sample if it never does.
fn half_crossing(values: &[f64], peak: usize, level: f64, right: bool) -> f64 {
    if right {
        for i in peak + 1..values.len() {
            if values[i] < level {
                let frac = (values[i - 1] - level) / (values[i - 1] - values[i]);
                return (i - 1) as f64 + frac;
            }
        }
        (values.len() - 1) as f64
    } else {
        for i in (0..peak).rev() {
            if values[i] < level {
                let frac = (level - values[i]) / (values[i + 1] - values[i]);
                return i as f64 + frac;
            }
        }
        0.0
    }
}

/// Half-maximum support of the main lobe: sub-sample positions (mm,
/// relative to the center sample) where the profile crosses background +
/// (max − background)/2, walking outward from the peak. The interval
/// midpoint locates the lobe robustly even when edge enhancement puts the
/// raw argmax on an overshoot bump. If the profile never falls below the
/// half level before an edge, that side clips at the edge.
pub fn fwhm_interval(p: &Profile1D) -> Result<(f64, f64), MetricsError> {
    let bg = background(&p.values);
    let (peak, &max) = p
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("profile is non-empty");
    if max <= bg {
        return Err(MetricsError::NoPeak);
    }
    let level = bg + 0.5 * (max - bg);
    let left = half_crossing(&p.values, peak, level, false);
    let right = half_crossing(&p.values, peak, level, true);
    let c = p.center_index as f64;
    Ok(((left - c) * p.spacing, (right - c) * p.spacing))
}

/// Full width at half maximum in mm; see [`fwhm_interval`].
pub fn fwhm(p: &Profile1D) -> Result<f64, MetricsError> {
    let (left, right) = fwhm_interval(p)?;
    Ok(right - left)
}

/// Modulation transfer: subtract the background, zero-pad to 4× length,
/// FFT, take magnitudes up to Nyquist, and normalize the DC bin to 1.
/// Frequencies are k/(4·len·spacing) in mm⁻¹.
pub fn mtf(p: &Profile1D) -> Result<MtfCurve, MetricsError> {
    let n = p.values.len();
    if n < 8 {
        return Err(MetricsError::TooShort { min: 8, got: n });
    }
    let bg = background(&p.values);
    let padded = 4 * n;
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for (b, &v) in buf.iter_mut().zip(&p.values) {
        *b = Complex::new(v - bg, 0.0);
    }
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let dc = buf[0].norm();
    if dc == 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    let half = padded / 2;
    let df = 1.0 / (padded as f64 * p.spacing);
    let frequencies = (0..=half).map(|k| k as f64 * df).collect();
    let values = buf[..=half].iter().map(|c| c.norm() / dc).collect();
    Ok(MtfCurve { frequencies, values })
}

/// Sub-bin location (mm⁻¹) of the spectrum's first null: the first
/// interior local minimum, refined by treating the magnitude around it as
/// |linear through zero| and interpolating on the side the sign flip
/// falls. None when the curve has no interior minimum.
pub fn mtf_first_zero(curve: &MtfCurve) -> Option<f64> {
    let m = &curve.values;
    if m.len() < 3 || curve.frequencies.len() != m.len() {
        return None;
    }
    let df = curve.frequencies[1] - curve.frequencies[0];
    for k in 1..m.len() - 1 {
        if m[k] <= m[k - 1] && m[k] <= m[k + 1] {
            let z = if m[k - 1] <= m[k + 1] {
                let den = m[k - 1] + m[k];
                if den == 0.0 { k as f64 } else { (k - 1) as f64 + m[k - 1] / den }
            } else {
                let den = m[k] + m[k + 1];
                if den == 0.0 { k as f64 } else { k as f64 + m[k] / den }
            };
            return Some(z * df);
        }
    }
    None
}

/// Artifact spread function over all depth planes: contrast between the
/// feature and background ROIs per plane, normalized by the focus-plane
/// contrast. Offsets are (ix − focus)·spacing in mm.
pub fn asf(
    vol: &VoxelVolume,
    focus_ix: usize,
    feature: Roi,
    bg: Roi,
) -> Result<AsfCurve, MetricsError> {
    let g = &vol.geom;
    if focus_ix >= g.nx {
        return Err(MetricsError::OutOfBounds(format!(
            "focus plane {focus_ix} in {} depth planes",
            g.nx
        )));
    }
    feature.check(g, "feature")?;
    bg.check(g, "background")?;
    let contrast: Vec<f64> =
        (0..g.nx).map(|ix| feature.mean(vol, ix) - bg.mean(vol, ix)).collect();
    let focus_contrast = contrast[focus_ix];
    if focus_contrast.abs() < 1e-12 {
        return Err(MetricsError::DegenerateContrast);
    }
    let plane_offsets = (0..g.nx)
        .map(|ix| (ix as f64 - focus_ix as f64) * g.spacing)
        .collect();
    let values = contrast.iter().map(|c| c / focus_contrast).collect();
    Ok(AsfCurve { plane_offsets, values })
}
