//! Partial-circle C-arm acquisition geometry.
//!
//! The world frame has its origin at the rotation center. The x-ray source
//! and the flat detector sit on opposite ends of the C-arm and rotate
//! together about the z axis; the source-to-image distance stays fixed at
//! `2d` for every view. View angles are handled in degrees throughout and
//! converted to radians only inside the trig calls.
//!
//! At `β = 0°` the source is at `(d, 0, 0)` and the detector is the plane
//! `x = −d`, with the detector `u` axis along `+y` and `v` along `+z`.
//! Every other view is that picture rotated about z.

use thiserror::Error;

/// A point (or free vector) in world coordinates, millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ORIGIN: Self = Self::new(0.0, 0.0, 0.0);

    pub fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }

    pub fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Self) -> Self {
        Self::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Location on the detector plane, millimetres. `u = v = 0` is the detector
/// center; `u` runs perpendicular to the rotation axis, `v` parallel to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorCoord {
    pub u: f64,
    pub v: f64,
}

impl DetectorCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("orbit half-SID must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("view angles must be finite, strictly increasing, and span at most 180°")]
    InvalidAngles,
    #[error("detector needs at least 2x2 pixels, got {nu}x{nv}")]
    InvalidDetector { nu: usize, nv: usize },
    #[error("detector pitch must be positive, got {0}")]
    InvalidPitch(f64),
    #[error("angular span must be in (0, 180], got {0}")]
    InvalidSpan(f64),
    #[error("ray through the requested point is degenerate (at the source or parallel to the detector)")]
    DegenerateRay,
}

/// Acquisition geometry of one partial-circle scan: orbit half-SID `d`,
/// the ordered view angles, and the detector grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CArmGeometry {
    /// Half source-to-image distance (orbit radius), mm. SID is `2 * d`.
    pub d: f64,
    /// View angles β in degrees, strictly increasing.
    pub angles: Vec<f64>,
    /// Detector columns (u direction).
    pub nu: usize,
    /// Detector rows (v direction).
    pub nv: usize,
    /// Detector pixel size, mm.
    pub pitch: f64,
}

impl CArmGeometry {
    pub fn new(
        d: f64,
        angles: Vec<f64>,
        nu: usize,
        nv: usize,
        pitch: f64,
    ) -> Result<Self, GeometryError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(GeometryError::InvalidRadius(d));
        }
        if angles.is_empty()
            || angles.iter().any(|a| !a.is_finite())
            || angles.windows(2).any(|w| w[1] <= w[0])
            || angles.last().unwrap() - angles.first().unwrap() > 180.0
        {
            return Err(GeometryError::InvalidAngles);
        }
        if nu < 2 || nv < 2 {
            return Err(GeometryError::InvalidDetector { nu, nv });
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(GeometryError::InvalidPitch(pitch));
        }
        Ok(Self { d, angles, nu, nv, pitch })
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Source-to-image distance, always `2 * d`.
    pub fn sid(&self) -> f64 {
        2.0 * self.d
    }

    /// Physical u coordinate of the center of detector column `iu`.
    pub fn pixel_u(&self, iu: usize) -> f64 {
        (iu as f64 - (self.nu as f64 - 1.0) / 2.0) * self.pitch
    }

    /// Physical v coordinate of the center of detector row `iv`.
    pub fn pixel_v(&self, iv: usize) -> f64 {
        (iv as f64 - (self.nv as f64 - 1.0) / 2.0) * self.pitch
    }

    /// Continuous (column, row) indices for a detector coordinate.
    pub fn detector_index(&self, uv: DetectorCoord) -> (f64, f64) {
        (
            uv.u / self.pitch + (self.nu as f64 - 1.0) / 2.0,
            uv.v / self.pitch + (self.nv as f64 - 1.0) / 2.0,
        )
    }
}

/// Source position at view angle `beta_deg`: `(d cos β, −d sin β, 0)`.
pub fn source_position(geom: &CArmGeometry, beta_deg: f64) -> Point3 {
    let b = beta_deg.to_radians();
    Point3::new(geom.d * b.cos(), -geom.d * b.sin(), 0.0)
}

/// World position of detector location `(u, v)` at view angle `beta_deg`:
/// `(−r cos(β+α), r sin(β+α), v)` with `r = sqrt(u² + d²)`, `α = atan(u/d)`.
pub fn detector_point(geom: &CArmGeometry, uv: DetectorCoord, beta_deg: f64) -> Point3 {
    let b = beta_deg.to_radians();
    let r = (uv.u * uv.u + geom.d * geom.d).sqrt();
    let alpha = (uv.u / geom.d).atan();
    Point3::new(-r * (b + alpha).cos(), r * (b + alpha).sin(), uv.v)
}

/// Relative threshold below which the ray-plane intersection is treated as
/// degenerate (point at the source or ray parallel to the detector).
const DEGENERATE_EPS: f64 = 1e-12;

/// Project a world point onto the detector of view `beta_deg` along the ray
/// from the source through the point.
///
/// Inverse of [`detector_point`]: the source, `p`, and the returned detector
/// location are collinear. Fails with `DegenerateRay` when `p` lies in the
/// source plane (the ray never reaches the detector).
pub fn project_to_detector(
    geom: &CArmGeometry,
    p: Point3,
    beta_deg: f64,
) -> Result<DetectorCoord, GeometryError> {
    let b = beta_deg.to_radians();
    let (sin_b, cos_b) = (b.sin(), b.cos());
    // Rotate the world by +β about z: the source lands on (d, 0, 0) and the
    // detector becomes the plane x = −d.
    let xr = cos_b * p.x - sin_b * p.y;
    let yr = sin_b * p.x + cos_b * p.y;
    let denom = geom.d - xr;
    if denom.abs() <= DEGENERATE_EPS * geom.d {
        return Err(GeometryError::DegenerateRay);
    }
    let t = 2.0 * geom.d / denom;
    Ok(DetectorCoord::new(t * yr, t * p.z))
}

/// Evenly spaced view angles centered on 0°, inclusive endpoints:
/// `β_k = −span/2 + k · span/(n−1)`. A single view sits at 0°.
pub fn view_angles(n_views: usize, span_deg: f64) -> Result<Vec<f64>, GeometryError> {
    if !(span_deg > 0.0) || span_deg > 180.0 {
        return Err(GeometryError::InvalidSpan(span_deg));
    }
    if n_views == 0 {
        return Err(GeometryError::InvalidAngles);
    }
    if n_views == 1 {
        return Ok(vec![0.0]);
    }
    let step = span_deg / (n_views as f64 - 1.0);
    Ok((0..n_views).map(|k| -span_deg / 2.0 + k as f64 * step).collect())
}
