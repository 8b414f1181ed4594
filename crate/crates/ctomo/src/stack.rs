//! Projection image stacks.
//!
//! A stack holds one detector image per view, tagged with the domain of its
//! values: raw photon intensities, or line integrals of attenuation
//! (dimensionless, `ln(incident / detected)`). Layout is view-major, then
//! row-major within a view (`nv` rows of `nu` values).

use crate::geometry::CArmGeometry;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StackError {
    #[error("data length {got} does not match geometry ({expected})")]
    DataLength { got: usize, expected: usize },
    #[error("intensity stacks require i0 > 0, got {0:?}")]
    InvalidI0(Option<f64>),
}

/// What the pixel values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Detected photon counts (Beer-Lambert attenuated, possibly noisy).
    Intensity,
    /// Log-normalized line integrals of attenuation, ≥ 0.
    LineIntegral,
}

/// N detector images with their acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub geom: CArmGeometry,
    pub domain: Domain,
    /// Incident photon count per pixel. Present iff domain is intensity.
    pub i0: Option<f64>,
    /// view-major, then v rows of u columns.
    pub data: Vec<f64>,
}

impl ProjectionStack {
    pub fn zeros(geom: CArmGeometry, domain: Domain, i0: Option<f64>) -> Result<Self, StackError> {
        let n = geom.n_views() * geom.nu * geom.nv;
        Self::from_data(geom, domain, i0, vec![0.0; n])
    }

    pub fn from_data(
        geom: CArmGeometry,
        domain: Domain,
        i0: Option<f64>,
        data: Vec<f64>,
    ) -> Result<Self, StackError> {
        let expected = geom.n_views() * geom.nu * geom.nv;
        if data.len() != expected {
            return Err(StackError::DataLength { got: data.len(), expected });
        }
        match (domain, i0) {
            (Domain::Intensity, Some(v)) if v > 0.0 && v.is_finite() => {}
            (Domain::Intensity, other) => return Err(StackError::InvalidI0(other)),
            (Domain::LineIntegral, _) => {}
        }
        Ok(Self { geom, domain, i0, data })
    }

    #[inline]
    pub fn index(&self, view: usize, iv: usize, iu: usize) -> usize {
        (view * self.geom.nv + iv) * self.geom.nu + iu
    }

    #[inline]
    pub fn get(&self, view: usize, iv: usize, iu: usize) -> f64 {
        self.data[self.index(view, iv, iu)]
    }

    #[inline]
    pub fn set(&mut self, view: usize, iv: usize, iu: usize, value: f64) {
        let i = self.index(view, iv, iu);
        self.data[i] = value;
    }

    /// One view's pixels as a contiguous slice (nv rows of nu).
    pub fn view(&self, view: usize) -> &[f64] {
        let n = self.geom.nu * self.geom.nv;
        &self.data[view * n..(view + 1) * n]
    }

    pub fn view_mut(&mut self, view: usize) -> &mut [f64] {
        let n = self.geom.nu * self.geom.nv;
        &mut self.data[view * n..(view + 1) * n]
    }
}
