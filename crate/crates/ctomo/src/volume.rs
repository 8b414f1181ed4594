//! Voxel volumes of linear attenuation coefficients.
//!
//! Memory layout is x-major: the volume is a stack of `nx` slices, each an
//! `ny` × `nz` plane stored row-major (`iy` rows of `nz` values). Slices are
//! perpendicular to the x axis, which points from the isocenter toward the
//! source at the central view, so a slice is parallel to the central-view
//! detector.

use crate::geometry::Point3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("volume dimensions must be at least 1, got {nx}x{ny}x{nz}")]
    InvalidDims { nx: usize, ny: usize, nz: usize },
    #[error("voxel spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("data length {got} does not match dimensions ({expected})")]
    DataLength { got: usize, expected: usize },
    #[error("index ({0}, {1}, {2}) out of bounds")]
    OutOfBounds(usize, usize, usize),
}

/// Shape and placement of a voxel grid: counts per axis, isotropic spacing
/// in mm, and the world position of the center of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    pub origin: Point3,
}

impl VolumeGeometry {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        spacing: f64,
        origin: Point3,
    ) -> Result<Self, VolumeError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::InvalidDims { nx, ny, nz });
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(VolumeError::InvalidSpacing(spacing));
        }
        Ok(Self { nx, ny, nz, spacing, origin })
    }

    /// Grid of the given shape centered on the world origin.
    pub fn centered(nx: usize, ny: usize, nz: usize, spacing: f64) -> Result<Self, VolumeError> {
        let origin = Point3::new(
            -(nx as f64 - 1.0) / 2.0 * spacing,
            -(ny as f64 - 1.0) / 2.0 * spacing,
            -(nz as f64 - 1.0) / 2.0 * spacing,
        );
        Self::new(nx, ny, nz, spacing, origin)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of voxel (ix, iy, iz): x-major slices of y×z planes.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }

    /// World position of the center of voxel (ix, iy, iz).
    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        Point3::new(
            self.origin.x + ix as f64 * self.spacing,
            self.origin.y + iy as f64 * self.spacing,
            self.origin.z + iz as f64 * self.spacing,
        )
    }

    /// Low corner of the grid bounding box (outer face of voxel (0,0,0)).
    pub fn box_min(&self) -> Point3 {
        let h = self.spacing / 2.0;
        Point3::new(self.origin.x - h, self.origin.y - h, self.origin.z - h)
    }

    /// High corner of the grid bounding box.
    pub fn box_max(&self) -> Point3 {
        let h = self.spacing / 2.0;
        Point3::new(
            self.origin.x + (self.nx - 1) as f64 * self.spacing + h,
            self.origin.y + (self.ny - 1) as f64 * self.spacing + h,
            self.origin.z + (self.nz - 1) as f64 * self.spacing + h,
        )
    }
}

/// A voxel grid with its data, f64 in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub geom: VolumeGeometry,
    pub data: Vec<f64>,
}

impl VoxelVolume {
    pub fn zeros(geom: VolumeGeometry) -> Self {
        Self { data: vec![0.0; geom.len()], geom }
    }

    pub fn filled(geom: VolumeGeometry, value: f64) -> Self {
        Self { data: vec![value; geom.len()], geom }
    }

    pub fn from_data(geom: VolumeGeometry, data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != geom.len() {
            return Err(VolumeError::DataLength { got: data.len(), expected: geom.len() });
        }
        Ok(Self { geom, data })
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[self.geom.index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: f64) {
        let i = self.geom.index(ix, iy, iz);
        self.data[i] = value;
    }

    /// Index (ix, iy, iz) of the voxel with the largest value. Ties resolve
    /// to the lowest flat index.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        let iz = best % self.geom.nz;
        let iy = (best / self.geom.nz) % self.geom.ny;
        let ix = best / (self.geom.nz * self.geom.ny);
        (ix, iy, iz)
    }
}
