//! Limited-angle C-arm tomosynthesis toolkit.
//!
//! Simulates cone-beam projection acquisition over a partial circular orbit
//! and reconstructs 3D attenuation volumes from the resulting sparse,
//! limited-angle data. Four reconstruction algorithms are provided
//! (backprojection, filtered backprojection, SART, transmission MLEM)
//! together with the image-quality metrics used to compare them: line
//! profiles, FWHM, MTF, and the artifact spread function.
//!
//! All lengths are millimetres, all attenuation coefficients mm⁻¹, and all
//! angles degrees. Computation is f64 in memory; raw files are f32
//! little-endian. Every parallel operation partitions its *output* elements
//! among threads with a fixed per-element summation order, so results are
//! bitwise identical regardless of thread count.

pub mod config;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod scenario;
pub mod stack;
pub mod volume;

pub use geometry::{CArmGeometry, DetectorCoord, GeometryError, Point3};
pub use phantom::{Ellipsoid, EllipsoidPhantom};
pub use stack::{Domain, ProjectionStack};
pub use volume::{VolumeGeometry, VoxelVolume};
