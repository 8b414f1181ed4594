//! Analytic ellipsoid phantoms and projection simulation.
//!
//! A phantom is an ordered list of ellipsoids whose attenuation values add
//! where they overlap; a negative value carves material out of an enclosing
//! ellipsoid (the caller keeps the net attenuation nonnegative). Because the
//! forward model is an exact line integral through these shapes, simulated
//! projections share no discretization with any reconstruction grid, which
//! keeps reconstruction tests honest. A ray-traced forward projection of a
//! voxelized phantom is available separately in the projector module for
//! matched-model experiments.

use crate::geometry::{detector_point, source_position, CArmGeometry, DetectorCoord, Point3};
use crate::noise::PixelRng;
use crate::stack::{Domain, ProjectionStack};
use crate::volume::{VolumeGeometry, VoxelVolume};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("ellipsoid semi-axes must be positive and finite, got ({0}, {1}, {2})")]
    InvalidSemiAxes(f64, f64, f64),
    #[error("attenuation must be finite, got {0}")]
    InvalidMu(f64),
    #[error("ellipsoid center must be finite")]
    InvalidCenter,
    #[error("phantom needs at least one ellipsoid")]
    Empty,
    #[error("intensity conversion needs i0 > 0, got {0}")]
    InvalidI0(f64),
}

/// One ellipsoid: center, semi-axes along the world axes, and its additive
/// attenuation contribution in mm⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: Point3,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub mu: f64,
}

impl Ellipsoid {
    pub fn new(center: Point3, a: f64, b: f64, c: f64, mu: f64) -> Result<Self, PhantomError> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(PhantomError::InvalidSemiAxes(a, b, c));
        }
        if !mu.is_finite() {
            return Err(PhantomError::InvalidMu(mu));
        }
        if !center.is_finite() {
            return Err(PhantomError::InvalidCenter);
        }
        Ok(Self { center, a, b, c, mu })
    }

    pub fn sphere(center: Point3, radius: f64, mu: f64) -> Result<Self, PhantomError> {
        Self::new(center, radius, radius, radius, mu)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let dx = (p.x - self.center.x) / self.a;
        let dy = (p.y - self.center.y) / self.b;
        let dz = (p.z - self.center.z) / self.c;
        dx * dx + dy * dy + dz * dz <= 1.0
    }
}

/// Ordered list of ellipsoids with additive attenuation.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidPhantom {
    pub ellipsoids: Vec<Ellipsoid>,
}

impl EllipsoidPhantom {
    pub fn new(ellipsoids: Vec<Ellipsoid>) -> Result<Self, PhantomError> {
        if ellipsoids.is_empty() {
            return Err(PhantomError::Empty);
        }
        Ok(Self { ellipsoids })
    }

    /// Net attenuation at a world point.
    pub fn mu_at(&self, p: Point3) -> f64 {
        self.ellipsoids.iter().filter(|e| e.contains(p)).map(|e| e.mu).sum()
    }
}

/// Length of the segment `p1 → p2` inside the ellipsoid, in mm. Zero when
/// the segment misses it.
///
/// Mapping the ellipsoid to the unit sphere (divide each axis by its
/// semi-axis) turns the problem into a quadratic in the segment parameter,
/// whose root interval is clamped to [0, 1] before scaling back by the
/// original segment length.
pub fn chord_length(e: &Ellipsoid, p1: Point3, p2: Point3) -> f64 {
    let o = Point3::new(
        (p1.x - e.center.x) / e.a,
        (p1.y - e.center.y) / e.b,
        (p1.z - e.center.z) / e.c,
    );
    let d = Point3::new((p2.x - p1.x) / e.a, (p2.y - p1.y) / e.b, (p2.z - p1.z) / e.c);
    let aa = d.dot(d);
    if aa == 0.0 {
        return 0.0;
    }
    let bb = o.dot(d);
    let cc = o.dot(o) - 1.0;
    let disc = bb * bb - aa * cc;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    let t_lo = ((-bb - sq) / aa).max(0.0);
    let t_hi = ((-bb + sq) / aa).min(1.0);
    if t_hi <= t_lo {
        return 0.0;
    }
    (t_hi - t_lo) * p2.sub(p1).norm()
}

/// Exact line-integral projections of the phantom: for every view and every
/// detector pixel center, the sum of `mu * chord` over all ellipsoids along
/// the source→pixel segment.
pub fn forward_project_analytic(
    ph: &EllipsoidPhantom,
    geom: &CArmGeometry,
) -> ProjectionStack {
    let mut stack = ProjectionStack::zeros(geom.clone(), Domain::LineIntegral, None)
        .expect("zero stack construction cannot fail");
    let (nu, nv) = (geom.nu, geom.nv);
    let angles = geom.angles.clone();
    stack
        .data
        .par_chunks_mut(nu)
        .enumerate()
        .for_each(|(row_idx, row)| {
            let view = row_idx / nv;
            let iv = row_idx % nv;
            let beta = angles[view];
            let src = source_position(geom, beta);
            let v = geom.pixel_v(iv);
            for (iu, out) in row.iter_mut().enumerate() {
                let uv = DetectorCoord::new(geom.pixel_u(iu), v);
                let dst = detector_point(geom, uv, beta);
                let mut sum = 0.0;
                for e in &ph.ellipsoids {
                    sum += e.mu * chord_length(e, src, dst);
                }
                *out = sum;
            }
        });
    stack
}

/// Convert line integrals to detected intensities `i0 · exp(−A)`.
///
/// With a seed, each pixel is replaced by a Poisson sample of its noiseless
/// value, drawn from a stream keyed by `(seed, view, row, col)`; the result
/// is bitwise reproducible for a given seed regardless of worker count.
pub fn to_intensity(
    stack: &ProjectionStack,
    i0: f64,
    seed: Option<u64>,
) -> Result<ProjectionStack, PhantomError> {
    if !(i0 > 0.0) || !i0.is_finite() {
        return Err(PhantomError::InvalidI0(i0));
    }
    let geom = stack.geom.clone();
    let (nu, nv) = (geom.nu, geom.nv);
    let mut data = vec![0.0; stack.data.len()];
    data.par_chunks_mut(nu)
        .zip(stack.data.par_chunks(nu))
        .enumerate()
        .for_each(|(row_idx, (out_row, in_row))| {
            let view = row_idx / nv;
            let iv = row_idx % nv;
            for iu in 0..nu {
                let expected = i0 * (-in_row[iu]).exp();
                out_row[iu] = match seed {
                    None => expected,
                    Some(s) => {
                        let mut rng = PixelRng::new(s, view as u64, iv as u64, iu as u64);
                        rng.poisson(expected) as f64
                    }
                };
            }
        });
    Ok(ProjectionStack::from_data(geom, Domain::Intensity, Some(i0), data)
        .expect("dimensions preserved"))
}

/// Sample the phantom onto a voxel grid. Point sampling takes the net
/// attenuation at each voxel center; supersampling averages 8 samples at
/// the centers of the voxel's octants, halving the staircase bias at
/// curved boundaries.
pub fn voxelize(ph: &EllipsoidPhantom, grid: VolumeGeometry, supersample: bool) -> VoxelVolume {
    let mut vol = VoxelVolume::zeros(grid);
    let (ny, nz) = (grid.ny, grid.nz);
    let q = grid.spacing / 4.0;
    vol.data
        .par_chunks_mut(nz)
        .enumerate()
        .for_each(|(row_idx, row)| {
            let ix = row_idx / ny;
            let iy = row_idx % ny;
            for (iz, out) in row.iter_mut().enumerate() {
                let c = grid.voxel_center(ix, iy, iz);
                *out = if supersample {
                    let mut acc = 0.0;
                    for sx in [-q, q] {
                        for sy in [-q, q] {
                            for sz in [-q, q] {
                                acc += ph.mu_at(Point3::new(c.x + sx, c.y + sy, c.z + sz));
                            }
                        }
                    }
                    acc / 8.0
                } else {
                    ph.mu_at(c)
                };
            }
        });
    vol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::view_angles;

    fn unit_sphere(mu: f64) -> Ellipsoid {
        Ellipsoid::sphere(Point3::ORIGIN, 1.0, mu).unwrap()
    }

    fn reference_geom(n_views: usize) -> CArmGeometry {
        CArmGeometry::new(440.0, view_angles(n_views, 40.0).unwrap(), 256, 256, 0.24).unwrap()
    }

    #[test]
    fn chord_through_center_is_diameter() {
        let e = unit_sphere(1.0);
        let l = chord_length(&e, Point3::new(440.0, 0.0, 0.0), Point3::new(-440.0, 0.0, 0.0));
        assert!((l - 2.0).abs() < 1e-12, "central chord {l}");
    }

    #[test]
    fn chord_at_tangent_is_zero() {
        let e = unit_sphere(1.0);
        let l = chord_length(&e, Point3::new(440.0, 1.0, 0.0), Point3::new(-440.0, 1.0, 0.0));
        assert!(l < 1e-6, "tangent chord {l}");
        let l = chord_length(&e, Point3::new(440.0, 1.5, 0.0), Point3::new(-440.0, 1.5, 0.0));
        assert_eq!(l, 0.0);
    }

    #[test]
    fn chord_at_offset_matches_circle_formula() {
        // Impact parameter 0.6 against radius 1: chord = 2·√(1 − 0.36) = 1.6.
        let e = unit_sphere(1.0);
        let l = chord_length(&e, Point3::new(440.0, 0.6, 0.0), Point3::new(-440.0, 0.6, 0.0));
        assert!((l - 1.6).abs() < 1e-9, "offset chord {l}");
    }

    #[test]
    fn chord_respects_segment_clamp() {
        // Segment ends inside the sphere: only the in-segment part counts.
        let e = unit_sphere(1.0);
        let l = chord_length(&e, Point3::new(-5.0, 0.0, 0.0), Point3::ORIGIN);
        assert!((l - 1.0).abs() < 1e-12, "half chord {l}");
        // Segment fully inside.
        let l = chord_length(&e, Point3::new(-0.25, 0.0, 0.0), Point3::new(0.25, 0.0, 0.0));
        assert!((l - 0.5).abs() < 1e-12, "interior chord {l}");
    }

    #[test]
    fn chord_handles_anisotropic_axes() {
        let e = Ellipsoid::new(Point3::new(1.0, -2.0, 3.0), 2.0, 0.5, 7.0, 1.0).unwrap();
        // Axis-aligned pass through the center along y: chord = 2b = 1.
        let l = chord_length(
            &e,
            Point3::new(1.0, -50.0, 3.0),
            Point3::new(1.0, 50.0, 3.0),
        );
        assert!((l - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_of_central_pixel_is_sphere_diameter_times_mu() {
        let ph = EllipsoidPhantom::new(vec![unit_sphere(1.0)]).unwrap();
        let geom = reference_geom(3);
        let stack = forward_project_analytic(&ph, &geom);
        // The detector has an even pixel count, so the central ray falls
        // between columns; evaluate the ray through (u=0, v=0) directly.
        for &beta in &geom.angles {
            let src = source_position(&geom, beta);
            let dst = detector_point(&geom, DetectorCoord::new(0.0, 0.0), beta);
            let a = chord_length(&ph.ellipsoids[0], src, dst);
            assert!((a - 2.0).abs() < 1e-12, "central integral {a} at β={beta}");
        }
        // Rays far from the shadow are exactly zero.
        assert_eq!(stack.get(0, 0, 0), 0.0);
        assert_eq!(stack.get(2, 255, 255), 0.0);
        // Pixels adjacent to the center (u = ±0.12 mm, magnified shadow
        // radius 2 mm) are inside the shadow on every view.
        for view in 0..3 {
            assert!(stack.get(view, 127, 127) > 1.0);
            assert!(stack.get(view, 128, 128) > 1.0);
        }
    }

    #[test]
    fn projection_is_additive_over_phantom_union() {
        let e1 = Ellipsoid::sphere(Point3::new(0.0, 3.0, 1.0), 2.0, 0.02).unwrap();
        let e2 = Ellipsoid::new(Point3::new(-5.0, -4.0, 0.0), 3.0, 2.0, 1.0, 0.007).unwrap();
        let geom = CArmGeometry::new(440.0, view_angles(5, 40.0).unwrap(), 64, 48, 1.0).unwrap();
        let s1 = forward_project_analytic(&EllipsoidPhantom::new(vec![e1]).unwrap(), &geom);
        let s2 = forward_project_analytic(&EllipsoidPhantom::new(vec![e2]).unwrap(), &geom);
        let s12 = forward_project_analytic(&EllipsoidPhantom::new(vec![e1, e2]).unwrap(), &geom);
        for i in 0..s12.data.len() {
            assert!(
                (s12.data[i] - (s1.data[i] + s2.data[i])).abs() <= 1e-12,
                "additivity at {i}"
            );
        }
    }

    #[test]
    fn opposite_views_mirror_for_symmetric_phantom() {
        // A sphere at the origin is symmetric under y → −y, which maps the
        // view at −β onto the view at +β with the u axis flipped.
        let ph = EllipsoidPhantom::new(vec![unit_sphere(0.01)]).unwrap();
        let geom = reference_geom(5);
        let stack = forward_project_analytic(&ph, &geom);
        let nu = geom.nu;
        for (neg, pos) in [(0usize, 4usize), (1, 3)] {
            for iv in 0..geom.nv {
                for iu in 0..nu {
                    let a = stack.get(neg, iv, iu);
                    let b = stack.get(pos, iv, nu - 1 - iu);
                    assert!((a - b).abs() < 1e-9, "mirror at view {neg}/{pos} ({iv},{iu})");
                }
            }
        }
    }

    #[test]
    fn noiseless_intensity_is_beer_lambert() {
        let ph = EllipsoidPhantom::new(vec![unit_sphere(1.0)]).unwrap();
        let geom = reference_geom(1);
        let stack = forward_project_analytic(&ph, &geom);
        let intens = to_intensity(&stack, 1000.0, None).unwrap();
        for i in 0..stack.data.len() {
            let want = 1000.0 * (-stack.data[i]).exp();
            assert_eq!(intens.data[i], want);
        }
        // Spot values: A = 0 → 1000; A = 2 → 1000·e⁻².
        assert_eq!(intens.get(0, 0, 0), 1000.0);
        let mut probe = ProjectionStack::zeros(geom, Domain::LineIntegral, None).unwrap();
        probe.set(0, 10, 10, 2.0);
        let probe_i = to_intensity(&probe, 1000.0, None).unwrap();
        assert!((probe_i.get(0, 10, 10) - 135.33528323661269).abs() < 1e-9);
    }

    #[test]
    fn noisy_intensity_mean_matches_flux() {
        // Flat field: A = 0 everywhere, so every pixel ~ Poisson(1e5).
        let geom = reference_geom(1);
        let stack = ProjectionStack::zeros(geom, Domain::LineIntegral, None).unwrap();
        let noisy = to_intensity(&stack, 1e5, Some(20240811)).unwrap();
        let n = noisy.data.len() as f64;
        let mean = noisy.data.iter().sum::<f64>() / n;
        let sigma_mean = (1e5 / n).sqrt();
        assert!(
            (mean - 1e5).abs() <= 3.0 * sigma_mean,
            "flat-field mean {mean}, tol {}",
            3.0 * sigma_mean
        );
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let ph = EllipsoidPhantom::new(vec![unit_sphere(0.5)]).unwrap();
        let geom = CArmGeometry::new(440.0, view_angles(2, 10.0).unwrap(), 32, 32, 0.5).unwrap();
        let stack = forward_project_analytic(&ph, &geom);
        let a = to_intensity(&stack, 5000.0, Some(7)).unwrap();
        let b = to_intensity(&stack, 5000.0, Some(7)).unwrap();
        assert_eq!(a.data, b.data);
        let c = to_intensity(&stack, 5000.0, Some(8)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn voxelize_point_sampling_hits_centers() {
        let ph = EllipsoidPhantom::new(vec![unit_sphere(0.03)]).unwrap();
        let grid = VolumeGeometry::centered(17, 17, 17, 0.25).unwrap();
        let vol = voxelize(&ph, grid, false);
        // Center voxel (8,8,8) sits at the origin, inside the sphere.
        assert_eq!(vol.get(8, 8, 8), 0.03);
        // Corner voxel is far outside.
        assert_eq!(vol.get(0, 0, 0), 0.0);
    }

    #[test]
    fn voxelized_sphere_volume_matches_analytic() {
        // Riemann sum of a 1 mm sphere at 0.1 mm spacing vs (4/3)π r³ mu.
        let mu = 0.02;
        let ph = EllipsoidPhantom::new(vec![unit_sphere(mu)]).unwrap();
        let grid = VolumeGeometry::centered(30, 30, 30, 0.1).unwrap();
        for supersample in [false, true] {
            let vol = voxelize(&ph, grid, supersample);
            let total: f64 = vol.data.iter().sum::<f64>() * 0.1f64.powi(3);
            let want = 4.0 / 3.0 * std::f64::consts::PI * mu;
            assert!(
                (total - want).abs() <= 0.02 * want,
                "integrated mu {total} vs {want} (supersample={supersample})"
            );
        }
    }

    #[test]
    fn negative_mu_carves_inclusions() {
        let outer = Ellipsoid::sphere(Point3::ORIGIN, 2.0, 0.05).unwrap();
        let hole = Ellipsoid::sphere(Point3::new(0.0, 0.5, 0.0), 0.5, -0.05).unwrap();
        let ph = EllipsoidPhantom::new(vec![outer, hole]).unwrap();
        assert_eq!(ph.mu_at(Point3::new(0.0, 0.5, 0.0)), 0.0);
        assert_eq!(ph.mu_at(Point3::new(0.0, -1.0, 0.0)), 0.05);
    }

    #[test]
    fn validation_errors() {
        assert!(Ellipsoid::new(Point3::ORIGIN, 0.0, 1.0, 1.0, 0.1).is_err());
        assert!(Ellipsoid::new(Point3::ORIGIN, 1.0, 1.0, 1.0, f64::NAN).is_err());
        assert!(Ellipsoid::new(Point3::new(f64::INFINITY, 0.0, 0.0), 1.0, 1.0, 1.0, 0.1).is_err());
        assert!(EllipsoidPhantom::new(vec![]).is_err());
        let geom = reference_geom(1);
        let stack = ProjectionStack::zeros(geom, Domain::LineIntegral, None).unwrap();
        assert!(to_intensity(&stack, 0.0, None).is_err());
        assert!(to_intensity(&stack, -5.0, None).is_err());
    }
}
