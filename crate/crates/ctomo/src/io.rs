//! On-disk artifact formats.
//!
//! Stacks and volumes are stored as a pair of sibling files: a TOML
//! sidecar `<base>.meta` describing shape and geometry, and a raw payload
//! `<base>.raw` of little-endian 32-bit floats in the same element order
//! as memory. Slices export as 16-bit binary PGM, curves as two-column
//! CSV, and every scenario run writes a `manifest.toml` with SHA-256
//! digests of its outputs.
//!
//! All parsers are total: any byte sequence yields `Ok` or a structured
//! error, never a panic.

use crate::geometry::{CArmGeometry, Point3};
use crate::metrics::{AsfCurve, MtfCurve, Profile1D};
use crate::phantom::{Ellipsoid, EllipsoidPhantom};
use crate::stack::{Domain, ProjectionStack};
use crate::volume::{VolumeGeometry, VoxelVolume};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar syntax: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("payload size mismatch: expected {expected} bytes, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("phantom description line {line}: {msg}")]
    PhantomSyntax { line: usize, msg: String },
    #[error("window bounds must satisfy lo < hi")]
    InvalidWindow,
    #[error("plane index {0} out of bounds")]
    OutOfBounds(usize),
}

fn req<T>(v: Option<T>, name: &'static str) -> Result<T, IoError> {
    v.ok_or(IoError::MissingField(name))
}

fn check_header(version: Option<u32>, dtype: Option<String>) -> Result<(), IoError> {
    let version = req(version, "version")?;
    if version != FORMAT_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let dtype = req(dtype, "dtype")?;
    if dtype != DTYPE {
        return Err(IoError::UnsupportedDtype(dtype));
    }
    Ok(())
}

// ---------------------------------------------------------------- payloads

fn encode_f32le(data: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

fn decode_f32le(bytes: &[u8], elements: usize) -> Result<Vec<f64>, IoError> {
    let expected = elements
        .checked_mul(4)
        .ok_or_else(|| IoError::InvalidField("element count overflows".into()))?;
    if bytes.len() != expected {
        return Err(IoError::SizeMismatch { expected, got: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

// ------------------------------------------------------------------ stacks

/// Validated stack sidecar contents.
#[derive(Debug, Clone, PartialEq)]
pub struct StackMeta {
    pub geom: CArmGeometry,
    pub domain: Domain,
    pub i0: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StackMetaRaw {
    version: Option<u32>,
    dtype: Option<String>,
    n_views: Option<usize>,
    nu: Option<usize>,
    nv: Option<usize>,
    pitch_mm: Option<f64>,
    d_mm: Option<f64>,
    domain: Option<String>,
    i0: Option<f64>,
    angles_deg: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct StackMetaOut<'a> {
    version: u32,
    dtype: &'a str,
    n_views: usize,
    nu: usize,
    nv: usize,
    pitch_mm: f64,
    d_mm: f64,
    domain: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    i0: Option<f64>,
    angles_deg: &'a [f64],
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::LineIntegral => "line_integral",
        Domain::Intensity => "intensity",
    }
}

/// Parse and validate a stack sidecar. Total over arbitrary input.
pub fn parse_stack_meta(text: &str) -> Result<StackMeta, IoError> {
    let raw: StackMetaRaw =
        toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    check_header(raw.version, raw.dtype)?;
    let n_views = req(raw.n_views, "n_views")?;
    let angles = req(raw.angles_deg, "angles_deg")?;
    if angles.len() != n_views {
        return Err(IoError::InvalidField(format!(
            "n_views = {n_views} but angles_deg holds {} entries",
            angles.len()
        )));
    }
    let geom = CArmGeometry::new(
        req(raw.d_mm, "d_mm")?,
        angles,
        req(raw.nu, "nu")?,
        req(raw.nv, "nv")?,
        req(raw.pitch_mm, "pitch_mm")?,
    )
    .map_err(|e| IoError::InvalidField(e.to_string()))?;
    let domain = match req(raw.domain, "domain")?.as_str() {
        "line_integral" => Domain::LineIntegral,
        "intensity" => Domain::Intensity,
        other => {
            return Err(IoError::InvalidField(format!("unknown domain {other:?}")))
        }
    };
    match (domain, raw.i0) {
        (Domain::Intensity, None) => return Err(IoError::MissingField("i0")),
        (Domain::LineIntegral, Some(_)) => {
            return Err(IoError::InvalidField(
                "i0 is only meaningful for intensity stacks".into(),
            ))
        }
        _ => {}
    }
    if let Some(i0) = raw.i0 {
        if !(i0 > 0.0) || !i0.is_finite() {
            return Err(IoError::InvalidField(format!("i0 must be > 0, got {i0}")));
        }
    }
    Ok(StackMeta { geom, domain, i0: raw.i0 })
}

/// Sidecar text for a stack. Floats serialize shortest-round-trip, so
/// parsing the result recovers every value exactly.
pub fn stack_meta_string(stack: &ProjectionStack) -> String {
    let g = &stack.geom;
    let out = StackMetaOut {
        version: FORMAT_VERSION,
        dtype: DTYPE,
        n_views: g.n_views(),
        nu: g.nu,
        nv: g.nv,
        pitch_mm: g.pitch,
        d_mm: g.d,
        domain: domain_name(stack.domain),
        i0: stack.i0,
        angles_deg: &g.angles,
    };
    toml::to_string(&out).expect("stack sidecar serializes")
}

/// Combine a parsed sidecar with its raw payload bytes.
pub fn stack_from_parts(meta: StackMeta, payload: &[u8]) -> Result<ProjectionStack, IoError> {
    let elements = meta
        .geom
        .n_views()
        .checked_mul(meta.geom.nu)
        .and_then(|n| n.checked_mul(meta.geom.nv))
        .ok_or_else(|| IoError::InvalidField("stack dimensions overflow".into()))?;
    let data = decode_f32le(payload, elements)?;
    ProjectionStack::from_data(meta.geom, meta.domain, meta.i0, data)
        .map_err(|e| IoError::InvalidField(e.to_string()))
}

/// Write `<base>.meta` and `<base>.raw`. Values quantize to f32.
pub fn write_stack(stack: &ProjectionStack, base: &Path) -> Result<(), IoError> {
    fs::write(base.with_extension("meta"), stack_meta_string(stack))?;
    fs::write(base.with_extension("raw"), encode_f32le(&stack.data))?;
    Ok(())
}

pub fn read_stack(base: &Path) -> Result<ProjectionStack, IoError> {
    let meta = parse_stack_meta(&fs::read_to_string(base.with_extension("meta"))?)?;
    let payload = fs::read(base.with_extension("raw"))?;
    stack_from_parts(meta, &payload)
}

// ----------------------------------------------------------------- volumes

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeMetaRaw {
    version: Option<u32>,
    dtype: Option<String>,
    nx: Option<usize>,
    ny: Option<usize>,
    nz: Option<usize>,
    spacing_mm: Option<f64>,
    origin_mm: Option<[f64; 3]>,
}

#[derive(Serialize)]
struct VolumeMetaOut<'a> {
    version: u32,
    dtype: &'a str,
    nx: usize,
    ny: usize,
    nz: usize,
    spacing_mm: f64,
    origin_mm: [f64; 3],
}

/// Parse and validate a volume sidecar. Total over arbitrary input.
pub fn parse_volume_meta(text: &str) -> Result<VolumeGeometry, IoError> {
    let raw: VolumeMetaRaw =
        toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    check_header(raw.version, raw.dtype)?;
    let [ox, oy, oz] = req(raw.origin_mm, "origin_mm")?;
    let origin = Point3::new(ox, oy, oz);
    if !origin.is_finite() {
        return Err(IoError::InvalidField("origin_mm must be finite".into()));
    }
    VolumeGeometry::new(
        req(raw.nx, "nx")?,
        req(raw.ny, "ny")?,
        req(raw.nz, "nz")?,
        req(raw.spacing_mm, "spacing_mm")?,
        origin,
    )
    .map_err(|e| IoError::InvalidField(e.to_string()))
}

pub fn volume_meta_string(geom: &VolumeGeometry) -> String {
    let out = VolumeMetaOut {
        version: FORMAT_VERSION,
        dtype: DTYPE,
        nx: geom.nx,
        ny: geom.ny,
        nz: geom.nz,
        spacing_mm: geom.spacing,
        origin_mm: [geom.origin.x, geom.origin.y, geom.origin.z],
    };
    toml::to_string(&out).expect("volume sidecar serializes")
}

pub fn volume_from_parts(geom: VolumeGeometry, payload: &[u8]) -> Result<VoxelVolume, IoError> {
    let elements = geom
        .nx
        .checked_mul(geom.ny)
        .and_then(|n| n.checked_mul(geom.nz))
        .ok_or_else(|| IoError::InvalidField("volume dimensions overflow".into()))?;
    let data = decode_f32le(payload, elements)?;
    VoxelVolume::from_data(geom, data).map_err(|e| IoError::InvalidField(e.to_string()))
}

pub fn write_volume(vol: &VoxelVolume, base: &Path) -> Result<(), IoError> {
    fs::write(base.with_extension("meta"), volume_meta_string(&vol.geom))?;
    fs::write(base.with_extension("raw"), encode_f32le(&vol.data))?;
    Ok(())
}

pub fn read_volume(base: &Path) -> Result<VoxelVolume, IoError> {
    let geom = parse_volume_meta(&fs::read_to_string(base.with_extension("meta"))?)?;
    let payload = fs::read(base.with_extension("raw"))?;
    volume_from_parts(geom, &payload)
}

// --------------------------------------------------------------- rendering

/// Render one fixed-x plane to 16-bit binary PGM (P5, maxval 65535),
/// `ny` columns by `nz` rows. Values clamp into [lo, hi] and map
/// linearly onto 0..=65535, rounding half away from zero.
pub fn export_slice_pgm(
    vol: &VoxelVolume,
    ix: usize,
    window: (f64, f64),
    path: &Path,
) -> Result<(), IoError> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(IoError::InvalidWindow);
    }
    let g = &vol.geom;
    if ix >= g.nx {
        return Err(IoError::OutOfBounds(ix));
    }
    let mut bytes = format!("P5\n{} {}\n65535\n", g.ny, g.nz).into_bytes();
    bytes.reserve(2 * g.ny * g.nz);
    for iz in 0..g.nz {
        for iy in 0..g.ny {
            let x = vol.get(ix, iy, iz).clamp(lo, hi);
            let q = ((x - lo) / (hi - lo) * 65535.0).round() as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

// -------------------------------------------------------------------- CSV

pub fn write_profile_csv(p: &Profile1D, path: &Path) -> Result<(), IoError> {
    let mut s = String::from("position_mm,value\n");
    for (i, v) in p.values.iter().enumerate() {
        s.push_str(&format!("{},{v}\n", p.position(i)));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_mtf_csv(curve: &MtfCurve, path: &Path) -> Result<(), IoError> {
    let mut s = String::from("frequency_per_mm,mtf\n");
    for (f, v) in curve.frequencies.iter().zip(&curve.values) {
        s.push_str(&format!("{f},{v}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_asf_csv(curve: &AsfCurve, path: &Path) -> Result<(), IoError> {
    let mut s = String::from("offset_mm,asf\n");
    for (o, v) in curve.plane_offsets.iter().zip(&curve.values) {
        s.push_str(&format!("{o},{v}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

// --------------------------------------------------------------- manifest

/// Run manifest: configuration digest, seed, and a digest per artifact.
/// Contains nothing machine- or time-dependent, so two runs of the same
/// scenario produce byte-identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            files: BTreeMap::new(),
        }
    }

    pub fn insert_file(&mut self, name: &str, contents: &[u8]) {
        self.files.insert(name.to_string(), sha256_hex(contents));
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ------------------------------------------------- phantom description file

/// Parse a phantom description: one ellipsoid per line as seven
/// whitespace-separated `key=value` tokens (`cx cy cz a b c mu`, any
/// order, each exactly once), `#` comments, blank lines ignored. Total
/// over arbitrary input.
pub fn parse_phantom_str(text: &str) -> Result<EllipsoidPhantom, IoError> {
    const KEYS: [&str; 7] = ["cx", "cy", "cz", "a", "b", "c", "mu"];
    let syntax = |line: usize, msg: String| IoError::PhantomSyntax { line: line + 1, msg };
    let mut ellipsoids = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut vals = [None::<f64>; 7];
        for tok in line.split_whitespace() {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| syntax(lineno, format!("token {tok:?} is not key=value")))?;
            let slot = KEYS
                .iter()
                .position(|&k| k == key)
                .ok_or_else(|| syntax(lineno, format!("unknown key {key:?}")))?;
            if vals[slot].is_some() {
                return Err(syntax(lineno, format!("duplicate key {key:?}")));
            }
            let parsed: f64 = val
                .parse()
                .map_err(|_| syntax(lineno, format!("bad number {val:?} for {key}")))?;
            vals[slot] = Some(parsed);
        }
        for (slot, key) in KEYS.iter().enumerate() {
            if vals[slot].is_none() {
                return Err(syntax(lineno, format!("missing key {key}")));
            }
        }
        let e = Ellipsoid::new(
            Point3::new(vals[0].unwrap(), vals[1].unwrap(), vals[2].unwrap()),
            vals[3].unwrap(),
            vals[4].unwrap(),
            vals[5].unwrap(),
            vals[6].unwrap(),
        )
        .map_err(|e| syntax(lineno, e.to_string()))?;
        ellipsoids.push(e);
    }
    EllipsoidPhantom::new(ellipsoids).map_err(|e| IoError::InvalidField(e.to_string()))
}

pub fn read_phantom(path: &Path) -> Result<EllipsoidPhantom, IoError> {
    parse_phantom_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::view_angles;

    fn geom() -> CArmGeometry {
        CArmGeometry::new(440.0, view_angles(5, 40.0).unwrap(), 8, 6, 0.24).unwrap()
    }

    /// f32-representable data pattern, so disk quantization is lossless.
    fn pattern(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i % 97) as f64 * 0.25 - 3.0).collect()
    }

    #[test]
    fn stack_sidecar_round_trips_every_field() {
        let g = geom();
        let n = g.n_views() * g.nu * g.nv;
        let stack =
            ProjectionStack::from_data(g.clone(), Domain::Intensity, Some(1e5), vec![1.0; n])
                .unwrap();
        let meta = parse_stack_meta(&stack_meta_string(&stack)).unwrap();
        assert_eq!(meta.geom, g);
        assert_eq!(meta.domain, Domain::Intensity);
        assert_eq!(meta.i0, Some(1e5));
    }

    #[test]
    fn stack_file_round_trip_is_bitwise() {
        let g = geom();
        let n = g.n_views() * g.nu * g.nv;
        let stack =
            ProjectionStack::from_data(g, Domain::LineIntegral, None, pattern(n)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        write_stack(&stack, &base).unwrap();
        let back = read_stack(&base).unwrap();
        assert_eq!(back.geom, stack.geom);
        assert_eq!(back.domain, stack.domain);
        assert_eq!(back.i0, stack.i0);
        assert_eq!(back.data, stack.data);
        // Writing the read-back stack reproduces the payload bytes.
        let base2 = dir.path().join("again");
        write_stack(&back, &base2).unwrap();
        assert_eq!(
            fs::read(base.with_extension("raw")).unwrap(),
            fs::read(base2.with_extension("raw")).unwrap()
        );
    }

    #[test]
    fn truncated_payload_is_a_size_mismatch() {
        let g = geom();
        let n = g.n_views() * g.nu * g.nv;
        let meta = StackMeta { geom: g, domain: Domain::LineIntegral, i0: None };
        let payload = vec![0u8; 4 * n - 4];
        assert!(matches!(
            stack_from_parts(meta, &payload),
            Err(IoError::SizeMismatch { expected, got })
                if expected == 4 * n && got == 4 * n - 4
        ));
    }

    #[test]
    fn stack_meta_error_cases() {
        let g = geom();
        let n = g.n_views() * g.nu * g.nv;
        let stack = ProjectionStack::from_data(g, Domain::LineIntegral, None, vec![0.0; n])
            .unwrap();
        let good = stack_meta_string(&stack);

        let drop_line = |needle: &str| -> String {
            good.lines().filter(|l| !l.starts_with(needle)).collect::<Vec<_>>().join("\n")
        };
        assert!(matches!(
            parse_stack_meta(&drop_line("angles_deg")),
            Err(IoError::MissingField("angles_deg"))
        ));
        assert!(matches!(
            parse_stack_meta(&drop_line("domain")),
            Err(IoError::MissingField("domain"))
        ));
        assert!(matches!(
            parse_stack_meta(&good.replace("version = 1", "version = 2")),
            Err(IoError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            parse_stack_meta(&good.replace("f32le", "f64le")),
            Err(IoError::UnsupportedDtype(_))
        ));
        assert!(matches!(
            parse_stack_meta(&format!("{good}\nextra_key = 3\n")),
            Err(IoError::Parse(_))
        ));
        assert!(matches!(
            parse_stack_meta(&good.replace("n_views = 5", "n_views = 4")),
            Err(IoError::InvalidField(_))
        ));
        assert!(matches!(
            parse_stack_meta("not toml ][", ),
            Err(IoError::Parse(_))
        ));
        // Intensity requires i0; line_integral forbids it.
        assert!(matches!(
            parse_stack_meta(&good.replace("line_integral", "intensity")),
            Err(IoError::MissingField("i0"))
        ));
        assert!(matches!(
            parse_stack_meta(&good.replace("domain = \"line_integral\"", "domain = \"line_integral\"\ni0 = 5.0")),
            Err(IoError::InvalidField(_))
        ));
    }

    #[test]
    fn volume_file_round_trip_is_bitwise() {
        let g = VolumeGeometry::centered(4, 5, 6, 0.12).unwrap();
        let vol = VoxelVolume::from_data(g, pattern(g.len())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("vol");
        write_volume(&vol, &base).unwrap();
        let back = read_volume(&base).unwrap();
        assert_eq!(back.geom, vol.geom);
        assert_eq!(back.data, vol.data);
    }

    #[test]
    fn volume_meta_errors() {
        let g = VolumeGeometry::centered(4, 5, 6, 0.12).unwrap();
        let good = volume_meta_string(&g);
        assert!(parse_volume_meta(&good).is_ok());
        let no_spacing: String = good
            .lines()
            .filter(|l| !l.starts_with("spacing_mm"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            parse_volume_meta(&no_spacing),
            Err(IoError::MissingField("spacing_mm"))
        ));
        assert!(matches!(
            parse_volume_meta(&good.replace("nx = 4", "nx = 0")),
            Err(IoError::InvalidField(_))
        ));
        let wrong_len = vec![0u8; 4 * g.len() + 8];
        assert!(matches!(
            volume_from_parts(g, &wrong_len),
            Err(IoError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn pgm_window_mapping_is_exact_at_endpoints_and_midpoint() {
        let g = VolumeGeometry::centered(1, 3, 1, 1.0).unwrap();
        let mut vol = VoxelVolume::zeros(g);
        vol.set(0, 0, 0, -1.0); // below lo clamps to 0
        vol.set(0, 1, 0, 0.5); // midpoint rounds half up
        vol.set(0, 2, 0, 7.0); // above hi clamps to 65535
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.pgm");
        export_slice_pgm(&vol, 0, (0.0, 1.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535]);

        assert!(matches!(
            export_slice_pgm(&vol, 0, (1.0, 1.0), &path),
            Err(IoError::InvalidWindow)
        ));
        assert!(matches!(
            export_slice_pgm(&vol, 1, (0.0, 1.0), &path),
            Err(IoError::OutOfBounds(1))
        ));
    }

    #[test]
    fn pgm_constant_slice_is_constant() {
        let g = VolumeGeometry::centered(2, 4, 3, 1.0).unwrap();
        let vol = VoxelVolume::filled(g, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        export_slice_pgm(&vol, 1, (0.0, 1.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let body = &bytes[b"P5\n4 3\n65535\n".len()..];
        assert_eq!(body.len(), 2 * 4 * 3);
        let q = ((0.25f64 * 65535.0).round() as u16).to_be_bytes();
        for px in body.chunks_exact(2) {
            assert_eq!(px, q);
        }
    }

    #[test]
    fn csv_emitters_write_one_header_and_data_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profile1D::new(vec![0.0, 2.0, 0.0], 0.5, 1).unwrap();
        let path = dir.path().join("p.csv");
        write_profile_csv(&p, &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "position_mm,value\n-0.5,0\n0,2\n0.5,0\n"
        );

        let mtf = MtfCurve { frequencies: vec![0.0, 0.25], values: vec![1.0, 0.5] };
        let path = dir.path().join("m.csv");
        write_mtf_csv(&mtf, &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "frequency_per_mm,mtf\n0,1\n0.25,0.5\n"
        );

        let asf = AsfCurve { plane_offsets: vec![-1.0, 0.0], values: vec![0.25, 1.0] };
        let path = dir.path().join("a.csv");
        write_asf_csv(&asf, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "offset_mm,asf\n-1,0.25\n0,1\n");
    }

    #[test]
    fn sha256_matches_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_is_deterministic_and_round_trips() {
        let mut m = Manifest::new("config body", 42);
        m.insert_file("z_last.raw", b"zz");
        m.insert_file("a_first.meta", b"aa");
        let s1 = m.to_toml_string();
        let mut m2 = Manifest::new("config body", 42);
        m2.insert_file("a_first.meta", b"aa");
        m2.insert_file("z_last.raw", b"zz");
        assert_eq!(s1, m2.to_toml_string(), "insertion order must not matter");
        // Files section is sorted by name.
        let a = s1.find("a_first.meta").unwrap();
        let z = s1.find("z_last.raw").unwrap();
        assert!(a < z);
        assert_eq!(Manifest::parse(&s1).unwrap(), m);
        assert!(matches!(Manifest::parse("bogus ["), Err(IoError::Parse(_))));
    }

    #[test]
    fn phantom_description_parses_comments_and_any_key_order() {
        let text = "\
# two shapes
cx=0 cy=0 cz=0 a=1 b=1 c=1 mu=0.02
mu=0.3 c=3 b=5 a=3 cz=0 cy=0 cx=-30   # trailing comment
";
        let ph = parse_phantom_str(text).unwrap();
        assert_eq!(ph.ellipsoids.len(), 2);
        assert_eq!(ph.ellipsoids[0].mu, 0.02);
        assert_eq!(ph.ellipsoids[1].center.x, -30.0);
        assert_eq!(ph.ellipsoids[1].b, 5.0);
    }

    #[test]
    fn phantom_description_rejects_malformed_lines() {
        let line_err = |text: &str| match parse_phantom_str(text) {
            Err(IoError::PhantomSyntax { line, .. }) => line,
            other => panic!("expected syntax error, got {other:?}"),
        };
        assert_eq!(line_err("cx=0 cy=0 cz=0 a=1 b=1 c=1"), 1); // missing mu
        assert_eq!(line_err("\ncx=0 cy=0 cz=0 a=1 b=1 c=1 mu=x"), 2); // bad number
        assert_eq!(line_err("cx=0 cx=1 cy=0 cz=0 a=1 b=1 c=1 mu=0"), 1); // dup
        assert_eq!(line_err("cx=0 cy=0 cz=0 a=1 b=1 c=1 mu=0 r=2"), 1); // unknown
        assert_eq!(line_err("hello"), 1); // not key=value
        assert_eq!(line_err("cx=0 cy=0 cz=0 a=0 b=1 c=1 mu=0.1"), 1); // bad axis
        // No shapes at all is rejected too.
        assert!(matches!(
            parse_phantom_str("# nothing\n\n"),
            Err(IoError::InvalidField(_))
        ));
    }
}
