//! Bit-exact file formats: binary PPM images, PFM float rasters, JSON
//! manifests, and detector-output JSON lines. Parsers validate and reject;
//! they never guess.

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};
use crate::raster::Raster;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn from_raster(r: &Raster) -> Result<Image8> {
        if r.channels != 3 {
            return Err(Error::invalid_input("image must have 3 channels"));
        }
        let data = r
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect();
        Ok(Image8 {
            height: r.height,
            width: r.width,
            data,
        })
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }
}

/// Single-channel 32-bit float raster, row-major top-down in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn from_raster(r: &Raster) -> Result<FloatRaster> {
        if r.channels != 1 {
            return Err(Error::invalid_input("float raster must have 1 channel"));
        }
        Ok(FloatRaster {
            height: r.height,
            width: r.width,
            data: r.data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

pub fn write_ppm_bytes(img: &Image8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Parse a binary PPM. Header tokens may be separated by any whitespace and
/// `#` comments; maxval must be 255.
pub fn read_ppm_bytes(bytes: &[u8]) -> Result<Image8> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::parse("expected P6 magic", 0));
    }
    pos += 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::parse(format!("unsupported maxval {maxval}"), pos));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse("missing whitespace before pixel data", pos));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::parse("image dimensions overflow", pos))?;
    let actual = bytes.len() - pos;
    if actual != expected {
        return Err(Error::parse(
            format!("expected {expected} payload bytes, found {actual}"),
            pos,
        ));
    }
    Ok(Image8 {
        height,
        width,
        data: bytes[pos..].to_vec(),
    })
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::parse("expected integer in header", start));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).unwrap();
    let value: usize = text
        .parse()
        .map_err(|_| Error::parse("integer out of range", start))?;
    if value == 0 {
        return Err(Error::parse("zero dimension", start));
    }
    Ok(value)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image8) -> Result<()> {
    std::fs::write(path, write_ppm_bytes(img))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image8> {
    read_ppm_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// PFM (grayscale "Pf", little-endian, bottom-up rows)
// ---------------------------------------------------------------------------

pub fn write_pfm_bytes(r: &FloatRaster) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", r.width, r.height).into_bytes();
    for row in (0..r.height).rev() {
        for col in 0..r.width {
            out.extend_from_slice(&r.data[row * r.width + col].to_le_bytes());
        }
    }
    out
}

pub fn read_pfm_bytes(bytes: &[u8]) -> Result<FloatRaster> {
    if bytes.len() < 2 || &bytes[0..2] != b"Pf" {
        return Err(Error::parse("expected Pf magic", 0));
    }
    let mut pos = 2usize;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    // scale token: a float; negative means little-endian
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let scale: f64 = std::str::from_utf8(&bytes[start..pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse("bad scale token", start))?;
    if scale >= 0.0 {
        return Err(Error::parse("big-endian PFM not supported", start));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse("missing whitespace before pixel data", pos));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse("raster dimensions overflow", pos))?;
    if bytes.len() - pos != expected {
        return Err(Error::parse(
            format!(
                "expected {expected} payload bytes, found {}",
                bytes.len() - pos
            ),
            pos,
        ));
    }
    let mut data = vec![0.0f32; width * height];
    let mut cur = pos;
    for row in (0..height).rev() {
        for col in 0..width {
            let b = [bytes[cur], bytes[cur + 1], bytes[cur + 2], bytes[cur + 3]];
            data[row * width + col] = f32::from_le_bytes(b);
            cur += 4;
        }
    }
    Ok(FloatRaster {
        height,
        width,
        data,
    })
}

pub fn write_float_raster(path: impl AsRef<Path>, r: &FloatRaster) -> Result<()> {
    std::fs::write(path, write_pfm_bytes(r))?;
    Ok(())
}

pub fn read_float_raster(path: impl AsRef<Path>) -> Result<FloatRaster> {
    read_pfm_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraParams {
    pub fn from_camera(cam: &OrbitCamera) -> Self {
        CameraParams {
            yaw: cam.yaw,
            pitch: cam.pitch,
            radius: cam.radius,
            fov: cam.fov_y,
            cx: cam.cx,
            cy: cam.cy,
        }
    }

    pub fn to_camera(&self, height: usize, width: usize) -> OrbitCamera {
        let mut cam = OrbitCamera::new(height, width);
        cam.yaw = self.yaw;
        cam.pitch = self.pitch;
        cam.radius = self.radius;
        cam.fov_y = self.fov;
        cam.cx = self.cx;
        cam.cy = self.cy;
        cam.near = self.radius - 1.9;
        cam.far = self.radius + 1.9;
        cam
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSplit {
    Front,
    Back,
}

/// Back iff the yaw wrapped to (-pi, pi] has magnitude >= pi/2.
pub fn split_for_yaw(yaw: f64) -> ViewSplit {
    let mut w = yaw % std::f64::consts::TAU;
    if w > std::f64::consts::PI {
        w -= std::f64::consts::TAU;
    }
    if w <= -std::f64::consts::PI {
        w += std::f64::consts::TAU;
    }
    if w.abs() >= std::f64::consts::FRAC_PI_2 {
        ViewSplit::Back
    } else {
        ViewSplit::Front
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub rgb: String,
    pub mask: String,
    pub camera: CameraParams,
    pub split: ViewSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root: String,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::invalid_input(format!(
                    "duplicate record id {}",
                    rec.id
                )));
            }
            if rec.split != split_for_yaw(rec.camera.yaw) {
                return Err(Error::invalid_input(format!(
                    "record {} split tag disagrees with yaw {}",
                    rec.id, rec.camera.yaw
                )));
            }
        }
        Ok(())
    }
}

pub fn manifest_from_json(bytes: &[u8]) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(bytes)?;
    m.validate()?;
    Ok(m)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    manifest_from_json(&std::fs::read(path)?)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &Manifest) -> Result<()> {
    m.validate()?;
    std::fs::write(path, serde_json::to_vec_pretty(m)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Detector output records (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorCamera {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<[[f64; 2]; 5]>,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub head_box: Option<BoxRecord>,
    pub camera: DetectorCamera,
}

pub fn detector_records_from_jsonl(bytes: &[u8]) -> Result<Vec<DetectorRecord>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in bytes.split(|&b| b == b'\n') {
        let trimmed: &[u8] = line.strip_suffix(b"\r").unwrap_or(line);
        if !trimmed.iter().all(|b| b.is_ascii_whitespace()) {
            let rec: DetectorRecord = serde_json::from_slice(trimmed)
                .map_err(|e| Error::parse(format!("bad detector record: {e}"), offset))?;
            out.push(rec);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

pub fn read_detector_records(path: impl AsRef<Path>) -> Result<Vec<DetectorRecord>> {
    detector_records_from_jsonl(&std::fs::read(path)?)
}

pub fn write_detector_records(path: impl AsRef<Path>, recs: &[DetectorRecord]) -> Result<()> {
    let mut out = Vec::new();
    for rec in recs {
        out.extend_from_slice(&serde_json::to_vec(rec)?);
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn one_black_pixel_ppm() {
        let bytes = b"P6\n1 1\n255\n\x00\x00\x00";
        let img = read_ppm_bytes(bytes).unwrap();
        assert_eq!(img.width, 1);
        assert_eq!(img.height, 1);
        assert_eq!(img.data, vec![0, 0, 0]);
    }

    #[test]
    fn ppm_round_trip_random() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..10 {
            let w = rng.gen_range(1..9);
            let h = rng.gen_range(1..9);
            let data: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
            let img = Image8 {
                height: h,
                width: w,
                data,
            };
            let bytes = write_ppm_bytes(&img);
            assert_eq!(read_ppm_bytes(&bytes).unwrap(), img);
            assert_eq!(write_ppm_bytes(&read_ppm_bytes(&bytes).unwrap()), bytes);
        }
    }

    #[test]
    fn truncated_ppm_names_byte_counts() {
        let bytes = b"P6\n2 2\n255\n\x00\x00\x00";
        let err = read_ppm_bytes(bytes).unwrap_err().to_string();
        assert!(err.contains("12"), "{err}");
        assert!(err.contains('3'), "{err}");
    }

    #[test]
    fn ppm_rejects_garbage() {
        assert!(read_ppm_bytes(b"P5\n1 1\n255\n\x00").is_err());
        assert!(read_ppm_bytes(b"P6\n0 1\n255\n").is_err());
        assert!(read_ppm_bytes(b"P6\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn pfm_single_value_encoding() {
        let r = FloatRaster {
            height: 1,
            width: 1,
            data: vec![0.5],
        };
        let bytes = write_pfm_bytes(&r);
        assert_eq!(&bytes[..bytes.len() - 4], b"Pf\n1 1\n-1.0\n");
        assert_eq!(&bytes[bytes.len() - 4..], &0.5f32.to_le_bytes());
        assert_eq!(read_pfm_bytes(&bytes).unwrap(), r);
    }

    #[test]
    fn pfm_round_trip_preserves_bits_and_row_order() {
        let r = FloatRaster {
            height: 2,
            width: 3,
            data: vec![0.0, 1.0, -2.5, 3.25, f32::MIN_POSITIVE, 1e30],
        };
        let back = read_pfm_bytes(&write_pfm_bytes(&r)).unwrap();
        assert_eq!(back.data.len(), r.data.len());
        for (a, b) in r.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pfm_rejects_size_mismatch() {
        let r = FloatRaster {
            height: 2,
            width: 2,
            data: vec![0.0; 4],
        };
        let mut bytes = write_pfm_bytes(&r);
        bytes.pop();
        assert!(read_pfm_bytes(&bytes).is_err());
        assert!(read_pfm_bytes(b"Px\n1 1\n-1.0\n\x00\x00\x00\x00").is_err());
    }

    fn sample_manifest() -> Manifest {
        let cam = CameraParams {
            yaw: 0.3,
            pitch: 0.0,
            radius: 2.7,
            fov: 0.7,
            cx: 0.0,
            cy: 0.0,
        };
        Manifest {
            root: ".".into(),
            records: vec![ManifestRecord {
                id: "v000".into(),
                rgb: "v000.ppm".into(),
                mask: "v000_mask.pfm".into(),
                camera: cam,
                split: ViewSplit::Front,
            }],
        }
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let m = sample_manifest();
        let json = serde_json::to_vec(&m).unwrap();
        assert_eq!(manifest_from_json(&json).unwrap(), m);

        let mut dup = m.clone();
        dup.records.push(dup.records[0].clone());
        assert!(dup.validate().is_err());
    }

    #[test]
    fn yaw_at_ninety_degrees_is_back() {
        assert_eq!(split_for_yaw(std::f64::consts::FRAC_PI_2), ViewSplit::Back);
        assert_eq!(split_for_yaw(-std::f64::consts::FRAC_PI_2), ViewSplit::Back);
        assert_eq!(split_for_yaw(0.2), ViewSplit::Front);
        assert_eq!(split_for_yaw(std::f64::consts::PI), ViewSplit::Back);
        // yaw is wrapped before classification
        assert_eq!(split_for_yaw(std::f64::consts::TAU - 0.2), ViewSplit::Front);
        let mut m = sample_manifest();
        m.records[0].camera.yaw = 2.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn detector_jsonl_round_trip() {
        let recs = vec![
            DetectorRecord {
                id: "a".into(),
                landmarks: Some([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0], [9.0, 10.0]]),
                head_box: Some(BoxRecord {
                    cx: 32.0,
                    cy: 30.0,
                    w: 40.0,
                    h: 40.0,
                }),
                camera: DetectorCamera {
                    yaw: 0.1,
                    pitch: 0.0,
                    radius: 2.7,
                    fov: 0.7,
                },
            },
            DetectorRecord {
                id: "b".into(),
                landmarks: None,
                head_box: Some(BoxRecord {
                    cx: 10.0,
                    cy: 12.0,
                    w: 20.0,
                    h: 22.0,
                }),
                camera: DetectorCamera {
                    yaw: 3.0,
                    pitch: 0.1,
                    radius: 2.7,
                    fov: 0.7,
                },
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.jsonl");
        write_detector_records(&path, &recs).unwrap();
        assert_eq!(read_detector_records(&path).unwrap(), recs);
        assert!(detector_records_from_jsonl(b"{not json}\n").is_err());
    }
}
