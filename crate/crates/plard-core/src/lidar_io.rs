//! LiDAR point-cloud and calibration I/O plus projection onto the image plane.
//!
//! File formats follow the KITTI conventions: clouds are headerless binary
//! streams of little-endian `f32` quadruples `(x, y, z, reflectance)`, and
//! calibration files are ASCII `KEY: v1 v2 ...` lines carrying the camera
//! projection (`P2`), rectification (`R0_rect`) and sensor-to-camera
//! (`Tr_velo_to_cam`) matrices in row-major order.

use thiserror::Error;

/// Byte length of one binary point record (four little-endian `f32`s).
pub const POINT_RECORD_BYTES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum LidarIoError {
    #[error("truncated point record: {len} bytes is not a multiple of {POINT_RECORD_BYTES}")]
    TruncatedRecord { len: usize },
    #[error("non-finite value in point {index}")]
    NonFiniteValue { index: usize },
    #[error("calibration key missing: {key}")]
    MissingKey { key: &'static str },
    #[error("calibration key {key} carries {got} values, expected {expected}")]
    WrongArity {
        key: String,
        expected: usize,
        got: usize,
    },
}

/// One LiDAR return in the sensor frame. `z` is the altitude axis
/// (up-positive); reflectance is unitless in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub reflectance: f32,
}

/// A set of 3D LiDAR returns, in acquisition order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Camera calibration: projection `proj` (3x4), rectification `rect` (3x3)
/// and sensor-to-camera transform `extrinsic` (3x4), all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub proj: [[f64; 4]; 3],
    pub rect: [[f64; 3]; 3],
    pub extrinsic: [[f64; 4]; 3],
}

impl CalibrationSet {
    /// Determinant of the rectification matrix; the set is degenerate when
    /// this is (near) zero.
    pub fn rect_determinant(&self) -> f64 {
        let m = &self.rect;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_valid(&self) -> bool {
        self.rect_determinant().abs() > 1e-9 && self.proj[0][0] != 0.0 && self.proj[1][1] != 0.0
    }
}

/// A LiDAR point landed on the image plane. `depth` is the camera-frame
/// forward distance (always positive for retained points); `altitude` carries
/// the sensor-frame `z` of the source point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub altitude: f64,
    pub source_index: usize,
}

/// Decode a binary cloud blob: consecutive 16-byte records of little-endian
/// `f32` `(x, y, z, reflectance)`.
pub fn read_point_cloud(bytes: &[u8]) -> Result<PointCloud, LidarIoError> {
    if bytes.len() % POINT_RECORD_BYTES != 0 {
        return Err(LidarIoError::TruncatedRecord { len: bytes.len() });
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD_BYTES);
    for (index, record) in bytes.chunks_exact(POINT_RECORD_BYTES).enumerate() {
        let mut vals = [0.0f32; 4];
        for (v, word) in vals.iter_mut().zip(record.chunks_exact(4)) {
            *v = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(LidarIoError::NonFiniteValue { index });
        }
        points.push(LidarPoint {
            x: vals[0],
            y: vals[1],
            z: vals[2],
            reflectance: vals[3],
        });
    }
    Ok(PointCloud { points })
}

/// Encode a cloud back into the binary record format read by
/// [`read_point_cloud`].
pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.points.len() * POINT_RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn parse_matrix_values(key: &str, rest: &str, expected: usize) -> Result<Vec<f64>, LidarIoError> {
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(|tok| tok.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| LidarIoError::WrongArity {
            key: key.to_string(),
            expected,
            got: 0,
        })?;
    if vals.len() != expected {
        return Err(LidarIoError::WrongArity {
            key: key.to_string(),
            expected,
            got: vals.len(),
        });
    }
    Ok(vals)
}

/// Parse a KITTI-style calibration text. Requires `P2` (12 values),
/// `R0_rect` (9) and `Tr_velo_to_cam` (12); other keys are ignored.
pub fn read_calibration(text: &str) -> Result<CalibrationSet, LidarIoError> {
    let mut proj: Option<[[f64; 4]; 3]> = None;
    let mut rect: Option<[[f64; 3]; 3]> = None;
    let mut extrinsic: Option<[[f64; 4]; 3]> = None;

    for line in text.lines() {
        let line = line.trim();
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => {
                let v = parse_matrix_values("P2", rest, 12)?;
                let mut m = [[0.0; 4]; 3];
                for r in 0..3 {
                    for c in 0..4 {
                        m[r][c] = v[r * 4 + c];
                    }
                }
                proj = Some(m);
            }
            "R0_rect" => {
                let v = parse_matrix_values("R0_rect", rest, 9)?;
                let mut m = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        m[r][c] = v[r * 3 + c];
                    }
                }
                rect = Some(m);
            }
            "Tr_velo_to_cam" => {
                let v = parse_matrix_values("Tr_velo_to_cam", rest, 12)?;
                let mut m = [[0.0; 4]; 3];
                for r in 0..3 {
                    for c in 0..4 {
                        m[r][c] = v[r * 4 + c];
                    }
                }
                extrinsic = Some(m);
            }
            _ => {}
        }
    }

    Ok(CalibrationSet {
        proj: proj.ok_or(LidarIoError::MissingKey { key: "P2" })?,
        rect: rect.ok_or(LidarIoError::MissingKey { key: "R0_rect" })?,
        extrinsic: extrinsic.ok_or(LidarIoError::MissingKey {
            key: "Tr_velo_to_cam",
        })?,
    })
}

/// Serialize a calibration set in the text format read by
/// [`read_calibration`]. Values print in shortest round-trip form.
pub fn write_calibration(calib: &CalibrationSet) -> String {
    fn row_major<const N: usize>(rows: &[[f64; N]]) -> String {
        rows.iter()
            .flat_map(|r| r.iter())
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        row_major(&calib.proj),
        row_major(&calib.rect),
        row_major(&calib.extrinsic),
    )
}

/// Project every cloud point through `extrinsic`, `rect` and `proj`, keeping
/// those that land in front of the camera and inside the half-open pixel
/// domain `[0, width) x [0, height)`. Output preserves input order.
pub fn project(
    cloud: &PointCloud,
    calib: &CalibrationSet,
    width: usize,
    height: usize,
) -> Vec<ProjectedPoint> {
    assert!(width > 0 && height > 0, "image dimensions must be positive");
    let mut out = Vec::new();
    for (source_index, p) in cloud.points.iter().enumerate() {
        let xyz1 = [p.x as f64, p.y as f64, p.z as f64, 1.0];

        let mut cam = [0.0; 3];
        for r in 0..3 {
            cam[r] = (0..4).map(|c| calib.extrinsic[r][c] * xyz1[c]).sum();
        }
        let mut rectified = [0.0; 3];
        for r in 0..3 {
            rectified[r] = (0..3).map(|c| calib.rect[r][c] * cam[c]).sum();
        }
        let rect1 = [rectified[0], rectified[1], rectified[2], 1.0];
        let mut img = [0.0; 3];
        for r in 0..3 {
            img[r] = (0..4).map(|c| calib.proj[r][c] * rect1[c]).sum();
        }

        let s = img[2];
        if s <= 0.0 {
            continue; // behind the camera
        }
        let u = img[0] / s;
        let v = img[1] / s;
        if u < 0.0 || u >= width as f64 || v < 0.0 || v >= height as f64 {
            continue;
        }
        out.push(ProjectedPoint {
            u,
            v,
            depth: s,
            altitude: p.z as f64,
            source_index,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pinhole(f: f64, cx: f64, cy: f64) -> CalibrationSet {
        CalibrationSet {
            proj: [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]],
            rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            extrinsic: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
        }
    }

    #[test]
    fn decodes_single_record() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = read_point_cloud(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(
            cloud.points[0],
            LidarPoint {
                x: 1.0,
                y: 2.0,
                z: 3.0,
                reflectance: 0.5
            }
        );
    }

    #[test]
    fn empty_blob_is_empty_cloud() {
        assert!(read_point_cloud(&[]).unwrap().is_empty());
    }

    #[test]
    fn rejects_truncated_blob() {
        assert_eq!(
            read_point_cloud(&[0u8; 24]),
            Err(LidarIoError::TruncatedRecord { len: 24 })
        );
    }

    #[test]
    fn rejects_non_finite_floats() {
        let mut bytes = Vec::new();
        for v in [1.0f32, f32::NAN, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(
            read_point_cloud(&bytes),
            Err(LidarIoError::NonFiniteValue { index: 0 })
        );
    }

    #[test]
    fn cloud_roundtrip_is_identity() {
        let cloud = PointCloud {
            points: vec![
                LidarPoint {
                    x: 1.5,
                    y: -2.25,
                    z: 0.125,
                    reflectance: 0.75,
                },
                LidarPoint {
                    x: -10.0,
                    y: 4.0,
                    z: -1.0,
                    reflectance: 0.0,
                },
            ],
        };
        assert_eq!(read_point_cloud(&write_point_cloud(&cloud)).unwrap(), cloud);
    }

    #[test]
    fn parses_identity_calibration() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let calib = read_calibration(text).unwrap();
        assert_eq!(calib.rect, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(calib.proj[0], [1.0, 0.0, 0.0, 0.0]);
        assert!(calib.is_valid() || calib.proj[0][0] != 0.0);
    }

    #[test]
    fn missing_key_is_reported() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert_eq!(
            read_calibration(text),
            Err(LidarIoError::MissingKey { key: "R0_rect" })
        );
    }

    #[test]
    fn wrong_value_count_is_reported() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert_eq!(
            read_calibration(text),
            Err(LidarIoError::WrongArity {
                key: "P2".to_string(),
                expected: 12,
                got: 11
            })
        );
    }

    #[test]
    fn ignores_unknown_keys() {
        let text = "P0: 9 9 9\nP2: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    R0_rect: 1 0 0 0 1 0 0 0 1\n\
                    Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(read_calibration(text).is_ok());
    }

    #[test]
    fn calibration_roundtrip() {
        let calib = pinhole(721.5377, 609.5593, 172.854);
        assert_eq!(read_calibration(&write_calibration(&calib)).unwrap(), calib);
    }

    #[test]
    fn optical_axis_point_lands_on_principal_point() {
        let calib = pinhole(100.0, 32.0, 24.0);
        let cloud = PointCloud {
            points: vec![LidarPoint {
                x: 0.0,
                y: 0.0,
                z: 7.5,
                reflectance: 0.0,
            }],
        };
        let proj = project(&cloud, &calib, 64, 48);
        assert_eq!(proj.len(), 1);
        assert!((proj[0].u - 32.0).abs() < 1e-12);
        assert!((proj[0].v - 24.0).abs() < 1e-12);
        assert!((proj[0].depth - 7.5).abs() < 1e-12);
        assert!((proj[0].altitude - 7.5).abs() < 1e-12);
    }

    #[test]
    fn points_behind_camera_are_dropped() {
        let calib = pinhole(100.0, 32.0, 24.0);
        let cloud = PointCloud {
            points: vec![LidarPoint {
                x: 0.0,
                y: 0.0,
                z: -5.0,
                reflectance: 0.0,
            }],
        };
        assert!(project(&cloud, &calib, 64, 48).is_empty());
    }

    /// Independent oracle: redo the projection chain with unrolled scalar
    /// arithmetic (no loops over matrix rows) for each point.
    fn project_oracle(
        p: LidarPoint,
        calib: &CalibrationSet,
        width: usize,
        height: usize,
    ) -> Option<(f64, f64, f64)> {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        let e = &calib.extrinsic;
        let cx = e[0][0] * x + e[0][1] * y + e[0][2] * z + e[0][3];
        let cy = e[1][0] * x + e[1][1] * y + e[1][2] * z + e[1][3];
        let cz = e[2][0] * x + e[2][1] * y + e[2][2] * z + e[2][3];
        let r = &calib.rect;
        let rx = r[0][0] * cx + r[0][1] * cy + r[0][2] * cz;
        let ry = r[1][0] * cx + r[1][1] * cy + r[1][2] * cz;
        let rz = r[2][0] * cx + r[2][1] * cy + r[2][2] * cz;
        let q = &calib.proj;
        let su = q[0][0] * rx + q[0][1] * ry + q[0][2] * rz + q[0][3];
        let sv = q[1][0] * rx + q[1][1] * ry + q[1][2] * rz + q[1][3];
        let s = q[2][0] * rx + q[2][1] * ry + q[2][2] * rz + q[2][3];
        if s <= 0.0 {
            return None;
        }
        let (u, v) = (su / s, sv / s);
        if u < 0.0 || u >= width as f64 || v < 0.0 || v >= height as f64 {
            return None;
        }
        Some((u, v, s))
    }

    #[test]
    fn random_cloud_matches_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let calib = CalibrationSet {
            proj: [
                [120.0, 0.0, 80.0, 0.3],
                [0.0, 118.0, 60.0, -0.2],
                [0.0, 0.0, 1.0, 0.05],
            ],
            rect: [
                [0.999, -0.02, 0.01],
                [0.02, 0.998, -0.015],
                [-0.01, 0.015, 1.001],
            ],
            extrinsic: [
                [0.0, -1.0, 0.0, 0.1],
                [0.0, 0.0, -1.0, 1.65],
                [1.0, 0.0, 0.0, -0.05],
            ],
        };
        let points: Vec<LidarPoint> = (0..100)
            .map(|_| LidarPoint {
                x: rng.gen_range(-5.0..40.0),
                y: rng.gen_range(-20.0..20.0),
                z: rng.gen_range(-2.0..3.0),
                reflectance: rng.gen_range(0.0..1.0),
            })
            .collect();
        let cloud = PointCloud { points };
        let projected = project(&cloud, &calib, 160, 120);

        let mut expected = Vec::new();
        for (i, p) in cloud.points.iter().enumerate() {
            if let Some((u, v, s)) = project_oracle(*p, &calib, 160, 120) {
                expected.push((i, u, v, s));
            }
        }
        assert_eq!(projected.len(), expected.len());
        assert!(!projected.is_empty(), "test scene should project something");
        for (got, (i, u, v, s)) in projected.iter().zip(expected) {
            assert_eq!(got.source_index, i);
            assert!((got.u - u).abs() < 1e-9);
            assert!((got.v - v).abs() < 1e-9);
            assert!((got.depth - s).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_scale_consistent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let calib = pinhole(90.0, 48.0, 36.0);
        let cloud = PointCloud {
            points: (0..50)
                .map(|_| LidarPoint {
                    x: rng.gen_range(-3.0..3.0),
                    y: rng.gen_range(-3.0..3.0),
                    z: rng.gen_range(0.5..20.0),
                    reflectance: 0.0,
                })
                .collect(),
        };
        for scale in [0.25, 3.0, 117.0] {
            let mut scaled = calib.clone();
            for row in scaled.proj.iter_mut() {
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            let a = project(&cloud, &calib, 96, 72);
            let b = project(&cloud, &scaled, 96, 72);
            assert_eq!(a.len(), b.len());
            for (pa, pb) in a.iter().zip(&b) {
                assert!((pa.u - pb.u).abs() < 1e-9);
                assert!((pa.v - pb.v).abs() < 1e-9);
            }
        }
    }
}
