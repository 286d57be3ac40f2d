//! Deterministic procedural scenes: paired camera image, LiDAR cloud,
//! calibration, road mask and category, generated at desk scale.
//!
//! The sensor frame has x forward, y left, z up, with the origin on the
//! ground directly below the sensors, so point altitudes measure height
//! above the road surface. The camera looks along +x from `cam_height`;
//! LiDAR rays fan out from `sensor_height` over an azimuth-elevation grid.
//! Lighting corruptions (shadow polygons, overexposure, brightness) touch
//! only the rendered image, never the cloud.

mod geom;

pub use geom::{point_in_polygon, Prism, Surface};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Category, Label, RoadMask};
use crate::lidar_io::{CalibrationSet, LidarPoint, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("camera or lidar origin sits inside obstacle {0}")]
    DegenerateGeometry(usize),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

/// Pinhole camera in the sensor frame, looking along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_height: f64,
}

impl CameraSpec {
    pub fn calibration(&self) -> CalibrationSet {
        CalibrationSet {
            proj: [
                [self.focal, 0.0, self.cx, 0.0],
                [0.0, self.focal, self.cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            // Sensor -> camera: right = -y, down = -z, forward = +x,
            // camera centered cam_height above the ground origin.
            extrinsic: [
                [0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, self.cam_height],
                [1.0, 0.0, 0.0, 0.0],
            ],
        }
    }
}

/// Azimuth-elevation ray fan of the LiDAR unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub azimuth_start_deg: f64,
    pub azimuth_end_deg: f64,
    pub azimuth_step_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub rings: usize,
    pub sensor_height: f64,
    /// Uniform altitude noise amplitude (meters), applied to hit z only.
    pub altitude_noise: f64,
    pub max_range: f64,
}

impl Default for LidarRig {
    fn default() -> Self {
        Self {
            azimuth_start_deg: -50.0,
            azimuth_end_deg: 50.0,
            azimuth_step_deg: 0.2,
            elevation_min_deg: -26.0,
            elevation_max_deg: -1.0,
            rings: 64,
            sensor_height: 1.73,
            altitude_noise: 0.01,
            max_range: 80.0,
        }
    }
}

/// Road strip: a curved centerline with constant half width on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub x_start: f64,
    pub x_end: f64,
    pub center_y: f64,
    /// Quadratic lateral drift coefficient of the centerline.
    pub curvature: f64,
    pub half_width: f64,
}

impl RoadSpec {
    pub fn centerline(&self, x: f64) -> f64 {
        self.center_y + self.curvature * (x - self.x_start).powi(2)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_start
            && x <= self.x_end
            && (y - self.centerline(x)).abs() <= self.half_width
    }

    /// Closed polygon tracing both road edges, for area oracles.
    pub fn polygon(&self, samples: usize) -> Vec<(f64, f64)> {
        let mut poly = Vec::with_capacity(2 * samples);
        for i in 0..samples {
            let x = self.x_start + (self.x_end - self.x_start) * i as f64 / (samples - 1) as f64;
            poly.push((x, self.centerline(x) - self.half_width));
        }
        for i in (0..samples).rev() {
            let x = self.x_start + (self.x_end - self.x_start) * i as f64 / (samples - 1) as f64;
            poly.push((x, self.centerline(x) + self.half_width));
        }
        poly
    }
}

/// Multiplicative darkening over a ground-space polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPolygon {
    pub vertices: Vec<(f64, f64)>,
    pub darkening: f64,
}

/// Image-space ellipse clamped to white.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverexposurePatch {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub brightness: f64,
    pub shadows: Vec<ShadowPolygon>,
    pub overexposure: Vec<OverexposurePatch>,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            brightness: 1.0,
            shadows: Vec::new(),
            overexposure: Vec::new(),
        }
    }
}

/// Complete description of one scene; generation is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub category: Category,
    pub road: RoadSpec,
    pub obstacles: Vec<Prism>,
    pub lighting: Lighting,
    pub lidar: LidarRig,
    pub camera: CameraSpec,
}

/// Plain 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbData {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Everything one scene contributes: image, cloud, calibration, ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub image: RgbData,
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub gt: RoadMask,
    pub category: Category,
}

/// Which surface produced each LiDAR return, index-aligned with the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTrace {
    pub point_surfaces: Vec<SurfaceKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Ground,
    Road,
    Obstacle,
}

/// 53-bit hash noise in [0, 1), stable across platforms.
fn cell_noise(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn surface_of(s: Surface) -> SurfaceKind {
    match s {
        Surface::Ground => SurfaceKind::Ground,
        Surface::Road => SurfaceKind::Road,
        Surface::Obstacle(_) => SurfaceKind::Obstacle,
    }
}

/// Lane-marking test on road-local coordinates. Categories share geometry
/// and differ only here: UM marks the edges, UMM adds a dashed center
/// separator, UU is unmarked.
fn is_marking(category: Category, road: &RoadSpec, x: f64, y: f64) -> bool {
    if !road.contains(x, y) {
        return false;
    }
    let off = (y - road.centerline(x)).abs();
    let edge_band = off >= road.half_width - 0.35 && off <= road.half_width - 0.10;
    match category {
        Category::UU => false,
        Category::UM => edge_band,
        Category::UMM => {
            let dashed = off <= 0.10 && ((x / 2.0).floor() as i64) % 2 == 0;
            edge_band || dashed
        }
    }
}

fn validate(spec: &SceneSpec) -> Result<(), SynthError> {
    for (i, p) in spec.obstacles.iter().enumerate() {
        if p.height <= 0.3 {
            return Err(SynthError::InvalidSpec(format!(
                "obstacle {i} height {} must exceed 0.3 m",
                p.height
            )));
        }
        for origin in [
            [0.0, 0.0, spec.camera.cam_height],
            [0.0, 0.0, spec.lidar.sensor_height],
        ] {
            if p.contains(origin) {
                return Err(SynthError::DegenerateGeometry(i));
            }
        }
    }
    if spec.road.half_width <= 0.0 || spec.road.x_end <= spec.road.x_start {
        return Err(SynthError::InvalidSpec("degenerate road strip".into()));
    }
    Ok(())
}

/// Generate the bundle plus per-point surface provenance.
pub fn generate_traced(spec: &SceneSpec) -> Result<(SceneBundle, SceneTrace), SynthError> {
    validate(spec)?;
    let is_road = |x: f64, y: f64| spec.road.contains(x, y);

    // LiDAR sweep. The ray grid is fixed by the rig; the seeded RNG only
    // perturbs altitudes and reflectances.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut surfaces = Vec::new();
    let origin = [0.0, 0.0, spec.lidar.sensor_height];
    let steps = ((spec.lidar.azimuth_end_deg - spec.lidar.azimuth_start_deg)
        / spec.lidar.azimuth_step_deg)
        .round() as usize;
    for ring in 0..spec.lidar.rings {
        let f = if spec.lidar.rings > 1 {
            ring as f64 / (spec.lidar.rings - 1) as f64
        } else {
            0.0
        };
        let elevation = (spec.lidar.elevation_min_deg
            + f * (spec.lidar.elevation_max_deg - spec.lidar.elevation_min_deg))
            .to_radians();
        for step in 0..=steps {
            let azimuth = (spec.lidar.azimuth_start_deg
                + step as f64 * spec.lidar.azimuth_step_deg)
                .to_radians();
            let dir = [
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            ];
            let Some(hit) = geom::first_hit(origin, dir, &spec.obstacles, spec.lidar.max_range, is_road)
            else {
                continue;
            };
            let noise = if spec.lidar.altitude_noise > 0.0 {
                rng.gen_range(-spec.lidar.altitude_noise..=spec.lidar.altitude_noise)
            } else {
                0.0
            };
            let reflectance = match hit.surface {
                Surface::Road => 0.45,
                Surface::Ground => 0.30,
                Surface::Obstacle(_) => 0.70,
            } + rng.gen_range(-0.05..0.05);
            points.push(LidarPoint {
                x: hit.point[0] as f32,
                y: hit.point[1] as f32,
                z: (hit.point[2] + noise) as f32,
                reflectance: (reflectance as f32).clamp(0.0, 1.0),
            });
            surfaces.push(surface_of(hit.surface));
        }
    }
    let cloud = PointCloud { points };

    // Camera render and ground truth from the same geometry.
    let cam = &spec.camera;
    let cam_origin = [0.0, 0.0, cam.cam_height];
    let mut pixels = vec![0u8; cam.width * cam.height * 3];
    let mut labels = vec![Label::NonRoad; cam.width * cam.height];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let xc = (u as f64 + 0.5 - cam.cx) / cam.focal;
            let yc = (v as f64 + 0.5 - cam.cy) / cam.focal;
            let norm = (1.0 + xc * xc + yc * yc).sqrt();
            let dir = [1.0 / norm, -xc / norm, -yc / norm];
            let hit = geom::first_hit(cam_origin, dir, &spec.obstacles, 300.0, is_road);

            let mut rgb = match hit {
                None => [0.72, 0.80, 0.94], // sky
                Some(h) => {
                    let (px, py) = (h.point[0], h.point[1]);
                    let mut base = match h.surface {
                        Surface::Road => {
                            if is_marking(spec.category, &spec.road, px, py) {
                                [0.92, 0.92, 0.85]
                            } else {
                                let n = cell_noise(
                                    (px / 0.15).floor() as i64,
                                    (py / 0.15).floor() as i64,
                                    spec.seed ^ 0xd0ad,
                                );
                                let g = 0.30 + 0.06 * (n - 0.5);
                                [g, g, g + 0.02]
                            }
                        }
                        Surface::Ground => {
                            let n = cell_noise(
                                (px / 0.3).floor() as i64,
                                (py / 0.3).floor() as i64,
                                spec.seed ^ 0x6e55,
                            );
                            let g = 0.50 + 0.10 * (n - 0.5);
                            [g * 0.96, g * 1.04, g * 0.84]
                        }
                        Surface::Obstacle(i) => {
                            let s = spec.obstacles[i].shade;
                            // Top faces catch more light than sides.
                            if (h.point[2] - spec.obstacles[i].height).abs() < 1e-6 {
                                [s + 0.12, s + 0.12, s + 0.10]
                            } else {
                                [s, s * 0.97, s * 0.94]
                            }
                        }
                    };
                    for shadow in &spec.lighting.shadows {
                        if point_in_polygon(px, py, &shadow.vertices) {
                            for c in base.iter_mut() {
                                *c *= 1.0 - shadow.darkening;
                            }
                        }
                    }
                    if h.surface == Surface::Road {
                        labels[v * cam.width + u] = Label::Road;
                    }
                    base
                }
            };

            for c in rgb.iter_mut() {
                *c *= spec.lighting.brightness;
            }
            for patch in &spec.lighting.overexposure {
                let du = (u as f64 - patch.cx) / patch.rx;
                let dv = (v as f64 - patch.cy) / patch.ry;
                if du * du + dv * dv <= 1.0 {
                    rgb = [1.0, 1.0, 1.0];
                }
            }

            let o = (v * cam.width + u) * 3;
            for c in 0..3 {
                pixels[o + c] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }

    let bundle = SceneBundle {
        image: RgbData {
            width: cam.width,
            height: cam.height,
            pixels,
        },
        cloud,
        calib: cam.calibration(),
        gt: RoadMask {
            width: cam.width,
            height: cam.height,
            labels,
        },
        category: spec.category,
    };
    Ok((bundle, SceneTrace {
        point_surfaces: surfaces,
    }))
}

/// Generate a scene bundle; see [`generate_traced`] for point provenance.
pub fn generate(spec: &SceneSpec) -> Result<SceneBundle, SynthError> {
    generate_traced(spec).map(|(bundle, _)| bundle)
}

/// Knobs for dataset generation shared by all scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub width: usize,
    pub height: usize,
    /// 0 = clean; 1 = heavy shadows, overexposure and brightness swings.
    pub corruption_level: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            width: 320,
            height: 96,
            corruption_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub category: Category,
    pub seed: u64,
    pub corruption_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub corruption_level: f64,
    pub scenes: Vec<SceneMeta>,
}

fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    let mut h = dataset_seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h
}

/// Draw a randomized scene spec. Corruption only parameterizes the lighting
/// block; geometry and sensors never depend on it.
pub fn random_spec(
    seed: u64,
    category: Category,
    options: &DatasetOptions,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = CameraSpec {
        focal: 0.56 * options.width as f64,
        cx: options.width as f64 / 2.0,
        cy: options.height as f64 * 0.35,
        width: options.width,
        height: options.height,
        cam_height: 1.55,
    };
    let road = RoadSpec {
        x_start: 4.0,
        x_end: 70.0,
        center_y: rng.gen_range(-1.5..1.5),
        curvature: rng.gen_range(-0.003..0.003),
        half_width: rng.gen_range(2.6..4.8),
    };

    let mut obstacles = Vec::new();
    // One guaranteed near prism so obstacle pixels always exist, then a few
    // more scattered along the corridor.
    let count = rng.gen_range(2..=5usize);
    for i in 0..count {
        let x = if i == 0 {
            rng.gen_range(8.0..16.0)
        } else {
            rng.gen_range(8.0..36.0)
        };
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let margin = if i == 0 {
            rng.gen_range(1.0..3.0)
        } else {
            rng.gen_range(0.8..7.0)
        };
        let y = road.centerline(x) + side * (road.half_width + margin);
        obstacles.push(Prism {
            x,
            y,
            half_depth: rng.gen_range(0.4..1.4),
            half_width: rng.gen_range(0.4..1.6),
            height: rng.gen_range(0.6..2.6),
            shade: rng.gen_range(0.45..0.75),
        });
    }

    let level = options.corruption_level.clamp(0.0, 1.0);
    let mut lighting = Lighting {
        brightness: 1.0 + level * rng.gen_range(-0.45..0.35),
        ..Default::default()
    };
    let shadow_count = (level * 3.0).round() as usize;
    for _ in 0..shadow_count {
        let cxg = rng.gen_range(6.0..30.0);
        let cyg = road.centerline(cxg) + rng.gen_range(-4.0..4.0);
        let r = rng.gen_range(1.5..5.0);
        let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let vertices = (0..4)
            .map(|k| {
                let a = rot + k as f64 * std::f64::consts::FRAC_PI_2;
                (cxg + r * a.cos() * 1.4, cyg + r * a.sin())
            })
            .collect();
        lighting.shadows.push(ShadowPolygon {
            vertices,
            darkening: level * rng.gen_range(0.5..0.85),
        });
    }
    let patch_count = if rng.gen_bool((level * 0.8).clamp(0.0, 1.0)) {
        rng.gen_range(1..=2)
    } else {
        0
    };
    for _ in 0..patch_count {
        lighting.overexposure.push(OverexposurePatch {
            cx: rng.gen_range(0.0..options.width as f64),
            cy: rng.gen_range(0.0..options.height as f64 * 0.8),
            rx: rng.gen_range(0.08..0.3) * options.width as f64,
            ry: rng.gen_range(0.12..0.4) * options.height as f64,
        });
    }

    SceneSpec {
        seed,
        category,
        road,
        obstacles,
        lighting,
        lidar: LidarRig::default(),
        camera,
    }
}

/// Generate `count` scenes with a uniform category mix.
pub fn generate_dataset(
    count: usize,
    seed: u64,
    options: &DatasetOptions,
) -> Result<(Vec<SceneBundle>, Manifest), SynthError> {
    let mut bundles = Vec::with_capacity(count);
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let category = Category::ALL[i % 3];
        let s = scene_seed(seed, i);
        let spec = random_spec(s, category, options);
        bundles.push(generate(&spec)?);
        scenes.push(SceneMeta {
            id: format!("{i:06}"),
            category,
            seed: s,
            corruption_level: options.corruption_level,
        });
    }
    Ok((
        bundles,
        Manifest {
            seed,
            width: options.width,
            height: options.height,
            corruption_level: options.corruption_level,
            scenes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar_io;

    fn clean_options() -> DatasetOptions {
        DatasetOptions {
            width: 160,
            height: 48,
            corruption_level: 0.0,
        }
    }

    fn flat_spec() -> SceneSpec {
        let mut spec = random_spec(1, Category::UU, &clean_options());
        spec.obstacles.clear();
        spec.lighting = Lighting::default();
        spec
    }

    #[test]
    fn ground_only_scene_has_near_zero_altitudes() {
        let spec = flat_spec();
        let bundle = generate(&spec).unwrap();
        assert!(!bundle.cloud.is_empty());
        for p in &bundle.cloud.points {
            assert!(p.z.abs() <= 0.02, "altitude {}", p.z);
        }
    }

    #[test]
    fn prism_produces_high_altitude_points_in_its_footprint() {
        let mut spec = flat_spec();
        spec.obstacles.push(Prism {
            x: 10.0,
            y: 0.0,
            half_depth: 0.6,
            half_width: 1.0,
            height: 2.0,
            shade: 0.6,
        });
        let (bundle, trace) = generate_traced(&spec).unwrap();
        let tall: Vec<&LidarPoint> = bundle
            .cloud
            .points
            .iter()
            .zip(&trace.point_surfaces)
            .filter(|(_, s)| **s == SurfaceKind::Obstacle)
            .map(|(p, _)| p)
            .collect();
        assert!(!tall.is_empty());
        assert!(tall.iter().any(|p| p.z > 1.0));
        for p in &tall {
            assert!((p.x as f64 - 10.0).abs() < 0.7 + 0.01);
            assert!((p.y as f64).abs() < 1.0 + 0.01);
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_bundles() {
        let spec = random_spec(42, Category::UM, &DatasetOptions {
            corruption_level: 0.8,
            ..clean_options()
        });
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            lidar_io::write_point_cloud(&a.cloud),
            lidar_io::write_point_cloud(&b.cloud)
        );
    }

    #[test]
    fn corruption_changes_image_but_never_the_cloud() {
        let clean = random_spec(7, Category::UMM, &clean_options());
        let corrupted = random_spec(7, Category::UMM, &DatasetOptions {
            corruption_level: 1.0,
            ..clean_options()
        });
        let a = generate(&clean).unwrap();
        let b = generate(&corrupted).unwrap();
        assert_eq!(a.cloud, b.cloud, "corruption must not touch the cloud");
        assert_eq!(a.gt, b.gt, "corruption must not touch the labels");
        assert_ne!(a.image, b.image, "corruption should alter the image");
    }

    #[test]
    fn cloud_roundtrips_through_binary_format() {
        let spec = random_spec(3, Category::UU, &clean_options());
        let bundle = generate(&spec).unwrap();
        let bytes = lidar_io::write_point_cloud(&bundle.cloud);
        assert_eq!(lidar_io::read_point_cloud(&bytes).unwrap(), bundle.cloud);
    }

    #[test]
    fn dataset_has_uniform_category_mix_and_sane_road_fractions() {
        let (bundles, manifest) = generate_dataset(12, 5, &clean_options()).unwrap();
        assert_eq!(bundles.len(), 12);
        for cat in Category::ALL {
            assert_eq!(
                manifest.scenes.iter().filter(|s| s.category == cat).count(),
                4
            );
        }
        for (bundle, meta) in bundles.iter().zip(&manifest.scenes) {
            assert_eq!(bundle.category, meta.category);
            let frac = bundle.gt.road_fraction();
            assert!(
                (0.05..=0.6).contains(&frac),
                "scene {} road fraction {frac}",
                meta.id
            );
        }
    }

    #[test]
    fn categories_differ_only_in_markings() {
        // Same geometry seed, different category: clouds and masks agree,
        // only the rendered markings differ.
        let opts = clean_options();
        let um = {
            let mut s = random_spec(11, Category::UM, &opts);
            s.category = Category::UM;
            generate(&s).unwrap()
        };
        let uu = {
            let mut s = random_spec(11, Category::UM, &opts);
            s.category = Category::UU;
            generate(&s).unwrap()
        };
        assert_eq!(um.cloud, uu.cloud);
        assert_eq!(um.gt, uu.gt);
        assert_ne!(um.image, uu.image);
    }

    #[test]
    fn camera_inside_obstacle_is_degenerate() {
        let mut spec = flat_spec();
        spec.obstacles.push(Prism {
            x: 0.0,
            y: 0.0,
            half_depth: 1.0,
            half_width: 1.0,
            height: 3.0,
            shade: 0.5,
        });
        assert_eq!(
            generate(&spec),
            Err(SynthError::DegenerateGeometry(0))
        );
    }

    #[test]
    fn short_obstacles_are_rejected() {
        let mut spec = flat_spec();
        spec.obstacles.push(Prism {
            x: 10.0,
            y: 5.0,
            half_depth: 1.0,
            half_width: 1.0,
            height: 0.2,
            shade: 0.5,
        });
        assert!(matches!(
            generate(&spec),
            Err(SynthError::InvalidSpec(_))
        ));
    }
}
