//! Data-space adaptation: altitude rasterization, the altitude-difference
//! transform, and the direct-projection baseline image.
//!
//! The altitude-difference transform scores each occupied pixel by the mean
//! absolute altitude gradient against its occupied neighbors inside a square
//! window, each difference divided by the pixel distance to that neighbor.
//! Flat surfaces (roads) score near zero; upright structure scores high.

use thiserror::Error;

use crate::lidar_io::{PointCloud, ProjectedPoint};

#[derive(Debug, Error, PartialEq)]
pub enum AdtError {
    #[error("projected point {index} at ({u}, {v}) is outside the {width}x{height} raster")]
    OutOfBounds {
        index: usize,
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("window {window} is invalid: must be an odd integer >= 3")]
    WindowTooSmall { window: usize },
}

/// Per-pixel altitude of the nearest (smallest-depth) projected point.
/// `altitude` is meaningful only where `occupancy` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct AltitudeMap {
    pub width: usize,
    pub height: usize,
    pub altitude: Vec<f64>,
    pub occupancy: Vec<bool>,
}

impl AltitudeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            altitude: vec![0.0; width * height],
            occupancy: vec![false; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn set(&mut self, x: usize, y: usize, altitude: f64) {
        let i = self.idx(x, y);
        self.altitude[i] = altitude;
        self.occupancy[i] = true;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

/// The altitude-difference image: raw nonnegative values plus the `[0, 255]`
/// rescale fed to the network and written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AdtImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub rescaled: Vec<u8>,
}

impl AdtImage {
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Direct-projection baseline: three channels holding the min-max normalized
/// x, y, z coordinates of each pixel's nearest point (0 where unoccupied).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    /// Channel-major: `channels[c][y * width + x]`, c in {x, y, z}.
    pub channels: [Vec<f64>; 3],
}

/// Neighbor-count convention for the transform denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborCount {
    /// Count only occupied neighbors; empty neighbors are skipped entirely.
    #[default]
    Occupied,
    /// Divide by the full window population (`window^2 - 1`) regardless of
    /// occupancy, biasing sparse regions toward zero.
    Fixed,
}

/// Winner of a pixel conflict: the projected point with the smallest depth.
/// Ties keep the earliest point in input order.
fn rasterize_winners(
    points: &[ProjectedPoint],
    width: usize,
    height: usize,
) -> Result<Vec<Option<usize>>, AdtError> {
    let mut winner: Vec<Option<usize>> = vec![None; width * height];
    for (k, p) in points.iter().enumerate() {
        let x = p.u.floor();
        let y = p.v.floor();
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            return Err(AdtError::OutOfBounds {
                index: k,
                u: p.u,
                v: p.v,
                width,
                height,
            });
        }
        let i = y as usize * width + x as usize;
        match winner[i] {
            Some(existing) if points[existing].depth <= p.depth => {}
            _ => winner[i] = Some(k),
        }
    }
    Ok(winner)
}

/// Rasterize projected points into a per-pixel altitude map with the
/// nearest-depth rule deciding conflicts.
pub fn rasterize_altitude(
    points: &[ProjectedPoint],
    width: usize,
    height: usize,
) -> Result<AltitudeMap, AdtError> {
    let winner = rasterize_winners(points, width, height)?;
    let mut map = AltitudeMap::new(width, height);
    for (i, w) in winner.iter().enumerate() {
        if let Some(k) = w {
            map.altitude[i] = points[*k].altitude;
            map.occupancy[i] = true;
        }
    }
    Ok(map)
}

/// Altitude-difference transform over a square window (default 7).
///
/// For each occupied pixel the value is the mean over occupied window
/// neighbors of `|dz| / dist`; pixels with no occupied neighbor, and all
/// unoccupied pixels, get 0. The rescaled channel maps the raw values onto
/// `[0, 255]` with `round(255 * v / max)`, all zeros when the image is flat.
pub fn adt_transform(map: &AltitudeMap, window: usize) -> Result<AdtImage, AdtError> {
    adt_transform_with(map, window, NeighborCount::Occupied)
}

/// As [`adt_transform`] but with an explicit neighbor-count convention.
pub fn adt_transform_with(
    map: &AltitudeMap,
    window: usize,
    counting: NeighborCount,
) -> Result<AdtImage, AdtError> {
    if window < 3 || window % 2 == 0 {
        return Err(AdtError::WindowTooSmall { window });
    }
    let r = (window / 2) as isize;
    let (w, h) = (map.width, map.height);
    let mut values = vec![0.0f64; w * h];

    // Precompute inverse distances for the window offsets; the scan order
    // below (dy outer, dx inner) is the fixed per-pixel reduction order.
    let side = 2 * r + 1;
    let mut inv_dist = vec![0.0f64; (side * side) as usize];
    for dy in -r..=r {
        for dx in -r..=r {
            if dx == 0 && dy == 0 {
                continue;
            }
            let o = ((dy + r) * side + (dx + r)) as usize;
            inv_dist[o] = 1.0 / ((dx * dx + dy * dy) as f64).sqrt();
        }
    }

    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = (y as usize) * w + x as usize;
            if !map.occupancy[center] {
                continue;
            }
            let z = map.altitude[center];
            let mut sum = 0.0;
            let mut occupied_neighbors = 0usize;
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let ni = (ny as usize) * w + nx as usize;
                    if !map.occupancy[ni] {
                        continue;
                    }
                    let o = ((dy + r) * side + (dx + r)) as usize;
                    sum += (z - map.altitude[ni]).abs() * inv_dist[o];
                    occupied_neighbors += 1;
                }
            }
            let m = match counting {
                NeighborCount::Occupied => occupied_neighbors,
                NeighborCount::Fixed => (window * window - 1) as usize,
            };
            if m > 0 {
                values[center] = sum / m as f64;
            }
        }
    }

    let max = values.iter().copied().fold(0.0, f64::max);
    let rescaled = if max > 0.0 {
        values
            .iter()
            .map(|v| (255.0 * v / max).round() as u8)
            .collect()
    } else {
        vec![0u8; w * h]
    };
    Ok(AdtImage {
        width: w,
        height: h,
        values,
        rescaled,
    })
}

/// Direct-projection baseline image: per pixel (nearest-depth rule) the
/// min-max normalized sensor-frame coordinates of the winning point. A
/// constant axis normalizes to 0.5 everywhere it is occupied.
pub fn direct_projection(
    points: &[ProjectedPoint],
    cloud: &PointCloud,
    width: usize,
    height: usize,
) -> Result<ProjectionImage, AdtError> {
    let winner = rasterize_winners(points, width, height)?;

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        let src = cloud.points[p.source_index];
        for (a, v) in [src.x as f64, src.y as f64, src.z as f64].iter().enumerate() {
            lo[a] = lo[a].min(*v);
            hi[a] = hi[a].max(*v);
        }
    }

    let mut channels = [
        vec![0.0; width * height],
        vec![0.0; width * height],
        vec![0.0; width * height],
    ];
    for (i, w) in winner.iter().enumerate() {
        let Some(k) = w else { continue };
        let src = cloud.points[points[*k].source_index];
        for (a, v) in [src.x as f64, src.y as f64, src.z as f64].iter().enumerate() {
            channels[a][i] = if hi[a] > lo[a] {
                (v - lo[a]) / (hi[a] - lo[a])
            } else {
                0.5
            };
        }
    }
    Ok(ProjectionImage {
        width,
        height,
        channels,
    })
}
