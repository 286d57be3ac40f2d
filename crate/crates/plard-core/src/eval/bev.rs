//! Birds-eye-view remapping: inverse-warp a perspective prediction or mask
//! onto a metric ground grid through a 3x3 homography.

use serde::{Deserialize, Serialize};

use super::{ConfidenceMap, EvalError, Label, RoadMask};

/// Homography from the perspective image plane to a metric ground grid,
/// plus the grid raster size. Grid columns run along the lateral axis,
/// rows along the forward axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevMapping {
    /// Row-major 3x3 mapping `(u, v, 1) -> (gx, gy, w)` homogeneous.
    pub homography: [[f64; 3]; 3],
    pub width: usize,
    pub height: usize,
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

fn apply(m: &[[f64; 3]; 3], x: f64, y: f64) -> Option<(f64, f64)> {
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    if w.abs() < 1e-12 {
        return None;
    }
    Some((
        (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
        (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
    ))
}

/// Warp a confidence map onto the grid with bilinear sampling.
/// Out-of-view grid cells get confidence 0; pair with a warped mask (whose
/// out-of-view cells are Ignore) so they never score.
pub fn to_bev_confidence(
    map: &ConfidenceMap,
    bev: &BevMapping,
) -> Result<ConfidenceMap, EvalError> {
    let inv = invert3(&bev.homography).ok_or(EvalError::SingularHomography)?;
    let mut values = vec![0.0f64; bev.width * bev.height];
    for gy in 0..bev.height {
        for gx in 0..bev.width {
            let Some((u, v)) = apply(&inv, gx as f64, gy as f64) else {
                continue;
            };
            if u < 0.0 || v < 0.0 || u > (map.width - 1) as f64 || v > (map.height - 1) as f64 {
                continue;
            }
            let x0 = u.floor() as usize;
            let y0 = v.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let y1 = (y0 + 1).min(map.height - 1);
            let fx = u - x0 as f64;
            let fy = v - y0 as f64;
            let top = map.values[y0 * map.width + x0] * (1.0 - fx)
                + map.values[y0 * map.width + x1] * fx;
            let bot = map.values[y1 * map.width + x0] * (1.0 - fx)
                + map.values[y1 * map.width + x1] * fx;
            values[gy * bev.width + gx] = top * (1.0 - fy) + bot * fy;
        }
    }
    Ok(ConfidenceMap {
        width: bev.width,
        height: bev.height,
        values,
    })
}

/// Warp a label mask onto the grid with nearest sampling; out-of-view cells
/// become Ignore.
pub fn to_bev_mask(mask: &RoadMask, bev: &BevMapping) -> Result<RoadMask, EvalError> {
    let inv = invert3(&bev.homography).ok_or(EvalError::SingularHomography)?;
    let mut labels = vec![Label::Ignore; bev.width * bev.height];
    for gy in 0..bev.height {
        for gx in 0..bev.width {
            let Some((u, v)) = apply(&inv, gx as f64, gy as f64) else {
                continue;
            };
            let x = u.round();
            let y = v.round();
            if x < 0.0 || y < 0.0 || x >= mask.width as f64 || y >= mask.height as f64 {
                continue;
            }
            labels[gy * bev.width + gx] = mask.labels[y as usize * mask.width + x as usize];
        }
    }
    Ok(RoadMask {
        width: bev.width,
        height: bev.height,
        labels,
    })
}

/// Homography from image to a metric ground grid for a forward-looking
/// pinhole camera at `cam_height` above a flat ground plane.
///
/// The camera convention matches the synthetic scenes: sensor x forward,
/// y left, z up; camera right = -y, down = -z, forward = +x. The grid covers
/// ground `x` in `x_range` (rows, increasing away from camera) and `y` in
/// `y_range` (columns) at `resolution` meters per cell.
pub fn ground_grid_homography(
    focal: f64,
    cx: f64,
    cy: f64,
    cam_height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: f64,
) -> Result<BevMapping, EvalError> {
    // Ground (x, y, 1) -> image (su, sv, s).
    let ground_to_image = [
        [cx, -focal, 0.0],
        [cy, 0.0, focal * cam_height],
        [1.0, 0.0, 0.0],
    ];
    let image_to_ground = invert3(&ground_to_image).ok_or(EvalError::SingularHomography)?;
    // Ground (x, y) -> grid: column = (y - y_min) / res, row = (x - x_min) / res.
    let grid = [
        [0.0, 1.0 / resolution, -y_range.0 / resolution],
        [1.0 / resolution, 0.0, -x_range.0 / resolution],
        [0.0, 0.0, 1.0],
    ];
    let mut h = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            h[r][c] = (0..3).map(|k| grid[r][k] * image_to_ground[k][c]).sum();
        }
    }
    let width = ((y_range.1 - y_range.0) / resolution).round() as usize;
    let height = ((x_range.1 - x_range.0) / resolution).round() as usize;
    Ok(BevMapping {
        homography: h,
        width,
        height,
    })
}
