use std::path::PathBuf;

use serde::Serialize;

use plard_core::adt::{adt_transform_with, rasterize_altitude, NeighborCount};
use plard_core::{imgio, lidar_io};

use crate::error::{io_at, CliResult};

#[derive(Debug, clap::Args)]
pub struct AdtArgs {
    /// Binary point cloud (little-endian f32 x,y,z,reflectance records).
    #[arg(long)]
    pub cloud: PathBuf,
    /// Calibration text file (P2, R0_rect, Tr_velo_to_cam).
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Odd window size of the altitude-difference transform.
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    /// Divide by the full window population instead of the occupied count.
    #[arg(long)]
    pub fixed_m: bool,
    /// Output grayscale PNG of the rescaled transform.
    #[arg(long)]
    pub out: PathBuf,
    /// Sidecar JSON path (defaults to the PNG path with a .json extension).
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

#[derive(Serialize)]
struct AdtSidecar {
    width: usize,
    height: usize,
    window: usize,
    fixed_m: bool,
    max_raw_value: f64,
    occupied_pixels: usize,
    projected_points: usize,
}

pub fn run(args: &AdtArgs, verbose: bool) -> CliResult<()> {
    let cloud_bytes = std::fs::read(&args.cloud).map_err(io_at(&args.cloud))?;
    let cloud = lidar_io::read_point_cloud(&cloud_bytes)?;
    let calib_text = std::fs::read_to_string(&args.calib).map_err(io_at(&args.calib))?;
    let calib = lidar_io::read_calibration(&calib_text)?;

    let projected = lidar_io::project(&cloud, &calib, args.width, args.height);
    let map = rasterize_altitude(&projected, args.width, args.height)?;
    let counting = if args.fixed_m {
        NeighborCount::Fixed
    } else {
        NeighborCount::Occupied
    };
    let adt = adt_transform_with(&map, args.window, counting)?;

    let png = imgio::encode_gray_png(adt.width, adt.height, &adt.rescaled)?;
    std::fs::write(&args.out, png).map_err(io_at(&args.out))?;

    let sidecar_path = args
        .sidecar
        .clone()
        .unwrap_or_else(|| args.out.with_extension("json"));
    let sidecar = AdtSidecar {
        width: adt.width,
        height: adt.height,
        window: args.window,
        fixed_m: args.fixed_m,
        max_raw_value: adt.max_value(),
        occupied_pixels: map.occupied_count(),
        projected_points: projected.len(),
    };
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(io_at(&sidecar_path))?;

    if verbose {
        eprintln!(
            "adt: {} points -> {} occupied pixels, max raw value {:.6}",
            projected.len(),
            sidecar.occupied_pixels,
            sidecar.max_raw_value
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
