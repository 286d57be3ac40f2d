use std::path::PathBuf;

use plard_core::imgio;

use crate::error::{io_at, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct OverlayArgs {
    /// Input camera image (RGB PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Road-probability PNG (8-bit grayscale).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Blend road probability in green over the camera image.
pub fn run(args: &OverlayArgs) -> CliResult<()> {
    let image_png = std::fs::read(&args.image).map_err(io_at(&args.image))?;
    let (w, h, rgb) = imgio::decode_rgb_png(&image_png)?;
    let pred_png = std::fs::read(&args.pred).map_err(io_at(&args.pred))?;
    let (pw, ph, gray) = imgio::decode_gray_png(&pred_png)?;
    if (pw, ph) != (w, h) {
        return Err(CliError::validation(format!(
            "prediction is {pw}x{ph} but the image is {w}x{h}"
        )));
    }

    let mut out = rgb.clone();
    for (px, &p) in gray.iter().enumerate() {
        let alpha = 0.5 * p as f64 / 255.0;
        let base = px * 3;
        for (c, target) in [(0usize, 0.0f64), (1, 255.0), (2, 0.0)] {
            let v = out[base + c] as f64 * (1.0 - alpha) + target * alpha;
            out[base + c] = v.round() as u8;
        }
    }
    let png = imgio::encode_rgb_png(w, h, &out)?;
    std::fs::write(&args.out, png).map_err(io_at(&args.out))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
