//! PNG rendering of masks (blue = water, white = non-water, gray = ignore).

use std::path::Path;

use anyhow::Result;
use image::{Rgb, RgbImage};

use floodseg_core::mask::{Mask, MaskLabel};

use crate::io_util::write_atomic;

const WATER: Rgb<u8> = Rgb([30, 80, 220]);
const NON_WATER: Rgb<u8> = Rgb([255, 255, 255]);
const IGNORE: Rgb<u8> = Rgb([128, 128, 128]);

pub fn mask_to_png_bytes(mask: &Mask) -> Result<Vec<u8>> {
    let mut img = RgbImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let color = match mask.label_at(x, y) {
                MaskLabel::Water => WATER,
                MaskLabel::NonWater => NON_WATER,
                MaskLabel::Ignore => IGNORE,
            };
            img.put_pixel(x as u32, y as u32, color);
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageOutputFormat::Png)?;
    Ok(bytes)
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    write_atomic(path, &mask_to_png_bytes(mask)?)?;
    Ok(())
}
