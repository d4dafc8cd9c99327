#![allow(dead_code)]

use std::path::Path;

use annodb::media::{self, PixelBuffer};

/// Writes a `width` x `height` RGB gradient PNG.
pub fn write_png(path: &Path, width: u32, height: u32) {
    let mut buf = PixelBuffer::new(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let p = buf.pixel_mut(x, y);
            p[0] = (x % 256) as u8;
            p[1] = (y % 256) as u8;
            p[2] = ((x + y) % 256) as u8;
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    media::write_image(path, &buf, media::DEFAULT_JPEG_QUALITY).unwrap();
}
