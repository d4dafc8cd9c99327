//! Image and mask I/O. This is the only module that touches pixel data; the
//! rest of the crate treats `imagefile` and `maskfile` as opaque keys.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_JPEG_QUALITY: u8 = 90;

/// Row-major 8-bit pixels with 1 (labels/grayscale) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl PixelBuffer {
    pub fn new(width: u32, height: u32, channels: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} bytes does not hold {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        &mut self.data[o..o + c]
    }
}

/// Resolves a stored reference against the session root.
pub fn resolve(rootdir: &Path, file: &str) -> PathBuf {
    rootdir.join(file)
}

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Decodes a PNG or JPEG into a 3-channel buffer.
pub fn read_image(rootdir: &Path, imagefile: &str) -> Result<PixelBuffer> {
    read_image_path(&resolve(rootdir, imagefile))
}

pub fn read_image_path(path: &Path) -> Result<PixelBuffer> {
    if !path.is_file() {
        return Err(Error::NotFound(format!("image {}", path.display())));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_rgb8();
    let (width, height) = img.dimensions();
    PixelBuffer::from_data(width, height, 3, img.into_raw())
}

/// Reads only the header to get `(width, height)`.
pub fn image_size(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| image_err(path, e))
}

/// Decodes a single-channel label map. Palettized PNGs yield their palette
/// indices; anything with more than one channel is rejected.
pub fn read_mask(rootdir: &Path, maskfile: &str) -> Result<PixelBuffer> {
    let path = resolve(rootdir, maskfile);
    if !path.is_file() {
        return Err(Error::NotFound(format!("mask {}", path.display())));
    }
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(&path, e))?;
    let mut data = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut data).map_err(|e| image_err(&path, e))?;
    data.truncate(frame.buffer_size());
    match (frame.color_type, frame.bit_depth) {
        (png::ColorType::Grayscale | png::ColorType::Indexed, png::BitDepth::Eight) => {}
        (png::ColorType::Grayscale | png::ColorType::Indexed, depth) => {
            data = unpack_bits(&data, frame.width, frame.height, depth as u8)
                .ok_or_else(|| image_err(&path, format!("unsupported mask bit depth {depth:?}")))?;
        }
        (color, _) => {
            return Err(image_err(
                &path,
                format!("mask must be single-channel, got {color:?}"),
            ))
        }
    }
    PixelBuffer::from_data(frame.width, frame.height, 1, data)
}

fn unpack_bits(data: &[u8], width: u32, height: u32, depth: u8) -> Option<Vec<u8>> {
    if !matches!(depth, 1 | 2 | 4) {
        return None;
    }
    let per_byte = 8 / depth as usize;
    let stride = (width as usize).div_ceil(per_byte);
    let mask = (1u8 << depth) - 1;
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for row in data.chunks(stride).take(height as usize) {
        for x in 0..width as usize {
            let byte = row[x / per_byte];
            let shift = 8 - depth as usize * (x % per_byte + 1);
            out.push((byte >> shift) & mask);
        }
    }
    Some(out)
}

/// Writes a label map as an 8-bit grayscale PNG.
pub fn write_mask(path: &Path, mask: &PixelBuffer) -> Result<()> {
    if mask.channels != 1 {
        return Err(Error::InvalidArgument("mask must be single-channel".into()));
    }
    save(path, mask, ImageFormat::Png, DEFAULT_JPEG_QUALITY)
}

/// Writes a buffer, picking PNG or JPEG from the file extension.
pub fn write_image(path: &Path, buf: &PixelBuffer, jpeg_quality: u8) -> Result<()> {
    let format = ImageFormat::from_path(path).map_err(|e| image_err(path, e))?;
    save(path, buf, format, jpeg_quality)
}

fn save(path: &Path, buf: &PixelBuffer, format: ImageFormat, jpeg_quality: u8) -> Result<()> {
    let color = match buf.channels {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    let res = match format {
        ImageFormat::Jpeg => JpegEncoder::new_with_quality(writer, jpeg_quality).write_image(
            &buf.data,
            buf.width,
            buf.height,
            color,
        ),
        ImageFormat::Png => image::codecs::png::PngEncoder::new(writer).write_image(
            &buf.data,
            buf.width,
            buf.height,
            color,
        ),
        other => return Err(image_err(path, format!("unsupported output format {other:?}"))),
    };
    res.map_err(|e| image_err(path, e))
}

/// Encodes a buffer as PNG bytes in memory.
pub fn encode_png(buf: &PixelBuffer) -> Result<Vec<u8>> {
    let color = match buf.channels {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&buf.data, buf.width, buf.height, color)
        .map_err(|e| image_err(Path::new("<memory>"), e))?;
    Ok(out)
}

/// Maps labels to distinct colors for display. Label 0 stays black.
pub fn colorize_mask(mask: &PixelBuffer) -> PixelBuffer {
    let mut out = PixelBuffer::new(mask.width, mask.height, 3);
    for (src, dst) in mask.data.iter().zip(out.data.chunks_mut(3)) {
        dst.copy_from_slice(&label_color(*src));
    }
    out
}

fn label_color(label: u8) -> [u8; 3] {
    // Bit-interleaved palette, the same scheme PASCAL VOC uses.
    let mut c = [0u8; 3];
    let mut l = label;
    for shift in (0..8).rev() {
        for (ch, value) in c.iter_mut().enumerate() {
            *value |= ((l >> ch) & 1) << shift;
        }
        l >>= 3;
        if l == 0 {
            break;
        }
    }
    c
}

/// How a crop is fitted to the target size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePolicy {
    /// Rescale to the target, ignoring aspect ratio.
    Distort,
    /// Pad with black to the target aspect, then rescale.
    Constant,
    /// Keep the crop at its own size.
    Original,
}

impl std::str::FromStr for EdgePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distort" => Ok(EdgePolicy::Distort),
            "constant" => Ok(EdgePolicy::Constant),
            "original" => Ok(EdgePolicy::Original),
            other => Err(Error::InvalidArgument(format!(
                "unknown edge policy `{other}` (expected distort, constant or original)"
            ))),
        }
    }
}

/// Box snapped to the pixel grid: floor of the origin, rounded extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn from_box(b: &BBox) -> Self {
        Self {
            x: b.x.floor() as i64,
            y: b.y.floor() as i64,
            width: b.width.round().max(0.0) as u32,
            height: b.height.round().max(0.0) as u32,
        }
    }
}

/// A crop together with where the box content ended up inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub buffer: PixelBuffer,
    /// Region of the output covered by box content (excludes padding).
    pub content: BBox,
    /// Maps a source-image point into output coordinates.
    pub transform: CropTransform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl CropTransform {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x + self.offset_x) * self.scale_x,
            (y - self.origin_y + self.offset_y) * self.scale_y,
        )
    }
}

/// Extracts the grid-snapped box region (zero-padding anything outside the
/// buffer), then fits it to `target` according to `policy`.
pub fn crop_and_resize(
    buf: &PixelBuffer,
    bbox: &BBox,
    target: (u32, u32),
    policy: EdgePolicy,
) -> Result<Crop> {
    let rect = PixelRect::from_box(bbox);
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::InvalidArgument(format!(
            "zero-area box {}x{}",
            bbox.width, bbox.height
        )));
    }
    if policy != EdgePolicy::Original && (target.0 == 0 || target.1 == 0) {
        return Err(Error::InvalidArgument("zero target size".into()));
    }
    let region = extract(buf, &rect);
    let (w, h) = (rect.width as f64, rect.height as f64);
    let mut transform = CropTransform {
        origin_x: rect.x as f64,
        origin_y: rect.y as f64,
        offset_x: 0.0,
        offset_y: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
    };
    let (buffer, content) = match policy {
        EdgePolicy::Original => (region, BBox::new(0.0, 0.0, w, h)),
        EdgePolicy::Distort => {
            transform.scale_x = target.0 as f64 / w;
            transform.scale_y = target.1 as f64 / h;
            (
                resize_bilinear(&region, target.0, target.1),
                BBox::new(0.0, 0.0, target.0 as f64, target.1 as f64),
            )
        }
        EdgePolicy::Constant => {
            let target_aspect = target.0 as f64 / target.1 as f64;
            let (pw, ph) = if w / h > target_aspect {
                (rect.width, ((w / target_aspect).round() as u32).max(rect.height))
            } else {
                (((h * target_aspect).round() as u32).max(rect.width), rect.height)
            };
            let pad_x = (pw - rect.width) / 2;
            let pad_y = (ph - rect.height) / 2;
            let mut padded = PixelBuffer::new(pw, ph, region.channels);
            for y in 0..rect.height {
                for x in 0..rect.width {
                    padded
                        .pixel_mut(x + pad_x, y + pad_y)
                        .copy_from_slice(region.pixel(x, y));
                }
            }
            let sx = target.0 as f64 / pw as f64;
            let sy = target.1 as f64 / ph as f64;
            transform.offset_x = pad_x as f64;
            transform.offset_y = pad_y as f64;
            transform.scale_x = sx;
            transform.scale_y = sy;
            (
                resize_bilinear(&padded, target.0, target.1),
                BBox::new(pad_x as f64 * sx, pad_y as f64 * sy, w * sx, h * sy),
            )
        }
    };
    Ok(Crop {
        buffer,
        content,
        transform,
    })
}

fn extract(buf: &PixelBuffer, rect: &PixelRect) -> PixelBuffer {
    let mut out = PixelBuffer::new(rect.width, rect.height, buf.channels);
    for y in 0..rect.height {
        let sy = rect.y + y as i64;
        if sy < 0 || sy >= buf.height as i64 {
            continue;
        }
        for x in 0..rect.width {
            let sx = rect.x + x as i64;
            if sx < 0 || sx >= buf.width as i64 {
                continue;
            }
            out.pixel_mut(x, y)
                .copy_from_slice(buf.pixel(sx as u32, sy as u32));
        }
    }
    out
}

/// Bilinear resampling with pixel centers aligned: output pixel `i` samples
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the edge.
pub fn resize_bilinear(buf: &PixelBuffer, width: u32, height: u32) -> PixelBuffer {
    if buf.width == width && buf.height == height {
        return buf.clone();
    }
    let taps = |out_len: u32, in_len: u32| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(in_len as usize - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let xs = taps(width, buf.width);
    let ys = taps(height, buf.height);
    let mut out = PixelBuffer::new(width, height, buf.channels);
    let c = buf.channels as usize;
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let p = |x: usize, y: usize| buf.data[(y * buf.width as usize + x) * c + ch] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.data[(oy * width as usize + ox) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: u32, height: u32) -> PixelBuffer {
        let mut buf = PixelBuffer::new(width, height, 3);
        for y in 0..height {
            for x in 0..width {
                let v = [(x * 255 / width.max(1)) as u8, (y * 255 / height.max(1)) as u8, 7];
                buf.pixel_mut(x, y).copy_from_slice(&v);
            }
        }
        buf
    }

    #[test]
    fn png_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let buf = gradient(8, 6);
        write_image(&dir.path().join("g.png"), &buf, 90).unwrap();
        let back = read_image(dir.path(), "g.png").unwrap();
        assert_eq!((back.width, back.height), (8, 6));
        assert_eq!(back, buf);
        assert_eq!(image_size(&dir.path().join("g.png")).unwrap(), (8, 6));
    }

    #[test]
    fn missing_image_names_resolved_path() {
        let err = read_image(Path::new("/data"), "imgs/0.jpg").unwrap_err();
        assert!(err.to_string().contains("/data/imgs/0.jpg"), "{err}");
    }

    #[test]
    fn mask_roundtrip_and_channel_check() {
        let dir = tempfile::tempdir().unwrap();
        let mask = PixelBuffer::from_data(2, 2, 1, vec![0, 1, 1, 0]).unwrap();
        write_mask(&dir.path().join("m.png"), &mask).unwrap();
        assert_eq!(read_mask(dir.path(), "m.png").unwrap(), mask);

        let zeros = PixelBuffer::new(3, 2, 1);
        write_mask(&dir.path().join("z.png"), &zeros).unwrap();
        assert!(read_mask(dir.path(), "z.png").unwrap().data.iter().all(|&v| v == 0));

        write_image(&dir.path().join("rgb.png"), &gradient(2, 2), 90).unwrap();
        let err = read_mask(dir.path(), "rgb.png").unwrap_err();
        assert!(err.to_string().contains("single-channel"), "{err}");
    }

    #[test]
    fn palettized_mask_yields_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(vec![0, 0, 0, 128, 0, 0, 0, 128, 0]);
        enc.write_header().unwrap().write_image_data(&[2, 1]).unwrap();
        assert_eq!(read_mask(dir.path(), "p.png").unwrap().data, vec![2, 1]);
    }

    #[test]
    fn full_box_original_is_identity() {
        let buf = gradient(5, 4);
        let crop = crop_and_resize(&buf, &BBox::new(0.0, 0.0, 5.0, 4.0), (1, 1), EdgePolicy::Original)
            .unwrap();
        assert_eq!(crop.buffer, buf);
    }

    #[test]
    fn distort_to_own_size_is_identity() {
        let buf = gradient(100, 80);
        let b = BBox::new(10.3, 20.7, 64.2, 31.6);
        let rect = PixelRect::from_box(&b);
        assert_eq!(rect, PixelRect { x: 10, y: 20, width: 64, height: 32 });
        let crop = crop_and_resize(&buf, &b, (64, 32), EdgePolicy::Distort).unwrap();
        for y in 0..32 {
            for x in 0..64 {
                assert_eq!(crop.buffer.pixel(x, y), buf.pixel(x + 10, y + 20));
            }
        }
    }

    #[test]
    fn upscale_keeps_corners() {
        let buf = PixelBuffer::from_data(2, 2, 1, vec![10, 20, 30, 40]).unwrap();
        let up = resize_bilinear(&buf, 4, 4);
        assert_eq!(up.pixel(0, 0), [10]);
        assert_eq!(up.pixel(3, 0), [20]);
        assert_eq!(up.pixel(0, 3), [30]);
        assert_eq!(up.pixel(3, 3), [40]);
    }

    #[test]
    fn out_of_bounds_is_zero_padded() {
        let buf = PixelBuffer::from_data(2, 1, 1, vec![9, 9]).unwrap();
        let crop = crop_and_resize(&buf, &BBox::new(-1.0, 0.0, 4.0, 1.0), (0, 0), EdgePolicy::Original)
            .unwrap();
        assert_eq!(crop.buffer.data, vec![0, 9, 9, 0]);
    }

    #[test]
    fn constant_letterboxes_to_target_aspect() {
        let buf = PixelBuffer::from_data(4, 2, 1, vec![200; 8]).unwrap();
        let crop =
            crop_and_resize(&buf, &BBox::new(0.0, 0.0, 4.0, 2.0), (8, 8), EdgePolicy::Constant).unwrap();
        assert_eq!((crop.buffer.width, crop.buffer.height), (8, 8));
        assert_eq!(crop.content, BBox::new(0.0, 2.0, 8.0, 4.0));
        assert_eq!(crop.buffer.pixel(4, 0), [0]);
        assert_eq!(crop.buffer.pixel(4, 4), [200]);
        assert_eq!(crop.transform.apply(0.0, 0.0), (0.0, 2.0));
    }

    #[test]
    fn zero_area_and_zero_target_are_errors() {
        let buf = gradient(4, 4);
        assert!(crop_and_resize(&buf, &BBox::new(0.0, 0.0, 0.2, 3.0), (4, 4), EdgePolicy::Distort).is_err());
        assert!(crop_and_resize(&buf, &BBox::new(0.0, 0.0, 2.0, 2.0), (0, 4), EdgePolicy::Distort).is_err());
    }

    #[test]
    fn edge_policy_parses() {
        assert_eq!("distort".parse::<EdgePolicy>().unwrap(), EdgePolicy::Distort);
        assert!("stretch".parse::<EdgePolicy>().is_err());
    }

    #[test]
    fn colorized_background_is_black() {
        let mask = PixelBuffer::from_data(2, 1, 1, vec![0, 1]).unwrap();
        let rgb = colorize_mask(&mask);
        assert_eq!(rgb.pixel(0, 0), [0, 0, 0]);
        assert_eq!(rgb.pixel(1, 0), [128, 0, 0]);
    }
}
