//! PNG reading and writing: RGB images and VOC-style indexed label masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClassIndexMask, ImageTensor};

/// The 256-entry VOC color map; class index `i` is drawn with `palette[i]`.
pub fn voc_palette() -> [[u8; 3]; 256] {
    let mut palette = [[0u8; 3]; 256];
    for (i, entry) in palette.iter_mut().enumerate() {
        let mut c = i;
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        *entry = [r, g, b];
    }
    palette
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png(format!("{}: {e}", path.display()))
}

fn decode(path: &Path, transformations: png::Transformations) -> Result<(png::OutputInfo, Vec<u8>, png::ColorType)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let color = reader.info().color_type;
    Ok((info, buf, color))
}

/// Reads a label mask: 8-bit indexed (palette index = class) or 8-bit gray.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<ClassIndexMask> {
    let path = path.as_ref();
    let (info, buf, color) = decode(path, png::Transformations::IDENTITY)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    match color {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => return Err(png_err(path, format!("label mask has color type {other:?}"))),
    }
    ClassIndexMask::new(info.height as usize, info.width as usize, buf)
}

pub fn write_label_png(path: impl AsRef<Path>, mask: &ClassIndexMask) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        mask.width() as u32,
        mask.height() as u32,
    );
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(voc_palette().concat());
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer
        .write_image_data(mask.labels())
        .map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Reads any 8/16-bit PNG as an RGB image with values in `[0, 1]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let (info, buf, _) = decode(
        path,
        png::Transformations::EXPAND | png::Transformations::STRIP_16,
    )?;
    let (h, w) = (info.height as usize, info.width as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err(path, "palette was not expanded")),
    };
    let mut data = Vec::with_capacity(h * w * 3);
    for px in buf.chunks_exact(src_channels) {
        let rgb = if src_channels < 3 {
            [px[0]; 3]
        } else {
            [px[0], px[1], px[2]]
        };
        data.extend(rgb.iter().map(|&v| f64::from(v) / 255.0));
    }
    ImageTensor::new(h, w, 3, data)
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 3 {
        return Err(Error::shape(format!(
            "RGB png needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_rgb8(path, img.width(), img.height(), &bytes)
}

pub(crate) fn write_rgb8(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_matches_voc_colors() {
        let p = voc_palette();
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[1], [128, 0, 0]);
        assert_eq!(p[2], [0, 128, 0]);
        assert_eq!(p[3], [128, 128, 0]);
        assert_eq!(p[15], [192, 128, 128]);
        assert_eq!(p[20], [0, 64, 128]);
        assert_eq!(p[255], [224, 224, 192]);
    }

    #[test]
    fn label_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = ClassIndexMask::new(3, 4, vec![0, 1, 2, 255, 15, 0, 0, 1, 20, 20, 3, 0]).unwrap();
        write_label_png(&path, &mask).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), mask);
    }

    #[test]
    fn rgb_png_roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = ImageTensor::from_fn(2, 3, 3, |y, x, c| ((y * 3 + x) * 3 + c) as f64 / 17.0).unwrap();
        write_rgb_png(&path, &img).unwrap();
        let back = read_rgb_png(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn rgb_png_is_not_a_label_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        write_rgb_png(&path, &ImageTensor::filled(2, 2, 3, 0.5).unwrap()).unwrap();
        assert!(read_label_png(&path).is_err());
    }
}
