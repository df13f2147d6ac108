//! PNG encoding of images (8-bit RGB) and label maps (8-bit palette).

use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{ImageRGB, SegMap, NUM_LABELS};

/// Display colours of the seven labels, in label order.
pub const LABEL_PALETTE: [[u8; 3]; NUM_LABELS] = [
    [0, 0, 0],
    [128, 64, 0],
    [255, 204, 153],
    [220, 20, 60],
    [30, 60, 200],
    [255, 230, 0],
    [0, 170, 80],
];

pub fn encode_rgb(image: &ImageRGB) -> Result<Vec<u8>> {
    let (m, n) = image.dims();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, n as u32, m as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&image.to_rgb8())?;
    }
    Ok(out)
}

pub fn encode_labels(labels: &Array2<u8>) -> Result<Vec<u8>> {
    let (m, n) = labels.dim();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, n as u32, m as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(LABEL_PALETTE.concat());
        let mut w = enc.write_header()?;
        let data: Vec<u8> = labels.iter().copied().collect();
        w.write_image_data(&data)?;
    }
    Ok(out)
}

/// Raw decode without palette expansion: `(height, width, color, bytes)`.
fn decode_raw(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("expected 8-bit samples, found {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.height as usize, info.width as usize, info.color_type, buf))
}

/// Decodes 8-bit RGB (alpha, if any, is dropped; grey is expanded).
pub fn decode_rgb(bytes: &[u8]) -> Result<ImageRGB> {
    let (m, n, color, buf) = decode_raw(bytes)?;
    let rgb: Vec<u8> = match color {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(Error::Png(format!("expected an RGB image, found {other:?}"))),
    };
    ImageRGB::from_rgb8(m, n, &rgb)
}

/// Palette indices of an 8-bit indexed (or grey) PNG, unvalidated.
pub fn decode_indices(bytes: &[u8]) -> Result<Array2<u8>> {
    let (m, n, color, buf) = decode_raw(bytes)?;
    match color {
        png::ColorType::Indexed | png::ColorType::Grayscale => {
            Ok(Array2::from_shape_vec((m, n), buf).expect("buffer matches header"))
        }
        other => Err(Error::Png(format!("expected a palette image, found {other:?}"))),
    }
}

/// Decodes a label map; indices above 6 are reported as `PaletteViolation`.
pub fn decode_labels(bytes: &[u8], file: &Path) -> Result<SegMap> {
    let idx = decode_indices(bytes)?;
    if let Some(&v) = idx.iter().find(|&&v| v as usize >= NUM_LABELS) {
        return Err(Error::PaletteViolation {
            file: file.to_owned(),
            value: v,
        });
    }
    SegMap::from_labels(&idx)
}
