//! Minimal PNG helpers over the `png` crate (8-bit RGB and grayscale only).

use std::io::Cursor;

use super::EngineError;

pub(crate) fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        // Writing into a Vec cannot fail for well-formed dimensions.
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(data).expect("png data");
    }
    out
}

pub(crate) fn decode_png(bytes: &[u8], want: png::ColorType) -> Result<(usize, usize, Vec<u8>), EngineError> {
    let codec = |e: png::DecodingError| EngineError::Codec(e.to_string());
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(codec)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| EngineError::Codec("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(codec)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(EngineError::Codec(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let data = match (info.color_type, want) {
        (a, b) if a == b => buf,
        (png::ColorType::Grayscale, png::ColorType::Rgb) => buf.iter().flat_map(|v| [*v; 3]).collect(),
        (png::ColorType::Rgb, png::ColorType::Grayscale) => buf.chunks_exact(3).map(|c| c[0]).collect(),
        (png::ColorType::Rgba, png::ColorType::Rgb) => buf.chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
        (png::ColorType::Rgba, png::ColorType::Grayscale) => buf.chunks_exact(4).map(|c| c[0]).collect(),
        (png::ColorType::GrayscaleAlpha, png::ColorType::Grayscale) => buf.chunks_exact(2).map(|c| c[0]).collect(),
        (found, _) => return Err(EngineError::Codec(format!("unsupported color type {found:?}"))),
    };
    Ok((w, h, data))
}
