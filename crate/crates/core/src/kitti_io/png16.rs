use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::geometry::SceneFlowField;

struct RawImage {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u16>,
}

fn decode(bytes: &[u8], depth: BitDepth, color: ColorType) -> Result<RawImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(format!("png: {e}")))?;
    let info = reader.info();
    if info.bit_depth != depth || info.color_type != color {
        return Err(Error::format(format!(
            "png: expected {color:?} at {depth:?}, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = color.samples();
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png: image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    let samples = match depth {
        BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        _ => buf.iter().map(|&b| b as u16).collect(),
    };
    Ok(RawImage {
        width,
        height,
        channels,
        samples,
    })
}

fn encode(img: &RawImage, depth: BitDepth, color: ColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format(format!("png: {e}")))?;
        let bytes: Vec<u8> = match depth {
            BitDepth::Sixteen => img.samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
            _ => img.samples.iter().map(|&s| s as u8).collect(),
        };
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::format(format!("png: {e}")))?;
    }
    Ok(out)
}

fn quantize(value: f64, scale: f64, offset: f64, lo: f64) -> u16 {
    if !value.is_finite() {
        return lo as u16;
    }
    (value * scale + offset).round_ties_even().clamp(lo, 65535.0) as u16
}

pub fn decode_disparity_png(bytes: &[u8]) -> Result<Grid> {
    let img = decode(bytes, BitDepth::Sixteen, ColorType::Grayscale)?;
    let data = img.samples.iter().map(|&s| s as f64 / 256.0).collect();
    let valid = img.samples.iter().map(|&s| s > 0).collect();
    Grid::from_vec(1, img.height, img.width, data)?.with_valid(valid)
}

/// Encode a one-channel disparity grid. Valid values are rounded half to
/// even on the 1/256 lattice and clamped to at least one step.
pub fn encode_disparity_png(g: &Grid) -> Result<Vec<u8>> {
    g.ensure_channels(1, "disparity png")?;
    let (h, w) = (g.height(), g.width());
    let mut samples = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            samples.push(if g.is_valid(y, x) {
                quantize(g.at(0, y, x), 256.0, 0.0, 1.0)
            } else {
                0
            });
        }
    }
    let img = RawImage {
        width: w,
        height: h,
        channels: 1,
        samples,
    };
    encode(&img, BitDepth::Sixteen, ColorType::Grayscale)
}

/// Decode a flow PNG; `delta_d` is zero.
pub fn decode_flow_png(bytes: &[u8]) -> Result<SceneFlowField> {
    let img = decode(bytes, BitDepth::Sixteen, ColorType::Rgb)?;
    let mut flow = SceneFlowField::zeros(img.width, img.height);
    for (i, px) in img.samples.chunks_exact(img.channels).enumerate() {
        flow.u[i] = (px[0] as f64 - 32768.0) / 64.0;
        flow.v[i] = (px[1] as f64 - 32768.0) / 64.0;
        flow.valid[i] = px[2] > 0;
    }
    Ok(flow)
}

pub fn encode_flow_png(flow: &SceneFlowField) -> Result<Vec<u8>> {
    let mut samples = Vec::with_capacity(3 * flow.len());
    for i in 0..flow.len() {
        samples.push(quantize(flow.u[i], 64.0, 32768.0, 0.0));
        samples.push(quantize(flow.v[i], 64.0, 32768.0, 0.0));
        samples.push(flow.valid[i] as u16);
    }
    let img = RawImage {
        width: flow.width,
        height: flow.height,
        channels: 3,
        samples,
    };
    encode(&img, BitDepth::Sixteen, ColorType::Rgb)
}

pub fn read_disparity_png(path: impl AsRef<Path>) -> Result<Grid> {
    decode_disparity_png(&std::fs::read(path)?)
}

pub fn write_disparity_png(path: impl AsRef<Path>, g: &Grid) -> Result<()> {
    std::fs::write(path, encode_disparity_png(g)?)?;
    Ok(())
}

pub fn read_flow_png(path: impl AsRef<Path>) -> Result<SceneFlowField> {
    decode_flow_png(&std::fs::read(path)?)
}

pub fn write_flow_png(path: impl AsRef<Path>, flow: &SceneFlowField) -> Result<()> {
    std::fs::write(path, encode_flow_png(flow)?)?;
    Ok(())
}

/// 8-bit grayscale PNG (e.g. an object map) as a one-channel grid of raw values.
pub fn read_gray8_png(path: impl AsRef<Path>) -> Result<Grid> {
    let img = decode(&std::fs::read(path)?, BitDepth::Eight, ColorType::Grayscale)?;
    Grid::from_vec(
        1,
        img.height,
        img.width,
        img.samples.iter().map(|&s| s as f64).collect(),
    )
}

pub fn write_gray8_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write8(path, width, height, data, ColorType::Grayscale)
}

/// Interleaved RGB bytes, row-major.
pub fn write_rgb8_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write8(path, width, height, data, ColorType::Rgb)
}

fn write8(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8], color: ColorType) -> Result<()> {
    let channels = color.samples();
    if data.len() != width * height * channels {
        return Err(Error::shape(format!(
            "png: {} bytes for a {width}x{height}x{channels} image",
            data.len()
        )));
    }
    let img = RawImage {
        width,
        height,
        channels,
        samples: data.iter().map(|&b| b as u16).collect(),
    };
    std::fs::write(path, encode(&img, BitDepth::Eight, color)?)?;
    Ok(())
}
