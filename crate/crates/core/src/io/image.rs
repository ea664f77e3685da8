use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::write_atomic;
use crate::{Error, Frame, Result};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: cannot decode PNG: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: unsupported PNG format {format}; expected 8-bit RGB")]
    Unsupported { path: PathBuf, format: String },
    #[error("{path}: cannot encode PNG: {message}")]
    Encode { path: PathBuf, message: String },
}

/// Load an 8-bit RGB PNG with values mapped to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let decode_err = |e: png::DecodingError| ImageError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(ImageError::Unsupported {
            path: path.to_path_buf(),
            format: format!("{color:?} at {} bits", depth as u8),
        }
        .into());
    }
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    Ok(Frame::from_fn(3, w, h, |c, x, y| buf[y * stride + 3 * x + c] as f32 / 255.0))
}

fn to_byte(v: f32) -> u8 {
    // round half up, saturating outside [0, 1]
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let encode_err = |e: png::EncodingError| ImageError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(encode_err)?;
        writer.write_image_data(bytes).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    write_atomic(path, &out)
}

/// Save an RGB frame (or a single-channel frame as grayscale) as 8-bit PNG.
pub fn save_image(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = frame.dims();
    match frame.channels() {
        3 => {
            let mut bytes = Vec::with_capacity(3 * w * h);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        bytes.push(to_byte(frame.get(c, x, y)));
                    }
                }
            }
            encode(path, w, h, png::ColorType::Rgb, &bytes)
        }
        1 => {
            let bytes: Vec<u8> = frame.data().iter().map(|&v| to_byte(v)).collect();
            encode(path, w, h, png::ColorType::Grayscale, &bytes)
        }
        c => Err(Error::Invalid(format!("cannot save a {c}-channel frame"))),
    }
}

/// Save raw 8-bit grayscale bytes, row-major.
pub fn save_gray_u8(bytes: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    assert_eq!(bytes.len(), width * height, "grayscale buffer size");
    encode(path.as_ref(), width, height, png::ColorType::Grayscale, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_values_map_to_unit_range_and_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let f = Frame::from_fn(3, 256, 2, |c, x, y| ((x + c * 7 + y * 13) % 256) as f32 / 255.0);
        save_image(&f, &p).unwrap();
        let g = load_image(&p).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.get(0, 255, 0), 1.0);
        assert_eq!(g.get(0, 0, 0), 0.0);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(to_byte(0.5 / 255.0), 1);
        assert_eq!(to_byte(1.5 / 255.0), 2);
        assert_eq!(to_byte(1.49 / 255.0), 1);
        assert_eq!(to_byte(-0.2), 0);
        assert_eq!(to_byte(1.7), 255);
    }

    #[test]
    fn grayscale_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_gray_u8(&[0, 10, 20, 30], 2, 2, &p).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Image(ImageError::Unsupported { .. }))));
    }

    #[test]
    fn sixteen_bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0; 6]).unwrap();
        }
        std::fs::write(&p, out).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Image(ImageError::Unsupported { .. }))));
    }

    #[test]
    fn garbage_is_a_decode_error_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::Image(ImageError::Decode { .. })));
        assert!(err.to_string().contains("bad.png"));
    }
}
