//! Float image buffers and their PFM / binary PPM encodings.
//!
//! Buffers hold linear values, row-major from the top row. PFM stores 32-bit
//! floats (rows bottom to top, as the format requires); PPM stores 8-bit
//! sRGB-encoded values.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("image data has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("non-finite pixel value at index {0}")]
    NonFinite(usize),
    #[error("malformed image at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },
    #[error("image sizes differ: {0:?} vs {1:?}")]
    Mismatch((usize, usize, usize), (usize, usize, usize)),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::Shape {
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let k = (j * self.width + i) * self.channels;
        &self.data[k..k + self.channels]
    }

    /// Channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.chunks_exact(self.channels).map(|p| p[c]).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn check_same_shape(&self, other: &ImageBuffer) -> Result<(), ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::Mismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// sRGB transfer function from linear `[0, 1]`.
pub fn srgb_encode(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn encode_pfm(img: &ImageBuffer) -> Vec<u8> {
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    let row = img.width * img.channels;
    for j in (0..img.height).rev() {
        for v in &img.data[j * row..(j + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn err(&self, msg: impl Into<String>) -> ImageError {
        ImageError::Decode {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a str, ImageError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| ImageError::Decode {
            offset: start,
            msg: "header is not ASCII".into(),
        })
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ImageError> {
        let start = self.pos;
        let t = self.token()?;
        t.parse().map_err(|_| ImageError::Decode {
            offset: start,
            msg: format!("invalid {what} {t:?}"),
        })
    }

    /// Consumes the single whitespace byte ending the header.
    fn end_header(&mut self) -> Result<usize, ImageError> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err("missing whitespace after header"));
        }
        self.pos += 1;
        Ok(self.pos)
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let channels = match r.token()? {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(ImageError::Decode {
            offset: 0,
            msg: format!("bad PFM magic {other:?}"),
        }),
    };
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    let scale: f64 = r.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(r.err("PFM scale must be non-zero"));
    }
    let start = r.end_header()?;
    let n = width * height * channels;
    let need = start + n * 4;
    if bytes.len() < need {
        return Err(ImageError::Decode {
            offset: bytes.len(),
            msg: format!("truncated pixel data, expected {need} bytes"),
        });
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0.0; n];
    for (k, chunk) in bytes[start..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = v as f64;
    }
    ImageBuffer::new(width, height, channels, data).map_err(|e| match e {
        ImageError::NonFinite(i) => ImageError::Decode {
            offset: start,
            msg: format!("non-finite value at pixel index {i}"),
        },
        other => other,
    })
}

/// 8-bit sRGB PPM; single-channel images are written as gray.
pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.pixel_count() * 3);
    for p in img.data.chunks_exact(img.channels) {
        for c in 0..3 {
            let v = p[if img.channels == 3 { c } else { 0 }];
            out.push((srgb_encode(v) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token()?;
    if magic != "P6" {
        return Err(ImageError::Decode {
            offset: 0,
            msg: format!("bad PPM magic {magic:?}"),
        });
    }
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    let maxval: u32 = r.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(r.err(format!("unsupported maxval {maxval}")));
    }
    let start = r.end_header()?;
    let need = start + width * height * 3;
    if bytes.len() < need {
        return Err(ImageError::Decode {
            offset: bytes.len(),
            msg: format!("truncated pixel data, expected {need} bytes"),
        });
    }
    let data = bytes[start..need]
        .iter()
        .map(|&b| srgb_decode(b as f64 / maxval as f64))
        .collect();
    ImageBuffer::new(width, height, 3, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pfm,
    Ppm,
}

impl ImageFormat {
    /// Format implied by a file extension (`pfm` or `ppm`).
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pfm" => Some(ImageFormat::Pfm),
            "ppm" => Some(ImageFormat::Ppm),
            _ => None,
        }
    }
}

pub fn encode_image(img: &ImageBuffer, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Pfm => encode_pfm(img),
        ImageFormat::Ppm => encode_ppm(img),
    }
}

/// Decodes by magic number.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    match bytes.get(..2) {
        Some(b"PF") | Some(b"Pf") => decode_pfm(bytes),
        Some(b"P6") => decode_ppm(bytes),
        _ => Err(ImageError::Decode {
            offset: 0,
            msg: "unrecognized image magic".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_gray_ppm_values() {
        let white = ImageBuffer::filled(1, 1, 3, 1.0);
        let bytes = encode_ppm(&white);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 255, 255]);
        let gray = ImageBuffer::filled(1, 1, 3, 0.5);
        let bytes = encode_ppm(&gray);
        assert_eq!(&bytes[bytes.len() - 3..], &[188, 188, 188]);
        assert_eq!(&bytes[..11], b"P6\n1 1\n255\n");
    }

    #[test]
    fn pfm_round_trip_is_bitwise() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| (i as f32 * 0.37 - 2.0) as f64).collect();
        let img = ImageBuffer::new(2, 3, 3, data).unwrap();
        let back = decode_pfm(&encode_pfm(&img)).unwrap();
        assert_eq!(back, img);
        let mono = img.channel(1);
        assert_eq!(decode_pfm(&encode_pfm(&mono)).unwrap(), mono);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let img = ImageBuffer::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&img);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(body[..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn big_endian_pfm_decodes() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![0.25]);
    }

    #[test]
    fn ppm_round_trip_within_quantization() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = ImageBuffer::new(2, 2, 3, data).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((srgb_encode(*a) - srgb_encode(*b)).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn truncated_input_reports_offset() {
        let img = ImageBuffer::filled(4, 4, 3, 0.5);
        let bytes = encode_pfm(&img);
        let err = decode_pfm(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, ImageError::Decode { offset, .. } if offset == bytes.len() - 5));
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(ImageError::Decode { offset: 0, .. })));
        assert!(decode_ppm(b"P6\n1 x\n255\n").is_err());
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(ImageBuffer::new(2, 2, 3, vec![0.0; 11]), Err(ImageError::Shape { .. })));
        assert_eq!(ImageBuffer::new(1, 1, 2, vec![0.0; 2]), Err(ImageError::Channels(2)));
        assert_eq!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]), Err(ImageError::NonFinite(0)));
    }
}
