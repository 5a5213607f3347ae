//! RGB images and binary PPM (P6) encoding.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PPM {0}")]
    Malformed(String),
    #[error("unsupported image format for {0}; convert to binary PPM (P6)")]
    Unsupported(String),
    #[error("image dimension mismatch: {0}")]
    Dimensions(String),
}

/// Row-major RGB image with channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut img = Self::new(width, height);
        for p in img.data.chunks_mut(3) {
            p.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Channel-mean grayscale, row-major.
    pub fn gray(&self) -> Vec<T> {
        let third = T::lit(1.0 / 3.0);
        self.data
            .chunks(3)
            .map(|p| (p[0] + p[1] + p[2]) * third)
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: crate::scalar::cast_slice(&self.data),
        }
    }

    /// Box-filter downsampling by an integer factor; trailing rows and
    /// columns that do not fill a block are dropped.
    pub fn downsample(&self, factor: usize) -> Result<Self, ImageError> {
        if factor == 0 || factor > self.width || factor > self.height {
            return Err(ImageError::Dimensions(format!(
                "downsample factor {factor} for {}x{}",
                self.width, self.height
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = T::lit(1.0 / (factor * factor) as f64);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [T::zero(); 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v * norm));
            }
        }
        Ok(out)
    }

    /// 8-bit quantization: clamp to `[0, 1]`, scale by 255, round half up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let v = v.to_f64_lossless().clamp(0.0, 1.0);
                (v * 255.0 + 0.5).floor().min(255.0) as u8
            })
            .collect()
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImageError> {
        let io = |source| ImageError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.encode_ppm()).map_err(io)
    }

    pub fn decode_ppm(bytes: &[u8], name: &str) -> Result<Self, ImageError> {
        let bad = |why: &str| ImageError::Malformed(format!("{name}: {why}"));
        let mut pos = 0;
        let mut token = || -> Result<String, ImageError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Malformed(format!("{name}: truncated header")));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        if magic != "P6" {
            return Err(bad(&format!("magic {magic}, expected P6")));
        }
        let parse = |s: String| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let width = parse(token()?)?;
        let height = parse(token()?)?;
        let maxval = parse(token()?)?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
            return Err(bad("unsupported dimensions or maxval"));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let n = width * height * 3;
        if bytes.len() < start + n {
            return Err(bad("truncated raster"));
        }
        let scale = 1.0 / maxval as f64;
        let data = bytes[start..start + n]
            .iter()
            .map(|&b| T::lit(b as f64 * scale))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ImageError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.as_deref() != Some("ppm") {
            return Err(ImageError::Unsupported(path.display().to_string()));
        }
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_ppm(&bytes, &path.display().to_string())
    }
}
