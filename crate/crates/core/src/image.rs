//! Float images, PFM/PPM output and PSNR.

use std::io::Write;

use crate::bytes::Reader;
use crate::error::{Error, Result};

/// Single-channel float image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Grayscale little-endian PFM (`Pf`, negative scale), rows bottom-up.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 4);
        for row in self.data.chunks(self.width.max(1)).rev() {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(buf: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Invalid("truncated PFM header".into()));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the data.
        pos += 1;
        if fields[0] != "Pf" {
            return Err(Error::BadMagic {
                expected: "Pf".into(),
                found: fields[0].clone(),
            });
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Invalid(format!("bad PFM size {s:?}")));
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let scale: f64 = fields[3]
            .parse()
            .map_err(|_| Error::Invalid(format!("bad PFM scale {:?}", fields[3])))?;
        if scale >= 0.0 {
            return Err(Error::Invalid("big-endian PFM is not supported".into()));
        }
        let mut r = Reader::new(buf.get(pos..).unwrap_or_default(), "PFM data");
        let mut img = Image::zeros(width, height);
        for y in (0..height).rev() {
            for x in 0..width {
                img.data[y * width + x] = r.f32()?;
            }
        }
        Ok(img)
    }

    /// 8-bit binary PPM preview with `log(1 + I/I0) / log(1 + Imax/I0)`,
    /// `I0 = Imax / 100`.
    pub fn to_ppm_preview(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let imax = f64::from(self.max());
        let i0 = imax / 100.0;
        for &v in &self.data {
            let g = if imax > 0.0 {
                ((1.0 + f64::from(v.max(0.0)) / i0).ln() / (1.0 + imax / i0).ln()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let b = (g * 255.0).round() as u8;
            out.extend_from_slice(&[b, b, b]);
        }
        out
    }

    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_pfm())?;
        Ok(())
    }
}

/// `10 log10(max(a)^2 / MSE(a, b))` with `a` the reference; `+inf` for
/// identical images.
pub fn image_psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let peak = f64::from(a.max());
    if peak <= 0.0 {
        return Err(Error::Invalid("reference image has no positive pixel".into()));
    }
    let n = a.data.len() as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
