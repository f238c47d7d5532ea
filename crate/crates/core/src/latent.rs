//! The C-channel image container and its file formats.
//!
//! `.lrf` layout: magic `LRF1`, u32 height, u32 width, u32 channels,
//! u32 flags (bit 0: alpha map present), then H*W*C little-endian f32 values
//! row-major with channel fastest, then the optional H*W f32 alpha map.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{LrfError, Result};

const LRF_MAGIC: &[u8; 4] = b"LRF1";

/// H x W x C feature map; the render target and loss operand. Values are f64
/// in memory and f32 on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
}

impl LatentImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            alpha: None,
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(LrfError::ShapeMismatch {
                context: "latent image data".into(),
                expected: format!("{} values", height * width * channels),
                actual: format!("{}", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            alpha: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .alpha
                .as_ref()
                .is_none_or(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Per-channel affine map `z * scale_c + offset_c`.
    pub fn affine_per_channel(&self, scale: &[f64], offset: &[f64]) -> Self {
        let mut out = self.clone();
        for px in out.data.chunks_mut(self.channels) {
            for (c, v) in px.iter_mut().enumerate() {
                *v = *v * scale[c] + offset[c];
            }
        }
        out
    }
}

pub fn check_same_shape(context: &str, a: &LatentImage, b: &LatentImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(LrfError::ShapeMismatch {
            context: context.into(),
            expected: a.shape_str(),
            actual: b.shape_str(),
        });
    }
    Ok(())
}

/// Write a `.lrf` file.
pub fn write_lrf(path: impl AsRef<Path>, img: &LatentImage) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(LRF_MAGIC)?;
    w.write_u32::<LittleEndian>(img.height as u32)?;
    w.write_u32::<LittleEndian>(img.width as u32)?;
    w.write_u32::<LittleEndian>(img.channels as u32)?;
    w.write_u32::<LittleEndian>(u32::from(img.alpha.is_some()))?;
    for v in &img.data {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    if let Some(alpha) = &img.alpha {
        for v in alpha {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    Ok(())
}

/// Read a `.lrf` file.
pub fn read_lrf(path: impl AsRef<Path>) -> Result<LatentImage> {
    let path = path.as_ref();
    let perr = |message: String| LrfError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LRF_MAGIC {
        return Err(perr(format!("bad magic {magic:?}, expected LRF1")));
    }
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let channels = r.read_u32::<LittleEndian>()? as usize;
    let flags = r.read_u32::<LittleEndian>()?;
    if flags > 1 {
        return Err(perr(format!("unknown flags {flags:#x}")));
    }
    if height == 0 || width == 0 || channels == 0 {
        return Err(perr(format!("degenerate dimensions {height}x{width}x{channels}")));
    }
    let n = height * width * channels;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    let mut img = LatentImage::from_data(height, width, channels, data)?;
    if flags & 1 != 0 {
        let mut alpha = Vec::with_capacity(height * width);
        for _ in 0..height * width {
            alpha.push(r.read_f32::<LittleEndian>()? as f64);
        }
        img.alpha = Some(alpha);
    }
    Ok(img)
}

/// Write one grayscale PFM per channel next to `base`, suffixed `_c{k}.pfm`.
/// PFM stores rows bottom-to-top; scale -1 marks little-endian data.
pub fn write_pfm_channels(base: impl AsRef<Path>, img: &LatentImage) -> Result<Vec<std::path::PathBuf>> {
    let base = base.as_ref();
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "latent".into());
    let dir = base.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut written = Vec::new();
    for c in 0..img.channels {
        let path = dir.join(format!("{stem}_c{c}.pfm"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
        for y in (0..img.height).rev() {
            for x in 0..img.width {
                w.write_f32::<LittleEndian>(img.get(y, x, c) as f32)?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

/// Load a PNG as a 3-channel latent image with values in [0, 1].
pub fn read_png(path: impl AsRef<Path>) -> Result<LatentImage> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = LatentImage::zeros(h, w, 3);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(y as usize, x as usize, c, px[c] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Write a 3-channel latent image as an 8-bit PNG, clamping to [0, 1].
pub fn write_png(path: impl AsRef<Path>, img: &LatentImage) -> Result<()> {
    if img.channels != 3 {
        return Err(LrfError::ShapeMismatch {
            context: "png export".into(),
            expected: "3 channels".into(),
            actual: format!("{}", img.channels),
        });
    }
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.pixel(y, x);
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    (px[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (px[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (px[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    out.save(path.as_ref())?;
    Ok(())
}
