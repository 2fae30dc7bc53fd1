//! Dataset ingestion: CIFAR-10 binary batches and directories of PPM/PNG rasters.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};
use crate::tensor::{FeatureMap, Scalar};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;

/// A `C x H x W` image with values in `[0, 1]` and the bit depth it was read at.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: FeatureMap<f32>,
    bit_depth: u8,
}

impl ImageTensor {
    pub fn new(pixels: FeatureMap<f32>, bit_depth: u8) -> Result<Self> {
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidParameter(format!("unsupported bit depth {bit_depth}")));
        }
        if let Some(v) = pixels.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, bit_depth })
    }

    /// Builds from integer samples in planar order, dividing by `max_value`.
    pub fn from_planar(
        channels: usize,
        height: usize,
        width: usize,
        samples: &[u16],
        max_value: u16,
    ) -> Result<Self> {
        let max = f32::from(max_value);
        let data = samples.iter().map(|&s| (f32::from(s) / max).min(1.0)).collect();
        Self::new(FeatureMap::from_vec(channels, height, width, data)?, depth_for(max_value))
    }

    /// Builds from integer samples in interleaved (`HWC`) order.
    pub fn from_interleaved(
        channels: usize,
        height: usize,
        width: usize,
        samples: &[u16],
        max_value: u16,
    ) -> Result<Self> {
        if samples.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                context: "interleaved samples",
                expected: channels * height * width,
                actual: samples.len(),
            });
        }
        let plane = height * width;
        let mut planar = vec![0u16; samples.len()];
        for (i, px) in samples.chunks_exact(channels).enumerate() {
            for (c, &s) in px.iter().enumerate() {
                planar[c * plane + i] = s;
            }
        }
        Self::from_planar(channels, height, width, &planar, max_value)
    }

    pub fn pixels(&self) -> &FeatureMap<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> FeatureMap<f32> {
        self.pixels
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    /// Source dimension `n = H * W * C`.
    pub fn len(&self) -> usize {
        self.pixels.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_map<T: Scalar>(&self) -> FeatureMap<T> {
        self.pixels.cast()
    }

    /// The `size x size` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if size == 0 || top + size > self.height() || left + size > self.width() {
            return Err(Error::InvalidParameter(format!(
                "crop {size}x{size} at ({top}, {left}) exceeds {}x{} image",
                self.height(),
                self.width()
            )));
        }
        let mut data = Vec::with_capacity(self.channels() * size * size);
        for c in 0..self.channels() {
            let plane = self.pixels.plane(c);
            for y in top..top + size {
                let row = y * self.width() + left;
                data.extend_from_slice(&plane[row..row + size]);
            }
        }
        Ok(Self {
            pixels: FeatureMap::from_vec(self.channels(), size, size, data)?,
            bit_depth: self.bit_depth,
        })
    }
}

fn depth_for(max_value: u16) -> u8 {
    (16 - max_value.leading_zeros()) as u8
}

/// `round(x * (2^bit_depth - 1))` with halves rounded up, clamped to the range.
pub fn denormalize(x: &ImageTensor, bit_depth: u8) -> Vec<u16> {
    let max = ((1u32 << bit_depth.clamp(1, 16)) - 1) as f64;
    x.pixels
        .as_slice()
        .iter()
        .map(|&v| (f64::from(v) * max + 0.5).floor().clamp(0.0, max) as u16)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An ordered image collection. When `crop` is set, [`Dataset::sample`] returns
/// a seeded random `crop x crop` window of each image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    split: Split,
    provenance: String,
    crop: Option<usize>,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>, split: Split, provenance: impl Into<String>) -> Self {
        Self {
            images,
            split,
            provenance: provenance.into(),
            crop: None,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn crop(&self) -> Option<usize> {
        self.crop
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Serve seeded `size x size` crops. Every image must be at least that large.
    pub fn with_crop(mut self, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("crop size must be positive".into()));
        }
        if let Some(img) = self.images.iter().find(|i| i.height() < size || i.width() < size) {
            return Err(Error::InvalidParameter(format!(
                "crop {size} exceeds a {}x{} image in {}",
                img.height(),
                img.width(),
                self.provenance
            )));
        }
        self.crop = Some(size);
        Ok(self)
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset(self.provenance.clone()));
        }
        Ok(())
    }

    /// The first `n` images (all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.images.truncate(n);
        out
    }

    /// Splits after the first `n` images.
    pub fn split_at(mut self, n: usize) -> (Self, Self) {
        let rest = self.images.split_off(n.min(self.images.len()));
        let tail = Self {
            images: rest,
            split: self.split,
            provenance: self.provenance.clone(),
            crop: self.crop,
        };
        (self, tail)
    }

    /// Image `index` as seen during `epoch`: the full image, or a random crop
    /// drawn from a stream keyed by `(seed, epoch, index)`.
    pub fn sample(&self, index: usize, epoch: u64, seed: u64) -> Result<ImageTensor> {
        let img = &self.images[index];
        match self.crop {
            None => Ok(img.clone()),
            Some(size) => {
                let mut r = rng::stream(seed, StreamTag::Crop, &[epoch, index as u64]);
                let top = r.random_range(0..=img.height() - size);
                let left = r.random_range(0..=img.width() - size);
                img.crop(top, left, size)
            }
        }
    }

    /// Shape shared by every sample, if there is one.
    pub fn sample_shape(&self) -> Option<(usize, usize, usize)> {
        let first = self.images.first()?;
        let shape = match self.crop {
            Some(s) => (first.channels(), s, s),
            None => first.pixels.shape(),
        };
        let uniform = self.images.iter().all(|i| match self.crop {
            Some(_) => i.channels() == shape.0,
            None => i.pixels.shape() == shape,
        });
        uniform.then_some(shape)
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, StreamTag::Shuffle, &[epoch]));
    order
}

/// Parses CIFAR-10 binary batch bytes. Labels are discarded.
pub fn parse_cifar10(bytes: &[u8], origin: &Path) -> Result<Vec<ImageTensor>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::TruncatedRecord {
            path: origin.to_path_buf(),
            offset: (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64,
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let samples: Vec<u16> = rec[1..].iter().map(|&b| u16::from(b)).collect();
            ImageTensor::from_planar(3, CIFAR_SIDE, CIFAR_SIDE, &samples, 255)
        })
        .collect()
}

/// Loads and concatenates CIFAR-10 binary batch files in the given order.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        images.extend(parse_cifar10(&bytes, p)?);
    }
    let provenance = paths
        .iter()
        .map(|p| p.as_ref().display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    let split = if paths.len() == 1
        && paths[0].as_ref().file_name().is_some_and(|n| n == "test_batch.bin")
    {
        Split::Test
    } else {
        Split::Train
    };
    Ok(Dataset::new(images, split, format!("cifar10:{provenance}")))
}

/// The five training batches and the test batch inside an extracted
/// `cifar-10-batches-bin` directory.
pub fn cifar10_files(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    let train = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    (train, dir.join("test_batch.bin"))
}

fn ppm_tokens(bytes: &[u8], count: usize) -> Option<(Vec<usize>, usize)> {
    let mut pos = 2;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        out.push(std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?);
    }
    Some((out, pos))
}

/// Decodes a binary (`P6`) or ASCII (`P3`) PPM image.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<ImageTensor, String> {
    let binary = match bytes.get(..2) {
        Some(b"P6") => true,
        Some(b"P3") => false,
        _ => return Err("not a P3/P6 PPM file".into()),
    };
    let (header, end) = ppm_tokens(bytes, 3).ok_or("malformed PPM header")?;
    let (width, height, max) = (header[0], header[1], header[2]);
    if width == 0 || height == 0 || !(1..=65535).contains(&max) {
        return Err(format!("invalid PPM header {width}x{height} max {max}"));
    }
    let count = width * height * 3;
    let samples: Vec<u16> = if binary {
        let body = bytes.get(end + 1..).ok_or("missing PPM raster")?;
        let wide = max > 255;
        let need = count * if wide { 2 } else { 1 };
        if body.len() < need {
            return Err(format!("PPM raster has {} bytes, expected {need}", body.len()));
        }
        if wide {
            body[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
        } else {
            body[..need].iter().map(|&b| u16::from(b)).collect()
        }
    } else {
        let (mut values, _) = ppm_tokens(bytes, 3 + count).ok_or("truncated ASCII PPM raster")?;
        values.drain(..3);
        values.into_iter().map(|v| v.min(max) as u16).collect()
    };
    if samples.iter().any(|&s| usize::from(s) > max) {
        return Err("PPM sample exceeds declared maximum".into());
    }
    ImageTensor::from_interleaved(3, height, width, &samples, max as u16).map_err(|e| e.to_string())
}

fn decode_raster(path: &Path) -> std::result::Result<ImageTensor, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        return decode_ppm(&bytes);
    }
    let img = image::load_from_memory(&bytes).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().bits_per_pixel() / u16::from(img.color().channel_count()) > 8 {
        let samples = img.into_rgb16().into_raw();
        ImageTensor::from_interleaved(3, h, w, &samples, u16::MAX).map_err(|e| e.to_string())
    } else {
        let samples: Vec<u16> = img.into_rgb8().into_raw().into_iter().map(u16::from).collect();
        ImageTensor::from_interleaved(3, h, w, &samples, 255).map_err(|e| e.to_string())
    }
}

/// Loads every PPM/PNG file in `dir` (sorted by name), skipping undecodable
/// files and images smaller than `crop` on either side. Samples are random
/// `crop x crop` windows; `crop` must be a multiple of `stride`.
pub fn load_image_dir(dir: &Path, crop: usize, stride: usize) -> Result<Dataset> {
    if crop == 0 || stride == 0 || !crop.is_multiple_of(stride) {
        return Err(Error::StrideMismatch {
            height: crop,
            width: crop,
            multiple: stride,
        });
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut images = Vec::new();
    for p in &paths {
        match decode_raster(p) {
            Ok(img) if img.height() >= crop && img.width() >= crop => images.push(img),
            Ok(img) => log::info!(
                "skipping {}: {}x{} is smaller than crop {crop}",
                p.display(),
                img.height(),
                img.width()
            ),
            Err(reason) => log::warn!("skipping {}: {reason}", p.display()),
        }
    }
    let mut ds = Dataset::new(images, Split::Train, format!("dir:{}", dir.display()));
    ds.crop = Some(crop);
    ds.ensure_nonempty()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR_RECORD];
        r[0] = 7;
        r
    }

    #[test]
    fn single_cifar_record() {
        let imgs = parse_cifar10(&record(255), Path::new("x")).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].pixels().shape(), (3, 32, 32));
        assert!(imgs[0].pixels().as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(imgs[0].bit_depth(), 8);
    }

    #[test]
    fn cifar_planar_layout() {
        let mut r = record(0);
        r[1 + 1024 + 33] = 51; // green, row 1, column 1
        let img = &parse_cifar10(&r, Path::new("x")).unwrap()[0];
        assert_eq!(img.pixels().get(1, 1, 1), 0.2);
        assert_eq!(img.pixels().get(0, 1, 1), 0.0);
    }

    #[test]
    fn truncated_cifar_file() {
        let err = parse_cifar10(&vec![0u8; 3072], Path::new("b.bin")).unwrap_err();
        assert!(err.to_string().contains("truncated record"));
        let mut two = record(1);
        two.extend(vec![0u8; 100]);
        assert!(matches!(
            parse_cifar10(&two, Path::new("b.bin")),
            Err(Error::TruncatedRecord { offset: 3073, .. })
        ));
    }

    #[test]
    fn denormalize_rounding() {
        let map = FeatureMap::from_vec(1, 1, 4, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let img = ImageTensor::new(map, 8).unwrap();
        assert_eq!(denormalize(&img, 8), vec![0, 255, 128, 64]);
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let map = FeatureMap::from_vec(1, 1, 2, vec![0.0, 1.5]).unwrap();
        assert!(ImageTensor::new(map, 8).is_err());
    }

    #[test]
    fn ppm_binary_and_ascii_agree() {
        let raster: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let mut p6 = b"P6\n# comment\n3 2\n255\n".to_vec();
        p6.extend(&raster);
        let p3 = format!(
            "P3\n3 2\n255\n{}\n",
            raster.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        );
        let a = decode_ppm(&p6).unwrap();
        let b = decode_ppm(p3.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pixels().shape(), (3, 2, 3));
        assert_eq!(a.pixels().get(1, 0, 0), 13.0 / 255.0);
    }

    #[test]
    fn ppm_sixteen_bit() {
        let mut p6 = b"P6 1 1 65535\n".to_vec();
        p6.extend([0xff, 0xff, 0x00, 0x00, 0x80, 0x00]);
        let img = decode_ppm(&p6).unwrap();
        assert_eq!(img.bit_depth(), 16);
        assert_eq!(img.pixels().as_slice()[0], 1.0);
    }

    #[test]
    fn ppm_rejects_garbage() {
        assert!(decode_ppm(b"P5 1 1 255\n\0").is_err());
        assert!(decode_ppm(b"P6 4 4 255\n\0\0").is_err());
    }

    #[test]
    fn crop_extracts_window() {
        let samples: Vec<u16> = (0..3 * 4 * 5).map(|i| i as u16).collect();
        let img = ImageTensor::from_planar(3, 4, 5, &samples, 255).unwrap();
        let c = img.crop(1, 2, 2).unwrap();
        assert_eq!(c.pixels().get(0, 0, 0), 7.0 / 255.0);
        assert_eq!(c.pixels().get(2, 1, 1), 53.0 / 255.0);
        assert!(img.crop(3, 0, 2).is_err());
    }

    #[test]
    fn permutation_is_seeded() {
        let a = epoch_permutation(50, 1, 0);
        assert_eq!(a, epoch_permutation(50, 1, 0));
        assert_ne!(a, epoch_permutation(50, 1, 1));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn random_blobs_load_in_range(blob in proptest::collection::vec(any::<u8>(), CIFAR_RECORD * 2)) {
            let imgs = parse_cifar10(&blob, Path::new("p")).unwrap();
            prop_assert_eq!(imgs.len(), 2);
            for img in &imgs {
                prop_assert!(img.pixels().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
                let back = denormalize(img, 8);
                let orig = &blob[1..CIFAR_RECORD];
                if std::ptr::eq(img, &imgs[0]) {
                    prop_assert!(back.iter().zip(orig).all(|(&a, &b)| a == u16::from(b)));
                }
            }
        }
    }
}
