//! Raster primitives shared by every other module: pixel regions, sample
//! types, image metadata and pixel-interleaved buffers.
//!
//! Coordinates are `usize`, which is 64 bits on every supported target, so
//! full-scene images (tens of thousands of pixels on a side) index without
//! overflow.

use std::fmt;

use crate::error::{Error, Result};

/// A rectangular pixel window. Empty windows are always stored as `0x0` at
/// `(0, 0)`, so two empty regions compare equal.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Region {
    x: usize,
    y: usize,
    width: usize,
    height: usize,
}

impl Region {
    pub const EMPTY: Region = Region {
        x: 0,
        y: 0,
        width: 0,
        height: 0,
    };

    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        if width == 0 || height == 0 {
            Self::EMPTY
        } else {
            Region {
                x,
                y,
                width,
                height,
            }
        }
    }

    /// The region `(0, 0, width, height)`.
    pub fn whole(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn x(&self) -> usize {
        self.x
    }

    pub fn y(&self) -> usize {
        self.y
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// One past the last column.
    pub fn end_x(&self) -> usize {
        self.x + self.width
    }

    /// One past the last row.
    pub fn end_y(&self) -> usize {
        self.y + self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.end_x() && y >= self.y && y < self.end_y()
    }

    /// True when `other` lies entirely inside `self`. The empty region is
    /// contained in everything.
    pub fn contains(&self, other: &Region) -> bool {
        other.is_empty()
            || (other.x >= self.x
                && other.y >= self.y
                && other.end_x() <= self.end_x()
                && other.end_y() <= self.end_y())
    }

    pub fn intersect(&self, other: &Region) -> Region {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.end_x().min(other.end_x());
        let y1 = self.end_y().min(other.end_y());
        if x1 <= x0 || y1 <= y0 {
            Region::EMPTY
        } else {
            Region::new(x0, y0, x1 - x0, y1 - y0)
        }
    }

    /// Smallest region containing both operands.
    pub fn bounding_union(&self, other: &Region) -> Region {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.end_x().max(other.end_x());
        let y1 = self.end_y().max(other.end_y());
        Region::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Expands by `radius` on all four sides, then clips to `bounds`.
    pub fn grow_clamped(&self, radius: usize, bounds: &Region) -> Region {
        if self.is_empty() {
            return Region::EMPTY;
        }
        let x0 = self.x.saturating_sub(radius);
        let y0 = self.y.saturating_sub(radius);
        let x1 = self.end_x().saturating_add(radius);
        let y1 = self.end_y().saturating_add(radius);
        Region::new(x0, y0, x1 - x0, y1 - y0).intersect(bounds)
    }
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Region({}, {}, {}x{})",
            self.x, self.y, self.width, self.height
        )
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleType {
    U8,
    U16,
    F32,
}

impl SampleType {
    pub fn byte_width(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::U16 => 2,
            SampleType::F32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, SampleType::F32)
    }

    /// Largest representable value (integer types only meaningful).
    pub fn max_value(self) -> f64 {
        match self {
            SampleType::U8 => u8::MAX as f64,
            SampleType::U16 => u16::MAX as f64,
            SampleType::F32 => f32::MAX as f64,
        }
    }

    /// Smallest positive step between distinct values near 1.
    pub fn quantization_step(self) -> f64 {
        match self {
            SampleType::U8 | SampleType::U16 => 1.0,
            SampleType::F32 => f32::EPSILON as f64,
        }
    }

    /// Converts a computed value to the nearest representable sample:
    /// ties round to even, integers saturate, NaN maps to zero.
    pub fn quantize(self, value: f64) -> f64 {
        match self {
            SampleType::F32 => value as f32 as f64,
            _ => {
                if value.is_nan() {
                    0.0
                } else {
                    value.round_ties_even().clamp(0.0, self.max_value())
                }
            }
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "u8" | "uint8" => Some(SampleType::U8),
            "u16" | "uint16" => Some(SampleType::U16),
            "f32" | "float32" => Some(SampleType::F32),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SampleType::U8 => "u8",
            SampleType::U16 => "u16",
            SampleType::F32 => "f32",
        }
    }
}

/// Whole-image metadata, resolved from sources and transformed by filters
/// on its way to the mapper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageInfo {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub sample_type: SampleType,
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing_x: f64,
    /// Negative for north-up rasters.
    pub spacing_y: f64,
}

impl ImageInfo {
    /// Metadata with an identity geo transform (origin 0, unit spacing).
    pub fn new(width: usize, height: usize, bands: usize, sample_type: SampleType) -> Self {
        ImageInfo {
            width,
            height,
            bands,
            sample_type,
            origin_x: 0.0,
            origin_y: 0.0,
            spacing_x: 1.0,
            spacing_y: 1.0,
        }
    }

    pub fn with_geo(mut self, origin_x: f64, origin_y: f64, spacing_x: f64, spacing_y: f64) -> Self {
        self.origin_x = origin_x;
        self.origin_y = origin_y;
        self.spacing_x = spacing_x;
        self.spacing_y = spacing_y;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Contract(format!(
                "image dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.bands
            )));
        }
        if self.spacing_x == 0.0 || self.spacing_y == 0.0 {
            return Err(Error::Contract("pixel spacing must be nonzero".into()));
        }
        Ok(())
    }

    /// Anything other than origin `(0, 0)` with unit spacing.
    pub fn has_geo_transform(&self) -> bool {
        !(self.origin_x == 0.0
            && self.origin_y == 0.0
            && self.spacing_x == 1.0
            && self.spacing_y == 1.0)
    }

    pub fn largest_region(&self) -> Region {
        Region::whole(self.width, self.height)
    }

    pub fn pixel_bytes(&self) -> u64 {
        (self.bands * self.sample_type.byte_width()) as u64
    }

    pub fn row_bytes(&self) -> u64 {
        self.width as u64 * self.pixel_bytes()
    }

    pub fn total_bytes(&self) -> u64 {
        self.height as u64 * self.row_bytes()
    }
}

/// Typed sample storage for a [`PixelBuffer`].
#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl Samples {
    fn zeroed(sample_type: SampleType, len: usize) -> Self {
        match sample_type {
            SampleType::U8 => Samples::U8(vec![0; len]),
            SampleType::U16 => Samples::U16(vec![0; len]),
            SampleType::F32 => Samples::F32(vec![0.0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_type(&self) -> SampleType {
        match self {
            Samples::U8(_) => SampleType::U8,
            Samples::U16(_) => SampleType::U16,
            Samples::F32(_) => SampleType::F32,
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Samples::U8(v) => v[i] as f64,
            Samples::U16(v) => v[i] as f64,
            Samples::F32(v) => v[i] as f64,
        }
    }

    /// Stores an already-quantized value.
    fn put(&mut self, i: usize, value: f64) {
        match self {
            Samples::U8(v) => v[i] = value as u8,
            Samples::U16(v) => v[i] = value as u16,
            Samples::F32(v) => v[i] = value as f32,
        }
    }
}

/// Pixel data for one region, row-major with bands interleaved per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBuffer {
    region: Region,
    bands: usize,
    samples: Samples,
}

impl PixelBuffer {
    pub fn new(region: Region, bands: usize, sample_type: SampleType) -> Self {
        Self::filled(region, bands, sample_type, 0.0)
    }

    pub fn filled(region: Region, bands: usize, sample_type: SampleType, value: f64) -> Self {
        let len = region.area() * bands;
        let mut samples = Samples::zeroed(sample_type, len);
        let q = sample_type.quantize(value);
        if q != 0.0 {
            for i in 0..len {
                samples.put(i, q);
            }
        }
        PixelBuffer {
            region,
            bands,
            samples,
        }
    }

    pub fn from_samples(region: Region, bands: usize, samples: Samples) -> Result<Self> {
        if samples.len() != region.area() * bands {
            return Err(Error::Contract(format!(
                "{} samples cannot fill {:?} with {} bands",
                samples.len(),
                region,
                bands
            )));
        }
        Ok(PixelBuffer {
            region,
            bands,
            samples,
        })
    }

    /// Builds a buffer from computed values, quantizing each to `sample_type`.
    pub fn from_f64(
        region: Region,
        bands: usize,
        sample_type: SampleType,
        values: &[f64],
    ) -> Result<Self> {
        let len = region.area() * bands;
        if values.len() != len {
            return Err(Error::Contract(format!(
                "{} values cannot fill {:?} with {} bands",
                values.len(),
                region,
                bands
            )));
        }
        let samples = match sample_type {
            SampleType::U8 => Samples::U8(
                values
                    .iter()
                    .map(|&v| sample_type.quantize(v) as u8)
                    .collect(),
            ),
            SampleType::U16 => Samples::U16(
                values
                    .iter()
                    .map(|&v| sample_type.quantize(v) as u16)
                    .collect(),
            ),
            SampleType::F32 => Samples::F32(values.iter().map(|&v| v as f32).collect()),
        };
        Ok(PixelBuffer {
            region,
            bands,
            samples,
        })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn sample_type(&self) -> SampleType {
        self.samples.sample_type()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn into_samples(self) -> Samples {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Flat index of sample `(x, y, b)` in absolute image coordinates.
    pub fn flat_index(&self, x: usize, y: usize, b: usize) -> Result<usize> {
        if !self.region.contains_point(x, y) || b >= self.bands {
            return Err(Error::Contract(format!(
                "sample ({x}, {y}, band {b}) is outside {:?} with {} bands",
                self.region, self.bands
            )));
        }
        Ok(((y - self.region.y) * self.region.width + (x - self.region.x)) * self.bands + b)
    }

    pub fn get(&self, x: usize, y: usize, b: usize) -> Result<f64> {
        Ok(self.samples.get(self.flat_index(x, y, b)?))
    }

    /// Stores `value` quantized to the buffer's sample type.
    pub fn set(&mut self, x: usize, y: usize, b: usize, value: f64) -> Result<()> {
        let i = self.flat_index(x, y, b)?;
        let q = self.sample_type().quantize(value);
        self.samples.put(i, q);
        Ok(())
    }

    /// All samples widened to `f64`, in storage order. Lossless for every
    /// supported sample type.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.samples {
            Samples::U8(v) => v.iter().map(|&s| s as f64).collect(),
            Samples::U16(v) => v.iter().map(|&s| s as f64).collect(),
            Samples::F32(v) => v.iter().map(|&s| s as f64).collect(),
        }
    }

    /// Copies out the sub-window `region`, which must lie inside this buffer.
    pub fn crop(&self, region: Region) -> Result<PixelBuffer> {
        if region.is_empty() || !self.region.contains(&region) {
            return Err(Error::Contract(format!(
                "cannot crop {:?} out of {:?}",
                region, self.region
            )));
        }
        if region == self.region {
            return Ok(self.clone());
        }
        let row_len = region.width * self.bands;
        let mut out = Samples::zeroed(self.sample_type(), region.area() * self.bands);
        for row in 0..region.height {
            let src = self.row_start(region.x, region.y + row);
            let dst = row * row_len;
            copy_range(&self.samples, src, &mut out, dst, row_len);
        }
        Ok(PixelBuffer {
            region,
            bands: self.bands,
            samples: out,
        })
    }

    /// Copies the overlap of `src` into this buffer. Band count and sample
    /// type must match.
    pub fn paste(&mut self, src: &PixelBuffer) -> Result<()> {
        if src.bands != self.bands || src.sample_type() != self.sample_type() {
            return Err(Error::Contract(
                "paste requires matching bands and sample type".into(),
            ));
        }
        let overlap = self.region.intersect(&src.region);
        if overlap.is_empty() {
            return Ok(());
        }
        let row_len = overlap.width * self.bands;
        for y in overlap.y..overlap.end_y() {
            let s = src.row_start(overlap.x, y);
            let d = self.row_start(overlap.x, y);
            copy_range(&src.samples, s, &mut self.samples, d, row_len);
        }
        Ok(())
    }

    /// Appends the samples as little-endian bytes.
    pub fn write_le_bytes(&self, out: &mut Vec<u8>) {
        match &self.samples {
            Samples::U8(v) => out.extend_from_slice(v),
            Samples::U16(v) => v.iter().for_each(|s| out.extend_from_slice(&s.to_le_bytes())),
            Samples::F32(v) => v.iter().for_each(|s| out.extend_from_slice(&s.to_le_bytes())),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.sample_type().byte_width());
        self.write_le_bytes(&mut out);
        out
    }

    pub fn from_le_bytes(
        region: Region,
        bands: usize,
        sample_type: SampleType,
        bytes: &[u8],
    ) -> Result<Self> {
        let len = region.area() * bands;
        if bytes.len() != len * sample_type.byte_width() {
            return Err(Error::Contract(format!(
                "{} bytes do not match {:?} x {} bands of {}",
                bytes.len(),
                region,
                bands,
                sample_type.name()
            )));
        }
        let samples = match sample_type {
            SampleType::U8 => Samples::U8(bytes.to_vec()),
            SampleType::U16 => Samples::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            SampleType::F32 => Samples::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(PixelBuffer {
            region,
            bands,
            samples,
        })
    }

    fn row_start(&self, x: usize, y: usize) -> usize {
        ((y - self.region.y) * self.region.width + (x - self.region.x)) * self.bands
    }
}

fn copy_range(src: &Samples, s: usize, dst: &mut Samples, d: usize, n: usize) {
    match (src, dst) {
        (Samples::U8(a), Samples::U8(b)) => b[d..d + n].copy_from_slice(&a[s..s + n]),
        (Samples::U16(a), Samples::U16(b)) => b[d..d + n].copy_from_slice(&a[s..s + n]),
        (Samples::F32(a), Samples::F32(b)) => b[d..d + n].copy_from_slice(&a[s..s + n]),
        _ => unreachable!("sample types checked by caller"),
    }
}

/// Read-only `f64` view over a buffer, indexed in absolute image
/// coordinates. Filters convert their inputs to this once per request.
#[derive(Clone, Debug)]
pub struct SampleView {
    region: Region,
    bands: usize,
    data: Vec<f64>,
}

impl SampleView {
    pub fn new(buf: &PixelBuffer) -> Self {
        SampleView {
            region: buf.region,
            bands: buf.bands,
            data: buf.to_f64(),
        }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Sample at absolute `(x, y)`; the caller guarantees it is in region.
    #[inline]
    pub fn at(&self, x: usize, y: usize, b: usize) -> f64 {
        debug_assert!(self.region.contains_point(x, y) && b < self.bands);
        self.data[((y - self.region.y) * self.region.width + (x - self.region.x)) * self.bands + b]
    }

    /// All bands of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = ((y - self.region.y) * self.region.width + (x - self.region.x)) * self.bands;
        &self.data[i..i + self.bands]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersect_examples() {
        let a = Region::new(0, 0, 4, 4);
        assert_eq!(a.intersect(&Region::new(2, 2, 4, 4)), Region::new(2, 2, 2, 2));
        assert_eq!(a.intersect(&a), a);
        assert_eq!(
            Region::new(0, 0, 2, 2).intersect(&Region::new(5, 5, 1, 1)),
            Region::EMPTY
        );
    }

    #[test]
    fn empty_regions_are_canonical() {
        assert_eq!(Region::new(3, 7, 0, 5), Region::EMPTY);
        assert_eq!(Region::new(3, 7, 5, 0), Region::EMPTY);
        assert!(Region::EMPTY.is_empty());
        // touching edges do not overlap
        assert!(Region::new(0, 0, 2, 2)
            .intersect(&Region::new(2, 0, 2, 2))
            .is_empty());
    }

    #[test]
    fn grow_examples() {
        let bounds = Region::new(0, 0, 10, 10);
        assert_eq!(
            Region::new(2, 2, 2, 2).grow_clamped(1, &bounds),
            Region::new(1, 1, 4, 4)
        );
        assert_eq!(
            Region::new(0, 0, 2, 2).grow_clamped(3, &Region::new(0, 0, 4, 4)),
            Region::new(0, 0, 4, 4)
        );
        let r = Region::new(8, 8, 5, 5);
        assert_eq!(r.grow_clamped(0, &bounds), r.intersect(&bounds));
    }

    #[test]
    fn flat_index_examples() {
        let buf = PixelBuffer::new(Region::new(0, 0, 3, 2), 2, SampleType::U8);
        assert_eq!(buf.flat_index(1, 0, 1).unwrap(), 3);
        assert_eq!(buf.flat_index(2, 1, 0).unwrap(), 10);
        let buf = PixelBuffer::new(Region::new(5, 5, 4, 4), 1, SampleType::U8);
        assert_eq!(buf.flat_index(5, 5, 0).unwrap(), 0);
    }

    #[test]
    fn flat_index_is_a_bijection() {
        // enumerate every (x, y, b) of a 3x2x2 buffer
        let buf = PixelBuffer::new(Region::new(0, 0, 3, 2), 2, SampleType::U8);
        let mut seen = [false; 12];
        for y in 0..2 {
            for x in 0..3 {
                for b in 0..2 {
                    let i = buf.flat_index(x, y, b).unwrap();
                    assert!(!seen[i], "index {i} hit twice");
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn out_of_region_access_is_reported() {
        let mut buf = PixelBuffer::new(Region::new(5, 5, 4, 4), 1, SampleType::U16);
        assert!(matches!(buf.get(4, 5, 0), Err(Error::Contract(_))));
        assert!(matches!(buf.get(5, 9, 0), Err(Error::Contract(_))));
        assert!(matches!(buf.get(5, 5, 1), Err(Error::Contract(_))));
        assert!(buf.set(9, 9, 0, 1.0).is_err());
    }

    #[test]
    fn quantize_rounds_half_to_even_and_saturates() {
        let t = SampleType::U8;
        assert_eq!(t.quantize(2.5), 2.0);
        assert_eq!(t.quantize(3.5), 4.0);
        assert_eq!(t.quantize(-4.0), 0.0);
        assert_eq!(t.quantize(300.0), 255.0);
        assert_eq!(t.quantize(f64::NAN), 0.0);
        assert_eq!(SampleType::F32.quantize(0.1), 0.1f32 as f64);
    }

    #[test]
    fn info_sizes() {
        let info = ImageInfo::new(10699, 11899, 4, SampleType::U16);
        assert_eq!(info.row_bytes(), 10699 * 8);
        assert_eq!(info.total_bytes(), 10699 * 11899 * 4 * 2);
        assert_eq!(info.total_bytes(), 1_018_459_208);
        assert!(!info.has_geo_transform());
        assert!(ImageInfo::new(0, 1, 1, SampleType::U8).validate().is_err());
    }

    #[test]
    fn crop_and_paste() {
        let region = Region::new(2, 3, 4, 3);
        let values: Vec<f64> = (0..region.area() * 2).map(|v| v as f64).collect();
        let buf = PixelBuffer::from_f64(region, 2, SampleType::U16, &values).unwrap();
        let sub = Region::new(3, 4, 2, 2);
        let c = buf.crop(sub).unwrap();
        for y in 4..6 {
            for x in 3..5 {
                for b in 0..2 {
                    assert_eq!(c.get(x, y, b).unwrap(), buf.get(x, y, b).unwrap());
                }
            }
        }
        let mut whole = PixelBuffer::new(Region::new(0, 0, 8, 8), 2, SampleType::U16);
        whole.paste(&buf).unwrap();
        assert_eq!(whole.crop(region).unwrap(), buf);
        assert!(buf.crop(Region::new(0, 0, 3, 3)).is_err());
    }

    #[test]
    fn le_bytes_round_trip() {
        let region = Region::new(0, 0, 3, 2);
        let buf = PixelBuffer::from_f64(region, 1, SampleType::F32, &[0.5, -1.0, 3.25, 7.0, 1e9, 0.0])
            .unwrap();
        let bytes = buf.to_le_bytes();
        assert_eq!(&bytes[0..4], &0.5f32.to_le_bytes());
        let back = PixelBuffer::from_le_bytes(region, 1, SampleType::F32, &bytes).unwrap();
        assert_eq!(back, buf);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn region() -> impl Strategy<Value = Region> {
        (0usize..40, 0usize..40, 0usize..30, 0usize..30).prop_map(|(x, y, w, h)| Region::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn intersect_is_commutative_associative_idempotent(a in region(), b in region(), c in region()) {
            prop_assert_eq!(a.intersect(&b), b.intersect(&a));
            prop_assert_eq!(a.intersect(&b).intersect(&c), a.intersect(&b.intersect(&c)));
            prop_assert_eq!(a.intersect(&a), a);
        }

        #[test]
        fn grow_stays_between_intersection_and_bounds(r in region(), k in 0usize..10, bounds in region()) {
            prop_assume!(!bounds.is_empty());
            let grown = r.grow_clamped(k, &bounds);
            prop_assert!(bounds.contains(&grown));
            prop_assert!(grown.contains(&r.intersect(&bounds)));
        }

        #[test]
        fn set_then_get_round_trips(x0 in 0usize..10, y0 in 0usize..10, w in 1usize..6, h in 1usize..6,
                                   bands in 1usize..4, v in 0u16..u16::MAX) {
            let region = Region::new(x0, y0, w, h);
            let mut buf = PixelBuffer::new(region, bands, SampleType::U16);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for b in 0..bands {
                        let value = (v as usize + x * 7 + y * 13 + b) % 65536;
                        buf.set(x, y, b, value as f64).unwrap();
                        prop_assert_eq!(buf.get(x, y, b).unwrap(), value as f64);
                    }
                }
            }
        }
    }
}
