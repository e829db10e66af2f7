//! Image sources: synthetic generators and TIFF files.

use std::path::{Path, PathBuf};

use super::{render_rows, splitmix64};
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType};
use crate::tiff::TiffReader;

fn check_inputs(inputs: &[ImageInfo]) -> Result<()> {
    if !inputs.is_empty() {
        return Err(Error::Graph("sources take no inputs".into()));
    }
    Ok(())
}

/// Every sample equals `value`, quantized to the sample type.
#[derive(Clone, Debug)]
pub struct ConstantSource {
    info: ImageInfo,
    value: f64,
}

impl ConstantSource {
    pub fn new(info: ImageInfo, value: f64) -> Result<Self> {
        info.validate()?;
        Ok(ConstantSource { info, value })
    }
}

impl ProcessObject for ConstantSource {
    fn kind(&self) -> &'static str {
        "constant"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(0)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        check_inputs(inputs)?;
        Ok(self.info)
    }

    fn generate(&self, region: Region, info: &ImageInfo, _: &[&PixelBuffer], _: &ExecContext) -> Result<PixelBuffer> {
        Ok(PixelBuffer::filled(region, info.bands, info.sample_type, self.value))
    }
}

/// Alternating `low`/`high` squares of `cell` pixels, the top-left one low.
#[derive(Clone, Debug)]
pub struct CheckerboardSource {
    info: ImageInfo,
    cell: usize,
    low: f64,
    high: f64,
}

impl CheckerboardSource {
    pub fn new(info: ImageInfo, cell: usize, low: f64, high: f64) -> Result<Self> {
        info.validate()?;
        if cell == 0 {
            return Err(Error::Config("checkerboard cell size must be positive".into()));
        }
        Ok(CheckerboardSource { info, cell, low, high })
    }

    pub fn value_at(&self, x: usize, y: usize) -> f64 {
        if (x / self.cell + y / self.cell).is_multiple_of(2) {
            self.low
        } else {
            self.high
        }
    }
}

impl ProcessObject for CheckerboardSource {
    fn kind(&self) -> &'static str {
        "checkerboard"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(0)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        check_inputs(inputs)?;
        Ok(self.info)
    }

    fn generate(&self, region: Region, info: &ImageInfo, _: &[&PixelBuffer], exec: &ExecContext) -> Result<PixelBuffer> {
        let bands = info.bands;
        render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                px.fill(self.value_at(region.x() + i, y));
            }
        })
    }
}

/// Uniform noise over the full range of the sample type (`[0, 1)` for
/// floats). Each sample is a hash of the seed and its absolute position, so
/// any region is reproducible on its own.
#[derive(Clone, Debug)]
pub struct RandomSource {
    info: ImageInfo,
    seed: u64,
}

impl RandomSource {
    pub fn new(info: ImageInfo, seed: u64) -> Result<Self> {
        info.validate()?;
        Ok(RandomSource { info, seed })
    }

    pub fn value_at(&self, x: usize, y: usize, b: usize) -> f64 {
        let index = ((y * self.info.width + x) * self.info.bands + b) as u64;
        let h = splitmix64(self.seed ^ splitmix64(index));
        match self.info.sample_type {
            SampleType::U8 => (h & 0xff) as f64,
            SampleType::U16 => (h & 0xffff) as f64,
            SampleType::F32 => (h >> 40) as f64 / (1u64 << 24) as f64,
        }
    }
}

impl ProcessObject for RandomSource {
    fn kind(&self) -> &'static str {
        "random"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(0)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        check_inputs(inputs)?;
        Ok(self.info)
    }

    fn generate(&self, region: Region, info: &ImageInfo, _: &[&PixelBuffer], exec: &ExecContext) -> Result<PixelBuffer> {
        let bands = info.bands;
        render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                for (b, v) in px.iter_mut().enumerate() {
                    *v = self.value_at(region.x() + i, y, b);
                }
            }
        })
    }
}

/// Reads regions of a TIFF file on demand.
#[derive(Debug)]
pub struct TiffSource {
    path: PathBuf,
    reader: TiffReader,
}

impl TiffSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let reader = TiffReader::open(path.as_ref())?;
        Ok(TiffSource {
            path: path.as_ref().to_path_buf(),
            reader,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ProcessObject for TiffSource {
    fn kind(&self) -> &'static str {
        "read"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(0)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        check_inputs(inputs)?;
        Ok(*self.reader.info())
    }

    fn generate(&self, region: Region, _: &ImageInfo, _: &[&PixelBuffer], _: &ExecContext) -> Result<PixelBuffer> {
        self.reader.read_region(region)
    }
}
