//! Sources and filters for the pipeline graph.

pub mod band_math;
pub mod classify;
pub mod glcm;
pub mod meanshift;
pub mod pansharpen;
pub mod resample;
pub mod smooth;
pub mod source;
pub mod stats;

pub use band_math::{BandMath, Expression};
pub use classify::{ClassifyRule, DecisionRule, Stump};
pub use glcm::{GlcmFeature, GlcmTexture};
pub use meanshift::MeanShiftSmooth;
pub use pansharpen::PansharpenRcs;
pub use resample::{AffineGeoTransform, Resample, ResampleMode};
pub use smooth::SmoothConvolve;
pub use source::{CheckerboardSource, ConstantSource, RandomSource, TiffSource};
pub use stats::{BandStatistics, StatisticsSink, StatsAccumulator};

use crate::error::{Error, Result};
use crate::exec::{fill_rows, Parallelism};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType};

/// Computes `region` row by row into `f64` and quantizes into a buffer of
/// `sample_type`. `row_fn` gets the absolute row index.
pub(crate) fn render_rows<F>(
    region: Region,
    bands: usize,
    sample_type: SampleType,
    mode: Parallelism,
    row_fn: F,
) -> Result<PixelBuffer>
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    let row_len = region.width() * bands;
    let mut values = vec![0.0; region.area() * bands];
    let y0 = region.y();
    fill_rows(&mut values, row_len, mode, |i, row| row_fn(y0 + i, row));
    PixelBuffer::from_f64(region, bands, sample_type, &values)
}

pub(crate) fn same_geometry(kind: &str, a: &ImageInfo, b: &ImageInfo) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Config(format!(
            "{kind}: inputs are {}x{} and {}x{}, expected identical geometry",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// 64-bit mixer used by the seeded random source.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
