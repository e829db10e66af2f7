//! Ratio component substitution pansharpening.

use super::same_geometry;
use super::smooth::box_sums;
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleView};

/// `out(x,y,b) = xs(x,y,b) * pan(x,y) / max(smooth(pan)(x,y), eps)` with
/// `eps` one quantization step of the PAN sample type.
///
/// Inputs are `[pan, xs]`, in which case the box mean of `pan` over
/// `smoothing_radius` is computed internally and exactly, or
/// `[pan, xs, smoothed_pan]` when smoothing is a separate node.
#[derive(Clone, Debug)]
pub struct PansharpenRcs {
    smoothing_radius: usize,
}

impl PansharpenRcs {
    pub fn new(smoothing_radius: usize) -> Self {
        PansharpenRcs { smoothing_radius }
    }

    /// The per-sample formula.
    #[inline]
    pub fn fuse(xs: f64, pan: f64, smoothed: f64, eps: f64) -> f64 {
        xs * pan / smoothed.max(eps)
    }
}

impl ProcessObject for PansharpenRcs {
    fn kind(&self) -> &'static str {
        "pansharpen_rcs"
    }

    fn input_count(&self) -> InputCount {
        InputCount::AtLeast(2)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        if inputs.len() > 3 {
            return Err(Error::Config(format!(
                "pansharpen_rcs takes 2 or 3 inputs, got {}",
                inputs.len()
            )));
        }
        let pan = &inputs[0];
        for other in &inputs[1..] {
            same_geometry("pansharpen_rcs", pan, other)?;
        }
        if pan.bands != 1 {
            return Err(Error::Config(format!("pansharpen_rcs: PAN has {} bands, expected 1", pan.bands)));
        }
        if let Some(s) = inputs.get(2) {
            if s.bands != 1 {
                return Err(Error::Config(format!(
                    "pansharpen_rcs: smoothed PAN has {} bands, expected 1",
                    s.bands
                )));
            }
        }
        Ok(inputs[1])
    }

    fn input_region(&self, input: usize, output: Region, _: &ImageInfo, inputs: &[ImageInfo]) -> Result<Region> {
        let bounds = inputs[input].largest_region();
        if input == 0 && inputs.len() == 2 {
            Ok(output.grow_clamped(self.smoothing_radius, &bounds))
        } else {
            Ok(output.intersect(&bounds))
        }
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        let pan = SampleView::new(inputs[0]);
        let xs = SampleView::new(inputs[1]);
        let eps = inputs[0].sample_type().quantization_step();
        let pan_info = ImageInfo::new(info.width, info.height, 1, inputs[0].sample_type());
        let (smoothed, scale) = match inputs.get(2) {
            Some(s) => (SampleView::new(s).to_vec_in(region), 1.0),
            None => {
                let n = (2 * self.smoothing_radius + 1).pow(2) as f64;
                (box_sums(&pan, &pan_info, region, self.smoothing_radius, exec.parallelism), n)
            }
        };
        let bands = info.bands;
        super::render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            let j = y - region.y();
            for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                let x = region.x() + i;
                let p = pan.at(x, y, 0);
                let s = smoothed[j * region.width() + i] / scale;
                for (b, v) in px.iter_mut().enumerate() {
                    *v = Self::fuse(xs.at(x, y, b), p, s, eps);
                }
            }
        })
    }
}

impl SampleView {
    /// Samples of a single-band view restricted to `region`, row-major.
    pub(crate) fn to_vec_in(&self, region: Region) -> Vec<f64> {
        let mut out = Vec::with_capacity(region.area());
        for y in region.y()..region.end_y() {
            for x in region.x()..region.end_x() {
                out.push(self.at(x, y, 0));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::RandomSource;
    use crate::raster::SampleType;

    fn random(info: ImageInfo, seed: u64) -> PixelBuffer {
        RandomSource::new(info, seed)
            .unwrap()
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .unwrap()
    }

    fn run(f: &PansharpenRcs, pan: &PixelBuffer, xs: &PixelBuffer, region: Region) -> PixelBuffer {
        let infos = [
            ImageInfo::new(pan.region().width(), pan.region().height(), 1, pan.sample_type()),
            ImageInfo::new(xs.region().width(), xs.region().height(), xs.bands(), xs.sample_type()),
        ];
        let out_info = f.output_information(&infos).unwrap();
        let p = pan.crop(f.input_region(0, region, &out_info, &infos).unwrap()).unwrap();
        let x = xs.crop(f.input_region(1, region, &out_info, &infos).unwrap()).unwrap();
        f.generate(region, &out_info, &[&p, &x], &ExecContext::default()).unwrap()
    }

    #[test]
    fn constant_pan_returns_xs() {
        let pan = PixelBuffer::filled(Region::whole(8, 8), 1, SampleType::U16, 700.0);
        let xs = random(ImageInfo::new(8, 8, 3, SampleType::U16), 9);
        assert_eq!(run(&PansharpenRcs::new(2), &pan, &xs, Region::whole(8, 8)), xs);
    }

    #[test]
    fn zero_xs_gives_zero() {
        let pan = random(ImageInfo::new(8, 8, 1, SampleType::U16), 1);
        let xs = PixelBuffer::new(Region::whole(8, 8), 2, SampleType::F32);
        assert_eq!(run(&PansharpenRcs::new(1), &pan, &xs, Region::whole(8, 8)), xs);
    }

    #[test]
    fn random_pair_matches_direct_formula() {
        let pan = random(ImageInfo::new(16, 16, 1, SampleType::U16), 11);
        let xs_u16 = random(ImageInfo::new(16, 16, 2, SampleType::U16), 12);
        let xs = PixelBuffer::from_f64(Region::whole(16, 16), 2, SampleType::F32, &xs_u16.to_f64()).unwrap();
        let out = run(&PansharpenRcs::new(2), &pan, &xs, Region::whole(16, 16));
        for y in 0..16isize {
            for x in 0..16isize {
                let mut sum = 0.0;
                for dy in -2..=2isize {
                    for dx in -2..=2isize {
                        sum += pan.get((x + dx).clamp(0, 15) as usize, (y + dy).clamp(0, 15) as usize, 0).unwrap();
                    }
                }
                let smooth = sum / 25.0;
                let p = pan.get(x as usize, y as usize, 0).unwrap();
                for b in 0..2 {
                    let v = xs.get(x as usize, y as usize, b).unwrap();
                    let expected = (v * p / smooth.max(1.0)) as f32 as f64;
                    assert_eq!(out.get(x as usize, y as usize, b).unwrap(), expected);
                }
            }
        }
        let part = run(&PansharpenRcs::new(2), &pan, &xs, Region::new(0, 5, 16, 4));
        assert_eq!(part, out.crop(Region::new(0, 5, 16, 4)).unwrap());
    }

    #[test]
    fn geometry_mismatch_is_config_error() {
        let f = PansharpenRcs::new(1);
        let r = f.output_information(&[
            ImageInfo::new(8, 8, 1, SampleType::U8),
            ImageInfo::new(4, 4, 1, SampleType::U8),
        ]);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
