//! Separable box mean with clamp-to-edge replication.

use super::render_rows;
use crate::error::Result;
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleView};

/// Mean over the `(2r+1)²` window around each pixel, coordinates outside the
/// image replaced by the nearest edge pixel. Integer outputs are the exact
/// quotient rounded half to even.
#[derive(Clone, Debug)]
pub struct SmoothConvolve {
    radius: usize,
}

impl SmoothConvolve {
    pub fn new(radius: usize) -> Self {
        SmoothConvolve { radius }
    }
}

#[inline]
fn clamp_index(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Rounds `num / den` half to even, exactly.
pub(crate) fn div_round_half_even(num: i128, den: i128) -> i128 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Window sums of the box filter over `region` of an image of `info`'s
/// size, as `f64`. Exact for integer inputs (every partial sum is an
/// integer far below 2^53). Shared with pansharpening.
pub(crate) fn box_sums(
    view: &SampleView,
    info: &ImageInfo,
    region: Region,
    radius: usize,
    parallelism: crate::exec::Parallelism,
) -> Vec<f64> {
    let bands = view.bands();
    let r = radius as isize;
    let src = view.region();
    // horizontal pass over every source row the vertical pass will touch
    let mut horiz = vec![0.0; src.height() * region.width() * bands];
    crate::exec::fill_rows(&mut horiz, region.width() * bands, parallelism, |i, row| {
        let y = src.y() + i;
        for (j, px) in row.chunks_exact_mut(bands).enumerate() {
            let x = (region.x() + j) as isize;
            for k in -r..=r {
                let xs = clamp_index(x + k, info.width);
                for (b, acc) in px.iter_mut().enumerate() {
                    *acc += view.at(xs, y, b);
                }
            }
        }
    });
    let row_len = region.width() * bands;
    let mut out = vec![0.0; region.area() * bands];
    crate::exec::fill_rows(&mut out, row_len, parallelism, |i, row| {
        let y = (region.y() + i) as isize;
        for k in -r..=r {
            let ys = clamp_index(y + k, info.height) - src.y();
            let h = &horiz[ys * row_len..(ys + 1) * row_len];
            for (acc, v) in row.iter_mut().zip(h) {
                *acc += v;
            }
        }
    });
    out
}

impl ProcessObject for SmoothConvolve {
    fn kind(&self) -> &'static str {
        "smooth"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(1)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn radius(&self) -> usize {
        self.radius
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        Ok(inputs[0])
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        if self.radius == 0 {
            return inputs[0].crop(region);
        }
        let view = SampleView::new(inputs[0]);
        let sums = box_sums(&view, info, region, self.radius, exec.parallelism);
        let n = (2 * self.radius + 1).pow(2);
        let bands = info.bands;
        let row_len = region.width() * bands;
        let integer = info.sample_type.is_integer();
        render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            let i = y - region.y();
            let s = &sums[i * row_len..(i + 1) * row_len];
            for (v, &sum) in row.iter_mut().zip(s) {
                *v = if integer {
                    div_round_half_even(sum as i128, n as i128) as f64
                } else {
                    sum / n as f64
                };
            }
        })
    }
}
