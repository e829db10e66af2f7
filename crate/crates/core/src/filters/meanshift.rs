//! Mean-shift smoothing with a flat kernel in the joint spatial-range domain.

use super::render_rows;
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleView};

/// Iteration stops once both the spatial and the spectral shift fall below
/// this.
pub const CONVERGENCE_THRESHOLD: f64 = 0.1;

/// Each pixel starts at its own position and value. One iteration averages
/// the positions and values of the image pixels within the square of
/// radius `h_s` around the rounded current position whose value lies
/// within Euclidean distance `h_r` of the current value. The output is the
/// value reached when the shift drops below [`CONVERGENCE_THRESHOLD`] or
/// after `max_iter` iterations.
#[derive(Clone, Debug)]
pub struct MeanShiftSmooth {
    spatial_radius: usize,
    range_radius: f64,
    max_iter: usize,
}

impl MeanShiftSmooth {
    pub fn new(spatial_radius: usize, range_radius: f64, max_iter: usize) -> Result<Self> {
        if spatial_radius < 1 {
            return Err(Error::Config("meanshift spatial radius must be at least 1".into()));
        }
        if !(range_radius > 0.0 && range_radius.is_finite()) {
            return Err(Error::Config(format!("meanshift range radius {range_radius} must be positive")));
        }
        if max_iter < 1 {
            return Err(Error::Config("meanshift needs at least one iteration".into()));
        }
        Ok(MeanShiftSmooth {
            spatial_radius,
            range_radius,
            max_iter,
        })
    }

    /// Runs the iteration for the pixel at `(x, y)`. `view` must cover the
    /// pixel grown by `h_s * max_iter`, clamped to the `w x h` image.
    pub fn converge(&self, view: &SampleView, w: usize, h: usize, x: usize, y: usize, out: &mut [f64]) {
        let bands = view.bands();
        let hs = self.spatial_radius as isize;
        let hr2 = self.range_radius * self.range_radius;
        let (mut px, mut py) = (x as f64, y as f64);
        out.copy_from_slice(view.pixel(x, y));
        let mut acc = vec![0.0; bands];
        for _ in 0..self.max_iter {
            let (cx, cy) = (px.round() as isize, py.round() as isize);
            let xs = (cx - hs).max(0) as usize..((cx + hs + 1) as usize).min(w);
            let ys = (cy - hs).max(0) as usize..((cy + hs + 1) as usize).min(h);
            acc.fill(0.0);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            for v in ys {
                for u in xs.clone() {
                    let p = view.pixel(u, v);
                    let d2: f64 = p.iter().zip(out.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d2 <= hr2 {
                        for (a, s) in acc.iter_mut().zip(p) {
                            *a += s;
                        }
                        sx += u as f64;
                        sy += v as f64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                break;
            }
            let n = n as f64;
            let (nx, ny) = (sx / n, sy / n);
            let mut spectral2 = 0.0;
            for (o, a) in out.iter_mut().zip(&acc) {
                let m = a / n;
                spectral2 += (m - *o) * (m - *o);
                *o = m;
            }
            let spatial = ((nx - px).powi(2) + (ny - py).powi(2)).sqrt();
            px = nx;
            py = ny;
            if spatial.max(spectral2.sqrt()) < CONVERGENCE_THRESHOLD {
                break;
            }
        }
    }
}

impl ProcessObject for MeanShiftSmooth {
    fn kind(&self) -> &'static str {
        "meanshift_smooth"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(1)
    }

    fn region_independent(&self) -> bool {
        true
    }

    /// Worst-case drift of the window centre over all iterations.
    fn radius(&self) -> usize {
        self.spatial_radius * self.max_iter
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
        let view = SampleView::new(inputs[0]);
        let bands = info.bands;
        render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                self.converge(&view, info.width, info.height, region.x() + i, y, px);
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::RandomSource;
    use crate::raster::SampleType;

    fn run(f: &MeanShiftSmooth, img: &PixelBuffer, region: Region) -> PixelBuffer {
        let r = img.region();
        let info = ImageInfo::new(r.width(), r.height(), img.bands(), img.sample_type());
        let need = f.input_region(0, region, &info, &[info]).unwrap();
        f.generate(region, &info, &[&img.crop(need).unwrap()], &ExecContext::default())
            .unwrap()
    }

    #[test]
    fn constant_image_is_unchanged() {
        let img = PixelBuffer::filled(Region::whole(6, 6), 2, SampleType::U8, 90.0);
        let f = MeanShiftSmooth::new(2, 10.0, 1).unwrap();
        assert_eq!(run(&f, &img, Region::whole(6, 6)), img);
    }

    #[test]
    fn step_larger_than_range_radius_keeps_zones() {
        let mut values = vec![10.0; 8 * 8];
        for y in 0..8 {
            for x in 4..8 {
                values[y * 8 + x] = 200.0;
            }
        }
        let img = PixelBuffer::from_f64(Region::whole(8, 8), 1, SampleType::U8, &values).unwrap();
        let f = MeanShiftSmooth::new(3, 50.0, 5).unwrap();
        assert_eq!(run(&f, &img, Region::whole(8, 8)), img);
    }

    #[test]
    fn split_matches_whole_image() {
        let info = ImageInfo::new(16, 16, 1, SampleType::U8);
        let img = RandomSource::new(info, 31)
            .unwrap()
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .unwrap();
        let f = MeanShiftSmooth::new(2, 16.0, 3).unwrap();
        let whole = run(&f, &img, info.largest_region());
        assert_ne!(whole, img);
        for (rows, y) in [(4, 0), (4, 4), (3, 13), (1, 7)] {
            let stripe = Region::new(0, y, 16, rows);
            assert_eq!(run(&f, &img, stripe), whole.crop(stripe).unwrap());
        }
        let tile = Region::new(5, 6, 4, 3);
        assert_eq!(run(&f, &img, tile), whole.crop(tile).unwrap());
    }

    #[test]
    fn parameter_checks() {
        assert!(MeanShiftSmooth::new(0, 1.0, 1).is_err());
        assert!(MeanShiftSmooth::new(1, 0.0, 1).is_err());
        assert!(MeanShiftSmooth::new(1, 1.0, 0).is_err());
    }
}
