//! Grey-level co-occurrence texture features.

use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType, SampleView};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlcmFeature {
    /// Σ p(i,j)²
    Energy,
    /// Σ (i-j)² p(i,j)
    Contrast,
}

impl GlcmFeature {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "energy" => Some(GlcmFeature::Energy),
            "contrast" => Some(GlcmFeature::Contrast),
            _ => None,
        }
    }
}

/// Per pixel: quantize the `(2r+1)²` window (truncated to the image) into
/// `levels` grey levels over the global `[min, max]`, count the pixel pairs
/// `(p, p + offset)` lying inside the window in both directions, and emit
/// the requested features of the normalized matrix as `f32` bands.
/// A window without any pair yields 0 for every feature.
#[derive(Clone, Debug)]
pub struct GlcmTexture {
    radius: usize,
    levels: usize,
    offset: (isize, isize),
    features: Vec<GlcmFeature>,
    min: f64,
    max: f64,
}

impl GlcmTexture {
    pub fn new(
        radius: usize,
        levels: usize,
        offset: (isize, isize),
        features: Vec<GlcmFeature>,
        range: (f64, f64),
    ) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config(format!("glcm needs at least 2 levels, got {levels}")));
        }
        if levels > u16::MAX as usize {
            return Err(Error::Config(format!("glcm level count {levels} is too large")));
        }
        if features.is_empty() {
            return Err(Error::Config("glcm needs at least one feature".into()));
        }
        if offset == (0, 0) {
            return Err(Error::Config("glcm offset (0,0) pairs a pixel with itself".into()));
        }
        let (min, max) = range;
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::Config(format!("glcm range [{min}, {max}] is invalid")));
        }
        Ok(GlcmTexture {
            radius,
            levels,
            offset,
            features,
            min,
            max,
        })
    }

    pub fn quantize(&self, v: f64) -> u16 {
        if self.max <= self.min {
            return 0;
        }
        let q = ((v - self.min) / (self.max - self.min) * self.levels as f64).floor();
        q.clamp(0.0, (self.levels - 1) as f64) as u16
    }
}

/// Co-occurrence scratch space reused across the pixels of a row.
struct Matrix {
    levels: usize,
    counts: Vec<u32>,
    touched: Vec<usize>,
}

impl Matrix {
    fn new(levels: usize) -> Self {
        Matrix {
            levels,
            counts: vec![0; levels * levels],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn bump(&mut self, i: usize, j: usize) {
        let k = i * self.levels + j;
        if self.counts[k] == 0 {
            self.touched.push(k);
        }
        self.counts[k] += 1;
    }

    /// Writes the features and clears the matrix.
    fn emit(&mut self, features: &[GlcmFeature], out: &mut [f64]) {
        let total: u64 = self.touched.iter().map(|&k| self.counts[k] as u64).sum();
        let mut sq: u64 = 0;
        let mut contrast: u64 = 0;
        for &k in &self.touched {
            let c = self.counts[k] as u64;
            let (i, j) = (k / self.levels, k % self.levels);
            sq += c * c;
            contrast += (i.abs_diff(j) as u64).pow(2) * c;
            self.counts[k] = 0;
        }
        self.touched.clear();
        for (o, f) in out.iter_mut().zip(features) {
            *o = if total == 0 {
                0.0
            } else {
                match f {
                    GlcmFeature::Energy => sq as f64 / (total as f64 * total as f64),
                    GlcmFeature::Contrast => contrast as f64 / total as f64,
                }
            };
        }
    }
}

impl ProcessObject for GlcmTexture {
    fn kind(&self) -> &'static str {
        "glcm_texture"
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
        if inputs[0].bands != 1 {
            return Err(Error::Config(format!(
                "glcm_texture needs a single-band input, got {} bands",
                inputs[0].bands
            )));
        }
        let mut info = inputs[0];
        info.bands = self.features.len();
        info.sample_type = SampleType::F32;
        Ok(info)
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        let view = SampleView::new(inputs[0]);
        let src = view.region();
        let q: Vec<u16> = (src.y()..src.end_y())
            .flat_map(|y| (src.x()..src.end_x()).map(move |x| (x, y)))
            .map(|(x, y)| self.quantize(view.at(x, y, 0)))
            .collect();
        let level_at = |x: usize, y: usize| q[(y - src.y()) * src.width() + (x - src.x())] as usize;
        let r = self.radius;
        let (dx, dy) = self.offset;
        let bands = info.bands;
        let (w, h) = (info.width, info.height);
        super::render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            let mut m = Matrix::new(self.levels);
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                let x = region.x() + i;
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                // pairs (a, a + offset) with both ends in [x0,x1) x [y0,y1)
                let ax0 = (x0 as isize).max(x0 as isize - dx) as usize;
                let ax1 = (x1 as isize).min(x1 as isize - dx);
                let ay0 = (y0 as isize).max(y0 as isize - dy) as usize;
                let ay1 = (y1 as isize).min(y1 as isize - dy);
                if ax1 > ax0 as isize && ay1 > ay0 as isize {
                    for ay in ay0..ay1 as usize {
                        let by = (ay as isize + dy) as usize;
                        for ax in ax0..ax1 as usize {
                            let bx = (ax as isize + dx) as usize;
                            let (a, b) = (level_at(ax, ay), level_at(bx, by));
                            m.bump(a, b);
                            m.bump(b, a);
                        }
                    }
                }
                m.emit(&self.features, px);
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{CheckerboardSource, RandomSource};

    fn run(f: &GlcmTexture, img: &PixelBuffer, region: Region) -> PixelBuffer {
        let r = img.region();
        let in_info = ImageInfo::new(r.width(), r.height(), 1, img.sample_type());
        let info = f.output_information(&[in_info]).unwrap();
        let need = f.input_region(0, region, &info, &[in_info]).unwrap();
        f.generate(region, &info, &[&img.crop(need).unwrap()], &ExecContext::default())
            .unwrap()
    }

    fn both() -> Vec<GlcmFeature> {
        vec![GlcmFeature::Energy, GlcmFeature::Contrast]
    }

    /// Straightforward co-occurrence over explicit pair enumeration.
    fn oracle(img: &PixelBuffer, f: &GlcmTexture, x: usize, y: usize) -> (f64, f64) {
        let (w, h) = (img.region().width() as isize, img.region().height() as isize);
        let r = f.radius as isize;
        let inside = |px: isize, py: isize| {
            px >= 0 && py >= 0 && px < w && py < h && (px - x as isize).abs() <= r && (py - y as isize).abs() <= r
        };
        let mut p = vec![vec![0.0; f.levels]; f.levels];
        let mut n = 0.0;
        for py in 0..h {
            for px in 0..w {
                let (qx, qy) = (px + f.offset.0, py + f.offset.1);
                if inside(px, py) && inside(qx, qy) {
                    let a = f.quantize(img.get(px as usize, py as usize, 0).unwrap()) as usize;
                    let b = f.quantize(img.get(qx as usize, qy as usize, 0).unwrap()) as usize;
                    p[a][b] += 1.0;
                    p[b][a] += 1.0;
                    n += 2.0;
                }
            }
        }
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let mut energy = 0.0;
        let mut contrast = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let v = c / n;
                energy += v * v;
                contrast += (i as f64 - j as f64).powi(2) * v;
            }
        }
        (energy, contrast)
    }

    #[test]
    fn constant_window() {
        let img = PixelBuffer::filled(Region::whole(9, 9), 1, SampleType::U8, 40.0);
        let f = GlcmTexture::new(2, 8, (1, 0), both(), (0.0, 255.0)).unwrap();
        let out = run(&f, &img, Region::whole(9, 9));
        for px in out.to_f64().chunks(2) {
            assert_eq!(px, [1.0, 0.0]);
        }
    }

    #[test]
    fn two_level_checkerboard_offset_one_zero() {
        let info = ImageInfo::new(10, 10, 1, SampleType::U8);
        let src = CheckerboardSource::new(info, 1, 0.0, 255.0).unwrap();
        let img = src.generate(info.largest_region(), &info, &[], &ExecContext::default()).unwrap();
        let f = GlcmTexture::new(2, 2, (1, 0), both(), (0.0, 255.0)).unwrap();
        let out = run(&f, &img, info.largest_region());
        for px in out.to_f64().chunks(2) {
            assert_eq!(px, [0.5, 1.0]);
        }
    }

    #[test]
    fn random_matches_pair_enumeration_and_splits() {
        let info = ImageInfo::new(12, 12, 1, SampleType::U16);
        let img = RandomSource::new(info, 8)
            .unwrap()
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .unwrap();
        for offset in [(1, 0), (0, 1), (-1, 2)] {
            let f = GlcmTexture::new(2, 4, offset, both(), (0.0, 65535.0)).unwrap();
            let whole = run(&f, &img, info.largest_region());
            for y in 0..12 {
                for x in 0..12 {
                    let (e, c) = oracle(&img, &f, x, y);
                    assert!((whole.get(x, y, 0).unwrap() - e).abs() < 1e-6);
                    assert!((whole.get(x, y, 1).unwrap() - c).abs() < 1e-6);
                }
            }
            for rows in [1, 5, 7] {
                for y in (0..12).step_by(rows) {
                    let stripe = Region::new(0, y, 12, rows.min(12 - y));
                    assert_eq!(run(&f, &img, stripe), whole.crop(stripe).unwrap());
                }
            }
        }
    }

    #[test]
    fn window_without_pairs_is_zero() {
        let img = PixelBuffer::filled(Region::whole(3, 3), 1, SampleType::U8, 1.0);
        let f = GlcmTexture::new(0, 4, (1, 0), both(), (0.0, 4.0)).unwrap();
        let out = run(&f, &img, Region::whole(3, 3));
        assert!(out.to_f64().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_checks() {
        assert!(GlcmTexture::new(1, 1, (1, 0), both(), (0.0, 1.0)).is_err());
        assert!(GlcmTexture::new(1, 4, (0, 0), both(), (0.0, 1.0)).is_err());
        assert!(GlcmTexture::new(1, 4, (1, 0), vec![], (0.0, 1.0)).is_err());
        assert!(GlcmTexture::new(1, 4, (1, 0), both(), (2.0, 1.0)).is_err());
        let f = GlcmTexture::new(1, 4, (1, 0), both(), (0.0, 1.0)).unwrap();
        assert!(f.output_information(&[ImageInfo::new(4, 4, 2, SampleType::U8)]).is_err());
    }
}
