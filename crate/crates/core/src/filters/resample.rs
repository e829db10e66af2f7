//! Affine resampling between pixel grids.
//!
//! The centre of output pixel `x` maps to input coordinate
//! `scale_x * (x + 0.5) + offset_x`, where input pixel `i` spans `[i, i+1)`.
//! Samples outside the input are taken from the nearest edge pixel.

use super::render_rows;
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleView};

/// Maps output pixel coordinates to input pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineGeoTransform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl AffineGeoTransform {
    pub const IDENTITY: AffineGeoTransform = AffineGeoTransform {
        scale_x: 1.0,
        scale_y: 1.0,
        offset_x: 0.0,
        offset_y: 0.0,
    };

    pub fn new(scale_x: f64, scale_y: f64, offset_x: f64, offset_y: f64) -> Result<Self> {
        let t = AffineGeoTransform {
            scale_x,
            scale_y,
            offset_x,
            offset_y,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.scale_x) && ok(self.scale_y) && ok(self.offset_x) && ok(self.offset_y))
            || self.scale_x == 0.0
            || self.scale_y == 0.0
        {
            return Err(Error::Config(format!("degenerate resampling transform {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn map_x(&self, x: usize) -> f64 {
        self.scale_x * (x as f64 + 0.5) + self.offset_x
    }

    #[inline]
    pub fn map_y(&self, y: usize) -> f64 {
        self.scale_y * (y as f64 + 0.5) + self.offset_y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Nearest,
    Bilinear,
}

impl ResampleMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "nearest" => Some(ResampleMode::Nearest),
            "bilinear" => Some(ResampleMode::Bilinear),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Resample {
    transform: AffineGeoTransform,
    mode: ResampleMode,
    size: Option<(usize, usize)>,
}

impl Resample {
    /// `size` fixes the output dimensions; by default they are the input
    /// dimensions divided by the scale, rounded.
    pub fn new(transform: AffineGeoTransform, mode: ResampleMode, size: Option<(usize, usize)>) -> Result<Self> {
        transform.validate()?;
        if let Some((w, h)) = size {
            if w == 0 || h == 0 {
                return Err(Error::Config(format!("resample output size {w}x{h} is empty")));
            }
        }
        Ok(Resample { transform, mode, size })
    }

    /// Inclusive span of input pixels touched for output coordinates
    /// `[a, b)` along one axis, before clamping.
    fn span(&self, a: usize, b: usize, map: impl Fn(usize) -> f64) -> (f64, f64) {
        let (p, q) = (map(a).floor(), map(b - 1).floor());
        let (lo, hi) = (p.min(q), p.max(q));
        match self.mode {
            ResampleMode::Nearest => (lo, hi),
            ResampleMode::Bilinear => (lo - 1.0, hi + 1.0),
        }
    }
}

fn clamp_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    if hi < 0.0 || lo >= len as f64 {
        return None;
    }
    let lo = lo.max(0.0) as usize;
    let hi = (hi.min(len as f64 - 1.0)) as usize;
    Some((lo, hi - lo + 1))
}

#[inline]
fn clamp_index(v: f64, len: usize) -> usize {
    v.clamp(0.0, len as f64 - 1.0) as usize
}

impl ProcessObject for Resample {
    fn kind(&self) -> &'static str {
        "resample"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(1)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        let input = inputs[0];
        let t = &self.transform;
        let (width, height) = self.size.unwrap_or_else(|| {
            (
                ((input.width as f64 / t.scale_x.abs()).round() as usize).max(1),
                ((input.height as f64 / t.scale_y.abs()).round() as usize).max(1),
            )
        });
        let mut info = input;
        info.width = width;
        info.height = height;
        info.origin_x = input.origin_x + t.offset_x * input.spacing_x;
        info.origin_y = input.origin_y + t.offset_y * input.spacing_y;
        info.spacing_x = input.spacing_x * t.scale_x;
        info.spacing_y = input.spacing_y * t.scale_y;
        info.validate()?;
        Ok(info)
    }

    fn input_region(&self, _: usize, output: Region, _: &ImageInfo, inputs: &[ImageInfo]) -> Result<Region> {
        let input = &inputs[0];
        let (x0, x1) = self.span(output.x(), output.end_x(), |x| self.transform.map_x(x));
        let (y0, y1) = self.span(output.y(), output.end_y(), |y| self.transform.map_y(y));
        match (clamp_span(x0, x1, input.width), clamp_span(y0, y1, input.height)) {
            (Some((x, w)), Some((y, h))) => Ok(Region::new(x, y, w, h)),
            _ => Err(Error::EmptyRequest),
        }
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        let view = SampleView::new(inputs[0]);
        let avail = view.region();
        let (in_w, in_h) = (avail.end_x(), avail.end_y());
        let bands = info.bands;
        let t = self.transform;
        // Clamping against the available window is the same as clamping
        // against the image: the window was computed from the same spans.
        let cx = |v: f64| clamp_index(v, in_w).max(avail.x());
        let cy = |v: f64| clamp_index(v, in_h).max(avail.y());
        render_rows(region, bands, info.sample_type, exec.parallelism, |y, row| {
            let fy = t.map_y(y);
            match self.mode {
                ResampleMode::Nearest => {
                    let sy = cy(fy.floor());
                    for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                        let sx = cx(t.map_x(region.x() + i).floor());
                        px.copy_from_slice(view.pixel(sx, sy));
                    }
                }
                ResampleMode::Bilinear => {
                    let v = fy - 0.5;
                    let vf = v.floor();
                    let wy = v - vf;
                    let (y0, y1) = (cy(vf), cy(vf + 1.0));
                    for (i, px) in row.chunks_exact_mut(bands).enumerate() {
                        let u = t.map_x(region.x() + i) - 0.5;
                        let uf = u.floor();
                        let wx = u - uf;
                        let (x0, x1) = (cx(uf), cx(uf + 1.0));
                        for (b, out) in px.iter_mut().enumerate() {
                            let top = view.at(x0, y0, b) * (1.0 - wx) + view.at(x1, y0, b) * wx;
                            let bottom = view.at(x0, y1, b) * (1.0 - wx) + view.at(x1, y1, b) * wx;
                            *out = top * (1.0 - wy) + bottom * wy;
                        }
                    }
                }
            }
        })
    }
}
