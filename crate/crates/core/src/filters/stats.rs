//! Persistent per-band statistics: reset before streaming, accumulate each
//! split, synthesize across ranks afterwards.

use crate::comm::{Communicator, ReduceOp};
use crate::error::{Error, Result};
use crate::pipeline::{Sink, SinkSummary};
use crate::raster::{ImageInfo, PixelBuffer, SampleType, Samples};
use crate::split::SplitScheme;

/// Global statistics of one band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandStatistics {
    pub count: u64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

/// Rank-local running sums. Integer samples are summed exactly in `u128`;
/// float samples in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsAccumulator {
    bands: usize,
    integer: bool,
    count: u64,
    int_sum: Vec<u128>,
    int_sum_sq: Vec<u128>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(bands: usize, sample_type: SampleType) -> Self {
        let mut acc = StatsAccumulator {
            bands,
            integer: sample_type.is_integer(),
            count: 0,
            int_sum: Vec::new(),
            int_sum_sq: Vec::new(),
            sum: Vec::new(),
            sum_sq: Vec::new(),
            min: Vec::new(),
            max: Vec::new(),
        };
        acc.reset();
        acc
    }

    pub fn reset(&mut self) {
        let b = self.bands;
        self.count = 0;
        self.int_sum = vec![0; b];
        self.int_sum_sq = vec![0; b];
        self.sum = vec![0.0; b];
        self.sum_sq = vec![0.0; b];
        self.min = vec![f64::INFINITY; b];
        self.max = vec![f64::NEG_INFINITY; b];
    }

    /// Pixels seen so far on this rank.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn accumulate(&mut self, buf: &PixelBuffer) -> Result<()> {
        if buf.bands() != self.bands || buf.sample_type().is_integer() != self.integer {
            return Err(Error::Contract(format!(
                "statistics for {} bands cannot take a {}-band {} buffer",
                self.bands,
                buf.bands(),
                buf.sample_type().name()
            )));
        }
        let b = self.bands;
        match buf.samples() {
            Samples::U8(v) => self.accumulate_int(v.chunks_exact(b), |s| s as u128),
            Samples::U16(v) => self.accumulate_int(v.chunks_exact(b), |s| s as u128),
            Samples::F32(v) => {
                for px in v.chunks_exact(b) {
                    for (k, &s) in px.iter().enumerate() {
                        let s = s as f64;
                        self.sum[k] += s;
                        self.sum_sq[k] += s * s;
                        self.min[k] = self.min[k].min(s);
                        self.max[k] = self.max[k].max(s);
                    }
                }
            }
        }
        self.count += buf.region().area() as u64;
        Ok(())
    }

    fn accumulate_int<'a, T: Copy + 'a>(
        &mut self,
        pixels: impl Iterator<Item = &'a [T]>,
        widen: impl Fn(T) -> u128,
    ) {
        for px in pixels {
            for (k, &s) in px.iter().enumerate() {
                let s = widen(s);
                self.int_sum[k] += s;
                self.int_sum_sq[k] += s * s;
                let f = s as f64;
                self.min[k] = self.min[k].min(f);
                self.max[k] = self.max[k].max(f);
            }
        }
    }

    /// Statistics of everything accumulated on this rank alone.
    pub fn local_statistics(&self) -> Result<Vec<BandStatistics>> {
        self.derive(
            self.count,
            &self.int_sum,
            &self.int_sum_sq,
            &self.sum,
            &self.sum_sq,
            &self.min,
            &self.max,
        )
    }

    /// Collective: all-reduces the sums, minima and maxima over every rank
    /// and derives the global statistics, identical on all ranks.
    pub fn synthesize(&self, comm: &Communicator) -> Result<Vec<BandStatistics>> {
        let count = comm.all_reduce(&[self.count], ReduceOp::Sum)?[0];
        let int_sum = comm.all_reduce(&self.int_sum, ReduceOp::Sum)?;
        let int_sum_sq = comm.all_reduce(&self.int_sum_sq, ReduceOp::Sum)?;
        let sum = comm.all_reduce(&self.sum, ReduceOp::Sum)?;
        let sum_sq = comm.all_reduce(&self.sum_sq, ReduceOp::Sum)?;
        let min = comm.all_reduce(&self.min, ReduceOp::Min)?;
        let max = comm.all_reduce(&self.max, ReduceOp::Max)?;
        self.derive(count, &int_sum, &int_sum_sq, &sum, &sum_sq, &min, &max)
    }

    #[allow(clippy::too_many_arguments)]
    fn derive(
        &self,
        count: u64,
        int_sum: &[u128],
        int_sum_sq: &[u128],
        sum: &[f64],
        sum_sq: &[f64],
        min: &[f64],
        max: &[f64],
    ) -> Result<Vec<BandStatistics>> {
        if count == 0 {
            return Err(Error::UndefinedStats);
        }
        let n = count as f64;
        Ok((0..self.bands)
            .map(|k| {
                let (mean, variance) = if self.integer {
                    // n*Σx² - (Σx)² is an exact non-negative integer
                    let num = count as u128 * int_sum_sq[k] - int_sum[k] * int_sum[k];
                    let c = count as u128;
                    (ratio_to_f64(int_sum[k], c), ratio_to_f64(num, c * c))
                } else {
                    let mean = sum[k] / n;
                    (mean, (sum_sq[k] / n - mean * mean).max(0.0))
                };
                BandStatistics {
                    count,
                    mean,
                    variance,
                    min: min[k],
                    max: max[k],
                }
            })
            .collect())
    }
}

/// `num / den` rounded once, to nearest with ties to even. Falls back to
/// float division when the scaled operands would not fit in 128 bits.
pub fn ratio_to_f64(num: u128, den: u128) -> f64 {
    assert!(den != 0, "division by zero");
    if num == 0 {
        return 0.0;
    }
    let bits = |v: u128| 128 - v.leading_zeros() as i32;
    // aim for a 55-bit quotient: 53 kept, one rounding bit, one spare
    let mut k = 54 - (bits(num) - bits(den));
    loop {
        let scaled = if k >= 0 {
            (num.leading_zeros() as i32 >= k).then(|| (num << k, den))
        } else {
            (den.leading_zeros() as i32 >= -k).then(|| (num, den << -k))
        };
        let Some((n, d)) = scaled else {
            return num as f64 / den as f64;
        };
        let q = n / d;
        if q < 1 << 54 {
            k += 1;
            continue;
        }
        let sticky = n % d != 0;
        let low = q & 3;
        let mut m = q >> 2;
        if low > 2 || (low == 2 && (sticky || m & 1 == 1)) {
            m += 1;
        }
        return m as f64 * 2f64.powi(2 - k);
    }
}

/// Mapper sink that computes global statistics of its input.
#[derive(Debug, Default)]
pub struct StatisticsSink {
    acc: Option<StatsAccumulator>,
    result: Option<Vec<BandStatistics>>,
}

impl StatisticsSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn statistics(&self) -> Option<&[BandStatistics]> {
        self.result.as_deref()
    }
}

impl Sink for StatisticsSink {
    fn kind(&self) -> &'static str {
        "statistics"
    }

    fn prepare(&mut self, info: &ImageInfo, _: &SplitScheme, _: &Communicator) -> Result<()> {
        self.acc = Some(StatsAccumulator::new(info.bands, info.sample_type));
        self.result = None;
        Ok(())
    }

    fn consume(&mut self, _split: usize, buffer: PixelBuffer) -> Result<u64> {
        self.acc
            .as_mut()
            .ok_or_else(|| Error::Contract("statistics sink used before prepare".into()))?
            .accumulate(&buffer)?;
        Ok((buffer.len() * buffer.sample_type().byte_width()) as u64)
    }

    fn finish(&mut self, comm: &Communicator) -> Result<SinkSummary> {
        let acc = self
            .acc
            .as_ref()
            .ok_or_else(|| Error::Contract("statistics sink finished before prepare".into()))?;
        let stats = acc.synthesize(comm)?;
        self.result = Some(stats.clone());
        Ok(SinkSummary {
            bytes_written: 0,
            statistics: Some(stats),
        })
    }
}
