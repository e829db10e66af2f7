//! Synthetic test images.

use std::path::Path;

use rasterflow::filters::{CheckerboardSource, ConstantSource, RandomSource};
use rasterflow::{Communicator, ImageInfo, Pipeline, ProcessObject, RasterWriterSink, SplitStrategy};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    Constant { value: f64 },
    /// Top-left cell is `low`.
    Checkerboard { cell: usize, low: f64, high: f64 },
    Random { seed: u64 },
}

/// Writes the pattern through the regular striped writer on one rank.
pub fn generate(pattern: Pattern, info: ImageInfo, out: &Path) -> rasterflow::Result<u64> {
    let source: Box<dyn ProcessObject> = match pattern {
        Pattern::Constant { value } => Box::new(ConstantSource::new(info, value)?),
        Pattern::Checkerboard { cell, low, high } => Box::new(CheckerboardSource::new(info, cell, low, high)?),
        Pattern::Random { seed } => Box::new(RandomSource::new(info, seed)?),
    };
    let mut p = Pipeline::new();
    let s = p.add_boxed("source", source);
    let m = p.add_mapper("write", RasterWriterSink::new(out), SplitStrategy::default());
    p.connect(m, 0, s)?;
    let report = p.update(m, &Communicator::loopback())?;
    Ok(report.bytes_written)
}
